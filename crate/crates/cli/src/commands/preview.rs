use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;

use cordseg::augment::{apply_transform, sample_augmentation};
use cordseg::pipeline::{load_labels, load_slice, save_overlay_png, DatasetManifest, LabelMap, MultiChannelSlice, Split};
use cordseg::rng::{stream_rng, Stream};
use cordseg::train::TrainConfig;

use crate::config::{layered, write_file, write_snapshot, Args, Globals};
use crate::error::{CliError, Result};

#[derive(Debug, ClapArgs)]
pub struct PreviewArgs {
    /// Slice to augment.
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    pub slice: Option<PathBuf>,
    /// Labels of `--slice`; contours are omitted without them.
    #[arg(long, requires = "slice")]
    pub labels: Option<PathBuf>,
    /// Use the first training slice of a manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub rater: u32,
    /// Training profile providing the augmentation settings.
    #[arg(long, default_value = "phantom")]
    pub profile: String,
    #[arg(long, default_value_t = 8)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
}

fn load_input(args: &PreviewArgs) -> Result<(MultiChannelSlice, Option<LabelMap>)> {
    if let Some(m) = &args.manifest {
        let manifest = DatasetManifest::load(m)?;
        let base = m.parent().unwrap_or(Path::new(""));
        let e = manifest
            .split(Split::Train)
            .next()
            .ok_or_else(|| CliError::Usage(format!("{} has no training slices", m.display())))?;
        let labels = e.label_for(args.rater).map(|p| load_labels(base.join(p))).transpose()?;
        return Ok((load_slice(base.join(&e.slice_path))?, labels));
    }
    let path = args.slice.as_ref().expect("clap enforces --slice or --manifest");
    let labels = args.labels.as_ref().map(load_labels).transpose()?;
    Ok((load_slice(path)?, labels))
}

pub fn run(args: &PreviewArgs, g: &Globals) -> Result<()> {
    let out = g.out_dir()?;
    let profile = TrainConfig::profile(&args.profile).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut config = layered(&profile, g.config.as_deref())?;
    if let Some(s) = g.seed {
        config.seed = s;
    }
    config.augment.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let (slice, labels) = load_input(args)?;
    let labels = labels.unwrap_or_else(|| LabelMap::filled(slice.height, slice.width, 0, slice.spacing_mm));

    let mut a = Args::default();
    a.set("profile", &args.profile)
        .set("count", args.count)
        .set("channel", args.channel)
        .set("rater", args.rater)
        .opt("slice", args.slice.as_ref().map(|p| p.display()))
        .opt("labels", args.labels.as_ref().map(|p| p.display()))
        .opt("manifest", args.manifest.as_ref().map(|p| p.display()));
    write_snapshot(out, "augment-preview", g, &a.0, &config.augment)?;

    let mut table = String::from("index,scale,angle_deg,mirror,origin_row,origin_col,max_displacement_px\n");
    for i in 0..args.count {
        let mut rng = stream_rng(config.seed, Stream::Preview, i);
        let t = sample_augmentation(&mut rng, &config.augment, (slice.height, slice.width))?;
        let (ws, wl) = apply_transform(&slice, &labels, &t, config.augment.safe_margin)?;
        save_overlay_png(out.join(format!("preview_{i:03}.png")), &ws, args.channel, &wl, None)?;
        let _ = writeln!(
            table,
            "{i},{},{},{},{},{},{}",
            t.scale,
            t.angle_deg,
            t.mirror,
            t.origin.0,
            t.origin.1,
            t.field.max_displacement()
        );
    }
    write_file(&out.join("transforms.csv"), table)
}
