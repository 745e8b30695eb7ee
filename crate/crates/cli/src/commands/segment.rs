use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use rayon::prelude::*;

use cordseg::pipeline::{
    load_labels, load_slice, save_labels, save_overlay_png, save_slice, DatasetManifest, LabelMap, Split, GM,
    SLICE_EXT, WM,
};
use cordseg::train::{segment, ModelCheckpoint};

use crate::config::{write_file, write_snapshot, Args, Globals};
use crate::error::{CliError, Result};

#[derive(Debug, ClapArgs)]
pub struct SegmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Slice files or directories searched for slice files.
    #[arg(conflicts_with = "manifest")]
    pub inputs: Vec<PathBuf>,
    /// Segment one split of a manifest instead of explicit inputs.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "test", requires = "manifest")]
    pub split: Split,
    /// Draw this rater's labels as reference contours when available.
    #[arg(long)]
    pub reference_rater: Option<u32>,
    /// Input channel shown under the contours.
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
}

/// A slice to segment with its output stem and optional reference labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub stem: String,
    pub slice: PathBuf,
    pub reference: Option<PathBuf>,
}

fn slice_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CliError::Usage(format!("input {} does not exist", path.display())));
    }
    let mut found = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| CliError::io(path, e))? {
        let p = entry.map_err(|e| CliError::io(path, e))?.path();
        if p.is_dir() {
            found.extend(slice_files(&p)?);
        } else if p.extension().is_some_and(|e| e == SLICE_EXT) {
            found.push(p);
        }
    }
    Ok(found)
}

pub fn collect_jobs(args: &SegmentArgs) -> Result<Vec<Job>> {
    let mut jobs = Vec::new();
    if let Some(m) = &args.manifest {
        let manifest = DatasetManifest::load(m)?;
        let base = m.parent().unwrap_or(Path::new(""));
        for e in manifest.split(args.split) {
            let reference = args
                .reference_rater
                .and_then(|r| e.label_for(r))
                .map(|p| base.join(p));
            jobs.push(Job {
                stem: e.id.stem(),
                slice: base.join(&e.slice_path),
                reference,
            });
        }
    } else {
        for input in &args.inputs {
            for slice in slice_files(input)? {
                let stem = slice
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let reference = args
                    .reference_rater
                    .map(|r| slice.with_file_name(format!("{stem}_r{r}.mlb")))
                    .filter(|p| p.is_file());
                jobs.push(Job { stem, slice, reference });
            }
        }
    }
    if jobs.is_empty() {
        return Err(CliError::Usage("no input slices found".into()));
    }
    jobs.sort_by(|a, b| a.stem.cmp(&b.stem).then_with(|| a.slice.cmp(&b.slice)));
    if let Some(w) = jobs.windows(2).find(|w| w[0].stem == w[1].stem) {
        return Err(CliError::Usage(format!(
            "{} and {} share the output name {}",
            w[0].slice.display(),
            w[1].slice.display(),
            w[0].stem
        )));
    }
    Ok(jobs)
}

pub fn run(args: &SegmentArgs, g: &Globals) -> Result<()> {
    let out = g.out_dir()?;
    let jobs = collect_jobs(args)?;
    let ckpt = ModelCheckpoint::load(&args.checkpoint)?;
    let model = ckpt.model()?;
    let mut a = Args::default();
    a.path("checkpoint", &args.checkpoint)
        .set("inputs", jobs.len())
        .set("channel", args.channel)
        .opt("reference_rater", args.reference_rater);
    if let Some(m) = &args.manifest {
        a.path("manifest", m).set("split", args.split);
    }
    write_snapshot(out, "segment", g, &a.0, &ckpt.config)?;

    let expected = model.config().input_channels;
    let results: Vec<(LabelMap, Option<LabelMap>)> = jobs
        .par_iter()
        .map(|job| -> Result<_> {
            let raw = load_slice(&job.slice)?;
            if raw.channels != expected {
                return Err(cordseg::Error::ShapeMismatch {
                    op: "checkpoint/input channels",
                    lhs: vec![expected],
                    rhs: vec![raw.channels],
                }
                .into());
            }
            let slice = ckpt.config.preprocess(&raw)?;
            let (probs, labels) = segment(&model, &slice)?;
            let reference = job.reference.as_ref().map(load_labels).transpose()?;
            save_labels(out.join(format!("{}.mlb", job.stem)), &labels)?;
            save_slice(out.join(format!("{}_prob.mcs", job.stem)), &probs.to_slice(raw.spacing_mm, raw.id))?;
            save_overlay_png(
                out.join(format!("{}_overlay.png", job.stem)),
                &raw,
                args.channel,
                &labels,
                reference.as_ref(),
            )?;
            Ok((labels, reference))
        })
        .collect::<Result<_>>()?;

    let mut listing = String::from("stem,input,gm_pixels,wm_pixels,reference\n");
    for (job, (labels, reference)) in jobs.iter().zip(&results) {
        let _ = writeln!(
            listing,
            "{},{},{},{},{}",
            job.stem,
            job.slice.display(),
            labels.count(GM),
            labels.count(WM),
            reference.is_some()
        );
    }
    write_file(&out.join("segments.csv"), listing)?;
    log::info!("segmented {} slices into {}", jobs.len(), out.display());
    Ok(())
}
