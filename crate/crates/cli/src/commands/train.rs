use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;

use cordseg::losses::LossVariant;
use cordseg::metrics::MeanStd;
use cordseg::pipeline::DatasetManifest;
use cordseg::train::{self, ModelCheckpoint, TrainConfig, TrainData, TrainOutcome, LOG_FILE};

use crate::config::{layered, write_file, write_snapshot, Args, Globals};
use crate::error::{CliError, Result};
use crate::plot;

pub const CURVES_FILE: &str = "curves.csv";

#[derive(Debug, ClapArgs)]
pub struct TrainArgs {
    /// Dataset manifest (train and validation splits are used).
    #[arg(long)]
    pub manifest: PathBuf,
    /// `amira`, `scgm` or `phantom`.
    #[arg(long, default_value = "phantom")]
    pub profile: String,
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Weight of the Dice term in [0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// `dl`, `gdl` or `gm-dl`.
    #[arg(long)]
    pub loss: Option<LossVariant>,
    #[arg(long)]
    pub validation_interval: Option<u64>,
    /// Label set used as the training target.
    #[arg(long)]
    pub rater: Option<u32>,
    /// Continue from a checkpoint; its configuration is reused.
    #[arg(long, conflicts_with_all = ["seeds", "raters"])]
    pub resume: Option<PathBuf>,
    /// Independent runs with seeds `seed, seed+1, …`, each in `seed_<n>/`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u32,
    /// One model per listed rater, each in `member_<k>/`.
    #[arg(long, value_delimiter = ',', conflicts_with = "seeds")]
    pub raters: Vec<u32>,
    /// Also render the curves to `curves.png`.
    #[arg(long)]
    pub plot: bool,
}

pub fn resolve(args: &TrainArgs, g: &Globals) -> Result<TrainConfig> {
    let profile = TrainConfig::profile(&args.profile).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut c = layered(&profile, g.config.as_deref())?;
    if let Some(v) = args.iterations {
        c.iterations = v;
    }
    if let Some(v) = args.lambda {
        c.lambda = v;
    }
    if let Some(v) = args.loss {
        c.loss = v;
    }
    if let Some(v) = args.validation_interval {
        c.validation_interval = v;
    }
    if let Some(v) = args.rater {
        c.rater = v;
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    c.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(c)
}

fn load_data(manifest_path: &Path, rater: u32) -> Result<TrainData> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let data = TrainData::from_manifest(&manifest, rater, manifest_path.parent())?;
    if data.train.is_empty() {
        return Err(CliError::Config(format!(
            "{} has no training slices",
            manifest_path.display()
        )));
    }
    Ok(data)
}

fn report(dir: &Path, outcome: &TrainOutcome) {
    match outcome.last.best {
        Some((it, score)) => log::info!(
            "{}: {} iterations, best validation score {score:.4} at iteration {it}",
            dir.display(),
            outcome.last.iteration
        ),
        None => log::info!("{}: {} iterations", dir.display(), outcome.last.iteration),
    }
}

pub fn run(args: &TrainArgs, g: &Globals) -> Result<()> {
    let out = g.out_dir()?;
    let mut a = Args::default();
    a.path("manifest", &args.manifest).set("profile", &args.profile);
    let run_dirs: Vec<PathBuf> = if let Some(ckpt_path) = &args.resume {
        let mut ckpt = ModelCheckpoint::load(ckpt_path)?;
        if let Some(v) = args.iterations {
            ckpt.config.iterations = v;
        }
        ckpt.config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        a.path("resume", ckpt_path);
        write_snapshot(out, "train", g, &a.0, &ckpt.config)?;
        let data = load_data(&args.manifest, ckpt.config.rater)?;
        report(out, &train::resume(ckpt, &data, Some(out))?);
        vec![out.to_path_buf()]
    } else {
        let config = resolve(args, g)?;
        if args.seeds == 0 {
            return Err(CliError::Usage("--seeds must be at least 1".into()));
        }
        if !args.raters.is_empty() {
            let list = args.raters.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
            a.set("raters", list);
            write_snapshot(out, "train", g, &a.0, &config)?;
            let per_rater = args
                .raters
                .iter()
                .map(|&r| load_data(&args.manifest, r))
                .collect::<Result<Vec<_>>>()?;
            let outcomes = train::train_rater_ensemble(&per_rater, &config, Some(out))?;
            (0..outcomes.len())
                .map(|k| {
                    let dir = out.join(format!("member_{k}"));
                    report(&dir, &outcomes[k]);
                    dir
                })
                .collect()
        } else {
            a.set("seeds", args.seeds);
            write_snapshot(out, "train", g, &a.0, &config)?;
            let data = load_data(&args.manifest, config.rater)?;
            let mut dirs = Vec::new();
            for k in 0..args.seeds {
                let mut c = config.clone();
                c.seed = config.seed.wrapping_add(u64::from(k));
                let dir = if args.seeds == 1 {
                    out.to_path_buf()
                } else {
                    out.join(format!("seed_{}", c.seed))
                };
                report(&dir, &train::train(&data, c, Some(&dir))?);
                dirs.push(dir);
            }
            dirs
        }
    };
    let logs = run_dirs
        .iter()
        .map(|d| {
            let p = d.join(LOG_FILE);
            std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let curves = validation_curves(&logs)?;
    write_file(&out.join(CURVES_FILE), curves_csv(&curves))?;
    if args.plot {
        plot::save_curves_png(&out.join("curves.png"), &curves)?;
    }
    Ok(())
}

/// Validation scores of one run at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scores {
    gm: f64,
    wm: f64,
    ce: f64,
}

fn parse_log(text: &str) -> Result<Vec<(u64, Scores)>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || CliError::Config(format!("training log line {}: malformed row", n + 1));
        if cols.len() != 7 {
            return Err(bad());
        }
        if cols[4].is_empty() {
            continue;
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        rows.push((
            cols[0].parse().map_err(|_| bad())?,
            Scores {
                gm: num(cols[4])?,
                wm: num(cols[5])?,
                ce: num(cols[6])?,
            },
        ));
    }
    Ok(rows)
}

/// Mean and standard deviation over runs of GM DSC, WM DSC and
/// cross-entropy at every validated iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub iteration: u64,
    pub gm_dsc: MeanStd,
    pub wm_dsc: MeanStd,
    pub cross_entropy: MeanStd,
}

pub fn validation_curves(logs: &[String]) -> Result<Vec<CurvePoint>> {
    let mut by_iter: BTreeMap<u64, Vec<Scores>> = BTreeMap::new();
    for text in logs {
        for (it, s) in parse_log(text)? {
            by_iter.entry(it).or_default().push(s);
        }
    }
    Ok(by_iter
        .into_iter()
        .map(|(iteration, v)| {
            let col = |f: fn(&Scores) -> f64| MeanStd::of(&v.iter().map(f).collect::<Vec<_>>());
            CurvePoint {
                iteration,
                gm_dsc: col(|s| s.gm),
                wm_dsc: col(|s| s.wm),
                cross_entropy: col(|s| s.ce),
            }
        })
        .collect())
}

pub fn curves_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from(
        "iteration,runs,gm_dsc_mean,gm_dsc_std,wm_dsc_mean,wm_dsc_std,cross_entropy_mean,cross_entropy_std\n",
    );
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            p.iteration,
            p.gm_dsc.n,
            p.gm_dsc.mean,
            p.gm_dsc.std,
            p.wm_dsc.mean,
            p.wm_dsc.std,
            p.cross_entropy.mean,
            p.cross_entropy.std
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_average_runs() {
        let head = "iteration,loss,dice_loss,cross_entropy,val_gm_dsc,val_wm_dsc,val_cross_entropy\n";
        let a = format!("{head}1,0.5,0.1,0.2,,,\n2,0.4,0.1,0.2,0.6,0.8,0.3\n");
        let b = format!("{head}1,0.5,0.1,0.2,,,\n2,0.4,0.1,0.2,0.8,0.8,0.5\n");
        let c = validation_curves(&[a, b]).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].iteration, 2);
        assert!((c[0].gm_dsc.mean - 0.7).abs() < 1e-12);
        assert!((c[0].gm_dsc.std - 0.1 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(c[0].wm_dsc.std, 0.0);
        assert_eq!(c[0].gm_dsc.n, 2);
    }
}
