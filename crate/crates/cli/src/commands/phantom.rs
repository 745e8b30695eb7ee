use std::collections::BTreeSet;

use clap::Args as ClapArgs;
use serde::{Deserialize, Serialize};

use cordseg::phantom::{generate_phantom, write_phantom, JitterSpec, PhantomLayout, PhantomSpec, RaterSpec};
use cordseg::pipeline::SplitSpec;

use crate::config::{layered, write_snapshot, Args, Globals};
use crate::error::{CliError, Result};

#[derive(Debug, ClapArgs)]
pub struct PhantomArgs {
    /// `default` or `imbalanced` (smaller gray matter).
    #[arg(long, default_value = "default")]
    pub profile: String,
    #[arg(long)]
    pub subjects: Option<u32>,
    #[arg(long)]
    pub scans: Option<u32>,
    #[arg(long)]
    pub slices: Option<u32>,
    /// Simulated raters written besides the ground truth.
    #[arg(long)]
    pub raters: Option<u32>,
    #[arg(long)]
    pub flip_prob: Option<f64>,
    /// Identical pose for every scan of a subject.
    #[arg(long)]
    pub no_jitter: bool,
}

/// Everything `phantom` needs; readable from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub spec: PhantomSpec,
    pub layout: PhantomLayout,
    /// Empty test and validation sets select the default split.
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub raters: u32,
    #[serde(default = "default_flip")]
    pub flip_prob: f64,
}

fn default_flip() -> f64 {
    0.1
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            spec: PhantomSpec::default(),
            layout: PhantomLayout::default(),
            split: SplitSpec::default(),
            raters: 0,
            flip_prob: default_flip(),
        }
    }
}

/// The last third of the subjects (at least one) is tested, the highest
/// remaining subject validates and the rest train.
pub fn default_split(subjects: u32) -> Result<SplitSpec> {
    if subjects < 3 {
        return Err(CliError::Config(format!(
            "a phantom needs at least 3 subjects for train/validation/test, got {subjects}"
        )));
    }
    let n_test = (subjects / 3).max(1);
    let test: BTreeSet<u32> = (subjects - n_test + 1..=subjects).collect();
    let val = subjects - n_test;
    Ok(SplitSpec {
        test,
        validation: BTreeSet::from([val]),
        train: None,
    })
}

pub fn resolve(args: &PhantomArgs, g: &Globals) -> Result<PhantomConfig> {
    let mut defaults = PhantomConfig::default();
    defaults.spec = match args.profile.as_str() {
        "default" => PhantomSpec::default(),
        "imbalanced" => PhantomSpec::imbalanced(),
        other => {
            return Err(CliError::Usage(format!(
                "unknown phantom profile '{other}' (expected default or imbalanced)"
            )))
        }
    };
    let mut c = layered(&defaults, g.config.as_deref())?;
    if let Some(v) = args.subjects {
        c.layout.subjects = v;
    }
    if let Some(v) = args.scans {
        c.layout.scans = v;
    }
    if let Some(v) = args.slices {
        c.layout.slices = v;
    }
    if let Some(v) = args.raters {
        c.raters = v;
    }
    if let Some(v) = args.flip_prob {
        c.flip_prob = v;
    }
    if args.no_jitter {
        c.spec.jitter = JitterSpec::none();
    }
    if let Some(s) = g.seed {
        c.spec.seed = s;
    }
    if c.split.test.is_empty() && c.split.validation.is_empty() {
        c.split = default_split(c.layout.subjects)?;
    }
    c.spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    c.split.validate().map_err(|e| CliError::Config(e.to_string()))?;
    if c.raters > 0 && !(0.0..0.5).contains(&c.flip_prob) {
        return Err(CliError::Config(format!("flip_prob {} outside [0, 0.5)", c.flip_prob)));
    }
    Ok(c)
}

pub fn run(args: &PhantomArgs, g: &Globals) -> Result<()> {
    let out = g.out_dir()?;
    let c = resolve(args, g)?;
    let mut a = Args::default();
    a.set("profile", &args.profile).set("no_jitter", args.no_jitter);
    write_snapshot(out, "phantom", g, &a.0, &c)?;
    let samples = generate_phantom(&c.spec, c.layout)?;
    let raters = (c.raters > 0).then_some(RaterSpec {
        count: c.raters,
        flip_prob: c.flip_prob,
    });
    let manifest = write_phantom(&samples, out, &c.split, raters, c.spec.seed)?;
    log::info!("wrote {} slices and manifest.tsv to {}", manifest.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_for_eight_subjects() {
        let s = default_split(8).unwrap();
        assert_eq!(s.test, BTreeSet::from([7, 8]));
        assert_eq!(s.validation, BTreeSet::from([6]));
        assert!(default_split(2).is_err());
    }

    #[test]
    fn config_round_trips() {
        let c: PhantomConfig = layered(&PhantomConfig::default(), None).unwrap();
        assert_eq!(c, PhantomConfig::default());
    }
}
