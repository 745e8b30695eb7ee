use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::Args as ClapArgs;
use rayon::prelude::*;

use cordseg::metrics::majority_vote;
use cordseg::pipeline::{load_labels, save_labels, SliceId};

use super::labels::label_files;
use crate::config::{NoSettings, write_snapshot, Args, Globals};
use crate::error::{CliError, Result};

#[derive(Debug, ClapArgs)]
pub struct VoteArgs {
    /// Directories of label files to fuse (at least two).
    #[arg(required = true, num_args = 2..)]
    pub inputs: Vec<PathBuf>,
    /// A class needs strictly more votes than this; defaults to half the
    /// number of inputs, rounded down.
    #[arg(long)]
    pub threshold: Option<usize>,
}

pub fn run(args: &VoteArgs, g: &Globals) -> Result<()> {
    let out = g.out_dir()?;
    if args.inputs.len() < 2 {
        return Err(CliError::Usage("vote needs at least two input directories".into()));
    }
    let threshold = args.threshold.unwrap_or(args.inputs.len() / 2);
    if threshold >= args.inputs.len() {
        return Err(CliError::Usage(format!(
            "threshold {threshold} can never be exceeded by {} votes",
            args.inputs.len()
        )));
    }
    let sets = args
        .inputs
        .iter()
        .map(|d| label_files(d, None))
        .collect::<Result<Vec<_>>>()?;
    let ids: BTreeSet<SliceId> = sets[0].keys().copied().collect();
    if ids.is_empty() {
        return Err(CliError::Usage(format!("no label files in {}", args.inputs[0].display())));
    }
    for (set, dir) in sets.iter().zip(&args.inputs).skip(1) {
        let other: BTreeSet<SliceId> = set.keys().copied().collect();
        if let Some(id) = ids.symmetric_difference(&other).next() {
            return Err(CliError::Usage(format!(
                "{} and {} disagree on slice {}",
                args.inputs[0].display(),
                dir.display(),
                id.stem()
            )));
        }
    }
    let mut a = Args::default();
    let dirs: Vec<String> = args.inputs.iter().map(|p| p.display().to_string()).collect();
    a.set("inputs", dirs.join(" ")).set("threshold", threshold);
    write_snapshot(out, "vote", g, &a.0, &NoSettings {})?;

    ids.par_iter().try_for_each(|id| -> Result<()> {
        let maps = sets.iter().map(|s| load_labels(&s[id])).collect::<cordseg::Result<Vec<_>>>()?;
        let mut fused = majority_vote(&maps, threshold).map_err(|source| CliError::Slice {
            stem: id.stem(),
            source,
        })?;
        fused.id = *id;
        save_labels(out.join(format!("{}.mlb", id.stem())), &fused)?;
        Ok(())
    })?;
    log::info!("fused {} slices from {} inputs", ids.len(), args.inputs.len());
    Ok(())
}
