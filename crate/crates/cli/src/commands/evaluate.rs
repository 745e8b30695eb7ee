use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args as ClapArgs;
use rayon::prelude::*;

use cordseg::metrics::{
    by_slice_position, class_name, evaluate_slice, positions_csv, reports_csv, session_stats, table1, table3,
    MethodSummary, SessionStats, SliceReport, EVAL_CLASSES,
};
use cordseg::pipeline::{load_labels, LabelMap, SliceId};

use super::labels::label_files;
use crate::config::{NoSettings, write_file, write_snapshot, Args, Globals};
use crate::error::{CliError, Result};

#[derive(Debug, ClapArgs)]
pub struct EvaluateArgs {
    /// Automatic segmentations as `NAME=DIR` (or just `DIR`); repeatable.
    #[arg(long = "auto", required = true)]
    pub auto: Vec<String>,
    /// Directory with reference label files.
    #[arg(long)]
    pub reference: PathBuf,
    /// Use `<stem>_r<k>` reference files; without it, unsuffixed files.
    #[arg(long)]
    pub reference_rater: Option<u32>,
    /// Scan acquired after repositioning; pairs with it are inter-session.
    #[arg(long, default_value_t = 3)]
    pub repositioned_scan: u32,
    /// Row name for the reference's own scan-rescan statistics.
    #[arg(long, default_value = "Manual")]
    pub reference_name: String,
}

pub fn parse_method(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((name, dir)) if !name.is_empty() && !dir.is_empty() => Ok((name.to_string(), PathBuf::from(dir))),
        Some(_) => Err(CliError::Usage(format!("malformed --auto '{spec}', expected NAME=DIR"))),
        None => {
            let dir = PathBuf::from(spec);
            let name = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .ok_or_else(|| CliError::Usage(format!("cannot name method for '{spec}'")))?;
            Ok((name, dir))
        }
    }
}

fn load_all(files: &BTreeMap<SliceId, PathBuf>) -> Result<BTreeMap<SliceId, LabelMap>> {
    let loaded: Vec<(SliceId, LabelMap)> = files
        .par_iter()
        .map(|(id, p)| {
            let mut l = load_labels(p)?;
            l.id = *id;
            Ok((*id, l))
        })
        .collect::<Result<_>>()?;
    Ok(loaded.into_iter().collect())
}

fn sessions(maps: &BTreeMap<SliceId, LabelMap>, repositioned: u32) -> Result<Vec<SessionStats>> {
    let scans: BTreeSet<u32> = maps.keys().map(|id| id.scan).collect();
    if scans.len() < 2 {
        return Ok(Vec::new());
    }
    EVAL_CLASSES
        .iter()
        .map(|&(class, _)| Ok(session_stats(maps, class, repositioned)?))
        .collect()
}

pub fn sessions_csv(stats: &[SessionStats]) -> String {
    let mut out =
        String::from("class,kind,pairs,dsc_mean,dsc_std,hd_mean,hd_std,rsd_mean,rsd_std,skipped_groups\n");
    for s in stats {
        for (kind, p) in [("intra", &s.intra), ("inter", &s.inter)] {
            let (d, h, r) = (p.dsc_summary(), p.hd_summary(), p.rsd_summary());
            let _ = writeln!(
                out,
                "{},{kind},{},{},{},{},{},{},{},{}",
                class_name(s.class),
                p.pairs.len(),
                d.mean,
                d.std,
                h.mean,
                h.std,
                r.mean,
                r.std,
                s.skipped.len()
            );
        }
    }
    out
}

struct MethodResult {
    name: String,
    reports: Vec<SliceReport>,
    sessions: Vec<SessionStats>,
}

fn evaluate_method(
    name: &str,
    dir: &Path,
    reference: &BTreeMap<SliceId, LabelMap>,
    repositioned: u32,
    unmatched: &mut String,
) -> Result<MethodResult> {
    let files = label_files(dir, None)?;
    let ref_ids: BTreeSet<&SliceId> = reference.keys().collect();
    let auto_ids: BTreeSet<&SliceId> = files.keys().collect();
    let no_reference: Vec<_> = auto_ids.difference(&ref_ids).collect();
    let no_auto: Vec<_> = ref_ids.difference(&auto_ids).collect();
    for id in &no_reference {
        let _ = writeln!(unmatched, "{name},{},reference", id.stem());
    }
    for id in &no_auto {
        let _ = writeln!(unmatched, "{name},{},automatic", id.stem());
    }
    if !no_reference.is_empty() || !no_auto.is_empty() {
        log::warn!(
            "{name}: {} segmentations without reference and {} reference slices without segmentation \
             skipped (see unmatched.csv)",
            no_reference.len(),
            no_auto.len()
        );
    }
    let matched: BTreeMap<SliceId, PathBuf> = files.into_iter().filter(|(id, _)| reference.contains_key(id)).collect();
    if matched.is_empty() {
        return Err(CliError::Usage(format!(
            "{name}: no slice of {} matches the reference",
            dir.display()
        )));
    }
    let auto = load_all(&matched)?;
    let reports: Vec<SliceReport> = auto
        .par_iter()
        .map(|(id, a)| {
            EVAL_CLASSES
                .iter()
                .map(|&(class, _)| Ok(evaluate_slice(a, &reference[id], class)?))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(MethodResult {
        name: name.to_string(),
        reports,
        sessions: sessions(&auto, repositioned)?,
    })
}

pub fn run(args: &EvaluateArgs, g: &Globals) -> Result<()> {
    let out = g.out_dir()?;
    let methods = args.auto.iter().map(|s| parse_method(s)).collect::<Result<Vec<_>>>()?;
    let names: BTreeSet<&str> = methods.iter().map(|(n, _)| n.as_str()).collect();
    if names.len() != methods.len() {
        return Err(CliError::Usage("method names must be distinct".into()));
    }
    let mut a = Args::default();
    a.set("auto", args.auto.join(" "))
        .path("reference", &args.reference)
        .opt("reference_rater", args.reference_rater)
        .set("repositioned_scan", args.repositioned_scan)
        .set("reference_name", &args.reference_name);
    write_snapshot(out, "evaluate", g, &a.0, &NoSettings {})?;

    let reference = load_all(&label_files(&args.reference, args.reference_rater)?)?;
    if reference.is_empty() {
        return Err(CliError::Usage(format!("no reference labels in {}", args.reference.display())));
    }
    let mut unmatched = String::from("method,stem,missing\n");
    let mut results = Vec::new();
    for (name, dir) in &methods {
        let r = evaluate_method(name, dir, &reference, args.repositioned_scan, &mut unmatched)?;
        let sub = out.join(name);
        write_file(&sub.join("metrics.csv"), reports_csv(&r.reports))?;
        write_file(&sub.join("positions.csv"), positions_csv(&by_slice_position(&r.reports)))?;
        write_file(&sub.join("table3.txt"), table3(&r.reports))?;
        write_file(&sub.join("sessions.csv"), sessions_csv(&r.sessions))?;
        results.push(r);
    }
    let manual = sessions(&reference, args.repositioned_scan)?;
    write_file(&out.join("reference_sessions.csv"), sessions_csv(&manual))?;
    write_file(&out.join("unmatched.csv"), &unmatched)?;

    let mut rows: Vec<MethodSummary<'_>> = results
        .iter()
        .map(|r| MethodSummary {
            name: r.name.clone(),
            accuracy: &r.reports,
            sessions: &r.sessions,
        })
        .collect();
    if !manual.is_empty() {
        rows.push(MethodSummary {
            name: args.reference_name.clone(),
            accuracy: &[],
            sessions: &manual,
        });
    }
    let table = table1(&rows);
    write_file(&out.join("table1.txt"), &table)?;
    print!("{table}");
    Ok(())
}
