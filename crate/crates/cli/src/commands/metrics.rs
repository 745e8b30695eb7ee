use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args as ClapArgs;

use cordseg::metrics::{class_name, evaluate_slice, EVAL_CLASSES};
use cordseg::pipeline::load_labels;

use crate::config::{NoSettings, write_file, write_snapshot, Args, Globals};
use crate::error::Result;

#[derive(Debug, ClapArgs)]
pub struct MetricsArgs {
    /// Automatic label file.
    pub auto: PathBuf,
    /// Reference label file.
    pub reference: PathBuf,
}

/// `class,metric,value` rows for GM and WM of one pair of label maps.
pub fn pair_csv(args: &MetricsArgs) -> Result<String> {
    let auto = load_labels(&args.auto)?;
    let reference = load_labels(&args.reference)?;
    let mut out = String::from("class,metric,value\n");
    for (class, _) in EVAL_CLASSES {
        let r = evaluate_slice(&auto, &reference, class)?;
        for (name, v) in r.metrics() {
            let _ = writeln!(out, "{},{name},{v}", class_name(class));
        }
    }
    Ok(out)
}

/// Prints the metrics; with `--out` also writes `metrics.csv` there.
pub fn run(args: &MetricsArgs, g: &Globals) -> Result<()> {
    let csv = pair_csv(args)?;
    if let Some(out) = &g.out {
        let mut a = Args::default();
        a.path("auto", &args.auto).path("reference", &args.reference);
        write_snapshot(out, "metrics", g, &a.0, &NoSettings {})?;
        write_file(&out.join("metrics.csv"), &csv)?;
    }
    print!("{csv}");
    Ok(())
}
