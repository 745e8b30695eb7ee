use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::distance::{area, skeleton_distances, surface_distances};
use super::overlap::{check_extent, confusion, overlap_metrics, ConfusionCounts, Measure, OverlapMetrics};
use super::session::{MeanStd, SessionStats};
use crate::error::Result;
use crate::pipeline::{LabelMap, SliceId, GM, WM};

/// Classes evaluated by default, with display names.
pub const EVAL_CLASSES: [(u8, &str); 2] = [(GM, "GM"), (WM, "WM")];

pub fn class_name(class: u8) -> &'static str {
    EVAL_CLASSES
        .iter()
        .find(|(c, _)| *c == class)
        .map(|(_, n)| *n)
        .unwrap_or("other")
}

/// All metrics of one class on one slice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceReport {
    pub id: SliceId,
    pub class: u8,
    pub counts: ConfusionCounts,
    pub overlap: OverlapMetrics,
    pub md: Measure,
    pub hd: Measure,
    pub shd: Measure,
    pub smd: Measure,
    pub area_auto_mm2: f64,
    pub area_ref_mm2: f64,
}

impl SliceReport {
    /// `(name, value)` for every reported metric, in CSV order.
    pub fn metrics(&self) -> Vec<(&'static str, Measure)> {
        let o = &self.overlap;
        vec![
            ("dsc", Measure::Defined(o.dsc)),
            ("jaccard", Measure::Defined(o.jaccard)),
            ("conformity", o.conformity),
            ("tpr", o.tpr),
            ("tnr", o.tnr),
            ("precision", o.precision),
            ("md_mm", self.md),
            ("hd_mm", self.hd),
            ("shd_mm", self.shd),
            ("smd_mm", self.smd),
            ("area_auto_mm2", Measure::Defined(self.area_auto_mm2)),
            ("area_ref_mm2", Measure::Defined(self.area_ref_mm2)),
        ]
    }
}

/// Evaluates `class` of `auto` against `reference` (exclusive class masks).
pub fn evaluate_slice(auto: &LabelMap, reference: &LabelMap, class: u8) -> Result<SliceReport> {
    check_extent("evaluate", auto, reference)?;
    let (h, w, sp) = (auto.height, auto.width, reference.spacing_mm);
    let a = auto.mask(class);
    let r = reference.mask(class);
    let counts = confusion(auto, reference, class)?;
    let surf = surface_distances(&a, &r, h, w, sp)?;
    let skel = skeleton_distances(&a, &r, h, w, sp)?;
    Ok(SliceReport {
        id: reference.id,
        class,
        counts,
        overlap: overlap_metrics(&counts),
        md: surf.mean,
        hd: surf.hausdorff,
        shd: skel.hausdorff,
        smd: skel.median,
        area_auto_mm2: area(&a, sp),
        area_ref_mm2: area(&r, sp),
    })
}

/// One row per slice, class and metric; undefined values print as `NA`.
pub fn reports_csv(reports: &[SliceReport]) -> String {
    let mut out = String::from("subject,scan,slice,class,metric,value\n");
    for r in reports {
        for (name, v) in r.metrics() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.id.subject,
                r.id.scan,
                r.id.slice,
                class_name(r.class),
                name,
                v
            );
        }
    }
    out
}

/// Mean ± std of every metric per class over the defined values.
pub fn summarize(reports: &[SliceReport]) -> BTreeMap<(u8, &'static str), MeanStd> {
    let mut values: BTreeMap<(u8, &'static str), Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (name, v) in r.metrics() {
            let slot = values.entry((r.class, name)).or_default();
            if let Some(x) = v.value() {
                slot.push(x);
            }
        }
    }
    values.into_iter().map(|(k, v)| (k, MeanStd::of(&v))).collect()
}

/// Challenge-style table: one row per class, one column per metric.
pub fn table3(reports: &[SliceReport]) -> String {
    let s = summarize(reports);
    let cols = [
        ("dsc", "DSC"),
        ("md_mm", "MD(mm)"),
        ("hd_mm", "HD(mm)"),
        ("shd_mm", "SHD(mm)"),
        ("smd_mm", "SMD(mm)"),
        ("tpr", "TPR(%)"),
        ("tnr", "TNR(%)"),
        ("precision", "P(%)"),
        ("jaccard", "J"),
        ("conformity", "C(%)"),
    ];
    let mut out = format!("{:<6}", "");
    for (_, title) in cols {
        let _ = write!(out, "| {title:<15}");
    }
    out.push('\n');
    let classes: Vec<u8> = s.keys().map(|(c, _)| *c).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    for class in classes {
        let _ = write!(out, "{:<6}", class_name(class));
        for (key, _) in cols {
            let _ = write!(out, "| {:<15}", s.get(&(class, key)).copied().unwrap_or_default().to_string());
        }
        out.push('\n');
    }
    out
}

/// A method's accuracy reports and scan-rescan statistics, per class.
pub struct MethodSummary<'a> {
    pub name: String,
    pub accuracy: &'a [SliceReport],
    pub sessions: &'a [SessionStats],
}

/// Accuracy / intra-session / inter-session blocks with DSC, HD and RSD.
pub fn table1(methods: &[MethodSummary<'_>]) -> String {
    let mut out = String::new();
    for (class, cname) in EVAL_CLASSES {
        let _ = writeln!(
            out,
            "{:<16}| {:<31}| {:<47}| {:<47}",
            "", "Accuracy", "Intra-session", "Inter-session"
        );
        let _ = writeln!(
            out,
            "{cname:<16}| {:<15}{:<16}| {:<15}{:<16}{:<16}| {:<15}{:<16}{:<16}",
            "DSC", "HD(mm)", "DSC", "HD(mm)", "RSD(%)", "DSC", "HD(mm)", "RSD(%)"
        );
        for m in methods {
            let s = summarize(m.accuracy);
            let get = |k| s.get(&(class, k)).copied().unwrap_or_default();
            let _ = write!(out, "{:<16}| {:<15}{:<16}", m.name, get("dsc").to_string(), get("hd_mm").to_string());
            match m.sessions.iter().find(|s| s.class == class) {
                Some(st) => {
                    for p in [&st.intra, &st.inter] {
                        let _ = write!(
                            out,
                            "| {:<15}{:<16}{:<16}",
                            p.dsc_summary().to_string(),
                            p.hd_summary().to_string(),
                            p.rsd_summary().to_string()
                        );
                    }
                }
                None => {
                    let _ = write!(out, "| {:<47}| {:<47}", "", "");
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Area statistics per anatomical slice position.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionSummary {
    pub slice: u32,
    pub class: u8,
    pub area_auto_mm2: MeanStd,
    pub area_ref_mm2: MeanStd,
    pub dsc: MeanStd,
}

pub fn by_slice_position(reports: &[SliceReport]) -> Vec<PositionSummary> {
    let mut groups: BTreeMap<(u32, u8), Vec<&SliceReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.id.slice, r.class)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((slice, class), rs)| {
            let col = |f: &dyn Fn(&SliceReport) -> f64| MeanStd::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            PositionSummary {
                slice,
                class,
                area_auto_mm2: col(&|r| r.area_auto_mm2),
                area_ref_mm2: col(&|r| r.area_ref_mm2),
                dsc: col(&|r| r.overlap.dsc),
            }
        })
        .collect()
}

pub fn positions_csv(rows: &[PositionSummary]) -> String {
    let mut out = String::from(
        "slice,class,area_auto_mean,area_auto_std,area_ref_mean,area_ref_std,dsc_mean,dsc_std,n\n",
    );
    for p in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.slice,
            class_name(p.class),
            p.area_auto_mm2.mean,
            p.area_auto_mm2.std,
            p.area_ref_mm2.mean,
            p.area_ref_mm2.std,
            p.dsc.mean,
            p.dsc.std,
            p.dsc.n
        );
    }
    out
}
