//! Text renderings of training logs and evaluation reports: CSV (comma, dot
//! decimal, LF), a Markdown summary, and per-organ box plots as SVG 1.1.

use std::fmt::Write as _;

use crate::ablation::{DiceTable, EvalReport};
use crate::eval::Wilcoxon;
use crate::train::{Arm, EpochRecord};

/// p-values below this are highlighted.
pub const SIGNIFICANCE: f64 = 0.001;

pub fn epoch_log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,split,seg,contour,dist,total\n");
    for r in log {
        let l = r.losses;
        let _ = writeln!(out, "{},{},{},{},{},{}", r.epoch, r.split.name(), l.seg, l.contour, l.dist, l.total);
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `class,case,dice` with an empty dice field for excluded cases.
pub fn dice_csv(table: &DiceTable) -> String {
    let mut out = String::from("class,case,dice\n");
    for (k, scores) in table.scores.iter().enumerate() {
        for (case, s) in scores.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", k + 1, case, opt(*s));
        }
    }
    out
}

/// Per-class and global aggregates of one table; `class` is `all` for the
/// global row.
pub fn aggregate_csv(table: &DiceTable) -> String {
    let mut out = String::from("class,n,mean,std,std_defined\n");
    let rows = table
        .per_class
        .iter()
        .enumerate()
        .map(|(k, a)| ((k + 1).to_string(), a))
        .chain(std::iter::once(("all".to_string(), &table.global)));
    for (class, a) in rows {
        match a {
            Some(a) => {
                let _ = writeln!(out, "{class},{},{},{},{}", a.n, a.mean, a.std, a.std_defined);
            }
            None => {
                let _ = writeln!(out, "{class},0,,,false");
            }
        }
    }
    out
}

/// Long-form dice for every arm: `arm,class,case,dice`. Failed arms have no
/// rows here; see [`status_csv`].
pub fn report_dice_csv(report: &EvalReport) -> String {
    let mut out = String::from("arm,class,case,dice\n");
    for a in &report.arms {
        let Ok(table) = &a.dice else { continue };
        for (k, scores) in table.scores.iter().enumerate() {
            for (case, s) in scores.iter().enumerate() {
                let _ = writeln!(out, "{},{},{},{}", a.arm, k + 1, case, opt(*s));
            }
        }
    }
    out
}

pub fn status_csv(report: &EvalReport) -> String {
    let mut out = String::from("arm,status,best_epoch,epochs_run\n");
    for a in &report.arms {
        let status = if a.dice.is_ok() { "ok" } else { "failed" };
        let _ = writeln!(
            out,
            "{},{status},{},{}",
            a.arm,
            a.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            a.epochs_run.map(|e| e.to_string()).unwrap_or_default()
        );
    }
    out
}

/// `arm,reference,class,n,w,p,exact,degenerate`, one row per comparison.
pub fn wilcoxon_csv(report: &EvalReport) -> String {
    let mut out = String::from("arm,reference,class,n,w,p,exact,degenerate\n");
    for c in &report.comparisons {
        let class = c.class.map_or("all".to_string(), |k| k.to_string());
        match &c.test {
            Some(t) => {
                let _ = writeln!(
                    out,
                    "{},baseline,{class},{},{},{},{},{}",
                    c.arm, t.n, t.w, t.p, t.exact, t.degenerate
                );
            }
            None => {
                let _ = writeln!(out, "{},baseline,{class},0,,,,", c.arm);
            }
        }
    }
    out
}

fn format_p(t: &Option<Wilcoxon>) -> String {
    match t {
        None => "n/a".into(),
        Some(t) if t.p < SIGNIFICANCE => format!("**{:.2e}**", t.p),
        Some(t) => format!("{:.4}", t.p),
    }
}

/// Four-arm table (`Model | Dice`), per-organ means and p-values against
/// the baseline. Significant p-values are bold.
pub fn summary_markdown(report: &EvalReport) -> String {
    let mut out = String::from("| Model | Dice |\n|---|---|\n");
    for a in &report.arms {
        let cell = match &a.dice {
            Ok(t) => t.global.map_or("n/a".into(), |g| g.to_string()),
            Err(_) => "FAILED".into(),
        };
        let _ = writeln!(out, "| {} | {cell} |", a.arm.title());
    }
    let organs = report.num_classes.saturating_sub(1);
    out.push_str("\n| Model |");
    for k in 1..=organs {
        let _ = write!(out, " organ {k} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(organs));
    out.push('\n');
    for a in &report.arms {
        let _ = write!(out, "| {} |", a.arm.title());
        for k in 0..organs {
            let cell = match &a.dice {
                Ok(t) => t.per_class[k].map_or("n/a".into(), |g| g.to_string()),
                Err(_) => "FAILED".into(),
            };
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    let _ = write!(out, "\nWilcoxon signed-rank p-values against {} (bold: p < {SIGNIFICANCE}):\n\n| Model |", Arm::Baseline.title());
    for k in 1..=organs {
        let _ = write!(out, " organ {k} |");
    }
    out.push_str(" all |\n|---|");
    out.push_str(&"---|".repeat(organs + 1));
    out.push('\n');
    for a in report.arms.iter().filter(|a| a.arm != Arm::Baseline) {
        let _ = write!(out, "| {} |", a.arm.title());
        for class in (1..=organs).map(|k| Some(k as u8)).chain(std::iter::once(None)) {
            let cell = report.comparison(a.arm, class).map_or("n/a".into(), |c| format_p(&c.test));
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    let failed = report.failed_arms();
    if !failed.is_empty() {
        let names: Vec<&str> = failed.iter().map(|a| a.name()).collect();
        let _ = writeln!(out, "\nFailed arms: {}", names.join(", "));
    }
    out
}

/// Five-number summary with whiskers at the most extreme points within
/// 1.5 IQR of the box.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile(&v, 0.25);
    let q3 = quantile(&v, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lo_fence && *x <= hi_fence).collect();
    Some(BoxStats {
        median: quantile(&v, 0.5),
        q1,
        q3,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers: v.into_iter().filter(|x| *x < lo_fence || *x > hi_fence).collect(),
    })
}

const SVG_W: f64 = 520.0;
const SVG_H: f64 = 340.0;
const LEFT: f64 = 60.0;
const TOP: f64 = 50.0;
const PLOT_H: f64 = 230.0;

fn y_of(d: f64) -> f64 {
    TOP + (1.0 - d.clamp(0.0, 1.0)) * PLOT_H
}

/// Box plot of one organ's test dice for every arm, annotated with the
/// p-values against the baseline.
pub fn box_plot_svg(report: &EvalReport, class: u8) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">Organ {class}: test dice</text>"#, SVG_W / 2.0);
    for tick in 0..=5 {
        let d = tick as f64 / 5.0;
        let y = y_of(d);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.1}" x2="{}" y2="{y:.1}" stroke="#dddddd"/>"##, SVG_W - 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{d:.1}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, TOP + PLOT_H);
    let slot = (SVG_W - 20.0 - LEFT) / report.arms.len().max(1) as f64;
    for (i, a) in report.arms.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let half = slot * 0.22;
        let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, TOP + PLOT_H + 18.0, a.arm);
        let values: Vec<f64> = match &a.dice {
            Ok(t) => t.scores[class as usize - 1].iter().flatten().copied().collect(),
            Err(_) => {
                let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle" fill="red">failed</text>"#, TOP + PLOT_H / 2.0);
                continue;
            }
        };
        let Some(b) = box_stats(&values) else { continue };
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            y_of(b.whisker_high),
            y_of(b.q3)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            y_of(b.q1),
            y_of(b.whisker_low)
        );
        for w in [b.whisker_low, b.whisker_high] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
                cx - half / 2.0,
                y_of(w),
                cx + half / 2.0,
                y_of(w)
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
            cx - half,
            y_of(b.q3),
            2.0 * half,
            (y_of(b.q1) - y_of(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            y_of(b.median),
            cx + half,
            y_of(b.median)
        );
        for o in &b.outliers {
            let _ = writeln!(s, r#"<circle cx="{cx:.1}" cy="{:.1}" r="2.5" fill="none" stroke="black"/>"#, y_of(*o));
        }
        if a.arm != Arm::Baseline {
            if let Some(c) = report.comparison(a.arm, Some(class)) {
                let (label, colour) = match &c.test {
                    Some(t) if t.p < SIGNIFICANCE => (format!("p={:.1e}", t.p), "red"),
                    Some(t) => (format!("p={:.3}", t.p), "black"),
                    None => ("p=n/a".to_string(), "black"),
                };
                let _ = writeln!(s, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle" fill="{colour}">{label}</text>"#, TOP - 10.0);
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_stats_of_known_sample() {
        let b = box_stats(&[1.0, 2.0, 3.0, 4.0, 5.0, 100.0]).unwrap();
        assert_eq!((b.q1, b.median, b.q3), (2.25, 3.5, 4.75));
        assert_eq!((b.whisker_low, b.whisker_high), (1.0, 5.0));
        assert_eq!(b.outliers, vec![100.0]);
        assert!(box_stats(&[]).is_none());
    }
}
