//! Plot-ready aggregates of a dataset and ascent traces, plus a small SVG
//! rendering of them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use pvn_core::dataset::{BinSpec, PolicyRecord};
use pvn_core::{Error, Result};

/// Counts of kept and discarded policies per mean-return bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnCounts {
    pub spec: BinSpec,
    pub kept: Vec<usize>,
    pub discarded: Vec<usize>,
}

pub fn return_counts(kept: &[PolicyRecord], discarded: &[PolicyRecord], spec: BinSpec) -> ReturnCounts {
    let count = |records: &[PolicyRecord]| {
        let mut c = vec![0; spec.bins];
        for r in records {
            c[spec.index(r.mean_return)] += 1;
        }
        c
    };
    ReturnCounts { spec, kept: count(kept), discarded: count(discarded) }
}

impl ReturnCounts {
    /// `bin_lo,bin_hi,kept,discarded`.
    pub fn to_csv(&self) -> String {
        let h = self.spec.width();
        let mut out = String::from("bin_lo,bin_hi,kept,discarded\n");
        for i in 0..self.spec.bins {
            let lo = self.spec.g_min + i as f64 * h;
            let _ = writeln!(out, "{lo},{},{},{}", lo + h, self.kept[i], self.discarded[i]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub restart: usize,
    pub step: usize,
    pub j_hat: f64,
    pub g_mc: f64,
}

/// Reads the `restart,step,j_hat,g_mc` trace format.
pub fn parse_traces(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "restart,step,j_hat,g_mc")) => {}
        _ => return Err(Error::Schema("traces: expected header restart,step,j_hat,g_mc".into())),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || Error::Schema(format!("traces line {}: {line:?}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(TraceRow {
                restart: f[0].parse().map_err(|_| bad())?,
                step: f[1].parse().map_err(|_| bad())?,
                j_hat: f[2].parse().map_err(|_| bad())?,
                g_mc: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// Per-step statistics across restarts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub mean_j_hat: f64,
    pub mean_g_mc: f64,
    pub min_g_mc: f64,
    pub max_g_mc: f64,
}

pub fn ascent_curve(rows: &[TraceRow]) -> Vec<CurvePoint> {
    let mut by_step: BTreeMap<usize, Vec<&TraceRow>> = BTreeMap::new();
    for r in rows {
        by_step.entry(r.step).or_default().push(r);
    }
    by_step
        .into_iter()
        .map(|(step, rs)| {
            let n = rs.len() as f64;
            CurvePoint {
                step,
                mean_j_hat: rs.iter().map(|r| r.j_hat).sum::<f64>() / n,
                mean_g_mc: rs.iter().map(|r| r.g_mc).sum::<f64>() / n,
                min_g_mc: rs.iter().map(|r| r.g_mc).fold(f64::INFINITY, f64::min),
                max_g_mc: rs.iter().map(|r| r.g_mc).fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// `step,mean_j_hat,mean_g_mc,min_g_mc,max_g_mc`.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,mean_j_hat,mean_g_mc,min_g_mc,max_g_mc\n");
    for p in curve {
        let _ = writeln!(out, "{},{},{},{},{}", p.step, p.mean_j_hat, p.mean_g_mc, p.min_g_mc, p.max_g_mc);
    }
    out
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 40.0;

fn axes(out: &mut String, x0: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<rect x="{x0}" y="{MARGIN}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/><text x="{}" y="{}" font-size="13" text-anchor="middle">{title}</text>"#,
        x0 + PANEL_W / 2.0,
        MARGIN - 10.0
    );
}

/// Return histogram on the left (kept green, discarded red) and ascent
/// curves on the right: one light line per restart, the mean in a darker
/// line, and the return limit dashed.
pub fn render_svg(counts: &ReturnCounts, rows: &[TraceRow], limit: Option<f64>) -> String {
    let width = 3.0 * MARGIN + 2.0 * PANEL_W;
    let height = 2.0 * MARGIN + PANEL_H;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif">"#
    );
    out.push('\n');
    axes(&mut out, MARGIN, "mean return of generated policies");
    let peak = counts.kept.iter().zip(&counts.discarded).map(|(k, d)| k + d).max().unwrap_or(0).max(1) as f64;
    let bar_w = PANEL_W / counts.spec.bins as f64;
    for i in 0..counts.spec.bins {
        let x = MARGIN + i as f64 * bar_w;
        let kept_h = counts.kept[i] as f64 / peak * PANEL_H;
        let disc_h = counts.discarded[i] as f64 / peak * PANEL_H;
        let base = MARGIN + PANEL_H;
        for (h, y, colour) in [(kept_h, base - kept_h, "#2ca02c"), (disc_h, base - kept_h - disc_h, "#d62728")] {
            if h > 0.0 {
                let _ = writeln!(out, r#"<rect x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{h:.2}" fill="{colour}"/>"#);
            }
        }
    }

    let x0 = 2.0 * MARGIN + PANEL_W;
    axes(&mut out, x0, "return during ascent");
    let max_step = rows.iter().map(|r| r.step).max().unwrap_or(0).max(1) as f64;
    let (lo, hi) = (counts.spec.g_min, counts.spec.g_max);
    let px = |step: usize| x0 + step as f64 / max_step * PANEL_W;
    let py = |g: f64| MARGIN + PANEL_H - ((g - lo) / (hi - lo)).clamp(0.0, 1.0) * PANEL_H;
    let polyline = |pts: Vec<(usize, f64)>, style: &str| -> String {
        let coords: Vec<String> = pts.iter().map(|&(s, g)| format!("{:.2},{:.2}", px(s), py(g))).collect();
        format!(r#"<polyline fill="none" {style} points="{}"/>"#, coords.join(" "))
    };
    let mut restarts: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows {
        restarts.entry(r.restart).or_default().push((r.step, r.g_mc));
    }
    for pts in restarts.into_values() {
        let _ = writeln!(out, "{}", polyline(pts, r##"stroke="#9ecae1" stroke-width="1""##));
    }
    let mean: Vec<(usize, f64)> = ascent_curve(rows).iter().map(|p| (p.step, p.mean_g_mc)).collect();
    let _ = writeln!(out, "{}", polyline(mean, r##"stroke="#08519c" stroke-width="2""##));
    if let Some(limit) = limit.filter(|l| l.is_finite()) {
        let y = py(limit);
        let _ = writeln!(
            out,
            r#"<line x1="{x0}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="red" stroke-dasharray="6,4"/>"#,
            x0 + PANEL_W
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use pvn_core::mlp::MlpArch;
    use pvn_core::policy::MlpPolicy;

    fn record(mean: f64) -> PolicyRecord {
        let arch = MlpPolicy::softmax_arch(4, &[], 2, 3.0);
        let policy = MlpPolicy::new(arch.clone(), vec![0.0; MlpArch::param_count(&arch)]).unwrap();
        PolicyRecord::new(policy, vec![mean]).unwrap()
    }

    #[test]
    fn counts_split_kept_and_discarded() {
        let spec = BinSpec::new(4, 0.0, 40.0).unwrap();
        let c = return_counts(&[record(5.0), record(15.0), record(16.0)], &[record(35.0)], spec);
        assert_eq!(c.kept, vec![1, 2, 0, 0]);
        assert_eq!(c.discarded, vec![0, 0, 0, 1]);
        assert!(c.to_csv().starts_with("bin_lo,bin_hi,kept,discarded\n0,10,1,0\n"));
    }

    #[test]
    fn traces_parse_and_aggregate() {
        let rows = parse_traces("restart,step,j_hat,g_mc\n0,0,1,10\n1,0,3,20\n0,1,2,30\n").unwrap();
        let curve = ascent_curve(&rows);
        assert_eq!(curve.len(), 2);
        assert_eq!((curve[0].mean_j_hat, curve[0].mean_g_mc, curve[0].min_g_mc, curve[0].max_g_mc), (2.0, 15.0, 10.0, 20.0));
        assert_eq!(curve[1].mean_g_mc, 30.0);
    }

    #[test]
    fn malformed_traces_are_schema_errors() {
        assert!(matches!(parse_traces("step,g\n"), Err(Error::Schema(_))));
        assert!(matches!(parse_traces("restart,step,j_hat,g_mc\n0,x,1,2\n"), Err(Error::Schema(_))));
    }

    #[test]
    fn svg_is_well_formed() {
        let spec = BinSpec::new(4, 0.0, 40.0).unwrap();
        let c = return_counts(&[record(5.0)], &[record(35.0)], spec);
        let rows = parse_traces("restart,step,j_hat,g_mc\n0,0,1,10\n0,1,2,30\n").unwrap();
        let svg = render_svg(&c, &rows, Some(30.0));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("stroke-dasharray"));
    }
}
