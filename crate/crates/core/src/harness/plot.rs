//! Minimal SVG charts. Every plotted value is also written verbatim (in the
//! CSV number format) into the element's `data-*` attributes, so a chart can
//! be checked against its source table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::run::fmt_f64;
use super::sweep::SweepTable;
use crate::error::{MofoError, Result};
use crate::metrics::StepRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    LossCurve,
    DistanceBar,
    ParetoScatter,
}

impl FromStr for PlotKind {
    type Err = MofoError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "loss_curve" => Ok(PlotKind::LossCurve),
            "distance_bar" => Ok(PlotKind::DistanceBar),
            "pareto_scatter" => Ok(PlotKind::ParetoScatter),
            other => Err(MofoError::Config(format!("unknown plot kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum PlotData<'a> {
    Trace(&'a [StepRow]),
    Sweep(&'a SweepTable),
    /// Labelled values, e.g. final distances of several runs.
    Bars(&'a [(String, f64)]),
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64> + Clone, allow_log: bool) -> Result<Self> {
        let finite = values.filter(|v| v.is_finite());
        let log = allow_log && finite.clone().all(|v| v > 0.0);
        let mapped = finite.map(|v| if log { v.log10() } else { v });
        let (mut lo, mut hi) = mapped.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        if !lo.is_finite() {
            return Err(MofoError::InvalidArgument("nothing finite to plot".into()));
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Ok(Self { lo, hi, log })
    }

    fn unit(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn label(&self, u: f64) -> String {
        let v = self.lo + u * (self.hi - self.lo);
        format!("{:.3e}", if self.log { 10f64.powf(v) } else { v })
    }
}

fn px(ax: &Axis, v: f64) -> f64 {
    PAD + ax.unit(v) * (W - 2.0 * PAD)
}

fn py(ay: &Axis, v: f64) -> f64 {
    H - PAD - ay.unit(v) * (H - 2.0 * PAD)
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, ax: Option<&Axis>, ay: &Axis) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{title}</text>"#, W / 2.0);
    let (x0, y0, x1, y1) = (PAD, H - PAD, W - PAD, PAD);
    let _ = writeln!(
        out,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#
    );
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{xlabel}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for u in [0.0, 0.5, 1.0] {
        let y = y0 - u * (y0 - y1);
        let _ = writeln!(out, r#"<text x="{}" y="{y}" text-anchor="end" font-size="10">{}</text>"#, x0 - 4.0, ay.label(u));
        if let Some(ax) = ax {
            let x = x0 + u * (x1 - x0);
            let _ = writeln!(out, r#"<text x="{x}" y="{}" text-anchor="middle" font-size="10">{}</text>"#, y0 + 14.0, ax.label(u));
        }
    }
}

const COLORS: [&str; 2] = ["#1f77b4", "#d62728"];

fn loss_curve(rows: &[StepRow]) -> Result<String> {
    let ys = rows.iter().flat_map(|r| [r.loss, r.aux_loss]);
    let ay = Axis::fit(ys, true)?;
    let ax = Axis::fit(rows.iter().map(|r| r.t as f64), false)?;
    let mut out = String::new();
    frame(&mut out, "loss curve", "step", if ay.log { "loss (log)" } else { "loss" }, Some(&ax), &ay);
    for (i, (name, get)) in [
        ("loss", (|r: &StepRow| r.loss) as fn(&StepRow) -> f64),
        ("aux_loss", |r: &StepRow| r.aux_loss),
    ]
    .into_iter()
    .enumerate()
    {
        let _ = writeln!(out, r#"<g data-series="{name}" stroke="{}" fill="{}">"#, COLORS[i], COLORS[i]);
        let pts: Vec<String> = rows
            .iter()
            .filter(|r| get(r).is_finite())
            .map(|r| format!("{:.2},{:.2}", px(&ax, r.t as f64), py(&ay, get(r))))
            .collect();
        let _ = writeln!(out, r#"<polyline fill="none" points="{}"/>"#, pts.join(" "));
        for r in rows {
            let _ = writeln!(
                out,
                r#"<circle r="0" data-x="{}" data-y="{}"/>"#,
                r.t,
                fmt_f64(get(r))
            );
        }
        let _ = writeln!(out, "</g>");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn bars(items: &[(String, f64)], title: &str, xlabel: &str) -> Result<String> {
    let ay = Axis::fit(items.iter().map(|b| b.1).chain([0.0]), false)?;
    let mut out = String::new();
    frame(&mut out, title, xlabel, "distance D", None, &ay);
    let slot = (W - 2.0 * PAD) / items.len() as f64;
    for (i, (label, v)) in items.iter().enumerate() {
        let x = PAD + slot * (i as f64 + 0.15);
        let (top, base) = if v.is_finite() { (py(&ay, *v), py(&ay, 0.0)) } else { (py(&ay, 0.0), py(&ay, 0.0)) };
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" data-label="{label}" data-y="{}"/>"#,
            top.min(base),
            slot * 0.7,
            (base - top).abs(),
            COLORS[0],
            fmt_f64(*v)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-size="10">{label}</text>"#,
            x + slot * 0.35,
            H - PAD + 14.0
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn pareto(table: &SweepTable) -> Result<String> {
    let ok: Vec<_> = table.ok_rows().collect();
    if ok.is_empty() {
        return Err(MofoError::InvalidArgument("sweep has no successful rows".into()));
    }
    let ax = Axis::fit(ok.iter().map(|r| r.final_aux_loss), false)?;
    let ay = Axis::fit(ok.iter().map(|r| r.final_loss), false)?;
    let mut out = String::new();
    frame(&mut out, "pareto front", "forgetting (aux loss)", "fine-tune loss", Some(&ax), &ay);
    for r in ok {
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}" data-{}="{}" data-x="{}" data-y="{}"/>"#,
            px(&ax, r.final_aux_loss),
            py(&ay, r.final_loss),
            COLORS[1],
            table.param.name(),
            fmt_f64(r.value),
            fmt_f64(r.final_aux_loss),
            fmt_f64(r.final_loss)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn render_svg(data: PlotData<'_>, kind: PlotKind) -> Result<String> {
    let empty = || MofoError::InvalidArgument("no data to plot".into());
    match (kind, data) {
        (PlotKind::LossCurve, PlotData::Trace(rows)) => {
            if rows.is_empty() {
                return Err(empty());
            }
            loss_curve(rows)
        }
        (PlotKind::DistanceBar, PlotData::Bars(items)) => {
            if items.is_empty() {
                return Err(empty());
            }
            bars(items, "distance to reference", "run")
        }
        (PlotKind::DistanceBar, PlotData::Sweep(table)) => {
            if table.rows.is_empty() {
                return Err(empty());
            }
            let items: Vec<(String, f64)> =
                table.rows.iter().map(|r| (fmt_f64(r.value), r.distance)).collect();
            bars(&items, "distance to reference", table.param.name())
        }
        (PlotKind::ParetoScatter, PlotData::Sweep(table)) => {
            if table.rows.is_empty() {
                return Err(empty());
            }
            pareto(table)
        }
        (kind, _) => Err(MofoError::InvalidArgument(format!(
            "{kind:?} cannot be drawn from this kind of data"
        ))),
    }
}

pub fn emit_plot(data: PlotData<'_>, kind: PlotKind, path: &Path) -> Result<()> {
    let svg = render_svg(data, kind)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, svg)?;
    Ok(())
}
