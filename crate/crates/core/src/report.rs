//! CSV tables and SVG layer-curve figures.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::{mean_std, Comparison, CurveSet, LayerCurve};

pub const CSV_HEADER: [&str; 8] = ["model", "task", "op", "mode", "filter", "layer", "run", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum RunLabel {
    Run(usize),
    Mean,
    Std,
}

impl std::fmt::Display for RunLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunLabel::Run(i) => write!(f, "{i}"),
            RunLabel::Mean => f.write_str("mean"),
            RunLabel::Std => f.write_str("std"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub task: String,
    pub op: String,
    pub mode: String,
    pub filter: String,
    pub layer: usize,
    pub run: RunLabel,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Flattens curve sets into run rows plus one mean and one std row per
    /// layer, sorted by (model, task, op, layer, run).
    pub fn from_curve_sets(sets: &[CurveSet]) -> Self {
        let mut rows = Vec::new();
        for set in sets {
            for curve in &set.curves {
                for point in &curve.points {
                    let row = |run, value| ResultRow {
                        model: set.model.clone(),
                        task: set.task.name().to_string(),
                        op: curve.label.clone(),
                        mode: set.mode.name().to_string(),
                        filter: set.filter.name().to_string(),
                        layer: point.layer,
                        run,
                        value,
                    };
                    for (i, &v) in point.samples.iter().enumerate() {
                        rows.push(row(RunLabel::Run(i), v));
                    }
                    rows.push(row(RunLabel::Mean, point.mean));
                    rows.push(row(RunLabel::Std, point.std));
                }
            }
        }
        rows.sort_by(|a, b| {
            (&a.model, &a.task, &a.op, a.layer, a.run).cmp(&(&b.model, &b.task, &b.op, b.layer, b.run))
        });
        Self { rows }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv encoding: {e}"));
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.model.as_str(),
                &r.task,
                &r.op,
                &r.mode,
                &r.filter,
                &r.layer.to_string(),
                &r.run.to_string(),
                &r.value.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.into_inner()
            .map_err(|e| Error::InvalidArgument(format!("csv flush: {e}")))
    }

    /// Parses a table written by [`to_csv`](Self::to_csv).
    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(bytes);
        let bad = |msg: String| Error::InvalidArgument(format!("csv decoding: {msg}"));
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            if rec.len() != CSV_HEADER.len() {
                return Err(bad(format!("expected {} fields, got {}", CSV_HEADER.len(), rec.len())));
            }
            let run = match &rec[6] {
                "mean" => RunLabel::Mean,
                "std" => RunLabel::Std,
                s => RunLabel::Run(s.parse().map_err(|_| bad(format!("bad run {s:?}")))?),
            };
            rows.push(ResultRow {
                model: rec[0].to_string(),
                task: rec[1].to_string(),
                op: rec[2].to_string(),
                mode: rec[3].to_string(),
                filter: rec[4].to_string(),
                layer: rec[5].parse().map_err(|_| bad(format!("bad layer {:?}", &rec[5])))?,
                run,
                value: rec[7].parse().map_err(|_| bad(format!("bad value {:?}", &rec[7])))?,
            });
        }
        Ok(Self { rows })
    }

    /// Recomputes every mean/std row from the run rows of the same cell and
    /// returns the cells whose stored aggregate differs.
    pub fn aggregate_mismatches(&self) -> Vec<String> {
        let key = |r: &ResultRow| (r.model.clone(), r.task.clone(), r.op.clone(), r.mode.clone(), r.filter.clone(), r.layer);
        let mut groups: std::collections::BTreeMap<_, (Vec<f64>, Option<f64>, Option<f64>)> = Default::default();
        for r in &self.rows {
            let g = groups.entry(key(r)).or_default();
            match r.run {
                RunLabel::Run(_) => g.0.push(r.value),
                RunLabel::Mean => g.1 = Some(r.value),
                RunLabel::Std => g.2 = Some(r.value),
            }
        }
        groups
            .into_iter()
            .filter_map(|(k, (samples, mean, std))| {
                let (m, s) = mean_std(&samples);
                let same = |a: Option<f64>, b: f64| a.is_some_and(|a| a.to_bits() == b.to_bits());
                (!same(mean, m) || !same(std, s)).then(|| format!("{k:?}"))
            })
            .collect()
    }
}

pub fn emit_csv(sets: &[CurveSet], path: &Path) -> Result<()> {
    let table = ResultTable::from_curve_sets(sets);
    if table.rows.is_empty() {
        return Err(Error::Empty("result table"));
    }
    fs::write(path, table.to_csv()?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub title: String,
    pub y_label: String,
    /// Fixed y range; derived from the data when `None`.
    pub y_range: Option<(f64, f64)>,
    pub width: u32,
    pub height: u32,
}

impl PlotStyle {
    pub fn new(title: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            y_label: y_label.into(),
            y_range: None,
            width: 640,
            height: 400,
        }
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22"];

fn color_for(label: &str, fallback: usize) -> &'static str {
    let base = label.rsplit(' ').next().unwrap_or(label);
    match base {
        "add" | "composed" => "#2ca02c",
        "multiply" => "#ff7f0e",
        "absdiff" => "#d62728",
        "original" => "#1f77b4",
        "baseline" => "#000000",
        _ => PALETTE[fallback % PALETTE.len()],
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders curves as a standalone SVG: mean line per curve with a
/// translucent band of one population standard deviation either side.
pub fn render_svg(curves: &[LayerCurve], style: &PlotStyle) -> Result<String> {
    let first = curves.first().ok_or(Error::Empty("plot curves"))?;
    let layers = first.layers();
    if layers.is_empty() {
        return Err(Error::Empty("plot layer axis"));
    }
    if let Some(c) = curves.iter().find(|c| c.layers() != layers) {
        return Err(Error::DimensionMismatch {
            expected: format!("layers {layers:?}"),
            got: format!("curve {:?} with layers {:?}", c.label, c.layers()),
        });
    }

    let (y_min, y_max) = style.y_range.unwrap_or_else(|| {
        let lo = curves
            .iter()
            .flat_map(|c| c.points.iter().map(|p| p.mean - p.std))
            .fold(f64::INFINITY, f64::min);
        let hi = curves
            .iter()
            .flat_map(|c| c.points.iter().map(|p| p.mean + p.std))
            .fold(f64::NEG_INFINITY, f64::max);
        let lo = lo.min(0.0);
        let hi = if hi > lo { hi } else { lo + 1.0 };
        (lo, hi)
    });
    let span = if y_max > y_min { y_max - y_min } else { 1.0 };

    let (w, h) = (style.width as f64, style.height as f64);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let x_lo = *layers.first().unwrap() as f64;
    let x_hi = *layers.last().unwrap() as f64;
    let x_span = if x_hi > x_lo { x_hi - x_lo } else { 1.0 };
    let px = |layer: usize| left + (layer as f64 - x_lo) / x_span * plot_w;
    let py = |v: f64| top + (1.0 - (v.clamp(y_min, y_max) - y_min) / span) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        left + plot_w / 2.0,
        escape(&style.title)
    );

    // Axes and ticks.
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{left:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}"/><line x1="{left:.1}" y1="{top:.1}" x2="{left:.1}" y2="{:.1}"/></g>"#,
        top + plot_h,
        left + plot_w,
        top + plot_h,
        top + plot_h
    );
    let step = (layers.len() as f64 / 10.0).ceil().max(1.0) as usize;
    for &layer in layers.iter().step_by(step) {
        let x = px(layer);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{layer}</text>"#,
            top + plot_h,
            top + plot_h + 4.0,
            top + plot_h + 18.0
        );
    }
    for i in 0..=4 {
        let v = y_min + span * i as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{left:.1}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            left - 4.0,
            left - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">layer</text>"#,
        left + plot_w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(&style.y_label)
    );

    for (i, curve) in curves.iter().enumerate() {
        let color = color_for(&curve.label, i);
        let upper: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.layer), py(p.mean + p.std)))
            .collect();
        let lower: Vec<String> = curve
            .points
            .iter()
            .rev()
            .map(|p| format!("{:.2},{:.2}", px(p.layer), py(p.mean - p.std)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon class="ribbon" points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.layer), py(p.mean)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
    }

    let lx = left + plot_w + 12.0;
    for (i, curve) in curves.iter().enumerate() {
        let y = top + 10.0 + i as f64 * 18.0;
        let color = color_for(&curve.label, i);
        let _ = writeln!(
            s,
            r#"<g class="legend"><rect x="{lx:.1}" y="{:.1}" width="14" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text></g>"#,
            y - 9.0,
            lx + 20.0,
            y,
            escape(&curve.label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{lx:.1}" y="{:.1}" font-size="10">band: mean ± 1 std</text>"#,
        top + 10.0 + curves.len() as f64 * 18.0 + 6.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(curves: &[LayerCurve], style: &PlotStyle, path: &Path) -> Result<()> {
    let svg = render_svg(curves, style)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Writes `results.csv` and one figure per curve set into `out`.
/// Returns the paths written, in order.
pub fn emit_all(sets: &[CurveSet], out: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv_path = out.join("results.csv");
    emit_csv(sets, &csv_path)?;
    let mut written = vec![csv_path];
    for set in sets {
        let y_label = match set.task.name() {
            "geometry" => "P@1",
            "word_type" => "weighted F1",
            _ => "rounded accuracy",
        };
        let mut style = PlotStyle::new(
            format!("{} / {} / {} / {}", set.model, set.task, set.mode.name(), set.filter.name()),
            y_label,
        );
        style.y_range = Some((0.0, 1.0));
        let file = out.join(format!(
            "{}_{}_{}_{}.svg",
            sanitize(&set.model),
            set.task.name(),
            set.mode.name(),
            set.filter.name()
        ));
        emit_plot(&set.curves, &style, &file)?;
        written.push(file);
    }
    Ok(written)
}

/// Merges the curves of paired sets into one figure per pair, labelling
/// each curve with its variant. Used for side-by-side comparisons.
pub fn emit_paired_plot(
    a: &CurveSet,
    b: &CurveSet,
    label_a: &str,
    label_b: &str,
    path: &Path,
) -> Result<()> {
    let relabel = |set: &CurveSet, tag: &str| -> Vec<LayerCurve> {
        set.curves
            .iter()
            .map(|c| LayerCurve {
                label: format!("{tag} {}", c.label),
                points: c.points.clone(),
            })
            .collect()
    };
    let mut curves = relabel(a, label_a);
    curves.extend(relabel(b, label_b));
    let mut style = PlotStyle::new(format!("{}: {label_a} vs {label_b}", a.model), a.task.name());
    style.y_range = Some((0.0, 1.0));
    emit_plot(&curves, &style, path)
}

/// Writes the merged `results.csv` of a comparison and one side-by-side
/// figure per model and task. Returns the paths written, in order.
pub fn emit_comparison(cmp: &Comparison, out: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv_path = out.join("results.csv");
    emit_csv(&cmp.merged(), &csv_path)?;
    let mut written = vec![csv_path];
    for (a, b) in cmp.a.iter().zip(&cmp.b) {
        let file = out.join(format!("{}_{}_compare.svg", sanitize(&a.model), a.task.name()));
        emit_paired_plot(a, b, &cmp.label_a, &cmp.label_b, &file)?;
        written.push(file);
    }
    Ok(written)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}
