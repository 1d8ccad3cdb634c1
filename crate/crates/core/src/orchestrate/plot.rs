//! Deterministic SVG plots, each written next to the CSV it is drawn from.
//! Rendering reads only the CSV data, so re-plotting a CSV reproduces the
//! SVG byte for byte.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, Table};
use super::run::ResultRecord;
use super::spec::SubsetTag;
use crate::error::{Error, IoContext, Result};
use crate::extract::RepMode;
use crate::metrics::spearman;
use crate::readout::ReadoutKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlotKind {
    Line,
    Scatter,
    Bar,
}

/// One CSV row: `kind,x_label,y_label,series,x,y,err`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CsvRow {
    kind: PlotKind,
    x_label: String,
    y_label: String,
    series: String,
    x: String,
    y: f64,
    err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub series: String,
    /// Numeric for line and scatter plots, a category for bars.
    pub x: String,
    pub y: f64,
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    pub kind: PlotKind,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<PlotPoint>,
}

impl PlotData {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &self.points {
            w.serialize(CsvRow {
                kind: self.kind,
                x_label: self.x_label.clone(),
                y_label: self.y_label.clone(),
                series: p.series.clone(),
                x: p.x.clone(),
                y: p.y,
                err: p.err,
            })?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for r in csv::Reader::from_reader(text.as_bytes()).deserialize() {
            let r: CsvRow = r?;
            rows.push(r);
        }
        let first = rows.first().ok_or_else(|| Error::InvalidArgument("plot CSV has no rows".into()))?;
        if rows.iter().any(|r| r.kind != first.kind || r.x_label != first.x_label || r.y_label != first.y_label) {
            return Err(Error::InvalidArgument("plot CSV mixes kinds or axis labels".into()));
        }
        let data = Self {
            kind: first.kind,
            x_label: first.x_label.clone(),
            y_label: first.y_label.clone(),
            points: rows.into_iter().map(|r| PlotPoint { series: r.series, x: r.x, y: r.y, err: r.err }).collect(),
        };
        if data.kind != PlotKind::Bar && data.points.iter().any(|p| p.x.parse::<f64>().is_err()) {
            return Err(Error::InvalidArgument("line and scatter plots need numeric x".into()));
        }
        Ok(data)
    }

    fn series(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for p in &self.points {
            if !seen.contains(&p.series.as_str()) {
                seen.push(p.series.as_str());
            }
        }
        seen
    }

    /// Spearman ρ over all scatter points, `None` when undefined.
    pub fn rho(&self) -> Option<f64> {
        let x: Vec<f64> = self.points.iter().map(|p| p.x.parse().unwrap_or(f64::NAN)).collect();
        let y: Vec<f64> = self.points.iter().map(|p| p.y).collect();
        if x.len() < 3 {
            return None;
        }
        spearman(&x, &y).ok()
    }
}

const W: f64 = 760.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const DASHES: [&str; 4] = ["", "6 3", "2 3", "8 3 2 3"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }
    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

pub fn render_svg(data: &PlotData) -> String {
    let series = data.series();
    let bars = data.kind == PlotKind::Bar;
    let categories: Vec<&str> = {
        let mut c = Vec::new();
        for p in &data.points {
            if !c.contains(&p.x.as_str()) {
                c.push(p.x.as_str());
            }
        }
        c
    };
    let xs: Vec<f64> = if bars {
        data.points.iter().map(|p| categories.iter().position(|c| *c == p.x).unwrap_or(0) as f64).collect()
    } else {
        data.points.iter().map(|p| p.x.parse().unwrap_or(0.0)).collect()
    };
    let (x0, x1) = if bars {
        (-0.5, categories.len() as f64 - 0.5)
    } else {
        padded(xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    };
    let ylo = data.points.iter().map(|p| p.y - p.err).fold(f64::INFINITY, f64::min);
    let yhi = data.points.iter().map(|p| p.y + p.err).fold(f64::NEG_INFINITY, f64::max);
    let (mut y0, y1) = padded(ylo, yhi);
    if bars {
        y0 = y0.min(0.0);
    }
    let f = Frame { x0, x1, y0, y1 };

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let mut title = format!("{} vs {}", data.y_label, data.x_label);
    if data.kind == PlotKind::Scatter {
        match data.rho() {
            Some(r) => {
                let _ = write!(title, " (Spearman ρ = {r:.3})");
            }
            None => title.push_str(" (Spearman ρ undefined)"),
        }
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + W - RIGHT) / 2.0, esc(&title));
    let (bx, by, bw, bh) = (LEFT, TOP, W - LEFT - RIGHT, H - TOP - BOTTOM);
    let _ = writeln!(s, r#"<rect x="{bx:.2}" y="{by:.2}" width="{bw:.2}" height="{bh:.2}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let v = y0 + (y1 - y0) * i as f64 / 4.0;
        let y = f.py(v);
        let _ = writeln!(s, r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, LEFT, W - RIGHT);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, LEFT - 6.0, y + 4.0);
    }
    if bars {
        for (i, c) in categories.iter().enumerate() {
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, f.px(i as f64), H - BOTTOM + 16.0, esc(c));
        }
    } else {
        for i in 0..=4 {
            let v = x0 + (x1 - x0) * i as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.3}</text>"#, f.px(v), H - BOTTOM + 16.0);
        }
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, (LEFT + W - RIGHT) / 2.0, H - 14.0, esc(&data.x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        esc(&data.y_label)
    );

    let slot = 0.8 / series.len().max(1) as f64;
    for (si, name) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let mut pts: Vec<(f64, f64, f64)> =
            data.points.iter().zip(&xs).filter(|(p, _)| p.series == *name).map(|(p, &x)| (x, p.y, p.err)).collect();
        match data.kind {
            PlotKind::Line => {
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                let path: Vec<String> = pts.iter().map(|&(x, y, _)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
                let dash = DASHES[si % DASHES.len()];
                let dash_attr = if dash.is_empty() { String::new() } else { format!(r#" stroke-dasharray="{dash}""#) };
                let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash_attr}/>"#, path.join(" "));
                for &(x, y, e) in &pts {
                    errbar(&mut s, &f, f.px(x), y, e, color);
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, f.px(x), f.py(y));
                }
            }
            PlotKind::Scatter => {
                for &(x, y, e) in &pts {
                    errbar(&mut s, &f, f.px(x), y, e, color);
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{color}" fill-opacity="0.8"/>"#, f.px(x), f.py(y));
                }
            }
            PlotKind::Bar => {
                let unit = f.px(1.0) - f.px(0.0);
                for &(x, y, e) in &pts {
                    let left = f.px(x - 0.4 + slot * si as f64);
                    let (top, base) = (f.py(y.max(0.0)), f.py(y.min(0.0)));
                    let _ = writeln!(
                        s,
                        r#"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}"/>"#,
                        slot * unit,
                        base - top
                    );
                    errbar(&mut s, &f, left + slot * unit / 2.0, y, e, "black");
                }
            }
        }
        let ly = TOP + 10.0 + 18.0 * si as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(s, r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="12" fill="{color}"/>"#, ly - 10.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 18.0, esc(name));
    }
    s.push_str("</svg>\n");
    s
}

fn errbar(s: &mut String, f: &Frame, x: f64, y: f64, e: f64, color: &str) {
    if e > 0.0 {
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}"/>"#, f.py(y - e), f.py(y + e));
    }
}

/// Writes `<name>.csv` and the `<name>.svg` rendered from it.
pub fn write_plot(data: &PlotData, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).at(dir)?;
    let csv_path = dir.join(format!("{name}.csv"));
    let svg_path = dir.join(format!("{name}.svg"));
    let csv = data.to_csv()?;
    std::fs::write(&csv_path, &csv).at(&csv_path)?;
    // Render from the parsed CSV so the SVG depends on nothing else.
    std::fs::write(&svg_path, render_svg(&PlotData::from_csv(&csv)?)).at(&svg_path)?;
    Ok((csv_path, svg_path))
}

/// Re-renders an SVG from a plot CSV.
pub fn replot(csv_path: &Path, svg_path: &Path) -> Result<()> {
    let data = PlotData::from_csv(&std::fs::read_to_string(csv_path).at(csv_path)?)?;
    std::fs::write(svg_path, render_svg(&data)).at(svg_path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub readout_kind: ReadoutKind,
    /// Defaults to 500 when present, else the largest budget.
    pub n_label: Option<usize>,
    pub subset: SubsetTag,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self { readout_kind: ReadoutKind::Linear, n_label: None, subset: SubsetTag::Test }
    }
}

fn points_from(table: &Table, x_key: &str, series: impl Fn(&[String]) -> String, column: &str) -> Vec<PlotPoint> {
    let xi = table.key_index(x_key).expect("x key is a group key");
    let ci = table.column(column).expect("known column");
    table
        .rows
        .iter()
        .filter_map(|r| {
            let v = r.values[ci]?;
            (!r.key[xi].is_empty()).then(|| PlotPoint { series: series(&r.key), x: r.key[xi].clone(), y: v.mean, err: v.std })
        })
        .collect()
}

/// Emits every plot the records support and returns the written files.
pub fn emit_plots(records: &[ResultRecord], dir: &Path, opts: &PlotOptions) -> Result<Vec<PathBuf>> {
    let budgets: BTreeSet<usize> = records.iter().map(|r| r.n_label).collect();
    let n_label = opts
        .n_label
        .or_else(|| budgets.contains(&500).then_some(500))
        .or_else(|| budgets.iter().max().copied())
        .ok_or_else(|| Error::InvalidArgument("no result records to plot".into()))?;
    let sel: Vec<ResultRecord> = records
        .iter()
        .filter(|r| r.subset == opts.subset && r.readout_kind == opts.readout_kind && r.n_label == n_label)
        .cloned()
        .collect();
    if sel.is_empty() {
        return Err(Error::InvalidArgument("no records match the plot selection".into()));
    }
    let kind = opts.readout_kind.as_str();
    let mut written = Vec::new();
    let emit = |data: PlotData, name: String, out: &mut Vec<PathBuf>| -> Result<()> {
        if !data.points.is_empty() {
            let (c, s) = write_plot(&data, dir, &name)?;
            out.extend([c, s]);
        }
        Ok(())
    };
    let columns = [("accuracy", "accuracy"), ("r2", "R²")];

    let vae: Vec<ResultRecord> = sel.iter().filter(|r| r.coords.contains_key("beta")).cloned().collect();
    if !vae.is_empty() {
        let t = aggregate(&vae, &["family", "beta", "mode"])?;
        for (col, label) in columns {
            let pts = points_from(&t, "beta", |k| format!("{} {}", k[0], k[2]), col);
            emit(PlotData { kind: PlotKind::Line, x_label: "beta".into(), y_label: format!("{label} ({kind})"), points: pts }, format!("beta_{col}"), &mut written)?;
        }
    }

    let el: Vec<ResultRecord> = sel
        .iter()
        .filter(|r| r.coords.contains_key("bits") && r.mode == RepMode::Post)
        .filter(|r| r.coords.get("ablation").is_none_or(|a| a == "none"))
        .cloned()
        .collect();
    if !el.is_empty() {
        let t = aggregate(&el, &["n_msg", "bits"])?;
        for (col, label) in columns {
            let pts = points_from(&t, "bits", |k| format!("n_msg={}", k[0]), col);
            emit(PlotData { kind: PlotKind::Line, x_label: "bits".into(), y_label: format!("{label} ({kind}, post)"), points: pts }, format!("bits_{col}"), &mut written)?;
        }
    }

    let latent: Vec<ResultRecord> = sel.iter().filter(|r| r.mode == RepMode::Latent).cloned().collect();
    if !latent.is_empty() {
        let coord_keys: BTreeSet<String> = latent.iter().flat_map(|r| r.coords.keys().cloned()).collect();
        let keys: Vec<&str> = coord_keys.iter().map(String::as_str).collect();
        let t = aggregate(&latent, &keys)?;
        let fam = t.key_index("family");
        let acc = t.column("accuracy").expect("known column");
        for metric in ["mig", "sap", "irs", "dci_disentanglement", "topsim"] {
            let mi = t.column(metric).expect("known column");
            let pts: Vec<PlotPoint> = t
                .rows
                .iter()
                .filter_map(|r| {
                    let (m, a) = (r.values[mi]?, r.values[acc]?);
                    Some(PlotPoint { series: fam.map_or_else(String::new, |i| r.key[i].clone()), x: m.mean.to_string(), y: a.mean, err: a.std })
                })
                .collect();
            emit(
                PlotData { kind: PlotKind::Scatter, x_label: metric.into(), y_label: format!("accuracy ({kind}, latent)"), points: pts },
                format!("scatter_{metric}"),
                &mut written,
            )?;
        }
    }

    let ratios: BTreeSet<String> = sel.iter().filter_map(|r| r.coords.get("ratio").map(|v| v.to_string())).collect();
    if ratios.len() > 1 {
        let t = aggregate(&sel, &["ratio", "family", "mode"])?;
        let ci = t.column("accuracy").expect("known column");
        let pts: Vec<PlotPoint> = t
            .rows
            .iter()
            .filter_map(|r| {
                let v = r.values[ci]?;
                Some(PlotPoint { series: format!("ratio={}", r.key[0]), x: format!("{} {}", r.key[1], r.key[2]), y: v.mean, err: v.std })
            })
            .collect();
        emit(PlotData { kind: PlotKind::Bar, x_label: "model / mode".into(), y_label: format!("accuracy ({kind})"), points: pts }, "ratio_bars".into(), &mut written)?;
    }
    Ok(written)
}
