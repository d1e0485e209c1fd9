//! Figure-shaped CSVs from a metrics report and SVG plots rendered from
//! those CSVs alone, so re-rendering from the CSVs reproduces the plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use embcurate::metrics::{ClusterParam, MetricsReport};

pub const FIG2_CSV: &str = "fig2_vr_vs_cluster_size.csv";
pub const FIG3_CSV: &str = "fig3_vr_vs_step.csv";
pub const FIG4_CSV: &str = "fig4_purity.csv";

const FIG2_HEADER: [&str; 4] = ["model", "avg_cluster_size", "variance_reduction", "flag"];
const FIG3_HEADER: [&str; 5] = [
    "model",
    "avg_cluster_size",
    "step",
    "variance_reduction",
    "flag",
];
const FIG4_HEADER: [&str; 4] = ["model", "avg_cluster_size", "purity", "flag"];

fn svg_name(csv_name: &str) -> String {
    csv_name.trim_end_matches(".csv").to_string() + ".svg"
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// Writes the three figure CSVs and their plots into `out_dir`. Only
/// average-size sweeps feed the figures; ε cuts stay in the metrics CSV.
/// Figure 2 uses each model's last checkpoint.
pub fn emit_report(report: &MetricsReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        bail!("metrics report is empty");
    }
    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let sized: Vec<_> = report
        .rows
        .iter()
        .filter_map(|r| match r.param {
            ClusterParam::AvgSize(s) => Some((r, s)),
            ClusterParam::Epsilon(_) => None,
        })
        .collect();
    let mut last_step: BTreeMap<&str, u64> = BTreeMap::new();
    for (r, _) in &sized {
        let e = last_step.entry(&r.model).or_insert(r.step);
        *e = (*e).max(r.step);
    }

    let mut fig2 = csv::Writer::from_path(out_dir.join(FIG2_CSV))?;
    fig2.write_record(FIG2_HEADER)?;
    let mut fig3 = csv::Writer::from_path(out_dir.join(FIG3_CSV))?;
    fig3.write_record(FIG3_HEADER)?;
    let mut fig4 = csv::Writer::from_path(out_dir.join(FIG4_CSV))?;
    fig4.write_record(FIG4_HEADER)?;
    let mut purity_done = std::collections::BTreeSet::new();
    for (r, size) in &sized {
        let vr = r.variance_reduction;
        if r.step == last_step[r.model.as_str()] {
            fig2.write_record([
                r.model.clone(),
                size.to_string(),
                fmt_opt(vr.value()),
                vr.flag().to_string(),
            ])?;
        }
        fig3.write_record([
            r.model.clone(),
            size.to_string(),
            r.step.to_string(),
            fmt_opt(vr.value()),
            vr.flag().to_string(),
        ])?;
        if purity_done.insert((r.model.clone(), *size)) {
            fig4.write_record([
                r.model.clone(),
                size.to_string(),
                fmt_opt(r.purity),
                if r.purity.is_some() { "" } else { "missing" }.to_string(),
            ])?;
        }
    }
    fig2.flush()?;
    fig3.flush()?;
    fig4.flush()?;
    let mut out: Vec<PathBuf> = [FIG2_CSV, FIG3_CSV, FIG4_CSV]
        .iter()
        .map(|n| out_dir.join(n))
        .collect();
    out.extend(render_plots(out_dir)?);
    Ok(out)
}

/// Re-renders every plot from the figure CSVs in `dir`.
pub fn render_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let specs: [(&str, fn(&[Vec<String>]) -> Result<String>); 3] = [
        (FIG2_CSV, plot_fig2),
        (FIG3_CSV, plot_fig3),
        (FIG4_CSV, plot_fig4),
    ];
    for (name, plot) in specs {
        let rows = read_rows(&dir.join(name))?;
        let svg = plot(&rows)?;
        let p = dir.join(svg_name(name));
        fs::write(&p, svg).with_context(|| format!("cannot write {}", p.display()))?;
        out.push(p);
    }
    Ok(out)
}

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.records()
        .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
        .collect()
}

fn num(s: &str) -> Result<f64> {
    s.parse().with_context(|| format!("bad number '{s}'"))
}

/// A plottable point: cells with a flag are never plotted.
fn value(cell: &str, flag: &str) -> Result<Option<f64>> {
    if !flag.is_empty() || cell.is_empty() {
        return Ok(None);
    }
    num(cell).map(Some)
}

type Series = BTreeMap<String, Vec<(f64, f64)>>;

fn plot_fig2(rows: &[Vec<String>]) -> Result<String> {
    let mut s = Series::new();
    for r in rows {
        let pts = s.entry(r[0].clone()).or_default();
        if let Some(v) = value(&r[2], &r[3])? {
            pts.push((num(&r[1])?, v));
        }
    }
    Ok(line_chart(
        "Variance reduction vs average cluster size",
        "average cluster size",
        &s,
    ))
}

fn plot_fig3(rows: &[Vec<String>]) -> Result<String> {
    let mut s = Series::new();
    for r in rows {
        let pts = s.entry(format!("{} (size {})", r[0], r[1])).or_default();
        if let Some(v) = value(&r[3], &r[4])? {
            pts.push((num(&r[2])?, v));
        }
    }
    Ok(line_chart(
        "Variance reduction vs training step",
        "gradient step",
        &s,
    ))
}

fn plot_fig4(rows: &[Vec<String>]) -> Result<String> {
    let mut bars = Vec::new();
    for r in rows {
        bars.push((format!("{} / {}", r[0], r[1]), value(&r[2], &r[3])?));
    }
    Ok(bar_chart("Cluster purity by data source", &bars))
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        (W - RIGHT + LEFT) / 2.0,
        escape(title)
    )
}

fn range(vals: impl Iterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if include_zero {
        lo = lo.min(0.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (
        if include_zero && lo == 0.0 {
            0.0
        } else {
            lo - pad
        },
        hi + pad,
    )
}

fn axes(svg: &mut String, x: Option<(f64, f64)>, y: (f64, f64), xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(
        svg,
        "<path d=\"M{x0:.1},{y1:.1} L{x0:.1},{y0:.1} L{x1:.1},{y0:.1}\" stroke=\"black\" fill=\"none\"/>"
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let px = x0 + t * (x1 - x0);
        let py = y0 + t * (y1 - y0);
        if let Some(x) = x {
            let _ = writeln!(
                svg,
                "<text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{:.4}</text>",
                y0 + 15.0,
                x.0 + t * (x.1 - x.0)
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.4}</text>",
            x0 - 5.0,
            py + 4.0,
            y.0 + t * (y.1 - y.0)
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(xlabel)
    );
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.1})\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn line_chart(title: &str, xlabel: &str, series: &Series) -> String {
    let mut svg = header(title);
    let all = || series.values().flatten();
    let xr = range(all().map(|p| p.0), false);
    let yr = range(all().map(|p| p.1), true);
    axes(&mut svg, Some(xr), yr, xlabel, "variance reduction");
    let px = |v: f64| LEFT + (v - xr.0) / (xr.1 - xr.0) * (W - RIGHT - LEFT);
    let py = |v: f64| (H - BOTTOM) - (v - yr.0) / (yr.1 - yr.0) * (H - BOTTOM - TOP);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = pts.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if pts.len() > 1 {
            let d: Vec<String> = pts
                .iter()
                .map(|p| format!("{:.1},{:.1}", px(p.0), py(p.1)))
                .collect();
            let _ = writeln!(
                svg,
                "<polyline points=\"{}\" stroke=\"{color}\" fill=\"none\" stroke-width=\"2\"/>",
                d.join(" ")
            );
        }
        for p in &pts {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>",
                px(p.0),
                py(p.1)
            );
        }
        let ly = TOP + 10.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            W - RIGHT + 15.0,
            ly - 9.0,
            W - RIGHT + 30.0,
            ly,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn bar_chart(title: &str, bars: &[(String, Option<f64>)]) -> String {
    let mut svg = header(title);
    let yr = (0.0, 1.0);
    axes(&mut svg, None, yr, "model / average cluster size", "purity");
    let slot = (W - RIGHT - LEFT) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let x = LEFT + slot * (i as f64 + 0.15);
        if let Some(v) = v {
            let h = v.clamp(0.0, 1.0) * (H - BOTTOM - TOP);
            let _ = writeln!(
                svg,
                "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{color}\"/>",
                H - BOTTOM - h,
                slot * 0.7
            );
        }
        let ly = TOP + 10.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            W - RIGHT + 15.0,
            ly - 9.0,
            W - RIGHT + 30.0,
            ly,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
