// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::OutputSettings;
use super::{Report, RunReport};
use crate::error::{Error, Result};
use crate::io::write_atomic;

fn num(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn int<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn profile_value(run: &RunReport, metric: &str, pos: usize) -> Option<f64> {
    run.profiles.iter().find(|p| p.metric == metric).and_then(|p| p.values[pos])
}

/// `report.json` plus the CSV tables and SVG figures enabled in `outputs`.
/// Returns the paths written.
pub fn write_outputs(report: &Report, dir: impl AsRef<Path>, outputs: &OutputSettings) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![("report.json".to_string(), report.to_json())];
    if outputs.csv {
        files.extend(render_csv(report));
    }
    if outputs.svg {
        files.extend(render_svgs(report));
    }
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// `layers.csv`, `scale_curves.csv` and one `cka_run<i>.csv` per run.
pub fn render_csv(report: &Report) -> Vec<(String, String)> {
    let mut layers = String::from(
        "run,manifest,model_name,checkpoint_step,layer_index,selected_k,id,id_normalized,\
         participation_ratio,pca_dim,total_variance,discarded_duplicates,surprisal,encoding_mean_r\n",
    );
    let mut curves = String::from("run,layer_index,k,id,n_used,log_likelihood\n");
    let mut out = Vec::new();
    for (r, run) in report.runs.iter().enumerate() {
        for (pos, l) in run.layers.iter().enumerate() {
            let _ = writeln!(
                layers,
                "{r},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                csv_field(&run.manifest),
                csv_field(&run.model_name),
                int(run.checkpoint_step),
                l.layer_index,
                int(l.selected_k),
                num(l.id),
                num(l.id_normalized),
                num(l.participation_ratio),
                int(l.pca_dim),
                num(l.total_variance),
                l.discarded_duplicates,
                num(profile_value(run, "surprisal", pos)),
                num(profile_value(run, "encoding", pos)),
            );
            for p in &l.scale_curve {
                let _ = writeln!(
                    curves,
                    "{r},{},{},{},{},{}",
                    l.layer_index,
                    p.k,
                    num(p.id),
                    int(p.n_used),
                    num(p.log_likelihood)
                );
            }
        }
        if let Some(cka) = &run.cka {
            let mut s = String::from("layer");
            for l in &cka.layer_indices {
                let _ = write!(s, ",{l}");
            }
            s.push('\n');
            for (l, row) in cka.layer_indices.iter().zip(&cka.values) {
                let _ = write!(s, "{l}");
                for v in row {
                    let _ = write!(s, ",{}", num(*v));
                }
                s.push('\n');
            }
            out.push((format!("cka_run{r}.csv"), s));
        }
    }
    out.insert(0, ("scale_curves.csv".into(), curves));
    out.insert(0, ("layers.csv".into(), layers));
    out
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
const W: f64 = 480.0;
const H: f64 = 300.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart panel at `(ox, oy)`; `x_label_fn` formats x tick labels.
fn line_panel(
    svg: &mut String,
    (ox, oy): (f64, f64),
    title: &str,
    x_label: &str,
    series: &[Series],
    x_tick: &dyn Fn(f64) -> String,
) {
    let (x0, x1) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
    let sx = |x: f64| ox + MARGIN + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| oy + MARGIN + (1.0 - (y - y0) / (y1 - y0)) * ph;
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{}</text>"#,
        ox + W / 2.0,
        oy + 20.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{:.1}" y="{:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#888"/>"##,
        ox + MARGIN,
        oy + MARGIN
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            sx(fx),
            oy + H - MARGIN + 14.0,
            x_tick(fx)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{:.3}</text>"#,
            ox + MARGIN - 4.0,
            sy(fy) + 3.0,
            fy
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
        ox + W / 2.0,
        oy + H - 8.0,
        escape(x_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            pts.join(" "),
            escape(&s.label)
        );
        for &(x, y) in &s.points {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, sx(x), sy(y));
        }
        if series.len() > 1 && i < 12 {
            let ly = oy + MARGIN + 12.0 * i as f64 + 8.0;
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{ly:.1}" font-size="9" fill="{color}" text-anchor="end">{}</text>"#,
                ox + W - MARGIN - 4.0,
                escape(&s.label)
            );
        }
    }
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn plain_tick(x: f64) -> String {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        format!("{r}")
    } else {
        format!("{x:.1}")
    }
}

fn run_label(run: &RunReport, r: usize) -> String {
    match run.checkpoint_step {
        Some(step) => format!("run{r} {} @{step}", run.model_name),
        None => format!("run{r} {}", run.model_name),
    }
}

/// `profiles.svg`, plus `scale_curves_run<i>.svg` and `cka_run<i>.svg` per run.
pub fn render_svgs(report: &Report) -> Vec<(String, String)> {
    let metrics = ["id", "id_normalized", "participation_ratio", "pca_dim", "surprisal", "encoding"];
    let present: Vec<&str> = metrics
        .into_iter()
        .filter(|m| report.runs.iter().any(|r| r.profiles.iter().any(|p| p.metric == *m)))
        .collect();
    let mut body = String::new();
    for (i, metric) in present.iter().enumerate() {
        let series: Vec<Series> = report
            .runs
            .iter()
            .enumerate()
            .filter_map(|(r, run)| {
                let p = run.profiles.iter().find(|p| p.metric == *metric)?;
                let points =
                    p.layer_indices.iter().zip(&p.values).filter_map(|(&l, v)| Some((l as f64, (*v)?))).collect();
                Some(Series { label: run_label(run, r), points })
            })
            .collect();
        let origin = ((i % 2) as f64 * W, (i / 2) as f64 * H);
        line_panel(&mut body, origin, metric, "layer", &series, &plain_tick);
    }
    let rows = present.len().div_ceil(2).max(1) as f64;
    let mut out = vec![("profiles.svg".to_string(), document(2.0 * W, rows * H, &body))];

    for (r, run) in report.runs.iter().enumerate() {
        let series: Vec<Series> = run
            .layers
            .iter()
            .map(|l| Series {
                label: format!("layer {}", l.layer_index),
                points: l.scale_curve.iter().filter_map(|p| Some(((p.k as f64).log2(), p.id?))).collect(),
            })
            .collect();
        let mut body = String::new();
        line_panel(&mut body, (0.0, 0.0), &format!("{} scale curves", run_label(run, r)), "k", &series, &|x| {
            format!("{}", 2f64.powf(x).round())
        });
        out.push((format!("scale_curves_run{r}.svg"), document(W, H, &body)));

        if let Some(cka) = &run.cka {
            out.push((format!("cka_run{r}.svg"), heatmap(&run_label(run, r), &cka.layer_indices, &cka.values)));
        }
    }
    out
}

fn heatmap(title: &str, layers: &[usize], values: &[Vec<Option<f64>>]) -> String {
    let n = layers.len().max(1) as f64;
    let cell = (360.0 / n).clamp(4.0, 40.0);
    let (left, top) = (40.0, 36.0);
    let side = cell * n;
    let mut body = String::new();
    let _ = writeln!(
        body,
        r#"<text x="{:.1}" y="20" font-size="13" text-anchor="middle">CKA {}</text>"#,
        left + side / 2.0,
        escape(title)
    );
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let fill = match v {
                Some(v) => {
                    let t = v.clamp(0.0, 1.0);
                    let c = |lo: f64, hi: f64| (lo + (hi - lo) * t).round() as u8;
                    format!("#{:02x}{:02x}{:02x}", c(255.0, 8.0), c(255.0, 48.0), c(255.0, 107.0))
                }
                None => "#cccccc".into(),
            };
            let _ = writeln!(
                body,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{fill}"><title>{} x {}: {}</title></rect>"#,
                left + j as f64 * cell,
                top + i as f64 * cell,
                layers[i],
                layers[j],
                num(*v)
            );
        }
    }
    let step = (layers.len() / 12).max(1);
    for (i, l) in layers.iter().enumerate().step_by(step) {
        let c = (i as f64 + 0.5) * cell;
        let _ = writeln!(
            body,
            r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="end">{l}</text>"#,
            left - 3.0,
            top + c + 3.0
        );
        let _ = writeln!(
            body,
            r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{l}</text>"#,
            left + c,
            top + side + 12.0
        );
    }
    document(left + side + 20.0, top + side + 30.0, &body)
}
