//! Static SVG plots from metrics CSVs.
//!
//! Four panels are emitted as separate files — reward return, expected cost
//! return, 95th-percentile cost return, and ice-tile visitation — each with
//! the per-row mean across the provided seed files and a ±1-standard-
//! deviation band. Rendering is fully deterministic: identical CSVs produce
//! byte-identical SVGs.

use std::fs;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// The plotted panels: `(column, file stem, axis title)`.
const PANELS: [(&str, &str, &str); 4] = [
    ("reward_return", "reward_return", "Reward return"),
    ("mu", "expected_cost", "Expected cost return"),
    ("cost_p95", "cost_p95", "95th percentile cost return"),
    ("ice_visitation", "ice_visitation", "Ice tile visitation"),
];

/// One parsed metrics CSV: env-step axis plus the four panel series.
struct RunSeries {
    env_steps: Vec<f64>,
    columns: [Vec<f64>; 4],
}

fn parse_csv(path: &Path) -> Result<RunSeries> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty file", path.display())))?
        .split(',')
        .collect();
    let find = |name: &str| {
        header.iter().position(|h| *h == name).ok_or_else(|| {
            Error::Config(format!("{}: missing column '{name}'", path.display()))
        })
    };
    let step_idx = find("env_steps")?;
    let mut panel_idx = [0usize; 4];
    for (slot, (column, _, _)) in panel_idx.iter_mut().zip(PANELS.iter()) {
        *slot = find(column)?;
    }

    let mut series = RunSeries {
        env_steps: Vec::new(),
        columns: [Vec::new(), Vec::new(), Vec::new(), Vec::new()],
    };
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let get = |idx: usize| -> Result<f64> {
            fields
                .get(idx)
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| {
                    Error::Config(format!(
                        "{}: row {}: bad numeric field",
                        path.display(),
                        lineno + 2
                    ))
                })
        };
        series.env_steps.push(get(step_idx)?);
        for (values, idx) in series.columns.iter_mut().zip(panel_idx.iter()) {
            values.push(get(*idx)?);
        }
    }
    if series.env_steps.is_empty() {
        return Err(Error::Config(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok(series)
}

/// Per-row mean and sample standard deviation across runs (zero-width band
/// for a single run).
fn mean_and_std(runs: &[RunSeries], panel: usize, rows: usize) -> (Vec<f64>, Vec<f64>) {
    let n = runs.len() as f64;
    let mut means = Vec::with_capacity(rows);
    let mut stds = Vec::with_capacity(rows);
    for row in 0..rows {
        let mean = runs.iter().map(|r| r.columns[panel][row]).sum::<f64>() / n;
        let std = if runs.len() > 1 {
            let ss = runs
                .iter()
                .map(|r| (r.columns[panel][row] - mean).powi(2))
                .sum::<f64>();
            (ss / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        means.push(mean);
        stds.push(std);
    }
    (means, stds)
}

/// Renders one panel from the step axis, mean line, and band half-widths.
fn render_panel(title: &str, xs: &[f64], means: &[f64], stds: &[f64]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 440.0;
    const ML: f64 = 70.0; // left margin
    const MR: f64 = 20.0;
    const MT: f64 = 40.0;
    const MB: f64 = 50.0;
    let fmt = |x: f64| format!("{x:.2}");

    let (x_lo, mut x_hi) = (xs[0], xs[xs.len() - 1]);
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for (m, s) in means.iter().zip(stds.iter()) {
        y_lo = y_lo.min(m - s);
        y_hi = y_hi.max(m + s);
    }
    if y_hi <= y_lo {
        y_lo -= 1.0;
        y_hi += 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    y_lo -= pad;
    y_hi += pad;

    let px = |x: f64| ML + (x - x_lo) / (x_hi - x_lo) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y_lo) / (y_hi - y_lo) * (H - MT - MB);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{title}</text>\n",
        fmt((ML + W - MR) / 2.0)
    ));

    // ±1σ band: upper edge forward, lower edge back.
    if stds.iter().any(|s| *s > 0.0) {
        let mut points = String::new();
        for (x, (m, s)) in xs.iter().zip(means.iter().zip(stds.iter())) {
            points.push_str(&format!("{},{} ", fmt(px(*x)), fmt(py(m + s))));
        }
        for (x, (m, s)) in xs.iter().zip(means.iter().zip(stds.iter())).rev() {
            points.push_str(&format!("{},{} ", fmt(px(*x)), fmt(py(m - s))));
        }
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"#4878b0\" fill-opacity=\"0.25\" stroke=\"none\"/>\n",
            points.trim_end()
        ));
    }

    // Mean line (or a marker when there is a single row).
    if xs.len() > 1 {
        let points: Vec<String> = xs
            .iter()
            .zip(means.iter())
            .map(|(x, m)| format!("{},{}", fmt(px(*x)), fmt(py(*m))))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f4e8c\" stroke-width=\"1.5\"/>\n",
            points.join(" ")
        ));
    } else {
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"#1f4e8c\"/>\n",
            fmt(px(xs[0])),
            fmt(py(means[0]))
        ));
    }

    // Axes and labels.
    svg.push_str(&format!(
        "<line x1=\"{l}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{l}\" y1=\"{t}\" x2=\"{l}\" y2=\"{b}\" stroke=\"black\"/>\n",
        l = fmt(ML),
        r = fmt(W - MR),
        t = fmt(MT),
        b = fmt(H - MB),
    ));
    let label = |x: f64, y: f64, anchor: &str, text: String| {
        format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
             text-anchor=\"{anchor}\">{text}</text>\n",
            fmt(x),
            fmt(y)
        )
    };
    svg.push_str(&label(ML, H - MB + 18.0, "middle", format!("{x_lo:.0}")));
    svg.push_str(&label(W - MR, H - MB + 18.0, "middle", format!("{x_hi:.0}")));
    svg.push_str(&label(
        (ML + W - MR) / 2.0,
        H - MB + 34.0,
        "middle",
        "Environment steps".to_string(),
    ));
    svg.push_str(&label(ML - 8.0, H - MB + 4.0, "end", format!("{y_lo:.3}")));
    svg.push_str(&label(ML - 8.0, MT + 4.0, "end", format!("{y_hi:.3}")));
    svg.push_str("</svg>\n");
    svg
}

/// Parses the CSVs, aligns them row-wise (truncating to the shortest run),
/// and writes the four panel SVGs into `out_dir`. Returns the file paths.
pub fn run_plot(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(Error::Config("plot needs at least one metrics CSV".into()));
    }
    let runs: Vec<RunSeries> = inputs.iter().map(|p| parse_csv(p)).collect::<Result<_>>()?;
    let rows = runs.iter().map(|r| r.env_steps.len()).min().unwrap_or(0);
    fs::create_dir_all(out_dir)?;

    let xs: Vec<f64> = (0..rows)
        .map(|row| runs.iter().map(|r| r.env_steps[row]).sum::<f64>() / runs.len() as f64)
        .collect();
    let mut written = Vec::new();
    for (panel, (_, stem, title)) in PANELS.iter().enumerate() {
        let (means, stds) = mean_and_std(&runs, panel, rows);
        let svg = render_panel(title, &xs, &means, &stds);
        let path = out_dir.join(format!("{stem}.svg"));
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
