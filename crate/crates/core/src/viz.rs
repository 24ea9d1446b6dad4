//! Graph exports of trained KAN sub-networks.

use std::fmt::Write as _;

use crate::autodiff::Tensor;
use crate::cdm::DiagnosisModel;
use crate::data::Response;
use crate::error::{Error, Result};
use crate::kan::{keeps_edge, prune, KanNetwork, PruneReport};

/// Responses used to build an importance sample; more are ignored.
pub const SAMPLE_LIMIT: usize = 2048;
const CURVE_POINTS: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Dot,
    Svg,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dot" => Ok(Format::Dot),
            "svg" => Ok(Format::Svg),
            other => Err(Error::Config(format!(
                "unknown viz format '{other}' (expected dot or svg)"
            ))),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Dot => "dot",
            Format::Svg => "svg",
        }
    }
}

/// Inputs the named KAN receives when the model scores `responses`.
pub fn kan_sample(model: &DiagnosisModel, name: &str, responses: &[Response]) -> Result<Tensor> {
    let net = model.kan(name)?;
    let used = &responses[..responses.len().min(SAMPLE_LIMIT)];
    if used.is_empty() {
        return Err(Error::Contract(
            "importance sample needs at least one response".into(),
        ));
    }
    let one_hot = |ids: Vec<usize>| {
        let width = net.n_in();
        let mut vals = vec![0.0; ids.len() * width];
        for (r, i) in ids.iter().enumerate() {
            vals[r * width + i] = 1.0;
        }
        Tensor::new(vec![ids.len(), width], vals)
    };
    if name.starts_with("embed_s") {
        return one_hot(used.iter().map(|r| r.student).collect());
    }
    if name.starts_with("embed_e") {
        return one_hot(used.iter().map(|r| r.exercise).collect());
    }
    let s: Vec<usize> = used.iter().map(|r| r.student).collect();
    let e: Vec<usize> = used.iter().map(|r| r.exercise).collect();
    let (_, trace) = model.predict_with_trace(&s, &e)?;
    trace
        .get(&format!("in:{name}"))
        .cloned()
        .ok_or_else(|| Error::Capability(format!("no recorded input for KAN '{name}'")))
}

/// Evenly spaced rows across the first layer's grid, for when no data is at hand.
pub fn grid_sample(net: &KanNetwork, rows: usize) -> Result<Tensor> {
    let grid = &net.layers[0].grid;
    let width = net.n_in();
    let rows = rows.max(2);
    let step = (grid.hi() - grid.lo()) / (rows - 1) as f64;
    let vals = (0..rows)
        .flat_map(|r| std::iter::repeat_n(grid.lo() + step * r as f64, width))
        .collect();
    Tensor::new(vec![rows, width], vals)
}

fn node(layer: usize, unit: usize) -> String {
    format!("l{layer}_{unit}")
}

fn max_importance(report: &PruneReport) -> f64 {
    report
        .layers
        .iter()
        .flat_map(|l| l.importance.iter().flatten())
        .fold(0.0f64, |m, v| m.max(*v))
}

/// Graphviz text for `net`: one node per unit, one edge per kept
/// connection, pen width proportional to importance.
pub fn to_dot(title: &str, net: &KanNetwork, report: &PruneReport) -> String {
    let widths = net.widths();
    let top = max_importance(report).max(f64::MIN_POSITIVE);
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", title.replace('"', "'"));
    out.push_str("  rankdir=LR;\n  node [shape=circle, fontsize=10];\n");
    for (l, w) in widths.iter().enumerate() {
        let _ = writeln!(out, "  subgraph layer{l} {{\n    rank=same;");
        for u in 0..*w {
            let _ = writeln!(out, "    {} [label=\"{u}\"];", node(l, u));
        }
        out.push_str("  }\n");
    }
    for (l, lp) in report.layers.iter().enumerate() {
        let layer_max = lp
            .importance
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(*v));
        for (q, row) in lp.importance.iter().enumerate() {
            for (p, imp) in row.iter().enumerate() {
                if !keeps_edge(*imp, layer_max, report.threshold) {
                    continue;
                }
                let _ = writeln!(
                    out,
                    "  {} -> {} [penwidth={:.3}, label=\"{:.4}\"];",
                    node(l, p),
                    node(l + 1, q),
                    0.25 + 4.0 * imp / top,
                    imp
                );
            }
        }
    }
    out.push_str("}\n");
    out
}

/// Standalone SVG: units in columns, kept edges as lines whose width
/// follows importance, and a small plot of each kept φ at the edge midpoint.
pub fn to_svg(title: &str, net: &KanNetwork, report: &PruneReport) -> String {
    let widths = net.widths();
    let tallest = *widths.iter().max().unwrap_or(&1);
    let (col_gap, row_gap, margin) = (220.0, 60.0, 40.0);
    let width = margin * 2.0 + col_gap * (widths.len() - 1) as f64;
    let height = margin * 2.0 + row_gap * (tallest.max(1) - 1) as f64 + 30.0;
    let pos = |l: usize, u: usize| {
        let offset = (tallest - widths[l]) as f64 * row_gap / 2.0;
        (
            margin + col_gap * l as f64,
            margin + 30.0 + offset + row_gap * u as f64,
        )
    };
    let top = max_importance(report).max(f64::MIN_POSITIVE);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(
        out,
        "<text x=\"{margin}\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">{}</text>",
        escape(title)
    );
    for (l, (layer, lp)) in net.layers.iter().zip(&report.layers).enumerate() {
        let layer_max = lp
            .importance
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(*v));
        let (lo, hi) = (layer.grid.lo(), layer.grid.hi());
        for (q, row) in lp.importance.iter().enumerate() {
            for (p, imp) in row.iter().enumerate() {
                if !keeps_edge(*imp, layer_max, report.threshold) {
                    continue;
                }
                let (x1, y1) = pos(l, p);
                let (x2, y2) = pos(l + 1, q);
                let _ = writeln!(
                    out,
                    "<line x1=\"{x1:.1}\" y1=\"{y1:.1}\" x2=\"{x2:.1}\" y2=\"{y2:.1}\" stroke=\"#4060a0\" stroke-opacity=\"0.7\" stroke-width=\"{:.2}\"/>",
                    0.3 + 5.0 * imp / top
                );
                let curve: Vec<(f64, f64)> = (0..CURVE_POINTS)
                    .map(|i| {
                        let x = lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64;
                        (x, layer.edge_value(q, p, x))
                    })
                    .collect();
                let span = curve
                    .iter()
                    .fold(0.0f64, |m, (_, y)| m.max(y.abs()))
                    .max(1e-12);
                let (cx, cy) = ((x1 + x2) / 2.0, (y1 + y2) / 2.0);
                let points: Vec<String> = curve
                    .iter()
                    .enumerate()
                    .map(|(i, (_, y))| {
                        let px = cx - 16.0 + 32.0 * i as f64 / (CURVE_POINTS - 1) as f64;
                        format!("{px:.1},{:.1}", cy - 8.0 * y / span)
                    })
                    .collect();
                let _ = writeln!(
                    out,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"#c04020\" stroke-width=\"1\"/>",
                    points.join(" ")
                );
            }
        }
    }
    for (l, w) in widths.iter().enumerate() {
        for u in 0..*w {
            let (x, y) = pos(l, u);
            let _ = writeln!(
                out,
                "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"7\" fill=\"white\" stroke=\"black\"/>"
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders the named KAN after measuring edge importance on `sample`.
pub fn render(
    model: &DiagnosisModel,
    name: &str,
    sample: &Tensor,
    threshold: f64,
    format: Format,
) -> Result<(String, PruneReport)> {
    let net = model.kan(name)?;
    let (_, report) = prune(net, sample, threshold)?;
    let title = format!("{} {name}", model.variant());
    let text = match format {
        Format::Dot => to_dot(&title, net, &report),
        Format::Svg => to_svg(&title, net, &report),
    };
    Ok((text, report))
}
