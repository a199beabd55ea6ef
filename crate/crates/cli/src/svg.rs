//! Static SVG figures: stacked importance bars, per-class summary dot plots and
//! single-instance force plots. Output depends only on the inputs, so identical data
//! renders to identical bytes.

use std::fmt::Write as _;

use sevnet::attribution::ForceData;

const BLUE: (u8, u8, u8) = (0x1f, 0x77, 0xb4);
const RED: (u8, u8, u8) = (0xd6, 0x27, 0x28);
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];
const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(ch),
        }
    }
    out
}

/// Linear blue-to-red ramp; `t` is clamped to `[0, 1]`.
pub fn value_colour(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(BLUE.0, RED.0), mix(BLUE.1, RED.1), mix(BLUE.2, RED.2))
}

fn open(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>",
        width / 2.0,
        escape(title)
    );
}

fn label_width(names: &[String]) -> f64 {
    names.iter().map(|n| n.chars().count()).max().unwrap_or(0) as f64 * 6.5 + 16.0
}

/// Horizontal bars of mean |φ| per feature, one stacked segment per class, features
/// ordered by total height. `mean_abs[class][feature]`.
pub fn importance_bars(feature_names: &[String], class_names: &[String], mean_abs: &[Vec<f64>]) -> String {
    let n = feature_names.len();
    let totals: Vec<f64> = (0..n).map(|j| mean_abs.iter().map(|c| c[j]).sum()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]).then(a.cmp(&b)));
    let max_total = totals.iter().copied().fold(0.0, f64::max);

    let left = label_width(feature_names);
    let plot_w = 420.0;
    let row_h = 18.0;
    let top = 34.0;
    let legend_h = 16.0 * class_names.len() as f64 + 10.0;
    let height = top + row_h * n as f64 + 40.0 + legend_h;
    let width = left + plot_w + 30.0;
    let scale = if max_total > 0.0 { plot_w / max_total } else { 0.0 };

    let mut out = String::new();
    open(&mut out, width, height, "Mean |SHAP value| per feature");
    for (row, &j) in order.iter().enumerate() {
        let y = top + row_h * row as f64;
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>",
            left - 6.0,
            y + row_h * 0.7,
            escape(&feature_names[j])
        );
        let mut x = left;
        for (c, class) in mean_abs.iter().enumerate() {
            let w = class[j] * scale;
            let _ = writeln!(
                out,
                "<rect class=\"bar\" x=\"{x:.2}\" y=\"{:.1}\" width=\"{w:.2}\" height=\"{:.1}\" fill=\"{}\"><title>{}: {:.6}</title></rect>",
                y + 2.0,
                row_h - 4.0,
                PALETTE[c % PALETTE.len()],
                escape(&class_names[c]),
                class[j]
            );
            x += w;
        }
    }
    let axis_y = top + row_h * n as f64 + 4.0;
    let _ = writeln!(
        out,
        "<line x1=\"{left:.1}\" y1=\"{axis_y:.1}\" x2=\"{:.1}\" y2=\"{axis_y:.1}\" stroke=\"#333333\"/>",
        left + plot_w
    );
    let _ = writeln!(
        out,
        "<text x=\"{left:.1}\" y=\"{:.1}\" {FONT}>0</text><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{max_total:.4}</text>",
        axis_y + 14.0,
        left + plot_w,
        axis_y + 14.0
    );
    for (c, name) in class_names.iter().enumerate() {
        let y = axis_y + 30.0 + 16.0 * c as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{left:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{y:.1}\" {FONT}>{}</text>",
            y - 9.0,
            PALETTE[c % PALETTE.len()],
            left + 16.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One dot per (instance, feature): x is φ, colour is the feature value scaled over
/// its observed range. `phi[instance][feature]`, `values[instance][feature]`.
pub fn summary_dots(title: &str, feature_names: &[String], phi: &[Vec<f64>], values: &[Vec<f64>]) -> String {
    let n = feature_names.len();
    let mean_abs: Vec<f64> = (0..n)
        .map(|j| phi.iter().map(|r| r[j].abs()).sum::<f64>() / phi.len().max(1) as f64)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    let lo = phi.iter().flatten().copied().fold(0.0, f64::min);
    let hi = phi.iter().flatten().copied().fold(0.0, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let left = label_width(feature_names);
    let plot_w = 420.0;
    let row_h = 20.0;
    let top = 34.0;
    let height = top + row_h * n as f64 + 70.0;
    let width = left + plot_w + 40.0;
    let x_of = |v: f64| left + (v - lo) / span * plot_w;

    let mut out = String::new();
    open(&mut out, width, height, title);
    let zero = x_of(0.0);
    let bottom = top + row_h * n as f64;
    let _ = writeln!(
        out,
        "<line x1=\"{zero:.2}\" y1=\"{top:.1}\" x2=\"{zero:.2}\" y2=\"{bottom:.1}\" stroke=\"#999999\"/>"
    );
    for (row, &j) in order.iter().enumerate() {
        let y = top + row_h * (row as f64 + 0.5);
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{}</text>",
            left - 6.0,
            y + 4.0,
            escape(&feature_names[j])
        );
        let vmin = values.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let vmax = values.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        for (i, (p, v)) in phi.iter().zip(values).enumerate() {
            let t = if vmax > vmin { (v[j] - vmin) / (vmax - vmin) } else { 0.5 };
            let jitter = ((i * 37 % 11) as f64 - 5.0) * 1.2;
            let _ = writeln!(
                out,
                "<circle class=\"dot\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\" fill-opacity=\"0.8\"/>",
                x_of(p[j]),
                y + jitter,
                value_colour(t)
            );
        }
    }
    let _ = writeln!(
        out,
        "<line x1=\"{left:.1}\" y1=\"{bottom:.1}\" x2=\"{:.1}\" y2=\"{bottom:.1}\" stroke=\"#333333\"/>",
        left + plot_w
    );
    let _ = writeln!(
        out,
        "<text x=\"{left:.1}\" y=\"{:.1}\" {FONT}>{lo:.4}</text><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>{hi:.4}</text>",
        bottom + 14.0,
        left + plot_w,
        bottom + 14.0
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" {FONT}>SHAP value</text>",
        left + plot_w / 2.0,
        bottom + 28.0
    );
    let ly = bottom + 40.0;
    for k in 0..=10 {
        let _ = writeln!(
            out,
            "<rect x=\"{:.1}\" y=\"{ly:.1}\" width=\"12\" height=\"8\" fill=\"{}\"/>",
            left + 12.0 * k as f64,
            value_colour(k as f64 / 10.0)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{left:.1}\" y=\"{:.1}\" {FONT}>Low</text><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" {FONT}>High feature value</text>",
        ly + 20.0,
        left + 132.0 + 100.0,
        ly + 20.0
    );
    out.push_str("</svg>\n");
    out
}

/// Arrows from the base value to f(x): positive contributions in red pushing right,
/// negative ones in blue pushing left. The labels carry full precision.
pub fn force_plot(title: &str, force: &ForceData) -> String {
    let pos: Vec<_> = force.contributions.iter().filter(|c| c.phi > 0.0).collect();
    let neg: Vec<_> = force.contributions.iter().filter(|c| c.phi < 0.0).collect();
    let up: f64 = pos.iter().map(|c| c.phi).sum();
    let down: f64 = neg.iter().map(|c| c.phi).sum();
    let lo = force.base_value.min(force.base_value + down).min(force.fx);
    let hi = force.base_value.max(force.base_value + up).max(force.fx);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let left = 40.0;
    let plot_w = 640.0;
    let n_rows = force.contributions.len();
    let height = 150.0 + 14.0 * n_rows as f64;
    let width = left * 2.0 + plot_w;
    let x_of = |v: f64| left + (v - lo) / span * plot_w;

    let mut out = String::new();
    open(&mut out, width, height, title);
    let bar_y = 70.0;
    // Positive pushes stack rightwards from the base; negative pushes then run back.
    let mut cursor = force.base_value;
    for (c, colour, dir) in pos
        .iter()
        .map(|c| (c, RED, 1.0))
        .chain(neg.iter().map(|c| (c, BLUE, -1.0)))
    {
        let (a, b) = (x_of(cursor), x_of(cursor + c.phi));
        let tip = 5.0f64.min((b - a).abs());
        let _ = writeln!(
            out,
            "<polygon class=\"arrow\" points=\"{a:.2},{:.1} {:.2},{:.1} {b:.2},{bar_y:.1} {:.2},{:.1} {a:.2},{:.1}\" fill=\"#{:02x}{:02x}{:02x}\" stroke=\"#ffffff\" stroke-width=\"0.5\"><title>{} = {}: {}</title></polygon>",
            bar_y - 9.0,
            b - dir * tip,
            bar_y - 9.0,
            b - dir * tip,
            bar_y + 9.0,
            bar_y + 9.0,
            colour.0,
            colour.1,
            colour.2,
            escape(&c.feature),
            c.value,
            c.phi
        );
        cursor += c.phi;
    }
    let bx = x_of(force.base_value);
    let fx = x_of(force.fx);
    let _ = writeln!(
        out,
        "<line x1=\"{bx:.2}\" y1=\"40\" x2=\"{bx:.2}\" y2=\"90\" stroke=\"#555555\" stroke-dasharray=\"3,2\"/>"
    );
    let _ = writeln!(
        out,
        "<text class=\"base-value\" x=\"{bx:.2}\" y=\"104\" text-anchor=\"middle\" {FONT}>base value = {}</text>",
        force.base_value
    );
    let _ = writeln!(
        out,
        "<line x1=\"{fx:.2}\" y1=\"40\" x2=\"{fx:.2}\" y2=\"90\" stroke=\"#000000\" stroke-width=\"1.5\"/>"
    );
    let _ = writeln!(
        out,
        "<text class=\"fx\" x=\"{fx:.2}\" y=\"36\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" font-weight=\"bold\">f(x) = {}</text>",
        force.fx
    );
    for (i, c) in force.contributions.iter().enumerate() {
        let colour = if c.phi > 0.0 { RED } else { BLUE };
        let _ = writeln!(
            out,
            "<text class=\"contribution\" x=\"{left:.1}\" y=\"{:.1}\" fill=\"#{:02x}{:02x}{:02x}\" {FONT}>{} = {}: {:+}</text>",
            130.0 + 14.0 * i as f64,
            colour.0,
            colour.1,
            colour.2,
            escape(&c.feature),
            c.value,
            c.phi
        );
    }
    out.push_str("</svg>\n");
    out
}
