//! Minimal static SVG rendering of the mean-square energy trajectory with a
//! three-standard-error confidence band and optional event markers.

use std::fmt::Write as _;

use crate::ensemble::EnsembleEstimate;
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

/// Renders `E||u(t)||^2` with its confidence band. `tau_ms` draws a vertical
/// detection marker, `tstar` the theoretical blow-up bound, when inside the
/// plotted window.
pub fn render_energy_plot(
    est: &EnsembleEstimate,
    tau_ms: Option<f64>,
    tstar: Option<f64>,
    title: &str,
) -> Result<String> {
    let pts: Vec<(f64, f64, f64)> = est
        .times
        .iter()
        .zip(est.v_mean.iter().zip(&est.v_se))
        .filter(|(_, (v, _))| v.is_finite())
        .map(|(&t, (&v, &se))| (t, v, se))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two finite points to plot".into(),
        ));
    }
    let t_min = pts.first().unwrap().0;
    let t_max = pts.last().unwrap().0;
    let y_max = pts
        .iter()
        .map(|&(_, v, se)| v + 3.0 * se)
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let y_min = 0.0;

    let px = |t: f64| MARGIN_L + (t - t_min) / (t_max - t_min) * (WIDTH - MARGIN_L - MARGIN_R);
    let py = |v: f64| HEIGHT - MARGIN_B - (v - y_min) / (y_max - y_min) * (HEIGHT - MARGIN_T - MARGIN_B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-family="monospace" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        xml_escape(title)
    );

    // axes
    let x0 = MARGIN_L;
    let y0 = HEIGHT - MARGIN_B;
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{}" y2="{y0}" stroke="black"/>"#,
        WIDTH - MARGIN_R
    );
    let _ = writeln!(
        s,
        r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{MARGIN_T}" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = t_min + (t_max - t_min) * i as f64 / 4.0;
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="11" text-anchor="middle">{:.3}</text>"#,
            px(t),
            y0 + 18.0,
            t
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="11" text-anchor="end">{:.3e}</text>"#,
            x0 - 6.0,
            py(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="monospace" font-size="12" text-anchor="middle">t</text>"#,
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        HEIGHT - 12.0
    );

    // confidence band polygon
    let mut band = String::from("M");
    for &(t, v, se) in &pts {
        let _ = write!(band, " {:.2},{:.2}", px(t), py(v + 3.0 * se));
    }
    for &(t, v, se) in pts.iter().rev() {
        let _ = write!(band, " L {:.2},{:.2}", px(t), py((v - 3.0 * se).max(0.0)));
    }
    band.push_str(" Z");
    let _ = writeln!(
        s,
        r##"<path d="{band}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>"##
    );

    // mean polyline
    let mut line = String::new();
    for &(t, v, _) in &pts {
        let _ = write!(line, "{:.2},{:.2} ", px(t), py(v));
    }
    let _ = writeln!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#08519c" stroke-width="1.5"/>"##,
        line.trim_end()
    );

    // markers
    for (value, color, label) in [
        (tau_ms, "#d62728", "tau_ms"),
        (tstar, "#2ca02c", "t*"),
    ] {
        if let Some(t) = value {
            if t >= t_min && t <= t_max {
                let x = px(t);
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{MARGIN_T}" stroke="{color}" stroke-dasharray="4 3"/>"#
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" font-family="monospace" font-size="11" fill="{color}">{label}</text>"#,
                    x + 4.0,
                    MARGIN_T + 12.0
                );
            }
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
