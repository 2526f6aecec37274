//! Spot-level expression maps rendered as SVG.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OverlayError {
    #[error("no spots to draw")]
    Empty,
    #[error("{0} coordinates but {1} values")]
    LengthMismatch(usize, usize),
    #[error("non-finite value at spot {0}")]
    NonFinite(usize),
}

/// Linear two-color ramp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColorRamp {
    pub low: [u8; 3],
    pub high: [u8; 3],
}

impl Default for ColorRamp {
    fn default() -> Self {
        Self {
            low: [68, 1, 84],
            high: [253, 231, 37],
        }
    }
}

impl ColorRamp {
    /// Color at `t ∈ [0, 1]`.
    pub fn at(&self, t: f64) -> [u8; 3] {
        let t = t.clamp(0.0, 1.0);
        std::array::from_fn(|i| {
            let (a, b) = (f64::from(self.low[i]), f64::from(self.high[i]));
            (a + (b - a) * t).round() as u8
        })
    }

    /// Maps `value` from `[min, max]`; a degenerate range maps to the midpoint.
    pub fn map(&self, value: f64, min: f64, max: f64) -> [u8; 3] {
        if max > min {
            self.at((value - min) / (max - min))
        } else {
            self.at(0.5)
        }
    }
}

fn hex([r, g, b]: [u8; 3]) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn spot_radius(points: &[(f64, f64)]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            if d > 0.0 && d < best {
                best = d;
            }
        }
    }
    if best.is_finite() {
        0.45 * best
    } else {
        8.0
    }
}

/// One filled circle per spot at its `(x, y)`, colored by `values`, plus a
/// legend with the value range.
pub fn spot_overlay(
    points: &[(f64, f64)],
    values: &[f64],
    ramp: &ColorRamp,
    title: &str,
) -> Result<String, OverlayError> {
    if points.is_empty() {
        return Err(OverlayError::Empty);
    }
    if points.len() != values.len() {
        return Err(OverlayError::LengthMismatch(points.len(), values.len()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(OverlayError::NonFinite(i));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let radius = spot_radius(points);
    let margin = 2.0 * radius;
    let x0 = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) - margin;
    let y0 = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) - margin;
    let x1 = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) + margin;
    let y1 = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) + margin;
    let width = x1 - x0;
    let legend_h = (0.12 * width).max(6.0 * radius);
    let height = y1 - y0 + legend_h;
    let font = (0.35 * legend_h).max(1.0);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{x0:.2} {y0:.2} {width:.2} {height:.2}" width="{width:.0}" height="{height:.0}">"#
    )
    .unwrap();
    writeln!(svg, "<title>{}</title>", escape(title)).unwrap();
    writeln!(
        svg,
        r#"<defs><linearGradient id="ramp" x1="0" x2="1" y1="0" y2="0"><stop offset="0" stop-color="{}"/><stop offset="1" stop-color="{}"/></linearGradient></defs>"#,
        hex(ramp.low),
        hex(ramp.high)
    )
    .unwrap();
    writeln!(svg, "<g id=\"spots\">").unwrap();
    for ((x, y), v) in points.iter().zip(values) {
        writeln!(
            svg,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="{radius:.2}" fill="{}"/>"#,
            hex(ramp.map(*v, min, max))
        )
        .unwrap();
    }
    writeln!(svg, "</g>").unwrap();

    let ly = y1 + 0.15 * legend_h;
    let lw = 0.5 * width;
    let lx = x0 + 0.25 * width;
    writeln!(
        svg,
        r#"<g id="legend"><rect x="{lx:.2}" y="{ly:.2}" width="{lw:.2}" height="{:.2}" fill="url(#ramp)"/>"#,
        0.3 * legend_h
    )
    .unwrap();
    let ty = ly + 0.3 * legend_h + font;
    writeln!(
        svg,
        r#"<text x="{lx:.2}" y="{ty:.2}" font-size="{font:.2}" text-anchor="middle">{min:.4}</text>"#
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="{:.2}" y="{ty:.2}" font-size="{font:.2}" text-anchor="middle">{max:.4}</text></g>"#,
        lx + lw
    )
    .unwrap();
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// File name of the overlay for one slide and gene.
pub fn overlay_file_name(slide: &str, gene: &str) -> String {
    format!("overlay_{slide}_{gene}.svg")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fills(svg: &str) -> Vec<String> {
        svg.lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| {
                let i = l.find("fill=\"").unwrap() + 6;
                l[i..i + 7].to_string()
            })
            .collect()
    }

    #[test]
    fn single_spot_uses_midpoint() {
        let ramp = ColorRamp::default();
        let svg = spot_overlay(&[(10.0, 20.0)], &[3.5], &ramp, "g").unwrap();
        assert_eq!(fills(&svg), vec![hex(ramp.at(0.5))]);
        assert!(svg.contains(r#"cx="10.00" cy="20.00""#));
    }

    #[test]
    fn extremes_get_endpoint_colors() {
        let ramp = ColorRamp::default();
        let svg = spot_overlay(&[(0.0, 0.0), (10.0, 0.0)], &[0.0, 1.0], &ramp, "g").unwrap();
        assert_eq!(
            fills(&svg),
            vec!["#440154".to_string(), "#fde725".to_string()]
        );
        assert!(svg.contains(">0.0000<") && svg.contains(">1.0000<"));
    }

    #[test]
    fn deterministic_and_validated() {
        let pts = [(0.0, 0.0), (5.0, 5.0), (9.0, 1.0)];
        let vals = [0.3, -1.0, 2.0];
        let a = spot_overlay(&pts, &vals, &ColorRamp::default(), "x<y").unwrap();
        let b = spot_overlay(&pts, &vals, &ColorRamp::default(), "x<y").unwrap();
        assert_eq!(a, b);
        assert!(a.contains("x&lt;y"));
        assert_eq!(
            spot_overlay(&[], &[], &ColorRamp::default(), ""),
            Err(OverlayError::Empty)
        );
        assert!(spot_overlay(&pts, &[1.0, f64::NAN, 0.0], &ColorRamp::default(), "").is_err());
        assert_eq!(overlay_file_name("S1", "GNAS"), "overlay_S1_GNAS.svg");
    }
}
