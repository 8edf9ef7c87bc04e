//! Deterministic SVG heatmaps of transfer matrices.
//!
//! Rows are targets and columns donors. Values are clipped to
//! `[scale_min, scale_max]` and mapped linearly through a three-anchor
//! diverging colormap whose middle anchor sits at the centre of the scale
//! (0 for the default symmetric `[-1.5, 1.5]`). Invalid rows are hatched.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transfer::Cltm;

#[derive(Debug, Error, PartialEq)]
pub enum HeatmapError {
    #[error("empty matrix")]
    Empty,
    #[error("no valid rows to render")]
    NoValidRows,
    #[error("scale_min ({0}) must be below scale_max ({1})")]
    BadScale(f64, f64),
    #[error("invalid color {0:?} (expected #RRGGBB)")]
    BadColor(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rgb(pub u8, pub u8, pub u8);

impl Rgb {
    pub fn parse(s: &str) -> Result<Self, HeatmapError> {
        let bad = || HeatmapError::BadColor(s.to_string());
        let hex = s.strip_prefix('#').filter(|h| h.len() == 6 && h.is_ascii()).ok_or_else(bad)?;
        let channel = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|_| bad());
        Ok(Rgb(channel(0)?, channel(2)?, channel(4)?))
    }

    fn lerp(self, other: Rgb, t: f64) -> Rgb {
        let mix = |a: u8, b: u8| (f64::from(a) + (f64::from(b) - f64::from(a)) * t).round() as u8;
        Rgb(mix(self.0, other.0), mix(self.1, other.1), mix(self.2, other.2))
    }
}

impl fmt::Display for Rgb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{:02X}{:02X}{:02X}", self.0, self.1, self.2)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapSpec {
    pub scale_min: f64,
    pub scale_max: f64,
    pub negative: Rgb,
    pub midpoint: Rgb,
    pub positive: Rgb,
    pub cell_px: u32,
    pub font_px: u32,
    pub annotate: bool,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        Self {
            scale_min: -1.5,
            scale_max: 1.5,
            negative: Rgb(0x21, 0x66, 0xAC),
            midpoint: Rgb(0xFF, 0xFF, 0xFF),
            positive: Rgb(0xB2, 0x18, 0x2B),
            cell_px: 32,
            font_px: 11,
            annotate: false,
        }
    }
}

impl HeatmapSpec {
    pub fn color(&self, value: f64) -> Rgb {
        let t = ((value - self.scale_min) / (self.scale_max - self.scale_min)).clamp(0.0, 1.0);
        if t <= 0.5 {
            self.negative.lerp(self.midpoint, t * 2.0)
        } else {
            self.midpoint.lerp(self.positive, (t - 0.5) * 2.0)
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_heatmap(cltm: &Cltm, spec: &HeatmapSpec) -> Result<String, HeatmapError> {
    let n = cltm.n();
    if n == 0 {
        return Err(HeatmapError::Empty);
    }
    if cltm.valid_indices().is_empty() {
        return Err(HeatmapError::NoValidRows);
    }
    if !(spec.scale_min < spec.scale_max) {
        return Err(HeatmapError::BadScale(spec.scale_min, spec.scale_max));
    }
    let cell = spec.cell_px;
    let font = spec.font_px;
    let longest = cltm.languages.iter().map(|l| l.code.chars().count()).max().unwrap_or(1) as u32;
    let margin = font * longest.max(2) * 2 / 3 + 12;
    let grid = cell * n as u32;
    let legend_w = 16;
    let width = margin + grid + 24 + legend_w + 48;
    let height = margin + grid + 16;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="{font}">"#
    );
    let _ = writeln!(svg, "<defs>");
    let _ = writeln!(
        svg,
        r##"<pattern id="hatch" patternUnits="userSpaceOnUse" width="6" height="6" patternTransform="rotate(45)"><rect width="6" height="6" fill="#EEEEEE"/><line x1="0" y1="0" x2="0" y2="6" stroke="#888888" stroke-width="2"/></pattern>"##
    );
    let _ = writeln!(svg, r#"<linearGradient id="scale" x1="0" y1="1" x2="0" y2="0">"#);
    for (offset, color) in [(0, spec.negative), (50, spec.midpoint), (100, spec.positive)] {
        let _ = writeln!(svg, r#"<stop offset="{offset}%" stop-color="{color}"/>"#);
    }
    let _ = writeln!(svg, "</linearGradient>\n</defs>");
    let _ = writeln!(svg, r##"<rect width="{width}" height="{height}" fill="#FFFFFF"/>"##);

    for (j, lang) in cltm.languages.iter().enumerate() {
        let x = margin + cell * j as u32 + cell / 2;
        let y = margin - 6;
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" text-anchor="start" transform="rotate(-60 {x} {y})">{}</text>"#,
            escape(&lang.code)
        );
    }
    for (i, lang) in cltm.languages.iter().enumerate() {
        let y = margin + cell * i as u32 + cell / 2 + font / 3;
        let _ = writeln!(svg, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, margin - 6, escape(&lang.code));
    }

    for i in 0..n {
        let y = margin + cell * i as u32;
        for j in 0..n {
            let x = margin + cell * j as u32;
            let value = cltm.entries[(i, j)];
            let fill = if cltm.row_valid[i] && value.is_finite() {
                spec.color(value).to_string()
            } else {
                "url(#hatch)".to_string()
            };
            let _ = writeln!(
                svg,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="#FFFFFF" stroke-width="1"/>"##
            );
            if spec.annotate && cltm.row_valid[i] && value.is_finite() {
                let _ = writeln!(
                    svg,
                    r#"<text x="{}" y="{}" text-anchor="middle" font-size="{}">{:.2}</text>"#,
                    x + cell / 2,
                    y + cell / 2 + font / 3,
                    font.saturating_sub(2).max(6),
                    value
                );
            }
        }
    }

    let lx = margin + grid + 24;
    let _ = writeln!(
        svg,
        r##"<rect x="{lx}" y="{margin}" width="{legend_w}" height="{grid}" fill="url(#scale)" stroke="#444444" stroke-width="0.5"/>"##
    );
    let mid = (spec.scale_min + spec.scale_max) / 2.0;
    for (value, y) in [(spec.scale_max, margin), (mid, margin + grid / 2), (spec.scale_min, margin + grid)] {
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{value:.2}</text>"#, lx + legend_w + 4, y + font / 3);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
