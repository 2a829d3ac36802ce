//! SVG drawings of a prefractal with an optional per-vertex overlay.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::graph::{PrefractalGraph, VertexId};
use crate::lattice::LatticeCoord;
use crate::rotor::RotorConfig;

/// Fill colours for heights 0..=3; unstable heights use the last entry.
const HEIGHT_PALETTE: [&str; 5] = ["#f7f7f7", "#9ecae1", "#3182bd", "#08306b", "#d7301f"];

#[derive(Debug, Clone, Copy)]
pub enum Overlay<'a> {
    None,
    /// An arrow from each vertex towards its current rotor target.
    Rotors(&'a RotorConfig),
    Heights(&'a [u32]),
    /// Grey level proportional to `log(1 + u)`.
    Odometer(&'a [f64]),
}

#[derive(Debug, Clone)]
pub struct RenderOptions {
    /// Pixels per lattice unit.
    pub scale: f64,
    pub margin: f64,
    pub vertex_radius: f64,
    /// Vertices drawn with a red outline.
    pub highlight: Vec<LatticeCoord>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            scale: 40.0,
            margin: 20.0,
            vertex_radius: 5.0,
            highlight: Vec::new(),
        }
    }
}

fn overlay_len(overlay: &Overlay<'_>) -> Option<usize> {
    match overlay {
        Overlay::None => None,
        Overlay::Rotors(r) => Some(r.len()),
        Overlay::Heights(h) => Some(h.len()),
        Overlay::Odometer(u) => Some(u.len()),
    }
}

pub fn render_svg(graph: &PrefractalGraph, overlay: Overlay<'_>, opts: &RenderOptions) -> Result<String> {
    if let Some(got) = overlay_len(&overlay) {
        if got != graph.len() {
            return Err(Error::OverlayMismatch {
                expected: graph.len(),
                got,
            });
        }
    }
    let pts: Vec<(f64, f64)> = graph.coords().iter().map(|c| c.to_euclidean()).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let width = (x1 - x0) * opts.scale + 2.0 * opts.margin;
    let height = (y1 - y0) * opts.scale + 2.0 * opts.margin;
    // svg y grows downward
    let px = |(x, y): (f64, f64)| ((x - x0) * opts.scale + opts.margin, (y1 - y) * opts.scale + opts.margin);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2}" height="{height:.2}" viewBox="0 0 {width:.2} {height:.2}">"#
    );
    let _ = writeln!(
        s,
        "<defs><marker id=\"arrow\" viewBox=\"0 0 10 10\" refX=\"9\" refY=\"5\" markerWidth=\"6\" markerHeight=\"6\" orient=\"auto\"><path d=\"M0,0 L10,5 L0,10 z\" fill=\"#c0392b\"/></marker></defs>"
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);

    let _ = writeln!(s, r##"<g stroke="#888888" stroke-width="1.5">"##);
    for (i, j) in graph.edges() {
        let (ax, ay) = px(pts[i as usize]);
        let (bx, by) = px(pts[j as usize]);
        let _ = writeln!(s, r#"<line x1="{ax:.2}" y1="{ay:.2}" x2="{bx:.2}" y2="{by:.2}"/>"#);
    }
    let _ = writeln!(s, "</g>");

    let odo_max = match overlay {
        Overlay::Odometer(u) => u.iter().copied().fold(0.0, f64::max),
        _ => 0.0,
    };
    let _ = writeln!(s, r##"<g stroke="#333333" stroke-width="1">"##);
    for (i, &p) in pts.iter().enumerate() {
        let (cx, cy) = px(p);
        let fill = match overlay {
            Overlay::Heights(h) => HEIGHT_PALETTE[(h[i] as usize).min(HEIGHT_PALETTE.len() - 1)].to_string(),
            Overlay::Odometer(u) => {
                let t = if odo_max > 0.0 { u[i].max(0.0).ln_1p() / odo_max.ln_1p() } else { 0.0 };
                let g = (255.0 * (1.0 - t)).round() as u8;
                format!("#{g:02x}{g:02x}{g:02x}")
            }
            _ => "#ffffff".to_string(),
        };
        let c = graph.coord(i as VertexId);
        let stroke = if opts.highlight.contains(&c) {
            r##" stroke="#e31a1c" stroke-width="2.5""##
        } else {
            ""
        };
        let _ = writeln!(
            s,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{:.2}" fill="{fill}"{stroke}><title>{c}</title></circle>"#,
            opts.vertex_radius
        );
    }
    let _ = writeln!(s, "</g>");

    if let Overlay::Rotors(rotors) = overlay {
        let _ = writeln!(s, r##"<g stroke="#c0392b" stroke-width="2" marker-end="url(#arrow)">"##);
        for i in 0..graph.len() {
            let Some(r) = rotors.get(i as VertexId) else { continue };
            let slot = graph.slots(i as VertexId)[r as usize];
            let (ax, ay) = px(pts[i]);
            let (bx, by) = px(slot.coord.to_euclidean());
            let (tx, ty) = (ax + 0.45 * (bx - ax), ay + 0.45 * (by - ay));
            let _ = writeln!(s, r#"<line x1="{ax:.2}" y1="{ay:.2}" x2="{tx:.2}" y2="{ty:.2}"/>"#);
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// The rotor picture of a level-2 gasket with every cut-set corner rotor in
/// its reflecting position and all other rotors at index 0.
pub fn reflecting_example(level: u32) -> Result<(PrefractalGraph, RotorConfig)> {
    let g = PrefractalGraph::build(level, crate::graph::Half::Both)?;
    let mut rotors = RotorConfig::constant(&g, 0);
    for (v, r) in crate::rotor::corner_rotors(level, true) {
        rotors.set(g.require(v)?, r);
    }
    Ok((g, rotors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Half;

    #[test]
    fn one_circle_per_vertex() {
        let g = PrefractalGraph::build(2, Half::Plus).unwrap();
        let svg = render_svg(&g, Overlay::None, &RenderOptions::default()).unwrap();
        assert_eq!(svg.matches("<circle").count(), g.len());
        assert_eq!(svg.matches("<line").count(), g.edge_count());
    }

    #[test]
    fn overlay_length_is_checked() {
        let g = PrefractalGraph::build(1, Half::Plus).unwrap();
        let h = vec![0u32; g.len() - 1];
        assert!(matches!(
            render_svg(&g, Overlay::Heights(&h), &RenderOptions::default()),
            Err(Error::OverlayMismatch { .. })
        ));
    }

    #[test]
    fn rotor_render_is_stable() {
        let (g, r) = reflecting_example(2).unwrap();
        let a = render_svg(&g, Overlay::Rotors(&r), &RenderOptions::default()).unwrap();
        let b = render_svg(&g, Overlay::Rotors(&r), &RenderOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.matches("marker-end").count(), 1);
    }
}
