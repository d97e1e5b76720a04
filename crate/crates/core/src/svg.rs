//! Static SVG scatter plots of generated samples against true contacts.

use crate::diffusion::SamplePointSet;
use crate::geom::Vec3;

/// 2D projection plane.
#[derive(Debug, Clone, Copy)]
pub enum Plane {
    Xy,
    Xz,
}

impl Plane {
    fn project(self, v: Vec3) -> (f64, f64) {
        match self {
            Plane::Xy => (v.x, v.y),
            Plane::Xz => (v.x, v.z),
        }
    }

    fn axis_labels(self) -> (&'static str, &'static str) {
        match self {
            Plane::Xy => ("x [m]", "y [m]"),
            Plane::Xz => ("x [m]", "z [m]"),
        }
    }
}

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;

/// Render samples (dots) and truths (crosses) projected onto a plane.
/// `extent` is the half-width of the plotted region in meters.
pub fn scatter_svg(
    samples: &SamplePointSet,
    truths: &[Vec3],
    plane: Plane,
    extent: f64,
    title: &str,
) -> String {
    let map = |p: (f64, f64)| -> (f64, f64) {
        let sx = MARGIN + (p.0 + extent) / (2.0 * extent) * (SIZE - 2.0 * MARGIN);
        let sy = SIZE - MARGIN - (p.1 + extent) / (2.0 * extent) * (SIZE - 2.0 * MARGIN);
        (sx, sy)
    };
    let mut body = String::new();
    body.push_str(&format!(
        r##"<rect x="{m}" y="{m}" width="{w}" height="{w}" fill="none" stroke="#444" stroke-width="1"/>"##,
        m = MARGIN,
        w = SIZE - 2.0 * MARGIN
    ));
    let (lx, ly) = plane.axis_labels();
    body.push_str(&format!(
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        SIZE - 10.0,
        escape(lx)
    ));
    body.push_str(&format!(
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        SIZE / 2.0,
        SIZE / 2.0,
        escape(ly)
    ));
    body.push_str(&format!(
        r#"<text x="{}" y="24" font-size="13" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        escape(title)
    ));
    for i in 0..samples.n_p() {
        let (x, y) = map(plane.project(samples.point(i)));
        if x.is_finite() && y.is_finite() {
            body.push_str(&format!(
                r##"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="#2a9d4e" fill-opacity="0.6"/>"##
            ));
        }
    }
    for t in truths {
        let (x, y) = map(plane.project(*t));
        body.push_str(&format!(
            r##"<path d="M {x0:.2} {y0:.2} L {x1:.2} {y1:.2} M {x0:.2} {y1:.2} L {x1:.2} {y0:.2}" stroke="#d62828" stroke-width="2" fill="none"/>"##,
            x0 = x - 5.0,
            y0 = y - 5.0,
            x1 = x + 5.0,
            y1 = y + 5.0,
        ));
    }
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">\n{body}\n</svg>\n",
        s = SIZE
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal well-formedness check used by tests: tags balance and the
/// document has a single svg root.
pub fn is_well_formed_xml(s: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = s;
    if let Some(decl_end) = rest.find("?>") {
        rest = &rest[decl_end + 2..];
    }
    while let Some(start) = rest.find('<') {
        let Some(end_rel) = rest[start..].find('>') else { return false };
        let tag = &rest[start + 1..start + end_rel];
        rest = &rest[start + end_rel + 1..];
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(open) if open == name => {}
                _ => return false,
            }
        } else if !tag.ends_with('/') {
            let name: String =
                tag.split_whitespace().next().unwrap_or("").to_string();
            if name.is_empty() {
                return false;
            }
            stack.push(name);
        }
    }
    stack.is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_is_well_formed() {
        let samples = SamplePointSet {
            points: vec![[0.1, 0.2, 0.0], [-0.3, 0.1, 0.05], [f64::NAN, 0.0, 0.0]],
        };
        let truths = vec![Vec3::new(0.15, 0.25, 0.0)];
        let svg = scatter_svg(&samples, &truths, Plane::Xy, 1.0, "window 3 <single>");
        assert!(is_well_formed_xml(&svg), "{svg}");
        assert!(svg.starts_with("<?xml"));
        assert!(svg.contains("circle"));
        assert!(svg.contains("&lt;single&gt;"));
    }

    #[test]
    fn well_formedness_checker_rejects_bad_xml() {
        assert!(!is_well_formed_xml("<svg><g></svg>"));
        assert!(!is_well_formed_xml("<svg>"));
        assert!(is_well_formed_xml("<svg><g/><g></g></svg>"));
    }
}
