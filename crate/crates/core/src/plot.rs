//! Deterministic SVG rendering of a scene with its predictions and goals.
//!
//! Layers, bottom to top: feasible cells, motion-range circle, goal points,
//! past tracks per agent role, ground-truth future, the three most confident
//! modes with confidence labels, and current-position markers.

use crate::features::GoalSet;
use crate::model::PredictionSet;
use crate::scene::{Point2, Role, SceneBundle};

const WIDTH_PX: f64 = 800.0;
const MODES_SHOWN: usize = 3;

const STYLE: &str = "\
.cell{fill:#e8e8e8;stroke:none}\
.range{fill:none;stroke:#888;stroke-dasharray:4 3}\
.goal{fill:#2a9d8f}\
.past{fill:none;stroke-width:2}\
.past-target{stroke:#1d3557}\
.past-ego{stroke:#e76f51}\
.past-other{stroke:#8d99ae}\
.gt{fill:none;stroke:#2b9348;stroke-width:2;stroke-dasharray:6 3}\
.mode{fill:none;stroke:#d62828;stroke-width:2}\
.conf{font:11px sans-serif;fill:#d62828}\
.marker{fill:#000}";

struct View {
    min: Point2,
    max_y: f64,
    scale: f64,
}

impl View {
    fn x(&self, p: Point2) -> f64 {
        (p.x - self.min.x) * self.scale
    }

    fn y(&self, p: Point2) -> f64 {
        (self.max_y - p.y) * self.scale
    }

    fn points(&self, pts: &[Point2]) -> String {
        pts.iter()
            .map(|&p| format!("{:.2},{:.2}", self.x(p), self.y(p)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn role_class(role: Role) -> &'static str {
    match role {
        Role::Target => "past-target",
        Role::Ego => "past-ego",
        Role::Other => "past-other",
    }
}

/// Renders `bundle` with optional predictions and goal set.
pub fn render_svg(bundle: &SceneBundle, pred: Option<&PredictionSet>, goals: Option<&GoalSet>) -> String {
    let grid = &bundle.grid;
    let res = crate::scene::Occupancy::resolution(grid);
    let min = grid.origin();
    let ext = Point2::new(grid.width() as f64 * res, grid.height() as f64 * res);
    let view = View {
        min,
        max_y: min.y + ext.y,
        scale: WIDTH_PX / ext.x,
    };
    let (w, h) = (WIDTH_PX, ext.y * view.scale);
    let mut s = String::new();
    let mut put = |line: String| {
        s.push_str(&line);
        s.push('\n');
    };
    put(format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.2} {h:.2}\">"
    ));
    put(format!("<style>{STYLE}</style>"));
    put(format!("<title>{}</title>", bundle.scene.scene_id()));

    put("<g id=\"feasible\">".into());
    let cell = res * view.scale;
    for j in 0..grid.height() {
        let mut i = 0;
        while i < grid.width() {
            if !grid.get(i, j) {
                i += 1;
                continue;
            }
            let start = i;
            while i < grid.width() && grid.get(i, j) {
                i += 1;
            }
            let x = start as f64 * cell;
            let y = (grid.height() - 1 - j) as f64 * cell;
            put(format!(
                "<rect class=\"cell\" x=\"{x:.2}\" y=\"{y:.2}\" width=\"{:.2}\" height=\"{cell:.2}\"/>",
                (i - start) as f64 * cell
            ));
        }
    }
    put("</g>".into());

    if let Some(gs) = goals {
        put(format!(
            "<circle class=\"range\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\"/>",
            view.x(gs.center),
            view.y(gs.center),
            gs.radius * view.scale
        ));
        for p in &gs.points {
            put(format!(
                "<circle class=\"goal\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\"/>",
                view.x(*p),
                view.y(*p)
            ));
        }
    }

    for t in bundle.scene.tracks() {
        put(format!(
            "<polyline class=\"past {}\" points=\"{}\"/>",
            role_class(t.role()),
            view.points(t.observed())
        ));
    }
    if let Some(f) = bundle.scene.future() {
        let mut pts = vec![bundle.scene.target().last()];
        pts.extend_from_slice(f);
        put(format!("<polyline class=\"gt\" points=\"{}\"/>", view.points(&pts)));
    }
    if let Some(p) = pred {
        let start = bundle.scene.target().last();
        for &m in p.ranked().iter().take(MODES_SHOWN) {
            let mut pts = vec![start];
            pts.extend_from_slice(&p.trajectories[m]);
            put(format!("<polyline class=\"mode\" points=\"{}\"/>", view.points(&pts)));
            let end = *pts.last().expect("non-empty");
            put(format!(
                "<text class=\"conf\" x=\"{:.2}\" y=\"{:.2}\">{:.2}</text>",
                view.x(end) + 4.0,
                view.y(end) - 4.0,
                p.confidences[m]
            ));
        }
    }
    for t in bundle.scene.tracks() {
        let p = t.last();
        put(format!(
            "<circle class=\"marker\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\"/>",
            view.x(p),
            view.y(p)
        ));
    }
    put("</svg>".into());
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_synthetic_scene, RoadTemplate, SyntheticSpec};

    #[test]
    fn layers_and_counts() {
        let spec = SyntheticSpec::new(RoadTemplate::Intersection, 3, 0.05).unwrap();
        let b = generate_synthetic_scene(&spec, 2);
        let future = b.scene.future().unwrap().to_vec();
        let pred = PredictionSet {
            scene_id: b.scene.scene_id().to_string(),
            trajectories: (0..6).map(|i| future.iter().map(|p| *p + Point2::new(i as f64, 0.0)).collect()).collect(),
            confidences: vec![0.1, 0.3, 0.05, 0.25, 0.2, 0.1],
        };
        let svg = render_svg(&b, Some(&pred), None);
        assert!(svg.starts_with("<svg ") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("class=\"past ").count(), 3);
        assert_eq!(svg.matches("class=\"mode\"").count(), 3);
        assert!(svg.contains(">0.30<") && svg.contains(">0.25<") && svg.contains(">0.20<"));
        assert!(!svg.contains(">0.05<"));
        assert_eq!(svg, render_svg(&b, Some(&pred), None));
    }
}
