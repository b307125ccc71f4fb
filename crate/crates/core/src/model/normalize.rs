use crate::error::Result;
use crate::features::{estimate_dynamic_state, SmoothingConfig};
use crate::scene::{Point2, Scene};
use crate::tensor::Tensor;

/// Features per observed step: displacement and a scaled position.
pub const STEP_FEATURES: usize = 4;
pub(crate) const POSITION_SCALE: f64 = 0.1;

/// Target-centric frame: origin at the target's last observed point, +x
/// along its smoothed heading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub origin: Point2,
    pub heading: f64,
}

impl Frame {
    pub fn to_local(&self, p: Point2) -> Point2 {
        (p - self.origin).rotate(-self.heading)
    }

    pub fn to_world(&self, p: Point2) -> Point2 {
        p.rotate(self.heading) + self.origin
    }
}

/// A scene expressed in its target-centric frame.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedScene {
    pub frame: Frame,
    pub target: usize,
    /// Per-agent positions in the local frame (`m` each).
    pub positions: Vec<Vec<Point2>>,
    /// Per-agent step displacements (`m - 1` each).
    pub displacements: Vec<Vec<Point2>>,
    pub future: Option<Vec<Point2>>,
}

pub fn normalize_scene(scene: &Scene, smoothing: &SmoothingConfig) -> Result<NormalizedScene> {
    let target = scene.target();
    let state = estimate_dynamic_state(target, scene.time().hz as f64, smoothing)?;
    let frame = Frame {
        origin: target.last(),
        heading: state.heading,
    };
    let positions: Vec<Vec<Point2>> = scene
        .tracks()
        .iter()
        .map(|t| t.observed().iter().map(|&p| frame.to_local(p)).collect())
        .collect();
    let displacements = positions
        .iter()
        .map(|ps: &Vec<Point2>| ps.windows(2).map(|w| w[1] - w[0]).collect())
        .collect();
    Ok(NormalizedScene {
        frame,
        target: scene.target_index(),
        positions,
        displacements,
        future: scene.future().map(|f| f.iter().map(|&p| frame.to_local(p)).collect()),
    })
}

impl NormalizedScene {
    pub fn agents(&self) -> usize {
        self.positions.len()
    }

    pub fn steps(&self) -> usize {
        self.displacements[0].len()
    }

    /// `[agents, steps, 4]`: `dx, dy, 0.1 x, 0.1 y` for each step's end point.
    pub fn step_features(&self) -> Tensor {
        let (a, t) = (self.agents(), self.steps());
        let mut data = Vec::with_capacity(a * t * STEP_FEATURES);
        for (d, p) in self.displacements.iter().zip(&self.positions) {
            for (dd, pp) in d.iter().zip(&p[1..]) {
                data.extend([dd.x, dd.y, POSITION_SCALE * pp.x, POSITION_SCALE * pp.y]);
            }
        }
        Tensor::new(vec![a, t, STEP_FEATURES], data).expect("feature shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{AgentTrack, Role, TimeBase};

    fn scene() -> Scene {
        let time = TimeBase { m: 5, n: 2, hz: 10 };
        let t: Vec<Point2> = (0..5).map(|i| Point2::new(3.0 + i as f64, 1.0 + 0.5 * i as f64)).collect();
        let o: Vec<Point2> = (0..5).map(|i| Point2::new(-2.0, i as f64 * 0.3)).collect();
        Scene::new(
            "n",
            vec![
                AgentTrack::fully_observed("t", Role::Target, t).unwrap(),
                AgentTrack::fully_observed("o", Role::Other, o).unwrap(),
            ],
            Some(vec![Point2::new(8.0, 3.5), Point2::new(9.0, 4.0)]),
            time,
        )
        .unwrap()
    }

    #[test]
    fn target_last_point_is_origin() {
        let n = normalize_scene(&scene(), &SmoothingConfig::default()).unwrap();
        let last = n.positions[n.target][4];
        assert!(last.norm() < 1e-12);
        assert!((n.frame.heading - 0.5f64.atan2(1.0)).abs() < 1e-12);
        assert!(n.displacements[n.target].iter().all(|d| d.y.abs() < 1e-12 && d.x > 0.0));
    }

    #[test]
    fn frame_round_trip() {
        let f = Frame {
            origin: Point2::new(4.0, -7.0),
            heading: 2.3,
        };
        for p in [Point2::new(0.0, 0.0), Point2::new(1e3, -5.0), Point2::new(-3.3, 2.2)] {
            assert!(f.to_world(f.to_local(p)).distance(p) < 1e-10);
        }
    }

    #[test]
    fn feature_layout() {
        let n = normalize_scene(&scene(), &SmoothingConfig::default()).unwrap();
        let f = n.step_features();
        assert_eq!(f.shape(), &[2, 4, 4]);
        let d = n.displacements[1][2];
        let p = n.positions[1][3];
        assert_eq!(&f.data()[(4 + 2) * 4..(4 + 3) * 4], &[d.x, d.y, 0.1 * p.x, 0.1 * p.y]);
    }
}
