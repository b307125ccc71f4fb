use std::path::Path;

use effmp::features::GoalSet;
use effmp::model::{Frame, PredictionSet};
use effmp::scene::Point2;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Point2> {
    (-500.0..500.0f64, -500.0..500.0f64).prop_map(|(x, y)| Point2::new(x, y))
}

proptest! {
    #[test]
    fn frame_round_trip(origin in point(), heading in -10.0..10.0f64, p in point()) {
        let f = Frame { origin, heading };
        let back = f.to_world(f.to_local(p));
        prop_assert!((back.x - p.x).abs() < 1e-9 && (back.y - p.y).abs() < 1e-9);
        let local = f.to_local(p);
        let d = ((p.x - origin.x).powi(2) + (p.y - origin.y).powi(2)).sqrt();
        prop_assert!((local.x.hypot(local.y) - d).abs() < 1e-9);
    }

    #[test]
    fn prediction_text_round_trip(
        (n, k) in (1..12usize, 1..7usize),
        pool in prop::collection::vec(point(), 72),
        weights in prop::collection::vec(0.01..1.0f64, 7),
    ) {
        let trajs: Vec<Vec<Point2>> = pool.chunks(12).take(k).map(|c| c[..n].to_vec()).collect();
        let total: f64 = weights[..k].iter().sum();
        let set = PredictionSet {
            scene_id: "s_0001".into(),
            confidences: weights[..k].iter().map(|w| w / total).collect(),
            trajectories: trajs,
        };
        let back = PredictionSet::from_text(&set.to_text(), Path::new("p.txt")).unwrap();
        prop_assert_eq!(&back.scene_id, &set.scene_id);
        prop_assert_eq!(back.k(), k);
        for (a, b) in back.confidences.iter().zip(&set.confidences) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        for (ta, tb) in back.trajectories.iter().zip(&set.trajectories) {
            prop_assert_eq!(ta.len(), tb.len());
            for (a, b) in ta.iter().zip(tb) {
                prop_assert!((a.x - b.x).abs() < 1e-6 && (a.y - b.y).abs() < 1e-6);
            }
        }
        prop_assert_eq!(back.to_text(), set.to_text());
    }

    #[test]
    fn goal_text_round_trip(
        center in point(),
        radius in 0.5..60.0f64,
        heading in -3.0..3.0f64,
        points in prop::collection::vec(point(), 0..40),
    ) {
        let g = GoalSet { center, radius, heading, points };
        let back = GoalSet::from_text(&g.to_text()).unwrap();
        prop_assert_eq!(back.points.len(), g.points.len());
        prop_assert_eq!(back.to_text(), g.to_text());
    }
}
