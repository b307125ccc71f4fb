//! Desk-scale synthetic scenes: a road template, lane-following agents and a
//! cropped feasible-area grid around the target.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{AgentTrack, FeasibleGrid, Point2, Role, Scene, SceneBundle, TimeBase};
use crate::error::{Error, Result};

const LANE_OFFSET_M: f64 = 1.75;
const ROAD_HALF_WIDTH_M: f64 = 4.0;
const CONNECTOR_HALF_WIDTH_M: f64 = 2.5;
const JUNCTION_RADIUS_M: f64 = 7.0;
const ARM_LENGTH_M: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoadTemplate {
    Straight,
    Curve,
    Intersection,
}

impl std::str::FromStr for RoadTemplate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(RoadTemplate::Straight),
            "curve" => Ok(RoadTemplate::Curve),
            "intersection" => Ok(RoadTemplate::Intersection),
            _ => Err(Error::invalid("road template", s)),
        }
    }
}

/// Parameters of the synthetic generator. Validated on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    template: RoadTemplate,
    agents: usize,
    noise_sigma: f64,
    speed_range: (f64, f64),
    max_accel: f64,
    crop_radius_m: f64,
    resolution_m: f64,
    time: TimeBase,
}

impl SyntheticSpec {
    pub fn new(template: RoadTemplate, agents: usize, noise_sigma: f64) -> Result<Self> {
        if agents == 0 {
            return Err(Error::invalid("synthetic spec", "at least one agent"));
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(Error::invalid("synthetic spec", format!("noise sigma {noise_sigma}")));
        }
        let speed_range = match template {
            RoadTemplate::Intersection => (6.0, 12.0),
            _ => (5.0, 15.0),
        };
        Ok(SyntheticSpec {
            template,
            agents,
            noise_sigma,
            speed_range,
            max_accel: 0.5,
            crop_radius_m: 50.0,
            resolution_m: 0.5,
            time: TimeBase::ARGOVERSE,
        })
    }

    /// Fixed target speed with no acceleration.
    pub fn with_constant_speed(mut self, speed: f64) -> Result<Self> {
        self = self.with_speed_range(speed, speed)?;
        self.max_accel = 0.0;
        Ok(self)
    }

    pub fn with_speed_range(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi >= lo && hi <= 15.0) {
            return Err(Error::invalid("synthetic spec", format!("speed range {lo}..{hi}")));
        }
        self.speed_range = (lo, hi);
        Ok(self)
    }

    pub fn with_crop_radius(mut self, r: f64) -> Result<Self> {
        if !(r >= 50.0) {
            return Err(Error::invalid("synthetic spec", format!("crop radius {r} < 50 m")));
        }
        self.crop_radius_m = r;
        Ok(self)
    }

    pub fn template(&self) -> RoadTemplate {
        self.template
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn time(&self) -> TimeBase {
        self.time
    }
}

// ---- geometry ---------------------------------------------------------------

#[derive(Clone, Debug)]
enum Segment {
    Line {
        start: Point2,
        heading: f64,
        length: f64,
    },
    Arc {
        center: Point2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Line { length, .. } => length,
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn point_at(&self, s: f64) -> Point2 {
        match *self {
            Segment::Line { start, heading, .. } => start + Point2::from_polar(s, heading),
            Segment::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => center + Point2::from_polar(radius, start_angle + sweep.signum() * s / radius),
        }
    }

    fn distance(&self, p: Point2) -> f64 {
        match *self {
            Segment::Line {
                start,
                heading,
                length,
            } => {
                let u = Point2::from_polar(1.0, heading);
                let t = (p - start).dot(u).clamp(0.0, length);
                p.distance(start + u * t)
            }
            Segment::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let rel = wrap_angle((p - center).angle() - start_angle) * sweep.signum();
                let within = if sweep.abs() >= 2.0 * PI {
                    true
                } else if rel >= 0.0 {
                    rel <= sweep.abs()
                } else {
                    rel + 2.0 * PI <= sweep.abs()
                };
                if within {
                    (p.distance(center) - radius).abs()
                } else {
                    let a = self.point_at(0.0);
                    let b = self.point_at(self.length());
                    p.distance(a).min(p.distance(b))
                }
            }
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Arc-length parameterized polyline of lines and arcs.
#[derive(Clone, Debug)]
struct Path {
    segments: Vec<Segment>,
}

impl Path {
    /// Position at arc length `s`; beyond either end the path is extended
    /// along its terminal direction.
    fn point_at(&self, s: f64) -> Point2 {
        let first = &self.segments[0];
        if s < 0.0 {
            let a = first.point_at(0.0);
            let b = first.point_at(1e-3);
            return a + (b - a) * (s / 1e-3);
        }
        let mut rem = s;
        for seg in &self.segments {
            let len = seg.length();
            if rem <= len {
                return seg.point_at(rem);
            }
            rem -= len;
        }
        let last = self.segments.last().expect("non-empty path");
        let len = last.length();
        let a = last.point_at(len - 1e-3);
        let b = last.point_at(len);
        b + (b - a) * (rem / 1e-3)
    }

    fn distance(&self, p: Point2) -> f64 {
        self.segments
            .iter()
            .map(|s| s.distance(p))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Directed line through `point` with direction `heading`.
#[derive(Clone, Copy, Debug)]
struct Ray {
    point: Point2,
    heading: f64,
}

/// Path that runs along `entry`, turns onto `exit` through a circular fillet
/// of the given radius, and continues along `exit`. The entry part starts
/// `lead` meters before the fillet and the exit part is `tail` meters long.
/// Returns the path and the arc length where the fillet starts.
fn fillet_path(entry: Ray, exit: Ray, radius: f64, lead: f64, tail: f64) -> (Path, f64) {
    let u1 = Point2::from_polar(1.0, entry.heading);
    let u2 = Point2::from_polar(1.0, exit.heading);
    let turn = wrap_angle(exit.heading - entry.heading);
    let cross = u1.x * u2.y - u1.y * u2.x;
    if turn.abs() < 1e-6 || cross.abs() < 1e-9 {
        // Parallel lanes: keep going straight along the entry line.
        let start = entry.point - u1 * lead;
        let seg = Segment::Line {
            start,
            heading: entry.heading,
            length: lead + tail,
        };
        return (Path { segments: vec![seg] }, lead);
    }
    // Intersection of the two lines.
    let d = exit.point - entry.point;
    let t = (d.x * u2.y - d.y * u2.x) / cross;
    let corner = entry.point + u1 * t;
    let tangent = radius * (turn.abs() / 2.0).tan();
    let enter = corner - u1 * tangent;
    let leave = corner + u2 * tangent;
    let normal = if turn > 0.0 {
        Point2::new(-u1.y, u1.x)
    } else {
        Point2::new(u1.y, -u1.x)
    };
    let center = enter + normal * radius;
    let segments = vec![
        Segment::Line {
            start: enter - u1 * lead,
            heading: entry.heading,
            length: lead,
        },
        Segment::Arc {
            center,
            radius,
            start_angle: (enter - center).angle(),
            sweep: turn,
        },
        Segment::Line {
            start: leave,
            heading: exit.heading,
            length: tail,
        },
    ];
    (Path { segments }, lead)
}

/// Lane center line on an arm leaving the junction at `arm` (radians).
/// Traffic keeps right.
fn lane(arm: f64, outgoing: bool) -> Ray {
    let heading = if outgoing { arm } else { arm + PI };
    let right = Point2::new(heading.sin(), -heading.cos());
    Ray {
        point: right * LANE_OFFSET_M,
        heading: wrap_angle(heading),
    }
}

fn turn_radius(entry: Ray, exit: Ray, rng: &mut impl Rng) -> f64 {
    let turn = wrap_angle(exit.heading - entry.heading);
    if turn.abs() < 0.5 {
        rng.random_range(30.0..40.0)
    } else if turn > 0.0 {
        rng.random_range(8.0..12.0)
    } else {
        rng.random_range(5.0..7.0)
    }
}

/// Road layout: which points are driveable, plus candidate lane paths.
struct Layout {
    /// Center lines of road corridors (half width [`ROAD_HALF_WIDTH_M`]).
    roads: Vec<Path>,
    /// Lane-level connectors (half width [`CONNECTOR_HALF_WIDTH_M`]).
    connectors: Vec<Path>,
    junction: Option<Point2>,
    target_path: Path,
    /// Arc length on the target path of the first geometric feature
    /// (curve or junction entry).
    feature_s: f64,
    other_paths: Vec<Path>,
}

impl Layout {
    fn feasible(&self, p: Point2) -> bool {
        self.junction.is_some_and(|c| p.distance(c) <= JUNCTION_RADIUS_M)
            || self.roads.iter().any(|r| r.distance(p) <= ROAD_HALF_WIDTH_M)
            || self.connectors.iter().any(|r| r.distance(p) <= CONNECTOR_HALF_WIDTH_M)
    }
}

fn straight_layout() -> Layout {
    let road = Path {
        segments: vec![Segment::Line {
            start: Point2::new(-ARM_LENGTH_M, 0.0),
            heading: 0.0,
            length: 2.0 * ARM_LENGTH_M,
        }],
    };
    let forward = Path {
        segments: vec![Segment::Line {
            start: Point2::new(-ARM_LENGTH_M, -LANE_OFFSET_M),
            heading: 0.0,
            length: 2.0 * ARM_LENGTH_M,
        }],
    };
    let backward = Path {
        segments: vec![Segment::Line {
            start: Point2::new(ARM_LENGTH_M, LANE_OFFSET_M),
            heading: PI,
            length: 2.0 * ARM_LENGTH_M,
        }],
    };
    Layout {
        roads: vec![road],
        connectors: vec![],
        junction: None,
        target_path: forward.clone(),
        feature_s: ARM_LENGTH_M,
        other_paths: vec![forward, backward],
    }
}

fn curve_layout(rng: &mut impl Rng) -> Layout {
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let turn = sign * rng.random_range(PI / 4.0..FRAC_PI_2);
    let radius = rng.random_range(25.0..40.0);
    let center_entry = Ray {
        point: Point2::ORIGIN,
        heading: 0.0,
    };
    let center_exit = Ray {
        point: Point2::ORIGIN,
        heading: turn,
    };
    let (road, _) = fillet_path(center_entry, center_exit, radius, ARM_LENGTH_M, ARM_LENGTH_M);
    let offset = |h: f64| Point2::new(h.sin(), -h.cos()) * LANE_OFFSET_M;
    // Right lane is on the outside of a left turn.
    let lane_radius = radius + sign * LANE_OFFSET_M;
    let fwd_entry = Ray {
        point: offset(0.0),
        heading: 0.0,
    };
    let fwd_exit = Ray {
        point: offset(turn),
        heading: turn,
    };
    let (forward, feature_s) = fillet_path(fwd_entry, fwd_exit, lane_radius, ARM_LENGTH_M, ARM_LENGTH_M);
    let back_entry = Ray {
        point: offset(turn + PI),
        heading: wrap_angle(turn + PI),
    };
    let back_exit = Ray {
        point: offset(PI),
        heading: PI,
    };
    let (backward, _) = fillet_path(back_entry, back_exit, radius - sign * LANE_OFFSET_M, ARM_LENGTH_M, ARM_LENGTH_M);
    Layout {
        roads: vec![road],
        connectors: vec![],
        junction: None,
        target_path: forward.clone(),
        feature_s,
        other_paths: vec![forward, backward],
    }
}

/// Junction at the origin. The target approaches from the west; each of the
/// straight, left and right exits exists independently (at least one) with a
/// randomly perturbed angle.
fn intersection_layout(rng: &mut impl Rng) -> Layout {
    let approach = PI;
    let mut exits = vec![];
    loop {
        if rng.random_bool(0.6) {
            exits.push(rng.random_range(-0.26..0.26));
        }
        if rng.random_bool(0.6) {
            exits.push(FRAC_PI_2 + rng.random_range(-0.44..0.44));
        }
        if rng.random_bool(0.6) {
            exits.push(-FRAC_PI_2 + rng.random_range(-0.44..0.44));
        }
        if !exits.is_empty() {
            break;
        }
    }
    let arms: Vec<f64> = std::iter::once(approach).chain(exits.iter().copied()).collect();
    let roads = arms
        .iter()
        .map(|&a| Path {
            segments: vec![Segment::Line {
                start: Point2::ORIGIN,
                heading: a,
                length: ARM_LENGTH_M,
            }],
        })
        .collect();

    let entry = lane(approach, false);
    let mut connectors = vec![];
    for &e in &exits {
        let exit = lane(e, true);
        let r = turn_radius(entry, exit, rng);
        connectors.push(fillet_path(entry, exit, r, ARM_LENGTH_M, ARM_LENGTH_M));
    }
    let choice = rng.random_range(0..connectors.len());
    let (target_path, feature_s) = connectors[choice].clone();

    let mut other_paths = vec![];
    for (i, &from) in arms.iter().enumerate() {
        for (j, &to) in arms.iter().enumerate() {
            if i != j {
                let (a, b) = (lane(from, false), lane(to, true));
                let r = turn_radius(a, b, rng);
                other_paths.push(fillet_path(a, b, r, ARM_LENGTH_M, ARM_LENGTH_M).0);
            }
        }
    }
    Layout {
        roads,
        connectors: connectors.into_iter().map(|(p, _)| p).collect(),
        junction: Some(Point2::ORIGIN),
        target_path,
        feature_s,
        other_paths,
    }
}

// ---- generation -------------------------------------------------------------

fn quantize(p: Point2) -> Point2 {
    let q = |v: f64| (v * 1e6).round() / 1e6;
    Point2::new(q(p.x), q(p.y))
}

struct Motion {
    s0: f64,
    speed: f64,
    accel: f64,
}

impl Motion {
    fn s(&self, t: f64) -> f64 {
        self.s0 + self.speed * t + 0.5 * self.accel * t * t
    }
}

fn sample_times(tb: TimeBase) -> (Vec<f64>, Vec<f64>) {
    let dt = tb.dt();
    let observed = (0..tb.m).map(|i| -((tb.m - 1 - i) as f64) * dt).collect();
    let future = (1..=tb.n).map(|i| i as f64 * dt).collect();
    (observed, future)
}

/// Generates one scene. Deterministic in `(spec, seed)`.
pub fn generate_synthetic_scene(spec: &SyntheticSpec, seed: u64) -> SceneBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = match spec.template {
        RoadTemplate::Straight => straight_layout(),
        RoadTemplate::Curve => curve_layout(&mut rng),
        RoadTemplate::Intersection => intersection_layout(&mut rng),
    };
    let tb = spec.time;
    let (obs_t, fut_t) = sample_times(tb);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let jitter = |rng: &mut ChaCha8Rng, p: Point2| {
        if spec.noise_sigma > 0.0 {
            p + Point2::new(noise.sample(rng), noise.sample(rng))
        } else {
            p
        }
    };
    let draw_speed = |rng: &mut ChaCha8Rng| {
        let (lo, hi) = spec.speed_range;
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let draw_accel = |rng: &mut ChaCha8Rng| {
        if spec.max_accel > 0.0 {
            rng.random_range(-spec.max_accel..spec.max_accel)
        } else {
            0.0
        }
    };

    // Target: place it so the road feature is reached within the horizon
    // most of the time.
    let speed = draw_speed(&mut rng);
    let lead = match spec.template {
        RoadTemplate::Straight => rng.random_range(-20.0..20.0),
        _ => rng.random_range(-3.0..1.6 * speed),
    };
    let target_motion = Motion {
        s0: layout.feature_s - lead,
        speed,
        accel: draw_accel(&mut rng),
    };
    let path_point = |path: &Path, m: &Motion, t: f64| quantize(path.point_at(m.s(t)));

    let mut tracks = vec![];
    let target_obs: Vec<Point2> = obs_t
        .iter()
        .map(|&t| {
            let p = path_point(&layout.target_path, &target_motion, t);
            quantize(jitter(&mut rng, p))
        })
        .collect();
    let future: Vec<Point2> = fut_t
        .iter()
        .map(|&t| path_point(&layout.target_path, &target_motion, t))
        .collect();
    tracks.push(AgentTrack::fully_observed("target", Role::Target, target_obs).expect("valid target"));

    for a in 1..spec.agents {
        let (path, motion) = if a == 1 {
            // Ego follows the target on the same lane.
            let gap = rng.random_range(10.0..25.0);
            let m = Motion {
                s0: target_motion.s0 - gap,
                speed: draw_speed(&mut rng),
                accel: draw_accel(&mut rng),
            };
            (layout.target_path.clone(), m)
        } else {
            let path = layout.other_paths[rng.random_range(0..layout.other_paths.len())].clone();
            let m = Motion {
                s0: ARM_LENGTH_M + rng.random_range(-40.0..25.0),
                speed: draw_speed(&mut rng),
                accel: draw_accel(&mut rng),
            };
            (path, m)
        };
        let mut pts: Vec<Point2> = obs_t
            .iter()
            .map(|&t| {
                let p = path_point(&path, &motion, t);
                quantize(jitter(&mut rng, p))
            })
            .collect();
        let mut mask = vec![true; tb.m];
        if a >= 2 && rng.random_bool(0.25) {
            let missing = rng.random_range(1..=tb.m / 2);
            for (p, v) in pts.iter_mut().zip(mask.iter_mut()).take(missing) {
                *v = false;
                *p = Point2::ORIGIN;
            }
        }
        let role = if a == 1 { Role::Ego } else { Role::Other };
        tracks.push(AgentTrack::new(format!("agent{a}"), role, pts, mask).expect("valid track"));
    }

    let scene = Scene::new(format!("syn{seed}"), tracks, Some(future), tb).expect("valid scene");
    let center = scene.target().last();
    let res = spec.resolution_m;
    let crop = spec.crop_radius_m;
    let origin = quantize(Point2::new(
        ((center.x - crop) / res).floor() * res,
        ((center.y - crop) / res).floor() * res,
    ));
    let cells = (2.0 * crop / res).ceil() as usize + 2;
    let grid = FeasibleGrid::from_fn(origin, res, cells, cells, |c| {
        c.distance(center) <= crop && layout.feasible(c)
    })
    .expect("valid grid");
    SceneBundle::new(scene, grid).expect("target inside crop")
}

/// `count` scenes with per-scene seeds derived from `seed`.
pub fn generate_dataset(spec: &SyntheticSpec, count: usize, seed: u64) -> Vec<SceneBundle> {
    (0..count)
        .map(|i| {
            let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let mut b = generate_synthetic_scene(spec, s);
            let scene = Scene::new(
                format!("s{seed}_{i:05}"),
                b.scene.tracks().to_vec(),
                b.scene.future().map(<[Point2]>::to_vec),
                b.scene.time(),
            )
            .expect("valid scene");
            b.scene = scene;
            b
        })
        .collect()
}
