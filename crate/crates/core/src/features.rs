//! Map-based goal features: dynamic-state estimation from the observed track,
//! the motion-range circle, and goal points sampled from the feasible area.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scene::{AgentTrack, Occupancy, Point2};

/// Heading (radians, in `(-pi, pi]`) and speed (m/s) at the last observed frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicState {
    pub heading: f64,
    pub speed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingConfig {
    /// Forgetting factor in `(0, 1)`; recent samples weigh more.
    pub lambda: f64,
    /// Divide by the sum of weights, turning the sum into a weighted mean.
    pub normalize: bool,
}

impl SmoothingConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::invalid("smoothing", format!("lambda {lambda} not in (0, 1)")));
        }
        Ok(SmoothingConfig {
            lambda,
            normalize: true,
        })
    }
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig {
            lambda: 0.9,
            normalize: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoalSamplerConfig {
    pub r: usize,
    pub horizon_s: f64,
    pub min_radius_m: f64,
    pub forward_cone_deg: f64,
    pub speed_gate_mps: f64,
    pub seed: u64,
}

impl Default for GoalSamplerConfig {
    fn default() -> Self {
        GoalSamplerConfig {
            r: 32,
            horizon_s: 3.0,
            min_radius_m: 2.0,
            forward_cone_deg: 180.0,
            speed_gate_mps: 1.0,
            seed: 0,
        }
    }
}

impl GoalSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("goal sampler", msg));
        if self.r < 1 {
            return bad("r must be >= 1".into());
        }
        if !(self.horizon_s > 0.0) {
            return bad(format!("horizon {}", self.horizon_s));
        }
        if !(self.forward_cone_deg > 0.0 && self.forward_cone_deg <= 360.0) {
            return bad(format!("cone {}", self.forward_cone_deg));
        }
        if !(self.min_radius_m >= 0.0) {
            return bad(format!("min radius {}", self.min_radius_m));
        }
        Ok(())
    }
}

/// Smoothing and goal-sampling settings used when preparing model inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FeatureConfig {
    pub smoothing: SmoothingConfig,
    pub sampler: GoalSamplerConfig,
}

/// Sampled goal proposals around the target's last observed position.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalSet {
    pub center: Point2,
    pub radius: f64,
    pub heading: f64,
    pub points: Vec<Point2>,
}

impl GoalSet {
    /// `GOALS center_x center_y radius heading r` followed by one `x y` line
    /// per point.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "GOALS {:.6} {:.6} {:.6} {:.6} {}\n",
            self.center.x,
            self.center.y,
            self.radius,
            self.heading,
            self.points.len()
        );
        for p in &self.points {
            writeln!(out, "{:.6} {:.6}", p.x, p.y).expect("string write");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::invalid("goals file", msg.to_string());
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let head: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        if head.len() != 6 || head[0] != "GOALS" {
            return Err(bad("expected `GOALS cx cy radius heading r`"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let center = Point2::new(num(head[1])?, num(head[2])?);
        let radius = num(head[3])?;
        let heading = num(head[4])?;
        let r: usize = head[5].parse().map_err(|_| bad("bad count"))?;
        let points = lines
            .map(|l| {
                let v: Vec<&str> = l.split_whitespace().collect();
                match v.as_slice() {
                    [x, y] => Ok(Point2::new(num(x)?, num(y)?)),
                    _ => Err(bad("expected `x y`")),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if points.len() != r {
            return Err(bad("point count does not match header"));
        }
        Ok(GoalSet {
            center,
            radius,
            heading,
            points,
        })
    }
}

fn valid_span(track: &AgentTrack) -> Result<()> {
    if track.valid_count() < 2 {
        return Err(Error::InsufficientObservations(track.agent_id().to_string()));
    }
    Ok(())
}

/// Step headings `atan2(dy, dx)`; zero-length steps repeat the previous
/// heading (0 for a leading zero step).
pub fn heading_sequence(track: &AgentTrack) -> Result<Vec<f64>> {
    valid_span(track)?;
    let mut prev = 0.0;
    Ok(track
        .observed()
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            if d.x != 0.0 || d.y != 0.0 {
                prev = d.angle();
            }
            prev
        })
        .collect())
}

/// Step speeds: Euclidean step length times the sample rate.
pub fn speed_sequence(track: &AgentTrack, sample_rate_hz: f64) -> Result<Vec<f64>> {
    valid_span(track)?;
    Ok(track
        .observed()
        .windows(2)
        .map(|w| w[0].distance(w[1]) * sample_rate_hz)
        .collect())
}

fn forgetting_weights(len: usize, lambda: f64) -> impl Iterator<Item = f64> {
    (0..len).map(move |t| lambda.powi((len - 1 - t) as i32))
}

/// Exponentially forgetting sum `sum_t lambda^(T-t) psi_t` over the sequence,
/// optionally divided by the sum of weights.
pub fn smooth_last(seq: &[f64], cfg: &SmoothingConfig) -> Result<f64> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    if cfg.normalize {
        // Running weighted mean; a constant input is reproduced exactly.
        let (mut mean, mut wsum) = (0.0, 0.0);
        for (w, v) in forgetting_weights(seq.len(), cfg.lambda).zip(seq) {
            wsum += w;
            mean += (w / wsum) * (v - mean);
        }
        Ok(mean)
    } else {
        Ok(forgetting_weights(seq.len(), cfg.lambda)
            .zip(seq)
            .map(|(w, v)| w * v)
            .sum())
    }
}

/// Forgetting-factor smoothing of angles on the unit circle.
pub fn smooth_heading(seq: &[f64], cfg: &SmoothingConfig) -> Result<f64> {
    let sin: Vec<f64> = seq.iter().map(|a| a.sin()).collect();
    let cos: Vec<f64> = seq.iter().map(|a| a.cos()).collect();
    let s = smooth_last(&sin, cfg)?;
    let c = smooth_last(&cos, cfg)?;
    if s == 0.0 && c == 0.0 {
        return Ok(0.0);
    }
    let a = s.atan2(c);
    Ok(if a <= -PI { PI } else { a })
}

pub fn estimate_dynamic_state(
    track: &AgentTrack,
    sample_rate_hz: f64,
    cfg: &SmoothingConfig,
) -> Result<DynamicState> {
    let heading = smooth_heading(&heading_sequence(track)?, cfg)?;
    let speed = smooth_last(&speed_sequence(track, sample_rate_hz)?, cfg)?.max(0.0);
    Ok(DynamicState { heading, speed })
}

/// Radius of the reachable disc: `max(horizon * speed, min_radius)`.
pub fn motion_range(state: &DynamicState, cfg: &GoalSamplerConfig) -> f64 {
    (cfg.horizon_s * state.speed).max(cfg.min_radius_m)
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    if d > PI {
        2.0 * PI - d
    } else {
        d
    }
}

/// Rejection-samples up to `cfg.r` feasible cell centers inside the motion
/// range. Candidates are drawn uniformly from the heading-aligned square
/// that bounds the disc, snapped to their cell center, and kept when that
/// center is feasible, inside the disc and, for a moving agent, inside the
/// forward cone. At most `50 * r` candidates are drawn.
pub fn sample_goal_points<G: Occupancy + ?Sized>(
    grid: &G,
    state: &DynamicState,
    center: Point2,
    cfg: &GoalSamplerConfig,
) -> Result<GoalSet> {
    cfg.validate()?;
    if grid.cell_of(center).is_none() {
        return Err(Error::invalid("goal sampling", "center outside the grid"));
    }
    let radius = motion_range(state, cfg);
    let cone_active = state.speed > cfg.speed_gate_mps && cfg.forward_cone_deg < 360.0;
    let half_cone = cfg.forward_cone_deg.to_radians() / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut points = Vec::with_capacity(cfg.r);
    for _ in 0..50 * cfg.r {
        if points.len() == cfg.r {
            break;
        }
        let local = Point2::new(rng.random_range(-radius..radius), rng.random_range(-radius..radius));
        let Some(cell) = grid.cell_of(center + local.rotate(state.heading)) else {
            continue;
        };
        if !grid.is_feasible(cell) {
            continue;
        }
        let p = grid.cell_center(cell);
        let offset = p - center;
        if offset.norm() > radius {
            continue;
        }
        if cone_active {
            if offset.norm() == 0.0 || angle_diff(offset.angle(), state.heading) >= half_cone {
                continue;
            }
        }
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::NoFeasibleCells);
    }
    Ok(GoalSet {
        center,
        radius,
        heading: state.heading,
        points,
    })
}

/// Goal points in the target-centric frame (center at the origin, heading
/// along +x).
pub fn goal_offsets(goals: &GoalSet) -> Vec<Point2> {
    goals
        .points
        .iter()
        .map(|&p| (p - goals.center).rotate(-goals.heading))
        .collect()
}
