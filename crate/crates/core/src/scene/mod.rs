//! Scenes, agent tracks and the binarized feasible-area grid.

mod io;
mod synthetic;

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

pub use io::{load_scene_bundle, save_scene_bundle, read_grid, read_scene, write_grid, write_scene};
pub use synthetic::{generate_dataset, generate_synthetic_scene, RoadTemplate, SyntheticSpec};

use crate::error::{Error, Result};

/// World-frame position in meters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn from_polar(r: f64, angle: f64) -> Self {
        Point2::new(r * angle.cos(), r * angle.sin())
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn distance(self, o: Point2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Counter-clockwise rotation about the origin.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Exact counter-clockwise rotation by `quarter_turns` x 90 degrees.
    pub fn rotate_quarter(self, quarter_turns: u8) -> Self {
        match quarter_turns % 4 {
            0 => self,
            1 => Point2::new(-self.y, self.x),
            2 => Point2::new(-self.x, -self.y),
            _ => Point2::new(self.y, -self.x),
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Ego,
    Target,
    Other,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Ego => "ego",
            Role::Target => "target",
            Role::Other => "other",
        })
    }
}

impl FromStr for Role {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ego" => Ok(Role::Ego),
            "target" => Ok(Role::Target),
            "other" => Ok(Role::Other),
            _ => Err(Error::invalid("role", s)),
        }
    }
}

fn check_id(what: &'static str, id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(char::is_whitespace) {
        return Err(Error::invalid(what, format!("`{id}` must be non-empty without whitespace")));
    }
    Ok(())
}

/// Observed history of one agent. Slots without a real observation hold the
/// most recent valid position (or the first valid one, before any).
#[derive(Clone, Debug, PartialEq)]
pub struct AgentTrack {
    agent_id: String,
    role: Role,
    observed: Vec<Point2>,
    valid_mask: Vec<bool>,
}

impl AgentTrack {
    /// Builds a track and forward-fills masked-out slots.
    pub fn new(
        agent_id: impl Into<String>,
        role: Role,
        mut observed: Vec<Point2>,
        valid_mask: Vec<bool>,
    ) -> Result<Self> {
        let agent_id = agent_id.into();
        check_id("agent id", &agent_id)?;
        if observed.len() != valid_mask.len() {
            return Err(Error::LengthMismatch(observed.len(), valid_mask.len()));
        }
        if valid_mask.iter().filter(|&&v| v).count() < 2 {
            return Err(Error::InsufficientObservations(agent_id));
        }
        if let Some(p) = observed.iter().find(|p| !p.is_finite()) {
            return Err(Error::invalid("track", format!("{agent_id}: non-finite point {p:?}")));
        }
        let first = valid_mask.iter().position(|&v| v).expect("two valid");
        let mut last = observed[first];
        for (p, &valid) in observed.iter_mut().zip(&valid_mask) {
            if valid {
                last = *p;
            } else {
                *p = last;
            }
        }
        Ok(AgentTrack {
            agent_id,
            role,
            observed,
            valid_mask,
        })
    }

    /// Fully observed track.
    pub fn fully_observed(agent_id: impl Into<String>, role: Role, observed: Vec<Point2>) -> Result<Self> {
        let mask = vec![true; observed.len()];
        AgentTrack::new(agent_id, role, observed, mask)
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn observed(&self) -> &[Point2] {
        &self.observed
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid_mask
    }

    pub fn last(&self) -> Point2 {
        *self.observed.last().expect("non-empty track")
    }

    pub fn valid_count(&self) -> usize {
        self.valid_mask.iter().filter(|&&v| v).count()
    }

    pub(crate) fn map_points(&self, f: impl Fn(Point2) -> Point2) -> AgentTrack {
        AgentTrack {
            agent_id: self.agent_id.clone(),
            role: self.role,
            observed: self.observed.iter().map(|&p| f(p)).collect(),
            valid_mask: self.valid_mask.clone(),
        }
    }
}

/// Timing of a scene: `m` observed and `n` predicted steps at `hz`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TimeBase {
    pub m: usize,
    pub n: usize,
    pub hz: u32,
}

impl TimeBase {
    pub const ARGOVERSE: TimeBase = TimeBase { m: 20, n: 30, hz: 10 };

    pub fn observed_span_s(&self) -> f64 {
        self.m as f64 / self.hz as f64
    }

    pub fn horizon_s(&self) -> f64 {
        self.n as f64 / self.hz as f64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.hz as f64
    }
}

impl Default for TimeBase {
    fn default() -> Self {
        TimeBase::ARGOVERSE
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    scene_id: String,
    tracks: Vec<AgentTrack>,
    target: usize,
    future: Option<Vec<Point2>>,
    time: TimeBase,
}

impl Scene {
    /// Validates and assembles a scene. Exactly one track must have the
    /// target role; at most one may be the ego vehicle.
    pub fn new(
        scene_id: impl Into<String>,
        tracks: Vec<AgentTrack>,
        future: Option<Vec<Point2>>,
        time: TimeBase,
    ) -> Result<Self> {
        let scene_id = scene_id.into();
        check_id("scene id", &scene_id)?;
        if time.m < 2 || time.n < 1 || time.hz == 0 {
            return Err(Error::invalid("scene", format!("bad time base {time:?}")));
        }
        let targets: Vec<usize> = tracks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.role == Role::Target)
            .map(|(i, _)| i)
            .collect();
        if targets.len() != 1 {
            return Err(Error::invalid(
                "scene",
                format!("{scene_id}: expected exactly one target track, found {}", targets.len()),
            ));
        }
        let egos = tracks.iter().filter(|t| t.role == Role::Ego).count();
        if egos > 1 {
            return Err(Error::invalid("scene", format!("{scene_id}: {egos} ego tracks")));
        }
        for t in &tracks {
            if t.observed.len() != time.m {
                return Err(Error::invalid(
                    "scene",
                    format!("track {} has {} points, m={}", t.agent_id, t.observed.len(), time.m),
                ));
            }
        }
        for (i, a) in tracks.iter().enumerate() {
            if tracks[..i].iter().any(|b| b.agent_id == a.agent_id) {
                return Err(Error::invalid("scene", format!("duplicate agent id {}", a.agent_id)));
            }
        }
        if let Some(f) = &future {
            if f.len() != time.n {
                return Err(Error::invalid(
                    "scene",
                    format!("future has {} points, n={}", f.len(), time.n),
                ));
            }
            if f.iter().any(|p| !p.is_finite()) {
                return Err(Error::invalid("scene", "non-finite future point"));
            }
        }
        Ok(Scene {
            scene_id,
            tracks,
            target: targets[0],
            future,
            time,
        })
    }

    pub fn scene_id(&self) -> &str {
        &self.scene_id
    }

    pub fn tracks(&self) -> &[AgentTrack] {
        &self.tracks
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn target(&self) -> &AgentTrack {
        &self.tracks[self.target]
    }

    pub fn target_id(&self) -> &str {
        &self.tracks[self.target].agent_id
    }

    pub fn future(&self) -> Option<&[Point2]> {
        self.future.as_deref()
    }

    pub fn time(&self) -> TimeBase {
        self.time
    }

    pub fn without_future(&self) -> Scene {
        Scene {
            future: None,
            ..self.clone()
        }
    }

    /// Applies `f` to every observed and future point.
    pub fn map_points(&self, f: impl Fn(Point2) -> Point2) -> Scene {
        Scene {
            scene_id: self.scene_id.clone(),
            tracks: self.tracks.iter().map(|t| t.map_points(&f)).collect(),
            target: self.target,
            future: self.future.as_ref().map(|v| v.iter().map(|&p| f(p)).collect()),
            time: self.time,
        }
    }

    /// Same scene with tracks reordered by `order` (a permutation of indices).
    pub fn with_track_order(&self, order: &[usize]) -> Result<Scene> {
        let tracks = order.iter().map(|&i| self.tracks[i].clone()).collect();
        Scene::new(self.scene_id.clone(), tracks, self.future.clone(), self.time)
    }

    pub(crate) fn with_tracks(&self, tracks: Vec<AgentTrack>) -> Scene {
        Scene {
            tracks,
            ..self.clone()
        }
    }
}

/// Read access to a binarized feasible area. Goal sampling is generic over
/// this so callers can observe or restrict grid access.
pub trait Occupancy {
    fn resolution(&self) -> f64;
    /// Cell containing `p`, or `None` outside the grid.
    fn cell_of(&self, p: Point2) -> Option<(usize, usize)>;
    fn is_feasible(&self, cell: (usize, usize)) -> bool;
    fn cell_center(&self, cell: (usize, usize)) -> Point2;
}

/// Driveable-area bitmap. Cell `(i, j)` covers
/// `[origin.x + i*res, origin.x + (i+1)*res) x [origin.y + j*res, ...)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibleGrid {
    origin: Point2,
    resolution: f64,
    width: usize,
    height: usize,
    cells: Vec<bool>,
}

impl FeasibleGrid {
    pub fn new(
        origin: Point2,
        resolution: f64,
        width: usize,
        height: usize,
        cells: Vec<bool>,
    ) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::invalid("grid", format!("resolution {resolution}")));
        }
        if !origin.is_finite() {
            return Err(Error::invalid("grid", "non-finite origin"));
        }
        if cells.len() != width * height {
            return Err(Error::invalid(
                "grid",
                format!("{} cells for {width}x{height}", cells.len()),
            ));
        }
        Ok(FeasibleGrid {
            origin,
            resolution,
            width,
            height,
            cells,
        })
    }

    /// Grid of the given extent with every cell set to `value`.
    pub fn filled(origin: Point2, resolution: f64, width: usize, height: usize, value: bool) -> Result<Self> {
        FeasibleGrid::new(origin, resolution, width, height, vec![value; width * height])
    }

    /// Builds a grid by evaluating `feasible` at every cell center.
    pub fn from_fn(
        origin: Point2,
        resolution: f64,
        width: usize,
        height: usize,
        feasible: impl Fn(Point2) -> bool,
    ) -> Result<Self> {
        let mut cells = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                let c = Point2::new(
                    origin.x + (i as f64 + 0.5) * resolution,
                    origin.y + (j as f64 + 0.5) * resolution,
                );
                cells.push(feasible(c));
            }
        }
        FeasibleGrid::new(origin, resolution, width, height, cells)
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[j * self.width + i]
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.cell_of(p).is_some()
    }

    pub fn is_feasible_at(&self, p: Point2) -> bool {
        self.cell_of(p).is_some_and(|c| self.is_feasible(c))
    }

    pub fn feasible_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Rotates the grid by `quarter_turns` x 90 degrees counter-clockwise
    /// about `pivot`. Cell centers map exactly onto cell centers.
    pub fn rotate_quarter(&self, quarter_turns: u8, pivot: Point2) -> FeasibleGrid {
        let k = quarter_turns % 4;
        if k == 0 {
            return self.clone();
        }
        let (w, h) = if k % 2 == 1 {
            (self.height, self.width)
        } else {
            (self.width, self.height)
        };
        let ext = Point2::new(
            self.width as f64 * self.resolution,
            self.height as f64 * self.resolution,
        );
        let corners = [
            self.origin,
            self.origin + Point2::new(ext.x, 0.0),
            self.origin + Point2::new(0.0, ext.y),
            self.origin + ext,
        ]
        .map(|c| (c - pivot).rotate_quarter(k) + pivot);
        let origin = Point2::new(
            corners.iter().map(|c| c.x).fold(f64::INFINITY, f64::min),
            corners.iter().map(|c| c.y).fold(f64::INFINITY, f64::min),
        );
        let mut cells = vec![false; w * h];
        for j in 0..self.height {
            for i in 0..self.width {
                // Rotating index space: new (i', j') from old (i, j).
                let (ni, nj) = match k {
                    1 => (self.height - 1 - j, i),
                    2 => (self.width - 1 - i, self.height - 1 - j),
                    _ => (j, self.width - 1 - i),
                };
                cells[nj * w + ni] = self.get(i, j);
            }
        }
        FeasibleGrid {
            origin,
            resolution: self.resolution,
            width: w,
            height: h,
            cells,
        }
    }
}

impl Occupancy for FeasibleGrid {
    fn resolution(&self) -> f64 {
        self.resolution
    }

    fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    fn is_feasible(&self, (i, j): (usize, usize)) -> bool {
        self.get(i, j)
    }

    fn cell_center(&self, (i, j): (usize, usize)) -> Point2 {
        Point2::new(
            self.origin.x + (i as f64 + 0.5) * self.resolution,
            self.origin.y + (j as f64 + 0.5) * self.resolution,
        )
    }
}

/// A scene together with the feasible area around its target agent.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub scene: Scene,
    pub grid: FeasibleGrid,
}

impl SceneBundle {
    /// Every observed point of the target must fall inside the grid.
    pub fn new(scene: Scene, grid: FeasibleGrid) -> Result<Self> {
        if let Some(p) = scene.target().observed().iter().find(|p| !grid.contains(**p)) {
            return Err(Error::invalid(
                "bundle",
                format!("{}: target point ({}, {}) outside the grid", scene.scene_id(), p.x, p.y),
            ));
        }
        Ok(SceneBundle { scene, grid })
    }
}
