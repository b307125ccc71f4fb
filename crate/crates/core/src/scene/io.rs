//! Line-oriented text formats for scenes, grids and bundle manifests.
//!
//! Scene file:
//! ```text
//! SCENE <scene_id> m=<int> n=<int> hz=<int>
//! TRACK <agent_id> <role> x0 y0 ... x{m-1} y{m-1} mask=<m bits>
//! FUTURE x0 y0 ... x{n-1} y{n-1}        (optional)
//! ```
//! Grid file: `GRID ox oy res w h` followed by `h` rows of `w` characters
//! (`1` feasible, `0` not). The first row is the top of the map (largest
//! y), so the file reads like a north-up image.
//!
//! Bundle manifest:
//! ```text
//! BUNDLE v1
//! scene <path relative to the manifest>
//! grid <path relative to the manifest>
//! ```
//! Coordinates are written with 6 fractional digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{AgentTrack, FeasibleGrid, Point2, Scene, SceneBundle, TimeBase};
use crate::error::{Error, Result};

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn push_points(out: &mut String, pts: &[Point2]) {
    for p in pts {
        write!(out, " {:.6} {:.6}", p.x, p.y).expect("string write");
    }
}

pub fn write_scene(scene: &Scene) -> String {
    let tb = scene.time();
    let mut out = format!("SCENE {} m={} n={} hz={}\n", scene.scene_id(), tb.m, tb.n, tb.hz);
    for t in scene.tracks() {
        write!(out, "TRACK {} {}", t.agent_id(), t.role()).expect("string write");
        push_points(&mut out, t.observed());
        let mask: String = t.valid_mask().iter().map(|&v| if v { '1' } else { '0' }).collect();
        writeln!(out, " mask={mask}").expect("string write");
    }
    if let Some(f) = scene.future() {
        out.push_str("FUTURE");
        push_points(&mut out, f);
        out.push('\n');
    }
    out
}

fn parse_kv<T: std::str::FromStr>(tok: Option<&str>, key: &str) -> Option<T> {
    tok?.strip_prefix(key)?.strip_prefix('=')?.parse().ok()
}

fn parse_points(path: &Path, line: usize, toks: &[&str]) -> Result<Vec<Point2>> {
    if toks.len() % 2 != 0 {
        return Err(parse_err(path, line, "odd number of coordinates"));
    }
    toks.chunks(2)
        .map(|c| {
            let x = c[0].parse::<f64>();
            let y = c[1].parse::<f64>();
            match (x, y) {
                (Ok(x), Ok(y)) => Ok(Point2::new(x, y)),
                _ => Err(parse_err(path, line, format!("bad coordinate pair `{} {}`", c[0], c[1]))),
            }
        })
        .collect()
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    let text = read(path)?;
    let mut header: Option<(String, TimeBase)> = None;
    let mut tracks = Vec::new();
    let mut future = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let Some(&kind) = toks.first() else { continue };
        match kind {
            "SCENE" => {
                if header.is_some() {
                    return Err(parse_err(path, lineno, "duplicate SCENE header"));
                }
                let (Some(id), Some(m), Some(n), Some(hz)) = (
                    toks.get(1),
                    parse_kv(toks.get(2).copied(), "m"),
                    parse_kv(toks.get(3).copied(), "n"),
                    parse_kv(toks.get(4).copied(), "hz"),
                ) else {
                    return Err(parse_err(path, lineno, "expected `SCENE <id> m=<int> n=<int> hz=<int>`"));
                };
                header = Some((id.to_string(), TimeBase { m, n, hz }));
            }
            "TRACK" => {
                let Some((_, tb)) = &header else {
                    return Err(parse_err(path, lineno, "TRACK before SCENE header"));
                };
                if toks.len() < 4 {
                    return Err(parse_err(path, lineno, "truncated TRACK record"));
                }
                let role = toks[2].parse().map_err(|e: Error| parse_err(path, lineno, e.to_string()))?;
                let mask_tok = toks[toks.len() - 1]
                    .strip_prefix("mask=")
                    .ok_or_else(|| parse_err(path, lineno, "TRACK record must end with mask=<bits>"))?;
                let mask: Vec<bool> = mask_tok
                    .chars()
                    .map(|c| match c {
                        '1' => Ok(true),
                        '0' => Ok(false),
                        _ => Err(parse_err(path, lineno, "mask bits must be 0/1")),
                    })
                    .collect::<Result<_>>()?;
                let pts = parse_points(path, lineno, &toks[3..toks.len() - 1])?;
                if pts.len() != tb.m || mask.len() != tb.m {
                    return Err(Error::invalid(
                        "scene",
                        format!(
                            "{}:{lineno}: track has {} points and {} mask bits, expected m={}",
                            path.display(),
                            pts.len(),
                            mask.len(),
                            tb.m
                        ),
                    ));
                }
                tracks.push(AgentTrack::new(toks[1], role, pts, mask)?);
            }
            "FUTURE" => {
                if future.is_some() {
                    return Err(parse_err(path, lineno, "duplicate FUTURE record"));
                }
                future = Some(parse_points(path, lineno, &toks[1..])?);
            }
            other => return Err(parse_err(path, lineno, format!("unknown record `{other}`"))),
        }
    }
    let (id, tb) = header.ok_or_else(|| parse_err(path, 1, "missing SCENE header"))?;
    Scene::new(id, tracks, future, tb)
}

pub fn write_grid(grid: &FeasibleGrid) -> String {
    let o = grid.origin();
    let mut out = format!(
        "GRID {:.6} {:.6} {:.6} {} {}\n",
        o.x,
        o.y,
        super::Occupancy::resolution(grid),
        grid.width(),
        grid.height()
    );
    out.reserve((grid.width() + 1) * grid.height());
    for j in (0..grid.height()).rev() {
        for i in 0..grid.width() {
            out.push(if grid.get(i, j) { '1' } else { '0' });
        }
        out.push('\n');
    }
    out
}

pub fn read_grid(path: &Path) -> Result<FeasibleGrid> {
    let text = read(path)?;
    let mut lines = text.lines();
    let head: Vec<&str> = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty grid file"))?
        .split_whitespace()
        .collect();
    let bad = || parse_err(path, 1, "expected `GRID ox oy res w h`");
    if head.len() != 6 || head[0] != "GRID" {
        return Err(bad());
    }
    let ox: f64 = head[1].parse().map_err(|_| bad())?;
    let oy: f64 = head[2].parse().map_err(|_| bad())?;
    let res: f64 = head[3].parse().map_err(|_| bad())?;
    let w: usize = head[4].parse().map_err(|_| bad())?;
    let h: usize = head[5].parse().map_err(|_| bad())?;
    let rows: Vec<&str> = lines.filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != h {
        return Err(parse_err(path, 2, format!("expected {h} rows, found {}", rows.len())));
    }
    let mut cells = vec![false; w * h];
    for (r, row) in rows.iter().enumerate() {
        let row = row.trim();
        if row.len() != w {
            return Err(parse_err(path, r + 2, format!("expected {w} cells, found {}", row.len())));
        }
        let j = h - 1 - r;
        for (i, c) in row.bytes().enumerate() {
            cells[j * w + i] = match c {
                b'1' => true,
                b'0' => false,
                _ => return Err(parse_err(path, r + 2, "cells must be 0/1")),
            };
        }
    }
    FeasibleGrid::new(Point2::new(ox, oy), res, w, h, cells)
}

/// Writes `<stem>.scene`, `<stem>.grid` and the `.bundle` manifest at `path`.
pub fn save_scene_bundle(bundle: &SceneBundle, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new(""));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::invalid("bundle path", path.display().to_string()))?;
    let scene_name = format!("{stem}.scene");
    let grid_name = format!("{stem}.grid");
    write(&dir.join(&scene_name), &write_scene(&bundle.scene))?;
    write(&dir.join(&grid_name), &write_grid(&bundle.grid))?;
    write(path, &format!("BUNDLE v1\nscene {scene_name}\ngrid {grid_name}\n"))
}

pub fn load_scene_bundle(path: &Path) -> Result<SceneBundle> {
    let text = read(path)?;
    let dir = path.parent().unwrap_or(Path::new(""));
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == "BUNDLE v1" => {}
        _ => return Err(parse_err(path, 1, "missing `BUNDLE v1` header")),
    }
    let mut scene_path: Option<PathBuf> = None;
    let mut grid_path: Option<PathBuf> = None;
    for (i, line) in lines {
        match line.split_once(' ') {
            Some(("scene", p)) => scene_path = Some(dir.join(p.trim())),
            Some(("grid", p)) => grid_path = Some(dir.join(p.trim())),
            _ => return Err(parse_err(path, i + 1, "expected `scene <path>` or `grid <path>`")),
        }
    }
    let scene_path = scene_path.ok_or_else(|| parse_err(path, 1, "manifest lacks a scene entry"))?;
    let grid_path = grid_path.ok_or_else(|| parse_err(path, 1, "manifest lacks a grid entry"))?;
    SceneBundle::new(read_scene(&scene_path)?, read_grid(&grid_path)?)
}
