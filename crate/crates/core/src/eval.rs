//! Prediction files, dataset loading and metric aggregation.
//!
//! ```text
//! PRED <scene_id> k=<k>
//! MODE 0 c=<confidence>
//! <x> <y>            (n lines)
//! MODE 1 c=...
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::loss::{MetricReport, SceneMetrics};
use crate::model::{Model, ModelInput, PredictionSet};
use crate::scene::{load_scene_bundle, Point2, SceneBundle};

impl PredictionSet {
    pub fn to_text(&self) -> String {
        let mut out = format!("PRED {} k={}\n", self.scene_id, self.k());
        for (i, (traj, c)) in self.trajectories.iter().zip(&self.confidences).enumerate() {
            writeln!(out, "MODE {i} c={c:.9}").expect("string write");
            for p in traj {
                writeln!(out, "{:.6} {:.6}", p.x, p.y).expect("string write");
            }
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| err(1, "empty prediction file"))?;
        let head: Vec<&str> = head.split_whitespace().collect();
        let k: usize = match head.as_slice() {
            ["PRED", _, k] => k
                .strip_prefix("k=")
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| err(1, "bad k"))?,
            _ => return Err(err(1, "expected `PRED <scene_id> k=<k>`")),
        };
        let scene_id = head[1].to_string();
        let mut trajectories: Vec<Vec<Point2>> = Vec::new();
        let mut confidences = Vec::new();
        for (i, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["MODE", idx, c] => {
                    if idx.parse::<usize>().ok() != Some(trajectories.len()) {
                        return Err(err(i + 1, "modes out of order"));
                    }
                    let c = c
                        .strip_prefix("c=")
                        .and_then(|v| v.parse::<f64>().ok())
                        .ok_or_else(|| err(i + 1, "bad confidence"))?;
                    confidences.push(c);
                    trajectories.push(Vec::new());
                }
                [x, y] => {
                    let (Ok(x), Ok(y)) = (x.parse(), y.parse()) else {
                        return Err(err(i + 1, "bad point"));
                    };
                    trajectories
                        .last_mut()
                        .ok_or_else(|| err(i + 1, "point before MODE"))?
                        .push(Point2::new(x, y));
                }
                _ => return Err(err(i + 1, "unexpected record")),
            }
        }
        if trajectories.len() != k {
            return Err(err(1, "mode count does not match k"));
        }
        let n = trajectories.first().map_or(0, Vec::len);
        if n == 0 || trajectories.iter().any(|t| t.len() != n) {
            return Err(err(1, "modes must have the same non-zero length"));
        }
        let total: f64 = confidences.iter().sum();
        if (total - 1.0).abs() > 1e-6 || confidences.iter().any(|c| *c < 0.0) {
            return Err(Error::UnnormalizedConfidences(total));
        }
        Ok(PredictionSet {
            scene_id,
            trajectories,
            confidences,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

/// Bundle manifests (`*.bundle`) in `dir`, sorted by file name.
pub fn bundle_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "bundle") {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<SceneBundle>> {
    let paths = bundle_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::invalid("dataset", format!("no .bundle files in {}", dir.display())));
    }
    paths.iter().map(|p| load_scene_bundle(p)).collect()
}

/// Prediction for one bundle, reduced to the `k` most confident modes.
pub fn predict_bundle(model: &Model, features: &FeatureConfig, bundle: &SceneBundle, k: usize) -> Result<PredictionSet> {
    let input = ModelInput::prepare(&bundle.scene, &bundle.grid, model.config(), features)?;
    let pred = model.predict(&input)?;
    if k == pred.k() {
        Ok(pred)
    } else {
        pred.top_k(k)
    }
}

/// Mean metrics over `bundles` plus the per-scene values in input order.
pub fn evaluate(
    model: &Model,
    features: &FeatureConfig,
    bundles: &[SceneBundle],
    k: usize,
) -> Result<(MetricReport, Vec<(String, SceneMetrics)>)> {
    if bundles.is_empty() {
        return Err(Error::invalid("dataset", "no scenes to evaluate"));
    }
    let per_scene: Vec<Result<(String, SceneMetrics)>> = bundles
        .par_iter()
        .map(|b| {
            let gt = b
                .scene
                .future()
                .ok_or_else(|| Error::invalid("scene", format!("{} has no future", b.scene.scene_id())))?;
            let pred = predict_bundle(model, features, b, k)?;
            let m = SceneMetrics::compute(&pred.trajectories, &pred.confidences, gt)?;
            Ok((b.scene.scene_id().to_string(), m))
        })
        .collect();
    let per_scene = per_scene.into_iter().collect::<Result<Vec<_>>>()?;
    let metrics: Vec<SceneMetrics> = per_scene.iter().map(|(_, m)| *m).collect();
    Ok((MetricReport::from_scenes(k, &metrics), per_scene))
}

/// One `SCENE <id> ade= fde= minade<k>= minfde<k>=` line per scene.
pub fn breakdown_text(k: usize, rows: &[(String, SceneMetrics)]) -> String {
    let mut out = String::new();
    for (id, m) in rows {
        writeln!(
            out,
            "SCENE {id} ade={:.6} fde={:.6} minade{k}={:.6} minfde{k}={:.6}",
            m.ade, m.fde, m.min_ade_k, m.min_fde_k
        )
        .expect("string write");
    }
    out
}
