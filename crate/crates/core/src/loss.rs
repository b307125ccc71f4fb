//! Mixture NLL, displacement errors and best-of-k metrics.
//!
//! Every metric exists twice: plain functions over points for evaluation,
//! and graph versions for training.

use std::fmt;

use crate::error::{Error, Result};
use crate::scene::Point2;
use crate::tensor::{Graph, Tensor, Var};

/// Weights of `alpha * NLL + beta * ADE + gamma * FDE`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.75,
            beta: 1.0,
            gamma: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        if [alpha, beta, gamma].iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("loss weights", format!("{alpha}, {beta}, {gamma}")));
        }
        Ok(LossWeights { alpha, beta, gamma })
    }
}

fn check_len(a: &[Point2], b: &[Point2]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Mean Euclidean distance over all steps.
pub fn ade(pred: &[Point2], gt: &[Point2]) -> Result<f64> {
    check_len(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| p.distance(*g)).sum::<f64>() / pred.len() as f64)
}

/// Euclidean distance between the final points.
pub fn fde(pred: &[Point2], gt: &[Point2]) -> Result<f64> {
    check_len(pred, gt)?;
    Ok(pred[pred.len() - 1].distance(gt[gt.len() - 1]))
}

fn argmin_by(
    preds: &[Vec<Point2>],
    gt: &[Point2],
    metric: fn(&[Point2], &[Point2]) -> Result<f64>,
) -> Result<(f64, usize)> {
    if preds.is_empty() {
        return Err(Error::invalid("predictions", "no modes"));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, p) in preds.iter().enumerate() {
        let v = metric(p, gt)?;
        if v < best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

/// Smallest ADE over modes and the winning mode index.
pub fn min_ade_k(preds: &[Vec<Point2>], gt: &[Point2]) -> Result<(f64, usize)> {
    argmin_by(preds, gt, ade)
}

/// Smallest FDE over modes and the winning mode index.
pub fn min_fde_k(preds: &[Vec<Point2>], gt: &[Point2]) -> Result<(f64, usize)> {
    argmin_by(preds, gt, fde)
}

/// `-log sum_k exp(log c_k - 1/2 sum_t |p_kt - g_t|^2)` (unit-covariance
/// Gaussian mixture), evaluated with a max-shifted log-sum-exp.
pub fn nll(preds: &[Vec<Point2>], confidences: &[f64], gt: &[Point2]) -> Result<f64> {
    if preds.len() != confidences.len() || preds.is_empty() {
        return Err(Error::LengthMismatch(preds.len(), confidences.len()));
    }
    let total: f64 = confidences.iter().sum();
    if (total - 1.0).abs() > 1e-6 || confidences.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::UnnormalizedConfidences(total));
    }
    let mut logits = Vec::with_capacity(preds.len());
    for (p, c) in preds.iter().zip(confidences) {
        check_len(p, gt)?;
        let sse: f64 = p.iter().zip(gt).map(|(a, b)| (*a - *b).dot(*a - *b)).sum();
        logits.push(c.ln() - 0.5 * sse);
    }
    Ok(-crate::tensor::graph::logsumexp_slice(&logits))
}

/// Graph nodes of the composite training loss for one scene.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub nll: Var,
    pub ade: Var,
    pub fde: Var,
    /// Mode with the smallest FDE; receives the ADE/FDE regularizers.
    pub best_mode: usize,
}

/// `alpha * NLL + beta * ADE(best) + gamma * FDE(best)` where `preds` is
/// `[k, n, 2]`, `logits` is `[k]` (confidences are its softmax) and the best
/// mode is the one with the smallest final displacement.
pub fn total_loss(
    g: &mut Graph,
    preds: Var,
    logits: Var,
    gt: &[Point2],
    w: &LossWeights,
) -> Result<LossTerms> {
    let shape = g.shape(preds).to_vec();
    if shape.len() != 3 || shape[2] != 2 || shape[1] != gt.len() || gt.is_empty() {
        return Err(Error::shape("total_loss", format!("preds {shape:?} vs {} gt points", gt.len())));
    }
    let (k, n) = (shape[0], shape[1]);
    if g.shape(logits) != [k] {
        return Err(Error::shape("total_loss", format!("logits {:?} for {k} modes", g.shape(logits))));
    }
    let gt_t = g.constant(Tensor::new(vec![n, 2], gt.iter().flat_map(|p| [p.x, p.y]).collect())?);
    let diff = g.sub(preds, gt_t)?;
    let sq = g.mul(diff, diff)?;
    let step_sq = g.sum(sq, 2)?; // [k, n]
    let sse = g.sum(step_sq, 1)?; // [k]

    let lse = g.logsumexp(logits, 0)?;
    let log_c = g.sub(logits, lse)?;
    let half = g.scale(sse, -0.5);
    let joint = g.add(log_c, half)?;
    let nll = g.logsumexp(joint, 0)?;
    let nll = g.neg(nll);

    let dist = g.sqrt(step_sq)?; // [k, n]
    let ade_k = g.mean(dist, 1)?; // [k]
    let fde_k = g.slice(dist, 1, n - 1, n)?; // [k, 1]
    let best_mode = g
        .value(fde_k)
        .data()
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc })
        .0;
    let ade_best = g.slice(ade_k, 0, best_mode, best_mode + 1)?;
    let ade = g.sum_all(ade_best);
    let fde_best = g.slice(fde_k, 0, best_mode, best_mode + 1)?;
    let fde = g.sum_all(fde_best);

    let a = g.scale(nll, w.alpha);
    let b = g.scale(ade, w.beta);
    let c = g.scale(fde, w.gamma);
    let ab = g.add(a, b)?;
    let total = g.add(ab, c)?;
    Ok(LossTerms {
        total,
        nll,
        ade,
        fde,
        best_mode,
    })
}

/// Aggregate evaluation metrics (means over scenes).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricReport {
    /// ADE/FDE of the most confident mode.
    pub ade: f64,
    pub fde: f64,
    pub min_ade_k: f64,
    pub min_fde_k: f64,
    pub k: usize,
    pub scenes: usize,
}

/// Per-scene metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneMetrics {
    pub ade: f64,
    pub fde: f64,
    pub min_ade_k: f64,
    pub min_fde_k: f64,
}

impl SceneMetrics {
    pub fn compute(preds: &[Vec<Point2>], confidences: &[f64], gt: &[Point2]) -> Result<Self> {
        if preds.len() != confidences.len() || preds.is_empty() {
            return Err(Error::LengthMismatch(preds.len(), confidences.len()));
        }
        let top = confidences
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc })
            .0;
        Ok(SceneMetrics {
            ade: ade(&preds[top], gt)?,
            fde: fde(&preds[top], gt)?,
            min_ade_k: min_ade_k(preds, gt)?.0,
            min_fde_k: min_fde_k(preds, gt)?.0,
        })
    }
}

impl MetricReport {
    pub fn from_scenes(k: usize, scenes: &[SceneMetrics]) -> Self {
        let n = scenes.len().max(1) as f64;
        let mean = |f: fn(&SceneMetrics) -> f64| scenes.iter().map(f).sum::<f64>() / n;
        MetricReport {
            ade: mean(|s| s.ade),
            fde: mean(|s| s.fde),
            min_ade_k: mean(|s| s.min_ade_k),
            min_fde_k: mean(|s| s.min_fde_k),
            k,
            scenes: scenes.len(),
        }
    }
}

impl fmt::Display for MetricReport {
    /// `EVAL scenes=<N> ade=<f> fde=<f> minade<k>=<f> minfde<k>=<f>`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "EVAL scenes={} ade={:.6} fde={:.6} minade{k}={:.6} minfde{k}={:.6}",
            self.scenes,
            self.ade,
            self.fde,
            self.min_ade_k,
            self.min_fde_k,
            k = self.k
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(pts: &[(f64, f64)]) -> Vec<Point2> {
        pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()
    }

    #[test]
    fn nll_worked_examples() {
        let gt = traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.5)]);
        assert_eq!(nll(&[gt.clone()], &[1.0], &gt).unwrap(), 0.0);

        let mut off = gt.clone();
        off[1].x += 1.0;
        assert!((nll(&[off], &[1.0], &gt).unwrap() - 0.5).abs() < 1e-12);

        let far: Vec<Point2> = gt.iter().map(|p| *p + Point2::new(100.0, 0.0)).collect();
        let v = nll(&[gt.clone(), far], &[0.5, 0.5], &gt).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_rejects_unnormalized() {
        let gt = traj(&[(0.0, 0.0)]);
        assert!(matches!(
            nll(&[gt.clone(), gt.clone()], &[0.5, 0.6], &gt),
            Err(Error::UnnormalizedConfidences(_))
        ));
    }

    #[test]
    fn displacement_errors() {
        let gt = traj(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        assert_eq!(ade(&gt, &gt).unwrap(), 0.0);
        let shifted: Vec<Point2> = gt.iter().map(|p| *p + Point2::new(1.0, 0.0)).collect();
        assert_eq!(ade(&shifted, &gt).unwrap(), 1.0);
        let mut end = gt.clone();
        end[2] = end[2] + Point2::new(3.0, 4.0);
        assert_eq!(fde(&end, &gt).unwrap(), 5.0);
        assert!(matches!(ade(&gt[..2], &gt), Err(Error::LengthMismatch(2, 3))));
    }

    #[test]
    fn min_metrics() {
        let gt = traj(&[(0.0, 0.0), (1.0, 0.0)]);
        let single = vec![traj(&[(0.0, 1.0), (1.0, 1.0)])];
        assert_eq!(min_ade_k(&single, &gt).unwrap(), (ade(&single[0], &gt).unwrap(), 0));
        let mut modes: Vec<Vec<Point2>> = (0..6).map(|i| traj(&[(0.0, i as f64 + 1.0), (1.0, 2.0)])).collect();
        modes[4] = gt.clone();
        assert_eq!(min_fde_k(&modes, &gt).unwrap(), (0.0, 4));
        assert_eq!(min_ade_k(&modes, &gt).unwrap(), (0.0, 4));
    }

    #[test]
    fn graph_loss_matches_values() {
        let gt = traj(&[(0.0, 0.0), (1.0, 0.2), (2.1, 0.3)]);
        let modes = vec![traj(&[(0.1, 0.0), (1.2, 0.1), (2.0, 0.9)]), traj(&[(0.0, -0.3), (0.8, 0.0), (1.5, 0.0)])];
        let logits = [0.3, -0.4];
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        let conf: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();

        let mut g = Graph::new();
        let p = g.leaf(
            Tensor::new(vec![2, 3, 2], modes.iter().flatten().flat_map(|p| [p.x, p.y]).collect()).unwrap(),
            true,
        );
        let l = g.leaf(Tensor::vector(logits.to_vec()), true);
        let w = LossWeights::default();
        let terms = total_loss(&mut g, p, l, &gt, &w).unwrap();
        let expect_nll = nll(&modes, &conf, &gt).unwrap();
        let (best_fde, best) = min_fde_k(&modes, &gt).unwrap();
        let best_ade = ade(&modes[best], &gt).unwrap();
        assert_eq!(terms.best_mode, best);
        assert!((g.value(terms.nll).item() - expect_nll).abs() < 1e-12);
        assert!((g.value(terms.ade).item() - best_ade).abs() < 1e-12);
        assert!((g.value(terms.fde).item() - best_fde).abs() < 1e-12);
        let expect = 0.75 * expect_nll + best_ade + 0.5 * best_fde;
        assert!((g.value(terms.total).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn exact_unimodal_loss_is_zero() {
        let gt = traj(&[(0.0, 0.0), (1.0, 0.2)]);
        let mut g = Graph::new();
        let p = g.leaf(Tensor::new(vec![1, 2, 2], vec![0.0, 0.0, 1.0, 0.2]).unwrap(), true);
        let l = g.leaf(Tensor::vector(vec![0.7]), true);
        let t = total_loss(&mut g, p, l, &gt, &LossWeights::default()).unwrap();
        assert_eq!(g.value(t.total).item(), 0.0);
        g.backward(t.total).unwrap();
        assert!(g.grad(p).unwrap().data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn report_line_format() {
        let r = MetricReport { ade: 1.0, fde: 2.0, min_ade_k: 0.5, min_fde_k: 0.75, k: 6, scenes: 3 };
        assert_eq!(
            r.to_string(),
            "EVAL scenes=3 ade=1.000000 fde=2.000000 minade6=0.500000 minfde6=0.750000"
        );
    }
}
