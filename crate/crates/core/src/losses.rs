//! Mask-branch losses as value-and-gradient computations.
//!
//! All sums use pairwise reduction in a fixed order so values are
//! bit-reproducible regardless of how cells are produced.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};

/// Number of character-segmentation classes: background plus 36 symbols.
pub const CHAR_CLASSES: usize = 37;

/// Loss weights. All default to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            beta: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha1, self.alpha2, self.beta]
            .iter()
            .any(|w| !(*w >= 0.0 && w.is_finite()))
        {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// Same shape as the logits.
    pub gradient: Array2<f64>,
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of `sigmoid(logits)` against a {0,1} target.
///
/// Per cell, `-[y ln S(x) + (1-y) ln(1-S(x))] = softplus(x) - y x`, and the
/// gradient is `(S(x) - y) / N`.
pub fn global_loss(logits: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<LossReport> {
    if logits.dim() != target.dim() {
        return Err(Error::contract(format!(
            "logits {:?} and target {:?} differ in shape",
            logits.dim(),
            target.dim()
        )));
    }
    if let Some(t) = target.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::contract(format!("global target value {t} not in {{0, 1}}")));
    }
    let n = logits.len();
    if n == 0 {
        return Err(Error::contract("empty logits"));
    }
    let per_cell: Vec<f64> = logits
        .iter()
        .zip(target.iter())
        .map(|(&x, &y)| softplus(x) - y * x)
        .collect();
    let inv_n = 1.0 / n as f64;
    let gradient = Zip::from(&logits)
        .and(&target)
        .map_collect(|&x, &y| (sigmoid(x) - y) * inv_n);
    Ok(LossReport {
        value: pairwise_sum(&per_cell) * inv_n,
        gradient,
    })
}

/// Per-cell weights of the class-balanced softmax loss.
///
/// Background cells (label 0) weigh 1; character cells weigh
/// `n_neg / (n - n_neg)`, where counts exclude cells labeled -1. With no
/// background cells the character weight falls back to 1. Ignored cells get
/// weight 0.
pub fn char_weights(labels: ArrayView1<i32>) -> Array1<f64> {
    let counted = labels.iter().filter(|&&l| l >= 0).count();
    let n_neg = labels.iter().filter(|&&l| l == 0).count();
    let char_weight = if n_neg == 0 || n_neg == counted {
        1.0
    } else {
        n_neg as f64 / (counted - n_neg) as f64
    };
    labels.mapv(|l| match l {
        l if l < 0 => 0.0,
        0 => 1.0,
        _ => char_weight,
    })
}

/// Class-balanced softmax cross-entropy over `N x 37` logits.
///
/// Cells labeled -1 contribute nothing and are left out of `N`. The gradient
/// of a counted cell is `w (softmax(x) - onehot(y)) / N`.
pub fn char_loss(logits: ArrayView2<f64>, labels: ArrayView1<i32>) -> Result<LossReport> {
    let (rows, classes) = logits.dim();
    if classes != CHAR_CLASSES {
        return Err(Error::contract(format!(
            "char logits need {CHAR_CLASSES} columns, got {classes}"
        )));
    }
    if labels.len() != rows {
        return Err(Error::contract(format!(
            "{} labels for {rows} logit rows",
            labels.len()
        )));
    }
    if let Some(l) = labels
        .iter()
        .find(|&&l| !(-1..CHAR_CLASSES as i32).contains(&l))
    {
        return Err(Error::contract(format!("char label {l} out of range")));
    }
    let weights = char_weights(labels);
    let counted = labels.iter().filter(|&&l| l >= 0).count();
    let mut gradient = Array2::<f64>::zeros((rows, classes));
    if counted == 0 {
        return Ok(LossReport {
            value: 0.0,
            gradient,
        });
    }
    let inv_n = 1.0 / counted as f64;
    let mut per_cell = Vec::with_capacity(counted);
    for ((row, &label), (&w, mut grad)) in logits
        .outer_iter()
        .zip(labels.iter())
        .zip(weights.iter().zip(gradient.outer_iter_mut()))
    {
        if label < 0 {
            continue;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
        let z = pairwise_sum(&exps);
        let log_z = max + z.ln();
        let t = label as usize;
        per_cell.push(w * (log_z - row[t]));
        for (k, g) in grad.iter_mut().enumerate() {
            let y = if k == t { 1.0 } else { 0.0 };
            *g = w * (exps[k] / z - y) * inv_n;
        }
    }
    Ok(LossReport {
        value: pairwise_sum(&per_cell) * inv_n,
        gradient,
    })
}

/// `L_global + beta * L_char`.
pub fn mask_loss(global: &LossReport, chars: &LossReport, cfg: &LossConfig) -> f64 {
    global.value + cfg.beta * chars.value
}

/// `L_rpn + alpha1 * L_rcnn + alpha2 * L_mask`.
pub fn total_loss(l_rpn: f64, l_rcnn: f64, l_mask: f64, cfg: &LossConfig) -> f64 {
    l_rpn + cfg.alpha1 * l_rcnn + cfg.alpha2 * l_mask
}

/// Largest gap between the analytic gradient of `loss_fn` and central
/// differences with the given step. The gap is relative to the analytic
/// value, or absolute where that value is below 1e-8 in magnitude.
pub fn finite_diff_check<F>(loss_fn: F, logits: &Array2<f64>, step: f64) -> Result<f64>
where
    F: Fn(ArrayView2<f64>) -> Result<LossReport>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::Config(format!("finite-difference step {step} must be > 0")));
    }
    let analytic = loss_fn(logits.view())?.gradient;
    let mut probe = logits.clone();
    let mut worst: f64 = 0.0;
    for idx in ndarray::indices(logits.dim()) {
        let x = logits[idx];
        probe[idx] = x + step;
        let up = loss_fn(probe.view())?.value;
        probe[idx] = x - step;
        let down = loss_fn(probe.view())?.value;
        probe[idx] = x;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[idx];
        let err = if a.abs() < 1e-8 {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / a.abs()
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array2};

    #[test]
    fn global_loss_single_cell() {
        let r = global_loss(arr2(&[[0.0]]).view(), arr2(&[[1.0]]).view()).unwrap();
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(r.gradient[[0, 0]], -0.5);
    }

    #[test]
    fn global_loss_saturates_without_overflow() {
        let r = global_loss(arr2(&[[30.0]]).view(), arr2(&[[1.0]]).view()).unwrap();
        assert!(r.value < 1e-12 && r.value >= 0.0);
        let r = global_loss(arr2(&[[-1000.0, 1000.0]]).view(), arr2(&[[1.0, 0.0]]).view()).unwrap();
        assert!((r.value - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn global_loss_rejects_bad_inputs() {
        assert!(global_loss(arr2(&[[0.0, 1.0]]).view(), arr2(&[[1.0]]).view()).is_err());
        assert!(global_loss(arr2(&[[0.0]]).view(), arr2(&[[0.5]]).view()).is_err());
    }

    #[test]
    fn eq7_weights() {
        let w = char_weights(arr1(&[0, 0, 0, 3]).view());
        assert_eq!(w.to_vec(), vec![1.0, 1.0, 1.0, 3.0]);
        let w = char_weights(arr1(&[0, -1, 5, 5]).view());
        assert_eq!(w.to_vec(), vec![1.0, 0.0, 0.5, 0.5]);
        assert_eq!(char_weights(arr1(&[4, 5]).view()).to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn char_loss_uniform_background() {
        let r = char_loss(Array2::zeros((1, 37)).view(), arr1(&[0]).view()).unwrap();
        assert!((r.value - 37f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn char_loss_ignores_unannotated() {
        let logits = Array2::from_shape_fn((3, 37), |(i, j)| (i * j) as f64 * 0.1);
        let r = char_loss(logits.view(), arr1(&[-1, -1, -1]).view()).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn char_loss_rejects_bad_shapes() {
        assert!(char_loss(Array2::zeros((2, 36)).view(), arr1(&[0, 0]).view()).is_err());
        assert!(char_loss(Array2::zeros((2, 37)).view(), arr1(&[0]).view()).is_err());
        assert!(char_loss(Array2::zeros((1, 37)).view(), arr1(&[37]).view()).is_err());
    }

    #[test]
    fn combined_losses() {
        let g = LossReport { value: 0.5, gradient: Array2::zeros((1, 1)) };
        let c = LossReport { value: 0.25, gradient: Array2::zeros((1, 1)) };
        let cfg = LossConfig::default();
        assert_eq!(mask_loss(&g, &c, &cfg), 0.75);
        assert_eq!(mask_loss(&g, &c, &LossConfig { beta: 0.0, ..cfg }), 0.5);
        assert_eq!(total_loss(1.0, 1.0, 1.0, &cfg), 3.0);
        assert!((total_loss(0.2, 0.3, 0.5, &cfg) - 1.0).abs() < 1e-15);
        let off = LossConfig { alpha1: 0.0, alpha2: 0.0, beta: 1.0 };
        assert_eq!(total_loss(0.2, 0.3, 0.5, &off), 0.2);
        assert!(LossConfig { beta: -1.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }
}
