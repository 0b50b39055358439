//! FGSM and PGD adversarial perturbations, against a single network or a
//! posterior ensemble.
//!
//! FGSM moves every pixel by `delta` along the sign of the input-loss
//! gradient; PGD iterates smaller steps and projects each iterate back
//! into the ε-L∞ ball around the clean input. Ensemble attacks replace
//! the gradient with the sum over posterior samples (same sign as the
//! mean). Every iterate is clipped to the valid pixel range.

use crate::bayes::PosteriorEnsemble;
use crate::error::{Error, Result};
use crate::nn::{grad_loss_input, NetworkSpec, WeightVector};
use crate::rng::substream;
use rand::Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMethod {
    Fgsm,
    Pgd,
}

/// Attack hyperparameters shared by both methods.
#[derive(Debug, Clone, Copy)]
pub struct AttackConfig {
    pub method: AttackMethod,
    /// FGSM strength.
    pub delta: f64,
    /// PGD ball radius.
    pub eps: f64,
    /// PGD step size (α ≤ ε).
    pub alpha: f64,
    /// PGD iterations.
    pub steps: usize,
    /// Start PGD from a uniform draw inside the ball.
    pub random_init: bool,
    /// Valid pixel range, applied after every step.
    pub clip: (f64, f64),
    pub seed: u64,
}

impl AttackConfig {
    pub fn fgsm(delta: f64) -> Self {
        Self {
            method: AttackMethod::Fgsm,
            delta,
            eps: delta,
            alpha: delta,
            steps: 1,
            random_init: false,
            clip: (0.0, 1.0),
            seed: 0,
        }
    }

    /// Desk-scale PGD defaults: ε = 0.25, α = 0.05, 10 steps, random init.
    pub fn pgd(eps: f64, alpha: f64, steps: usize, random_init: bool) -> Self {
        Self {
            method: AttackMethod::Pgd,
            delta: eps,
            eps,
            alpha,
            steps,
            random_init,
            clip: (0.0, 1.0),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_clip(mut self, low: f64, high: f64) -> Self {
        self.clip = (low, high);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::Parameter("delta must be finite and >= 0".into()));
        }
        if !(self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::Parameter("eps must be finite and >= 0".into()));
        }
        if self.method == AttackMethod::Pgd {
            if self.alpha > self.eps {
                return Err(Error::Parameter(format!(
                    "pgd step size alpha = {} must not exceed eps = {}",
                    self.alpha, self.eps
                )));
            }
            if self.alpha < 0.0 || !self.alpha.is_finite() {
                return Err(Error::Parameter("alpha must be finite and >= 0".into()));
            }
            if self.steps == 0 {
                return Err(Error::Parameter("pgd needs at least one step".into()));
            }
        }
        if !(self.clip.0 < self.clip.1) {
            return Err(Error::Parameter("clip range must satisfy low < high".into()));
        }
        Ok(())
    }
}

#[inline]
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_gradient(g: &[f64]) -> Result<()> {
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("attack gradient is not finite".into()));
    }
    Ok(())
}

/// One signed step of size `delta` from `x`, clipped to `clip`.
fn fgsm_step(x: &[f64], grad: &[f64], delta: f64, clip: (f64, f64)) -> Vec<f64> {
    x.iter()
        .zip(grad.iter())
        .map(|(&xi, &gi)| (xi + delta * sgn(gi)).clamp(clip.0, clip.1))
        .collect()
}

/// Project onto the ε-L∞ ball around `x`, then clip.
fn project(x: &[f64], v: &[f64], eps: f64, clip: (f64, f64)) -> Vec<f64> {
    x.iter()
        .zip(v.iter())
        .map(|(&xi, &vi)| vi.clamp(xi - eps, xi + eps).clamp(clip.0, clip.1))
        .collect()
}

fn fgsm_with(x: &[f64], cfg: &AttackConfig, grad_fn: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    cfg.validate()?;
    let g = grad_fn(x)?;
    check_gradient(&g)?;
    Ok(fgsm_step(x, &g, cfg.delta, cfg.clip))
}

/// All PGD iterates: `x_0` (the possibly randomized start) through the
/// final adversary. Every entry lies in the ball and the clip range.
fn pgd_trace_with(
    x: &[f64],
    cfg: &AttackConfig,
    grad_fn: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let mut cur: Vec<f64> = if cfg.random_init {
        let mut rng = substream(cfg.seed, "attack-init");
        let noisy: Vec<f64> = x
            .iter()
            .map(|&xi| xi + rng.random_range(-cfg.eps..=cfg.eps))
            .collect();
        project(x, &noisy, cfg.eps, cfg.clip)
    } else {
        x.to_vec()
    };
    let mut iterates = Vec::with_capacity(cfg.steps + 1);
    iterates.push(cur.clone());
    for _ in 0..cfg.steps {
        let g = grad_fn(&cur)?;
        check_gradient(&g)?;
        let stepped: Vec<f64> = cur
            .iter()
            .zip(g.iter())
            .map(|(&ci, &gi)| ci + cfg.alpha * sgn(gi))
            .collect();
        cur = project(x, &stepped, cfg.eps, cfg.clip);
        iterates.push(cur.clone());
    }
    Ok(iterates)
}

/// Gradient summed over the ensemble (the sign of the sum equals the
/// sign of the posterior-mean gradient).
fn ensemble_grad(
    spec: &NetworkSpec,
    ensemble: &PosteriorEnsemble,
    x: &[f64],
    y: usize,
) -> Result<Vec<f64>> {
    let per: Vec<Vec<f64>> = ensemble
        .samples()
        .par_iter()
        .map(|w| grad_loss_input(spec, w, x, y))
        .collect::<Result<_>>()?;
    let mut sum = vec![0.0; x.len()];
    for g in &per {
        for (s, v) in sum.iter_mut().zip(g.iter()) {
            *s += v;
        }
    }
    Ok(sum)
}

/// Single-step attack `x + δ sgn ∇_x L(x, w)` against one network.
pub fn fgsm(spec: &NetworkSpec, w: &WeightVector, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<Vec<f64>> {
    fgsm_with(x, cfg, |v| grad_loss_input(spec, w, v, y))
}

/// Iterated projected attack against one network.
pub fn pgd(spec: &NetworkSpec, w: &WeightVector, x: &[f64], y: usize, cfg: &AttackConfig) -> Result<Vec<f64>> {
    Ok(pgd_trace(spec, w, x, y, cfg)?.pop().unwrap())
}

/// PGD with every iterate returned (ball-containment checks, debugging).
pub fn pgd_trace(
    spec: &NetworkSpec,
    w: &WeightVector,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<Vec<Vec<f64>>> {
    pgd_trace_with(x, cfg, |v| grad_loss_input(spec, w, v, y))
}

/// FGSM against the posterior: the sign of the summed per-sample input
/// gradients.
pub fn bayes_fgsm(
    spec: &NetworkSpec,
    ensemble: &PosteriorEnsemble,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    fgsm_with(x, cfg, |v| ensemble_grad(spec, ensemble, v, y))
}

/// PGD with the ensemble-mean gradient recomputed at every step.
pub fn bayes_pgd(
    spec: &NetworkSpec,
    ensemble: &PosteriorEnsemble,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<Vec<f64>> {
    Ok(bayes_pgd_trace(spec, ensemble, x, y, cfg)?.pop().unwrap())
}

pub fn bayes_pgd_trace(
    spec: &NetworkSpec,
    ensemble: &PosteriorEnsemble,
    x: &[f64],
    y: usize,
    cfg: &AttackConfig,
) -> Result<Vec<Vec<f64>>> {
    pgd_trace_with(x, cfg, |v| ensemble_grad(spec, ensemble, v, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{EnsembleMeta, InferenceMethod};
    use crate::nn::{Activation, LayerSpec};
    use crate::rng::substream;

    fn logistic_spec() -> NetworkSpec {
        // Logits (0, w x): softmax[1] = sigmoid(w x).
        NetworkSpec::new(
            vec![LayerSpec {
                input_width: 1,
                output_width: 2,
                has_bias: false,
                activation: Activation::Identity,
            }],
            2,
        )
        .unwrap()
    }

    fn wide_clip(mut cfg: AttackConfig) -> AttackConfig {
        cfg.clip = (-1e9, 1e9);
        cfg
    }

    #[test]
    fn zero_delta_is_identity() {
        let spec = logistic_spec();
        let w = WeightVector::from_values(&spec, vec![0.0, 2.0]).unwrap();
        let x = [0.4];
        let adv = fgsm(&spec, &w, &x, 1, &AttackConfig::fgsm(0.0)).unwrap();
        assert_eq!(adv, x.to_vec());
    }

    #[test]
    fn zero_gradient_is_identity() {
        let spec = NetworkSpec::mlp(3, &[2], 2, false).unwrap();
        let w = WeightVector::zeros(&spec);
        let x = [0.5, 0.2, 0.8];
        let adv = fgsm(&spec, &w, &x, 0, &AttackConfig::fgsm(0.1)).unwrap();
        assert_eq!(adv, x.to_vec());
    }

    #[test]
    fn logistic_fgsm_hand_case() {
        // w = 2, x = 0.4, class 1: dL/dx = (sigmoid(0.8) - 1) * 2 < 0,
        // so delta = 0.1 moves x down to 0.3.
        let spec = logistic_spec();
        let w = WeightVector::from_values(&spec, vec![0.0, 2.0]).unwrap();
        let adv = fgsm(&spec, &w, &[0.4], 1, &AttackConfig::fgsm(0.1)).unwrap();
        assert!((adv[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn fgsm_perturbation_is_three_valued_before_clipping() {
        let mut rng = substream(51, "attack-threeval");
        use rand::Rng;
        for _ in 0..50 {
            let spec = NetworkSpec::mlp(4, &[5], 3, true).unwrap();
            let w = WeightVector::init(&spec, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let delta = 0.07;
            let cfg = wide_clip(AttackConfig::fgsm(delta));
            let adv = fgsm(&spec, &w, &x, 1, &cfg).unwrap();
            for (a, b) in adv.iter().zip(x.iter()) {
                let d = a - b;
                assert!(
                    d == 0.0 || (d - delta).abs() < 1e-15 || (d + delta).abs() < 1e-15,
                    "perturbation {d} not in {{-delta, 0, delta}}"
                );
            }
        }
    }

    #[test]
    fn single_step_pgd_equals_fgsm() {
        let mut rng = substream(53, "attack-coincide");
        let spec = NetworkSpec::mlp(3, &[4], 2, true).unwrap();
        let w = WeightVector::init(&spec, &mut rng);
        let x = [0.3, 0.6, 0.9];
        let eps = 0.2;
        let mut pgd_cfg = AttackConfig::pgd(eps, eps, 1, false);
        pgd_cfg.delta = eps;
        let a = pgd(&spec, &w, &x, 0, &pgd_cfg).unwrap();
        let b = fgsm(&spec, &w, &x, 0, &AttackConfig::fgsm(eps)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_eps_pgd_is_identity() {
        let spec = logistic_spec();
        let w = WeightVector::from_values(&spec, vec![0.0, 1.5]).unwrap();
        let x = [0.7];
        let cfg = AttackConfig::pgd(0.0, 0.0, 5, true);
        let adv = pgd(&spec, &w, &x, 1, &cfg).unwrap();
        assert_eq!(adv, x.to_vec());
    }

    #[test]
    fn every_pgd_iterate_stays_in_the_ball() {
        let mut rng = substream(57, "attack-ball");
        use rand::Rng;
        for trial in 0..200 {
            let spec = NetworkSpec::mlp(5, &[6], 3, true).unwrap();
            let w = WeightVector::init(&spec, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let eps = rng.random_range(0.01..0.4);
            let alpha = eps * rng.random_range(0.1..1.0);
            let cfg = AttackConfig::pgd(eps, alpha, 6, true).with_seed(trial);
            let iterates = pgd_trace(&spec, &w, &x, 0, &cfg).unwrap();
            for it in &iterates {
                for (a, b) in it.iter().zip(x.iter()) {
                    assert!((a - b).abs() <= eps + 1e-12);
                    assert!((0.0..=1.0).contains(a));
                }
            }
        }
    }

    #[test]
    fn random_init_is_reproducible() {
        let spec = NetworkSpec::mlp(3, &[3], 2, false).unwrap();
        let w = WeightVector::init(&spec, &mut substream(59, "attack-seed"));
        let x = [0.2, 0.5, 0.8];
        let cfg = AttackConfig::pgd(0.25, 0.05, 10, true).with_seed(17);
        let a = pgd(&spec, &w, &x, 1, &cfg).unwrap();
        let b = pgd(&spec, &w, &x, 1, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn alpha_above_eps_is_rejected() {
        let cfg = AttackConfig::pgd(0.1, 0.2, 5, false);
        assert!(cfg.validate().is_err());
        // alpha = eps is allowed (single-step coincidence case).
        assert!(AttackConfig::pgd(0.1, 0.1, 1, false).validate().is_ok());
    }

    fn ensemble_of(samples: Vec<WeightVector>) -> PosteriorEnsemble {
        PosteriorEnsemble::new(samples, InferenceMethod::Hmc, EnsembleMeta::default()).unwrap()
    }

    #[test]
    fn identical_ensemble_matches_deterministic_fgsm() {
        let spec = NetworkSpec::mlp(3, &[4], 2, true).unwrap();
        let w = WeightVector::init(&spec, &mut substream(61, "attack-bayes"));
        let x = [0.1, 0.9, 0.5];
        let cfg = AttackConfig::fgsm(0.12);
        let det = fgsm(&spec, &w, &x, 0, &cfg).unwrap();
        let ens = ensemble_of(vec![w.clone(), w.clone(), w]);
        let bay = bayes_fgsm(&spec, &ens, &x, 0, &cfg).unwrap();
        assert_eq!(det, bay);
    }

    #[test]
    fn opposite_gradients_cancel() {
        // Samples [0, t] and [0, -t] at x = 0 have exactly opposite
        // input-loss gradients, so the summed gradient is zero.
        let spec = logistic_spec();
        let a = WeightVector::from_values(&spec, vec![0.0, 3.0]).unwrap();
        let b = WeightVector::from_values(&spec, vec![0.0, -3.0]).unwrap();
        let ens = ensemble_of(vec![a, b]);
        let x = [0.0];
        let adv = bayes_fgsm(&spec, &ens, &x, 0, &AttackConfig::fgsm(0.2)).unwrap();
        assert_eq!(adv, x.to_vec());
    }

    #[test]
    fn three_model_gradient_sum_hand_case() {
        // Logistic models w in {1, 2, 3}, x = 0.5, label 1:
        // each gradient is (sigmoid(w x) - 1) w, all negative, so the
        // attack moves x down by delta.
        let spec = logistic_spec();
        let samples: Vec<WeightVector> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&t| WeightVector::from_values(&spec, vec![0.0, t]).unwrap())
            .collect();
        let sum: f64 = [1.0f64, 2.0, 3.0]
            .iter()
            .map(|&t| (1.0 / (1.0 + (-t * 0.5f64).exp()) - 1.0) * t)
            .sum();
        assert!(sum < 0.0);
        let ens = ensemble_of(samples);
        let adv = bayes_fgsm(&spec, &ens, &[0.5], 1, &AttackConfig::fgsm(0.1)).unwrap();
        assert!((adv[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn singleton_ensemble_pgd_equals_deterministic() {
        let spec = NetworkSpec::mlp(3, &[4], 2, false).unwrap();
        let w = WeightVector::init(&spec, &mut substream(67, "attack-spgd"));
        let x = [0.4, 0.1, 0.8];
        let cfg = AttackConfig::pgd(0.25, 0.05, 8, true).with_seed(5);
        let det = pgd(&spec, &w, &x, 1, &cfg).unwrap();
        let ens = ensemble_of(vec![w]);
        let bay = bayes_pgd(&spec, &ens, &x, 1, &cfg).unwrap();
        assert_eq!(det, bay);
    }

    #[test]
    fn single_step_bayes_pgd_equals_bayes_fgsm() {
        let spec = NetworkSpec::mlp(2, &[3], 2, true).unwrap();
        let mut rng = substream(71, "attack-bcoincide");
        let samples: Vec<WeightVector> = (0..4).map(|_| WeightVector::init(&spec, &mut rng)).collect();
        let ens = ensemble_of(samples);
        let x = [0.3, 0.7];
        let eps = 0.15;
        let mut pgd_cfg = AttackConfig::pgd(eps, eps, 1, false);
        pgd_cfg.delta = eps;
        let a = bayes_pgd(&spec, &ens, &x, 0, &pgd_cfg).unwrap();
        let b = bayes_fgsm(&spec, &ens, &x, 0, &AttackConfig::fgsm(eps)).unwrap();
        assert_eq!(a, b);
    }
}
