//! Synthetic data manifolds with closed-form tangent spaces.
//!
//! A circle or torus is embedded in the first coordinates of R^d (the
//! rest are zero), labels come from thresholding a smooth function of the
//! intrinsic coordinates, and ambient gradients split exactly into
//! tangent and normal parts. This is the desk-scale stage for testing
//! that the posterior-averaged normal gradient vanishes while tangent
//! gradients persist.

use crate::bayes::PosteriorEnsemble;
use crate::error::{Error, Result};
use crate::nn::{grad_logit_input, LabeledDataset, NetworkSpec};
use crate::rng::substream;
use rand::Rng;
use rayon::prelude::*;
use std::f64::consts::TAU;

const TORUS_MAJOR: f64 = 2.0;
const TORUS_MINOR: f64 = 1.0;
const ON_MANIFOLD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldKind {
    /// Unit circle in the first two coordinates.
    Circle,
    /// Torus (major radius 2, minor radius 1) in the first three.
    Torus,
}

/// Smooth intrinsic label function thresholded at zero into 2 classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelRule {
    /// Angular frequency of the sign pattern along the main angle.
    pub frequency: usize,
}

impl Default for LabelRule {
    fn default() -> Self {
        Self { frequency: 1 }
    }
}

impl LabelRule {
    /// g(θ, φ): sin(fθ) on the circle, sin(fθ)·cos(φ) on the torus.
    fn g(&self, kind: ManifoldKind, theta: f64, phi: f64) -> f64 {
        let base = (self.frequency as f64 * theta).sin();
        match kind {
            ManifoldKind::Circle => base,
            ManifoldKind::Torus => base * phi.cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub ambient_dim: usize,
    pub label_rule: LabelRule,
}

impl ManifoldSpec {
    pub fn circle(ambient_dim: usize) -> Result<Self> {
        if ambient_dim < 2 {
            return Err(Error::Parameter("circle needs ambient dimension >= 2".into()));
        }
        Ok(Self {
            kind: ManifoldKind::Circle,
            ambient_dim,
            label_rule: LabelRule::default(),
        })
    }

    pub fn torus(ambient_dim: usize) -> Result<Self> {
        if ambient_dim < 3 {
            return Err(Error::Parameter("torus needs ambient dimension >= 3".into()));
        }
        Ok(Self {
            kind: ManifoldKind::Torus,
            ambient_dim,
            label_rule: LabelRule::default(),
        })
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Circle => 1,
            ManifoldKind::Torus => 2,
        }
    }

    /// Chart: intrinsic coordinates to the ambient point.
    pub fn embed(&self, theta: f64, phi: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.ambient_dim];
        match self.kind {
            ManifoldKind::Circle => {
                x[0] = theta.cos();
                x[1] = theta.sin();
            }
            ManifoldKind::Torus => {
                let ring = TORUS_MAJOR + TORUS_MINOR * phi.cos();
                x[0] = ring * theta.cos();
                x[1] = ring * theta.sin();
                x[2] = TORUS_MINOR * phi.sin();
            }
        }
        x
    }

    pub fn label(&self, theta: f64, phi: f64) -> usize {
        usize::from(self.label_rule.g(self.kind, theta, phi) > 0.0)
    }

    /// Distance from the manifold (exact for both charts).
    fn off_manifold_distance(&self, x: &[f64]) -> f64 {
        let tail2: f64 = match self.kind {
            ManifoldKind::Circle => x[2..].iter().map(|v| v * v).sum(),
            ManifoldKind::Torus => x[3..].iter().map(|v| v * v).sum(),
        };
        match self.kind {
            ManifoldKind::Circle => {
                let radial = x[0].hypot(x[1]) - 1.0;
                (radial * radial + tail2).sqrt()
            }
            ManifoldKind::Torus => {
                let ring = x[0].hypot(x[1]) - TORUS_MAJOR;
                let tube = ring.hypot(x[2]) - TORUS_MINOR;
                (tube * tube + tail2).sqrt()
            }
        }
    }

    /// Orthonormal tangent basis at the on-manifold point `x`.
    fn tangent_basis(&self, x: &[f64]) -> Vec<Vec<f64>> {
        match self.kind {
            ManifoldKind::Circle => {
                let mut t = vec![0.0; self.ambient_dim];
                // (-sin θ, cos θ) = (-x1, x0) on the unit circle.
                t[0] = -x[1];
                t[1] = x[0];
                let n = t.iter().map(|v| v * v).sum::<f64>().sqrt();
                for v in &mut t {
                    *v /= n;
                }
                vec![t]
            }
            ManifoldKind::Torus => {
                let rho = x[0].hypot(x[1]);
                let (cos_t, sin_t) = (x[0] / rho, x[1] / rho);
                let (sin_p, cos_p) = (x[2] / TORUS_MINOR, (rho - TORUS_MAJOR) / TORUS_MINOR);
                let mut e_theta = vec![0.0; self.ambient_dim];
                e_theta[0] = -sin_t;
                e_theta[1] = cos_t;
                let mut e_phi = vec![0.0; self.ambient_dim];
                e_phi[0] = -sin_p * cos_t;
                e_phi[1] = -sin_p * sin_t;
                e_phi[2] = cos_p;
                vec![e_theta, e_phi]
            }
        }
    }
}

/// Uniform intrinsic samples embedded and labeled; `noise` > 0 adds
/// ambient Gaussian noise after labeling.
pub fn make_manifold_dataset(mspec: &ManifoldSpec, n: usize, noise: f64, seed: u64) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::Parameter("dataset size must be >= 1".into()));
    }
    let mut rng = substream(seed, "manifold");
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let theta = rng.random_range(0.0..TAU);
        let phi = if mspec.intrinsic_dim() == 2 {
            rng.random_range(0.0..TAU)
        } else {
            0.0
        };
        let mut x = mspec.embed(theta, phi);
        labels.push(mspec.label(theta, phi));
        if noise > 0.0 {
            use rand_distr::StandardNormal;
            for v in &mut x {
                let z: f64 = rng.sample(StandardNormal);
                *v += noise * z;
            }
        }
        inputs.push(x);
    }
    LabeledDataset::new(inputs, labels)
}

/// Evenly spaced intrinsic grid (angles `2πi/n`), no randomness.
pub fn make_manifold_grid(mspec: &ManifoldSpec, n: usize) -> Result<LabeledDataset> {
    if n == 0 {
        return Err(Error::Parameter("grid size must be >= 1".into()));
    }
    let mut inputs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    match mspec.intrinsic_dim() {
        1 => {
            for i in 0..n {
                let theta = TAU * i as f64 / n as f64;
                inputs.push(mspec.embed(theta, 0.0));
                labels.push(mspec.label(theta, 0.0));
            }
        }
        _ => {
            let side = (n as f64).sqrt().ceil() as usize;
            'outer: for i in 0..side {
                for j in 0..side {
                    if inputs.len() == n {
                        break 'outer;
                    }
                    let theta = TAU * i as f64 / side as f64;
                    let phi = TAU * j as f64 / side as f64;
                    inputs.push(mspec.embed(theta, phi));
                    labels.push(mspec.label(theta, phi));
                }
            }
        }
    }
    LabeledDataset::new(inputs, labels)
}

/// An ambient gradient split into its tangent and normal parts.
#[derive(Debug, Clone)]
pub struct GradientDecomposition {
    pub tangent: Vec<f64>,
    pub normal: Vec<f64>,
}

/// Orthogonal projection of `grad` onto the closed-form tangent space at
/// the on-manifold point `x`.
pub fn tangent_normal_decompose(mspec: &ManifoldSpec, x: &[f64], grad: &[f64]) -> Result<GradientDecomposition> {
    if x.len() != mspec.ambient_dim || grad.len() != mspec.ambient_dim {
        return Err(Error::Shape(format!(
            "point/gradient dimension must be {}",
            mspec.ambient_dim
        )));
    }
    let dist = mspec.off_manifold_distance(x);
    if dist > ON_MANIFOLD_TOL {
        return Err(Error::Geometry(format!(
            "point is off the manifold by {dist:e} (tolerance {ON_MANIFOLD_TOL:e})"
        )));
    }
    let basis = mspec.tangent_basis(x);
    let mut tangent = vec![0.0; grad.len()];
    for b in &basis {
        let coeff: f64 = b.iter().zip(grad.iter()).map(|(bi, gi)| bi * gi).sum();
        for (t, bi) in tangent.iter_mut().zip(b.iter()) {
            *t += coeff * bi;
        }
    }
    let normal: Vec<f64> = grad.iter().zip(tangent.iter()).map(|(g, t)| g - t).collect();
    Ok(GradientDecomposition { tangent, normal })
}

/// Per-point cancellation ratio of the posterior-averaged normal
/// gradient.
#[derive(Debug, Clone, Copy)]
pub struct PointZeroAvg {
    /// `‖mean_i ∇⊥f(x, w_i)‖ / mean_i ‖∇⊥f(x, w_i)‖`, in [0, 1].
    pub ratio: f64,
    /// Every per-sample normal gradient was zero at this point.
    pub degenerate: bool,
}

#[derive(Debug, Clone)]
pub struct ZeroAvgStatistic {
    /// Mean of the per-point ratios.
    pub ratio: f64,
    pub per_point: Vec<PointZeroAvg>,
}

/// Test statistic for the zero-averaging property: how much the normal
/// gradients of logit `class` cancel across the ensemble, per point and
/// averaged.
pub fn zero_avg_statistic(
    spec: &NetworkSpec,
    ensemble: &PosteriorEnsemble,
    mspec: &ManifoldSpec,
    points: &[Vec<f64>],
    class: usize,
) -> Result<ZeroAvgStatistic> {
    if points.is_empty() {
        return Err(Error::Parameter("zero_avg_statistic needs at least one point".into()));
    }
    let per_point: Vec<PointZeroAvg> = points
        .par_iter()
        .map(|x| -> Result<PointZeroAvg> {
            let mut mean_normal = vec![0.0; x.len()];
            let mut mean_norm = 0.0;
            for w in ensemble.samples() {
                let g = grad_logit_input(spec, w, x, class)?;
                let d = tangent_normal_decompose(mspec, x, &g)?;
                for (m, v) in mean_normal.iter_mut().zip(d.normal.iter()) {
                    *m += v;
                }
                mean_norm += d.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            let n = ensemble.len() as f64;
            let num = mean_normal.iter().map(|v| (v / n) * (v / n)).sum::<f64>().sqrt();
            let den = mean_norm / n;
            if den == 0.0 {
                return Ok(PointZeroAvg {
                    ratio: 0.0,
                    degenerate: true,
                });
            }
            Ok(PointZeroAvg {
                ratio: (num / den).min(1.0),
                degenerate: false,
            })
        })
        .collect::<Result<_>>()?;
    let ratio = per_point.iter().map(|p| p.ratio).sum::<f64>() / per_point.len() as f64;
    Ok(ZeroAvgStatistic { ratio, per_point })
}
