//! Posterior weight ensembles and Bayesian model averaging.
//!
//! A Bayesian network here is a bag of weight samples `w_i ~ p(w|D)`
//! produced by VI or HMC. Predictions average the per-sample softmax
//! outputs; Bayesian heatmaps average the per-sample ε-LRP heatmaps.

mod hmc;
mod vi;

pub use hmc::{
    hmc_chain, hmc_sample, leapfrog_energy_error, HmcConfig, HmcStats, NnPosteriorTarget,
    StandardNormalTarget, Target,
};
pub use vi::{
    vi_fit, vi_fit_likelihood, vi_sample, GaussianMeanLikelihood, LogLikelihood, NnLikelihood,
    VariationalPosterior, ViConfig,
};

use crate::error::{Error, Result};
use crate::lrp::{lrp_epsilon, Heatmap, RelevanceSeed, Stabilizer};
use crate::nn::{forward, predict_softmax, NetworkSpec, WeightVector};
use rayon::prelude::*;

/// Isotropic zero-mean Gaussian prior over the weights.
#[derive(Debug, Clone, Copy)]
pub struct GaussianPrior {
    std: f64,
}

impl GaussianPrior {
    pub fn new(std: f64) -> Result<Self> {
        if !(std.is_finite() && std > 0.0) {
            return Err(Error::Parameter("prior std must be finite and positive".into()));
        }
        Ok(Self { std })
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    pub fn log_density(&self, w: &[f64]) -> f64 {
        let var = self.std * self.std;
        let norm = -(self.std.ln() + 0.5 * (2.0 * std::f64::consts::PI).ln());
        w.iter().map(|&v| norm - 0.5 * v * v / var).sum()
    }

    /// Adds `∇_w log p(w) = -w/σ²` into `out`.
    pub fn add_grad_log_density(&self, w: &[f64], out: &mut [f64]) {
        let inv_var = 1.0 / (self.std * self.std);
        for (o, &v) in out.iter_mut().zip(w.iter()) {
            *o -= v * inv_var;
        }
    }
}

impl Default for GaussianPrior {
    fn default() -> Self {
        Self { std: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InferenceMethod {
    Vi,
    Hmc,
}

/// Run metadata carried alongside the samples.
#[derive(Debug, Clone, Default)]
pub struct EnsembleMeta {
    pub seed: u64,
    pub burn_in: usize,
    pub thinning: usize,
    /// HMC Metropolis acceptance rate.
    pub acceptance_rate: Option<f64>,
    /// Acceptance rate fell below 0.05 over the run.
    pub poorly_tuned: bool,
    /// Per-step ELBO estimates from VI.
    pub elbo_trace: Vec<f64>,
}

/// Weight samples drawn from an approximate posterior.
#[derive(Debug, Clone)]
pub struct PosteriorEnsemble {
    samples: Vec<WeightVector>,
    method: InferenceMethod,
    meta: EnsembleMeta,
}

impl PosteriorEnsemble {
    pub fn new(samples: Vec<WeightVector>, method: InferenceMethod, meta: EnsembleMeta) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Parameter("posterior ensemble needs at least one sample".into()));
        }
        Ok(Self { samples, method, meta })
    }

    pub fn samples(&self) -> &[WeightVector] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the constructor rejects empty ensembles
    }

    pub fn method(&self) -> InferenceMethod {
        self.method
    }

    pub fn meta(&self) -> &EnsembleMeta {
        &self.meta
    }

    /// `n` samples spread evenly across the stored chain (stride
    /// `len / n`), so small subsets are less autocorrelated than a prefix.
    pub fn strided_subset(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.samples.len() {
            return Err(Error::Parameter(format!(
                "cannot take {n} samples from an ensemble of {}",
                self.samples.len()
            )));
        }
        let stride = self.samples.len() / n;
        let samples: Vec<WeightVector> = (0..n).map(|i| self.samples[i * stride].clone()).collect();
        Ok(Self {
            samples,
            method: self.method,
            meta: self.meta.clone(),
        })
    }
}

/// Bayesian model average of the per-sample softmax outputs.
pub fn posterior_predictive(spec: &NetworkSpec, ensemble: &PosteriorEnsemble, x: &[f64]) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; spec.class_count()];
    for w in ensemble.samples() {
        let p = predict_softmax(spec, w, x)?;
        for (m, v) in mean.iter_mut().zip(p.iter()) {
            *m += v;
        }
    }
    let n = ensemble.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

/// ε-LRP heatmap of every ensemble member (seeding applied per sample).
pub fn per_sample_heatmaps(
    spec: &NetworkSpec,
    ensemble: &PosteriorEnsemble,
    x: &[f64],
    seed_layer: usize,
    seed: RelevanceSeed,
    eps: f64,
    stabilizer: Stabilizer,
) -> Result<Vec<Heatmap>> {
    ensemble
        .samples()
        .par_iter()
        .map(|w| {
            let trace = forward(spec, w, x)?;
            lrp_epsilon(spec, w, &trace, seed_layer, seed, eps, stabilizer)
        })
        .collect()
}

/// Elementwise mean of the per-sample ε-LRP heatmaps.
pub fn bayes_heatmap(
    spec: &NetworkSpec,
    ensemble: &PosteriorEnsemble,
    x: &[f64],
    seed_layer: usize,
    seed: RelevanceSeed,
    eps: f64,
    stabilizer: Stabilizer,
) -> Result<Heatmap> {
    let maps = per_sample_heatmaps(spec, ensemble, x, seed_layer, seed, eps, stabilizer)?;
    Ok(mean_heatmap(&maps))
}

/// Mean of already-computed heatmaps (sample order fixed for
/// reproducible float sums).
pub fn mean_heatmap(maps: &[Heatmap]) -> Heatmap {
    assert!(!maps.is_empty());
    let d = maps[0].relevances.len();
    let mut mean = vec![0.0; d];
    for hm in maps {
        for (m, r) in mean.iter_mut().zip(hm.relevances.iter()) {
            *m += r;
        }
    }
    let n = maps.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Heatmap {
        relevances: mean,
        seed_layer: maps[0].seed_layer,
        seed: maps[0].seed,
        lrp_epsilon: maps[0].lrp_epsilon,
    }
}
