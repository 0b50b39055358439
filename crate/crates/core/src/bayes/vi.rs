//! Mean-field Gaussian variational inference.
//!
//! The variational family is a fully factorized Gaussian with mean `mu`
//! and std `softplus(rho)`. Each step draws `w = mu + std ⊙ zeta` with
//! `zeta ~ N(0, I)` (reparameterization), estimates
//! `ELBO = E_q[log p(D|w)] - KL(q ‖ prior)` with the diagonal-Gaussian KL
//! in closed form, and ascends with per-parameter Adam steps.

use super::{EnsembleMeta, GaussianPrior, InferenceMethod, PosteriorEnsemble};
use crate::error::{Error, Result};
use crate::nn::{batch_loss_grad, BatchedData, LabeledDataset, NetworkSpec, WeightVector};
use crate::rng::substream;
use rand::Rng;
use rand_distr::StandardNormal;

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    // ln(e^y - 1)
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Factorized Gaussian over the flat weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalPosterior {
    pub mu: Vec<f64>,
    pub rho: Vec<f64>,
}

impl VariationalPosterior {
    pub fn new(mu: Vec<f64>, rho: Vec<f64>) -> Result<Self> {
        if mu.len() != rho.len() {
            return Err(Error::Shape(format!(
                "mu has {} entries, rho has {}",
                mu.len(),
                rho.len()
            )));
        }
        Ok(Self { mu, rho })
    }

    /// Distribution equal to the prior: `mu = 0`, `std = prior std`.
    pub fn at_prior(dim: usize, prior: &GaussianPrior) -> Self {
        Self {
            mu: vec![0.0; dim],
            rho: vec![softplus_inv(prior.std()); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.rho.iter().map(|&r| softplus(r)).collect()
    }

    /// Closed-form `KL(q ‖ N(0, σ_p² I))` for the diagonal Gaussian q.
    pub fn kl_to_prior(&self, prior: &GaussianPrior) -> f64 {
        let sp = prior.std();
        self.mu
            .iter()
            .zip(self.rho.iter())
            .map(|(&m, &r)| {
                let s = softplus(r);
                (sp / s).ln() + (s * s + m * m) / (2.0 * sp * sp) - 0.5
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ViConfig {
    /// Reparameterized likelihood draws per optimization step.
    pub mc_samples: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Minibatch size for the likelihood estimate (capped at the data size).
    pub batch_size: usize,
    /// Std the variational scale starts from.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ViConfig {
    fn default() -> Self {
        Self {
            mc_samples: 1,
            steps: 3000,
            learning_rate: 0.01,
            batch_size: 128,
            init_std: 0.05,
            seed: 0,
        }
    }
}

/// Log-likelihood (and its weight gradient) of the data under weights `w`.
/// Implementations may estimate it on minibatches, rescaled so the
/// estimate is unbiased for the full-data value.
pub trait LogLikelihood {
    fn dim(&self) -> usize;
    fn log_lik_grad(&mut self, w: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Categorical NN likelihood, minibatch-estimated.
pub struct NnLikelihood<'a> {
    spec: &'a NetworkSpec,
    data: BatchedData,
    batch_size: usize,
    rng: rand_chacha::ChaCha8Rng,
}

impl<'a> NnLikelihood<'a> {
    pub fn new(spec: &'a NetworkSpec, data: &LabeledDataset, batch_size: usize, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Parameter("likelihood needs nonempty data".into()));
        }
        Ok(Self {
            spec,
            data: BatchedData::from_dataset(data),
            batch_size: batch_size.max(1),
            rng: substream(seed, "vi-minibatch"),
        })
    }
}

impl LogLikelihood for NnLikelihood<'_> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn log_lik_grad(&mut self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let wv = WeightVector::from_flat(w.to_vec())?;
        let n = self.data.len();
        let (loss, mut grad, scale) = if self.batch_size >= n {
            let (l, g) = batch_loss_grad(self.spec, &wv, &self.data)?;
            (l, g, 1.0)
        } else {
            let idx: Vec<usize> = (0..self.batch_size)
                .map(|_| self.rng.random_range(0..n))
                .collect();
            let sub = self.data.select(&idx);
            let (l, g) = batch_loss_grad(self.spec, &wv, &sub)?;
            (l, g, n as f64 / self.batch_size as f64)
        };
        for g in &mut grad {
            *g = -*g * scale; // log p = -cross-entropy
        }
        Ok((-loss * scale, grad))
    }
}

/// Unit-variance Gaussian observations of a scalar mean: the conjugate
/// calibration model (log-likelihood up to an additive constant).
pub struct GaussianMeanLikelihood {
    pub observations: Vec<f64>,
}

impl GaussianMeanLikelihood {
    /// Exact posterior under the `N(0, σ_p²)` prior: mean and std of
    /// `p(w | observations)`.
    pub fn analytic_posterior(&self, prior: &GaussianPrior) -> (f64, f64) {
        let n = self.observations.len() as f64;
        let sum: f64 = self.observations.iter().sum();
        let prec = 1.0 / (prior.std() * prior.std()) + n;
        (sum / prec, (1.0 / prec).sqrt())
    }
}

impl LogLikelihood for GaussianMeanLikelihood {
    fn dim(&self) -> usize {
        1
    }

    fn log_lik_grad(&mut self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let m = w[0];
        let ll: f64 = self.observations.iter().map(|&x| -0.5 * (x - m) * (x - m)).sum();
        let g: f64 = self.observations.iter().map(|&x| x - m).sum();
        Ok((ll, vec![g]))
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// One ascent step along `grad`.
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t as i32);
        let c2 = 1.0 - B2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] += lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

/// Maximize the Monte Carlo ELBO for an arbitrary likelihood, starting
/// from `init`. Returns the fitted posterior and the per-step ELBO trace.
pub fn vi_fit_likelihood<L: LogLikelihood>(
    likelihood: &mut L,
    prior: &GaussianPrior,
    init: VariationalPosterior,
    cfg: &ViConfig,
) -> Result<(VariationalPosterior, Vec<f64>)> {
    if init.dim() != likelihood.dim() {
        return Err(Error::Shape(format!(
            "init has {} parameters, likelihood expects {}",
            init.dim(),
            likelihood.dim()
        )));
    }
    if cfg.mc_samples == 0 {
        return Err(Error::Parameter("mc_samples must be >= 1".into()));
    }
    let dim = init.dim();
    let mut mu = init.mu;
    let mut rho = init.rho;
    let mut adam_mu = Adam::new(dim);
    let mut adam_rho = Adam::new(dim);
    let mut rng = substream(cfg.seed, "vi");
    let mut elbo_trace = Vec::with_capacity(cfg.steps);
    let sp2 = prior.std() * prior.std();

    for step in 0..cfg.steps {
        let std: Vec<f64> = rho.iter().map(|&r| softplus(r)).collect();
        let mut g_mu = vec![0.0; dim];
        let mut g_rho = vec![0.0; dim];
        let mut ll_mean = 0.0;
        for _ in 0..cfg.mc_samples {
            let zeta: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let w: Vec<f64> = mu
                .iter()
                .zip(std.iter().zip(zeta.iter()))
                .map(|(&m, (&s, &z))| m + s * z)
                .collect();
            let (ll, gll) = likelihood.log_lik_grad(&w)?;
            ll_mean += ll / cfg.mc_samples as f64;
            let inv = 1.0 / cfg.mc_samples as f64;
            for i in 0..dim {
                g_mu[i] += gll[i] * inv;
                g_rho[i] += gll[i] * zeta[i] * sigmoid(rho[i]) * inv;
            }
        }
        // KL gradient (subtracted: we ascend ELBO = E[ll] - KL).
        for i in 0..dim {
            g_mu[i] -= mu[i] / sp2;
            g_rho[i] -= (std[i] / sp2 - 1.0 / std[i]) * sigmoid(rho[i]);
        }
        let q = VariationalPosterior {
            mu: mu.clone(),
            rho: rho.clone(),
        };
        let elbo = ll_mean - q.kl_to_prior(prior);
        if !elbo.is_finite() {
            return Err(Error::Divergence {
                epoch: step,
                what: "ELBO estimate is not finite".into(),
            });
        }
        elbo_trace.push(elbo);
        adam_mu.step(&mut mu, &g_mu, cfg.learning_rate);
        adam_rho.step(&mut rho, &g_rho, cfg.learning_rate);
    }
    Ok((VariationalPosterior { mu, rho }, elbo_trace))
}

/// Fit the NN weight posterior. The variational mean starts at `init_mu`
/// when given (e.g. SGD weights), otherwise at a seeded uniform init.
pub fn vi_fit(
    spec: &NetworkSpec,
    data: &LabeledDataset,
    prior: &GaussianPrior,
    cfg: &ViConfig,
    init_mu: Option<&WeightVector>,
) -> Result<(VariationalPosterior, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Parameter("vi_fit needs nonempty data".into()));
    }
    let dim = spec.param_count();
    let mu = match init_mu {
        Some(w) => {
            if w.values().len() != dim {
                return Err(Error::Shape("init weights do not match the spec".into()));
            }
            w.values().to_vec()
        }
        None => WeightVector::init(spec, &mut substream(cfg.seed, "vi-init"))
            .values()
            .to_vec(),
    };
    let rho = vec![softplus_inv(cfg.init_std); dim];
    let init = VariationalPosterior::new(mu, rho)?;
    let mut likelihood = NnLikelihood::new(spec, data, cfg.batch_size, cfg.seed)?;
    vi_fit_likelihood(&mut likelihood, prior, init, cfg)
}

/// `n` independent reparameterized draws from the fitted posterior.
pub fn vi_sample(post: &VariationalPosterior, n: usize, seed: u64) -> Result<PosteriorEnsemble> {
    if n == 0 {
        return Err(Error::Parameter("sample count must be >= 1".into()));
    }
    let std = post.std();
    let mut rng = substream(seed, "vi-sample");
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let values: Vec<f64> = post
            .mu
            .iter()
            .zip(std.iter())
            .map(|(&m, &s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        samples.push(WeightVector::from_flat(values)?);
    }
    PosteriorEnsemble::new(
        samples,
        InferenceMethod::Vi,
        EnsembleMeta {
            seed,
            ..EnsembleMeta::default()
        },
    )
}
