//! Hamiltonian Monte Carlo over the flat weight vector.
//!
//! Standard leapfrog proposals with unit-mass momenta and a Metropolis
//! correction. The target is any log-density with gradient; the NN
//! posterior target combines the full-batch categorical likelihood with
//! the Gaussian prior. An empty dataset leaves the prior-only target,
//! which is the calibration case.

use super::{EnsembleMeta, GaussianPrior, InferenceMethod, PosteriorEnsemble};
use crate::error::{Error, Result};
use crate::nn::{batch_loss_grad, BatchedData, LabeledDataset, NetworkSpec, WeightVector};
use crate::rng::substream;
use rand::Rng;
use rand_distr::StandardNormal;

/// Unnormalized log-density with gradient.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    fn log_density_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// `N(0, I)`: the prior-only calibration target.
#[derive(Debug, Clone, Copy)]
pub struct StandardNormalTarget {
    pub dim: usize,
}

impl Target for StandardNormalTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let logp = -0.5 * w.iter().map(|v| v * v).sum::<f64>();
        let grad: Vec<f64> = w.iter().map(|&v| -v).collect();
        Ok((logp, grad))
    }
}

/// `log p(D|w) + log p(w)` for the categorical NN likelihood.
pub struct NnPosteriorTarget<'a> {
    spec: &'a NetworkSpec,
    data: BatchedData,
    prior: GaussianPrior,
}

impl<'a> NnPosteriorTarget<'a> {
    pub fn new(spec: &'a NetworkSpec, data: &LabeledDataset, prior: GaussianPrior) -> Self {
        Self {
            spec,
            data: BatchedData::from_dataset(data),
            prior,
        }
    }
}

impl Target for NnPosteriorTarget<'_> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn log_density_and_grad(&self, w: &[f64]) -> Result<(f64, Vec<f64>)> {
        let wv = WeightVector::from_flat(w.to_vec())?;
        let (loss, mut grad) = batch_loss_grad(self.spec, &wv, &self.data)?;
        for g in &mut grad {
            *g = -*g;
        }
        let logp = -loss + self.prior.log_density(w);
        self.prior.add_grad_log_density(w, &mut grad);
        Ok((logp, grad))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    /// Total Metropolis draws, including burn-in.
    pub draws: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 2e-3,
            leapfrog_steps: 5,
            draws: 375,
            burn_in: 75,
            thinning: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HmcStats {
    pub acceptance_rate: f64,
    /// Acceptance below 0.05: the run is poorly tuned (not fatal).
    pub poorly_tuned: bool,
}

/// One leapfrog trajectory. Returns the end position, end momentum, and
/// the target's value/gradient there.
fn leapfrog<T: Target>(
    target: &T,
    w0: &[f64],
    p0: &[f64],
    grad0: &[f64],
    eta: f64,
    steps: usize,
) -> Result<(Vec<f64>, Vec<f64>, f64, Vec<f64>)> {
    let mut w = w0.to_vec();
    let mut p = p0.to_vec();
    // Half kick.
    for (pi, g) in p.iter_mut().zip(grad0.iter()) {
        *pi += 0.5 * eta * g;
    }
    let mut logp = 0.0;
    let mut grad = grad0.to_vec();
    for step in 0..steps {
        for (wi, pi) in w.iter_mut().zip(p.iter()) {
            *wi += eta * pi;
        }
        let (lp, g) = target.log_density_and_grad(&w)?;
        logp = lp;
        grad = g;
        let kick = if step + 1 == steps { 0.5 * eta } else { eta };
        for (pi, g) in p.iter_mut().zip(grad.iter()) {
            *pi += kick * g;
        }
    }
    Ok((w, p, logp, grad))
}

/// Total energy change of a single trajectory from `w0` (fresh momentum
/// drawn outside). Exposed for integrator-accuracy checks.
pub fn leapfrog_energy_error<T: Target>(
    target: &T,
    w0: &[f64],
    p0: &[f64],
    eta: f64,
    steps: usize,
) -> Result<f64> {
    let (logp0, grad0) = target.log_density_and_grad(w0)?;
    let k0: f64 = 0.5 * p0.iter().map(|v| v * v).sum::<f64>();
    let h0 = -logp0 + k0;
    let (_, p1, logp1, _) = leapfrog(target, w0, p0, &grad0, eta, steps)?;
    let k1: f64 = 0.5 * p1.iter().map(|v| v * v).sum::<f64>();
    Ok((-logp1 + k1) - h0)
}

/// Run one chain and return the thinned post-burn-in positions.
pub fn hmc_chain<T: Target>(target: &T, init: &[f64], cfg: &HmcConfig) -> Result<(Vec<Vec<f64>>, HmcStats)> {
    if init.len() != target.dim() {
        return Err(Error::Shape(format!(
            "init has {} entries, target expects {}",
            init.len(),
            target.dim()
        )));
    }
    if cfg.draws == 0 || cfg.leapfrog_steps == 0 || cfg.thinning == 0 {
        return Err(Error::Parameter("draws, leapfrog_steps and thinning must be >= 1".into()));
    }
    if cfg.burn_in >= cfg.draws {
        return Err(Error::Parameter(format!(
            "burn_in {} must be below draws {}",
            cfg.burn_in, cfg.draws
        )));
    }
    if !(cfg.step_size.is_finite() && cfg.step_size >= 0.0) {
        return Err(Error::Parameter("step_size must be finite and >= 0".into()));
    }

    let dim = target.dim();
    let mut rng = substream(cfg.seed, "hmc");
    let mut w = init.to_vec();
    let (mut logp, mut grad) = target.log_density_and_grad(&w)?;
    if !logp.is_finite() {
        return Err(Error::Numeric("target log-density is not finite at the init".into()));
    }
    let mut samples = Vec::new();
    let mut accepted = 0usize;

    for draw in 0..cfg.draws {
        let p0: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let k0: f64 = 0.5 * p0.iter().map(|v| v * v).sum::<f64>();
        let h0 = -logp + k0;
        let (w1, p1, logp1, grad1) = leapfrog(target, &w, &p0, &grad, cfg.step_size, cfg.leapfrog_steps)?;
        let k1: f64 = 0.5 * p1.iter().map(|v| v * v).sum::<f64>();
        let h1 = -logp1 + k1;
        let dh = h1 - h0;
        let accept = dh.is_finite() && (dh <= 0.0 || rng.random::<f64>() < (-dh).exp());
        if accept {
            w = w1;
            logp = logp1;
            grad = grad1;
            accepted += 1;
        }
        if draw >= cfg.burn_in && (draw - cfg.burn_in) % cfg.thinning == 0 {
            samples.push(w.clone());
        }
    }
    let acceptance_rate = accepted as f64 / cfg.draws as f64;
    Ok((
        samples,
        HmcStats {
            acceptance_rate,
            poorly_tuned: acceptance_rate < 0.05,
        },
    ))
}

/// Sample the NN weight posterior. The chain starts at `warm_start` when
/// given (typically SGD weights), otherwise at a prior draw.
pub fn hmc_sample(
    spec: &NetworkSpec,
    data: &LabeledDataset,
    prior: &GaussianPrior,
    cfg: &HmcConfig,
    warm_start: Option<&WeightVector>,
) -> Result<PosteriorEnsemble> {
    let target = NnPosteriorTarget::new(spec, data, *prior);
    let init: Vec<f64> = match warm_start {
        Some(w) => {
            if w.values().len() != spec.param_count() {
                return Err(Error::Shape("warm start does not match the spec".into()));
            }
            w.values().to_vec()
        }
        None => {
            let mut rng = substream(cfg.seed, "hmc-init");
            (0..spec.param_count())
                .map(|_| prior.std() * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
    };
    let (positions, stats) = hmc_chain(&target, &init, cfg)?;
    let samples: Result<Vec<WeightVector>> = positions.into_iter().map(WeightVector::from_flat).collect();
    PosteriorEnsemble::new(
        samples?,
        InferenceMethod::Hmc,
        EnsembleMeta {
            seed: cfg.seed,
            burn_in: cfg.burn_in,
            thinning: cfg.thinning,
            acceptance_rate: Some(stats.acceptance_rate),
            poorly_tuned: stats.poorly_tuned,
            elbo_trace: Vec::new(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_only_run_matches_standard_normal_moments() {
        // Empty data leaves the prior-only potential; with a unit prior the
        // target is an exact standard normal over every parameter.
        let spec = NetworkSpec::mlp(2, &[2], 2, false).unwrap();
        let data = LabeledDataset::new(vec![], vec![]).unwrap();
        let prior = GaussianPrior::new(1.0).unwrap();
        let cfg = HmcConfig {
            step_size: 0.6,
            leapfrog_steps: 8,
            draws: 2500,
            burn_in: 500,
            thinning: 1,
            seed: 2,
        };
        let ens = hmc_sample(&spec, &data, &prior, &cfg, None).unwrap();
        assert_eq!(ens.len(), 2000);
        let dim = spec.param_count();
        for i in 0..dim {
            let vals: Vec<f64> = ens.samples().iter().map(|w| w.values()[i]).collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 0.1, "coordinate {i}: mean {mean}");
            assert!((var - 1.0).abs() < 0.15, "coordinate {i}: var {var}");
        }
        assert!(ens.meta().acceptance_rate.unwrap() > 0.5);
        assert!(!ens.meta().poorly_tuned);
    }

    #[test]
    fn zero_step_size_never_moves() {
        let target = StandardNormalTarget { dim: 3 };
        let init = vec![0.4, -0.2, 1.0];
        let cfg = HmcConfig {
            step_size: 0.0,
            leapfrog_steps: 5,
            draws: 50,
            burn_in: 10,
            thinning: 2,
            seed: 7,
        };
        let (samples, stats) = hmc_chain(&target, &init, &cfg).unwrap();
        assert_eq!(stats.acceptance_rate, 1.0);
        assert_eq!(samples.len(), 20);
        for s in &samples {
            assert_eq!(s, &init);
        }
    }

    #[test]
    fn leapfrog_conserves_energy_on_a_quadratic_potential() {
        let target = StandardNormalTarget { dim: 4 };
        let w0 = vec![0.3, -0.8, 0.1, 0.5];
        let p0 = vec![0.9, 0.2, -0.4, -0.6];
        let dh = leapfrog_energy_error(&target, &w0, &p0, 1e-3, 100).unwrap();
        assert!(dh.abs() < 1e-4, "|dH| = {}", dh.abs());
    }

    #[test]
    fn same_seed_reproduces_the_chain() {
        let target = StandardNormalTarget { dim: 2 };
        let cfg = HmcConfig {
            step_size: 0.5,
            leapfrog_steps: 4,
            draws: 60,
            burn_in: 20,
            thinning: 2,
            seed: 13,
        };
        let (a, _) = hmc_chain(&target, &[0.0, 0.0], &cfg).unwrap();
        let (b, _) = hmc_chain(&target, &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn absurd_step_size_is_flagged_as_poorly_tuned() {
        let target = StandardNormalTarget { dim: 4 };
        let cfg = HmcConfig {
            step_size: 50.0,
            leapfrog_steps: 5,
            draws: 100,
            burn_in: 10,
            thinning: 1,
            seed: 5,
        };
        let (_, stats) = hmc_chain(&target, &[0.1, 0.1, 0.1, 0.1], &cfg).unwrap();
        assert!(stats.acceptance_rate < 0.05);
        assert!(stats.poorly_tuned);
    }

    #[test]
    fn config_validation() {
        let target = StandardNormalTarget { dim: 1 };
        let bad = HmcConfig {
            burn_in: 10,
            draws: 10,
            ..Default::default()
        };
        assert!(hmc_chain(&target, &[0.0], &bad).is_err());
        assert!(hmc_chain(&target, &[0.0, 0.0], &HmcConfig::default()).is_err());
    }
}
