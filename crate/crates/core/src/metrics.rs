//! Explanation- and prediction-robustness metrics.
//!
//! k-LRP robustness is the fraction of shared indices between the Top-k
//! pixel sets of the clean and adversarial heatmaps; softmax robustness
//! is one minus the L∞ distance between the two softmax outputs. Both lie
//! in [0, 1] with 1 meaning the attack changed nothing.

use crate::bayes::{bayes_heatmap, per_sample_heatmaps, PosteriorEnsemble};
use crate::error::{Error, Result};
use crate::lrp::{top_k, Heatmap, Ranking, RelevanceSeed, Stabilizer};
use crate::nn::NetworkSpec;
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;

/// `|Top_k(clean) ∩ Top_k(adv)| / k`.
pub fn klrp_robustness(hm_x: &Heatmap, hm_adv: &Heatmap, k: usize, ranking: Ranking) -> Result<f64> {
    if hm_x.relevances.len() != hm_adv.relevances.len() {
        return Err(Error::Shape(format!(
            "heatmaps disagree on pixel count: {} vs {}",
            hm_x.relevances.len(),
            hm_adv.relevances.len()
        )));
    }
    let a = top_k(hm_x, k, ranking)?;
    let b = top_k(hm_adv, k, ranking)?;
    Ok(a.overlap(&b) as f64 / k as f64)
}

/// `1 - ||p - p_adv||_∞` for two probability vectors.
pub fn softmax_robustness(p: &[f64], p_adv: &[f64]) -> Result<f64> {
    if p.len() != p_adv.len() {
        return Err(Error::Shape(format!(
            "probability vectors disagree on length: {} vs {}",
            p.len(),
            p_adv.len()
        )));
    }
    for v in [p, p_adv] {
        let sum: f64 = v.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || v.iter().any(|&x| x < -1e-9) {
            return Err(Error::Parameter(format!(
                "input is off the probability simplex (sum = {sum})"
            )));
        }
    }
    let linf = p
        .iter()
        .zip(p_adv.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(1.0 - linf)
}

/// How the Bayesian k-LRP robustness aggregates over samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BayesKlrpMode {
    /// Robustness of the two ensemble-averaged heatmaps (default).
    AveragedHeatmap,
    /// Mean over samples of the per-sample robustness.
    ExpectedRobustness,
}

/// ε-LRP settings bundled for the metric entry points.
#[derive(Debug, Clone, Copy)]
pub struct LrpParams {
    pub epsilon: f64,
    pub stabilizer: Stabilizer,
    pub ranking: Ranking,
}

impl Default for LrpParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            stabilizer: Stabilizer::SignMatched,
            ranking: Ranking::SignedDescending,
        }
    }
}

/// Bayesian k-LRP robustness of `x` against `x_adv`, seeded at
/// `seed_layer` with `seed` (the same seed for both points).
#[allow(clippy::too_many_arguments)]
pub fn bayes_klrp_robustness(
    spec: &NetworkSpec,
    ensemble: &PosteriorEnsemble,
    x: &[f64],
    x_adv: &[f64],
    seed_layer: usize,
    seed: RelevanceSeed,
    params: &LrpParams,
    k: usize,
    mode: BayesKlrpMode,
) -> Result<f64> {
    match mode {
        BayesKlrpMode::AveragedHeatmap => {
            let hm_x = bayes_heatmap(spec, ensemble, x, seed_layer, seed, params.epsilon, params.stabilizer)?;
            let hm_adv = bayes_heatmap(spec, ensemble, x_adv, seed_layer, seed, params.epsilon, params.stabilizer)?;
            klrp_robustness(&hm_x, &hm_adv, k, params.ranking)
        }
        BayesKlrpMode::ExpectedRobustness => {
            let maps_x = per_sample_heatmaps(spec, ensemble, x, seed_layer, seed, params.epsilon, params.stabilizer)?;
            let maps_adv =
                per_sample_heatmaps(spec, ensemble, x_adv, seed_layer, seed, params.epsilon, params.stabilizer)?;
            let mut sum = 0.0;
            for (hx, ha) in maps_x.iter().zip(maps_adv.iter()) {
                sum += klrp_robustness(hx, ha, k, params.ranking)?;
            }
            Ok(sum / maps_x.len() as f64)
        }
    }
}

/// Standard Pearson r.
pub fn pearson_correlation(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "sequences disagree on length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Parameter("pearson needs at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys.iter()) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Parameter("degenerate input: zero variance".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// One-sided Welch t-test for `mean(a) > mean(b)`.
#[derive(Debug, Clone, Copy)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    pub p_one_sided: f64,
}

pub fn welch_one_sided(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Parameter("welch test needs at least two points per group".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64], m: f64| v.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        return Err(Error::Parameter("degenerate input: zero variance in both groups".into()));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Numeric(format!("t distribution with df {df}: {e}")))?;
    Ok(WelchTest {
        t,
        df,
        p_one_sided: 1.0 - dist.cdf(t),
    })
}

/// Which model produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    Deterministic,
    BayesVi,
    BayesHmc,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Deterministic => "deterministic",
            ModelKind::BayesVi => "bayes-vi",
            ModelKind::BayesHmc => "bayes-hmc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(ModelKind::Deterministic),
            "bayes-vi" => Ok(ModelKind::BayesVi),
            "bayes-hmc" => Ok(ModelKind::BayesHmc),
            other => Err(Error::Format(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Per-test-point robustness results for one model at one sample count.
#[derive(Debug, Clone)]
pub struct RobustnessRecord {
    pub point_id: usize,
    pub model_kind: ModelKind,
    /// Posterior samples used (1 for deterministic rows).
    pub sample_count: usize,
    pub true_label: usize,
    pub clean_prediction: usize,
    pub adversarial_prediction: usize,
    pub softmax_robustness: f64,
    /// k-LRP robustness per (layer, k), averaged-heatmap mode.
    pub klrp: BTreeMap<(usize, usize), f64>,
    /// k-LRP robustness per (layer, k), expected-robustness mode
    /// (equals `klrp` for deterministic rows).
    pub klrp_expected: BTreeMap<(usize, usize), f64>,
    pub attack_succeeded: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{EnsembleMeta, InferenceMethod};
    use crate::nn::{Activation, LayerSpec, WeightVector};
    use proptest::prelude::*;

    fn hm(values: Vec<f64>) -> Heatmap {
        Heatmap {
            relevances: values,
            seed_layer: 0,
            seed: RelevanceSeed::Class(0),
            lrp_epsilon: 0.0,
        }
    }

    #[test]
    fn identical_heatmaps_give_one() {
        let a = hm(vec![3.0, 1.0, 2.0, 0.5]);
        assert_eq!(klrp_robustness(&a, &a, 2, Ranking::SignedDescending).unwrap(), 1.0);
    }

    #[test]
    fn enumerated_overlap_case() {
        let a = hm(vec![9.0, 7.0, 5.0, 3.0, 1.0]);
        let b = hm(vec![1.0, 9.0, 2.0, 8.0, 0.0]);
        // Top_2 = {0,1} vs {1,3}: overlap 1 of 2.
        assert_eq!(klrp_robustness(&a, &b, 2, Ranking::SignedDescending).unwrap(), 0.5);
    }

    #[test]
    fn full_k_always_gives_one() {
        let a = hm(vec![5.0, -2.0, 0.0]);
        let b = hm(vec![-9.0, 4.0, 1.0]);
        assert_eq!(klrp_robustness(&a, &b, 3, Ranking::SignedDescending).unwrap(), 1.0);
    }

    #[test]
    fn klrp_rejects_dimension_mismatch() {
        let a = hm(vec![1.0, 2.0]);
        let b = hm(vec![1.0, 2.0, 3.0]);
        assert!(klrp_robustness(&a, &b, 1, Ranking::SignedDescending).is_err());
    }

    #[test]
    fn softmax_robustness_examples() {
        assert_eq!(softmax_robustness(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 1.0);
        assert_eq!(softmax_robustness(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let r = softmax_robustness(&[0.7, 0.3], &[0.4, 0.6]).unwrap();
        assert!((r - 0.7).abs() < 1e-12);
    }

    #[test]
    fn off_simplex_inputs_are_rejected() {
        assert!(softmax_robustness(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(softmax_robustness(&[0.5, 0.5], &[0.7, 0.2]).is_err());
    }

    fn linear_ensemble(weight_rows: &[Vec<f64>]) -> (NetworkSpec, PosteriorEnsemble) {
        // Single linear layer 4 -> 2; heatmap of class 0 is x ⊙ row0.
        let spec = NetworkSpec::new(
            vec![LayerSpec {
                input_width: 4,
                output_width: 2,
                has_bias: false,
                activation: Activation::Identity,
            }],
            2,
        )
        .unwrap();
        let samples: Vec<WeightVector> = weight_rows
            .iter()
            .map(|row| {
                let mut v = row.clone();
                v.extend_from_slice(&[0.1, 0.1, 0.1, 0.1]); // class-1 row
                WeightVector::from_values(&spec, v).unwrap()
            })
            .collect();
        let ens = PosteriorEnsemble::new(samples, InferenceMethod::Hmc, EnsembleMeta::default()).unwrap();
        (spec, ens)
    }

    #[test]
    fn singleton_ensemble_modes_agree_with_deterministic() {
        let (spec, ens) = linear_ensemble(&[vec![0.9, 0.1, -0.5, 0.3]]);
        let x = [1.0, 1.0, 1.0, 1.0];
        let adv = [1.0, 0.5, 1.0, 1.0];
        let params = LrpParams {
            epsilon: 0.0,
            stabilizer: Stabilizer::Literal,
            ranking: Ranking::SignedDescending,
        };
        let a = bayes_klrp_robustness(&spec, &ens, &x, &adv, 0, RelevanceSeed::Class(0), &params, 2, BayesKlrpMode::AveragedHeatmap)
            .unwrap();
        let e = bayes_klrp_robustness(&spec, &ens, &x, &adv, 0, RelevanceSeed::Class(0), &params, 2, BayesKlrpMode::ExpectedRobustness)
            .unwrap();
        assert_eq!(a, e);
        // Deterministic reference through the plain metric.
        let hm_x = hm(vec![0.9, 0.1, -0.5, 0.3]);
        let hm_a = hm(vec![0.9, 0.05, -0.5, 0.3]);
        let det = klrp_robustness(&hm_x, &hm_a, 2, Ranking::SignedDescending).unwrap();
        assert_eq!(a, det);
    }

    #[test]
    fn identical_samples_make_modes_agree() {
        let row = vec![0.4, -0.7, 0.2, 0.9];
        let (spec, ens) = linear_ensemble(&[row.clone(), row.clone(), row]);
        let x = [0.5, 1.0, -0.3, 0.8];
        let adv = [0.8, 0.2, -0.3, 0.8];
        let params = LrpParams {
            epsilon: 0.0,
            stabilizer: Stabilizer::Literal,
            ranking: Ranking::SignedDescending,
        };
        for k in 1..=4 {
            let a = bayes_klrp_robustness(&spec, &ens, &x, &adv, 0, RelevanceSeed::Class(0), &params, k, BayesKlrpMode::AveragedHeatmap)
                .unwrap();
            let e = bayes_klrp_robustness(&spec, &ens, &x, &adv, 0, RelevanceSeed::Class(0), &params, k, BayesKlrpMode::ExpectedRobustness)
                .unwrap();
            assert_eq!(a, e);
        }
    }

    #[test]
    fn three_sample_toy_where_modes_differ() {
        // Heatmap of sample i at point v is v ⊙ row_i: chosen so the
        // averaged heatmap ranks pixels differently than the per-sample
        // majority. Expected values are enumerated by brute force below.
        let rows = vec![
            vec![1.0, 0.8, 0.1, 0.0],
            vec![1.0, 0.8, 0.1, 0.0],
            vec![0.1, 0.8, 10.0, 0.0],
        ];
        let (spec, ens) = linear_ensemble(&rows);
        let x = [1.0, 1.0, 1.0, 1.0];
        let adv = [1.0, 1.0, -1.0, 1.0]; // flips the sign of pixel 2 terms
        let params = LrpParams {
            epsilon: 0.0,
            stabilizer: Stabilizer::Literal,
            ranking: Ranking::SignedDescending,
        };
        let k = 1;

        // Brute-force oracle over the six per-sample heatmaps.
        let hm_of = |row: &[f64], v: &[f64]| -> Vec<f64> { row.iter().zip(v).map(|(r, vi)| r * vi).collect() };
        let argmax = |h: &[f64]| {
            let mut best = 0;
            for i in 1..h.len() {
                if h[i] > h[best] {
                    best = i;
                }
            }
            best
        };
        let mut expected_mean = 0.0;
        let mut mean_x = vec![0.0; 4];
        let mut mean_a = vec![0.0; 4];
        for row in &rows {
            let hx = hm_of(row, &x);
            let ha = hm_of(row, &adv);
            expected_mean += if argmax(&hx) == argmax(&ha) { 1.0 } else { 0.0 } / 3.0;
            for i in 0..4 {
                mean_x[i] += hx[i] / 3.0;
                mean_a[i] += ha[i] / 3.0;
            }
        }
        let averaged_expect = if argmax(&mean_x) == argmax(&mean_a) { 1.0 } else { 0.0 };
        assert_ne!(averaged_expect, expected_mean, "toy must separate the modes");

        let a = bayes_klrp_robustness(&spec, &ens, &x, &adv, 0, RelevanceSeed::Class(0), &params, k, BayesKlrpMode::AveragedHeatmap)
            .unwrap();
        let e = bayes_klrp_robustness(&spec, &ens, &x, &adv, 0, RelevanceSeed::Class(0), &params, k, BayesKlrpMode::ExpectedRobustness)
            .unwrap();
        assert_eq!(a, averaged_expect);
        assert!((e - expected_mean).abs() < 1e-15);
    }

    #[test]
    fn pearson_trivial_and_derived_cases() {
        let xs = [1.0, 2.0, 3.0];
        assert!((pearson_correlation(&xs, &xs).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|v| -v).collect();
        assert!((pearson_correlation(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        // Direct formula: r = 5 / sqrt(2 * 38/3).
        let r = pearson_correlation(&xs, &[2.0, 4.0, 7.0]).unwrap();
        let expect = 5.0 / (2.0f64 * 38.0 / 3.0).sqrt();
        assert!((r - expect).abs() < 1e-12);
        assert!((r - 0.993_399).abs() < 1e-6);
    }

    #[test]
    fn pearson_rejects_degenerate_input() {
        assert!(pearson_correlation(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson_correlation(&[1.0], &[1.0]).is_err());
        assert!(pearson_correlation(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn welch_matches_reference_values() {
        // Reference computed with scipy.stats.ttest_ind(equal_var=False).
        let a = [2.1, 2.5, 2.3, 2.8, 2.6];
        let b = [1.9, 2.0, 2.2, 1.8, 2.1];
        let w = welch_one_sided(&a, &b).unwrap();
        assert!((w.t - 3.285_714_285_7).abs() < 1e-9, "t = {}", w.t);
        assert!((w.df - 6.452_133_019_8).abs() < 1e-9, "df = {}", w.df);
        assert!((w.p_one_sided - 0.007_518_334_4).abs() < 1e-8, "p = {}", w.p_one_sided);
    }

    proptest! {
        /// k-LRP robustness is symmetric and rank-only: strictly increasing
        /// transforms of either heatmap leave it unchanged.
        #[test]
        fn klrp_is_symmetric_and_rank_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 6),
            b in proptest::collection::vec(-10.0f64..10.0, 6),
            k in 1usize..=6,
        ) {
            let ha = hm(a.clone());
            let hb = hm(b.clone());
            let r1 = klrp_robustness(&ha, &hb, k, Ranking::SignedDescending).unwrap();
            let r2 = klrp_robustness(&hb, &ha, k, Ranking::SignedDescending).unwrap();
            prop_assert_eq!(r1, r2);
            let ta = hm(a.iter().map(|v| v.exp()).collect());
            let tb = hm(b.iter().map(|v| 3.0 * v + 7.0).collect());
            let r3 = klrp_robustness(&ta, &tb, k, Ranking::SignedDescending).unwrap();
            prop_assert_eq!(r1, r3);
            prop_assert!((0.0..=1.0).contains(&r1));
        }

        /// Expected-robustness lies within [min, max] of per-sample values.
        #[test]
        fn expected_mode_is_bounded_by_per_sample_values(
            rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 4), 2..5),
            k in 1usize..=4,
        ) {
            let (spec, ens) = linear_ensemble(&rows);
            let x = [1.0, 0.5, -0.5, 0.25];
            let adv = [0.5, 1.0, 0.5, -0.25];
            let params = LrpParams { epsilon: 0.1, stabilizer: Stabilizer::SignMatched, ranking: Ranking::SignedDescending };
            let e = bayes_klrp_robustness(&spec, &ens, &x, &adv, 0, RelevanceSeed::Class(0), &params, k, BayesKlrpMode::ExpectedRobustness).unwrap();
            let per: Vec<f64> = rows.iter().map(|row| {
                let mut v = row.clone();
                v.extend_from_slice(&[0.1, 0.1, 0.1, 0.1]);
                let w = WeightVector::from_values(&spec, v).unwrap();
                let tx = crate::nn::forward(&spec, &w, &x).unwrap();
                let ta = crate::nn::forward(&spec, &w, &adv).unwrap();
                let hx = crate::lrp::lrp_epsilon(&spec, &w, &tx, 0, RelevanceSeed::Class(0), params.epsilon, params.stabilizer).unwrap();
                let ha = crate::lrp::lrp_epsilon(&spec, &w, &ta, 0, RelevanceSeed::Class(0), params.epsilon, params.stabilizer).unwrap();
                klrp_robustness(&hx, &ha, k, params.ranking).unwrap()
            }).collect();
            let lo = per.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = per.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(e >= lo - 1e-12 && e <= hi + 1e-12);
        }
    }
}
