//! Batch orchestration: data preparation, model/posterior training, and
//! the per-point robustness sweep that feeds the report tables.
//!
//! One record is emitted per (test point, model kind, sample count), so a
//! Bayesian run with `sample_counts = [10, 50, 100]` yields
//! `test_size × 2 × 3` records; the deterministic rows are computed once
//! and replicated per sample count (their `sample_count` field stays 1).
//! Group statistics deduplicate those replicas by point id.

use crate::attack::{bayes_fgsm, bayes_pgd, fgsm, pgd, AttackMethod};
use crate::bayes::{
    hmc_sample, per_sample_heatmaps, posterior_predictive, vi_fit, vi_sample, GaussianPrior,
    PosteriorEnsemble,
};
use crate::config::{AttackLabel, DatasetKind, ExperimentConfig, InferenceKind, SeedClassRule};
use crate::error::{Error, Result};
use crate::idx::load_idx;
use crate::lrp::{lrp_epsilon, Heatmap, RelevanceSeed};
use crate::manifold::{make_manifold_dataset, make_manifold_grid, zero_avg_statistic, ManifoldSpec};
use crate::metrics::{klrp_robustness, pearson_correlation, softmax_robustness, ModelKind, RobustnessRecord};
use crate::nn::{accuracy, argmax, forward, predict_softmax, train_sgd, LabeledDataset, NetworkSpec, WeightVector};
use crate::rng::{substream, substream_indexed};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Train pool, test pool, and the balanced test selection.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test_pool: LabeledDataset,
    /// Indices into `test_pool`, balanced across classes, ascending.
    pub test_indices: Vec<usize>,
    pub class_count: usize,
}

/// Trained deterministic weights plus the optional posterior ensemble.
#[derive(Debug, Clone)]
pub struct PreparedModels {
    pub spec: NetworkSpec,
    pub det_weights: WeightVector,
    pub ensemble: Option<PosteriorEnsemble>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct GroupStats {
    pub kind: ModelKind,
    pub sample_count: usize,
    pub points: usize,
    pub attack_success_rate: f64,
    pub mean_softmax_robustness: f64,
    /// Mean k-LRP per (layer, k), averaged-heatmap mode.
    pub mean_klrp: BTreeMap<(usize, usize), f64>,
    /// Mean k-LRP per (layer, k), expected-robustness mode.
    pub mean_klrp_expected: BTreeMap<(usize, usize), f64>,
    /// Pearson r between the scatter-cell k-LRP and softmax robustness;
    /// `None` when degenerate (zero variance).
    pub lrp_softmax_pearson: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Summary {
    /// Scatter cell: pre-softmax layer, k = 100 when available.
    pub scatter_layer: usize,
    pub scatter_k: usize,
    pub groups: Vec<GroupStats>,
    /// Bayesian-minus-deterministic mean k-LRP per (sample_count, layer, k).
    pub gaps: Vec<(usize, usize, usize, f64)>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub hmc_acceptance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<RobustnessRecord>,
    pub summary: Summary,
}

/// Balanced class-stratified selection: `⌊test_size/classes⌋ ± 1` per
/// class when the pools allow it, topped up round-robin otherwise.
pub fn balanced_test_indices(
    labels: &[usize],
    class_count: usize,
    test_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if test_size > labels.len() {
        return Err(Error::Parameter(format!(
            "test_size {test_size} exceeds the pool of {}",
            labels.len()
        )));
    }
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, &l) in labels.iter().enumerate() {
        if l >= class_count {
            return Err(Error::Parameter(format!("label {l} out of range")));
        }
        pools[l].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(rng);
    }
    let base = test_size / class_count;
    let rem = test_size % class_count;
    let mut taken: Vec<usize> = Vec::with_capacity(test_size);
    let mut cursors = vec![0usize; class_count];
    for (c, pool) in pools.iter().enumerate() {
        let quota = base + usize::from(c < rem);
        let take = quota.min(pool.len());
        taken.extend_from_slice(&pool[..take]);
        cursors[c] = take;
    }
    // Top up from classes with spare points when some pool ran short.
    let mut c = 0;
    while taken.len() < test_size {
        if cursors[c] < pools[c].len() {
            taken.push(pools[c][cursors[c]]);
            cursors[c] += 1;
        }
        c = (c + 1) % class_count;
    }
    taken.sort_unstable();
    Ok(taken)
}

/// Load (or synthesize) the dataset and pick the balanced test points.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (train_pool, test_pool, class_count) = match cfg.dataset {
        DatasetKind::Mnist | DatasetKind::FashionMnist => {
            let (ti, tl, vi, vl) = cfg.idx_paths()?;
            let train = load_idx(&ti, &tl)?;
            let test = load_idx(&vi, &vl)?;
            (train, test, 10)
        }
        DatasetKind::SyntheticManifold => {
            let mspec = ManifoldSpec::circle(cfg.manifold_dim)?;
            let train = make_manifold_dataset(&mspec, cfg.train_size, 0.0, cfg.seed)?;
            let test = make_manifold_dataset(&mspec, cfg.test_size.max(cfg.test_size * 2), 0.0, cfg.seed ^ 0x9e37)?;
            (train, test, 2)
        }
    };
    let train = if train_pool.len() > cfg.train_size {
        let mut order: Vec<usize> = (0..train_pool.len()).collect();
        order.shuffle(&mut substream(cfg.seed, "train-subset"));
        let mut idx = order[..cfg.train_size].to_vec();
        idx.sort_unstable();
        train_pool.select(&idx)
    } else {
        train_pool
    };
    let test_indices = balanced_test_indices(
        test_pool.labels(),
        class_count,
        cfg.test_size.min(test_pool.len()),
        &mut substream(cfg.seed, "point-selection"),
    )?;
    Ok(PreparedData {
        train,
        test_pool,
        test_indices,
        class_count,
    })
}

/// Architecture implied by the config for this dataset.
pub fn network_spec(cfg: &ExperimentConfig, data: &PreparedData) -> Result<NetworkSpec> {
    NetworkSpec::mlp(data.train.dim(), &cfg.hidden_sizes, data.class_count, cfg.has_bias)
}

/// SGD-train the deterministic baseline (seeded from the global seed).
pub fn train_deterministic(cfg: &ExperimentConfig, data: &PreparedData) -> Result<(NetworkSpec, WeightVector)> {
    let spec = network_spec(cfg, data)?;
    let mut sgd = cfg.sgd;
    sgd.seed = cfg.seed;
    let det = train_sgd(&spec, &data.train, &sgd)?;
    Ok((spec, det))
}

/// Fit the configured posterior; `det_weights` warm-starts HMC and the
/// variational mean.
pub fn fit_posterior(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    spec: &NetworkSpec,
    det_weights: &WeightVector,
) -> Result<Option<PosteriorEnsemble>> {
    let max_n = cfg.sample_counts.iter().copied().max().unwrap_or(1);
    let prior = GaussianPrior::new(cfg.prior_std)?;
    let ensemble = match cfg.inference {
        InferenceKind::Deterministic => None,
        InferenceKind::Vi => {
            let mut vi_cfg = cfg.vi;
            vi_cfg.seed = cfg.seed;
            let (post, _trace) = vi_fit(spec, &data.train, &prior, &vi_cfg, Some(det_weights))?;
            Some(vi_sample(&post, max_n, cfg.seed)?)
        }
        InferenceKind::Hmc => {
            let subset = if data.train.len() > cfg.hmc_subset {
                let mut order: Vec<usize> = (0..data.train.len()).collect();
                order.shuffle(&mut substream(cfg.seed, "hmc-subset"));
                let mut idx = order[..cfg.hmc_subset].to_vec();
                idx.sort_unstable();
                data.train.select(&idx)
            } else {
                data.train.clone()
            };
            let mut hmc_cfg = cfg.hmc;
            hmc_cfg.seed = cfg.seed;
            let warm = cfg.hmc_warm_start.then_some(det_weights);
            let ens = hmc_sample(spec, &subset, &prior, &hmc_cfg, warm)?;
            if ens.len() < max_n {
                return Err(Error::Parameter(format!(
                    "HMC stored {} samples but sample_counts needs {max_n}; raise hmc.draws or lower hmc.thinning",
                    ens.len()
                )));
            }
            Some(ens)
        }
    };
    Ok(ensemble)
}

/// Bundle weights and an optional ensemble with their accuracies.
pub fn assemble_models(
    data: &PreparedData,
    spec: NetworkSpec,
    det_weights: WeightVector,
    ensemble: Option<PosteriorEnsemble>,
) -> Result<PreparedModels> {
    let train_accuracy = accuracy(&spec, &det_weights, &data.train)?;
    let test_set = data.test_pool.select(&data.test_indices);
    let test_accuracy = accuracy(&spec, &det_weights, &test_set)?;
    Ok(PreparedModels {
        spec,
        det_weights,
        ensemble,
        train_accuracy,
        test_accuracy,
    })
}

/// Train the deterministic network and, when configured, the posterior.
pub fn prepare_models(cfg: &ExperimentConfig, data: &PreparedData) -> Result<PreparedModels> {
    let (spec, det_weights) = train_deterministic(cfg, data)?;
    let ensemble = fit_posterior(cfg, data, &spec, &det_weights)?;
    assemble_models(data, spec, det_weights, ensemble)
}

/// Relevance seed for one layer under the configured rule.
fn seed_for_layer(
    layer: usize,
    last_layer: usize,
    rule: SeedClassRule,
    original_pred: usize,
    own_pred: usize,
    true_label: usize,
) -> RelevanceSeed {
    if layer != last_layer {
        return RelevanceSeed::AllUnits;
    }
    RelevanceSeed::Class(match rule {
        SeedClassRule::OriginalPrediction => original_pred,
        SeedClassRule::OwnPrediction => own_pred,
        SeedClassRule::TrueLabel => true_label,
    })
}

fn det_heatmap(
    spec: &NetworkSpec,
    w: &WeightVector,
    x: &[f64],
    layer: usize,
    seed: RelevanceSeed,
    cfg: &ExperimentConfig,
) -> Result<Heatmap> {
    let trace = forward(spec, w, x)?;
    lrp_epsilon(spec, w, &trace, layer, seed, cfg.lrp_epsilon, cfg.stabilizer)
}

struct PointContext<'a> {
    cfg: &'a ExperimentConfig,
    spec: &'a NetworkSpec,
    last_layer: usize,
    point_id: usize,
    x: &'a [f64],
    true_label: usize,
}

/// Deterministic record for one point (shared across sample counts).
fn evaluate_det_point(ctx: &PointContext<'_>, w: &WeightVector) -> Result<RobustnessRecord> {
    let cfg = ctx.cfg;
    let p_clean = predict_softmax(ctx.spec, w, ctx.x)?;
    let clean_pred = argmax(&p_clean);
    let attack_y = match cfg.attack_label {
        AttackLabel::Predicted => clean_pred,
        AttackLabel::TrueLabel => ctx.true_label,
    };
    let atk = cfg
        .attack
        .with_seed(substream_indexed(cfg.seed, "attack-det", ctx.point_id as u64).random());
    let x_adv = match cfg.attack.method {
        AttackMethod::Fgsm => fgsm(ctx.spec, w, ctx.x, attack_y, &atk)?,
        AttackMethod::Pgd => pgd(ctx.spec, w, ctx.x, attack_y, &atk)?,
    };
    let p_adv = predict_softmax(ctx.spec, w, &x_adv)?;
    let adv_pred = argmax(&p_adv);

    let mut klrp = BTreeMap::new();
    for &layer in &cfg.layers {
        let seed_clean = seed_for_layer(layer, ctx.last_layer, cfg.seed_rule, clean_pred, clean_pred, ctx.true_label);
        let seed_adv = seed_for_layer(layer, ctx.last_layer, cfg.seed_rule, clean_pred, adv_pred, ctx.true_label);
        let hm_x = det_heatmap(ctx.spec, w, ctx.x, layer, seed_clean, cfg)?;
        let hm_a = det_heatmap(ctx.spec, w, &x_adv, layer, seed_adv, cfg)?;
        for &k in &cfg.kgrid {
            klrp.insert((layer, k), klrp_robustness(&hm_x, &hm_a, k, cfg.ranking)?);
        }
    }
    Ok(RobustnessRecord {
        point_id: ctx.point_id,
        model_kind: ModelKind::Deterministic,
        sample_count: 1,
        true_label: ctx.true_label,
        clean_prediction: clean_pred,
        adversarial_prediction: adv_pred,
        softmax_robustness: softmax_robustness(&p_clean, &p_adv)?,
        klrp_expected: klrp.clone(),
        klrp,
        attack_succeeded: clean_pred != adv_pred,
    })
}

/// Bayesian record for one point at one sample count.
fn evaluate_bayes_point(
    ctx: &PointContext<'_>,
    ensemble: &PosteriorEnsemble,
    n: usize,
    kind: ModelKind,
) -> Result<RobustnessRecord> {
    let cfg = ctx.cfg;
    let ens = ensemble.strided_subset(n)?;
    let p_clean = posterior_predictive(ctx.spec, &ens, ctx.x)?;
    let clean_pred = argmax(&p_clean);
    let attack_y = match cfg.attack_label {
        AttackLabel::Predicted => clean_pred,
        AttackLabel::TrueLabel => ctx.true_label,
    };
    let atk = cfg.attack.with_seed(
        substream_indexed(cfg.seed, "attack-bayes", ((ctx.point_id as u64) << 16) | n as u64).random(),
    );
    let x_adv = match cfg.attack.method {
        AttackMethod::Fgsm => bayes_fgsm(ctx.spec, &ens, ctx.x, attack_y, &atk)?,
        AttackMethod::Pgd => bayes_pgd(ctx.spec, &ens, ctx.x, attack_y, &atk)?,
    };
    let p_adv = posterior_predictive(ctx.spec, &ens, &x_adv)?;
    let adv_pred = argmax(&p_adv);

    let mut klrp = BTreeMap::new();
    let mut klrp_expected = BTreeMap::new();
    for &layer in &cfg.layers {
        let seed_clean = seed_for_layer(layer, ctx.last_layer, cfg.seed_rule, clean_pred, clean_pred, ctx.true_label);
        let seed_adv = seed_for_layer(layer, ctx.last_layer, cfg.seed_rule, clean_pred, adv_pred, ctx.true_label);
        let maps_x = per_sample_heatmaps(ctx.spec, &ens, ctx.x, layer, seed_clean, cfg.lrp_epsilon, cfg.stabilizer)?;
        let maps_a = per_sample_heatmaps(ctx.spec, &ens, &x_adv, layer, seed_adv, cfg.lrp_epsilon, cfg.stabilizer)?;
        let mean_x = crate::bayes::mean_heatmap(&maps_x);
        let mean_a = crate::bayes::mean_heatmap(&maps_a);
        for &k in &cfg.kgrid {
            klrp.insert((layer, k), klrp_robustness(&mean_x, &mean_a, k, cfg.ranking)?);
            let mut acc = 0.0;
            for (hx, ha) in maps_x.iter().zip(maps_a.iter()) {
                acc += klrp_robustness(hx, ha, k, cfg.ranking)?;
            }
            klrp_expected.insert((layer, k), acc / maps_x.len() as f64);
        }
    }
    Ok(RobustnessRecord {
        point_id: ctx.point_id,
        model_kind: kind,
        sample_count: n,
        true_label: ctx.true_label,
        clean_prediction: clean_pred,
        adversarial_prediction: adv_pred,
        softmax_robustness: softmax_robustness(&p_clean, &p_adv)?,
        klrp,
        klrp_expected,
        attack_succeeded: clean_pred != adv_pred,
    })
}

/// Sweep every test point; records are handed to `sink` in order, chunk
/// by chunk, so partial output survives a mid-run failure.
pub fn evaluate_with_sink(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    models: &PreparedModels,
    sink: &mut dyn FnMut(&RobustnessRecord) -> Result<()>,
) -> Result<ExperimentOutput> {
    let last_layer = models.spec.layer_count() - 1;
    let effective_ns: Vec<usize> = if models.ensemble.is_some() {
        cfg.sample_counts.clone()
    } else {
        vec![1]
    };
    let kind = match models.ensemble.as_ref().map(|e| e.method()) {
        Some(crate::bayes::InferenceMethod::Vi) => ModelKind::BayesVi,
        _ => ModelKind::BayesHmc,
    };

    let mut records: Vec<RobustnessRecord> = Vec::new();
    const CHUNK: usize = 32;
    for chunk in data.test_indices.chunks(CHUNK) {
        let chunk_records: Vec<Vec<RobustnessRecord>> = chunk
            .par_iter()
            .map(|&idx| -> Result<Vec<RobustnessRecord>> {
                let ctx = PointContext {
                    cfg,
                    spec: &models.spec,
                    last_layer,
                    point_id: idx,
                    x: data.test_pool.input(idx),
                    true_label: data.test_pool.label(idx),
                };
                let det = evaluate_det_point(&ctx, &models.det_weights)?;
                let mut out = Vec::with_capacity(2 * effective_ns.len());
                for &n in &effective_ns {
                    out.push(det.clone());
                    if let Some(ens) = &models.ensemble {
                        out.push(evaluate_bayes_point(&ctx, ens, n, kind)?);
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for per_point in chunk_records {
            for r in per_point {
                sink(&r)?;
                records.push(r);
            }
        }
    }
    let summary = summarize(cfg, models, &records)?;
    Ok(ExperimentOutput { records, summary })
}

pub fn evaluate(cfg: &ExperimentConfig, data: &PreparedData, models: &PreparedModels) -> Result<ExperimentOutput> {
    evaluate_with_sink(cfg, data, models, &mut |_| Ok(()))
}

/// The full pipeline: data, models, sweep.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let models = prepare_models(cfg, &data)?;
    evaluate(cfg, &data, &models)
}

/// Scatter cell: pre-softmax layer, k = 100 when present else the
/// largest configured k.
pub fn scatter_cell(cfg: &ExperimentConfig) -> (usize, usize) {
    let layer = *cfg.layers.iter().max().unwrap();
    let k = if cfg.kgrid.contains(&100) {
        100
    } else {
        *cfg.kgrid.iter().max().unwrap()
    };
    (layer, k)
}

/// Records of one group with deterministic replicas removed.
pub fn dedup_group<'a>(records: &'a [RobustnessRecord], kind: ModelKind, n: usize) -> Vec<&'a RobustnessRecord> {
    let mut seen = std::collections::BTreeSet::new();
    records
        .iter()
        .filter(|r| r.model_kind == kind && r.sample_count == n)
        .filter(|r| seen.insert(r.point_id))
        .collect()
}

fn summarize(cfg: &ExperimentConfig, models: &PreparedModels, records: &[RobustnessRecord]) -> Result<Summary> {
    let (scatter_layer, scatter_k) = scatter_cell(cfg);
    let mut keys: Vec<(ModelKind, usize)> = Vec::new();
    for r in records {
        let key = (r.model_kind, r.sample_count);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut groups = Vec::with_capacity(keys.len());
    for (kind, n) in keys {
        let rows = dedup_group(records, kind, n);
        let count = rows.len() as f64;
        let mut mean_klrp: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut mean_expected: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for r in &rows {
            for (&cell, &v) in &r.klrp {
                *mean_klrp.entry(cell).or_insert(0.0) += v / count;
            }
            for (&cell, &v) in &r.klrp_expected {
                *mean_expected.entry(cell).or_insert(0.0) += v / count;
            }
        }
        let xs: Vec<f64> = rows.iter().map(|r| r.klrp[&(scatter_layer, scatter_k)]).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.softmax_robustness).collect();
        let pearson = pearson_correlation(&xs, &ys).ok();
        groups.push(GroupStats {
            kind,
            sample_count: n,
            points: rows.len(),
            attack_success_rate: rows.iter().filter(|r| r.attack_succeeded).count() as f64 / count,
            mean_softmax_robustness: rows.iter().map(|r| r.softmax_robustness).sum::<f64>() / count,
            mean_klrp,
            mean_klrp_expected: mean_expected,
            lrp_softmax_pearson: pearson,
        });
    }
    let det = groups.iter().find(|g| g.kind == ModelKind::Deterministic).cloned();
    let mut gaps = Vec::new();
    if let Some(det) = det {
        for g in &groups {
            if g.kind == ModelKind::Deterministic {
                continue;
            }
            for (&(layer, k), &v) in &g.mean_klrp {
                gaps.push((g.sample_count, layer, k, v - det.mean_klrp[&(layer, k)]));
            }
        }
    }
    Ok(Summary {
        scatter_layer,
        scatter_k,
        groups,
        gaps,
        train_accuracy: models.train_accuracy,
        test_accuracy: models.test_accuracy,
        hmc_acceptance: models
            .ensemble
            .as_ref()
            .and_then(|e| e.meta().acceptance_rate),
    })
}

/// Zero-averaging statistic of the geometry task across sample counts.
#[derive(Debug, Clone)]
pub struct GeometryOutput {
    /// (sample count, mean cancellation ratio over the evaluation grid).
    pub ratios: Vec<(usize, f64)>,
    /// (sample count, grid index, per-point ratio, degenerate flag).
    pub per_point: Vec<(usize, usize, f64, bool)>,
    pub train_accuracy: f64,
    pub hmc_acceptance: f64,
}

/// Train on the circle task, sample the posterior, and measure how the
/// posterior-averaged normal gradient shrinks with the sample count.
pub fn run_geometry(cfg: &ExperimentConfig) -> Result<GeometryOutput> {
    let mspec = ManifoldSpec::circle(cfg.manifold_dim)?;
    let train = make_manifold_dataset(&mspec, cfg.train_size, 0.0, cfg.seed)?;
    let spec = NetworkSpec::mlp(cfg.manifold_dim, &cfg.hidden_sizes, 2, cfg.has_bias)?;
    let mut sgd = cfg.sgd;
    sgd.seed = cfg.seed;
    let det = train_sgd(&spec, &train, &sgd)?;
    let train_accuracy = accuracy(&spec, &det, &train)?;

    let prior = GaussianPrior::new(cfg.prior_std)?;
    let mut hmc_cfg = cfg.hmc;
    hmc_cfg.seed = cfg.seed;
    let subset = if train.len() > cfg.hmc_subset {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut substream(cfg.seed, "hmc-subset"));
        let mut idx = order[..cfg.hmc_subset].to_vec();
        idx.sort_unstable();
        train.select(&idx)
    } else {
        train.clone()
    };
    let warm = cfg.hmc_warm_start.then_some(&det);
    let ensemble = hmc_sample(&spec, &subset, &prior, &hmc_cfg, warm)?;

    let grid = make_manifold_grid(&mspec, cfg.geometry_points)?;
    let points: Vec<Vec<f64>> = grid.inputs().to_vec();

    let mut ns: Vec<usize> = cfg.sample_counts.clone();
    if !ns.contains(&1) {
        ns.insert(0, 1);
    }
    ns.sort_unstable();
    ns.dedup();

    let mut ratios = Vec::new();
    let mut per_point = Vec::new();
    for &n in &ns {
        if n > ensemble.len() {
            return Err(Error::Parameter(format!(
                "geometry needs {n} samples but HMC stored {}",
                ensemble.len()
            )));
        }
        let sub = ensemble.strided_subset(n)?;
        let stat = zero_avg_statistic(&spec, &sub, &mspec, &points, 0)?;
        ratios.push((n, stat.ratio));
        for (i, p) in stat.per_point.iter().enumerate() {
            per_point.push((n, i, p.ratio, p.degenerate));
        }
    }
    Ok(GeometryOutput {
        ratios,
        per_point,
        train_accuracy,
        hmc_acceptance: ensemble.meta().acceptance_rate.unwrap_or(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_sampler_quota_property() {
        let mut rng = substream(3, "balance-test");
        // 10 classes, 40 each.
        let labels: Vec<usize> = (0..400).map(|i| i % 10).collect();
        for &size in &[500usize.min(400), 100, 97, 10, 3] {
            let idx = balanced_test_indices(&labels, 10, size, &mut rng).unwrap();
            assert_eq!(idx.len(), size);
            let mut per_class = vec![0usize; 10];
            for &i in &idx {
                per_class[labels[i]] += 1;
            }
            let base = size / 10;
            for (c, &n) in per_class.iter().enumerate() {
                assert!(
                    n == base || n == base + 1,
                    "size {size}: class {c} got {n} points"
                );
            }
            // No duplicates.
            let mut sorted = idx.clone();
            sorted.dedup();
            assert_eq!(sorted.len(), idx.len());
        }
    }

    #[test]
    fn balanced_sampler_handles_scarce_classes() {
        let mut rng = substream(4, "balance-scarce");
        // Class 1 has only 2 points.
        let labels = vec![0, 0, 0, 0, 0, 0, 1, 1];
        let idx = balanced_test_indices(&labels, 2, 6, &mut rng).unwrap();
        assert_eq!(idx.len(), 6);
        let ones = idx.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(ones, 2);
    }
}
