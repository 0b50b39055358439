//! ε-rule layer-wise relevance propagation.
//!
//! Relevance enters at a seed layer (one class unit, or every unit of an
//! inner layer weighted by its own activation) and is pushed down to the
//! input pixels. One step through a dense layer distributes the relevance
//! of output unit `k` over its inputs in proportion to `a_j w_jk`, divided
//! by the stabilized total pre-activation of `k`; the bias share is
//! discarded at each step.

use crate::error::{Error, Result};
use crate::nn::{forward, ActivationTrace, NetworkSpec, WeightVector};

/// What receives the initial relevance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelevanceSeed {
    /// One unit of the seed layer, seeded with its own post-activation
    /// (at the final layer: the chosen pre-softmax logit).
    Class(usize),
    /// Every unit of the seed layer, each seeded with its own
    /// post-activation (inner-layer mode).
    AllUnits,
}

/// Denominator stabilization for the ε-rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stabilizer {
    /// `ε + z` exactly as written in the propagation rule.
    Literal,
    /// `z + ε·sign(z)` with `sign(0) := 1`; never crosses zero for ε > 0.
    SignMatched,
}

impl Stabilizer {
    #[inline]
    fn apply(self, z: f64, eps: f64) -> f64 {
        match self {
            Stabilizer::Literal => eps + z,
            Stabilizer::SignMatched => {
                let s = if z < 0.0 { -1.0 } else { 1.0 };
                z + eps * s
            }
        }
    }
}

/// Per-pixel relevance scores of one input under one weight setting.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub relevances: Vec<f64>,
    pub seed_layer: usize,
    pub seed: RelevanceSeed,
    pub lrp_epsilon: f64,
}

/// The k most relevant pixel indices of a heatmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopKSet {
    indices: Vec<usize>, // sorted ascending
    k: usize,
    pixel_count: usize,
}

impl TopKSet {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pixel_count(&self) -> usize {
        self.pixel_count
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.indices.binary_search(&idx).is_ok()
    }

    /// Size of the intersection with another Top-k set.
    pub fn overlap(&self, other: &TopKSet) -> usize {
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }
}

/// Ranking used to pick the Top-k pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ranking {
    SignedDescending,
    AbsoluteDescending,
}

/// One backward relevance sweep from an explicit seed vector at
/// `seed_layer`'s outputs down to the input pixels.
fn propagate_relevance(
    spec: &NetworkSpec,
    w: &WeightVector,
    trace: &ActivationTrace,
    seed_layer: usize,
    seed_rel: Vec<f64>,
    eps: f64,
    stabilizer: Stabilizer,
) -> Result<Vec<f64>> {
    let mut rel = seed_rel;
    for l in (0..=seed_layer).rev() {
        let layer = &spec.layers()[l];
        let a_prev: &[f64] = if l == 0 {
            &trace.input
        } else {
            &trace.post_activations[l - 1]
        };
        let wm = w.weights(spec, l);
        let z = &trace.pre_activations[l];
        let mut rel_prev = vec![0.0; layer.input_width];
        for k in 0..layer.output_width {
            let rk = rel[k];
            if rk == 0.0 {
                continue; // nothing to redistribute
            }
            let denom = stabilizer.apply(z[k], eps);
            if denom == 0.0 {
                return Err(Error::DivisionHazard { layer: l, unit: k });
            }
            let scale = rk / denom;
            let row = &wm[k * layer.input_width..(k + 1) * layer.input_width];
            for ((rp, &wjk), &aj) in rel_prev.iter_mut().zip(row.iter()).zip(a_prev.iter()) {
                *rp += aj * wjk * scale;
            }
        }
        rel = rel_prev;
    }
    if !rel.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("relevance heatmap contains non-finite values".into()));
    }
    Ok(rel)
}

/// ε-rule heatmap over the input pixels.
pub fn lrp_epsilon(
    spec: &NetworkSpec,
    w: &WeightVector,
    trace: &ActivationTrace,
    seed_layer: usize,
    seed: RelevanceSeed,
    eps: f64,
    stabilizer: Stabilizer,
) -> Result<Heatmap> {
    if seed_layer >= spec.layer_count() {
        return Err(Error::Parameter(format!(
            "seed layer {seed_layer} out of range for {} layers",
            spec.layer_count()
        )));
    }
    if eps < 0.0 {
        return Err(Error::Parameter("lrp epsilon must be >= 0".into()));
    }
    let width = spec.layers()[seed_layer].output_width;
    let seed_rel = match seed {
        RelevanceSeed::Class(c) => {
            if c >= width {
                return Err(Error::Parameter(format!(
                    "seed class {c} out of range for layer width {width}"
                )));
            }
            let mut v = vec![0.0; width];
            v[c] = trace.post_activations[seed_layer][c];
            v
        }
        RelevanceSeed::AllUnits => trace.post_activations[seed_layer].clone(),
    };
    let relevances = propagate_relevance(spec, w, trace, seed_layer, seed_rel, eps, stabilizer)?;
    Ok(Heatmap {
        relevances,
        seed_layer,
        seed,
        lrp_epsilon: eps,
    })
}

/// The k best pixels under the chosen ranking; ties break toward the
/// lower pixel index.
pub fn top_k(hm: &Heatmap, k: usize, ranking: Ranking) -> Result<TopKSet> {
    let p = hm.relevances.len();
    if k == 0 || k > p {
        return Err(Error::Parameter(format!("k = {k} must be in 1..={p}")));
    }
    let key = |v: f64| match ranking {
        Ranking::SignedDescending => v,
        Ranking::AbsoluteDescending => v.abs(),
    };
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_unstable_by(|&a, &b| {
        key(hm.relevances[b])
            .total_cmp(&key(hm.relevances[a]))
            .then(a.cmp(&b))
    });
    let mut indices: Vec<usize> = order[..k].to_vec();
    indices.sort_unstable();
    Ok(TopKSet {
        indices,
        k,
        pixel_count: p,
    })
}

/// First-order Taylor attribution of one pre-softmax logit around a
/// user-supplied root point.
#[derive(Debug, Clone)]
pub struct TaylorAttribution {
    /// `∂f/∂x_p` at the root times `(x_p - root_p)`.
    pub per_pixel_terms: Vec<f64>,
    pub root_point: Vec<f64>,
    /// Logit value at the root.
    pub root_value: f64,
    /// Logit value at the input.
    pub input_value: f64,
    /// Higher-order remainder: `f(x) - f(root) - Σ terms`.
    pub residual: f64,
}

/// Decompose logit `class` at `x` as `f(root) + Σ_p terms_p + residual`.
pub fn taylor_attribution(
    spec: &NetworkSpec,
    w: &WeightVector,
    x: &[f64],
    root: &[f64],
    class: usize,
) -> Result<TaylorAttribution> {
    if root.len() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "root has {} entries, spec expects {}",
            root.len(),
            spec.input_dim()
        )));
    }
    let grad_at_root = crate::nn::grad_logit_input(spec, w, root, class)?;
    let input_value = forward(spec, w, x)?.logits()[class];
    let root_value = forward(spec, w, root)?.logits()[class];
    let per_pixel_terms: Vec<f64> = grad_at_root
        .iter()
        .zip(x.iter().zip(root.iter()))
        .map(|(&g, (&xp, &rp))| g * (xp - rp))
        .collect();
    let sum: f64 = per_pixel_terms.iter().sum();
    Ok(TaylorAttribution {
        per_pixel_terms,
        root_point: root.to_vec(),
        root_value,
        input_value,
        residual: input_value - root_value - sum,
    })
}
