//! Feed-forward network core: architecture spec, flat weight storage,
//! forward pass with activation caching, and a stabilized softmax.
//!
//! Layers are dense: `z = W a + b`, `a' = activation(z)` with `W` stored
//! row-major as `(output_width, input_width)`. The final layer is always
//! identity so the last post-activations are the pre-softmax logits.

mod batch;
mod dataset;
mod grad;
mod train;

pub use batch::{batch_loss_grad, BatchedData};
pub use dataset::LabeledDataset;
pub use grad::{cross_entropy_loss, grad_logit_input, grad_loss_input, grad_loss_weights};
pub use train::{accuracy, train_sgd, SgdConfig};

use crate::error::{Error, Result};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative as a function of the pre-activation. ReLU uses the
    /// right derivative at 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub has_bias: bool,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.input_width * self.output_width + if self.has_bias { self.output_width } else { 0 }
    }
}

/// Architecture description: an ordered chain of dense layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    class_count: usize,
}

impl NetworkSpec {
    pub fn new(layers: Vec<LayerSpec>, class_count: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("network needs at least one layer".into()));
        }
        if class_count == 0 {
            return Err(Error::Parameter("class_count must be positive".into()));
        }
        for l in &layers {
            if l.input_width == 0 || l.output_width == 0 {
                return Err(Error::Parameter("layer widths must be positive".into()));
            }
        }
        for w in layers.windows(2) {
            if w[0].output_width != w[1].input_width {
                return Err(Error::Shape(format!(
                    "layer widths do not chain: {} -> {}",
                    w[0].output_width, w[1].input_width
                )));
            }
        }
        let last = layers.last().unwrap();
        if last.activation != Activation::Identity {
            return Err(Error::Parameter(
                "final layer must have identity activation (pre-softmax logits)".into(),
            ));
        }
        if last.output_width != class_count {
            return Err(Error::Shape(format!(
                "final layer width {} != class_count {}",
                last.output_width, class_count
            )));
        }
        Ok(Self { layers, class_count })
    }

    /// ReLU MLP: `input_dim -> hidden[0] -> ... -> class_count`.
    pub fn mlp(input_dim: usize, hidden: &[usize], class_count: usize, has_bias: bool) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(LayerSpec {
                input_width: prev,
                output_width: h,
                has_bias,
                activation: Activation::Relu,
            });
            prev = h;
        }
        layers.push(LayerSpec {
            input_width: prev,
            output_width: class_count,
            has_bias,
            activation: Activation::Identity,
        });
        Self::new(layers, class_count)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_width
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Offset of layer `l`'s weight block inside the flat vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.layers[..l].iter().map(LayerSpec::param_count).sum()
    }
}

/// Flat 64-bit parameter vector laid out per layer as the row-major
/// weight matrix followed by the bias vector when present.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
}

impl WeightVector {
    pub fn from_values(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "weight vector has {} values, spec needs {}",
                values.len(),
                spec.param_count()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("weight vector contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    /// Construct from a flat vector without a spec at hand; the length is
    /// validated against a spec wherever the weights are used.
    pub fn from_flat(values: Vec<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("weight vector contains non-finite values".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
        }
    }

    /// Seeded uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Self {
        let mut values = Vec::with_capacity(spec.param_count());
        for layer in spec.layers() {
            let bound = 1.0 / (layer.input_width as f64).sqrt();
            let n = layer.param_count();
            for _ in 0..n {
                values.push(rng.random_range(-bound..bound));
            }
        }
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Row-major `(output_width, input_width)` weight block of layer `l`.
    pub fn weights<'a>(&'a self, spec: &NetworkSpec, l: usize) -> &'a [f64] {
        let layer = &spec.layers()[l];
        let off = spec.layer_offset(l);
        &self.values[off..off + layer.input_width * layer.output_width]
    }

    /// Bias block of layer `l`, empty when the layer has none.
    pub fn bias<'a>(&'a self, spec: &NetworkSpec, l: usize) -> &'a [f64] {
        let layer = &spec.layers()[l];
        if !layer.has_bias {
            return &[];
        }
        let off = spec.layer_offset(l) + layer.input_width * layer.output_width;
        &self.values[off..off + layer.output_width]
    }
}

/// Per-layer pre- and post-activations cached during a forward pass.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub input: Vec<f64>,
    pub pre_activations: Vec<Vec<f64>>,
    pub post_activations: Vec<Vec<f64>>,
}

impl ActivationTrace {
    /// Final post-activations (the pre-softmax logits).
    pub fn logits(&self) -> &[f64] {
        self.post_activations.last().unwrap()
    }
}

fn check_input(spec: &NetworkSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "input has {} entries, spec expects {}",
            x.len(),
            spec.input_dim()
        )));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("input contains non-finite values".into()));
    }
    Ok(())
}

fn check_weights(spec: &NetworkSpec, w: &WeightVector) -> Result<()> {
    if w.values().len() != spec.param_count() {
        return Err(Error::Shape(format!(
            "weight vector has {} values, spec needs {}",
            w.values().len(),
            spec.param_count()
        )));
    }
    Ok(())
}

/// Forward pass caching every layer's pre- and post-activations.
pub fn forward(spec: &NetworkSpec, w: &WeightVector, x: &[f64]) -> Result<ActivationTrace> {
    check_input(spec, x)?;
    check_weights(spec, w)?;
    let mut pre = Vec::with_capacity(spec.layer_count());
    let mut post = Vec::with_capacity(spec.layer_count());
    let mut a: &[f64] = x;
    for (l, layer) in spec.layers().iter().enumerate() {
        let wm = w.weights(spec, l);
        let b = w.bias(spec, l);
        let mut z = vec![0.0; layer.output_width];
        for (k, zk) in z.iter_mut().enumerate() {
            let row = &wm[k * layer.input_width..(k + 1) * layer.input_width];
            let mut s = if layer.has_bias { b[k] } else { 0.0 };
            for (wjk, aj) in row.iter().zip(a.iter()) {
                s += wjk * aj;
            }
            *zk = s;
        }
        let act: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
        pre.push(z);
        post.push(act);
        a = post.last().unwrap();
    }
    Ok(ActivationTrace {
        input: x.to_vec(),
        pre_activations: pre,
        post_activations: post,
    })
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Class probabilities for input `x`.
pub fn predict_softmax(spec: &NetworkSpec, w: &WeightVector, x: &[f64]) -> Result<Vec<f64>> {
    let trace = forward(spec, w, x)?;
    Ok(softmax(trace.logits()))
}

/// Index of the largest probability (ties to the lower index).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn identity_2d() -> (NetworkSpec, WeightVector) {
        let spec = NetworkSpec::new(
            vec![LayerSpec {
                input_width: 2,
                output_width: 2,
                has_bias: false,
                activation: Activation::Identity,
            }],
            2,
        )
        .unwrap();
        let w = WeightVector::from_values(&spec, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        (spec, w)
    }

    #[test]
    fn identity_network_passes_input_through() {
        let (spec, w) = identity_2d();
        let trace = forward(&spec, &w, &[0.3, 0.7]).unwrap();
        assert_eq!(trace.logits(), &[0.3, 0.7]);
    }

    #[test]
    fn single_relu_layer_hand_case() {
        // weights [[1, -1]] applied to (0.5, 2.0): z = -1.5, relu -> 0.
        let spec = NetworkSpec::new(
            vec![
                LayerSpec {
                    input_width: 2,
                    output_width: 1,
                    has_bias: false,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    input_width: 1,
                    output_width: 1,
                    has_bias: false,
                    activation: Activation::Identity,
                },
            ],
            1,
        )
        .unwrap();
        let w = WeightVector::from_values(&spec, vec![1.0, -1.0, 1.0]).unwrap();
        let trace = forward(&spec, &w, &[0.5, 2.0]).unwrap();
        assert_eq!(trace.pre_activations[0], vec![-1.5]);
        assert_eq!(trace.post_activations[0], vec![0.0]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let spec = NetworkSpec::mlp(3, &[4], 2, true).unwrap();
        let w = WeightVector::zeros(&spec);
        let trace = forward(&spec, &w, &[0.1, 0.9, 0.4]).unwrap();
        assert!(trace.logits().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let (spec, w) = identity_2d();
        assert!(matches!(forward(&spec, &w, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let p = softmax(&[0.0, 0.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&[3.0f64.ln(), 0.0]);
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn softmax_lies_on_simplex() {
        let mut rng = crate::rng::substream(3, "softmax-test");
        use rand::Rng;
        for _ in 0..100 {
            let logits: Vec<f64> = (0..7).map(|_| rng.random_range(-50.0..50.0)).collect();
            let p = softmax(&logits);
            assert!(p.iter().all(|&v| v >= 0.0));
            let s: f64 = p.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_validation_catches_bad_chains() {
        let bad = NetworkSpec::new(
            vec![
                LayerSpec {
                    input_width: 2,
                    output_width: 3,
                    has_bias: false,
                    activation: Activation::Relu,
                },
                LayerSpec {
                    input_width: 4,
                    output_width: 2,
                    has_bias: false,
                    activation: Activation::Identity,
                },
            ],
            2,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn spec_requires_identity_head() {
        let bad = NetworkSpec::new(
            vec![LayerSpec {
                input_width: 2,
                output_width: 2,
                has_bias: false,
                activation: Activation::Relu,
            }],
            2,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn weight_vector_length_is_checked() {
        let spec = NetworkSpec::mlp(2, &[3], 2, true).unwrap();
        assert_eq!(spec.param_count(), 2 * 3 + 3 + 3 * 2 + 2);
        assert!(WeightVector::from_values(&spec, vec![0.0; 5]).is_err());
    }
}
