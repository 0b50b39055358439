//! Exact reverse-mode gradients for single examples.
//!
//! The loss is the per-example cross-entropy over the softmax,
//! `L = logsumexp(z) - z_y`, whose logit gradient is `softmax(z) - onehot(y)`.
//! From there the usual backward recursion applies:
//! `gW_l = delta_l ⊗ a_{l-1}`, `gb_l = delta_l`,
//! `delta_{l-1} = (W_l^T delta_l) ⊙ act'(z_{l-1})`.

use super::{forward, softmax, NetworkSpec, WeightVector};
use crate::error::{Error, Result};

fn check_label(spec: &NetworkSpec, y: usize) -> Result<()> {
    if y >= spec.class_count() {
        return Err(Error::Parameter(format!(
            "label {y} out of range for {} classes",
            spec.class_count()
        )));
    }
    Ok(())
}

/// Per-example cross-entropy loss `-log softmax(z)[y]`.
pub fn cross_entropy_loss(spec: &NetworkSpec, w: &WeightVector, x: &[f64], y: usize) -> Result<f64> {
    check_label(spec, y)?;
    let trace = forward(spec, w, x)?;
    let z = trace.logits();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    Ok(lse - z[y])
}

/// Backward recursion shared by the gradient entry points. `delta` is the
/// gradient at the logits; returns (weight gradient, input gradient).
fn backward(
    spec: &NetworkSpec,
    w: &WeightVector,
    trace: &super::ActivationTrace,
    mut delta: Vec<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let mut grad_w = vec![0.0; spec.param_count()];
    for l in (0..spec.layer_count()).rev() {
        let layer = &spec.layers()[l];
        let a_prev: &[f64] = if l == 0 {
            &trace.input
        } else {
            &trace.post_activations[l - 1]
        };
        let off = spec.layer_offset(l);
        let wm = w.weights(spec, l);

        // Parameter gradients of this layer.
        for k in 0..layer.output_width {
            let dk = delta[k];
            let row = &mut grad_w[off + k * layer.input_width..off + (k + 1) * layer.input_width];
            for (g, &aj) in row.iter_mut().zip(a_prev.iter()) {
                *g = dk * aj;
            }
        }
        if layer.has_bias {
            let boff = off + layer.input_width * layer.output_width;
            grad_w[boff..boff + layer.output_width].copy_from_slice(&delta);
        }

        // Gradient w.r.t. this layer's inputs.
        let mut delta_prev = vec![0.0; layer.input_width];
        for k in 0..layer.output_width {
            let dk = delta[k];
            if dk == 0.0 {
                continue;
            }
            let row = &wm[k * layer.input_width..(k + 1) * layer.input_width];
            for (dp, &wjk) in delta_prev.iter_mut().zip(row.iter()) {
                *dp += wjk * dk;
            }
        }
        if l > 0 {
            let act = spec.layers()[l - 1].activation;
            for (dp, &z) in delta_prev.iter_mut().zip(trace.pre_activations[l - 1].iter()) {
                *dp *= act.derivative(z);
            }
        }
        delta = delta_prev;
    }
    (grad_w, delta)
}

fn loss_delta(trace: &super::ActivationTrace, y: usize) -> Vec<f64> {
    let mut delta = softmax(trace.logits());
    delta[y] -= 1.0;
    delta
}

/// Gradient of the cross-entropy loss with respect to every weight.
pub fn grad_loss_weights(spec: &NetworkSpec, w: &WeightVector, x: &[f64], y: usize) -> Result<Vec<f64>> {
    check_label(spec, y)?;
    let trace = forward(spec, w, x)?;
    let delta = loss_delta(&trace, y);
    Ok(backward(spec, w, &trace, delta).0)
}

/// Gradient of the cross-entropy loss with respect to the input.
pub fn grad_loss_input(spec: &NetworkSpec, w: &WeightVector, x: &[f64], y: usize) -> Result<Vec<f64>> {
    check_label(spec, y)?;
    let trace = forward(spec, w, x)?;
    let delta = loss_delta(&trace, y);
    Ok(backward(spec, w, &trace, delta).1)
}

/// Gradient of one pre-softmax logit with respect to the input.
pub fn grad_logit_input(spec: &NetworkSpec, w: &WeightVector, x: &[f64], class: usize) -> Result<Vec<f64>> {
    check_label(spec, class)?;
    let trace = forward(spec, w, x)?;
    let mut delta = vec![0.0; spec.class_count()];
    delta[class] = 1.0;
    Ok(backward(spec, w, &trace, delta).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use crate::rng::substream;
    use rand::Rng;

    /// Central finite differences over an arbitrary scalar function.
    fn central_diff(mut f: impl FnMut(&[f64]) -> f64, at: &[f64], step: f64) -> Vec<f64> {
        let mut point = at.to_vec();
        let mut grad = vec![0.0; at.len()];
        for i in 0..at.len() {
            let orig = point[i];
            point[i] = orig + step;
            let plus = f(&point);
            point[i] = orig - step;
            let minus = f(&point);
            point[i] = orig;
            grad[i] = (plus - minus) / (2.0 * step);
        }
        grad
    }

    fn assert_close_rel(analytic: &[f64], numeric: &[f64], tol: f64) {
        assert_eq!(analytic.len(), numeric.len());
        for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
            let denom = a.abs().max(n.abs()).max(1.0);
            assert!(
                (a - n).abs() / denom < tol,
                "component {i}: analytic {a} vs numeric {n}"
            );
        }
    }

    fn random_net(rng: &mut impl Rng) -> (NetworkSpec, WeightVector, Vec<f64>) {
        let depth = rng.random_range(1..=3usize);
        let classes = rng.random_range(2..=4usize);
        let mut widths = vec![rng.random_range(2..=8usize)];
        for _ in 0..depth {
            widths.push(rng.random_range(2..=8usize));
        }
        let hidden = &widths[1..];
        let spec = NetworkSpec::mlp(widths[0], hidden, classes, rng.random_bool(0.5)).unwrap();
        let w = WeightVector::init(&spec, rng);
        let x: Vec<f64> = (0..widths[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        (spec, w, x)
    }

    /// Skip draws whose hidden pre-activations sit near a ReLU kink, where
    /// finite differences are not valid.
    fn near_kink(spec: &NetworkSpec, w: &WeightVector, x: &[f64]) -> bool {
        let trace = forward(spec, w, x).unwrap();
        trace.pre_activations[..spec.layer_count() - 1]
            .iter()
            .flatten()
            .any(|z| z.abs() < 1e-4)
    }

    #[test]
    fn weight_gradient_matches_finite_differences() {
        let mut rng = substream(11, "fd-weights");
        let mut done = 0;
        while done < 20 {
            let (spec, w, x) = random_net(&mut rng);
            if near_kink(&spec, &w, &x) {
                continue;
            }
            let y = rng.random_range(0..spec.class_count());
            let analytic = grad_loss_weights(&spec, &w, &x, y).unwrap();
            let numeric = central_diff(
                |v| {
                    let wv = WeightVector::from_values(&spec, v.to_vec()).unwrap();
                    cross_entropy_loss(&spec, &wv, &x, y).unwrap()
                },
                w.values(),
                1e-5,
            );
            assert_close_rel(&analytic, &numeric, 1e-6);
            done += 1;
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = substream(13, "fd-input");
        let mut done = 0;
        while done < 20 {
            let (spec, w, x) = random_net(&mut rng);
            if near_kink(&spec, &w, &x) {
                continue;
            }
            let y = rng.random_range(0..spec.class_count());
            let analytic = grad_loss_input(&spec, &w, &x, y).unwrap();
            let numeric = central_diff(
                |v| cross_entropy_loss(&spec, &w, v, y).unwrap(),
                &x,
                1e-5,
            );
            assert_close_rel(&analytic, &numeric, 1e-6);
            done += 1;
        }
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let mut rng = substream(17, "fd-logit");
        let mut done = 0;
        while done < 10 {
            let (spec, w, x) = random_net(&mut rng);
            if near_kink(&spec, &w, &x) {
                continue;
            }
            let c = rng.random_range(0..spec.class_count());
            let analytic = grad_logit_input(&spec, &w, &x, c).unwrap();
            let numeric = central_diff(
                |v| forward(&spec, &w, v).unwrap().logits()[c],
                &x,
                1e-5,
            );
            assert_close_rel(&analytic, &numeric, 1e-6);
            done += 1;
        }
    }

    #[test]
    fn saturated_softmax_has_vanishing_gradient() {
        // One linear layer, logits (45, 0) on class 0: margin > 40.
        let spec = NetworkSpec::new(
            vec![LayerSpec {
                input_width: 1,
                output_width: 2,
                has_bias: false,
                activation: Activation::Identity,
            }],
            2,
        )
        .unwrap();
        let w = WeightVector::from_values(&spec, vec![45.0, 0.0]).unwrap();
        let g = grad_loss_weights(&spec, &w, &[1.0], 0).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-8, "norm = {norm}");
    }

    #[test]
    fn single_linear_unit_closed_form() {
        // Two-class linear model: grad over weights is (p - onehot(y)) ⊗ x.
        let spec = NetworkSpec::new(
            vec![LayerSpec {
                input_width: 3,
                output_width: 2,
                has_bias: false,
                activation: Activation::Identity,
            }],
            2,
        )
        .unwrap();
        let values = vec![0.4, -0.2, 0.1, -0.3, 0.5, 0.2];
        let w = WeightVector::from_values(&spec, values).unwrap();
        let x = [0.7, -0.4, 0.9];
        let y = 1;
        let p = predictions(&spec, &w, &x);
        let g = grad_loss_weights(&spec, &w, &x, y).unwrap();
        for k in 0..2 {
            let coeff = p[k] - if k == y { 1.0 } else { 0.0 };
            for j in 0..3 {
                let expect = coeff * x[j];
                assert!((g[k * 3 + j] - expect).abs() < 1e-12);
            }
        }
    }

    fn predictions(spec: &NetworkSpec, w: &WeightVector, x: &[f64]) -> Vec<f64> {
        softmax(forward(spec, w, x).unwrap().logits())
    }

    #[test]
    fn zero_weight_network_has_zero_input_gradient() {
        let spec = NetworkSpec::mlp(4, &[3], 2, false).unwrap();
        let w = WeightVector::zeros(&spec);
        let g = grad_loss_input(&spec, &w, &[0.1, 0.2, 0.3, 0.4], 0).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logistic_input_gradient_closed_form() {
        // Logits (0, w x) make softmax[1] = sigmoid(w x); the input gradient
        // for label y is (sigmoid(w x) - y) * w.
        let spec = NetworkSpec::new(
            vec![LayerSpec {
                input_width: 1,
                output_width: 2,
                has_bias: false,
                activation: Activation::Identity,
            }],
            2,
        )
        .unwrap();
        let wv = 2.0;
        let w = WeightVector::from_values(&spec, vec![0.0, wv]).unwrap();
        let x = [0.4];
        let sigma = 1.0 / (1.0 + (-wv * x[0]).exp());
        let g = grad_loss_input(&spec, &w, &x, 1).unwrap();
        assert!((g[0] - (sigma - 1.0) * wv).abs() < 1e-12);
    }
}
