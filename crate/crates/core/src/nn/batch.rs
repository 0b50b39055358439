//! Batched cross-entropy loss/gradient over many examples.
//!
//! This is the throughput path behind SGD, VI and the HMC potential: the
//! per-layer sums become matrix products over row-blocks of examples.
//! Blocks are processed in parallel but always reduced in block order, so
//! results are bit-reproducible regardless of thread count.

use super::{NetworkSpec, WeightVector};
use crate::error::{Error, Result};
use crate::nn::{Activation, LabeledDataset};
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;

const BLOCK_ROWS: usize = 256;

/// Dataset rows packed into one matrix for the batched path.
#[derive(Debug, Clone)]
pub struct BatchedData {
    x: Array2<f64>,
    y: Vec<usize>,
}

impl BatchedData {
    pub fn from_dataset(data: &LabeledDataset) -> Self {
        let n = data.len();
        let d = data.dim();
        let mut flat = Vec::with_capacity(n * d);
        for row in data.inputs() {
            flat.extend_from_slice(row);
        }
        Self {
            x: Array2::from_shape_vec((n, d), flat).unwrap(),
            y: data.labels().to_vec(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

fn weight_view<'a>(spec: &NetworkSpec, w: &'a WeightVector, l: usize) -> ArrayView2<'a, f64> {
    let layer = &spec.layers()[l];
    ArrayView2::from_shape((layer.output_width, layer.input_width), w.weights(spec, l)).unwrap()
}

/// Loss sum and weight-gradient sum over one row block.
fn block_loss_grad(spec: &NetworkSpec, w: &WeightVector, x: ArrayView2<'_, f64>, y: &[usize]) -> (f64, Vec<f64>) {
    let layer_count = spec.layer_count();
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(layer_count);
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(layer_count);

    for l in 0..layer_count {
        let layer = &spec.layers()[l];
        let a_prev = if l == 0 { x } else { post[l - 1].view() };
        let mut z = a_prev.dot(&weight_view(spec, w, l).t());
        if layer.has_bias {
            let b = Array1::from_vec(w.bias(spec, l).to_vec());
            z += &b;
        }
        let act = match layer.activation {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Identity => z.clone(),
        };
        pre.push(z);
        post.push(act);
    }

    // Stable softmax rows and loss sum.
    let logits = &post[layer_count - 1];
    let mut delta = logits.clone();
    let mut loss = 0.0;
    for (r, mut row) in delta.axis_iter_mut(Axis(0)).enumerate() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        loss += sum.ln() + m - logits[(r, y[r])];
        for v in row.iter_mut() {
            *v /= sum;
        }
        row[y[r]] -= 1.0;
    }

    let mut grad = vec![0.0; spec.param_count()];
    for l in (0..layer_count).rev() {
        let layer = &spec.layers()[l];
        let a_prev = if l == 0 { x } else { post[l - 1].view() };
        let off = spec.layer_offset(l);

        let gw = delta.t().dot(&a_prev);
        let wlen = layer.input_width * layer.output_width;
        grad[off..off + wlen].copy_from_slice(gw.as_slice().unwrap());
        if layer.has_bias {
            let gb = delta.sum_axis(Axis(0));
            grad[off + wlen..off + wlen + layer.output_width]
                .copy_from_slice(gb.as_slice().unwrap());
        }

        if l > 0 {
            let mut delta_prev = delta.dot(&weight_view(spec, w, l));
            if spec.layers()[l - 1].activation == Activation::Relu {
                Zip::from(&mut delta_prev).and(&pre[l - 1]).for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = delta_prev;
        }
    }
    (loss, grad)
}

/// Sum over all rows of the per-example cross-entropy loss, plus the
/// matching weight-gradient sum. An empty batch returns zeros.
pub fn batch_loss_grad(spec: &NetworkSpec, w: &WeightVector, data: &BatchedData) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Ok((0.0, vec![0.0; spec.param_count()]));
    }
    if data.dim() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "batch dimension {} != network input {}",
            data.dim(),
            spec.input_dim()
        )));
    }
    if let Some(&bad) = data.y.iter().find(|&&y| y >= spec.class_count()) {
        return Err(Error::Parameter(format!(
            "label {bad} out of range for {} classes",
            spec.class_count()
        )));
    }

    let n = data.len();
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(BLOCK_ROWS)
        .map(|s| (s, (s + BLOCK_ROWS).min(n)))
        .collect();
    let partials: Vec<(f64, Vec<f64>)> = blocks
        .par_iter()
        .map(|&(s, e)| {
            block_loss_grad(
                spec,
                w,
                data.x.slice(ndarray::s![s..e, ..]),
                &data.y[s..e],
            )
        })
        .collect();

    // Fixed-order reduction keeps float sums reproducible.
    let mut loss = 0.0;
    let mut grad = vec![0.0; spec.param_count()];
    for (l, g) in partials {
        loss += l;
        for (acc, v) in grad.iter_mut().zip(g.iter()) {
            *acc += v;
        }
    }
    Ok((loss, grad))
}
