//! Labeled classification data.

use crate::error::{Error, Result};

/// Input vectors paired with class indices. Pixel datasets keep entries
/// in `[0, 1]`; synthetic manifold data may leave that range.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if inputs.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} labels",
                inputs.len(),
                labels.len()
            )));
        }
        if let Some(first) = inputs.first() {
            let d = first.len();
            if d == 0 {
                return Err(Error::Shape("inputs must have positive dimension".into()));
            }
            for (i, x) in inputs.iter().enumerate() {
                if x.len() != d {
                    return Err(Error::Shape(format!(
                        "input {} has dimension {}, expected {}",
                        i,
                        x.len(),
                        d
                    )));
                }
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numeric(format!("input {i} contains non-finite values")));
                }
            }
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// New dataset holding the rows at `indices` in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}
