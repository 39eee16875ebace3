use rand::Rng;

use super::{init_uniform, Model};
use crate::error::{Error, Result};
use crate::label::ClassProbs;

/// Single linear layer mapping a D-vector to two logits.
///
/// Parameters are stored flat: the 2×D weight matrix row-major, then the
/// two biases.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    dim: usize,
    params: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(dim: usize) -> Self {
        LinearHead {
            dim,
            params: vec![0.0; 2 * dim + 2],
        }
    }

    pub fn init<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let mut head = Self::zeros(dim);
        init_uniform(&mut head.params, rng);
        head
    }

    pub fn from_params(dim: usize, params: Vec<f64>) -> Result<Self> {
        if params.len() != 2 * dim + 2 {
            return Err(Error::Shape(format!(
                "linear head of dimension {dim} needs {} parameters, got {}",
                2 * dim + 2,
                params.len()
            )));
        }
        Ok(LinearHead { dim, params })
    }

    pub fn weight(&self, class: usize) -> &[f64] {
        &self.params[class * self.dim..(class + 1) * self.dim]
    }

    pub fn bias(&self) -> [f64; 2] {
        let b = &self.params[2 * self.dim..];
        [b[0], b[1]]
    }

    /// `softmax(W x + b)`.
    pub fn forward(&self, x: &[f64]) -> Result<ClassProbs> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!(
                "input of length {} for a head of dimension {}",
                x.len(),
                self.dim
            )));
        }
        Ok(ClassProbs::from_logits(self.logits(x, None)))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Model for LinearHead {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits(&self, x: &[f64], _mask: Option<&[f64]>) -> [f64; 2] {
        let b = self.bias();
        [dot(self.weight(0), x) + b[0], dot(self.weight(1), x) + b[1]]
    }

    fn accumulate_gradient(
        &self,
        x: &[f64],
        target: usize,
        _mask: Option<&[f64]>,
        grad: &mut [f64],
    ) -> f64 {
        let logits = self.logits(x, None);
        let probs = ClassProbs::from_logits(logits).as_array();
        let d = self.dim;
        for class in 0..2 {
            let g = probs[class] - if class == target { 1.0 } else { 0.0 };
            for (gw, xj) in grad[class * d..(class + 1) * d].iter_mut().zip(x) {
                *gw += g * xj;
            }
            grad[2 * d + class] += g;
        }
        super::cross_entropy(logits, target)
    }
}
