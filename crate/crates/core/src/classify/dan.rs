use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{init_uniform, mean_rows, Model};
use crate::embedding::TokenEmbeddings;
use crate::error::{Error, Result};
use crate::label::ClassProbs;

/// Deep averaging network: token mean, a rectified hidden layer with
/// dropout on hidden units, and a linear output layer.
///
/// Flat parameter layout: hidden weights (H×D, row-major), hidden biases
/// (H), output weights (2×H, row-major), output biases (2).
#[derive(Debug, Clone, PartialEq)]
pub struct Dan {
    dim: usize,
    hidden: usize,
    dropout: f64,
    params: Vec<f64>,
}

impl Dan {
    fn param_count(dim: usize, hidden: usize) -> usize {
        hidden * dim + hidden + 2 * hidden + 2
    }

    fn check(dim: usize, hidden: usize, dropout: f64) -> Result<()> {
        if hidden == 0 || dim == 0 {
            return Err(Error::Config("DAN needs positive input and hidden sizes".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        Ok(())
    }

    pub fn zeros(dim: usize, hidden: usize, dropout: f64) -> Result<Self> {
        Self::check(dim, hidden, dropout)?;
        Ok(Dan {
            dim,
            hidden,
            dropout,
            params: vec![0.0; Self::param_count(dim, hidden)],
        })
    }

    pub fn init<R: Rng>(dim: usize, hidden: usize, dropout: f64, rng: &mut R) -> Result<Self> {
        let mut dan = Self::zeros(dim, hidden, dropout)?;
        init_uniform(&mut dan.params, rng);
        Ok(dan)
    }

    pub fn from_params(dim: usize, hidden: usize, dropout: f64, params: Vec<f64>) -> Result<Self> {
        Self::check(dim, hidden, dropout)?;
        if params.len() != Self::param_count(dim, hidden) {
            return Err(Error::Shape(format!(
                "DAN {dim}->{hidden}->2 needs {} parameters, got {}",
                Self::param_count(dim, hidden),
                params.len()
            )));
        }
        Ok(Dan {
            dim,
            hidden,
            dropout,
            params,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (w1, rest) = self.params.split_at(self.hidden * self.dim);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(2 * self.hidden);
        (w1, b1, w2, b2)
    }

    fn pre_activation(&self, z: &[f64]) -> Vec<f64> {
        let (w1, b1, _, _) = self.split();
        w1.chunks_exact(self.dim)
            .zip(b1)
            .map(|(row, b)| row.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    /// Inverted-dropout mask over hidden units: 0 with probability
    /// `dropout`, otherwise `1 / (1 - dropout)`.
    pub fn sample_mask<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.dropout);
        (0..self.hidden)
            .map(|_| if rng.gen::<f64>() < self.dropout { 0.0 } else { keep })
            .collect()
    }

    /// Classifies a sentence from its token vectors. Tokens themselves are
    /// never dropped; in `train_mode` hidden units are, using `seed`.
    pub fn forward(&self, tokens: &TokenEmbeddings, train_mode: bool, seed: u64) -> Result<ClassProbs> {
        let z = mean_rows(tokens)?;
        if z.len() != self.dim {
            return Err(Error::Shape(format!(
                "token dimension {} for a DAN of input dimension {}",
                z.len(),
                self.dim
            )));
        }
        let mask = train_mode.then(|| self.sample_mask(&mut ChaCha8Rng::seed_from_u64(seed)));
        Ok(ClassProbs::from_logits(self.logits(&z, mask.as_deref())))
    }
}

impl Model for Dan {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn logits(&self, z: &[f64], mask: Option<&[f64]>) -> [f64; 2] {
        let (_, _, w2, b2) = self.split();
        let mut h: Vec<f64> = self.pre_activation(z).into_iter().map(|a| a.max(0.0)).collect();
        if let Some(mask) = mask {
            h.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
        }
        let out = |c: usize| {
            w2[c * self.hidden..(c + 1) * self.hidden]
                .iter()
                .zip(&h)
                .map(|(w, v)| w * v)
                .sum::<f64>()
                + b2[c]
        };
        [out(0), out(1)]
    }

    fn accumulate_gradient(
        &self,
        z: &[f64],
        target: usize,
        mask: Option<&[f64]>,
        grad: &mut [f64],
    ) -> f64 {
        let (d, hn) = (self.dim, self.hidden);
        let (_, _, w2, _) = self.split();
        let pre = self.pre_activation(z);
        let scale = |k: usize| mask.map_or(1.0, |m| m[k]);
        let h: Vec<f64> = pre
            .iter()
            .enumerate()
            .map(|(k, a)| a.max(0.0) * scale(k))
            .collect();
        let logits = self.logits(z, mask);
        let probs = ClassProbs::from_logits(logits).as_array();
        let g = [probs[0] - (target == 0) as u8 as f64, probs[1] - (target == 1) as u8 as f64];

        let (gw1, rest) = grad.split_at_mut(hn * d);
        let (gb1, rest) = rest.split_at_mut(hn);
        let (gw2, gb2) = rest.split_at_mut(2 * hn);
        for c in 0..2 {
            for k in 0..hn {
                gw2[c * hn + k] += g[c] * h[k];
            }
            gb2[c] += g[c];
        }
        for k in 0..hn {
            if pre[k] <= 0.0 {
                continue;
            }
            let dh = (g[0] * w2[k] + g[1] * w2[hn + k]) * scale(k);
            for (gw, zj) in gw1[k * d..(k + 1) * d].iter_mut().zip(z) {
                *gw += dh * zj;
            }
            gb1[k] += dh;
        }
        super::cross_entropy(logits, target)
    }

    fn dropout_mask(&self, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
        (self.dropout > 0.0).then(|| self.sample_mask(rng))
    }
}
