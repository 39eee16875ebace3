use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary class of a PET occurrence. `1` on disk means euphemistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Literal,
    Euphemistic,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Literal, Label::Euphemistic];

    pub fn index(self) -> usize {
        match self {
            Label::Literal => 0,
            Label::Euphemistic => 1,
        }
    }

    pub fn from_index(index: usize) -> Result<Self> {
        match index {
            0 => Ok(Label::Literal),
            1 => Ok(Label::Euphemistic),
            other => Err(Error::InvalidLabel(other.to_string())),
        }
    }

    /// `1 - l` for a binary label.
    pub fn flipped(self) -> Self {
        match self {
            Label::Literal => Label::Euphemistic,
            Label::Euphemistic => Label::Literal,
        }
    }
}

impl From<Label> for u8 {
    fn from(label: Label) -> u8 {
        label.index() as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;

    fn try_from(value: u8) -> Result<Self> {
        Label::from_index(value as usize)
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "0" => Ok(Label::Literal),
            "1" => Ok(Label::Euphemistic),
            other => Err(Error::InvalidLabel(other.to_string())),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// A probability distribution over the two classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbs([f64; 2]);

impl ClassProbs {
    const TOLERANCE: f64 = 1e-9;

    pub fn new(literal: f64, euphemistic: f64) -> Result<Self> {
        let probs = [literal, euphemistic];
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Range(format!("invalid probabilities {probs:?}")));
        }
        if (literal + euphemistic - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::Range(format!("probabilities {probs:?} do not sum to 1")));
        }
        Ok(ClassProbs(probs))
    }

    /// Builds the pair from `p(1)`.
    pub fn from_euphemistic(p1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p1) {
            return Err(Error::Range(format!("p(1) = {p1} outside [0, 1]")));
        }
        Ok(ClassProbs([1.0 - p1, p1]))
    }

    /// Numerically stable two-class softmax.
    pub fn from_logits(logits: [f64; 2]) -> Self {
        let max = logits[0].max(logits[1]);
        let e0 = (logits[0] - max).exp();
        let e1 = (logits[1] - max).exp();
        let z = e0 + e1;
        ClassProbs([e0 / z, e1 / z])
    }

    pub(crate) fn from_raw(probs: [f64; 2]) -> Self {
        ClassProbs(probs)
    }

    pub fn get(&self, label: Label) -> f64 {
        self.0[label.index()]
    }

    pub fn euphemistic(&self) -> f64 {
        self.0[1]
    }

    pub fn as_array(&self) -> [f64; 2] {
        self.0
    }

    /// Most probable label; an exact tie resolves to [`Label::Literal`].
    pub fn argmax(&self) -> Label {
        if self.0[1] > self.0[0] {
            Label::Euphemistic
        } else {
            Label::Literal
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_parsing() {
        assert_eq!("1".parse::<Label>().unwrap(), Label::Euphemistic);
        assert_eq!(" 0 ".parse::<Label>().unwrap(), Label::Literal);
        assert!("2".parse::<Label>().is_err());
        assert_eq!(Label::Euphemistic.flipped(), Label::Literal);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        for t in [-50.0, 0.0, 3.5, 700.0] {
            let p = ClassProbs::from_logits([t, t]);
            assert_eq!(p.as_array(), [0.5, 0.5]);
        }
        let p = ClassProbs::from_logits([0.0, 3f64.ln()]);
        assert!((p.euphemistic() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn argmax_tie_goes_to_literal() {
        let p = ClassProbs::new(0.5, 0.5).unwrap();
        assert_eq!(p.argmax(), Label::Literal);
    }

    #[test]
    fn rejects_non_distributions() {
        assert!(ClassProbs::new(0.6, 0.6).is_err());
        assert!(ClassProbs::new(-0.1, 1.1).is_err());
        assert!(ClassProbs::from_euphemistic(1.5).is_err());
    }
}
