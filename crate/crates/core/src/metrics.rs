use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Per-class and unweighted macro precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub literal: ClassMetrics,
    pub euphemistic: ClassMetrics,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub count: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn macro_metrics(gold: &[Label], predicted: &[Label]) -> Result<MacroMetrics> {
    if gold.len() != predicted.len() {
        return Err(Error::Shape(format!(
            "{} gold labels against {} predictions",
            gold.len(),
            predicted.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let class = |c: Label| {
        let tp = gold.iter().zip(predicted).filter(|&(g, p)| *g == c && *p == c).count();
        let predicted_c = predicted.iter().filter(|&&p| p == c).count();
        let support = gold.iter().filter(|&&g| g == c).count();
        let precision = ratio(tp, predicted_c);
        let recall = ratio(tp, support);
        ClassMetrics {
            precision,
            recall,
            f1: harmonic(precision, recall),
            support,
        }
    };
    let literal = class(Label::Literal);
    let euphemistic = class(Label::Euphemistic);
    let correct = gold.iter().zip(predicted).filter(|(g, p)| g == p).count();
    Ok(MacroMetrics {
        literal,
        euphemistic,
        macro_precision: (literal.precision + euphemistic.precision) / 2.0,
        macro_recall: (literal.recall + euphemistic.recall) / 2.0,
        macro_f1: (literal.f1 + euphemistic.f1) / 2.0,
        accuracy: ratio(correct, gold.len()),
        count: gold.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(xs: &[usize]) -> Vec<Label> {
        xs.iter().map(|&x| Label::from_index(x).unwrap()).collect()
    }

    #[test]
    fn perfect_and_total_miss() {
        let g = labels(&[1, 0, 1, 1, 0]);
        let m = macro_metrics(&g, &g).unwrap();
        assert_eq!((m.macro_precision, m.macro_recall, m.macro_f1), (1.0, 1.0, 1.0));
        let m = macro_metrics(&labels(&[1, 0]), &labels(&[0, 1])).unwrap();
        assert_eq!(m.macro_f1, 0.0);
    }

    #[test]
    fn all_positive_prediction() {
        let m = macro_metrics(&labels(&[1, 1, 1, 0]), &labels(&[1, 1, 1, 1])).unwrap();
        assert!((m.euphemistic.f1 - 6.0 / 7.0).abs() < 1e-12);
        assert_eq!(m.literal.f1, 0.0);
        assert!((m.macro_f1 - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn shape_error() {
        assert!(matches!(
            macro_metrics(&labels(&[1]), &labels(&[1, 0])),
            Err(Error::Shape(_))
        ));
    }
}
