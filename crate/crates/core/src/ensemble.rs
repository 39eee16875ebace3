use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::knn::Prediction;
use crate::label::{ClassProbs, Label};

/// The label held by more than half of an odd number of voters.
pub fn majority_vote(votes: &[Label]) -> Result<Label> {
    if votes.len() % 2 == 0 {
        return Err(Error::EvenEnsemble(votes.len()));
    }
    let ones = votes.iter().filter(|&&v| v == Label::Euphemistic).count();
    Ok(if ones > votes.len() / 2 {
        Label::Euphemistic
    } else {
        Label::Literal
    })
}

/// The member distribution with the median `p(1)`.
fn median_probs(probs: impl Iterator<Item = ClassProbs>) -> ClassProbs {
    let mut probs: Vec<ClassProbs> = probs.collect();
    probs.sort_by(|a, b| a.euphemistic().total_cmp(&b.euphemistic()));
    probs[probs.len() / 2]
}

/// Combines an odd number of member prediction lists row by row.
///
/// Rows are aligned by id in the order of the first member. The label is the
/// majority vote; each probability column is the member median, which for an
/// odd count falls on the same side of 0.5 as the vote.
pub fn ensemble(members: &[Vec<Prediction>]) -> Result<Vec<Prediction>> {
    if members.len() % 2 == 0 {
        return Err(Error::EvenEnsemble(members.len()));
    }
    let first = &members[0];
    let mut lookups = Vec::with_capacity(members.len());
    for (m, rows) in members.iter().enumerate() {
        if rows.len() != first.len() {
            return Err(Error::Shape(format!(
                "ensemble member {m} has {} rows, member 0 has {}",
                rows.len(),
                first.len()
            )));
        }
        let mut index = HashMap::with_capacity(rows.len());
        for p in rows {
            if index.insert(p.id.as_str(), p).is_some() {
                return Err(Error::IdCollision(p.id.clone()));
            }
        }
        lookups.push(index);
    }

    first
        .iter()
        .map(|row| {
            let rows = lookups
                .iter()
                .map(|index| index.get(row.id.as_str()).copied().ok_or_else(|| Error::UnknownExample(row.id.clone())))
                .collect::<Result<Vec<&Prediction>>>()?;
            let label = majority_vote(&rows.iter().map(|p| p.label).collect::<Vec<_>>())?;
            let p_knn = if rows.iter().all(|p| p.p_knn.is_some()) {
                Some(median_probs(rows.iter().filter_map(|p| p.p_knn)))
            } else {
                None
            };
            let mut out = Prediction::new(
                &row.id,
                median_probs(rows.iter().map(|p| p.p_base)),
                p_knn,
                median_probs(rows.iter().map(|p| p.p_final)),
            );
            out.label = label;
            Ok(out)
        })
        .collect()
}
