//! Image-text relevance weights and the composite candidate score.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{cosine_similarity, ClusterError, ClusterLabel};
use crate::model::EmbeddingVector;

/// Default mix between confidence (0) and relevance (1).
pub const DEFAULT_BLEND_RATIO: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("no candidates to weight")]
    EmptyCandidates,
    #[error(transparent)]
    Similarity(#[from] ClusterError),
    #[error("{name} = {value} is outside {range}")]
    OutOfRangeArgument {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
}

/// Softmax weights aligned to one view's candidates; they sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceWeights {
    pub similarities: Vec<f64>,
    pub weights: Vec<f64>,
}

/// `w_i = exp(cos_i) / sum_k exp(cos_k)` over image/text cosine similarities.
pub fn relevance_weights(
    image_emb: &EmbeddingVector,
    text_embs: &[EmbeddingVector],
) -> Result<RelevanceWeights, ScoringError> {
    if text_embs.is_empty() {
        return Err(ScoringError::EmptyCandidates);
    }
    let similarities = text_embs
        .iter()
        .map(|t| cosine_similarity(image_emb, t))
        .collect::<Result<Vec<_>, _>>()?;
    let weights = softmax(&similarities);
    Ok(RelevanceWeights {
        similarities,
        weights,
    })
}

/// Numerically stable softmax (shifted by the max).
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn check(name: &'static str, value: f64, range: &'static str, ok: bool) -> Result<(), ScoringError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ScoringError::OutOfRangeArgument { name, value, range })
    }
}

/// `(1 - blend_ratio) * norm_conf + blend_ratio * relevance`.
pub fn composite_score(norm_conf: f64, relevance: f64, blend_ratio: f64) -> Result<f64, ScoringError> {
    check("norm_conf", norm_conf, "[0, 1]", (0.0..=1.0).contains(&norm_conf))?;
    check("relevance", relevance, "[0, 1]", (0.0..=1.0).contains(&relevance))?;
    check("blend_ratio", blend_ratio, "[0, 1]", (0.0..=1.0).contains(&blend_ratio))?;
    // exact at the boundaries
    if blend_ratio == 0.0 {
        return Ok(norm_conf);
    }
    if blend_ratio == 1.0 {
        return Ok(relevance);
    }
    Ok((1.0 - blend_ratio) * norm_conf + blend_ratio * relevance)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositeScore {
    pub value: f64,
    pub blend_ratio: f64,
}

/// A candidate after clustering and relevance weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub index: usize,
    pub text: String,
    pub raw_confidence: f64,
    pub normalized_confidence: f64,
    /// Image/text cosine similarity before the softmax.
    pub relevance_similarity: f64,
    /// Softmax weight among the view's canonical representatives. For a
    /// candidate that lost to its cluster's representative this is its
    /// weight among all of the view's candidates, the one that ranked it.
    pub relevance: f64,
    pub composite: f64,
    pub cluster: ClusterLabel,
    pub canonical: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn identical_texts_get_uniform_weights() {
        let w = relevance_weights(&v(&[1.0, 2.0]), &vec![v(&[0.5, 0.1]); 4]).unwrap();
        for x in &w.weights {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn opposite_similarities() {
        let w = relevance_weights(&v(&[1.0, 0.0]), &[v(&[1.0, 0.0]), v(&[-1.0, 0.0])]).unwrap();
        let e2 = std::f64::consts::E.powi(2);
        assert!((w.weights[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((w.weights[1] - 1.0 / (e2 + 1.0)).abs() < 1e-12);
        assert!((w.weights[0] - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn singleton_weight_is_one() {
        let w = relevance_weights(&v(&[1.0, 0.0]), &[v(&[0.3, 0.7])]).unwrap();
        assert_eq!(w.weights, vec![1.0]);
    }

    #[test]
    fn weight_errors() {
        assert_eq!(
            relevance_weights(&v(&[1.0]), &[]),
            Err(ScoringError::EmptyCandidates)
        );
        assert!(matches!(
            relevance_weights(&v(&[1.0]), &[v(&[1.0, 0.0])]),
            Err(ScoringError::Similarity(ClusterError::DimensionMismatch(1, 2)))
        ));
    }

    #[test]
    fn composite_examples() {
        assert_eq!(composite_score(0.37, 0.91, 0.0).unwrap(), 0.37);
        assert_eq!(composite_score(0.37, 0.91, 1.0).unwrap(), 0.91);
        assert!((composite_score(0.8, 0.4, 0.2).unwrap() - 0.72).abs() < 1e-12);
        assert!(composite_score(1.1, 0.4, 0.2).is_err());
        assert!(composite_score(0.5, 0.4, -0.2).is_err());
        assert!(composite_score(0.5, f64::NAN, 0.2).is_err());
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(sims in prop::collection::vec(-1.0f64..=1.0, 1..16)) {
            let w = softmax(&sims);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
        }

        #[test]
        fn softmax_preserves_order(sims in prop::collection::vec(-1.0f64..=1.0, 2..16)) {
            let w = softmax(&sims);
            for i in 0..sims.len() {
                for j in 0..sims.len() {
                    if sims[i] > sims[j] { prop_assert!(w[i] >= w[j]); }
                }
            }
        }

        #[test]
        fn composite_monotone(c in 0.0f64..=1.0, r in 0.0f64..=1.0, b in 0.0f64..=1.0, d in 0.0f64..=0.5) {
            let base = composite_score(c, r, b).unwrap();
            prop_assert!(composite_score((c + d).min(1.0), r, b).unwrap() >= base - 1e-15);
            prop_assert!(composite_score(c, (r + d).min(1.0), b).unwrap() >= base - 1e-15);
        }

        #[test]
        fn boundary_argmax(pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..10)) {
            let argmax = |xs: Vec<f64>| xs.iter().enumerate().fold(0, |b, (i, &x)| if x > xs[b] { i } else { b });
            let s0: Vec<f64> = pairs.iter().map(|&(c, r)| composite_score(c, r, 0.0).unwrap()).collect();
            let s1: Vec<f64> = pairs.iter().map(|&(c, r)| composite_score(c, r, 1.0).unwrap()).collect();
            prop_assert_eq!(argmax(s0), argmax(pairs.iter().map(|p| p.0).collect()));
            prop_assert_eq!(argmax(s1), argmax(pairs.iter().map(|p| p.1).collect()));
        }
    }
}
