//! Token log-likelihood confidence.
//!
//! The raw score is the mean absolute natural-log token probability: 0 means
//! every token had probability 1 and larger values mean less certainty.
//! [`normalize_confidence`] maps it onto `(0, 1]` with `exp(-raw)` so it can be
//! blended with higher-is-better signals.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CandidateDescription, ConfidenceSource};

/// Raw score assigned when no candidate in a view carries log-probabilities.
pub const FALLBACK_RAW_CONFIDENCE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfidenceError {
    #[error("token log-probability list is empty")]
    EmptyTokenList,
    #[error("token log-probability {index} is not a finite value <= 0 ({value})")]
    NonFiniteLogprob { index: usize, value: f64 },
    #[error("raw confidence must be finite and >= 0, got {0}")]
    NegativeRaw(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScore {
    pub raw: f64,
    pub normalized: f64,
}

impl ConfidenceScore {
    pub fn from_raw(raw: f64) -> Result<Self, ConfidenceError> {
        Ok(Self {
            raw,
            normalized: normalize_confidence(raw)?,
        })
    }
}

pub fn compute_raw_confidence(token_logprobs: &[f64]) -> Result<f64, ConfidenceError> {
    if token_logprobs.is_empty() {
        return Err(ConfidenceError::EmptyTokenList);
    }
    let mut sum = 0.0;
    for (index, &value) in token_logprobs.iter().enumerate() {
        if !value.is_finite() || value > 0.0 {
            return Err(ConfidenceError::NonFiniteLogprob { index, value });
        }
        sum += value.abs();
    }
    Ok(sum / token_logprobs.len() as f64)
}

pub fn normalize_confidence(raw: f64) -> Result<f64, ConfidenceError> {
    if !raw.is_finite() || raw < 0.0 {
        return Err(ConfidenceError::NegativeRaw(raw));
    }
    Ok((-raw).exp())
}

/// Converts log-probabilities in an arbitrary base to natural log.
pub fn to_natural_log(logprobs: &[f64], base: f64) -> Vec<f64> {
    let k = base.ln();
    logprobs.iter().map(|lp| lp * k).collect()
}

/// Builds candidates for one view from provider output, applying the
/// missing-logprob fallback: a candidate without token probabilities takes the
/// median raw score of its siblings that have them, or
/// [`FALLBACK_RAW_CONFIDENCE`] if none do.
pub fn fill_missing_confidence(
    view: crate::model::Viewpoint,
    raw: Vec<(String, Option<Vec<f64>>)>,
) -> Result<Vec<CandidateDescription>, ConfidenceError> {
    let mut known = Vec::new();
    let mut scored = Vec::with_capacity(raw.len());
    for (text, logprobs) in raw {
        match logprobs {
            Some(lp) if !lp.is_empty() => {
                let r = compute_raw_confidence(&lp)?;
                known.push(r);
                scored.push((text, lp, Some(r)));
            }
            _ => scored.push((text, Vec::new(), None)),
        }
    }
    let fallback = median(&mut known).unwrap_or(FALLBACK_RAW_CONFIDENCE);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(index, (text, token_logprobs, r))| CandidateDescription {
            view,
            index,
            text,
            token_logprobs,
            raw_confidence: r.unwrap_or(fallback),
            confidence_source: if r.is_some() {
                ConfidenceSource::Logprobs
            } else {
                ConfidenceSource::Fallback
            },
        })
        .collect())
}

fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Viewpoint;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn all_certain_tokens() {
        assert_eq!(compute_raw_confidence(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn two_coin_flip_tokens() {
        let r = compute_raw_confidence(&[-LN_2, -LN_2]).unwrap();
        assert!((r - LN_2).abs() < 1e-12);
    }

    #[test]
    fn mean_of_magnitudes() {
        assert_eq!(compute_raw_confidence(&[-1.0, -3.0]).unwrap(), 2.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(
            compute_raw_confidence(&[]),
            Err(ConfidenceError::EmptyTokenList)
        );
        assert!(matches!(
            compute_raw_confidence(&[-0.1, f64::NEG_INFINITY]),
            Err(ConfidenceError::NonFiniteLogprob { index: 1, .. })
        ));
        assert!(compute_raw_confidence(&[0.5]).is_err());
        assert!(normalize_confidence(-0.1).is_err());
        assert!(normalize_confidence(f64::NAN).is_err());
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_confidence(0.0).unwrap(), 1.0);
        assert!((normalize_confidence(LN_2).unwrap() - 0.5).abs() < 1e-15);
        assert!((normalize_confidence(10.0).unwrap() - 4.539_992_976_248_485e-5).abs() < 1e-15);
    }

    #[test]
    fn base_conversion() {
        let lp = to_natural_log(&[-1.0], 2.0);
        assert!((lp[0] + LN_2).abs() < 1e-15);
    }

    #[test]
    fn fallback_uses_median_of_siblings() {
        let c = fill_missing_confidence(
            Viewpoint::Front,
            vec![
                ("a".into(), Some(vec![-1.0])),
                ("b".into(), None),
                ("c".into(), Some(vec![-3.0])),
                ("d".into(), Some(vec![-2.0])),
            ],
        )
        .unwrap();
        assert_eq!(c[1].raw_confidence, 2.0);
        assert_eq!(c[1].confidence_source, ConfidenceSource::Fallback);
        assert!(c[1].token_logprobs.is_empty());
        assert_eq!(c[3].index, 3);
    }

    #[test]
    fn fallback_without_any_logprobs() {
        let c = fill_missing_confidence(Viewpoint::Top, vec![("a".into(), None)]).unwrap();
        assert_eq!(c[0].raw_confidence, FALLBACK_RAW_CONFIDENCE);
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut lps in prop::collection::vec(-20.0f64..=0.0, 1..32), seed in any::<u64>()) {
            let a = compute_raw_confidence(&lps).unwrap();
            // deterministic shuffle
            let n = lps.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                lps.swap(i, (s >> 33) as usize % (i + 1));
            }
            let b = compute_raw_confidence(&lps).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn appending_the_mean_keeps_it(mut lps in prop::collection::vec(-20.0f64..=0.0, 1..32)) {
            let a = compute_raw_confidence(&lps).unwrap();
            lps.push(-a);
            let b = compute_raw_confidence(&lps).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn normalization_strictly_decreasing(a in 0.0f64..30.0, b in 0.0f64..30.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let (na, nb) = (normalize_confidence(a).unwrap(), normalize_confidence(b).unwrap());
            prop_assert_eq!(na > nb, a < b);
        }
    }
}
