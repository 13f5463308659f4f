//! Cosine-distance DBSCAN over candidate embeddings and canonical
//! representative selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::EmbeddingVector;

pub const DEFAULT_EPS: f64 = 0.15;
pub const DEFAULT_MIN_PTS: usize = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroNormVector,
    #[error("no embeddings to cluster")]
    EmptyInput,
    #[error("eps must lie in (0, 2], got {0}")]
    InvalidEps(f64),
    #[error("min_pts must be positive")]
    InvalidMinPts,
    #[error("{assignments} assignments but {scores} scores")]
    LengthMismatch { assignments: usize, scores: usize },
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, ClusterError> {
    if a.dim() != b.dim() {
        return Err(ClusterError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(ClusterError::ZeroNormVector);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cluster membership. Serialized as the cluster number, or `-1` for noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "i64", into = "i64")]
pub enum ClusterLabel {
    Noise,
    Cluster(usize),
}

impl From<i64> for ClusterLabel {
    fn from(v: i64) -> Self {
        if v < 0 {
            ClusterLabel::Noise
        } else {
            ClusterLabel::Cluster(v as usize)
        }
    }
}

impl From<ClusterLabel> for i64 {
    fn from(l: ClusterLabel) -> Self {
        match l {
            ClusterLabel::Noise => -1,
            ClusterLabel::Cluster(c) => c as i64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub candidate_index: usize,
    pub cluster: ClusterLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            min_pts: DEFAULT_MIN_PTS,
        }
    }
}

/// Pairwise cosine distances `1 - cos`.
pub fn cosine_distance_matrix(embeddings: &[EmbeddingVector]) -> Result<Vec<Vec<f64>>, ClusterError> {
    let n = embeddings.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 1.0 - cosine_similarity(&embeddings[i], &embeddings[j])?;
            d[i][j] = v;
            d[j][i] = v;
        }
        if n == 1 {
            // still validate the lone vector
            cosine_similarity(&embeddings[i], &embeddings[i])?;
        }
    }
    Ok(d)
}

/// DBSCAN with cosine distance. A point's neighbourhood includes itself.
/// Points are visited in ascending index order and each cluster is expanded
/// breadth-first before the next one starts, so the labelling is a pure
/// function of the input order.
pub fn dbscan_cluster(
    embeddings: &[EmbeddingVector],
    params: DbscanParams,
) -> Result<Vec<ClusterAssignment>, ClusterError> {
    if embeddings.is_empty() {
        return Err(ClusterError::EmptyInput);
    }
    if !(params.eps > 0.0 && params.eps <= 2.0) {
        return Err(ClusterError::InvalidEps(params.eps));
    }
    if params.min_pts == 0 {
        return Err(ClusterError::InvalidMinPts);
    }
    let dist = cosine_distance_matrix(embeddings)?;
    let n = embeddings.len();
    let neighbours = |i: usize| -> Vec<usize> {
        (0..n).filter(|&j| dist[i][j] <= params.eps).collect()
    };

    let mut labels: Vec<Option<ClusterLabel>> = vec![None; n];
    let mut next_cluster = 0;
    for i in 0..n {
        if labels[i].is_some() {
            continue;
        }
        let seeds = neighbours(i);
        if seeds.len() < params.min_pts {
            labels[i] = Some(ClusterLabel::Noise);
            continue;
        }
        let id = ClusterLabel::Cluster(next_cluster);
        next_cluster += 1;
        labels[i] = Some(id);
        let mut queue: std::collections::VecDeque<usize> = seeds.into_iter().collect();
        while let Some(q) = queue.pop_front() {
            match labels[q] {
                Some(ClusterLabel::Noise) => labels[q] = Some(id),
                None => {
                    labels[q] = Some(id);
                    let nq = neighbours(q);
                    if nq.len() >= params.min_pts {
                        queue.extend(nq.into_iter().filter(|&j| labels[j].is_none() || labels[j] == Some(ClusterLabel::Noise)));
                    }
                }
                Some(ClusterLabel::Cluster(_)) => {}
            }
        }
    }
    Ok(labels
        .into_iter()
        .enumerate()
        .map(|(candidate_index, l)| ClusterAssignment {
            candidate_index,
            cluster: l.expect("every point visited"),
        })
        .collect())
}

/// One representative per cluster plus every noise point, in ascending
/// candidate order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalSet {
    pub representatives: Vec<usize>,
}

impl CanonicalSet {
    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }
}

/// Highest-scoring member of each cluster; ties go to the lowest index.
pub fn select_canonical(
    assignments: &[ClusterAssignment],
    scores: &[f64],
) -> Result<CanonicalSet, ClusterError> {
    if assignments.len() != scores.len() {
        return Err(ClusterError::LengthMismatch {
            assignments: assignments.len(),
            scores: scores.len(),
        });
    }
    let mut best: std::collections::BTreeMap<usize, usize> = Default::default();
    let mut reps = Vec::new();
    for a in assignments {
        let i = a.candidate_index;
        if i >= scores.len() {
            return Err(ClusterError::LengthMismatch {
                assignments: assignments.len(),
                scores: scores.len(),
            });
        }
        match a.cluster {
            ClusterLabel::Noise => reps.push(i),
            ClusterLabel::Cluster(c) => {
                let slot = best.entry(c).or_insert(i);
                if scores[i] > scores[*slot] || (scores[i] == scores[*slot] && i < *slot) {
                    *slot = i;
                }
            }
        }
    }
    reps.extend(best.into_values());
    reps.sort_unstable();
    Ok(CanonicalSet {
        representatives: reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    fn assign(labels: &[i64]) -> Vec<ClusterAssignment> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| ClusterAssignment {
                candidate_index: i,
                cluster: l.into(),
            })
            .collect()
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&v(&[0.3, -2.0]), &v(&[0.3, -2.0])).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(ClusterError::DimensionMismatch(1, 2))
        );
        assert_eq!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(ClusterError::ZeroNormVector)
        );
    }

    #[test]
    fn identical_points_share_a_cluster() {
        let e = vec![v(&[0.2, 0.4, 0.1]); 5];
        let a = dbscan_cluster(&e, DbscanParams { eps: 0.1, min_pts: 2 }).unwrap();
        assert!(a.iter().all(|x| x.cluster == ClusterLabel::Cluster(0)));
    }

    #[test]
    fn orthogonal_points_are_noise() {
        let e = vec![v(&[1.0, 0.0, 0.0]), v(&[0.0, 1.0, 0.0]), v(&[0.0, 0.0, 1.0])];
        let a = dbscan_cluster(&e, DbscanParams { eps: 0.1, min_pts: 2 }).unwrap();
        assert!(a.iter().all(|x| x.cluster == ClusterLabel::Noise));
    }

    #[test]
    fn two_separated_groups() {
        // group centres at cosine 0.1 (distance 0.9)
        let theta = 0.1f64.acos();
        let e = vec![
            v(&[1.0, 0.0]),
            v(&[(0.02f64).cos(), (0.02f64).sin()]),
            v(&[theta.cos(), theta.sin()]),
            v(&[(theta + 0.02).cos(), (theta + 0.02).sin()]),
        ];
        let a = dbscan_cluster(&e, DbscanParams { eps: 0.2, min_pts: 2 }).unwrap();
        let labels: Vec<i64> = a.iter().map(|x| x.cluster.into()).collect();
        assert_eq!(labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn invalid_params() {
        assert_eq!(
            dbscan_cluster(&[], DbscanParams::default()),
            Err(ClusterError::EmptyInput)
        );
        assert_eq!(
            dbscan_cluster(&[v(&[1.0])], DbscanParams { eps: 0.0, min_pts: 2 }),
            Err(ClusterError::InvalidEps(0.0))
        );
        assert!(dbscan_cluster(&[v(&[0.0])], DbscanParams::default()).is_err());
    }

    #[test]
    fn canonical_argmax() {
        let c = select_canonical(&assign(&[0, 0, 0]), &[0.2, 0.9, 0.5]).unwrap();
        assert_eq!(c.representatives, vec![1]);
    }

    #[test]
    fn canonical_noise_singletons() {
        let c = select_canonical(&assign(&[-1, -1, -1]), &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(c.representatives, vec![0, 1, 2]);
    }

    #[test]
    fn canonical_tie_takes_lowest_index() {
        let c = select_canonical(&assign(&[0, 0]), &[0.7, 0.7]).unwrap();
        assert_eq!(c.representatives, vec![0]);
    }

    #[test]
    fn canonical_length_mismatch() {
        assert!(matches!(
            select_canonical(&assign(&[0, 0]), &[0.7]),
            Err(ClusterError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn label_serde() {
        let s = serde_json::to_string(&assign(&[-1, 2])).unwrap();
        assert_eq!(
            s,
            r#"[{"candidate_index":0,"cluster":-1},{"candidate_index":1,"cluster":2}]"#
        );
    }
}
