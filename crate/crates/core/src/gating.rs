//! Point-cloud / text consistency gate and the threshold model behind it.
//!
//! An annotation passes when the cosine similarity between its text embedding
//! and the object's point-cloud embedding is at least the gate threshold.
//!
//! The threshold comes from modelling similarity scores of matching and
//! mismatching pairs as Gaussians truncated to `[0, 1]`. The Bayes-optimal
//! cut under equal priors is where the two densities cross. Taking logs of
//! `f_pos(a) = f_neg(a)` gives the quadratic
//!
//! ```text
//! A a^2 + B a + C = 0
//! A = 1/s_neg^2 - 1/s_pos^2
//! B = 2 (m_pos/s_pos^2 - m_neg/s_neg^2)
//! C = m_neg^2/s_neg^2 - m_pos^2/s_pos^2 + 2 ln(s_neg/s_pos)
//! ```
//!
//! whose root inside `(0, 1)` is the threshold. The crossing uses the
//! untruncated densities; [`error_rates`] and [`kl_divergence`] use the
//! truncated ones.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::clustering::{cosine_similarity, ClusterError};
use crate::model::EmbeddingVector;

pub const DEFAULT_GATE_THRESHOLD: f64 = 0.557;
pub const BELOW_THRESHOLD_REASON: &str = "below_gate_threshold";
/// Simpson intervals used by [`kl_divergence`].
pub const KL_QUADRATURE_INTERVALS: usize = 4000;

#[derive(Debug, Error)]
pub enum GatingError {
    #[error(transparent)]
    Similarity(#[from] ClusterError),
    #[error("threshold must lie in {range}, got {value}")]
    InvalidThreshold { value: f64, range: &'static str },
    #[error("degenerate distribution parameters: {0}")]
    DegenerateParams(String),
    #[error("no density crossing inside (0, 1); roots {0:?}")]
    NoRootInUnitInterval(Vec<f64>),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("flagged export io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingDecision {
    pub similarity: f64,
    pub threshold: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub flagged_reason: Option<String>,
}

/// Passes iff `cos(text, cloud) >= threshold`.
pub fn gate(
    text_emb: &EmbeddingVector,
    cloud_emb: &EmbeddingVector,
    threshold: f64,
) -> Result<GatingDecision, GatingError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(GatingError::InvalidThreshold {
            value: threshold,
            range: "(0, 1)",
        });
    }
    let similarity = cosine_similarity(text_emb, cloud_emb)?;
    let passed = similarity >= threshold;
    Ok(GatingDecision {
        similarity,
        threshold,
        passed,
        flagged_reason: (!passed).then(|| BELOW_THRESHOLD_REASON.to_string()),
    })
}

/// Score distributions for matching (`pos`) and mismatching (`neg`) pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedGaussianPair {
    pub mu_pos: f64,
    pub sigma_pos: f64,
    pub mu_neg: f64,
    pub sigma_neg: f64,
}

impl TruncatedGaussianPair {
    pub fn new(mu_pos: f64, sigma_pos: f64, mu_neg: f64, sigma_neg: f64) -> Result<Self, GatingError> {
        let p = Self {
            mu_pos,
            sigma_pos,
            mu_neg,
            sigma_neg,
        };
        p.validate()?;
        Ok(p)
    }

    /// Values fitted on validation pairs: matching pairs ~ N(0.65, 0.1),
    /// mismatching ~ N(0.35, 0.15).
    pub fn reference() -> Self {
        Self {
            mu_pos: 0.65,
            sigma_pos: 0.1,
            mu_neg: 0.35,
            sigma_neg: 0.15,
        }
    }

    pub fn validate(&self) -> Result<(), GatingError> {
        let all = [self.mu_pos, self.sigma_pos, self.mu_neg, self.sigma_neg];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(GatingError::DegenerateParams("non-finite parameter".into()));
        }
        if self.sigma_pos <= 0.0 || self.sigma_neg <= 0.0 {
            return Err(GatingError::DegenerateParams("sigmas must be positive".into()));
        }
        if self.mu_pos <= self.mu_neg {
            return Err(GatingError::DegenerateParams(format!(
                "mu_pos ({}) must exceed mu_neg ({})",
                self.mu_pos, self.mu_neg
            )));
        }
        Ok(())
    }

    /// Swaps the roles of the two distributions (skips validation).
    pub fn swapped(&self) -> Self {
        Self {
            mu_pos: self.mu_neg,
            sigma_pos: self.sigma_neg,
            mu_neg: self.mu_pos,
            sigma_neg: self.sigma_pos,
        }
    }
}

pub fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let z = (x - mu) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

pub fn normal_cdf(x: f64, mu: f64, sigma: f64) -> f64 {
    0.5 * erfc(-(x - mu) / (sigma * std::f64::consts::SQRT_2))
}

/// Gaussian restricted and renormalized to `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct UnitTruncatedNormal {
    mu: f64,
    sigma: f64,
    lower_mass: f64,
    mass: f64,
}

impl UnitTruncatedNormal {
    pub fn new(mu: f64, sigma: f64) -> Self {
        let lower_mass = normal_cdf(0.0, mu, sigma);
        Self {
            mu,
            sigma,
            lower_mass,
            mass: normal_cdf(1.0, mu, sigma) - lower_mass,
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        normal_pdf(x, self.mu, self.sigma) / self.mass
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        ((normal_cdf(x, self.mu, self.sigma) - self.lower_mass) / self.mass).clamp(0.0, 1.0)
    }
}

/// Coefficients and roots of the equal-density quadratic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdQuadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub discriminant: f64,
}

impl ThresholdQuadratic {
    pub fn from_params(p: &TruncatedGaussianPair) -> Self {
        let (vp, vn) = (p.sigma_pos * p.sigma_pos, p.sigma_neg * p.sigma_neg);
        let a = 1.0 / vn - 1.0 / vp;
        let b = 2.0 * (p.mu_pos / vp - p.mu_neg / vn);
        let c = p.mu_neg * p.mu_neg / vn - p.mu_pos * p.mu_pos / vp + 2.0 * (p.sigma_neg / p.sigma_pos).ln();
        Self {
            a,
            b,
            c,
            discriminant: b * b - 4.0 * a * c,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.a.abs() <= 1e-12 * self.b.abs().max(1.0)
    }

    /// Real roots in ascending order (one root when linear).
    pub fn roots(&self) -> Vec<f64> {
        if self.is_linear() {
            return if self.b == 0.0 { vec![] } else { vec![-self.c / self.b] };
        }
        if self.discriminant < 0.0 {
            return vec![];
        }
        let sq = self.discriminant.sqrt();
        // cancellation-free form
        let q = -0.5 * (self.b + self.b.signum() * sq);
        let mut r = if q == 0.0 {
            vec![0.0, 0.0]
        } else {
            vec![q / self.a, self.c / q]
        };
        r.sort_by(f64::total_cmp);
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSolution {
    pub threshold: f64,
    pub quadratic: ThresholdQuadratic,
    /// Roots outside `(0, 1)` (or not chosen).
    pub rejected: Vec<f64>,
}

/// Solves for the equal-density crossing and returns the full working.
pub fn solve_threshold_detailed(params: &TruncatedGaussianPair) -> Result<ThresholdSolution, GatingError> {
    params.validate()?;
    let quadratic = ThresholdQuadratic::from_params(params);
    if !quadratic.is_linear() && quadratic.discriminant < 0.0 {
        return Err(GatingError::DegenerateParams(format!(
            "negative discriminant {}",
            quadratic.discriminant
        )));
    }
    let roots = quadratic.roots();
    let inside: Vec<f64> = roots.iter().copied().filter(|r| *r > 0.0 && *r < 1.0).collect();
    let chosen = match inside.as_slice() {
        [] => return Err(GatingError::NoRootInUnitInterval(roots)),
        [only] => *only,
        // two crossings inside: keep the one between the means, else the one
        // nearest their midpoint
        many => {
            let mid = (params.mu_pos + params.mu_neg) / 2.0;
            *many
                .iter()
                .min_by(|x, y| {
                    let outside = |r: f64| !(params.mu_neg..=params.mu_pos).contains(&r);
                    (outside(**x), (**x - mid).abs())
                        .partial_cmp(&(outside(**y), (**y - mid).abs()))
                        .expect("finite roots")
                })
                .expect("non-empty")
        }
    };
    let rejected = roots.into_iter().filter(|r| *r != chosen).collect();
    Ok(ThresholdSolution {
        threshold: chosen,
        quadratic,
        rejected,
    })
}

pub fn solve_optimal_threshold(params: &TruncatedGaussianPair) -> Result<f64, GatingError> {
    solve_threshold_detailed(params).map(|s| s.threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub fnr: f64,
    pub fpr: f64,
    pub total: f64,
}

/// `FNR = P(S_pos < t)`, `FPR = P(S_neg >= t)` under the truncated models.
pub fn error_rates(params: &TruncatedGaussianPair, threshold: f64) -> Result<ErrorRates, GatingError> {
    params.validate()?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(GatingError::InvalidThreshold {
            value: threshold,
            range: "[0, 1]",
        });
    }
    let pos = UnitTruncatedNormal::new(params.mu_pos, params.sigma_pos);
    let neg = UnitTruncatedNormal::new(params.mu_neg, params.sigma_neg);
    let fnr = pos.cdf(threshold);
    let fpr = 1.0 - neg.cdf(threshold);
    Ok(ErrorRates {
        fnr,
        fpr,
        total: fnr + fpr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub total: f64,
}

/// Error rates on the grid `from, from + step, ..., <= to`.
pub fn sweep_thresholds(
    params: &TruncatedGaussianPair,
    from: f64,
    to: f64,
    step: f64,
) -> Result<Vec<SweepRow>, GatingError> {
    if !(step > 0.0 && step.is_finite()) || !from.is_finite() || !to.is_finite() || from > to || from < 0.0 || to > 1.0 {
        return Err(GatingError::InvalidSweep(format!("from {from} to {to} step {step}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    (0..=n)
        .map(|i| {
            let t = from + i as f64 * step;
            let e = error_rates(params, t.min(1.0))?;
            Ok(SweepRow {
                threshold: t,
                fnr: e.fnr,
                fpr: e.fpr,
                total: e.total,
            })
        })
        .collect()
}

/// Grid row with the smallest total error (first one on ties).
pub fn min_total_error(rows: &[SweepRow]) -> Option<SweepRow> {
    rows.iter()
        .copied()
        .fold(None, |best: Option<SweepRow>, r| match best {
            Some(b) if b.total <= r.total => Some(b),
            _ => Some(r),
        })
}

/// `KL(P_pos || P_neg)` between the truncated densities, by composite
/// Simpson quadrature over `[0, 1]`.
pub fn kl_divergence(params: &TruncatedGaussianPair) -> f64 {
    let pos = UnitTruncatedNormal::new(params.mu_pos, params.sigma_pos);
    let neg = UnitTruncatedNormal::new(params.mu_neg, params.sigma_neg);
    let n = KL_QUADRATURE_INTERVALS;
    let h = 1.0 / n as f64;
    let f = |x: f64| {
        let p = pos.pdf(x);
        if p <= 0.0 {
            0.0
        } else {
            p * (p / neg.pdf(x)).ln()
        }
    };
    let mut sum = f(0.0) + f(1.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    (sum * h / 3.0).max(0.0)
}

/// One line of the manual-review export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedRecord {
    pub object_id: String,
    pub similarity: f64,
    pub threshold: f64,
    pub annotation: String,
}

/// Append-only JSON-lines sink shared by workers.
pub struct FlaggedExport {
    out: Mutex<std::io::BufWriter<std::fs::File>>,
}

impl FlaggedExport {
    pub fn create(path: &Path) -> Result<Self, GatingError> {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)?;
        Ok(Self {
            out: Mutex::new(std::io::BufWriter::new(f)),
        })
    }

    pub fn append(&self, rec: &FlaggedRecord) -> Result<(), GatingError> {
        let line = serde_json::to_string(rec).expect("flagged record serializes");
        let mut out = self.out.lock().expect("flagged export lock");
        writeln!(out, "{line}")?;
        Ok(())
    }

    pub fn flush(&self) -> Result<(), GatingError> {
        self.out.lock().expect("flagged export lock").flush()?;
        Ok(())
    }
}

/// Reads a JSON-lines export back.
pub fn read_flagged(path: &Path) -> Result<Vec<FlaggedRecord>, GatingError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| GatingError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn gate_examples() {
        let d = gate(&v(&[0.3, 0.4]), &v(&[0.3, 0.4]), 0.557).unwrap();
        assert!(d.passed && (d.similarity - 1.0).abs() < 1e-12);
        let d = gate(&v(&[1.0, 0.0]), &v(&[0.0, 1.0]), 0.557).unwrap();
        assert!(!d.passed);
        assert_eq!(d.flagged_reason.as_deref(), Some(BELOW_THRESHOLD_REASON));
    }

    #[test]
    fn gate_boundary_passes() {
        // 3-4-5 triangle: cosine is exactly 3/5
        let d = gate(&v(&[1.0, 0.0]), &v(&[3.0, 4.0]), 0.6).unwrap();
        assert_eq!(d.similarity, 0.6);
        assert!(d.passed);
        // threshold equal to whatever the similarity evaluates to
        let (a, b) = (v(&[0.557, 0.8305]), v(&[1.0, 0.0]));
        let s = crate::clustering::cosine_similarity(&a, &b).unwrap();
        assert!(gate(&a, &b, s).unwrap().passed);
        assert!(!gate(&a, &b, s + 1e-12).unwrap().passed);
    }

    #[test]
    fn gate_errors() {
        assert!(matches!(
            gate(&v(&[1.0]), &v(&[1.0, 0.0]), 0.5),
            Err(GatingError::Similarity(ClusterError::DimensionMismatch(1, 2)))
        ));
        assert!(matches!(
            gate(&v(&[0.0]), &v(&[1.0]), 0.5),
            Err(GatingError::Similarity(ClusterError::ZeroNormVector))
        ));
        assert!(gate(&v(&[1.0]), &v(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn equal_sigmas_give_midpoint() {
        let p = TruncatedGaussianPair::new(0.7, 0.1, 0.3, 0.1).unwrap();
        assert!((solve_optimal_threshold(&p).unwrap() - 0.5).abs() < 1e-12);
        let p = TruncatedGaussianPair::new(0.8, 0.05, 0.2, 0.05).unwrap();
        assert!((solve_optimal_threshold(&p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reference_params_crossing() {
        let s = solve_threshold_detailed(&TruncatedGaussianPair::reference()).unwrap();
        assert!((s.quadratic.a + 55.555_555).abs() < 1e-5);
        assert!((s.quadratic.b - 98.888_889).abs() < 1e-5);
        let p = TruncatedGaussianPair::reference();
        let gap = normal_pdf(s.threshold, p.mu_pos, p.sigma_pos) - normal_pdf(s.threshold, p.mu_neg, p.sigma_neg);
        assert!(gap.abs() < 1e-6, "{gap}");
        assert_eq!(s.rejected.len(), 1);
        assert!(s.rejected[0] > 1.0);
    }

    #[test]
    fn degenerate_params() {
        assert!(TruncatedGaussianPair::new(0.3, 0.1, 0.7, 0.1).is_err());
        assert!(TruncatedGaussianPair::new(0.7, 0.0, 0.3, 0.1).is_err());
        // crossing pushed far outside the unit interval
        let p = TruncatedGaussianPair::new(5.0, 0.1, 4.0, 0.1).unwrap();
        assert!(matches!(
            solve_optimal_threshold(&p),
            Err(GatingError::NoRootInUnitInterval(_))
        ));
    }

    #[test]
    fn error_rate_boundaries() {
        let p = TruncatedGaussianPair::reference();
        let e = error_rates(&p, 0.0).unwrap();
        assert_eq!((e.fnr, e.fpr), (0.0, 1.0));
        let e = error_rates(&p, 1.0).unwrap();
        assert_eq!((e.fnr, e.fpr), (1.0, 0.0));
        assert!(error_rates(&p, 1.5).is_err());
    }

    #[test]
    fn sweep_grid_is_inclusive() {
        let rows = sweep_thresholds(&TruncatedGaussianPair::reference(), 0.4, 0.7, 0.001).unwrap();
        assert_eq!(rows.len(), 301);
        assert!((rows.last().unwrap().threshold - 0.7).abs() < 1e-9);
        assert!(sweep_thresholds(&TruncatedGaussianPair::reference(), 0.4, 0.7, 0.0).is_err());
    }

    #[test]
    fn kl_properties() {
        let p = TruncatedGaussianPair::reference();
        let same = TruncatedGaussianPair {
            mu_neg: p.mu_pos,
            sigma_neg: p.sigma_pos,
            ..p
        };
        assert!(kl_divergence(&same).abs() < 1e-12);
        let fwd = kl_divergence(&p);
        let back = kl_divergence(&p.swapped());
        assert!(fwd > 0.0 && back > 0.0);
        assert!((fwd - back).abs() > 1e-3);
    }

    #[test]
    fn flagged_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flagged.jsonl");
        let ex = FlaggedExport::create(&path).unwrap();
        let rec = FlaggedRecord {
            object_id: "o1".into(),
            similarity: 0.2,
            threshold: 0.557,
            annotation: "A mug.".into(),
        };
        ex.append(&rec).unwrap();
        ex.flush().unwrap();
        assert_eq!(read_flagged(&path).unwrap(), vec![rec]);
    }

    proptest! {
        #[test]
        fn gate_scale_invariant(
            a in prop::collection::vec(-1.0f64..1.0, 4),
            b in prop::collection::vec(-1.0f64..1.0, 4),
            ka in 0.01f64..100.0,
            kb in 0.01f64..100.0,
        ) {
            let (a, b) = (v(&a), v(&b));
            prop_assume!(a.norm() > 1e-3 && b.norm() > 1e-3);
            let d0 = gate(&a, &b, 0.557).unwrap();
            let d1 = gate(&a.scaled(ka).unwrap(), &b.scaled(kb).unwrap(), 0.557).unwrap();
            prop_assert!((d0.similarity - d1.similarity).abs() < 1e-12);
            if (d0.similarity - 0.557).abs() > 1e-9 {
                prop_assert_eq!(d0.passed, d1.passed);
            }
        }

        #[test]
        fn crossing_equalizes_densities(
            mu_neg in 0.1f64..0.45,
            gap in 0.1f64..0.4,
            s_pos in 0.05f64..0.2,
            s_neg in 0.05f64..0.2,
        ) {
            let p = TruncatedGaussianPair::new(mu_neg + gap, s_pos, mu_neg, s_neg).unwrap();
            if let Ok(t) = solve_optimal_threshold(&p) {
                let d = normal_pdf(t, p.mu_pos, p.sigma_pos) - normal_pdf(t, p.mu_neg, p.sigma_neg);
                prop_assert!(d.abs() < 1e-6, "gap {}", d);
            }
        }
    }
}
