//! Hard-decision detectors operating on matched-filter outputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::{CorrelationMatrix, Observation, Symbol, SymbolFrame};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest active set the exhaustive ML search will accept.
pub const ML_ACTIVE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DetectorKind {
    #[serde(rename = "mf")]
    MatchedFilter,
    #[serde(rename = "sc")]
    SuccessiveCancellation,
    #[serde(rename = "ml")]
    MaximumLikelihood,
}

impl DetectorKind {
    pub fn detect<T: Scalar>(
        self,
        obs: &Observation<T>,
        r: &CorrelationMatrix<T>,
        amplitudes: &[T],
        active: &ActiveSet,
    ) -> Result<DecisionVector> {
        match self {
            DetectorKind::MatchedFilter => Ok(detect_matched_filter(obs, amplitudes, active)),
            DetectorKind::SuccessiveCancellation => {
                Ok(detect_successive_cancellation(obs, r, amplitudes, active))
            }
            DetectorKind::MaximumLikelihood => detect_maximum_likelihood(obs, r, amplitudes, active),
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::MatchedFilter => "mf",
            DetectorKind::SuccessiveCancellation => "sc",
            DetectorKind::MaximumLikelihood => "ml",
        })
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(DetectorKind::MatchedFilter),
            "sc" => Ok(DetectorKind::SuccessiveCancellation),
            "ml" => Ok(DetectorKind::MaximumLikelihood),
            other => Err(Error::InvalidArgument(format!(
                "unknown detector `{other}` (expected mf, sc or ml)"
            ))),
        }
    }
}

/// Users actually transmitting in a frame.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActiveSet(Vec<usize>);

impl ActiveSet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn all(k: usize) -> Self {
        Self((0..k).collect())
    }

    pub fn from_frame(frame: &SymbolFrame) -> Self {
        Self(frame.active())
    }

    /// Drops `node`, e.g. a relay that cannot hear its own slot.
    pub fn without(&self, node: usize) -> Self {
        Self(self.0.iter().copied().filter(|&k| k != node).collect())
    }

    pub fn contains(&self, k: usize) -> bool {
        self.0.binary_search(&k).is_ok()
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-slot hard decisions. Slots outside the active set are `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionVector {
    decisions: Vec<Option<Symbol>>,
    detector: DetectorKind,
}

impl DecisionVector {
    fn empty(k: usize, detector: DetectorKind) -> Self {
        Self {
            decisions: vec![None; k],
            detector,
        }
    }

    pub fn get(&self, k: usize) -> Option<Symbol> {
        self.decisions[k]
    }

    pub fn decisions(&self) -> &[Option<Symbol>] {
        &self.decisions
    }

    pub fn detector(&self) -> DetectorKind {
        self.detector
    }
}

/// Conventional single-user detector: `sign(y_k)`.
pub fn detect_matched_filter<T: Scalar>(
    obs: &Observation<T>,
    _amplitudes: &[T],
    active: &ActiveSet,
) -> DecisionVector {
    let mut out = DecisionVector::empty(obs.values.len(), DetectorKind::MatchedFilter);
    for &k in active.indices() {
        out.decisions[k] = Some(Symbol::from_sign(obs.values[k]));
    }
    out
}

/// Active users sorted strongest first; equal amplitudes keep index order.
pub fn cancellation_order<T: Scalar>(amplitudes: &[T], active: &ActiveSet) -> Vec<usize> {
    let mut order = active.indices().to_vec();
    order.sort_by(|&a, &b| {
        amplitudes[b]
            .partial_cmp(&amplitudes[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Decodes the strongest remaining user, subtracts its reconstructed
/// contribution from everybody's statistic, and repeats.
pub fn detect_successive_cancellation<T: Scalar>(
    obs: &Observation<T>,
    r: &CorrelationMatrix<T>,
    amplitudes: &[T],
    active: &ActiveSet,
) -> DecisionVector {
    let mut out = DecisionVector::empty(obs.values.len(), DetectorKind::SuccessiveCancellation);
    let mut decided: Vec<(usize, T)> = Vec::with_capacity(active.len());
    for k in cancellation_order(amplitudes, active) {
        let interference: T = decided
            .iter()
            .map(|&(j, contribution)| r.get(k, j) * contribution)
            .sum();
        let d = Symbol::from_sign(obs.values[k] - interference);
        out.decisions[k] = Some(d);
        decided.push((k, amplitudes[k] * d.value::<T>()));
    }
    out
}

/// Exhaustive jointly optimal detector.
///
/// Maximizes `2 bᵀ A y − bᵀ A R A b` over the active users. Hypotheses are
/// visited in bit-lexicographic order (`+1` before `−1`, lowest slot most
/// significant) and only strict improvements replace the incumbent, so ties
/// go to the lexicographically smallest bit pattern.
pub fn detect_maximum_likelihood<T: Scalar>(
    obs: &Observation<T>,
    r: &CorrelationMatrix<T>,
    amplitudes: &[T],
    active: &ActiveSet,
) -> Result<DecisionVector> {
    let m = active.len();
    if m > ML_ACTIVE_LIMIT {
        return Err(Error::Capacity {
            what: "active set",
            size: m,
            limit: ML_ACTIVE_LIMIT,
        });
    }
    let idx = active.indices();
    let u: Vec<T> = idx.iter().map(|&k| amplitudes[k] * obs.values[k]).collect();
    let h: Vec<Vec<T>> = idx
        .iter()
        .map(|&i| {
            idx.iter()
                .map(|&j| amplitudes[i] * r.get(i, j) * amplitudes[j])
                .collect()
        })
        .collect();

    let mut b = vec![T::zero(); m];
    let mut best_score = T::neg_infinity();
    let mut best_pattern = 0u32;
    for pattern in 0u32..(1u32 << m) {
        for (slot, v) in b.iter_mut().enumerate() {
            let bit = (pattern >> (m - 1 - slot)) & 1 == 1;
            *v = Symbol::from_bit(bit).value();
        }
        let linear: T = b.iter().zip(&u).map(|(&bi, &ui)| bi * ui).sum();
        let quadratic: T = h
            .iter()
            .zip(&b)
            .map(|(row, &bi)| bi * row.iter().zip(&b).map(|(&hij, &bj)| hij * bj).sum::<T>())
            .sum();
        let score = linear + linear - quadratic;
        if score > best_score {
            best_score = score;
            best_pattern = pattern;
        }
    }

    let mut out = DecisionVector::empty(obs.values.len(), DetectorKind::MaximumLikelihood);
    for (slot, &k) in idx.iter().enumerate() {
        let bit = (best_pattern >> (m - 1 - slot)) & 1 == 1;
        out.decisions[k] = Some(Symbol::from_bit(bit));
    }
    Ok(out)
}

/// The ML objective for an explicit hypothesis over the active users.
pub fn ml_score<T: Scalar>(
    obs: &Observation<T>,
    r: &CorrelationMatrix<T>,
    amplitudes: &[T],
    active: &ActiveSet,
    hypothesis: &[Symbol],
) -> T {
    let idx = active.indices();
    let ab: Vec<T> = idx
        .iter()
        .zip(hypothesis)
        .map(|(&k, s)| amplitudes[k] * s.value::<T>())
        .collect();
    let linear: T = idx.iter().zip(&ab).map(|(&k, &x)| x * obs.values[k]).sum();
    let mut quadratic = T::zero();
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            quadratic = quadratic + ab[a] * r.get(i, j) * ab[b];
        }
    }
    linear + linear - quadratic
}
