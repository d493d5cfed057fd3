//! Labels and the three-component probability algebra.
//!
//! Every vector in the crate uses one index order: entailment = 0,
//! neutral = 1, contradiction = 2.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the sum-to-one check on [`ProbDist`].
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("probability component {index} is {value}, outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("probabilities sum to {0}, expected 1")]
    BadSum(f64),
    #[error("non-finite component in {0:?}")]
    NonFinite([f64; 3]),
    #[error("cannot average an empty list of distributions")]
    Empty,
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Entailment,
    Neutral,
    Contradiction,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Entailment, Label::Neutral, Label::Contradiction];

    pub fn index(self) -> usize {
        match self {
            Label::Entailment => 0,
            Label::Neutral => 1,
            Label::Contradiction => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Label> {
        Label::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Entailment => "entailment",
            Label::Neutral => "neutral",
            Label::Contradiction => "contradiction",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = DistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "entailment" => Ok(Label::Entailment),
            "neutral" => Ok(Label::Neutral),
            "contradiction" => Ok(Label::Contradiction),
            other => Err(DistError::UnknownLabel(other.to_string())),
        }
    }
}

/// A validated probability distribution over the three labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct ProbDist([f64; 3]);

impl ProbDist {
    pub fn new(values: [f64; 3]) -> Result<Self, DistError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DistError::NonFinite(values));
        }
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(DistError::OutOfRange { index, value });
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistError::BadSum(sum));
        }
        Ok(ProbDist(values))
    }

    /// Normalizes non-negative weights into a distribution.
    ///
    /// Negative components are clipped to zero first; an all-zero input
    /// yields the uniform distribution.
    pub fn from_weights(weights: [f64; 3]) -> Result<Self, DistError> {
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(DistError::NonFinite(weights));
        }
        let clipped = weights.map(|w| w.max(0.0));
        let total: f64 = clipped.iter().sum();
        if total <= 0.0 {
            return Ok(uniform_dist());
        }
        Ok(ProbDist(clipped.map(|w| w / total)))
    }

    pub fn values(&self) -> [f64; 3] {
        self.0
    }

    pub fn get(&self, label: Label) -> f64 {
        self.0[label.index()]
    }

    pub fn to_scores(self) -> ScoreVector {
        ScoreVector(self.0)
    }

    pub fn argmax(&self) -> Label {
        argmax_label(&self.to_scores()).expect("validated distribution is finite")
    }
}

impl TryFrom<[f64; 3]> for ProbDist {
    type Error = DistError;

    fn try_from(values: [f64; 3]) -> Result<Self, Self::Error> {
        ProbDist::new(values)
    }
}

impl From<ProbDist> for [f64; 3] {
    fn from(d: ProbDist) -> Self {
        d.0
    }
}

/// Unnormalized per-label scores; results of subtracting effects from
/// distributions live here and may be negative.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct ScoreVector(pub [f64; 3]);

impl ScoreVector {
    pub const ZERO: ScoreVector = ScoreVector([0.0; 3]);

    pub fn values(&self) -> [f64; 3] {
        self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ScoreVector) -> f64 {
        (0..3)
            .map(|i| (self.0[i] - other.0[i]).abs())
            .fold(0.0, f64::max)
    }
}

impl From<[f64; 3]> for ScoreVector {
    fn from(v: [f64; 3]) -> Self {
        ScoreVector(v)
    }
}

impl From<ScoreVector> for [f64; 3] {
    fn from(v: ScoreVector) -> Self {
        v.0
    }
}

impl Add for ScoreVector {
    type Output = ScoreVector;
    fn add(self, rhs: ScoreVector) -> ScoreVector {
        ScoreVector([self.0[0] + rhs.0[0], self.0[1] + rhs.0[1], self.0[2] + rhs.0[2]])
    }
}

impl Sub for ScoreVector {
    type Output = ScoreVector;
    fn sub(self, rhs: ScoreVector) -> ScoreVector {
        ScoreVector([self.0[0] - rhs.0[0], self.0[1] - rhs.0[1], self.0[2] - rhs.0[2]])
    }
}

impl Mul<ScoreVector> for f64 {
    type Output = ScoreVector;
    fn mul(self, rhs: ScoreVector) -> ScoreVector {
        ScoreVector(rhs.0.map(|v| self * v))
    }
}

impl Sub for ProbDist {
    type Output = ScoreVector;
    fn sub(self, rhs: ProbDist) -> ScoreVector {
        self.to_scores() - rhs.to_scores()
    }
}

impl Sub<ScoreVector> for ProbDist {
    type Output = ScoreVector;
    fn sub(self, rhs: ScoreVector) -> ScoreVector {
        self.to_scores() - rhs
    }
}

pub fn uniform_dist() -> ProbDist {
    ProbDist([1.0 / 3.0; 3])
}

/// Componentwise arithmetic mean.
pub fn dist_mean(dists: &[ProbDist]) -> Result<ProbDist, DistError> {
    if dists.is_empty() {
        return Err(DistError::Empty);
    }
    let n = dists.len() as f64;
    let mut acc = [0.0f64; 3];
    for d in dists {
        for (a, v) in acc.iter_mut().zip(d.0) {
            *a += v;
        }
    }
    let mean = acc.map(|a| a / n);
    // Rounding can leave the mean a few ulps off one; fold that back in.
    let total: f64 = mean.iter().sum();
    Ok(ProbDist(mean.map(|m| (m / total).clamp(0.0, 1.0))))
}

/// Highest-scoring label. Ties go to the lowest label index.
pub fn argmax_label(scores: &ScoreVector) -> Result<Label, DistError> {
    if !scores.is_finite() {
        return Err(DistError::NonFinite(scores.0));
    }
    let mut best = 0;
    for i in 1..3 {
        if scores.0[i] > scores.0[best] {
            best = i;
        }
    }
    Ok(Label::ALL[best])
}
