use thiserror::Error;

use super::tokenize::unique_tokens;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("similarity scorer `{scorer}` failed: {message}")]
    Failed { scorer: String, message: String },
    #[error("similarity scorer `{scorer}` returned {value}, outside [0, 1]")]
    OutOfRange { scorer: String, value: f64 },
}

/// Scores how semantically close a hypothesis is to its premise.
///
/// Scores are deterministic for fixed inputs and `scorer_id`. Thresholds
/// tuned for BERTScore only apply when [`bertscore_compatible`] is true.
///
/// [`bertscore_compatible`]: SimilarityScorer::bertscore_compatible
pub trait SimilarityScorer: Send + Sync {
    fn scorer_id(&self) -> &str;

    fn bertscore_compatible(&self) -> bool {
        false
    }

    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ScorerError>;
}

/// Offline proxy: F1 of the unique-token sets of premise and hypothesis.
#[derive(Debug, Clone, Copy, Default)]
pub struct TokenF1Scorer;

impl TokenF1Scorer {
    pub const ID: &'static str = "token-f1";
}

impl SimilarityScorer for TokenF1Scorer {
    fn scorer_id(&self) -> &str {
        Self::ID
    }

    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ScorerError> {
        let p = unique_tokens(premise);
        let h = unique_tokens(hypothesis);
        if p.is_empty() || h.is_empty() {
            return Ok(0.0);
        }
        let shared = p.intersection(&h).count() as f64;
        if shared == 0.0 {
            return Ok(0.0);
        }
        let precision = shared / h.len() as f64;
        let recall = shared / p.len() as f64;
        Ok(2.0 * precision * recall / (precision + recall))
    }
}

/// Returns a fixed score; handy for wiring tests and for pinning a
/// similarity decision.
#[derive(Debug, Clone)]
pub struct ConstantScorer {
    pub id: String,
    pub value: f64,
    pub bertscore_compatible: bool,
}

impl SimilarityScorer for ConstantScorer {
    fn scorer_id(&self) -> &str {
        &self.id
    }

    fn bertscore_compatible(&self) -> bool {
        self.bertscore_compatible
    }

    fn score(&self, _premise: &str, _hypothesis: &str) -> Result<f64, ScorerError> {
        Ok(self.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_f1_bounds() {
        let s = TokenF1Scorer;
        assert_eq!(s.score("a b c", "a b c").unwrap(), 1.0);
        assert_eq!(s.score("a b c", "x y").unwrap(), 0.0);
        assert_eq!(s.score("", "x").unwrap(), 0.0);
        // p = {a,b,c,d}, h = {b,c,e}: P = 2/3, R = 1/2, F1 = 4/7
        let f1 = s.score("a b c d", "b c e").unwrap();
        assert!((f1 - 4.0 / 7.0).abs() < 1e-12);
    }
}
