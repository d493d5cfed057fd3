//! Turning chat-completion responses into label distributions.

use cmbe_core::{Label, ModelError, ProbDist};
use serde_json::Value;

/// Case-insensitive prefix match of a response token against the label
/// verbalizers. Leading whitespace and punctuation are ignored, so
/// " Entail", "neutral." and "CONTRADICTION" all match.
pub fn match_label(token: &str) -> Option<Label> {
    let word: String = token
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    if word.is_empty() {
        return None;
    }
    Label::ALL
        .into_iter()
        .find(|l| l.as_str().starts_with(&word) || word.starts_with(l.as_str()))
}

fn unparseable(message: impl Into<String>) -> ModelError {
    ModelError::Unparseable { message: message.into() }
}

/// Softmax over the best log-probability found for each label among the
/// first answer token's alternatives. A label missing from the list is
/// given the smallest listed log-probability, an upper bound on its true
/// value.
pub fn dist_from_logprobs(response: &Value) -> Result<ProbDist, ModelError> {
    let first = response
        .pointer("/choices/0/logprobs/content/0")
        .ok_or_else(|| unparseable("response has no logprobs for the first token"))?;
    let mut entries: Vec<(String, f64)> = Vec::new();
    if let Some(top) = first.get("top_logprobs").and_then(Value::as_array) {
        for t in top {
            if let (Some(tok), Some(lp)) = (t.get("token").and_then(Value::as_str), t.get("logprob").and_then(Value::as_f64)) {
                entries.push((tok.to_string(), lp));
            }
        }
    }
    if let (Some(tok), Some(lp)) = (first.get("token").and_then(Value::as_str), first.get("logprob").and_then(Value::as_f64)) {
        entries.push((tok.to_string(), lp));
    }
    if entries.is_empty() {
        return Err(unparseable("first token has no log-probabilities"));
    }
    let floor = entries.iter().map(|(_, lp)| *lp).fold(f64::INFINITY, f64::min);
    let mut best = [None::<f64>; 3];
    for (tok, lp) in &entries {
        if let Some(l) = match_label(tok) {
            let slot = &mut best[l.index()];
            *slot = Some(slot.map_or(*lp, |b| b.max(*lp)));
        }
    }
    if best.iter().all(Option::is_none) {
        return Err(unparseable(format!(
            "no label verbalizer among first-token candidates {:?}",
            entries.iter().map(|(t, _)| t.as_str()).collect::<Vec<_>>()
        )));
    }
    let lps = best.map(|b| b.unwrap_or(floor));
    let max = lps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights = lps.map(|lp| (lp - max).exp());
    ProbDist::from_weights(weights).map_err(|e| unparseable(e.to_string()))
}

/// Add-one smoothed label frequencies over answers that name a label.
/// Returns the distribution and the number of answers that did not.
pub fn dist_from_answers<'a>(answers: impl IntoIterator<Item = &'a str>) -> Result<(ProbDist, usize), ModelError> {
    let mut counts = [0usize; 3];
    let mut skipped = 0;
    for a in answers {
        match match_label(a) {
            Some(l) => counts[l.index()] += 1,
            None => skipped += 1,
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(unparseable(format!("none of {skipped} sampled answers names a label")));
    }
    let weights = counts.map(|c| (c + 1) as f64);
    Ok((ProbDist::from_weights(weights).map_err(|e| unparseable(e.to_string()))?, skipped))
}

/// The message contents of every returned choice.
pub fn choice_texts(response: &Value) -> Result<Vec<&str>, ModelError> {
    let choices = response
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| unparseable("response has no choices"))?;
    Ok(choices
        .iter()
        .filter_map(|c| c.pointer("/message/content").and_then(Value::as_str))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn verbalizers() {
        assert_eq!(match_label(" Entailment."), Some(Label::Entailment));
        assert_eq!(match_label("neut"), Some(Label::Neutral));
        assert_eq!(match_label("CONTRADICTION"), Some(Label::Contradiction));
        assert_eq!(match_label("\"contra"), Some(Label::Contradiction));
        assert_eq!(match_label("maybe"), None);
        assert_eq!(match_label("..."), None);
    }

    #[test]
    fn smoothed_counts() {
        let answers: Vec<&str> = std::iter::repeat_n("entailment", 5)
            .chain(std::iter::repeat_n("Neutral", 3))
            .chain(["contradiction"])
            .collect();
        let (d, skipped) = dist_from_answers(answers).unwrap();
        let expected = [6.0 / 12.0, 4.0 / 12.0, 2.0 / 12.0];
        for (got, want) in d.values().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(skipped, 0);
        let (_, skipped) = dist_from_answers(["entailment", "no idea"]).unwrap();
        assert_eq!(skipped, 1);
        assert!(dist_from_answers(["no idea"]).is_err());
    }

    #[test]
    fn logprob_softmax() {
        let resp = json!({"choices": [{"logprobs": {"content": [{
            "token": "Ent", "logprob": -0.1,
            "top_logprobs": [
                {"token": "Ent", "logprob": -0.1},
                {"token": "Neutral", "logprob": -2.0},
                {"token": "The", "logprob": -5.0}
            ]
        }]}}]});
        let d = dist_from_logprobs(&resp).unwrap();
        let raw = [(-0.1f64).exp(), (-2.0f64).exp(), (-5.0f64).exp()];
        let z: f64 = raw.iter().sum();
        for (got, r) in d.values().iter().zip(raw) {
            assert!((got - r / z).abs() < 1e-12);
        }
        assert!(dist_from_logprobs(&json!({"choices": [{"message": {"content": "x"}}]})).is_err());
    }
}
