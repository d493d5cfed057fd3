use std::collections::BTreeSet;

/// Lowercases, drops every character that is neither alphanumeric nor
/// whitespace, then splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

pub fn unique_tokens(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// True when `phrase` occurs as a contiguous run inside `tokens`.
pub(crate) fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return false;
    }
    tokens.windows(phrase.len()).any(|w| w == phrase)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_and_lowercases() {
        assert_eq!(tokenize("He might build furniture."), ["he", "might", "build", "furniture"]);
        assert!(tokenize("").is_empty());
        assert!(tokenize("  ... !! ").is_empty());
        assert_eq!(tokenize("children's well-known"), ["childrens", "wellknown"]);
    }

    #[test]
    fn table_row_premise_has_seventeen_tokens() {
        let premise = "Noah is a plumber. He builds furniture to decorate the home and save costs, using recycled wood.";
        assert_eq!(tokenize(premise).len(), 17);
        let hypothesis = "He might build furniture to decorate the home and save costs.";
        assert_eq!(tokenize(hypothesis).len(), 11);
    }

    #[test]
    fn phrase_search() {
        let t = tokenize("she is a police officer today");
        assert!(contains_phrase(&t, &tokenize("police officer")));
        assert!(!contains_phrase(&t, &tokenize("officer police")));
        assert!(!contains_phrase(&t, &[]));
    }
}
