use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::template::{templates_of, Slots, TemplateForm};
use crate::detect::{entries, lexical_overlap, read_file, tokenize, LexiconError, Lexicons};
use crate::label::Label;

pub const PAIRS_FILE: &str = "verb_phrase_pairs.tsv";
pub const PAIRS_PER_LABEL: usize = 100;
/// The premise phrase must be strictly more than this many tokens longer.
pub const MIN_PHRASE_GAP: usize = 3;
/// Overlap bound each pair must clear once inserted into its templates.
pub const PAIR_OVERLAP_BOUND: f64 = 0.8;

#[derive(Debug, Error)]
pub enum VocabError {
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("{file}:{line}: expected 3 tab-separated columns, found {found}")]
    Columns { file: String, line: usize, found: usize },
    #[error("{file}:{line}: pair label must be entailment or contradiction, found `{label}`")]
    PairLabel { file: String, line: usize, label: String },
    #[error("{file}:{line}: premise phrase `{premise}` is only {gap} token(s) longer than hypothesis phrase `{hypothesis}` (need more than {min})", min = MIN_PHRASE_GAP)]
    PhraseGap {
        file: String,
        line: usize,
        premise: String,
        hypothesis: String,
        gap: i64,
    },
    #[error("{file}:{line}: pair `{hypothesis}` reaches only {overlap:.3} lexical overlap in template {template}")]
    LowOverlap {
        file: String,
        line: usize,
        hypothesis: String,
        template: &'static str,
        overlap: f64,
    },
    #[error("{file}:{line}: verb phrase contains a gendered token")]
    GenderedPhrase { file: String, line: usize },
    #[error("expected {expected} {label} pairs, found {found}")]
    PairCount { label: Label, expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerbPhrasePair {
    pub premise_phrase: String,
    pub hypothesis_phrase: String,
    pub pair_label: Label,
}

/// Everything the generator draws slot values from.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    pub lexicons: Lexicons,
    pub pairs: Vec<VerbPhrasePair>,
}

impl Vocab {
    pub fn builtin() -> Vocab {
        let lexicons = Lexicons::builtin();
        let pairs = parse_pairs(PAIRS_FILE, include_str!("../../data/verb_phrase_pairs.tsv"), &lexicons)
            .expect("shipped verb-phrase pairs are valid");
        Vocab { lexicons, pairs }
    }

    pub fn pairs_with_label(&self, label: Label) -> impl Iterator<Item = (usize, &VerbPhrasePair)> {
        self.pairs
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.pair_label == label)
    }
}

/// Loads and validates the lexicon files plus the pair TSV from `dir`.
pub fn load_vocab(dir: &Path) -> Result<Vocab, VocabError> {
    let lexicons = Lexicons::load_dir(dir)?;
    let path = dir.join(PAIRS_FILE);
    let text = read_file(&path)?;
    let pairs = parse_pairs(&path.display().to_string(), &text, &lexicons)?;
    Ok(Vocab { lexicons, pairs })
}

fn parse_pairs(file: &str, text: &str, lex: &Lexicons) -> Result<Vec<VerbPhrasePair>, VocabError> {
    let mut pairs = Vec::new();
    for (line, row) in entries(text) {
        let cols: Vec<&str> = row.split('\t').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(VocabError::Columns {
                file: file.into(),
                line,
                found: cols.len(),
            });
        }
        let pair_label = match cols[2].parse::<Label>() {
            Ok(l @ (Label::Entailment | Label::Contradiction)) => l,
            _ => {
                return Err(VocabError::PairLabel {
                    file: file.into(),
                    line,
                    label: cols[2].into(),
                })
            }
        };
        let pair = VerbPhrasePair {
            premise_phrase: cols[0].into(),
            hypothesis_phrase: cols[1].into(),
            pair_label,
        };
        check_pair(file, line, &pair, lex)?;
        pairs.push(pair);
    }
    for label in [Label::Entailment, Label::Contradiction] {
        let found = pairs.iter().filter(|p| p.pair_label == label).count();
        if found != PAIRS_PER_LABEL {
            return Err(VocabError::PairCount {
                label,
                expected: PAIRS_PER_LABEL,
                found,
            });
        }
    }
    Ok(pairs)
}

fn check_pair(file: &str, line: usize, pair: &VerbPhrasePair, lex: &Lexicons) -> Result<(), VocabError> {
    let premise_tokens = tokenize(&pair.premise_phrase);
    let hypothesis_tokens = tokenize(&pair.hypothesis_phrase);
    let gap = premise_tokens.len() as i64 - hypothesis_tokens.len() as i64;
    if gap <= MIN_PHRASE_GAP as i64 {
        return Err(VocabError::PhraseGap {
            file: file.into(),
            line,
            premise: pair.premise_phrase.clone(),
            hypothesis: pair.hypothesis_phrase.clone(),
            gap,
        });
    }
    if lex.has_gendered_token(&premise_tokens) || lex.has_gendered_token(&hypothesis_tokens) {
        return Err(VocabError::GenderedPhrase { file: file.into(), line });
    }
    // Entailment pairs also fill neutral-form templates.
    let forms: &[TemplateForm] = match pair.pair_label {
        Label::Entailment => &[TemplateForm::NeutralForm, TemplateForm::EntailContradictForm],
        _ => &[TemplateForm::EntailContradictForm],
    };
    let slots = Slots {
        name: lex.unisex_names.first().cloned().unwrap_or_else(|| "Alex".into()),
        occupation: lex.male_biased_occupations.first().cloned().unwrap_or_else(|| "plumber".into()),
        speculative: "might".into(),
        premise_phrase: pair.premise_phrase.clone(),
        hypothesis_phrase: pair.hypothesis_phrase.clone(),
        pair_label: pair.pair_label,
    };
    for form in forms {
        for template in templates_of(*form) {
            let sample = template
                .instantiate("vocab-check", &slots)
                .expect("all slots are filled");
            let overlap = lexical_overlap(&sample.premise, &sample.hypothesis)
                .expect("hypothesis template is non-empty");
            if overlap <= PAIR_OVERLAP_BOUND {
                return Err(VocabError::LowOverlap {
                    file: file.into(),
                    line,
                    hypothesis: pair.hypothesis_phrase.clone(),
                    template: template.id,
                    overlap,
                });
            }
        }
    }
    Ok(())
}
