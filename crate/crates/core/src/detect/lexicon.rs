//! Word lists used by the detectors and the benchmark generator.
//!
//! Files are UTF-8, one entry per line; blank lines and lines starting
//! with `#` are ignored.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::tokenize::{contains_phrase, tokenize};

pub const SPECULATIVE_WORDS: [&str; 6] = ["could", "might", "probably", "presumably", "must", "may"];
pub const MALE_OCCUPATION_COUNT: usize = 87;
pub const UNISEX_NAME_COUNT: usize = 30;

pub const SPECULATIVE_FILE: &str = "speculative_words.txt";
pub const MALE_OCCUPATIONS_FILE: &str = "male_biased_occupations.txt";
pub const FEMALE_OCCUPATIONS_FILE: &str = "female_biased_occupations.txt";
pub const NAMES_FILE: &str = "unisex_names.txt";
pub const MALE_PRONOUNS_FILE: &str = "male_pronouns.txt";
pub const FEMALE_PRONOUNS_FILE: &str = "female_pronouns.txt";

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("expected {expected} {what}, found {found}")]
    Count {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{file}:{line}: entry `{entry}` must be lowercase")]
    NotLowercase { file: String, line: usize, entry: String },
    #[error("{file}:{line}: duplicate entry `{entry}`")]
    Duplicate { file: String, line: usize, entry: String },
    #[error("occupation `{0}` is listed as both male-biased and female-biased")]
    OverlappingOccupation(String),
    #[error("speculative lexicon must be exactly {{could, might, probably, presumably, must, may}}, found {0:?}")]
    SpeculativeSet(Vec<String>),
    #[error("{what} list is empty")]
    Empty { what: &'static str },
}

/// A numbered, non-comment line.
pub(crate) fn entries(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn read_file(path: &Path) -> Result<String, LexiconError> {
    fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_list(file: &str, text: &str, require_lowercase: bool) -> Result<Vec<String>, LexiconError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, entry) in entries(text) {
        if require_lowercase && entry.to_lowercase() != entry {
            return Err(LexiconError::NotLowercase {
                file: file.into(),
                line,
                entry: entry.into(),
            });
        }
        if !seen.insert(entry.to_lowercase()) {
            return Err(LexiconError::Duplicate {
                file: file.into(),
                line,
                entry: entry.into(),
            });
        }
        out.push(entry.to_string());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lexicons {
    pub speculative_words: Vec<String>,
    pub male_biased_occupations: Vec<String>,
    pub female_biased_occupations: Vec<String>,
    /// Display form (capitalized); matched case-insensitively.
    pub unisex_names: Vec<String>,
    pub male_pronouns: Vec<String>,
    pub female_pronouns: Vec<String>,
}

impl Lexicons {
    /// The word lists shipped with the crate.
    pub fn builtin() -> Lexicons {
        Lexicons::parse(
            include_str!("../../data/speculative_words.txt"),
            include_str!("../../data/male_biased_occupations.txt"),
            include_str!("../../data/female_biased_occupations.txt"),
            include_str!("../../data/unisex_names.txt"),
            include_str!("../../data/male_pronouns.txt"),
            include_str!("../../data/female_pronouns.txt"),
        )
        .and_then(|l| l.validate().map(|_| l))
        .expect("shipped lexicons are valid")
    }

    /// Reads the six list files from `dir` and validates them.
    pub fn load_dir(dir: &Path) -> Result<Lexicons, LexiconError> {
        let read = |name: &str| read_file(&dir.join(name));
        let lex = Lexicons::parse(
            &read(SPECULATIVE_FILE)?,
            &read(MALE_OCCUPATIONS_FILE)?,
            &read(FEMALE_OCCUPATIONS_FILE)?,
            &read(NAMES_FILE)?,
            &read(MALE_PRONOUNS_FILE)?,
            &read(FEMALE_PRONOUNS_FILE)?,
        )?;
        lex.validate()?;
        Ok(lex)
    }

    fn parse(
        speculative: &str,
        male_occ: &str,
        female_occ: &str,
        names: &str,
        male_pron: &str,
        female_pron: &str,
    ) -> Result<Lexicons, LexiconError> {
        Ok(Lexicons {
            speculative_words: parse_list(SPECULATIVE_FILE, speculative, true)?,
            male_biased_occupations: parse_list(MALE_OCCUPATIONS_FILE, male_occ, true)?,
            female_biased_occupations: parse_list(FEMALE_OCCUPATIONS_FILE, female_occ, true)?,
            unisex_names: parse_list(NAMES_FILE, names, false)?,
            male_pronouns: parse_list(MALE_PRONOUNS_FILE, male_pron, true)?,
            female_pronouns: parse_list(FEMALE_PRONOUNS_FILE, female_pron, true)?,
        })
    }

    /// Count and consistency checks.
    pub fn validate(&self) -> Result<(), LexiconError> {
        let spec: BTreeSet<&str> = self.speculative_words.iter().map(String::as_str).collect();
        let expected: BTreeSet<&str> = SPECULATIVE_WORDS.into_iter().collect();
        if spec != expected || self.speculative_words.len() != SPECULATIVE_WORDS.len() {
            return Err(LexiconError::SpeculativeSet(self.speculative_words.clone()));
        }
        if self.male_biased_occupations.len() != MALE_OCCUPATION_COUNT {
            return Err(LexiconError::Count {
                what: "male-biased occupations",
                expected: MALE_OCCUPATION_COUNT,
                found: self.male_biased_occupations.len(),
            });
        }
        if self.unisex_names.len() != UNISEX_NAME_COUNT {
            return Err(LexiconError::Count {
                what: "names",
                expected: UNISEX_NAME_COUNT,
                found: self.unisex_names.len(),
            });
        }
        if self.female_biased_occupations.is_empty() {
            return Err(LexiconError::Empty { what: "female-biased occupation" });
        }
        if self.male_pronouns.is_empty() {
            return Err(LexiconError::Empty { what: "male pronoun" });
        }
        let male: BTreeSet<&String> = self.male_biased_occupations.iter().collect();
        if let Some(shared) = self.female_biased_occupations.iter().find(|o| male.contains(o)) {
            return Err(LexiconError::OverlappingOccupation(shared.clone()));
        }
        Ok(())
    }

    pub fn has_speculative(&self, tokens: &[String]) -> bool {
        tokens.iter().any(|t| self.speculative_words.contains(t))
    }

    pub fn has_male_pronoun(&self, tokens: &[String]) -> bool {
        tokens.iter().any(|t| self.male_pronouns.contains(t))
    }

    pub fn has_female_pronoun(&self, tokens: &[String]) -> bool {
        tokens.iter().any(|t| self.female_pronouns.contains(t))
    }

    pub fn has_male_biased_occupation(&self, tokens: &[String]) -> bool {
        any_phrase(tokens, &self.male_biased_occupations)
    }

    pub fn has_female_biased_occupation(&self, tokens: &[String]) -> bool {
        any_phrase(tokens, &self.female_biased_occupations)
    }

    /// Any gendered token (pronoun of either gender).
    pub fn has_gendered_token(&self, tokens: &[String]) -> bool {
        self.has_male_pronoun(tokens) || self.has_female_pronoun(tokens)
    }
}

fn any_phrase(tokens: &[String], entries: &[String]) -> bool {
    entries.iter().any(|e| {
        if e.contains(char::is_whitespace) {
            contains_phrase(tokens, &tokenize(e))
        } else {
            tokens.iter().any(|t| t == e)
        }
    })
}
