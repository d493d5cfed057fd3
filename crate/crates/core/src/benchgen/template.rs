use serde::{Deserialize, Serialize};

use super::GenError;
use crate::label::Label;
use crate::sample::NliSample;

/// Which gold labels a template can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateForm {
    /// The premise never states the subject's gender, so the hypothesis
    /// ("He ...") is always neutral.
    NeutralForm,
    /// The premise names the subject "He"; gold follows the verb-phrase pair.
    EntailContradictForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub id: &'static str,
    pub form: TemplateForm,
    pub premise_pattern: &'static str,
    pub hypothesis_pattern: &'static str,
}

const HYPOTHESIS: &str = "He {S1} {V2}.";

/// Four neutral/entail-contradict template pairs, reproduced verbatim
/// (including the lowercase "he" in the second pair).
pub const TEMPLATES: [Template; 8] = [
    Template { id: "t1-neutral", form: TemplateForm::NeutralForm, premise_pattern: "{N1} is a {P1}, {V1}.", hypothesis_pattern: HYPOTHESIS },
    Template { id: "t1-ec", form: TemplateForm::EntailContradictForm, premise_pattern: "{N1} is a {P1}. He {V1}.", hypothesis_pattern: HYPOTHESIS },
    Template { id: "t2-neutral", form: TemplateForm::NeutralForm, premise_pattern: "{N1}, a {P1} by trade, {V1}.", hypothesis_pattern: HYPOTHESIS },
    Template { id: "t2-ec", form: TemplateForm::EntailContradictForm, premise_pattern: "{N1}, a {P1} by trade. he {V1}.", hypothesis_pattern: HYPOTHESIS },
    Template { id: "t3-neutral", form: TemplateForm::NeutralForm, premise_pattern: "{N1} works as a {P1}, {V1}.", hypothesis_pattern: HYPOTHESIS },
    Template { id: "t3-ec", form: TemplateForm::EntailContradictForm, premise_pattern: "{N1} works as a {P1}. He {V1}.", hypothesis_pattern: HYPOTHESIS },
    Template { id: "t4-neutral", form: TemplateForm::NeutralForm, premise_pattern: "{N1}, recognized as a {P1}, {V1}.", hypothesis_pattern: HYPOTHESIS },
    Template { id: "t4-ec", form: TemplateForm::EntailContradictForm, premise_pattern: "{N1} is recognized as a {P1}. He {V1}.", hypothesis_pattern: HYPOTHESIS },
];

pub fn templates_of(form: TemplateForm) -> impl Iterator<Item = &'static Template> {
    TEMPLATES.iter().filter(move |t| t.form == form)
}

pub fn template_by_id(id: &str) -> Option<&'static Template> {
    TEMPLATES.iter().find(|t| t.id == id)
}

/// Values for the five template slots plus the label of the verb-phrase pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slots {
    pub name: String,
    pub occupation: String,
    pub speculative: String,
    pub premise_phrase: String,
    pub hypothesis_phrase: String,
    pub pair_label: Label,
}

impl Template {
    pub fn gold_for(&self, pair_label: Label) -> Label {
        match self.form {
            TemplateForm::NeutralForm => Label::Neutral,
            TemplateForm::EntailContradictForm => pair_label,
        }
    }

    /// Fills the slots. Gold is neutral for neutral-form templates and the
    /// pair label otherwise.
    pub fn instantiate(&self, id: impl Into<String>, slots: &Slots) -> Result<NliSample, GenError> {
        let fills = [
            ("{N1}", "N1", slots.name.as_str()),
            ("{P1}", "P1", slots.occupation.as_str()),
            ("{S1}", "S1", slots.speculative.as_str()),
            ("{V1}", "V1", slots.premise_phrase.as_str()),
            ("{V2}", "V2", slots.hypothesis_phrase.as_str()),
        ];
        let mut premise = self.premise_pattern.to_string();
        let mut hypothesis = self.hypothesis_pattern.to_string();
        for (placeholder, slot, value) in fills {
            let used = premise.contains(placeholder) || hypothesis.contains(placeholder);
            if used && value.trim().is_empty() {
                return Err(GenError::MissingSlot {
                    template: self.id,
                    slot,
                });
            }
            premise = premise.replace(placeholder, value.trim());
            hypothesis = hypothesis.replace(placeholder, value.trim());
        }
        let sample = NliSample::new(id, premise, hypothesis)?.with_gold(self.gold_for(slots.pair_label));
        Ok(sample)
    }
}
