//! Input construction: appends a task question and an event phrase to the
//! message text.
//!
//! With `L` the location name, `C` the crisis name and `E` the non-empty parts
//! of `(L, C)` joined by one space:
//!
//! | scenario   | input                                                                   |
//! |------------|-------------------------------------------------------------------------|
//! | `standard` | `{text}`                                                                |
//! | `postq`    | `Content: {text}. Question: Is this message relevant to {E}?`           |
//! | `variant1` | `Content: {text}. Question: Is this message relevant to {C}?`           |
//! | `variant2` | `Content: {text}. Question: Is this message relevant to a {C} event that occurred in {L}?` |
//! | `variant3` | `Content: {text}. Question: {E}?`                                       |

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CrisisRecord, EventDescriptor, Label};

pub const CONTENT_PREFIX: &str = "Content: ";
pub const QUESTION_GLUE: &str = ". Question: ";
pub const TASK_DESCRIPTION: &str = "Is this message relevant to";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("event {0:?} has an empty crisis name")]
    EmptyCrisisName(String),
    #[error("variant2 needs a location name; event {0:?} has none")]
    MissingLocation(String),
    #[error("unknown scenario {0:?} (expected standard, postq, variant1, variant2 or variant3)")]
    UnknownScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Standard,
    #[serde(rename = "postq")]
    PostQ,
    Variant1,
    Variant2,
    Variant3,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Standard,
        Scenario::PostQ,
        Scenario::Variant1,
        Scenario::Variant2,
        Scenario::Variant3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Standard => "standard",
            Scenario::PostQ => "postq",
            Scenario::Variant1 => "variant1",
            Scenario::Variant2 => "variant2",
            Scenario::Variant3 => "variant3",
        }
    }

    /// The task question text; empty for `standard` and `variant3`.
    pub fn task_description(self) -> &'static str {
        match self {
            Scenario::Standard | Scenario::Variant3 => "",
            _ => TASK_DESCRIPTION,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.as_str() == lower)
            .ok_or_else(|| PromptError::UnknownScenario(s.to_string()))
    }
}

/// A constructed model input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedInput {
    pub text: String,
    /// Byte range of the original message inside `text`.
    pub content_span: Range<usize>,
    pub scenario: Scenario,
    pub event_id: String,
}

impl AugmentedInput {
    pub fn content(&self) -> &str {
        &self.text[self.content_span.clone()]
    }

    /// Template text before the message.
    pub fn prefix(&self) -> &str {
        &self.text[..self.content_span.start]
    }

    /// Template text after the message.
    pub fn suffix(&self) -> &str {
        &self.text[self.content_span.end..]
    }
}

/// The event phrase exactly as it appears in the constructed input.
pub fn event_phrase(event: &EventDescriptor, scenario: Scenario) -> Result<String, PromptError> {
    if event.crisis_name.is_empty() {
        return Err(PromptError::EmptyCrisisName(event.event_id.clone()));
    }
    let (l, c) = (event.location_name.as_str(), event.crisis_name.as_str());
    Ok(match scenario {
        Scenario::Standard => String::new(),
        Scenario::PostQ | Scenario::Variant3 => [l, c]
            .iter()
            .filter(|p| !p.is_empty())
            .copied()
            .collect::<Vec<_>>()
            .join(" "),
        Scenario::Variant1 => c.to_string(),
        Scenario::Variant2 => {
            if l.is_empty() {
                return Err(PromptError::MissingLocation(event.event_id.clone()));
            }
            format!("a {c} event that occurred in {l}")
        }
    })
}

/// Builds the model input for `text` under `scenario` and `event`.
pub fn construct_text(text: &str, scenario: Scenario, event: &EventDescriptor) -> Result<AugmentedInput, PromptError> {
    let phrase = event_phrase(event, scenario)?;
    let (out, span) = if scenario == Scenario::Standard {
        (text.to_string(), 0..text.len())
    } else {
        let mut out = String::with_capacity(text.len() + 64);
        out.push_str(CONTENT_PREFIX);
        let start = out.len();
        out.push_str(text);
        let end = out.len();
        out.push_str(QUESTION_GLUE);
        let task = scenario.task_description();
        if !task.is_empty() {
            out.push_str(task);
            out.push(' ');
        }
        out.push_str(&phrase);
        out.push('?');
        (out, start..end)
    };
    Ok(AugmentedInput {
        text: out,
        content_span: span,
        scenario,
        event_id: event.event_id.clone(),
    })
}

/// Builds the model input for a record. In cross-domain evaluation callers
/// pass the target event's descriptor, not the record's source event.
pub fn construct(
    record: &CrisisRecord,
    scenario: Scenario,
    event: &EventDescriptor,
) -> Result<AugmentedInput, PromptError> {
    construct_text(&record.text, scenario, event)
}

/// Target string for a label.
pub fn target_text(label: Label) -> &'static str {
    label.as_str()
}

/// Every word the templates can add, for forcing into a vocabulary.
pub fn template_words() -> Vec<&'static str> {
    let mut words: Vec<&str> = Vec::new();
    for piece in [
        CONTENT_PREFIX,
        QUESTION_GLUE,
        TASK_DESCRIPTION,
        "a event that occurred in",
        "?",
    ] {
        words.extend(piece.split_whitespace());
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(l: &str, c: &str) -> EventDescriptor {
        EventDescriptor::new("E", l, c)
    }

    #[test]
    fn postq_template() {
        let a = construct_text("water rising fast", Scenario::PostQ, &ev("Alberta", "Floods")).unwrap();
        assert_eq!(
            a.text,
            "Content: water rising fast. Question: Is this message relevant to Alberta Floods?"
        );
        assert_eq!(a.content(), "water rising fast");
    }

    #[test]
    fn standard_is_raw_text() {
        let a = construct_text("water rising fast", Scenario::Standard, &ev("Alberta", "Floods")).unwrap();
        assert_eq!(a.text, "water rising fast");
        assert_eq!(a.content_span, 0..17);
    }

    #[test]
    fn empty_text_and_location() {
        let a = construct_text("", Scenario::PostQ, &ev("", "Nepal Earthquake")).unwrap();
        assert_eq!(
            a.text,
            "Content: . Question: Is this message relevant to Nepal Earthquake?"
        );
        assert_eq!(a.content(), "");
    }

    #[test]
    fn variant2_template_and_missing_location() {
        let a = construct_text(
            "boom heard downtown",
            Scenario::Variant2,
            &ev("West Texas", "Explosion"),
        )
        .unwrap();
        assert_eq!(
            a.text,
            "Content: boom heard downtown. Question: Is this message relevant to a Explosion event that occurred in West Texas?"
        );
        assert_eq!(
            construct_text("x", Scenario::Variant2, &ev("", "Nepal Earthquake")),
            Err(PromptError::MissingLocation("E".into()))
        );
    }

    #[test]
    fn event_phrases() {
        assert_eq!(
            event_phrase(&ev("Queensland", "Floods"), Scenario::PostQ).unwrap(),
            "Queensland Floods"
        );
        assert_eq!(
            event_phrase(&ev("", "Nepal Earthquake"), Scenario::PostQ).unwrap(),
            "Nepal Earthquake"
        );
        assert_eq!(
            event_phrase(&ev("Alberta", "Floods"), Scenario::Variant1).unwrap(),
            "Floods"
        );
        assert!(event_phrase(&ev("Alberta", ""), Scenario::PostQ).is_err());
    }

    #[test]
    fn scenario_names_are_case_insensitive() {
        assert_eq!("PostQ".parse::<Scenario>().unwrap(), Scenario::PostQ);
        assert_eq!("VARIANT3".parse::<Scenario>().unwrap(), Scenario::Variant3);
        assert!("prefix".parse::<Scenario>().is_err());
    }

    #[test]
    fn labels_round_trip_through_target_text() {
        for l in Label::ALL {
            assert_eq!(target_text(l).parse::<Label>().unwrap(), l);
        }
    }

    proptest! {
        #[test]
        fn template_is_constant_outside_content(a in ".{0,40}", b in ".{0,40}", si in 0usize..5) {
            let scenario = Scenario::ALL[si];
            let e = ev("Alberta", "Floods");
            let x = construct_text(&a, scenario, &e).unwrap();
            let y = construct_text(&b, scenario, &e).unwrap();
            prop_assert_eq!(x.prefix(), y.prefix());
            prop_assert_eq!(x.suffix(), y.suffix());
            prop_assert_eq!(x.content(), a.as_str());
        }

        #[test]
        fn variant3_is_postq_without_task(text in ".{0,40}") {
            let e = ev("Queensland", "Floods");
            let p = construct_text(&text, Scenario::PostQ, &e).unwrap();
            let v = construct_text(&text, Scenario::Variant3, &e).unwrap();
            let stripped = format!("{}{}{}", p.prefix(), p.content(), p.suffix().replacen("Is this message relevant to ", "", 1));
            prop_assert_eq!(stripped, v.text);
        }
    }
}
