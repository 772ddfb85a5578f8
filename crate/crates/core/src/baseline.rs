//! Phrase-lexicon extraction baseline: the longest whole-word lexicon match
//! in the text is the extracted span, and its class is the prediction.

use std::path::Path;

use crate::data::{Attribute, DataPoint, ATTRIBUTES};
use crate::metrics::{evaluate_predictions, EvalReport};
use crate::error::{Error, Result};

/// Lowercase phrases per attribute and class, indexed by class id.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    phrases: [Vec<Vec<Vec<String>>>; 3],
}

const DEFAULT_PHRASES: &[(Attribute, &str, &[&str])] = &[
    (
        Attribute::Frequency,
        "Every morning",
        &["everyday in the morning", "every morning", "morning"],
    ),
    (
        Attribute::Frequency,
        "At Bedtime",
        &[
            "everyday before sleeping",
            "everyday after dinner",
            "every night",
            "after dinner",
            "at bedtime",
            "before sleeping",
        ],
    ),
    (
        Attribute::Frequency,
        "Twice a day",
        &["twice a day", "2 times a day", "two times a day", "2 times per day", "two times per day"],
    ),
    (
        Attribute::Frequency,
        "Three times a day",
        &["3 times a day", "3 times per day", "3 times every day"],
    ),
    (Attribute::Frequency, "Every six hours", &["every 6 hours", "every six hours"]),
    (Attribute::Frequency, "Every week", &["every week", "weekly", "once a week"]),
    (
        Attribute::Frequency,
        "Twice a week",
        &[
            "twice a week",
            "two times a week",
            "2 times a week",
            "twice per week",
            "two times per week",
            "2 times per week",
        ],
    ),
    (Attribute::Frequency, "Three times a week", &["3 times a week", "3 times per week"]),
    (Attribute::Frequency, "Every month", &["every month", "monthly", "once a month"]),
    (Attribute::Route, "Pill", &["tablet", "pill", "capsule", "mg"]),
    (Attribute::Route, "Injection", &["pen", "shot", "injector", "injection", "inject"]),
    (Attribute::Route, "Topical cream", &["cream", "gel", "ointment", "lotion"]),
    (Attribute::Route, "Nasal spray", &["spray", "nasal"]),
    (Attribute::Route, "Medicated patch", &["patch"]),
    (Attribute::Route, "Ophthalmic solution", &["ophthalmic", "drops", "drop"]),
    (Attribute::Route, "Oral solution", &["oral solution"]),
    (Attribute::Change, "Take", &["take", "start", "put you on", "continue"]),
    (Attribute::Change, "Stop", &["stop", "off"]),
    (Attribute::Change, "Increase", &["increase"]),
    (Attribute::Change, "Decrease", &["reduce", "decrease"]),
];

fn tokenize(phrase: &str) -> Vec<String> {
    phrase.split_whitespace().map(str::to_lowercase).collect()
}

impl Lexicon {
    pub fn empty() -> Self {
        Self {
            phrases: ATTRIBUTES.map(|a| vec![Vec::new(); a.num_classes()]),
        }
    }

    /// The published phrase table. Classes without listed phrases (Other,
    /// None, frequency Daily, route Inhaler) have empty lists.
    pub fn default_lexicon() -> Self {
        let mut lex = Self::empty();
        for &(a, class, phrases) in DEFAULT_PHRASES {
            for p in phrases {
                lex.add(a, class, p).expect("built-in lexicon is valid");
            }
        }
        lex
    }

    pub fn add(&mut self, a: Attribute, class: &str, phrase: &str) -> Result<()> {
        let id = a.class_id(class)?;
        let toks = tokenize(phrase);
        if toks.is_empty() {
            return Err(Error::Invalid(format!("empty phrase for {a}/{class}")));
        }
        self.phrases[a.index()][id].push(toks);
        Ok(())
    }

    /// Phrases of one class as token sequences.
    pub fn phrases(&self, a: Attribute, class: usize) -> &[Vec<String>] {
        &self.phrases[a.index()][class]
    }

    /// All words appearing in any phrase.
    pub fn vocabulary(&self) -> std::collections::BTreeSet<&str> {
        self.phrases
            .iter()
            .flatten()
            .flatten()
            .flatten()
            .map(String::as_str)
            .collect()
    }

    /// Parses `attribute<TAB>class<TAB>phrase` lines; blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Self::empty();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(err(format!("expected 3 tab-separated fields, got {}", fields.len())));
            }
            let a: Attribute = fields[0].parse().map_err(|e: Error| err(e.to_string()))?;
            lex.add(a, fields[1], fields[2]).map_err(|e| err(e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for a in ATTRIBUTES {
            for (c, phrases) in self.phrases[a.index()].iter().enumerate() {
                for p in phrases {
                    out.push_str(&format!("{}\t{}\t{}\n", a, a.class_name(c), p.join(" ")));
                }
            }
        }
        out
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::default_lexicon()
    }
}

/// A lexicon hit: tokens `[start, end)` realize a phrase of `class`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhraseMatch {
    pub start: usize,
    pub end: usize,
    pub class: usize,
}

impl PhraseMatch {
    pub fn mask(&self, len: usize) -> Vec<bool> {
        (0..len).map(|j| j >= self.start && j < self.end).collect()
    }
}

/// Longest whole-word match; ties go to the earliest start, then the lower
/// class id.
pub fn phrase_extract<S: AsRef<str>>(tokens: &[S], a: Attribute, lex: &Lexicon) -> Option<PhraseMatch> {
    let lower: Vec<String> = tokens.iter().map(|t| t.as_ref().to_lowercase()).collect();
    let mut best: Option<PhraseMatch> = None;
    for start in 0..lower.len() {
        for (class, phrases) in lex.phrases[a.index()].iter().enumerate() {
            for p in phrases {
                let end = start + p.len();
                if end > lower.len() || lower[start..end] != p[..] {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => p.len() > b.end - b.start,
                };
                if better {
                    best = Some(PhraseMatch { start, end, class });
                }
            }
        }
    }
    best
}

/// Span masks and class predictions (None class when nothing matches) for all
/// three attributes.
pub fn predict<S: AsRef<str>>(tokens: &[S], lex: &Lexicon) -> ([usize; 3], [Vec<bool>; 3]) {
    let mut classes = [0; 3];
    let masks = ATTRIBUTES.map(|a| {
        let m = phrase_extract(tokens, a, lex);
        classes[a.index()] = m.map_or(a.none_class(), |m| m.class);
        m.map_or_else(|| vec![false; tokens.len()], |m| m.mask(tokens.len()))
    });
    (classes, masks)
}

pub fn evaluate_baseline(data: &[DataPoint], lex: &Lexicon) -> Result<EvalReport> {
    let preds: Vec<_> = data.iter().map(|d| predict(d.tokens(), lex)).collect();
    evaluate_predictions("phrase-baseline", data, &preds)
}
