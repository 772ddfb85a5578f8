//! Templated synthetic conversations.
//!
//! Each example mentions one target medication once. Its frequency, route and
//! change classes are realized as phrases in utterances next to the mention,
//! and gold spans mark exactly those phrases. Multi-medication examples add
//! distractor medications with their own (different) phrases. Label noise
//! replaces a class label with a random other class and leaves the text alone.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::{DataPoint, Medication, Utterance};
use super::schema::{Attribute, Speaker, ATTRIBUTES};
use crate::baseline::Lexicon;
use crate::error::{Error, Result};

/// Token range `[start, end)`.
type Span = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassDistribution {
    /// Proportions of the clinical corpus (heavily skewed toward None).
    Table2,
    Uniform,
}

impl std::str::FromStr for ClassDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table2" => Ok(Self::Table2),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::Invalid(format!("unknown class distribution `{other}`"))),
        }
    }
}

impl std::fmt::Display for ClassDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Table2 => "table2",
            Self::Uniform => "uniform",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_examples: usize,
    pub span_label_fraction: f64,
    pub multi_medication_fraction: f64,
    /// Per-attribute probability of replacing the label with another class.
    pub label_noise_rates: [f64; 3],
    pub class_distribution: ClassDistribution,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_examples: 2000,
            span_label_fraction: 1.0,
            multi_medication_fraction: 0.77,
            label_noise_rates: [0.22, 0.36, 0.15],
            class_distribution: ClassDistribution::Table2,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} must be in [0, 1], got {x}")))
            }
        };
        frac("span_label_fraction", self.span_label_fraction)?;
        frac("multi_medication_fraction", self.multi_medication_fraction)?;
        for (a, &r) in ATTRIBUTES.iter().zip(&self.label_noise_rates) {
            frac(&format!("{a} noise rate"), r)?;
        }
        Ok(())
    }
}

pub const MEDICATION_NAMES: &[&str] = &[
    "zorvex",
    "lumitrin",
    "caldoxa",
    "veltrazine",
    "pellaquin",
    "morbanil",
    "trelafen",
    "oxivane",
    "quenzor",
    "dapraxil",
    "sulvanta",
    "renotide",
    "kalmeprine",
    "fostiva",
    "brelumab",
    "nexacort",
    "zorvex xr",
    "lumitrin forte",
    "caldoxa plus",
    "pellaquin extended release",
    "velnor hydro chloro tabs xr",
];

/// Phrases for classes the lexicon leaves empty, other than None.
const SUPPLEMENTARY: &[(Attribute, &str, &[&str])] = &[
    (Attribute::Frequency, "Daily", &["once a day", "every day", "daily"]),
    (Attribute::Frequency, "Other", &["every other day", "as needed", "every two weeks"]),
    (Attribute::Route, "Inhaler", &["inhaler", "puffer", "two puffs"]),
    (Attribute::Route, "Other", &["suppository", "lozenge", "chewable"]),
    (Attribute::Change, "Other", &["switch", "swap", "alternate"]),
];

const FILLERS: &[&str] = &[
    "how have you been feeling lately",
    "my back has been sore for a while",
    "okay",
    "that sounds good",
    "do you have any questions",
    "i see",
    "thank you doctor",
    "we can check your blood work next visit",
    "how is your sleep",
    "not too bad honestly",
    "any chest pain or shortness of breath",
    "no nothing like that",
    "your blood pressure looks better",
    "she has been a bit tired",
    "alright let me write that down",
    "is the pharmacy still the same one",
    "yes the one near the house",
    "good good",
    "we will see you in three months",
    "any side effects so far",
];

const CHANGE_TEMPLATES: &[&str] = &[
    "i want you to {C} {M}",
    "we will {C} {M} today",
    "let us {C} {M}",
    "so the plan is to {C} {M}",
];

const MENTION_TEMPLATES: &[&str] = &["what about {M}", "and {M}", "you are using {M}", "{M} was on the list"];

const FREQUENCY_TEMPLATES: &[&str] = &["use it {F}", "{F} should be fine", "so that is {F}", "you can use it {F}"];

const ROUTE_TEMPLATES: &[&str] = &["it is the {R}", "you get the {R}", "the {R} form", "it comes as {R}"];

const COMBINED_TEMPLATES: &[&str] = &["it is the {R} and you use it {F}", "the {R} {F}", "{F} with the {R}"];

/// Candidate surface phrases for a class; empty for None.
pub fn class_phrases(a: Attribute, class: usize, lex: &Lexicon) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = lex.phrases(a, class).to_vec();
    if out.is_empty() {
        for &(sa, name, phrases) in SUPPLEMENTARY {
            if sa == a && a.class_id(name).ok() == Some(class) {
                out.extend(phrases.iter().map(|p| words(p)));
            }
        }
    }
    out
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Every template and filler sentence, with slot markers left in place.
pub fn carrier_sentences() -> Vec<&'static str> {
    FILLERS
        .iter()
        .chain(MENTION_TEMPLATES)
        .chain(CHANGE_TEMPLATES)
        .chain(FREQUENCY_TEMPLATES)
        .chain(ROUTE_TEMPLATES)
        .chain(COMBINED_TEMPLATES)
        .copied()
        .collect()
}

/// Utterances under construction and their running token count.
struct Builder {
    utterances: Vec<Utterance>,
    len: usize,
}

struct Slots<'a> {
    med: &'a [String],
    phrases: [Option<&'a [String]>; 3],
}

struct Filled {
    med_start: Option<usize>,
    spans: [Option<(usize, usize)>; 3],
}

impl Builder {
    fn push(&mut self, speaker: Speaker, template: &str, slots: &Slots<'_>) -> Filled {
        let mut tokens = Vec::new();
        let mut filled = Filled {
            med_start: None,
            spans: [None; 3],
        };
        for w in template.split_whitespace() {
            let start = self.len + tokens.len();
            let slot = match w {
                "{M}" => {
                    filled.med_start = Some(start);
                    Some(slots.med)
                }
                "{F}" | "{R}" | "{C}" => {
                    let a = match w {
                        "{F}" => Attribute::Frequency,
                        "{R}" => Attribute::Route,
                        _ => Attribute::Change,
                    };
                    let p = slots.phrases[a.index()].expect("template slot has a phrase");
                    filled.spans[a.index()] = Some((start, start + p.len()));
                    Some(p)
                }
                _ => None,
            };
            match slot {
                Some(words) => tokens.extend(words.iter().cloned()),
                None => tokens.push(w.to_string()),
            }
        }
        self.len += tokens.len();
        self.utterances.push(Utterance { speaker, tokens });
        filled
    }
}

fn sample_class(a: Attribute, dist: ClassDistribution, rng: &mut ChaCha8Rng) -> usize {
    match dist {
        ClassDistribution::Uniform => rng.random_range(0..a.num_classes()),
        ClassDistribution::Table2 => {
            let p = a.corpus_proportions();
            let total: f64 = p.iter().sum();
            let mut u = rng.random_range(0.0..total);
            for (i, &w) in p.iter().enumerate() {
                if u < w {
                    return i;
                }
                u -= w;
            }
            p.len() - 1
        }
    }
}

fn pick<'a, T>(xs: &'a [T], rng: &mut ChaCha8Rng) -> &'a T {
    xs.choose(rng).expect("non-empty choice")
}

/// Utterances realizing one medication's attributes. Returns the span of the
/// mention and of each realized phrase.
fn medication_block(
    b: &mut Builder,
    med: &[String],
    phrases: [Option<&[String]>; 3],
    rng: &mut ChaCha8Rng,
) -> (Span, [Option<Span>; 3]) {
    let slots = Slots { med, phrases };
    let mut spans = [None; 3];
    let first = if phrases[Attribute::Change.index()].is_some() {
        b.push(Speaker::Doctor, pick(CHANGE_TEMPLATES, rng), &slots)
    } else {
        b.push(Speaker::Doctor, pick(MENTION_TEMPLATES, rng), &slots)
    };
    let start = first.med_start.expect("block opens with the mention");
    spans[Attribute::Change.index()] = first.spans[Attribute::Change.index()];
    let (f, r) = (Attribute::Frequency.index(), Attribute::Route.index());
    let speaker = *pick(&[Speaker::Doctor, Speaker::Doctor, Speaker::Nurse], rng);
    let filled: Vec<Filled> = match (phrases[f].is_some(), phrases[r].is_some()) {
        (true, true) if rng.random_bool(0.5) => vec![b.push(speaker, pick(COMBINED_TEMPLATES, rng), &slots)],
        (fp, rp) => {
            let mut order = Vec::new();
            if fp {
                order.push(FREQUENCY_TEMPLATES);
            }
            if rp {
                order.push(ROUTE_TEMPLATES);
            }
            order.shuffle(rng);
            order.into_iter().map(|t| b.push(speaker, pick(t, rng), &slots)).collect()
        }
    };
    for fl in filled {
        for a in [f, r] {
            if fl.spans[a].is_some() {
                spans[a] = fl.spans[a];
            }
        }
    }
    ((start, start + med.len()), spans)
}

fn filler(b: &mut Builder, rng: &mut ChaCha8Rng) {
    let speaker = *pick(&[Speaker::Patient, Speaker::Doctor, Speaker::Caregiver, Speaker::Patient], rng);
    b.push(
        speaker,
        pick(FILLERS, rng),
        &Slots {
            med: &[],
            phrases: [None; 3],
        },
    );
}

fn generate_one(
    index: usize,
    cfg: &GeneratorConfig,
    lex: &Lexicon,
    rng: &mut ChaCha8Rng,
    noise_rng: &mut ChaCha8Rng,
) -> DataPoint {
    let classes = ATTRIBUTES.map(|a| sample_class(a, cfg.class_distribution, rng));
    let meds: Vec<Vec<String>> = MEDICATION_NAMES.iter().map(|m| words(m)).collect();
    let multi = rng.random_bool(cfg.multi_medication_fraction);
    let n_distractors = if multi { rng.random_range(1..=2) } else { 0 };
    let mut chosen: Vec<usize> = (0..meds.len()).collect();
    chosen.shuffle(rng);
    // Distinct names that are not prefixes of one another.
    let mut names: Vec<usize> = Vec::new();
    for &i in &chosen {
        let root = &meds[i][0];
        if names.iter().all(|&j| &meds[j][0] != root) {
            names.push(i);
        }
        if names.len() == 1 + n_distractors {
            break;
        }
    }

    let target_phrases: [Option<Vec<String>>; 3] =
        ATTRIBUTES.map(|a| class_phrases(a, classes[a.index()], lex).choose(rng).cloned());
    let distractor_phrases: Vec<[Option<Vec<String>>; 3]> = (0..n_distractors)
        .map(|_| {
            ATTRIBUTES.map(|a| {
                let none = a.none_class();
                let others: Vec<usize> = (0..a.num_classes())
                    .filter(|&c| c != none && c != classes[a.index()])
                    .collect();
                let c = *pick(&others, rng);
                class_phrases(a, c, lex).choose(rng).cloned()
            })
        })
        .collect();

    let mut blocks: Vec<Option<usize>> = std::iter::once(None).chain((0..n_distractors).map(Some)).collect();
    blocks.shuffle(rng);

    let mut b = Builder {
        utterances: Vec::new(),
        len: 0,
    };
    let mut med_span = (0, 0);
    let mut spans = [None; 3];
    for _ in 0..rng.random_range(1..=2) {
        filler(&mut b, rng);
    }
    for block in blocks {
        match block {
            None => {
                let ph = [0, 1, 2].map(|k| target_phrases[k].as_deref());
                let (m, s) = medication_block(&mut b, &meds[names[0]], ph, rng);
                med_span = m;
                spans = s;
            }
            Some(d) => {
                let ph = [0, 1, 2].map(|k| distractor_phrases[d][k].as_deref());
                medication_block(&mut b, &meds[names[1 + d]], ph, rng);
            }
        }
        if rng.random_bool(0.5) {
            filler(&mut b, rng);
        }
    }
    if rng.random_bool(0.5) {
        filler(&mut b, rng);
    }
    while b.utterances.len() < 3 {
        filler(&mut b, rng);
    }

    let mut labels = classes;
    for a in ATTRIBUTES {
        let flip: f64 = noise_rng.random();
        let shift = noise_rng.random_range(1..a.num_classes());
        if flip < cfg.label_noise_rates[a.index()] {
            labels[a.index()] = (classes[a.index()] + shift) % a.num_classes();
        }
    }
    let span_lists = spans.map(|s| Some(s.into_iter().collect::<Vec<_>>()));
    let medication = Medication {
        tokens: meds[names[0]].clone(),
        start: med_span.0,
        end: med_span.1,
    };
    DataPoint::new(format!("ex{index:06}"), b.utterances, medication, labels, span_lists)
        .expect("generated examples are valid")
}

/// Deterministic under `cfg.seed`. The first `round(span_label_fraction * n)`
/// examples of a seeded shuffle keep their spans.
pub fn generate(cfg: &GeneratorConfig) -> Result<Vec<DataPoint>> {
    generate_with_lexicon(cfg, &Lexicon::default_lexicon())
}

pub fn generate_with_lexicon(cfg: &GeneratorConfig, lex: &Lexicon) -> Result<Vec<DataPoint>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // separate stream so the text does not depend on the noise rates
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(1);
    let mut data: Vec<DataPoint> = (0..cfg.n_examples)
        .map(|i| generate_one(i, cfg, lex, &mut rng, &mut noise_rng))
        .collect();
    let keep = (cfg.span_label_fraction * cfg.n_examples as f64).round() as usize;
    keep_spans(&mut data, keep, &mut rng);
    Ok(data)
}

/// Keeps span labels on `keep` seeded-random examples and drops the rest.
pub fn keep_spans(data: &mut [DataPoint], keep: usize, rng: &mut ChaCha8Rng) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    for &i in order.iter().skip(keep) {
        data[i] = data[i].without_spans();
    }
}

/// Number of distinct medications mentioned in a generated example.
pub fn medication_mentions(dp: &DataPoint) -> usize {
    let roots: std::collections::BTreeSet<&str> = MEDICATION_NAMES
        .iter()
        .map(|m| m.split_whitespace().next().unwrap_or(m))
        .collect();
    dp.tokens().iter().filter(|t| roots.contains(t.as_str())).count()
}
