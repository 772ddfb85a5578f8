use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Frequency,
    Route,
    Change,
}

pub const ATTRIBUTES: [Attribute; 3] = [Attribute::Frequency, Attribute::Route, Attribute::Change];

const FREQUENCY_CLASSES: [&str; 12] = [
    "Daily",
    "Every morning",
    "At Bedtime",
    "Twice a day",
    "Three times a day",
    "Every six hours",
    "Every week",
    "Twice a week",
    "Three times a week",
    "Every month",
    "Other",
    "None",
];

const ROUTE_CLASSES: [&str; 10] = [
    "Pill",
    "Injection",
    "Topical cream",
    "Nasal spray",
    "Medicated patch",
    "Ophthalmic solution",
    "Inhaler",
    "Oral solution",
    "Other",
    "None",
];

const CHANGE_CLASSES: [&str; 6] = ["Take", "Stop", "Increase", "Decrease", "None", "Other"];

/// Class proportions (percent) of the clinical corpus, in class-id order.
const FREQUENCY_PROPORTIONS: [f64; 12] = [8.0, 0.9, 1.7, 6.5, 1.6, 0.2, 0.9, 0.2, 0.3, 0.3, 1.5, 77.9];
const ROUTE_PROPORTIONS: [f64; 10] = [6.8, 3.5, 1.0, 0.5, 0.2, 0.2, 0.2, 0.1, 2.1, 85.5];
const CHANGE_PROPORTIONS: [f64; 6] = [83.1, 6.5, 5.2, 2.0, 1.6, 1.4];

impl Attribute {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Frequency => "frequency",
            Attribute::Route => "route",
            Attribute::Change => "change",
        }
    }

    pub fn classes(self) -> &'static [&'static str] {
        match self {
            Attribute::Frequency => &FREQUENCY_CLASSES,
            Attribute::Route => &ROUTE_CLASSES,
            Attribute::Change => &CHANGE_CLASSES,
        }
    }

    pub fn num_classes(self) -> usize {
        self.classes().len()
    }

    pub fn corpus_proportions(self) -> &'static [f64] {
        match self {
            Attribute::Frequency => &FREQUENCY_PROPORTIONS,
            Attribute::Route => &ROUTE_PROPORTIONS,
            Attribute::Change => &CHANGE_PROPORTIONS,
        }
    }

    pub fn class_id(self, name: &str) -> Result<usize> {
        self.classes()
            .iter()
            .position(|c| c.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Invalid(format!("unknown {} class `{name}`", self.name())))
    }

    pub fn class_name(self, id: usize) -> &'static str {
        self.classes()[id]
    }

    /// Id of the class meaning "attribute not mentioned".
    pub fn none_class(self) -> usize {
        self.class_id("None").expect("every attribute has a None class")
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frequency" | "freq" => Ok(Attribute::Frequency),
            "route" => Ok(Attribute::Route),
            "change" => Ok(Attribute::Change),
            other => Err(Error::Invalid(format!("unknown attribute `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "DR")]
    Doctor,
    #[serde(rename = "PT")]
    Patient,
    #[serde(rename = "CG")]
    Caregiver,
    #[serde(rename = "RN")]
    Nurse,
}

pub const SPEAKERS: [Speaker; 4] = [Speaker::Doctor, Speaker::Patient, Speaker::Caregiver, Speaker::Nurse];

impl Speaker {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        SPEAKERS
            .get(i)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("unknown speaker id {i}")))
    }

    pub fn tag(self) -> &'static str {
        match self {
            Speaker::Doctor => "DR",
            Speaker::Patient => "PT",
            Speaker::Caregiver => "CG",
            Speaker::Nurse => "RN",
        }
    }
}
