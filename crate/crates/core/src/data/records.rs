use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{Attribute, Speaker, ATTRIBUTES};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub speaker: Speaker,
    pub tokens: Vec<String>,
}

/// Medication name and its `[start, end)` position in the flattened text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Medication {
    pub tokens: Vec<String>,
    pub start: usize,
    pub end: usize,
}

/// One conversation window with its medication, labels and optional spans.
#[derive(Clone, Debug, PartialEq)]
pub struct DataPoint {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub medication: Medication,
    /// Class ids indexed by [`Attribute::index`].
    pub labels: [usize; 3],
    /// `None` means the attribute carries no span annotation. `Some(vec![])`
    /// means it was annotated and nothing in the text realizes it.
    pub spans: [Option<Vec<(usize, usize)>>; 3],
    tokens: Vec<String>,
    speakers: Vec<Speaker>,
}

impl DataPoint {
    pub fn new(
        id: String,
        utterances: Vec<Utterance>,
        medication: Medication,
        labels: [usize; 3],
        spans: [Option<Vec<(usize, usize)>>; 3],
    ) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut speakers = Vec::new();
        for u in &utterances {
            tokens.extend(u.tokens.iter().cloned());
            speakers.extend(std::iter::repeat_n(u.speaker, u.tokens.len()));
        }
        let dp = Self {
            id,
            utterances,
            medication,
            labels,
            spans,
            tokens,
            speakers,
        };
        dp.validate()?;
        Ok(dp)
    }

    fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: String| Error::Invalid(format!("{}: {name}: {msg}", self.id));
        if self.utterances.is_empty() {
            return Err(field("utterances", "empty".into()));
        }
        if self.tokens.is_empty() {
            return Err(field("utterances", "no tokens".into()));
        }
        let n = self.tokens.len();
        let m = &self.medication;
        if m.start >= m.end || m.end > n {
            return Err(field("medication", format!("span [{}, {}) invalid for {n} tokens", m.start, m.end)));
        }
        if self.tokens[m.start..m.end] != m.tokens[..] {
            return Err(field("medication", "tokens do not match the text at start..end".into()));
        }
        for a in ATTRIBUTES {
            if self.labels[a.index()] >= a.num_classes() {
                return Err(field("labels", format!("{a} class id {} out of range", self.labels[a.index()])));
            }
            for &(s, e) in self.spans[a.index()].iter().flatten() {
                if s >= e || e > n {
                    return Err(field("spans", format!("{a} span [{s}, {e}) invalid for {n} tokens")));
                }
            }
        }
        Ok(())
    }

    /// Flattened word tokens.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Speaker of every flattened token.
    pub fn speakers(&self) -> &[Speaker] {
        &self.speakers
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn label(&self, a: Attribute) -> usize {
        self.labels[a.index()]
    }

    pub fn has_spans(&self) -> bool {
        self.spans.iter().any(Option::is_some)
    }

    /// Gold token mask for an attribute, if annotated.
    pub fn gold_mask(&self, a: Attribute) -> Option<Vec<bool>> {
        self.spans[a.index()].as_ref().map(|spans| {
            let mut mask = vec![false; self.len()];
            for &(s, e) in spans {
                mask[s..e].iter_mut().for_each(|m| *m = true);
            }
            mask
        })
    }

    /// Copy without span annotations.
    pub fn without_spans(&self) -> Self {
        Self {
            spans: [None, None, None],
            ..self.clone()
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelsRecord {
    frequency: String,
    route: String,
    change: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpansRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frequency: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    route: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    change: Option<Vec<[usize; 2]>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    utterances: Vec<Utterance>,
    medication: Medication,
    labels: LabelsRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    spans: Option<SpansRecord>,
}

fn to_pairs(v: &Option<Vec<(usize, usize)>>) -> Option<Vec<[usize; 2]>> {
    v.as_ref().map(|v| v.iter().map(|&(s, e)| [s, e]).collect())
}

fn from_pairs(v: Option<Vec<[usize; 2]>>) -> Option<Vec<(usize, usize)>> {
    v.map(|v| v.into_iter().map(|[s, e]| (s, e)).collect())
}

impl Record {
    fn from_point(dp: &DataPoint) -> Self {
        let name = |a: Attribute| a.class_name(dp.label(a)).to_string();
        Record {
            id: dp.id.clone(),
            utterances: dp.utterances.clone(),
            medication: dp.medication.clone(),
            labels: LabelsRecord {
                frequency: name(Attribute::Frequency),
                route: name(Attribute::Route),
                change: name(Attribute::Change),
            },
            spans: dp.has_spans().then(|| SpansRecord {
                frequency: to_pairs(&dp.spans[0]),
                route: to_pairs(&dp.spans[1]),
                change: to_pairs(&dp.spans[2]),
            }),
        }
    }

    fn into_point(self) -> Result<DataPoint> {
        let labels = [
            Attribute::Frequency.class_id(&self.labels.frequency)?,
            Attribute::Route.class_id(&self.labels.route)?,
            Attribute::Change.class_id(&self.labels.change)?,
        ];
        let spans = match self.spans {
            Some(s) => [from_pairs(s.frequency), from_pairs(s.route), from_pairs(s.change)],
            None => [None, None, None],
        };
        DataPoint::new(self.id, self.utterances, self.medication, labels, spans)
    }
}

/// One JSON record per line.
pub fn to_json_line(dp: &DataPoint) -> String {
    serde_json::to_string(&Record::from_point(dp)).expect("records always serialize")
}

pub fn from_json_line(line: &str) -> Result<DataPoint> {
    let rec: Record = serde_json::from_str(line).map_err(|e| Error::Invalid(e.to_string()))?;
    rec.into_point()
}

pub fn read_dataset_from(reader: impl BufRead) -> Result<Vec<DataPoint>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let dp = from_json_line(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: match e {
                Error::Invalid(m) => m,
                other => other.to_string(),
            },
        })?;
        out.push(dp);
    }
    Ok(out)
}

pub fn parse_dataset(path: impl AsRef<Path>) -> Result<Vec<DataPoint>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    read_dataset_from(BufReader::new(file))
}

pub fn write_dataset_to(mut w: impl Write, data: &[DataPoint]) -> Result<()> {
    for dp in data {
        writeln!(w, "{}", to_json_line(dp))?;
    }
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, data: &[DataPoint]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(&mut w, data)?;
    w.flush()?;
    Ok(())
}
