//! Frozen word embedders and the precomputed-embedding file format.
//!
//! File layout: a header line `dim=<d> count=<n>`, then for each example its
//! id on one line followed by one line per word holding `d` space-separated
//! decimal floats. A line is a vector line exactly when it parses as `d`
//! floats; ids that would parse that way are rejected on write.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::DataPoint;
use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbeddingSource {
    /// Seeded random vector per word, mixed by a fixed moving average over
    /// `window` neighbouring tokens (1 disables mixing).
    FrozenRandom { dim: usize, seed: u64, window: usize },
    PrecomputedFile { path: PathBuf },
}

impl Default for EmbeddingSource {
    fn default() -> Self {
        EmbeddingSource::FrozenRandom {
            dim: 64,
            seed: 0,
            window: 3,
        }
    }
}

/// FNV-1a, stable across platforms and runs.
pub fn word_hash(word: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in word.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// The raw (unmixed) frozen vector of a word, entries `N(0, 1)`.
pub fn random_word_vector(word: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(word_hash(word) ^ seed.rotate_left(17));
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Centered moving average over `window` rows, truncated at the edges.
pub fn local_average(rows: &[Vec<f64>], window: usize) -> Vec<Vec<f64>> {
    let half = window / 2;
    (0..rows.len())
        .map(|j| {
            let lo = j.saturating_sub(half);
            let hi = (j + half + 1).min(rows.len());
            let mut acc = vec![0.0; rows[j].len()];
            for r in &rows[lo..hi] {
                acc.iter_mut().zip(r).for_each(|(a, x)| *a += x);
            }
            let n = (hi - lo) as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        })
        .collect()
}

/// Word embedder with no trainable state.
#[derive(Clone, Debug)]
pub enum Embedder {
    FrozenRandom { dim: usize, seed: u64, window: usize },
    Precomputed { dim: usize, table: HashMap<String, Tensor> },
}

impl Embedder {
    pub fn from_source(source: &EmbeddingSource) -> Result<Self> {
        match source {
            &EmbeddingSource::FrozenRandom { dim, seed, window } => {
                if dim == 0 || window == 0 || window % 2 == 0 {
                    return Err(Error::Invalid(format!(
                        "frozen embedder needs dim > 0 and an odd window, got dim {dim} window {window}"
                    )));
                }
                Ok(Embedder::FrozenRandom { dim, seed, window })
            }
            EmbeddingSource::PrecomputedFile { path } => {
                let (dim, entries) = read_embeddings(path)?;
                Ok(Embedder::Precomputed {
                    dim,
                    table: entries.into_iter().collect(),
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Embedder::FrozenRandom { dim, .. } | Embedder::Precomputed { dim, .. } => *dim,
        }
    }

    /// `[l, dim]` embeddings of an example's tokens.
    pub fn embed(&self, dp: &DataPoint) -> Result<Tensor> {
        match self {
            Embedder::FrozenRandom { dim, seed, window } => Ok(embed_tokens(dp.tokens(), *dim, *seed, *window)),
            Embedder::Precomputed { dim, table } => {
                let t = table
                    .get(&dp.id)
                    .ok_or_else(|| Error::Invalid(format!("no precomputed embeddings for example `{}`", dp.id)))?;
                if t.shape() != [dp.len(), *dim] {
                    return Err(Error::Invalid(format!(
                        "example `{}`: precomputed embeddings have {} rows, text has {} tokens",
                        dp.id,
                        t.shape()[0],
                        dp.len()
                    )));
                }
                Ok(t.clone())
            }
        }
    }
}

pub fn embed_tokens<S: AsRef<str>>(tokens: &[S], dim: usize, seed: u64, window: usize) -> Tensor {
    let raw: Vec<Vec<f64>> = tokens.iter().map(|t| random_word_vector(t.as_ref(), dim, seed)).collect();
    let mixed = if window > 1 { local_average(&raw, window) } else { raw };
    Tensor::matrix(tokens.len(), dim, mixed.concat()).expect("shape")
}

fn parse_vector(line: &str, dim: usize) -> Option<Vec<f64>> {
    let v: Vec<f64> = line.split(' ').map(|x| x.parse::<f64>().ok()).collect::<Option<_>>()?;
    (v.len() == dim).then_some(v)
}

pub fn write_embeddings_to(mut w: impl Write, dim: usize, entries: &[(String, Tensor)]) -> Result<()> {
    writeln!(w, "dim={dim} count={}", entries.len())?;
    for (id, t) in entries {
        if id.is_empty() || id.contains('\n') || parse_vector(id, dim).is_some() {
            return Err(Error::Invalid(format!("embedding id `{id}` is not representable")));
        }
        if t.shape().len() != 2 || t.shape()[1] != dim {
            return Err(Error::Invalid(format!("embeddings for `{id}` have shape {:?}", t.shape())));
        }
        if !t.is_finite() {
            return Err(Error::NonFinite("embedding file"));
        }
        writeln!(w, "{id}")?;
        for r in 0..t.shape()[0] {
            let row: Vec<String> = t.row_slice(r).iter().map(f64::to_string).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

pub fn write_embeddings(path: impl AsRef<Path>, dim: usize, entries: &[(String, Tensor)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embeddings_to(&mut w, dim, entries)?;
    w.flush()?;
    Ok(())
}

pub fn read_embeddings_from(reader: impl BufRead) -> Result<(usize, Vec<(String, Tensor)>)> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })?;
    let header = header?;
    let bad_header = || Error::Parse {
        line: 1,
        msg: format!("expected `dim=<d> count=<n>`, got `{header}`"),
    };
    let (dim, count) = match header.split(' ').collect::<Vec<_>>()[..] {
        [d, c] => (
            d.strip_prefix("dim=").and_then(|x| x.parse::<usize>().ok()).ok_or_else(bad_header)?,
            c.strip_prefix("count=").and_then(|x| x.parse::<usize>().ok()).ok_or_else(bad_header)?,
        ),
        _ => return Err(bad_header()),
    };
    if dim == 0 {
        return Err(bad_header());
    }
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, line) in lines {
        let line = line?;
        match parse_vector(&line, dim) {
            Some(v) => match out.last_mut() {
                Some((_, data)) => data.extend(v),
                None => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "vector before any id line".into(),
                    })
                }
            },
            None if line.is_empty() => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "empty line".into(),
                })
            }
            None => out.push((line, Vec::new())),
        }
    }
    if out.len() != count {
        return Err(Error::Invalid(format!("embedding file declares {count} examples, found {}", out.len())));
    }
    let entries = out
        .into_iter()
        .map(|(id, data)| {
            let rows = data.len() / dim;
            Tensor::matrix(rows, dim, data).map(|t| (id, t))
        })
        .collect::<Result<_>>()?;
    Ok((dim, entries))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(usize, Vec<(String, Tensor)>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    read_embeddings_from(BufReader::new(file))
}
