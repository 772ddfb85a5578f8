//! Identify, classify, extract.
//!
//! Token keys are frozen word embeddings with a trainable speaker vector
//! appended. The query is the mean embedding of the medication mention. Each
//! attribute has its own scorer whose scores are projected onto the simplex;
//! the resulting weights pool the keys into a context vector, which is the
//! only path from the text to that attribute's classifier. Thresholding the
//! weights gives the extracted span.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Attribute, DataPoint, ATTRIBUTES, SPEAKERS};
use crate::embedding::{Embedder, EmbeddingSource};
use crate::error::{Error, Result};
use crate::params::{Binder, Linear, ParamId, ParamStore};
use crate::projections::{project, ProjectionConfig, ProjectionKind};
use crate::scorers::{Scorer, ScorerKind, TaScoreConfig};
use crate::tensor_core::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding: EmbeddingSource,
    pub max_seq_len: usize,
    pub speaker_dim: usize,
    pub scorer: ScorerKind,
    pub tascore: TaScoreConfig,
    pub classifier_hidden: usize,
    pub classifier_dropout: f64,
    pub projection: ProjectionConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingSource::default(),
            max_seq_len: 256,
            speaker_dim: 2,
            scorer: ScorerKind::Tascore,
            tascore: TaScoreConfig::default(),
            classifier_hidden: 512,
            classifier_dropout: 0.2,
            projection: ProjectionConfig::default(),
            seed: 0,
        }
    }
}

/// Per-attribute extraction thresholds, indexed by [`Attribute::index`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionThresholds(pub [f64; 3]);

impl ExtractionThresholds {
    pub fn get(&self, a: Attribute) -> f64 {
        self.0[a.index()]
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().all(|t| t.is_finite() && *t >= 0.0) {
            Ok(())
        } else {
            Err(Error::Invalid(format!("thresholds must be finite and >= 0, got {:?}", self.0)))
        }
    }
}

/// Model inputs that do not depend on parameters, computed once per example.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// `[l, dim]` frozen token embeddings.
    pub embeddings: Tensor,
    /// `[1, dim]` pooled medication embedding.
    pub query: Tensor,
    pub speakers: Vec<usize>,
}

impl Encoded {
    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }
}

/// Mean of the rows of a `[k, dim]` matrix of medication-token embeddings.
pub fn pool_medication(rows: &Tensor) -> Result<Tensor> {
    let (k, dim) = rows.dims2("pool_medication")?;
    if k == 0 {
        return Err(Error::Invalid("medication span is empty".into()));
    }
    let mut out = vec![0.0; dim];
    for r in 0..k {
        out.iter_mut().zip(rows.row_slice(r)).for_each(|(o, x)| *o += x);
    }
    out.iter_mut().for_each(|o| *o /= k as f64);
    Ok(Tensor::row(out))
}

/// Token embeddings with each token's speaker vector appended: `[l, dim + s]`.
pub fn encode_text(g: &mut Graph, embeddings: Var, speakers: &[usize], speaker_table: Var) -> Result<Var> {
    let rows = g.value(speaker_table).shape()[0];
    if let Some(&bad) = speakers.iter().find(|&&s| s >= rows) {
        return Err(Error::Invalid(format!("unknown speaker id {bad}")));
    }
    let l = g.value(embeddings).shape()[0];
    if speakers.len() != l {
        return Err(Error::Shape {
            op: "encode_text",
            detail: format!("{l} tokens, {} speaker ids", speakers.len()),
        });
    }
    let spk = g.embedding_lookup(speaker_table, speakers)?;
    g.concat_cols(&[embeddings, spk])
}

/// `c = sum_j w_j K_j` as a `[1, width]` row.
pub fn context_vector(g: &mut Graph, weights: Var, keys: Var) -> Result<Var> {
    let l = g.value(weights).numel();
    let w = g.reshape(weights, vec![1, l])?;
    g.matmul(w, keys)
}

/// Strictly-above-threshold token mask.
pub fn extract_spans(weights: &[f64], threshold: f64) -> Vec<bool> {
    weights.iter().map(|&w| w > threshold).collect()
}

#[derive(Clone, Debug)]
struct Classifier {
    hidden: Linear,
    out: Linear,
}

/// Graph handles of one forward pass.
pub struct ForwardVars {
    pub embeddings: Var,
    pub keys: Var,
    pub scores: [Var; 3],
    pub weights: [Var; 3],
    pub logits: [Var; 3],
    /// Class probabilities, shape `[n_k]`.
    pub probs: [Var; 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub classes: [usize; 3],
    pub probs: [Vec<f64>; 3],
    pub scores: [Vec<f64>; 3],
    pub weights: [Vec<f64>; 3],
    pub masks: [Vec<bool>; 3],
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub thresholds: ExtractionThresholds,
    embedder: Embedder,
    speaker_table: ParamId,
    scorers: [Scorer; 3],
    classifiers: [Classifier; 3],
}

impl Model {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        let embedder = Embedder::from_source(&cfg.embedding)?;
        Self::with_embedder(cfg, embedder)
    }

    pub fn with_embedder(cfg: ModelConfig, embedder: Embedder) -> Result<Self> {
        cfg.projection.validate()?;
        if !(0.0..1.0).contains(&cfg.classifier_dropout) || !(0.0..1.0).contains(&cfg.tascore.dropout) {
            return Err(Error::Invalid("dropout must be in [0, 1)".into()));
        }
        if cfg.tascore.max_len < cfg.max_seq_len {
            return Err(Error::Invalid(format!(
                "tascore max_len {} below max_seq_len {}",
                cfg.tascore.max_len, cfg.max_seq_len
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let dim = embedder.dim();
        let key_dim = dim + cfg.speaker_dim;
        let speaker_table = store.add_normal("speaker", &[SPEAKERS.len(), cfg.speaker_dim], 0.1, &mut rng);
        let mut scorers = Vec::with_capacity(3);
        for a in ATTRIBUTES {
            scorers.push(Scorer::new(
                cfg.scorer,
                &mut store,
                &format!("{a}.scorer"),
                &cfg.tascore,
                dim,
                key_dim,
                &mut rng,
            )?);
        }
        let classifiers = ATTRIBUTES.map(|a| Classifier {
            hidden: Linear::new(
                &mut store,
                &format!("{a}.classifier.hidden"),
                key_dim,
                cfg.classifier_hidden,
                true,
                &mut rng,
            ),
            out: Linear::new(
                &mut store,
                &format!("{a}.classifier.out"),
                cfg.classifier_hidden,
                a.num_classes(),
                true,
                &mut rng,
            ),
        });
        Ok(Self {
            cfg,
            store,
            thresholds: ExtractionThresholds::default(),
            embedder,
            speaker_table,
            scorers: scorers.try_into().map_err(|_| Error::Invalid("scorers".into()))?,
            classifiers,
        })
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn speaker_table(&self) -> ParamId {
        self.speaker_table
    }

    pub fn scorer(&self, a: Attribute) -> &Scorer {
        &self.scorers[a.index()]
    }

    /// Parameter ids owned by an attribute's scorer and classifier.
    pub fn attribute_params(&self, a: Attribute) -> Vec<ParamId> {
        let prefix = format!("{a}.");
        self.store
            .ids()
            .filter(|&id| self.store.get(id).name.starts_with(&prefix))
            .collect()
    }

    pub fn encode(&self, dp: &DataPoint) -> Result<Encoded> {
        if dp.len() > self.cfg.max_seq_len {
            return Err(Error::Invalid(format!(
                "example `{}` has {} tokens, limit is {}",
                dp.id,
                dp.len(),
                self.cfg.max_seq_len
            )));
        }
        let embeddings = self.embedder.embed(dp)?;
        let (s, e) = (dp.medication.start, dp.medication.end);
        let dim = self.embedder.dim();
        let med = Tensor::matrix(e - s, dim, embeddings.data()[s * dim..e * dim].to_vec())?;
        Ok(Encoded {
            query: pool_medication(&med)?,
            embeddings,
            speakers: dp.speakers().iter().map(|s| s.index()).collect(),
        })
    }

    /// Class logits and probabilities of one attribute from its attention
    /// weights. The keys enter only through the context vector.
    pub fn classify(&self, g: &mut Graph, b: &mut Binder, a: Attribute, weights: Var, keys: Var) -> Result<(Var, Var)> {
        let c = context_vector(g, weights, keys)?;
        let cl = &self.classifiers[a.index()];
        let h = cl.hidden.forward(g, &self.store, b, c)?;
        let h = g.relu(h);
        let h = g.dropout(h, self.cfg.classifier_dropout)?;
        let logits = cl.out.forward(g, &self.store, b, h)?;
        let probs = g.softmax_rows(logits)?;
        let n = a.num_classes();
        Ok((g.reshape(logits, vec![n])?, g.reshape(probs, vec![n])?))
    }

    pub fn forward(&self, g: &mut Graph, b: &mut Binder, x: &Encoded, projection: &ProjectionConfig) -> Result<ForwardVars> {
        let embeddings = g.constant(x.embeddings.clone());
        let table = b.bind(g, &self.store, self.speaker_table);
        let keys = encode_text(g, embeddings, &x.speakers, table)?;
        let query = g.constant(x.query.clone());
        let mut scores = Vec::with_capacity(3);
        let mut weights = Vec::with_capacity(3);
        let mut logits = Vec::with_capacity(3);
        let mut probs = Vec::with_capacity(3);
        for a in ATTRIBUTES {
            let s = self.scorers[a.index()].score(g, &self.store, b, query, keys)?;
            let w = project(g, s, projection)?;
            let (lg, p) = self.classify(g, b, a, w, keys)?;
            scores.push(s);
            weights.push(w);
            logits.push(lg);
            probs.push(p);
        }
        let arr = |v: Vec<Var>| -> [Var; 3] { [v[0], v[1], v[2]] };
        Ok(ForwardVars {
            embeddings,
            keys,
            scores: arr(scores),
            weights: arr(weights),
            logits: arr(logits),
            probs: arr(probs),
        })
    }

    /// Evaluation-mode prediction with the model's projection and thresholds.
    pub fn predict(&self, x: &Encoded) -> Result<Prediction> {
        let mut g = Graph::inference();
        let mut b = Binder::new(&self.store);
        let f = self.forward(&mut g, &mut b, x, &self.cfg.projection)?;
        let values = |vs: [Var; 3]| vs.map(|v| g.value(v).data().to_vec());
        let probs = values(f.probs);
        let weights = values(f.weights);
        let scores = values(f.scores);
        let classes = [0, 1, 2].map(|k| argmax(&probs[k]));
        let masks = ATTRIBUTES.map(|a| extract_spans(&weights[a.index()], self.thresholds.get(a)));
        Ok(Prediction {
            classes,
            probs,
            scores,
            weights,
            masks,
        })
    }

    pub fn predict_point(&self, dp: &DataPoint) -> Result<Prediction> {
        self.predict(&self.encode(dp)?)
    }

    /// Switches the projection; moving to fusedmax zeroes the thresholds.
    pub fn set_projection(&mut self, projection: ProjectionConfig) {
        if projection.kind == ProjectionKind::Fusedmax {
            self.thresholds = ExtractionThresholds::default();
        }
        self.cfg.projection = projection;
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
