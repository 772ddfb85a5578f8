//! Losses, optimizers, the training loop and threshold tuning.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Attribute, DataPoint, ATTRIBUTES};
use crate::error::{Error, Result};
use crate::metrics::f1_from_counts;
use crate::model::{Encoded, ExtractionThresholds, Model};
use crate::params::{Binder, ParamStore};
use crate::projections::{ProjectionConfig, ProjectionKind};
use crate::tensor_core::{Graph, Tensor, Var};

/// Floor applied to probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// `w_c = total / (n * max(count_c, 1))`, rescaled to mean 1.
pub fn class_weights(counts: &[usize]) -> Result<Vec<f64>> {
    let total: usize = counts.iter().sum();
    if counts.is_empty() || total == 0 {
        return Err(Error::Invalid("class weights need at least one labeled example".into()));
    }
    let n = counts.len() as f64;
    let raw: Vec<f64> = counts
        .iter()
        .map(|&c| total as f64 / (n * c.max(1) as f64))
        .collect();
    let mean = raw.iter().sum::<f64>() / n;
    Ok(raw.iter().map(|w| w / mean).collect())
}

/// Per-attribute class weights, indexed by [`Attribute::index`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [Vec<f64>; 3]);

impl ClassWeights {
    pub fn uniform() -> Self {
        Self(ATTRIBUTES.map(|a| vec![1.0; a.num_classes()]))
    }

    pub fn from_dataset(data: &[DataPoint]) -> Result<Self> {
        let mut out = Vec::with_capacity(3);
        for a in ATTRIBUTES {
            let mut counts = vec![0; a.num_classes()];
            for d in data {
                counts[d.label(a)] += 1;
            }
            out.push(class_weights(&counts)?);
        }
        Ok(Self([out[0].clone(), out[1].clone(), out[2].clone()]))
    }
}

/// Gold class ids and span masks of one example.
#[derive(Clone, Debug, PartialEq)]
pub struct Target {
    pub labels: [usize; 3],
    /// `None` when the attribute has no spans or its gold mask is all zero.
    pub gold: [Option<Vec<bool>>; 3],
}

impl Target {
    pub fn from_point(dp: &DataPoint) -> Self {
        Self {
            labels: dp.labels,
            gold: ATTRIBUTES.map(|a| dp.gold_mask(a).filter(|m| m.iter().any(|&x| x))),
        }
    }
}

/// `sum_k -w_k[y_k] log max(p_k[y_k], floor)` on the graph.
pub fn classification_loss(g: &mut Graph, probs: &[Var; 3], labels: &[usize; 3], weights: &ClassWeights) -> Result<Var> {
    let mut terms = Vec::with_capacity(3);
    for a in ATTRIBUTES {
        let k = a.index();
        let n = g.value(probs[k]).numel();
        if labels[k] >= n || weights.0[k].len() != n {
            return Err(Error::Invalid(format!(
                "{a}: label {} / {} weights for {n} classes",
                labels[k],
                weights.0[k].len()
            )));
        }
        let mut coef = vec![0.0; n];
        coef[labels[k]] = -weights.0[k][labels[k]];
        let logp = g.clamp_min(probs[k], PROB_FLOOR);
        let logp = g.log(logp);
        let c = g.constant(Tensor::vector(coef));
        let t = g.mul(logp, c)?;
        terms.push(g.sum(t));
    }
    let s = g.add(terms[0], terms[1])?;
    g.add(s, terms[2])
}

/// `sum_k KL(e_k / |e_k| || a_k)` over attributes with a gold mask, with the
/// attention floored inside the logarithm. `None` when no attribute has one.
pub fn identification_loss(g: &mut Graph, weights: &[Var; 3], gold: &[Option<Vec<bool>>; 3]) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for a in ATTRIBUTES {
        let k = a.index();
        let Some(mask) = &gold[k] else { continue };
        let l = g.value(weights[k]).numel();
        if mask.len() != l {
            return Err(Error::Shape {
                op: "identification_loss",
                detail: format!("{a}: mask {} vs {l} weights", mask.len()),
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            continue;
        }
        let target = 1.0 / count as f64;
        // sum_j a_j log a_j - sum_j a_j log w_j, the first part constant
        let entropy_part = target.ln();
        let coef: Vec<f64> = mask.iter().map(|&m| if m { -target } else { 0.0 }).collect();
        let logw = g.clamp_min(weights[k], PROB_FLOOR);
        let logw = g.log(logw);
        let c = g.constant(Tensor::vector(coef));
        let t = g.mul(logw, c)?;
        let cross = g.sum(t);
        let shift = g.constant(Tensor::scalar(entropy_part));
        let kl = g.add(cross, shift)?;
        total = Some(match total {
            Some(prev) => g.add(prev, kl)?,
            None => kl,
        });
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state over every parameter of a store.
#[derive(Clone, Debug)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, lr: f64, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self {
            cfg,
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies the accumulated gradients, then clears them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let lr = self.lr;
        for (i, p) in store.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let values = p.value.data_mut();
            match self.cfg {
                OptimizerConfig::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(self.step);
                    let c2 = 1.0 - beta2.powi(self.step);
                    for j in 0..values.len() {
                        let gj = p.grad[j];
                        m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                        v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        values[j] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
                OptimizerConfig::Sgd { momentum } => {
                    for j in 0..values.len() {
                        m[j] = momentum * m[j] + p.grad[j];
                        values[j] -= lr * m[j];
                    }
                }
            }
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusedmaxStar {
    pub enabled: bool,
    /// Share of the final epochs trained with fusedmax.
    pub swap_fraction: f64,
}

impl Default for FusedmaxStar {
    fn default() -> Self {
        Self {
            enabled: false,
            swap_fraction: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda_id: f64,
    pub optimizer: OptimizerConfig,
    pub fusedmax_star: FusedmaxStar,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            learning_rate: 1e-3,
            lambda_id: 1.0,
            optimizer: OptimizerConfig::default(),
            fusedmax_star: FusedmaxStar::default(),
            seed: 0,
            batch_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fs = self.fusedmax_star.swap_fraction;
        if !(fs > 0.0 && fs < 1.0) {
            return Err(Error::Invalid(format!("swap_fraction must be in (0, 1), got {fs}")));
        }
        if self.lambda_id.is_nan() || self.lambda_id < 0.0 {
            return Err(Error::Invalid(format!("lambda_id must be >= 0, got {}", self.lambda_id)));
        }
        if self.batch_size == 0 || self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return Err(Error::Invalid("batch_size must be > 0 and learning_rate >= 0".into()));
        }
        Ok(())
    }

    /// 0-based epoch at which fusedmax replaces softmax, if enabled.
    pub fn swap_epoch(&self) -> Option<usize> {
        self.fusedmax_star
            .enabled
            .then(|| ((1.0 - self.fusedmax_star.swap_fraction) * self.epochs as f64 - 1e-9).ceil() as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-example classification loss.
    pub loss_c: f64,
    /// Mean per-example identification loss.
    pub loss_i: f64,
    pub projection: ProjectionKind,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

/// Loss of one example under the model's current projection: `(L, L_c, L_i)`.
pub fn example_loss(
    model: &Model,
    g: &mut Graph,
    b: &mut Binder,
    x: &Encoded,
    target: &Target,
    weights: &ClassWeights,
    lambda_id: f64,
) -> Result<(Var, f64, f64)> {
    let f = model.forward(g, b, x, &model.cfg.projection)?;
    let lc = classification_loss(g, &f.probs, &target.labels, weights)?;
    let lc_value = g.value(lc).item();
    match identification_loss(g, &f.weights, &target.gold)? {
        Some(li) => {
            let li_value = g.value(li).item();
            let scaled = g.scale(li, lambda_id);
            Ok((g.add(lc, scaled)?, lc_value, li_value))
        }
        None => Ok((lc, lc_value, 0.0)),
    }
}

/// One optimizer step on a batch. Returns summed `(L_c, L_i)`; errors with
/// `NonFinite` if any example loss is not finite.
pub fn train_batch(
    model: &mut Model,
    optimizer: &mut Optimizer,
    batch: &[(&Encoded, &Target)],
    weights: &ClassWeights,
    lambda_id: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    let (mut sum_c, mut sum_i) = (0.0, 0.0);
    let scale = 1.0 / batch.len() as f64;
    model.store.zero_grad();
    for (x, t) in batch {
        let mut g = Graph::new(true, rng.next_u64());
        let mut b = Binder::new(&model.store);
        let (loss, lc, li) = example_loss(model, &mut g, &mut b, x, t, weights, lambda_id)?;
        if !g.value(loss).item().is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        g.backward(loss)?;
        b.accumulate(&g, &mut model.store, scale);
        sum_c += lc;
        sum_i += li;
    }
    optimizer.step(&mut model.store);
    Ok((sum_c, sum_i))
}

/// Trains in place and returns the per-epoch history. `on_epoch` sees each
/// record as it is produced.
pub fn train(
    model: &mut Model,
    data: &[DataPoint],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    let weights = ClassWeights::from_dataset(data)?;
    let encoded: Vec<Encoded> = data.iter().map(|d| model.encode(d)).collect::<Result<_>>()?;
    let targets: Vec<Target> = data.iter().map(Target::from_point).collect();
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, &model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        if cfg.swap_epoch() == Some(epoch) {
            let p = ProjectionConfig {
                kind: ProjectionKind::Fusedmax,
                ..model.cfg.projection
            };
            model.set_projection(p);
        }
        order.shuffle(&mut rng);
        let (mut sum_c, mut sum_i) = (0.0, 0.0);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&Encoded, &Target)> = chunk.iter().map(|&i| (&encoded[i], &targets[i])).collect();
            let (c, i) = match train_batch(model, &mut optimizer, &batch, &weights, cfg.lambda_id, &mut rng) {
                Err(Error::NonFinite(_)) => {
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        batch: bi + 1,
                    })
                }
                other => other?,
            };
            if !model.store.iter().all(|p| p.value.is_finite()) {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: bi + 1,
                });
            }
            sum_c += c;
            sum_i += i;
        }
        let rec = EpochRecord {
            epoch: epoch + 1,
            loss_c: sum_c / data.len() as f64,
            loss_i: sum_i / data.len() as f64,
            projection: model.cfg.projection.kind,
        };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok(history)
}

/// Threshold maximizing token F1 of `weights > threshold` over the given
/// `(weights, gold)` pairs. Candidates are 0 and the midpoints between
/// consecutive distinct weights; ties go to the smaller threshold.
pub fn best_threshold(pairs: &[(Vec<f64>, Vec<bool>)]) -> f64 {
    let mut tokens: Vec<(f64, bool)> = pairs
        .iter()
        .flat_map(|(w, g)| w.iter().copied().zip(g.iter().copied()))
        .collect();
    tokens.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_gold = tokens.iter().filter(|t| t.1).count();
    // gold_prefix[k] = gold tokens among the k largest weights
    let mut gold_prefix = vec![0usize; tokens.len() + 1];
    for (i, t) in tokens.iter().enumerate() {
        gold_prefix[i + 1] = gold_prefix[i] + usize::from(t.1);
    }
    let mut distinct: Vec<f64> = tokens.iter().map(|t| t.0).collect();
    distinct.dedup();
    distinct.reverse();
    let mut candidates = vec![0.0];
    candidates.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).filter(|&m| m > 0.0));
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &c in &candidates {
        let k = tokens.partition_point(|t| t.0 > c);
        let tp = gold_prefix[k];
        let f = f1_from_counts(tp, k - tp, total_gold - tp);
        if f > best.0 {
            best = (f, c);
        }
    }
    best.1
}

/// Per-attribute thresholds tuned on span-labeled validation examples. Under
/// fusedmax the thresholds are 0.
pub fn tune_thresholds(model: &Model, validation: &[DataPoint]) -> Result<ExtractionThresholds> {
    if validation.is_empty() {
        return Err(Error::Invalid("threshold tuning needs a validation set".into()));
    }
    if model.cfg.projection.kind == ProjectionKind::Fusedmax {
        return Ok(ExtractionThresholds::default());
    }
    let labeled: Vec<&DataPoint> = validation.iter().filter(|d| d.has_spans()).collect();
    if labeled.is_empty() {
        return Err(Error::Invalid("validation set has no span labels".into()));
    }
    let mut pairs: [Vec<(Vec<f64>, Vec<bool>)>; 3] = Default::default();
    for dp in labeled {
        let pred = model.predict_point(dp)?;
        for a in ATTRIBUTES {
            if let Some(gold) = dp.gold_mask(a) {
                pairs[a.index()].push((pred.weights[a.index()].clone(), gold));
            }
        }
    }
    Ok(ExtractionThresholds(
        [0, 1, 2].map(|k| if pairs[k].is_empty() { 0.0 } else { best_threshold(&pairs[k]) }),
    ))
}

/// Label counts of one attribute.
pub fn label_counts(data: &[DataPoint], a: Attribute) -> Vec<usize> {
    let mut counts = vec![0; a.num_classes()];
    for d in data {
        counts[d.label(a)] += 1;
    }
    counts
}
