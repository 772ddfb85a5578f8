//! Attention scoring functions `S(q, K) -> R^l`.
//!
//! [`AdditiveScorer`] is the classic `v^T tanh(W_q q + W_k k_j)`.
//! [`TaScorer`] projects the query and keys to a shared width, adds sinusoidal
//! positions to the key slots, inserts a trainable separator between query
//! and keys, runs a small transformer encoder over the whole sequence and
//! reads one scalar per key slot through a two-layer head.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Binder, Linear, ParamId, ParamStore};
use crate::tensor_core::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Additive,
    Tascore,
}

impl std::fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScorerKind::Additive => "additive",
            ScorerKind::Tascore => "tascore",
        })
    }
}

impl std::str::FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(ScorerKind::Additive),
            "tascore" => Ok(ScorerKind::Tascore),
            other => Err(Error::Invalid(format!("unknown scorer `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaScoreConfig {
    pub d_model: usize,
    pub ff_hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub head_hidden: usize,
    pub max_len: usize,
}

impl Default for TaScoreConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            ff_hidden: 32,
            layers: 2,
            heads: 1,
            dropout: 0.2,
            head_hidden: 16,
            max_len: 256,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdditiveScorer {
    w_q: ParamId,
    w_k: ParamId,
    v: ParamId,
    query_dim: usize,
    key_dim: usize,
}

impl AdditiveScorer {
    /// `W_q: m x m`, `W_k: m x key_dim`, `v: m` with `m = query_dim`
    /// (stored transposed for row-vector products).
    pub fn new(store: &mut ParamStore, name: &str, query_dim: usize, key_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let m = query_dim;
        Self {
            w_q: store.add_glorot(format!("{name}.w_q"), m, m, rng),
            w_k: store.add_glorot(format!("{name}.w_k"), key_dim, m, rng),
            v: store.add_glorot(format!("{name}.v"), m, 1, rng),
            query_dim,
            key_dim,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w_q, self.w_k, self.v]
    }

    /// `q: [1, m]`, `keys: [l, key_dim]` -> scores `[l]`.
    pub fn score(&self, g: &mut Graph, store: &ParamStore, b: &mut Binder, q: Var, keys: Var) -> Result<Var> {
        check_dims(g, q, keys, self.query_dim, self.key_dim, "additive_score")?;
        let l = g.value(keys).shape()[0];
        let wq = b.bind(g, store, self.w_q);
        let wk = b.bind(g, store, self.w_k);
        let v = b.bind(g, store, self.v);
        let qm = g.matmul(q, wq)?;
        let km = g.matmul(keys, wk)?;
        let pre = g.add_row(km, qm)?;
        let h = g.tanh(pre);
        let s = g.matmul(h, v)?;
        g.reshape(s, vec![l])
    }
}

fn check_dims(g: &Graph, q: Var, keys: Var, qd: usize, kd: usize, op: &'static str) -> Result<()> {
    let qs = g.value(q).shape();
    let ks = g.value(keys).shape();
    if qs != [1, qd] || ks.len() != 2 || ks[1] != kd || ks[0] == 0 {
        return Err(Error::Shape {
            op,
            detail: format!("query {qs:?} (want [1, {qd}]), keys {ks:?} (want [l>0, {kd}])"),
        });
    }
    Ok(())
}

/// Interleaved sinusoidal table: even columns `sin`, odd columns `cos`.
pub fn sinusoidal_table(max_len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; max_len * d];
    for pos in 0..max_len {
        for i in (0..d).step_by(2) {
            let freq = 1.0 / 10000f64.powf(i as f64 / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + i] = angle.sin();
            if i + 1 < d {
                data[pos * d + i + 1] = angle.cos();
            }
        }
    }
    Tensor::matrix(max_len, d, data).expect("shape")
}

#[derive(Clone, Debug)]
struct AttentionHead {
    q: Linear,
    k: Linear,
    v: Linear,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    heads: Vec<AttentionHead>,
    out: Linear,
    ln1: (ParamId, ParamId),
    ff1: Linear,
    ff2: Linear,
    ln2: (ParamId, ParamId),
}

impl EncoderLayer {
    fn new(store: &mut ParamStore, name: &str, cfg: &TaScoreConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let dh = d / cfg.heads;
        let heads = (0..cfg.heads)
            .map(|h| AttentionHead {
                q: Linear::new(store, &format!("{name}.head{h}.q"), d, dh, true, rng),
                k: Linear::new(store, &format!("{name}.head{h}.k"), d, dh, true, rng),
                v: Linear::new(store, &format!("{name}.head{h}.v"), d, dh, true, rng),
            })
            .collect();
        Self {
            heads,
            out: Linear::new(store, &format!("{name}.out"), dh * cfg.heads, d, true, rng),
            ln1: (
                store.add_const(format!("{name}.ln1.gain"), &[d], 1.0),
                store.add_const(format!("{name}.ln1.bias"), &[d], 0.0),
            ),
            ff1: Linear::new(store, &format!("{name}.ff1"), d, cfg.ff_hidden, true, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), cfg.ff_hidden, d, true, rng),
            ln2: (
                store.add_const(format!("{name}.ln2.gain"), &[d], 1.0),
                store.add_const(format!("{name}.ln2.bias"), &[d], 0.0),
            ),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, b: &mut Binder, x: Var, dropout: f64) -> Result<Var> {
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let q = head.q.forward(g, store, b, x)?;
            let k = head.k.forward(g, store, b, x)?;
            let v = head.v.forward(g, store, b, x)?;
            let dh = g.value(q).shape()[1];
            let logits = g.matmul_nt(q, k)?;
            let logits = g.scale(logits, 1.0 / (dh as f64).sqrt());
            let attn = g.softmax_rows(logits)?;
            let attn = g.dropout(attn, dropout)?;
            outs.push(g.matmul(attn, v)?);
        }
        let heads = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs)? };
        let o = self.out.forward(g, store, b, heads)?;
        let o = g.dropout(o, dropout)?;
        let r = g.add(x, o)?;
        let (gain, bias) = (b.bind(g, store, self.ln1.0), b.bind(g, store, self.ln1.1));
        let x1 = g.layer_norm(r, gain, bias, 1e-5)?;
        let f = self.ff1.forward(g, store, b, x1)?;
        let f = g.relu(f);
        let f = self.ff2.forward(g, store, b, f)?;
        let f = g.dropout(f, dropout)?;
        let r = g.add(x1, f)?;
        let (gain, bias) = (b.bind(g, store, self.ln2.0), b.bind(g, store, self.ln2.1));
        g.layer_norm(r, gain, bias, 1e-5)
    }
}

#[derive(Clone, Debug)]
pub struct TaScorer {
    cfg: TaScoreConfig,
    query_lin: Linear,
    key_lin: Linear,
    separator: ParamId,
    positional: Tensor,
    layers: Vec<EncoderLayer>,
    head1: Linear,
    head2: Linear,
    query_dim: usize,
    key_dim: usize,
}

/// Parameter groups, for gradient-flow checks.
pub struct TaScoreGroups {
    pub query_linear: Vec<ParamId>,
    pub key_linear: Vec<ParamId>,
    pub separator: ParamId,
    pub encoder: Vec<ParamId>,
    pub head: Vec<ParamId>,
}

fn linear_ids(l: &Linear) -> Vec<ParamId> {
    std::iter::once(l.weight).chain(l.bias).collect()
}

impl TaScorer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: &TaScoreConfig,
        query_dim: usize,
        key_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if cfg.heads == 0 || !cfg.d_model.is_multiple_of(cfg.heads) {
            return Err(Error::Invalid(format!(
                "d_model {} not divisible by {} heads",
                cfg.d_model, cfg.heads
            )));
        }
        let d = cfg.d_model;
        Ok(Self {
            query_lin: Linear::new(store, &format!("{name}.query"), query_dim, d, true, rng),
            key_lin: Linear::new(store, &format!("{name}.key"), key_dim, d, true, rng),
            separator: store.add_normal(format!("{name}.separator"), &[1, d], 1.0 / (d as f64).sqrt(), rng),
            positional: sinusoidal_table(cfg.max_len, d),
            layers: (0..cfg.layers)
                .map(|i| EncoderLayer::new(store, &format!("{name}.layer{i}"), cfg, rng))
                .collect(),
            head1: Linear::new(store, &format!("{name}.head1"), d, cfg.head_hidden, true, rng),
            head2: Linear::new(store, &format!("{name}.head2"), cfg.head_hidden, 1, true, rng),
            cfg: cfg.clone(),
            query_dim,
            key_dim,
        })
    }

    pub fn config(&self) -> &TaScoreConfig {
        &self.cfg
    }

    pub fn groups(&self) -> TaScoreGroups {
        let mut encoder = Vec::new();
        for layer in &self.layers {
            for h in &layer.heads {
                for l in [&h.q, &h.k, &h.v] {
                    encoder.extend(linear_ids(l));
                }
            }
            for l in [&layer.out, &layer.ff1, &layer.ff2] {
                encoder.extend(linear_ids(l));
            }
            encoder.extend([layer.ln1.0, layer.ln1.1, layer.ln2.0, layer.ln2.1]);
        }
        TaScoreGroups {
            query_linear: linear_ids(&self.query_lin),
            key_linear: linear_ids(&self.key_lin),
            separator: self.separator,
            encoder,
            head: [linear_ids(&self.head1), linear_ids(&self.head2)].concat(),
        }
    }

    /// `q: [1, query_dim]`, `keys: [l, key_dim]` -> scores `[l]`. Positions
    /// `offset..offset + l` are added to the key slots only.
    pub fn score(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        b: &mut Binder,
        q: Var,
        keys: Var,
        position_offset: usize,
    ) -> Result<Var> {
        check_dims(g, q, keys, self.query_dim, self.key_dim, "tascore")?;
        let l = g.value(keys).shape()[0];
        if position_offset + l > self.cfg.max_len {
            return Err(Error::Invalid(format!(
                "tascore: {} key positions from offset {position_offset} exceed max_len {}",
                l, self.cfg.max_len
            )));
        }
        let d = self.cfg.d_model;
        let p = self.cfg.dropout;
        let qd = self.query_lin.forward(g, store, b, q)?;
        let kd = self.key_lin.forward(g, store, b, keys)?;
        let pos = Tensor::matrix(
            l,
            d,
            self.positional.data()[position_offset * d..(position_offset + l) * d].to_vec(),
        )?;
        let pos = g.constant(pos);
        let kd = g.add(kd, pos)?;
        let sep = b.bind(g, store, self.separator);
        let mut x = g.concat_rows(&[qd, sep, kd])?;
        x = g.dropout(x, p)?;
        for layer in &self.layers {
            x = layer.forward(g, store, b, x, p)?;
        }
        let key_out = g.slice_rows(x, 2, l + 2)?;
        let h = self.head1.forward(g, store, b, key_out)?;
        let h = g.relu(h);
        let h = g.dropout(h, p)?;
        let s = self.head2.forward(g, store, b, h)?;
        g.reshape(s, vec![l])
    }
}

/// One attribute's scorer.
#[derive(Clone, Debug)]
pub enum Scorer {
    Additive(AdditiveScorer),
    Tascore(Box<TaScorer>),
}

impl Scorer {
    pub fn new(
        kind: ScorerKind,
        store: &mut ParamStore,
        name: &str,
        tascore: &TaScoreConfig,
        query_dim: usize,
        key_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(match kind {
            ScorerKind::Additive => Scorer::Additive(AdditiveScorer::new(store, name, query_dim, key_dim, rng)),
            ScorerKind::Tascore => Scorer::Tascore(Box::new(TaScorer::new(store, name, tascore, query_dim, key_dim, rng)?)),
        })
    }

    pub fn kind(&self) -> ScorerKind {
        match self {
            Scorer::Additive(_) => ScorerKind::Additive,
            Scorer::Tascore(_) => ScorerKind::Tascore,
        }
    }

    pub fn score(&self, g: &mut Graph, store: &ParamStore, b: &mut Binder, q: Var, keys: Var) -> Result<Var> {
        match self {
            Scorer::Additive(s) => s.score(g, store, b, q, keys),
            Scorer::Tascore(s) => s.score(g, store, b, q, keys, 0),
        }
    }
}
