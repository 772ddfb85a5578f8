//! Projections of score vectors onto the probability simplex.
//!
//! * softmax: `exp(s/t) / sum exp(s/t)`, differentiated by the tape's built-ins.
//! * fusedmax: `simplex_project(tv_prox(s/t, lambda))`. The forward pass is
//!   exact and non-iterative (taut-string TV prox, then sort-based simplex
//!   projection); the backward pass is a custom op that averages the upstream
//!   gradient over the simplex support and then over each fused TV segment.

use std::any::Any;
use std::fmt;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_core::{register_custom, softmax_in_place, CustomOp, Graph, Tensor, Var};

/// Entries below this after simplex projection are set to exactly zero.
pub const SUPPORT_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionKind {
    Softmax,
    Fusedmax,
}

impl fmt::Display for ProjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionKind::Softmax => "softmax",
            ProjectionKind::Fusedmax => "fusedmax",
        })
    }
}

impl std::str::FromStr for ProjectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(ProjectionKind::Softmax),
            "fusedmax" => Ok(ProjectionKind::Fusedmax),
            other => Err(Error::Invalid(format!("unknown projection `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub kind: ProjectionKind,
    /// Divides the scores before projecting.
    pub temperature: f64,
    /// Weight of the fused-lasso (total variation) term.
    pub tv_weight: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            kind: ProjectionKind::Softmax,
            temperature: 1.0,
            tv_weight: 1.0,
        }
    }
}

impl ProjectionConfig {
    pub fn with_kind(mut self, kind: ProjectionKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Invalid(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(self.tv_weight > 0.0 && self.tv_weight.is_finite()) {
            return Err(Error::Invalid(format!("tv_weight must be > 0, got {}", self.tv_weight)));
        }
        Ok(())
    }
}

/// A point of the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Invalid("simplex vector must be non-empty".into()));
        }
        if weights.iter().any(|&w| w.is_nan() || w < -SUPPORT_EPS) {
            return Err(Error::Invalid("simplex vector has a negative entry".into()));
        }
        let s: f64 = weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!("simplex vector sums to {s}")));
        }
        Ok(Self(weights))
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_input(s: &[f64], what: &'static str) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Invalid(format!("{what}: empty score vector")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(())
}

pub fn softmax_project(s: &[f64], cfg: &ProjectionConfig) -> Result<SimplexVector> {
    check_input(s, "softmax_project")?;
    cfg.validate()?;
    let mut out: Vec<f64> = s.iter().map(|v| v / cfg.temperature).collect();
    softmax_in_place(&mut out);
    Ok(SimplexVector(out))
}

/// Euclidean projection onto the simplex by sorting and thresholding.
pub fn simplex_project(v: &[f64]) -> Result<SimplexVector> {
    check_input(v, "simplex_project")?;
    let sum: f64 = v.iter().sum();
    if v.iter().all(|&x| x >= 0.0) && (sum - 1.0).abs() <= 1e-12 {
        return Ok(SimplexVector(v.to_vec()));
    }
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    let out = v
        .iter()
        .map(|&x| {
            let y = x - tau;
            if y < SUPPORT_EPS {
                0.0
            } else {
                y
            }
        })
        .collect();
    Ok(SimplexVector(out))
}

/// Proximal operator of `lambda * sum |y[i+1] - y[i]|` under `0.5 * ||y - s||^2`,
/// computed with Condat's direct (taut-string style) algorithm.
pub fn tv_prox(s: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_input(s, "tv_prox")?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Invalid(format!("tv weight must be > 0, got {lambda}")));
    }
    let n = s.len();
    let mut out = vec![0.0; n];
    let (mut k, mut k0, mut kplus, mut kminus) = (0usize, 0usize, 0usize, 0usize);
    let mut umin = lambda;
    let mut umax = -lambda;
    let mut vmin = s[0] - lambda;
    let mut vmax = s[0] + lambda;
    let two_lambda = 2.0 * lambda;
    let neg_lambda = -lambda;
    loop {
        // right boundary
        while k == n - 1 {
            if umin < 0.0 {
                // vmin too high: negative jump
                loop {
                    out[k0] = vmin;
                    k0 += 1;
                    if k0 > kminus {
                        break;
                    }
                }
                k = k0;
                kminus = k0;
                vmin = s[k0];
                umin = lambda;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                // vmax too low: positive jump
                loop {
                    out[k0] = vmax;
                    k0 += 1;
                    if k0 > kplus {
                        break;
                    }
                }
                k = k0;
                kplus = k0;
                vmax = s[k0];
                umax = neg_lambda;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                while k0 <= k {
                    out[k0] = vmin;
                    k0 += 1;
                }
                return Ok(out);
            }
        }
        umin += s[k + 1] - vmin;
        if umin < neg_lambda {
            loop {
                out[k0] = vmin;
                k0 += 1;
                if k0 > kminus {
                    break;
                }
            }
            k = k0;
            kminus = k0;
            kplus = k0;
            vmin = s[k0];
            vmax = vmin + two_lambda;
            umin = lambda;
            umax = neg_lambda;
            continue;
        }
        umax += s[k + 1] - vmax;
        if umax > lambda {
            loop {
                out[k0] = vmax;
                k0 += 1;
                if k0 > kplus {
                    break;
                }
            }
            k = k0;
            kminus = k0;
            kplus = k0;
            vmax = s[k0];
            vmin = vmax - two_lambda;
            umin = lambda;
            umax = neg_lambda;
        } else {
            k += 1;
            if umin >= lambda {
                kminus = k;
                vmin += (umin - lambda) / (k - k0 + 1) as f64;
                umin = lambda;
            }
            if umax <= neg_lambda {
                kplus = k;
                vmax += (umax + lambda) / (k - k0 + 1) as f64;
                umax = neg_lambda;
            }
        }
    }
}

/// Maximal runs of exactly equal values, as `[start, end)` ranges.
pub fn constant_segments(y: &[f64]) -> Vec<(usize, usize)> {
    let mut segs = Vec::new();
    let mut start = 0;
    for i in 1..=y.len() {
        if i == y.len() || y[i] != y[start] {
            segs.push((start, i));
            start = i;
        }
    }
    segs
}

/// What the fusedmax backward pass needs from its forward pass.
#[derive(Clone, Debug)]
pub struct FusedmaxState {
    /// Fused segments of the TV prox output.
    pub segments: Vec<(usize, usize)>,
    /// Nonzero pattern of the projected output.
    pub support: Vec<bool>,
    pub temperature: f64,
}

pub fn fusedmax_forward(s: &[f64], cfg: &ProjectionConfig) -> Result<(SimplexVector, FusedmaxState)> {
    check_input(s, "fusedmax_project")?;
    cfg.validate()?;
    let scaled: Vec<f64> = s.iter().map(|v| v / cfg.temperature).collect();
    let y = tv_prox(&scaled, cfg.tv_weight)?;
    let out = simplex_project(&y)?;
    let state = FusedmaxState {
        segments: constant_segments(&y),
        support: out.weights().iter().map(|&w| w > 0.0).collect(),
        temperature: cfg.temperature,
    };
    Ok((out, state))
}

pub fn fusedmax_project(s: &[f64], cfg: &ProjectionConfig) -> Result<SimplexVector> {
    fusedmax_forward(s, cfg).map(|(out, _)| out)
}

/// Vector-Jacobian product of fusedmax at the point that produced `state`.
pub fn fusedmax_jvp(state: &FusedmaxState, upstream: &[f64]) -> Result<Vec<f64>> {
    let n = state.support.len();
    if upstream.len() != n {
        return Err(Error::Shape {
            op: "fusedmax_jvp",
            detail: format!("state for length {n}, gradient of length {}", upstream.len()),
        });
    }
    // simplex projection: centre on the support, zero elsewhere
    let (sum, count) = upstream
        .iter()
        .zip(&state.support)
        .filter(|(_, &on)| on)
        .fold((0.0, 0usize), |(s, c), (g, _)| (s + g, c + 1));
    let mean = if count > 0 { sum / count as f64 } else { 0.0 };
    let mut g: Vec<f64> = upstream
        .iter()
        .zip(&state.support)
        .map(|(&x, &on)| if on { x - mean } else { 0.0 })
        .collect();
    // TV prox: average within each fused segment
    for &(a, b) in &state.segments {
        let m = g[a..b].iter().sum::<f64>() / (b - a) as f64;
        g[a..b].iter_mut().for_each(|v| *v = m);
    }
    let inv_t = 1.0 / state.temperature;
    g.iter_mut().for_each(|v| *v *= inv_t);
    Ok(g)
}

/// Fusedmax as a tape op over a 1-D score vector.
pub fn fusedmax_op(cfg: ProjectionConfig) -> Rc<dyn CustomOp> {
    register_custom(
        "fusedmax",
        move |inputs: &[&Tensor]| {
            let s = inputs[0];
            let (out, state) = fusedmax_forward(s.data(), &cfg)?;
            Ok((Tensor::new(s.shape().to_vec(), out.into_inner())?, Box::new(state) as Box<dyn Any>))
        },
        |saved: &dyn Any, upstream: &Tensor| {
            let state = saved
                .downcast_ref::<FusedmaxState>()
                .ok_or_else(|| Error::Invalid("fusedmax backward: foreign saved state".into()))?;
            let g = fusedmax_jvp(state, upstream.data())?;
            Ok(vec![Tensor::new(upstream.shape().to_vec(), g)?])
        },
    )
}

/// Differentiable projection of a 1-D score node.
pub fn project(g: &mut Graph, scores: Var, cfg: &ProjectionConfig) -> Result<Var> {
    cfg.validate()?;
    let v = g.value(scores);
    check_input(v.data(), "project")?;
    let l = v.numel();
    match cfg.kind {
        ProjectionKind::Softmax => {
            let scaled = if cfg.temperature == 1.0 {
                scores
            } else {
                g.scale(scores, 1.0 / cfg.temperature)
            };
            let row = g.reshape(scaled, vec![1, l])?;
            let p = g.softmax_rows(row)?;
            g.reshape(p, vec![l])
        }
        ProjectionKind::Fusedmax => {
            let flat = g.reshape(scores, vec![l])?;
            g.custom(&fusedmax_op(*cfg), &[flat])
        }
    }
}

/// Non-differentiable projection of a plain score vector.
pub fn project_values(s: &[f64], cfg: &ProjectionConfig) -> Result<SimplexVector> {
    match cfg.kind {
        ProjectionKind::Softmax => softmax_project(s, cfg),
        ProjectionKind::Fusedmax => fusedmax_project(s, cfg),
    }
}
