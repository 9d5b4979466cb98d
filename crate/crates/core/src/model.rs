//! Two-layer MLP encoder and the APPR-weighted softmax classifier on top of
//! it, with exact per-node gradients.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::appr::ApprVector;
use crate::error::{DparError, Result};
use crate::graph::Graph;

pub const DEFAULT_HIDDEN: usize = 32;

/// Encoder weights stored as one flat vector in the order
/// `W1 (d×h, row-major) | b1 (h) | W2 (h×c, row-major) | b2 (c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    d: usize,
    h: usize,
    c: usize,
    theta: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(d: usize, h: usize, c: usize) -> Self {
        Self {
            d,
            h,
            c,
            theta: vec![0.0; Self::size(d, h, c)],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(d: usize, h: usize, c: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(d, h, c);
        let a1 = (6.0 / (d + h) as f64).sqrt();
        let a2 = (6.0 / (h + c) as f64).sqrt();
        let u1 = Uniform::new_inclusive(-a1, a1).expect("finite bound");
        let u2 = Uniform::new_inclusive(-a2, a2).expect("finite bound");
        for w in p.w1_mut() {
            *w = u1.sample(rng);
        }
        for w in p.w2_mut() {
            *w = u2.sample(rng);
        }
        p
    }

    pub fn from_flat(d: usize, h: usize, c: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != Self::size(d, h, c) {
            return Err(DparError::Dimension(format!(
                "expected {} parameters for d={d} h={h} c={c}, got {}",
                Self::size(d, h, c),
                theta.len()
            )));
        }
        Ok(Self { d, h, c, theta })
    }

    fn size(d: usize, h: usize, c: usize) -> usize {
        d * h + h + h * c + c
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    pub fn n_classes(&self) -> usize {
        self.c
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.theta
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    fn offsets(&self) -> [usize; 4] {
        let b1 = self.d * self.h;
        let w2 = b1 + self.h;
        let b2 = w2 + self.h * self.c;
        [0, b1, w2, b2]
    }

    pub fn w1(&self) -> &[f64] {
        let o = self.offsets();
        &self.theta[o[0]..o[1]]
    }

    pub fn b1(&self) -> &[f64] {
        let o = self.offsets();
        &self.theta[o[1]..o[2]]
    }

    pub fn w2(&self) -> &[f64] {
        let o = self.offsets();
        &self.theta[o[2]..o[3]]
    }

    pub fn b2(&self) -> &[f64] {
        let o = self.offsets();
        &self.theta[o[3]..]
    }

    pub fn w1_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.theta[o[0]..o[1]]
    }

    pub fn b1_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.theta[o[1]..o[2]]
    }

    pub fn w2_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.theta[o[2]..o[3]]
    }

    pub fn b2_mut(&mut self) -> &mut [f64] {
        let o = self.offsets();
        &mut self.theta[o[3]..]
    }

    /// Text checkpoint: a `mlp d h c` header, then one value per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("mlp {} {} {}\n", self.d, self.h, self.c);
        for x in &self.theta {
            let _ = writeln!(out, "{x:?}");
        }
        fs::write(path, out).map_err(|e| DparError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DparError::io(path, e))?;
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or("").split_whitespace().collect();
        let dims: Vec<usize> = match header.as_slice() {
            ["mlp", rest @ ..] if rest.len() == 3 => rest
                .iter()
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| DparError::parse(path, 1, format!("bad shape: {e}")))?,
            _ => return Err(DparError::parse(path, 1, "expected header `mlp d h c`")),
        };
        let theta = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| DparError::parse(path, i + 2, format!("bad value: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_flat(dims[0], dims[1], dims[2], theta)
    }
}

/// Hidden pre-activations and encoder output of one feature row.
struct Forward {
    pre: Vec<f64>,
    act: Vec<f64>,
    out: Vec<f64>,
}

fn forward(p: &MlpParams, x: &[f64]) -> Forward {
    let (d, h, c) = (p.d, p.h, p.c);
    let mut pre = p.b1().to_vec();
    let w1 = p.w1();
    for (i, &xi) in x.iter().enumerate().take(d) {
        if xi == 0.0 {
            continue;
        }
        let row = &w1[i * h..(i + 1) * h];
        for (z, &w) in pre.iter_mut().zip(row) {
            *z += xi * w;
        }
    }
    let act: Vec<f64> = pre.iter().map(|&z| z.max(0.0)).collect();
    let mut out = p.b2().to_vec();
    let w2 = p.w2();
    for (j, &a) in act.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = &w2[j * c..(j + 1) * c];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += a * w;
        }
    }
    Forward { pre, act, out }
}

/// `H = W2ᵀ relu(W1ᵀ x + b1) + b2`.
pub fn forward_encode(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.d {
        return Err(DparError::Dimension(format!(
            "feature row has {} entries, encoder expects {}",
            x.len(),
            params.d
        )));
    }
    Ok(forward(params, x).out)
}

/// Encoder outputs for every node of `g`, row-major `n × c`.
pub fn encode_all(params: &MlpParams, g: &Graph) -> Result<Vec<f64>> {
    check_graph(params, g)?;
    let mut out = Vec::with_capacity(g.n_nodes() * params.c);
    for u in 0..g.n_nodes() {
        out.extend(forward(params, g.features(u)).out);
    }
    Ok(out)
}

fn check_graph(params: &MlpParams, g: &Graph) -> Result<()> {
    if g.feature_dim() != params.d {
        return Err(DparError::Dimension(format!(
            "graph features have dimension {}, encoder expects {}",
            g.feature_dim(),
            params.d
        )));
    }
    Ok(())
}

fn check_row(g: &Graph, row: &ApprVector) -> Result<()> {
    if let Some(&(u, _)) = row.entries.iter().find(|e| e.0 >= g.n_nodes()) {
        return Err(DparError::Dimension(format!(
            "APPR row of {} references node {u} beyond {} nodes",
            row.source,
            g.n_nodes()
        )));
    }
    Ok(())
}

/// Pre-softmax aggregate `Σ_u π_u H_u` over the row's support.
pub fn aggregate(params: &MlpParams, g: &Graph, row: &ApprVector) -> Result<Vec<f64>> {
    check_graph(params, g)?;
    check_row(g, row)?;
    let mut s = vec![0.0; params.c];
    for &(u, w) in &row.entries {
        for (si, hi) in s.iter_mut().zip(forward(params, g.features(u)).out) {
            *si += w * hi;
        }
    }
    Ok(s)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Class probabilities `softmax(Σ_u π_u H_u)`. An empty row gives the
/// uniform distribution.
pub fn predict_node(params: &MlpParams, g: &Graph, row: &ApprVector) -> Result<Vec<f64>> {
    if row.entries.is_empty() {
        log::debug!("empty APPR row for node {}; predicting uniform", row.source);
    }
    Ok(softmax(&aggregate(params, g, row)?))
}

/// Gradient of one node's loss, laid out like [`MlpParams::flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct PerNodeGradient {
    pub node: usize,
    pub values: Vec<f64>,
    pub norm: f64,
}

impl PerNodeGradient {
    fn new(node: usize, values: Vec<f64>) -> Self {
        let norm = values.iter().map(|x| x * x).sum::<f64>().sqrt();
        Self { node, values, norm }
    }

    /// Scales to ℓ2 norm at most `clip`; returns the factor applied.
    pub fn clip(&mut self, clip: f64) -> f64 {
        let mut factor = (self.norm / clip).max(1.0);
        if factor == 1.0 {
            return factor;
        }
        let original = std::mem::take(&mut self.values);
        loop {
            self.values = original.iter().map(|v| v / factor).collect();
            self.norm = self.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            if self.norm <= clip {
                return factor;
            }
            factor *= 1.0 + f64::EPSILON;
        }
    }
}

/// Cross-entropy `−ln z[label]` of node `node` predicted from `row`, and its
/// exact gradient with respect to every parameter.
pub fn loss_and_grad(
    params: &MlpParams,
    g: &Graph,
    node: usize,
    row: &ApprVector,
    label: usize,
) -> Result<(f64, PerNodeGradient)> {
    check_graph(params, g)?;
    check_row(g, row)?;
    let (d, h, c) = (params.d, params.h, params.c);
    if label >= c {
        return Err(DparError::Dimension(format!("label {label} outside {c} classes")));
    }

    let passes: Vec<(usize, f64, Forward)> = row
        .entries
        .iter()
        .map(|&(u, w)| (u, w, forward(params, g.features(u))))
        .collect();
    let mut s = vec![0.0; c];
    for (_, w, f) in &passes {
        for (si, hi) in s.iter_mut().zip(&f.out) {
            *si += w * hi;
        }
    }
    let loss = log_sum_exp(&s) - s[label];
    let mut delta = softmax(&s);
    delta[label] -= 1.0;

    let mut grad = MlpParams::zeros(d, h, c);
    let mut dh = vec![0.0; c];
    let mut dpre = vec![0.0; h];
    for (u, w, f) in &passes {
        for (x, &dl) in dh.iter_mut().zip(&delta) {
            *x = w * dl;
        }
        {
            let gw2 = grad.w2_mut();
            for (j, &a) in f.act.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (gk, &dk) in gw2[j * c..(j + 1) * c].iter_mut().zip(&dh) {
                    *gk += a * dk;
                }
            }
        }
        for (gk, &dk) in grad.b2_mut().iter_mut().zip(&dh) {
            *gk += dk;
        }
        let w2 = params.w2();
        for (j, dp) in dpre.iter_mut().enumerate() {
            *dp = if f.pre[j] > 0.0 {
                w2[j * c..(j + 1) * c].iter().zip(&dh).map(|(a, b)| a * b).sum()
            } else {
                0.0
            };
        }
        for (gk, &dk) in grad.b1_mut().iter_mut().zip(&dpre) {
            *gk += dk;
        }
        let x = g.features(*u);
        let gw1 = grad.w1_mut();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (gk, &dk) in gw1[i * h..(i + 1) * h].iter_mut().zip(&dpre) {
                *gk += xi * dk;
            }
        }
    }
    Ok((loss, PerNodeGradient::new(node, grad.theta)))
}
