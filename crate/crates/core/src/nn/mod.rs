//! Shared-trunk policy/value network with exact backpropagation.
//!
//! ```text
//! features ─► L × [Linear ─ Swish ─ LayerNorm ─ Dropout] ─┬─► roll head  ─► keep logits
//!                                                         ├─► score head ─► masked category logits
//!                                                         ├─► value head ─► ELU ─► V
//!                                                         └─► upper head ─► Û
//! ```
//!
//! Roll and score heads are `Linear ─ Swish ─ LayerNorm ─ Dropout ─ Linear`;
//! value and upper heads drop the dropout. All parameters live in one flat
//! `f64` vector described by named tensors, so optimisers and checkpoints
//! work on plain slices.

mod dist;
pub mod checkpoint;
pub mod gradcheck;
pub mod optim;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{NUM_CATEGORIES, NUM_DICE, NUM_KEEP_MASKS};
use crate::rng::{stream, Domain};

pub use dist::{
    bernoulli_entropy, categorical_entropy, log_sigmoid, masked_log_softmax, sigmoid, softmax,
};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("input has {got} features, network expects {expected}")]
    InputWidth { got: usize, expected: usize },
    #[error("{rows} rows but {masks} score masks")]
    MaskCount { rows: usize, masks: usize },
    #[error("row {0} has no legal score category")]
    NoLegalScore(usize),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

/// Output layout of the roll head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RollMode {
    /// Independent keep probability per sorted die.
    #[serde(rename = "bernoulli-5")]
    Bernoulli5,
    /// One logit per keep mask.
    #[serde(rename = "categorical-32")]
    Categorical32,
}

impl RollMode {
    pub fn width(self) -> usize {
        match self {
            RollMode::Bernoulli5 => NUM_DICE,
            RollMode::Categorical32 => NUM_KEEP_MASKS,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub hidden: usize,
    pub layers: usize,
    pub dropout: f64,
    pub roll_mode: RollMode,
    pub layer_norm: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: 600,
            layers: 3,
            dropout: 0.1,
            roll_mode: RollMode::Categorical32,
            layer_norm: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.hidden == 0 {
            return Err(NnError::Config("hidden size must be at least 1".into()));
        }
        if self.layers == 0 {
            return Err(NnError::Config("trunk needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// A named parameter tensor inside the flat vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
struct Linear {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    lin: Linear,
    norm: Option<Norm>,
    dropout: bool,
}

#[derive(Clone, Copy, Debug)]
struct Head {
    hidden: Block,
    out: Linear,
}

#[derive(Default)]
struct LayoutBuilder {
    tensors: Vec<TensorInfo>,
    len: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.len;
        let t = TensorInfo { name, offset, shape };
        self.len += t.len();
        self.tensors.push(t);
        offset
    }

    fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Linear {
        let w = self.add(format!("{prefix}.weight"), vec![fan_in, fan_out]);
        let b = self.add(format!("{prefix}.bias"), vec![fan_out]);
        Linear { w, b, fan_in, fan_out }
    }

    fn block(&mut self, prefix: &str, fan_in: usize, fan_out: usize, norm: bool, dropout: bool) -> Block {
        let lin = self.linear(&format!("{prefix}.linear"), fan_in, fan_out);
        let norm = norm.then(|| Norm {
            g: self.add(format!("{prefix}.norm.gain"), vec![fan_out]),
            b: self.add(format!("{prefix}.norm.bias"), vec![fan_out]),
        });
        Block { lin, norm, dropout }
    }
}

/// Head indices in [`Network`] order.
const ROLL: usize = 0;
const SCORE: usize = 1;
const VALUE: usize = 2;
const UPPER: usize = 3;
const HEAD_NAMES: [&str; 4] = ["roll", "score", "value", "upper"];

/// The policy/value network and its parameters.
#[derive(Clone, Debug)]
pub struct Network {
    cfg: NetConfig,
    input: usize,
    params: Vec<f64>,
    tensors: Vec<TensorInfo>,
    trunk: Vec<Block>,
    heads: [Head; 4],
}

/// Network outputs for a batch of rows.
#[derive(Clone, Debug)]
pub struct Outputs {
    pub roll_mode: RollMode,
    /// Categorical: 32 logits. Bernoulli: 5 keep logits.
    pub roll_logits: Array2<f64>,
    /// Categorical: softmax over keep masks. Bernoulli: per-die keep probability.
    pub roll_probs: Array2<f64>,
    /// Log-probabilities matching `roll_probs` (for Bernoulli, of keeping).
    pub roll_logp: Array2<f64>,
    /// Raw score logits; illegal entries are left as computed.
    pub score_logits: Array2<f64>,
    /// Masked softmax; illegal entries are exactly zero.
    pub score_probs: Array2<f64>,
    /// Masked log-softmax; illegal entries are `-inf`.
    pub score_logp: Array2<f64>,
    pub score_masks: Vec<u16>,
    pub value: Array1<f64>,
    pub upper: Array1<f64>,
}

impl Outputs {
    pub fn rows(&self) -> usize {
        self.value.len()
    }

    /// Log-probability of keeping `mask` on `row`.
    pub fn roll_log_prob(&self, row: usize, mask: u8) -> f64 {
        match self.roll_mode {
            RollMode::Categorical32 => self.roll_logp[[row, mask as usize]],
            RollMode::Bernoulli5 => (0..NUM_DICE)
                .map(|i| {
                    let x = self.roll_logits[[row, i]];
                    if mask >> i & 1 == 1 {
                        log_sigmoid(x)
                    } else {
                        log_sigmoid(-x)
                    }
                })
                .sum(),
        }
    }

    pub fn score_log_prob(&self, row: usize, cat: usize) -> f64 {
        self.score_logp[[row, cat]]
    }

    pub fn roll_entropy(&self, row: usize) -> f64 {
        match self.roll_mode {
            RollMode::Categorical32 => categorical_entropy(self.roll_probs.row(row), self.roll_logp.row(row)),
            RollMode::Bernoulli5 => bernoulli_entropy(self.roll_logits.row(row)),
        }
    }

    pub fn score_entropy(&self, row: usize) -> f64 {
        categorical_entropy(self.score_probs.row(row), self.score_logp.row(row))
    }

    /// Adds `coef * d log π_roll(mask) / d logits` to `grad`.
    pub fn add_roll_log_prob_grad(&self, row: usize, mask: u8, coef: f64, grad: &mut Array2<f64>) {
        match self.roll_mode {
            RollMode::Categorical32 => {
                for j in 0..NUM_KEEP_MASKS {
                    let onehot = (j == mask as usize) as u8 as f64;
                    grad[[row, j]] += coef * (onehot - self.roll_probs[[row, j]]);
                }
            }
            RollMode::Bernoulli5 => {
                for i in 0..NUM_DICE {
                    let k = (mask >> i & 1) as f64;
                    grad[[row, i]] += coef * (k - self.roll_probs[[row, i]]);
                }
            }
        }
    }

    /// Adds `coef * d log π_score(cat) / d logits` to `grad`; masked logits get nothing.
    pub fn add_score_log_prob_grad(&self, row: usize, cat: usize, coef: f64, grad: &mut Array2<f64>) {
        let mask = self.score_masks[row];
        for j in 0..NUM_CATEGORIES {
            if mask >> j & 1 == 1 {
                let onehot = (j == cat) as u8 as f64;
                grad[[row, j]] += coef * (onehot - self.score_probs[[row, j]]);
            }
        }
    }

    /// Adds `coef * dH_roll / d logits` to `grad`.
    pub fn add_roll_entropy_grad(&self, row: usize, coef: f64, grad: &mut Array2<f64>) {
        match self.roll_mode {
            RollMode::Categorical32 => {
                let h = self.roll_entropy(row);
                for j in 0..NUM_KEEP_MASKS {
                    let p = self.roll_probs[[row, j]];
                    if p > 0.0 {
                        grad[[row, j]] -= coef * p * (self.roll_logp[[row, j]] + h);
                    }
                }
            }
            RollMode::Bernoulli5 => {
                for i in 0..NUM_DICE {
                    let p = self.roll_probs[[row, i]];
                    grad[[row, i]] -= coef * self.roll_logits[[row, i]] * p * (1.0 - p);
                }
            }
        }
    }

    /// Adds `coef * dH_score / d logits` to `grad`; masked logits get nothing.
    pub fn add_score_entropy_grad(&self, row: usize, coef: f64, grad: &mut Array2<f64>) {
        let h = self.score_entropy(row);
        let mask = self.score_masks[row];
        for j in 0..NUM_CATEGORIES {
            let p = self.score_probs[[row, j]];
            if mask >> j & 1 == 1 && p > 0.0 {
                grad[[row, j]] -= coef * p * (self.score_logp[[row, j]] + h);
            }
        }
    }

    /// Most probable keep mask; ties go to the lowest mask. Bernoulli heads
    /// keep die `i` iff its keep probability exceeds one half.
    pub fn argmax_roll(&self, row: usize) -> u8 {
        match self.roll_mode {
            RollMode::Categorical32 => argmax(self.roll_probs.row(row).iter().copied(), u16::MAX) as u8,
            RollMode::Bernoulli5 => (0..NUM_DICE)
                .filter(|&i| self.roll_probs[[row, i]] > 0.5)
                .fold(0u8, |m, i| m | 1 << i),
        }
    }

    /// Most probable legal category index; ties go to the lowest index.
    pub fn argmax_score(&self, row: usize) -> usize {
        argmax(self.score_probs.row(row).iter().copied(), self.score_masks[row])
    }

    pub fn sample_roll<R: Rng + ?Sized>(&self, row: usize, rng: &mut R) -> u8 {
        match self.roll_mode {
            RollMode::Categorical32 => sample(self.roll_probs.row(row).iter().copied(), u16::MAX, rng) as u8,
            RollMode::Bernoulli5 => (0..NUM_DICE)
                .filter(|&i| rng.gen::<f64>() < self.roll_probs[[row, i]])
                .fold(0u8, |m, i| m | 1 << i),
        }
    }

    pub fn sample_score<R: Rng + ?Sized>(&self, row: usize, rng: &mut R) -> usize {
        sample(self.score_probs.row(row).iter().copied(), self.score_masks[row], rng)
    }
}

/// Index of the first maximum among entries allowed by `mask` (bit `i` for
/// entry `i`; entries past bit 15 are always allowed).
fn argmax(values: impl Iterator<Item = f64>, mask: u16) -> usize {
    let mut best = (usize::MAX, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        let allowed = i >= 16 || mask >> i & 1 == 1;
        if allowed && (best.0 == usize::MAX || v > best.1) {
            best = (i, v);
        }
    }
    best.0
}

/// Inverse-CDF draw restricted to allowed entries with positive probability.
fn sample<R: Rng + ?Sized>(probs: impl Iterator<Item = f64> + Clone, mask: u16, rng: &mut R) -> usize {
    let allowed = |i: usize| i >= 16 || mask >> i & 1 == 1;
    let total: f64 = probs.clone().enumerate().filter(|&(i, _)| allowed(i)).map(|(_, p)| p).sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = usize::MAX;
    for (i, p) in probs.enumerate() {
        if !allowed(i) || p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Loss gradients with respect to the network outputs.
#[derive(Clone, Debug)]
pub struct OutputGrads {
    pub roll_logits: Array2<f64>,
    pub score_logits: Array2<f64>,
    pub value: Array1<f64>,
    pub upper: Array1<f64>,
}

impl OutputGrads {
    pub fn zeros(rows: usize, roll_mode: RollMode) -> OutputGrads {
        OutputGrads {
            roll_logits: Array2::zeros((rows, roll_mode.width())),
            score_logits: Array2::zeros((rows, NUM_CATEGORIES)),
            value: Array1::zeros(rows),
            upper: Array1::zeros(rows),
        }
    }
}

struct BlockTrace {
    input: Array2<f64>,
    z: Array2<f64>,
    /// Normalised activations (or the activations themselves without LayerNorm).
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
    /// Dropout multipliers (0 or 1/(1-p)); `None` when dropout is inactive.
    keep: Option<Array2<f64>>,
}

/// Cached activations from a forward pass.
pub struct Trace {
    trunk: Vec<BlockTrace>,
    heads: Vec<(BlockTrace, Array2<f64>)>,
    value_pre: Array1<f64>,
}

#[inline]
fn swish(z: f64) -> f64 {
    z * sigmoid(z)
}

#[inline]
fn swish_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s + z * s * (1.0 - s)
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

impl Network {
    /// Builds a network with fan-in scaled Gaussian weights, zero biases and
    /// unit LayerNorm gains, drawn from the `Init` stream of `seed`.
    pub fn new(cfg: NetConfig, input: usize, seed: u64) -> Result<Network, NnError> {
        cfg.validate()?;
        if input == 0 {
            return Err(NnError::Config("input width must be at least 1".into()));
        }
        let mut net = Network::layout(cfg, input);
        let mut rng = stream(seed, Domain::Init, 0);
        let linears: Vec<Linear> = net
            .trunk
            .iter()
            .map(|b| b.lin)
            .chain(net.heads.iter().flat_map(|h| [h.hidden.lin, h.out]))
            .collect();
        for lin in linears {
            let normal = Normal::new(0.0, (2.0 / lin.fan_in as f64).sqrt()).unwrap();
            for w in &mut net.params[lin.w..lin.w + lin.fan_in * lin.fan_out] {
                *w = normal.sample(&mut rng);
            }
        }
        let norms: Vec<Norm> = net
            .trunk
            .iter()
            .chain(net.heads.iter().map(|h| &h.hidden))
            .filter_map(|b| b.norm)
            .collect();
        for n in norms {
            net.params[n.g..n.g + cfg.hidden].fill(1.0);
        }
        Ok(net)
    }

    /// Zero-initialised network with the layout implied by `cfg`.
    pub fn layout(cfg: NetConfig, input: usize) -> Network {
        let mut lb = LayoutBuilder::default();
        let d = cfg.hidden;
        let ln = cfg.layer_norm;
        let trunk = (0..cfg.layers)
            .map(|l| lb.block(&format!("trunk.{l}"), if l == 0 { input } else { d }, d, ln, true))
            .collect();
        let widths = [cfg.roll_mode.width(), NUM_CATEGORIES, 1, 1];
        let heads = std::array::from_fn(|h| {
            let name = HEAD_NAMES[h];
            let hidden = lb.block(&format!("{name}.hidden"), d, d, ln, h == ROLL || h == SCORE);
            let out = lb.linear(&format!("{name}.out"), d, widths[h]);
            Head { hidden, out }
        });
        Network {
            cfg,
            input,
            params: vec![0.0; lb.len],
            tensors: lb.tensors,
            trunk,
            heads,
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.tensors
    }

    fn weight(&self, lin: &Linear) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((lin.fan_in, lin.fan_out), &self.params[lin.w..lin.w + lin.fan_in * lin.fan_out])
            .unwrap()
    }

    fn linear_forward(&self, lin: &Linear, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = Array2::zeros((x.nrows(), lin.fan_out));
        let bias = &self.params[lin.b..lin.b + lin.fan_out];
        for mut row in z.rows_mut() {
            row.as_slice_mut().unwrap().copy_from_slice(bias);
        }
        general_mat_mul(1.0, x, &self.weight(lin), 1.0, &mut z);
        z
    }

    fn block_forward(
        &self,
        block: &Block,
        x: Array2<f64>,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, BlockTrace) {
        let z = self.linear_forward(&block.lin, &x.view());
        let d = block.lin.fan_out;
        let mut xhat = z.mapv(swish);
        let mut inv_std = Vec::new();
        let mut h = match block.norm {
            Some(norm) => {
                inv_std.reserve(xhat.nrows());
                let g = &self.params[norm.g..norm.g + d];
                let b = &self.params[norm.b..norm.b + d];
                let mut y = Array2::zeros(xhat.raw_dim());
                for (mut xr, mut yr) in xhat.rows_mut().into_iter().zip(y.rows_mut()) {
                    let xs = xr.as_slice_mut().unwrap();
                    let mean = xs.iter().sum::<f64>() / d as f64;
                    let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    inv_std.push(is);
                    let ys = yr.as_slice_mut().unwrap();
                    for j in 0..d {
                        xs[j] = (xs[j] - mean) * is;
                        ys[j] = g[j] * xs[j] + b[j];
                    }
                }
                y
            }
            None => xhat.clone(),
        };
        let keep = match rng {
            Some(rng) if block.dropout && self.cfg.dropout > 0.0 => {
                let p = self.cfg.dropout;
                let scale = 1.0 / (1.0 - p);
                let mask = Array2::from_shape_simple_fn(h.raw_dim(), || if rng.gen::<f64>() < p { 0.0 } else { scale });
                h *= &mask;
                Some(mask)
            }
            _ => None,
        };
        (h, BlockTrace { input: x, z, xhat, inv_std, keep })
    }

    /// Runs the network on `x` (one row per state). `score_masks[i]` marks the
    /// categories the score head may choose on row `i`. Passing a dropout
    /// generator selects training mode; `None` is deterministic evaluation.
    pub fn forward(
        &self,
        x: ArrayView2<f64>,
        score_masks: &[u16],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<(Outputs, Trace), NnError> {
        if x.ncols() != self.input {
            return Err(NnError::InputWidth { got: x.ncols(), expected: self.input });
        }
        if score_masks.len() != x.nrows() {
            return Err(NnError::MaskCount { rows: x.nrows(), masks: score_masks.len() });
        }
        if let Some(row) = score_masks.iter().position(|&m| m & 0x1fff == 0) {
            return Err(NnError::NoLegalScore(row));
        }
        let mut h = x.to_owned();
        let mut trunk = Vec::with_capacity(self.trunk.len());
        for block in &self.trunk {
            let (next, t) = self.block_forward(block, h, &mut dropout);
            trunk.push(t);
            h = next;
        }
        let mut heads = Vec::with_capacity(4);
        let mut raw = Vec::with_capacity(4);
        for head in &self.heads {
            let (hid, t) = self.block_forward(&head.hidden, h.clone(), &mut dropout);
            raw.push(self.linear_forward(&head.out, &hid.view()));
            heads.push((t, hid));
        }

        let roll_mode = self.cfg.roll_mode;
        let roll_logits = raw[ROLL].clone();
        let (roll_probs, roll_logp) = match roll_mode {
            RollMode::Categorical32 => {
                let logp = masked_log_softmax(roll_logits.view(), None);
                (logp.mapv(f64::exp), logp)
            }
            RollMode::Bernoulli5 => (roll_logits.mapv(sigmoid), roll_logits.mapv(log_sigmoid)),
        };
        let score_logits = raw[SCORE].clone();
        let score_logp = masked_log_softmax(score_logits.view(), Some(score_masks));
        let score_probs = score_logp.mapv(f64::exp);
        let value_pre = raw[VALUE].column(0).to_owned();
        let value = value_pre.mapv(elu);
        let upper = raw[UPPER].column(0).to_owned();
        if value.iter().chain(upper.iter()).any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("network output"));
        }
        let out = Outputs {
            roll_mode,
            roll_logits,
            roll_probs,
            roll_logp,
            score_logits,
            score_probs,
            score_logp,
            score_masks: score_masks.to_vec(),
            value,
            upper,
        };
        Ok((out, Trace { trunk, heads, value_pre }))
    }

    /// Evaluation-mode forward pass without keeping the trace.
    pub fn infer(&self, x: ArrayView2<f64>, score_masks: &[u16]) -> Result<Outputs, NnError> {
        self.forward(x, score_masks, None).map(|(o, _)| o)
    }

    fn linear_backward(&self, lin: &Linear, input: &Array2<f64>, dz: &Array2<f64>, grad: &mut [f64]) -> Array2<f64> {
        {
            let gw = &mut grad[lin.w..lin.w + lin.fan_in * lin.fan_out];
            let mut gw = ArrayViewMut2::from_shape((lin.fan_in, lin.fan_out), gw).unwrap();
            general_mat_mul(1.0, &input.t(), dz, 1.0, &mut gw);
        }
        let gb = &mut grad[lin.b..lin.b + lin.fan_out];
        for row in dz.rows() {
            for (g, v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        dz.dot(&self.weight(lin).t())
    }

    fn block_backward(&self, block: &Block, t: &BlockTrace, mut dh: Array2<f64>, grad: &mut [f64]) -> Array2<f64> {
        if !dh.is_standard_layout() {
            dh = dh.as_standard_layout().into_owned();
        }
        if let Some(keep) = &t.keep {
            dh *= keep;
        }
        let d = block.lin.fan_out;
        let mut da = match block.norm {
            Some(norm) => {
                let g = self.params[norm.g..norm.g + d].to_vec();
                let mut da = Array2::zeros(dh.raw_dim());
                for (r, (dy, xh)) in dh.rows().into_iter().zip(t.xhat.rows()).enumerate() {
                    let dy = dy.as_slice().unwrap();
                    let xh = xh.as_slice().unwrap();
                    let (gg, gb) = {
                        let (lo, hi) = grad.split_at_mut(norm.b);
                        (&mut lo[norm.g..norm.g + d], &mut hi[..d])
                    };
                    let mut mean_dx = 0.0;
                    let mut mean_dx_x = 0.0;
                    for j in 0..d {
                        gg[j] += dy[j] * xh[j];
                        gb[j] += dy[j];
                        let dx = dy[j] * g[j];
                        mean_dx += dx;
                        mean_dx_x += dx * xh[j];
                    }
                    mean_dx /= d as f64;
                    mean_dx_x /= d as f64;
                    let is = t.inv_std[r];
                    let mut out = da.row_mut(r);
                    for j in 0..d {
                        out[j] = is * (dy[j] * g[j] - mean_dx - xh[j] * mean_dx_x);
                    }
                }
                da
            }
            None => dh,
        };
        da.zip_mut_with(&t.z, |a, &z| *a *= swish_grad(z));
        self.linear_backward(&block.lin, &t.input, &da, grad)
    }

    /// Accumulates into `grad` the parameter gradient of the scalar loss
    /// whose output gradients are `dout`.
    pub fn backward(&self, trace: &Trace, dout: &OutputGrads, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let rows = trace.value_pre.len();
        let value_pre_grad = Array2::from_shape_fn((rows, 1), |(i, _)| dout.value[i] * elu_grad(trace.value_pre[i]));
        let upper_grad = dout.upper.clone().insert_axis(Axis(1));
        let dheads = [&dout.roll_logits, &dout.score_logits, &value_pre_grad, &upper_grad];
        let mut dtrunk: Option<Array2<f64>> = None;
        for (h, head) in self.heads.iter().enumerate() {
            let (t, hid) = &trace.heads[h];
            let dhid = self.linear_backward(&head.out, hid, dheads[h], grad);
            let dx = self.block_backward(&head.hidden, t, dhid, grad);
            match &mut dtrunk {
                Some(acc) => *acc += &dx,
                None => dtrunk = Some(dx),
            }
        }
        let mut dh = dtrunk.expect("network has heads");
        for (block, t) in self.trunk.iter().zip(&trace.trunk).rev() {
            dh = self.block_backward(block, t, dh, grad);
        }
    }
}
