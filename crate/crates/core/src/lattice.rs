//! Assembles cells into an L-layer × K-timestep unrolled lattice, runs
//! forward/backward over a BPTT window, and sizes hidden dimensions to a
//! parameter budget.
//!
//! Wiring: at each timestep, layer 0 receives the one-hot input as its
//! vertical input h1 (the layer-0 W matrices double as the embedding);
//! layer l receives the vertical output h1' of layer l−1; each layer
//! carries its own h2 (and memory) along time. The top layer's vertical
//! output feeds the softmax by default (configurable to horizontal).
//! Gradients are truncated at window boundaries: the incoming carry is a
//! constant.

use crate::cells::{
    backward_cell, count_cell_params, step_cell, CellActivations, CellKind, CellParams, CellState,
    StateGrad,
};
use crate::corpus::{Vocab, WindowBatch};
use crate::error::{Error, Result};
use crate::numkit::{glorot_init, softmax_cce, Mat, Rng};
use serde::{Deserialize, Serialize};

/// Which state of the top layer feeds the output projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    #[default]
    Vertical,
    Horizontal,
}

impl std::str::FromStr for Readout {
    type Err = Error;
    fn from_str(s: &str) -> Result<Readout> {
        match s.to_ascii_lowercase().as_str() {
            "vertical" => Ok(Readout::Vertical),
            "horizontal" => Ok(Readout::Horizontal),
            other => Err(Error::InvalidConfig(format!("unknown readout {other:?}"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub kind: CellKind,
    /// L, number of stacked layers
    pub depth: usize,
    /// m, hidden state size
    pub hidden: usize,
    /// V, vocabulary size
    pub vocab: usize,
    /// K, BPTT window length
    pub bptt: usize,
    /// B, number of parallel streams
    pub batch: usize,
    pub readout: Readout,
    pub tie_grid_weights: bool,
}

pub const DEFAULT_BPTT: usize = 50;
pub const DEFAULT_BATCH: usize = 250;
pub const MAX_BPTT: usize = 10_000;

impl NetworkConfig {
    pub fn new(kind: CellKind, depth: usize, hidden: usize, vocab: usize) -> NetworkConfig {
        NetworkConfig {
            kind,
            depth,
            hidden,
            vocab,
            bptt: DEFAULT_BPTT,
            batch: DEFAULT_BATCH,
            readout: Readout::Vertical,
            tie_grid_weights: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.hidden == 0 || self.vocab == 0 || self.bptt == 0 || self.batch == 0
        {
            return Err(Error::InvalidConfig(
                "depth, hidden, vocab, bptt and batch must be positive".into(),
            ));
        }
        if self.bptt > MAX_BPTT {
            return Err(Error::InvalidConfig(format!(
                "bptt {} exceeds maximum {MAX_BPTT}",
                self.bptt
            )));
        }
        Ok(())
    }

    /// Input dim of layer l: V for the input layer, m above it.
    fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.vocab
        } else {
            self.hidden
        }
    }
}

/// Full per-layer parameter set plus the output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<CellParams>,
    pub w_out: Mat,
    pub b_out: Mat,
}

impl NetworkParams {
    pub fn zeros(cfg: &NetworkConfig) -> Result<NetworkParams> {
        cfg.validate()?;
        let layers = (0..cfg.depth)
            .map(|l| {
                CellParams::zeros(
                    cfg.kind,
                    cfg.layer_input_dim(l),
                    cfg.hidden,
                    cfg.tie_grid_weights,
                )
            })
            .collect();
        Ok(NetworkParams {
            layers,
            w_out: Mat::zeros(cfg.vocab, cfg.hidden),
            b_out: Mat::zeros(cfg.vocab, 1),
        })
    }

    pub fn zeros_like(&self) -> NetworkParams {
        NetworkParams {
            layers: self.layers.iter().map(CellParams::zeros_like).collect(),
            w_out: Mat::zeros(self.w_out.rows(), self.w_out.cols()),
            b_out: Mat::zeros(self.b_out.rows(), 1),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(CellParams::param_count).sum::<usize>()
            + self.w_out.len()
            + self.b_out.len()
    }

    /// Tensor names in the canonical (checkpoint) order: layer-major with
    /// alphabetical tensor names inside each layer, then the output group.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for n in layer.tensor_names() {
                names.push(format!("layer{l}.{n}"));
            }
        }
        names.push("out.b_out".into());
        names.push("out.w_out".into());
        names
    }

    /// Tensors in canonical order, immutable.
    pub fn tensors(&self) -> Vec<&Mat> {
        let mut v: Vec<&Mat> = Vec::new();
        for layer in &self.layers {
            v.extend(layer.tensors().iter());
        }
        v.push(&self.b_out);
        v.push(&self.w_out);
        v
    }

    /// Tensors in canonical order, mutable.
    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut v: Vec<&mut Mat> = Vec::new();
        for layer in &mut self.layers {
            v.extend(layer.tensors_mut().iter_mut());
        }
        v.push(&mut self.b_out);
        v.push(&mut self.w_out);
        v
    }

    /// Name of the first tensor containing a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        let names = self.tensor_names();
        for (name, t) in names.iter().zip(self.tensors()) {
            if !t.is_finite() {
                return Some(name.clone());
            }
        }
        None
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.sum_squares())
            .sum::<f64>()
            .sqrt()
    }
}

/// Exact trainable scalar count of the full network.
pub fn count_network_params(
    kind: CellKind,
    depth: usize,
    vocab: usize,
    hidden: usize,
    tied: bool,
) -> usize {
    let mut total = count_cell_params(kind, vocab, hidden, tied);
    total += (depth - 1) * count_cell_params(kind, hidden, hidden, tied);
    total + vocab * hidden + vocab
}

/// Glorot-uniform weights, zero biases; deterministic for a given seed.
pub fn init_network(cfg: &NetworkConfig, seed: u64) -> Result<NetworkParams> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let layers = (0..cfg.depth)
        .map(|l| {
            CellParams::glorot(
                cfg.kind,
                cfg.layer_input_dim(l),
                cfg.hidden,
                cfg.tie_grid_weights,
                &mut rng,
            )
        })
        .collect();
    let w_out = glorot_init(&mut rng, cfg.vocab, cfg.hidden);
    Ok(NetworkParams {
        layers,
        w_out,
        b_out: Mat::zeros(cfg.vocab, 1),
    })
}

/// Largest hidden size m whose full-network count fits the budget:
/// count(m) ≤ budget < count(m+1). The count is strictly monotone in m,
/// so a doubling search plus bisection suffices.
pub fn solve_hidden_for_budget(
    kind: CellKind,
    depth: usize,
    vocab: usize,
    tied: bool,
    budget: usize,
) -> Result<usize> {
    let count = |m: usize| count_network_params(kind, depth, vocab, m, tied);
    let min = count(1);
    if budget < min {
        return Err(Error::BudgetTooSmall { budget, min });
    }
    let mut lo = 1usize;
    let mut hi = 2usize;
    while count(hi) <= budget {
        lo = hi;
        hi *= 2;
    }
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if count(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Per-layer recurrent carry for a batch of streams.
#[derive(Debug, Clone)]
pub struct CarriedState {
    pub layers: Vec<CellState>,
}

impl CarriedState {
    pub fn zeros(cfg: &NetworkConfig, batch: usize) -> CarriedState {
        CarriedState {
            layers: (0..cfg.depth)
                .map(|_| CellState::zeros(cfg.kind, cfg.hidden, batch))
                .collect(),
        }
    }

    pub fn batch(&self) -> usize {
        self.layers[0].h2.cols()
    }
}

struct LayerStepCache {
    h1_in: Mat,
    state_in: CellState,
    acts: CellActivations,
}

struct StepCache {
    layers: Vec<LayerStepCache>,
    readout: Mat,
    logits: Mat,
}

/// Everything backward needs from a forward pass; no recomputation.
pub struct WindowCache {
    k: usize,
    b: usize,
    steps: Vec<StepCache>,
}

impl WindowCache {
    pub fn logits(&self, t: usize) -> &Mat {
        &self.steps[t].logits
    }
}

fn one_hot(row: &[u32], vocab: usize) -> Result<Mat> {
    let mut m = Mat::zeros(vocab, row.len());
    for (c, &tok) in row.iter().enumerate() {
        if tok as usize >= vocab {
            return Err(Error::TokenOutOfRange { token: tok, vocab });
        }
        m.set(tok as usize, c, 1.0);
    }
    Ok(m)
}

/// Run the lattice over one window. Returns per-timestep logits (V×B),
/// the carry after the last step, and the cache for backward.
pub fn forward_window(
    params: &NetworkParams,
    cfg: &NetworkConfig,
    window: &WindowBatch,
    carry: &CarriedState,
) -> Result<(Vec<Mat>, CarriedState, WindowCache)> {
    if carry.batch() != window.b {
        return Err(Error::InvalidConfig(format!(
            "carry batch {} does not match window batch {}",
            carry.batch(),
            window.b
        )));
    }
    let depth = params.layers.len();
    let mut carry = carry.clone();
    let mut steps = Vec::with_capacity(window.k);
    let mut all_logits = Vec::with_capacity(window.k);
    for t in 0..window.k {
        let mut h1 = one_hot(window.input_row(t), cfg.vocab)?;
        let mut layer_caches = Vec::with_capacity(depth);
        for l in 0..depth {
            let state_in = carry.layers[l].clone();
            let (h1_out, state_out, acts) = step_cell(&params.layers[l], &h1, &state_in, l == 0)?;
            layer_caches.push(LayerStepCache {
                h1_in: h1,
                state_in,
                acts,
            });
            carry.layers[l] = state_out;
            h1 = h1_out;
        }
        let readout = match cfg.readout {
            Readout::Vertical => h1,
            Readout::Horizontal => carry.layers[depth - 1].h2.clone(),
        };
        let logits = params
            .w_out
            .matmul(&readout)?
            .add_col_broadcast(&params.b_out)?;
        all_logits.push(logits.clone());
        steps.push(StepCache {
            layers: layer_caches,
            readout,
            logits,
        });
    }
    Ok((
        all_logits,
        carry,
        WindowCache {
            k: window.k,
            b: window.b,
            steps,
        },
    ))
}

/// Exact gradients of the mean CCE over the window, by reverse sweep over
/// time and depth. Gradients do not flow into the incoming carry.
///
/// Returns (grads, mean loss, per-layer L2 norms of the cell gradients).
pub fn backward_window(
    params: &NetworkParams,
    cfg: &NetworkConfig,
    cache: &WindowCache,
    targets: &[u32],
) -> Result<(NetworkParams, f64, Vec<f64>)> {
    let depth = params.layers.len();
    let (k, b) = (cache.k, cache.b);
    if targets.len() != k * b {
        return Err(Error::InvalidConfig(format!(
            "{} targets for a {k}x{b} window",
            targets.len()
        )));
    }
    let mut grads = params.zeros_like();
    let scale = 1.0 / (k * b) as f64;
    let kind = cfg.kind;
    let m = cfg.hidden;
    let mut d_carry: Vec<StateGrad> = (0..depth).map(|_| StateGrad::zeros(kind, m, b)).collect();
    let mut loss_sum = 0.0;

    for t in (0..k).rev() {
        let sc = &cache.steps[t];
        let tgt: Vec<usize> = targets[t * b..(t + 1) * b].iter().map(|&x| x as usize).collect();
        let (l, mut pg) = softmax_cce(&sc.logits, &tgt)?;
        loss_sum += l;
        pg.scale_in_place(scale);
        grads.w_out.add_assign(&pg.matmul_nt(&sc.readout)?)?;
        grads.b_out.add_assign(&pg.row_sums())?;
        let d_read = params.w_out.matmul_tn(&pg)?;

        let mut d_h1_out = match cfg.readout {
            Readout::Vertical => d_read,
            Readout::Horizontal => {
                d_carry[depth - 1].h2.add_assign(&d_read)?;
                Mat::zeros(m, b)
            }
        };
        for l in (0..depth).rev() {
            let lc = &sc.layers[l];
            let (dx, d_state_in) = backward_cell(
                &params.layers[l],
                &lc.h1_in,
                &lc.state_in,
                &lc.acts,
                &d_h1_out,
                &d_carry[l],
                &mut grads.layers[l],
                l == 0,
            )?;
            d_carry[l] = d_state_in;
            if l > 0 {
                d_h1_out = dx.expect("interior layers produce dx");
            }
        }
    }

    let layer_norms = grads
        .layers
        .iter()
        .map(|g| g.sum_squares().sqrt())
        .collect();
    Ok((grads, loss_sum * scale, layer_norms))
}

/// Feed `seed_text`, then sample `length` characters autoregressively.
/// Temperature 0 means argmax with ties broken toward the lowest token id.
pub fn sample_text(
    params: &NetworkParams,
    cfg: &NetworkConfig,
    vocab: &Vocab,
    seed_text: &str,
    length: usize,
    temperature: f64,
    seed: u64,
) -> Result<String> {
    if seed_text.is_empty() {
        return Err(Error::EmptyText);
    }
    if temperature < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "temperature {temperature} must be ≥ 0"
        )));
    }
    let mut rng = Rng::new(seed);
    let mut carry = CarriedState::zeros(cfg, 1);
    let mut last_logits = Mat::zeros(cfg.vocab, 1);
    let feed = |tok: u32, carry: &CarriedState| -> Result<(Mat, CarriedState)> {
        let window = WindowBatch {
            k: 1,
            b: 1,
            inputs: vec![tok],
            targets: vec![0],
        };
        let (logits, new_carry, _) = forward_window(params, cfg, &window, carry)?;
        Ok((logits.into_iter().next().unwrap(), new_carry))
    };
    for ch in seed_text.chars() {
        let tok = vocab.id_of(ch).ok_or(Error::OutOfVocabulary(ch))?;
        let (logits, new_carry) = feed(tok, &carry)?;
        last_logits = logits;
        carry = new_carry;
    }
    let mut out = String::with_capacity(length);
    for _ in 0..length {
        let tok = sample_token(&last_logits, temperature, &mut rng);
        out.push(vocab.char_of(tok).expect("sampled token is in range"));
        let (logits, new_carry) = feed(tok, &carry)?;
        last_logits = logits;
        carry = new_carry;
    }
    Ok(out)
}

fn sample_token(logits: &Mat, temperature: f64, rng: &mut Rng) -> u32 {
    let v = logits.rows();
    if temperature == 0.0 {
        let mut best = 0usize;
        let mut best_val = logits.get(0, 0);
        for r in 1..v {
            let x = logits.get(r, 0);
            if x > best_val {
                best = r;
                best_val = x;
            }
        }
        return best as u32;
    }
    let mut max = f64::NEG_INFINITY;
    for r in 0..v {
        max = max.max(logits.get(r, 0) / temperature);
    }
    let mut denom = 0.0;
    for r in 0..v {
        denom += (logits.get(r, 0) / temperature - max).exp();
    }
    let u = rng.next_f64();
    let mut cum = 0.0;
    for r in 0..v {
        cum += (logits.get(r, 0) / temperature - max).exp() / denom;
        if u < cum {
            return r as u32;
        }
    }
    (v - 1) as u32
}
