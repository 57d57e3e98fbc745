//! Pure, stateless step functions for each recurrent cell kind, their exact
//! hand-derived backward passes, and analytic parameter counting.
//!
//! Every gate in the family has the same anatomy: an affine map
//! `W·h1 + U·h2 + b` followed by a sigmoid or tanh. `CellParams` therefore
//! stores one (w, u, b) triple per gate, addressed by suffix ("z", "r1",
//! "h2", ...). Tensor order is canonical (alphabetical by name) and is the
//! order used for initialization, checkpoints, and optimizer state.

mod gru;
mod lru;
mod lstm;

pub use gru::{backward_gru, step_gru};
pub use lru::{
    backward_lru, backward_ps_lru, backward_rg_lru, step_lru, step_lru_input, step_ps_lru,
    step_ps_lru_input, step_rg_lru, step_rg_lru_input,
};
pub use lstm::{backward_grid_lstm, backward_lstm, step_grid_lstm, step_lstm, LstmActs};

use crate::error::{Error, Result};
use crate::numkit::{glorot_init, Mat, Rng};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// The six cell kinds under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Gru,
    PsLru,
    RgLru,
    Lru,
    Lstm,
    GridLstm,
}

impl CellKind {
    pub const ALL: [CellKind; 6] = [
        CellKind::Gru,
        CellKind::PsLru,
        CellKind::RgLru,
        CellKind::Lru,
        CellKind::Lstm,
        CellKind::GridLstm,
    ];

    /// Gate suffixes in canonical (alphabetical) order.
    pub fn gate_suffixes(self, tied: bool) -> &'static [&'static str] {
        match self {
            CellKind::Gru => &["h", "r", "z"],
            CellKind::PsLru => &["h1", "h2", "r", "z"],
            CellKind::RgLru => &["h1", "h2", "r1", "r2", "z"],
            CellKind::Lru => &["h1", "h2", "r1", "r2", "z1", "z2"],
            CellKind::Lstm => &["f", "g", "i", "o"],
            CellKind::GridLstm => {
                if tied {
                    &["f", "g", "i", "o"]
                } else {
                    &["f1", "f2", "g1", "g2", "i1", "i2", "o1", "o2"]
                }
            }
        }
    }

    /// Number of (W, U, b) gate sets.
    pub fn gate_sets(self, tied: bool) -> usize {
        self.gate_suffixes(tied).len()
    }

    pub fn uses_memory(self) -> bool {
        matches!(self, CellKind::Lstm | CellKind::GridLstm)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CellKind::Gru => "gru",
            CellKind::PsLru => "ps-lru",
            CellKind::RgLru => "rg-lru",
            CellKind::Lru => "lru",
            CellKind::Lstm => "lstm",
            CellKind::GridLstm => "grid-lstm",
        };
        f.write_str(s)
    }
}

impl FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<CellKind> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "ps-lru" | "ps_lru" | "pslru" => Ok(CellKind::PsLru),
            "rg-lru" | "rg_lru" | "rglru" => Ok(CellKind::RgLru),
            "lru" | "ug-lru" | "ug_lru" => Ok(CellKind::Lru),
            "lstm" => Ok(CellKind::Lstm),
            "grid-lstm" | "grid_lstm" | "gridlstm" => Ok(CellKind::GridLstm),
            other => Err(Error::InvalidConfig(format!("unknown cell kind {other:?}"))),
        }
    }
}

/// Exact trainable scalar count for one cell, biases included:
/// `gate_sets · (m·d + m² + m)`.
pub fn count_cell_params(kind: CellKind, d: usize, m: usize, tied: bool) -> usize {
    kind.gate_sets(tied) * (m * d + m * m + m)
}

/// One gate's parameter triple, viewed by reference.
pub struct GateRef<'a> {
    pub w: &'a Mat,
    pub u: &'a Mat,
    pub b: &'a Mat,
}

/// The weight/bias bundle for one cell. Tensors are named `w_<g>` (m×d),
/// `u_<g>` (m×m), `b_<g>` (m×1) per gate suffix `<g>` and stored in
/// alphabetical name order.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    kind: CellKind,
    d: usize,
    m: usize,
    tied: bool,
    tensors: Vec<Mat>,
}

impl CellParams {
    fn build(kind: CellKind, d: usize, m: usize, tied: bool, mut init: impl FnMut(usize, usize) -> Mat) -> CellParams {
        let mut tensors = Vec::new();
        for prefix in [b'b', b'u', b'w'] {
            for _suffix in kind.gate_suffixes(tied) {
                let t = match prefix {
                    b'b' => Mat::zeros(m, 1),
                    b'u' => init(m, m),
                    _ => init(m, d),
                };
                tensors.push(t);
            }
        }
        CellParams {
            kind,
            d,
            m,
            tied,
            tensors,
        }
    }

    pub fn zeros(kind: CellKind, d: usize, m: usize, tied: bool) -> CellParams {
        Self::build(kind, d, m, tied, |r, c| Mat::zeros(r, c))
    }

    /// Glorot-uniform weights, zero biases. Draw order is the canonical
    /// tensor order, so a given rng state yields identical parameters.
    pub fn glorot(kind: CellKind, d: usize, m: usize, tied: bool, rng: &mut Rng) -> CellParams {
        Self::build(kind, d, m, tied, |r, c| glorot_init(rng, r, c))
    }

    pub fn zeros_like(&self) -> CellParams {
        CellParams::zeros(self.kind, self.d, self.m, self.tied)
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn hidden_dim(&self) -> usize {
        self.m
    }

    pub fn tied(&self) -> bool {
        self.tied
    }

    /// Tensor names in canonical order: all `b_*`, then `u_*`, then `w_*`,
    /// each sorted by gate suffix. That ordering is alphabetical.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.tensors.len());
        for prefix in ['b', 'u', 'w'] {
            for suffix in self.kind.gate_suffixes(self.tied) {
                names.push(format!("{prefix}_{suffix}"));
            }
        }
        names
    }

    fn index_of(&self, prefix: u8, suffix: &str) -> usize {
        let suffixes = self.kind.gate_suffixes(self.tied);
        let n = suffixes.len();
        let group = match prefix {
            b'b' => 0,
            b'u' => 1,
            b'w' => 2,
            _ => panic!("bad tensor prefix"),
        };
        let pos = suffixes
            .iter()
            .position(|s| *s == suffix)
            .unwrap_or_else(|| panic!("{} has no gate {suffix:?}", self.kind));
        group * n + pos
    }

    pub fn mat(&self, prefix: u8, suffix: &str) -> &Mat {
        &self.tensors[self.index_of(prefix, suffix)]
    }

    pub fn mat_mut(&mut self, prefix: u8, suffix: &str) -> &mut Mat {
        let i = self.index_of(prefix, suffix);
        &mut self.tensors[i]
    }

    pub fn gate(&self, suffix: &str) -> GateRef<'_> {
        GateRef {
            w: self.mat(b'w', suffix),
            u: self.mat(b'u', suffix),
            b: self.mat(b'b', suffix),
        }
    }

    pub fn add_to(&mut self, prefix: u8, suffix: &str, delta: &Mat) -> Result<()> {
        self.mat_mut(prefix, suffix).add_assign(delta)
    }

    pub fn tensors(&self) -> &[Mat] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Mat] {
        &mut self.tensors
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Mat::len).sum()
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors.iter().map(Mat::sum_squares).sum()
    }
}

/// The per-layer recurrent carry: hidden state along time, plus memory
/// states for the LSTM kinds (`m1` only for LSTM, both for Grid-LSTM).
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h2: Mat,
    pub m1: Option<Mat>,
    pub m2: Option<Mat>,
}

impl CellState {
    pub fn zeros(kind: CellKind, m: usize, batch: usize) -> CellState {
        CellState {
            h2: Mat::zeros(m, batch),
            m1: kind.uses_memory().then(|| Mat::zeros(m, batch)),
            m2: (kind == CellKind::GridLstm).then(|| Mat::zeros(m, batch)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h2.is_finite()
            && self.m1.as_ref().map_or(true, Mat::is_finite)
            && self.m2.as_ref().map_or(true, Mat::is_finite)
    }
}

/// Gradients flowing into a cell's state outputs (same shape as CellState).
#[derive(Debug, Clone)]
pub struct StateGrad {
    pub h2: Mat,
    pub m1: Option<Mat>,
    pub m2: Option<Mat>,
}

impl StateGrad {
    pub fn zeros(kind: CellKind, m: usize, batch: usize) -> StateGrad {
        StateGrad {
            h2: Mat::zeros(m, batch),
            m1: kind.uses_memory().then(|| Mat::zeros(m, batch)),
            m2: (kind == CellKind::GridLstm).then(|| Mat::zeros(m, batch)),
        }
    }
}

/// Gate and candidate values recorded during forward for use by backward.
#[derive(Debug, Clone)]
pub enum CellActivations {
    Gru {
        z: Mat,
        r: Mat,
        h_hat: Mat,
    },
    PsLru {
        z: Mat,
        r: Mat,
        h_hat1: Mat,
        h_hat2: Mat,
    },
    RgLru {
        z: Mat,
        r1: Mat,
        r2: Mat,
        h_hat1: Mat,
        h_hat2: Mat,
    },
    Lru {
        z1: Mat,
        z2: Mat,
        r1: Mat,
        r2: Mat,
        h_hat1: Mat,
        h_hat2: Mat,
    },
    Lstm(LstmActs),
    GridLstm {
        dim1: LstmActs,
        dim2: LstmActs,
    },
}

impl CellActivations {
    /// All sigmoid gate outputs (for range checks).
    pub fn gate_values(&self) -> Vec<&Mat> {
        match self {
            CellActivations::Gru { z, r, .. } => vec![z, r],
            CellActivations::PsLru { z, r, .. } => vec![z, r],
            CellActivations::RgLru { z, r1, r2, .. } => vec![z, r1, r2],
            CellActivations::Lru { z1, z2, r1, r2, .. } => vec![z1, z2, r1, r2],
            CellActivations::Lstm(a) => vec![&a.i, &a.f, &a.o],
            CellActivations::GridLstm { dim1, dim2 } => {
                vec![&dim1.i, &dim1.f, &dim1.o, &dim2.i, &dim2.f, &dim2.o]
            }
        }
    }

    /// All tanh projected states (for range checks).
    pub fn candidate_values(&self) -> Vec<&Mat> {
        match self {
            CellActivations::Gru { h_hat, .. } => vec![h_hat],
            CellActivations::PsLru { h_hat1, h_hat2, .. } => vec![h_hat1, h_hat2],
            CellActivations::RgLru { h_hat1, h_hat2, .. } => vec![h_hat1, h_hat2],
            CellActivations::Lru { h_hat1, h_hat2, .. } => vec![h_hat1, h_hat2],
            CellActivations::Lstm(a) => vec![&a.g],
            CellActivations::GridLstm { dim1, dim2 } => vec![&dim1.g, &dim2.g],
        }
    }
}

/// d(sigmoid) through a recorded activation: `dact ⊙ s ⊙ (1−s)`.
pub(crate) fn dsigmoid(act: &Mat, dact: &Mat) -> Mat {
    let mut out = dact.clone();
    for (o, &s) in out.data_mut().iter_mut().zip(act.data()) {
        *o *= s * (1.0 - s);
    }
    out
}

/// d(tanh) through a recorded activation: `dact ⊙ (1−c²)`.
pub(crate) fn dtanh(act: &Mat, dact: &Mat) -> Mat {
    let mut out = dact.clone();
    for (o, &c) in out.data_mut().iter_mut().zip(act.data()) {
        *o *= 1.0 - c * c;
    }
    out
}

/// Backprop through one gate pre-activation `a = W·x + U·y + b`.
/// Accumulates dW, dU, db into `grads` and returns (dx, dy); dx is skipped
/// when the input side is a one-hot layer whose gradient nobody consumes.
pub(crate) fn backprop_gate(
    p: &CellParams,
    grads: &mut CellParams,
    suffix: &str,
    x: &Mat,
    y: &Mat,
    dpre: &Mat,
    need_dx: bool,
) -> Result<(Option<Mat>, Mat)> {
    grads.add_to(b'w', suffix, &dpre.matmul_nt(x)?)?;
    grads.add_to(b'u', suffix, &dpre.matmul_nt(y)?)?;
    grads.add_to(b'b', suffix, &dpre.row_sums())?;
    let dx = if need_dx {
        Some(p.mat(b'w', suffix).matmul_tn(dpre)?)
    } else {
        None
    };
    let dy = p.mat(b'u', suffix).matmul_tn(dpre)?;
    Ok((dx, dy))
}

pub(crate) fn add_opt(acc: &mut Option<Mat>, delta: Option<Mat>) -> Result<()> {
    if let Some(d) = delta {
        match acc {
            Some(a) => a.add_assign(&d)?,
            None => *acc = Some(d),
        }
    }
    Ok(())
}

/// Unified forward dispatch for the lattice. `input_boundary` marks layer 0,
/// where the vertical input is raw (one-hot) data rather than a carried
/// state; the LRU-family kinds use their input-layer variants there.
pub fn step_cell(
    p: &CellParams,
    h1: &Mat,
    state: &CellState,
    input_boundary: bool,
) -> Result<(Mat, CellState, CellActivations)> {
    match p.kind() {
        CellKind::Gru => {
            let (h1n, h2n, acts) = step_gru(p, h1, &state.h2)?;
            Ok((
                h1n,
                CellState {
                    h2: h2n,
                    m1: None,
                    m2: None,
                },
                acts,
            ))
        }
        CellKind::PsLru => {
            let (h1n, h2n, acts) = if input_boundary {
                step_ps_lru_input(p, h1, &state.h2)?
            } else {
                step_ps_lru(p, h1, &state.h2)?
            };
            Ok((
                h1n,
                CellState {
                    h2: h2n,
                    m1: None,
                    m2: None,
                },
                acts,
            ))
        }
        CellKind::RgLru => {
            let (h1n, h2n, acts) = if input_boundary {
                step_rg_lru_input(p, h1, &state.h2)?
            } else {
                step_rg_lru(p, h1, &state.h2)?
            };
            Ok((
                h1n,
                CellState {
                    h2: h2n,
                    m1: None,
                    m2: None,
                },
                acts,
            ))
        }
        CellKind::Lru => {
            let (h1n, h2n, acts) = if input_boundary {
                step_lru_input(p, h1, &state.h2)?
            } else {
                step_lru(p, h1, &state.h2)?
            };
            Ok((
                h1n,
                CellState {
                    h2: h2n,
                    m1: None,
                    m2: None,
                },
                acts,
            ))
        }
        CellKind::Lstm => {
            let m = state.m1.as_ref().expect("LSTM state has memory");
            let (h1n, h2n, mn, acts) = step_lstm(p, h1, &state.h2, m)?;
            Ok((
                h1n,
                CellState {
                    h2: h2n,
                    m1: Some(mn),
                    m2: None,
                },
                acts,
            ))
        }
        CellKind::GridLstm => {
            let m1 = state.m1.as_ref().expect("Grid-LSTM state has m1");
            let m2 = state.m2.as_ref().expect("Grid-LSTM state has m2");
            let (h1n, h2n, m1n, m2n, acts) = step_grid_lstm(p, h1, &state.h2, m1, m2)?;
            Ok((
                h1n,
                CellState {
                    h2: h2n,
                    m1: Some(m1n),
                    m2: Some(m2n),
                },
                acts,
            ))
        }
    }
}

/// Unified backward dispatch. Returns the gradient w.r.t. the vertical
/// input (None at the input boundary) and w.r.t. the incoming state.
#[allow(clippy::too_many_arguments)]
pub fn backward_cell(
    p: &CellParams,
    h1: &Mat,
    state: &CellState,
    acts: &CellActivations,
    d_h1_out: &Mat,
    d_state_out: &StateGrad,
    grads: &mut CellParams,
    input_boundary: bool,
) -> Result<(Option<Mat>, StateGrad)> {
    let need_dx = !input_boundary;
    match (p.kind(), acts) {
        (CellKind::Gru, CellActivations::Gru { z, r, h_hat }) => {
            let (dx, dh2) = backward_gru(
                p, h1, &state.h2, z, r, h_hat, d_h1_out, &d_state_out.h2, grads, need_dx,
            )?;
            Ok((
                dx,
                StateGrad {
                    h2: dh2,
                    m1: None,
                    m2: None,
                },
            ))
        }
        (CellKind::PsLru, CellActivations::PsLru { .. }) => {
            let (dx, dh2) = backward_ps_lru(
                p,
                h1,
                &state.h2,
                acts,
                d_h1_out,
                &d_state_out.h2,
                grads,
                input_boundary,
            )?;
            Ok((
                dx,
                StateGrad {
                    h2: dh2,
                    m1: None,
                    m2: None,
                },
            ))
        }
        (CellKind::RgLru, CellActivations::RgLru { .. }) => {
            let (dx, dh2) = backward_rg_lru(
                p,
                h1,
                &state.h2,
                acts,
                d_h1_out,
                &d_state_out.h2,
                grads,
                input_boundary,
            )?;
            Ok((
                dx,
                StateGrad {
                    h2: dh2,
                    m1: None,
                    m2: None,
                },
            ))
        }
        (CellKind::Lru, CellActivations::Lru { .. }) => {
            let (dx, dh2) = backward_lru(
                p,
                h1,
                &state.h2,
                acts,
                d_h1_out,
                &d_state_out.h2,
                grads,
                input_boundary,
            )?;
            Ok((
                dx,
                StateGrad {
                    h2: dh2,
                    m1: None,
                    m2: None,
                },
            ))
        }
        (CellKind::Lstm, CellActivations::Lstm(a)) => {
            let m_in = state.m1.as_ref().expect("LSTM state has memory");
            let d_m_out = d_state_out.m1.as_ref().expect("LSTM grad has memory");
            let (dx, dh2, dm) = backward_lstm(
                p, h1, &state.h2, m_in, a, d_h1_out, &d_state_out.h2, d_m_out, grads, need_dx,
            )?;
            Ok((
                dx,
                StateGrad {
                    h2: dh2,
                    m1: Some(dm),
                    m2: None,
                },
            ))
        }
        (CellKind::GridLstm, CellActivations::GridLstm { dim1, dim2 }) => {
            let m1_in = state.m1.as_ref().expect("Grid-LSTM state has m1");
            let m2_in = state.m2.as_ref().expect("Grid-LSTM state has m2");
            let d_m1 = d_state_out.m1.as_ref().expect("grad m1");
            let d_m2 = d_state_out.m2.as_ref().expect("grad m2");
            let (dx, dh2, dm1, dm2) = backward_grid_lstm(
                p,
                h1,
                &state.h2,
                m1_in,
                m2_in,
                dim1,
                dim2,
                d_h1_out,
                &d_state_out.h2,
                d_m1,
                d_m2,
                grads,
                need_dx,
            )?;
            Ok((
                dx,
                StateGrad {
                    h2: dh2,
                    m1: Some(dm1),
                    m2: Some(dm2),
                },
            ))
        }
        (kind, _) => Err(Error::InvalidConfig(format!(
            "activation cache does not match cell kind {kind}"
        ))),
    }
}
