//! LSTM and two-dimensional Grid-LSTM step functions.
//!
//! The LSTM function is the standard formulation: gates i, f, o and
//! candidate g, no peepholes; m' = f⊙m + i⊙g, h' = o⊙tanh(m'). The
//! Grid-LSTM applies that function twice on the shared input pair
//! (h1, h2), once per dimension with its own memory and (unless tied)
//! its own parameter set.

use super::{add_opt, backprop_gate, dsigmoid, dtanh, CellActivations, CellParams};
use crate::error::Result;
use crate::numkit::{affine_pair, Mat};

/// Activations recorded by one internal LSTM application.
#[derive(Debug, Clone)]
pub struct LstmActs {
    pub i: Mat,
    pub f: Mat,
    pub o: Mat,
    pub g: Mat,
    pub m_new: Mat,
    pub tanh_m_new: Mat,
}

/// Gate suffixes used by one internal LSTM application.
#[derive(Clone, Copy)]
struct LstmGates {
    i: &'static str,
    f: &'static str,
    o: &'static str,
    g: &'static str,
}

const PLAIN: LstmGates = LstmGates {
    i: "i",
    f: "f",
    o: "o",
    g: "g",
};
const DIM1: LstmGates = LstmGates {
    i: "i1",
    f: "f1",
    o: "o1",
    g: "g1",
};
const DIM2: LstmGates = LstmGates {
    i: "i2",
    f: "f2",
    o: "o2",
    g: "g2",
};

fn lstm_apply(
    p: &CellParams,
    gates: LstmGates,
    h1: &Mat,
    h2: &Mat,
    m: &Mat,
) -> Result<(Mat, Mat, LstmActs)> {
    let gi = p.gate(gates.i);
    let gf = p.gate(gates.f);
    let go = p.gate(gates.o);
    let gg = p.gate(gates.g);
    let i = affine_pair(gi.w, h1, gi.u, h2, gi.b)?.sigmoid();
    let f = affine_pair(gf.w, h1, gf.u, h2, gf.b)?.sigmoid();
    let o = affine_pair(go.w, h1, go.u, h2, go.b)?.sigmoid();
    let g = affine_pair(gg.w, h1, gg.u, h2, gg.b)?.tanh();
    let m_new = f.hadamard(m)?.add(&i.hadamard(&g)?)?;
    let tanh_m_new = m_new.tanh();
    let h_new = o.hadamard(&tanh_m_new)?;
    Ok((
        h_new,
        m_new.clone(),
        LstmActs {
            i,
            f,
            o,
            g,
            m_new,
            tanh_m_new,
        },
    ))
}

/// Backward through one internal LSTM application. `gh` is the combined
/// gradient on the hidden output, `gm` the gradient on the memory output.
#[allow(clippy::too_many_arguments)]
fn lstm_backprop(
    p: &CellParams,
    gates: LstmGates,
    h1: &Mat,
    h2: &Mat,
    m_in: &Mat,
    a: &LstmActs,
    gh: &Mat,
    gm: &Mat,
    grads: &mut CellParams,
    need_dx: bool,
) -> Result<(Option<Mat>, Mat, Mat)> {
    // h' = o⊙tanh(m'), m' = f⊙m + i⊙g
    let do_ = gh.hadamard(&a.tanh_m_new)?;
    let dm_total = gm.add(&dtanh(&a.tanh_m_new, &gh.hadamard(&a.o)?))?;
    let df = dm_total.hadamard(m_in)?;
    let di = dm_total.hadamard(&a.g)?;
    let dg = dm_total.hadamard(&a.i)?;
    let dm_in = dm_total.hadamard(&a.f)?;

    let mut dx: Option<Mat> = None;
    let mut dh2 = Mat::zeros(h2.rows(), h2.cols());
    for (suffix, act, dact, is_tanh) in [
        (gates.i, &a.i, &di, false),
        (gates.f, &a.f, &df, false),
        (gates.o, &a.o, &do_, false),
        (gates.g, &a.g, &dg, true),
    ] {
        let dpre = if is_tanh {
            dtanh(act, dact)
        } else {
            dsigmoid(act, dact)
        };
        let (dxi, dyi) = backprop_gate(p, grads, suffix, h1, h2, &dpre, need_dx)?;
        add_opt(&mut dx, dxi)?;
        dh2.add_assign(&dyi)?;
    }
    Ok((dx, dh2, dm_in))
}

/// One LSTM step; the single hidden output is replicated vertically
/// (h1' = h2'), mirroring the stacked-GRU convention.
pub fn step_lstm(
    p: &CellParams,
    h1: &Mat,
    h2: &Mat,
    m: &Mat,
) -> Result<(Mat, Mat, Mat, CellActivations)> {
    let (h_new, m_new, acts) = lstm_apply(p, PLAIN, h1, h2, m)?;
    Ok((
        h_new.clone(),
        h_new,
        m_new,
        CellActivations::Lstm(acts),
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn backward_lstm(
    p: &CellParams,
    h1: &Mat,
    h2: &Mat,
    m_in: &Mat,
    a: &LstmActs,
    d_h1_out: &Mat,
    d_h2_out: &Mat,
    d_m_out: &Mat,
    grads: &mut CellParams,
    need_dx: bool,
) -> Result<(Option<Mat>, Mat, Mat)> {
    let gh = d_h1_out.add(d_h2_out)?;
    lstm_backprop(p, PLAIN, h1, h2, m_in, a, &gh, d_m_out, grads, need_dx)
}

/// One Grid-LSTM step: (h1', m1') = LSTM(h1, h2, m1, W1) and
/// (h2', m2') = LSTM(h1, h2, m2, W2). With tied weights both dimensions
/// share one parameter set.
pub fn step_grid_lstm(
    p: &CellParams,
    h1: &Mat,
    h2: &Mat,
    m1: &Mat,
    m2: &Mat,
) -> Result<(Mat, Mat, Mat, Mat, CellActivations)> {
    let (g1, g2) = if p.tied() { (PLAIN, PLAIN) } else { (DIM1, DIM2) };
    let (h1_new, m1_new, acts1) = lstm_apply(p, g1, h1, h2, m1)?;
    let (h2_new, m2_new, acts2) = lstm_apply(p, g2, h1, h2, m2)?;
    Ok((
        h1_new,
        h2_new,
        m1_new,
        m2_new,
        CellActivations::GridLstm {
            dim1: acts1,
            dim2: acts2,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn backward_grid_lstm(
    p: &CellParams,
    h1: &Mat,
    h2: &Mat,
    m1_in: &Mat,
    m2_in: &Mat,
    acts1: &LstmActs,
    acts2: &LstmActs,
    d_h1_out: &Mat,
    d_h2_out: &Mat,
    d_m1_out: &Mat,
    d_m2_out: &Mat,
    grads: &mut CellParams,
    need_dx: bool,
) -> Result<(Option<Mat>, Mat, Mat, Mat)> {
    let (g1, g2) = if p.tied() { (PLAIN, PLAIN) } else { (DIM1, DIM2) };
    let (mut dx, mut dh2, dm1) =
        lstm_backprop(p, g1, h1, h2, m1_in, acts1, d_h1_out, d_m1_out, grads, need_dx)?;
    let (dx_b, dh2_b, dm2) =
        lstm_backprop(p, g2, h1, h2, m2_in, acts2, d_h2_out, d_m2_out, grads, need_dx)?;
    add_opt(&mut dx, dx_b)?;
    dh2.add_assign(&dh2_b)?;
    Ok((dx, dh2, dm1, dm2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;
    use crate::numkit::{glorot_init, Rng};

    fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    /// Independent scalar LSTM for d = m = 1 with uniform weight w, bias b.
    fn scalar_lstm_oracle(w: f64, b: f64, h1: f64, h2: f64, m: f64) -> (f64, f64) {
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let i = sig(w * h1 + w * h2 + b);
        let f = sig(w * h1 + w * h2 + b);
        let o = sig(w * h1 + w * h2 + b);
        let g = (w * h1 + w * h2 + b).tanh();
        let mn = f * m + i * g;
        (o * mn.tanh(), mn)
    }

    #[test]
    fn zero_params_forced_values() {
        let p = CellParams::zeros(CellKind::Lstm, 1, 1, false);
        let (h1n, h2n, mn, _) =
            step_lstm(&p, &Mat::col(&[1.0]), &Mat::col(&[0.0]), &Mat::col(&[0.8])).unwrap();
        assert!((mn.get(0, 0) - 0.4).abs() < 1e-15);
        let want = 0.5 * 0.4f64.tanh();
        assert!((h2n.get(0, 0) - want).abs() < 1e-12);
        assert!((want - 0.189974).abs() < 1e-6);
        assert_eq!(h1n.data(), h2n.data());
    }

    #[test]
    fn saturated_gates_freeze_memory() {
        let mut p = CellParams::zeros(CellKind::Lstm, 2, 2, false);
        p.mat_mut(b'b', "f").data_mut().fill(50.0);
        p.mat_mut(b'b', "i").data_mut().fill(-50.0);
        p.mat_mut(b'b', "o").data_mut().fill(50.0);
        let m = Mat::col(&[0.8, -0.3]);
        let (_, h2n, mn, _) =
            step_lstm(&p, &Mat::col(&[1.0, 2.0]), &Mat::col(&[0.1, 0.2]), &m).unwrap();
        assert!(max_abs_diff(&mn, &m) <= 1e-12);
        assert!(max_abs_diff(&h2n, &m.tanh()) <= 1e-12);
    }

    #[test]
    fn scalar_all_ones_matches_hand_oracle() {
        let mut p = CellParams::zeros(CellKind::Lstm, 1, 1, false);
        for suffix in ["i", "f", "o", "g"] {
            p.mat_mut(b'w', suffix).data_mut()[0] = 1.0;
            p.mat_mut(b'u', suffix).data_mut()[0] = 1.0;
        }
        let (_, h2n, mn, _) =
            step_lstm(&p, &Mat::col(&[0.5]), &Mat::col(&[0.25]), &Mat::col(&[0.1])).unwrap();
        let (want_h, want_m) = scalar_lstm_oracle(1.0, 0.0, 0.5, 0.25, 0.1);
        assert!((h2n.get(0, 0) - want_h).abs() < 1e-15);
        assert!((mn.get(0, 0) - want_m).abs() < 1e-15);
    }

    #[test]
    fn grid_symmetric_inputs_give_equal_outputs() {
        let mut rng = Rng::new(7);
        let m = 4;
        let mut p = CellParams::glorot(CellKind::GridLstm, m, m, false, &mut rng);
        // copy dim1 gate set into dim2
        for g in ["i", "f", "o", "g"] {
            for prefix in [b'w', b'u', b'b'] {
                let t = p.mat(prefix, &format!("{g}1")).clone();
                *p.mat_mut(prefix, &format!("{g}2")) = t;
            }
        }
        let h1 = glorot_init(&mut rng, m, 2);
        let h2 = glorot_init(&mut rng, m, 2);
        let mem = glorot_init(&mut rng, m, 2);
        let (h1n, h2n, m1n, m2n, _) = step_grid_lstm(&p, &h1, &h2, &mem, &mem).unwrap();
        assert_eq!(h1n.data(), h2n.data());
        assert_eq!(m1n.data(), m2n.data());
    }

    #[test]
    fn grid_zero_params_forced_values() {
        let p = CellParams::zeros(CellKind::GridLstm, 1, 1, false);
        let (h1n, h2n, _, _, _) = step_grid_lstm(
            &p,
            &Mat::col(&[1.0]),
            &Mat::col(&[0.0]),
            &Mat::col(&[0.8]),
            &Mat::col(&[0.0]),
        )
        .unwrap();
        assert!((h1n.get(0, 0) - 0.5 * 0.4f64.tanh()).abs() < 1e-12);
        assert_eq!(h2n.get(0, 0), 0.0);
    }

    #[test]
    fn grid_scalar_matches_two_independent_lstm_oracles() {
        let mut p = CellParams::zeros(CellKind::GridLstm, 1, 1, false);
        for suffix in p.kind().gate_suffixes(false) {
            p.mat_mut(b'w', suffix).data_mut()[0] = 1.0;
            p.mat_mut(b'u', suffix).data_mut()[0] = 1.0;
        }
        let (h1, h2, m1, m2) = (0.5, 0.25, 0.1, -0.2);
        let (h1n, h2n, m1n, m2n, _) = step_grid_lstm(
            &p,
            &Mat::col(&[h1]),
            &Mat::col(&[h2]),
            &Mat::col(&[m1]),
            &Mat::col(&[m2]),
        )
        .unwrap();
        let (wh1, wm1) = scalar_lstm_oracle(1.0, 0.0, h1, h2, m1);
        let (wh2, wm2) = scalar_lstm_oracle(1.0, 0.0, h1, h2, m2);
        assert!((h1n.get(0, 0) - wh1).abs() < 1e-15);
        assert!((m1n.get(0, 0) - wm1).abs() < 1e-15);
        assert!((h2n.get(0, 0) - wh2).abs() < 1e-15);
        assert!((m2n.get(0, 0) - wm2).abs() < 1e-15);
    }

    #[test]
    fn tied_grid_uses_single_gate_set() {
        let mut rng = Rng::new(9);
        let p = CellParams::glorot(CellKind::GridLstm, 3, 3, true, &mut rng);
        assert_eq!(p.tensor_names().len(), 12);
        let h1 = glorot_init(&mut rng, 3, 2);
        let h2 = glorot_init(&mut rng, 3, 2);
        let mem = glorot_init(&mut rng, 3, 2);
        let (h1n, h2n, m1n, m2n, _) = step_grid_lstm(&p, &h1, &h2, &mem, &mem).unwrap();
        // identical params and identical memories: the two dims coincide
        assert_eq!(h1n.data(), h2n.data());
        assert_eq!(m1n.data(), m2n.data());
    }
}
