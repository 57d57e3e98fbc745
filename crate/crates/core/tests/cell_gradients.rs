//! Central finite-difference verification of every cell backward pass,
//! for all six kinds, at d = m ∈ {3, 5}, plus the input-boundary variants
//! at d ≠ m. The loss is a fixed random weighting of all step outputs so
//! that sign errors cannot cancel.

use lru_core::cells::{
    backward_cell, step_cell, CellKind, CellParams, CellState, StateGrad,
};
use lru_core::numkit::{glorot_init, Mat, Rng};

const FD_STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;
const DENOM_FLOOR: f64 = 1e-8;

struct Probe {
    w_h1: Mat,
    w_h2: Mat,
    w_m1: Option<Mat>,
    w_m2: Option<Mat>,
}

impl Probe {
    fn new(kind: CellKind, m: usize, b: usize, rng: &mut Rng) -> Probe {
        Probe {
            w_h1: glorot_init(rng, m, b),
            w_h2: glorot_init(rng, m, b),
            w_m1: kind.uses_memory().then(|| glorot_init(rng, m, b)),
            w_m2: (kind == CellKind::GridLstm).then(|| glorot_init(rng, m, b)),
        }
    }

    fn loss(
        &self,
        p: &CellParams,
        h1: &Mat,
        state: &CellState,
        boundary: bool,
    ) -> f64 {
        let (h1n, sn, _) = step_cell(p, h1, state, boundary).unwrap();
        let dot = |a: &Mat, b: &Mat| -> f64 {
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
        };
        let mut l = dot(&h1n, &self.w_h1) + dot(&sn.h2, &self.w_h2);
        if let (Some(m1), Some(w)) = (&sn.m1, &self.w_m1) {
            l += dot(m1, w);
        }
        if let (Some(m2), Some(w)) = (&sn.m2, &self.w_m2) {
            l += dot(m2, w);
        }
        l
    }

    fn upstream(&self, kind: CellKind) -> (Mat, StateGrad) {
        (
            self.w_h1.clone(),
            StateGrad {
                h2: self.w_h2.clone(),
                m1: self.w_m1.clone(),
                m2: (kind == CellKind::GridLstm).then(|| self.w_m2.clone().unwrap()),
            },
        )
    }
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(DENOM_FLOOR)
}

fn check_kind(kind: CellKind, d: usize, m: usize, b: usize, boundary: bool, seed: u64) {
    let mut rng = Rng::new(seed);
    let p = CellParams::glorot(kind, d, m, false, &mut rng);
    let h1 = glorot_init(&mut rng, d, b);
    let mut state = CellState::zeros(kind, m, b);
    state.h2 = glorot_init(&mut rng, m, b);
    if let Some(m1) = &mut state.m1 {
        *m1 = glorot_init(&mut rng, m, b);
    }
    if let Some(m2) = &mut state.m2 {
        *m2 = glorot_init(&mut rng, m, b);
    }
    let probe = Probe::new(kind, m, b, &mut rng);

    let (_, acts) = {
        let (_, _, acts) = step_cell(&p, &h1, &state, boundary).unwrap();
        ((), acts)
    };
    let mut grads = p.zeros_like();
    let (d_h1_up, d_state_up) = probe.upstream(kind);
    let (dx, dstate) = backward_cell(
        &p, &h1, &state, &acts, &d_h1_up, &d_state_up, &mut grads, boundary,
    )
    .unwrap();

    // Parameters.
    let names = p.tensor_names();
    for (ti, name) in names.iter().enumerate() {
        for e in 0..p.tensors()[ti].len() {
            let orig = p.tensors()[ti].data()[e];
            let mut pp = p.clone();
            pp.tensors_mut()[ti].data_mut()[e] = orig + FD_STEP;
            let lp = probe.loss(&pp, &h1, &state, boundary);
            pp.tensors_mut()[ti].data_mut()[e] = orig - FD_STEP;
            let lm = probe.loss(&pp, &h1, &state, boundary);
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let an = grads.tensors()[ti].data()[e];
            assert!(
                rel_err(an, fd) <= TOL,
                "{kind} {name}[{e}] boundary={boundary}: analytic {an:.3e}, fd {fd:.3e}"
            );
        }
    }

    // Inputs.
    if !boundary {
        let dx = dx.expect("interior step produces dx");
        for e in 0..h1.len() {
            let orig = h1.data()[e];
            let mut hp = h1.clone();
            hp.data_mut()[e] = orig + FD_STEP;
            let lp = probe.loss(&p, &hp, &state, boundary);
            hp.data_mut()[e] = orig - FD_STEP;
            let lm = probe.loss(&p, &hp, &state, boundary);
            let fd = (lp - lm) / (2.0 * FD_STEP);
            assert!(
                rel_err(dx.data()[e], fd) <= TOL,
                "{kind} d_h1[{e}]: analytic {:.3e}, fd {fd:.3e}",
                dx.data()[e]
            );
        }
    }
    for e in 0..state.h2.len() {
        let orig = state.h2.data()[e];
        let mut s = state.clone();
        s.h2.data_mut()[e] = orig + FD_STEP;
        let lp = probe.loss(&p, &h1, &s, boundary);
        s.h2.data_mut()[e] = orig - FD_STEP;
        let lm = probe.loss(&p, &h1, &s, boundary);
        let fd = (lp - lm) / (2.0 * FD_STEP);
        assert!(
            rel_err(dstate.h2.data()[e], fd) <= TOL,
            "{kind} d_h2[{e}]: analytic {:.3e}, fd {fd:.3e}",
            dstate.h2.data()[e]
        );
    }
    if let Some(m1) = &state.m1 {
        let dm1 = dstate.m1.as_ref().unwrap();
        for e in 0..m1.len() {
            let orig = m1.data()[e];
            let mut s = state.clone();
            s.m1.as_mut().unwrap().data_mut()[e] = orig + FD_STEP;
            let lp = probe.loss(&p, &h1, &s, boundary);
            s.m1.as_mut().unwrap().data_mut()[e] = orig - FD_STEP;
            let lm = probe.loss(&p, &h1, &s, boundary);
            let fd = (lp - lm) / (2.0 * FD_STEP);
            assert!(
                rel_err(dm1.data()[e], fd) <= TOL,
                "{kind} d_m1[{e}]: analytic {:.3e}, fd {fd:.3e}",
                dm1.data()[e]
            );
        }
    }
    if let Some(m2) = &state.m2 {
        let dm2 = dstate.m2.as_ref().unwrap();
        for e in 0..m2.len() {
            let orig = m2.data()[e];
            let mut s = state.clone();
            s.m2.as_mut().unwrap().data_mut()[e] = orig + FD_STEP;
            let lp = probe.loss(&p, &h1, &s, boundary);
            s.m2.as_mut().unwrap().data_mut()[e] = orig - FD_STEP;
            let lm = probe.loss(&p, &h1, &s, boundary);
            let fd = (lp - lm) / (2.0 * FD_STEP);
            assert!(
                rel_err(dm2.data()[e], fd) <= TOL,
                "{kind} d_m2[{e}]: analytic {:.3e}, fd {fd:.3e}",
                dm2.data()[e]
            );
        }
    }
}

#[test]
fn interior_gradients_match_finite_differences() {
    for kind in CellKind::ALL {
        for m in [3, 5] {
            check_kind(kind, m, m, 2, false, 1000 + m as u64);
        }
    }
}

#[test]
fn input_boundary_gradients_match_finite_differences() {
    for kind in CellKind::ALL {
        check_kind(kind, 7, 4, 2, true, 2000);
    }
}

#[test]
fn tied_grid_lstm_gradients_match_finite_differences() {
    let kind = CellKind::GridLstm;
    let (d, m, b) = (4, 4, 2);
    let mut rng = Rng::new(3000);
    let p = CellParams::glorot(kind, d, m, true, &mut rng);
    let h1 = glorot_init(&mut rng, d, b);
    let mut state = CellState::zeros(kind, m, b);
    state.h2 = glorot_init(&mut rng, m, b);
    *state.m1.as_mut().unwrap() = glorot_init(&mut rng, m, b);
    *state.m2.as_mut().unwrap() = glorot_init(&mut rng, m, b);
    let probe = Probe::new(kind, m, b, &mut rng);

    let (_, _, acts) = step_cell(&p, &h1, &state, false).unwrap();
    let mut grads = p.zeros_like();
    let (d_h1_up, d_state_up) = probe.upstream(kind);
    backward_cell(&p, &h1, &state, &acts, &d_h1_up, &d_state_up, &mut grads, false).unwrap();

    for (ti, name) in p.tensor_names().iter().enumerate() {
        for e in 0..p.tensors()[ti].len() {
            let orig = p.tensors()[ti].data()[e];
            let mut pp = p.clone();
            pp.tensors_mut()[ti].data_mut()[e] = orig + FD_STEP;
            let lp = probe.loss(&pp, &h1, &state, false);
            pp.tensors_mut()[ti].data_mut()[e] = orig - FD_STEP;
            let lm = probe.loss(&pp, &h1, &state, false);
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let an = grads.tensors()[ti].data()[e];
            assert!(
                rel_err(an, fd) <= TOL,
                "tied grid {name}[{e}]: analytic {an:.3e}, fd {fd:.3e}"
            );
        }
    }
}

#[test]
fn gate_ranges_hold_for_all_kinds() {
    let mut rng = Rng::new(55);
    for kind in CellKind::ALL {
        for _ in 0..10 {
            let m = 4;
            let p = CellParams::glorot(kind, m, m, false, &mut rng);
            let h1 = glorot_init(&mut rng, m, 3);
            let mut state = CellState::zeros(kind, m, 3);
            state.h2 = glorot_init(&mut rng, m, 3);
            let (_, _, acts) = step_cell(&p, &h1, &state, false).unwrap();
            for g in acts.gate_values() {
                assert!(g.data().iter().all(|&x| x > 0.0 && x < 1.0), "{kind} gate out of (0,1)");
            }
            for c in acts.candidate_values() {
                assert!(
                    c.data().iter().all(|&x| x > -1.0 && x < 1.0),
                    "{kind} candidate out of (−1,1)"
                );
            }
        }
    }
}
