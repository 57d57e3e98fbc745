//! The LRU family: PS-LRU (decoupled projected states), RG-LRU (also
//! decoupled reset gates) and LRU (all three components decoupled).
//!
//! All three kinds carry two states: h1 flows along depth, h2 along time.
//! Interior steps require d = m because the vertical carry h1 takes part in
//! element-wise gating. At the lattice input boundary the vertical input is
//! raw one-hot data with d = V, so each kind has an `_input` variant: the
//! input enters through the W projections unscaled, and the missing vertical
//! carry is treated as zero in the output blend.

use super::{add_opt, backprop_gate, dsigmoid, dtanh, CellActivations, CellParams};
use crate::error::{Error, Result};
use crate::numkit::{affine_pair, Mat};

fn require_square(p: &CellParams, op: &'static str) -> Result<()> {
    if p.input_dim() != p.hidden_dim() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: format!("input dim {}", p.input_dim()),
            rhs: format!("hidden dim {}", p.hidden_dim()),
        });
    }
    Ok(())
}

fn sig_gate(p: &CellParams, suffix: &str, h1: &Mat, h2: &Mat) -> Result<Mat> {
    let g = p.gate(suffix);
    Ok(affine_pair(g.w, h1, g.u, h2, g.b)?.sigmoid())
}

fn tanh_gate(p: &CellParams, suffix: &str, x: &Mat, y: &Mat) -> Result<Mat> {
    let g = p.gate(suffix);
    Ok(affine_pair(g.w, x, g.u, y, g.b)?.tanh())
}

/// `z⊙a + (1−z)⊙b`
fn blend(z: &Mat, a: &Mat, b: &Mat) -> Result<Mat> {
    z.hadamard(a)?.add(&z.sub_from_one().hadamard(b)?)
}

// ---------------------------------------------------------------------------
// PS-LRU
// ---------------------------------------------------------------------------

/// PS-LRU interior step (d = m):
/// shared z, r; ĥ1 = tanh(Wh1·h1 + Uh1·(r⊙h2)); ĥ2 = tanh(Wh2·(r⊙h1) + Uh2·h2);
/// h1' = z⊙h1 + (1−z)⊙ĥ2; h2' = z⊙h2 + (1−z)⊙ĥ1.
pub fn step_ps_lru(p: &CellParams, h1: &Mat, h2: &Mat) -> Result<(Mat, Mat, CellActivations)> {
    require_square(p, "step_ps_lru")?;
    let z = sig_gate(p, "z", h1, h2)?;
    let r = sig_gate(p, "r", h1, h2)?;
    let rh2 = r.hadamard(h2)?;
    let rh1 = r.hadamard(h1)?;
    let h_hat1 = tanh_gate(p, "h1", h1, &rh2)?;
    let h_hat2 = tanh_gate(p, "h2", &rh1, h2)?;
    let h1_new = blend(&z, h1, &h_hat2)?;
    let h2_new = blend(&z, h2, &h_hat1)?;
    Ok((
        h1_new,
        h2_new,
        CellActivations::PsLru {
            z,
            r,
            h_hat1,
            h_hat2,
        },
    ))
}

/// PS-LRU input-boundary step: the vertical input enters projections
/// unscaled and the vertical carry blend uses a zero carry, so
/// h1' = (1−z)⊙ĥ2 with ĥ2 = tanh(Wh2·x + Uh2·h2).
pub fn step_ps_lru_input(p: &CellParams, x: &Mat, h2: &Mat) -> Result<(Mat, Mat, CellActivations)> {
    let z = sig_gate(p, "z", x, h2)?;
    let r = sig_gate(p, "r", x, h2)?;
    let rh2 = r.hadamard(h2)?;
    let h_hat1 = tanh_gate(p, "h1", x, &rh2)?;
    let h_hat2 = tanh_gate(p, "h2", x, h2)?;
    let h1_new = z.sub_from_one().hadamard(&h_hat2)?;
    let h2_new = blend(&z, h2, &h_hat1)?;
    Ok((
        h1_new,
        h2_new,
        CellActivations::PsLru {
            z,
            r,
            h_hat1,
            h_hat2,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn backward_ps_lru(
    p: &CellParams,
    h1: &Mat,
    h2: &Mat,
    acts: &CellActivations,
    g1: &Mat,
    g2: &Mat,
    grads: &mut CellParams,
    input_boundary: bool,
) -> Result<(Option<Mat>, Mat)> {
    let (z, r, h_hat1, h_hat2) = match acts {
        CellActivations::PsLru {
            z,
            r,
            h_hat1,
            h_hat2,
        } => (z, r, h_hat1, h_hat2),
        _ => unreachable!("acts kind checked by caller"),
    };
    let need_dx = !input_boundary;
    let one_minus_z = z.sub_from_one();

    // Output blends.
    // h2' = z⊙h2 + (1−z)⊙ĥ1 (both variants)
    let mut dz = g2.hadamard(&h2.sub(h_hat1)?)?;
    let mut dh2 = g2.hadamard(z)?;
    let dhat1 = g2.hadamard(&one_minus_z)?;
    // h1' = z⊙h1 + (1−z)⊙ĥ2, or (1−z)⊙ĥ2 at the boundary
    let mut dx: Option<Mat> = None;
    if input_boundary {
        dz.add_assign(&g1.hadamard(&h_hat2.scale(-1.0))?)?;
    } else {
        dz.add_assign(&g1.hadamard(&h1.sub(h_hat2)?)?)?;
        add_opt(&mut dx, Some(g1.hadamard(z)?))?;
    }
    let dhat2 = g1.hadamard(&one_minus_z)?;

    // Candidate ĥ1 = tanh(Wh1·h1 + Uh1·(r⊙h2))
    let da1 = dtanh(h_hat1, &dhat1);
    let rh2 = r.hadamard(h2)?;
    let (dx1, drh2) = backprop_gate(p, grads, "h1", h1, &rh2, &da1, need_dx)?;
    add_opt(&mut dx, dx1)?;
    let mut dr = drh2.hadamard(h2)?;
    dh2.add_assign(&drh2.hadamard(r)?)?;

    // Candidate ĥ2
    let da2 = dtanh(h_hat2, &dhat2);
    if input_boundary {
        // ĥ2 = tanh(Wh2·x + Uh2·h2)
        let (_, dy2) = backprop_gate(p, grads, "h2", h1, h2, &da2, false)?;
        dh2.add_assign(&dy2)?;
    } else {
        // ĥ2 = tanh(Wh2·(r⊙h1) + Uh2·h2)
        let rh1 = r.hadamard(h1)?;
        let (drh1, dy2) = backprop_gate(p, grads, "h2", &rh1, h2, &da2, true)?;
        let drh1 = drh1.expect("dx requested");
        dh2.add_assign(&dy2)?;
        dr.add_assign(&drh1.hadamard(h1)?)?;
        add_opt(&mut dx, Some(drh1.hadamard(r)?))?;
    }

    // Reset gate (shared)
    let dar = dsigmoid(r, &dr);
    let (dxr, dyr) = backprop_gate(p, grads, "r", h1, h2, &dar, need_dx)?;
    add_opt(&mut dx, dxr)?;
    dh2.add_assign(&dyr)?;

    // Update gate (shared)
    let daz = dsigmoid(z, &dz);
    let (dxz, dyz) = backprop_gate(p, grads, "z", h1, h2, &daz, need_dx)?;
    add_opt(&mut dx, dxz)?;
    dh2.add_assign(&dyz)?;

    Ok((dx, dh2))
}

// ---------------------------------------------------------------------------
// RG-LRU
// ---------------------------------------------------------------------------

/// RG-LRU interior step: like PS-LRU but with decoupled reset gates;
/// ĥ1 uses r2⊙h2 and ĥ2 uses r1⊙h1.
pub fn step_rg_lru(p: &CellParams, h1: &Mat, h2: &Mat) -> Result<(Mat, Mat, CellActivations)> {
    require_square(p, "step_rg_lru")?;
    let z = sig_gate(p, "z", h1, h2)?;
    let r1 = sig_gate(p, "r1", h1, h2)?;
    let r2 = sig_gate(p, "r2", h1, h2)?;
    let r2h2 = r2.hadamard(h2)?;
    let r1h1 = r1.hadamard(h1)?;
    let h_hat1 = tanh_gate(p, "h1", h1, &r2h2)?;
    let h_hat2 = tanh_gate(p, "h2", &r1h1, h2)?;
    let h1_new = blend(&z, h1, &h_hat2)?;
    let h2_new = blend(&z, h2, &h_hat1)?;
    Ok((
        h1_new,
        h2_new,
        CellActivations::RgLru {
            z,
            r1,
            r2,
            h_hat1,
            h_hat2,
        },
    ))
}

/// RG-LRU input-boundary step. r1 gates the vertical carry, which is raw
/// data here, so r1 is recorded but takes no part in the math.
pub fn step_rg_lru_input(p: &CellParams, x: &Mat, h2: &Mat) -> Result<(Mat, Mat, CellActivations)> {
    let z = sig_gate(p, "z", x, h2)?;
    let r1 = sig_gate(p, "r1", x, h2)?;
    let r2 = sig_gate(p, "r2", x, h2)?;
    let r2h2 = r2.hadamard(h2)?;
    let h_hat1 = tanh_gate(p, "h1", x, &r2h2)?;
    let h_hat2 = tanh_gate(p, "h2", x, h2)?;
    let h1_new = z.sub_from_one().hadamard(&h_hat2)?;
    let h2_new = blend(&z, h2, &h_hat1)?;
    Ok((
        h1_new,
        h2_new,
        CellActivations::RgLru {
            z,
            r1,
            r2,
            h_hat1,
            h_hat2,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn backward_rg_lru(
    p: &CellParams,
    h1: &Mat,
    h2: &Mat,
    acts: &CellActivations,
    g1: &Mat,
    g2: &Mat,
    grads: &mut CellParams,
    input_boundary: bool,
) -> Result<(Option<Mat>, Mat)> {
    let (z, r1, r2, h_hat1, h_hat2) = match acts {
        CellActivations::RgLru {
            z,
            r1,
            r2,
            h_hat1,
            h_hat2,
        } => (z, r1, r2, h_hat1, h_hat2),
        _ => unreachable!("acts kind checked by caller"),
    };
    let need_dx = !input_boundary;
    let one_minus_z = z.sub_from_one();

    let mut dz = g2.hadamard(&h2.sub(h_hat1)?)?;
    let mut dh2 = g2.hadamard(z)?;
    let dhat1 = g2.hadamard(&one_minus_z)?;
    let mut dx: Option<Mat> = None;
    if input_boundary {
        dz.add_assign(&g1.hadamard(&h_hat2.scale(-1.0))?)?;
    } else {
        dz.add_assign(&g1.hadamard(&h1.sub(h_hat2)?)?)?;
        add_opt(&mut dx, Some(g1.hadamard(z)?))?;
    }
    let dhat2 = g1.hadamard(&one_minus_z)?;

    // ĥ1 = tanh(Wh1·h1 + Uh1·(r2⊙h2))
    let da1 = dtanh(h_hat1, &dhat1);
    let r2h2 = r2.hadamard(h2)?;
    let (dx1, dr2h2) = backprop_gate(p, grads, "h1", h1, &r2h2, &da1, need_dx)?;
    add_opt(&mut dx, dx1)?;
    let dr2 = dr2h2.hadamard(h2)?;
    dh2.add_assign(&dr2h2.hadamard(r2)?)?;

    // ĥ2
    let da2 = dtanh(h_hat2, &dhat2);
    if input_boundary {
        let (_, dy2) = backprop_gate(p, grads, "h2", h1, h2, &da2, false)?;
        dh2.add_assign(&dy2)?;
    } else {
        let r1h1 = r1.hadamard(h1)?;
        let (dr1h1, dy2) = backprop_gate(p, grads, "h2", &r1h1, h2, &da2, true)?;
        let dr1h1 = dr1h1.expect("dx requested");
        dh2.add_assign(&dy2)?;
        let dr1 = dr1h1.hadamard(h1)?;
        add_opt(&mut dx, Some(dr1h1.hadamard(r1)?))?;
        let dar1 = dsigmoid(r1, &dr1);
        let (dxr1, dyr1) = backprop_gate(p, grads, "r1", h1, h2, &dar1, need_dx)?;
        add_opt(&mut dx, dxr1)?;
        dh2.add_assign(&dyr1)?;
    }

    let dar2 = dsigmoid(r2, &dr2);
    let (dxr2, dyr2) = backprop_gate(p, grads, "r2", h1, h2, &dar2, need_dx)?;
    add_opt(&mut dx, dxr2)?;
    dh2.add_assign(&dyr2)?;

    let daz = dsigmoid(z, &dz);
    let (dxz, dyz) = backprop_gate(p, grads, "z", h1, h2, &daz, need_dx)?;
    add_opt(&mut dx, dxz)?;
    dh2.add_assign(&dyz)?;

    Ok((dx, dh2))
}

// ---------------------------------------------------------------------------
// LRU (UG-LRU)
// ---------------------------------------------------------------------------

/// LRU interior step: fully decoupled gates. Note the flipped update
/// convention relative to the GRU: the gate multiplies the candidate,
/// h1' = z1⊙ĥ2 + (1−z1)⊙h1 and h2' = z2⊙ĥ1 + (1−z2)⊙h2.
pub fn step_lru(p: &CellParams, h1: &Mat, h2: &Mat) -> Result<(Mat, Mat, CellActivations)> {
    require_square(p, "step_lru")?;
    let z1 = sig_gate(p, "z1", h1, h2)?;
    let z2 = sig_gate(p, "z2", h1, h2)?;
    let r1 = sig_gate(p, "r1", h1, h2)?;
    let r2 = sig_gate(p, "r2", h1, h2)?;
    let r2h2 = r2.hadamard(h2)?;
    let r1h1 = r1.hadamard(h1)?;
    let h_hat1 = tanh_gate(p, "h1", h1, &r2h2)?;
    let h_hat2 = tanh_gate(p, "h2", &r1h1, h2)?;
    let h1_new = blend(&z1, &h_hat2, h1)?;
    let h2_new = blend(&z2, &h_hat1, h2)?;
    Ok((
        h1_new,
        h2_new,
        CellActivations::Lru {
            z1,
            z2,
            r1,
            r2,
            h_hat1,
            h_hat2,
        },
    ))
}

/// LRU input-boundary step: h1' = z1⊙ĥ2 with ĥ2 = tanh(Wh2·x + Uh2·h2);
/// r1 is recorded but unused.
pub fn step_lru_input(p: &CellParams, x: &Mat, h2: &Mat) -> Result<(Mat, Mat, CellActivations)> {
    let z1 = sig_gate(p, "z1", x, h2)?;
    let z2 = sig_gate(p, "z2", x, h2)?;
    let r1 = sig_gate(p, "r1", x, h2)?;
    let r2 = sig_gate(p, "r2", x, h2)?;
    let r2h2 = r2.hadamard(h2)?;
    let h_hat1 = tanh_gate(p, "h1", x, &r2h2)?;
    let h_hat2 = tanh_gate(p, "h2", x, h2)?;
    let h1_new = z1.hadamard(&h_hat2)?;
    let h2_new = blend(&z2, &h_hat1, h2)?;
    Ok((
        h1_new,
        h2_new,
        CellActivations::Lru {
            z1,
            z2,
            r1,
            r2,
            h_hat1,
            h_hat2,
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn backward_lru(
    p: &CellParams,
    h1: &Mat,
    h2: &Mat,
    acts: &CellActivations,
    g1: &Mat,
    g2: &Mat,
    grads: &mut CellParams,
    input_boundary: bool,
) -> Result<(Option<Mat>, Mat)> {
    let (z1, z2, r1, r2, h_hat1, h_hat2) = match acts {
        CellActivations::Lru {
            z1,
            z2,
            r1,
            r2,
            h_hat1,
            h_hat2,
        } => (z1, z2, r1, r2, h_hat1, h_hat2),
        _ => unreachable!("acts kind checked by caller"),
    };
    let need_dx = !input_boundary;

    // h2' = z2⊙ĥ1 + (1−z2)⊙h2
    let dz2 = g2.hadamard(&h_hat1.sub(h2)?)?;
    let mut dh2 = g2.hadamard(&z2.sub_from_one())?;
    let dhat1 = g2.hadamard(z2)?;

    // h1' = z1⊙ĥ2 + (1−z1)⊙h1, or z1⊙ĥ2 at the boundary
    let mut dx: Option<Mat> = None;
    let dz1;
    if input_boundary {
        dz1 = g1.hadamard(h_hat2)?;
    } else {
        dz1 = g1.hadamard(&h_hat2.sub(h1)?)?;
        add_opt(&mut dx, Some(g1.hadamard(&z1.sub_from_one())?))?;
    }
    let dhat2 = g1.hadamard(z1)?;

    // ĥ1 = tanh(Wh1·h1 + Uh1·(r2⊙h2))
    let da1 = dtanh(h_hat1, &dhat1);
    let r2h2 = r2.hadamard(h2)?;
    let (dx1, dr2h2) = backprop_gate(p, grads, "h1", h1, &r2h2, &da1, need_dx)?;
    add_opt(&mut dx, dx1)?;
    let dr2 = dr2h2.hadamard(h2)?;
    dh2.add_assign(&dr2h2.hadamard(r2)?)?;

    // ĥ2
    let da2 = dtanh(h_hat2, &dhat2);
    if input_boundary {
        let (_, dy2) = backprop_gate(p, grads, "h2", h1, h2, &da2, false)?;
        dh2.add_assign(&dy2)?;
    } else {
        let r1h1 = r1.hadamard(h1)?;
        let (dr1h1, dy2) = backprop_gate(p, grads, "h2", &r1h1, h2, &da2, true)?;
        let dr1h1 = dr1h1.expect("dx requested");
        dh2.add_assign(&dy2)?;
        let dr1 = dr1h1.hadamard(h1)?;
        add_opt(&mut dx, Some(dr1h1.hadamard(r1)?))?;
        let dar1 = dsigmoid(r1, &dr1);
        let (dxr1, dyr1) = backprop_gate(p, grads, "r1", h1, h2, &dar1, need_dx)?;
        add_opt(&mut dx, dxr1)?;
        dh2.add_assign(&dyr1)?;
    }

    let dar2 = dsigmoid(r2, &dr2);
    let (dxr2, dyr2) = backprop_gate(p, grads, "r2", h1, h2, &dar2, need_dx)?;
    add_opt(&mut dx, dxr2)?;
    dh2.add_assign(&dyr2)?;

    let daz1 = dsigmoid(z1, &dz1);
    let (dxz1, dyz1) = backprop_gate(p, grads, "z1", h1, h2, &daz1, need_dx)?;
    add_opt(&mut dx, dxz1)?;
    dh2.add_assign(&dyz1)?;

    let daz2 = dsigmoid(z2, &dz2);
    let (dxz2, dyz2) = backprop_gate(p, grads, "z2", h1, h2, &daz2, need_dx)?;
    add_opt(&mut dx, dxz2)?;
    dh2.add_assign(&dyz2)?;

    Ok((dx, dh2))
}
