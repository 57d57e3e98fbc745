//! GRU step function and its exact backward pass.

use super::{backprop_gate, dsigmoid, dtanh, CellActivations, CellParams};
use crate::error::Result;
use crate::numkit::{affine_pair, Mat};

/// One GRU step over a batch of columns.
///
/// z = σ(Wz·h1 + Uz·h2 + bz); r likewise; ĥ = tanh(Wh·h1 + Uh·(r⊙h2) + bh);
/// h2' = z⊙h2 + (1−z)⊙ĥ. The GRU has a single output, replicated vertically:
/// h1' = h2'.
pub fn step_gru(p: &CellParams, h1: &Mat, h2: &Mat) -> Result<(Mat, Mat, CellActivations)> {
    let gz = p.gate("z");
    let gr = p.gate("r");
    let gh = p.gate("h");
    let z = affine_pair(gz.w, h1, gz.u, h2, gz.b)?.sigmoid();
    let r = affine_pair(gr.w, h1, gr.u, h2, gr.b)?.sigmoid();
    let rh2 = r.hadamard(h2)?;
    let h_hat = affine_pair(gh.w, h1, gh.u, &rh2, gh.b)?.tanh();
    let h2_new = z
        .hadamard(h2)?
        .add(&z.sub_from_one().hadamard(&h_hat)?)?;
    let acts = CellActivations::Gru { z, r, h_hat };
    Ok((h2_new.clone(), h2_new, acts))
}

/// Backward through one GRU step. Upstream gradients arrive separately for
/// the vertical and horizontal outputs; since both are the same tensor they
/// are summed here. Returns (d_h1, d_h2) w.r.t. the step inputs.
#[allow(clippy::too_many_arguments)]
pub fn backward_gru(
    p: &CellParams,
    h1: &Mat,
    h2: &Mat,
    z: &Mat,
    r: &Mat,
    h_hat: &Mat,
    d_h1_out: &Mat,
    d_h2_out: &Mat,
    grads: &mut CellParams,
    need_dx: bool,
) -> Result<(Option<Mat>, Mat)> {
    let g = d_h1_out.add(d_h2_out)?;

    // h2' = z⊙h2 + (1−z)⊙ĥ
    let dz = g.hadamard(&h2.sub(h_hat)?)?;
    let dhat = g.hadamard(&z.sub_from_one())?;
    let mut dh2 = g.hadamard(z)?;

    // candidate
    let dah = dtanh(h_hat, &dhat);
    let rh2 = r.hadamard(h2)?;
    let (mut dx, drh2) = backprop_gate(p, grads, "h", h1, &rh2, &dah, need_dx)?;
    let dr = drh2.hadamard(h2)?;
    dh2.add_assign(&drh2.hadamard(r)?)?;

    // reset gate
    let dar = dsigmoid(r, &dr);
    let (dx_r, dy_r) = backprop_gate(p, grads, "r", h1, h2, &dar, need_dx)?;
    super::add_opt(&mut dx, dx_r)?;
    dh2.add_assign(&dy_r)?;

    // update gate
    let daz = dsigmoid(z, &dz);
    let (dx_z, dy_z) = backprop_gate(p, grads, "z", h1, h2, &daz, need_dx)?;
    super::add_opt(&mut dx, dx_z)?;
    dh2.add_assign(&dy_z)?;

    Ok((dx, dh2))
}
