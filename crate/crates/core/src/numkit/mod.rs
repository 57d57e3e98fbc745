//! Deterministic dense linear algebra, activations, initialization, and
//! seeded randomness underpinning every other module.

mod mat;
mod rng;

pub use mat::{affine_pair, glorot_init, sigmoid, softmax_cce, Mat};
pub use rng::Rng;
