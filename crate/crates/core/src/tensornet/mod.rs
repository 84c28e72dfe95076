//! Dense numeric substrate: multilayer perceptrons with hand-written
//! reverse-mode gradients, Adam, losses, batched inference and checkpoints.

mod adam;
pub mod checkpoint;
mod frozen;
mod loss;
mod mlp;
mod real;

pub use adam::{AdamConfig, AdamState, VecAdam};
pub use frozen::{padded_lanes, FrozenMlp, Scratch, LANE_QUANTUM};
pub use loss::{mse, mse_grad};
pub use mlp::{Activation, Batch, BatchTrace, Gradients, Layer, Matrix, Mlp};
pub use real::{fast_tanh_f32, Real};

/// Default hidden layout shared by every network in the crate.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

/// `[input, hidden.., output]` with the given hidden widths.
pub fn layer_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}
