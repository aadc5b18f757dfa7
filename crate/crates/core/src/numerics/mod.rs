//! Dense numerics for the policy: MLP forward pass, squashed-Gaussian
//! densities, a reverse-mode tape and Adam.

mod adam;
mod policy;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use policy::{
    clamp_interior, gaussian_log_density, squashed_gaussian_log_prob, unsquash, Architecture,
    Checkpoint, GradientBundle, Layer, PolicyOutput, PolicyParams, ACTION_EPS,
    CHECKPOINT_FORMAT_VERSION,
};
pub use tape::{log_sigmoid, sigmoid, NodeId, Tape};
