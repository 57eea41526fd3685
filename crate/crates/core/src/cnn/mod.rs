//! Ten-layer encoder-decoder CNN with additive skips, written against plain
//! `f64` buffers: forward, exact backward, Adam and checkpoint I/O.

mod adam;
mod conv;
mod checkpoint;
mod net;
mod spec;
mod tensor;

pub use adam::{adam_step, mse_loss, AdamState, DEFAULT_LR};
pub use checkpoint::{ModelCheckpoint, NormStats, TensorEntry, ADAM_M_BLOB, ADAM_V_BLOB, MANIFEST, WEIGHTS_BLOB};
pub use net::{ForwardCache, Gradients, Network};
pub use spec::{Activation, LayerSpec, NetworkSpec, Resample, DEFAULT_WIDTH, STANDARD_DEPTH};
pub use tensor::Tensor4;
