//! Dense tensors and hand-differentiated layers.

pub mod adam;
pub mod checkpoint;
pub mod conv;
mod gemm;
pub mod gradcheck;
mod layers;
mod param;
mod tensor;

pub use adam::{adam_step, Adam};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{
    sigmoid, Activation, BatchNorm2d, BnCache, Conv2d, ConvTranspose2d, Layer, LayerKind,
    LayerSpec, LayerTrace, Mode, Network, Sequential, Trace, BN_EPS, BN_MOMENTUM, LEAKY_SLOPE,
};
pub use param::Param;
pub use tensor::Tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The crate-wide deterministic generator.
pub type Rng64 = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
