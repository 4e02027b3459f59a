//! Spiking-pixel identification with a small U-Net.

mod arch;
mod forward;
mod tiling;
mod weights;

pub use arch::{define_architecture, Architecture, ConvSpec, FINGERPRINT, IN_CHANNELS, PATCH, WIDTHS};
pub use forward::{forward, UNet, Workspace};
pub use tiling::{
    normalize_pair, percentile, tent_weight, tile_and_merge, window_origins, ChannelScale, ProbabilityMap,
    DEFAULT_STRIDE,
};
pub use weights::{load_weights, save_weights, Tensor, WeightBundle, WEIGHT_MAGIC};
