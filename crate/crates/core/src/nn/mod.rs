//! Neural building blocks: positional encodings, normalization,
//! windowed and cross attention, modulated transformer blocks, the dense
//! convolutional U-Net, the KL penalty and weight archives.

mod adaln;
mod archive;
mod attention;
mod kl;
mod linalg;
mod norm;
mod pe;
mod stack;
mod unet;
mod window;

pub use adaln::{
    AdaLnBlock, FeedForward, Modulation, ModulationParams, SwinBlock, TimestepEmbedder, FFN_RATIO,
    MODULATION_CHUNKS,
};
pub use archive::{Manifest, TensorEntry, WeightArchive, MANIFEST_FILE};
pub use attention::{cross_attention, self_attention, softmax, windowed_mhsa, AttentionWeights};
pub use kl::{kl_penalty, kl_penalty_grad};
pub use linalg::{gelu, silu, Linear, Mat};
pub use norm::{layer_norm, layer_norm_affine, qk_rmsnorm, NORM_EPS};
pub use pe::{sinusoidal_pe, timestep_features, TIMESTEP_FEATURES};
pub use stack::{FlowTransformer, TransformerConfig};
pub use unet::{
    conv3d, pixel_shuffle3d, pixel_unshuffle3d, shuffle_index, ConvUnet3d, ResBlock3d, Stage, UnetConfig, UNET_KIND,
};
pub use window::{window_partition, WindowConfig, DEFAULT_WINDOW};
