//! Trainable layers: the rotation-invariant convolution, the plain
//! convolution it generalises, pooling, activation, dense and loss, plus the
//! layer graph and network built from them.

mod conv;
mod graph;
mod network;
mod ops;
mod riconv;

pub use conv::{conv_backward, conv_forward, output_extent, Conv2d, ConvGrads};
pub use graph::{Architecture, LayerGraph, LayerKind};
pub use network::{checkpoint_files, checkpoint_info, Gradients, Layer, Network, NetworkCache, CHECKPOINT_FORMAT};
pub use ops::{
    avgpool, avgpool_backward, maxpool2, maxpool2_backward, relu, relu_backward, softmax_cross_entropy, Dense,
    DenseGrads,
};
pub use riconv::{riconv_forward, KernelSpec, RiConv, RiConvCache};
