//! Dense tensor engine and the SegResNet segmentation network.

mod model;
pub mod ops;
mod params;
mod real;
mod tensor;
mod weights;

pub use model::{build_segresnet, default_blocks_down, LayerSpec, Mode, NodeId, Op, SegModel, SegModelConfig, Trace};
pub use params::{layer_of, ParamStore};
pub use real::{DType, Real};
pub use tensor::Tensor;
pub use weights::{
    apply_params, decode_params, encode_params, load_weights, read_params, save_weights, write_params, LoadReport,
};
