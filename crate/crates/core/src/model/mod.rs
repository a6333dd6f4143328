//! V-net, U-net and Res V-net assembled from Down-Blocks, Up-Blocks and a tail.

pub mod forward;
pub mod spec;

pub use forward::{
    down_block, model_backward, model_backward_into, model_forward, model_predict, tail, up_block,
    DownCache, ForwardCache, Mode, TailCache, UpCache,
};
pub use spec::{
    build_model, parse_patch, ConvSpec, DownSpec, Merge, ModelSpec, ParamShape, TailSpec, UpSpec,
    Variant,
};
