//! Minimal numeric core: tensors, layer primitives with hand-written
//! backward passes, positional encodings, a parameter store, a
//! finite-difference checker and the checkpoint container.

pub mod activation;
pub mod attention;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod params;
pub mod posenc;
pub mod rope;
pub mod softmax;
pub mod tensor;

pub use activation::{dropout, dropout_backward, gelu, gelu_backward, relu, relu_backward};
pub use attention::{
    multi_head_attention, multi_head_attention_backward, AttentionCache, AttentionGrads,
    AttentionWeights, RopeInputs,
};
pub use checkpoint::Checkpoint;
pub use conv::{
    conv2d, conv2d_backward, global_avg_pool, global_avg_pool_backward, max_pool2d,
    max_pool2d_backward, Conv2dSpec,
};
pub use gradcheck::{finite_difference_check, GradCheckConfig, GradCheckReport};
pub use linear::{linear, linear_backward};
pub use loss::cross_entropy_from_logits;
pub use norm::{layer_norm, layer_norm_backward, LayerNormCache};
pub use params::{ParamEntry, ParamId, ParamStore};
pub use posenc::{ape_sinusoidal, lpe_backward, lpe_index, lpe_lookup, LPE_GRID};
pub use rope::{rope_mixed_rotate, rope_mixed_rotate_backward, RopeFrequencies};
pub use softmax::softmax_with_temperature;
pub use tensor::{matmul, Tensor};
