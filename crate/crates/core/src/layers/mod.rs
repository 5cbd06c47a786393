//! Non-LIF layers, each with a handwritten backward pass.

pub mod act;
pub mod dropout;
pub mod dwconv;
pub mod linear;
pub mod norm;
pub mod param;
pub mod patch;

pub use act::{gelu, gelu_backward};
pub use dropout::{drop_path, dropout, Mask};
pub use dwconv::{dwconv3x3, dwconv3x3_backward, DwConvParams};
pub use linear::{channel_mlp, channel_mlp_backward, LinearParams};
pub use norm::{group_norm, group_norm_backward, GroupNormCache, GroupNormParams};
pub use param::{ParamKind, ParamMut, ParamRef, Params};
pub use patch::{patch_embed, patch_embed_backward, patch_merge, patch_merge_backward};
