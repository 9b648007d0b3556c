// SPDX-License-Identifier: Apache-2.0

//! Desk-scale model kernel.
//!
//! Linear feature extractors stand in for expert networks, a softmax
//! regression trainer serves both as the expert prediction network and as
//! the downstream fine-tuning proxy, and the residual adapter is executed
//! with 1×1 convolutions on small feature maps. Parameter counts for a full
//! ResNet50-v2 with adapters come from a static shape table.

mod adapter;
mod linear;
mod logistic;
mod matrix;
mod params;

pub use adapter::{
    adapted_block_forward, adapter_forward, default_groups, group_norm, AdapterParams, FeatureMap,
    GROUP_NORM_EPS,
};
pub use linear::{LinearExtractor, Nonlinearity};
pub use logistic::{train_logistic, LogisticGrad, LogisticModel, TrainConfig};
pub use matrix::Matrix;
pub use params::{
    count_params, resnet50_v2_backbone_params, BottleneckRule, ParamReport, ADAPTER_INSERTION_CHANNELS,
};
