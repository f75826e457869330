//! Toy flow-matching diffusion transformer with a light image adapter.

pub mod checkpoint;
pub mod flow;
pub mod model;
pub mod tape;
pub mod tensor;
pub mod train;

pub use flow::{
    euler_from, euler_sample, flow_loss, gaussian_noise, make_xt, target_velocity,
    ConstantVelocity, DitField, VelocityField, SAMPLER_STREAM,
};
pub use model::{
    init_lia, is_relight_trainable, latent_to_tokens, latent_tokens, tokens_to_latent, AdapterInit,
    Dit, DitConfig, Stage,
};
pub use tensor::Mat;
pub use train::{train_step, FlowExample, Optimizer, TrainConfig, TrainState};
