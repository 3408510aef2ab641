//! Toy diffusion stack: noise schedule, frozen denoiser, motion and point encoders,
//! hybrid ControlNet, training and gradient checks.

mod checkpoint;
mod config;
mod controlnet;
mod dataset;
mod denoiser;
mod dift;
mod encoders;
mod gradcheck;
mod graph;
mod latent;
mod layers;
mod params;
mod pipeline;
mod schedule;
mod tensor;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, TensorRecord, MANIFEST_FILE, PAYLOAD_FILE};
pub use config::{NetConfig, Variant};
pub use controlnet::HybridControlNet;
pub use dataset::{build_dataset, clip_samples, synthetic_clip, DatasetConfig, SyntheticClip, SyntheticDataset, TrainSample};
pub use denoiser::{Decoder, EncoderOutput, ResidualVars, ToyDenoiser, UNetEncoder};
pub use dift::DenoiserFeatureProvider;
pub use encoders::{MotionBranch, MotionEncoder, PointEncoder};
pub use gradcheck::{
    finite_diff_gradcheck, gradcheck_params, linear_layer_gradcheck, relative_error, GradcheckReport, Probe,
    REL_ERROR_FLOOR,
};
pub use graph::{Gradients, Graph, Var};
pub use latent::encode_latent;
pub use layers::{Conv2d, ConvSpec, ResBlock, TimeEmbedding};
pub use params::{Component, Init, ParamEntry, ParamId, ParamStore};
pub use pipeline::{correspondence_tensor, flow_tensor, GuidanceInputs, GuidancePipeline, GuidanceResiduals};
pub use schedule::{diffuse_with_alpha_bar, forward_diffuse, NoiseSchedule};
pub use tensor::Tensor;
pub use train::{loss_csv, sample_batch, train, training_step, Sgd, TrainBatch, TrainConfig, TrainReport};
