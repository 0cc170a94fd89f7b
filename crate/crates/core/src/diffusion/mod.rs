//! Joint RGB-D cubemap diffusion on a toy scale.

pub mod ablation;
pub mod data;
pub mod sample;
pub mod schedule;
pub mod state;
pub mod train;
pub mod unet;

pub use ablation::{ablation_arm, sync_ablation, AblationConfig, AblationReport, ArmReport};
pub use data::{decode_rgbd, encode_rgbd, synthetic_batch, synthetic_scene, SmoothField, SyntheticScene, TrainBatch};
pub use sample::{ddim_sample, ddim_sample_latents, GeneratedPanorama, SampledLatents};
pub use schedule::{make_schedule, reconstruct_eps, reconstruct_x0, v_target, NoiseSchedule, ScheduleKind};
pub use state::{assemble_input, masked_noise_inject, DiffusionState, FaceMask, IMG_CHANNELS, INPUT_CHANNELS, OUTPUT_CHANNELS};
pub use train::{apply_update, loss_for_noise, train, training_loss, EvalSet, TrainConfig, TrainOutcome, Trainer};
pub use unet::{timestep_embedding, Grads, LossTarget, Param, ToyUNet, UNetConfig, VPredictor};
