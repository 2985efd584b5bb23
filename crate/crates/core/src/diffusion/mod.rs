//! DDPM schedule and respacing, the ε-prediction network, its training loop
//! and ancestral sampling.

pub mod model;
pub mod sample;
pub mod schedule;
pub mod train;

pub use model::{EpsModel, EpsNet, EpsNetConfig};
pub use sample::{sample_batch, sample_unconditional, Rectify, SampleOutput};
pub use schedule::{forward_sample, posterior_step, predict_x0, DiffusionSchedule, SpacedSchedule};
pub use train::{from_model_range, to_model_range, train_eps_model, EpsTrainConfig};
