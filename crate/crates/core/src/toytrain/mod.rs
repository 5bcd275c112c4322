//! Desk-scale contrastive training on synthetic 2-D data.

pub mod encoder;
pub mod experiment;
pub mod lemma;
pub mod loss;
pub mod train;

pub use encoder::{Activation, EncoderArch, ToyEncoder};
pub use experiment::{build_split, evaluate_views, leave_out_experiment, run_pipeline, Composition, LeaveOut, PipelineConfig, PipelineRun};
pub use lemma::{check_lemma_bounds, estimate_lipschitz, lipschitz_over_pairs, nearby_points, LemmaCheckReport};
pub use loss::{infonce_loss, loss_and_grad, total_loss, uniformity_penalty, BatchViews, LossBreakdown, LossConfig};
pub use train::{train_encoder, Optimizer, TrainConfig, TrainedEncoder};
