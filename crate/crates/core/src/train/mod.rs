//! Negative sampling, objectives, gradients, optimizers and the epoch loop.

pub mod epoch;
pub mod grad;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod sampling;

pub use epoch::{epoch_rng, init_model, train_epoch, EpochStats, Optimizer, OptimizerState, TrainConfig, Trainer};
pub use grad::{grad_convkb, grad_transe, GradientSet, Label, LabeledTriple};
pub use gradcheck::{finite_diff_check, run_suite, CheckReport, CheckSample, SuiteConfig, SuiteReport, DEFAULT_STEP};
pub use loss::{margin_loss, softplus_loss};
pub use optim::{adam_step, normalize_entities, sgd_step, AdamState};
pub use sampling::{sample_corrupted, sample_corruption, Corruption};
