//! Scene synthesis, configuration, end-to-end runs and report files.

pub mod config;
pub mod experiment;
pub mod report;
pub mod scene;

pub use config::ExperimentConfig;
pub use experiment::{psnr, run_ablation, run_experiment, run_experiment_with, ExperimentReport};
pub use scene::{generate_scene, SceneKind, SceneSpec};
