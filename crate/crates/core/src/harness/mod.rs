//! Training orchestration, controllability evaluation and ablations.

pub mod ablate;
pub mod data;
pub mod eval;
pub mod metrics;
pub mod pipeline;
pub mod run;

pub use data::{held_out_scenes, TrainingSet};
pub use eval::{evaluate_controllability, EvalContext, EvalReport, SuiteConfig};
pub use metrics::{psnr, Db};
pub use pipeline::{
    finetune_relight, pretrain_base, relight_video, Case, CopySource, ModelRelighter, OracleReplay,
    PipelineConfig, Relighter, TrainOutcome,
};
pub use run::{
    ablate_data_fraction, ablate_planes, config_hash, run_all, write_json, Experiment, RunReport,
    Timings, VariantComparison,
};
