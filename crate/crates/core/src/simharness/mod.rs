//! Synthetic scenarios, collaboration episodes, end-to-end training and
//! ablation drivers.

pub mod ablation;
pub mod experiment;
pub mod model;
pub mod scenario;

pub use model::{CollabMode, CollabModel, FrameOutput, ModelConfig, StepConfig};
pub use scenario::{gen_scenario, read_scenario, write_scenario, Agent, Scenario, ScenarioConfig, World};
pub use experiment::{
    evaluate, metric_rows, run_episode, summarize, train_e2e, write_metric_csv, EpisodeResult, EvalSummary,
    ExperimentConfig, MetricRow, TrainConfig, TrainOutcome, METRIC_CSV_HEADER,
};
pub use ablation::{
    mean_sd, run_ablation, run_arms, summarize_arms, write_ablation_rows, write_summary_csv, AblationResult, Arm,
    ArmSeedResult, ArmSummary, Checkpoints, Suite, ABLATION_ROWS_HEADER, ABLATION_SUMMARY_HEADER,
};
