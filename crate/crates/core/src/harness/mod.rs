//! Configuration, dataset ingestion, synthetic corpus generation, experiment
//! recipes, and persistence.

mod config;
mod data;
mod experiment;
mod report;
mod synthetic;

pub use config::{AttackSpec, DataSpec, ExperimentSpec, ModelSpec, SweepSpec, OUTPUT_ROOT_ENV};
pub use data::{ingest_tsv, Dataset, Split};
pub use experiment::{
    attack_subset, deployed_clean_accuracy, deployed_predictor, load_inputs, run_ablation,
    run_attack_cmd, run_attacks, run_eval, run_experiment, run_sweep, run_train,
    AttackReportFile, ExperimentOutcome, Inputs, TrainOutcome, ABLATION_FULL, ABLATION_VARIANTS,
};
pub use report::{format_table, write_summary, CellFailure, Summary, SummaryRow};
pub use synthetic::{
    generate_synthetic, label_of, token_cluster, token_name, SyntheticFiles, SyntheticSpec,
};
