//! The interactive round engine: train, segment, correct, finetune.

mod engine;
mod experiment;
mod oracle;
mod state;
mod workspace;

pub use engine::{
    correction_patches, deformed_copies, finetune_round, load_model, oracle_round,
    round_training_patches, run_initial_round, satisfy, segment_training_slides,
    submit_corrections, FinetuneOptions, Progress,
};
pub use experiment::{
    generate_corpus, run_experiment, CorpusSpec, ExperimentConfig, ExperimentReport, LoopVerdict,
};
pub use oracle::{connected_components, oracle_correct, ranked_components, Component};
pub use state::{CorrectionPolicy, CorrectionSet, DataPart, ModelEntry, RoundState, RoundStatus};
pub use workspace::{write_atomic, CorpusManifest, DialConfig, NewCorpus, SlideRef, Workspace};
