//! Experiment orchestration: configuration, checkpoints, pretraining runs,
//! evaluation campaigns, ablation sweeps, and metric files.

mod campaign;
mod checkpoint;
mod config;
mod report;

pub use campaign::{
    ablation_in_memory, campaign_in_memory, checkpoint_paths, frozen_accuracy, load_pretrained,
    prepare_output_dir, pretrain_model, pretrain_pair, run_ablation_sweep, run_campaign,
    run_gen_data, run_pretrain, source_domain, synthetic_domains, target_domain, AblationTable,
    Domain, PretrainOutput,
};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{derive_seed, fnv1a, GenDomain, RunConfig};
pub use report::{
    ci95_half_width, mean, read_episodes_csv, stdev, CampaignReport, EpisodeFailure, EpisodeResult,
    EpisodeRow, Estimate, PairedDiff, TraceSummary, EPISODES_CSV_HEADER, Z_95,
};
