use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::config::{derive_seed, GenDomain, RunConfig};
use super::report::{
    write_file, CampaignReport, EpisodeFailure, EpisodeResult, PairedDiff, TraceSummary,
};
use crate::awcol::{co_predict_probs, evaluate, finetune, FinetuneConfig, Variant};
use crate::error::{Error, Result};
use crate::numerics::EncoderParams;
use crate::protonet::{
    accuracy, compute_prototypes, predict_probs, pretrain_source, Episode, PretrainTrace, ProtoModel,
};
use crate::taskgen::{
    load_embeddings, make_shift_pair_with, write_embeddings, DomainSpec, EmbeddingDataset,
    EpisodeSource,
};

const STREAM_INIT: u64 = 10;
const STREAM_TASKS: u64 = 20;
const STREAM_HELDOUT: u64 = 30;
const STREAM_NEGATIVES: u64 = 40;
const STREAM_GEN: u64 = 50;

/// Where episodes come from: a synthetic domain or an embedding file.
#[derive(Clone, Debug)]
pub enum Domain {
    Synthetic(DomainSpec),
    Embeddings(EmbeddingDataset),
}

impl EpisodeSource for Domain {
    fn n_classes(&self) -> usize {
        match self {
            Domain::Synthetic(d) => d.n_classes(),
            Domain::Embeddings(d) => EpisodeSource::n_classes(d),
        }
    }

    fn feature_dim(&self) -> usize {
        match self {
            Domain::Synthetic(d) => EpisodeSource::feature_dim(d),
            Domain::Embeddings(d) => EpisodeSource::feature_dim(d),
        }
    }

    fn sample_episode<R: Rng + ?Sized>(
        &self,
        n_way: usize,
        k_shot: usize,
        queries_per_class: usize,
        rng: &mut R,
    ) -> Result<Episode> {
        match self {
            Domain::Synthetic(d) => d.sample_episode(n_way, k_shot, queries_per_class, rng),
            Domain::Embeddings(d) => d.sample_episode(n_way, k_shot, queries_per_class, rng),
        }
    }
}

/// The synthetic source/target pair of a configuration.
pub fn synthetic_domains(cfg: &RunConfig) -> Result<(DomainSpec, DomainSpec)> {
    make_shift_pair_with(
        cfg.domain_seed,
        cfg.source_classes,
        cfg.target_classes,
        cfg.input_dim,
        cfg.severity,
        &cfg.shift,
    )
}

pub fn source_domain(cfg: &RunConfig) -> Result<Domain> {
    match &cfg.source_embeddings {
        Some(p) => Ok(Domain::Embeddings(load_embeddings(p)?)),
        None => Ok(Domain::Synthetic(synthetic_domains(cfg)?.0)),
    }
}

pub fn target_domain(cfg: &RunConfig) -> Result<Domain> {
    match &cfg.target_embeddings {
        Some(p) => Ok(Domain::Embeddings(load_embeddings(p)?)),
        None => Ok(Domain::Synthetic(synthetic_domains(cfg)?.1)),
    }
}

/// Creates `dir` and proves it is writable before any computation starts.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

pub fn checkpoint_paths(dir: &Path) -> [PathBuf; 2] {
    [dir.join("m1.ckpt"), dir.join("m2.ckpt")]
}

#[derive(Clone, Debug)]
pub struct PretrainOutput {
    pub checkpoints: [Checkpoint; 2],
    pub traces: [PretrainTrace; 2],
    /// Frozen accuracy of each model on held-out source episodes.
    pub heldout_accuracy: [f64; 2],
}

/// Pretrains one model on its own task stream. Model `m` draws its
/// initialization and its episodes from streams derived from `(seed, m)`.
pub fn pretrain_model(
    cfg: &RunConfig,
    source: &Domain,
    model_id: u8,
) -> Result<(ProtoModel, PretrainTrace)> {
    let sizes = cfg.encoder_sizes(source.feature_dim());
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INIT + model_id as u64));
    let encoder = EncoderParams::init(&sizes, &mut init_rng)?;
    let mut model = ProtoModel::new(model_id, encoder, cfg.pretrain_lr)?;
    let mut stream = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TASKS + model_id as u64));
    let trace = pretrain_source(
        &mut model,
        || source.sample_episode(cfg.n_way, cfg.k_shot, cfg.queries_per_class, &mut stream),
        cfg.pretrain_iterations,
        cfg.pretrain_tasks,
    )?;
    Ok((model, trace))
}

/// Frozen prototypical accuracy of one model on a batch of episodes.
pub fn frozen_accuracy(model: &ProtoModel, episodes: &[Episode]) -> Result<f64> {
    let mut total = 0.0;
    for ep in episodes {
        let protos = compute_prototypes(&model.encoder, ep.task())?;
        let probs = predict_probs(&model.encoder, &protos, ep.task().query_x())?;
        total += accuracy(&probs, ep.query_labels());
    }
    Ok(total / episodes.len().max(1) as f64)
}

/// Pretrains both models in memory (no files).
pub fn pretrain_pair(cfg: &RunConfig) -> Result<PretrainOutput> {
    let source = source_domain(cfg)?;
    let (r1, r2) = rayon::join(
        || pretrain_model(cfg, &source, 1),
        || pretrain_model(cfg, &source, 2),
    );
    let (m1, t1) = r1?;
    let (m2, t2) = r2?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_HELDOUT));
    let heldout = (0..cfg.heldout_episodes)
        .map(|_| source.sample_episode(cfg.n_way, cfg.k_shot, cfg.queries_per_class, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let heldout_accuracy = [frozen_accuracy(&m1, &heldout)?, frozen_accuracy(&m2, &heldout)?];

    let hash = cfg.model_hash();
    let ckpt = |model| Checkpoint {
        model,
        seed: cfg.seed,
        config_hash: hash,
    };
    Ok(PretrainOutput {
        checkpoints: [ckpt(m1), ckpt(m2)],
        traces: [t1, t2],
        heldout_accuracy,
    })
}

/// `pretrain`: trains both models and writes checkpoints and traces.
pub fn run_pretrain(cfg: &RunConfig) -> Result<PretrainOutput> {
    cfg.validate()?;
    prepare_output_dir(&cfg.output_dir)?;
    let ckpt_dir = cfg.checkpoint_dir();
    prepare_output_dir(ckpt_dir)?;

    let out = pretrain_pair(cfg)?;
    for (ckpt, path) in out.checkpoints.iter().zip(checkpoint_paths(ckpt_dir)) {
        save_checkpoint(&path, ckpt)?;
    }

    let mut csv = String::from("iteration,model,mean_loss,sum_loss,accuracy\n");
    for (m, t) in out.traces.iter().enumerate() {
        for i in 0..t.mean_loss.len() {
            writeln!(csv, "{i},{},{},{},{}", m + 1, t.mean_loss[i], t.sum_loss[i], t.accuracy[i]).unwrap();
        }
    }
    write_file(&cfg.output_dir.join("pretrain_trace.csv"), &csv)?;

    let mut rep = String::new();
    for (m, t) in out.traces.iter().enumerate() {
        writeln!(
            rep,
            "model {}: final mean loss {:.6}, held-out source accuracy {:.4}, log clamps {}",
            m + 1,
            t.mean_loss.last().copied().unwrap_or(f64::NAN),
            out.heldout_accuracy[m],
            t.clamped
        )
        .unwrap();
    }
    writeln!(rep, "\n[config]").unwrap();
    rep.push_str(&cfg.render());
    write_file(&cfg.output_dir.join("pretrain_report.txt"), &rep)?;
    Ok(out)
}

/// Loads both checkpoints and checks them against the configuration.
pub fn load_pretrained(cfg: &RunConfig) -> Result<[ProtoModel; 2]> {
    let [p1, p2] = checkpoint_paths(cfg.checkpoint_dir());
    let load = |p: &Path| {
        load_checkpoint(p).map_err(|e| match e {
            Error::Io { .. } => Error::Checkpoint(format!("{e} (run `pretrain` first?)")),
            other => other,
        })
    };
    let c1 = load(&p1)?;
    let c2 = load(&p2)?;
    for (c, p) in [(&c1, &p1), (&c2, &p2)] {
        if c.config_hash != cfg.model_hash() {
            return Err(Error::Checkpoint(format!(
                "{} was trained under a different domain/model configuration",
                p.display()
            )));
        }
    }
    Ok([c1.model, c2.model])
}

fn check_compatible(models: &[&ProtoModel; 2], domain: &Domain) -> Result<()> {
    for m in models {
        if m.encoder.input_dim() != domain.feature_dim() {
            return Err(Error::config(format!(
                "model {} expects {} input features, target episodes have {}",
                m.model_id(),
                m.encoder.input_dim(),
                domain.feature_dim()
            )));
        }
    }
    if models[0].model_id() == models[1].model_id() {
        return Err(Error::config("campaign needs models 1 and 2"));
    }
    Ok(())
}

struct EpisodeRun {
    result: EpisodeResult,
    losses: Vec<f64>,
    weights: Vec<f64>,
}

fn run_episode(
    cfg: &RunConfig,
    ft: &FinetuneConfig,
    target: &Domain,
    models: [&ProtoModel; 2],
    index: usize,
) -> std::result::Result<EpisodeRun, EpisodeFailure> {
    let seed = cfg.seed.wrapping_add(index as u64);
    let inner = || -> Result<EpisodeRun> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ep = target.sample_episode(cfg.n_way, cfg.k_shot, cfg.queries_per_class, &mut rng)?;
        let mut frozen = Vec::with_capacity(2);
        for m in models {
            let protos = compute_prototypes(&m.encoder, ep.task())?;
            frozen.push(predict_probs(&m.encoder, &protos, ep.task().query_x())?);
        }
        let frozen_co = co_predict_probs(&frozen[0], &frozen[1])?;

        let mut ft = ft.clone();
        ft.seed = derive_seed(seed, STREAM_NEGATIVES);
        let out = finetune(models[0], models[1], ep.task(), &ft)?;
        let [acc_co, acc_m1, acc_m2] = out.accuracies(&ep)?;
        let its = &out.trace.iterations;
        Ok(EpisodeRun {
            result: EpisodeResult {
                episode: index,
                seed,
                acc_co,
                acc_m1,
                acc_m2,
                frozen_m1: evaluate(&frozen[0], &ep)?,
                frozen_m2: evaluate(&frozen[1], &ep)?,
                frozen_co: evaluate(&frozen_co, &ep)?,
                final_loss: its.last().map_or(f64::NAN, |r| r.total_loss[0]),
                clamped: its.iter().map(|r| r.clamped).sum(),
            },
            losses: its.iter().map(|r| r.total_loss[0]).collect(),
            weights: its.iter().map(|r| r.mean_weight).collect(),
        })
    };
    inner().map_err(|e| EpisodeFailure {
        episode: index,
        seed,
        error: e.to_string(),
    })
}

/// Fine-tunes and evaluates `cfg.episodes` target episodes, episode `i`
/// seeded with `cfg.seed + i`. Serial and parallel runs give identical
/// reports apart from wall-clock time.
pub fn campaign_in_memory(
    cfg: &RunConfig,
    variant: Variant,
    ft: &FinetuneConfig,
    target: &Domain,
    m1: &ProtoModel,
    m2: &ProtoModel,
) -> Result<CampaignReport> {
    ft.validate()?;
    check_compatible(&[m1, m2], target)?;
    if target.n_classes() < cfg.n_way {
        return Err(Error::config(format!(
            "target domain has {} classes, episodes need {}",
            target.n_classes(),
            cfg.n_way
        )));
    }
    let started = Instant::now();
    let run = |i: usize| run_episode(cfg, ft, target, [m1, m2], i);
    let outcomes: Vec<_> = if cfg.threads == 1 {
        (0..cfg.episodes).map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (0..cfg.episodes).into_par_iter().map(run).collect())
    };

    let mut episodes = Vec::new();
    let mut failures = Vec::new();
    let mut losses = vec![0.0; ft.total_iterations];
    let mut weights = vec![0.0; ft.total_iterations];
    for o in outcomes {
        match o {
            Ok(run) => {
                for (acc, v) in losses.iter_mut().zip(&run.losses) {
                    *acc += v;
                }
                for (acc, v) in weights.iter_mut().zip(&run.weights) {
                    *acc += v;
                }
                episodes.push(run.result);
            }
            Err(f) => failures.push(f),
        }
    }
    let n = episodes.len().max(1) as f64;
    Ok(CampaignReport {
        variant,
        episodes,
        failures,
        trace: TraceSummary {
            mean_total_loss: losses.into_iter().map(|v| v / n).collect(),
            mean_weight: weights.into_iter().map(|v| v / n).collect(),
        },
        config_echo: cfg.render(),
        wall_clock: started.elapsed(),
    })
}

/// `eval`: one campaign with `cfg.finetune`, written to `cfg.output_dir`.
pub fn run_campaign(cfg: &RunConfig, m1: &ProtoModel, m2: &ProtoModel) -> Result<CampaignReport> {
    cfg.validate()?;
    prepare_output_dir(&cfg.output_dir)?;
    let target = target_domain(cfg)?;
    let report = campaign_in_memory(cfg, cfg.variant, &cfg.finetune, &target, m1, m2)?;
    report.write(&cfg.output_dir)?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct AblationTable {
    pub rows: Vec<CampaignReport>,
}

impl AblationTable {
    pub fn get(&self, v: Variant) -> Option<&CampaignReport> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// `full − variant` per episode, paired by episode seed.
    pub fn paired_against_full(&self, v: Variant) -> Option<PairedDiff> {
        let full = self.get(Variant::Full)?;
        let other = self.get(v)?;
        let mut a = Vec::new();
        let mut b = Vec::new();
        for e in &full.episodes {
            if let Some(o) = other.episodes.iter().find(|o| o.seed == e.seed) {
                a.push(e.acc_co);
                b.push(o.acc_co);
            }
        }
        Some(PairedDiff::of(&a, &b))
    }

    pub fn is_partial(&self) -> bool {
        self.rows.iter().any(CampaignReport::is_partial)
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "{:<22} {:>8} {:>7} {:>9} {:>8} {:>12}",
            "variant", "acc %", "ci95", "full-var", "paired", "W/L/T"
        )
        .unwrap();
        for r in &self.rows {
            let e = r.co();
            let (diff, ci, wlt) = match self.paired_against_full(r.variant) {
                Some(d) if r.variant != Variant::Full => (
                    format!("{:+.2}", 100.0 * d.mean),
                    format!("{:.2}", 100.0 * d.ci95),
                    format!("{}/{}/{}", d.wins, d.losses, d.ties),
                ),
                _ => ("-".into(), "-".into(), "-".into()),
            };
            writeln!(
                s,
                "{:<22} {:>8.2} {:>7.2} {:>9} {:>8} {:>12}",
                r.variant.label(),
                100.0 * e.mean,
                100.0 * e.ci95,
                diff,
                ci,
                wlt
            )
            .unwrap();
        }
        if let Some(full) = self.get(Variant::Full).or(self.rows.first()) {
            let f = full.frozen_m1();
            writeln!(s, "{:<22} {:>8.2} {:>7.2}", "frozen ProtoNet (M1)", 100.0 * f.mean, 100.0 * f.ci95)
                .unwrap();
        }
        s
    }
}

/// Campaigns for every variant on the same episode seeds.
pub fn ablation_in_memory(
    cfg: &RunConfig,
    target: &Domain,
    m1: &ProtoModel,
    m2: &ProtoModel,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(cfg.variants.len());
    for &v in &cfg.variants {
        let ft = FinetuneConfig {
            ablation: v.ablation(),
            ..cfg.finetune.clone()
        };
        rows.push(campaign_in_memory(cfg, v, &ft, target, m1, m2)?);
    }
    Ok(AblationTable { rows })
}

/// `ablate`: one sub-directory per variant plus `ablation.txt`.
pub fn run_ablation_sweep(cfg: &RunConfig, m1: &ProtoModel, m2: &ProtoModel) -> Result<AblationTable> {
    cfg.validate()?;
    prepare_output_dir(&cfg.output_dir)?;
    let target = target_domain(cfg)?;
    let table = ablation_in_memory(cfg, &target, m1, m2)?;
    for r in &table.rows {
        r.write(&cfg.output_dir.join(r.variant.key()))?;
    }
    write_file(&cfg.output_dir.join("ablation.txt"), &table.summary_text())?;
    Ok(table)
}

/// `gen-data`: samples a labeled dataset from the configured synthetic domain.
pub fn run_gen_data(cfg: &RunConfig) -> Result<PathBuf> {
    if cfg.gen_items_per_class == 0 {
        return Err(Error::config("gen_items_per_class must be positive"));
    }
    prepare_output_dir(&cfg.output_dir)?;
    let (src, tgt) = synthetic_domains(cfg)?;
    let (spec, tag) = match cfg.gen_domain {
        GenDomain::Source => (src, "source"),
        GenDomain::Target => (tgt, "target"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_GEN));
    let ds = spec.sample_dataset(cfg.gen_items_per_class, &mut rng, tag)?;
    let path = cfg.output_dir.join(format!("{tag}_embeddings.txt"));
    write_embeddings(&path, &ds)?;
    Ok(path)
}
