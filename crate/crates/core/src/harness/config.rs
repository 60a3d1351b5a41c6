//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::awcol::{AnnealSchedule, FinetuneConfig, Variant};
use crate::error::{Error, Result};
use crate::taskgen::ShiftOptions;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Base seed: pretraining streams and `seed + episode_index` per campaign episode.
    pub seed: u64,
    /// Seed of the synthetic source/target domain pair.
    pub domain_seed: u64,

    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_class: usize,
    pub episodes: usize,

    pub input_dim: usize,
    pub source_classes: usize,
    pub target_classes: usize,
    pub severity: f64,
    pub shift: ShiftOptions,

    pub hidden: Vec<usize>,
    pub embed_dim: usize,

    pub pretrain_iterations: usize,
    pub pretrain_tasks: usize,
    pub pretrain_lr: f64,
    pub heldout_episodes: usize,

    pub finetune: FinetuneConfig,
    /// Variant used by `eval`.
    pub variant: Variant,
    /// Variants run by `ablate`.
    pub variants: Vec<Variant>,

    pub source_embeddings: Option<PathBuf>,
    pub target_embeddings: Option<PathBuf>,
    pub gen_items_per_class: usize,
    pub gen_domain: GenDomain,

    pub output_dir: PathBuf,
    pub checkpoint_dir: Option<PathBuf>,
    /// Campaign worker threads; 0 uses every core.
    pub threads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenDomain {
    Source,
    Target,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            domain_seed: 7,
            n_way: 5,
            k_shot: 5,
            queries_per_class: 15,
            episodes: 600,
            input_dim: 16,
            source_classes: 64,
            target_classes: 20,
            severity: 0.7,
            shift: ShiftOptions::default(),
            hidden: vec![64, 64],
            embed_dim: 32,
            pretrain_iterations: 400,
            pretrain_tasks: 100,
            pretrain_lr: 1e-3,
            heldout_episodes: 100,
            finetune: FinetuneConfig::default(),
            variant: Variant::Full,
            variants: Variant::ALL.to_vec(),
            source_embeddings: None,
            target_embeddings: None,
            gen_items_per_class: 50,
            gen_domain: GenDomain::Target,
            output_dir: PathBuf::from("out"),
            checkpoint_dir: None,
            threads: 1,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("`{key}`: expected true/false, got `{v}`"))),
    }
}

fn parse_variant(key: &str, v: &str) -> Result<Variant> {
    Variant::from_key(v).ok_or_else(|| {
        let known: Vec<_> = Variant::ALL.iter().map(|v| v.key()).collect();
        Error::config(format!("`{key}`: unknown variant `{v}` (known: {})", known.join(", ")))
    })
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` setting; unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let ft = &mut self.finetune;
        let ab = &mut ft.ablation;
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "domain_seed" => self.domain_seed = parse_num(key, v)?,
            "n_way" => self.n_way = parse_num(key, v)?,
            "k_shot" => self.k_shot = parse_num(key, v)?,
            "queries_per_class" => self.queries_per_class = parse_num(key, v)?,
            "episodes" => self.episodes = parse_num(key, v)?,
            "input_dim" => self.input_dim = parse_num(key, v)?,
            "source_classes" => self.source_classes = parse_num(key, v)?,
            "target_classes" => self.target_classes = parse_num(key, v)?,
            "severity" => self.severity = parse_num(key, v)?,
            "noise_scale" => self.shift.noise_scale = parse_num(key, v)?,
            "center_radius" => self.shift.radius = parse_num(key, v)?,
            "min_separation" => self.shift.min_separation = parse_num(key, v)?,
            "max_translation" => self.shift.max_translation = parse_num(key, v)?,
            "scale_shift" => self.shift.scale_shift = parse_num(key, v)?,
            "hidden" => {
                self.hidden = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|s| parse_num(key, s.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "embed_dim" => self.embed_dim = parse_num(key, v)?,
            "pretrain_iterations" => self.pretrain_iterations = parse_num(key, v)?,
            "pretrain_tasks" => self.pretrain_tasks = parse_num(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse_num(key, v)?,
            "heldout_episodes" => self.heldout_episodes = parse_num(key, v)?,
            "finetune_iterations" => ft.total_iterations = parse_num(key, v)?,
            "beta" => ft.beta = parse_num(key, v)?,
            "lambda" => ft.lambda = parse_num(key, v)?,
            "finetune_lr" => ft.learning_rate = parse_num(key, v)?,
            "alpha0" => ft.schedule.alpha0 = parse_num(key, v)?,
            "alpha_min" => ft.schedule.alpha_min = parse_num(key, v)?,
            "gamma" => ft.schedule.gamma = parse_num(key, v)?,
            "no_colearn" => ab.no_colearn = parse_bool(key, v)?,
            "simultaneous_update" => ab.simultaneous_update = parse_bool(key, v)?,
            "no_wma" => ab.no_wma = parse_bool(key, v)?,
            "drop_co_loss" => ab.drop_co_loss = parse_bool(key, v)?,
            "drop_neg_loss" => ab.drop_neg_loss = parse_bool(key, v)?,
            "unit_weights" => ab.unit_weights = parse_bool(key, v)?,
            "add_support_loss" => ab.add_support_loss = parse_bool(key, v)?,
            "variant" => {
                self.variant = parse_variant(key, v)?;
                ft.ablation = self.variant.ablation();
            }
            "variants" => {
                self.variants = v
                    .split(',')
                    .map(|s| parse_variant(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "source_embeddings" => self.source_embeddings = non_empty_path(v),
            "target_embeddings" => self.target_embeddings = non_empty_path(v),
            "gen_items_per_class" => self.gen_items_per_class = parse_num(key, v)?,
            "gen_domain" => {
                self.gen_domain = match v {
                    "source" => GenDomain::Source,
                    "target" => GenDomain::Target,
                    _ => return Err(Error::config(format!("`{key}`: expected source or target"))),
                }
            }
            "output_dir" => self.output_dir = PathBuf::from(v),
            "checkpoint_dir" => self.checkpoint_dir = non_empty_path(v),
            "threads" => self.threads = parse_num(key, v)?,
            _ => return Err(Error::config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected `key = value`, got `{raw}`", i + 1))
            })?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::config(format!("line {}: {e}", i + 1)))?;
        }
        if let Some(dir) = base_dir {
            cfg.resolve_relative(dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, path.parent())
    }

    fn resolve_relative(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for p in [
            &mut self.checkpoint_dir,
            &mut self.source_embeddings,
            &mut self.target_embeddings,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn checkpoint_dir(&self) -> &Path {
        self.checkpoint_dir.as_deref().unwrap_or(&self.output_dir)
    }

    /// Encoder widths from input to embedding.
    pub fn encoder_sizes(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(self.embed_dim))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::config("episodes must be at least 1"));
        }
        if self.n_way < 2 || self.k_shot == 0 || self.queries_per_class == 0 {
            return Err(Error::config("need n_way >= 2, k_shot >= 1, queries_per_class >= 1"));
        }
        if self.embed_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if !(0.0..=1.0).contains(&self.severity) {
            return Err(Error::config("severity must lie in [0, 1]"));
        }
        if !(self.pretrain_lr > 0.0) {
            return Err(Error::config("pretrain_lr must be positive"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants must not be empty"));
        }
        for p in [&self.source_embeddings, &self.target_embeddings].into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::config(format!("embedding file {} does not exist", p.display())));
            }
        }
        self.finetune.validate()
    }

    /// Every setting as `key = value` lines, in a fixed order.
    pub fn render(&self) -> String {
        let ft = &self.finetune;
        let ab = &ft.ablation;
        let s: &AnnealSchedule = &ft.schedule;
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k} = {v}").unwrap();
        kv("seed", self.seed.to_string());
        kv("domain_seed", self.domain_seed.to_string());
        kv("n_way", self.n_way.to_string());
        kv("k_shot", self.k_shot.to_string());
        kv("queries_per_class", self.queries_per_class.to_string());
        kv("episodes", self.episodes.to_string());
        kv("input_dim", self.input_dim.to_string());
        kv("source_classes", self.source_classes.to_string());
        kv("target_classes", self.target_classes.to_string());
        kv("severity", self.severity.to_string());
        kv("noise_scale", self.shift.noise_scale.to_string());
        kv("center_radius", self.shift.radius.to_string());
        kv("min_separation", self.shift.min_separation.to_string());
        kv("max_translation", self.shift.max_translation.to_string());
        kv("scale_shift", self.shift.scale_shift.to_string());
        kv("hidden", join(&self.hidden));
        kv("embed_dim", self.embed_dim.to_string());
        kv("pretrain_iterations", self.pretrain_iterations.to_string());
        kv("pretrain_tasks", self.pretrain_tasks.to_string());
        kv("pretrain_lr", self.pretrain_lr.to_string());
        kv("heldout_episodes", self.heldout_episodes.to_string());
        kv("finetune_iterations", ft.total_iterations.to_string());
        kv("beta", ft.beta.to_string());
        kv("lambda", ft.lambda.to_string());
        kv("finetune_lr", ft.learning_rate.to_string());
        kv("alpha0", s.alpha0.to_string());
        kv("alpha_min", s.alpha_min.to_string());
        kv("gamma", s.gamma.to_string());
        kv("variant", self.variant.key().to_string());
        kv("no_colearn", ab.no_colearn.to_string());
        kv("simultaneous_update", ab.simultaneous_update.to_string());
        kv("no_wma", ab.no_wma.to_string());
        kv("drop_co_loss", ab.drop_co_loss.to_string());
        kv("drop_neg_loss", ab.drop_neg_loss.to_string());
        kv("unit_weights", ab.unit_weights.to_string());
        kv("add_support_loss", ab.add_support_loss.to_string());
        kv(
            "variants",
            self.variants.iter().map(|v| v.key()).collect::<Vec<_>>().join(","),
        );
        kv("source_embeddings", opt(&self.source_embeddings));
        kv("target_embeddings", opt(&self.target_embeddings));
        kv("gen_items_per_class", self.gen_items_per_class.to_string());
        kv(
            "gen_domain",
            match self.gen_domain {
                GenDomain::Source => "source",
                GenDomain::Target => "target",
            }
            .to_string(),
        );
        kv("output_dir", self.output_dir.display().to_string());
        kv("checkpoint_dir", opt(&self.checkpoint_dir));
        kv("threads", self.threads.to_string());
        out
    }

    /// Fingerprint of everything that determines a pretrained model: source
    /// domain, architecture and pretraining schedule. Target-side settings
    /// (severity, translation, target classes) are left out so one pair of
    /// checkpoints serves a whole severity sweep.
    pub fn model_hash(&self) -> u64 {
        let mut s = String::new();
        write!(
            s,
            "{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
            self.domain_seed,
            self.input_dim,
            self.source_classes,
            self.shift.radius,
            self.shift.noise_scale,
            self.shift.min_separation,
            join(&self.hidden),
            self.embed_dim,
            self.pretrain_iterations,
            self.pretrain_tasks,
            self.pretrain_lr,
            self.source_embeddings
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        )
        .unwrap();
        fnv1a(s.as_bytes())
    }
}

fn non_empty_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Decorrelated child seed for a named stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
