//! Fixtures shared by the benchmarks: a lightly pretrained model pair and
//! target episodes drawn from the default shifted domain.

use awcol_core::harness::{pretrain_pair, target_domain, Domain, RunConfig};
use awcol_core::taskgen::EpisodeSource;
use awcol_core::{Episode, ProtoModel, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub cfg: RunConfig,
    pub models: [ProtoModel; 2],
    pub target: Domain,
}

impl Fixture {
    /// Default architecture and domain with a short pretraining schedule.
    pub fn new() -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.pretrain_iterations = 20;
        cfg.pretrain_tasks = 10;
        cfg.heldout_episodes = 1;
        let [c1, c2] = pretrain_pair(&cfg)?.checkpoints;
        let target = target_domain(&cfg)?;
        Ok(Fixture {
            cfg,
            models: [c1.model, c2.model],
            target,
        })
    }

    pub fn episode(&self, seed: u64) -> Result<Episode> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.target
            .sample_episode(self.cfg.n_way, self.cfg.k_shot, self.cfg.queries_per_class, &mut rng)
    }
}
