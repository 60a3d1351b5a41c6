//! Campaign statistics and the `report.txt` / `episodes.csv` writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Duration;

use crate::awcol::Variant;
use crate::error::{Error, Result};

pub const EPISODES_CSV_HEADER: &str = "episode,seed,acc_co,acc_m1,acc_m2";

/// z-value of the normal approximation behind every reported interval.
pub const Z_95: f64 = 1.96;

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two values.
pub fn stdev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// `1.96 · stdev / √E`.
pub fn ci95_half_width(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    Z_95 * stdev(values) / (values.len() as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub episode: usize,
    pub seed: u64,
    /// Co-prediction accuracy after fine-tuning.
    pub acc_co: f64,
    /// Accuracy of each model's WMA predictions after fine-tuning.
    pub acc_m1: f64,
    pub acc_m2: f64,
    /// Accuracies of the pretrained models before any fine-tuning.
    pub frozen_m1: f64,
    pub frozen_m2: f64,
    pub frozen_co: f64,
    /// Total loss of the last fine-tuning iteration (first active model).
    pub final_loss: f64,
    pub clamped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeFailure {
    pub episode: usize,
    pub seed: u64,
    pub error: String,
}

/// Per-iteration means across episodes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TraceSummary {
    pub mean_total_loss: Vec<f64>,
    pub mean_weight: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignReport {
    pub variant: Variant,
    pub episodes: Vec<EpisodeResult>,
    pub failures: Vec<EpisodeFailure>,
    pub trace: TraceSummary,
    pub config_echo: String,
    pub wall_clock: Duration,
}

/// Mean and 95% half-width of one column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub ci95: f64,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Self {
        Estimate {
            mean: mean(values),
            ci95: ci95_half_width(values),
        }
    }
}

impl CampaignReport {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn column(&self, f: impl Fn(&EpisodeResult) -> f64) -> Vec<f64> {
        self.episodes.iter().map(f).collect()
    }

    pub fn co(&self) -> Estimate {
        Estimate::of(&self.column(|e| e.acc_co))
    }

    pub fn m1(&self) -> Estimate {
        Estimate::of(&self.column(|e| e.acc_m1))
    }

    pub fn m2(&self) -> Estimate {
        Estimate::of(&self.column(|e| e.acc_m2))
    }

    pub fn frozen_m1(&self) -> Estimate {
        Estimate::of(&self.column(|e| e.frozen_m1))
    }

    pub fn frozen_co(&self) -> Estimate {
        Estimate::of(&self.column(|e| e.frozen_co))
    }

    /// Paired gain of the fine-tuned co-prediction over the frozen model 1.
    pub fn gain_over_frozen(&self) -> PairedDiff {
        PairedDiff::of(&self.column(|e| e.acc_co), &self.column(|e| e.frozen_m1))
    }

    /// Same columns and bytes as the file written by [`write_episodes_csv`].
    pub fn episodes_csv(&self) -> String {
        let mut out = String::from(EPISODES_CSV_HEADER);
        out.push('\n');
        for e in &self.episodes {
            writeln!(out, "{},{},{},{},{}", e.episode, e.seed, e.acc_co, e.acc_m1, e.acc_m2).unwrap();
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let pct = |e: Estimate| format!("{:.2} ({:.2})", 100.0 * e.mean, 100.0 * e.ci95);
        writeln!(s, "variant: {} [{}]", self.variant.label(), self.variant.key()).unwrap();
        writeln!(
            s,
            "episodes: {} completed, {} failed{}",
            self.episodes.len(),
            self.failures.len(),
            if self.is_partial() { " (PARTIAL)" } else { "" }
        )
        .unwrap();
        writeln!(s, "accuracy %, mean (95% CI half-width = 1.96*sd/sqrt(E)):").unwrap();
        writeln!(s, "  co-prediction      {}", pct(self.co())).unwrap();
        writeln!(s, "  model 1 WMA        {}", pct(self.m1())).unwrap();
        writeln!(s, "  model 2 WMA        {}", pct(self.m2())).unwrap();
        writeln!(s, "  frozen model 1     {}", pct(self.frozen_m1())).unwrap();
        writeln!(
            s,
            "  frozen model 2     {}",
            pct(Estimate::of(&self.column(|e| e.frozen_m2)))
        )
        .unwrap();
        writeln!(s, "  frozen co-ensemble {}", pct(self.frozen_co())).unwrap();
        let g = self.gain_over_frozen();
        writeln!(
            s,
            "gain over frozen model 1: {:+.2} points (paired CI {:.2}), wins/losses/ties {}/{}/{}",
            100.0 * g.mean,
            100.0 * g.ci95,
            g.wins,
            g.losses,
            g.ties
        )
        .unwrap();
        let clamps: usize = self.episodes.iter().map(|e| e.clamped).sum();
        writeln!(s, "log-clamp activations: {clamps}").unwrap();
        for f in &self.failures {
            writeln!(s, "failed episode {} (seed {}): {}", f.episode, f.seed, f.error).unwrap();
        }
        writeln!(s, "\n[config]").unwrap();
        s.push_str(&self.config_echo);
        s
    }

    /// Writes `report.txt`, `episodes.csv`, `trace.csv` and `timing.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("episodes.csv"), &self.episodes_csv())?;
        write_file(&dir.join("report.txt"), &self.summary_text())?;
        let mut trace = String::from("iteration,mean_total_loss,mean_weight\n");
        for (i, (l, w)) in self
            .trace
            .mean_total_loss
            .iter()
            .zip(&self.trace.mean_weight)
            .enumerate()
        {
            writeln!(trace, "{i},{l},{w}").unwrap();
        }
        write_file(&dir.join("trace.csv"), &trace)?;
        write_file(
            &dir.join("timing.txt"),
            &format!("wall_clock_seconds = {:.3}\n", self.wall_clock.as_secs_f64()),
        )
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Paired difference `a − b` across episodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedDiff {
    pub mean: f64,
    pub ci95: f64,
    /// Episodes with `a > b`, `a < b`, `a == b`.
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
}

impl PairedDiff {
    pub fn of(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len(), "paired columns differ in length");
        let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        PairedDiff {
            mean: mean(&diffs),
            ci95: ci95_half_width(&diffs),
            wins: diffs.iter().filter(|&&d| d > 0.0).count(),
            losses: diffs.iter().filter(|&&d| d < 0.0).count(),
            ties: diffs.iter().filter(|&&d| d == 0.0).count(),
        }
    }

    /// The 95% interval lies strictly above zero.
    pub fn excludes_zero_above(&self) -> bool {
        self.mean - self.ci95 > 0.0
    }
}

/// One parsed `episodes.csv` row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeRow {
    pub episode: usize,
    pub seed: u64,
    pub acc_co: f64,
    pub acc_m1: f64,
    pub acc_m2: f64,
}

pub fn read_episodes_csv(path: &Path) -> Result<Vec<EpisodeRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let err = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = text.lines();
    if lines.next() != Some(EPISODES_CSV_HEADER) {
        return Err(err(1, "unexpected header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(err(i + 2, "expected 5 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(i + 2, "bad number"));
            Ok(EpisodeRow {
                episode: f[0].parse().map_err(|_| err(i + 2, "bad episode index"))?,
                seed: f[1].parse().map_err(|_| err(i + 2, "bad seed"))?,
                acc_co: num(f[2])?,
                acc_m1: num(f[3])?,
                acc_m2: num(f[4])?,
            })
        })
        .collect()
}
