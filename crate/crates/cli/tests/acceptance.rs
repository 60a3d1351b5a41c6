//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits non-zero if any check fails.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use awcol_core::awcol::{
    co_predict_probs, finetune, make_pseudo_batch, negative_loss, objective, weighted_co_loss,
    AnnealSchedule, FinetuneConfig, LossSwitches, Variant,
};
use awcol_core::harness::{
    ablation_in_memory, campaign_in_memory, pretrain_pair, target_domain, AblationTable,
    CampaignReport, Domain, PairedDiff, RunConfig,
};
use awcol_core::numerics::{finite_diff_gradient, max_relative_error, softmax_rows, EncoderParams};
use awcol_core::protonet::{ce_loss, compute_prototypes, predict_probs, weighted_ce, TaskForward};
use awcol_core::taskgen::{make_shift_pair, DomainSpec, EpisodeSource};
use awcol_core::{Episode, Matrix, ProtoModel, Task};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let checks: Vec<(&str, fn() -> Outcome)> = vec![
        ("gradient", gradient_suite),
        ("simplex", simplex_suite),
        ("schedule", schedule_suite),
        ("anchoring", anchoring_suite),
        ("oracle", oracle_suite),
        ("shift-gain", shift_gain),
        ("ablation-direction", ablation_direction),
        ("determinism", determinism),
        ("chance-level", chance_level),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in checks {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_message(&p))));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name:<20} {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name:<20} {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

// ---------------------------------------------------------------- fixtures

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn random_simplex(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    softmax_rows(&uniform(rng, rows, cols, -3.0, 3.0))
}

/// Random labeled task with classes grouped in order.
fn random_episode(rng: &mut ChaCha8Rng, n: usize, k: usize, q: usize, dim: usize) -> Episode {
    let support_labels: Vec<usize> = (0..n).flat_map(|c| std::iter::repeat_n(c, k)).collect();
    let query_labels: Vec<usize> = (0..n).flat_map(|c| std::iter::repeat_n(c, q)).collect();
    let task = Task::new(
        n,
        k,
        uniform(rng, n * k, dim, -2.0, 2.0),
        support_labels,
        uniform(rng, n * q, dim, -2.0, 2.0),
    )
    .unwrap();
    Episode::new(task, query_labels).unwrap()
}

fn target_spec(seed: u64) -> DomainSpec {
    make_shift_pair(seed, 64, 20, 16, 0.7).unwrap().1
}

fn random_models(seed: u64, sizes: &[usize]) -> [ProtoModel; 2] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    [1, 2].map(|id| ProtoModel::new(id, EncoderParams::init(sizes, &mut rng).unwrap(), 1e-3).unwrap())
}

// ---------------------------------------------------------------- gradient

const FD_STEP: f64 = 1e-5;
/// Gradient entries smaller than this are compared in absolute terms
/// (|a - b| / 1e-4), so an exact zero against finite-difference round-off
/// does not count as a relative error of 1.
const FD_FLOOR: f64 = 1e-4;
const FD_TOLERANCE: f64 = 1e-5;

fn gradient_suite() -> Outcome {
    let started = Instant::now();
    let mut worst_ce: f64 = 0.0;
    let mut worst_total: f64 = 0.0;
    let seeds = 12;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let ep = random_episode(&mut rng, 5, 3, 4, 6);
        let task = ep.task();
        let labels = ep.query_labels();
        let enc = EncoderParams::init(&[6, 8, 8, 4], &mut rng).unwrap();

        let fwd = TaskForward::run(&enc, task).unwrap();
        let unit = vec![1.0; labels.len()];
        let d = weighted_ce(&fwd.query_probs(), labels, &unit).unwrap().d_logits;
        let analytic = fwd.backward(&enc, None, Some(&d)).unwrap();
        let numeric = finite_diff_gradient(
            |p| ce_loss(&TaskForward::run(p, task).unwrap().query_probs(), labels).unwrap().mean,
            &enc,
            FD_STEP,
        )
        .unwrap();
        worst_ce = worst_ce.max(max_relative_error(&analytic, &numeric, FD_FLOOR));

        let co = random_simplex(&mut rng, labels.len(), 5);
        let batch = make_pseudo_batch(&co, &mut rng).unwrap();
        for lambda in [1e-2, 1.0] {
            let sw = LossSwitches::full(lambda);
            let terms = objective(&fwd, &enc, task, &batch, sw).unwrap();
            ensure!(!terms.neg_floored, "seed {seed}: negative loss unexpectedly floored");
            let numeric = finite_diff_gradient(
                |p| objective(&TaskForward::run(p, task).unwrap(), p, task, &batch, sw).unwrap().total,
                &enc,
                FD_STEP,
            )
            .unwrap();
            worst_total = worst_total.max(max_relative_error(&terms.grads, &numeric, FD_FLOOR));
        }
    }
    let elapsed = started.elapsed();
    let detail = format!(
        "{seeds} seeds, max rel err: prototypical CE {worst_ce:.2e}, total loss {worst_total:.2e} (tol {FD_TOLERANCE:e}), {:.1}s",
        elapsed.as_secs_f64()
    );
    ensure!(worst_ce < FD_TOLERANCE && worst_total < FD_TOLERANCE, "{detail}");
    ensure!(elapsed < Duration::from_secs(30), "{detail}: over the 30s budget");
    Ok(detail)
}

// ---------------------------------------------------------------- simplex

fn simplex_suite() -> Outcome {
    let spec = target_spec(3);
    let cfg = FinetuneConfig {
        record_states: true,
        ..FinetuneConfig::default()
    };
    let mut rows = 0usize;
    let mut violations = 0usize;
    let mut worst: f64 = 0.0;
    for e in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(e);
        let ep = spec.sample_episode(5, 5, 15, &mut rng).unwrap();
        let [m1, m2] = random_models(100 + e, &[16, 32, 16]);
        let out = finetune(&m1, &m2, ep.task(), &FinetuneConfig { seed: e, ..cfg.clone() }).unwrap();
        ensure!(out.trace.snapshots.len() == 100, "expected 100 snapshots");
        for snap in &out.trace.snapshots {
            for m in [&snap.wma[0], &snap.wma[1], &snap.co_probs] {
                for row in m.row_iter() {
                    rows += 1;
                    let dev = (row.iter().sum::<f64>() - 1.0).abs();
                    worst = worst.max(dev);
                    if dev > 1e-9 || row.iter().any(|&p| p < 0.0) {
                        violations += 1;
                    }
                }
            }
        }
    }
    let detail = format!("{rows} rows checked, {violations} violations, max |sum-1| {worst:.1e}");
    ensure!(violations == 0, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- schedule

fn schedule_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ep = random_episode(&mut rng, 5, 2, 3, 4);
    let [m1, m2] = random_models(6, &[4, 6, 3]);
    let cfg = FinetuneConfig {
        total_iterations: 400,
        ..FinetuneConfig::default()
    };
    let out = finetune(&m1, &m2, ep.task(), &cfg).unwrap();

    let sched = AnnealSchedule::default();
    let mut expected = Vec::with_capacity(200);
    let mut a = sched.alpha0;
    for _ in 0..200 {
        expected.push(a);
        a = f64::max(sched.alpha_min, sched.gamma * a);
    }
    let clamp_at = expected.iter().position(|&v| v == sched.alpha_min);
    for (m, hist) in out.trace.alpha_history.iter().enumerate() {
        ensure!(hist.len() == 200, "model {} made {} updates, expected 200", m + 1, hist.len());
        let mismatch = hist.iter().zip(&expected).position(|(x, y)| x.to_bits() != y.to_bits());
        ensure!(mismatch.is_none(), "model {} alpha differs at update {:?}", m + 1, mismatch);
        let got = hist.iter().position(|&v| v == sched.alpha_min);
        ensure!(got == Some(161), "model {} clamps at {:?}, expected 161", m + 1, got);
    }
    Ok(format!("200 updates per model bit-equal to the recurrence, clamp at step {}", clamp_at.unwrap()))
}

// ---------------------------------------------------------------- anchoring

fn anchoring_suite() -> Outcome {
    let spec = target_spec(4);
    let beta = 5;
    let mut checked = 0;
    for e in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(50 + e);
        let ep = spec.sample_episode(5, 5, 15, &mut rng).unwrap();
        let [m1, m2] = random_models(200 + e, &[16, 32, 16]);
        let cfg = FinetuneConfig {
            beta,
            record_states: true,
            seed: e,
            ..FinetuneConfig::default()
        };
        let out = finetune(&m1, &m2, ep.task(), &cfg).unwrap();
        let snaps = &out.trace.snapshots;
        for t in beta..snaps.len() {
            let active = (t / beta) % 2;
            let fixed = 1 - active;
            let same = |a: &Matrix, b: &Matrix| {
                a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
            };
            ensure!(
                same(&snaps[t].wma[fixed], &snaps[t - 1].wma[fixed]),
                "episode {e}: fixed model {} WMA changed at iteration {t}",
                fixed + 1
            );
            ensure!(
                !same(&snaps[t].wma[active], &snaps[t - 1].wma[active]),
                "episode {e}: active model {} WMA frozen at iteration {t}",
                active + 1
            );
            checked += 1;
        }
    }
    Ok(format!("{checked} iterations: fixed WMA bit-unchanged, active WMA updated"))
}

// ---------------------------------------------------------------- oracles

const ORACLE_TOL: f64 = 1e-12;
const EPS: f64 = 1e-12;

fn scalar_embed(enc: &EncoderParams, x: &[f64]) -> Vec<f64> {
    let layers = enc.layers();
    let mut h = x.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let (out, inp) = (layer.weight.rows(), layer.weight.cols());
        let mut z = vec![0.0; out];
        for j in 0..out {
            let mut s = layer.bias[j];
            for i in 0..inp {
                s += layer.weight[(j, i)] * h[i];
            }
            z[j] = if l + 1 < layers.len() { s.tanh() } else { s };
        }
        h = z;
    }
    h
}

fn scalar_prototypes(enc: &EncoderParams, task: &Task) -> Vec<Vec<f64>> {
    let dim = enc.output_dim();
    let mut sums = vec![vec![0.0; dim]; task.n_way()];
    let mut counts = vec![0usize; task.n_way()];
    for (i, &c) in task.support_labels().iter().enumerate() {
        let e = scalar_embed(enc, task.support_x().row(i));
        for d in 0..dim {
            sums[c][d] += e[d];
        }
        counts[c] += 1;
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= n as f64;
        }
    }
    sums
}

fn scalar_softmax(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn scalar_probs(enc: &EncoderParams, protos: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let e = scalar_embed(enc, x);
    let logits: Vec<f64> = protos
        .iter()
        .map(|c| -c.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .collect();
    scalar_softmax(&logits)
}

fn scalar_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

fn scalar_weighted_ce(probs: &[Vec<f64>], targets: &[usize], weights: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for b in 0..probs.len() {
        num += weights[b] * -probs[b][targets[b]].max(EPS).ln();
        den += weights[b];
    }
    num / den
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= ORACLE_TOL * a.abs().max(b.abs()).max(1.0)
}

fn oracle_suite() -> Outcome {
    let mut worst = [0.0f64; 8];
    let names = [
        "prototypes",
        "distance softmax",
        "query cross-entropy",
        "co-prediction",
        "positive labels",
        "confidence weights",
        "weighted co-loss",
        "negative loss",
    ];
    let mut track = |i: usize, a: f64, b: f64| {
        worst[i] = worst[i].max((a - b).abs());
        close(a, b)
    };
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + case);
        let n = rng.random_range(2..=5);
        let k = rng.random_range(1..=3);
        let q = rng.random_range(1..=3);
        let dim = rng.random_range(2..=5);
        let ep = random_episode(&mut rng, n, k, q, dim);
        let task = ep.task();
        let hidden = rng.random_range(2..=6);
        let enc = EncoderParams::init(&[dim, hidden, 3], &mut rng).unwrap();

        let protos = compute_prototypes(&enc, task).unwrap();
        let oracle_protos = scalar_prototypes(&enc, task);
        for c in 0..n {
            for d in 0..3 {
                ensure!(track(0, protos.vectors[(c, d)], oracle_protos[c][d]), "case {case}: prototype ({c},{d})");
            }
        }

        let probs = predict_probs(&enc, &protos, task.query_x()).unwrap();
        let oracle_probs: Vec<Vec<f64>> = (0..task.n_query())
            .map(|b| scalar_probs(&enc, &oracle_protos, task.query_x().row(b)))
            .collect();
        for b in 0..task.n_query() {
            for c in 0..n {
                ensure!(track(1, probs[(b, c)], oracle_probs[b][c]), "case {case}: probability ({b},{c})");
            }
        }

        let labels = ep.query_labels();
        let ce = ce_loss(&probs, labels).unwrap();
        let oracle_ce: f64 = labels.iter().enumerate().map(|(b, &y)| -oracle_probs[b][y].max(EPS).ln()).sum();
        ensure!(track(2, ce.sum, oracle_ce), "case {case}: CE sum");
        ensure!(track(2, ce.mean, oracle_ce / labels.len() as f64), "case {case}: CE mean");

        let (wa, wb) = (random_simplex(&mut rng, task.n_query(), n), random_simplex(&mut rng, task.n_query(), n));
        // quantized rows exercise argmax ties
        let wa = if case % 4 == 0 { wa.map(|v| (v * 4.0).round() / 4.0) } else { wa };
        let co = co_predict_probs(&wa, &wb).unwrap();
        let mut oracle_co = Vec::new();
        for b in 0..task.n_query() {
            let avg: Vec<f64> = (0..n).map(|c| (wa[(b, c)] + wb[(b, c)]) / 2.0).collect();
            let row = scalar_softmax(&avg);
            for c in 0..n {
                ensure!(track(3, co[(b, c)], row[c]), "case {case}: co-prediction ({b},{c})");
            }
            oracle_co.push(row);
        }

        let batch = make_pseudo_batch(&co, &mut rng).unwrap();
        for b in 0..task.n_query() {
            let pos = scalar_argmax(&oracle_co[b]);
            ensure!(batch.positive[b] == pos, "case {case}: positive label row {b}");
            track(4, batch.positive[b] as f64, pos as f64);
            let w = oracle_co[b].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ensure!(track(5, batch.weights[b], w), "case {case}: weight row {b}");
            ensure!(batch.negative[b] != pos && batch.negative[b] < n, "case {case}: negative label row {b}");
        }

        let (co_loss, _) = weighted_co_loss(&enc, task, &batch).unwrap();
        let oracle_co_loss = scalar_weighted_ce(&oracle_probs, &batch.positive, &batch.weights);
        ensure!(track(6, co_loss, oracle_co_loss), "case {case}: co-loss {co_loss} vs {oracle_co_loss}");
        let neg = negative_loss(&enc, task, &batch).unwrap();
        let oracle_neg = scalar_weighted_ce(&oracle_probs, &batch.negative, &batch.weights);
        ensure!(track(7, neg, oracle_neg), "case {case}: negative loss {neg} vs {oracle_neg}");
    }
    let summary: Vec<String> = names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.0e}")).collect();
    Ok(format!("100 cases each, max abs diff: {}", summary.join(", ")))
}

// ---------------------------------------------------------------- campaigns

struct Shared {
    cfg: RunConfig,
    pretrain_time: Duration,
    table: AblationTable,
}

fn campaign_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.severity = 0.7;
    cfg.n_way = 5;
    cfg.k_shot = 5;
    cfg.episodes = 100;
    cfg.threads = 1;
    // shortened source schedule; see README
    cfg.pretrain_iterations = 100;
    cfg.pretrain_tasks = 20;
    cfg.heldout_episodes = 50;
    cfg
}

fn shared() -> &'static Shared {
    static SHARED: std::sync::OnceLock<Shared> = std::sync::OnceLock::new();
    SHARED.get_or_init(|| {
        let cfg = campaign_config();
        let started = Instant::now();
        let [c1, c2] = pretrain_pair(&cfg).unwrap().checkpoints;
        let pretrain_time = started.elapsed();
        let target = target_domain(&cfg).unwrap();
        let table = ablation_in_memory(&cfg, &target, &c1.model, &c2.model).unwrap();
        Shared {
            cfg,
            pretrain_time,
            table,
        }
    })
}

fn shift_gain() -> Outcome {
    let s = shared();
    let full: &CampaignReport = s.table.get(Variant::Full).ok_or("no full-model row")?;
    ensure!(full.episodes.len() == s.cfg.episodes && !full.is_partial(), "campaign incomplete");
    let g = full.gain_over_frozen();
    let runtime = s.pretrain_time + full.wall_clock;
    let detail = format!(
        "co {:.2}% vs frozen M1 {:.2}%: gain {:+.2} pts, paired CI ±{:.2}, W/L/T {}/{}/{}, runtime {:.0}s",
        100.0 * full.co().mean,
        100.0 * full.frozen_m1().mean,
        100.0 * g.mean,
        100.0 * g.ci95,
        g.wins,
        g.losses,
        g.ties,
        runtime.as_secs_f64()
    );
    ensure!(g.mean >= 0.05, "{detail}: gain below 5 points");
    ensure!(g.excludes_zero_above(), "{detail}: CI includes 0");
    ensure!(runtime < Duration::from_secs(600), "{detail}: over the 10 min budget");
    Ok(detail)
}

fn ablation_direction() -> Outcome {
    let s = shared();
    let full = s.table.get(Variant::Full).ok_or("no full-model row")?.co().mean;
    let mut lines = Vec::new();
    let mut violations = Vec::new();
    for v in Variant::ALL {
        let r = s.table.get(v).ok_or_else(|| format!("missing {}", v.key()))?;
        ensure!(
            r.episodes.iter().map(|e| e.seed).eq(s.table.rows[0].episodes.iter().map(|e| e.seed)),
            "{} used different episode seeds",
            v.key()
        );
        let d: PairedDiff = s.table.paired_against_full(v).unwrap();
        lines.push(format!(
            "{}={:.2}% (full-var {:+.2}, W/L/T {}/{}/{})",
            v.key(),
            100.0 * r.co().mean,
            100.0 * d.mean,
            d.wins,
            d.losses,
            d.ties
        ));
        let required = matches!(v, Variant::NoCoLearn | Variant::NoCoLoss | Variant::NoWma);
        if required && full < r.co().mean {
            violations.push(v.key());
        }
    }
    let detail = lines.join("; ");
    ensure!(violations.is_empty(), "full below {}: {detail}", violations.join(", "));
    Ok(detail)
}

// ---------------------------------------------------------------- determinism

fn awcol(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_awcol"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("awcol {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn read(p: &Path) -> Result<String, String> {
    fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))
}

/// `report.txt` without the lines that name the output directory or thread count.
fn report_body(p: &Path) -> Result<String, String> {
    Ok(read(p)?
        .lines()
        .filter(|l| !l.starts_with("output_dir =") && !l.starts_with("threads ="))
        .collect::<Vec<_>>()
        .join("\n"))
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    fs::write(
        dir.join("run.cfg"),
        "pretrain_iterations = 20\npretrain_tasks = 5\nheldout_episodes = 5\nepisodes = 12\ncheckpoint_dir = ckpt\n",
    )
    .map_err(|e| e.to_string())?;
    awcol(&["pretrain", "--config", "run.cfg", "--seed", "11"], dir)?;
    for (out, threads) in [("a", "1"), ("b", "1"), ("c", "4")] {
        awcol(
            &[
                "eval", "--config", "run.cfg", "--seed", "11",
                "--set", &format!("output_dir={out}"),
                "--set", &format!("threads={threads}"),
            ],
            dir,
        )?;
    }
    let csv = |d: &str| fs::read(dir.join(d).join("episodes.csv")).map_err(|e| e.to_string());
    ensure!(csv("a")? == csv("b")?, "two serial eval runs wrote different episodes.csv");
    ensure!(csv("a")? == csv("c")?, "serial and parallel eval runs wrote different episodes.csv");
    for f in ["trace.csv"] {
        ensure!(read(&dir.join("a").join(f))? == read(&dir.join("c").join(f))?, "{f} differs serial vs parallel");
    }
    ensure!(
        report_body(&dir.join("a/report.txt"))? == report_body(&dir.join("c/report.txt"))?,
        "report.txt differs serial vs parallel"
    );

    // in memory: every field except wall-clock
    let mut cfg = RunConfig::default();
    cfg.episodes = 16;
    cfg.finetune.total_iterations = 30;
    let spec = target_spec(cfg.domain_seed);
    let target = Domain::Synthetic(spec);
    let [m1, m2] = random_models(9, &cfg.encoder_sizes(16));
    let mut runs = Vec::new();
    for threads in [1, 3] {
        cfg.threads = threads;
        runs.push(campaign_in_memory(&cfg, Variant::Full, &cfg.finetune, &target, &m1, &m2).map_err(|e| e.to_string())?);
    }
    ensure!(
        runs[0].episodes == runs[1].episodes && runs[0].trace == runs[1].trace && runs[0].failures == runs[1].failures,
        "in-memory serial and parallel campaigns differ"
    );
    let rows = read(&dir.join("a/episodes.csv"))?.lines().count() - 1;
    Ok(format!("episodes.csv byte-identical across 2 serial + 1 parallel CLI runs ({rows} episodes); in-memory 1 vs 3 threads identical"))
}

// ---------------------------------------------------------------- chance level

fn chance_level() -> Outcome {
    let mut cfg = RunConfig::default();
    cfg.episodes = 600;
    cfg.threads = 0;
    let target = target_domain(&cfg).map_err(|e| e.to_string())?;
    let constant = |id| ProtoModel::new(id, EncoderParams::constant(16, &[0.3, -1.2, 2.0]), 1e-3).unwrap();
    let report = campaign_in_memory(&cfg, Variant::Full, &cfg.finetune, &target, &constant(1), &constant(2))
        .map_err(|e| e.to_string())?;
    ensure!(report.episodes.len() == 600, "campaign incomplete");
    let p = 1.0 / cfg.n_way as f64;
    let trials = (600 * cfg.n_way * cfg.queries_per_class) as f64;
    let sigma = (p * (1.0 - p) / trials).sqrt();
    let acc = report.co().mean;
    let detail = format!("accuracy {acc:.4} vs 1/N = {p:.4}, 3σ = {:.4}", 3.0 * sigma);
    ensure!((acc - p).abs() <= 3.0 * sigma, "{detail}");
    Ok(detail)
}
