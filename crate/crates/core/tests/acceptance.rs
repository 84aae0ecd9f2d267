//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.
//!
//! Runs as a plain binary (`harness = false`) so the report lines are always
//! printed, e.g. `cargo test -p convkb --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::time::Instant;

use convkb::cli::{cmd_stats, train_to_checkpoint, StatsArgs};
use convkb::eval::{evaluate, rank_metrics, EvalConfig, Setting};
use convkb::model::init_transe_embeddings;
use convkb::synthetic::line_kb;
use convkb::train::{run_suite, sample_corruption, Optimizer, SuiteConfig};
use convkb::{
    bernoulli_stats, score_convkb, score_transe, seeded_rng, Activation, ConvKbParams, KnowledgeBase, ModelKind, Norm,
    Side, Split, TrainConfig, Triple,
};
use rand::Rng;

type Criterion = (&'static str, fn() -> Verdict);

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn transe_reduction() -> Verdict {
    let (k, n_ent, n_rel) = (10, 200, 20);
    let emb = init_transe_embeddings(11, k, n_ent, n_rel);
    let mut rng = seeded_rng(11, 99);
    let triples: Vec<Triple> = (0..10_000)
        .map(|_| {
            Triple::new(
                rng.random_range(0..n_ent),
                rng.random_range(0..n_rel),
                rng.random_range(0..n_ent),
            )
        })
        .collect();
    let mut worst = [0.0f64; 2];
    for (slot, (g, norm)) in [(Activation::Abs, Norm::L1), (Activation::Square, Norm::L2)]
        .into_iter()
        .enumerate()
    {
        let params = ConvKbParams {
            filters: vec![[1.0, 1.0, -1.0]],
            biases: vec![0.0],
            weight: vec![1.0; k],
            activation: g,
        };
        for &t in &triples {
            let conv = score_convkb(&params, &emb, t).unwrap();
            let transe = score_transe(&emb, t, norm);
            let rel = (conv - transe).abs() / transe.abs().max(f64::MIN_POSITIVE);
            worst[slot] = worst[slot].max(rel);
        }
    }
    check(
        worst.iter().all(|&w| w <= 1e-12),
        format!(
            "max rel err abs/L1 {:.1e}, square/L2 {:.1e} (limit 1e-12)",
            worst[0], worst[1]
        ),
    )
}

fn gradient_correctness() -> Verdict {
    let report = run_suite(&SuiteConfig::default()).unwrap();
    let mut kinked = 0.0f64;
    let mut smooth = 0.0f64;
    let mut models = [false; 2];
    for r in &report.results {
        models[usize::from(r.spec.model == ModelKind::ConvKb)] = true;
        if r.report.tolerance == 1e-4 {
            kinked = kinked.max(r.report.max_rel_err());
        } else {
            assert_eq!(r.report.tolerance, 1e-6);
            smooth = smooth.max(r.report.max_rel_err());
        }
    }
    check(
        report.results.len() == 100 && models == [true, true] && report.passed(),
        format!(
            "{} instances, max rel err kinked {kinked:.1e} (limit 1e-4), smooth {smooth:.1e} (limit 1e-6)",
            report.results.len()
        ),
    )
}

fn oracle_equivalence() -> Verdict {
    let mut rng = seeded_rng(3, 3);
    let mut compared = 0usize;
    for i in 0..50 {
        let kb = common::random_kb(&mut rng, 50, 5, 200);
        let (n_ent, n_rel) = (kb.num_entities(), kb.num_relations());
        let levels = if i % 2 == 0 { 4 } else { 1_000_000 };
        let table = common::tied_scores(&mut rng, n_ent, n_rel, levels);
        let scorer = common::table_scorer(&table, n_ent, n_rel);
        for setting in [Setting::Raw, Setting::Filtered] {
            let report = evaluate(&scorer, &kb, &EvalConfig::with_setting(setting)).unwrap();
            for r in &report.ranks {
                let head = common::brute_force_rank(&scorer, &kb, r.triple, Side::Head, setting);
                let tail = common::brute_force_rank(&scorer, &kb, r.triple, Side::Tail, setting);
                if (head, tail) != (r.head_rank, r.tail_rank) {
                    return Verdict::Fail(format!(
                        "KB {i} {setting:?} {}: got ({}, {}), oracle ({head}, {tail})",
                        r.triple, r.head_rank, r.tail_rank
                    ));
                }
                compared += 2;
            }
        }
    }
    Verdict::Pass(format!("50 KBs, {compared} ranks identical to the full-sort oracle"))
}

fn metric_arithmetic() -> Verdict {
    let (mr, mrr, hits) = rank_metrics(&[1, 2, 4], &[10]);
    check(
        (mr - 7.0 / 3.0).abs() <= 1e-9 && (mrr - 0.5833333333333334).abs() <= 1e-9 && hits == vec![(10, 1.0)],
        format!("MR {mr:.6}, MRR {mrr:.6}, Hits@10 {}", hits[0].1),
    )
}

/// Looks for `<dir>/WN18RR` and `<dir>/FB15k-237` under `$CONVKB_DATA_DIR`,
/// then under `data/` at the workspace root.
fn benchmark_dir(name: &str) -> Option<PathBuf> {
    let roots = std::env::var_os("CONVKB_DATA_DIR")
        .map(PathBuf::from)
        .into_iter()
        .chain([Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")]);
    roots
        .map(|r| r.join(name))
        .find(|d| Split::ALL.iter().all(|s| d.join(s.file_name()).is_file()))
}

fn dataset_fidelity() -> Verdict {
    let expected = [
        ("WN18RR", [40_943, 11, 86_835, 3_034, 3_134]),
        ("FB15k-237", [14_541, 237, 272_115, 17_535, 20_466]),
    ];
    let mut details = Vec::new();
    let mut all_ok = true;
    let mut found = 0;
    for (name, want) in expected {
        let Some(dir) = benchmark_dir(name) else {
            details.push(format!("{name} not found"));
            continue;
        };
        found += 1;
        let mut sink = Vec::new();
        let kb = match cmd_stats(&StatsArgs { data: dir }, &mut sink) {
            Ok(kb) => kb,
            Err(e) => return Verdict::Fail(format!("{name}: {e}")),
        };
        let got = [
            kb.num_entities(),
            kb.num_relations(),
            kb.train.len(),
            kb.valid.len(),
            kb.test.len(),
        ];
        all_ok &= got == want;
        details.push(format!("{name} {got:?} (expected {want:?})"));
    }
    if found == 0 {
        return Verdict::Skip(format!(
            "benchmark files absent; set CONVKB_DATA_DIR ({})",
            details.join(", ")
        ));
    }
    check(all_ok, details.join("; "))
}

/// Mean filtered Hits@10 of scorers that rank every candidate list in a
/// uniformly random order.
fn random_baseline_hits10(kb: &KnowledgeBase, seeds: u64) -> f64 {
    let (n_ent, n_rel) = (kb.num_entities(), kb.num_relations());
    let mut total = 0.0;
    for s in 0..seeds {
        let mut rng = seeded_rng(1000 + s, 0);
        let table: Vec<f64> = (0..n_ent * n_rel * n_ent).map(|_| rng.random()).collect();
        let scorer = common::table_scorer(&table, n_ent, n_rel);
        total += evaluate(&scorer, kb, &EvalConfig::default())
            .unwrap()
            .hits_at(10)
            .unwrap();
    }
    total / seeds as f64
}

fn learnability() -> Verdict {
    let kb = line_kb(7);
    let baseline = random_baseline_hits10(&kb, 20);

    // Embeddings come from a short TransE run, as in the standard protocol.
    let mut transe = TrainConfig::transe();
    transe.k = 20;
    transe.lr = 1e-2;
    transe.epochs = 200;
    transe.batch_size = 32;
    let (pre, _) = train_to_checkpoint(&kb, transe, None, |_| Ok(())).unwrap();
    let transe_h10 = evaluate(&pre.model, &kb, &EvalConfig::default())
        .unwrap()
        .hits_at(10)
        .unwrap();

    let mut config = TrainConfig::convkb();
    config.k = 20;
    config.tau = 50;
    config.epochs = 100;
    config.seed = 7;
    config.optimizer = Optimizer::Adam;
    config.lr = 5e-3;
    config.batch_size = 32;
    let (ck, history) = train_to_checkpoint(&kb, config, Some(pre.model.emb().clone()), |_| Ok(())).unwrap();
    let report = evaluate(&ck.model, &kb, &EvalConfig::default()).unwrap();
    let h10 = report.hits_at(10).unwrap();
    let first = history.first().unwrap().mean_loss;
    let last = history.last().unwrap().mean_loss;
    check(
        h10 >= 5.0 * baseline && last < first,
        format!(
            "ConvKB filtered Hits@10 {h10:.3} vs 5 x random {baseline:.3} = {:.3} (TransE init alone {transe_h10:.3}); loss {first:.4} -> {last:.4}",
            5.0 * baseline
        ),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("line");
    line_kb(7).write_dir(&data).unwrap();
    let train = |name: &str| -> (Vec<u8>, Vec<u8>) {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_convkb"))
            .args([
                "train", "--model", "convkb", "--k", "20", "--tau", "50", "--epochs", "20",
            ])
            .args(["--batch", "32", "--lr", "5e-3", "--seed", "7", "--data"])
            .arg(&data)
            .arg("--out")
            .arg(&out)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .status()
            .unwrap();
        assert!(status.success(), "train exited with {status}");
        let log = out.with_extension("ckpt.loss.tsv");
        (std::fs::read(&out).unwrap(), std::fs::read(log).unwrap())
    };
    let (a, log_a) = train("a.ckpt");
    let (b, log_b) = train("b.ckpt");
    check(
        a == b && log_a == log_b,
        format!(
            "two 20-epoch runs: checkpoints {} bytes, identical: {}",
            a.len(),
            a == b
        ),
    )
}

fn bernoulli_frequencies() -> Verdict {
    let three = KnowledgeBase::from_labeled(&[("a", "r", "x"), ("a", "r", "y"), ("b", "r", "x")], &[], &[]).unwrap();
    let four = KnowledgeBase::from_labeled(
        &[("a", "r", "x"), ("a", "r", "y"), ("a", "r", "z"), ("b", "r", "x")],
        &[],
        &[],
    )
    .unwrap();
    let mut freqs = Vec::new();
    for (kb, want) in [(&three, 0.5), (&four, 0.6)] {
        let stats = bernoulli_stats(kb).unwrap();
        let mut rng = seeded_rng(7, 5);
        let draws = 100_000;
        let mut heads = 0usize;
        for i in 0..draws {
            let t = kb.train[i % kb.train.len()];
            if sample_corruption(t, kb, &stats, &mut rng).unwrap().side == Side::Head {
                heads += 1;
            }
        }
        freqs.push((heads as f64 / draws as f64, want));
    }
    check(
        freqs.iter().all(|(f, want)| (f - want).abs() <= 0.01),
        freqs
            .iter()
            .map(|(f, want)| format!("{f:.4} (target {want} +/- 0.01)"))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("transe-reduction", transe_reduction),
        ("gradient-correctness", gradient_correctness),
        ("evaluation-oracle", oracle_equivalence),
        ("metric-arithmetic", metric_arithmetic),
        ("dataset-fidelity", dataset_fidelity),
        ("learnability", learnability),
        ("determinism", determinism),
        ("bernoulli-sampler", bernoulli_frequencies),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Verdict::Fail("panicked".to_owned()));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match verdict {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Skip(d) => ("SKIP", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} {name}: {tag} ({secs:.2}s) {detail}", i + 1);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
