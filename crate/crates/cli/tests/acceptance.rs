//! Acceptance suite: one PASS/FAIL line per criterion A1–A12.
//!
//! Runs as a plain binary (`harness = false`) so the report reads top to
//! bottom. Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use chrono::{DateTime, Duration, Utc};
use maestro_arena::board::{board_view, history_view, BoardQuery, SortDir};
use maestro_arena::export::{parse, write};
use maestro_arena::records::{EvaluationRecord, Record};
use maestro_arena::store::Store;
use maestro_arena::{Arena, Config};
use maestro_core::attack::{fgsm, ga_attack, measure_attack, pgd, random_search, AttackBudget, Fgsm, GaConfig, Pgd};
use maestro_core::data::{gen_synthetic, Dataset};
use maestro_core::defense::{adversarial_train, DefenseConfig};
use maestro_core::model::{ModelParams, ModelSpec};
use maestro_core::oracle::{ModelOracle, Oracle};
use maestro_core::rng::SplitMix64;
use maestro_core::scoring::{overall, MetricMap, ScoreWeights};
use maestro_core::train::{sgd_train, TrainConfig};
use maestro_core::Tensor;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

fn ensure(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- desk setup

const DIMS: [usize; 3] = [12, 12, 1];

struct Desk {
    spec: ModelSpec,
    train: Dataset,
    test: Dataset,
    model: Arc<ModelParams>,
    train_seconds: f64,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let started = Instant::now();
        let (train, test) = gen_synthetic(7, 2500, 10, DIMS).unwrap().split_at(2000).unwrap();
        let spec = ModelSpec::default_mlp(DIMS, 10);
        let model = Arc::new(sgd_train(&spec, &train, &TrainConfig::default()).unwrap());
        Desk { spec, train, test, model, train_seconds: started.elapsed().as_secs_f64() }
    })
}

// ------------------------------------------------------------------------ A1

/// Mean cross-entropy of `flatten → dense → relu → dense` in f64.
fn reference_loss(params: &ModelParams, x: &[Vec<f64>], y: &[usize]) -> f64 {
    let w = &params.weights;
    let (hidden, classes) = (w[0].shape()[1], w[2].shape()[1]);
    let at = |t: &Tensor, i: usize| t.data()[i] as f64;
    let mut total = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let h: Vec<f64> = (0..hidden)
            .map(|j| (at(&w[1], j) + row.iter().enumerate().map(|(i, v)| v * at(&w[0], i * hidden + j)).sum::<f64>()).max(0.0))
            .collect();
        let logits: Vec<f64> =
            (0..classes).map(|k| at(&w[3], k) + h.iter().enumerate().map(|(j, v)| v * at(&w[2], j * classes + k)).sum::<f64>()).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() - logits[label];
    }
    total / x.len() as f64
}

fn a1() -> Outcome {
    let started = Instant::now();
    let spec = ModelSpec::mlp(DIMS, &[64], 10);
    let mut params = ModelParams::init(&spec, 99).unwrap();
    let mut rng = SplitMix64::new(4242);
    for i in [1, 3] {
        let shape = params.weights[i].shape().to_vec();
        let data = (0..shape.iter().product::<usize>()).map(|_| rng.uniform(-0.2, 0.2)).collect();
        params.weights[i] = Tensor::new(shape, data).unwrap();
    }
    let data = gen_synthetic(31, 5, 10, DIMS).unwrap();
    let (_, grad) = params.loss_and_input_gradient(&data.images, &data.labels).unwrap();
    let x: Vec<Vec<f64>> = data.images.iter_rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    let width = data.images.row_len();
    let h = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (r, c) = (rng.below(x.len()), rng.below(width));
        let (mut plus, mut minus) = (x.clone(), x.clone());
        plus[r][c] += h;
        minus[r][c] -= h;
        let numeric = (reference_loss(&params, &plus, &data.labels) - reference_loss(&params, &minus, &data.labels)) / (2.0 * h);
        let analytic = grad.data()[r * width + c] as f64;
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(worst < 1e-3 && secs < 10.0, format!("max relative error {worst:.2e} over 100 coordinates, {secs:.2} s"))
}

// ------------------------------------------------------------------- A2–A6

fn a2() -> Outcome {
    let d = desk();
    let acc = d.model.accuracy(&d.test).unwrap();
    let epochs = TrainConfig::default().epochs;
    ensure(
        acc >= 0.95 && epochs <= 20 && d.train_seconds < 60.0,
        format!("held-out accuracy {acc:.4} on {} samples after {epochs} epochs, {:.2} s", d.test.len(), d.train_seconds),
    )
}

fn fgsm_adv_acc() -> (f64, f64) {
    let d = desk();
    let m = measure_attack(|| ModelOracle::white_box(d.model.clone()), &Fgsm { epsilon: 0.2 }, &d.test).unwrap();
    (m.raw.clean_acc, m.raw.adv_acc)
}

fn a3() -> Outcome {
    let (clean, adv) = fgsm_adv_acc();
    ensure(adv <= 0.5 * clean, format!("FGSM ε=0.2 adversarial accuracy {adv:.4}, clean {clean:.4}"))
}

fn a4() -> Outcome {
    let d = desk();
    let (_, f) = fgsm_adv_acc();
    let budget = AttackBudget { epsilon: 0.2, step_size: 0.05, iterations: 10, ..AttackBudget::default() };
    let p = measure_attack(|| ModelOracle::white_box(d.model.clone()), &Pgd { budget }, &d.test).unwrap().raw.adv_acc;
    let oracle = ModelOracle::white_box(d.model.clone());
    let one = AttackBudget { epsilon: 0.2, step_size: 0.2, iterations: 1, random_start: false, ..AttackBudget::default() };
    let a = fgsm(&oracle, &d.test.images, &d.test.labels, 0.2).unwrap();
    let b = pgd(&oracle, &d.test.images, &d.test.labels, &one).unwrap();
    let identical = a.perturbed.data().iter().zip(b.perturbed.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(
        p <= f + 0.02 && identical,
        format!("PGD {p:.4} vs FGSM {f:.4}; FGSM ≡ PGD(T=1, α=ε) bit-exact: {identical}"),
    )
}

fn a5() -> Outcome {
    let d = desk();
    let eval = d.test.head(200).unwrap();
    let cfg = GaConfig::default();
    let per_sample = (cfg.population * cfg.generations) as u64;
    let total = per_sample * eval.len() as u64;
    let budget = AttackBudget { epsilon: 0.3, query_budget: Some(total), ..AttackBudget::default() };
    let oracle = ModelOracle::black_box(d.model.clone(), budget.query_budget);
    let ga = ga_attack(&oracle, &eval.images, &eval.labels, &budget, &cfg).unwrap();
    let hits = |t: &Tensor| d.model.predict_labels(t).unwrap().iter().zip(&eval.labels).filter(|(p, y)| p != y).count();
    let ga_hits = hits(&ga.perturbed);
    let rs_oracle = ModelOracle::black_box(d.model.clone(), None);
    let rs = random_search(&rs_oracle, &eval.images, &eval.labels, 0.3, cfg.population * cfg.generations, 0x5eed).unwrap();
    let rs_hits = hits(&rs.perturbed);
    ensure(
        oracle.gradient_queries_used() == 0 && ga.gradient_queries_used == 0 && oracle.queries_used() <= total && ga_hits > rs_hits,
        format!(
            "GA success {ga_hits}/200 vs random {rs_hits}/200 at {} draws each; queries {} ≤ {total}; gradient queries {}",
            per_sample,
            oracle.queries_used(),
            oracle.gradient_queries_used()
        ),
    )
}

fn a6() -> Outcome {
    let d = desk();
    let eval = d.test.head(200).unwrap();
    let hardened = adversarial_train(&d.spec, &d.train, &DefenseConfig::default()).unwrap();
    let budget = AttackBudget { epsilon: 0.2, step_size: 0.05, iterations: 10, ..AttackBudget::default() };
    let robust = |m: Arc<ModelParams>| measure_attack(|| ModelOracle::white_box(m), &Pgd { budget: budget.clone() }, &eval).unwrap().raw;
    let before = robust(d.model.clone());
    let after = robust(Arc::new(hardened.params.clone()));
    let overhead = hardened.overhead_seconds();
    ensure(
        after.adv_acc >= before.adv_acc + 0.15 && (after.clean_acc - before.clean_acc).abs() <= 0.10 && overhead > 0.0,
        format!(
            "PGD robust accuracy {:.4} → {:.4}; clean {:.4} → {:.4}; overhead {overhead:.2} s",
            before.adv_acc, after.adv_acc, before.clean_acc, after.clean_acc
        ),
    )
}

// ------------------------------------------------------------------------ A7

fn a7() -> Outcome {
    let keys = ["effectiveness", "stealth", "query_eff", "time_eff", "extra_a", "extra_b"];
    let mut rng = SplitMix64::new(77);
    let mut worst = 0.0f64;
    let mut violations = 0;
    for case in 0..1000 {
        let n = 1 + rng.below(keys.len());
        let raw: Vec<f64> = (0..n).map(|_| rng.next_f64()).collect();
        let sum: f64 = raw.iter().sum();
        let pairs: Vec<(&str, f64)> = keys[..n].iter().copied().zip(raw.iter().map(|w| w / sum)).collect();
        let weights = ScoreWeights::from_pairs(&pairs);
        let mut scores = MetricMap::new();
        for k in keys[..n].iter().rev() {
            scores.insert(*k, rng.next_f64());
        }
        let got = overall(&scores, &weights).unwrap();
        let mut brute = 0.0;
        for (k, w) in &pairs {
            brute += w * scores.get(k).unwrap();
        }
        worst = worst.max((got - brute).abs());

        let bump = keys[case % n];
        let mut higher = scores.clone();
        let v = scores.get(bump).unwrap();
        higher.insert(bump, v + (1.0 - v) * rng.next_f64());
        if overall(&higher, &weights).unwrap() < got {
            violations += 1;
        }
    }
    ensure(
        worst <= 1e-12 && violations == 0,
        format!("1000 maps: max |overall − brute force| {worst:.1e}; 1000 perturbations: {violations} monotonicity violations"),
    )
}

// ------------------------------------------------------------------------ A8

fn evaluation(id: u64, who: &str, at: DateTime<Utc>, score: f64) -> Record {
    let mut metrics = MetricMap::new();
    metrics.insert("overall_score", score);
    Record::Evaluation(EvaluationRecord { submission_id: id, submitter_id: who.into(), phase: "attack".into(), metrics, eval_timestamp: at })
}

fn a8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = Config::desk(dir.path());
    let t0: DateTime<Utc> = "2026-03-01T00:00:00Z".parse().unwrap();

    let history_store = Store::open(&dir.path().join("history")).unwrap();
    for k in 0..5u64 {
        history_store.append(evaluation(k + 1, "alice", t0 + Duration::seconds(10 * k as i64), 0.1 * k as f64)).unwrap();
    }
    let snapshot = history_store.snapshot();
    let latest = board_view(&config, &snapshot, "attack", &BoardQuery::default()).unwrap();
    let latest_ids: Vec<u64> = latest.rows.iter().map(|r| r.submission_id).collect();
    let history = history_view(&config, &snapshot, "attack", "alice", &BoardQuery::default()).unwrap();
    let hist_ids: Vec<u64> = history.rows.iter().map(|r| r.submission_id).collect();

    let trio = Store::open(&dir.path().join("trio")).unwrap();
    for (i, (who, score)) in [("alice", 0.2), ("bob", 0.9), ("ali-team", 0.5)].into_iter().enumerate() {
        trio.append(evaluation(i as u64 + 1, who, t0 + Duration::seconds(i as i64), score)).unwrap();
    }
    let snapshot = trio.snapshot();
    let by_score = BoardQuery { sort: Some("overall_score".into()), dir: Some(SortDir::Desc), ..BoardQuery::default() };
    let sorted: Vec<f64> =
        board_view(&config, &snapshot, "attack", &by_score).unwrap().rows.iter().map(|r| r.metrics["overall_score"]).collect();
    let search = BoardQuery { search: Some("ali".into()), ..BoardQuery::default() };
    let mut found: Vec<String> =
        board_view(&config, &snapshot, "attack", &search).unwrap().rows.into_iter().map(|r| r.display_name).collect();
    found.sort();

    ensure(
        latest_ids == [5] && hist_ids == [1, 2, 3, 4, 5] && sorted == [0.9, 0.5, 0.2] && found == ["ALI-team", "Alice"],
        format!("default board ids {latest_ids:?}, history {hist_ids:?}, sort desc {sorted:?}, search \"ali\" {found:?}"),
    )
}

// --------------------------------------------------------------- CLI driver

fn maestro(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maestro"))
        .args(args)
        .env("MAESTRO_CONFIG", dir.join("cfg.json"))
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = maestro(dir, args);
    assert!(out.status.success(), "maestro {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(dir: &Path, args: &[&str]) -> Value {
    serde_json::from_str(&ok(dir, args)).unwrap()
}

/// Config, data and hidden models in a fresh directory.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(dir.path(), &["init-config", "cfg.json", "--data-dir", data.to_str().unwrap(), "--frozen-clock", "--workers", "1"]);
    ok(dir.path(), &["gen-data"]);
    ok(dir.path(), &["train-hidden"]);
    dir
}

fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
    use std::os::unix::fs::PermissionsExt;
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    path
}

// ------------------------------------------------------------------------ A9

fn a9() -> Outcome {
    let ws = workspace();
    let d = ws.path();
    let crash = script(d, "crash.sh", "read task\necho 'fatal: out of cheese' >&2\nexit 3");
    let id = ok(d, &["submit-ext", "attack", crash.to_str().unwrap(), "--submitter", "bob"]);
    let outcome = json(d, &["evaluate", id.trim()]);
    let errors = json(d, &["errors", "attack"]);
    let board = json(d, &["board", "attack"]);
    let message = errors["rows"][0]["message"].as_str().unwrap_or_default().to_string();
    ensure(
        outcome["status"] == "failed"
            && errors["total"] == 1
            && errors["rows"][0]["category"] == "crash"
            && message.contains("exit status 3")
            && board["total"] == 0,
        format!("error board: {} row(s), category {}, message {:?}; results board rows {}", errors["total"], errors["rows"][0]["category"], message.lines().next().unwrap_or(""), board["total"]),
    )
}

// ----------------------------------------------------------------------- A10

fn a10() -> Outcome {
    let ws = workspace();
    let d = ws.path();
    for (who, role, method) in [
        ("alice", "attack", "fgsm"),
        ("bob", "attack", "pgd"),
        ("alice", "defense", "plain"),
        ("bob", "defense", "adversarial-training"),
        ("ali-team", "defense", "adversarial-training"),
    ] {
        ok(d, &["submit-ref", role, method, "--submitter", who]);
    }
    let outcomes = json(d, &["evaluate", "--pending"]);
    let all_ok = outcomes.as_array().unwrap().iter().all(|o| o["status"] == "evaluated");
    let report = json(d, &["war", "war"]);

    let config = Config::load(&d.join("cfg.json")).unwrap();
    let arena = Arena::open(config).unwrap();
    let matchups = arena.snapshot().matchups.clone();
    let mut worst = 0.0f64;
    for attacker in ["alice", "bob"] {
        let own: Vec<f64> = matchups.iter().filter(|m| m.attacker == attacker).map(|m| m.attack_score).collect();
        let mean = own.iter().sum::<f64>() / own.len() as f64;
        let side = report["scores"][attacker]["attack_side"].as_f64().unwrap();
        worst = worst.max((side - mean).abs());
    }
    let pairs: std::collections::BTreeSet<(String, String)> =
        matchups.iter().map(|m| (m.attacker.clone(), m.defender.clone())).collect();
    ensure(
        all_ok && matchups.len() == 6 && pairs.len() == 6 && worst <= 1e-12,
        format!("{} matchup records over {} distinct pairs; attacker side vs mean oracle max error {worst:.1e}", matchups.len(), pairs.len()),
    )
}

// ----------------------------------------------------------------------- A11

fn pipeline() -> String {
    let ws = workspace();
    let d = ws.path();
    let id = ok(d, &["submit-ref", "attack", "fgsm"]);
    ok(d, &["evaluate", id.trim()]);
    ok(d, &["export", "attack", "out.csv"]);
    std::fs::read_to_string(d.join("out.csv")).unwrap()
}

fn a11() -> Outcome {
    let first = pipeline();
    let second = pipeline();
    let table = parse(&first).unwrap();
    let fixpoint = write(&table).unwrap() == first;
    let scored = table.rows.len() == 1 && table.rows[0].values.last().copied().flatten().is_some();
    ensure(
        first == second && fixpoint && scored,
        format!(
            "two runs: {} bytes each, identical {}; round-trip fixpoint {fixpoint}; {} scored row(s)",
            first.len(),
            first == second,
            table.rows.len()
        ),
    )
}

// ----------------------------------------------------------------------- A12

fn a12() -> Outcome {
    let reference = workspace();
    let id = ok(reference.path(), &["submit-ref", "attack", "fgsm"]);
    let inproc = json(reference.path(), &["evaluate", id.trim()]);

    let external = workspace();
    let program = env!("CARGO_BIN_EXE_maestro-submission");
    let id = ok(
        external.path(),
        &["submit-ext", "attack", program, "--capability", "white-box", "--", "attack", "fgsm", "--white-box"],
    );
    let remote = json(external.path(), &["evaluate", id.trim()]);
    let a = &inproc["evaluation"]["metrics"];
    let b = &remote["evaluation"]["metrics"];
    let differing: Vec<&String> = match (a.as_object(), b.as_object()) {
        (Some(x), Some(y)) => x.keys().chain(y.keys()).filter(|k| x.get(*k) != y.get(*k)).collect(),
        _ => return Err(format!("missing evaluation: {inproc} / {remote}")),
    };
    ensure(
        differing.is_empty() && a == b,
        format!("{} metrics compared, differing keys {:?}", a.as_object().map_or(0, |m| m.len()), differing),
    )
}

// ---------------------------------------------------------------------- main

fn main() {
    let criteria: [Criterion; 12] = [
        ("A1", "gradient correctness", a1),
        ("A2", "hidden-model quality", a2),
        ("A3", "FGSM potency", a3),
        ("A4", "PGD dominance", a4),
        ("A5", "black-box contract", a5),
        ("A6", "adversarial training", a6),
        ("A7", "scoring oracle", a7),
        ("A8", "board semantics", a8),
        ("A9", "error path", a9),
        ("A10", "war completeness", a10),
        ("A11", "pipeline determinism", a11),
        ("A12", "protocol equivalence", a12),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = BTreeMap::new();
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic.downcast_ref::<String>().cloned().or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{id:<4} PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                println!("{id:<4} FAIL  {name}: {detail} [{secs:.1} s]");
                failed.insert(id, detail);
            }
        }
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
