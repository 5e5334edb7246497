//! Submission intake, evaluation, war and export over a real store.

mod common;

use maestro_arena::board::{board_view, error_view, BoardQuery, SortDir};
use maestro_arena::export::{export_csv, parse, write};
use maestro_arena::records::{Payload, Role};
use maestro_arena::{Arena, ArenaError, Outcome};

fn reference(role: Role, method: &str) -> Payload {
    Payload::Reference { role, method: method.into() }
}

/// attack: alice fgsm, ali-team pgd; defense: alice plain, bob and ali-team
/// adversarial training. Returns the submission ids in order.
fn populate(arena: &Arena) -> Vec<u64> {
    let subs = [
        ("alice", "attack", reference(Role::Attack, "fgsm")),
        ("ali-team", "attack", reference(Role::Attack, "pgd")),
        ("alice", "defense", reference(Role::Defense, "plain")),
        ("bob", "defense", reference(Role::Defense, "adversarial-training")),
        ("ali-team", "defense", reference(Role::Defense, "adversarial-training")),
    ];
    let ids = subs.into_iter().map(|(who, phase, p)| arena.submit(who, phase, p).unwrap().id).collect();
    for outcome in arena.evaluate_pending().unwrap() {
        assert!(matches!(outcome, Outcome::Evaluated(_)), "{outcome:?}");
    }
    ids
}

#[test]
fn submit_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = common::small_config(dir.path());
    config.phases[1].deadline = "2025-12-31T23:59:59Z".parse().unwrap();
    let arena = Arena::open(config).unwrap();
    let fgsm = || reference(Role::Attack, "fgsm");
    assert!(matches!(arena.submit("alice", "nope", fgsm()), Err(ArenaError::NotFound(_))));
    assert!(matches!(arena.submit("mallory", "attack", fgsm()), Err(ArenaError::NotFound(_))));
    assert!(matches!(arena.submit("alice", "defense", fgsm()), Err(ArenaError::Input(_))));
    assert!(matches!(arena.submit("alice", "attack", reference(Role::Attack, "cw")), Err(ArenaError::Input(_))));
    assert!(matches!(arena.submit("alice", "war", Payload::WarEntry { run: 1 }), Err(ArenaError::Input(_))));
    let late = arena.submit("alice", "defense", reference(Role::Defense, "plain"));
    assert!(matches!(late, Err(ArenaError::DeadlinePassed { .. })), "{late:?}");
    assert!(arena.snapshot().submissions.is_empty());
    assert!(arena.submit("alice", "attack", fgsm()).is_ok());
}

#[test]
fn missing_hidden_models_leave_submission_pending() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::small_config(dir.path());
    maestro_arena::setup::gen_data(&config).unwrap();
    let arena = Arena::open(config).unwrap();
    let s = arena.submit("alice", "attack", reference(Role::Attack, "fgsm")).unwrap();
    let err = arena.evaluate(s.id, false).unwrap_err();
    assert!(matches!(err, ArenaError::Operator(ref m) if m.contains("train-hidden")), "{err:?}");
    assert_eq!(arena.snapshot().pending().len(), 1);
}

#[test]
fn war_plays_every_pair_and_exports_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let arena = common::arena(dir.path());
    let ids = populate(&arena);

    let report = arena.run_war("war").unwrap();
    assert_eq!(report.attackers.len(), 2);
    assert_eq!(report.defenders.len(), 3);
    assert_eq!(report.matchups.len(), 6);
    let mut pairs: Vec<(String, String)> = report.matchups.iter().map(|m| (m.attacker.clone(), m.defender.clone())).collect();
    pairs.sort();
    pairs.dedup();
    assert_eq!(pairs.len(), 6);
    assert!(report.matchups.iter().all(|m| m.failure.is_none()));

    let team = &report.scores["ali-team"];
    let (a, d) = (team.attack_side.unwrap(), team.defense_side.unwrap());
    assert!((team.combined - (0.5 * a + 0.5 * d)).abs() < 1e-12);
    assert!(report.scores["bob"].attack_side.is_none());
    let bob_mean = report.matchups.iter().filter(|m| m.defender == "bob").map(|m| m.defense_score).sum::<f64>() / 2.0;
    assert!((report.scores["bob"].combined - bob_mean).abs() < 1e-12);

    let view = board_view(arena.config(), &arena.snapshot(), "war", &BoardQuery::default()).unwrap();
    assert_eq!(view.total, 3);

    // A second war run gets its own run number and fresh entries.
    let again = arena.run_war("war").unwrap();
    assert_eq!(again.run, report.run + 1);
    for (m1, m2) in report.matchups.iter().zip(&again.matchups) {
        assert_eq!((m1.attack_score, m1.defense_score), (m2.attack_score, m2.defense_score));
    }

    // Re-evaluation needs force and appends a second record.
    assert!(matches!(arena.evaluate(ids[0], false), Err(ArenaError::Input(_))));
    let Outcome::Evaluated(re) = arena.evaluate(ids[0], true).unwrap() else { panic!() };
    let first = arena.snapshot().evaluations.iter().find(|e| e.submission_id == ids[0]).unwrap().clone();
    assert_eq!(re.metrics.get("overall_score"), first.metrics.get("overall_score"));

    // CSV: fixed header, chronological, write∘parse is the identity.
    for phase in ["attack", "defense", "war"] {
        let csv = export_csv(arena.config(), &arena.snapshot(), phase).unwrap();
        assert!(csv.starts_with("submitter_id,submission_id,phase,eval_timestamp,"));
        assert!(csv.lines().next().unwrap().ends_with(",overall_score"));
        assert_eq!(write(&parse(&csv).unwrap()).unwrap(), csv);
        let parsed = parse(&csv).unwrap();
        assert!(parsed.rows.windows(2).all(|w| w[0].eval_timestamp <= w[1].eval_timestamp));
    }
    let attack_csv = export_csv(arena.config(), &arena.snapshot(), "attack").unwrap();
    assert_eq!(attack_csv.lines().count(), 1 + 3);

    // Reopening resumes the frozen clock and replays identical records.
    let before = arena.snapshot();
    let config = arena.config().clone();
    drop(arena);
    let reopened = Arena::open(config).unwrap();
    assert_eq!(*reopened.snapshot(), *before);
    let next = reopened.submit("bob", "attack", reference(Role::Attack, "identity")).unwrap();
    let latest = before.evaluations.iter().map(|e| e.eval_timestamp).max().unwrap();
    assert!(next.submitted_at > latest);
}

#[test]
fn identical_runs_export_identical_bytes() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let arena = common::arena(dir.path());
        populate(&arena);
        arena.run_war("war").unwrap();
        ["attack", "defense", "war"].map(|p| export_csv(arena.config(), &arena.snapshot(), p).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn boards_show_latest_row_per_submitter() {
    let dir = tempfile::tempdir().unwrap();
    let arena = common::arena(dir.path());
    for (who, method) in [("alice", "identity"), ("bob", "fgsm"), ("alice", "pgd")] {
        arena.submit(who, "attack", reference(Role::Attack, method)).unwrap();
    }
    let crash = common::script(dir.path(), "crash.sh", "exit 1");
    arena
        .submit("bob", "attack", Payload::External {
            role: Role::Attack,
            program: crash,
            args: vec![],
            capability: maestro_core::oracle::Capability::BlackBox,
        })
        .unwrap();
    arena.evaluate_pending().unwrap();
    let snapshot = arena.snapshot();
    let config = arena.config();

    let view = board_view(config, &snapshot, "attack", &BoardQuery::default()).unwrap();
    assert_eq!(view.sort, "eval_timestamp");
    assert_eq!(view.dir, SortDir::Desc);
    let rows: Vec<(&str, u64)> = view.rows.iter().map(|r| (r.submitter_id.as_str(), r.submission_id)).collect();
    assert_eq!(rows, [("alice", 3), ("bob", 2)]);

    let history = board_view(config, &snapshot, "attack", &BoardQuery { submitter: Some("alice".into()), ..Default::default() }).unwrap();
    assert_eq!(history.rows.iter().map(|r| r.submission_id).collect::<Vec<_>>(), [1, 3]);

    let by_score = BoardQuery { sort: Some("overall_score".into()), dir: Some(SortDir::Desc), ..Default::default() };
    let view = board_view(config, &snapshot, "attack", &by_score).unwrap();
    let scores: Vec<f64> = view.rows.iter().map(|r| r.metrics["overall_score"]).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let search = BoardQuery { search: Some("ALI".into()), ..Default::default() };
    assert_eq!(board_view(config, &snapshot, "attack", &search).unwrap().total, 1);

    let bad = BoardQuery { sort: Some("bogus".into()), ..Default::default() };
    assert!(matches!(board_view(config, &snapshot, "attack", &bad), Err(ArenaError::Input(m)) if m.contains("overall_score")));

    let errors = error_view(config, &snapshot, "attack", &BoardQuery::default()).unwrap();
    assert_eq!(errors.total, 1);
    assert_eq!(errors.rows[0].submitter_id, "bob");
}
