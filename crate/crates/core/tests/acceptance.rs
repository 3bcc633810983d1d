//! Acceptance checks, one PASS/FAIL line each. Exits nonzero if any check fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use thoughtsearch_core::bench::{
    load_dataset, recompute_metrics, run_benchmark, write_results, BenchReport, DatasetFormat,
};
use thoughtsearch_core::evaluator::render_summary;
use thoughtsearch_core::gateway::{
    fingerprint, replay::exact_key, GatewaySettings, HttpBackend, PromptClass, ReplayBackend,
};
use thoughtsearch_core::sandbox::{FixtureTracer, SandboxConfig};
use thoughtsearch_core::search::select_path;
use thoughtsearch_core::*;

type Check = fn() -> Result<(), String>;

enum Outcome {
    Pass,
    Fail(String),
    Skip(String),
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, format!("took {elapsed:?}, limit {limit:?}"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn beta_exactness() -> Result<(), String> {
    let start = Instant::now();
    let b = compute_beta(0, 10.0, 4.0);
    ensure((b - 4.095_310_179_804_325).abs() < 1e-12, format!("beta(0) = {b}"))?;
    ensure((b - (1.1f64.ln() + 4.0)).abs() < 1e-12, "beta(0) differs from ln(1.1) + 4")?;
    let mut prev = compute_beta(1, 10.0, 4.0);
    for n in 2..=10_000 {
        let cur = compute_beta(n, 10.0, 4.0);
        ensure(cur > prev, format!("not increasing at n = {n}"))?;
        prev = cur;
    }
    within(start.elapsed(), Duration::from_secs(1))
}

/// Argmax of the scoring rule, written out independently of the library.
fn brute_force_select(tree: &SearchTree, cfg: &RunConfig) -> NodeId {
    let mut cur = NodeId::ROOT;
    loop {
        let node = tree.node(cur);
        if node.children.is_empty() || node.depth >= cfg.max_depth {
            return cur;
        }
        let n = node.visits as f64;
        let beta = ((n + cfg.c_base + 1.0) / cfg.c_base).ln() + cfg.c_explore;
        let mut best: Option<(f64, NodeId)> = None;
        for &c in &node.children {
            let child = tree.node(c);
            let bonus =
                if node.visits > 1 { beta * child.prior * n.ln().sqrt() / (1.0 + child.visits as f64) } else { 0.0 };
            let score = child.q_value + bonus;
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, c));
            }
        }
        cur = best.expect("children").1;
    }
}

fn select_path_oracle() -> Result<(), String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = RunConfig::default();
    for case in 0..1000 {
        let mut tree = SearchTree::new();
        tree.node_mut(NodeId::ROOT).visits = rng.random_range(0..200);
        for _ in 0..rng.random_range(1..30) {
            let parent = NodeId(rng.random_range(0..tree.len()));
            let id = tree.add_child(parent, "t", rng.random::<f64>());
            let n = tree.node_mut(id);
            // Coarse values make exact ties common.
            n.q_value = if rng.random_bool(0.3) { 0.5 } else { rng.random::<f64>() };
            n.visits = rng.random_range(0..60);
        }
        let (got, want) = (select_path(&tree, &cfg), brute_force_select(&tree, &cfg));
        ensure(got == want, format!("case {case}: select_path chose {got}, reference chose {want}"))?;
    }
    within(start.elapsed(), Duration::from_secs(5))
}

fn reward_exactness() -> Result<(), String> {
    let cfg = RunConfig::default();
    ensure(compute_reward(1.0, Some(0.5), &cfg) == 0.9, "reward(1, 0.5) != 0.9")?;
    ensure(compute_reward(0.5, None, &cfg) == 0.5, "reward(0.5) != 0.5")?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let v_test = if rng.random_bool(0.3) { 1.0 } else { rng.random::<f64>() };
        let v_llm = rng.random_bool(0.8).then(|| rng.random::<f64>());
        let r = compute_reward(v_test, v_llm, &cfg);
        ensure((0.0..=1.0).contains(&r), format!("reward {r} out of range for ({v_test}, {v_llm:?})"))?;
    }
    Ok(())
}

fn backprop_max_q() -> Result<(), String> {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = SearchState::new(seed);
        let mut origins: Vec<(NodeId, f64)> = Vec::new();
        for _ in 0..rng.random_range(1..=100) {
            if rng.random_bool(0.5) {
                let parent = NodeId(rng.random_range(0..state.tree.len()));
                state.tree.add_child(parent, "t", rng.random::<f64>());
            }
            let node = NodeId(rng.random_range(0..state.tree.len()));
            let reward = rng.random::<f64>();
            state.backpropagate(node, reward);
            origins.push((node, reward));
        }
        for node in state.tree.nodes() {
            let inside: Vec<f64> = origins
                .iter()
                .filter(|(o, _)| state.tree.path_to(*o).contains(&node.node_id))
                .map(|(_, r)| *r)
                .collect();
            let want_q = inside.iter().copied().fold(0.0, f64::max);
            ensure(
                node.q_value == want_q,
                format!("seed {seed}: {} has q {} want {want_q}", node.node_id, node.q_value),
            )?;
            ensure(
                node.visits as usize == inside.len(),
                format!("seed {seed}: {} has {} visits want {}", node.node_id, node.visits, inside.len()),
            )?;
        }
    }
    Ok(())
}

fn sum_problem() -> ProblemSpec {
    ProblemSpec {
        id: "sumto".into(),
        statement: "Read a positive integer n and print 1 + 2 + ... + n.".into(),
        io_mode: IoMode::StdinStdout,
        entry_point: None,
        starter_code: None,
        public_tests: vec![TestCase::new("2\n", "3\n"), TestCase::new("3\n", "6\n")],
        private_tests: vec![TestCase::new("1000\n", "500500\n")],
    }
}

const BUGGY_SUM: &str = "```python\nn = int(input())\nx = 0\nfor i in range(n):\n    x += i\nprint(x)\n```";
const FIXED_SUM: &str = "```python\nn = int(input())\nx = 0\nfor i in range(1, n + 1):\n    x += i\nprint(x)\n```";

fn traced_sandbox() -> Result<ProcessSandbox, String> {
    let tracer = FixtureTracer::from_file(fixtures().join("trace_sum.json")).map_err(|e| e.to_string())?;
    Ok(ProcessSandbox::new(SandboxConfig::default()).with_tracer(Arc::new(tracer)))
}

fn rethink_replay() -> ReplayBackend {
    let first = "Loop i over range(n) and accumulate i.";
    let fixed = "Loop i from 1 to n inclusive and accumulate i.";
    ReplayBackend::new()
        .script(
            "propose_thoughts",
            [format!(r#"[{{"thought": "{first}", "score": 0.9}}, {{"thought": "Print n.", "score": 0.3}}]"#)],
        )
        .script("regenerate_thought", [format!(r#"{{"thought": "{fixed}"}}"#)])
        .script(exact_key(PromptClass::GenerateProgram, &fingerprint("sumto", &[fixed])), [FIXED_SUM])
        .script("generate_program", [BUGGY_SUM])
        .script(
            "analyze_blocks",
            [r#"[{"block_index": 1, "verdict": "incorrect", "explanation": "range(n) stops before n"}]"#],
        )
        .script("self_evaluate", ["0.9"])
}

fn rethink_contract() -> Result<(), String> {
    let problem = sum_problem();
    let sandbox = traced_sandbox()?;
    let cfg = RunConfig { max_rollouts: 2, ..RunConfig::default() };
    let run = |cfg: &RunConfig| {
        let gw = Gateway::new(Arc::new(rethink_replay()), GatewaySettings::default());
        run_search(&problem, cfg, &gw, &sandbox, &Evaluator::new()).map_err(|e| e.to_string())
    };

    let with = run(&cfg)?;
    ensure(with.best.v_test == 1.0, format!("with rethink: best v_test {}", with.best.v_test))?;
    ensure(with.rollouts_used <= 2 && with.rethinks_used == 1, "with rethink: unexpected budget use")?;
    ensure(with.best.from_rethink, "with rethink: solution did not come from the rethink")?;
    // The rethink rewrote one node in place: no new nodes, ancestors and siblings untouched.
    let node = with.tree.node(with.best.origin_node);
    ensure(with.tree.len() == 3, format!("tree grew to {} nodes", with.tree.len()))?;
    ensure(node.parent == Some(NodeId::ROOT), "rethought node moved")?;
    ensure(with.tree.root().thought.is_empty(), "root thought changed")?;
    let others: Vec<&str> =
        with.tree.nodes().filter(|n| n.node_id != node.node_id).map(|n| n.thought.as_str()).collect();
    ensure(others == ["", "Print n."], format!("other thoughts changed: {others:?}"))?;
    ensure(node.thought.starts_with("Loop i from 1 to n"), "node thought not replaced")?;

    let mut off = cfg.clone();
    off.flags.rethink = false;
    let without = run(&off)?;
    ensure(without.best.v_test < 1.0, "without rethink the problem was still solved")?;
    ensure(without.rethinks_used == 0, "rethink ran while disabled")
}

fn toy_run(out: &Path) -> Result<(BenchReport, Gateway), String> {
    let problems =
        load_dataset(fixtures().join("toy_problems.jsonl"), DatasetFormat::GenericJsonl).map_err(|e| e.to_string())?;
    let replay = ReplayBackend::from_file(fixtures().join("toy_replay.json")).map_err(|e| e.to_string())?;
    let gw = Gateway::new(Arc::new(replay), GatewaySettings::default());
    let sandbox = traced_sandbox()?;
    let report = run_benchmark(&problems, &RunConfig::default(), &gw, &sandbox, out).map_err(|e| e.to_string())?;
    Ok((report, gw))
}

/// Results lines with the run-specific fields removed.
fn comparable_results(path: &Path) -> Result<Vec<Value>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).map_err(|e| e.to_string())?;
            if let Some(obj) = v.as_object_mut() {
                obj.remove("wall_clock");
                obj.remove("tree_dump_path");
            }
            Ok(v)
        })
        .collect()
}

fn dumps(report: &BenchReport) -> Result<BTreeMap<String, String>, String> {
    report
        .results
        .iter()
        .map(|r| {
            let path = r.tree_dump_path.as_ref().ok_or("missing tree dump")?;
            Ok((r.problem_id.clone(), std::fs::read_to_string(path).map_err(|e| e.to_string())?))
        })
        .collect()
}

fn determinism() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a_out, b_out) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    let (a, _) = toy_run(&a_out)?;
    let (b, _) = toy_run(&b_out)?;
    ensure(a.results.len() == 3, "expected three results")?;
    let lines = comparable_results(&a_out)?;
    ensure(lines.len() == 4, format!("results file has {} lines, want 4", lines.len()))?;
    ensure(lines == comparable_results(&b_out)?, "results files differ")?;
    ensure(dumps(&a)? == dumps(&b)?, "tree dumps differ")
}

fn metrics_round_trip() -> Result<(), String> {
    let m = aggregate_metrics(&[1.0, 0.5]).map_err(|e| e.to_string())?;
    ensure(m.pass_rate == 75.0 && m.pass_at_1 == 50.0, format!("got {m:?}"))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("toy.jsonl");
    let (report, _) = toy_run(&out)?;
    let (recomputed, recorded) = recompute_metrics(&out).map_err(|e| e.to_string())?;
    ensure(recorded == Some(report.metrics), "metrics line differs from the run's metrics")?;
    ensure(recorded == Some(recomputed), format!("recomputed {recomputed:?}, recorded {recorded:?}"))?;

    let copy = dir.path().join("rewritten.jsonl");
    write_results(&report.results, &report.metrics, &copy).map_err(|e| e.to_string())?;
    let (again, _) = recompute_metrics(&copy).map_err(|e| e.to_string())?;
    ensure(again == recomputed, "rewritten results recompute differently")
}

fn hygiene() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (report, gw) = toy_run(&dir.path().join("toy.jsonl"))?;
    ensure(report.failures == 0, "fixture run had failures")?;
    let problems =
        load_dataset(fixtures().join("toy_problems.jsonl"), DatasetFormat::GenericJsonl).map_err(|e| e.to_string())?;
    let secrets: Vec<&str> = problems
        .iter()
        .flat_map(|p| &p.private_tests)
        .flat_map(|t| [t.input.trim(), t.expected_output.trim()])
        .collect();
    let records = gw.log().records();
    ensure(!records.is_empty(), "no prompts were recorded")?;
    for r in &records {
        let text = r.text();
        if let Some(s) = secrets.iter().find(|s| text.contains(**s)) {
            return Err(format!("{} prompt for {} contains private string {s:?}", r.class, r.problem_id));
        }
    }
    Ok(())
}

fn integration_feedback() -> Result<(), String> {
    let problem = sum_problem();
    let sandbox = traced_sandbox()?;
    let gw = Gateway::new(Arc::new(rethink_replay()), GatewaySettings::default());
    let program = BUGGY_SUM.trim_start_matches("```python\n").trim_end_matches("\n```");
    let signal = Evaluator::new().evaluate_candidate(program, &problem, &RunConfig::default(), &sandbox, &gw);
    let fb = signal.feedback.ok_or("no feedback for a failing program")?;
    ensure(fb.summary.contains("Failed test input:\n2\n"), "feedback lacks the failed input")?;
    ensure(fb.summary.contains("Actual output:\n1\n"), "feedback lacks the actual output")?;
    let block_lines = fb.summary.lines().filter(|l| l.starts_with("Block ")).count();
    ensure(block_lines >= 1, "feedback has no block verdict line")?;
    ensure(fb.summary.contains("Block 1 (lines 3-4): incorrect - range(n) stops before n"), "block verdict missing")?;
    ensure(fb.summary == render_summary(&fb.failed_test, &fb.actual_output, &fb.block_reports), "summary not canonical")
}

fn live_smoke() -> Outcome {
    if std::env::var_os("OPENAI_API_KEY").is_none() || std::env::var_os("THOUGHTSEARCH_LIVE_SMOKE").is_none() {
        return Outcome::Skip("set OPENAI_API_KEY and THOUGHTSEARCH_LIVE_SMOKE=1 to run".into());
    }
    let run = || -> Result<usize, String> {
        let problems = load_dataset(fixtures().join("live_smoke.jsonl"), DatasetFormat::GenericJsonl)
            .map_err(|e| e.to_string())?;
        let backend = HttpBackend::from_env().map_err(|e| e.to_string())?;
        let gw = Gateway::new(Arc::new(backend), GatewaySettings::default());
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let sandbox = ProcessSandbox::new(SandboxConfig::default());
        let report = run_benchmark(&problems, &RunConfig::default(), &gw, &sandbox, &dir.path().join("live.jsonl"))
            .map_err(|e| e.to_string())?;
        Ok(report.results.iter().filter(|r| r.private_fraction >= 1.0).count())
    };
    // Informational only: never fails the suite.
    match run() {
        Ok(solved) => Outcome::Skip(format!("informational: {solved}/5 solved (expect >= 3)")),
        Err(e) => Outcome::Skip(format!("informational: live run errored: {e}")),
    }
}

fn main() {
    let checks: [(&str, Check); 9] = [
        ("beta exactness and monotonicity", beta_exactness),
        ("select_path equals brute-force argmax", select_path_oracle),
        ("reward exactness and range", reward_exactness),
        ("backpropagation keeps max-Q and visit counts", backprop_max_q),
        ("rethink solves within two units, disabled fails", rethink_contract),
        ("fixture benchmark runs are deterministic", determinism),
        ("metrics round-trip through the results file", metrics_round_trip),
        ("private tests never reach a prompt", hygiene),
        ("traced feedback carries input, output and block verdicts", integration_feedback),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let outcome = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(())) => Outcome::Pass,
            Ok(Err(e)) => Outcome::Fail(e),
            Err(_) => Outcome::Fail("panicked".into()),
        };
        report(name, &outcome, &mut failed);
    }
    report("live smoke (non-gating)", &live_smoke(), &mut failed);
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}

fn report(name: &str, outcome: &Outcome, failed: &mut usize) {
    match outcome {
        Outcome::Pass => println!("PASS {name}"),
        Outcome::Fail(why) => {
            *failed += 1;
            println!("FAIL {name}: {why}");
        }
        Outcome::Skip(why) => println!("SKIP {name}: {why}"),
    }
}
