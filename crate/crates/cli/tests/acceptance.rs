//! Acceptance criteria, one `[PASS]`/`[FAIL]` line each.
//!
//! Runs as a plain binary (no libtest harness) so every line is printed
//! regardless of outcome; the process exits non-zero if any criterion fails.
//! Tolerances and runtime budgets are pinned in the constants below.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use mcq_harness::bias_probe::{invert, lucky_rate, BiasDistribution};
use mcq_harness::clock::Clock;
use mcq_harness::dataset::{ItemSet, McqItem};
use mcq_harness::gateway::{SimulatedGateway, SimulatedResponderConfig};
use mcq_harness::metrics::{
    accuracy, aggregate, answer_metrics, distractor_metrics, pure_skill, ssd_selection_rate, FamilyScores,
    TaxonomyCounts,
};
use mcq_harness::protocol::{estimate_call_volume, run_condition, CallPlan, Condition, ConditionName, Method, RunContext};
use mcq_harness::semantic_spread::{expected_distance, placement_weights, uniform_expected_distance, Kernel, MockEmbedder};
use mcq_harness_cli::{cmd_run, HarnessConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

const LUCKY_RATE_TOL: f64 = 1e-12;
/// Slack on the `p_min <= l <= 1/n` bounds for floating-point rounding.
const BOUND_SLACK: f64 = 1e-15;
const GOLDEN_TOL: f64 = 5e-5;
const Z_99: f64 = 2.575_829_303_548_901;
const SIGMAS: f64 = 3.0;

const THEOREM_BUDGET: Duration = Duration::from_secs(5);
const PROPOSITION_BUDGET: Duration = Duration::from_secs(1);
const GOLDEN_BUDGET: Duration = Duration::from_secs(1);
const MONTE_CARLO_BUDGET: Duration = Duration::from_secs(60);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn within_budget(v: Verdict, elapsed: Duration, budget: Duration) -> Verdict {
    if elapsed <= budget {
        v
    } else {
        verdict(false, format!("{} (took {elapsed:.2?}, budget {budget:.2?})", v.detail))
    }
}

fn items(count: usize, n: usize, answer: impl Fn(usize) -> usize) -> ItemSet {
    let items = (0..count)
        .map(|i| {
            McqItem::new(
                Some(format!("item-{i:05}")),
                format!("Which choice fits case {i}?"),
                (0..n).map(|k| format!("choice {k} of case {i}")).collect(),
                answer(i),
            )
            .unwrap()
        })
        .collect();
    ItemSet::from_items("acceptance", items).unwrap()
}

fn context<'a>(gw: &'a SimulatedGateway, seed: u64) -> RunContext<'a> {
    let mut c = RunContext::new(gw, seed);
    c.clock = Clock::deterministic();
    c
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(1e-3..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn theorem_suite() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst = 0.0f64;
    let mut violations = Vec::new();
    for trial in 0..10_000 {
        let n = 2 + trial % 7;
        let p = random_simplex(&mut rng, n);
        let dist = BiasDistribution::from_probs(p.clone()).unwrap();
        let q = invert(&dist).unwrap();
        let l = lucky_rate(&dist, &q.probs).unwrap().value;
        // oracle: expectation of p under q with q_i = (1/p_i) / sum_j (1/p_j)
        let inv_sum: f64 = p.iter().map(|x| 1.0 / x).sum();
        let oracle: f64 = p.iter().map(|x| x * (1.0 / x) / inv_sum).sum();
        let harmonic = n as f64 / inv_sum;
        worst = worst.max((l - harmonic).abs()).max((oracle - harmonic).abs());
        let p_min = p.iter().copied().fold(f64::INFINITY, f64::min);
        if l < p_min - BOUND_SLACK || l > 1.0 / n as f64 + BOUND_SLACK {
            violations.push(format!("n={n} l={l} p_min={p_min}"));
        }
    }
    let mut uniform_exact = true;
    for n in 2..=8 {
        let d = BiasDistribution::from_probs(vec![1.0 / n as f64; n]).unwrap();
        let q = invert(&d).unwrap();
        uniform_exact &= lucky_rate(&d, &q.probs).unwrap().value == 1.0 / n as f64;
    }
    let pass = worst < LUCKY_RATE_TOL && violations.is_empty() && uniform_exact;
    within_budget(
        verdict(
            pass,
            format!(
                "10000 profiles, max |l - n/sum(1/p)| = {worst:.1e}, bound violations = {}, uniform exact = {uniform_exact}",
                violations.len()
            ),
        ),
        start.elapsed(),
        THEOREM_BUDGET,
    )
}

fn proposition_suite() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut checked = 0;
    for n in 2..=10usize {
        for i in 0..n {
            let exp = expected_distance(&placement_weights(n, i, Kernel::Exponential).unwrap());
            let unif = uniform_expected_distance(n, i).unwrap();
            let others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| j.abs_diff(i) as f64).collect();
            let oracle_unif = others.iter().sum::<f64>() / others.len() as f64;
            let z: f64 = others.iter().map(|d| d.exp()).sum();
            let oracle_exp = others.iter().map(|d| d * d.exp() / z).sum::<f64>();
            checked += 1;
            let agrees = (exp - oracle_exp).abs() < 1e-12 && (unif - oracle_unif).abs() < 1e-12;
            let ordered = if n == 2 { exp == 1.0 && unif == 1.0 } else { exp > unif };
            if !agrees || !ordered {
                failures.push(format!("n={n} i={i} exp={exp} unif={unif}"));
            }
        }
    }
    within_budget(
        verdict(
            failures.is_empty(),
            format!("{checked} (n, slot) pairs, failures: {failures:?}"),
        ),
        start.elapsed(),
        PROPOSITION_BUDGET,
    )
}

#[derive(Deserialize)]
struct MetricRow {
    dataset: String,
    model: String,
    method: String,
    pr_t: u64,
    pr_f: u64,
    co_t: u64,
    co_f: u64,
    answer: [f64; 3],
    distractor: [f64; 3],
}

#[derive(Deserialize)]
struct PureSkillRow {
    dataset: String,
    model: String,
    arm: String,
    af1: f64,
    lucky_rate: f64,
    pure_skill: f64,
}

#[derive(Deserialize)]
struct PublishedTables {
    metric_rows: Vec<MetricRow>,
    pure_skill_rows: Vec<PureSkillRow>,
}

fn published() -> PublishedTables {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/published_tables.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn golden_metrics() -> Verdict {
    let tables = published();
    let start = Instant::now();
    let mut cells = 0;
    let mut mismatches = Vec::new();
    for row in &tables.metric_rows {
        let counts = TaxonomyCounts::new(row.pr_t, row.pr_f, row.co_t, row.co_f);
        let families: [(&str, FamilyScores, [f64; 3]); 2] = [
            ("answer", answer_metrics(&counts).rounded(4), row.answer),
            ("distractor", distractor_metrics(&counts).rounded(4), row.distractor),
        ];
        for (family, got, want) in families {
            for (metric, g, w) in [("P", got.precision, want[0]), ("R", got.recall, want[1]), ("F1", got.f1, want[2])] {
                cells += 1;
                if (g - w).abs() > GOLDEN_TOL {
                    mismatches.push(format!(
                        "{}/{}/{} {family} {metric}: computed {g:.4}, published {w:.4}",
                        row.dataset, row.model, row.method
                    ));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    within_budget(
        verdict(
            mismatches.is_empty() && cells == 672,
            format!("{cells} cells, {} mismatched {mismatches:?}", mismatches.len()),
        ),
        elapsed,
        GOLDEN_BUDGET,
    )
}

fn golden_pure_skill() -> Verdict {
    let tables = published();
    let mut mismatches = Vec::new();
    for row in &tables.pure_skill_rows {
        let got = pure_skill(row.af1, row.lucky_rate);
        if (got - row.pure_skill).abs() > GOLDEN_TOL {
            mismatches.push(format!(
                "{}/{}/{}: {:.4} - {:.4} = {got:.4}, published {:.4}",
                row.dataset, row.model, row.arm, row.af1, row.lucky_rate, row.pure_skill
            ));
        }
    }
    let rows = tables.pure_skill_rows.len();
    verdict(
        mismatches.is_empty() && rows == 48,
        format!("{rows} rows, {} mismatched {mismatches:?}", mismatches.len()),
    )
}

/// Two-sided 99% binomial half-width over `n` independent items. Item-level
/// accuracy has variance at most `p(1-p)`, so this is conservative for the
/// per-trial mean of a repeated-trial run.
fn ci99(p: f64, n: usize) -> f64 {
    Z_99 * (p * (1.0 - p) / n as f64).sqrt()
}

fn lucky_hit_cancellation() -> Verdict {
    let start = Instant::now();
    let p = vec![0.7, 0.1, 0.1, 0.1];
    let n_items = 20_000;
    let gw = SimulatedGateway::new("zero-knowledge", SimulatedResponderConfig::zero_knowledge(p.clone(), 11)).unwrap();
    let bias = BiasDistribution::from_probs(p.clone()).unwrap();
    let emb = MockEmbedder::new(32, 0);
    let oracle_l = p.len() as f64 / p.iter().map(|x| 1.0 / x).sum::<f64>();

    let scope_set = items(n_items, 4, |i| i % 4);
    let mut ctx = context(&gw, 42);
    ctx.bias = Some(&bias);
    ctx.embeddings = Some(&emb);
    let scope = accuracy(&run_condition(&scope_set, &Condition::new(ConditionName::Scope), &ctx, None).unwrap()).unwrap();

    let slot0 = items(n_items, 4, |_| 0);
    let baseline = accuracy(&run_condition(&slot0, &Condition::new(ConditionName::Baseline), &ctx, None).unwrap()).unwrap();
    let lbp = accuracy(&run_condition(&slot0, &Condition::new(ConditionName::Lbp), &ctx, None).unwrap()).unwrap();

    let scope_ok = (scope - oracle_l).abs() <= ci99(oracle_l, n_items);
    let baseline_ok = (baseline - 0.7).abs() <= ci99(0.7, n_items);
    within_budget(
        verdict(
            scope_ok && baseline_ok && baseline > lbp,
            format!(
                "scope acc {scope:.4} vs l {oracle_l:.4} +/- {:.4}; baseline acc {baseline:.4} vs 0.7 +/- {:.4}; lbp acc {lbp:.4}",
                ci99(oracle_l, n_items),
                ci99(0.7, n_items)
            ),
        ),
        start.elapsed(),
        MONTE_CARLO_BUDGET,
    )
}

fn ssd_dispersion() -> Verdict {
    let n_items = 10_000;
    let mut cfg = SimulatedResponderConfig::zero_knowledge(vec![0.25; 4], 12);
    cfg.confusion = 0.5;
    cfg.near_miss_decay = 0.5;
    let gw = SimulatedGateway::new("confusable", cfg).unwrap();
    let emb = MockEmbedder::new(32, 0);
    let set = items(n_items, 4, |i| (i * 3) % 4);
    let mut ctx = context(&gw, 42);
    ctx.embeddings = Some(&emb);
    let rate = |name| ssd_selection_rate(&run_condition(&set, &Condition::new(name), &ctx, None).unwrap()).unwrap();
    let adjacent = rate(ConditionName::SsdAdjacent);
    let far = rate(ConditionName::SsdFar);
    let var = |r: f64| r * (1.0 - r) / n_items as f64;
    let sigma = (var(adjacent) + var(far)).sqrt();
    verdict(
        adjacent - far > SIGMAS * sigma,
        format!(
            "adjacent {adjacent:.4}, far {far:.4}, gap {:.4} vs 3 sigma {:.4}",
            adjacent - far,
            SIGMAS * sigma
        ),
    )
}

fn call_volume() -> Verdict {
    let plan = CallPlan::default();
    let base = 2 * 500 * 5 * 8;
    let expected: BTreeMap<&str, u64> = [
        ("baseline", base),
        ("calib_ev", base),
        ("di", base),
        ("ec", 2 * base),
        ("majority_vote", 10 * base),
        ("pride", base + base / 20),
        ("scope", base + 1000 * 8),
    ]
    .into_iter()
    .collect();
    let mut mismatches = Vec::new();
    let mut total = 0;
    for m in Method::ALL {
        let got = estimate_call_volume(m, &plan);
        total += got;
        if expected[m.as_str()] != got {
            mismatches.push(format!("{}: {got} != {}", m.as_str(), expected[m.as_str()]));
        }
    }
    let headline = [
        estimate_call_volume(Method::Baseline, &plan),
        estimate_call_volume(Method::MajorityVote, &plan),
        estimate_call_volume(Method::Scope, &plan),
    ];
    verdict(
        mismatches.is_empty() && headline == [40_000, 400_000, 48_000] && total == 690_000,
        format!("baseline/MV/SCOPE = {headline:?}, total {total}, mismatches {mismatches:?}"),
    )
}

fn taxonomy_partition() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let emb = MockEmbedder::new(16, 0);
    let mut broken = Vec::new();
    for run in 0..1000u64 {
        let n = rng.gen_range(2..=6);
        let count = rng.gen_range(1..=25);
        let set = items(count, n, |i| (i * 5 + run as usize) % n);
        let p = random_simplex(&mut rng, n);
        let mut cfg = SimulatedResponderConfig::zero_knowledge(p.clone(), run);
        cfg.default_knowledge = rng.gen_range(0.0..1.0);
        cfg.confusion = rng.gen_range(0.0..1.0);
        cfg.near_miss_decay = rng.gen_range(0.1..=1.0);
        cfg.unparseable_rate = rng.gen_range(0.0..0.3);
        let gw = SimulatedGateway::new("random", cfg).unwrap();
        let bias = BiasDistribution::from_probs(p).unwrap();
        let name = ConditionName::ALL[rng.gen_range(0..ConditionName::ALL.len())];
        let mut cond = Condition::new(name);
        cond.repetitions = rng.gen_range(1..=7);
        cond.mv_permutations = rng.gen_range(1..=5);
        let mut ctx = context(&gw, run);
        ctx.bias = Some(&bias);
        ctx.embeddings = Some(&emb);
        let counts = aggregate(&run_condition(&set, &cond, &ctx, None).unwrap()).unwrap();
        if counts.total() != count as u64 {
            broken.push(format!("run {run} ({name}): {counts:?} for {count} items"));
        }
    }
    verdict(broken.is_empty(), format!("1000 runs, {} broken {broken:?}", broken.len()))
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn end_to_end_determinism() -> Verdict {
    let work = tempfile::tempdir().unwrap();
    let data = work.path().join("questions.jsonl");
    items(120, 5, |i| (i * 2) % 5).write_generic_jsonl(&data).unwrap();
    let invoke = |out: &str| {
        let cfg = HarnessConfig {
            dataset: data.display().to_string(),
            condition: "scope".into(),
            out: work.path().join(out),
            ..HarnessConfig::default()
        };
        assert_eq!(cfg.seed, 42);
        let runs = cmd_run(&cfg).unwrap();
        (tree(&cfg.out), runs.len())
    };
    let (first, reports) = invoke("first");
    let (second, _) = invoke("second");
    let logs = first.keys().filter(|p| p.starts_with("logs")).count();
    let report_files = first.keys().filter(|p| p.starts_with("reports")).count();
    verdict(
        first == second && logs == 1 && report_files == 3 && reports == 1,
        format!(
            "{} files compared ({logs} log, {report_files} reports), identical = {}",
            first.len(),
            first == second
        ),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 9] = [
        ("theorem suite: inverse placement lucky rate", theorem_suite),
        ("proposition suite: exponential vs uniform spread", proposition_suite),
        ("golden answer/distractor metrics", golden_metrics),
        ("golden pure skill", golden_pure_skill),
        ("lucky-hit cancellation (Monte Carlo)", lucky_hit_cancellation),
        ("SSD dispersion: far below adjacent", ssd_dispersion),
        ("call-volume accounting", call_volume),
        ("taxonomy partition over random runs", taxonomy_partition),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!v.pass);
        println!(
            "[{}] {name} ({:.2?}): {}",
            if v.pass { "PASS" } else { "FAIL" },
            start.elapsed(),
            v.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
