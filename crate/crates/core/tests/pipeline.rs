//! Simulated runs checked against closed-form expectations.

use mcq_harness::bias_probe::{invert, BiasDistribution};
use mcq_harness::clock::Clock;
use mcq_harness::dataset::{ItemSet, McqItem};
use mcq_harness::gateway::{SimulatedGateway, SimulatedResponderConfig};
use mcq_harness::metrics::{
    accuracy, aggregate, build_report, selection_rate, ssd_selection_rate, TaxonomyCounts,
};
use mcq_harness::protocol::{run_condition, Condition, ConditionName, RunContext};
use mcq_harness::semantic_spread::MockEmbedder;

fn items(count: usize, n: usize) -> ItemSet {
    let items = (0..count)
        .map(|i| {
            McqItem::new(
                Some(format!("q{i:05}")),
                format!("question {i}"),
                (0..n).map(|k| format!("choice {k} for {i}")).collect(),
                (i * 7) % n,
            )
            .unwrap()
        })
        .collect();
    ItemSet::from_items("synthetic", items).unwrap()
}

fn ctx<'a>(gw: &'a SimulatedGateway, emb: &'a MockEmbedder) -> RunContext<'a> {
    let mut c = RunContext::new(gw, 42);
    c.embeddings = Some(emb);
    c.clock = Clock::deterministic();
    c
}

#[test]
fn omniscient_run() {
    let set = items(200, 4);
    let mut cfg = SimulatedResponderConfig::zero_knowledge(vec![0.7, 0.1, 0.1, 0.1], 1);
    cfg.default_knowledge = 1.0;
    cfg.confusion = 0.9;
    let gw = SimulatedGateway::new("sim", cfg).unwrap();
    let emb = MockEmbedder::new(32, 0);
    let bias = BiasDistribution::from_probs(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
    let mut c = ctx(&gw, &emb);
    c.bias = Some(&bias);
    let log = run_condition(&set, &Condition::new(ConditionName::Scope), &c, None).unwrap();
    assert_eq!(aggregate(&log).unwrap(), TaxonomyCounts::new(0, 0, 200, 0));
    assert_eq!(accuracy(&log).unwrap(), 1.0);
    assert_eq!(ssd_selection_rate(&log).unwrap(), 0.0);
    let r = build_report(&log).unwrap();
    assert_eq!(r.answer.f1, 1.0);
    let l = r.lucky_rate.unwrap();
    assert!((r.pure_skill.unwrap() - (1.0 - l)).abs() < 1e-15);
}

#[test]
fn pure_guessing_consistency_rate() {
    // oracle: P(CoT) = (1/4)^5 per item for a uniform guesser
    let n_items = 20_000;
    let set = items(n_items, 4);
    let gw = SimulatedGateway::new("sim", SimulatedResponderConfig::zero_knowledge(vec![0.25; 4], 2)).unwrap();
    let emb = MockEmbedder::new(16, 0);
    let mut c = ctx(&gw, &emb);
    c.embeddings = None;
    let log = run_condition(&set, &Condition::new(ConditionName::Baseline), &c, None).unwrap();
    let counts = aggregate(&log).unwrap();
    assert_eq!(counts.total(), n_items as u64);
    let p = 0.25f64.powi(5);
    let mean = n_items as f64 * p;
    let sd = (n_items as f64 * p * (1.0 - p)).sqrt();
    assert!((counts.co_t as f64 - mean).abs() < 4.0 * sd, "CoT {} vs {mean}", counts.co_t);

    let acc = accuracy(&log).unwrap();
    assert!((acc - 0.25).abs() < 0.01);
    for r in selection_rate(&log).unwrap().rates {
        assert!((r - 0.25).abs() < 0.01);
    }
}

#[test]
fn full_confusion_selects_ssd() {
    let set = items(300, 4);
    let mut cfg = SimulatedResponderConfig::zero_knowledge(vec![0.25; 4], 3);
    cfg.confusion = 1.0;
    let gw = SimulatedGateway::new("sim", cfg).unwrap();
    let emb = MockEmbedder::new(32, 0);
    let log = run_condition(&set, &Condition::new(ConditionName::SsdFar), &ctx(&gw, &emb), None).unwrap();
    assert_eq!(ssd_selection_rate(&log).unwrap(), 1.0);
}

#[test]
fn biased_selection_rates_follow_bias() {
    let p = vec![0.4, 0.3, 0.2, 0.1];
    let set = items(5000, 4);
    let gw = SimulatedGateway::new("sim", SimulatedResponderConfig::zero_knowledge(p.clone(), 4)).unwrap();
    let emb = MockEmbedder::new(16, 0);
    let mut c = ctx(&gw, &emb);
    c.embeddings = None;
    let log = run_condition(&set, &Condition::new(ConditionName::OrderShuffled), &c, None).unwrap();
    let trials = 25_000f64;
    for (r, q) in selection_rate(&log).unwrap().rates.iter().zip(&p) {
        let sd = (q * (1.0 - q) / trials).sqrt();
        assert!((r - q).abs() < 3.0 * sd, "{r} vs {q}");
    }
}

#[test]
fn scope_answer_slots_follow_inverse_bias() {
    // chi-square goodness of fit of answer slots against Q, 3 dof, alpha 0.01
    let p = vec![0.55, 0.2, 0.15, 0.1];
    let bias = BiasDistribution::from_probs(p.clone()).unwrap();
    let q = invert(&bias).unwrap().probs;
    let n_items = 2000;
    let gw = SimulatedGateway::new("sim", SimulatedResponderConfig::zero_knowledge(p, 5)).unwrap();
    let emb = MockEmbedder::new(32, 0);
    let set = items(n_items, 4);
    let critical = 11.345;
    let mut rejections = 0;
    for seed in [1u64, 2, 3, 4, 5] {
        let mut c = ctx(&gw, &emb);
        c.bias = Some(&bias);
        c.seed = seed;
        let log = run_condition(&set, &Condition::new(ConditionName::Scope), &c, None).unwrap();
        let mut observed = [0f64; 4];
        for (_, trials) in log.by_item() {
            observed[trials[0].answer_slot] += 1.0;
        }
        let chi2: f64 = observed
            .iter()
            .zip(&q)
            .map(|(o, qi)| {
                let e = qi * n_items as f64;
                (o - e).powi(2) / e
            })
            .sum();
        if chi2 > critical {
            rejections += 1;
        }
    }
    assert!(rejections <= 1, "{rejections} of 5 seeds rejected");
}
