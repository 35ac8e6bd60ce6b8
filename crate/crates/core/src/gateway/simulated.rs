use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GatewayError, ModelGateway, QueryRequest, TrialKey};
use crate::rng::{self, KeyPart};
use crate::semantic_spread::PermutedItem;

const UNPARSEABLE_REPLY: &str = "I cannot decide.";

fn one() -> f64 {
    1.0
}

/// Behavioral model of a biased answering model.
///
/// Per trial: with probability `knowledge(item)` the answer slot is chosen;
/// otherwise, with probability `confusion * near_miss_decay^(d-1)` (where `d`
/// is the slot distance between answer and SSD) the SSD slot is chosen;
/// otherwise a slot is drawn from `position_bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedResponderConfig {
    pub position_bias: Vec<f64>,
    #[serde(default)]
    pub default_knowledge: f64,
    #[serde(default)]
    pub knowledge: BTreeMap<String, f64>,
    #[serde(default)]
    pub confusion: f64,
    /// 1.0 makes SSD confusion independent of distance.
    #[serde(default = "one")]
    pub near_miss_decay: f64,
    /// Probability of an unparseable reply.
    #[serde(default)]
    pub unparseable_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SimulatedResponderConfig {
    pub fn zero_knowledge(position_bias: Vec<f64>, seed: u64) -> Self {
        Self {
            position_bias,
            default_knowledge: 0.0,
            knowledge: BTreeMap::new(),
            confusion: 0.0,
            near_miss_decay: 1.0,
            unparseable_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let p = &self.position_bias;
        let bad = |m: String| Err(GatewayError::InvalidSpec(m));
        if p.len() < 2 {
            return bad("position_bias needs at least two slots".into());
        }
        if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("position_bias entries must be finite and non-negative".into());
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("position_bias sums to {sum}, not 1"));
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.default_knowledge) || !self.knowledge.values().all(|&k| unit(k)) {
            return bad("knowledge values must lie in [0, 1]".into());
        }
        if !unit(self.confusion) || !unit(self.near_miss_decay) {
            return bad("confusion and near_miss_decay must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.unparseable_rate) {
            return bad("unparseable_rate must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn knowledge_of(&self, item_id: &str) -> f64 {
        self.knowledge
            .get(item_id)
            .copied()
            .unwrap_or(self.default_knowledge)
    }

    fn draw_biased<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, p) in self.position_bias.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // rounding left u above the cumulative total; take the last slot with mass
        self.position_bias
            .iter()
            .rposition(|&p| p > 0.0)
            .unwrap_or(self.position_bias.len() - 1)
    }

    /// One simulated choice given the layout of the presented item.
    pub fn respond_slot<R: Rng + ?Sized>(
        &self,
        item_id: &str,
        answer_slot: usize,
        ssd_slot: Option<usize>,
        rng: &mut R,
    ) -> usize {
        if rng.gen::<f64>() < self.knowledge_of(item_id) {
            return answer_slot;
        }
        if let Some(ssd) = ssd_slot {
            let d = ssd.abs_diff(answer_slot).max(1);
            let p = self.confusion * self.near_miss_decay.powi(d as i32 - 1);
            if rng.gen::<f64>() < p {
                return ssd;
            }
        }
        self.draw_biased(rng)
    }
}

/// Simulated choice for a permuted item.
pub fn simulated_respond<R: Rng + ?Sized>(
    cfg: &SimulatedResponderConfig,
    item: &PermutedItem<'_>,
    rng: &mut R,
) -> Result<usize, GatewayError> {
    let n = item.order.len();
    if cfg.position_bias.len() != n {
        return Err(GatewayError::DimensionMismatch {
            expected: n,
            found: cfg.position_bias.len(),
        });
    }
    Ok(cfg.respond_slot(&item.item.item_id, item.answer_slot, item.ssd_slot, rng))
}

/// Offline gateway backed by [`SimulatedResponderConfig`]. Randomness is
/// derived from `(seed, trial key)`, so results do not depend on the order
/// or concurrency of requests.
#[derive(Debug, Clone)]
pub struct SimulatedGateway {
    model_id: String,
    cfg: SimulatedResponderConfig,
}

impl SimulatedGateway {
    pub fn new(model_id: impl Into<String>, cfg: SimulatedResponderConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        Ok(Self {
            model_id: model_id.into(),
            cfg,
        })
    }

    pub fn config(&self) -> &SimulatedResponderConfig {
        &self.cfg
    }
}

impl ModelGateway for SimulatedGateway {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn query(&self, request: &QueryRequest) -> Result<String, GatewayError> {
        let n = request.options.len();
        if n != self.cfg.position_bias.len() {
            return Err(GatewayError::DimensionMismatch {
                expected: n,
                found: self.cfg.position_bias.len(),
            });
        }
        let seed = self.cfg.seed;
        let mut rng = match &request.key {
            TrialKey::Null { n, trial, attempt } => rng::stream(
                seed,
                rng::label::RESPONDER,
                &[KeyPart::Str("null"), (*n).into(), (*trial).into(), (*attempt).into()],
            ),
            TrialKey::Item {
                item_id,
                trial_index,
                vote,
                attempt,
            } => rng::stream(
                seed,
                rng::label::RESPONDER,
                &[
                    KeyPart::Str(item_id),
                    (*trial_index).into(),
                    vote.map_or(0u64, |v| u64::from(v) + 1).into(),
                    (*attempt).into(),
                ],
            ),
        };
        if self.cfg.unparseable_rate > 0.0 && rng.gen::<f64>() < self.cfg.unparseable_rate {
            return Ok(UNPARSEABLE_REPLY.to_string());
        }
        let slot = match (&request.key, request.truth) {
            (TrialKey::Item { item_id, .. }, Some(truth)) => {
                self.cfg
                    .respond_slot(item_id, truth.answer_slot, truth.ssd_slot, &mut rng)
            }
            _ => self.cfg.draw_biased(&mut rng),
        };
        Ok(request.options[slot].clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::McqItem;
    use crate::gateway::SlotTruth;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn item4() -> McqItem {
        McqItem::new(
            Some("i1".into()),
            "q",
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            0,
        )
        .unwrap()
    }

    fn permuted(item: &McqItem, answer_slot: usize, ssd_slot: Option<usize>) -> PermutedItem<'_> {
        // identity layout with the answer moved to `answer_slot`
        let mut order: Vec<usize> = (0..item.options.len()).collect();
        order.swap(0, answer_slot);
        PermutedItem {
            item,
            order,
            answer_slot,
            ssd_slot,
            ssd_source_index: None,
        }
    }

    #[test]
    fn omniscient_always_correct() {
        let item = item4();
        let mut cfg = SimulatedResponderConfig::zero_knowledge(vec![0.25; 4], 1);
        cfg.default_knowledge = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for a in 0..4 {
            let p = permuted(&item, a, None);
            for _ in 0..100 {
                assert_eq!(simulated_respond(&cfg, &p, &mut rng).unwrap(), a);
            }
        }
    }

    #[test]
    fn biased_guesser_with_answer_at_slot_zero() {
        // oracle: without knowledge or confusion, P(correct) = P[answer_slot] = 0.7
        let item = item4();
        let cfg = SimulatedResponderConfig::zero_knowledge(vec![0.7, 0.1, 0.1, 0.1], 1);
        let p = permuted(&item, 0, None);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 20_000;
        let hits = (0..n)
            .filter(|_| simulated_respond(&cfg, &p, &mut rng).unwrap() == 0)
            .count();
        let acc = hits as f64 / n as f64;
        let sigma = (0.7f64 * 0.3 / n as f64).sqrt();
        assert!((acc - 0.7).abs() < 4.0 * sigma, "acc {acc}");
    }

    #[test]
    fn uniform_guesser_is_pure_chance() {
        let item = item4();
        let cfg = SimulatedResponderConfig::zero_knowledge(vec![0.25; 4], 9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let mut hits = 0;
        for t in 0..n {
            let p = permuted(&item, t % 4, None);
            if simulated_respond(&cfg, &p, &mut rng).unwrap() == t % 4 {
                hits += 1;
            }
        }
        let acc = hits as f64 / n as f64;
        assert!((acc - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / n as f64).sqrt());
    }

    #[test]
    fn dimension_mismatch() {
        let item = item4();
        let cfg = SimulatedResponderConfig::zero_knowledge(vec![0.5, 0.5], 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            simulated_respond(&cfg, &permuted(&item, 0, None), &mut rng),
            Err(GatewayError::DimensionMismatch { expected: 4, found: 2 })
        ));
    }

    #[test]
    fn full_confusion_picks_ssd() {
        let item = item4();
        let mut cfg = SimulatedResponderConfig::zero_knowledge(vec![0.25; 4], 1);
        cfg.confusion = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = permuted(&item, 1, Some(3));
        for _ in 0..50 {
            assert_eq!(simulated_respond(&cfg, &p, &mut rng).unwrap(), 3);
        }
    }

    #[test]
    fn gateway_is_deterministic_per_key() {
        let gw = SimulatedGateway::new(
            "sim",
            SimulatedResponderConfig::zero_knowledge(vec![0.4, 0.3, 0.2, 0.1], 42),
        )
        .unwrap();
        let req = QueryRequest {
            prompt: "pick".into(),
            options: vec!["w".into(), "x".into(), "y".into(), "z".into()],
            key: TrialKey::Item {
                item_id: "a".into(),
                trial_index: 0,
                vote: None,
                attempt: 0,
            },
            truth: Some(SlotTruth {
                answer_slot: 2,
                ssd_slot: None,
            }),
        };
        let first = gw.query(&req).unwrap();
        for _ in 0..5 {
            assert_eq!(gw.query(&req).unwrap(), first);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = SimulatedResponderConfig::zero_knowledge(vec![0.6, 0.6], 0);
        assert!(cfg.validate().is_err());
        cfg.position_bias = vec![0.5, 0.5];
        cfg.confusion = 1.5;
        assert!(cfg.validate().is_err());
        cfg.confusion = 0.5;
        cfg.knowledge.insert("x".into(), -0.1);
        assert!(cfg.validate().is_err());
    }
}
