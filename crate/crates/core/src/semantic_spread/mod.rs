//! Answer and SSD slot placement.
//!
//! The SSD (semantically similar distractor) is the option whose embedding is
//! closest to the answer's. Once the answer slot `i*` is fixed, the SSD slot is
//! drawn with weights that grow with `|j - i*|`, pushing it away from the
//! answer; the remaining distractors fill the leftover slots uniformly.

mod embedding;

pub use embedding::{
    load_embedding_file, parse_embedding_jsonl, EmbeddingError, EmbeddingRecord, EmbeddingSource,
    EmbeddingStore, MockEmbedder, RemoteEmbedder,
};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bias_probe::InverseBias;
use crate::dataset::McqItem;

#[derive(Debug, Error, PartialEq)]
pub enum SpreadError {
    #[error("zero-length vector")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least two slots, got {n}")]
    Arity { n: usize },
    #[error("slot {slot} out of range for {n} options")]
    SlotOutOfRange { slot: usize, n: usize },
    #[error("answer and SSD both assigned to slot {slot}")]
    SlotCollision { slot: usize },
    #[error("SSD index {0} is the answer index")]
    SsdIsAnswer(usize),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// Sentence embeddings of one item's options, in original option order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionEmbedding {
    pub item_id: String,
    pub encoder_id: String,
    pub vectors: Vec<Vec<f64>>,
}

impl OptionEmbedding {
    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, SpreadError> {
    if a.len() != b.len() {
        return Err(SpreadError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(SpreadError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Original index of the distractor most similar to the answer; ties resolve
/// to the lowest index.
pub fn identify_ssd(emb: &OptionEmbedding, answer_index: usize) -> Result<usize, SpreadError> {
    let n = emb.vectors.len();
    if n < 2 {
        return Err(SpreadError::Arity { n });
    }
    if answer_index >= n {
        return Err(SpreadError::SlotOutOfRange { slot: answer_index, n });
    }
    let answer = &emb.vectors[answer_index];
    let mut best: Option<(usize, f64)> = None;
    for (k, v) in emb.vectors.iter().enumerate() {
        if k == answer_index {
            continue;
        }
        let s = cosine_similarity(answer, v)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((k, s));
        }
    }
    Ok(best.expect("n >= 2 leaves a distractor").0)
}

/// Weight of a slot at distance `d >= 1` from the answer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(d)`
    #[default]
    Exponential,
    /// `d^tau`; `tau = 0` is uniform over non-answer slots.
    Power { tau: f64 },
}

impl Kernel {
    fn validate(self) -> Result<(), SpreadError> {
        match self {
            Kernel::Power { tau } if !tau.is_finite() || tau < 0.0 => {
                Err(SpreadError::InvalidKernel(format!("tau {tau} must be finite and >= 0")))
            }
            _ => Ok(()),
        }
    }

    pub fn weight(self, d: usize) -> f64 {
        match self {
            Kernel::Exponential => (d as f64).exp(),
            Kernel::Power { tau } => (d as f64).powf(tau),
        }
    }
}

/// Distribution of the SSD slot given the answer slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementDistribution {
    pub answer_slot: usize,
    pub weights: Vec<f64>,
    pub probs: Vec<f64>,
    pub kernel: Kernel,
}

pub fn placement_weights(
    n: usize,
    answer_slot: usize,
    kernel: Kernel,
) -> Result<PlacementDistribution, SpreadError> {
    if n < 2 {
        return Err(SpreadError::Arity { n });
    }
    if answer_slot >= n {
        return Err(SpreadError::SlotOutOfRange { slot: answer_slot, n });
    }
    kernel.validate()?;
    let weights: Vec<f64> = (0..n)
        .map(|j| {
            if j == answer_slot {
                0.0
            } else {
                kernel.weight(j.abs_diff(answer_slot))
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let probs = weights.iter().map(|w| w / total).collect();
    Ok(PlacementDistribution {
        answer_slot,
        weights,
        probs,
        kernel,
    })
}

/// `Σ r_j |j - i*|`.
pub fn expected_distance(dist: &PlacementDistribution) -> f64 {
    dist.probs
        .iter()
        .enumerate()
        .map(|(j, r)| r * j.abs_diff(dist.answer_slot) as f64)
        .sum()
}

/// Mean distance when the SSD slot is uniform over the non-answer slots.
pub fn uniform_expected_distance(n: usize, answer_slot: usize) -> Result<f64, SpreadError> {
    placement_weights(n, answer_slot, Kernel::Power { tau: 0.0 }).map(|d| expected_distance(&d))
}

/// Draw an index from a categorical distribution.
pub fn sample_slot<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Result<usize, SpreadError> {
    let dist = WeightedIndex::new(probs).map_err(|e| SpreadError::InvalidDistribution(e.to_string()))?;
    Ok(dist.sample(rng))
}

pub fn sample_answer_slot<R: Rng + ?Sized>(q: &InverseBias, rng: &mut R) -> Result<usize, SpreadError> {
    sample_slot(&q.probs, rng)
}

pub fn sample_ssd_slot<R: Rng + ?Sized>(
    dist: &PlacementDistribution,
    rng: &mut R,
) -> Result<usize, SpreadError> {
    sample_slot(&dist.probs, rng)
}

/// An item laid out for presentation: `order[slot]` is the original option
/// index shown at `slot`.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutedItem<'a> {
    pub item: &'a McqItem,
    pub order: Vec<usize>,
    pub answer_slot: usize,
    pub ssd_slot: Option<usize>,
    pub ssd_source_index: Option<usize>,
}

impl<'a> PermutedItem<'a> {
    /// Options in their original order.
    pub fn identity(item: &'a McqItem) -> Self {
        Self::from_order(item, (0..item.option_count()).collect(), None)
            .expect("identity is a bijection")
    }

    /// Wrap an explicit layout, locating answer and (optionally) SSD slots.
    pub fn from_order(
        item: &'a McqItem,
        order: Vec<usize>,
        ssd_source_index: Option<usize>,
    ) -> Result<Self, SpreadError> {
        let n = item.option_count();
        if order.len() != n {
            return Err(SpreadError::DimensionMismatch {
                expected: n,
                found: order.len(),
            });
        }
        let mut seen = vec![false; n];
        for &o in &order {
            if o >= n || std::mem::replace(&mut seen[o], true) {
                return Err(SpreadError::InvalidDistribution(format!(
                    "order {order:?} is not a permutation"
                )));
            }
        }
        if ssd_source_index == Some(item.answer_index) {
            return Err(SpreadError::SsdIsAnswer(item.answer_index));
        }
        let slot_of = |idx: usize| order.iter().position(|&o| o == idx);
        let answer_slot = slot_of(item.answer_index).expect("bijection");
        let ssd_slot = match ssd_source_index {
            Some(s) => Some(slot_of(s).ok_or(SpreadError::SlotOutOfRange { slot: s, n })?),
            None => None,
        };
        Ok(Self {
            item,
            order,
            answer_slot,
            ssd_slot,
            ssd_source_index,
        })
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Option texts in slot order.
    pub fn presented_options(&self) -> Vec<String> {
        self.order.iter().map(|&i| self.item.options[i].clone()).collect()
    }
}

/// Answer at `answer_slot`, SSD at `ssd_slot`, remaining options shuffled
/// uniformly into the leftover slots.
pub fn build_permutation<'a, R: Rng + ?Sized>(
    item: &'a McqItem,
    answer_slot: usize,
    ssd_slot: usize,
    ssd_index: usize,
    rng: &mut R,
) -> Result<PermutedItem<'a>, SpreadError> {
    let n = item.option_count();
    for slot in [answer_slot, ssd_slot, ssd_index] {
        if slot >= n {
            return Err(SpreadError::SlotOutOfRange { slot, n });
        }
    }
    if answer_slot == ssd_slot {
        return Err(SpreadError::SlotCollision { slot: answer_slot });
    }
    if ssd_index == item.answer_index {
        return Err(SpreadError::SsdIsAnswer(ssd_index));
    }
    let mut rest: Vec<usize> = (0..n)
        .filter(|&i| i != item.answer_index && i != ssd_index)
        .collect();
    rest.shuffle(rng);
    let mut rest = rest.into_iter();
    let order = (0..n)
        .map(|slot| {
            if slot == answer_slot {
                item.answer_index
            } else if slot == ssd_slot {
                ssd_index
            } else {
                rest.next().expect("one leftover option per leftover slot")
            }
        })
        .collect();
    Ok(PermutedItem {
        item,
        order,
        answer_slot,
        ssd_slot: Some(ssd_slot),
        ssd_source_index: Some(ssd_index),
    })
}

/// Answer pinned at `answer_slot`, all distractors shuffled uniformly. When
/// `ssd_index` is known its slot is recorded.
pub fn build_answer_only<'a, R: Rng + ?Sized>(
    item: &'a McqItem,
    answer_slot: usize,
    ssd_index: Option<usize>,
    rng: &mut R,
) -> Result<PermutedItem<'a>, SpreadError> {
    let n = item.option_count();
    if answer_slot >= n {
        return Err(SpreadError::SlotOutOfRange { slot: answer_slot, n });
    }
    let mut rest: Vec<usize> = (0..n).filter(|&i| i != item.answer_index).collect();
    rest.shuffle(rng);
    rest.insert(answer_slot, item.answer_index);
    PermutedItem::from_order(item, rest, ssd_index)
}

/// Uniformly random layout.
pub fn build_uniform<'a, R: Rng + ?Sized>(
    item: &'a McqItem,
    ssd_index: Option<usize>,
    rng: &mut R,
) -> Result<PermutedItem<'a>, SpreadError> {
    let mut order: Vec<usize> = (0..item.option_count()).collect();
    order.shuffle(rng);
    PermutedItem::from_order(item, order, ssd_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn item(n: usize, answer: usize) -> McqItem {
        McqItem::new(
            Some("x".into()),
            "q",
            (0..n).map(|i| format!("opt{i}")).collect(),
            answer,
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = [0.3, -1.2, 4.0];
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let s = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(SpreadError::ZeroVector)
        );
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(SpreadError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ssd_examples() {
        let emb = |vectors: Vec<Vec<f64>>| OptionEmbedding {
            item_id: "x".into(),
            encoder_id: "t".into(),
            vectors,
        };
        assert_eq!(identify_ssd(&emb(vec![vec![1.0, 0.0], vec![0.0, 1.0]]), 0).unwrap(), 1);
        let e = emb(vec![
            vec![1.0, 2.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.5],
            vec![1.0, 2.0],
        ]);
        assert_eq!(identify_ssd(&e, 0).unwrap(), 3);
        // ties go to the lowest index
        let e = emb(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(identify_ssd(&e, 0).unwrap(), 1);
    }

    #[test]
    fn weight_examples() {
        let d = placement_weights(4, 1, Kernel::Exponential).unwrap();
        let e = std::f64::consts::E;
        let t = 2.0 * e + e * e;
        let expect = [e / t, 0.0, e / t, e * e / t];
        for (a, b) in d.probs.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((d.probs[3] - 0.5761).abs() < 1e-4);
        assert!((d.probs[0] - 0.2119).abs() < 1e-4);

        let d = placement_weights(5, 0, Kernel::Power { tau: 1.0 }).unwrap();
        for (a, b) in d.probs.iter().zip([0.0, 0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-12);
        }
        let d = placement_weights(5, 0, Kernel::Power { tau: 0.0 }).unwrap();
        assert_eq!(d.probs, vec![0.0, 0.25, 0.25, 0.25, 0.25]);
        assert_eq!(
            placement_weights(1, 0, Kernel::Exponential),
            Err(SpreadError::Arity { n: 1 })
        );
        assert!(placement_weights(3, 0, Kernel::Power { tau: -1.0 }).is_err());
    }

    #[test]
    fn expected_distance_two_slots() {
        for i in 0..2 {
            let d = placement_weights(2, i, Kernel::Exponential).unwrap();
            assert_eq!(expected_distance(&d), 1.0);
            assert_eq!(uniform_expected_distance(2, i).unwrap(), 1.0);
        }
        let exp = expected_distance(&placement_weights(4, 0, Kernel::Exponential).unwrap());
        assert!(exp > uniform_expected_distance(4, 0).unwrap());
    }

    #[test]
    fn ssd_slot_frequencies() {
        let d = placement_weights(4, 1, Kernel::Exponential).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 100_000;
        let far = (0..n)
            .filter(|_| sample_ssd_slot(&d, &mut rng).unwrap() == 3)
            .count();
        assert!((far as f64 / n as f64 - 0.5761).abs() < 0.01);
        let two = placement_weights(2, 0, Kernel::Exponential).unwrap();
        for _ in 0..100 {
            assert_eq!(sample_ssd_slot(&two, &mut rng).unwrap(), 1);
        }
        for _ in 0..1000 {
            assert_ne!(sample_slot(&[0.5, 0.0, 0.5], &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn permutation_pins_answer_and_ssd() {
        let it = item(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut leftover_hits = [[0usize; 4]; 4];
        let builds = 10_000;
        for _ in 0..builds {
            let p = build_permutation(&it, 0, 3, 1, &mut rng).unwrap();
            assert_eq!(p.order[0], 2);
            assert_eq!(p.order[3], 1);
            for slot in [1, 2] {
                leftover_hits[p.order[slot]][slot] += 1;
            }
        }
        for opt in [0, 3] {
            for slot in [1, 2] {
                let f = leftover_hits[opt][slot] as f64 / builds as f64;
                assert!((f - 0.5).abs() < 0.03, "option {opt} slot {slot}: {f}");
            }
        }
        assert_eq!(
            build_permutation(&it, 1, 1, 0, &mut rng),
            Err(SpreadError::SlotCollision { slot: 1 })
        );
        let two = item(2, 0);
        let p = build_permutation(&two, 1, 0, 1, &mut rng).unwrap();
        assert_eq!(p.order, vec![1, 0]);
    }

    #[test]
    fn answer_only_and_uniform_layouts() {
        let it = item(5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = build_answer_only(&it, 0, Some(4), &mut rng).unwrap();
        assert_eq!(p.order[0], 3);
        assert_eq!(p.order[p.ssd_slot.unwrap()], 4);
        let p = build_uniform(&it, None, &mut rng).unwrap();
        assert_eq!(p.order[p.answer_slot], 3);
        let id = PermutedItem::identity(&it);
        assert_eq!(id.order, vec![0, 1, 2, 3, 4]);
        assert_eq!(id.answer_slot, 3);
    }
}
