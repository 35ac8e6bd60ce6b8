use rand::Rng;

use super::{AnswerPlacement, Condition, ProtocolError, SsdPlacement};
use crate::bias_probe::{BiasDistribution, InverseBias};
use crate::dataset::McqItem;
use crate::semantic_spread::{
    build_answer_only, build_permutation, placement_weights, sample_answer_slot, sample_ssd_slot,
    PermutedItem,
};

/// Per-item inputs to [`plan_placement`].
#[derive(Debug, Clone, Copy, Default)]
pub struct PlacementInputs<'a> {
    pub bias: Option<&'a BiasDistribution>,
    pub inverse: Option<&'a InverseBias>,
    /// Original index of the item's SSD, when embeddings are available.
    pub ssd_index: Option<usize>,
}

/// Lay out one item according to `condition`.
pub fn plan_placement<'a, R: Rng + ?Sized>(
    condition: &Condition,
    item: &'a McqItem,
    inputs: &PlacementInputs<'_>,
    rng: &mut R,
) -> Result<PermutedItem<'a>, ProtocolError> {
    let n = item.option_count();
    for found in [inputs.bias.map(|b| b.n()), inputs.inverse.map(|q| q.probs.len())]
        .into_iter()
        .flatten()
    {
        if found != n {
            return Err(ProtocolError::BiasArity { expected: n, found });
        }
    }
    let missing_bias = || ProtocolError::MissingBiasProfile(condition.name);

    let answer_slot = match condition.answer {
        AnswerPlacement::Fixed => {
            return Ok(PermutedItem::from_order(item, (0..n).collect(), inputs.ssd_index)?);
        }
        AnswerPlacement::Original => item.answer_index,
        AnswerPlacement::Uniform => rng.gen_range(0..n),
        AnswerPlacement::InverseBias => sample_answer_slot(inputs.inverse.ok_or_else(missing_bias)?, rng)?,
        AnswerPlacement::LowestBias => inputs.bias.ok_or_else(missing_bias)?.least_preferred_slot(),
    };

    let ssd_slot = match condition.ssd {
        SsdPlacement::Leftover => {
            return Ok(build_answer_only(item, answer_slot, inputs.ssd_index, rng)?);
        }
        SsdPlacement::Dispersed { kernel } => {
            let dist = placement_weights(n, answer_slot, kernel)?;
            sample_ssd_slot(&dist, rng)?
        }
        SsdPlacement::Adjacent => {
            let neighbors: Vec<usize> = [answer_slot.checked_sub(1), Some(answer_slot + 1)]
                .into_iter()
                .flatten()
                .filter(|&j| j < n)
                .collect();
            neighbors[rng.gen_range(0..neighbors.len())]
        }
        SsdPlacement::Far => (0..n)
            .filter(|&j| j != answer_slot)
            .fold(None, |best: Option<usize>, j| match best {
                Some(b) if b.abs_diff(answer_slot) >= j.abs_diff(answer_slot) => Some(b),
                _ => Some(j),
            })
            .expect("n >= 2"),
    };
    let ssd_index = inputs.ssd_index.ok_or_else(|| ProtocolError::MissingEmbeddings {
        condition: condition.name,
        reason: format!("no SSD known for item '{}'", item.item_id),
    })?;
    Ok(build_permutation(item, answer_slot, ssd_slot, ssd_index, rng)?)
}
