use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::placement::{plan_placement, PlacementInputs};
use super::prompt::render_prompt;
use super::runlog::{encode_line, BiasSnapshot, LogLine, RunHeader, RunLog, RunManifest, TrialRecord};
use super::{Condition, ProtocolError};
use crate::bias_probe::{closed_form_lucky_rate, invert, BiasDistribution, InverseBias};
use crate::clock::Clock;
use crate::dataset::{ItemSet, McqItem};
use crate::gateway::{parse_choice, Decoding, GatewayError, ModelGateway, QueryRequest, SlotTruth, TrialKey};
use crate::rng::{self, label, KeyPart};
use crate::semantic_spread::{build_uniform, identify_ssd, EmbeddingSource, PermutedItem};

/// Everything a run needs besides the items and the condition.
pub struct RunContext<'a> {
    pub gateway: &'a dyn ModelGateway,
    pub bias: Option<&'a BiasDistribution>,
    pub embeddings: Option<&'a dyn EmbeddingSource>,
    pub seed: u64,
    pub clock: Clock,
    /// Items processed in parallel.
    pub concurrency: usize,
    /// Recorded in the log header.
    pub decoding: Option<Decoding>,
}

impl<'a> RunContext<'a> {
    pub fn new(gateway: &'a dyn ModelGateway, seed: u64) -> Self {
        Self {
            gateway,
            bias: None,
            embeddings: None,
            seed,
            clock: Clock::System,
            concurrency: 8,
            decoding: None,
        }
    }
}

/// Stable identifier of `(model, items, condition, seed)`.
pub fn run_id(model_id: &str, items: &ItemSet, condition: &Condition, seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(model_id.as_bytes());
    h.update([0]);
    h.update(items.source_name.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(condition).expect("condition serializes"));
    h.update(seed.to_le_bytes());
    for it in &items.items {
        h.update(it.item_id.as_bytes());
        h.update([0]);
    }
    hex::encode(&h.finalize()[..8])
}

/// Most frequent original index among parsed votes; ties go to the lowest
/// index and abstentions are ignored.
pub fn majority_vote(choices: &[Option<usize>], n: usize) -> Option<usize> {
    let mut counts = vec![0usize; n];
    for c in choices.iter().flatten() {
        counts[*c] += 1;
    }
    let best = counts.iter().copied().max().filter(|&m| m > 0)?;
    counts.iter().position(|&c| c == best)
}

struct Shared<'a> {
    condition: &'a Condition,
    ctx: &'a RunContext<'a>,
    bias: Option<&'a BiasDistribution>,
    inverse: Option<InverseBias>,
    run_id: String,
}

impl Shared<'_> {
    fn ssd_index(&self, item: &McqItem) -> Result<Option<usize>, ProtocolError> {
        match self.ctx.embeddings {
            Some(src) => Ok(Some(identify_ssd(&src.embed(item)?, item.answer_index)?)),
            None if self.condition.needs_embeddings() => Err(ProtocolError::MissingEmbeddings {
                condition: self.condition.name,
                reason: "no embedding source configured".into(),
            }),
            None => Ok(None),
        }
    }

    fn ask(
        &self,
        item: &McqItem,
        layout: &PermutedItem<'_>,
        trial_index: u32,
        vote: Option<u32>,
    ) -> Result<TrialRecord, ProtocolError> {
        let options = layout.presented_options();
        let request = QueryRequest {
            prompt: render_prompt(layout, self.condition.label_mode),
            options,
            key: TrialKey::Item {
                item_id: item.item_id.clone(),
                trial_index,
                vote,
                attempt: 0,
            },
            truth: Some(SlotTruth {
                answer_slot: layout.answer_slot,
                ssd_slot: layout.ssd_slot,
            }),
        };
        let raw = self
            .ctx
            .gateway
            .query(&request)
            .map_err(|source| gateway_err(item, source))?;
        let parsed = parse_choice(&raw, &request.options, layout.n());
        Ok(TrialRecord {
            run_id: self.run_id.clone(),
            item_id: item.item_id.clone(),
            trial_index,
            vote,
            order: layout.order.clone(),
            answer_slot: layout.answer_slot,
            ssd_slot: layout.ssd_slot,
            raw_text: raw,
            parsed_slot: parsed.slot,
            parse_rule: Some(parsed.parse_rule),
            chosen_index: parsed.slot.map(|s| layout.order[s]),
            correct: parsed.slot == Some(layout.answer_slot),
            timestamp: self.ctx.clock.now(),
        })
    }

    fn run_item(&self, item: &McqItem) -> Result<Vec<TrialRecord>, ProtocolError> {
        let ssd_index = self.ssd_index(item)?;
        if self.condition.is_majority_vote() {
            return self.run_item_mv(item, ssd_index);
        }
        let inputs = PlacementInputs {
            bias: self.bias,
            inverse: self.inverse.as_ref(),
            ssd_index,
        };
        let seed = self.ctx.seed;
        let mut out = Vec::with_capacity(self.condition.repetitions as usize);
        let mut layout: Option<PermutedItem<'_>> = None;
        for t in 0..self.condition.repetitions {
            if layout.is_none() || self.condition.redraw_per_trial {
                let mut r = if self.condition.redraw_per_trial {
                    rng::stream(seed, label::PLACEMENT, &[(&item.item_id).into(), t.into()])
                } else {
                    rng::stream(seed, label::PLACEMENT, &[(&item.item_id).into()])
                };
                layout = Some(plan_placement(self.condition, item, &inputs, &mut r)?);
            }
            out.push(self.ask(item, layout.as_ref().expect("set above"), t, None)?);
        }
        Ok(out)
    }

    fn run_item_mv(&self, item: &McqItem, ssd_index: Option<usize>) -> Result<Vec<TrialRecord>, ProtocolError> {
        let n = item.option_count();
        let seed = self.ctx.seed;
        let mut out = Vec::new();
        for t in 0..self.condition.repetitions {
            let mut choices = Vec::with_capacity(self.condition.mv_permutations as usize);
            for v in 0..self.condition.mv_permutations {
                let parts: [KeyPart<'_>; 3] = [(&item.item_id).into(), t.into(), v.into()];
                let mut r = rng::stream(seed, label::SHUFFLE, &parts);
                let layout = build_uniform(item, ssd_index, &mut r)?;
                let rec = self.ask(item, &layout, t, Some(v))?;
                choices.push(rec.chosen_index);
                out.push(rec);
            }
            let winner = majority_vote(&choices, n);
            let identity = PermutedItem::from_order(item, (0..n).collect(), ssd_index)?;
            out.push(TrialRecord {
                run_id: self.run_id.clone(),
                item_id: item.item_id.clone(),
                trial_index: t,
                vote: None,
                order: identity.order,
                answer_slot: identity.answer_slot,
                ssd_slot: identity.ssd_slot,
                raw_text: winner.map(|w| item.options[w].clone()).unwrap_or_default(),
                parsed_slot: winner,
                parse_rule: None,
                chosen_index: winner,
                correct: winner == Some(item.answer_index),
                timestamp: self.ctx.clock.now(),
            });
        }
        Ok(out)
    }
}

fn gateway_err(item: &McqItem, source: GatewayError) -> ProtocolError {
    ProtocolError::Gateway {
        item_id: item.item_id.clone(),
        completed_items: 0,
        source,
    }
}

fn log_err(path: &Path, e: impl std::fmt::Display) -> ProtocolError {
    ProtocolError::Log {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Run every item of `items` under `condition`.
///
/// Each item gets one layout reused for all repetitions (unless the condition
/// redraws per trial). With `log_path`, records are appended item by item; an
/// interrupted run resumes after its last complete item and a finished run is
/// returned unchanged.
pub fn run_condition(
    items: &ItemSet,
    condition: &Condition,
    ctx: &RunContext<'_>,
    log_path: Option<&Path>,
) -> Result<RunLog, ProtocolError> {
    condition.validate()?;
    let n = items.option_count;
    let bias = match ctx.bias {
        Some(b) if b.n() != n => {
            return Err(ProtocolError::BiasArity {
                expected: n,
                found: b.n(),
            })
        }
        Some(b) => Some(b),
        None if condition.needs_bias() => return Err(ProtocolError::MissingBiasProfile(condition.name)),
        None => None,
    };
    if condition.needs_embeddings() && ctx.embeddings.is_none() {
        return Err(ProtocolError::MissingEmbeddings {
            condition: condition.name,
            reason: "no embedding source configured".into(),
        });
    }
    let inverse = bias
        .map(|b| invert(b).map_err(|e| ProtocolError::Invalid(e.to_string())))
        .transpose()?;

    let model_id = ctx.gateway.model_id().to_string();
    let id = run_id(&model_id, items, condition, ctx.seed);
    let header = RunHeader {
        run_id: id.clone(),
        condition: condition.clone(),
        model_id,
        dataset: items.source_name.clone(),
        seed: ctx.seed,
        option_count: n,
        item_count: items.len(),
        bias: match (bias, &inverse) {
            (Some(b), Some(q)) => Some(BiasSnapshot {
                probs: b.probs.clone(),
                inverse: q.probs.clone(),
                inverse_lucky_rate: closed_form_lucky_rate(&b.probs)
                    .map_err(|e| ProtocolError::Invalid(e.to_string()))?,
            }),
            _ => None,
        },
        encoder_id: ctx.embeddings.map(|e| e.encoder_id().to_string()),
        decoding: ctx.decoding.clone(),
        created_at: ctx.clock.now(),
    };
    let per_item = header.records_per_item();

    let mut log = RunLog {
        header,
        records: Vec::with_capacity(items.len() * per_item),
        manifest: None,
    };
    let mut file: Option<File> = None;
    if let Some(path) = log_path {
        if path.exists() {
            let existing = RunLog::read(path)?;
            if existing.header.run_id != id {
                return Err(log_err(
                    path,
                    format!("belongs to run {}, not {id}", existing.header.run_id),
                ));
            }
            if existing.is_complete() {
                return Ok(existing);
            }
            // keep whole items only
            let done = existing.records.len() / per_item;
            log.header = existing.header;
            log.records = existing.records;
            log.records.truncate(done * per_item);
            for (k, chunk) in log.records.chunks(per_item).enumerate() {
                if chunk.iter().any(|r| r.item_id != items.items[k].item_id) {
                    return Err(log_err(path, "records do not follow the item order"));
                }
            }
            log.write(path)?;
        } else {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| log_err(path, e))?;
            }
            RunLog {
                header: log.header.clone(),
                records: Vec::new(),
                manifest: None,
            }
            .write(path)?;
        }
        file = Some(
            OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| log_err(path, e))?,
        );
    }

    let shared = Shared {
        condition,
        ctx,
        bias,
        inverse,
        run_id: id.clone(),
    };
    let start = log.records.len() / per_item;
    let width = ctx.concurrency.max(1);
    for (b, batch) in items.items[start..].chunks(width).enumerate() {
        let results: Vec<Result<Vec<TrialRecord>, ProtocolError>> = if batch.len() == 1 {
            vec![shared.run_item(&batch[0])]
        } else {
            std::thread::scope(|s| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|item| {
                        let shared = &shared;
                        s.spawn(move || shared.run_item(item))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("run worker panicked"))
                    .collect()
            })
        };
        for (k, result) in results.into_iter().enumerate() {
            let completed = start + b * width + k;
            let records = result.map_err(|e| match e {
                ProtocolError::Gateway { item_id, source, .. } => ProtocolError::Gateway {
                    item_id,
                    completed_items: completed,
                    source,
                },
                other => other,
            })?;
            if let (Some(f), Some(path)) = (file.as_mut(), log_path) {
                let chunk: String = records
                    .iter()
                    .map(|r| encode_line(&LogLine::Trial(r.clone())))
                    .collect();
                f.write_all(chunk.as_bytes()).map_err(|e| log_err(path, e))?;
            }
            log.records.extend(records);
        }
        if let (Some(f), Some(path)) = (file.as_mut(), log_path) {
            f.flush().map_err(|e| log_err(path, e))?;
        }
    }

    let manifest = RunManifest {
        run_id: id,
        items: items.len(),
        records: log.records.len(),
        abstained: log.abstained(),
        completed_at: ctx.clock.now(),
    };
    if let (Some(f), Some(path)) = (file.as_mut(), log_path) {
        f.write_all(encode_line(&LogLine::Manifest(manifest.clone())).as_bytes())
            .map_err(|e| log_err(path, e))?;
        f.sync_all().map_err(|e| log_err(path, e))?;
    }
    log.manifest = Some(manifest);
    Ok(log)
}
