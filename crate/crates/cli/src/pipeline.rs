use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ldst_corpus::{load_dialogues, load_schema, Dialogue, Schema, SlotValue, Warning};
use ldst_dst_metrics::{evaluate, AgaMode, EvalReport, MatchPolicy, PredictionSet};
use ldst_lora_engine::{
    predict_value, pretrain, train, ByteTokenizer, ToyDecoder, ToyDecoderConfig, TrainConfig,
    TrainOutcome,
};
use ldst_prompt_forge::{
    fixed_sample, generate_instruction_dataset, truncate_to_budget, AssemblyPolicy,
    ByteTokenCounter, InstructionSample, KeyedCoins, TemplateSet,
};

use crate::CliError;

pub fn read_schema(path: &Path) -> Result<Schema, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    Ok(load_schema(&text)?)
}

pub fn read_dialogues(
    path: &Path,
    schema: &Schema,
    strict: bool,
) -> Result<(Vec<Dialogue>, Vec<Warning>), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    let load = load_dialogues(&text, schema, strict)?;
    Ok((load.dialogues, load.warnings))
}

/// Which instruction dataset feeds a training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetStyle {
    Assembled,
    Fixed,
}

/// Everything the toy training pipeline needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainPipelineConfig {
    pub style: DatasetStyle,
    pub decoder: ToyDecoderConfig,
    pub policy: AssemblyPolicy,
    pub pretrain_epochs: usize,
    pub lora_epochs: usize,
    pub pretrain_lr: f64,
    pub lora_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Per turn, keep every set-value sample plus at most this many
    /// NONE-answer samples (keyed selection, order independent).
    pub max_none_per_turn: usize,
    /// Token budget applied to sample prompts before training/decoding.
    pub truncate_budget: usize,
    pub max_new_tokens: usize,
}

impl Default for TrainPipelineConfig {
    fn default() -> Self {
        // The pipeline runs the decoder with a 512-byte window so the
        // full-information test prompt (all sections present) always fits
        // alongside a useful amount of dialogue context.
        let decoder = ToyDecoderConfig {
            context_len: 512,
            ..ToyDecoderConfig::default()
        };
        TrainPipelineConfig {
            style: DatasetStyle::Assembled,
            truncate_budget: decoder.context_len - 32,
            decoder,
            policy: AssemblyPolicy::default(),
            pretrain_epochs: 3,
            lora_epochs: 1,
            pretrain_lr: 3e-3,
            lora_lr: 3e-4,
            batch_size: 16,
            seed: 0,
            max_none_per_turn: 2,
            max_new_tokens: 24,
        }
    }
}

/// Generate the training samples for one stage: full turn × slot expansion,
/// then keyed NONE-subsampling, then truncation to the token budget.
pub fn build_training_dataset(
    corpus: &[Dialogue],
    schema: &Schema,
    templates: &TemplateSet,
    cfg: &TrainPipelineConfig,
    stage_seed: u64,
) -> Result<Vec<InstructionSample>, CliError> {
    let policy = AssemblyPolicy {
        seed: stage_seed,
        ..cfg.policy
    };
    let policy_arg = match cfg.style {
        DatasetStyle::Assembled => Some(&policy),
        DatasetStyle::Fixed => None,
    };
    let coins = KeyedCoins::new(stage_seed);
    let counter = ByteTokenCounter;
    let mut kept = Vec::new();
    let mut per_turn: BTreeMap<(String, usize), Vec<InstructionSample>> = BTreeMap::new();
    for sample in generate_instruction_dataset(corpus, schema, templates, policy_arg) {
        let sample = sample?;
        if sample.output == "NONE" {
            per_turn
                .entry((sample.meta.dialogue_id.clone(), sample.meta.turn_index))
                .or_default()
                .push(sample);
        } else {
            kept.push(sample);
        }
    }
    for ((dialogue_id, turn_index), mut nones) in per_turn {
        nones.sort_by_key(|s| coins.rank(&dialogue_id, turn_index, &s.meta.slot_id, "subsample"));
        nones.truncate(cfg.max_none_per_turn);
        kept.extend(nones);
    }
    // Stable order: (dialogue, turn, slot position in schema).
    let slot_order: BTreeMap<String, usize> = schema
        .slot_ids()
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    kept.sort_by(|a, b| {
        (&a.meta.dialogue_id, a.meta.turn_index, slot_order[&a.meta.slot_id]).cmp(&(
            &b.meta.dialogue_id,
            b.meta.turn_index,
            slot_order[&b.meta.slot_id],
        ))
    });
    kept.iter()
        .map(|s| Ok(truncate_to_budget(s, cfg.truncate_budget, &counter)?))
        .collect()
}

/// Outcome of the two-stage toy pipeline.
pub struct TrainedPipeline {
    pub model: ToyDecoder,
    pub pretrain_outcome: TrainOutcome,
    pub lora_outcome: TrainOutcome,
    pub n_pretrain_samples: usize,
    pub n_lora_samples: usize,
}

/// Stage 1: full-parameter pretraining of the base decoder on instruction
/// samples from the training split.
pub fn pretrain_stage(
    schema: &Schema,
    train_dialogues: &[Dialogue],
    templates: &TemplateSet,
    cfg: &TrainPipelineConfig,
) -> Result<(ToyDecoder, TrainOutcome, usize), CliError> {
    let dataset = build_training_dataset(train_dialogues, schema, templates, cfg, cfg.seed)?;
    let mut model = ToyDecoder::new(cfg.decoder.clone(), cfg.seed)?;
    let train_cfg = TrainConfig {
        learning_rate: cfg.pretrain_lr,
        batch_size: cfg.batch_size,
        epochs: cfg.pretrain_epochs,
        seed: cfg.seed,
        loss_on_output_only: true,
    };
    let outcome = pretrain(&mut model, &dataset, &train_cfg)?;
    Ok((model, outcome, dataset.len()))
}

/// Stage 2: adapter-only fine-tuning on a freshly drawn dataset
/// (seed+1 re-rolls the assembly coins, giving new prompt variety).
pub fn lora_stage(
    model: &mut ToyDecoder,
    schema: &Schema,
    train_dialogues: &[Dialogue],
    templates: &TemplateSet,
    cfg: &TrainPipelineConfig,
) -> Result<(TrainOutcome, usize), CliError> {
    let dataset =
        build_training_dataset(train_dialogues, schema, templates, cfg, cfg.seed.wrapping_add(1))?;
    let train_cfg = TrainConfig {
        learning_rate: cfg.lora_lr,
        batch_size: cfg.batch_size,
        epochs: cfg.lora_epochs,
        seed: cfg.seed.wrapping_add(1),
        loss_on_output_only: true,
    };
    let outcome = train(model, &dataset, &train_cfg)?;
    Ok((outcome, dataset.len()))
}

/// The full two-stage pipeline.
pub fn train_toy_pipeline(
    schema: &Schema,
    train_dialogues: &[Dialogue],
    templates: &TemplateSet,
    cfg: &TrainPipelineConfig,
) -> Result<TrainedPipeline, CliError> {
    let (mut model, pretrain_outcome, n_pretrain) =
        pretrain_stage(schema, train_dialogues, templates, cfg)?;
    let (lora_outcome, n_lora) = lora_stage(&mut model, schema, train_dialogues, templates, cfg)?;
    Ok(TrainedPipeline {
        model,
        pretrain_outcome,
        lora_outcome,
        n_pretrain_samples: n_pretrain,
        n_lora_samples: n_lora,
    })
}

/// Predict every (dialogue, turn, slot) with the test-time template: the
/// fixed full-information prompt (description and PVL always present).
pub fn predict_pipeline(
    model: &ToyDecoder,
    schema: &Schema,
    dialogues: &[Dialogue],
    templates: &TemplateSet,
    cfg: &TrainPipelineConfig,
    provenance: &str,
) -> Result<PredictionSet, CliError> {
    let tokenizer = ByteTokenizer;
    let counter = ByteTokenCounter;
    let mut preds = PredictionSet::new(provenance);
    for dialogue in dialogues {
        for turn_index in 1..=dialogue.n_turns() {
            for slot in schema.slots() {
                let sample = fixed_sample(dialogue, turn_index, slot, templates)?;
                let sample = truncate_to_budget(&sample, cfg.truncate_budget, &counter)?;
                let text = predict_value(model, &tokenizer, &sample, cfg.max_new_tokens)?;
                preds.insert(
                    &dialogue.id,
                    turn_index,
                    &slot.slot_id(),
                    SlotValue::from_raw(&text),
                );
            }
        }
    }
    Ok(preds)
}

/// The all-NONE reference: an empty prediction set scored like any other.
pub fn all_none_baseline(
    schema: &Schema,
    dialogues: &[Dialogue],
) -> Result<EvalReport, CliError> {
    let empty = PredictionSet::new("all-none-baseline");
    Ok(evaluate(&empty, dialogues, schema, MatchPolicy::Exact, AgaMode::Micro)?)
}

/// Evaluate one prediction set against gold.
pub fn eval_predictions(
    preds: &PredictionSet,
    schema: &Schema,
    dialogues: &[Dialogue],
    policy: MatchPolicy,
) -> Result<EvalReport, CliError> {
    Ok(evaluate(preds, dialogues, schema, policy, AgaMode::Micro)?)
}

/// Run the six test-prompt variants and score each: the sensitivity sweep.
pub fn sweep_pipeline(
    model: &ToyDecoder,
    schema: &Schema,
    dialogues: &[Dialogue],
    cfg: &TrainPipelineConfig,
) -> Result<Vec<(String, EvalReport)>, CliError> {
    let mut reports = Vec::new();
    for (name, templates) in TemplateSet::test_variants() {
        let preds = predict_pipeline(model, schema, dialogues, &templates, cfg, &name)?;
        let report = eval_predictions(&preds, schema, dialogues, MatchPolicy::Exact)?;
        reports.push((name, report));
    }
    Ok(reports)
}
