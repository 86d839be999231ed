use ndarray::{Array1, Array2, NdFloat};
use num_traits::FromPrimitive;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use ldst_prompt_forge::InstructionSample;

use crate::model::{Mode, ParamRef, ToyDecoder};
use crate::model::DecodeState;
use crate::tokenizer::{ByteTokenizer, BOS_TOKEN, EOS_TOKEN, PAD_TOKEN};
use crate::LoraError;

/// Optimization settings. Defaults are the toy-scale variants: Adam at
/// 1e-4 with batches of 16 and the loss restricted to output tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub loss_on_output_only: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 16,
            epochs: 1,
            seed: 0,
            loss_on_output_only: true,
        }
    }
}

/// Which parameters the optimizer may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainScope {
    /// Every parameter (pretraining).
    Full,
    /// Adapter factors only; the base stays bit-identical.
    AdaptersOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOutcome {
    /// (step, batch loss) per optimizer step.
    pub loss_trace: Vec<(usize, f64)>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Mean negative log-likelihood of `targets` under `logits`, restricted to
/// positions where `mask` is true. Generic so the f64 route can serve as a
/// verification oracle for the f32 training path.
pub fn nll_loss<F: NdFloat + FromPrimitive>(
    logits: &Array2<F>,
    targets: &[usize],
    mask: &[bool],
) -> Result<F, LoraError> {
    if logits.nrows() != targets.len() || targets.len() != mask.len() {
        return Err(LoraError::DimensionMismatch(format!(
            "logits rows {}, targets {}, mask {}",
            logits.nrows(),
            targets.len(),
            mask.len()
        )));
    }
    let mut total = F::zero();
    let mut count = 0usize;
    for ((row, target), active) in logits.rows().into_iter().zip(targets).zip(mask) {
        if !active {
            continue;
        }
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let log_sum = row
            .iter()
            .map(|v| (*v - max).exp())
            .fold(F::zero(), |acc, v| acc + v)
            .ln()
            + max;
        total = total + (log_sum - row[*target]);
        count += 1;
    }
    if count == 0 {
        return Err(LoraError::EmptyMask);
    }
    Ok(total / F::from_usize(count).expect("count fits"))
}

struct EncodedSample {
    /// BOS ∥ prompt bytes ∥ output bytes ∥ EOS.
    tokens: Vec<u32>,
    /// First input position whose target is an output byte.
    loss_from: usize,
}

fn encode_sample(
    sample: &InstructionSample,
    context_len: usize,
) -> Result<EncodedSample, LoraError> {
    let tokenizer = ByteTokenizer;
    let mut prompt = tokenizer.encode(&sample.prompt());
    let output = tokenizer.encode(&sample.output);
    // Input length is tokens.len() - 1; it must fit the context window.
    // Samples should arrive pre-truncated; as a last resort drop the oldest
    // prompt bytes.
    let budget = context_len + 1;
    let fixed = 2 + output.len(); // BOS + EOS + output
    if fixed >= budget {
        return Err(LoraError::PromptTooLong {
            got: fixed,
            context_len,
        });
    }
    let keep = (budget - fixed).min(prompt.len());
    if keep < prompt.len() {
        prompt.drain(..prompt.len() - keep);
    }
    let mut tokens = Vec::with_capacity(1 + prompt.len() + output.len() + 1);
    tokens.push(BOS_TOKEN);
    tokens.extend(prompt);
    let loss_from = tokens.len() - 1;
    tokens.extend(output);
    tokens.push(EOS_TOKEN);
    Ok(EncodedSample { tokens, loss_from })
}

/// Train only the adapter factors; the base model is frozen.
pub fn train(
    model: &mut ToyDecoder,
    dataset: &[InstructionSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, LoraError> {
    run(model, dataset, cfg, TrainScope::AdaptersOnly)
}

/// Full-parameter training, used to pretrain the base decoder.
pub fn pretrain(
    model: &mut ToyDecoder,
    dataset: &[InstructionSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, LoraError> {
    run(model, dataset, cfg, TrainScope::Full)
}

fn run(
    model: &mut ToyDecoder,
    dataset: &[InstructionSample],
    cfg: &TrainConfig,
    scope: TrainScope,
) -> Result<TrainOutcome, LoraError> {
    crate::model::tune_allocator();
    if dataset.is_empty() {
        return Err(LoraError::EmptyDataset);
    }
    let context_len = model.config.context_len;
    let encoded: Vec<EncodedSample> = dataset
        .iter()
        .map(|s| encode_sample(s, context_len))
        .collect::<Result<_, _>>()?;

    // Batch by length to limit padding, then shuffle batch order per epoch.
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.sort_by_key(|i| encoded[*i].tokens.len());
    let batches: Vec<Vec<usize>> = order
        .chunks(cfg.batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train_base = scope == TrainScope::Full;
    let mut loss_trace = Vec::new();
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut epoch_batches = batches.clone();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9));
        epoch_batches.shuffle(&mut shuffle_rng);
        for batch in &epoch_batches {
            step += 1;
            let loss = train_step(model, &encoded, batch, cfg, train_base, &mut rng)?;
            loss_trace.push((step, loss));
            optimizer_step(model, cfg.learning_rate as f32, step, train_base);
        }
    }
    Ok(TrainOutcome {
        initial_loss: loss_trace.first().map(|(_, l)| *l).unwrap_or(0.0),
        final_loss: loss_trace.last().map(|(_, l)| *l).unwrap_or(0.0),
        loss_trace,
    })
}

fn train_step(
    model: &mut ToyDecoder,
    encoded: &[EncodedSample],
    batch: &[usize],
    cfg: &TrainConfig,
    train_base: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64, LoraError> {
    let b = batch.len();
    let seq = batch
        .iter()
        .map(|i| encoded[*i].tokens.len() - 1)
        .max()
        .expect("non-empty batch");
    let mut tokens = Array2::from_elem((b, seq), PAD_TOKEN);
    let mut targets = vec![0usize; b * seq];
    let mut mask = vec![false; b * seq];
    let mut lengths = Vec::with_capacity(b);
    for (row, index) in batch.iter().enumerate() {
        let sample = &encoded[*index];
        let len = sample.tokens.len() - 1;
        lengths.push(len);
        for t in 0..len {
            tokens[(row, t)] = sample.tokens[t];
            targets[row * seq + t] = sample.tokens[t + 1] as usize;
            mask[row * seq + t] = if cfg.loss_on_output_only {
                t >= sample.loss_from
            } else {
                true
            };
        }
    }

    let mut mode = Mode {
        rng: Some(rng),
        store_base_inputs: train_base,
    };
    let (logits, tape) = model.forward(&tokens, &lengths, &mut mode);

    // Fused masked cross-entropy: loss and dLogits in one pass.
    let n_masked = mask.iter().filter(|m| **m).count();
    if n_masked == 0 {
        return Err(LoraError::EmptyMask);
    }
    let mut dlogits = Array2::zeros(logits.raw_dim());
    let mut loss_sum = 0.0f64;
    let inv = 1.0 / n_masked as f32;
    for (pos, active) in mask.iter().enumerate() {
        if !active {
            continue;
        }
        let row = logits.row(pos);
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter() {
            sum += (v - max).exp();
        }
        let log_sum = sum.ln() + max;
        let target = targets[pos];
        loss_sum += f64::from(log_sum - row[target]);
        let mut drow = dlogits.row_mut(pos);
        for (dv, v) in drow.iter_mut().zip(row.iter()) {
            *dv = (v - max).exp() / sum * inv;
        }
        drow[target] -= inv;
    }
    model.backward(&tape, &dlogits, train_base);
    Ok(loss_sum / n_masked as f64)
}

fn optimizer_step(model: &mut ToyDecoder, lr: f32, step: usize, train_base: bool) {
    model.visit_params(|param, is_adapter| {
        let update = train_base || is_adapter;
        match param {
            ParamRef::One(p) => {
                if update {
                    p.adam_step(lr, step);
                }
                p.zero_grad();
            }
            ParamRef::Two(p) => {
                if update {
                    p.adam_step(lr, step);
                }
                p.zero_grad();
            }
        }
    });
}

/// Forward-only masked mean NLL over a dataset (no dropout, no updates).
pub fn eval_loss(
    model: &ToyDecoder,
    dataset: &[InstructionSample],
    cfg: &TrainConfig,
) -> Result<f64, LoraError> {
    if dataset.is_empty() {
        return Err(LoraError::EmptyDataset);
    }
    let encoded: Vec<EncodedSample> = dataset
        .iter()
        .map(|s| encode_sample(s, model.config.context_len))
        .collect::<Result<_, _>>()?;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for chunk in (0..encoded.len()).collect::<Vec<_>>().chunks(cfg.batch_size.max(1)) {
        let (loss, n) = batch_loss(model, &encoded, chunk, cfg)?;
        total += loss * n as f64;
        count += n;
    }
    Ok(total / count.max(1) as f64)
}

/// Forward-only loss for one batch; returns (mean loss, masked positions).
fn batch_loss(
    model: &ToyDecoder,
    encoded: &[EncodedSample],
    batch: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, usize), LoraError> {
    let b = batch.len();
    let seq = batch
        .iter()
        .map(|i| encoded[*i].tokens.len() - 1)
        .max()
        .expect("non-empty batch");
    let mut tokens = Array2::from_elem((b, seq), PAD_TOKEN);
    let mut targets = vec![0usize; b * seq];
    let mut mask = vec![false; b * seq];
    let mut lengths = Vec::with_capacity(b);
    for (row, index) in batch.iter().enumerate() {
        let sample = &encoded[*index];
        let len = sample.tokens.len() - 1;
        lengths.push(len);
        for t in 0..len {
            tokens[(row, t)] = sample.tokens[t];
            targets[row * seq + t] = sample.tokens[t + 1] as usize;
            mask[row * seq + t] = if cfg.loss_on_output_only {
                t >= sample.loss_from
            } else {
                true
            };
        }
    }
    let (logits, _) = model.forward(&tokens, &lengths, &mut Mode::eval());
    let loss = nll_loss(&logits.mapv(f64::from), &targets, &mask)?;
    let n = mask.iter().filter(|m| **m).count();
    Ok((loss, n))
}

/// Greedy decoding: feed the sample's prompt, then argmax until the end
/// token, the length cap, or the context limit. Returns the decoded text.
pub fn predict_value(
    model: &ToyDecoder,
    tokenizer: &ByteTokenizer,
    sample: &InstructionSample,
    max_new_tokens: usize,
) -> Result<String, LoraError> {
    crate::model::tune_allocator();
    let prompt_tokens = {
        let mut tokens = vec![BOS_TOKEN];
        tokens.extend(tokenizer.encode(&sample.prompt()));
        tokens
    };
    if prompt_tokens.len() >= model.config.context_len {
        return Err(LoraError::PromptTooLong {
            got: prompt_tokens.len(),
            context_len: model.config.context_len,
        });
    }
    let mut state = DecodeState::new(model);
    let mut logits = Array1::zeros(model.config.vocab_size);
    for &token in &prompt_tokens {
        logits = state.step(model, token)?;
    }
    let mut generated = Vec::new();
    for _ in 0..max_new_tokens {
        let next = argmax(&logits);
        if next == EOS_TOKEN {
            break;
        }
        generated.push(next);
        if prompt_tokens.len() + generated.len() >= model.config.context_len {
            break;
        }
        logits = state.step(model, next)?;
    }
    Ok(tokenizer.decode(&generated))
}

fn argmax(logits: &Array1<f32>) -> u32 {
    let mut best = 0usize;
    let mut best_value = f32::NEG_INFINITY;
    for (i, v) in logits.iter().enumerate() {
        if *v > best_value {
            best_value = *v;
            best = i;
        }
    }
    best as u32
}
