//! Training-loop behavior: memorization, frozen base, determinism, decoding.

use ldst_lora_engine::{
    base_hash, predict_value, pretrain, train, ByteTokenizer, LoraSettings, ToyDecoder,
    ToyDecoderConfig, TrainConfig,
};
use ldst_prompt_forge::{InstructionSample, InstructionTemplate, SampleMeta};

fn sample(slot_id: &str, context: &str, output: &str) -> InstructionSample {
    InstructionSample {
        instruction: format!("Track the state of the slot <{slot_id}> in the input dialogue."),
        input: format!("{context} So the value of slot <{slot_id}> is"),
        output: output.into(),
        meta: SampleMeta {
            dialogue_id: "d".into(),
            turn_index: 1,
            slot_id: slot_id.into(),
            included_description: false,
            included_pvl: false,
            instruction_template: InstructionTemplate::Customized,
        },
        parts: None,
    }
}

fn no_dropout_config() -> ToyDecoderConfig {
    ToyDecoderConfig {
        lora: LoraSettings {
            rank: 8,
            alpha: 16.0,
            dropout_p: 0.0,
        },
        ..ToyDecoderConfig::default()
    }
}

#[test]
fn single_sample_memorization_within_200_steps() {
    let mut model = ToyDecoder::new(no_dropout_config(), 0).unwrap();
    let data = vec![sample(
        "restaurant-area",
        "[USER] i need a place to dine in the centre",
        "centre",
    )];
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 1,
        epochs: 200,
        seed: 0,
        loss_on_output_only: true,
    };
    let outcome = pretrain(&mut model, &data, &cfg).unwrap();
    assert!(
        outcome.final_loss < 0.05 * outcome.initial_loss,
        "no memorization: {} -> {}",
        outcome.initial_loss,
        outcome.final_loss
    );

    // The memorized model reproduces the sample's output verbatim.
    let predicted = predict_value(&model, &ByteTokenizer, &data[0], 24).unwrap();
    assert_eq!(predicted, "centre");
}

#[test]
fn adapter_training_reduces_loss_and_never_touches_the_base() {
    let mut model = ToyDecoder::new(no_dropout_config(), 1).unwrap();
    let data = vec![
        sample("hotel-area", "[USER] hotel in the north please", "north"),
        sample("hotel-area", "[USER] hotel in the south please", "south"),
        sample("hotel-pricerange", "[USER] something cheap", "cheap"),
    ];
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 3,
        epochs: 150,
        seed: 0,
        loss_on_output_only: true,
    };
    let hash_before = base_hash(&model);
    let outcome = train(&mut model, &data, &cfg).unwrap();
    let hash_after = base_hash(&model);
    assert_eq!(hash_before, hash_after, "W0 must be bit-identical");
    assert!(
        outcome.final_loss < 0.9 * outcome.initial_loss,
        "adapters did not learn: {} -> {}",
        outcome.initial_loss,
        outcome.final_loss
    );
}

#[test]
fn zero_learning_rate_keeps_the_trace_constant() {
    let mut model = ToyDecoder::new(no_dropout_config(), 2).unwrap();
    let data = vec![sample("hotel-area", "[USER] north side", "north")];
    let cfg = TrainConfig {
        learning_rate: 0.0,
        batch_size: 1,
        epochs: 20,
        seed: 0,
        loss_on_output_only: true,
    };
    let outcome = train(&mut model, &data, &cfg).unwrap();
    let first = outcome.loss_trace[0].1;
    for (_, loss) in &outcome.loss_trace {
        assert_eq!(*loss, first);
    }
}

#[test]
fn training_is_deterministic_given_seed() {
    let data = vec![
        sample("hotel-area", "[USER] north side", "north"),
        sample("hotel-area", "[USER] west end", "west"),
    ];
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 2,
        epochs: 10,
        seed: 7,
        loss_on_output_only: true,
    };
    let run = || {
        let mut model = ToyDecoder::new(ToyDecoderConfig::default(), 5).unwrap();
        train(&mut model, &data, &cfg).unwrap().loss_trace
    };
    assert_eq!(run(), run());
}

#[test]
fn empty_dataset_is_rejected() {
    let mut model = ToyDecoder::new(no_dropout_config(), 0).unwrap();
    let cfg = TrainConfig::default();
    assert!(train(&mut model, &[], &cfg).is_err());
}

#[test]
fn greedy_decode_is_deterministic_and_respects_caps() {
    let model = ToyDecoder::new(no_dropout_config(), 3).unwrap();
    let s = sample("hotel-area", "[USER] hello", "north");
    let a = predict_value(&model, &ByteTokenizer, &s, 16).unwrap();
    let b = predict_value(&model, &ByteTokenizer, &s, 16).unwrap();
    assert_eq!(a, b);
    let empty = predict_value(&model, &ByteTokenizer, &s, 0).unwrap();
    assert_eq!(empty, "");
}

#[test]
fn oversized_prompt_is_rejected() {
    let model = ToyDecoder::new(no_dropout_config(), 3).unwrap();
    let s = sample("hotel-area", &"x".repeat(400), "north");
    assert!(predict_value(&model, &ByteTokenizer, &s, 8).is_err());
}
