use ldst_lora_engine::*;
use ldst_prompt_forge::{InstructionSample, InstructionTemplate, SampleMeta};
use std::time::Instant;

fn sample(i: usize, len: usize) -> InstructionSample {
    let filler = "the hotel area should be north and more words here ".repeat(len / 52 + 1);
    InstructionSample {
        instruction: "Track the state of the slot <hotel-area> in the input dialogue.".into(),
        input: format!("[USER] {} So the value of slot <hotel-area> is", &filler[..len]),
        output: if i % 3 == 0 { "north".into() } else { "NONE".into() },
        meta: SampleMeta {
            dialogue_id: format!("d{i}"),
            turn_index: 1,
            slot_id: "hotel-area".into(),
            included_description: false,
            included_pvl: false,
            instruction_template: InstructionTemplate::Customized,
        },
        parts: None,
    }
}

fn main() {
    let config = ToyDecoderConfig { context_len: 512, ..ToyDecoderConfig::default() };
    let mut model = ToyDecoder::new(config, 0).unwrap();
    // 64 samples of ~340 bytes -> 4 batches of 16 at T ~ 400
    let data: Vec<_> = (0..64).map(|i| sample(i, 330)).collect();
    let cfg = TrainConfig { learning_rate: 1e-3, batch_size: 16, epochs: 2, seed: 0, loss_on_output_only: true };
    let t0 = Instant::now();
    let out = pretrain(&mut model, &data, &cfg).unwrap();
    let dt = t0.elapsed();
    println!("{} steps in {:.2?} -> {:.0} ms/step (loss {:.3}->{:.3})",
        out.loss_trace.len(), dt, dt.as_millis() as f64 / out.loss_trace.len() as f64,
        out.initial_loss, out.final_loss);

    // decode speed
    let t1 = Instant::now();
    let n = 20;
    for i in 0..n {
        let _ = predict_value(&model, &ByteTokenizer, &data[i], 16).unwrap();
    }
    println!("decode: {:.1} ms/prediction", t1.elapsed().as_millis() as f64 / n as f64);
}
