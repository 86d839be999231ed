use std::time::Instant;

use ldst_cli::pipeline::*;
use ldst_corpus::{few_shot_split, synth_corpus, SynthConfig};
use ldst_dst_metrics::MatchPolicy;
use ldst_prompt_forge::TemplateSet;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let pre: usize = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(3);
    let lora: usize = args.get(3).and_then(|a| a.parse().ok()).unwrap_or(1);

    let (schema, dialogues) = synth_corpus(
        &SynthConfig { n_dialogues: n, ..SynthConfig::default() },
        11,
    )
    .unwrap();
    let split = few_shot_split(&dialogues, 0.8, 11).unwrap();
    let templates = TemplateSet::default();
    let cfg = TrainPipelineConfig {
        seed: 11,
        pretrain_epochs: pre,
        lora_epochs: lora,
        ..TrainPipelineConfig::default()
    };

    let t0 = Instant::now();
    let (mut model, pre_out, n_pre) = pretrain_stage(&schema, &split.train, &templates, &cfg).unwrap();
    let t_pre = t0.elapsed();
    println!(
        "pretrain: {n_pre} samples, {} steps, loss {:.3} -> {:.3}, {:.1?} ({:.0} ms/step)",
        pre_out.loss_trace.len(), pre_out.initial_loss, pre_out.final_loss, t_pre,
        t_pre.as_millis() as f64 / pre_out.loss_trace.len() as f64
    );

    let t1 = Instant::now();
    let (lora_out, n_l) = lora_stage(&mut model, &schema, &split.train, &templates, &cfg).unwrap();
    let t_lora = t1.elapsed();
    println!(
        "lora: {n_l} samples, {} steps, loss {:.3} -> {:.3}, {:.1?}",
        lora_out.loss_trace.len(), lora_out.initial_loss, lora_out.final_loss, t_lora
    );

    let t2 = Instant::now();
    let preds = predict_pipeline(&model, &schema, &split.eval, &templates, &cfg, "probe").unwrap();
    let t_pred = t2.elapsed();
    let report = eval_predictions(&preds, &schema, &split.eval, MatchPolicy::Exact).unwrap();
    let baseline = all_none_baseline(&schema, &split.eval).unwrap();
    println!(
        "predict: {} preds in {:.1?}; JGA {:.4} AGA {:.4} baseline {:.4}; total {:.1?}",
        preds.len(), t_pred, report.jga, report.aga, baseline.jga, t0.elapsed()
    );
    let errs = &report.error_taxonomy;
    println!(
        "errors: missed {} hallucinated {} dontcare {} wrong {} | per-slot top: {:?}",
        errs.missed, errs.hallucinated, errs.dontcare_confusion, errs.wrong_value,
        report.per_slot_errors.iter().take(4).collect::<Vec<_>>()
    );
    println!(
        "per-turn: {:?}",
        report.per_turn_jga.iter().map(|e| (e.turn, (e.jga * 100.0).round() / 100.0, e.n)).collect::<Vec<_>>()
    );
}
