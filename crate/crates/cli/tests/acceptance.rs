//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with the measured numbers.
//!
//! Run with `cargo test -p ldst-cli --test acceptance -- --nocapture`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ldst_cli::pipeline::{
    all_none_baseline, build_training_dataset, eval_predictions, lora_stage, predict_pipeline,
    pretrain_stage, sweep_pipeline, train_toy_pipeline, DatasetStyle, TrainPipelineConfig,
};
use ldst_corpus::{
    few_shot_split, load_dialogues, load_schema, synth_corpus, Dialogue, DialogueState, Schema,
    SlotSpec, SlotValue, SynthConfig, Turn,
};
use ldst_dst_metrics::{prompt_sensitivity, MatchPolicy, PredictionSet};
use ldst_lora_engine::{
    base_hash, count_trainable, grad_check, init_adapter, LoraAdapter, LoraLinear, ToyDecoder,
    ToyDecoderConfig,
};
use ldst_prompt_forge::{generate_instruction_dataset, AssemblyPolicy, TemplateSet};

fn ldst() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ldst"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn pass(criterion: u32, details: &str) {
    println!("PASS criterion {criterion}: {details}");
}

// -------------------------------------------------------------------------
// 1. Parameter accounting reproduces the published numbers.
// -------------------------------------------------------------------------
#[test]
fn criterion_1_parameter_accounting() {
    let count = count_trainable(32, 4, 4096, 4096, 8, 6_700_000_000);
    assert_eq!(count.trainable, 8_388_608, "trainable must be 8,388,608");
    for base_total in [6_700_000_000u64, 6_738_415_616, 7_000_000_000] {
        let ratio = count_trainable(32, 4, 4096, 4096, 8, base_total).ratio;
        assert!(
            (0.0011..=0.0013).contains(&ratio),
            "ratio {ratio} outside [0.11%, 0.13%] for base {base_total}"
        );
    }
    pass(
        1,
        &format!(
            "trainable = {} and ratio = {:.4}% of a 7B base",
            count.trainable,
            count_trainable(32, 4, 4096, 4096, 8, 7_000_000_000).ratio * 100.0
        ),
    );
}

// -------------------------------------------------------------------------
// 2. Instruction-count identity: 6 turns × 49 slots = 294 samples.
// -------------------------------------------------------------------------
#[test]
fn criterion_2_instruction_count_identity() {
    let slots: Vec<SlotSpec> = (0..49)
        .map(|i| SlotSpec {
            domain: "hotel".into(),
            name: format!("slot{i}"),
            description: format!("attribute {i}"),
            is_categorical: false,
            possible_values: vec![],
        })
        .collect();
    let schema = Schema::new(slots).unwrap();
    let mut state = DialogueState::new();
    state.set("hotel-slot0", SlotValue::Literal("x".into()));
    let dialogue = Dialogue {
        id: "six-turns".into(),
        turns: (0..6)
            .map(|i| Turn {
                system_utterance: String::new(),
                user_utterance: format!("turn {i}"),
            })
            .collect(),
        gold_states: vec![state; 6],
        domains_touched: ["hotel".to_string()].into_iter().collect(),
    };
    let corpus = vec![dialogue];
    let templates = TemplateSet::default();
    let policy = AssemblyPolicy::with_seed(0);
    let n = generate_instruction_dataset(&corpus, &schema, &templates, Some(&policy))
        .collect::<Result<Vec<_>, _>>()
        .unwrap()
        .len();
    assert_eq!(n, 294);
    pass(2, "6-turn dialogue × 49 slots yields exactly 294 samples");
}

// -------------------------------------------------------------------------
// 3. LoRA math: zero-init equivalence, merge agreement, gradient checks.
// -------------------------------------------------------------------------
#[test]
fn criterion_3_lora_math_suite() {
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    // Zero-init equivalence, exact: adapted logits equal base logits.
    let config = ToyDecoderConfig::default();
    let adapted = ToyDecoder::new(config, 77).unwrap();
    let base_only = {
        let mut model = adapted.clone();
        model.strip_adapters();
        model
    };
    let tokens: Vec<u32> = std::iter::once(257)
        .chain("the hotel area should be north".bytes().map(u32::from))
        .collect();
    let with = adapted.logits_for(&tokens);
    let without = base_only.logits_for(&tokens);
    assert_eq!(with, without, "zero-init adapters must be exact no-ops");

    // Merge-vs-adapter agreement ≤ 1e-10 in f64 over 100 random layers/inputs.
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let mut worst_merge = 0.0f64;
    for trial in 0..100u64 {
        let (d, k, r) = (16, 12, 4);
        let mut layer = LoraLinear {
            w0: Array2::from_shape_fn((d, k), |_| rng.sample::<f64, _>(StandardNormal)),
            adapter: init_adapter::<f64>(d, k, r, 16.0, trial).unwrap(),
        };
        layer.adapter.a =
            Array2::from_shape_fn((r, k), |_| rng.sample::<f64, _>(StandardNormal));
        layer.adapter.b =
            Array2::from_shape_fn((d, r), |_| rng.sample::<f64, _>(StandardNormal));
        let merged = layer.merge();
        let x = Array1::from_shape_fn(k, |_| rng.sample::<f64, _>(StandardNormal));
        let diff = merged
            .dot(&x)
            .iter()
            .zip(layer.forward(&x).unwrap().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        worst_merge = worst_merge.max(diff);
    }
    assert!(worst_merge <= 1e-10, "merge deviation {worst_merge}");

    // Gradient checks ≤ 1e-4 relative error on random layers.
    let mut worst_grad = 0.0f64;
    for trial in 0..25u64 {
        let (d, k, r) = (8, 8, 2);
        let mut layer = LoraLinear {
            w0: Array2::from_shape_fn((d, k), |_| rng.sample::<f64, _>(StandardNormal)),
            adapter: init_adapter::<f64>(d, k, r, 16.0, 1000 + trial).unwrap(),
        };
        layer.adapter.a =
            Array2::from_shape_fn((r, k), |_| rng.sample::<f64, _>(StandardNormal));
        layer.adapter.b =
            Array2::from_shape_fn((d, r), |_| rng.sample::<f64, _>(StandardNormal));
        let x = Array1::from_shape_fn(k, |_| rng.sample::<f64, _>(StandardNormal));
        let err = grad_check(&layer, &x, 1e-6).unwrap();
        worst_grad = worst_grad.max(err);
    }
    assert!(worst_grad <= 1e-4, "gradient check error {worst_grad}");

    // B = 0 means the update is exactly zero.
    let zero: LoraAdapter<f64> = init_adapter(8, 8, 2, 16.0, 5).unwrap();
    assert!(zero.delta().iter().all(|v| *v == 0.0));

    pass(
        3,
        &format!(
            "zero-init exact; merge ≤ {worst_merge:.2e} (bound 1e-10); grad check ≤ {worst_grad:.2e} (bound 1e-4)"
        ),
    );
}

// -------------------------------------------------------------------------
// 4. Metric oracle on the committed 3-turn, 4-slot fixture.
// -------------------------------------------------------------------------
#[test]
fn criterion_4_metric_oracle() {
    let schema = load_schema(&std::fs::read_to_string(fixture("schema.json")).unwrap()).unwrap();
    let gold = load_dialogues(
        &std::fs::read_to_string(fixture("gold.jsonl")).unwrap(),
        &schema,
        true,
    )
    .unwrap()
    .dialogues;
    let preds = PredictionSet::from_jsonl(
        &std::fs::read_to_string(fixture("preds.jsonl")).unwrap(),
        "fixture",
    )
    .unwrap();

    let report = eval_predictions(&preds, &schema, &gold, MatchPolicy::Exact).unwrap();
    assert_eq!(report.jga, 2.0 / 3.0, "jga must be exactly 2/3");
    assert_eq!(report.aga, 0.75, "aga must be exactly 3/4");

    // Per-turn decomposition identity, exact.
    let weighted: f64 = report
        .per_turn_jga
        .iter()
        .map(|e| e.jga * e.n as f64)
        .sum::<f64>()
        / report.per_turn_jga.iter().map(|e| e.n).sum::<usize>() as f64;
    assert!((weighted - report.jga).abs() <= 1e-12);

    // Taxonomy matches a brute-force classification of every pair.
    let mut brute_missed = 0;
    let mut brute_hallucinated = 0;
    let mut brute_dontcare = 0;
    let mut brute_wrong = 0;
    for dialogue in &gold {
        for turn in 1..=dialogue.n_turns() {
            for slot in schema.slots() {
                let id = slot.slot_id();
                let g = dialogue.gold_states[turn - 1].get(&id).clone();
                let p = preds
                    .get(&dialogue.id, turn, &id)
                    .cloned()
                    .unwrap_or(SlotValue::None);
                if p == g {
                    continue;
                }
                match (&p, &g) {
                    (SlotValue::None, SlotValue::DontCare)
                    | (SlotValue::DontCare, SlotValue::None) => brute_dontcare += 1,
                    (SlotValue::None, SlotValue::Literal(_)) => brute_missed += 1,
                    (SlotValue::Literal(_), SlotValue::None) => brute_hallucinated += 1,
                    _ => brute_wrong += 1,
                }
            }
        }
    }
    assert_eq!(report.error_taxonomy.missed, brute_missed);
    assert_eq!(report.error_taxonomy.hallucinated, brute_hallucinated);
    assert_eq!(report.error_taxonomy.dontcare_confusion, brute_dontcare);
    assert_eq!(report.error_taxonomy.wrong_value, brute_wrong);
    assert_eq!(
        report.error_taxonomy.total(),
        brute_missed + brute_hallucinated + brute_dontcare + brute_wrong
    );

    pass(
        4,
        &format!(
            "jga = 2/3, aga = 3/4, per-turn identity exact, taxonomy = {:?} matches brute force",
            report.error_taxonomy
        ),
    );
}

// -------------------------------------------------------------------------
// 5. Coin fairness across 5 seeds at ≥ 10k samples, plus the PVL gate.
// -------------------------------------------------------------------------
#[test]
fn criterion_5_coin_fairness() {
    let (schema, dialogues) = synth_corpus(
        &SynthConfig {
            n_dialogues: 400,
            ..SynthConfig::default()
        },
        99,
    )
    .unwrap();
    let templates = TemplateSet::default();
    let mut summary = Vec::new();
    for seed in [1u64, 2, 3, 4, 5] {
        let policy = AssemblyPolicy::with_seed(seed);
        let samples: Vec<_> =
            generate_instruction_dataset(&dialogues, &schema, &templates, Some(&policy))
                .collect::<Result<_, _>>()
                .unwrap();
        assert!(samples.len() >= 10_000, "only {} samples", samples.len());
        let desc_rate = samples.iter().filter(|s| s.meta.included_description).count() as f64
            / samples.len() as f64;
        let categorical: Vec<_> = samples
            .iter()
            .filter(|s| schema.slot(&s.meta.slot_id).unwrap().is_categorical)
            .collect();
        let pvl_rate = categorical.iter().filter(|s| s.meta.included_pvl).count() as f64
            / categorical.len() as f64;
        assert!(
            (0.47..=0.53).contains(&desc_rate),
            "seed {seed}: description rate {desc_rate}"
        );
        assert!(
            (0.47..=0.53).contains(&pvl_rate),
            "seed {seed}: PVL rate {pvl_rate}"
        );
        for sample in &samples {
            if !schema.slot(&sample.meta.slot_id).unwrap().is_categorical {
                assert!(
                    !sample.input.contains("[Possible Values]"),
                    "PVL leaked into non-categorical slot"
                );
            }
        }
        summary.push(format!("seed {seed}: desc {desc_rate:.3} pvl {pvl_rate:.3}"));
    }
    pass(5, &summary.join("; "));
}

// -------------------------------------------------------------------------
// 6. Byte-identical outputs across runs and worker counts {1, 4}.
// -------------------------------------------------------------------------
#[test]
fn criterion_6_determinism() {
    let dir = tempfile::tempdir().unwrap();

    // synth twice.
    for name in ["s1", "s2"] {
        assert!(ldst()
            .args(["synth", "--n-dialogues", "40", "--seed", "21", "--out-dir"])
            .arg(dir.path().join(name))
            .status()
            .unwrap()
            .success());
    }
    let synth_a = std::fs::read(dir.path().join("s1/dialogues.jsonl")).unwrap();
    let synth_b = std::fs::read(dir.path().join("s2/dialogues.jsonl")).unwrap();
    assert_eq!(synth_a, synth_b, "synth outputs differ between runs");

    // split twice.
    for name in ["p1", "p2"] {
        assert!(ldst()
            .args(["split", "--schema"])
            .arg(dir.path().join("s1/schema.json"))
            .arg("--dialogues")
            .arg(dir.path().join("s1/dialogues.jsonl"))
            .args(["--few-shot", "0.25", "--seed", "4", "--out-dir"])
            .arg(dir.path().join(name))
            .status()
            .unwrap()
            .success());
    }
    for file in ["train.jsonl", "eval.jsonl"] {
        let a = std::fs::read(dir.path().join("p1").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("p2").join(file)).unwrap();
        assert_eq!(a, b, "split output {file} differs between runs");
    }

    // gen-instructions across two runs and worker counts {1, 4}.
    let mut outputs = Vec::new();
    for (name, workers) in [("g1", "1"), ("g2", "4"), ("g3", "1"), ("g4", "4")] {
        let out = dir.path().join(format!("{name}.jsonl"));
        assert!(ldst()
            .args(["gen-instructions", "--schema"])
            .arg(dir.path().join("s1/schema.json"))
            .arg("--dialogues")
            .arg(dir.path().join("s1/dialogues.jsonl"))
            .args(["--seed", "13", "--workers", workers, "--out"])
            .arg(&out)
            .status()
            .unwrap()
            .success());
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert!(
        outputs.windows(2).all(|w| w[0] == w[1]),
        "gen-instructions bytes differ across runs/workers"
    );
    pass(
        6,
        "synth, split, and gen-instructions byte-identical across two runs and workers {1, 4}",
    );
}

// -------------------------------------------------------------------------
// 7. Desk-scale end to end: pretrain + LoRA on 200 synthetic dialogues,
//    held-out JGA ≥ 0.80 and strictly above the all-NONE baseline.
// -------------------------------------------------------------------------
#[test]
fn criterion_7_desk_scale_end_to_end() {
    let started = Instant::now();
    let (schema, dialogues) = synth_corpus(
        &SynthConfig {
            n_dialogues: 200,
            n_domains: 3,
            slots_per_domain: 4,
            max_turns: 8,
            categorical_ratio: 0.5,
        },
        11,
    )
    .unwrap();
    assert_eq!(schema.len(), 12);
    let split = few_shot_split(&dialogues, 0.8, 11).unwrap();
    assert_eq!(split.train.len(), 160);
    assert_eq!(split.eval.len(), 40);

    let templates = TemplateSet::default();
    let cfg = TrainPipelineConfig {
        seed: 11,
        ..TrainPipelineConfig::default()
    };
    let trained = train_toy_pipeline(&schema, &split.train, &templates, &cfg).unwrap();
    assert!(
        trained.pretrain_outcome.final_loss < trained.pretrain_outcome.initial_loss,
        "pretraining diverged"
    );

    let hash_before = base_hash(&trained.model);
    let preds = predict_pipeline(
        &trained.model,
        &schema,
        &split.eval,
        &templates,
        &cfg,
        "acceptance-e2e",
    )
    .unwrap();
    assert_eq!(hash_before, base_hash(&trained.model));

    let report = eval_predictions(&preds, &schema, &split.eval, MatchPolicy::Exact).unwrap();
    let baseline = all_none_baseline(&schema, &split.eval).unwrap();
    let elapsed = started.elapsed();
    println!(
        "e2e: jga {:.4}, aga {:.4}, baseline jga {:.4}, {} samples pretrain / {} lora, {:.1?}",
        report.jga,
        report.aga,
        baseline.jga,
        trained.n_pretrain_samples,
        trained.n_lora_samples,
        elapsed
    );
    assert!(
        report.jga >= 0.80,
        "held-out JGA {:.4} below the 0.80 bar",
        report.jga
    );
    assert!(
        report.jga > baseline.jga,
        "JGA {:.4} does not exceed the all-NONE baseline {:.4}",
        report.jga,
        baseline.jga
    );
    assert!(
        elapsed.as_secs() <= 600,
        "end-to-end run took {elapsed:?}, over the 10 minute budget"
    );
    pass(
        7,
        &format!(
            "held-out JGA {:.4} ≥ 0.80 (all-NONE baseline {:.4}) in {:.0?}",
            report.jga, baseline.jga, elapsed
        ),
    );
}

// -------------------------------------------------------------------------
// 8. Ablation (assembled vs fixed) + six-prompt sensitivity sweep.
//    Directional claims are reported but non-blocking at toy scale.
// -------------------------------------------------------------------------
#[test]
fn criterion_8_ablation_and_sensitivity() {
    let (schema, dialogues) = synth_corpus(
        &SynthConfig {
            n_dialogues: 80,
            n_domains: 3,
            slots_per_domain: 4,
            max_turns: 4,
            categorical_ratio: 0.5,
        },
        23,
    )
    .unwrap();
    let split = few_shot_split(&dialogues, 0.8, 23).unwrap();
    let sweep_eval: Vec<_> = split.eval.iter().take(10).cloned().collect();
    let templates = TemplateSet::default();

    let base_cfg = TrainPipelineConfig {
        seed: 23,
        pretrain_epochs: 3,
        ..TrainPipelineConfig::default()
    };
    // One shared pretrained base, two adapter fine-tunes.
    let (base_model, _, _) =
        pretrain_stage(&schema, &split.train, &templates, &base_cfg).unwrap();

    let mut results = Vec::new();
    for style in [DatasetStyle::Assembled, DatasetStyle::Fixed] {
        let cfg = TrainPipelineConfig {
            style,
            ..base_cfg.clone()
        };
        let mut model = base_model.clone();
        lora_stage(&mut model, &schema, &split.train, &templates, &cfg).unwrap();
        let reports = sweep_pipeline(&model, &schema, &sweep_eval, &cfg).unwrap();
        let summary =
            prompt_sensitivity(&reports.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>())
                .unwrap();
        println!(
            "{style:?}: six-prompt JGA mean {:.4}, variance {:.6} ({})",
            summary.mean,
            summary.variance,
            reports
                .iter()
                .map(|(name, r)| format!("{name} {:.3}", r.jga))
                .collect::<Vec<_>>()
                .join(", ")
        );
        results.push((style, summary));
    }
    let assembled = &results[0].1;
    let fixed = &results[1].1;
    // Directional claims, reported but non-blocking at toy scale.
    let direction_jga = assembled.mean >= fixed.mean;
    let direction_var = assembled.variance <= fixed.variance;
    println!(
        "directional: assembled mean ≥ fixed mean: {direction_jga}; assembled variance ≤ fixed variance: {direction_var}"
    );
    assert_eq!(assembled.n, 6);
    assert_eq!(fixed.n, 6);
    pass(
        8,
        &format!(
            "assembled mean {:.4}/var {:.6} vs fixed mean {:.4}/var {:.6} (directional claims reported, non-blocking)",
            assembled.mean, assembled.variance, fixed.mean, fixed.variance
        ),
    );
}

// -------------------------------------------------------------------------
// 9. Gateway contract against a local stub server.
// -------------------------------------------------------------------------
mod stub {
    use std::io::{Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::time::Duration;

    pub type Handler = dyn Fn(usize) -> (u16, String, Duration) + Send + Sync;

    pub struct Stub {
        pub endpoint: String,
        pub hits: Arc<AtomicUsize>,
        pub max_concurrent: Arc<AtomicUsize>,
        shutdown: Arc<AtomicBool>,
        port: u16,
    }

    pub fn chat_body(content: &str) -> String {
        format!(r#"{{"choices":[{{"message":{{"content":"{content}"}}}}]}}"#)
    }

    impl Stub {
        pub fn start(handler: Arc<Handler>) -> Stub {
            let listener = TcpListener::bind("127.0.0.1:0").unwrap();
            let port = listener.local_addr().unwrap().port();
            let hits = Arc::new(AtomicUsize::new(0));
            let concurrent = Arc::new(AtomicUsize::new(0));
            let max_concurrent = Arc::new(AtomicUsize::new(0));
            let shutdown = Arc::new(AtomicBool::new(false));
            {
                let (hits, concurrent, max_concurrent, shutdown) = (
                    hits.clone(),
                    concurrent.clone(),
                    max_concurrent.clone(),
                    shutdown.clone(),
                );
                std::thread::spawn(move || {
                    for stream in listener.incoming() {
                        if shutdown.load(Ordering::SeqCst) {
                            break;
                        }
                        let Ok(stream) = stream else { continue };
                        let handler = handler.clone();
                        let hits = hits.clone();
                        let concurrent = concurrent.clone();
                        let max_concurrent = max_concurrent.clone();
                        std::thread::spawn(move || {
                            serve(stream, &handler, &hits, &concurrent, &max_concurrent)
                        });
                    }
                });
            }
            Stub {
                endpoint: format!("http://127.0.0.1:{port}/v1/chat/completions"),
                hits,
                max_concurrent,
                shutdown,
                port,
            }
        }
    }

    impl Drop for Stub {
        fn drop(&mut self) {
            self.shutdown.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(("127.0.0.1", self.port));
        }
    }

    fn serve(
        mut stream: TcpStream,
        handler: &Arc<Handler>,
        hits: &AtomicUsize,
        concurrent: &AtomicUsize,
        max_concurrent: &AtomicUsize,
    ) {
        let mut buffer = Vec::new();
        let mut chunk = [0u8; 4096];
        let header_end = loop {
            match stream.read(&mut chunk) {
                Ok(0) => return,
                Ok(n) => {
                    buffer.extend_from_slice(&chunk[..n]);
                    if let Some(pos) = buffer.windows(4).position(|w| w == b"\r\n\r\n") {
                        break pos;
                    }
                }
                Err(_) => return,
            }
        };
        let headers = String::from_utf8_lossy(&buffer[..header_end]).to_lowercase();
        let content_length = headers
            .lines()
            .find_map(|line| line.strip_prefix("content-length:"))
            .and_then(|v| v.trim().parse::<usize>().ok())
            .unwrap_or(0);
        while buffer.len() < header_end + 4 + content_length {
            match stream.read(&mut chunk) {
                Ok(0) => break,
                Ok(n) => buffer.extend_from_slice(&chunk[..n]),
                Err(_) => return,
            }
        }
        let index = hits.fetch_add(1, Ordering::SeqCst);
        let live = concurrent.fetch_add(1, Ordering::SeqCst) + 1;
        max_concurrent.fetch_max(live, Ordering::SeqCst);
        let (status, body, delay) = handler(index);
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        let response = format!(
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        let _ = stream.write_all(response.as_bytes());
        concurrent.fetch_sub(1, Ordering::SeqCst);
    }
}

#[test]
fn criterion_9_gateway_contract() {
    use ldst_llm_gateway::{Gateway, GatewayConfig, RetryPolicy};
    use std::sync::atomic::Ordering;
    use std::sync::Arc;
    use std::time::Duration;

    std::env::set_var("LDST_ACCEPT_KEY", "sk-acceptance");
    let cache_dir = tempfile::tempdir().unwrap();

    // (a) In-flight cap under a slow endpoint.
    let slow = stub::Stub::start(Arc::new(|_| {
        (200, stub::chat_body("north"), Duration::from_millis(50))
    }));
    let mut config = GatewayConfig::new(slow.endpoint.clone(), cache_dir.path().join("a"));
    config.api_key_env = "LDST_ACCEPT_KEY".into();
    config.max_in_flight = 4;
    config.requests_per_minute = 1_000_000.0;
    config.retry = RetryPolicy {
        max_attempts: 3,
        backoff_base_ms: 10,
    };
    let gateway = Gateway::new(config).unwrap();
    let prompts: Vec<String> = (0..16).map(|i| format!("cap probe {i}")).collect();
    let results = gateway.complete_many(&prompts);
    assert!(results.iter().all(Result::is_ok));
    let observed = slow.max_concurrent.load(Ordering::SeqCst);
    assert!(observed <= 4, "in-flight cap exceeded: {observed}");

    // (b) 429 then 429 then 200 succeeds through backoff.
    let flaky = stub::Stub::start(Arc::new(|index| {
        if index < 2 {
            (429, String::new(), Duration::ZERO)
        } else {
            (200, stub::chat_body("cambridge"), Duration::ZERO)
        }
    }));
    let mut config = GatewayConfig::new(flaky.endpoint.clone(), cache_dir.path().join("b"));
    config.api_key_env = "LDST_ACCEPT_KEY".into();
    config.requests_per_minute = 1_000_000.0;
    config.retry = RetryPolicy {
        max_attempts: 4,
        backoff_base_ms: 10,
    };
    let gateway = Gateway::new(config).unwrap();
    let record = gateway.complete("retry probe").unwrap();
    assert_eq!(record.response, "cambridge");
    assert_eq!(record.attempts, 3, "expected exactly 3 attempts");
    assert_eq!(flaky.hits.load(Ordering::SeqCst), 3);

    // (c) A repeated run is served entirely from cache: zero network calls.
    let counted = stub::Stub::start(Arc::new(|_| {
        (200, stub::chat_body("west"), Duration::ZERO)
    }));
    let mut config = GatewayConfig::new(counted.endpoint.clone(), cache_dir.path().join("c"));
    config.api_key_env = "LDST_ACCEPT_KEY".into();
    config.requests_per_minute = 1_000_000.0;
    let gateway = Gateway::new(config.clone()).unwrap();
    let prompts: Vec<String> = (0..6).map(|i| format!("cached probe {i}")).collect();
    let first = gateway.complete_many(&prompts);
    assert!(first.iter().all(Result::is_ok));
    let hits_after_first = counted.hits.load(Ordering::SeqCst);
    assert_eq!(hits_after_first, 6);

    let replay_gateway = Gateway::new(config).unwrap();
    let second = replay_gateway.complete_many(&prompts);
    assert!(second.iter().all(Result::is_ok));
    assert!(second.iter().all(|r| r.as_ref().unwrap().attempts == 0));
    assert_eq!(
        counted.hits.load(Ordering::SeqCst),
        hits_after_first,
        "replay made network calls"
    );

    pass(
        9,
        &format!(
            "in-flight ≤ 4 (observed {observed}), 429→429→200 succeeded in 3 attempts, replay made 0 network calls"
        ),
    );
}

// -------------------------------------------------------------------------
// Shared helper: strip adapters off a decoder for the zero-init check.
// -------------------------------------------------------------------------
trait StripAdapters {
    fn strip_adapters(&mut self);
}

impl StripAdapters for ToyDecoder {
    fn strip_adapters(&mut self) {
        // Rebuild from a checkpoint whose config requests no adapted
        // modules: the same base weights with the adapter branch gone.
        let mut checkpoint = ldst_lora_engine::Checkpoint::from_model(self);
        checkpoint.adapters.clear();
        checkpoint.config.target_modules.clear();
        *self = checkpoint.to_model().unwrap();
    }
}
