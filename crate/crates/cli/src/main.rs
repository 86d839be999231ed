use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ldst_cli::cfgfile::{resolve, FileConfig};
use ldst_cli::manifest::RunManifest;
use ldst_cli::pipeline::{
    eval_predictions, predict_pipeline, read_dialogues, read_schema, sweep_pipeline,
    train_toy_pipeline, DatasetStyle, TrainPipelineConfig,
};
use ldst_cli::{plots, CliError};
use ldst_corpus::{
    convert_multiwoz_dialogues, convert_sgd_dialogues, convert_sgd_schema, dialogues_to_document,
    few_shot_split, schema_to_document, synth_corpus, zero_shot_split, SynthConfig,
};
use ldst_dst_metrics::{prompt_sensitivity, EvalReport, MatchPolicy, PredictionSet};
use ldst_llm_gateway::{
    parse_multi_return, parse_single_return, Gateway, GatewayConfig, RetryPolicy,
};
use ldst_lora_engine::{Checkpoint, LoraSettings, ToyDecoderConfig};
use ldst_prompt_forge::{
    generate_jsonl, remote_prompt, render_context, AssemblyPolicy, DemoExemplar, RemotePromptMode,
    RemoteQuery, TemplateSet,
};

#[derive(Parser)]
#[command(
    name = "ldst",
    version,
    about = "Schema-guided dialogue state tracking toolkit: corpora, instruction datasets, toy LoRA training, metrics, and a remote-LLM driver",
    propagate_version = true
)]
struct Cli {
    /// Optional TOML config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert native dataset layouts into the canonical files.
    Convert(ConvertArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Split a corpus into train/eval partitions.
    Split(SplitArgs),
    /// Generate an instruction dataset from a corpus.
    GenInstructions(GenArgs),
    /// Pretrain the toy decoder and fine-tune its adapters.
    TrainToy(TrainArgs),
    /// Predict slot values for a corpus with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predictions against gold states.
    Eval(EvalArgs),
    /// Evaluate the six test prompts and report JGA mean/variance.
    PromptSweep(SweepArgs),
    /// Drive a chat-completion endpoint over a corpus.
    QueryLlm(QueryArgs),
    /// Render report files into tables and charts.
    Plot(PlotArgs),
    /// Fuse adapters into the base weights of a checkpoint.
    Merge(MergeArgs),
}

#[derive(Args)]
struct ConvertArgs {
    #[command(subcommand)]
    source: ConvertSource,
}

#[derive(Subcommand)]
enum ConvertSource {
    /// Convert SGD-format schema and dialogue files.
    FromSgd(ConvertFiles),
    /// Convert MultiWOZ 2.2-format schema and dialogue files.
    FromMultiwoz(ConvertFiles),
}

#[derive(Args)]
struct ConvertFiles {
    /// Native schema.json (array of services).
    #[arg(long)]
    schema: PathBuf,
    /// Native dialogues file (array of dialogues).
    #[arg(long)]
    dialogues: PathBuf,
    /// Directory for schema.json + dialogues.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    /// Treat categorical values outside the PVL as errors.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    n_dialogues: usize,
    #[arg(long, default_value_t = 3)]
    n_domains: usize,
    #[arg(long, default_value_t = 4)]
    slots_per_domain: usize,
    #[arg(long, default_value_t = 8)]
    max_turns: usize,
    #[arg(long, default_value_t = 0.5)]
    categorical_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    dialogues: PathBuf,
    /// Few-shot fraction in [0, 1].
    #[arg(long, conflicts_with = "zero_shot")]
    few_shot: Option<f64>,
    /// Holdout domain for the zero-shot split.
    #[arg(long)]
    zero_shot: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum StyleFlag {
    Assembled,
    Fixed,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    dialogues: PathBuf,
    #[arg(long, value_enum, default_value_t = StyleFlag::Assembled)]
    style: StyleFlag,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for generation (output is identical for any count).
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    p_description: Option<f64>,
    #[arg(long)]
    p_pvl: Option<f64>,
    /// Output .jsonl path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    schema: PathBuf,
    /// Training dialogues (canonical .jsonl).
    #[arg(long)]
    train: PathBuf,
    #[arg(long, value_enum, default_value_t = StyleFlag::Assembled)]
    style: StyleFlag,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    lora_epochs: Option<usize>,
    #[arg(long)]
    pretrain_lr: Option<f64>,
    #[arg(long)]
    lora_lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    dialogues: PathBuf,
    #[arg(long, default_value_t = 24)]
    max_new_tokens: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum PolicyFlag {
    Exact,
    Relaxed,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    dialogues: PathBuf,
    /// Predictions .jsonl ({dialogue_id, turn, slot, value} records).
    #[arg(long)]
    preds: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyFlag::Exact)]
    policy: PolicyFlag,
    /// Also write the per-turn JGA table next to the report.
    #[arg(long)]
    per_turn: bool,
    /// Print the error taxonomy and top slots.
    #[arg(long)]
    errors: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    dialogues: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ModeFlag {
    SingleNoDemo,
    MultiNoDemo,
    SingleOneDemo,
    MultiOneDemo,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    dialogues: PathBuf,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeFlag::SingleNoDemo)]
    mode: ModeFlag,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Stop after this many (turn, slot) requests (0 = no limit).
    #[arg(long, default_value_t = 0)]
    limit: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    /// One or more report .json files.
    #[arg(long, required = true, num_args = 1..)]
    report: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are successful exits; anything else is usage.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("ldst: {e}");
        std::process::exit(e.exit_code());
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file_config = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Convert(args) => cmd_convert(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Split(args) => cmd_split(args),
        Command::GenInstructions(args) => cmd_gen(args, &file_config),
        Command::TrainToy(args) => cmd_train(args, &file_config),
        Command::Predict(args) => cmd_predict(args, &file_config),
        Command::Eval(args) => cmd_eval(args),
        Command::PromptSweep(args) => cmd_sweep(args, &file_config),
        Command::QueryLlm(args) => cmd_query(args, &file_config),
        Command::Plot(args) => cmd_plot(args),
        Command::Merge(args) => cmd_merge(args),
    }
}

fn cmd_convert(args: ConvertArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let (files, label, is_sgd) = match &args.source {
        ConvertSource::FromSgd(files) => (files, "convert.from-sgd", true),
        ConvertSource::FromMultiwoz(files) => (files, "convert.from-multiwoz", false),
    };
    let schema_text = std::fs::read_to_string(&files.schema)?;
    let schema = convert_sgd_schema(&schema_text)?;
    let dialogue_text = std::fs::read_to_string(&files.dialogues)?;
    let load = if is_sgd {
        convert_sgd_dialogues(&dialogue_text, &schema, files.strict)?
    } else {
        convert_multiwoz_dialogues(&dialogue_text, &schema, files.strict)?
    };
    for warning in &load.warnings {
        eprintln!("warning: {warning}");
    }
    std::fs::create_dir_all(&files.out_dir)?;
    let schema_out = files.out_dir.join("schema.json");
    let dialogues_out = files.out_dir.join("dialogues.jsonl");
    write_file(&schema_out, &schema_to_document(&schema))?;
    write_file(&dialogues_out, &dialogues_to_document(&load.dialogues))?;
    println!(
        "converted {} dialogues, {} slots -> {}",
        load.dialogues.len(),
        schema.len(),
        files.out_dir.display()
    );
    RunManifest::new(label)
        .input(&files.schema)
        .input(&files.dialogues)
        .output(&schema_out)
        .output(&dialogues_out)
        .write(&files.out_dir, started)?;
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let config = SynthConfig {
        n_dialogues: args.n_dialogues,
        n_domains: args.n_domains,
        slots_per_domain: args.slots_per_domain,
        max_turns: args.max_turns,
        categorical_ratio: args.categorical_ratio,
    };
    let (schema, dialogues) = synth_corpus(&config, args.seed)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let schema_out = args.out_dir.join("schema.json");
    let dialogues_out = args.out_dir.join("dialogues.jsonl");
    write_file(&schema_out, &schema_to_document(&schema))?;
    write_file(&dialogues_out, &dialogues_to_document(&dialogues))?;
    println!(
        "synthesized {} dialogues over {} slots -> {}",
        dialogues.len(),
        schema.len(),
        args.out_dir.display()
    );
    RunManifest::new("synth")
        .seed("synth", args.seed)
        .config(&config)
        .output(&schema_out)
        .output(&dialogues_out)
        .write(&args.out_dir, started)?;
    Ok(())
}

fn cmd_split(args: SplitArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let schema = read_schema(&args.schema)?;
    let (dialogues, warnings) = read_dialogues(&args.dialogues, &schema, false)?;
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }
    let split = match (args.few_shot, &args.zero_shot) {
        (Some(fraction), None) => few_shot_split(&dialogues, fraction, args.seed)?,
        (None, Some(domain)) => zero_shot_split(&dialogues, domain)?,
        _ => {
            return Err(CliError::usage(
                "exactly one of --few-shot or --zero-shot is required",
            ))
        }
    };
    std::fs::create_dir_all(&args.out_dir)?;
    let train_out = args.out_dir.join("train.jsonl");
    let eval_out = args.out_dir.join("eval.jsonl");
    write_file(&train_out, &dialogues_to_document(&split.train))?;
    write_file(&eval_out, &dialogues_to_document(&split.eval))?;
    println!(
        "split {} dialogues into {} train / {} eval -> {}",
        dialogues.len(),
        split.train.len(),
        split.eval.len(),
        args.out_dir.display()
    );
    RunManifest::new("split")
        .seed("split", args.seed)
        .config(&split.provenance)
        .input(&args.schema)
        .input(&args.dialogues)
        .output(&train_out)
        .output(&eval_out)
        .write(&args.out_dir, started)?;
    Ok(())
}

fn cmd_gen(args: GenArgs, file_config: &FileConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let schema = read_schema(&args.schema)?;
    let (dialogues, _) = read_dialogues(&args.dialogues, &schema, false)?;
    let templates = match &file_config.templates_dir {
        Some(dir) => TemplateSet::load_dir(dir)?,
        None => TemplateSet::default(),
    };
    let policy = AssemblyPolicy {
        p_description: resolve(args.p_description, file_config.policy.p_description, 0.5),
        p_pvl: resolve(args.p_pvl, file_config.policy.p_pvl, 0.5),
        p_standard_instruction: resolve(None, file_config.policy.p_standard_instruction, 0.5),
        seed: args.seed,
    };
    let policy_arg = match args.style {
        StyleFlag::Assembled => Some(&policy),
        StyleFlag::Fixed => None,
    };
    let jsonl = generate_jsonl(&dialogues, &schema, &templates, policy_arg, args.workers)?;
    write_file(&args.out, &jsonl)?;
    let n_samples = jsonl.lines().count();
    println!("wrote {n_samples} instruction samples -> {}", args.out.display());
    RunManifest::new("gen-instructions")
        .seed("assembly", args.seed)
        .config(&policy)
        .input(&args.schema)
        .input(&args.dialogues)
        .output(&args.out)
        .write(&args.out, started)?;
    Ok(())
}

fn pipeline_config(
    args: &TrainArgs,
    file_config: &FileConfig,
) -> Result<TrainPipelineConfig, CliError> {
    let train = &file_config.train;
    let decoder = ToyDecoderConfig {
        model_dim: train.model_dim.unwrap_or(64),
        n_layers: train.n_layers.unwrap_or(2),
        n_heads: train.n_heads.unwrap_or(4),
        context_len: train.context_len.unwrap_or(512),
        lora: LoraSettings {
            rank: train.lora_rank.unwrap_or(8),
            alpha: train.lora_alpha.unwrap_or(16.0),
            dropout_p: train.lora_dropout.unwrap_or(0.05),
        },
        ..ToyDecoderConfig::default()
    };
    let defaults = TrainPipelineConfig::default();
    Ok(TrainPipelineConfig {
        style: match args.style {
            StyleFlag::Assembled => DatasetStyle::Assembled,
            StyleFlag::Fixed => DatasetStyle::Fixed,
        },
        truncate_budget: decoder.context_len - 32,
        decoder,
        policy: AssemblyPolicy {
            p_description: file_config.policy.p_description.unwrap_or(0.5),
            p_pvl: file_config.policy.p_pvl.unwrap_or(0.5),
            p_standard_instruction: file_config.policy.p_standard_instruction.unwrap_or(0.5),
            seed: args.seed,
        },
        pretrain_epochs: resolve(args.pretrain_epochs, train.pretrain_epochs, defaults.pretrain_epochs),
        lora_epochs: resolve(args.lora_epochs, train.lora_epochs, defaults.lora_epochs),
        pretrain_lr: resolve(args.pretrain_lr, train.pretrain_lr, defaults.pretrain_lr),
        lora_lr: resolve(args.lora_lr, train.lora_lr, defaults.lora_lr),
        batch_size: resolve(args.batch_size, train.batch_size, defaults.batch_size),
        seed: args.seed,
        ..defaults
    })
}

fn cmd_train(args: TrainArgs, file_config: &FileConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let schema = read_schema(&args.schema)?;
    let (train_dialogues, _) = read_dialogues(&args.train, &schema, true)?;
    let templates = match &file_config.templates_dir {
        Some(dir) => TemplateSet::load_dir(dir)?,
        None => TemplateSet::default(),
    };
    let cfg = pipeline_config(&args, file_config)?;
    let trained = train_toy_pipeline(&schema, &train_dialogues, &templates, &cfg)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let checkpoint = Checkpoint::from_model(&trained.model);
    let checkpoint_out = args.out_dir.join("checkpoint.json");
    checkpoint.save(&checkpoint_out)?;
    let adapter_out = args.out_dir.join("adapter.json");
    checkpoint.adapter_only().save(&adapter_out)?;

    let mut traces = String::from("stage\tstep\tloss\n");
    for (step, loss) in &trained.pretrain_outcome.loss_trace {
        traces.push_str(&format!("pretrain\t{step}\t{loss}\n"));
    }
    for (step, loss) in &trained.lora_outcome.loss_trace {
        traces.push_str(&format!("lora\t{step}\t{loss}\n"));
    }
    let trace_out = args.out_dir.join("loss_trace.tsv");
    write_file(&trace_out, &traces)?;

    println!(
        "pretrain: {} samples, loss {:.4} -> {:.4}",
        trained.n_pretrain_samples,
        trained.pretrain_outcome.initial_loss,
        trained.pretrain_outcome.final_loss
    );
    println!(
        "lora:     {} samples, loss {:.4} -> {:.4}",
        trained.n_lora_samples,
        trained.lora_outcome.initial_loss,
        trained.lora_outcome.final_loss
    );
    println!("checkpoint -> {}", checkpoint_out.display());
    RunManifest::new("train-toy")
        .seed("train", args.seed)
        .config(&cfg)
        .input(&args.schema)
        .input(&args.train)
        .output(&checkpoint_out)
        .output(&adapter_out)
        .output(&trace_out)
        .write(&args.out_dir, started)?;
    Ok(())
}

fn cmd_predict(args: PredictArgs, file_config: &FileConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let schema = read_schema(&args.schema)?;
    let (dialogues, _) = read_dialogues(&args.dialogues, &schema, false)?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let model = checkpoint.to_model()?;
    let templates = match &file_config.templates_dir {
        Some(dir) => TemplateSet::load_dir(dir)?,
        None => TemplateSet::default(),
    };
    let cfg = TrainPipelineConfig {
        decoder: model.config.clone(),
        truncate_budget: model.config.context_len - 32,
        max_new_tokens: args.max_new_tokens,
        ..TrainPipelineConfig::default()
    };
    let preds = predict_pipeline(&model, &schema, &dialogues, &templates, &cfg, "toy-decoder")?;
    write_file(&args.out, &preds.to_jsonl())?;
    println!("wrote {} predictions -> {}", preds.len(), args.out.display());
    RunManifest::new("predict")
        .input(&args.checkpoint)
        .input(&args.schema)
        .input(&args.dialogues)
        .output(&args.out)
        .write(&args.out, started)?;
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let schema = read_schema(&args.schema)?;
    let (dialogues, _) = read_dialogues(&args.dialogues, &schema, false)?;
    let preds_text = std::fs::read_to_string(&args.preds)?;
    let preds = PredictionSet::from_jsonl(&preds_text, args.preds.display().to_string())
        .map_err(|e| CliError::data(format!("predictions file: {e}")))?;
    let policy = match args.policy {
        PolicyFlag::Exact => MatchPolicy::Exact,
        PolicyFlag::Relaxed => MatchPolicy::Relaxed,
    };
    let report = eval_predictions(&preds, &schema, &dialogues, policy)?;
    write_file(
        &args.out,
        &serde_json::to_string_pretty(&report).expect("report serialization"),
    )?;
    println!("jga  {:.4}", report.jga);
    println!("aga  {:.4}", report.aga);
    println!(
        "turns {}  active slots {}  missing predictions {}",
        report.n_turns, report.n_active_slot_instances, report.n_missing_predictions
    );
    if args.errors {
        let taxonomy = &report.error_taxonomy;
        println!(
            "errors: {} missed, {} hallucinated, {} dontcare confusions, {} wrong values",
            taxonomy.missed, taxonomy.hallucinated, taxonomy.dontcare_confusion, taxonomy.wrong_value
        );
        for (slot, count) in report.per_slot_errors.iter().take(5) {
            println!("  {slot}: {count}");
        }
    }
    if args.per_turn {
        let table_out = args.out.with_extension("per_turn.tsv");
        let named = [("eval".to_string(), &report)];
        write_file(&table_out, &plots::per_turn_table(&named))?;
        println!("per-turn table -> {}", table_out.display());
    }
    RunManifest::new("eval")
        .input(&args.schema)
        .input(&args.dialogues)
        .input(&args.preds)
        .output(&args.out)
        .write(&args.out, started)?;
    Ok(())
}

fn cmd_sweep(args: SweepArgs, file_config: &FileConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let _ = file_config;
    let schema = read_schema(&args.schema)?;
    let (dialogues, _) = read_dialogues(&args.dialogues, &schema, false)?;
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let model = checkpoint.to_model()?;
    let cfg = TrainPipelineConfig {
        decoder: model.config.clone(),
        truncate_budget: model.config.context_len - 32,
        ..TrainPipelineConfig::default()
    };
    let reports = sweep_pipeline(&model, &schema, &dialogues, &cfg)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for (name, report) in &reports {
        let path = args.out_dir.join(format!("report_{name}.json"));
        write_file(&path, &serde_json::to_string_pretty(report).expect("report"))?;
        rows.push((name.clone(), report.jga));
        outputs.push(path);
        println!("prompt {name}: jga {:.4}", report.jga);
    }
    let summary = prompt_sensitivity(
        &reports.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>(),
    )?;
    let summary_out = args.out_dir.join("sensitivity.json");
    write_file(
        &summary_out,
        &serde_json::to_string_pretty(&summary).expect("summary"),
    )?;
    let table_out = args.out_dir.join("sensitivity.tsv");
    write_file(&table_out, &plots::sensitivity_table(&rows, &summary))?;
    let svg_out = args.out_dir.join("sensitivity.svg");
    write_file(&svg_out, &plots::sensitivity_svg(&rows))?;
    println!(
        "sweep over {} prompts: mean {:.4}, variance {:.6}",
        summary.n, summary.mean, summary.variance
    );
    let mut manifest = RunManifest::new("prompt-sweep")
        .input(&args.checkpoint)
        .input(&args.schema)
        .input(&args.dialogues)
        .output(&summary_out)
        .output(&table_out);
    for path in &outputs {
        manifest = manifest.output(path);
    }
    manifest.write(&args.out_dir, started)?;
    Ok(())
}

fn cmd_query(args: QueryArgs, file_config: &FileConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let schema = read_schema(&args.schema)?;
    let (dialogues, _) = read_dialogues(&args.dialogues, &schema, false)?;
    let gw = &file_config.gateway;
    let endpoint = args
        .endpoint
        .clone()
        .or_else(|| gw.endpoint.clone())
        .ok_or_else(|| CliError::usage("--endpoint (or [gateway].endpoint) is required"))?;
    let cache_dir = args
        .cache_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("llm-cache"));
    let mut config = GatewayConfig::new(endpoint, &cache_dir);
    if let Some(model) = args.model.clone().or_else(|| gw.model.clone()) {
        config.model = model;
    }
    if let Some(v) = gw.max_in_flight {
        config.max_in_flight = v;
    }
    if let Some(v) = gw.requests_per_minute {
        config.requests_per_minute = v;
    }
    if let Some(v) = gw.max_attempts {
        config.retry.max_attempts = v;
    }
    if let Some(v) = gw.backoff_base_ms {
        config.retry = RetryPolicy {
            max_attempts: config.retry.max_attempts,
            backoff_base_ms: v,
        };
    }
    if let Some(v) = args.api_key_env.clone().or_else(|| gw.api_key_env.clone()) {
        config.api_key_env = v;
    }
    if let Some(v) = gw.temperature {
        config.temperature = v;
    }
    let gateway = Gateway::new(config)?;
    let templates = TemplateSet::default();
    let demo = DemoExemplar::default();
    let mode = match args.mode {
        ModeFlag::SingleNoDemo => RemotePromptMode::SingleNoDemo,
        ModeFlag::MultiNoDemo => RemotePromptMode::MultiNoDemo,
        ModeFlag::SingleOneDemo => RemotePromptMode::SingleOneDemo,
        ModeFlag::MultiOneDemo => RemotePromptMode::MultiOneDemo,
    };

    let mut preds = PredictionSet::new(format!("remote:{}", mode.as_str()));
    let mut issued = 0usize;
    let mut parse_warnings = 0usize;
    'outer: for dialogue in &dialogues {
        for turn_index in 1..=dialogue.n_turns() {
            let context = render_context(&dialogue.turns[..turn_index], &templates);
            if mode.is_single() {
                for slot in schema.slots() {
                    if args.limit > 0 && issued >= args.limit {
                        break 'outer;
                    }
                    let prompt = remote_prompt(
                        mode,
                        &context,
                        RemoteQuery::Slot(slot),
                        mode.needs_demo().then_some(&demo),
                    )?;
                    let record = gateway.complete(&prompt)?;
                    issued += 1;
                    let parsed = parse_single_return(&record.response);
                    if !parsed.valid {
                        parse_warnings += 1;
                    }
                    preds.insert(&dialogue.id, turn_index, &slot.slot_id(), parsed.value);
                }
            } else {
                if args.limit > 0 && issued >= args.limit {
                    break 'outer;
                }
                let prompt = remote_prompt(
                    mode,
                    &context,
                    RemoteQuery::AllSlots(&schema),
                    mode.needs_demo().then_some(&demo),
                )?;
                let record = gateway.complete(&prompt)?;
                issued += 1;
                let parsed = parse_multi_return(&record.response, &schema);
                if !parsed.valid {
                    parse_warnings += 1;
                }
                for slot in schema.slots() {
                    let slot_id = slot.slot_id();
                    preds.insert(
                        &dialogue.id,
                        turn_index,
                        &slot_id,
                        parsed.state.get(&slot_id).clone(),
                    );
                }
            }
        }
    }
    write_file(&args.out, &preds.to_jsonl())?;
    println!(
        "issued {issued} requests ({parse_warnings} parse warnings), wrote {} predictions -> {}",
        preds.len(),
        args.out.display()
    );
    RunManifest::new("query-llm")
        .input(&args.schema)
        .input(&args.dialogues)
        .output(&args.out)
        .write(&args.out, started)?;
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<(), CliError> {
    let started = Instant::now();
    if args.report.is_empty() {
        return Err(CliError::usage("at least one --report file is required"));
    }
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for path in &args.report {
        let text = std::fs::read_to_string(path)?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "report".into());
        reports.push((name, report));
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let named: Vec<(String, &EvalReport)> =
        reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    let table_out = args.out_dir.join("per_turn.tsv");
    write_file(&table_out, &plots::per_turn_table(&named))?;
    let svg_out = args.out_dir.join("per_turn.svg");
    write_file(&svg_out, &plots::per_turn_svg(&named))?;
    let mut outputs = vec![table_out, svg_out];

    if reports.len() >= 2 {
        let rows: Vec<(String, f64)> =
            reports.iter().map(|(n, r)| (n.clone(), r.jga)).collect();
        let summary =
            prompt_sensitivity(&reports.iter().map(|(_, r)| r.clone()).collect::<Vec<_>>())?;
        let box_out = args.out_dir.join("sensitivity.tsv");
        write_file(&box_out, &plots::sensitivity_table(&rows, &summary))?;
        let box_svg = args.out_dir.join("sensitivity.svg");
        write_file(&box_svg, &plots::sensitivity_svg(&rows))?;
        outputs.push(box_out);
        outputs.push(box_svg);
    }
    println!("plots -> {}", args.out_dir.display());
    let mut manifest = RunManifest::new("plot");
    for path in &args.report {
        manifest = manifest.input(path);
    }
    for path in &outputs {
        manifest = manifest.output(path);
    }
    manifest.write(&args.out_dir, started)?;
    Ok(())
}

fn cmd_merge(args: MergeArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let fused = checkpoint.merged()?;
    fused.save(&args.out)?;
    println!(
        "fused {} adapter tensors into base -> {}",
        checkpoint.adapters.len(),
        args.out.display()
    );
    RunManifest::new("merge")
        .input(&args.checkpoint)
        .output(&args.out)
        .write(&args.out, started)?;
    Ok(())
}
