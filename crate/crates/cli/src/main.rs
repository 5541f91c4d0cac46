use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use styleforge::adapters::{backend_config, load_classifier, make_llm, BackendKind, DecodingParams};
use styleforge::attribution::{mask_sentence, MaskingConfig};
use styleforge::config::{Config, ConfigError};
use styleforge::corpus::{corpus_path, load_corpus, split_corpus, SplitSpec};
use styleforge::llm::{run_llm_eval, select_few_shot, write_llm_log, PromptTemplate, DEFAULT_SHOTS};
use styleforge::orchestrate::{
    self, cell_dir, collect_reports, corpus_from_outputs, ensure_classifier, evaluate_run_dir,
    prepare_languages, read_outputs, write_outputs, write_report, CellFilter, OutputRecord, RunSummary,
    Stage,
};
use styleforge::pipelines::MethodologyKind;
use styleforge::report::{
    aggregate_human_eval, fixtures, human_eval_sheets, read_key, read_rated_sheet, write_sheets,
    HumanEvalSource,
};
use styleforge::{Direction, LanguageTag, Polarity};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "styleforge", version, about = "Multilingual sentiment-transfer experiments")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load corpora, split them and write split manifests.
    Prepare(ConfigArg),
    /// Train every selected cell.
    Train(CellArgs),
    /// Train (if needed) and generate outputs for every selected cell.
    Infer(CellArgs),
    /// Score a run directory.
    Eval(EvalArgs),
    /// Prompt an LLM on one language and direction.
    Llm(LlmArgs),
    /// Mask style words in sentences with integrated gradients.
    Mask(MaskArgs),
    /// Render the results table and plots from run directories.
    Report(ReportArgs),
    /// Human-evaluation sheets and aggregation.
    #[command(name = "human-eval", subcommand)]
    HumanEval(HumanEvalCommand),
    /// Every stage end to end, then the report.
    Run(CellArgs),
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct CellArgs {
    #[arg(long)]
    config: PathBuf,
    /// Only these languages (repeatable).
    #[arg(long = "lang")]
    languages: Vec<String>,
    /// Only these methodologies (repeatable).
    #[arg(long = "methodology")]
    methodologies: Vec<String>,
    /// Only these seeds (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the config recorded in the run's metadata.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct LlmArgs {
    #[arg(long)]
    lang: String,
    #[arg(long)]
    direction: String,
    /// `echo`, `tiny-random`, or a name for an OpenAI-compatible endpoint.
    #[arg(long)]
    backend: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus directory when no config is given.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    #[arg(long)]
    shots: Option<usize>,
    /// Defaults to `runs/<lang>/llm/<seed>`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long)]
    lang: String,
    #[arg(long, default_value_t = 0.25)]
    threshold: f64,
    #[arg(long, default_value_t = 50)]
    ig_steps: usize,
    /// Text lines, or JSON lines with `text` and optional `label`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Saved classifier (`model.json`).
    #[arg(long, conflicts_with = "config")]
    classifier: Option<PathBuf>,
    /// Train or reuse the configured classifier for `--lang`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Source polarity of every sentence; predicted when omitted.
    #[arg(long)]
    label: Option<String>,
    #[arg(long, default_value_t = 13)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Collect `report.json` files below this directory.
    #[arg(long, required_unless_present = "published")]
    runs_dir: Option<PathBuf>,
    /// Render the published reference results instead.
    #[arg(long)]
    published: bool,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    no_plots: bool,
}

#[derive(Subcommand)]
enum HumanEvalCommand {
    /// Sample items from run directories and write blinded annotator sheets.
    Sheets {
        #[arg(long = "run-dir", required = true)]
        run_dirs: Vec<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        annotators: usize,
        #[arg(long, default_value_t = 13)]
        seed: u64,
    },
    /// Average rated sheets per (language, model).
    Aggregate {
        #[arg(long)]
        key: PathBuf,
        #[arg(long = "sheet", required = true)]
        sheets: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Bad arguments detected after parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<styleforge::Error>() {
            if e.is_config_error() {
                return EXIT_CONFIG;
            }
        }
    }
    EXIT_RUNTIME
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Prepare(a) => prepare(&a.config),
        Command::Train(a) => cells(&a, Stage::Train),
        Command::Infer(a) => cells(&a, Stage::Infer),
        Command::Run(a) => cells(&a, Stage::Report),
        Command::Eval(a) => eval(&a),
        Command::Llm(a) => llm(&a),
        Command::Mask(a) => mask(&a),
        Command::Report(a) => report(&a),
        Command::HumanEval(c) => human_eval(c),
    }
}

fn load_config(path: &Path) -> anyhow::Result<Config> {
    Ok(Config::load(path)?)
}

fn parse_lang(s: &str) -> anyhow::Result<LanguageTag> {
    s.parse::<LanguageTag>().map_err(|e| usage(e.to_string()))
}

fn prepare(config: &Path) -> anyhow::Result<ExitCode> {
    let cfg = load_config(config)?;
    let data = orchestrate::prepare(&cfg)?;
    for ((lang, seed), d) in &data {
        println!(
            "{} seed {seed}: train {} dev {} test {}",
            lang.code(),
            d.splits.train.len(),
            d.splits.dev.len(),
            d.splits.test.len()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cells(a: &CellArgs, upto: Stage) -> anyhow::Result<ExitCode> {
    let cfg = load_config(&a.config)?;
    let filter = CellFilter {
        languages: a.languages.iter().map(|l| parse_lang(l)).collect::<anyhow::Result<_>>()?,
        methodologies: a
            .methodologies
            .iter()
            .map(|m| m.parse::<MethodologyKind>().map_err(usage))
            .collect::<anyhow::Result<_>>()?,
        seeds: a.seeds.clone(),
    };
    let summary = orchestrate::run(&cfg, upto, &filter)?;
    print_summary(&summary);
    if let Some(files) = &summary.report_files {
        if let Some(n) = &files.plot_notice {
            println!("plots: {n}");
        }
        if let Some(table) = files.files.iter().find(|p| p.ends_with("table.txt")) {
            print!("{}", std::fs::read_to_string(table).unwrap_or_default());
        }
    }
    let failed = summary.failures().count();
    if failed > 0 {
        eprintln!("{failed} cell(s) failed");
        return Ok(ExitCode::from(EXIT_RUNTIME));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(s: &RunSummary) {
    for c in &s.cells {
        let status = if let Some(e) = &c.error {
            format!("FAILED: {e}")
        } else if let Some(r) = &c.skipped {
            format!("skipped: {r}")
        } else if c.executed.is_empty() {
            "up to date".to_string()
        } else {
            let names: Vec<&str> = c.executed.iter().map(|s| s.name()).collect();
            format!("ran {}", names.join(", "))
        };
        println!("{:<3} {:<12} seed {:<4} {status}", c.language.code(), c.methodology.name(), c.seed);
    }
}

fn eval(a: &EvalArgs) -> anyhow::Result<ExitCode> {
    let config = match &a.config {
        Some(c) => c.clone(),
        None => {
            let md_path = a.run_dir.join("metadata.json");
            let md: serde_json::Value = serde_json::from_str(
                &std::fs::read_to_string(&md_path).with_context(|| format!("reading {}", md_path.display()))?,
            )?;
            md["config"]
                .as_str()
                .map(PathBuf::from)
                .ok_or_else(|| usage("run metadata records no config; pass --config"))?
        }
    };
    let cfg = load_config(&config)?;
    let report = evaluate_run_dir(&cfg, &a.run_dir)?;
    std::fs::write(&a.out, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{} {}: ACC {:.1} BLEU {:.1} CS {:.1} PPL {:.1} AVG {:.1}",
        report.language.code(),
        report.methodology,
        report.acc,
        report.bleu,
        report.cs,
        report.ppl,
        report.avg
    );
    Ok(ExitCode::SUCCESS)
}

fn llm(a: &LlmArgs) -> anyhow::Result<ExitCode> {
    let lang = parse_lang(&a.lang)?;
    let direction: Direction = a.direction.parse().map_err(usage)?;
    let cfg = a.config.as_deref().map(load_config).transpose()?;
    let (data_dir, spec, runs_dir, mut backend, decoding, shots) = match &cfg {
        Some(c) => (
            c.data.dir.clone(),
            c.data.split_spec(a.seed),
            c.data.runs_dir.clone(),
            c.backend(BackendKind::Llm).cloned().unwrap_or_default(),
            c.experiments.decoding,
            c.experiments.shots,
        ),
        None => (
            a.data_dir.clone().ok_or_else(|| usage("pass --config or --data-dir"))?,
            SplitSpec { seed: a.seed, ..SplitSpec::default() },
            PathBuf::from("runs"),
            backend_config([]),
            DecodingParams::default(),
            DEFAULT_SHOTS,
        ),
    };
    backend.insert("backend".into(), a.backend.clone());
    if let Some(e) = &a.endpoint {
        backend.insert("endpoint".into(), e.clone());
    }
    if let Some(m) = &a.model {
        backend.insert("model".into(), m.clone());
    }
    if backend.contains_key("api_key") {
        return Err(usage("API keys are read from the environment (LLM_API_KEY), not from config"));
    }
    let client = make_llm(&backend).map_err(|e| usage(e.to_string()))?;
    let corpus = load_corpus(&corpus_path(&data_dir, lang), lang)?;
    let splits = split_corpus(&corpus, &spec)?;
    let examples = select_few_shot(&splits.dev, a.shots.unwrap_or(shots), a.seed)?;
    let templates = BTreeMap::from([(direction, PromptTemplate::new(lang, direction, examples))]);
    let run = run_llm_eval(client.as_ref(), &templates, &splits.test, &decoding)?;

    let out_dir = a
        .out_dir
        .clone()
        .unwrap_or_else(|| cell_dir(&runs_dir, lang, MethodologyKind::Llm, a.seed));
    let failed = &run.failed[&direction];
    let records: Vec<OutputRecord> = styleforge::corpus::direction_view(&splits.test, direction)
        .into_iter()
        .zip(&run.outputs[&direction])
        .enumerate()
        .map(|(i, (e, o))| OutputRecord {
            pair_id: e.pair_id,
            input: e.input,
            target: e.target,
            output: o.clone(),
            flagged: failed.contains(&i),
        })
        .collect();
    let path = write_outputs(&out_dir, direction, &records)?;
    write_llm_log(&out_dir.join("llm_log.jsonl"), &run.log)?;
    let mut md = run.metadata();
    md.insert("language".into(), json!(lang.code()));
    md.insert("methodology".into(), json!(MethodologyKind::Llm.name()));
    md.insert("seed".into(), json!(a.seed));
    md.insert("backend".into(), json!(a.backend));
    md.insert("direction".into(), json!(direction.code()));
    if let Some(c) = cfg.as_ref().and_then(|c| c.source.clone()) {
        md.insert("config".into(), json!(c));
    }
    std::fs::write(out_dir.join("metadata.json"), serde_json::to_string_pretty(&md)?)?;
    println!(
        "{} outputs ({} failed, {} retries) -> {}",
        records.len(),
        failed.len(),
        run.retries,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn mask(a: &MaskArgs) -> anyhow::Result<ExitCode> {
    let lang = parse_lang(&a.lang)?;
    let cfg = MaskingConfig {
        threshold: a.threshold,
        ig_steps: a.ig_steps,
        ..MaskingConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let default_label = a
        .label
        .as_deref()
        .map(|l| l.parse::<Polarity>().map_err(usage))
        .transpose()?;
    let classifier = match (&a.classifier, &a.config) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            load_classifier(serde_json::from_str(&text)?)?
        }
        (None, Some(config)) => {
            let c = load_config(config)?;
            let data = prepare_languages(&c, &[lang], &[a.seed])?;
            ensure_classifier(&c, lang, a.seed, &data[&(lang, a.seed)])?.0
        }
        (None, None) => return Err(usage("pass --classifier or --config")),
    };
    let text = std::fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?,
    );
    let mut n = 0usize;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (sentence, label) = if line.trim_start().starts_with('{') {
            let v: serde_json::Value =
                serde_json::from_str(line).with_context(|| format!("line {}: invalid JSON", i + 1))?;
            let s = v["text"]
                .as_str()
                .ok_or_else(|| anyhow!("line {}: missing \"text\"", i + 1))?
                .to_string();
            let l = v["label"].as_str().map(|l| l.parse::<Polarity>().map_err(|e| anyhow!(e))).transpose()?;
            (s, l)
        } else {
            (line.to_string(), None)
        };
        let label = match label.or(default_label) {
            Some(l) => l,
            None => classifier.predict(&sentence)?,
        };
        let masked = mask_sentence(classifier.as_ref(), &sentence, label, &cfg)
            .with_context(|| format!("line {}", i + 1))?;
        serde_json::to_writer(&mut out, &masked)?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.flush()?;
    println!("masked {n} sentences -> {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn report(a: &ReportArgs) -> anyhow::Result<ExitCode> {
    let reports = if a.published {
        fixtures::published_results().iter().map(|c| c.to_report()).collect()
    } else {
        let dir = a.runs_dir.as_ref().expect("clap requires --runs-dir without --published");
        orchestrate::average_over_seeds(&collect_reports(dir)?)
    };
    if reports.is_empty() {
        eprintln!("no reports found");
    }
    let files = write_report(&reports, &a.out_dir, !a.no_plots)?;
    if let Some(n) = &files.plot_notice {
        println!("plots: {n}");
    }
    for f in &files.files {
        println!("wrote {}", f.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn human_eval(cmd: HumanEvalCommand) -> anyhow::Result<ExitCode> {
    match cmd {
        HumanEvalCommand::Sheets {
            run_dirs,
            out_dir,
            n,
            annotators,
            seed,
        } => {
            if annotators == 0 {
                return Err(usage("--annotators must be at least 1"));
            }
            let mut sources = Vec::new();
            for dir in &run_dirs {
                let md: serde_json::Value = serde_json::from_str(
                    &std::fs::read_to_string(dir.join("metadata.json"))
                        .with_context(|| format!("reading {}/metadata.json", dir.display()))?,
                )?;
                let language = parse_lang(md["language"].as_str().unwrap_or_default())?;
                let model = md["methodology"].as_str().unwrap_or("unknown").to_string();
                let outputs = read_outputs(dir)?;
                let test = corpus_from_outputs(language, &outputs)?;
                let outputs = outputs
                    .into_iter()
                    .map(|(d, rs)| (d, rs.into_iter().map(|r| r.output).collect()))
                    .collect();
                sources.push(HumanEvalSource {
                    model,
                    language,
                    test,
                    outputs,
                });
            }
            let items = human_eval_sheets(&sources, n, seed)?;
            let paths = write_sheets(&out_dir, &items, annotators, seed)?;
            for p in paths {
                println!("wrote {}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        HumanEvalCommand::Aggregate { key, sheets, out } => {
            let key = read_key(&key)?;
            let mut rows = Vec::new();
            for s in &sheets {
                rows.extend(read_rated_sheet(s)?);
            }
            let summary = aggregate_human_eval(&rows, &key)?;
            for m in &summary.means {
                println!(
                    "{:<3} {:<12} style {:.2} content {:.2} fluency {:.2} ({} rows)",
                    m.language.code(),
                    m.model,
                    m.style,
                    m.content,
                    m.fluency,
                    m.rows
                );
            }
            if summary.excluded > 0 {
                println!("excluded {} incompletely rated rows", summary.excluded);
            }
            if let Some(out) = out {
                std::fs::write(&out, serde_json::to_string_pretty(&summary)?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
