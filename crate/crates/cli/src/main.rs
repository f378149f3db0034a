mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use config::{BackendKind, Settings};
use hcqa_core::caption_store::ingest_caption_doc;
use hcqa_core::eval_report::{ablation_table, compute_accuracy, emit_submission, render_ablation_table, render_report, GroundTruth};
use hcqa_core::llm_backend::{
    Backend, BackendError, FnBackend, LiveBackend, RateLimiter, RecordMode, RecordReplayBackend, ScriptedBackend,
    SystemClock, UreqTransport,
};
use hcqa_core::orchestrator::{dry_run, load_corpus, resume, run_batch, BatchJob, ResponseCache, RunTrace};
use hcqa_core::prompting::{IclLibrary, TemplateSet};

#[derive(Parser)]
#[command(name = "hcqa", version, about = "Caption-summarize-answer batch runs for long-form video QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Check every caption document (*.json) in a directory.
    Validate { dir: PathBuf },
    /// Run (or resume, or dry-run) a batch and write its trace.
    Run(RunArgs),
    /// Score a trace against ground truth.
    Eval {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Compare traces in the given order, one row per trace.
    Ablate {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write the `{question_uid: option_index}` submission file.
    Submit {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Option submitted for questions without an answer.
        #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u8).range(0..=4))]
        fallback: u8,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base preset, P1..P6.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    captions_dir: Option<PathBuf>,
    /// Directory of in-context example files.
    #[arg(long)]
    examples_dir: Option<PathBuf>,
    /// Directory with template overrides (`summary.txt`, ...).
    #[arg(long)]
    templates_dir: Option<PathBuf>,
    /// Trace output; with --dry-run, the prompt manifest.
    #[arg(long)]
    out: PathBuf,
    /// Response cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Continue the trace at --out instead of starting over.
    #[arg(long, conflicts_with = "dry_run")]
    resume: bool,
    /// Render prompts and write a digest manifest without calling a backend.
    #[arg(long)]
    dry_run: bool,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    #[arg(long)]
    endpoint: Option<String>,
    /// Responses for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Record/replay store.
    #[arg(long)]
    store: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    k: Option<u8>,
    #[arg(long)]
    threshold: Option<u8>,
    #[arg(long)]
    model: Option<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { dir } => validate(&dir),
        Command::Run(args) => run(args),
        Command::Eval { trace, gt, json } => eval(&trace, &gt, json.as_deref()),
        Command::Ablate { traces, gt, json } => ablate(&traces, &gt, json.as_deref()),
        Command::Submit { trace, out, fallback } => submit(&trace, &out, fallback),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn validate(dir: &Path) -> Result<ExitCode> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        eprintln!("{}: no inputs", dir.display());
        return Ok(ExitCode::FAILURE);
    }
    let mut bad = 0;
    for f in &files {
        let name = f.file_name().unwrap_or_default().to_string_lossy();
        let checked = std::fs::read(f).map_err(|e| e.to_string()).and_then(|b| ingest_caption_doc(&b).map_err(|e| e.to_string()));
        match checked {
            Ok(doc) => println!("ok    {name} ({} clips, {} captions)", doc.clips().len(), doc.total_captions()),
            Err(e) => {
                bad += 1;
                println!("FAIL  {name}: {e}");
            }
        }
    }
    println!("{} of {} valid", files.len() - bad, files.len());
    Ok(if bad == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn apply_flags(args: &RunArgs, s: &mut Settings) {
    let p = &mut s.pipeline;
    if let Some(c) = args.concurrency {
        p.concurrency = c;
    }
    if let Some(k) = args.k {
        p.k = k;
    }
    if let Some(t) = args.threshold {
        p.threshold = t;
    }
    if let Some(m) = &args.model {
        p.model_name = m.clone();
    }
    let b = &mut s.backend;
    if let Some(kind) = args.backend {
        b.kind = kind;
    }
    if let Some(e) = &args.endpoint {
        b.endpoint = e.clone();
    }
    if args.script.is_some() {
        b.script = args.script.clone();
    }
    if args.store.is_some() {
        b.store = args.store.clone();
    }
    for (flag, slot) in [
        (&args.cache, &mut s.cache),
        (&args.corpus, &mut s.corpus),
        (&args.captions_dir, &mut s.captions_dir),
        (&args.examples_dir, &mut s.examples_dir),
        (&args.templates_dir, &mut s.templates_dir),
    ] {
        if flag.is_some() {
            *slot = flag.clone();
        }
    }
}

fn live_backend(s: &Settings) -> Result<Arc<dyn Backend>> {
    let transport = Arc::new(UreqTransport::new(Duration::from_secs(s.backend.timeout_s)));
    let mut live = LiveBackend::from_env(&s.backend.endpoint, transport)?.with_policy(s.backend.retry.clone());
    if s.pipeline.rpm.is_some() || s.pipeline.tpm.is_some() {
        live = live.with_limiter(Arc::new(RateLimiter::new(s.pipeline.rpm, s.pipeline.tpm, Arc::new(SystemClock::new()))));
    }
    Ok(Arc::new(live))
}

fn build_backend(s: &Settings) -> Result<Arc<dyn Backend>> {
    let store = || s.backend.store.as_deref().ok_or_else(|| anyhow!("backend `{:?}` needs a store path", s.backend.kind));
    Ok(match s.backend.kind {
        BackendKind::Live => live_backend(s)?,
        BackendKind::Scripted => {
            let script = s.backend.script.as_deref().ok_or_else(|| anyhow!("scripted backend needs a script file"))?;
            Arc::new(ScriptedBackend::load(script)?)
        }
        BackendKind::Record => Arc::new(RecordReplayBackend::open(RecordMode::Record, store()?, Some(live_backend(s)?))?),
        BackendKind::Replay => Arc::new(RecordReplayBackend::open(RecordMode::Replay, store()?, None)?),
    })
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut s = config::load(args.config.as_deref(), args.preset.as_deref())?;
    apply_flags(&args, &mut s);
    s.pipeline.validate().map_err(|e| anyhow!("invalid configuration: {e}"))?;

    // setup errors (missing key, bad store) surface before any input is read
    let backend: Arc<dyn Backend> = if args.dry_run {
        Arc::new(FnBackend::new(|_: &_| Err::<String, _>(BackendError::Setup("dry run makes no requests".into()))))
    } else {
        build_backend(&s)?
    };

    let corpus_path = s.corpus.as_deref().ok_or_else(|| anyhow!("no corpus given (--corpus or `corpus` in config)"))?;
    let captions_dir = s.captions_dir.as_deref().ok_or_else(|| anyhow!("no captions directory given"))?;
    let corpus = load_corpus(corpus_path, captions_dir)?;
    let templates = match &s.templates_dir {
        Some(d) => TemplateSet::from_dir(d)?,
        None => TemplateSet::builtin(),
    };
    let examples = match &s.examples_dir {
        Some(d) => IclLibrary::load_dir(d)?,
        None => IclLibrary::default(),
    };
    let cache = Arc::new(match &s.cache {
        Some(p) => ResponseCache::open(p)?,
        None => ResponseCache::in_memory(),
    });
    let job = BatchJob { corpus: &corpus, config: &s.pipeline, templates: &templates, examples: &examples, backend, cache };

    if args.dry_run {
        let manifest = dry_run(&job)?;
        let mut out = String::new();
        for entry in &manifest {
            out.push_str(&serde_json::to_string(entry)?);
            out.push('\n');
        }
        std::fs::write(&args.out, out).with_context(|| format!("writing {}", args.out.display()))?;
        println!("dry run: {} prompts for {} questions, manifest {}", manifest.len(), corpus.len(), args.out.display());
        return Ok(ExitCode::SUCCESS);
    }

    let trace = if args.resume && args.out.exists() {
        resume(&args.out, &job)?
    } else {
        if args.resume {
            log::warn!("{} does not exist; starting a fresh run", args.out.display());
        }
        run_batch(&job, Some(&args.out))?
    };
    let t = trace.totals();
    println!(
        "run {}: {} questions ({} executed), {} failed, {} reflected, {} backend calls, {} cache hits -> {}",
        trace.header.run_id,
        t.questions,
        trace.stats.executed,
        t.failures,
        t.reflections,
        trace.stats.backend_calls,
        trace.stats.cache_hits,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn read_gt(path: &Path) -> Result<GroundTruth> {
    let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    GroundTruth::from_json(&raw).with_context(|| format!("ground truth {}", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn eval(trace: &Path, gt: &Path, json: Option<&Path>) -> Result<ExitCode> {
    let report = compute_accuracy(&RunTrace::read(trace)?, &read_gt(gt)?)?;
    print!("{}", render_report(&report));
    if let Some(p) = json {
        write_json(p, &report)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn ablate(traces: &[PathBuf], gt: &Path, json: Option<&Path>) -> Result<ExitCode> {
    let gt = read_gt(gt)?;
    let reports = traces
        .iter()
        .map(|t| Ok(compute_accuracy(&RunTrace::read(t)?, &gt)?))
        .collect::<Result<Vec<_>>>()?;
    let rows = ablation_table(&reports);
    print!("{}", render_ablation_table(&rows));
    if let Some(p) = json {
        write_json(p, &rows)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn submit(trace: &Path, out: &Path, fallback: u8) -> Result<ExitCode> {
    let trace = RunTrace::read(trace)?;
    let sub = emit_submission(&trace, fallback);
    std::fs::write(out, &sub.json).with_context(|| format!("writing {}", out.display()))?;
    let sidecar = warnings_path(out);
    if sub.warnings.is_empty() {
        if sidecar.exists() {
            std::fs::remove_file(&sidecar)?;
        }
    } else {
        let mut f = std::fs::File::create(&sidecar)?;
        for w in &sub.warnings {
            writeln!(f, "{w}")?;
            eprintln!("warning: {w}");
        }
    }
    println!("{} answers -> {} ({} fallbacks)", trace.records.len(), out.display(), sub.warnings.len());
    Ok(ExitCode::SUCCESS)
}

fn warnings_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".warnings.txt");
    PathBuf::from(name)
}
