//! `leap`: learn, detect, export-sft, eval and tool subcommands.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use leap_core::agents::{PromptName, PromptTemplate};
use leap_core::config::{Config, EmbedderKind};
use leap_core::eval::{self, DatasetFormat, EvalReport, PerClaim, ReportFormat};
use leap_core::loops;
use leap_core::records;
use leap_core::runtime::{self, BackendChoice, Mode, Runtime};
use leap_core::tools::{signature, ArgType};
use leap_core::{Action, ArgValue, Claim, Tool, Trajectory};

#[derive(Parser)]
#[command(name = "leap", version, about = "Tool-augmented hallucination detection")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the strategy-learning loop over a labelled dataset.
    Learn {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// native, halueval_qa or generic_pairs.
        #[arg(long, default_value = "native")]
        format: String,
        /// Output directory (defaults to paths.out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Memory directory (defaults to paths.memory_dir).
        #[arg(long)]
        memory_dir: Option<PathBuf>,
        #[arg(long)]
        concurrency: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Learn on a seeded sample of this many claims.
        #[arg(long)]
        n: Option<usize>,
        /// Stop at the first failed claim and exit non-zero.
        #[arg(long)]
        strict: bool,
    },
    /// Detect hallucinations with pre-execution strategy correction.
    Detect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        claims: PathBuf,
        #[arg(long, default_value = "native")]
        format: String,
        /// Verdict file to write.
        #[arg(long)]
        out: PathBuf,
        /// Also write the executed trajectories here.
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[arg(long)]
        memory_dir: Option<PathBuf>,
        /// Store correction reflections in the planner memory.
        #[arg(long)]
        online_memory: bool,
        #[arg(long)]
        concurrency: Option<usize>,
    },
    /// Curate learned trajectories and write the fine-tuning file.
    ExportSft {
        #[arg(long)]
        trajectories: PathBuf,
        /// Claims with gold labels (defaults to claims.jsonl beside the trajectories).
        #[arg(long)]
        claims: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect on a seeded test split and report accuracy and F1.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "native")]
        format: String,
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// text_table or machine.
        #[arg(long, default_value = "text_table")]
        report_format: String,
        /// Also write per-claim verdicts here.
        #[arg(long)]
        verdicts: Option<PathBuf>,
        #[arg(long)]
        memory_dir: Option<PathBuf>,
        #[arg(long)]
        concurrency: Option<usize>,
    },
    /// Invoke one tool and print its result as JSON.
    Tool {
        #[arg(long)]
        config: Option<PathBuf>,
        name: String,
        args: Vec<String>,
    },
}

/// An error with its exit code.
struct Fail {
    code: u8,
    error: anyhow::Error,
}

trait Classify<T> {
    fn invalid(self) -> Result<T, Fail>;
    fn runtime(self) -> Result<T, Fail>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn invalid(self) -> Result<T, Fail> {
        self.map_err(|e| Fail {
            code: 1,
            error: e.into(),
        })
    }
    fn runtime(self) -> Result<T, Fail> {
        self.map_err(|e| Fail {
            code: 2,
            error: e.into(),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .init();
    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = cancel.clone();
        if let Err(e) = ctrlc::set_handler(move || {
            eprintln!("interrupt: finishing claims in flight");
            cancel.store(true, Ordering::SeqCst);
        }) {
            tracing::warn!(error = %e, "cannot install interrupt handler");
        }
    }
    match run(cli.command, &cancel) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command, cancel: &AtomicBool) -> Result<(), Fail> {
    match command {
        Command::Learn {
            config,
            dataset,
            format,
            out,
            memory_dir,
            concurrency,
            seed,
            n,
            strict,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(c) = concurrency {
                cfg.learning.concurrency = c;
            }
            if let Some(s) = seed {
                cfg.learning.seed = s;
            }
            if let Some(d) = memory_dir {
                cfg.paths.memory_dir = d;
            }
            if let Some(o) = out {
                cfg.paths.out_dir = o;
            }
            cfg.validate().invalid()?;
            learn(cfg, &dataset, &format, n, strict, cancel)
        }
        Command::Detect {
            config,
            claims,
            format,
            out,
            trajectories,
            memory_dir,
            online_memory,
            concurrency,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(d) = memory_dir {
                cfg.paths.memory_dir = d;
            }
            if let Some(c) = concurrency {
                cfg.learning.concurrency = c;
            }
            cfg.correction.online_memory |= online_memory;
            cfg.validate().invalid()?;
            detect(cfg, &claims, &format, &out, trajectories.as_deref(), cancel)
        }
        Command::ExportSft {
            trajectories,
            claims,
            out,
        } => export_sft(&trajectories, claims.as_deref(), &out),
        Command::Eval {
            config,
            dataset,
            format,
            n,
            seed,
            out,
            report_format,
            verdicts,
            memory_dir,
            concurrency,
        } => {
            let mut cfg = load_config(&config)?;
            if let Some(d) = memory_dir {
                cfg.paths.memory_dir = d;
            }
            if let Some(c) = concurrency {
                cfg.learning.concurrency = c;
            }
            let seed = seed.unwrap_or(cfg.learning.seed);
            let report_format: ReportFormat = report_format.parse().invalid()?;
            cfg.validate().invalid()?;
            evaluate(
                cfg,
                &dataset,
                &format,
                n,
                seed,
                &out,
                report_format,
                verdicts.as_deref(),
                cancel,
            )
        }
        Command::Tool { config, name, args } => tool(config.as_deref(), &name, &args),
    }
}

fn load_config(path: &Path) -> Result<Config, Fail> {
    Config::load(path).invalid()
}

fn build_runtime(cfg: Config) -> Result<Runtime, Fail> {
    let choice = BackendChoice::from_env().invalid()?;
    Runtime::build(cfg, &choice).invalid()
}

fn load_claims(path: &Path, format: &str) -> Result<Vec<Claim>, Fail> {
    let format: DatasetFormat = format.parse().invalid()?;
    eval::load_dataset(path, format).invalid()
}

fn learn(cfg: Config, dataset: &Path, format: &str, n: Option<usize>, strict: bool, cancel: &AtomicBool) -> Result<(), Fail> {
    let mut claims = load_claims(dataset, format)?;
    if let Some(n) = n {
        claims = eval::sample_split(&claims, n, cfg.learning.seed).invalid()?;
    }
    if claims.is_empty() {
        return Err(anyhow!("empty dataset")).invalid();
    }
    if let Some(c) = claims.iter().find(|c| c.gold_label.is_none()) {
        return Err(anyhow!("claim {} has no gold label; learning needs labelled claims", c.id)).invalid();
    }
    let config_hash = cfg.hash();
    let out_dir = cfg.paths.out_dir.clone();
    let memory_dir = cfg.paths.memory_dir.clone();
    let rt = build_runtime(cfg)?;
    let agents = rt.agents(Mode::Learn);
    let start = Instant::now();
    let run = loops::run_learning(&rt, &agents, &claims, strict, cancel).runtime()?;
    std::fs::create_dir_all(&memory_dir)
        .with_context(|| format!("cannot create {}", memory_dir.display()))
        .runtime()?;
    rt.memories.persist(&memory_dir).runtime()?;
    let manifest = loops::write_learning_outputs(
        &out_dir,
        &run,
        &claims,
        &config_hash,
        rt.memories.sizes(),
        start.elapsed().as_millis() as u64,
    )
    .runtime()?;
    println!("{}", serde_json::to_string(&manifest.counts).expect("counts serialize"));
    if run.cancelled {
        return Err(anyhow!("interrupted; partial outputs in {}", out_dir.display())).runtime();
    }
    if strict && !run.failures.is_empty() {
        let f = &run.failures[0];
        return Err(anyhow!("claim {} failed: {}", f.claim_id, f.error)).runtime();
    }
    Ok(())
}

fn detect(
    cfg: Config,
    claims_path: &Path,
    format: &str,
    out: &Path,
    trajectories: Option<&Path>,
    cancel: &AtomicBool,
) -> Result<(), Fail> {
    let claims = load_claims(claims_path, format)?;
    if claims.is_empty() {
        return Err(anyhow!("empty dataset")).invalid();
    }
    let online = cfg.correction.online_memory;
    let memory_dir = cfg.paths.memory_dir.clone();
    let rt = build_runtime(cfg)?;
    let agents = rt.agents(Mode::Detect);
    let run = loops::run_detection(&rt, &agents, &claims, cancel).runtime()?;
    let verdicts = run.verdicts(&claims);
    ensure_parent(out)?;
    records::write_records(out, &verdicts).runtime()?;
    if let Some(path) = trajectories {
        ensure_parent(path)?;
        records::write_records(path, run.trajectories()).runtime()?;
    }
    if online {
        rt.memories.persist(&memory_dir).runtime()?;
    }
    for f in run.failures(&claims) {
        eprintln!("warning: claim {} failed: {}", f.claim_id, f.error);
    }
    println!("{}", verdicts.len());
    if run.cancelled {
        return Err(anyhow!("interrupted; {} verdicts written", verdicts.len())).runtime();
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<(), Fail> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("cannot create {}", parent.display()))
            .runtime()?;
    }
    Ok(())
}

fn export_sft(trajectories: &Path, claims: Option<&Path>, out: &Path) -> Result<(), Fail> {
    let claims_path = match claims {
        Some(p) => p.to_path_buf(),
        None => trajectories
            .parent()
            .unwrap_or(Path::new("."))
            .join(loops::CLAIMS_FILE),
    };
    let trajs: Vec<Trajectory> = records::read_records(trajectories).invalid()?;
    let claims: Vec<Claim> = records::read_records(&claims_path).invalid()?;
    let dataset = loops::curate(&trajs, &claims).invalid()?;
    let count = loops::export_sft(&dataset, out).runtime()?;
    println!("{count}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cfg: Config,
    dataset: &Path,
    format: &str,
    n: usize,
    seed: u64,
    out: &Path,
    report_format: ReportFormat,
    verdicts_path: Option<&Path>,
    cancel: &AtomicBool,
) -> Result<(), Fail> {
    let claims = load_claims(dataset, format)?;
    if let Some(c) = claims.iter().find(|c| c.gold_label.is_none()) {
        return Err(anyhow!("claim {} has no gold label; evaluation needs labelled claims", c.id)).invalid();
    }
    let split = eval::sample_split(&claims, n, seed).invalid()?;
    let config_hash = cfg.hash();
    let rt = build_runtime(cfg)?;
    let agents = rt.agents(Mode::Detect);
    let start = Instant::now();
    let run = loops::run_detection(&rt, &agents, &split, cancel).runtime()?;
    let verdicts = run.verdicts(&split);
    let failures = run.failures(&split);
    for f in &failures {
        eprintln!("warning: claim {} failed: {}", f.claim_id, f.error);
    }
    let per_claim: Vec<PerClaim> = verdicts
        .iter()
        .map(|v| PerClaim {
            id: v.claim_id.clone(),
            gold: v.gold.expect("gold checked at load"),
            predicted: v.label,
            n_steps: v.n_steps,
            corrected: v.corrected,
        })
        .collect();
    let name = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let report = EvalReport::new(name, per_claim, failures.len());
    let text = eval::render_report(&report, report_format);
    ensure_parent(out)?;
    std::fs::write(out, &text)
        .with_context(|| format!("cannot write {}", out.display()))
        .runtime()?;
    if let Some(p) = verdicts_path {
        ensure_parent(p)?;
        records::write_records(p, &verdicts).runtime()?;
    }
    print!("{}", eval::render_report(&report, ReportFormat::TextTable));
    tracing::info!(config_hash, elapsed_ms = start.elapsed().as_millis() as u64, "evaluation done");
    if run.cancelled {
        return Err(anyhow!("interrupted; report covers {} claims", report.n)).runtime();
    }
    Ok(())
}

fn tool(config: Option<&Path>, name: &str, raw: &[String]) -> Result<(), Fail> {
    let Some(tool) = Tool::from_name(name) else {
        let names: Vec<&str> = Tool::ALL.iter().map(|t| t.name()).collect();
        return Err(anyhow!("unknown tool {name:?}; expected one of {}", names.join(", "))).invalid();
    };
    let cfg = match config {
        Some(p) => load_config(p)?,
        None => {
            let mut c = Config::default();
            c.backend.embedder = EmbedderKind::Hashing;
            c
        }
    };
    let choice = BackendChoice::from_env().invalid()?;
    let (chat, embedder) = runtime::providers(&cfg, &choice).invalid()?;
    let search = runtime::search_provider(&cfg).invalid()?;
    let template = PromptTemplate::load(&cfg.paths.prompts_dir, PromptName::Match).ok();
    let toolbox = runtime::build_toolbox(&cfg, chat, embedder, search, template).invalid()?;
    let sig = signature(tool);
    let mut args = Vec::with_capacity(raw.len());
    for (i, a) in raw.iter().enumerate() {
        let value = match sig.params.get(i).map(|p| p.ty) {
            Some(ArgType::Int) => ArgValue::Int(
                a.parse()
                    .map_err(|_| anyhow!("argument {} of {} must be an integer, got {a:?}", i + 1, sig.render()))
                    .invalid()?,
            ),
            _ => ArgValue::Str(a.clone()),
        };
        args.push(value);
    }
    let result = toolbox.dispatch(&Action::new(tool, args));
    println!("{}", serde_json::to_string(&result).expect("tool result serializes"));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
