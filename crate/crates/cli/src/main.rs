use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use thoughtsearch_core::bench::{load_dataset, run_benchmark, DatasetFormat};
use thoughtsearch_core::gateway::{ChatBackend, GatewaySettings, HttpBackend, MockBackend, ReplayBackend};
use thoughtsearch_core::sandbox::{FixtureTracer, HarnessTracer, SandboxConfig};
use thoughtsearch_core::{Flags, Gateway, Granularity, ProcessSandbox, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Apps,
    Humaneval,
    #[value(name = "generic_jsonl")]
    GenericJsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    /// Chat-completions endpoint; the key is read from OPENAI_API_KEY.
    Http,
    /// Offline, seed-determined replies.
    Mock,
    /// Scripted replies from --fixtures.
    Replay,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Thought,
    Code,
}

/// Tree search over natural-language reasoning steps for program synthesis.
///
/// The API key for the http backend is taken from the OPENAI_API_KEY
/// environment variable (endpoint override: OPENAI_BASE_URL).
#[derive(Debug, Parser)]
#[command(name = "thoughtsearch", version)]
struct Args {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "generic_jsonl")]
    format: Format,
    /// Only the first N problems.
    #[arg(long)]
    limit: Option<usize>,

    #[arg(long, default_value_t = 16)]
    rollouts: u32,
    #[arg(long, default_value_t = 3)]
    max_children: usize,
    #[arg(long, default_value_t = 10.0)]
    c_base: f64,
    /// Constant added to the exploration weight.
    #[arg(long = "c", default_value_t = 4.0)]
    c_explore: f64,
    #[arg(long, default_value_t = 0.8)]
    w_test: f64,
    #[arg(long, default_value_t = 0.2)]
    w_llm: f64,
    #[arg(long, default_value_t = 4)]
    max_depth: usize,
    #[arg(long, default_value_t = 1)]
    rethink_limit: u32,
    #[arg(long, value_enum, default_value = "thought")]
    granularity: Mode,
    /// Stop a problem's search once a candidate reaches the maximum reward.
    #[arg(long)]
    early_stop: bool,

    #[arg(long)]
    no_verbal_feedback: bool,
    #[arg(long)]
    no_block_info: bool,
    #[arg(long)]
    no_rethink: bool,
    #[arg(long)]
    no_self_eval: bool,
    /// Score passing programs on model-written tests instead of self-evaluation.
    #[arg(long)]
    gen_tests_eval: bool,
    #[arg(long, default_value_t = 5)]
    gen_tests_count: usize,

    #[arg(long, value_enum, default_value = "mock")]
    backend: Backend,
    /// Reply fixtures for the replay backend.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    #[arg(long, default_value = "gpt-4o-mini")]
    model: String,
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,

    /// Per-test execution limit in seconds.
    #[arg(long, default_value_t = 10.0)]
    timeout_sec: f64,
    /// Block tracer command; receives program, input, config and report paths.
    #[arg(long, value_name = "CMD")]
    trace_harness: Option<String>,
    /// Pre-recorded block trace report served for every traced run.
    #[arg(long, conflicts_with = "trace_harness")]
    trace_fixture: Option<PathBuf>,

    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "results.jsonl")]
    out: PathBuf,
    /// Prompt log destination. Defaults to `<out>.prompts.jsonl` for the mock
    /// and replay backends; the http backend logs only when this is given.
    #[arg(long)]
    prompt_log: Option<PathBuf>,
}

impl Args {
    fn config(&self) -> RunConfig {
        RunConfig {
            max_rollouts: self.rollouts,
            max_children: self.max_children,
            c_base: self.c_base,
            c_explore: self.c_explore,
            w_test: self.w_test,
            w_llm: self.w_llm,
            max_depth: self.max_depth,
            rethink_limit_per_node: self.rethink_limit,
            flags: Flags {
                verbal_feedback: !self.no_verbal_feedback,
                block_info: !self.no_block_info,
                rethink: !self.no_rethink,
                self_eval: !self.no_self_eval,
                gen_tests_eval: self.gen_tests_eval,
            },
            granularity: match self.granularity {
                Mode::Thought => Granularity::Thought,
                Mode::Code => Granularity::Code,
            },
            seed: self.seed,
            exec_timeout: self.timeout_sec,
            model_name: self.model.clone(),
            temperature: self.temperature,
            early_stop: self.early_stop,
            gen_tests_count: self.gen_tests_count,
        }
    }

    fn backend(&self) -> Result<Arc<dyn ChatBackend>> {
        Ok(match self.backend {
            Backend::Http => Arc::new(HttpBackend::from_env()?),
            Backend::Mock => Arc::new(MockBackend::new(self.seed)),
            Backend::Replay => {
                let Some(path) = &self.fixtures else { bail!("--backend replay needs --fixtures") };
                Arc::new(ReplayBackend::from_file(path)?)
            }
        })
    }

    fn sandbox(&self) -> Result<ProcessSandbox> {
        let sandbox = ProcessSandbox::new(SandboxConfig::default());
        Ok(match (&self.trace_harness, &self.trace_fixture) {
            (Some(cmd), _) => {
                let argv: Vec<String> = cmd.split_whitespace().map(String::from).collect();
                if argv.is_empty() {
                    bail!("--trace-harness is empty");
                }
                sandbox.with_tracer(Arc::new(HarnessTracer::new(argv)))
            }
            (None, Some(path)) => sandbox.with_tracer(Arc::new(
                FixtureTracer::from_file(path).with_context(|| format!("loading {}", path.display()))?,
            )),
            (None, None) => sandbox,
        })
    }

    fn prompt_log_path(&self) -> Option<PathBuf> {
        self.prompt_log
            .clone()
            .or_else(|| (self.backend != Backend::Http).then(|| sibling(&self.out, ".prompts.jsonl")))
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn run(args: &Args) -> Result<usize> {
    let cfg = args.config();
    cfg.validate().context("invalid configuration")?;
    let format = match args.format {
        Format::Apps => DatasetFormat::Apps,
        Format::Humaneval => DatasetFormat::Humaneval,
        Format::GenericJsonl => DatasetFormat::GenericJsonl,
    };
    let mut problems =
        load_dataset(&args.dataset, format).with_context(|| format!("loading {}", args.dataset.display()))?;
    if let Some(n) = args.limit {
        problems.truncate(n);
    }
    let settings =
        GatewaySettings { model_name: cfg.model_name.clone(), temperature: cfg.temperature, ..Default::default() };
    let gateway = Gateway::new(args.backend()?, settings);
    let sandbox = args.sandbox()?;

    let report = run_benchmark(&problems, &cfg, &gateway, &sandbox, &args.out);
    // The prompt log is useful even when the run aborts part-way.
    if let Some(path) = args.prompt_log_path() {
        gateway.log().write_jsonl(&path).with_context(|| format!("writing {}", path.display()))?;
    }
    let report = report.with_context(|| format!("benchmark run into {}", args.out.display()))?;
    println!(
        "problems={} pass_rate={:.2} pass@1={:.2} failures={} results={}",
        report.metrics.problems,
        report.metrics.pass_rate,
        report.metrics.pass_at_1,
        report.failures,
        args.out.display()
    );
    Ok(report.failures)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let args = Args::parse();
    match run(&args) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("{failures} problem(s) did not complete");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
