//! The `sbpm` command line: validate, compile, disassemble, serve and run
//! process models.

pub mod run;
pub mod scenario;
pub mod stub;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use sbpm_core::compile::{disassemble, link_bundle, load_bundle, store_bundle, SupervisorConfig, BUNDLE_EXTENSION};
use sbpm_core::model::parse_model_dir;
use sbpm_core::validate::{validate, ValidateOptions, Verdict};
use sbpm_core::Ident;
use sbpm_engine::{Engine, EngineConfig};

use crate::run::{Backend, RunOptions, RunStatus};

#[derive(Debug, Parser)]
#[command(name = "sbpm", version, about = "Subject-oriented process models: check, build and run")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check structure, interfaces and interaction soundness of a model directory.
    Validate {
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        pool_bound: u32,
        /// Maximum number of product states to explore.
        #[arg(long, default_value_t = 1_000_000)]
        cap: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Exit 2 when soundness could not be decided.
        #[arg(long)]
        strict: bool,
    },
    /// Compile a model directory into a bundle.
    Compile {
        dir: PathBuf,
        /// Output file; defaults to `<process-id>.sbpmb`.
        #[arg(short = 'o', long)]
        output: Option<PathBuf>,
        /// Record the current time in the manifest.
        #[arg(long)]
        stamp: bool,
        /// Supervisor template (YAML or JSON).
        #[arg(long)]
        supervisor: Option<PathBuf>,
    },
    /// Print a bundle in readable form.
    Disasm { bundle: PathBuf },
    /// Run an engine node until interrupted.
    Serve {
        #[arg(long, env = "SBPM_LISTEN", default_value = "127.0.0.1:7400")]
        listen: String,
        #[arg(long, env = "SBPM_WIRE_LISTEN", default_value = "127.0.0.1:7401")]
        wire_listen: String,
        #[arg(long, env = "SBPM_NODE_ID", default_value = "n1")]
        node_id: String,
        #[arg(long, env = "SBPM_DATA_DIR", default_value = "sbpm-data")]
        data_dir: PathBuf,
        /// REST address (host:port) of a node to join.
        #[arg(long)]
        join: Vec<String>,
    },
    /// Start one instance and answer its tasks from a scenario script.
    Run {
        bundle: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Answer refinement calls: `refinement=outcome`.
        #[arg(long, value_parser = scenario::parse_stub)]
        stub: Vec<(String, String)>,
        /// Use a running engine instead of an embedded one.
        #[arg(long)]
        engine: Option<String>,
        /// Subject → node map (YAML or JSON); needs `--engine`.
        #[arg(long, requires = "engine")]
        placement: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        max_idle_ms: u64,
        /// Print only the per-subject state summary.
        #[arg(long)]
        quiet: bool,
    },
}

/// Runs a parsed command and returns the process exit code.
pub async fn execute(cmd: Command, out: &mut dyn Write) -> i32 {
    let result = match cmd {
        Command::Validate {
            dir,
            pool_bound,
            cap,
            format,
            strict,
        } => cmd_validate(&dir, pool_bound, cap, format, strict, out),
        Command::Compile {
            dir,
            output,
            stamp,
            supervisor,
        } => cmd_compile(&dir, output.as_deref(), stamp, supervisor.as_deref(), out),
        Command::Disasm { bundle } => cmd_disasm(&bundle, out),
        Command::Serve {
            listen,
            wire_listen,
            node_id,
            data_dir,
            join,
        } => cmd_serve(&listen, &wire_listen, &node_id, &data_dir, &join, out).await,
        Command::Run {
            bundle,
            scenario,
            stub,
            engine,
            placement,
            max_idle_ms,
            quiet,
        } => {
            let args = RunArgs {
                bundle,
                scenario,
                stubs: stub.into_iter().collect(),
                engine,
                placement,
                max_idle: Duration::from_millis(max_idle_ms),
                quiet,
            };
            cmd_run(&args, out).await
        }
    };
    match result {
        Ok(code) => code,
        Err(message) => {
            let _ = writeln!(out, "error: {message}");
            1
        }
    }
}

type CmdResult = Result<i32, String>;

fn io(e: std::io::Error) -> String {
    e.to_string()
}

pub fn cmd_validate(dir: &Path, pool_bound: u32, cap: usize, format: Format, strict: bool, out: &mut dyn Write) -> CmdResult {
    let model = parse_model_dir(dir).map_err(|e| e.to_string())?;
    let report = validate(
        &model,
        ValidateOptions {
            pool_bound,
            state_cap: cap,
        },
    );
    match format {
        Format::Json => {
            writeln!(out, "{}", serde_json::to_string_pretty(&report).expect("serializable report")).map_err(io)?;
        }
        Format::Text => {
            for d in &report.diagnostics {
                writeln!(out, "{d}").map_err(io)?;
            }
            let s = &report.soundness;
            let verdict = match s.verdict {
                Verdict::Sound => "sound",
                Verdict::Unsound => "unsound",
                Verdict::Inconclusive => "inconclusive",
            };
            writeln!(
                out,
                "soundness: {verdict} ({} states explored, pool bound {}{})",
                s.explored,
                s.pool_bound,
                if s.cap_hit { ", cap reached" } else { "" }
            )
            .map_err(io)?;
            if let Some(steps) = &s.counterexample {
                writeln!(out, "counterexample:").map_err(io)?;
                if steps.is_empty() {
                    writeln!(out, "  (no steps: the initial state is stuck)").map_err(io)?;
                }
                for (i, step) in steps.iter().enumerate() {
                    writeln!(out, "  {:>3}. {step}", i + 1).map_err(io)?;
                }
                if let Some(dead) = &s.deadlock {
                    let at: Vec<String> = dead.locations.iter().map(|(s, st)| format!("{s}@{st}")).collect();
                    writeln!(out, "  deadlock at {}", at.join(" ")).map_err(io)?;
                }
            }
        }
    }
    Ok(if report.has_errors() || report.soundness.verdict == Verdict::Unsound {
        1
    } else if strict && report.soundness.verdict == Verdict::Inconclusive {
        2
    } else {
        0
    })
}

fn read_structured<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_yaml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

pub fn cmd_compile(dir: &Path, output: Option<&Path>, stamp: bool, supervisor: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let model = parse_model_dir(dir).map_err(|e| e.to_string())?;
    let report = validate(&model, ValidateOptions::default());
    if report.has_errors() {
        for d in report.diagnostics.iter().filter(|d| d.is_error()) {
            writeln!(out, "{d}").map_err(io)?;
        }
        writeln!(out, "error: model has errors; no bundle written").map_err(io)?;
        return Ok(1);
    }
    let template = match supervisor {
        Some(p) => read_structured::<SupervisorConfig>(p)?,
        None => SupervisorConfig::default(),
    };
    let mut bundle = link_bundle(&model, &template).map_err(|e| e.to_string())?;
    if stamp {
        let now = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        bundle = bundle.stamped(now);
    }
    let path = match output {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(format!("{}.{BUNDLE_EXTENSION}", model.id)),
    };
    store_bundle(&bundle, &path).map_err(|e| e.to_string())?;
    writeln!(out, "{} {}", bundle.hash(), path.display()).map_err(io)?;
    Ok(0)
}

pub fn cmd_disasm(path: &Path, out: &mut dyn Write) -> CmdResult {
    let bundle = load_bundle(path).map_err(|e| e.to_string())?;
    let text = disassemble(&bundle).map_err(|e| e.to_string())?;
    out.write_all(text.as_bytes()).map_err(io)?;
    Ok(0)
}

async fn cmd_serve(listen: &str, wire: &str, node_id: &str, data_dir: &Path, join: &[String], out: &mut dyn Write) -> CmdResult {
    let mut cfg = EngineConfig::new(data_dir, node_id);
    if let Some((host, _)) = listen.rsplit_once(':') {
        cfg.host = host.to_string();
    }
    let server = sbpm_engine::start_server(cfg, listen, wire).await.map_err(|e| e.to_string())?;
    writeln!(out, "node {node_id} http {} wire {}", server.http_addr, server.wire_addr).map_err(io)?;
    out.flush().map_err(io)?;
    for peer in join {
        let info = server.engine.join(peer).await.map_err(|e| format!("join {peer}: {e}"))?;
        writeln!(out, "joined {} at {peer}", info.node_id).map_err(io)?;
        out.flush().map_err(io)?;
    }
    tokio::signal::ctrl_c().await.map_err(io)?;
    Ok(0)
}

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub bundle: PathBuf,
    pub scenario: Option<PathBuf>,
    pub stubs: BTreeMap<String, String>,
    pub engine: Option<String>,
    pub placement: Option<PathBuf>,
    pub max_idle: Duration,
    pub quiet: bool,
}

pub async fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> CmdResult {
    let bundle = load_bundle(&args.bundle).map_err(|e| e.to_string())?;
    let scenario = match &args.scenario {
        Some(p) => scenario::load(p).map_err(|e| e.to_string())?,
        None => Default::default(),
    };
    let placement: BTreeMap<Ident, String> = match &args.placement {
        Some(p) => read_structured(p)?,
        None => BTreeMap::new(),
    };
    let opts = RunOptions {
        scenario,
        stubs: args.stubs.clone(),
        placement,
        max_idle: args.max_idle,
    };

    let _tmp;
    let backend = match &args.engine {
        Some(url) => Backend::remote(url),
        None => {
            let dir = std::env::temp_dir().join(format!("sbpm-run-{}", uuid::Uuid::new_v4()));
            std::fs::create_dir_all(&dir).map_err(io)?;
            _tmp = TempDir(dir.clone());
            Backend::Embedded(Engine::open(EngineConfig::new(dir, "local")).map_err(|e| e.to_string())?)
        }
    };
    let outcome = run::run(&backend, &bundle, &opts).await.map_err(|e| e.to_string())?;

    if !args.quiet {
        for r in &outcome.trace {
            writeln!(out, "{r}").map_err(io)?;
        }
    }
    out.write_all(run::summary(&outcome.trace).as_bytes()).map_err(io)?;
    match &outcome.status {
        RunStatus::Completed => writeln!(out, "instance {} completed", outcome.instance_id),
        RunStatus::Failed(reason) => writeln!(out, "instance {} failed: {reason}", outcome.instance_id),
        RunStatus::Stalled(tasks) => {
            writeln!(out, "instance {} stalled; open tasks:", outcome.instance_id).map_err(io)?;
            for t in tasks {
                writeln!(
                    out,
                    "  {} {} at {} \"{}\" ({}) options {}",
                    t.task.task_id,
                    t.task.subject,
                    t.task.state,
                    t.task.state_name,
                    t.agent,
                    serde_json::to_string(&t.task.options).unwrap_or_default()
                )
                .map_err(io)?;
            }
            Ok(())
        }
    }
    .map_err(io)?;
    Ok(outcome.exit_code())
}

/// Removes the embedded engine's directory when dropped.
struct TempDir(PathBuf);

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}
