//! `p2p-acl` command line: run scenarios, replay traces, dump the policy
//! tables and verify chain dumps.
//!
//! Exit codes: 0 success, 1 divergence or violation, 2 usage or input error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use p2p_acl::ledger::Chain;
use p2p_acl::policy::dump_policy_matrix;
use p2p_acl::sim::{self, check_trace_chain, ReplayVerdict, Scenario, Trace};

#[derive(Parser)]
#[command(
    name = "p2p-acl",
    version,
    about = "Contract-based access control simulator for two-level P2P overlays"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file.
    Run {
        scenario: PathBuf,
        /// Write the trace (JSON lines).
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write metrics JSON here instead of stdout.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Write the chain as block lines.
        #[arg(long)]
        chain: Option<PathBuf>,
        /// Write the final canonical contract state.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-execute a scenario and compare against a recorded trace.
    Replay {
        trace: PathBuf,
        scenario: PathBuf,
        /// Independent replicas that re-apply the chain.
        #[arg(long, default_value_t = 3)]
        replicas: usize,
    },
    /// Print the permission matrix and response table.
    Matrix,
    /// Verify a block-lines chain dump.
    VerifyChain { chain: PathBuf },
    /// Write a random valid scenario to stdout.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 6)]
        n: usize,
        /// Members per group.
        #[arg(long, default_value_t = 3)]
        members: usize,
        #[arg(long, default_value_t = 200)]
        events: usize,
    },
}

enum Failure {
    /// Divergence, violation or aborted run.
    Check(String),
    /// Bad input.
    Usage(String),
}

type CmdResult = Result<(), Failure>;

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> CmdResult {
    fs::write(path, contents).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn cmd_run(
    scenario: &Path,
    trace: Option<&Path>,
    metrics: Option<&Path>,
    chain: Option<&Path>,
    state: Option<&Path>,
    seed: Option<u64>,
) -> CmdResult {
    let s = load(scenario)?;
    let out = sim::run_with_seed(&s, seed.unwrap_or(s.config.seed))
        .map_err(|e| Failure::Check(e.to_string()))?;
    if let Some(p) = trace {
        write(p, &out.trace.to_jsonl())?;
    }
    if let Some(p) = chain {
        write(p, &out.chain.to_block_lines())?;
    }
    if let Some(p) = state {
        write(p, &format!("{}\n", out.state_dump))?;
    }
    let metrics_json = format!("{}\n", out.metrics.to_json());
    match metrics {
        Some(p) => write(p, &metrics_json)?,
        None => print!("{metrics_json}"),
    }
    Ok(())
}

fn cmd_replay(trace: &Path, scenario: &Path, replicas: usize) -> CmdResult {
    let text = String::from_utf8(read(trace)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", trace.display())))?;
    let recorded = Trace::parse(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    let s = load(scenario)?;
    let (verdict, fresh) = sim::replay(&recorded, &s).map_err(|e| Failure::Check(e.to_string()))?;
    if verdict != ReplayVerdict::Ok {
        return Err(Failure::Check(verdict.to_string()));
    }
    if let Err(i) = check_trace_chain(&recorded, &fresh.chain) {
        return Err(Failure::Check(format!(
            "trace event {i} does not match the chain"
        )));
    }
    let nodes = sim::replicate(&fresh.chain, s.config.params, replicas)
        .map_err(|e| Failure::Check(format!("replica failed: {e}")))?;
    for r in &nodes {
        if r.state_dump() != fresh.state_dump {
            return Err(Failure::Check(format!(
                "{} state differs from sequencer",
                r.id
            )));
        }
    }
    println!(
        "ok: {} events, {} blocks, {} replicas agree, tip {}",
        recorded.events.len(),
        fresh.chain.len(),
        nodes.len(),
        fresh.chain.tip().hash
    );
    Ok(())
}

fn cmd_verify_chain(path: &Path) -> CmdResult {
    let bytes = read(path)?;
    match Chain::from_block_lines(&bytes) {
        Ok(chain) => {
            println!("ok: {} blocks, tip {}", chain.len(), chain.tip().hash);
            Ok(())
        }
        Err(report) => Err(Failure::Check(format!("tampered: {report}"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            trace,
            metrics,
            chain,
            state,
            seed,
        } => cmd_run(
            scenario,
            trace.as_deref(),
            metrics.as_deref(),
            chain.as_deref(),
            state.as_deref(),
            *seed,
        ),
        Command::Replay {
            trace,
            scenario,
            replicas,
        } => cmd_replay(trace, scenario, *replicas),
        Command::Matrix => {
            print!("{}", dump_policy_matrix());
            Ok(())
        }
        Command::VerifyChain { chain } => cmd_verify_chain(chain),
        Command::Generate {
            seed,
            n,
            members,
            events,
        } => {
            if *n == 0 {
                Err(Failure::Usage("--n must be at least 1".into()))
            } else {
                print!(
                    "{}",
                    Scenario::generate(*seed, *n, &vec![*members; *n], *events).to_jsonl()
                );
                Ok(())
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
