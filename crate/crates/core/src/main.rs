use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use fltestbed::elementary::{Engine, ExampleId};
use fltestbed::flapi::FaultPoint;
use fltestbed::harness::{fuzz_verify, run_and_verify, Mode, VerifyOptions};
use fltestbed::launcher::{launch_all, LaunchSpec};
use fltestbed::node::{run_node, NodeOptions, EXIT_ERROR};

#[derive(Parser)]
#[command(name = "fltestbed", version, about = "Run and verify elementary federated learning algorithms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start one node process per federation member and wait for all of them.
    Launch {
        #[arg(long)]
        example: ExampleId,
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        fl_srv_id: Option<usize>,
        #[arg(long, default_value_t = 6000)]
        base_port: u16,
        #[arg(long, default_value_t = 1)]
        iters: usize,
        /// Per-node deadline in seconds.
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a single node (normally spawned by `launch` or `verify`).
    Node {
        #[arg(long)]
        example: ExampleId,
        #[arg(long)]
        no_nodes: usize,
        #[arg(long)]
        node_id: usize,
        #[arg(long)]
        fl_srv_id: usize,
        #[arg(long)]
        base_port: u16,
        #[arg(long, default_value_t = 1)]
        iters: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 30.0)]
        recv_timeout: f64,
        #[arg(long, default_value_t = 5.0)]
        connect_timeout: f64,
        #[arg(long, requires = "after_phase")]
        kill_node: Option<usize>,
        #[arg(long, requires = "kill_node")]
        after_phase: Option<FaultPoint>,
    },
    /// Run an example and compare every node's result with the oracle.
    Verify {
        #[arg(long)]
        example: ExampleId,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value_t = 3)]
        nodes: usize,
        #[arg(long, default_value_t = 1)]
        iters: usize,
        #[arg(long, default_value_t = 6000)]
        base_port: u16,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, requires = "after_phase")]
        kill_node: Option<usize>,
        #[arg(long, requires = "kill_node")]
        after_phase: Option<FaultPoint>,
        #[arg(long, default_value_t = 30.0)]
        recv_timeout: f64,
        /// Per-node deadline in seconds (process mode).
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
    },
    /// Compare the in-process engine with its simulator on random federations.
    Fuzz {
        #[arg(long, value_enum)]
        engine: EngineArg,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Inproc,
    Proc,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Cent,
    Decent,
}

fn secs(s: f64) -> Result<Duration, String> {
    Duration::try_from_secs_f64(s).map_err(|e| format!("invalid duration {s}: {e}"))
}

fn exit(code: i32) -> ExitCode {
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => exit(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            exit(EXIT_ERROR)
        }
    }
}

fn run(cli: Cli) -> Result<i32, String> {
    let this = std::env::current_exe().map_err(|e| format!("cannot locate own executable: {e}"))?;
    match cli.command {
        Command::Launch {
            example,
            nodes,
            fl_srv_id,
            base_port,
            iters,
            timeout,
            seed,
        } => {
            let mut args = vec!["node".into(), "--example".into(), example.to_string(), "--iters".into(), iters.to_string()];
            if let Some(seed) = seed {
                args.extend(["--seed".into(), seed.to_string()]);
            }
            let srv = fl_srv_id.unwrap_or_else(|| example.default_fl_srv_id(nodes));
            let mut spec = LaunchSpec::new(this, args, nodes, srv, base_port);
            spec.per_node_timeout = secs(timeout)?;
            let result = launch_all(&spec).map_err(|e| e.to_string())?;
            for node in &result.per_node {
                print!("{}", node.stdout);
                if !node.succeeded() {
                    let status = if node.timed_out {
                        "timed out".to_string()
                    } else {
                        format!("exit {:?}", node.exit_code)
                    };
                    eprintln!("node {} failed ({status}): {}", node.node_id, node.stderr.trim());
                }
            }
            Ok(if result.overall_success { 0 } else { 1 })
        }
        Command::Node {
            example,
            no_nodes,
            node_id,
            fl_srv_id,
            base_port,
            iters,
            seed,
            recv_timeout,
            connect_timeout,
            kill_node,
            after_phase,
        } => {
            let opts = NodeOptions {
                no_iters: iters,
                seed,
                recv_timeout: secs(recv_timeout)?,
                connect_timeout: secs(connect_timeout)?,
                kill_node,
                after_phase,
                ..NodeOptions::new(example, no_nodes, node_id, fl_srv_id, base_port)
            };
            let outcome = run_node(&opts);
            if let Some(line) = &outcome.stdout {
                println!("{line}");
            }
            if let Some(e) = &outcome.error {
                eprintln!("node {node_id}: {e}");
            }
            Ok(outcome.code)
        }
        Command::Verify {
            example,
            mode,
            nodes,
            iters,
            base_port,
            seed,
            report,
            kill_node,
            after_phase,
            recv_timeout,
            timeout,
        } => {
            let mode = match mode {
                ModeArg::Inproc => Mode::InProc,
                ModeArg::Proc => Mode::Proc,
            };
            let opts = VerifyOptions {
                no_nodes: nodes,
                no_iters: iters,
                base_port,
                seed,
                program: Some(this),
                recv_timeout: secs(recv_timeout)?,
                per_node_timeout: secs(timeout)?,
                fault: kill_node.zip(after_phase),
                ..VerifyOptions::new(example, mode)
            };
            let result = run_and_verify(&opts);
            let text = result.to_text();
            match report {
                Some(path) => std::fs::write(&path, format!("{text}\n"))
                    .map_err(|e| format!("cannot write {}: {e}", path.display()))?,
                None => println!("{text}"),
            }
            if let Some(d) = &result.diagnostic {
                eprintln!("{d}");
            }
            Ok(result.exit_code())
        }
        Command::Fuzz { engine, trials, seed } => {
            if trials == 0 {
                return Err("--trials must be at least 1".into());
            }
            let engine = match engine {
                EngineArg::Cent => Engine::Centralized,
                EngineArg::Decent => Engine::Decentralized,
            };
            let summary = fuzz_verify(engine, trials, seed);
            print!("{summary}");
            Ok(if summary.all_passed() { 0 } else { 1 })
        }
    }
}
