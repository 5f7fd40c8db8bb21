//! Runs one program as `no_nodes` independent processes.
//!
//! Each process gets the fixed arguments followed by
//! `--no-nodes N --node-id I --fl-srv-id K --base-port P`. The launcher
//! collects stdout/stderr, enforces a per-node deadline and kills survivors.

use std::io::Read;
use std::path::PathBuf;
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::transport::NodeId;

pub const DEFAULT_PER_NODE_TIMEOUT: Duration = Duration::from_secs(60);
const POLL: Duration = Duration::from_millis(5);
/// How long output of a killed node is awaited after the kill.
const TERMINATION_GRACE: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchSpec {
    pub program: PathBuf,
    pub args: Vec<String>,
    pub no_nodes: usize,
    pub fl_srv_id: NodeId,
    pub base_port: u16,
    pub per_node_timeout: Duration,
}

impl LaunchSpec {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>, no_nodes: usize, fl_srv_id: NodeId, base_port: u16) -> Self {
        LaunchSpec {
            program: program.into(),
            args,
            no_nodes,
            fl_srv_id,
            base_port,
            per_node_timeout: DEFAULT_PER_NODE_TIMEOUT,
        }
    }

    /// Full argument list of node `node_id`.
    pub fn node_args(&self, node_id: NodeId) -> Vec<String> {
        let mut args = self.args.clone();
        args.extend([
            "--no-nodes".to_string(),
            self.no_nodes.to_string(),
            "--node-id".to_string(),
            node_id.to_string(),
            "--fl-srv-id".to_string(),
            self.fl_srv_id.to_string(),
            "--base-port".to_string(),
            self.base_port.to_string(),
        ]);
        args
    }

    fn validate(&self) -> Result<(), LaunchError> {
        if self.no_nodes < 2 {
            return Err(LaunchError::Invalid(format!("need at least 2 nodes, got {}", self.no_nodes)));
        }
        if self.fl_srv_id >= self.no_nodes {
            return Err(LaunchError::Invalid(format!(
                "server id {} out of range for {} nodes",
                self.fl_srv_id, self.no_nodes
            )));
        }
        if usize::from(self.base_port) + self.no_nodes - 1 > usize::from(u16::MAX) {
            return Err(LaunchError::Invalid("port range exceeds 65535".into()));
        }
        if !self.program.is_file() {
            return Err(LaunchError::MissingProgram(self.program.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum LaunchError {
    #[error("invalid launch spec: {0}")]
    Invalid(String),
    #[error("program {0} does not exist")]
    MissingProgram(PathBuf),
    #[error("failed to spawn node {node}: {source}")]
    Spawn {
        node: NodeId,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeOutcome {
    pub node_id: NodeId,
    /// `None` when the process was killed or terminated by a signal.
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub stdout: String,
    pub stderr: String,
    pub wall_time: Duration,
}

impl NodeOutcome {
    pub fn succeeded(&self) -> bool {
        self.exit_code == Some(0) && !self.timed_out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchResult {
    pub per_node: Vec<NodeOutcome>,
    pub overall_success: bool,
}

impl LaunchResult {
    pub fn hung_nodes(&self) -> Vec<NodeId> {
        self.per_node.iter().filter(|n| n.timed_out).map(|n| n.node_id).collect()
    }
}

struct Running {
    child: Child,
    started: Instant,
    stdout: Option<Receiver<String>>,
    stderr: Option<Receiver<String>>,
    finished: Option<(Option<ExitStatus>, Duration, bool)>,
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> Option<Receiver<String>> {
    pipe.map(|mut p| {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = p.read_to_end(&mut buf);
            let _ = tx.send(String::from_utf8_lossy(&buf).into_owned());
        });
        rx
    })
}

/// Kills the node and everything it spawned.
fn terminate(child: &mut Child) {
    #[cfg(unix)]
    {
        // Each node leads its own process group (see `launch_all`).
        if let Ok(pid) = libc::pid_t::try_from(child.id()) {
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
        }
    }
    let _ = child.kill();
    let _ = child.wait();
}

/// Spawns every node, waits for all of them, and reports per-node outcomes.
pub fn launch_all(spec: &LaunchSpec) -> Result<LaunchResult, LaunchError> {
    spec.validate()?;
    let mut running: Vec<Running> = Vec::with_capacity(spec.no_nodes);
    for node in 0..spec.no_nodes {
        let mut cmd = Command::new(&spec.program);
        cmd.args(spec.node_args(node))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        #[cfg(unix)]
        {
            use std::os::unix::process::CommandExt;
            cmd.process_group(0);
        }
        let spawned = cmd.spawn();
        let mut child = match spawned {
            Ok(child) => child,
            Err(source) => {
                for r in &mut running {
                    terminate(&mut r.child);
                }
                return Err(LaunchError::Spawn { node, source });
            }
        };
        running.push(Running {
            stdout: drain(child.stdout.take()),
            stderr: drain(child.stderr.take()),
            child,
            started: Instant::now(),
            finished: None,
        });
    }

    while running.iter().any(|r| r.finished.is_none()) {
        for r in running.iter_mut().filter(|r| r.finished.is_none()) {
            match r.child.try_wait() {
                Ok(Some(status)) => r.finished = Some((Some(status), r.started.elapsed(), false)),
                Ok(None) if r.started.elapsed() >= spec.per_node_timeout => {
                    terminate(&mut r.child);
                    r.finished = Some((None, r.started.elapsed(), true));
                }
                Ok(None) => {}
                Err(_) => {
                    terminate(&mut r.child);
                    let status = r.child.try_wait().ok().flatten();
                    r.finished = Some((status, r.started.elapsed(), false));
                }
            }
        }
        thread::sleep(POLL);
    }

    let per_node: Vec<NodeOutcome> = running
        .into_iter()
        .enumerate()
        .map(|(node_id, mut r)| {
            let (status, wall_time, timed_out) = r.finished.take().expect("all finished");
            let join = |rx: Option<Receiver<String>>| {
                rx.and_then(|rx| rx.recv_timeout(TERMINATION_GRACE).ok()).unwrap_or_default()
            };
            NodeOutcome {
                node_id,
                exit_code: status.and_then(|s| s.code()),
                timed_out,
                stdout: join(r.stdout.take()),
                stderr: join(r.stderr.take()),
                wall_time,
            }
        })
        .collect();
    let overall_success = per_node.iter().all(NodeOutcome::succeeded);
    Ok(LaunchResult {
        per_node,
        overall_success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_args_append_identity_flags() {
        let spec = LaunchSpec::new("/bin/true", vec!["node".into(), "--example".into(), "2".into()], 3, 0, 6000);
        assert_eq!(
            spec.node_args(1).join(" "),
            "node --example 2 --no-nodes 3 --node-id 1 --fl-srv-id 0 --base-port 6000"
        );
    }

    #[test]
    fn missing_program_fails_before_spawn() {
        let spec = LaunchSpec::new("/definitely/not/here", vec![], 2, 0, 6000);
        assert!(matches!(launch_all(&spec), Err(LaunchError::MissingProgram(_))));
    }

    #[test]
    fn invalid_specs() {
        let spec = LaunchSpec::new("/bin/sh", vec![], 1, 0, 6000);
        assert!(matches!(launch_all(&spec), Err(LaunchError::Invalid(_))));
        let spec = LaunchSpec::new("/bin/sh", vec![], 3, 3, 6000);
        assert!(matches!(launch_all(&spec), Err(LaunchError::Invalid(_))));
        let spec = LaunchSpec::new("/bin/sh", vec![], 3, 0, 65534);
        assert!(matches!(launch_all(&spec), Err(LaunchError::Invalid(_))));
    }

    #[test]
    fn each_node_id_appears_once() {
        // `sh -c SCRIPT arg0 args...`: the script echoes the node id flag value.
        let script = r#"while [ "$1" != "--node-id" ]; do shift; done; echo "id=$2""#;
        let spec = LaunchSpec::new("/bin/sh", vec!["-c".into(), script.into(), "sh".into()], 4, 1, 6000);
        let res = launch_all(&spec).unwrap();
        assert!(res.overall_success);
        let ids: Vec<String> = res.per_node.iter().map(|n| n.stdout.trim().to_string()).collect();
        assert_eq!(ids, vec!["id=0", "id=1", "id=2", "id=3"]);
    }

    #[test]
    fn hung_node_is_killed() {
        let script = r#"while [ "$1" != "--node-id" ]; do shift; done; if [ "$2" = 1 ]; then sleep 30; fi"#;
        let mut spec = LaunchSpec::new("/bin/sh", vec!["-c".into(), script.into(), "sh".into()], 3, 0, 6000);
        spec.per_node_timeout = Duration::from_millis(500);
        let start = Instant::now();
        let res = launch_all(&spec).unwrap();
        assert!(start.elapsed() < Duration::from_millis(500) + Duration::from_secs(2));
        assert!(!res.overall_success);
        assert_eq!(res.hung_nodes(), vec![1]);
        assert!(res.per_node[0].succeeded() && res.per_node[2].succeeded());
        assert_eq!(res.per_node[1].exit_code, None);
    }

    #[test]
    fn nonzero_exit_is_failure() {
        let spec = LaunchSpec::new("/bin/sh", vec!["-c".into(), "echo oops >&2; exit 3".into(), "sh".into()], 2, 0, 6000);
        let res = launch_all(&spec).unwrap();
        assert!(!res.overall_success);
        assert!(res.per_node.iter().all(|n| n.exit_code == Some(3) && n.stderr.trim() == "oops"));
    }
}
