//! One node of a multi-process run: the body of the `node` subcommand.

use std::time::Duration;

use crate::elementary::{Engine, ExampleId};
use crate::flapi::{FaultPoint, FlConfig, FlError, FlInstance};
use crate::transport::{NodeId, DEFAULT_CONNECT_TIMEOUT, DEFAULT_RECV_TIMEOUT};
use crate::value::Value;

pub const RESULT_PREFIX: &str = "RESULT ";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_TIMEOUT: i32 = 2;
/// Exit code of a node stopped by an injected fault.
pub const EXIT_KILLED: i32 = 137;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeOptions {
    pub example: ExampleId,
    pub no_nodes: usize,
    pub node_id: NodeId,
    pub fl_srv_id: NodeId,
    pub base_port: u16,
    pub no_iters: usize,
    pub seed: Option<u64>,
    pub recv_timeout: Duration,
    pub connect_timeout: Duration,
    pub kill_node: Option<NodeId>,
    pub after_phase: Option<FaultPoint>,
}

impl NodeOptions {
    pub fn new(example: ExampleId, no_nodes: usize, node_id: NodeId, fl_srv_id: NodeId, base_port: u16) -> Self {
        NodeOptions {
            example,
            no_nodes,
            node_id,
            fl_srv_id,
            base_port,
            no_iters: 1,
            seed: None,
            recv_timeout: DEFAULT_RECV_TIMEOUT,
            connect_timeout: DEFAULT_CONNECT_TIMEOUT,
            kill_node: None,
            after_phase: None,
        }
    }
}

/// What the process should print and return.
#[derive(Debug)]
pub struct NodeExit {
    pub code: i32,
    pub stdout: Option<String>,
    pub error: Option<FlError>,
}

impl NodeExit {
    fn failed(e: FlError) -> Self {
        let code = match &e {
            FlError::Timeout { .. } => EXIT_TIMEOUT,
            FlError::Killed { .. } => EXIT_KILLED,
            _ => EXIT_ERROR,
        };
        NodeExit {
            code,
            stdout: None,
            error: Some(e),
        }
    }
}

pub fn result_line(node_id: NodeId, value: &Value) -> String {
    format!("{RESULT_PREFIX}{node_id} {value}")
}

/// Runs this node's share of the example over the wire transport.
pub fn run_node(opts: &NodeOptions) -> NodeExit {
    let cfg = FlConfig {
        no_iters: opts.no_iters,
        recv_timeout: opts.recv_timeout,
        connect_timeout: opts.connect_timeout,
        ..FlConfig::new(opts.no_nodes, opts.node_id, opts.fl_srv_id, opts.base_port)
    };
    if let Err(e) = cfg.validate() {
        return NodeExit::failed(e);
    }
    let ldata = opts.example.ldata(opts.no_nodes, opts.seed)[opts.node_id].clone();
    let inst = match FlInstance::new(cfg) {
        Ok(inst) => inst,
        Err(e) => return NodeExit::failed(e),
    };
    if opts.kill_node == Some(opts.node_id) {
        inst.inject_fault(opts.after_phase);
    }
    let cb = opts.example.callbacks();
    let outcome = match opts.example.engine() {
        Engine::Centralized => inst.fl_centralized(&cb, ldata, Value::Absent, opts.no_iters),
        Engine::Decentralized => inst.fl_decentralized(&cb, ldata, Value::Absent, opts.no_iters),
    };
    let _ = inst.shutdown();
    match outcome {
        Ok(v) => NodeExit {
            code: EXIT_OK,
            stdout: Some(result_line(opts.node_id, &v)),
            error: None,
        },
        Err(e) => NodeExit::failed(e),
    }
}
