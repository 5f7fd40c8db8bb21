//! Verification of distributed runs against the sequential oracles.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::elementary::{seq_example1, seq_example2, Engine, ExampleId, OracleError};
use crate::flapi::{CallbackError, CallbackPair, FaultPoint, FlConfig, FlError, FlInstance};
use crate::launcher::{launch_all, LaunchSpec, DEFAULT_PER_NODE_TIMEOUT};
use crate::node::RESULT_PREFIX;
use crate::simulate::{sim_centralized, sim_decentralized};
use crate::text::{self, ParseError, Reader};
use crate::transport::{LoopbackNetwork, NodeId, DEFAULT_CONNECT_TIMEOUT, DEFAULT_RECV_TIMEOUT};
use crate::value::{approx_eq_default, read_value, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Every node is a thread of this process on a loopback network.
    InProc,
    /// Every node is a separate process started by the launcher.
    Proc,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::InProc => "inproc",
            Mode::Proc => "proc",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(Mode::InProc),
            "proc" => Ok(Mode::Proc),
            other => Err(format!("unknown mode `{other}` (expected inproc or proc)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeVerdict {
    pub node_id: NodeId,
    /// `Absent` when the node produced no result.
    pub distributed: Value,
    pub oracle: Value,
    pub matched: bool,
}

/// Outcome of one verified run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub example: ExampleId,
    pub mode: Mode,
    pub no_nodes: usize,
    pub no_iters: usize,
    pub fl_srv_id: NodeId,
    pub oracle: String,
    pub per_node: Vec<NodeVerdict>,
    pub overall_match: bool,
    pub diagnostic: Option<String>,
    pub wall_time: Duration,
}

impl RunReport {
    /// 0 iff every node matched its oracle.
    pub fn exit_code(&self) -> i32 {
        if self.overall_match {
            0
        } else {
            1
        }
    }

    /// Canonical text form with a fixed key order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{{\"example\":{},\"mode\":\"{}\",\"noNodes\":{},\"noIters\":{},\"flSrvId\":{},\"oracle\":",
            self.example.number(),
            self.mode.name(),
            self.no_nodes,
            self.no_iters,
            self.fl_srv_id
        ));
        text::write_string(&mut out, &self.oracle);
        out.push_str(",\"perNode\":[");
        for (i, v) in self.per_node.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{{\"nodeId\":{},\"distributed\":", v.node_id));
            v.distributed.write_canonical(&mut out);
            out.push_str(",\"oracle\":");
            v.oracle.write_canonical(&mut out);
            out.push_str(&format!(",\"match\":{}}}", v.matched));
        }
        out.push_str(&format!("],\"overallMatch\":{},\"diagnostic\":", self.overall_match));
        match &self.diagnostic {
            Some(d) => text::write_string(&mut out, d),
            None => out.push_str("null"),
        }
        out.push_str(",\"wallTime\":");
        text::write_number(&mut out, self.wall_time.as_secs_f64());
        out.push('}');
        out
    }

    pub fn parse(s: &str) -> Result<RunReport, ParseError> {
        let mut r = Reader::new(s.as_bytes());
        r.expect(b'{')?;
        r.key("example")?;
        let at = r.pos();
        let example = u8::try_from(r.uint()?)
            .ok()
            .and_then(ExampleId::from_number)
            .ok_or_else(|| r.error_at(at, "unknown example"))?;
        r.expect(b',')?;
        r.key("mode")?;
        let at = r.pos();
        let mode = r.string()?.parse::<Mode>().map_err(|e| r.error_at(at, e))?;
        r.expect(b',')?;
        r.key("noNodes")?;
        let no_nodes = r.uint()? as usize;
        r.expect(b',')?;
        r.key("noIters")?;
        let no_iters = r.uint()? as usize;
        r.expect(b',')?;
        r.key("flSrvId")?;
        let fl_srv_id = r.uint()? as usize;
        r.expect(b',')?;
        r.key("oracle")?;
        let oracle = r.string()?;
        r.expect(b',')?;
        r.key("perNode")?;
        r.expect(b'[')?;
        let mut per_node = Vec::new();
        if !r.eat(b']') {
            loop {
                r.expect(b'{')?;
                r.key("nodeId")?;
                let node_id = r.uint()? as usize;
                r.expect(b',')?;
                r.key("distributed")?;
                let distributed = read_value(&mut r, false)?;
                r.expect(b',')?;
                r.key("oracle")?;
                let oracle = read_value(&mut r, false)?;
                r.expect(b',')?;
                r.key("match")?;
                let matched = r.boolean()?;
                r.expect(b'}')?;
                per_node.push(NodeVerdict {
                    node_id,
                    distributed,
                    oracle,
                    matched,
                });
                if r.eat(b']') {
                    break;
                }
                r.expect(b',')?;
            }
        }
        r.expect(b',')?;
        r.key("overallMatch")?;
        let overall_match = r.boolean()?;
        r.expect(b',')?;
        r.key("diagnostic")?;
        let diagnostic = if r.peek() == Some(b'n') {
            r.expect_literal("null")?;
            None
        } else {
            Some(r.string()?)
        };
        r.expect(b',')?;
        r.key("wallTime")?;
        let at = r.pos();
        let secs = r.number()?;
        let wall_time = Duration::try_from_secs_f64(secs).map_err(|_| r.error_at(at, "invalid wall time"))?;
        r.expect(b'}')?;
        r.finish()?;
        Ok(RunReport {
            example,
            mode,
            no_nodes,
            no_iters,
            fl_srv_id,
            oracle,
            per_node,
            overall_match,
            diagnostic,
            wall_time,
        })
    }

    /// Text form with the wall time zeroed, for determinism comparisons.
    pub fn timeless_text(&self) -> String {
        RunReport {
            wall_time: Duration::ZERO,
            ..self.clone()
        }
        .to_text()
    }
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub example: ExampleId,
    pub mode: Mode,
    pub no_nodes: usize,
    pub no_iters: usize,
    pub base_port: u16,
    /// `None` with three nodes selects the published data set.
    pub seed: Option<u64>,
    /// Defaults to the example's server id.
    pub fl_srv_id: Option<NodeId>,
    /// Node executable for [`Mode::Proc`].
    pub program: Option<PathBuf>,
    pub recv_timeout: Duration,
    pub connect_timeout: Duration,
    pub per_node_timeout: Duration,
    /// Node to crash and the point after which it crashes.
    pub fault: Option<(NodeId, FaultPoint)>,
}

impl VerifyOptions {
    pub fn new(example: ExampleId, mode: Mode) -> Self {
        VerifyOptions {
            example,
            mode,
            no_nodes: 3,
            no_iters: 1,
            base_port: 6000,
            seed: None,
            fl_srv_id: None,
            program: None,
            recv_timeout: DEFAULT_RECV_TIMEOUT,
            connect_timeout: DEFAULT_CONNECT_TIMEOUT,
            per_node_timeout: DEFAULT_PER_NODE_TIMEOUT,
            fault: None,
        }
    }

    pub fn fl_srv_id(&self) -> NodeId {
        self.fl_srv_id
            .unwrap_or_else(|| self.example.default_fl_srv_id(self.no_nodes))
    }

    /// Arguments shared by every node process (before the identity flags).
    pub fn node_args(&self) -> Vec<String> {
        let mut args = vec![
            "node".to_string(),
            "--example".to_string(),
            self.example.to_string(),
            "--iters".to_string(),
            self.no_iters.to_string(),
            "--recv-timeout".to_string(),
            self.recv_timeout.as_secs_f64().to_string(),
            "--connect-timeout".to_string(),
            self.connect_timeout.as_secs_f64().to_string(),
        ];
        if let Some(seed) = self.seed {
            args.extend(["--seed".to_string(), seed.to_string()]);
        }
        if let Some((node, point)) = self.fault {
            args.extend([
                "--kill-node".to_string(),
                node.to_string(),
                "--after-phase".to_string(),
                point.flag_name().to_string(),
            ]);
        }
        args
    }
}

/// Runs the example and compares every node's result with the oracle.
pub fn run_and_verify(opts: &VerifyOptions) -> RunReport {
    let started = Instant::now();
    let fl_srv_id = opts.fl_srv_id();
    let ldata = opts.example.ldata(opts.no_nodes, opts.seed);
    let (oracle_name, oracle) = oracle_for(opts.example, &ldata, fl_srv_id, opts.no_iters);

    let mut diagnostics = Vec::new();
    let distributed: Vec<Option<Value>> = match opts.mode {
        Mode::InProc => {
            let pdata = vec![Value::Absent; opts.no_nodes];
            let cfg = FlConfig {
                no_iters: opts.no_iters,
                recv_timeout: opts.recv_timeout,
                connect_timeout: opts.connect_timeout,
                ..FlConfig::new(opts.no_nodes, 0, fl_srv_id, opts.base_port)
            };
            match run_inproc(opts.example.engine(), &cfg, &opts.example.callbacks(), &ldata, &pdata, opts.fault) {
                Ok(results) => results
                    .into_iter()
                    .enumerate()
                    .map(|(node, r)| match r {
                        Ok(v) => Some(v),
                        Err(e) => {
                            diagnostics.push(format!("node {node}: {e}"));
                            None
                        }
                    })
                    .collect(),
                Err(e) => {
                    diagnostics.push(e.to_string());
                    vec![None; opts.no_nodes]
                }
            }
        }
        Mode::Proc => run_proc(opts, fl_srv_id, &mut diagnostics),
    };

    let oracle_values = match oracle {
        Ok(values) => values,
        Err(e) => {
            diagnostics.push(format!("oracle failed: {e}"));
            vec![Value::Absent; opts.no_nodes]
        }
    };
    let per_node: Vec<NodeVerdict> = (0..opts.no_nodes)
        .map(|node_id| {
            let oracle = oracle_values.get(node_id).cloned().unwrap_or(Value::Absent);
            let distributed = distributed.get(node_id).cloned().flatten();
            let matched = match &distributed {
                Some(v) => !oracle.is_absent() && approx_eq_default(v, &oracle),
                None => false,
            };
            NodeVerdict {
                node_id,
                distributed: distributed.unwrap_or(Value::Absent),
                oracle,
                matched,
            }
        })
        .collect();
    for v in per_node.iter().filter(|v| !v.matched && !v.distributed.is_absent()) {
        diagnostics.push(format!(
            "node {} result {} differs from oracle {}",
            v.node_id, v.distributed, v.oracle
        ));
    }
    let overall_match = per_node.iter().all(|v| v.matched);
    RunReport {
        example: opts.example,
        mode: opts.mode,
        no_nodes: opts.no_nodes,
        no_iters: opts.no_iters,
        fl_srv_id,
        oracle: oracle_name,
        per_node,
        overall_match,
        diagnostic: if diagnostics.is_empty() {
            None
        } else {
            Some(diagnostics.join("; "))
        },
        wall_time: started.elapsed(),
    }
}

/// Per-node oracle values. For single iterations of examples 1 and 2 the
/// server entry of the simulator is cross-checked against the reference
/// program.
fn oracle_for(
    example: ExampleId,
    ldata: &[Value],
    fl_srv_id: NodeId,
    no_iters: usize,
) -> (String, Result<Vec<Value>, OracleError>) {
    let pdata = vec![Value::Absent; ldata.len()];
    let cb = example.callbacks();
    match example.engine() {
        Engine::Decentralized => ("sim_decentralized".into(), sim_decentralized(ldata, &pdata, &cb, no_iters)),
        Engine::Centralized => {
            let sim = sim_centralized(ldata, &pdata, fl_srv_id, &cb, no_iters);
            if no_iters != 1 {
                return ("sim_centralized".into(), sim);
            }
            let (name, reference) = match example {
                ExampleId::FederatedMap => {
                    let xs: Result<Vec<f64>, OracleError> = ldata
                        .iter()
                        .map(|v| v.as_number().ok_or_else(|| OracleError::Data(format!("expected a number, got {v}"))))
                        .collect();
                    ("seq_example1", xs.and_then(|xs| seq_example1(&xs, fl_srv_id)).map(Value::Number))
                }
                _ => ("seq_example2", seq_example2(ldata, fl_srv_id)),
            };
            let checked = sim.and_then(|values| {
                let reference = reference?;
                if values[fl_srv_id] != reference {
                    return Err(OracleError::Data(format!(
                        "simulator server result {} disagrees with reference program {reference}",
                        values[fl_srv_id]
                    )));
                }
                Ok(values)
            });
            (format!("{name}+sim_centralized"), checked)
        }
    }
}

/// Runs one federation as threads over a loopback network; one result per
/// node in node order.
pub fn run_inproc(
    engine: Engine,
    cfg: &FlConfig,
    cb: &CallbackPair,
    ldata: &[Value],
    pdata: &[Value],
    fault: Option<(NodeId, FaultPoint)>,
) -> Result<Vec<Result<Value, FlError>>, FlError> {
    if ldata.len() != cfg.no_nodes || pdata.len() != cfg.no_nodes {
        return Err(FlError::Config(format!(
            "{} local and {} private data entries for {} nodes",
            ldata.len(),
            pdata.len(),
            cfg.no_nodes
        )));
    }
    FlConfig { node_id: 0, ..cfg.clone() }.validate()?;
    let net = LoopbackNetwork::new(cfg.transport_config()).map_err(|e| FlError::Config(e.to_string()))?;
    let mut instances = Vec::with_capacity(cfg.no_nodes);
    for (node_id, transport) in net.endpoints().into_iter().enumerate() {
        let inst = FlInstance::with_transport(FlConfig { node_id, ..cfg.clone() }, Box::new(transport))?;
        if let Some((victim, point)) = fault {
            if victim == node_id {
                inst.inject_fault(Some(point));
            }
        }
        instances.push(inst);
    }
    let results = thread::scope(|s| {
        let handles: Vec<_> = instances
            .iter()
            .zip(ldata.iter().cloned().zip(pdata.iter().cloned()))
            .map(|(inst, (l, p))| {
                s.spawn(move || {
                    let out = match engine {
                        Engine::Centralized => inst.fl_centralized(cb, l, p, cfg.no_iters),
                        Engine::Decentralized => inst.fl_decentralized(cb, l, p, cfg.no_iters),
                    };
                    let _ = inst.shutdown();
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(FlError::Usage("node thread panicked".into()))))
            .collect()
    });
    Ok(results)
}

fn run_proc(opts: &VerifyOptions, fl_srv_id: NodeId, diagnostics: &mut Vec<String>) -> Vec<Option<Value>> {
    let mut results = vec![None; opts.no_nodes];
    let Some(program) = &opts.program else {
        diagnostics.push("process mode needs the node program path".into());
        return results;
    };
    let mut spec = LaunchSpec::new(program, opts.node_args(), opts.no_nodes, fl_srv_id, opts.base_port);
    spec.per_node_timeout = opts.per_node_timeout;
    let launched = match launch_all(&spec) {
        Ok(l) => l,
        Err(e) => {
            diagnostics.push(e.to_string());
            return results;
        }
    };
    for node in &launched.per_node {
        match parse_result_line(&node.stdout) {
            Some(Ok((id, v))) if id == node.node_id => results[id] = Some(v),
            Some(Ok((id, _))) => diagnostics.push(format!("node {} reported result for node {id}", node.node_id)),
            Some(Err(e)) => diagnostics.push(format!("node {}: bad result line: {e}", node.node_id)),
            None => {}
        }
        if !node.succeeded() {
            let status = match (node.timed_out, node.exit_code) {
                (true, _) => "hung and was terminated".to_string(),
                (false, Some(code)) => format!("exited with code {code}"),
                (false, None) => "was killed by a signal".to_string(),
            };
            let stderr = node.stderr.trim();
            if stderr.is_empty() {
                diagnostics.push(format!("node {} {status}", node.node_id));
            } else {
                diagnostics.push(format!("node {} {status}: {}", node.node_id, stderr.replace('\n', " | ")));
            }
        }
    }
    results
}

/// Finds the `RESULT <nodeId> <value>` line in a node's stdout.
pub fn parse_result_line(stdout: &str) -> Option<Result<(NodeId, Value), String>> {
    let line = stdout.lines().rev().find(|l| l.starts_with(RESULT_PREFIX))?;
    let rest = &line[RESULT_PREFIX.len()..];
    let parsed = (|| {
        let (id, value) = rest.split_once(' ').ok_or("missing value")?;
        let id: NodeId = id.parse().map_err(|_| format!("bad node id `{id}`"))?;
        let value = Value::decode(value.as_bytes()).map_err(|e| e.to_string())?;
        Ok((id, value))
    })();
    Some(parsed)
}

// ---------------------------------------------------------------------------
// Randomized engine/oracle equivalence.

/// Shape and callbacks of a randomized federation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Scalar readings with the threshold-indicator callbacks.
    Indicator,
    /// Single-element sequences with the pairwise-mean callbacks.
    PairMean,
    /// Single-element sequences with a position-weighted server, so the
    /// result depends on `msgs` order.
    Weighted,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Indicator, Family::PairMean, Family::Weighted];

    pub fn callbacks(self) -> CallbackPair {
        match self {
            Family::Indicator => ExampleId::FederatedMap.callbacks(),
            Family::PairMean => ExampleId::CentralizedAvg.callbacks(),
            Family::Weighted => weighted_callbacks(),
        }
    }
}

fn weighted_callbacks() -> CallbackPair {
    let head = |v: &Value| {
        v.as_single()
            .ok_or_else(|| CallbackError(format!("expected a one-element sequence, got {v}")))
    };
    CallbackPair::new(
        move |l, _, m| Ok(Value::single(0.25 * head(l)? + 0.75 * head(m)?)),
        move |_, msgs| {
            let mut num = 0.0;
            let mut den = 0.0;
            for (k, m) in msgs.iter().enumerate() {
                let w = (k + 1) as f64;
                num += w * head(m)?;
                den += w;
            }
            Ok(Value::single(num / den))
        },
    )
}

/// One randomized federation.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzCase {
    pub no_nodes: usize,
    pub no_iters: usize,
    pub fl_srv_id: NodeId,
    pub family: Family,
    pub ldata: Vec<Value>,
}

impl FuzzCase {
    /// Draws a case: 2..=8 nodes, 1..=3 iterations, values in [-1e6, 1e6].
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let no_nodes = rng.gen_range(2..=8);
        let no_iters = rng.gen_range(1..=3);
        let fl_srv_id = rng.gen_range(0..no_nodes);
        let family = *Family::ALL.choose(rng).expect("non-empty");
        let ldata = (0..no_nodes)
            .map(|_| {
                let x = rng.gen_range(-1e6..=1e6);
                match family {
                    Family::Indicator => Value::Number(x),
                    _ => Value::single(x),
                }
            })
            .collect();
        FuzzCase {
            no_nodes,
            no_iters,
            fl_srv_id,
            family,
            ldata,
        }
    }

    fn config(&self) -> FlConfig {
        FlConfig {
            no_iters: self.no_iters,
            ..FlConfig::new(self.no_nodes, 0, self.fl_srv_id, 0)
        }
    }
}

/// Runs `case` through the in-process engine and the matching simulator.
pub fn check_case(engine: Engine, case: &FuzzCase) -> Result<(), String> {
    let cb = case.family.callbacks();
    let pdata = vec![Value::Absent; case.no_nodes];
    let oracle = match engine {
        Engine::Centralized => sim_centralized(&case.ldata, &pdata, case.fl_srv_id, &cb, case.no_iters),
        Engine::Decentralized => sim_decentralized(&case.ldata, &pdata, &cb, case.no_iters),
    }
    .map_err(|e| format!("oracle failed: {e}"))?;
    let results = run_inproc(engine, &case.config(), &cb, &case.ldata, &pdata, None).map_err(|e| e.to_string())?;
    for (node, (got, want)) in results.into_iter().zip(&oracle).enumerate() {
        let got = got.map_err(|e| format!("node {node}: {e}"))?;
        if !approx_eq_default(&got, want) {
            return Err(format!("node {node}: engine {got} vs oracle {want}"));
        }
    }
    Ok(())
}

/// Runs `case` with tagged data and checks every server call sees `msgs`
/// sorted by ascending source id, with the expected number of calls.
///
/// Each node's local data is `[x, id]` and its private data is `id`; the
/// client callback keeps its own tag, so the tags in `msgs` are the senders.
pub fn check_ordering(engine: Engine, case: &FuzzCase) -> Result<(), String> {
    let violations: Arc<Mutex<Vec<String>>> = Arc::new(Mutex::new(Vec::new()));
    let calls = Arc::new(Mutex::new(0usize));
    let n = case.no_nodes;
    let srv = case.fl_srv_id;
    let cb = {
        let (violations, calls) = (Arc::clone(&violations), Arc::clone(&calls));
        CallbackPair::new(
            |l, _, m| {
                let (Some([Value::Number(x), tag]), Some([Value::Number(y), _])) = (l.as_seq(), m.as_seq()) else {
                    return Err(CallbackError::new("expected tagged data"));
                };
                Ok(Value::Seq(vec![Value::Number((x + y) / 2.0), tag.clone()]))
            },
            move |p, msgs| {
                *calls.lock().expect("calls") += 1;
                let me = p.as_number().ok_or_else(|| CallbackError::new("private data must be the node id"))? as usize;
                let tags: Vec<usize> = msgs
                    .iter()
                    .map(|m| m.as_seq().and_then(|s| s.get(1)).and_then(Value::as_number).unwrap_or(-1.0) as usize)
                    .collect();
                let expected: Vec<usize> = match engine {
                    Engine::Centralized => (0..n).filter(|&j| j != srv).collect(),
                    Engine::Decentralized => (0..n).filter(|&j| j != me).collect(),
                };
                if tags != expected {
                    violations
                        .lock()
                        .expect("violations")
                        .push(format!("node {me} saw sources {tags:?}, expected {expected:?}"));
                }
                let mean = msgs.iter().filter_map(|m| m.as_seq()?.first()?.as_number()).sum::<f64>() / msgs.len() as f64;
                Ok(Value::Seq(vec![Value::Number(mean), p.clone()]))
            },
        )
    };
    let ldata: Vec<Value> = case
        .ldata
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = v.as_number().or_else(|| v.as_single()).unwrap_or(0.0);
            Value::numbers([x, i as f64])
        })
        .collect();
    let pdata: Vec<Value> = (0..n).map(|i| Value::Number(i as f64)).collect();
    let results = run_inproc(engine, &case.config(), &cb, &ldata, &pdata, None).map_err(|e| e.to_string())?;
    for (node, r) in results.into_iter().enumerate() {
        r.map_err(|e| format!("node {node}: {e}"))?;
    }
    let expected_calls = match engine {
        Engine::Centralized => case.no_iters,
        Engine::Decentralized => n * case.no_iters,
    };
    let calls = *calls.lock().expect("calls");
    if calls != expected_calls {
        return Err(format!("server callback ran {calls} times, expected {expected_calls}"));
    }
    let violations = violations.lock().expect("violations");
    match violations.first() {
        Some(v) => Err(v.clone()),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzFailure {
    pub trial: usize,
    pub case: FuzzCase,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FuzzSummary {
    pub engine: Engine,
    pub seed: u64,
    pub trials: usize,
    pub passed: usize,
    pub ordering_ok: usize,
    pub failures: Vec<FuzzFailure>,
}

impl FuzzSummary {
    pub fn all_passed(&self) -> bool {
        self.passed == self.trials && self.ordering_ok == self.trials
    }
}

impl fmt::Display for FuzzSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let engine = match self.engine {
            Engine::Centralized => "cent",
            Engine::Decentralized => "decent",
        };
        writeln!(
            f,
            "fuzz engine={engine} seed={} equivalence {}/{} ordering {}/{}",
            self.seed, self.passed, self.trials, self.ordering_ok, self.trials
        )?;
        for fail in &self.failures {
            writeln!(
                f,
                "FAIL trial={} nodes={} iters={} srv={} family={:?} ldata={} : {}",
                fail.trial,
                fail.case.no_nodes,
                fail.case.no_iters,
                fail.case.fl_srv_id,
                fail.case.family,
                Value::Seq(fail.case.ldata.clone()),
                fail.detail
            )?;
        }
        Ok(())
    }
}

/// Runs `trials` random federations through the in-process engine and the
/// simulator; deterministic for a fixed seed.
pub fn fuzz_verify(engine: Engine, trials: usize, seed: u64) -> FuzzSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = FuzzSummary {
        engine,
        seed,
        trials,
        passed: 0,
        ordering_ok: 0,
        failures: Vec::new(),
    };
    for trial in 0..trials {
        let case = FuzzCase::random(&mut rng);
        match check_case(engine, &case) {
            Ok(()) => summary.passed += 1,
            Err(detail) => summary.failures.push(FuzzFailure {
                trial,
                case: case.clone(),
                detail,
            }),
        }
        match check_ordering(engine, &case) {
            Ok(()) => summary.ordering_ok += 1,
            Err(detail) => summary.failures.push(FuzzFailure {
                trial,
                case,
                detail: format!("ordering: {detail}"),
            }),
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> RunReport {
        RunReport {
            example: ExampleId::CentralizedAvg,
            mode: Mode::InProc,
            no_nodes: 2,
            no_iters: 1,
            fl_srv_id: 0,
            oracle: "seq_example2+sim_centralized".into(),
            per_node: vec![
                NodeVerdict {
                    node_id: 0,
                    distributed: Value::single(1.5),
                    oracle: Value::single(1.5),
                    matched: true,
                },
                NodeVerdict {
                    node_id: 1,
                    distributed: Value::Absent,
                    oracle: Value::single(1.5),
                    matched: false,
                },
            ],
            overall_match: false,
            diagnostic: Some("node 1: \"gone\"".into()),
            wall_time: Duration::from_millis(1500),
        }
    }

    #[test]
    fn report_text_round_trips() {
        let report = sample_report();
        let text = report.to_text();
        assert!(text.starts_with(r#"{"example":2,"mode":"inproc","noNodes":2,"noIters":1,"flSrvId":0,"#));
        assert!(text.ends_with(r#","wallTime":1.5}"#));
        assert_eq!(RunReport::parse(&text).unwrap(), report);
        let clean = RunReport {
            diagnostic: None,
            ..report
        };
        assert_eq!(RunReport::parse(&clean.to_text()).unwrap(), clean);
        assert!(RunReport::parse("{}").is_err());
    }

    #[test]
    fn result_lines() {
        assert_eq!(parse_result_line("noise\nRESULT 2 [1.75]\n"), Some(Ok((2, Value::single(1.75)))));
        assert!(parse_result_line("nothing here").is_none());
        assert!(matches!(parse_result_line("RESULT x 1"), Some(Err(_))));
        assert!(matches!(parse_result_line("RESULT 1 [1,"), Some(Err(_))));
    }

    #[test]
    fn inproc_examples_match_oracles() {
        for example in ExampleId::ALL {
            let report = run_and_verify(&VerifyOptions::new(example, Mode::InProc));
            assert!(report.overall_match, "{}", report.to_text());
            assert_eq!(report.exit_code(), 0);
        }
    }

    #[test]
    fn proc_mode_without_program_fails_cleanly() {
        let report = run_and_verify(&VerifyOptions::new(ExampleId::FederatedMap, Mode::Proc));
        assert!(!report.overall_match);
        assert_eq!(report.exit_code(), 1);
        assert!(report.diagnostic.unwrap().contains("program"));
    }

    #[test]
    fn degenerate_zero_case_passes() {
        let case = FuzzCase {
            no_nodes: 4,
            no_iters: 1,
            fl_srv_id: 0,
            family: Family::PairMean,
            ldata: vec![Value::single(0.0); 4],
        };
        assert_eq!(check_case(Engine::Centralized, &case), Ok(()));
        assert_eq!(check_ordering(Engine::Centralized, &case), Ok(()));
    }

    #[test]
    fn weighted_server_depends_on_order() {
        let cb = weighted_callbacks();
        let a = cb.server(&Value::Absent, &[Value::single(1.0), Value::single(4.0)]).unwrap();
        let b = cb.server(&Value::Absent, &[Value::single(4.0), Value::single(1.0)]).unwrap();
        assert_eq!(a, Value::single(3.0));
        assert_eq!(b, Value::single(2.0));
    }

    #[test]
    fn fuzz_is_deterministic() {
        let a = fuzz_verify(Engine::Decentralized, 5, 9);
        let b = fuzz_verify(Engine::Decentralized, 5, 9);
        assert_eq!(a, b);
        assert!(a.all_passed(), "{a}");
    }
}
