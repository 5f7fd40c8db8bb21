//! The programming model: one [`FlInstance`] per node, driven by a
//! [`CallbackPair`] through the centralized or decentralized engine.
//!
//! Every node of a federation calls the same engine with the same
//! iteration count. The engine moves data between nodes and invokes the
//! user callbacks:
//!
//! * centralized: per iteration the server (`fl_srv_id`) broadcasts its local
//!   data, every client replaces its local data with
//!   `client(local, private, msg)` and replies, and the server replaces its
//!   local data with `server(private, msgs)` where `msgs` is ordered by
//!   ascending client id;
//! * decentralized: per iteration every node broadcasts its local data
//!   (phase I), answers every peer with `client(local, private, peer_msg)`
//!   computed from its iteration-start data (phase II), and finally sets its
//!   local data to `server(private, replies)` (phase III).

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::transport::{
    Envelope, NodeId, Phase, TcpTransport, Transport, TransportConfig, TransportError, DEFAULT_CONNECT_TIMEOUT,
    DEFAULT_RECV_TIMEOUT,
};
use crate::value::Value;

/// Error raised by a user callback.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct CallbackError(pub String);

impl CallbackError {
    pub fn new(msg: impl Into<String>) -> Self {
        CallbackError(msg.into())
    }
}

pub type ClientFn = dyn Fn(&Value, &Value, &Value) -> Result<Value, CallbackError> + Send + Sync;
pub type ServerFn = dyn Fn(&Value, &[Value]) -> Result<Value, CallbackError> + Send + Sync;

/// Client callback `(local_data, private_data, msg) -> updated local data`
/// and server callback `(private_data, msgs) -> updated local data`.
///
/// Callbacks must be deterministic functions of their arguments.
#[derive(Clone)]
pub struct CallbackPair {
    client: Arc<ClientFn>,
    server: Arc<ServerFn>,
}

impl CallbackPair {
    pub fn new<C, S>(client: C, server: S) -> Self
    where
        C: Fn(&Value, &Value, &Value) -> Result<Value, CallbackError> + Send + Sync + 'static,
        S: Fn(&Value, &[Value]) -> Result<Value, CallbackError> + Send + Sync + 'static,
    {
        CallbackPair {
            client: Arc::new(client),
            server: Arc::new(server),
        }
    }

    pub fn client(&self, local: &Value, private: &Value, msg: &Value) -> Result<Value, CallbackError> {
        (self.client)(local, private, msg)
    }

    pub fn server(&self, private: &Value, msgs: &[Value]) -> Result<Value, CallbackError> {
        (self.server)(private, msgs)
    }
}

impl fmt::Debug for CallbackPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CallbackPair")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlConfig {
    pub no_nodes: usize,
    pub node_id: NodeId,
    pub fl_srv_id: NodeId,
    pub base_port: u16,
    pub no_iters: usize,
    pub connect_timeout: Duration,
    pub recv_timeout: Duration,
}

impl FlConfig {
    pub fn new(no_nodes: usize, node_id: NodeId, fl_srv_id: NodeId, base_port: u16) -> Self {
        FlConfig {
            no_nodes,
            node_id,
            fl_srv_id,
            base_port,
            no_iters: 1,
            connect_timeout: DEFAULT_CONNECT_TIMEOUT,
            recv_timeout: DEFAULT_RECV_TIMEOUT,
        }
    }

    pub fn validate(&self) -> Result<(), FlError> {
        let fail = |msg: String| Err(FlError::Config(msg));
        if self.no_nodes < 2 {
            return fail(format!("a federation needs at least 2 nodes, got {}", self.no_nodes));
        }
        if self.node_id >= self.no_nodes {
            return fail(format!("node id {} out of range for {} nodes", self.node_id, self.no_nodes));
        }
        if self.fl_srv_id >= self.no_nodes {
            return fail(format!("server id {} out of range for {} nodes", self.fl_srv_id, self.no_nodes));
        }
        if self.no_iters == 0 {
            return fail("no_iters must be at least 1".into());
        }
        self.transport_config()
            .validate()
            .map_err(|e| FlError::Config(e.to_string()))
    }

    pub fn transport_config(&self) -> TransportConfig {
        TransportConfig {
            base_port: self.base_port,
            no_nodes: self.no_nodes,
            connect_timeout: self.connect_timeout,
            recv_timeout: self.recv_timeout,
        }
    }

    fn peers(&self) -> Vec<NodeId> {
        (0..self.no_nodes).filter(|&n| n != self.node_id).collect()
    }
}

/// Point after which a node simulates a crash (first iteration only).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultPoint {
    /// Decentralized: after the phase-I broadcast.
    AfterDecPhase1,
    /// Decentralized: after sending all phase-II replies.
    AfterDecPhase2,
    /// Centralized server: after broadcasting its local data.
    AfterSrvBroadcast,
    /// Centralized client: after replying to the server.
    AfterCliReply,
}

impl FaultPoint {
    pub fn flag_name(self) -> &'static str {
        match self {
            FaultPoint::AfterDecPhase1 => "p1",
            FaultPoint::AfterDecPhase2 => "p2",
            FaultPoint::AfterSrvBroadcast => "srv",
            FaultPoint::AfterCliReply => "cli",
        }
    }
}

impl FromStr for FaultPoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "p1" => Ok(FaultPoint::AfterDecPhase1),
            "p2" => Ok(FaultPoint::AfterDecPhase2),
            "srv" => Ok(FaultPoint::AfterSrvBroadcast),
            "cli" => Ok(FaultPoint::AfterCliReply),
            other => Err(format!("unknown phase `{other}` (expected p1, p2, srv or cli)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum FlError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("protocol timeout in phase {phase} iteration {iter}: no message from node(s) {missing:?}")]
    Timeout {
        phase: Phase,
        iter: u64,
        missing: Vec<NodeId>,
    },
    #[error("transport error in phase {phase} iteration {iter}: {source}")]
    Transport {
        phase: Phase,
        iter: u64,
        #[source]
        source: TransportError,
    },
    #[error("{role} callback failed on node {node} in iteration {iter}: {source}")]
    Callback {
        node: NodeId,
        role: &'static str,
        iter: u64,
        #[source]
        source: CallbackError,
    },
    #[error("node {node} stopped by injected fault after {}", point.flag_name())]
    Killed { node: NodeId, point: FaultPoint },
}

impl FlError {
    pub fn is_timeout(&self) -> bool {
        matches!(self, FlError::Timeout { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Idle,
    Running,
    Closed,
}

/// One node's handle on the federation.
pub struct FlInstance {
    cfg: FlConfig,
    state: Mutex<State>,
    transport: Mutex<Option<Box<dyn Transport>>>,
    fault: Mutex<Option<FaultPoint>>,
}

impl FlInstance {
    /// Validates `cfg` and binds the wire transport for `cfg.node_id`.
    pub fn new(cfg: FlConfig) -> Result<Self, FlError> {
        cfg.validate()?;
        let transport = TcpTransport::bind(cfg.transport_config(), cfg.node_id).map_err(|e| match e {
            TransportError::Config(msg) => FlError::Config(msg),
            other => FlError::Transport {
                phase: Phase::SrvData,
                iter: 0,
                source: other,
            },
        })?;
        Ok(Self::assemble(cfg, Box::new(transport)))
    }

    /// Uses an existing transport endpoint, e.g. from a loopback network.
    pub fn with_transport(cfg: FlConfig, transport: Box<dyn Transport>) -> Result<Self, FlError> {
        cfg.validate()?;
        if transport.node_id() != cfg.node_id || transport.no_nodes() != cfg.no_nodes {
            return Err(FlError::Config(format!(
                "transport is node {} of {}, config is node {} of {}",
                transport.node_id(),
                transport.no_nodes(),
                cfg.node_id,
                cfg.no_nodes
            )));
        }
        Ok(Self::assemble(cfg, transport))
    }

    fn assemble(cfg: FlConfig, transport: Box<dyn Transport>) -> Self {
        FlInstance {
            cfg,
            state: Mutex::new(State::Idle),
            transport: Mutex::new(Some(transport)),
            fault: Mutex::new(None),
        }
    }

    pub fn config(&self) -> &FlConfig {
        &self.cfg
    }

    pub fn node_id(&self) -> NodeId {
        self.cfg.node_id
    }

    pub fn is_server(&self) -> bool {
        self.cfg.node_id == self.cfg.fl_srv_id
    }

    /// Arms a simulated crash for the next engine run.
    pub fn inject_fault(&self, point: Option<FaultPoint>) {
        *self.fault.lock().expect("fault poisoned") = point;
    }

    pub fn fl_centralized(
        &self,
        cb: &CallbackPair,
        ldata: Value,
        pdata: Value,
        no_iters: usize,
    ) -> Result<Value, FlError> {
        self.run(ldata, pdata, no_iters, |run, ldata| run.centralized(cb, ldata))
    }

    pub fn fl_decentralized(
        &self,
        cb: &CallbackPair,
        ldata: Value,
        pdata: Value,
        no_iters: usize,
    ) -> Result<Value, FlError> {
        self.run(ldata, pdata, no_iters, |run, ldata| run.decentralized(cb, ldata))
    }

    /// Releases the port. Idempotent; fails only while an engine is running.
    pub fn shutdown(&self) -> Result<(), FlError> {
        let mut state = self.state.lock().expect("state poisoned");
        match *state {
            State::Running => Err(FlError::Usage("shutdown called during an engine run".into())),
            State::Closed => Ok(()),
            State::Idle => {
                *state = State::Closed;
                drop(state);
                if let Some(mut t) = self.transport.lock().expect("transport poisoned").take() {
                    t.close();
                }
                Ok(())
            }
        }
    }

    fn run<F>(&self, ldata: Value, pdata: Value, no_iters: usize, engine: F) -> Result<Value, FlError>
    where
        F: FnOnce(&mut Run<'_>, Value) -> Result<Value, FlError>,
    {
        if no_iters == 0 {
            return Err(FlError::Config("no_iters must be at least 1".into()));
        }
        for (name, v) in [("ldata", &ldata), ("pdata", &pdata)] {
            v.validate().map_err(|e| FlError::Config(format!("{name}: {e}")))?;
        }
        {
            let mut state = self.state.lock().expect("state poisoned");
            match *state {
                State::Running => return Err(FlError::Usage("an engine run is already in progress".into())),
                State::Closed => return Err(FlError::Usage("instance has been shut down".into())),
                State::Idle => *state = State::Running,
            }
        }
        let mut slot = self.transport.lock().expect("transport poisoned");
        let transport = slot.as_mut().expect("idle instance owns a transport");
        let mut run = Run {
            cfg: &self.cfg,
            transport: transport.as_mut(),
            pdata: &pdata,
            no_iters,
            fault: *self.fault.lock().expect("fault poisoned"),
        };
        let outcome = engine(&mut run, ldata);
        let failed = outcome.is_err();
        if failed {
            // Best-effort shutdown: peers observe the node as gone.
            if let Some(mut t) = slot.take() {
                t.close();
            }
        }
        drop(slot);
        *self.state.lock().expect("state poisoned") = if failed { State::Closed } else { State::Idle };
        outcome
    }
}

impl Drop for FlInstance {
    fn drop(&mut self) {
        if let Ok(slot) = self.transport.get_mut() {
            if let Some(mut t) = slot.take() {
                t.close();
            }
        }
    }
}

/// State of one engine invocation.
struct Run<'a> {
    cfg: &'a FlConfig,
    transport: &'a mut dyn Transport,
    pdata: &'a Value,
    no_iters: usize,
    fault: Option<FaultPoint>,
}

impl Run<'_> {
    fn centralized(&mut self, cb: &CallbackPair, mut ldata: Value) -> Result<Value, FlError> {
        let server = self.cfg.fl_srv_id;
        let clients: Vec<NodeId> = (0..self.cfg.no_nodes).filter(|&n| n != server).collect();
        for k in 0..self.no_iters as u64 {
            if self.cfg.node_id == server {
                for &c in &clients {
                    self.send(c, Phase::SrvData, k, ldata.clone())?;
                }
                self.checkpoint(FaultPoint::AfterSrvBroadcast, k)?;
                let msgs = self.collect(Phase::CliData, k, &clients)?;
                ldata = self.call_server(cb, &msgs, k)?;
            } else {
                let msg = self.collect(Phase::SrvData, k, &[server])?;
                ldata = self.call_client(cb, &ldata, &msg[0], k)?;
                self.send(server, Phase::CliData, k, ldata.clone())?;
                self.checkpoint(FaultPoint::AfterCliReply, k)?;
            }
        }
        Ok(ldata)
    }

    fn decentralized(&mut self, cb: &CallbackPair, mut ldata: Value) -> Result<Value, FlError> {
        let peers = self.cfg.peers();
        for k in 0..self.no_iters as u64 {
            // Phase I: server role, broadcast.
            for &p in &peers {
                self.send(p, Phase::DecPhase1, k, ldata.clone())?;
            }
            self.checkpoint(FaultPoint::AfterDecPhase1, k)?;

            // Phase II: client role, answer each peer from iteration-start data.
            let inbound = self
                .transport
                .recv_from(Phase::DecPhase1, k, &peers)
                .map_err(|e| lift(Phase::DecPhase1, k, e))?;
            for env in inbound {
                let reply = self.call_client(cb, &ldata, &env.payload, k)?;
                self.send(env.src, Phase::DecPhase2Reply, k, reply)?;
            }
            self.checkpoint(FaultPoint::AfterDecPhase2, k)?;

            // Phase III: server role, aggregate the replies.
            let replies = self.collect(Phase::DecPhase2Reply, k, &peers)?;
            ldata = self.call_server(cb, &replies, k)?;
        }
        Ok(ldata)
    }

    fn send(&mut self, dst: NodeId, phase: Phase, iter: u64, payload: Value) -> Result<(), FlError> {
        let env = Envelope {
            src: self.cfg.node_id,
            dst,
            phase,
            iter,
            payload,
        };
        self.transport.send(env).map_err(|e| lift(phase, iter, e))
    }

    /// Payloads from `sources`, ascending by source id.
    fn collect(&mut self, phase: Phase, iter: u64, sources: &[NodeId]) -> Result<Vec<Value>, FlError> {
        let envs = self
            .transport
            .recv_from(phase, iter, sources)
            .map_err(|e| lift(phase, iter, e))?;
        Ok(envs.into_iter().map(|e| e.payload).collect())
    }

    fn call_client(&self, cb: &CallbackPair, ldata: &Value, msg: &Value, iter: u64) -> Result<Value, FlError> {
        let out = cb
            .client(ldata, self.pdata, msg)
            .and_then(|v| v.validate().map(|_| v).map_err(|e| CallbackError(format!("invalid result: {e}"))));
        out.map_err(|source| FlError::Callback {
            node: self.cfg.node_id,
            role: "client",
            iter,
            source,
        })
    }

    fn call_server(&self, cb: &CallbackPair, msgs: &[Value], iter: u64) -> Result<Value, FlError> {
        let out = cb
            .server(self.pdata, msgs)
            .and_then(|v| v.validate().map(|_| v).map_err(|e| CallbackError(format!("invalid result: {e}"))));
        out.map_err(|source| FlError::Callback {
            node: self.cfg.node_id,
            role: "server",
            iter,
            source,
        })
    }

    fn checkpoint(&self, point: FaultPoint, iter: u64) -> Result<(), FlError> {
        if iter == 0 && self.fault == Some(point) {
            return Err(FlError::Killed {
                node: self.cfg.node_id,
                point,
            });
        }
        Ok(())
    }
}

fn lift(phase: Phase, iter: u64, e: TransportError) -> FlError {
    match e {
        TransportError::Timeout { phase, iter, missing } => FlError::Timeout { phase, iter, missing },
        source => FlError::Transport { phase, iter, source },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::LoopbackNetwork;
    use std::thread;

    fn avg_pair() -> CallbackPair {
        CallbackPair::new(
            |l, _, m| Ok(Value::single((l.as_single().unwrap() + m.as_single().unwrap()) / 2.0)),
            |_, msgs| {
                let xs: Vec<f64> = msgs.iter().map(|m| m.as_single().unwrap()).collect();
                Ok(Value::single(xs.iter().sum::<f64>() / xs.len() as f64))
            },
        )
    }

    fn loopback(no_nodes: usize, fl_srv_id: NodeId) -> Vec<FlInstance> {
        let mut cfg = FlConfig::new(no_nodes, 0, fl_srv_id, 0);
        cfg.recv_timeout = Duration::from_millis(300);
        let net = LoopbackNetwork::new(cfg.transport_config()).unwrap();
        net.endpoints()
            .into_iter()
            .enumerate()
            .map(|(i, t)| FlInstance::with_transport(FlConfig { node_id: i, ..cfg.clone() }, Box::new(t)).unwrap())
            .collect()
    }

    #[test]
    fn config_errors() {
        assert!(matches!(FlConfig::new(1, 0, 0, 6000).validate(), Err(FlError::Config(_))));
        assert!(matches!(FlConfig::new(3, 3, 0, 6000).validate(), Err(FlError::Config(_))));
        assert!(matches!(FlConfig::new(3, 0, 3, 6000).validate(), Err(FlError::Config(_))));
        let mut cfg = FlConfig::new(3, 0, 0, 6000);
        cfg.no_iters = 0;
        assert!(cfg.validate().is_err());
        assert!(FlConfig::new(3, 2, 2, 6000).validate().is_ok());
    }

    #[test]
    fn fault_flag_names_round_trip() {
        for p in [
            FaultPoint::AfterDecPhase1,
            FaultPoint::AfterDecPhase2,
            FaultPoint::AfterSrvBroadcast,
            FaultPoint::AfterCliReply,
        ] {
            assert_eq!(p.flag_name().parse::<FaultPoint>().unwrap(), p);
        }
        assert!("p3".parse::<FaultPoint>().is_err());
    }

    #[test]
    fn two_node_decentralized_meets_in_the_middle() {
        let nodes = loopback(2, 0);
        let cb = avg_pair();
        let results: Vec<Value> = thread::scope(|s| {
            let handles: Vec<_> = nodes
                .iter()
                .zip([2.0, 6.0])
                .map(|(n, x)| {
                    let cb = cb.clone();
                    s.spawn(move || n.fl_decentralized(&cb, Value::single(x), Value::Absent, 1).unwrap())
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(results, vec![Value::single(4.0), Value::single(4.0)]);
    }

    #[test]
    fn instance_is_reusable_between_runs_and_closed_after_shutdown() {
        let nodes = loopback(2, 0);
        let cb = avg_pair();
        for _ in 0..2 {
            thread::scope(|s| {
                for n in &nodes {
                    let cb = cb.clone();
                    s.spawn(move || n.fl_centralized(&cb, Value::single(1.0), Value::Absent, 2).unwrap());
                }
            });
        }
        nodes[0].shutdown().unwrap();
        nodes[0].shutdown().unwrap();
        assert!(matches!(
            nodes[0].fl_centralized(&cb, Value::single(1.0), Value::Absent, 1),
            Err(FlError::Usage(_))
        ));
    }

    #[test]
    fn zero_iterations_and_bad_inputs_rejected() {
        let nodes = loopback(2, 0);
        let cb = avg_pair();
        assert!(matches!(nodes[0].fl_centralized(&cb, Value::single(1.0), Value::Absent, 0), Err(FlError::Config(_))));
        assert!(matches!(
            nodes[0].fl_centralized(&cb, Value::Number(f64::NAN), Value::Absent, 1),
            Err(FlError::Config(_))
        ));
    }

    #[test]
    fn missing_peer_times_out_naming_it() {
        let nodes = loopback(3, 0);
        let cb = avg_pair();
        let (srv, c1) = thread::scope(|s| {
            let srv = s.spawn(|| nodes[0].fl_centralized(&cb, Value::single(1.0), Value::Absent, 1));
            let c1 = s.spawn(|| nodes[1].fl_centralized(&cb, Value::single(2.0), Value::Absent, 1));
            (srv.join().unwrap(), c1.join().unwrap())
        });
        assert!(c1.is_ok());
        match srv {
            Err(FlError::Timeout { phase, iter, missing }) => {
                assert_eq!((phase, iter, missing), (Phase::CliData, 0, vec![2]));
            }
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn callback_error_propagates_and_closes_instance() {
        let nodes = loopback(2, 0);
        let failing = CallbackPair::new(|_, _, _| Err(CallbackError::new("boom")), |_, msgs| Ok(msgs[0].clone()));
        let (srv, cli) = thread::scope(|s| {
            let srv = s.spawn(|| nodes[0].fl_centralized(&failing, Value::Number(1.0), Value::Absent, 1));
            let cli = s.spawn(|| nodes[1].fl_centralized(&failing, Value::Number(2.0), Value::Absent, 1));
            (srv.join().unwrap(), cli.join().unwrap())
        });
        match cli {
            Err(FlError::Callback { node, role, source, .. }) => {
                assert_eq!((node, role, source.0.as_str()), (1, "client", "boom"));
            }
            other => panic!("expected callback error, got {other:?}"),
        }
        assert!(srv.unwrap_err().is_timeout());
        assert!(matches!(
            nodes[1].fl_centralized(&failing, Value::Number(2.0), Value::Absent, 1),
            Err(FlError::Usage(_))
        ));
    }

    #[test]
    fn non_finite_callback_result_is_a_callback_error() {
        let nodes = loopback(2, 1);
        let cb = CallbackPair::new(|_, _, _| Ok(Value::Number(f64::INFINITY)), |_, m| Ok(m[0].clone()));
        let res = thread::scope(|s| {
            s.spawn(|| nodes[1].fl_centralized(&cb, Value::Number(0.0), Value::Absent, 1));
            nodes[0].fl_centralized(&cb, Value::Number(0.0), Value::Absent, 1)
        });
        assert!(matches!(res, Err(FlError::Callback { role: "client", .. })));
    }

    #[test]
    fn shutdown_during_run_is_a_usage_error() {
        let nodes = Arc::new(loopback(2, 0));
        let probe = Arc::clone(&nodes);
        let observed = Arc::new(Mutex::new(None));
        let seen = Arc::clone(&observed);
        let cb = CallbackPair::new(
            move |l, _, _| {
                *seen.lock().unwrap() = Some(matches!(probe[1].shutdown(), Err(FlError::Usage(_))));
                Ok(l.clone())
            },
            |_, msgs| Ok(msgs[0].clone()),
        );
        thread::scope(|s| {
            s.spawn(|| nodes[0].fl_centralized(&cb, Value::Number(0.0), Value::Absent, 1).unwrap());
            nodes[1].fl_centralized(&cb, Value::Number(1.0), Value::Absent, 1).unwrap();
        });
        assert_eq!(*observed.lock().unwrap(), Some(true));
    }

    #[test]
    fn injected_fault_stops_the_node() {
        let nodes = loopback(2, 0);
        nodes[1].inject_fault(Some(FaultPoint::AfterDecPhase1));
        let cb = avg_pair();
        let (a, b) = thread::scope(|s| {
            let a = s.spawn(|| nodes[0].fl_decentralized(&cb, Value::single(1.0), Value::Absent, 1));
            let b = s.spawn(|| nodes[1].fl_decentralized(&cb, Value::single(2.0), Value::Absent, 1));
            (a.join().unwrap(), b.join().unwrap())
        });
        assert!(matches!(b, Err(FlError::Killed { node: 1, point: FaultPoint::AfterDecPhase1 })));
        // Node 0 either fails to reply to the closed peer or times out on it.
        match a {
            Err(FlError::Timeout { missing, .. }) => assert_eq!(missing, vec![1]),
            Err(FlError::Transport { source: TransportError::Unreachable { dst, .. }, .. }) => assert_eq!(dst, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
