//! Envelope delivery between nodes.
//!
//! Two implementations share the [`Transport`] contract: [`TcpTransport`]
//! (node `i` listens on `127.0.0.1:base_port + i`, frames are a 4-byte
//! big-endian length followed by the envelope text) and
//! [`LoopbackNetwork`], an in-process mesh used by tests and in-process runs.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::io::{self, Read, Write};
use std::net::{Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::text::{ParseError, Reader};
use crate::value::{read_value, Value, ValueError};

pub type NodeId = usize;

/// Frames above this size are treated as corruption.
pub const MAX_FRAME_LEN: u32 = 64 << 20;

pub const DEFAULT_CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_RECV_TIMEOUT: Duration = Duration::from_secs(30);
const CONNECT_RETRY: Duration = Duration::from_millis(100);

/// Protocol phase tag of an envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    /// Centralized: server broadcast of its local data.
    SrvData,
    /// Centralized: client reply with its updated local data.
    CliData,
    /// Decentralized phase I: every node broadcasts its local data.
    DecPhase1,
    /// Decentralized phase II: client-role reply to a phase-I sender.
    DecPhase2Reply,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::SrvData, Phase::CliData, Phase::DecPhase1, Phase::DecPhase2Reply];

    pub fn wire_name(self) -> &'static str {
        match self {
            Phase::SrvData => "SRV_DATA",
            Phase::CliData => "CLI_DATA",
            Phase::DecPhase1 => "DEC_P1",
            Phase::DecPhase2Reply => "DEC_P2",
        }
    }

    pub fn from_wire_name(name: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.wire_name() == name)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

/// One wire message.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub src: NodeId,
    pub dst: NodeId,
    pub phase: Phase,
    pub iter: u64,
    pub payload: Value,
}

impl Envelope {
    /// Canonical body: `{"src":..,"dst":..,"phase":"..","iter":..,"payload":..}`.
    pub fn encode_body(&self) -> Result<Vec<u8>, ValueError> {
        self.payload.validate()?;
        let mut out = format!(
            "{{\"src\":{},\"dst\":{},\"phase\":\"{}\",\"iter\":{},\"payload\":",
            self.src,
            self.dst,
            self.phase.wire_name(),
            self.iter
        );
        self.payload.write_canonical(&mut out);
        out.push('}');
        Ok(out.into_bytes())
    }

    pub fn decode_body(bytes: &[u8]) -> Result<Envelope, ParseError> {
        let mut r = Reader::new(bytes);
        r.expect(b'{')?;
        r.key("src")?;
        let src = node_id(&mut r)?;
        r.expect(b',')?;
        r.key("dst")?;
        let dst = node_id(&mut r)?;
        r.expect(b',')?;
        r.key("phase")?;
        let at = r.pos();
        let name = r.string()?;
        let phase = Phase::from_wire_name(&name)
            .ok_or_else(|| r.error_at(at, format!("unknown phase \"{name}\"")))?;
        r.expect(b',')?;
        r.key("iter")?;
        let iter = r.uint()?;
        r.expect(b',')?;
        r.key("payload")?;
        let payload = read_value(&mut r, false)?;
        r.expect(b'}')?;
        r.finish()?;
        Ok(Envelope {
            src,
            dst,
            phase,
            iter,
            payload,
        })
    }

    /// Length-prefixed frame ready for the wire.
    pub fn encode_frame(&self) -> Result<Vec<u8>, ValueError> {
        let body = self.encode_body()?;
        let mut frame = Vec::with_capacity(body.len() + 4);
        frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
        frame.extend_from_slice(&body);
        Ok(frame)
    }

    /// Decodes exactly one complete frame.
    pub fn decode_frame(frame: &[u8]) -> Result<Envelope, ParseError> {
        if frame.len() < 4 {
            return Err(ParseError {
                offset: frame.len(),
                message: "frame shorter than its length prefix".into(),
            });
        }
        let len = u32::from_be_bytes(frame[..4].try_into().expect("4 bytes")) as usize;
        if frame.len() - 4 != len {
            return Err(ParseError {
                offset: 0,
                message: format!("length prefix {len} does not match body of {} bytes", frame.len() - 4),
            });
        }
        Envelope::decode_body(&frame[4..]).map_err(|e| ParseError {
            offset: e.offset + 4,
            message: e.message,
        })
    }
}

fn node_id(r: &mut Reader<'_>) -> Result<NodeId, ParseError> {
    let at = r.pos();
    let raw = r.uint()?;
    NodeId::try_from(raw).map_err(|_| r.error_at(at, "node id out of range"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportConfig {
    pub base_port: u16,
    pub no_nodes: usize,
    pub connect_timeout: Duration,
    pub recv_timeout: Duration,
}

impl TransportConfig {
    pub fn new(base_port: u16, no_nodes: usize) -> Self {
        TransportConfig {
            base_port,
            no_nodes,
            connect_timeout: DEFAULT_CONNECT_TIMEOUT,
            recv_timeout: DEFAULT_RECV_TIMEOUT,
        }
    }

    /// Listening port of `node`.
    pub fn port_of(&self, node: NodeId) -> Result<u16, TransportError> {
        u16::try_from(node)
            .ok()
            .and_then(|n| self.base_port.checked_add(n))
            .ok_or_else(|| TransportError::Config(format!("port for node {node} exceeds 65535")))
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if self.no_nodes < 2 {
            return Err(TransportError::Config(format!("no_nodes must be at least 2, got {}", self.no_nodes)));
        }
        if self.recv_timeout.is_zero() {
            return Err(TransportError::Config("recv_timeout must be positive".into()));
        }
        self.port_of(self.no_nodes - 1).map(|_| ())
    }

    fn check_node(&self, node: NodeId) -> Result<(), TransportError> {
        if node >= self.no_nodes {
            return Err(TransportError::Config(format!(
                "node id {node} out of range for {} nodes",
                self.no_nodes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("invalid transport configuration: {0}")]
    Config(String),
    #[error("cannot bind port {port}: {source}")]
    Bind { port: u16, source: io::Error },
    #[error("node {dst} unreachable: {reason}")]
    Unreachable { dst: NodeId, reason: String },
    #[error("timed out waiting for {phase} iteration {iter}; missing node(s) {missing:?}")]
    Timeout {
        phase: Phase,
        iter: u64,
        missing: Vec<NodeId>,
    },
    #[error("invalid envelope: {0}")]
    BadEnvelope(String),
    #[error("transport is closed")]
    Closed,
    #[error("receive failed: {0}")]
    Receive(String),
}

/// Per-peer message counters, indexed by node id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TransportStats {
    pub sent_to: Vec<u64>,
    pub received_from: Vec<u64>,
}

impl TransportStats {
    fn new(no_nodes: usize) -> Self {
        TransportStats {
            sent_to: vec![0; no_nodes],
            received_from: vec![0; no_nodes],
        }
    }
}

/// The delivery contract shared by the wire and loopback transports.
pub trait Transport: Send {
    fn node_id(&self) -> NodeId;

    fn no_nodes(&self) -> usize;

    /// Hands `env` to the destination; per (src, dst) pair delivery is FIFO.
    fn send(&mut self, env: Envelope) -> Result<(), TransportError>;

    /// Blocks until `expected_count` envelopes tagged (`phase`, `iter`) have
    /// arrived and returns them sorted by ascending `src`. Envelopes with
    /// other tags stay queued.
    fn recv_matching(&mut self, phase: Phase, iter: u64, expected_count: usize)
        -> Result<Vec<Envelope>, TransportError>;

    /// Like [`Transport::recv_matching`] but waits for exactly one envelope
    /// from each of `sources`, so a timeout can name the silent nodes.
    fn recv_from(&mut self, phase: Phase, iter: u64, sources: &[NodeId]) -> Result<Vec<Envelope>, TransportError>;

    fn stats(&self) -> TransportStats;

    /// Releases the node's resources. Idempotent.
    fn close(&mut self);
}

enum Want<'a> {
    Count(usize),
    From(&'a [NodeId]),
}

#[derive(Default)]
struct Inbox {
    queue: VecDeque<Envelope>,
    failure: Option<String>,
    closed: bool,
}

/// Receive queue of one node: envelopes in arrival order plus a condition
/// variable for blocking matches.
#[derive(Default)]
struct Mailbox {
    inbox: Mutex<Inbox>,
    arrived: Condvar,
}

impl Mailbox {
    fn push(&self, env: Envelope) -> Result<(), TransportError> {
        let mut inbox = self.inbox.lock().expect("mailbox poisoned");
        if inbox.closed {
            return Err(TransportError::Unreachable {
                dst: env.dst,
                reason: "node has shut down".into(),
            });
        }
        inbox.queue.push_back(env);
        self.arrived.notify_all();
        Ok(())
    }

    fn fail(&self, reason: String) {
        let mut inbox = self.inbox.lock().expect("mailbox poisoned");
        inbox.failure.get_or_insert(reason);
        self.arrived.notify_all();
    }

    fn close(&self) {
        let mut inbox = self.inbox.lock().expect("mailbox poisoned");
        inbox.closed = true;
        self.arrived.notify_all();
    }

    fn take(
        &self,
        me: NodeId,
        no_nodes: usize,
        phase: Phase,
        iter: u64,
        want: Want<'_>,
        timeout: Duration,
    ) -> Result<Vec<Envelope>, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut inbox = self.inbox.lock().expect("mailbox poisoned");
        loop {
            if let Some(reason) = &inbox.failure {
                return Err(TransportError::Receive(reason.clone()));
            }
            if inbox.closed {
                return Err(TransportError::Closed);
            }
            let picked = pick(&inbox.queue, phase, iter, &want);
            let satisfied = match want {
                Want::Count(n) => picked.len() >= n,
                Want::From(sources) => picked.len() == sources.len(),
            };
            if satisfied {
                // Remove back to front so earlier indices stay valid.
                let mut indices = picked;
                indices.sort_unstable();
                let mut out: Vec<Envelope> = indices
                    .iter()
                    .rev()
                    .map(|&i| inbox.queue.remove(i).expect("index in range"))
                    .collect();
                out.sort_by_key(|e| e.src);
                return Ok(out);
            }
            let now = Instant::now();
            if now >= deadline {
                let present: Vec<NodeId> = picked.iter().map(|&i| inbox.queue[i].src).collect();
                let candidates: Vec<NodeId> = match want {
                    Want::Count(_) => (0..no_nodes).filter(|&n| n != me).collect(),
                    Want::From(sources) => sources.to_vec(),
                };
                let missing = candidates.into_iter().filter(|n| !present.contains(n)).collect();
                return Err(TransportError::Timeout { phase, iter, missing });
            }
            inbox = self
                .arrived
                .wait_timeout(inbox, deadline - now)
                .expect("mailbox poisoned")
                .0;
        }
    }
}

/// Queue indices chosen for a match, earliest arrival first.
fn pick(queue: &VecDeque<Envelope>, phase: Phase, iter: u64, want: &Want<'_>) -> Vec<usize> {
    let matching = queue
        .iter()
        .enumerate()
        .filter(|(_, e)| e.phase == phase && e.iter == iter);
    match want {
        Want::Count(n) => matching.take(*n).map(|(i, _)| i).collect(),
        Want::From(sources) => {
            let mut chosen: Vec<(NodeId, usize)> = Vec::with_capacity(sources.len());
            for (i, e) in matching {
                if sources.contains(&e.src) && !chosen.iter().any(|(s, _)| *s == e.src) {
                    chosen.push((e.src, i));
                }
            }
            chosen.into_iter().map(|(_, i)| i).collect()
        }
    }
}

fn check_outgoing(cfg: &TransportConfig, me: NodeId, env: &Envelope) -> Result<(), TransportError> {
    if env.src != me {
        return Err(TransportError::BadEnvelope(format!(
            "envelope src {} sent from node {me}",
            env.src
        )));
    }
    if env.dst >= cfg.no_nodes || env.dst == me {
        return Err(TransportError::BadEnvelope(format!("invalid destination {}", env.dst)));
    }
    env.payload
        .validate()
        .map_err(|e| TransportError::BadEnvelope(e.to_string()))
}

fn check_sources(cfg: &TransportConfig, me: NodeId, sources: &[NodeId]) -> Result<(), TransportError> {
    for (i, &s) in sources.iter().enumerate() {
        if s >= cfg.no_nodes || s == me || sources[..i].contains(&s) {
            return Err(TransportError::Config(format!("invalid source set {sources:?}")));
        }
    }
    Ok(())
}

/// In-process mesh of `no_nodes` mailboxes.
pub struct LoopbackNetwork {
    cfg: TransportConfig,
    mailboxes: Arc<Vec<Mailbox>>,
}

impl LoopbackNetwork {
    pub fn new(cfg: TransportConfig) -> Result<Self, TransportError> {
        cfg.validate()?;
        let mailboxes = Arc::new((0..cfg.no_nodes).map(|_| Mailbox::default()).collect());
        Ok(LoopbackNetwork { cfg, mailboxes })
    }

    pub fn endpoint(&self, node: NodeId) -> Result<LoopbackTransport, TransportError> {
        self.cfg.check_node(node)?;
        Ok(LoopbackTransport {
            id: node,
            cfg: self.cfg.clone(),
            mailboxes: Arc::clone(&self.mailboxes),
            stats: TransportStats::new(self.cfg.no_nodes),
        })
    }

    /// One endpoint per node, in node order.
    pub fn endpoints(&self) -> Vec<LoopbackTransport> {
        (0..self.cfg.no_nodes)
            .map(|n| self.endpoint(n).expect("node in range"))
            .collect()
    }
}

pub struct LoopbackTransport {
    id: NodeId,
    cfg: TransportConfig,
    mailboxes: Arc<Vec<Mailbox>>,
    stats: TransportStats,
}

impl Transport for LoopbackTransport {
    fn node_id(&self) -> NodeId {
        self.id
    }

    fn no_nodes(&self) -> usize {
        self.cfg.no_nodes
    }

    fn send(&mut self, env: Envelope) -> Result<(), TransportError> {
        check_outgoing(&self.cfg, self.id, &env)?;
        let dst = env.dst;
        self.mailboxes[dst].push(env)?;
        self.stats.sent_to[dst] += 1;
        Ok(())
    }

    fn recv_matching(&mut self, phase: Phase, iter: u64, expected_count: usize) -> Result<Vec<Envelope>, TransportError> {
        if expected_count == 0 {
            return Err(TransportError::Config("expected_count must be at least 1".into()));
        }
        let got = self.mailboxes[self.id].take(
            self.id,
            self.cfg.no_nodes,
            phase,
            iter,
            Want::Count(expected_count),
            self.cfg.recv_timeout,
        )?;
        got.iter().for_each(|e| self.stats.received_from[e.src] += 1);
        Ok(got)
    }

    fn recv_from(&mut self, phase: Phase, iter: u64, sources: &[NodeId]) -> Result<Vec<Envelope>, TransportError> {
        check_sources(&self.cfg, self.id, sources)?;
        let got = self.mailboxes[self.id].take(
            self.id,
            self.cfg.no_nodes,
            phase,
            iter,
            Want::From(sources),
            self.cfg.recv_timeout,
        )?;
        got.iter().for_each(|e| self.stats.received_from[e.src] += 1);
        Ok(got)
    }

    fn stats(&self) -> TransportStats {
        self.stats.clone()
    }

    fn close(&mut self) {
        self.mailboxes[self.id].close();
    }
}

/// Wire transport over loopback TCP.
/// Accepted connections and their reader threads.
type Incoming = Arc<Mutex<Vec<(TcpStream, JoinHandle<()>)>>>;

pub struct TcpTransport {
    id: NodeId,
    cfg: TransportConfig,
    addr: SocketAddr,
    mailbox: Arc<Mailbox>,
    outgoing: HashMap<NodeId, TcpStream>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    incoming: Incoming,
    stats: TransportStats,
}

impl TcpTransport {
    /// Listens on `127.0.0.1:base_port + node`.
    pub fn bind(cfg: TransportConfig, node: NodeId) -> Result<Self, TransportError> {
        cfg.validate()?;
        cfg.check_node(node)?;
        let port = cfg.port_of(node)?;
        let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
        let listener = TcpListener::bind(addr).map_err(|source| TransportError::Bind { port, source })?;

        let mailbox = Arc::new(Mailbox::default());
        let stop = Arc::new(AtomicBool::new(false));
        let incoming = Arc::new(Mutex::new(Vec::new()));
        let acceptor = {
            let (mailbox, stop, incoming) = (Arc::clone(&mailbox), Arc::clone(&stop), Arc::clone(&incoming));
            thread::Builder::new()
                .name(format!("accept-{node}"))
                .spawn(move || accept_loop(listener, node, mailbox, stop, incoming))
                .map_err(|e| TransportError::Receive(e.to_string()))?
        };

        Ok(TcpTransport {
            id: node,
            stats: TransportStats::new(cfg.no_nodes),
            cfg,
            addr,
            mailbox,
            outgoing: HashMap::new(),
            stop,
            acceptor: Some(acceptor),
            incoming,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    fn connect(&self, dst: NodeId) -> Result<TcpStream, TransportError> {
        let port = self.cfg.port_of(dst)?;
        let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
        let deadline = Instant::now() + self.cfg.connect_timeout;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let attempt = if remaining.is_zero() {
                Err(io::Error::new(io::ErrorKind::TimedOut, "connect deadline reached"))
            } else {
                TcpStream::connect_timeout(&addr, remaining)
            };
            match attempt {
                Ok(stream) => {
                    let _ = stream.set_nodelay(true);
                    return Ok(stream);
                }
                Err(e) => {
                    let remaining = deadline.saturating_duration_since(Instant::now());
                    if remaining.is_zero() {
                        return Err(TransportError::Unreachable {
                            dst,
                            reason: format!("no listener on port {port} within {:?}: {e}", self.cfg.connect_timeout),
                        });
                    }
                    thread::sleep(CONNECT_RETRY.min(remaining));
                }
            }
        }
    }
}

fn accept_loop(
    listener: TcpListener,
    me: NodeId,
    mailbox: Arc<Mailbox>,
    stop: Arc<AtomicBool>,
    incoming: Incoming,
) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        let Ok(handle) = stream.try_clone() else { continue };
        let mailbox = Arc::clone(&mailbox);
        let reader = thread::spawn(move || read_frames(stream, me, mailbox));
        incoming.lock().expect("incoming poisoned").push((handle, reader));
    }
}

fn read_frames(mut stream: TcpStream, me: NodeId, mailbox: Arc<Mailbox>) {
    let mut prefix = [0u8; 4];
    loop {
        match stream.read_exact(&mut prefix) {
            Ok(()) => {}
            // Peer closed the connection between frames.
            Err(_) => return,
        }
        let len = u32::from_be_bytes(prefix);
        if len > MAX_FRAME_LEN {
            mailbox.fail(format!("frame length {len} exceeds limit"));
            return;
        }
        let mut body = vec![0u8; len as usize];
        if let Err(e) = stream.read_exact(&mut body) {
            mailbox.fail(format!("truncated frame: {e}"));
            return;
        }
        match Envelope::decode_body(&body) {
            Ok(env) if env.dst == me => {
                if mailbox.push(env).is_err() {
                    return;
                }
            }
            Ok(env) => {
                mailbox.fail(format!("envelope for node {} delivered to node {me}", env.dst));
                return;
            }
            Err(e) => {
                mailbox.fail(format!("undecodable frame: {e}"));
                return;
            }
        }
    }
}

impl Transport for TcpTransport {
    fn node_id(&self) -> NodeId {
        self.id
    }

    fn no_nodes(&self) -> usize {
        self.cfg.no_nodes
    }

    fn send(&mut self, env: Envelope) -> Result<(), TransportError> {
        if self.acceptor.is_none() {
            return Err(TransportError::Closed);
        }
        check_outgoing(&self.cfg, self.id, &env)?;
        let dst = env.dst;
        let frame = env
            .encode_frame()
            .map_err(|e| TransportError::BadEnvelope(e.to_string()))?;
        if !self.outgoing.contains_key(&dst) {
            let stream = self.connect(dst)?;
            self.outgoing.insert(dst, stream);
        }
        let stream = self.outgoing.get_mut(&dst).expect("connection cached");
        stream.write_all(&frame).map_err(|e| TransportError::Unreachable {
            dst,
            reason: format!("write failed: {e}"),
        })?;
        self.stats.sent_to[dst] += 1;
        Ok(())
    }

    fn recv_matching(&mut self, phase: Phase, iter: u64, expected_count: usize) -> Result<Vec<Envelope>, TransportError> {
        if expected_count == 0 {
            return Err(TransportError::Config("expected_count must be at least 1".into()));
        }
        let got = self.mailbox.take(
            self.id,
            self.cfg.no_nodes,
            phase,
            iter,
            Want::Count(expected_count),
            self.cfg.recv_timeout,
        )?;
        got.iter().for_each(|e| self.stats.received_from[e.src] += 1);
        Ok(got)
    }

    fn recv_from(&mut self, phase: Phase, iter: u64, sources: &[NodeId]) -> Result<Vec<Envelope>, TransportError> {
        check_sources(&self.cfg, self.id, sources)?;
        let got = self.mailbox.take(
            self.id,
            self.cfg.no_nodes,
            phase,
            iter,
            Want::From(sources),
            self.cfg.recv_timeout,
        )?;
        got.iter().for_each(|e| self.stats.received_from[e.src] += 1);
        Ok(got)
    }

    fn stats(&self) -> TransportStats {
        self.stats.clone()
    }

    fn close(&mut self) {
        let Some(acceptor) = self.acceptor.take() else { return };
        for (_, stream) in self.outgoing.drain() {
            let _ = stream.shutdown(Shutdown::Both);
        }
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept so the listener is dropped.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        let _ = acceptor.join();
        let readers = std::mem::take(&mut *self.incoming.lock().expect("incoming poisoned"));
        for (stream, reader) in readers {
            let _ = stream.shutdown(Shutdown::Both);
            let _ = reader.join();
        }
        self.mailbox.close();
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        self.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(src: NodeId, dst: NodeId, phase: Phase, iter: u64, x: f64) -> Envelope {
        Envelope {
            src,
            dst,
            phase,
            iter,
            payload: Value::Number(x),
        }
    }

    fn fast(no_nodes: usize) -> TransportConfig {
        TransportConfig {
            recv_timeout: Duration::from_millis(200),
            ..TransportConfig::new(0, no_nodes)
        }
    }

    #[test]
    fn body_has_fixed_key_order() {
        let e = env(0, 2, Phase::CliData, 0, 0.0);
        assert_eq!(
            e.encode_body().unwrap(),
            br#"{"src":0,"dst":2,"phase":"CLI_DATA","iter":0,"payload":0}"#
        );
        let reordered = br#"{"dst":2,"src":0,"phase":"CLI_DATA","iter":0,"payload":0}"#;
        assert_eq!(Envelope::decode_body(reordered).unwrap_err().offset, 1);
    }

    #[test]
    fn frame_errors() {
        let mut frame = env(1, 0, Phase::DecPhase1, 3, 1.5).encode_frame().unwrap();
        assert_eq!(Envelope::decode_frame(&frame).unwrap(), env(1, 0, Phase::DecPhase1, 3, 1.5));
        frame.push(b' ');
        assert!(Envelope::decode_frame(&frame).is_err());
        assert!(Envelope::decode_frame(&[0, 0]).is_err());
        let bad_phase = br#"{"src":0,"dst":1,"phase":"NOPE","iter":0,"payload":0}"#;
        assert_eq!(Envelope::decode_body(bad_phase).unwrap_err().offset, 25);
    }

    #[test]
    fn recv_sorts_by_src_and_keeps_other_phases() {
        let net = LoopbackNetwork::new(fast(4)).unwrap();
        let mut eps = net.endpoints();
        eps[3].send(env(3, 0, Phase::CliData, 0, 3.0)).unwrap();
        eps[2].send(env(2, 0, Phase::DecPhase1, 0, 9.0)).unwrap();
        eps[1].send(env(1, 0, Phase::CliData, 0, 1.0)).unwrap();
        let got = eps[0].recv_matching(Phase::CliData, 0, 2).unwrap();
        assert_eq!(got.iter().map(|e| e.src).collect::<Vec<_>>(), vec![1, 3]);
        let later = eps[0].recv_matching(Phase::DecPhase1, 0, 1).unwrap();
        assert_eq!(later[0].payload, Value::Number(9.0));
    }

    #[test]
    fn recv_keeps_other_iterations() {
        let net = LoopbackNetwork::new(fast(2)).unwrap();
        let mut eps = net.endpoints();
        eps[1].send(env(1, 0, Phase::CliData, 1, 11.0)).unwrap();
        eps[1].send(env(1, 0, Phase::CliData, 0, 10.0)).unwrap();
        assert_eq!(eps[0].recv_from(Phase::CliData, 0, &[1]).unwrap()[0].payload, Value::Number(10.0));
        assert_eq!(eps[0].recv_from(Phase::CliData, 1, &[1]).unwrap()[0].payload, Value::Number(11.0));
    }

    #[test]
    fn fifo_per_pair() {
        let net = LoopbackNetwork::new(fast(2)).unwrap();
        let mut eps = net.endpoints();
        eps[0].send(env(0, 1, Phase::SrvData, 0, 1.0)).unwrap();
        eps[0].send(env(0, 1, Phase::SrvData, 0, 2.0)).unwrap();
        let first = eps[1].recv_matching(Phase::SrvData, 0, 1).unwrap();
        let second = eps[1].recv_matching(Phase::SrvData, 0, 1).unwrap();
        assert_eq!(first[0].payload, Value::Number(1.0));
        assert_eq!(second[0].payload, Value::Number(2.0));
    }

    #[test]
    fn timeout_names_missing_sources() {
        let net = LoopbackNetwork::new(fast(3)).unwrap();
        let mut eps = net.endpoints();
        eps[0].send(env(0, 2, Phase::CliData, 0, 0.0)).unwrap();
        match eps[2].recv_matching(Phase::CliData, 0, 2) {
            Err(TransportError::Timeout { phase, iter, missing }) => {
                assert_eq!((phase, iter, missing), (Phase::CliData, 0, vec![1]));
            }
            other => panic!("expected timeout, got {other:?}"),
        }
        // The partial match was not consumed.
        assert_eq!(eps[2].recv_from(Phase::CliData, 0, &[0]).unwrap().len(), 1);
        match eps[2].recv_from(Phase::SrvData, 0, &[1]) {
            Err(TransportError::Timeout { missing, .. }) => assert_eq!(missing, vec![1]),
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_envelopes_and_sources() {
        let net = LoopbackNetwork::new(fast(3)).unwrap();
        let mut eps = net.endpoints();
        assert!(matches!(eps[0].send(env(1, 2, Phase::SrvData, 0, 0.0)), Err(TransportError::BadEnvelope(_))));
        assert!(matches!(eps[0].send(env(0, 0, Phase::SrvData, 0, 0.0)), Err(TransportError::BadEnvelope(_))));
        assert!(matches!(eps[0].send(env(0, 3, Phase::SrvData, 0, 0.0)), Err(TransportError::BadEnvelope(_))));
        assert!(matches!(
            eps[0].send(env(0, 1, Phase::SrvData, 0, f64::NAN)),
            Err(TransportError::BadEnvelope(_))
        ));
        assert!(eps[0].recv_from(Phase::SrvData, 0, &[1, 1]).is_err());
        assert!(eps[0].recv_from(Phase::SrvData, 0, &[0]).is_err());
        assert!(eps[0].recv_matching(Phase::SrvData, 0, 0).is_err());
        assert!(net.endpoint(3).is_err());
    }

    #[test]
    fn send_to_closed_loopback_node_fails() {
        let net = LoopbackNetwork::new(fast(2)).unwrap();
        let mut eps = net.endpoints();
        eps[1].close();
        match eps[0].send(env(0, 1, Phase::SrvData, 0, 0.0)) {
            Err(TransportError::Unreachable { dst, .. }) => assert_eq!(dst, 1),
            other => panic!("expected unreachable, got {other:?}"),
        }
        assert!(matches!(eps[1].recv_matching(Phase::SrvData, 0, 1), Err(TransportError::Closed)));
    }

    #[test]
    fn config_validation() {
        assert!(TransportConfig::new(6000, 1).validate().is_err());
        assert!(TransportConfig::new(65534, 3).validate().is_err());
        let zero = TransportConfig {
            recv_timeout: Duration::ZERO,
            ..TransportConfig::new(6000, 3)
        };
        assert!(zero.validate().is_err());
        assert_eq!(TransportConfig::new(6000, 3).port_of(2).unwrap(), 6002);
    }
}
