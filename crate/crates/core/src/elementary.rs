//! The three elementary federated algorithms and their sequential
//! reference programs.
//!
//! 1. Federated map: clients report whether their sensor reading exceeds the
//!    server's threshold, the server averages the indicators.
//! 2. Centralized averaging: clients average their single-element model with
//!    the server's, the server averages the client results.
//! 3. Decentralized averaging: the callbacks of example 2 run under the
//!    decentralized engine.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::flapi::{CallbackError, CallbackPair};
use crate::transport::NodeId;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExampleId {
    FederatedMap,
    CentralizedAvg,
    DecentralizedAvg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engine {
    Centralized,
    Decentralized,
}

impl ExampleId {
    pub const ALL: [ExampleId; 3] = [ExampleId::FederatedMap, ExampleId::CentralizedAvg, ExampleId::DecentralizedAvg];

    pub fn number(self) -> u8 {
        match self {
            ExampleId::FederatedMap => 1,
            ExampleId::CentralizedAvg => 2,
            ExampleId::DecentralizedAvg => 3,
        }
    }

    pub fn from_number(n: u8) -> Option<Self> {
        ExampleId::ALL.into_iter().find(|e| e.number() == n)
    }

    pub fn engine(self) -> Engine {
        match self {
            ExampleId::DecentralizedAvg => Engine::Decentralized,
            _ => Engine::Centralized,
        }
    }

    pub fn callbacks(self) -> CallbackPair {
        match self {
            ExampleId::FederatedMap => CallbackPair::new(ex1_client, ex1_server),
            ExampleId::CentralizedAvg | ExampleId::DecentralizedAvg => CallbackPair::new(ex2_client, ex2_server),
        }
    }

    /// Server node used when none is given: the last node for example 1
    /// (its reference program treats the last node as server), node 0
    /// otherwise.
    pub fn default_fl_srv_id(self, no_nodes: usize) -> NodeId {
        match self {
            ExampleId::FederatedMap => no_nodes.saturating_sub(1),
            _ => 0,
        }
    }

    /// The published three-node input data.
    pub fn canonical_ldata(self) -> Vec<Value> {
        match self {
            ExampleId::FederatedMap => vec![Value::Number(68.0), Value::Number(70.5), Value::Number(69.5)],
            ExampleId::CentralizedAvg | ExampleId::DecentralizedAvg => {
                vec![Value::single(1.0), Value::single(2.0), Value::single(3.0)]
            }
        }
    }

    /// Local data for a run: the canonical data when `seed` is `None` and
    /// `no_nodes == 3`, otherwise values drawn deterministically from `seed`
    /// (readings in `[60, 80)` for example 1, `[-1e6, 1e6)` otherwise).
    pub fn ldata(self, no_nodes: usize, seed: Option<u64>) -> Vec<Value> {
        if seed.is_none() && no_nodes == 3 {
            return self.canonical_ldata();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0) ^ u64::from(self.number()) << 56);
        (0..no_nodes)
            .map(|_| match self {
                ExampleId::FederatedMap => Value::Number(rng.gen_range(60.0..80.0)),
                _ => Value::single(rng.gen_range(-1e6..1e6)),
            })
            .collect()
    }

    pub fn spec(self) -> ExampleSpec {
        ExampleSpec {
            id: self,
            callbacks: self.callbacks(),
            default_ldata: self.canonical_ldata(),
            default_fl_srv_id: self.default_fl_srv_id(3),
            engine: self.engine(),
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for ExampleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse::<u8>()
            .ok()
            .and_then(ExampleId::from_number)
            .ok_or_else(|| format!("unknown example `{s}` (expected 1, 2 or 3)"))
    }
}

/// Everything needed to run one example on its canonical data.
#[derive(Debug, Clone)]
pub struct ExampleSpec {
    pub id: ExampleId,
    pub callbacks: CallbackPair,
    pub default_ldata: Vec<Value>,
    pub default_fl_srv_id: NodeId,
    pub engine: Engine,
}

fn number(v: &Value, what: &str) -> Result<f64, CallbackError> {
    v.as_number()
        .ok_or_else(|| CallbackError(format!("{what} must be a number, got {v}")))
}

fn single(v: &Value, what: &str) -> Result<f64, CallbackError> {
    v.as_single()
        .ok_or_else(|| CallbackError(format!("{what} must be a one-element sequence, got {v}")))
}

fn mean(xs: &[f64]) -> Result<f64, CallbackError> {
    if xs.is_empty() {
        return Err(CallbackError::new("mean of an empty message list"));
    }
    Ok(xs.iter().sum::<f64>() / xs.len() as f64)
}

/// 1.0 if the client's reading is strictly above the threshold in `msg`.
pub fn ex1_client(local: &Value, _private: &Value, msg: &Value) -> Result<Value, CallbackError> {
    let reading = number(local, "local data")?;
    let threshold = number(msg, "msg")?;
    Ok(Value::Number(if reading > threshold { 1.0 } else { 0.0 }))
}

pub fn ex1_server(_private: &Value, msgs: &[Value]) -> Result<Value, CallbackError> {
    let xs = msgs
        .iter()
        .map(|m| number(m, "msgs element"))
        .collect::<Result<Vec<_>, _>>()?;
    mean(&xs).map(Value::Number)
}

pub fn ex2_client(local: &Value, _private: &Value, msg: &Value) -> Result<Value, CallbackError> {
    let own = single(local, "local data")?;
    let other = single(msg, "msg")?;
    Ok(Value::single((own + other) / 2.0))
}

pub fn ex2_server(_private: &Value, msgs: &[Value]) -> Result<Value, CallbackError> {
    let totals = msgs
        .iter()
        .map(|m| single(m, "msgs element"))
        .collect::<Result<Vec<_>, _>>()?;
    mean(&totals).map(Value::single)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error("callback failed on node {node}: {source}")]
    Callback { node: NodeId, source: CallbackError },
}

fn check_layout(len: usize, fl_srv_id: NodeId) -> Result<(), OracleError> {
    if len < 2 {
        return Err(OracleError::Config(format!("need at least 2 nodes, got {len}")));
    }
    if fl_srv_id >= len {
        return Err(OracleError::Config(format!("server id {fl_srv_id} out of range for {len} nodes")));
    }
    Ok(())
}

/// Sequential program of example 1: the server's final value.
pub fn seq_example1(ldata: &[f64], fl_srv_id: NodeId) -> Result<f64, OracleError> {
    check_layout(ldata.len(), fl_srv_id)?;
    let threshold = ldata[fl_srv_id];
    let mut tmp_arr = Vec::with_capacity(ldata.len() - 1);
    for (node_id, &client_reading) in ldata.iter().enumerate() {
        if node_id == fl_srv_id {
            continue;
        }
        let mut tmp = 0.0;
        if client_reading > threshold {
            tmp = 1.0;
        }
        tmp_arr.push(tmp);
    }
    // The code executed by the server
    Ok(tmp_arr.iter().sum::<f64>() / tmp_arr.len() as f64)
}

/// Sequential program of example 2 (one iteration): the server's final value.
pub fn seq_example2(ldata: &[Value], fl_srv_id: NodeId) -> Result<Value, OracleError> {
    check_layout(ldata.len(), fl_srv_id)?;
    let head = |v: &Value| {
        v.as_single()
            .ok_or_else(|| OracleError::Data(format!("expected a one-element sequence, got {v}")))
    };
    let msg = head(&ldata[fl_srv_id])?;
    let mut tmp_arr = Vec::with_capacity(ldata.len() - 1);
    for (node_id, v) in ldata.iter().enumerate() {
        if node_id == fl_srv_id {
            continue;
        }
        tmp_arr.push(Value::single((head(v)? + msg) / 2.0));
    }
    // The code executed by the server
    let mut tmp = 0.0;
    for lst in &tmp_arr {
        tmp += head(lst)?;
    }
    tmp /= tmp_arr.len() as f64;
    Ok(Value::single(tmp))
}
