//! Single-process simulators of both engines, used as oracles for any
//! deterministic callback pair.

use crate::elementary::OracleError;
use crate::flapi::CallbackPair;
use crate::transport::NodeId;
use crate::value::Value;

fn check_inputs(ldata: &[Value], pdata: &[Value], no_iters: usize) -> Result<(), OracleError> {
    if ldata.len() < 2 {
        return Err(OracleError::Config(format!("need at least 2 nodes, got {}", ldata.len())));
    }
    if pdata.len() != ldata.len() {
        return Err(OracleError::Config(format!(
            "{} private data entries for {} nodes",
            pdata.len(),
            ldata.len()
        )));
    }
    if no_iters == 0 {
        return Err(OracleError::Config("no_iters must be at least 1".into()));
    }
    Ok(())
}

/// Final local data of every node after `no_iters` centralized iterations.
pub fn sim_centralized(
    ldata: &[Value],
    pdata: &[Value],
    fl_srv_id: NodeId,
    cb: &CallbackPair,
    no_iters: usize,
) -> Result<Vec<Value>, OracleError> {
    check_inputs(ldata, pdata, no_iters)?;
    if fl_srv_id >= ldata.len() {
        return Err(OracleError::Config(format!(
            "server id {fl_srv_id} out of range for {} nodes",
            ldata.len()
        )));
    }
    let mut state = ldata.to_vec();
    for _ in 0..no_iters {
        let msg = state[fl_srv_id].clone();
        let mut msgs = Vec::with_capacity(state.len() - 1);
        for node in (0..state.len()).filter(|&n| n != fl_srv_id) {
            let updated = cb
                .client(&state[node], &pdata[node], &msg)
                .map_err(|source| OracleError::Callback { node, source })?;
            msgs.push(updated.clone());
            state[node] = updated;
        }
        state[fl_srv_id] = cb
            .server(&pdata[fl_srv_id], &msgs)
            .map_err(|source| OracleError::Callback { node: fl_srv_id, source })?;
    }
    Ok(state)
}

/// Final local data of every node after `no_iters` decentralized iterations.
///
/// Per iteration node `j` answers node `i` with
/// `client(start_j, pdata_j, start_i)`, then node `i` aggregates the answers
/// of all `j != i` in ascending `j`.
pub fn sim_decentralized(
    ldata: &[Value],
    pdata: &[Value],
    cb: &CallbackPair,
    no_iters: usize,
) -> Result<Vec<Value>, OracleError> {
    check_inputs(ldata, pdata, no_iters)?;
    let n = ldata.len();
    let mut state = ldata.to_vec();
    for _ in 0..no_iters {
        let start = state.clone();
        for i in 0..n {
            let mut replies = Vec::with_capacity(n - 1);
            for j in (0..n).filter(|&j| j != i) {
                let r = cb
                    .client(&start[j], &pdata[j], &start[i])
                    .map_err(|source| OracleError::Callback { node: j, source })?;
                replies.push(r);
            }
            state[i] = cb
                .server(&pdata[i], &replies)
                .map_err(|source| OracleError::Callback { node: i, source })?;
        }
    }
    Ok(state)
}
