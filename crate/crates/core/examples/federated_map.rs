//! Example 1: every client reports whether its reading is above the server's,
//! and the server turns the answers into a fraction.
//!
//!     cargo run --example federated_map

use fltestbed::elementary::seq_example1;
use fltestbed::harness::run_inproc;
use fltestbed::{Engine, ExampleId, FlConfig, Value};

fn main() {
    let example = ExampleId::FederatedMap;
    let ldata = example.canonical_ldata();
    let no_nodes = ldata.len();
    let srv = example.default_fl_srv_id(no_nodes);
    let cfg = FlConfig::new(no_nodes, 0, srv, 6000);
    let pdata = vec![Value::Absent; no_nodes];

    let results = run_inproc(Engine::Centralized, &cfg, &example.callbacks(), &ldata, &pdata, None)
        .expect("loopback network");
    for (node, r) in results.iter().enumerate() {
        let role = if node == srv { "server" } else { "client" };
        println!("node {node} ({role}) local {} -> {}", ldata[node], r.as_ref().expect("node failed"));
    }

    let readings: Vec<f64> = ldata.iter().filter_map(Value::as_number).collect();
    println!("sequential reference: {}", seq_example1(&readings, srv).unwrap());
}
