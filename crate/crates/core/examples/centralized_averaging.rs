//! Example 2 over real TCP sockets, one thread per node.
//!
//!     cargo run --example centralized_averaging -- [BASE_PORT]

use std::thread;

use fltestbed::elementary::seq_example2;
use fltestbed::{ExampleId, FlConfig, FlInstance, Value};

fn main() {
    let base_port: u16 = std::env::args().nth(1).map_or(6100, |p| p.parse().expect("port"));
    let example = ExampleId::CentralizedAvg;
    let ldata = example.canonical_ldata();
    let n = ldata.len();
    let srv = example.default_fl_srv_id(n);
    let cb = example.callbacks();

    let handles: Vec<_> = (0..n)
        .map(|id| {
            let (cb, local) = (cb.clone(), ldata[id].clone());
            thread::spawn(move || {
                let inst = FlInstance::new(FlConfig::new(n, id, srv, base_port)).expect("bind");
                let out = inst.fl_centralized(&cb, local, Value::Absent, 1);
                inst.shutdown().ok();
                out
            })
        })
        .collect();
    for (id, h) in handles.into_iter().enumerate() {
        println!("node {id}: {}", h.join().unwrap().expect("run failed"));
    }
    println!("server reference: {}", seq_example2(&ldata, srv).unwrap());
}
