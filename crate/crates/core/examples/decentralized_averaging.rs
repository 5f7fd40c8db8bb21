//! Example 3: every node plays server once per iteration. Runs a few
//! iterations and compares each one against the sequential simulator.
//!
//!     cargo run --example decentralized_averaging

use fltestbed::harness::run_inproc;
use fltestbed::simulate::sim_decentralized;
use fltestbed::{approx_eq, Engine, ExampleId, FlConfig, Value};

fn main() {
    let example = ExampleId::DecentralizedAvg;
    let ldata = example.canonical_ldata();
    let n = ldata.len();
    let pdata = vec![Value::Absent; n];
    let cb = example.callbacks();

    for iters in 1..=4 {
        let cfg = FlConfig {
            no_iters: iters,
            ..FlConfig::new(n, 0, 0, 6000)
        };
        let got: Vec<Value> = run_inproc(Engine::Decentralized, &cfg, &cb, &ldata, &pdata, None)
            .unwrap()
            .into_iter()
            .map(|r| r.unwrap())
            .collect();
        let want = sim_decentralized(&ldata, &pdata, &cb, iters).unwrap();
        let ok = got.iter().zip(&want).all(|(a, b)| approx_eq(a, b, 1e-9, 1e-12));
        let shown: Vec<String> = got.iter().map(Value::to_string).collect();
        println!("{iters} iteration(s): {} {}", shown.join(" "), if ok { "ok" } else { "MISMATCH" });
    }
}
