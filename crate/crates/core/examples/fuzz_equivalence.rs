//! Random federations through both engines, checked against the sequential
//! simulators, including the ascending-source ordering of server input.
//!
//!     cargo run --example fuzz_equivalence -- [TRIALS] [SEED]

use fltestbed::{fuzz_verify, Engine};

fn main() {
    let mut args = std::env::args().skip(1);
    let trials = args.next().map_or(200, |t| t.parse().expect("trials"));
    let seed = args.next().map_or(7, |s| s.parse().expect("seed"));
    let mut failed = false;
    for engine in [Engine::Centralized, Engine::Decentralized] {
        let summary = fuzz_verify(engine, trials, seed);
        print!("{summary}");
        failed |= !summary.all_passed();
    }
    std::process::exit(i32::from(failed));
}
