//! Starts one OS process per node with the launcher. The example binary is
//! its own node program: the launcher re-executes it with `node` plus the
//! per-node flags.
//!
//!     cargo run --example multi_process_launch -- [EXAMPLE] [NODES] [BASE_PORT]

use std::time::Duration;

use fltestbed::node::{run_node, NodeOptions};
use fltestbed::{launch_all, ExampleId, LaunchSpec};

fn flag(args: &[String], name: &str) -> String {
    let i = args.iter().position(|a| a == name).unwrap_or_else(|| panic!("missing {name}"));
    args[i + 1].clone()
}

fn node(args: &[String]) -> ! {
    let example: ExampleId = flag(args, "--example").parse().expect("example");
    let no_nodes = flag(args, "--no-nodes").parse().unwrap();
    let mut opts = NodeOptions::new(
        example,
        no_nodes,
        flag(args, "--node-id").parse().unwrap(),
        flag(args, "--fl-srv-id").parse().unwrap(),
        flag(args, "--base-port").parse().unwrap(),
    );
    if no_nodes != 3 {
        opts.seed = Some(1);
    }
    let exit = run_node(&opts);
    if let Some(line) = exit.stdout {
        println!("{line}");
    }
    if let Some(e) = exit.error {
        eprintln!("{e}");
    }
    std::process::exit(exit.code);
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.first().map(String::as_str) == Some("node") {
        node(&args);
    }

    let example: ExampleId = args.first().map_or("2", String::as_str).parse().expect("example 1, 2 or 3");
    let no_nodes = args.get(1).map_or(3, |n| n.parse().expect("nodes"));
    let base_port = args.get(2).map_or(6200, |p| p.parse().expect("port"));

    let me = std::env::current_exe().unwrap();
    let node_args = vec!["node".into(), "--example".into(), example.number().to_string()];
    let mut spec = LaunchSpec::new(me, node_args, no_nodes, example.default_fl_srv_id(no_nodes), base_port);
    spec.per_node_timeout = Duration::from_secs(20);

    let result = launch_all(&spec).expect("launch");
    for node in &result.per_node {
        println!(
            "node {} exit {:?} in {:.1?}: {}",
            node.node_id,
            node.exit_code,
            node.wall_time,
            node.stdout.trim()
        );
    }
    println!("all nodes succeeded: {}", result.overall_success);
}
