//! A testbed for elementary federated learning algorithms.
//!
//! An application is a pair of callbacks ([`CallbackPair`]) plus one call to
//! a generic engine on every node ([`FlInstance::fl_centralized`] or
//! [`FlInstance::fl_decentralized`]). The same program runs as `N` node
//! processes started by the [`launcher`], or as `N` threads on a loopback
//! network. The [`harness`] checks every node's result against sequential
//! oracles ([`simulate`], [`elementary`]).
//!
//! ```
//! use fltestbed::{ExampleId, Mode, VerifyOptions, run_and_verify};
//!
//! let report = run_and_verify(&VerifyOptions::new(ExampleId::DecentralizedAvg, Mode::InProc));
//! assert!(report.overall_match);
//! ```

pub mod elementary;
pub mod flapi;
pub mod harness;
pub mod launcher;
pub mod node;
pub mod simulate;
mod text;
pub mod transport;
pub mod value;

pub use elementary::{Engine, ExampleId, ExampleSpec};
pub use flapi::{CallbackError, CallbackPair, FaultPoint, FlConfig, FlError, FlInstance};
pub use harness::{fuzz_verify, run_and_verify, FuzzSummary, Mode, RunReport, VerifyOptions};
pub use launcher::{launch_all, LaunchResult, LaunchSpec};
pub use text::ParseError;
pub use transport::{Envelope, LoopbackNetwork, NodeId, Phase, TcpTransport, Transport, TransportConfig};
pub use value::{approx_eq, Value};
