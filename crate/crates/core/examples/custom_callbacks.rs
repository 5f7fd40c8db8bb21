//! Writing a new algorithm is just a pair of closures. Here clients nudge a
//! shared weight vector toward their own private target and the server keeps
//! the coordinate-wise median of the replies.
//!
//!     cargo run --example custom_callbacks

use fltestbed::harness::run_inproc;
use fltestbed::simulate::sim_centralized;
use fltestbed::{CallbackError, CallbackPair, Engine, FlConfig, Value};

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len().is_multiple_of(2) {
        (xs[m - 1] + xs[m]) / 2.0
    } else {
        xs[m]
    }
}

fn main() {
    let cb = CallbackPair::new(
        |_local, private, msg| {
            let (Some(target), Some(w)) = (private.as_seq(), msg.as_seq()) else {
                return Err(CallbackError::new("expected vectors"));
            };
            let step = w
                .iter()
                .zip(target)
                .map(|(w, t)| {
                    let (w, t) = (w.as_number().unwrap_or(0.0), t.as_number().unwrap_or(0.0));
                    w + 0.5 * (t - w)
                });
            Ok(Value::numbers(step))
        },
        |_private, msgs| {
            let dims = msgs.first().and_then(Value::as_seq).map_or(0, <[Value]>::len);
            let cols = (0..dims).map(|d| {
                median(msgs.iter().filter_map(|m| m.as_seq()?.get(d)?.as_number()).collect())
            });
            Ok(Value::numbers(cols))
        },
    );

    let n = 5;
    let ldata = vec![Value::numbers([0.0, 0.0]); n];
    let pdata: Vec<Value> = (0..n)
        .map(|i| if i == 0 { Value::Absent } else { Value::numbers([i as f64, 10.0 - i as f64]) })
        .collect();
    let cfg = FlConfig {
        no_iters: 6,
        ..FlConfig::new(n, 0, 0, 6000)
    };

    let results = run_inproc(Engine::Centralized, &cfg, &cb, &ldata, &pdata, None).unwrap();
    let oracle = sim_centralized(&ldata, &pdata, 0, &cb, 6).unwrap();
    println!("server weights after 6 rounds: {}", results[0].as_ref().unwrap());
    println!("simulator agrees: {}", results.iter().zip(&oracle).all(|(r, o)| r.as_ref().ok() == Some(o)));
}
