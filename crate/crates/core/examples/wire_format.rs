//! The canonical text form of values and the framed envelope that travels
//! between nodes.
//!
//!     cargo run --example wire_format

use fltestbed::{Envelope, Phase, Value};

fn main() {
    let v = Value::Seq(vec![Value::Number(1.0), Value::numbers([0.1, -2.5e-8]), Value::Seq(vec![])]);
    let text = v.encode().unwrap();
    println!("value   {}", String::from_utf8_lossy(&text));
    assert_eq!(Value::decode(&text).unwrap(), v);

    let env = Envelope {
        src: 0,
        dst: 2,
        phase: Phase::CliData,
        iter: 0,
        payload: Value::Number(0.0),
    };
    let frame = env.encode_frame().unwrap();
    let (len, body) = frame.split_at(4);
    println!("length  {:?} = {}", len, u32::from_be_bytes(len.try_into().unwrap()));
    println!("body    {}", String::from_utf8_lossy(body));
    assert_eq!(Envelope::decode_frame(&frame).unwrap(), env);

    for bad in ["[1,]", "[null]", "1e999", " 1"] {
        println!("reject  {bad:8} {}", Value::decode(bad.as_bytes()).unwrap_err());
    }
}
