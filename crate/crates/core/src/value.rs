//! The universal payload carried as local data, private data and messages.

use std::fmt;

use thiserror::Error;

use crate::text::{self, ParseError, Reader};

/// Default relative tolerance used when comparing results against oracles.
pub const DEFAULT_REL_TOL: f64 = 1e-9;
/// Default absolute tolerance used when comparing results against oracles.
pub const DEFAULT_ABS_TOL: f64 = 1e-12;

/// A payload tree: a finite number, an ordered sequence of values, or absent.
///
/// `Absent` models "no data" (the private data of the elementary examples)
/// and is only valid as a whole payload, never inside a `Seq`.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Seq(Vec<Value>),
    Absent,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValueError {
    #[error("number {0} is not finite")]
    NonFinite(f64),
    #[error("absent value nested inside a sequence")]
    NestedAbsent,
    #[error(transparent)]
    Parse(#[from] ParseError),
}

impl Value {
    /// Builds a sequence of numbers.
    pub fn numbers<I: IntoIterator<Item = f64>>(xs: I) -> Value {
        Value::Seq(xs.into_iter().map(Value::Number).collect())
    }

    /// Shorthand for a one-element sequence `[x]`.
    pub fn single(x: f64) -> Value {
        Value::Seq(vec![Value::Number(x)])
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_seq(&self) -> Option<&[Value]> {
        match self {
            Value::Seq(items) => Some(items),
            _ => None,
        }
    }

    /// The number held by a single-element sequence `[x]`.
    pub fn as_single(&self) -> Option<f64> {
        match self.as_seq()? {
            [Value::Number(x)] => Some(*x),
            _ => None,
        }
    }

    pub fn is_absent(&self) -> bool {
        matches!(self, Value::Absent)
    }

    /// Checks the boundary invariants: finite numbers and no nested `Absent`.
    pub fn validate(&self) -> Result<(), ValueError> {
        fn walk(v: &Value, nested: bool) -> Result<(), ValueError> {
            match v {
                Value::Number(x) if !x.is_finite() => Err(ValueError::NonFinite(*x)),
                Value::Number(_) => Ok(()),
                Value::Absent if nested => Err(ValueError::NestedAbsent),
                Value::Absent => Ok(()),
                Value::Seq(items) => items.iter().try_for_each(|item| walk(item, true)),
            }
        }
        walk(self, false)
    }

    /// Canonical text serialization.
    pub fn encode(&self) -> Result<Vec<u8>, ValueError> {
        self.validate()?;
        let mut out = String::new();
        self.write_canonical(&mut out);
        Ok(out.into_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Result<Value, ValueError> {
        let mut r = Reader::new(bytes);
        let v = read_value(&mut r, false)?;
        r.finish()?;
        Ok(v)
    }

    /// Appends the canonical form; callers must have validated `self`.
    pub(crate) fn write_canonical(&self, out: &mut String) {
        match self {
            Value::Number(x) => text::write_number(out, *x),
            Value::Absent => out.push_str("null"),
            Value::Seq(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    item.write_canonical(out);
                }
                out.push(']');
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        self.write_canonical(&mut out);
        f.write_str(&out)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Number(x)
    }
}

pub(crate) fn read_value(r: &mut Reader<'_>, nested: bool) -> Result<Value, ParseError> {
    match r.peek() {
        Some(b'[') => {
            r.expect(b'[')?;
            let mut items = Vec::new();
            if !r.eat(b']') {
                loop {
                    items.push(read_value(r, true)?);
                    if r.eat(b']') {
                        break;
                    }
                    r.expect(b',')?;
                }
            }
            Ok(Value::Seq(items))
        }
        Some(b'n') => {
            if nested {
                return Err(r.error("null is not allowed inside a sequence"));
            }
            r.expect_literal("null")?;
            Ok(Value::Absent)
        }
        Some(b'-' | b'0'..=b'9') => r.number().map(Value::Number),
        Some(_) => Err(r.error("expected number, '[' or null")),
        None => Err(r.error("unexpected end of input")),
    }
}

/// Structural equality with per-number tolerance
/// `|x - y| <= max(abs_tol, rel_tol * max(|x|, |y|))`.
///
/// With both tolerances zero, numbers must be bit-identical (so `0` and `-0`
/// differ).
pub fn approx_eq(a: &Value, b: &Value, rel_tol: f64, abs_tol: f64) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            if rel_tol == 0.0 && abs_tol == 0.0 {
                return x.to_bits() == y.to_bits();
            }
            if x == y {
                return true;
            }
            let bound = abs_tol.max(rel_tol * x.abs().max(y.abs()));
            (x - y).abs() <= bound
        }
        (Value::Seq(xs), Value::Seq(ys)) => {
            xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| approx_eq(x, y, rel_tol, abs_tol))
        }
        (Value::Absent, Value::Absent) => true,
        _ => false,
    }
}

/// [`approx_eq`] at the default verification tolerances.
pub fn approx_eq_default(a: &Value, b: &Value) -> bool {
    approx_eq(a, b, DEFAULT_REL_TOL, DEFAULT_ABS_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn enc(v: &Value) -> String {
        String::from_utf8(v.encode().unwrap()).unwrap()
    }

    #[test]
    fn encode_examples() {
        assert_eq!(enc(&Value::Number(1.75)), "1.75");
        assert_eq!(enc(&Value::single(1.0)), "[1]");
        let msgs = Value::Seq(vec![Value::single(1.5), Value::single(2.0)]);
        assert_eq!(enc(&msgs), "[[1.5],[2]]");
        assert_eq!(enc(&Value::Absent), "null");
        assert_eq!(enc(&Value::Seq(vec![])), "[]");
    }

    #[test]
    fn encode_rejects_bad_values() {
        assert_eq!(Value::Number(f64::NAN).encode().unwrap_err().to_string(), "number NaN is not finite");
        assert!(matches!(
            Value::numbers([1.0, f64::INFINITY]).encode(),
            Err(ValueError::NonFinite(_))
        ));
        assert_eq!(
            Value::Seq(vec![Value::Absent]).encode(),
            Err(ValueError::NestedAbsent)
        );
    }

    #[test]
    fn decode_examples() {
        let msgs = Value::Seq(vec![Value::single(1.5), Value::single(2.0)]);
        assert_eq!(Value::decode(b"[[1.5],[2]]").unwrap(), msgs);
        assert_eq!(Value::decode(b"[0.0,1.0]").unwrap(), Value::numbers([0.0, 1.0]));
        assert_eq!(Value::decode(b"null").unwrap(), Value::Absent);
    }

    #[test]
    fn decode_errors_carry_offsets() {
        let offset = |s: &str| match Value::decode(s.as_bytes()) {
            Err(ValueError::Parse(e)) => e.offset,
            other => panic!("{s:?}: expected parse error, got {other:?}"),
        };
        assert_eq!(offset(""), 0);
        assert_eq!(offset("[1,]"), 3);
        assert_eq!(offset("[1 ]"), 2);
        assert_eq!(offset("[1]x"), 3);
        assert_eq!(offset("[null]"), 1);
        assert_eq!(offset("[[1],"), 5);
        assert_eq!(offset("1e400"), 0);
    }

    #[test]
    fn approx_eq_examples() {
        assert!(approx_eq(&Value::Number(0.5), &Value::Number(0.5), 1e-9, 1e-12));
        assert!(approx_eq(&Value::single(1.75), &Value::single(1.75 + 1e-13), 1e-9, 1e-12));
        assert!(!approx_eq(&Value::single(1.75), &Value::Number(1.75), 1.0, 1.0));
        assert!(!approx_eq(&Value::single(1.75), &Value::single(1.76), 1e-9, 1e-12));
        assert!(!approx_eq(&Value::numbers([1.0]), &Value::numbers([1.0, 1.0]), 1.0, 1.0));
        assert!(approx_eq(&Value::Number(1e6), &Value::Number(1e6 + 1e-4), 1e-9, 1e-12));
    }

    pub(crate) fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![
            -1e6..1e6f64,
            any::<f64>().prop_filter("finite", |x| x.is_finite()),
            Just(0.0),
            Just(-0.0),
        ]
    }

    fn tree() -> impl Strategy<Value = Value> {
        let leaf = finite().prop_map(Value::Number);
        leaf.prop_recursive(4, 64, 8, |inner| prop::collection::vec(inner, 0..=8).prop_map(Value::Seq))
    }

    fn payload() -> impl Strategy<Value = Value> {
        prop_oneof![9 => tree(), 1 => Just(Value::Absent)]
    }

    fn bits(v: &Value) -> Vec<Option<u64>> {
        match v {
            Value::Number(x) => vec![Some(x.to_bits())],
            Value::Seq(items) => {
                let mut out = vec![None];
                items.iter().for_each(|i| out.extend(bits(i)));
                out.push(None);
                out
            }
            Value::Absent => vec![],
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn round_trip_is_exact(v in payload()) {
            let bytes = v.encode().unwrap();
            let back = Value::decode(&bytes).unwrap();
            prop_assert_eq!(bits(&back), bits(&v));
            prop_assert_eq!(back, v.clone());
            prop_assert_eq!(v.encode().unwrap(), bytes);
        }

        #[test]
        fn approx_eq_reflexive_and_symmetric(a in tree(), b in tree(), rel in 0.0..1e-3f64, abs in 0.0..1e-3f64) {
            prop_assert!(approx_eq(&a, &a, 0.0, 0.0));
            prop_assert_eq!(approx_eq(&a, &b, rel, abs), approx_eq(&b, &a, rel, abs));
        }

        #[test]
        fn zero_tolerance_means_equal_numbers(x in finite(), y in finite()) {
            let eq = approx_eq(&Value::Number(x), &Value::Number(y), 0.0, 0.0);
            prop_assert_eq!(eq, x.to_bits() == y.to_bits());
        }
    }
}
