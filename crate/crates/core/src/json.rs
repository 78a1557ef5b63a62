//! Deterministic JSON rendering.
//!
//! Floating-point values are written with 17 significant digits
//! (`d.dddddddddddddddde±x`), which round-trips every `f64` exactly and gives
//! byte-stable output for identical inputs. Non-finite values become `null`.

use serde::Serialize;
use serde_json::Value;
use std::fmt::Write;

use crate::Result;

pub fn to_string<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

fn write_value(out: &mut String, v: &Value, depth: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                out.push_str(&format_f64(n.as_f64().unwrap_or(f64::NAN)));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            // numeric rows stay on one line
            let flat = items.iter().all(|x| !x.is_array() && !x.is_object());
            if flat {
                out.push('[');
                for (i, x) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    write_value(out, x, depth + 1);
                }
                out.push(']');
            } else {
                out.push_str("[\n");
                for (i, x) in items.iter().enumerate() {
                    indent(out, depth + 1);
                    write_value(out, x, depth + 1);
                    if i + 1 < items.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                indent(out, depth);
                out.push(']');
            }
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            for (i, (k, x)) in map.iter().enumerate() {
                indent(out, depth + 1);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(out, x, depth + 1);
                if i + 1 < map.len() {
                    out.push(',');
                }
                out.push('\n');
            }
            indent(out, depth);
            out.push('}');
        }
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn renders_seventeen_digits() {
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(format_f64(-3.0), "-3.0000000000000000e0");
        assert_eq!(format_f64(f64::NAN), "null");
    }

    #[test]
    fn integers_stay_integers() {
        let s = to_string(&serde_json::json!({"K": 2, "x": [1.5, 2.0]})).unwrap();
        assert!(s.contains("\"K\": 2"));
        assert!(s.contains("1.5000000000000000e0"));
    }

    proptest! {
        #[test]
        fn floats_round_trip_exactly(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = to_string(&serde_json::json!({ "v": x })).unwrap();
            let back: serde_json::Value = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back["v"].as_f64().unwrap().to_bits(), x.to_bits());
        }
    }
}
