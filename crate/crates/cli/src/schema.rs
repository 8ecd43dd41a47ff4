//! Shapes of the files the CLI writes. Every file is read back and checked
//! before the process exits.

use std::path::Path;

use serde_json::Value;

use crate::error::CliError;

#[derive(Clone, Debug)]
pub enum Shape {
    Number,
    Integer,
    Bool,
    Text,
    Nullable(Box<Shape>),
    List(Box<Shape>),
    /// Fixed keys, all required, nothing else allowed.
    Object(Vec<(&'static str, Shape)>),
    /// Free keys with a common value shape.
    Map(Box<Shape>),
    OneOf(Vec<Shape>),
    Any,
}

pub fn nullable(s: Shape) -> Shape {
    Shape::Nullable(Box::new(s))
}

pub fn list(s: Shape) -> Shape {
    Shape::List(Box::new(s))
}

pub fn object(fields: Vec<(&'static str, Shape)>) -> Shape {
    Shape::Object(fields)
}

pub fn map(s: Shape) -> Shape {
    Shape::Map(Box::new(s))
}

pub fn check(value: &Value, shape: &Shape, path: &str) -> Result<(), String> {
    let fail = |what: &str| Err(format!("{path}: expected {what}, found {value}"));
    match shape {
        Shape::Number => {
            if value.is_number() {
                Ok(())
            } else {
                fail("a number")
            }
        }
        Shape::Integer => {
            if value.is_u64() || value.is_i64() {
                Ok(())
            } else {
                fail("an integer")
            }
        }
        Shape::Bool => {
            if value.is_boolean() {
                Ok(())
            } else {
                fail("a boolean")
            }
        }
        Shape::Text => {
            if value.is_string() {
                Ok(())
            } else {
                fail("a string")
            }
        }
        Shape::Nullable(inner) => {
            if value.is_null() {
                Ok(())
            } else {
                check(value, inner, path)
            }
        }
        Shape::List(inner) => {
            let Some(items) = value.as_array() else { return fail("an array") };
            for (k, item) in items.iter().enumerate() {
                check(item, inner, &format!("{path}[{k}]"))?;
            }
            Ok(())
        }
        Shape::Object(fields) => {
            let Some(obj) = value.as_object() else { return fail("an object") };
            for (key, inner) in fields {
                match obj.get(*key) {
                    Some(v) => check(v, inner, &format!("{path}.{key}"))?,
                    None => return Err(format!("{path}: missing key `{key}`")),
                }
            }
            if let Some(extra) = obj.keys().find(|k| !fields.iter().any(|(f, _)| f == k)) {
                return Err(format!("{path}: unexpected key `{extra}`"));
            }
            Ok(())
        }
        Shape::Map(inner) => {
            let Some(obj) = value.as_object() else { return fail("an object") };
            for (k, v) in obj {
                check(v, inner, &format!("{path}.{k}"))?;
            }
            Ok(())
        }
        Shape::Any => Ok(()),
        Shape::OneOf(options) => {
            let mut errors = Vec::new();
            for s in options {
                match check(value, s, path) {
                    Ok(()) => return Ok(()),
                    Err(e) => errors.push(e),
                }
            }
            Err(errors.join("; "))
        }
    }
}

/// Header must equal `columns`; every row must hold that many finite numbers.
pub fn check_csv(text: &str, columns: &[String]) -> Result<(), String> {
    if text.contains('\r') {
        return Err("CR line ending".into());
    }
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let found: Vec<&str> = header.split(',').collect();
    if found != columns.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(format!("header `{header}` does not match `{}`", columns.join(",")));
    }
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(format!("row {}: {} fields, expected {}", k + 1, fields.len(), columns.len()));
        }
        for f in fields {
            match f.parse::<f64>() {
                Ok(x) if x.is_finite() => {}
                _ => return Err(format!("row {}: `{f}` is not a finite number", k + 1)),
            }
        }
    }
    Ok(())
}

fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.to_path_buf(), source }
}

/// Writes pretty JSON, reads it back and checks it against `shape`.
pub fn write_json(dir: &Path, name: &str, value: &Value, shape: &Shape) -> Result<(), CliError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).expect("JSON values serialize");
    text.push('\n');
    std::fs::write(&path, &text).map_err(|e| io_error(&path, e))?;
    let back = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let parsed: Value =
        serde_json::from_str(&back).map_err(|e| CliError::Schema { file: name.into(), detail: e.to_string() })?;
    check(&parsed, shape, "$").map_err(|detail| CliError::Schema { file: name.into(), detail })
}

pub fn write_csv(dir: &Path, name: &str, text: &str, columns: &[String]) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    let back = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    check_csv(&back, columns).map_err(|detail| CliError::Schema { file: name.into(), detail })
}

pub fn complex_list() -> Shape {
    list(list(Shape::Number))
}

pub fn summary_shape() -> Shape {
    object(vec![
        ("status", Shape::Text),
        ("model", Shape::Text),
        ("seed", Shape::Integer),
        ("t_final", Shape::Number),
        ("dt", Shape::Number),
        ("steps", Shape::Integer),
        ("samples", Shape::Integer),
        ("abort", nullable(object(vec![("time", Shape::Number), ("reason", Shape::Text)]))),
        ("max_trace_dev", nullable(Shape::Number)),
        ("min_eigenvalue", nullable(Shape::Number)),
        ("final_observables", map(Shape::Number)),
        ("analyses", list(Shape::Text)),
    ])
}

pub fn spectrum_shape() -> Shape {
    object(vec![
        ("model", Shape::Text),
        ("state_len", Shape::Integer),
        ("eigenvalues", complex_list()),
        ("classes", list(Shape::Text)),
        ("zero_multiplicity", Shape::Integer),
        (
            "metastable",
            nullable(object(vec![
                ("m", Shape::Integer),
                ("ratio", Shape::Number),
                ("timescale", Shape::Number),
                ("relaxation_onset", Shape::Number),
            ])),
        ),
        ("scale", Shape::Number),
        ("kernel_condition", nullable(Shape::Number)),
        ("near_defective", Shape::Bool),
        (
            "asymptotic",
            Shape::OneOf(vec![
                object(vec![("kind", Shape::Text), ("observables", map(Shape::Number))]),
                object(vec![("kind", Shape::Text), ("rotating", complex_list())]),
            ]),
        ),
    ])
}

fn verdict_shape() -> Shape {
    object(vec![
        ("observable", Shape::Text),
        ("symmetric", nullable(Shape::Bool)),
        ("conserved", Shape::Bool),
        ("symmetry_residual", nullable(Shape::Number)),
        ("conservation_residual", Shape::Number),
        (
            "dJdt_samples",
            list(object(vec![("t", Shape::Number), ("pairing", Shape::Number), ("finite_difference", Shape::Number)])),
        ),
        ("rate_disagreement", Shape::Number),
        ("internally_consistent", Shape::Bool),
    ])
}

pub fn audit_shape() -> Shape {
    object(vec![
        ("model", Shape::Text),
        ("seed", Shape::Integer),
        ("rotations", Shape::Integer),
        ("verdicts", list(verdict_shape())),
        ("conserved_fields", nullable(Shape::Integer)),
        ("consistency", consistency_shape()),
    ])
}

pub fn consistency_shape() -> Shape {
    object(vec![
        (
            "entries",
            list(object(vec![
                ("requirement", Shape::Text),
                ("status", Shape::Text),
                ("residual", Shape::Number),
                ("note", Shape::Text),
            ])),
        ),
        ("purity", list(list(Shape::Number))),
    ])
}

fn summary_fields() -> Shape {
    object(vec![
        ("d0", Shape::Number),
        ("d1", list(Shape::Number)),
        ("d2", list(list(Shape::Number))),
        ("imaginary_residual", Shape::Number),
    ])
}

pub fn dd_shape() -> Shape {
    object(vec![
        ("model", nullable(Shape::Text)),
        ("source", Shape::Text),
        (
            "evaluations",
            list(object(vec![
                ("state", Shape::Text),
                ("summary", summary_fields()),
                (
                    "verdict",
                    object(vec![
                        ("pass", Shape::Bool),
                        ("min_eigenvalue", Shape::Number),
                        ("componentwise_pass", Shape::Bool),
                        ("worst_pair", list(Shape::Integer)),
                        ("worst_margin", Shape::Number),
                        ("forms_agree", Shape::Bool),
                    ]),
                ),
            ])),
        ),
        ("pass", Shape::Bool),
    ])
}

pub fn toy_verdict_shape() -> Shape {
    object(vec![
        (
            "params",
            object(vec![
                ("kappa", Shape::Number),
                ("q0", list(Shape::Number)),
                ("p0", list(Shape::Number)),
                ("rho_i", list(complex_list())),
                ("hbar", Shape::Number),
                ("final_state", Shape::Any),
            ]),
        ),
        ("seed", Shape::Integer),
        ("samples", Shape::Integer),
        ("eom_rotationally_invariant", Shape::Bool),
        ("J_conserved", Shape::Bool),
        ("max_deviation_atomic", Shape::Number),
        ("max_deviation_grid", Shape::Number),
        ("symmetry_residual", Shape::Number),
        ("conservation_residual", Shape::Number),
        ("j_drift", Shape::Number),
        ("spectrum", object(vec![("zero_multiplicity", Shape::Integer), ("eigenvalues", complex_list())])),
    ])
}
