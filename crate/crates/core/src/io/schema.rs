//! Structural schemas for every JSON document the crate writes.
//!
//! Documents are checked against these before they touch disk, so a
//! serialisation change that drops or retypes a field fails loudly.

use serde_json::Value;

#[derive(Debug, Clone)]
pub enum Schema {
    Any,
    Bool,
    Integer,
    Number,
    String,
    Array(Box<Schema>),
    /// Required keys; extra keys are allowed.
    Object(Vec<(&'static str, Schema)>),
    /// Free-form keys, uniform values.
    Map(Box<Schema>),
    Nullable(Box<Schema>),
}

fn arr(s: Schema) -> Schema {
    Schema::Array(Box::new(s))
}

fn obj(fields: Vec<(&'static str, Schema)>) -> Schema {
    Schema::Object(fields)
}

fn opt(s: Schema) -> Schema {
    Schema::Nullable(Box::new(s))
}

fn map(s: Schema) -> Schema {
    Schema::Map(Box::new(s))
}

pub fn validate(value: &Value, schema: &Schema) -> Result<(), String> {
    check(value, schema, "$")
}

fn check(v: &Value, s: &Schema, path: &str) -> Result<(), String> {
    let fail = |want: &str| Err(format!("{path}: expected {want}, found {v}"));
    match s {
        Schema::Any => Ok(()),
        Schema::Bool => v.is_boolean().then_some(()).map_or_else(|| fail("bool"), Ok),
        Schema::Integer => (v.is_u64() || v.is_i64()).then_some(()).map_or_else(|| fail("integer"), Ok),
        Schema::Number => v.is_number().then_some(()).map_or_else(|| fail("number"), Ok),
        Schema::String => v.is_string().then_some(()).map_or_else(|| fail("string"), Ok),
        Schema::Nullable(inner) => {
            if v.is_null() {
                Ok(())
            } else {
                check(v, inner, path)
            }
        }
        Schema::Array(inner) => {
            let Some(items) = v.as_array() else {
                return fail("array");
            };
            for (i, item) in items.iter().enumerate() {
                check(item, inner, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        Schema::Map(inner) => {
            let Some(o) = v.as_object() else {
                return fail("object");
            };
            for (k, item) in o {
                check(item, inner, &format!("{path}.{k}"))?;
            }
            Ok(())
        }
        Schema::Object(fields) => {
            let Some(o) = v.as_object() else {
                return fail("object");
            };
            for (k, fs) in fields {
                match o.get(*k) {
                    Some(item) => check(item, fs, &format!("{path}.{k}"))?,
                    None => return Err(format!("{path}: missing field `{k}`")),
                }
            }
            Ok(())
        }
    }
}

fn band() -> Schema {
    obj(vec![("inward", Schema::Integer), ("outward", Schema::Integer)])
}

pub fn scoring_config() -> Schema {
    obj(vec![
        ("tau", Schema::Number),
        ("alpha", Schema::Number),
        ("gamma", Schema::Number),
        ("band", band()),
        ("connectivity", Schema::Integer),
    ])
}

fn four(size: Schema) -> Schema {
    obj(vec![
        ("conf", Schema::Number),
        ("size", size),
        ("unc", Schema::Number),
        ("comp", Schema::Number),
    ])
}

pub fn scores() -> Schema {
    obj(vec![
        ("version", Schema::Integer),
        ("episode", Schema::String),
        ("config", scoring_config()),
        (
            "records",
            arr(obj(vec![
                ("sample_id", Schema::String),
                ("raw", opt(four(Schema::Integer))),
                ("norm", opt(four(Schema::Number))),
                ("r_rep", opt(Schema::Number)),
                ("r_diff", opt(Schema::Number)),
                ("excluded", Schema::Bool),
                ("exclusion_reason", opt(Schema::String)),
            ])),
        ),
    ])
}

pub fn buffer_state() -> Schema {
    obj(vec![
        ("version", Schema::Integer),
        ("beta", Schema::Integer),
        (
            "partitions",
            arr(obj(vec![
                ("episode", Schema::Integer),
                (
                    "entries",
                    arr(obj(vec![
                        ("sample_id", Schema::String),
                        ("category", Schema::String),
                        ("stored_score", Schema::Number),
                        ("prob_path", Schema::String),
                        ("gt_path", Schema::String),
                        ("modalities", map(Schema::String)),
                    ])),
                ),
            ])),
        ),
    ])
}

pub fn layout() -> Schema {
    obj(vec![
        ("version", Schema::Integer),
        (
            "modalities",
            arr(obj(vec![("name", Schema::String), ("index", Schema::Integer)])),
        ),
    ])
}

pub fn results() -> Schema {
    obj(vec![
        ("version", Schema::Integer),
        ("tasks", arr(Schema::String)),
        ("rows", arr(arr(Schema::Number))),
    ])
}

pub fn metrics() -> Schema {
    obj(vec![
        ("version", Schema::Integer),
        ("avg", Schema::Number),
        ("ilm", Schema::Number),
        ("bwt", opt(Schema::Number)),
        ("per_task_final", arr(Schema::Number)),
    ])
}

pub fn eval_row() -> Schema {
    obj(vec![
        ("version", Schema::Integer),
        ("threshold", Schema::Number),
        ("dsc", Schema::Number),
        (
            "per_sample",
            arr(obj(vec![("name", Schema::String), ("dice", Schema::Number)])),
        ),
    ])
}

pub fn manifest() -> Schema {
    obj(vec![
        ("version", Schema::Integer),
        ("episode", Schema::String),
        ("lesion_type", Schema::String),
        ("modalities", arr(Schema::String)),
        (
            "samples",
            arr(obj(vec![
                ("sample_id", Schema::String),
                ("modalities", map(Schema::String)),
                ("gt", Schema::String),
                ("prob", Schema::String),
            ])),
        ),
    ])
}

pub fn stream_config() -> Schema {
    obj(vec![
        ("version", Schema::Integer),
        ("episodes", arr(Schema::String)),
        ("beta", Schema::Integer),
        ("seed", Schema::Integer),
        ("output_dir", Schema::String),
        ("scoring", scoring_config()),
    ])
}

pub fn dctg_descriptor() -> Schema {
    obj(vec![
        ("version", Schema::Integer),
        ("d", Schema::Integer),
        ("h", Schema::Integer),
        ("C", Schema::Integer),
        ("epsilon", Schema::Number),
        ("tensors", map(Schema::String)),
    ])
}

pub fn stream_report() -> Schema {
    obj(vec![
        ("version", Schema::Integer),
        ("config_hash", Schema::String),
        ("beta", Schema::Integer),
        ("seed", Schema::Integer),
        (
            "episodes",
            arr(obj(vec![
                ("index", Schema::Integer),
                ("name", Schema::String),
                ("scored", Schema::Integer),
                ("excluded", Schema::Integer),
                ("k_max", Schema::Integer),
                ("inflation", opt(Schema::Any)),
                ("partition", obj(vec![
                    ("representative", Schema::Integer),
                    ("difficult", Schema::Integer),
                ])),
                ("buffer_sizes", arr(Schema::Integer)),
                ("evicted", Schema::Integer),
                ("invariants", obj(vec![
                    ("capacity", Schema::Bool),
                    ("parity", Schema::Bool),
                    ("split", Schema::Bool),
                ])),
                ("rmd_plan", arr(Schema::Any)),
            ])),
        ),
        ("inflation_events", arr(Schema::Any)),
        ("final_buffer_sizes", arr(Schema::Integer)),
        ("layout", layout()),
        ("metrics", opt(Schema::Any)),
    ])
}
