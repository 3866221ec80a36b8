//! Append-only, line-delimited JSON metrics stream.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::Result;

pub trait MetricsSink {
    fn record(&mut self, kind: &str, fields: Value) -> Result<()>;
}

/// Builds `{"kind": kind, ...fields}` (non-object `fields` go under `value`).
pub fn make_record(kind: &str, fields: Value) -> Value {
    let mut map = Map::new();
    map.insert("kind".into(), Value::String(kind.into()));
    match fields {
        Value::Object(obj) => map.extend(obj),
        other => {
            map.insert("value".into(), other);
        }
    }
    Value::Object(map)
}

/// Appends one JSON object per line, flushing after every record so a
/// crashed run leaves a parseable prefix.
pub struct JsonlSink {
    out: BufWriter<File>,
    config_hash: String,
}

impl JsonlSink {
    pub fn open(path: &Path, config_hash: &str) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
            config_hash: config_hash.to_string(),
        })
    }
}

impl MetricsSink for JsonlSink {
    fn record(&mut self, kind: &str, fields: Value) -> Result<()> {
        let mut rec = make_record(kind, fields);
        if let Value::Object(map) = &mut rec {
            map.insert("config_hash".into(), Value::String(self.config_hash.clone()));
        }
        serde_json::to_writer(&mut self.out, &rec).map_err(std::io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

/// Keeps records in memory (tests and in-process callers).
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub records: Vec<Value>,
}

impl MemorySink {
    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Value> + 'a {
        self.records.iter().filter(move |r| r["kind"] == kind)
    }
}

impl MetricsSink for MemorySink {
    fn record(&mut self, kind: &str, fields: Value) -> Result<()> {
        self.records.push(make_record(kind, fields));
        Ok(())
    }
}

/// Discards everything.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _kind: &str, _fields: Value) -> Result<()> {
        Ok(())
    }
}
