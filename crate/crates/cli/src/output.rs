use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use arw_core::GENERATOR_ID;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::args::{Format, Output};

/// Ordered key/value summary: printed as `key: value` lines on stdout and
/// serialized as a JSON object.
pub struct Summary {
    entries: Vec<(&'static str, Value)>,
}

impl Summary {
    pub fn new(command: &'static str, seed: u64) -> Self {
        let mut s = Summary { entries: Vec::new() };
        s.put("command", command);
        s.put("version", env!("CARGO_PKG_VERSION"));
        s.put("generator", GENERATOR_ID);
        s.put("seed", seed);
        s
    }

    pub fn put(&mut self, key: &'static str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("summary values serialize");
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = v,
            None => self.entries.push((key, v)),
        }
    }

    pub fn to_json(&self) -> Value {
        let map: Map<String, Value> = self.entries.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        Value::Object(map)
    }

    pub fn print(&self, w: &mut dyn Write) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            match v {
                Value::String(s) => writeln!(w, "{k}: {s}")?,
                other => writeln!(w, "{k}: {other}")?,
            }
        }
        Ok(())
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the data file (if `--out` was given) and the JSON summary (if
/// `--summary` was given). `document` is what a JSON data file contains.
pub fn emit<R: Serialize>(output: &Output, summary: &Summary, rows: &[R], document: Value) -> Result<()> {
    if let Some(path) = &output.out {
        match output.format {
            Format::Csv => write_csv(path, rows)?,
            Format::Json => write_json(path, &document)?,
        }
    }
    if let Some(path) = &output.summary {
        write_json(path, &summary.to_json())?;
    }
    Ok(())
}

/// Summary object with extra top-level members merged in.
pub fn document(summary: &Summary, extra: Vec<(&str, Value)>) -> Value {
    let mut v = summary.to_json();
    if let Value::Object(map) = &mut v {
        for (k, x) in extra {
            map.insert(k.to_string(), x);
        }
    }
    v
}
