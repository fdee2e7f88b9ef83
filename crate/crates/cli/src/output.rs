//! Row tables written as CSV (17 significant digits) and JSON. Every row
//! starts with the seed and the config hash.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use serde_json::{Map, Value};
use tensor_hj::SymMatrix;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Flag(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) if v.is_finite() => format!("{v:.16e}"),
            Cell::Num(v) => format!("{v}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            Cell::Text(s) => s.clone(),
            Cell::Flag(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) => serde_json::Number::from_f64(*v).map_or_else(|| Value::String(v.to_string()), Value::Number),
            Cell::Int(v) => Value::from(*v),
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Flag(b) => Value::Bool(*b),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Row(Vec<(String, Cell)>);

impl Row {
    pub fn num(mut self, key: &str, v: f64) -> Self {
        self.0.push((key.into(), Cell::Num(v)));
        self
    }

    pub fn int(mut self, key: &str, v: u64) -> Self {
        self.0.push((key.into(), Cell::Int(v)));
        self
    }

    pub fn text(mut self, key: &str, v: impl Into<String>) -> Self {
        self.0.push((key.into(), Cell::Text(v.into())));
        self
    }

    pub fn flag(mut self, key: &str, v: bool) -> Self {
        self.0.push((key.into(), Cell::Flag(v)));
        self
    }

    /// Upper-triangle entries as `name_ij` columns.
    pub fn sym(mut self, name: &str, m: &SymMatrix) -> Self {
        for i in 0..m.dim() {
            for j in i..m.dim() {
                self.0.push((format!("{name}_{}{}", i + 1, j + 1), Cell::Num(m.get(i, j))));
            }
        }
        self
    }

    pub fn vector(mut self, name: &str, v: &[f64]) -> Self {
        for (i, x) in v.iter().enumerate() {
            self.0.push((format!("{name}_{}", i + 1), Cell::Num(*x)));
        }
        self
    }

    pub fn summary(&self) -> String {
        self.0
            .iter()
            .map(|(k, c)| match c {
                Cell::Num(v) => format!("{k}={v:.6e}"),
                other => format!("{k}={}", other.csv()),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Both,
}

pub struct Table {
    pub name: &'static str,
    pub seed: u64,
    pub hash: String,
    pub rows: Vec<Row>,
}

impl Table {
    pub fn new(name: &'static str, seed: u64, hash: &str) -> Self {
        Self {
            name,
            seed,
            hash: hash.to_string(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Row) {
        let mut full = Row::default().int("seed", self.seed).text("config_hash", self.hash.clone());
        full.0.extend(row.0);
        println!("{}: {}", self.name, full.summary());
        self.rows.push(full);
    }

    /// Header from the union of keys in first-seen order; missing cells are empty.
    fn header(&self) -> Vec<String> {
        let mut keys: Vec<String> = vec![];
        for row in &self.rows {
            for (k, _) in &row.0 {
                if !keys.contains(k) {
                    keys.push(k.clone());
                }
            }
        }
        keys
    }

    pub fn csv(&self) -> String {
        let header = self.header();
        let mut out = header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = header
                .iter()
                .map(|k| row.0.iter().find(|(rk, _)| rk == k).map_or(String::new(), |(_, c)| c.csv()))
                .collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| Value::Object(r.0.iter().map(|(k, c)| (k.clone(), c.json())).collect::<Map<_, _>>()))
            .collect();
        let mut s = serde_json::to_string_pretty(&Value::Array(rows)).expect("rows serialize");
        s.push('\n');
        s
    }

    pub fn write(&self, dir: &Path, format: Format) -> anyhow::Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        if matches!(format, Format::Csv | Format::Both) {
            let path = dir.join(format!("{}.csv", self.name));
            std::fs::write(&path, self.csv()).with_context(|| format!("writing {}", path.display()))?;
        }
        if matches!(format, Format::Json | Format::Both) {
            let path = dir.join(format!("{}.json", self.name));
            std::fs::write(&path, self.json()).with_context(|| format!("writing {}", path.display()))?;
        }
        Ok(())
    }
}
