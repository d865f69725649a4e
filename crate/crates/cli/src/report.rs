//! Command output in the three formats.

use std::fmt::Write;

use clap::ValueEnum;
use serde_json::{json, Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Aligned columns for reading.
    Table,
    /// Comma-separated rows for plotting, with `#` comment headers.
    Csv,
    /// One JSON object.
    Object,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    /// Printed with the given number of decimals in table format.
    Num(f64, usize),
    Int(i64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn table_text(&self) -> String {
        match self {
            Cell::Num(x, _) if !x.is_finite() => float_text(*x),
            Cell::Num(x, digits) => format!("{x:.digits$}"),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn csv_text(&self) -> String {
        match self {
            Cell::Num(x, _) => float_text(*x),
            Cell::Text(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
            other => other.table_text(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x, _) if x.is_finite() => json!(x),
            Cell::Num(x, _) => json!(float_text(*x)),
            Cell::Int(i) => json!(i),
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }
}

fn float_text(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        x.to_string()
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Provenance, key/value summary and any number of tables.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub provenance: Vec<(String, String)>,
    pub summary: Vec<(String, Cell)>,
    pub tables: Vec<Table>,
    /// Replaces the whole object in object format when set.
    pub object: Option<Value>,
}

impl Report {
    pub fn summary(&mut self, key: &str, cell: Cell) {
        self.summary.push((key.into(), cell));
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Table => self.render_table(),
            Format::Csv => self.render_csv(),
            Format::Object => {
                let mut text = serde_json::to_string_pretty(&self.to_object()).expect("report serializes");
                text.push('\n');
                text
            }
        }
    }

    fn header(&self, out: &mut String) {
        for (k, v) in &self.provenance {
            let _ = writeln!(out, "# {k}: {v}");
        }
    }

    fn render_table(&self) -> String {
        let mut out = String::new();
        self.header(&mut out);
        if !self.summary.is_empty() {
            let width = self.summary.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            for (k, v) in &self.summary {
                let _ = writeln!(out, "{k:<width$}  {}", v.table_text());
            }
        }
        for t in &self.tables {
            out.push('\n');
            let _ = writeln!(out, "[{}]", t.name);
            let cells: Vec<Vec<String>> = t
                .rows
                .iter()
                .map(|r| r.iter().map(Cell::table_text).collect())
                .collect();
            let widths: Vec<usize> = t
                .columns
                .iter()
                .enumerate()
                .map(|(i, c)| cells.iter().map(|r| r[i].len()).chain([c.len()]).max().unwrap_or(0))
                .collect();
            let line = |items: &[String]| {
                items
                    .iter()
                    .zip(&widths)
                    .map(|(s, w)| format!("{s:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            let _ = writeln!(out, "{}", line(&t.columns));
            for r in &cells {
                let _ = writeln!(out, "{}", line(r));
            }
        }
        out
    }

    /// Summary values become `#` comment lines so the file stays one table
    /// per block; blocks are separated by a blank line.
    fn render_csv(&self) -> String {
        let mut out = String::new();
        self.header(&mut out);
        for (k, v) in &self.summary {
            let _ = writeln!(out, "# {k}: {}", v.csv_text());
        }
        for (i, t) in self.tables.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            if self.tables.len() > 1 {
                let _ = writeln!(out, "# table: {}", t.name);
            }
            let _ = writeln!(out, "{}", t.columns.join(","));
            for r in &t.rows {
                let _ = writeln!(out, "{}", r.iter().map(Cell::csv_text).collect::<Vec<_>>().join(","));
            }
        }
        out
    }

    pub fn to_object(&self) -> Value {
        let provenance: Map<String, Value> = self.provenance.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        if let Some(obj) = &self.object {
            return json!({ "provenance": provenance, "result": obj });
        }
        let mut root = Map::new();
        root.insert("provenance".into(), Value::Object(provenance));
        for (k, v) in &self.summary {
            root.insert(k.clone(), v.json());
        }
        for t in &self.tables {
            let rows: Vec<Value> = t
                .rows
                .iter()
                .map(|r| Value::Object(t.columns.iter().cloned().zip(r.iter().map(Cell::json)).collect()))
                .collect();
            root.insert(t.name.clone(), Value::Array(rows));
        }
        Value::Object(root)
    }
}
