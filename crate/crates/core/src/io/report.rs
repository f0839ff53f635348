//! Tabular reports rendered as CSV, an aligned text table, or JSON lines.
//!
//! CSV and text tables round reals to 6 significant digits. JSON lines keep
//! full precision.

use std::fmt::Write as _;

use crate::ece::ReliabilityRow;
use crate::matching::MatchSummary;

/// Round to 6 significant digits and print without trailing zeros.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let rounded: f64 = format!("{x:.5e}").parse().expect("valid float literal");
    format!("{rounded}")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Real(f64),
}

impl Cell {
    fn short(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(v) => v.to_string(),
            Cell::Real(v) => fmt_sig6(*v),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Text(s) => serde_json::Value::from(s.as_str()),
            Cell::Int(v) => serde_json::Value::from(*v),
            Cell::Real(v) => serde_json::Value::from(*v),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Table,
    JsonLines,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "table" => Ok(ReportFormat::Table),
            "json-lines" | "jsonl" => Ok(ReportFormat::JsonLines),
            other => Err(format!("unknown format `{other}` (csv, table, json-lines)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Table => self.to_text(),
            ReportFormat::JsonLines => self.to_json_lines(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::short).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::short).collect()).collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| {
                cells
                    .iter()
                    .map(|r| r[i].len())
                    .chain(std::iter::once(self.columns[i].len()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, vals: &[String]| {
            let parts: Vec<String> = vals
                .iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v:>w$}"))
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &self.columns);
        for r in &cells {
            line(&mut out, r);
        }
        out
    }

    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let obj: serde_json::Map<String, serde_json::Value> = self
                .columns
                .iter()
                .cloned()
                .zip(row.iter().map(Cell::json))
                .collect();
            out.push_str(&serde_json::Value::Object(obj).to_string());
            out.push('\n');
        }
        out
    }
}

pub const METRICS_COLUMNS: [&str; 7] = ["scope", "tp", "fp", "fn", "precision", "recall", "f1"];

/// `scope, tp, fp, fn, precision, recall, f1` rows; scope is an image id or `ALL`.
pub fn metrics_table<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MatchSummary)>) -> Table {
    let mut t = Table::new(&METRICS_COLUMNS);
    for (scope, s) in rows {
        t.push(vec![
            scope.into(),
            s.tp.into(),
            s.fp.into(),
            s.fn_.into(),
            s.precision().into(),
            s.recall().into(),
            s.f1().into(),
        ]);
    }
    t
}

pub const RELIABILITY_COLUMNS: [&str; 6] =
    ["bin_lower", "bin_upper", "count", "mean_confidence", "precision", "gap"];

pub fn reliability_table(rows: &[ReliabilityRow]) -> Table {
    let mut t = Table::new(&RELIABILITY_COLUMNS);
    for r in rows {
        t.push(vec![
            r.bin_lower.into(),
            r.bin_upper.into(),
            r.count.into(),
            r.mean_confidence.into(),
            r.precision.into(),
            r.gap.into(),
        ]);
    }
    t
}

/// A resolved configuration plus one or more named tables.
///
/// Text and CSV renderings start with `# key = value` lines and separate
/// sections with a `# [name]` line. JSON lines start with a
/// `{"config": {...}}` object and tag every row with its section.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub config: Vec<(String, String)>,
    pub sections: Vec<(String, Table)>,
}

impl Report {
    pub fn new(config: Vec<(String, String)>) -> Self {
        Report { config, sections: Vec::new() }
    }

    pub fn section(mut self, name: &str, table: Table) -> Self {
        self.sections.push((name.to_string(), table));
        self
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::JsonLines => self.to_json_lines(),
            _ => {
                let mut out = String::new();
                for (k, v) in &self.config {
                    let _ = writeln!(out, "# {k} = {v}");
                }
                for (name, table) in &self.sections {
                    out.push('\n');
                    let _ = writeln!(out, "# [{name}]");
                    out.push_str(&table.render(format));
                }
                out
            }
        }
    }

    fn to_json_lines(&self) -> String {
        let config: serde_json::Map<String, serde_json::Value> = self
            .config
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::from(v.as_str())))
            .collect();
        let mut out = serde_json::json!({ "config": config }).to_string();
        out.push('\n');
        for (name, table) in &self.sections {
            for row in &table.rows {
                let mut obj = serde_json::Map::new();
                obj.insert("section".into(), serde_json::Value::from(name.as_str()));
                for (c, v) in table.columns.iter().zip(row) {
                    obj.insert(c.clone(), v.json());
                }
                out.push_str(&serde_json::Value::Object(obj).to_string());
                out.push('\n');
            }
        }
        out
    }
}
