//! Tabular command output rendered as CSV (with a `# config:` header) or JSON.

use serde_json::{json, Map, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    pub fn opt_num(v: Option<f64>) -> Self {
        v.map_or(Self::Empty, Self::Num)
    }

    pub fn opt_int(v: Option<u64>) -> Self {
        v.map_or(Self::Empty, Self::Int)
    }

    fn csv(&self) -> String {
        match self {
            // `{}` prints the shortest string that parses back to the same f64
            Self::Num(x) => format!("{x}"),
            Self::Int(n) => n.to_string(),
            Self::Text(s) => escape(s),
            Self::Bool(b) => b.to_string(),
            Self::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Self::Num(x) if x.is_finite() => json!(x),
            Self::Num(x) => json!(x.to_string()),
            Self::Int(n) => json!(n),
            Self::Text(s) => json!(s),
            Self::Bool(b) => json!(b),
            Self::Empty => Value::Null,
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Self::Num(x)
    }
}

impl From<u64> for Cell {
    fn from(n: u64) -> Self {
        Self::Int(n)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Self::Int(n as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Self::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Self::Text(s)
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Self::Bool(b)
    }
}

fn escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct Section {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Section {
    pub fn new(name: &'static str, columns: &[&'static str]) -> Self {
        Self {
            name,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub config: Value,
    pub sections: Vec<Section>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(config: Value) -> Self {
        Self {
            config,
            sections: Vec::new(),
            warnings: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Comment lines carry the configuration, warnings and notes; sections after the first
    /// are introduced by `# section: <name>`.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# config: {}\n", self.config);
        for w in &self.warnings {
            out += &format!("# warning: {w}\n");
        }
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 || self.sections.len() > 1 {
                out += &format!("# section: {}\n", s.name);
            }
            out += &s.columns.join(",");
            out.push('\n');
            for row in &s.rows {
                let line: Vec<String> = row.iter().map(Cell::csv).collect();
                out += &line.join(",");
                out.push('\n');
            }
        }
        for n in &self.notes {
            out += &format!("# {n}\n");
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut root = Map::new();
        root.insert("config".into(), self.config.clone());
        root.insert("warnings".into(), json!(self.warnings));
        root.insert("notes".into(), json!(self.notes));
        for s in &self.sections {
            let rows: Vec<Value> = s
                .rows
                .iter()
                .map(|r| {
                    let obj: Map<String, Value> =
                        s.columns.iter().zip(r).map(|(c, v)| (c.to_string(), v.json())).collect();
                    Value::Object(obj)
                })
                .collect();
            root.insert(s.name.into(), Value::Array(rows));
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(root)).expect("values serialize");
        text.push('\n');
        text
    }
}
