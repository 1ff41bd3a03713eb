//! In-memory CSV tables with `# key=value` header comments.

use std::fmt::Display;

/// One output file: header comments, a column row and data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.header.push((key.to_string(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width in {}", self.name);
        self.rows.push(row);
    }

    /// File contents; deterministic for identical inputs.
    pub fn body(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.header {
            out.push_str(&format!("# {k}={v}\n"));
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        // writing into a Vec cannot fail
        w.write_record(&self.columns).expect("in-memory csv");
        for r in &self.rows {
            w.write_record(r).expect("in-memory csv");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv"));
        out
    }
}

/// Float cell in shortest round-trip scientific form.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn int(x: impl Display) -> String {
    x.to_string()
}

pub fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_layout() {
        let mut t = Table::new("x.csv", &["a", "b"]);
        t.meta("seed", 3);
        t.push(vec![num(0.5), int(2)]);
        t.push(vec!["has,comma".into(), flag(true)]);
        assert_eq!(t.body(), "# seed=3\na,b\n5e-1,2\n\"has,comma\",1\n");
    }
}
