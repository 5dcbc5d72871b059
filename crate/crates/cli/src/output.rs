//! CSV tables with a `#`-prefixed metadata header.

use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub name: String,
    pub metadata: Vec<(String, String)>,
    pub header: String,
    pub rows: Vec<String>,
}

impl CsvTable {
    pub fn new(name: &str, metadata: Vec<(String, String)>, header: &str) -> Self {
        Self { name: name.into(), metadata, header: header.into(), rows: Vec::new() }
    }

    pub fn with_rows(mut self, rows: impl IntoIterator<Item = String>) -> Self {
        self.rows.extend(rows);
        self
    }

    /// Header line plus rows, without metadata.
    pub fn body(&self) -> String {
        let mut out = self.header.clone();
        out.push('\n');
        for r in &self.rows {
            out.push_str(r);
            out.push('\n');
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out.push_str(&self.body());
        out
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }
}

/// Strips `#` lines, leaving the deterministic part of a rendered table.
pub fn strip_metadata(text: &str) -> String {
    text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

/// Writes every table and file into `dir`, returning the written paths.
pub fn write_all(dir: &Path, tables: &[CsvTable], files: &[(String, String)]) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in tables {
        let p = dir.join(t.file_name());
        fs::write(&p, t.render())?;
        written.push(p);
    }
    for (name, contents) in files {
        let p = dir.join(name);
        fs::write(&p, contents)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_strip() {
        let t = CsvTable::new("x", vec![("seed".into(), "3".into())], "a,b")
            .with_rows(["1,2".to_string(), "3,4".to_string()]);
        let text = t.render();
        assert_eq!(text, "# seed: 3\na,b\n1,2\n3,4\n");
        assert_eq!(strip_metadata(&text), t.body());
    }

    #[test]
    fn writes_into_directory() {
        let dir = tempfile::tempdir().unwrap();
        let t = CsvTable::new("t", Vec::new(), "h");
        let out = write_all(dir.path(), &[t], &[("p.txt".into(), "v".into())]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(fs::read_to_string(dir.path().join("t.csv")).unwrap(), "h\n");
    }
}
