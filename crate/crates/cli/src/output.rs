//! Output directory handling and table conversion.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::failure::Failure;

/// All writes of a command go through here, so nothing lands outside `root`.
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    /// Creates the directory and refuses to clobber any of `names` unless `force`.
    /// The check runs before any computation, so a refused run leaves no trace.
    pub fn prepare(root: &Path, names: &[String], force: bool) -> Result<Self, Failure> {
        if root.exists() && !root.is_dir() {
            return Err(Failure::usage(format!("--output-dir {} is not a directory", root.display())));
        }
        if !force {
            let existing: Vec<&str> = names
                .iter()
                .filter(|n| root.join(n).exists())
                .map(String::as_str)
                .collect();
            if !existing.is_empty() {
                return Err(Failure::usage(format!(
                    "{} already contains {}; pass --force to overwrite",
                    root.display(),
                    existing.join(", ")
                )));
            }
        }
        std::fs::create_dir_all(root).map_err(|e| Failure::io(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutputDir { root: root.to_path_buf() })
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<(), Failure> {
        let path = self.root.join(name);
        std::fs::write(&path, contents).map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).expect("output serializes");
        text.push('\n');
        self.write(name, &text)
    }
}

/// Column table used for the JSON form of every CSV output.
#[derive(Debug, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    /// Non-finite entries become `null`.
    pub rows: Vec<Vec<Option<f64>>>,
}

/// Re-reads a CSV produced by the library so both formats carry the same numbers.
pub fn csv_to_table(csv: &str) -> Table {
    let mut lines = csv.lines();
    let columns = lines
        .next()
        .map(|h| h.split(',').map(str::to_string).collect())
        .unwrap_or_default();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .map(|x| x.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect()
        })
        .collect();
    Table { columns, rows }
}
