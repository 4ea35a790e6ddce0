//! Run-directory persistence. Every CSV starts with a `# config_hash=...`
//! line and every JSON report carries a `config_hash` field.

use std::fs;
use std::path::{Path, PathBuf};

use meshvmc::GridFunction;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Written to every run directory; `compare` reads it back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub problem_hash: String,
}

pub struct RunDir {
    root: PathBuf,
    hash: String,
}

impl RunDir {
    /// Creates the directory and writes the resolved config and manifest.
    pub fn create(root: &Path, cfg: &ExperimentConfig, command: &str) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let dir = Self {
            root: root.to_path_buf(),
            hash: cfg.hash(),
        };
        let mut resolved = cfg.clone();
        resolved.output_dir = PathBuf::new();
        dir.write_json("config.json", &resolved)?;
        dir.write_json(
            "manifest.json",
            &Manifest {
                command: command.to_string(),
                config_hash: dir.hash.clone(),
                problem_hash: cfg.problem_hash(),
            },
        )?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.root.join(name);
        fs::create_dir_all(&p).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        write_json(&self.path(name), value)
    }

    /// JSON object with a `config_hash` field added at the top level.
    pub fn write_report<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        if let Some(obj) = v.as_object_mut() {
            obj.insert("config_hash".into(), self.hash.clone().into());
        }
        write_json(&self.path(name), &v)
    }

    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let path = self.path(name);
        write_csv(&path, &self.hash, rows)?;
        Ok(path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn write_csv<T: Serialize>(path: &Path, hash: &str, rows: &[T]) -> Result<()> {
    let mut buf = format!("# config_hash={hash}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    fs::write(path, buf).map_err(|e| CliError::io(path, e))
}

/// Rows of a CSV written by [`write_csv`], and its config hash.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(String, Vec<T>)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    let hash = first
        .strip_prefix("# config_hash=")
        .ok_or_else(|| CliError::validation(format!("{} has no config hash line", path.display())))?
        .to_string();
    let mut r = csv::Reader::from_reader(rest.as_bytes());
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok((hash, rows))
}

/// Sidecar of a flat binary snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    /// Points per axis, least significant axis first.
    pub shape: Vec<usize>,
    pub time: f64,
    pub step: usize,
    /// Always `"f64-le"`.
    pub dtype: String,
    pub config_hash: String,
}

/// Writes `<stem>.bin` (little-endian f64, linear index order) and
/// `<stem>.json`.
pub fn write_snapshot(dir: &Path, stem: &str, u: &GridFunction, meta: &SnapshotMeta) -> Result<()> {
    let bytes: Vec<u8> = u.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, bytes).map_err(|e| CliError::io(&bin, e))?;
    write_json(&dir.join(format!("{stem}.json")), meta)?;
    Ok(())
}

pub fn read_snapshot(dir: &Path, stem: &str) -> Result<(Vec<f64>, SnapshotMeta)> {
    let meta: SnapshotMeta = read_json(&dir.join(format!("{stem}.json")))?;
    let bin = dir.join(format!("{stem}.bin"));
    let bytes = fs::read(&bin).map_err(|e| CliError::io(&bin, e))?;
    if bytes.len() % 8 != 0 {
        return Err(CliError::validation(format!("{} is not a whole number of f64", bin.display())));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((values, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use meshvmc::MeshSpec;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        step: usize,
        value: f64,
    }

    #[test]
    fn csv_round_trip_keeps_hash_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let rows = vec![Row { step: 1, value: 0.5 }, Row { step: 2, value: -1e-300 }];
        write_csv(&path, "abc", &rows).unwrap();
        let (hash, back): (String, Vec<Row>) = read_csv(&path).unwrap();
        assert_eq!(hash, "abc");
        assert_eq!(back, rows);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = MeshSpec::cube(2, 4, 0.0, 1.0).unwrap();
        let u = GridFunction::from_fn(&mesh, |k| (k as f64).sin() / 3.0);
        let meta = SnapshotMeta {
            shape: vec![4, 4],
            time: 0.25,
            step: 5,
            dtype: "f64-le".into(),
            config_hash: "h".into(),
        };
        write_snapshot(dir.path(), "s", &u, &meta).unwrap();
        let (values, back) = read_snapshot(dir.path(), "s").unwrap();
        assert_eq!(values, u.values());
        assert_eq!(back, meta);
    }
}
