//! Layered configuration: built-in defaults, then a TOML file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, Result};

pub const SNAPSHOT_FILE: &str = "resolved_config.toml";

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Globals {
    pub fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("--out is required for this command".into()))
    }
}

pub fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Overlays `top` onto `base`, descending into tables present in both.
pub fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn to_table<T: Serialize>(value: &T) -> Result<toml::Table> {
    toml::Table::try_from(value).map_err(|e| CliError::Config(e.to_string()))
}

/// `defaults` with the contents of the config file, if any, merged on top.
pub fn layered<T: Serialize + DeserializeOwned>(defaults: &T, file: Option<&Path>) -> Result<T> {
    let mut base = to_table(defaults)?;
    if let Some(path) = file {
        merge(&mut base, read_table(path)?);
    }
    base.try_into().map_err(|e: toml::de::Error| {
        let origin = file.map(|p| format!("{}: ", p.display())).unwrap_or_default();
        CliError::Config(format!("{origin}{e}"))
    })
}

/// Resolved settings of commands that have none beyond their arguments.
#[derive(Serialize)]
pub struct NoSettings {}

#[derive(Serialize)]
struct Snapshot<'a, T> {
    command: &'a str,
    config_file: Option<String>,
    arguments: &'a BTreeMap<String, String>,
    resolved: &'a T,
}

/// Writes `resolved_config.toml` into `dir`.
pub fn write_snapshot<T: Serialize>(
    dir: &Path,
    command: &str,
    globals: &Globals,
    arguments: &BTreeMap<String, String>,
    resolved: &T,
) -> Result<()> {
    let snap = Snapshot {
        command,
        config_file: globals.config.as_ref().map(|p| p.display().to_string()),
        arguments,
        resolved,
    };
    let text = toml::to_string(&snap).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(SNAPSHOT_FILE);
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

/// Collects `name = value` pairs for the snapshot.
#[derive(Default)]
pub struct Args(pub BTreeMap<String, String>);

impl Args {
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn opt(&mut self, key: &str, value: Option<impl ToString>) -> &mut Self {
        if let Some(v) = value {
            self.set(key, v);
        }
        self
    }

    pub fn path(&mut self, key: &str, value: &Path) -> &mut Self {
        self.set(key, value.display())
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merge_descends_into_tables() {
        let mut base: toml::Table = "a = 1\n[t]\nx = 1\ny = 2\n".parse().unwrap();
        let top: toml::Table = "b = 3\n[t]\ny = 5\n".parse().unwrap();
        merge(&mut base, top);
        assert_eq!(base["a"].as_integer(), Some(1));
        assert_eq!(base["b"].as_integer(), Some(3));
        assert_eq!(base["t"]["x"].as_integer(), Some(1));
        assert_eq!(base["t"]["y"].as_integer(), Some(5));
    }

    #[test]
    fn train_config_round_trips() {
        let c = cordseg::train::TrainConfig::phantom();
        let back: cordseg::train::TrainConfig = layered(&c, None).unwrap();
        assert_eq!(back, c);
        let c = cordseg::train::TrainConfig::amira();
        let back: cordseg::train::TrainConfig = layered(&c, None).unwrap();
        assert_eq!(back, c);
    }
}
