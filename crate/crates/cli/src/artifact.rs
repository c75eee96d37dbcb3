//! Output plumbing: every artifact carries the config hash, seeds and the
//! config itself so that it can be regenerated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use fusegram::data::{read_csv, LabeledDataset};
use fusegram::util::fnv1a64;

use crate::config::{RawConfig, CSV_CONFIG_PREFIX};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Digests of inputs that are not fully described by the config.
    pub inputs: BTreeMap<String, String>,
    pub config: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str, raw: &RawConfig, seed: u64) -> Self {
        Provenance {
            tool: format!("fusegram {}", env!("CARGO_PKG_VERSION")),
            command: command.to_string(),
            config_hash: raw.hash(),
            seeds: BTreeMap::from([("seed".to_string(), seed)]),
            inputs: BTreeMap::new(),
            config: raw.embedded(),
        }
    }

    pub fn with_input(mut self, name: &str, bytes: &[u8]) -> Self {
        self.inputs.insert(name.to_string(), digest(bytes));
        self
    }

    /// Comment block placed at the top of CSV artifacts.
    pub fn csv_comments(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {} {}", self.tool, self.command);
        let _ = writeln!(out, "# config_hash = {}", self.config_hash);
        for (k, v) in &self.seeds {
            let _ = writeln!(out, "# seed.{k} = {v}");
        }
        for (k, v) in &self.inputs {
            let _ = writeln!(out, "# input.{k} = {v}");
        }
        for (k, v) in &self.config {
            let _ = writeln!(out, "{CSV_CONFIG_PREFIX}{k} = {v}");
        }
        out
    }
}

pub fn digest(bytes: &[u8]) -> String {
    format!("fnv1a64:{:016x}", fnv1a64(bytes))
}

/// JSON artifact layout.
#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub provenance: Provenance,
    pub result: T,
}

pub fn to_json<T: Serialize>(provenance: &Provenance, result: &T) -> anyhow::Result<String> {
    #[derive(Serialize)]
    struct Borrowed<'a, T> {
        provenance: &'a Provenance,
        result: &'a T,
    }
    let mut text = serde_json::to_string_pretty(&Borrowed { provenance, result })?;
    text.push('\n');
    Ok(text)
}

/// Writes to `path`, or to stdout when `path` is empty or `-`.
pub fn emit(path: &Path, text: &str) -> anyhow::Result<()> {
    if path.as_os_str().is_empty() || path == Path::new("-") {
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes())?;
        out.flush()?;
        Ok(())
    } else {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

/// Reads `path`, or stdin for `-`.
pub fn read_source(path: &str) -> anyhow::Result<Vec<u8>> {
    let mut bytes = Vec::new();
    if path == "-" {
        std::io::stdin()
            .read_to_end(&mut bytes)
            .context("reading stdin")?;
    } else {
        bytes = std::fs::read(path).map_err(|e| fusegram::Error::Io {
            path: path.into(),
            source: e,
        })?;
    }
    Ok(bytes)
}

/// Drops `#` comment lines.
pub fn strip_comments(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .fold(String::new(), |mut acc, l| {
            acc.push_str(l);
            acc.push('\n');
            acc
        })
}

/// Parses a sensor CSV with optional comment lines and optional header.
pub fn parse_dataset(bytes: &[u8], source: &str) -> anyhow::Result<LabeledDataset> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| fusegram::Error::Format(format!("{source}: not UTF-8")))?;
    let body = strip_comments(text);
    let has_header = body
        .lines()
        .find(|l| !l.trim().is_empty())
        .is_some_and(|l| {
            l.trim_start()
                .starts_with(|c: char| c.is_ascii_alphabetic())
        });
    Ok(read_csv(body.as_bytes(), has_header, source)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_carry_config_that_reloads() {
        let mut raw = RawConfig::default();
        raw.apply(["seed=11", "kernel=cjsd:hm:scaled"]).unwrap();
        let p = Provenance::new("synth", &raw, 11);
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.csv");
        std::fs::write(&f, format!("{}1,2,3\n", p.csv_comments())).unwrap();
        assert_eq!(RawConfig::load(&f).unwrap().hash(), raw.hash());
    }

    #[test]
    fn json_envelope_reloads_config() {
        let mut raw = RawConfig::default();
        raw.apply(["model=iforest", "iforest.trees=7"]).unwrap();
        let p = Provenance::new("eval", &raw, 0);
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("r.json");
        std::fs::write(&f, to_json(&p, &vec![1, 2]).unwrap()).unwrap();
        assert_eq!(RawConfig::load(&f).unwrap().hash(), raw.hash());
    }

    #[test]
    fn header_is_detected() {
        let row = "1,2,3,4,5,6,7,8,9,10,11,12,13,14,0,1\n";
        let with = format!("# c\n{}\n{row}", fusegram::data::CSV_HEADER);
        assert_eq!(parse_dataset(with.as_bytes(), "t").unwrap().len(), 1);
        assert_eq!(parse_dataset(row.as_bytes(), "t").unwrap().len(), 1);
    }
}
