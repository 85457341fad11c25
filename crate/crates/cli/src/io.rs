//! Output files. Every file carries the config hash and seed: JSON under a
//! top-level `provenance` object, CSV as leading `#` comment lines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tangency::config::{ExperimentConfig, Format, Provenance};

#[derive(Serialize)]
struct Header<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    config: Provenance<'a>,
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    provenance: Header<'a>,
    result: &'a T,
}

/// Writes the files of one command into the output directory.
pub struct Sink<'a> {
    config: &'a ExperimentConfig,
    command: &'a str,
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl<'a> Sink<'a> {
    pub fn new(config: &'a ExperimentConfig, command: &'a str) -> std::io::Result<Self> {
        let dir = config.output.dir.clone();
        fs::create_dir_all(&dir)?;
        Ok(Sink { config, command, dir, written: Vec::new() })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, result: &T) -> std::io::Result<()> {
        if !self.config.output.wants(Format::Json) {
            return Ok(());
        }
        let doc = Document {
            provenance: Header {
                command: self.command,
                config_hash: self.config.hash(),
                seed: self.config.seed(),
                config: self.config.provenance(),
            },
            result,
        };
        let mut text = serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)?;
        text.push('\n');
        let p = self.path(name);
        fs::write(&p, text)?;
        self.written.push(p);
        Ok(())
    }

    /// `header` names the columns; each row must have the same length.
    pub fn csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> std::io::Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        if !self.config.output.wants(Format::Csv) {
            return Ok(());
        }
        let mut buf = Vec::new();
        writeln!(buf, "# command={}", self.command)?;
        writeln!(buf, "# config_hash={}", self.config.hash())?;
        writeln!(buf, "# seed={}", self.config.seed())?;
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for row in rows {
                w.write_record(row)?;
            }
            w.flush()?;
        }
        let p = self.path(name);
        fs::write(&p, buf)?;
        self.written.push(p);
        Ok(())
    }

    /// Free-form text prefixed with the same `#` provenance lines as CSV.
    pub fn raw(&mut self, name: &str, body: &[u8]) -> std::io::Result<()> {
        let mut buf = Vec::new();
        writeln!(buf, "# command={}", self.command)?;
        writeln!(buf, "# config_hash={}", self.config.hash())?;
        writeln!(buf, "# seed={}", self.config.seed())?;
        buf.extend_from_slice(body);
        let p = self.path(name);
        fs::write(&p, buf)?;
        self.written.push(p);
        Ok(())
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn display_paths(paths: &[PathBuf], base: &Path) -> String {
    paths
        .iter()
        .map(|p| p.strip_prefix(base).unwrap_or(p).display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_in(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.output.dir = dir.to_path_buf();
        c
    }

    #[test]
    fn csv_carries_provenance_lines() {
        let tmp = tempfile::tempdir().unwrap();
        let c = config_in(tmp.path());
        let mut s = Sink::new(&c, "orbit").unwrap();
        s.csv("a.csv", &["k", "x"], [[0.to_string(), num(0.5)], [1.to_string(), num(1e-20)]]).unwrap();
        let text = fs::read_to_string(tmp.path().join("a.csv")).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "# command=orbit");
        assert_eq!(lines[1], format!("# config_hash={}", c.hash()));
        assert_eq!(lines[2], "# seed=1");
        assert_eq!(&lines[3..], ["k,x", "0,0.5", "1,1e-20"]);
    }

    #[test]
    fn json_embeds_resolved_config() {
        let tmp = tempfile::tempdir().unwrap();
        let c = config_in(tmp.path());
        let mut s = Sink::new(&c, "validate").unwrap();
        s.json("v.json", &vec![1, 2]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&s.written()[0]).unwrap()).unwrap();
        assert_eq!(v["provenance"]["config_hash"], c.hash());
        assert_eq!(v["provenance"]["config"]["noise"]["t0"], 0.055);
        assert_eq!(v["result"], serde_json::json!([1, 2]));
    }

    #[test]
    fn disabled_formats_are_skipped() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = config_in(tmp.path());
        c.output.formats = vec![Format::Json];
        let mut s = Sink::new(&c, "x").unwrap();
        s.csv("a.csv", &["k"], [[String::new()]]).unwrap();
        assert!(s.written().is_empty());
    }

    #[test]
    fn num_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 7.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
