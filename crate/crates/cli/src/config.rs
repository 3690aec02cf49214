//! Flat key=value run configuration with flag overrides.
//!
//! Every run appends one reproducibility line (subcommand plus the full
//! effective configuration) to `<out_dir>/run.log`, so any output can be
//! regenerated from its log line alone.

use srswitch::error::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub corpus_dir: PathBuf,
    pub weights_dir: PathBuf,
    pub out_dir: PathBuf,
    pub scale: usize,
    pub tau: f64,
    pub seed: u64,
    pub threads: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub switch_epochs: usize,
    pub switch_lr: f64,
    pub patch_size: usize,
    pub count: usize,
    pub sample_n: usize,
    pub split_ratio: f64,
    pub patch_counts: Vec<usize>,
    pub repeats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus_dir: PathBuf::from("corpus"),
            weights_dir: PathBuf::from("weights"),
            out_dir: PathBuf::from("out"),
            scale: 4,
            tau: 0.02,
            seed: 0,
            threads: 1,
            epochs: 30,
            lr: 0.1,
            momentum: 0.9,
            batch: 2,
            switch_epochs: 10,
            switch_lr: 0.02,
            patch_size: 64,
            count: 200,
            sample_n: 200,
            split_ratio: 0.8,
            patch_counts: vec![100, 200, 300, 400],
            repeats: 3,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected key=value", path.display(), i + 1))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| {
                Error::Config(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value for '{key}': {v}")))
        }
        match key {
            "corpus_dir" => self.corpus_dir = PathBuf::from(value),
            "weights_dir" => self.weights_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "scale" => self.scale = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "switch_epochs" => self.switch_epochs = parse(key, value)?,
            "switch_lr" => self.switch_lr = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "count" => self.count = parse(key, value)?,
            "sample_n" => self.sample_n = parse(key, value)?,
            "split_ratio" => self.split_ratio = parse(key, value)?,
            "repeats" => self.repeats = parse(key, value)?,
            "patch_counts" => {
                self.patch_counts = value
                    .split(',')
                    .map(|s| parse("patch_counts", s.trim()))
                    .collect::<Result<Vec<usize>>>()?;
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// One-line echo of the full effective configuration.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "corpus_dir={} weights_dir={} out_dir={} scale={} tau={} seed={} threads={} \
             epochs={} lr={} momentum={} batch={} switch_epochs={} switch_lr={} \
             patch_size={} count={} sample_n={} split_ratio={} patch_counts={} repeats={}",
            self.corpus_dir.display(),
            self.weights_dir.display(),
            self.out_dir.display(),
            self.scale,
            self.tau,
            self.seed,
            self.threads,
            self.epochs,
            self.lr,
            self.momentum,
            self.batch,
            self.switch_epochs,
            self.switch_lr,
            self.patch_size,
            self.count,
            self.sample_n,
            self.split_ratio,
            self.patch_counts
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
            self.repeats
        );
        s
    }

    /// Append the reproducibility line for a finished subcommand.
    pub fn log_run(&self, subcommand: &str) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.out_dir.join("run.log");
        let line = format!("cmd={subcommand} {}\n", self.echo());
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))
    }
}
