//! Run configuration: a flat `key = value` file plus command-line
//! overrides. Defaults follow the corridor study setup: 110 yd detector
//! spacing, 900 s trip gap, 50 yd corridor tolerance, 7200/900 s label
//! windows, 16 upstream detectors, 5 folds, SMOTE ratios
//! {none, 0.25, 0.5, 1.0}.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use vdet_core::features::DOWNSTREAM_GAP;
use vdet_core::learn::Algorithm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPreset {
    /// The full hyperparameter grids.
    Default,
    /// One point per algorithm, for fast smoke and determinism runs.
    Quick,
}

impl GridPreset {
    pub fn as_str(self) -> &'static str {
        match self {
            GridPreset::Default => "default",
            GridPreset::Quick => "quick",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corridor: PathBuf,
    pub trajectories: PathBuf,
    pub incidents: PathBuf,
    pub weather: PathBuf,
    /// Virtual detector spacing, yards.
    pub spacing_yd: f64,
    /// Trip segmentation gap, seconds.
    pub gap_s: f64,
    /// Corridor filter / matching tolerance, yards.
    pub max_offset_yd: f64,
    pub pre_window_s: f64,
    pub post_window_s: f64,
    pub upstream_req: usize,
    /// Detectors skipped between the vehicle and the nearest feature set.
    /// The feature layout fixes this; it is configurable only so a run
    /// bakes the value into its report.
    pub downstream_gap: u32,
    pub tz_offset_hours: f64,
    pub folds: usize,
    pub smote_k: usize,
    /// Balancing settings evaluated per algorithm; `None` disables SMOTE.
    pub smote_ratios: Vec<Option<f64>>,
    pub algorithms: Vec<Algorithm>,
    pub grid: GridPreset,
    pub seed: u64,
    /// Rayon worker count; 0 keeps the library default.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corridor: PathBuf::new(),
            trajectories: PathBuf::new(),
            incidents: PathBuf::new(),
            weather: PathBuf::new(),
            spacing_yd: 110.0,
            gap_s: 900.0,
            max_offset_yd: 50.0,
            pre_window_s: 7200.0,
            post_window_s: 900.0,
            upstream_req: 16,
            downstream_gap: DOWNSTREAM_GAP,
            tz_offset_hours: 0.0,
            folds: 5,
            smote_k: 5,
            smote_ratios: vec![None, Some(0.25), Some(0.5), Some(1.0)],
            algorithms: Algorithm::ALL.to_vec(),
            grid: GridPreset::Default,
            seed: 42,
            threads: 0,
        }
    }
}

impl RunConfig {
    /// Reads a config file, applying `overrides` (`key=value`) last.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                anyhow!("{}:{}: expected key = value", path.display(), lineno + 1)
            })?;
            cfg.apply(key.trim(), value.trim())
                .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        }
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| anyhow!("override '{item}': expected key=value"))?;
            cfg.apply(key.trim(), value.trim())
                .with_context(|| format!("override '{item}'"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num(value: &str) -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| anyhow!("'{value}' is not a number"))
        }
        match key {
            "corridor" => self.corridor = PathBuf::from(value),
            "trajectories" => self.trajectories = PathBuf::from(value),
            "incidents" => self.incidents = PathBuf::from(value),
            "weather" => self.weather = PathBuf::from(value),
            "spacing_yd" => self.spacing_yd = num(value)?,
            "gap_s" => self.gap_s = num(value)?,
            "max_offset_yd" => self.max_offset_yd = num(value)?,
            "pre_window_s" => self.pre_window_s = num(value)?,
            "post_window_s" => self.post_window_s = num(value)?,
            "upstream_req" => self.upstream_req = num(value)? as usize,
            "downstream_gap" => self.downstream_gap = num(value)? as u32,
            "tz_offset_hours" => self.tz_offset_hours = num(value)?,
            "folds" => self.folds = num(value)? as usize,
            "smote_k" => self.smote_k = num(value)? as usize,
            "smote_ratios" => {
                let mut ratios = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    if part.eq_ignore_ascii_case("none") {
                        ratios.push(None);
                    } else {
                        ratios.push(Some(num(part)?));
                    }
                }
                self.smote_ratios = ratios;
            }
            "algorithms" => {
                let mut algos = Vec::new();
                for part in value.split(',') {
                    let part = part.trim();
                    algos.push(
                        Algorithm::parse(part)
                            .ok_or_else(|| anyhow!("unknown algorithm '{part}'"))?,
                    );
                }
                self.algorithms = algos;
            }
            "grid" => {
                self.grid = match value {
                    "default" => GridPreset::Default,
                    "quick" => GridPreset::Quick,
                    other => bail!("unknown grid preset '{other}' (default|quick)"),
                }
            }
            "seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| anyhow!("'{value}' is not a seed"))?
            }
            "threads" => self.threads = num(value)? as usize,
            other => bail!("unknown config key '{other}'"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing_yd.is_finite() && self.spacing_yd > 0.0) {
            bail!("spacing_yd must be positive");
        }
        if !(self.gap_s.is_finite() && self.gap_s > 0.0) {
            bail!("gap_s must be positive");
        }
        if !(self.max_offset_yd.is_finite() && self.max_offset_yd > 0.0) {
            bail!("max_offset_yd must be positive");
        }
        if !(self.pre_window_s > 0.0 && self.post_window_s > 0.0) {
            bail!("label windows must be positive");
        }
        if self.upstream_req == 0 {
            bail!("upstream_req must be at least 1");
        }
        if self.downstream_gap != DOWNSTREAM_GAP {
            bail!(
                "downstream_gap {} is fixed by the feature layout at {}",
                self.downstream_gap,
                DOWNSTREAM_GAP
            );
        }
        if self.folds < 2 {
            bail!("folds must be at least 2");
        }
        if self.smote_k == 0 {
            bail!("smote_k must be at least 1");
        }
        for r in self.smote_ratios.iter().flatten() {
            if !(*r > 0.0 && *r <= 1.0) {
                bail!("smote ratio {r} outside (0, 1]");
            }
        }
        if self.smote_ratios.is_empty() {
            bail!("need at least one balancing setting (use 'none')");
        }
        if self.algorithms.is_empty() {
            bail!("need at least one algorithm");
        }
        Ok(())
    }

    /// Flat key/value echo of the configuration for the run report.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("corridor", self.corridor.display().to_string());
        put("trajectories", self.trajectories.display().to_string());
        put("incidents", self.incidents.display().to_string());
        put("weather", self.weather.display().to_string());
        put("spacing_yd", self.spacing_yd.to_string());
        put("gap_s", self.gap_s.to_string());
        put("max_offset_yd", self.max_offset_yd.to_string());
        put("pre_window_s", self.pre_window_s.to_string());
        put("post_window_s", self.post_window_s.to_string());
        put("upstream_req", self.upstream_req.to_string());
        put("downstream_gap", self.downstream_gap.to_string());
        put("tz_offset_hours", self.tz_offset_hours.to_string());
        put("folds", self.folds.to_string());
        put("smote_k", self.smote_k.to_string());
        let mut ratios = String::new();
        for (i, r) in self.smote_ratios.iter().enumerate() {
            if i > 0 {
                ratios.push(',');
            }
            match r {
                None => ratios.push_str("none"),
                Some(v) => write!(ratios, "{v}").unwrap(),
            }
        }
        put("smote_ratios", ratios);
        let algos: Vec<&str> = self.algorithms.iter().map(|a| a.as_str()).collect();
        put("algorithms", algos.join(","));
        put("grid", self.grid.as_str().to_string());
        put("seed", self.seed.to_string());
        put("threads", self.threads.to_string());
        m
    }
}
