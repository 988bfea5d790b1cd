//! Experiment configuration: a flat `key = value` text format with explicit
//! validation, so runs are fully described by one small file plus a seed.

use std::path::PathBuf;

use arratia::flow::DriftSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SplitRate,
    DiscretizeRate,
    Refinement,
    DensityCheck,
    SchemeCensus,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "split-rate" => ExperimentKind::SplitRate,
            "discretize-rate" => ExperimentKind::DiscretizeRate,
            "refinement" => ExperimentKind::Refinement,
            "density-check" => ExperimentKind::DensityCheck,
            "scheme-census" => ExperimentKind::SchemeCensus,
            other => return Err(CliError::Config(format!("unknown experiment '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::SplitRate => "split-rate",
            ExperimentKind::DiscretizeRate => "discretize-rate",
            ExperimentKind::Refinement => "refinement",
            ExperimentKind::DensityCheck => "density-check",
            ExperimentKind::SchemeCensus => "scheme-census",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "csv" => OutputFormat::Csv,
            "json" => OutputFormat::Json,
            "both" => OutputFormat::Both,
            other => return Err(CliError::Config(format!("unknown format '{other}'"))),
        })
    }
}

/// Every knob of every experiment; unused keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub drift: DriftSpec,
    /// Observation time, a knot of the grids in play.
    pub t: f64,
    /// Wasserstein order.
    pub p: f64,
    pub replicas: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub format: OutputFormat,
    pub workers: usize,

    // split-rate
    pub partition_sizes: Vec<usize>,
    /// Fixed atom count for the discretized measures; 0 selects the
    /// log-scaling m(n) ~ m_scale * log2(n) from the convergence proof.
    pub m: usize,
    pub m_scale: f64,
    pub ode_substeps: usize,
    /// Fine mesh used for drivers and the reference SDE path: `2^-pow`.
    pub fine_mesh_pow: u32,

    // discretize-rate
    pub discretize_sizes: Vec<usize>,
    pub reference_m: usize,

    // refinement
    pub grid_gaps: Vec<f64>,
    pub reference_gap: f64,
    pub interval: (f64, f64),

    // density-check / scheme-census
    pub start_points: Vec<f64>,
    pub bins: usize,
    pub window: (f64, f64),
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::SchemeCensus,
            drift: DriftSpec::Zero,
            t: 1.0,
            p: 2.0,
            replicas: 1000,
            seed: 1,
            out: PathBuf::from("results"),
            format: OutputFormat::Csv,
            workers: 1,
            partition_sizes: vec![4, 8, 16, 32, 64],
            m: 0,
            m_scale: 1.0,
            ode_substeps: 8,
            fine_mesh_pow: 10,
            discretize_sizes: vec![8, 16, 32, 64, 128],
            reference_m: 2048,
            grid_gaps: vec![0.2, 0.1, 0.05],
            reference_gap: 0.0125,
            interval: (0.25, 0.75),
            start_points: vec![0.0, 0.3, 0.6],
            bins: 40,
            window: (-3.0, 3.5),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse::<T>()
        .map_err(|_| CliError::Config(format!("key '{key}': cannot parse '{v}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|piece| parse_num::<T>(key, piece))
        .collect()
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64)> {
    let parts: Vec<f64> = parse_list(key, v)?;
    if parts.len() != 2 {
        return Err(CliError::Config(format!("key '{key}': expected two values")));
    }
    Ok((parts[0], parts[1]))
}

pub fn parse_drift(v: &str) -> Result<DriftSpec> {
    let v = v.trim();
    if v == "zero" {
        return Ok(DriftSpec::Zero);
    }
    let (kind, args) = v
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("drift '{v}' needs 'kind:args'")))?;
    match kind {
        "constant" => Ok(DriftSpec::Constant(parse_num("drift", args)?)),
        "affine" => {
            let parts: Vec<f64> = parse_list("drift", args)?;
            if parts.len() != 3 {
                return Err(CliError::Config(
                    "affine drift takes slope,intercept,bound".into(),
                ));
            }
            DriftSpec::affine_clamped(parts[0], parts[1], parts[2])
                .map_err(|e| CliError::Config(e.to_string()))
        }
        "table" => {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for piece in args.split(';') {
                let (x, y) = piece
                    .split_once(':')
                    .ok_or_else(|| CliError::Config("table entries are x:y".into()))?;
                xs.push(parse_num("drift", x)?);
                ys.push(parse_num("drift", y)?);
            }
            DriftSpec::tabulated(xs, ys).map_err(|e| CliError::Config(e.to_string()))
        }
        other => Err(CliError::Config(format!("unknown drift kind '{other}'"))),
    }
}

impl ExperimentConfig {
    /// Parses the flat `key = value` format; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "experiment" => cfg.kind = ExperimentKind::parse(value)?,
                "drift" => cfg.drift = parse_drift(value)?,
                "t" => cfg.t = parse_num(key, value)?,
                "p" => cfg.p = parse_num(key, value)?,
                "replicas" => cfg.replicas = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "out" => cfg.out = PathBuf::from(value),
                "format" => cfg.format = OutputFormat::parse(value)?,
                "workers" => cfg.workers = parse_num(key, value)?,
                "partition_sizes" => cfg.partition_sizes = parse_list(key, value)?,
                "m" => cfg.m = parse_num(key, value)?,
                "m_scale" => cfg.m_scale = parse_num(key, value)?,
                "ode_substeps" => cfg.ode_substeps = parse_num(key, value)?,
                "fine_mesh_pow" => cfg.fine_mesh_pow = parse_num(key, value)?,
                "discretize_sizes" => cfg.discretize_sizes = parse_list(key, value)?,
                "reference_m" => cfg.reference_m = parse_num(key, value)?,
                "grid_gaps" => cfg.grid_gaps = parse_list(key, value)?,
                "reference_gap" => cfg.reference_gap = parse_num(key, value)?,
                "interval" => cfg.interval = parse_pair(key, value)?,
                "start_points" => cfg.start_points = parse_list(key, value)?,
                "bins" => cfg.bins = parse_num(key, value)?,
                "window" => cfg.window = parse_pair(key, value)?,
                other => {
                    return Err(CliError::Config(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.replicas < 2 {
            return fail("replicas must be at least 2".into());
        }
        if !(self.t > 0.0 && self.t <= 1.0) {
            return fail(format!("t = {} outside (0, 1]", self.t));
        }
        if !(self.p >= 1.0) {
            return fail(format!("p = {} below 1", self.p));
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        match self.kind {
            ExperimentKind::SplitRate => {
                if self.partition_sizes.is_empty() {
                    return fail("partition_sizes must be non-empty".into());
                }
                let fine = 1usize << self.fine_mesh_pow;
                for &n in &self.partition_sizes {
                    if n == 0 || fine % n != 0 {
                        return fail(format!(
                            "partition size {n} must divide the fine mesh 2^{}",
                            self.fine_mesh_pow
                        ));
                    }
                }
                if self.ode_substeps == 0 {
                    return fail("ode_substeps must be at least 1".into());
                }
            }
            ExperimentKind::DiscretizeRate => {
                if self.discretize_sizes.is_empty() {
                    return fail("discretize_sizes must be non-empty".into());
                }
                for &m in &self.discretize_sizes {
                    if m == 0 || self.reference_m % m != 0 {
                        return fail(format!(
                            "discretization size {m} must divide reference_m = {}",
                            self.reference_m
                        ));
                    }
                }
            }
            ExperimentKind::Refinement => {
                if self.grid_gaps.is_empty() {
                    return fail("grid_gaps must be non-empty".into());
                }
                if !(self.interval.0 < self.interval.1) {
                    return fail("interval must be non-empty".into());
                }
                for &g in &self.grid_gaps {
                    let ratio = g / self.reference_gap;
                    if !(g > 0.0) || (ratio - ratio.round()).abs() > 1e-9 {
                        return fail(format!(
                            "gap {g} must be an integer multiple of reference_gap {}",
                            self.reference_gap
                        ));
                    }
                }
            }
            ExperimentKind::DensityCheck => {
                if self.start_points.len() != 2 {
                    return fail("density-check needs exactly two start_points".into());
                }
                if self.bins == 0 || !(self.window.0 < self.window.1) {
                    return fail("density-check needs bins and a non-empty window".into());
                }
            }
            ExperimentKind::SchemeCensus => {
                if self.start_points.len() < 2 {
                    return fail("scheme-census needs at least two start_points".into());
                }
            }
        }
        if self
            .start_points
            .windows(2)
            .any(|w| !(w[0] < w[1]))
        {
            return fail("start_points must be strictly ascending".into());
        }
        Ok(())
    }

    /// Stable digest of the effective configuration (FNV-1a over the
    /// canonical JSON form). Output routing and worker count are normalized
    /// away: they cannot change any emitted number.
    pub fn digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = PathBuf::new();
        canonical.format = OutputFormat::Csv;
        canonical.workers = 1;
        let canon = serde_json::to_string(&canonical).expect("config serializes");
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for b in canon.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }
}
