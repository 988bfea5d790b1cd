//! The headline studies: scheme-vs-flow transport rate, start-interval
//! discretization rate, nested-grid refinement gaps, the merged-pair density
//! check, and the coalescence-scheme census.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use arratia::densities::{
    estimate_scheme_density, pair_density_merged, refinement_gaps_multilevel, HistogramSpec,
    WebSimPlan,
};
use arratia::driver::TimeGrid;
use arratia::flow::{DriftSpec, ParticleSystem};
use arratia::measures::{
    estimate_law_distance, pushforward_lebesgue, pushforward_uniform, wasserstein, CouplingPlan,
    FlowRoute,
};
use arratia::quad::QuadSpec;
use arratia::rng;
use arratia::schemes::CoalescenceScheme;
use arratia::splitting::SplitScheme;
use arratia::stats;
use arratia::PathDriver;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind, OutputFormat};
use crate::error::{CliError, Result};

/// One experiment level (a partition size, a discretization size, a grid gap,
/// a histogram bin, or a scheme label).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStat {
    pub level: String,
    pub estimate: f64,
    pub std_error: f64,
    pub replicas: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    pub slope: f64,
    /// Half-width of the 95% confidence interval.
    pub ci95: f64,
    pub intercept: f64,
}

/// Everything an experiment reports. Emitted files are byte-reproducible for
/// a fixed (config, seed, version), so the wall clock stays out of
/// serialization and out of equality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_digest: String,
    pub experiment: String,
    pub levels: Vec<LevelStat>,
    pub slope: Option<SlopeSummary>,
    pub model_note: Option<String>,
    pub version: String,
    pub seed: u64,
    #[serde(skip)]
    pub wall_clock_secs: Option<f64>,
}

impl PartialEq for ResultRecord {
    fn eq(&self, other: &Self) -> bool {
        self.config_digest == other.config_digest
            && self.experiment == other.experiment
            && self.levels == other.levels
            && self.slope == other.slope
            && self.model_note == other.model_note
            && self.version == other.version
            && self.seed == other.seed
    }
}

/// Atom count for the discretized measures of the split-rate study at
/// partition size `n`: fixed when configured, otherwise the log-scaling of
/// the convergence proof with a free constant.
pub fn atoms_for_partition(cfg: &ExperimentConfig, cells: usize) -> usize {
    if cfg.m > 0 {
        cfg.m
    } else {
        let m = (cfg.m_scale * (cells as f64).log2()).ceil() as usize;
        m.max(2)
    }
}

/// Distributes `count` independent level computations over up to `workers`
/// threads; results keep level order, so the reduction is deterministic.
fn run_levels<T, F>(count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if workers <= 1 || count <= 1 {
        return (0..count).map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<T>>>> =
        (0..count).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.min(count) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= count {
                    break;
                }
                let out = f(i);
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker finished"))
        .collect()
}

fn split_rate(cfg: &ExperimentConfig) -> Result<(Vec<LevelStat>, Option<SlopeSummary>, String)> {
    let fine_cells = 1usize << cfg.fine_mesh_pow;
    let fine = TimeGrid::uniform(fine_cells);
    let sizes = cfg.partition_sizes.clone();
    let stats_per_level = run_levels(sizes.len(), cfg.workers, |i| {
        let cells = sizes[i];
        let m = atoms_for_partition(cfg, cells);
        let starts: Vec<f64> = (0..m).map(|j| j as f64 / m as f64).collect();
        let scheme = SplitScheme::new(
            TimeGrid::uniform(cells),
            cfg.drift.clone(),
            cfg.ode_substeps,
            fine_cells / cells,
        )?;
        let direct = FlowRoute::Direct {
            grid: fine.clone(),
            substeps: 1,
        };
        let plan = CouplingPlan {
            start_points: starts,
            driver_grid: fine.clone(),
            drift: cfg.drift.clone(),
            eval_time: cfg.t,
            seed: rng::mix(cfg.seed, cells as u64),
            crossing_correction: true,
        };
        let est = estimate_law_distance(
            &direct,
            &FlowRoute::Split(scheme),
            &plan,
            cfg.p,
            cfg.replicas,
        )?;
        if est.skipped * 100 > cfg.replicas {
            return Err(CliError::PartialFailure {
                failed: est.skipped,
                total: cfg.replicas,
            });
        }
        Ok(LevelStat {
            level: cells.to_string(),
            estimate: est.point_estimate,
            std_error: est.std_error,
            replicas: est.replicas as u64,
        })
    })?;

    // Model comparison: estimate ~ C (log 1/delta)^{-1/p} against a power law
    // in delta. Both fitted by least squares, compared by residual SS.
    let deltas: Vec<f64> = sizes.iter().map(|&n| 1.0 / n as f64).collect();
    let ests: Vec<f64> = stats_per_level.iter().map(|l| l.estimate).collect();
    let xs: Vec<f64> = deltas
        .iter()
        .map(|d| (1.0 / d).ln().powf(-1.0 / cfg.p))
        .collect();
    let c_num: f64 = xs.iter().zip(&ests).map(|(x, y)| x * y).sum();
    let c_den: f64 = xs.iter().map(|x| x * x).sum();
    let c_log = c_num / c_den;
    let log_sse: f64 = xs
        .iter()
        .zip(&ests)
        .map(|(x, y)| {
            let r = y - c_log * x;
            r * r
        })
        .sum();
    let power_fit = stats::log_log_slope(&deltas, &ests).map_err(CliError::Core)?;
    let power_sse: f64 = deltas
        .iter()
        .zip(&ests)
        .map(|(d, y)| {
            let r = y - (power_fit.intercept + power_fit.slope * d.ln()).exp();
            r * r
        })
        .sum();
    let better = if log_sse <= power_sse { "log" } else { "power" };
    let ms: Vec<String> = sizes
        .iter()
        .map(|&n| atoms_for_partition(cfg, n).to_string())
        .collect();
    let note = format!(
        "log_model_c={c_log:.6e} log_model_sse={log_sse:.6e} power_model_sse={power_sse:.6e} better={better} atoms=[{}]",
        ms.join(",")
    );
    let slope = SlopeSummary {
        slope: power_fit.slope,
        ci95: power_fit.slope_ci95,
        intercept: power_fit.intercept,
    };
    Ok((stats_per_level, Some(slope), note))
}

fn discretize_rate(
    cfg: &ExperimentConfig,
) -> Result<(Vec<LevelStat>, Option<SlopeSummary>, String)> {
    let big = cfg.reference_m;
    let starts: Vec<f64> = (0..big).map(|j| j as f64 / big as f64).collect();
    let mut start_grid = starts.clone();
    start_grid.push(1.0);
    // Time grid resolving the immediate coalescence of the dense start set.
    let first_cell = (0.25 / (big * big) as f64).min(1e-5);
    let grid = TimeGrid::ramped_uniform(first_cell, 128).map_err(CliError::Core)?;

    let level_indices: Vec<Vec<usize>> = cfg
        .discretize_sizes
        .iter()
        .map(|&m| (0..m).map(|j| j * (big / m)).collect())
        .collect();

    let mut sums = vec![Vec::with_capacity(cfg.replicas); cfg.discretize_sizes.len()];
    let mut sys = ParticleSystem::new(&starts, 0, true)?;
    let mut drivers: Vec<PathDriver> = (0..big)
        .map(|i| PathDriver::new(0, i as u64, grid.clone()))
        .collect();
    let all: Vec<usize> = (0..big).collect();
    for r in 0..cfg.replicas {
        let seed = rng::replica_seed(cfg.seed, r as u64);
        sys.reset(rng::mix(seed, 0xd15c));
        for (i, d) in drivers.iter_mut().enumerate() {
            d.reseed(seed, i as u64);
        }
        sys.run_until(&grid, 1, &mut drivers, &DriftSpec::Zero, cfg.t)
            .map_err(CliError::Core)?;
        let positions = sys.all_positions();
        let clusters: Vec<usize> = all.iter().map(|&i| sys.representative(i)).collect();
        let reference =
            pushforward_lebesgue(&start_grid, &clusters, &positions).map_err(CliError::Core)?;
        for (l, idx) in level_indices.iter().enumerate() {
            let sub: Vec<f64> = idx.iter().map(|&i| positions[i]).collect();
            let mu = pushforward_uniform(&sub, idx.len()).map_err(CliError::Core)?;
            let d = wasserstein(&reference, &mu, cfg.p).map_err(CliError::Core)?;
            sums[l].push(d);
        }
    }
    let mut levels = Vec::new();
    for (l, &m) in cfg.discretize_sizes.iter().enumerate() {
        let (mean, se) = stats::mean_and_se(&sums[l]).map_err(CliError::Core)?;
        levels.push(LevelStat {
            level: m.to_string(),
            estimate: mean,
            std_error: se,
            replicas: cfg.replicas as u64,
        });
    }
    let ms: Vec<f64> = cfg.discretize_sizes.iter().map(|&m| m as f64).collect();
    let ests: Vec<f64> = levels.iter().map(|l| l.estimate).collect();
    let fit = stats::log_log_slope(&ms, &ests).map_err(CliError::Core)?;
    let note = format!(
        "target_slope={:.3} reference_m={big}",
        -1.0 / cfg.p
    );
    Ok((
        levels,
        Some(SlopeSummary {
            slope: fit.slope,
            ci95: fit.slope_ci95,
            intercept: fit.intercept,
        }),
        note,
    ))
}

/// Start grid with spacing `gap`; the terminal point is pinned to 1 exactly.
pub fn spaced_start_grid(gap: f64) -> Vec<f64> {
    let n = (1.0 / gap).round() as usize;
    let mut pts: Vec<f64> = (0..n).map(|j| j as f64 * gap).collect();
    pts.push(1.0);
    pts
}

fn refinement(cfg: &ExperimentConfig) -> Result<(Vec<LevelStat>, Option<SlopeSummary>, String)> {
    let reference = spaced_start_grid(cfg.reference_gap);
    let levels_pts: Vec<Vec<f64>> = cfg.grid_gaps.iter().map(|&g| spaced_start_grid(g)).collect();
    let first_cell = (0.25 * cfg.reference_gap * cfg.reference_gap).min(1e-5);
    let plan = WebSimPlan {
        grid: TimeGrid::ramped_uniform(first_cell, 128).map_err(CliError::Core)?,
        substeps: 1,
        seed: cfg.seed,
        crossing_correction: true,
        eval_time: cfg.t,
    };
    let gaps = refinement_gaps_multilevel(
        &levels_pts,
        &reference,
        cfg.interval,
        cfg.replicas,
        &plan,
    )
    .map_err(CliError::Core)?;
    let length = cfg.interval.1 - cfg.interval.0;
    let levels: Vec<LevelStat> = cfg
        .grid_gaps
        .iter()
        .zip(&gaps)
        .map(|(&g, &(mean, se))| LevelStat {
            level: format!("{g}"),
            estimate: mean / length,
            std_error: se / length,
            replicas: cfg.replicas as u64,
        })
        .collect();
    let ests: Vec<f64> = levels.iter().map(|l| l.estimate).collect();
    let slope = if ests.iter().all(|&e| e > 0.0) {
        let fit = stats::log_log_slope(&cfg.grid_gaps, &ests).map_err(CliError::Core)?;
        Some(SlopeSummary {
            slope: fit.slope,
            ci95: fit.slope_ci95,
            intercept: fit.intercept,
        })
    } else {
        None
    };
    let note = format!("reference_gap={} target_slope=2", cfg.reference_gap);
    Ok((levels, slope, note))
}

fn density_check(cfg: &ExperimentConfig) -> Result<(Vec<LevelStat>, Option<SlopeSummary>, String)> {
    let (u1, u2) = (cfg.start_points[0], cfg.start_points[1]);
    let plan = WebSimPlan {
        grid: TimeGrid::uniform(1 << cfg.fine_mesh_pow),
        substeps: 1,
        seed: cfg.seed,
        crossing_correction: true,
        eval_time: cfg.t,
    };
    let hist = HistogramSpec {
        lo: cfg.window.0,
        hi: cfg.window.1,
        bins: cfg.bins,
    };
    let merged = CoalescenceScheme::new(2, vec![1]).map_err(CliError::Core)?;
    let est = estimate_scheme_density(
        &[u1, u2],
        1,
        Some(&merged),
        &hist,
        cfg.replicas,
        &plan,
    )
    .map_err(CliError::Core)?;
    let quad = QuadSpec {
        abs_tol: 1e-6,
        max_depth: 40,
    };
    let width = (hist.hi - hist.lo) / hist.bins as f64;
    let mut max_z: f64 = 0.0;
    let mut levels = Vec::with_capacity(cfg.bins);
    for b in 0..cfg.bins {
        let centre = hist.lo + width * (b as f64 + 0.5);
        let analytic =
            pair_density_merged((u1, u2), centre, cfg.t, &quad).map_err(CliError::Core)?;
        let se = est.half_widths[b] / 1.96;
        if se > 0.0 {
            max_z = max_z.max((est.values[b] - analytic).abs() / se);
        }
        levels.push(LevelStat {
            level: format!("[{},{})", est.bin_edges[b], est.bin_edges[b + 1]),
            estimate: est.values[b],
            std_error: se,
            replicas: est.replicas as u64,
        });
    }
    let note = format!(
        "analytic_reference=merged-pair-density max_abs_z={max_z:.3} mc_total_mass={:.6}",
        est.total_mass()
    );
    Ok((levels, None, note))
}

/// Census of realized coalescence schemes: per-label counts plus the number
/// of replicas excluded for numerical merge events.
pub fn census_counts(cfg: &ExperimentConfig) -> Result<(BTreeMap<String, u64>, u64)> {
    let n = cfg.start_points.len();
    let grid = TimeGrid::uniform(256);
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut sys = ParticleSystem::new(&cfg.start_points, 0, true)?;
    let mut drivers: Vec<PathDriver> = (0..n)
        .map(|i| PathDriver::new(0, i as u64, grid.clone()))
        .collect();
    let mut excluded = 0u64;
    for r in 0..cfg.replicas {
        let seed = rng::replica_seed(cfg.seed, r as u64);
        sys.reset(rng::mix(seed, 0xce45));
        for (i, d) in drivers.iter_mut().enumerate() {
            d.reseed(seed, i as u64);
        }
        let scheme = sys
            .run_until(&grid, 1, &mut drivers, &cfg.drift, cfg.t)
            .map_err(CliError::Core)?;
        if sys.numerical_merges() > 0 {
            excluded += 1;
            continue;
        }
        *counts.entry(scheme.label()).or_insert(0) += 1;
    }
    Ok((counts, excluded))
}

fn scheme_census(cfg: &ExperimentConfig) -> Result<(Vec<LevelStat>, Option<SlopeSummary>, String)> {
    let (counts, excluded) = census_counts(cfg)?;
    let total: u64 = counts.values().sum();
    if excluded * 100 > cfg.replicas as u64 {
        return Err(CliError::PartialFailure {
            failed: excluded as usize,
            total: cfg.replicas,
        });
    }
    let nf = total as f64;
    let levels: Vec<LevelStat> = counts
        .iter()
        .map(|(label, &c)| {
            let f = c as f64 / nf;
            LevelStat {
                level: label.clone(),
                estimate: f,
                std_error: (f * (1.0 - f) / nf).sqrt(),
                replicas: c,
            }
        })
        .collect();
    let note = format!("total={total} excluded={excluded}");
    Ok((levels, None, note))
}

/// Runs the configured study and returns its record.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultRecord> {
    cfg.validate()?;
    let start = Instant::now();
    let (levels, slope, note) = match cfg.kind {
        ExperimentKind::SplitRate => split_rate(cfg)?,
        ExperimentKind::DiscretizeRate => discretize_rate(cfg)?,
        ExperimentKind::Refinement => refinement(cfg)?,
        ExperimentKind::DensityCheck => density_check(cfg)?,
        ExperimentKind::SchemeCensus => scheme_census(cfg)?,
    };
    Ok(ResultRecord {
        config_digest: cfg.digest(),
        experiment: cfg.kind.name().to_string(),
        levels,
        slope,
        model_note: Some(note),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        wall_clock_secs: Some(start.elapsed().as_secs_f64()),
    })
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV form with the fixed `level,estimate,std_error,replicas` header.
pub fn to_csv(record: &ResultRecord) -> String {
    let mut out = String::from("level,estimate,std_error,replicas\n");
    for l in &record.levels {
        out.push_str(&format!(
            "{},{},{},{}\n",
            csv_field(&l.level),
            l.estimate,
            l.std_error,
            l.replicas
        ));
    }
    out
}

/// Writes the record in the requested format(s); returns the files written.
pub fn emit(record: &ResultRecord, format: OutputFormat, out: &std::path::Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
                path: dir.to_path_buf(),
                source: e,
            })?;
        }
    }
    let mut write = |path: PathBuf, contents: String| -> Result<()> {
        std::fs::write(&path, contents).map_err(|e| CliError::Io {
            path: path.clone(),
            source: e,
        })?;
        written.push(path);
        Ok(())
    };
    if matches!(format, OutputFormat::Csv | OutputFormat::Both) {
        write(out.with_extension("csv"), to_csv(record))?;
    }
    if matches!(format, OutputFormat::Json | OutputFormat::Both) {
        let json = serde_json::to_string_pretty(record).expect("record serializes");
        write(out.with_extension("json"), json + "\n")?;
    }
    Ok(written)
}
