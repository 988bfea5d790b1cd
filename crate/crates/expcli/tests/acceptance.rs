//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (run with `--nocapture` to see them).
//!
//! The tests serialize on a global lock so the per-criterion runtime budgets
//! are measured single-threaded, as specified.

use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use arratia::densities::{
    estimate_scheme_density, km_density, km_determinant, merged_pair_total_mass,
    pair_density_merged, refinement_gaps_multilevel, HistogramSpec, WebSimPlan,
};
use arratia::driver::{PathDriver, TimeGrid};
use arratia::flow::{coalescence_prob_oracle, DriftSpec, ParticleSystem};
use arratia::measures::{
    wasserstein, wasserstein_equal_mass_bruteforce, AtomicMeasure,
};
use arratia::quad::{adaptive_simpson_panels, QuadSpec};
use arratia::rng;
use arratia::schemes::{enumerate, enumerate_all, to_partition, CoalescenceScheme};
use arratia::splitting::{euler_path, split_pair_path, SplitScheme};
use arratia::stats::log_log_slope;

use expcli::config::{ExperimentConfig, ExperimentKind};
use expcli::experiment::{census_counts, run_experiment};

static GATE: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn finish(criterion: usize, name: &str, started: Instant, budget_secs: f64, details: String) {
    let elapsed = started.elapsed().as_secs_f64();
    println!("criterion {criterion:2} PASS [{name}] ({elapsed:.1} s): {details}");
    assert!(
        elapsed < budget_secs,
        "criterion {criterion} exceeded its {budget_secs} s budget: {elapsed:.1} s"
    );
}

#[test]
fn criterion_01_two_point_coalescence_law() {
    let _g = serial();
    let started = Instant::now();
    let replicas: u64 = 100_000;
    let grid = TimeGrid::uniform(1024); // dt = 2^-10
    let mut sys = ParticleSystem::new(&[0.0, 0.5], 0, true).unwrap();
    let mut drivers: Vec<PathDriver> = (0..2)
        .map(|i| PathDriver::new(0, i as u64, grid.clone()))
        .collect();
    let mut merged = 0u64;
    for r in 0..replicas {
        let seed = rng::replica_seed(0x5eed_0001, r);
        sys.reset(rng::mix(seed, 0xc0ff));
        drivers[0].reseed(seed, 0);
        drivers[1].reseed(seed, 1);
        sys.run(&grid, 1, &mut drivers, &DriftSpec::Zero).unwrap();
        if sys.cluster_count() == 1 {
            merged += 1;
        }
    }
    let p_hat = merged as f64 / replicas as f64;
    let oracle = coalescence_prob_oracle(0.5, 1.0).unwrap();
    assert!((oracle - 0.72367).abs() < 5e-5);
    let sigma = (oracle * (1.0 - oracle) / replicas as f64).sqrt();
    assert!(
        (p_hat - oracle).abs() <= 3.0 * sigma,
        "p_hat {p_hat} vs oracle {oracle}, 3 sigma {:.4}",
        3.0 * sigma
    );
    finish(
        1,
        "two-point coalescence law",
        started,
        30.0,
        format!("p_hat {p_hat:.5} vs oracle {oracle:.5}, |diff| {:.5} <= 3 sigma {:.5}",
            (p_hat - oracle).abs(), 3.0 * sigma),
    );
}

#[test]
fn criterion_02_exact_wasserstein_evaluator() {
    let _g = serial();
    let started = Instant::now();

    let jitter_sorted = |seed: u64, n: usize| -> Vec<f64> {
        let mut pts: Vec<f64> = (0..n)
            .map(|i| 8.0 * (rng::uniform(rng::mix(seed, i as u64)) - 0.5))
            .collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 1..pts.len() {
            if pts[i] <= pts[i - 1] {
                pts[i] = pts[i - 1] + 1e-9;
            }
        }
        pts
    };

    // 200 random equal-mass pairs of up to 6 atoms against the brute-force
    // assignment oracle.
    let mut worst: f64 = 0.0;
    for case in 0..200u64 {
        let n = 1 + (rng::mix(901, case) % 6) as usize;
        let xs = jitter_sorted(rng::mix(902, case), n);
        let ys = jitter_sorted(rng::mix(903, case), n);
        let mu = AtomicMeasure::from_positions(&xs).unwrap();
        let nu = AtomicMeasure::from_positions(&ys).unwrap();
        let p = [1.0, 1.5, 2.0, 3.0][(case % 4) as usize];
        let fast = wasserstein(&mu, &nu, p).unwrap();
        let slow = wasserstein_equal_mass_bruteforce(&xs, &ys, p).unwrap();
        worst = worst.max((fast - slow).abs());
        assert!((fast - slow).abs() < 1e-10, "case {case}: {fast} vs {slow}");
    }

    // Metric axioms on 100 random triples with arbitrary masses.
    let random_measure = |seed: u64| -> AtomicMeasure {
        let n = 1 + (rng::mix(11, seed) % 5) as usize;
        let locs = jitter_sorted(rng::mix(13, seed), n);
        let mut masses: Vec<f64> = (0..n)
            .map(|i| 0.05 + rng::uniform(rng::mix(seed, 77 + i as u64)))
            .collect();
        let total: f64 = masses.iter().sum();
        for m in &mut masses {
            *m /= total;
        }
        let fix: f64 = 1.0 - masses.iter().sum::<f64>();
        *masses.last_mut().unwrap() += fix;
        AtomicMeasure::new(locs, masses).unwrap()
    };
    let mut worst_axiom: f64 = 0.0;
    for case in 0..100u64 {
        let a = random_measure(rng::mix(21, case));
        let b = random_measure(rng::mix(22, case));
        let c = random_measure(rng::mix(23, case));
        for p in [1.0, 2.0] {
            let dab = wasserstein(&a, &b, p).unwrap();
            let dba = wasserstein(&b, &a, p).unwrap();
            let daa = wasserstein(&a, &a, p).unwrap();
            let dac = wasserstein(&a, &c, p).unwrap();
            let dcb = wasserstein(&c, &b, p).unwrap();
            worst_axiom = worst_axiom
                .max((dab - dba).abs())
                .max(daa)
                .max(dab - (dac + dcb));
            assert!((dab - dba).abs() < 1e-10, "symmetry case {case}");
            assert!(daa < 1e-10, "identity case {case}");
            assert!(dab <= dac + dcb + 1e-10, "triangle case {case}");
        }
    }
    finish(
        2,
        "exact Wasserstein evaluator",
        started,
        5.0,
        format!("200 oracle pairs (worst |diff| {worst:.2e}), 100 axiom triples (worst violation {worst_axiom:.2e})"),
    );
}

#[test]
fn criterion_03_karlin_mcgregor_suite() {
    let _g = serial();
    let started = Instant::now();

    // Spot value from the independent 2x2 evaluation (1 - e^{-1}) / (2 pi).
    let spot = km_density(&[0.0, 1.0], &[0.0, 1.0], 1.0).unwrap();
    let expected = (1.0 - (-1.0f64).exp()) / (2.0 * std::f64::consts::PI);
    assert!((spot - expected).abs() < 1e-9, "spot {spot} vs {expected}");
    assert!((spot - 0.100605).abs() < 1e-5);

    // Antisymmetry and vanishing diagonal, exact in the fixed-order 2x2 form.
    let v = km_determinant(&[0.1, 0.9], &[-0.2, 0.4], 0.8).unwrap();
    let swapped = km_determinant(&[0.1, 0.9], &[0.4, -0.2], 0.8).unwrap();
    assert_eq!(swapped.to_bits(), (-v).to_bits(), "antisymmetry exact");
    let diag = km_determinant(&[0.1, 0.9], &[0.4, 0.4], 0.8).unwrap();
    assert_eq!(diag, 0.0, "vanishing diagonal exact");
    let v3 = km_determinant(&[0.0, 0.5, 1.3], &[-0.1, 0.6, 1.0], 0.9).unwrap();
    let s3 = km_determinant(&[0.0, 0.5, 1.3], &[0.6, -0.1, 1.0], 0.9).unwrap();
    assert!((s3 + v3).abs() <= 1e-13 * v3.abs().max(1.0));

    // Chamber mass of the killed pair against the reflection oracle.
    let t = 1.0;
    let spec = QuadSpec { abs_tol: 1e-6, max_depth: 40 };
    let w = 10.0 * t + 0.5;
    let mass = adaptive_simpson_panels(
        |y1: f64| {
            adaptive_simpson_panels(
                |r: f64| km_determinant(&[0.0, 0.5], &[y1, y1 + r], t).unwrap(),
                1e-12,
                2.0 * w,
                12,
                &QuadSpec { abs_tol: 1e-7, max_depth: 40 },
            )
            .unwrap()
        },
        -w,
        0.5 + w,
        12,
        &spec,
    )
    .unwrap();
    let survive = 1.0 - coalescence_prob_oracle(0.5, t).unwrap();
    assert!((survive - 0.27633).abs() < 1e-5);
    assert!((mass - survive).abs() < 1e-4, "mass {mass} vs {survive}");
    finish(
        3,
        "Karlin-McGregor suite",
        started,
        10.0,
        format!(
            "spot |diff| {:.1e}, identities exact, chamber mass {mass:.5} vs {survive:.5}",
            (spot - expected).abs()
        ),
    );
}

#[test]
fn criterion_04_merged_pair_density() {
    let _g = serial();
    let started = Instant::now();
    let x = (0.0, 0.5);
    let t = 1.0;

    // Total mass against the reflection oracle.
    let quad = QuadSpec { abs_tol: 1e-5, max_depth: 40 };
    let mass = merged_pair_total_mass(x, t, &quad).unwrap();
    let oracle = coalescence_prob_oracle(0.5, t).unwrap();
    assert!((mass - oracle).abs() < 1e-3, "mass {mass} vs {oracle}");

    // Bin-wise agreement with a 100k-replica histogram of merged locations.
    let replicas = 100_000;
    let plan = WebSimPlan {
        grid: TimeGrid::uniform(1024),
        substeps: 1,
        seed: 0x5eed_0004,
        crossing_correction: true,
        eval_time: t,
    };
    let hist = HistogramSpec { lo: -3.0, hi: 3.5, bins: 40 };
    let merged = CoalescenceScheme::new(2, vec![1]).unwrap();
    let est = estimate_scheme_density(&[x.0, x.1], 1, Some(&merged), &hist, replicas, &plan)
        .unwrap();
    let point_quad = QuadSpec { abs_tol: 1e-6, max_depth: 40 };
    let width = (hist.hi - hist.lo) / hist.bins as f64;
    let mut max_z: f64 = 0.0;
    for b in 0..hist.bins {
        let centre = hist.lo + width * (b as f64 + 0.5);
        let analytic = pair_density_merged(x, centre, t, &point_quad).unwrap();
        let se = est.half_widths[b] / 1.96;
        let z = if se > 0.0 {
            (est.values[b] - analytic).abs() / se
        } else {
            0.0
        };
        max_z = max_z.max(z);
        assert!(
            z <= 3.0,
            "bin {b} at {centre:.2}: estimate {} vs analytic {analytic}, z = {z:.2}",
            est.values[b]
        );
    }
    finish(
        4,
        "merged-pair density (boundary integral)",
        started,
        120.0,
        format!("total mass {mass:.5} vs oracle {oracle:.5}, max bin |z| {max_z:.2} over 40 bins"),
    );
}

#[test]
fn criterion_05_strong_rate_of_the_splitting() {
    let _g = serial();
    let started = Instant::now();
    // The lagged-path second moment sup_s E |x(s) - z(s)|^2 has the stated
    // delta^{p/2} rate exactly; the live-path comparison E sup |x - y|^2 is
    // checked against its proved upper-bound shape (its true rate is delta^2
    // for every Lipschitz drift, degenerate for constant drift, where
    // x - y = c (t - t_{j+1}) identically).
    let drift = DriftSpec::Constant(1.0);
    let replicas = 1000u64;
    let fine = TimeGrid::uniform(1024);
    let eval: Vec<f64> = fine.knots().to_vec();
    let cells_levels = [8usize, 16, 32, 64, 128]; // delta = 2^-3 .. 2^-7
    let mut deltas = Vec::new();
    let mut z_rate = Vec::new();
    let mut y_sup = Vec::new();
    for &cells in &cells_levels {
        let scheme = SplitScheme::new(TimeGrid::uniform(cells), drift.clone(), 1, 1).unwrap();
        let mut mean_sq = vec![0.0f64; eval.len()];
        let mut sup_y = 0.0f64;
        for r in 0..replicas {
            let seed = rng::replica_seed(0x5eed_0005 + cells as u64, r);
            let mut d = PathDriver::new(seed, 0, fine.clone());
            let x = euler_path(&mut d, 0.0, &drift, &fine).unwrap();
            let pair = split_pair_path(&mut d, 0.0, 0.0, &scheme, &eval).unwrap();
            let mut sup = 0.0f64;
            for k in 0..eval.len() {
                let dz = x[k] - pair.z[k];
                mean_sq[k] += dz * dz;
                sup = sup.max((x[k] - pair.y[k]).abs());
            }
            sup_y += sup * sup;
        }
        let sup_of_means = mean_sq
            .iter()
            .map(|s| s / replicas as f64)
            .fold(0.0f64, f64::max);
        deltas.push(1.0 / cells as f64);
        z_rate.push(sup_of_means);
        y_sup.push(sup_y / replicas as f64);
    }
    let fit = log_log_slope(&deltas, &z_rate).unwrap();
    assert!(
        (0.75..=1.25).contains(&fit.slope),
        "lagged-path slope {} outside [0.75, 1.25]",
        fit.slope
    );
    // Constant-drift degeneracy of the live path, exact.
    for (&delta, &v) in deltas.iter().zip(&y_sup) {
        let exact = delta * delta;
        assert!(
            (v - exact).abs() <= 1e-9 * exact,
            "E sup|x-y|^2 = {v} differs from (c delta)^2 = {exact}"
        );
    }
    // Upper-bound shape of Lemma 2.1's first inequality: values below
    // C * delta with C anchored at the coarsest level.
    let c_bound = y_sup[0] / deltas[0];
    for (&delta, &v) in deltas.iter().zip(&y_sup) {
        assert!(v <= c_bound * delta * (1.0 + 1e-12));
    }
    finish(
        5,
        "splitting strong rate",
        started,
        120.0,
        format!(
            "sup_s E|x-z|^2 slope {:.3} in [0.75, 1.25]; E sup|x-y|^2 = (c delta)^2 exactly, below C delta with C = {c_bound:.3}",
            fit.slope
        ),
    );
}

#[test]
fn criterion_06_discretization_rate() {
    let _g = serial();
    let started = Instant::now();
    let cfg = ExperimentConfig {
        kind: ExperimentKind::DiscretizeRate,
        drift: DriftSpec::Zero,
        t: 1.0,
        p: 2.0,
        replicas: 500,
        seed: 0x5eed_0006,
        discretize_sizes: vec![8, 16, 32, 64, 128],
        reference_m: 2048,
        out: std::env::temp_dir().join("acceptance_c6"),
        ..ExperimentConfig::default()
    };
    let record = run_experiment(&cfg).unwrap();
    let slope = record.slope.as_ref().unwrap().slope;
    assert!(
        (-0.75..=-0.25).contains(&slope),
        "W_2 discretization slope {slope} outside [-0.75, -0.25]"
    );
    finish(
        6,
        "start-interval discretization rate",
        started,
        180.0,
        format!("log W_2 vs log m slope {slope:.3} (theory -0.5)"),
    );
}

#[test]
fn criterion_07_scheme_transport_bound() {
    let _g = serial();
    let started = Instant::now();
    let cfg = ExperimentConfig {
        kind: ExperimentKind::SplitRate,
        drift: DriftSpec::affine_clamped(-0.5, 0.25, 2.0).unwrap(),
        t: 1.0,
        p: 2.0,
        replicas: 4000,
        seed: 0x5eed_0007,
        partition_sizes: vec![4, 8, 16, 32, 64],
        m: 0,
        m_scale: 1.0,
        ode_substeps: 8,
        fine_mesh_pow: 10,
        out: std::env::temp_dir().join("acceptance_c7"),
        ..ExperimentConfig::default()
    };
    let record = run_experiment(&cfg).unwrap();
    let levels = &record.levels;
    assert_eq!(levels.len(), 5);
    // Strict decrease, significant at two standard errors of the difference.
    for w in levels.windows(2) {
        let diff = w[0].estimate - w[1].estimate;
        let sigma = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        assert!(
            diff > 2.0 * sigma,
            "levels {} -> {}: decrease {diff:.4} not significant at 2 sigma ({sigma:.4})",
            w[0].level,
            w[1].level
        );
    }
    // Bound consistency: one free constant C makes C (log 1/delta)^{-1/2} an
    // upper envelope of every level (within two standard errors).
    let deltas: Vec<f64> = cfg.partition_sizes.iter().map(|&n| 1.0 / n as f64).collect();
    let c_env = levels
        .iter()
        .zip(&deltas)
        .map(|(l, &d)| l.estimate * (1.0 / d).ln().sqrt())
        .fold(0.0f64, f64::max);
    for (l, &d) in levels.iter().zip(&deltas) {
        let bound = c_env * (1.0 / d).ln().powf(-0.5);
        assert!(l.estimate <= bound + 2.0 * l.std_error);
    }
    finish(
        7,
        "scheme transport bound",
        started,
        600.0,
        format!(
            "levels [{}] strictly decreasing at 2 sigma; envelope C = {c_env:.4}; {}",
            levels
                .iter()
                .map(|l| format!("{:.4}", l.estimate))
                .collect::<Vec<_>>()
                .join(", "),
            record.model_note.as_deref().unwrap_or("")
        ),
    );
}

#[test]
fn criterion_08_refinement_monotonicity() {
    let _g = serial();
    let started = Instant::now();
    let replicas = 10_000u64;
    let coarse = expcli::experiment::spaced_start_grid(0.2);
    let mid = expcli::experiment::spaced_start_grid(0.1);
    let fine = expcli::experiment::spaced_start_grid(0.05);
    let n = fine.len();
    let idx_of = |set: &[f64]| -> Vec<usize> {
        set.iter()
            .map(|u| {
                fine.binary_search_by(|v| v.partial_cmp(u).unwrap())
                    .expect("nested grids")
            })
            .collect()
    };
    let coarse_idx = idx_of(&coarse);
    let mid_idx = idx_of(&mid);
    let all: Vec<usize> = (0..n).collect();
    let grid = TimeGrid::ramped_uniform(1e-5, 128).unwrap();
    let intervals = [(0.25, 0.75), (0.05, 0.4), (0.0, 1.0)];
    let mut sys = ParticleSystem::new(&fine, 0, true).unwrap();
    let mut drivers: Vec<PathDriver> = (0..n)
        .map(|i| PathDriver::new(0, i as u64, grid.clone()))
        .collect();
    let count_in = |pos: &[f64], iv: (f64, f64)| -> usize {
        pos.iter().filter(|&&p| p >= iv.0 && p <= iv.1).count()
    };
    let mut monotone = 0u64;
    for r in 0..replicas {
        let seed = rng::replica_seed(0x5eed_0008, r);
        sys.reset(rng::mix(seed, 0x8888));
        for (i, d) in drivers.iter_mut().enumerate() {
            d.reseed(seed, i as u64);
        }
        sys.run(&grid, 1, &mut drivers, &DriftSpec::Zero).unwrap();
        let pos_fine = sys.distinct_positions(&all);
        let pos_mid = sys.distinct_positions(&mid_idx);
        let pos_coarse = sys.distinct_positions(&coarse_idx);
        let mut ok = true;
        for iv in intervals {
            let (a, b, c) = (
                count_in(&pos_coarse, iv),
                count_in(&pos_mid, iv),
                count_in(&pos_fine, iv),
            );
            ok &= a <= b && b <= c;
        }
        monotone += ok as u64;
    }
    assert_eq!(
        monotone, replicas,
        "atom counts must be non-decreasing under refinement in every replica"
    );
    finish(
        8,
        "refinement monotonicity",
        started,
        120.0,
        format!("atom counts non-decreasing in {monotone}/{replicas} replicas over {} intervals", intervals.len()),
    );
}

#[test]
fn criterion_09_refinement_gap_rate() {
    let _g = serial();
    let started = Instant::now();
    let replicas = 1_000_000;
    let gaps_spec = [0.2, 0.1, 0.05];
    let reference = expcli::experiment::spaced_start_grid(0.0125);
    let levels: Vec<Vec<f64>> = gaps_spec
        .iter()
        .map(|&g| expcli::experiment::spaced_start_grid(g))
        .collect();
    let plan = WebSimPlan {
        grid: TimeGrid::ramped_uniform(1e-5, 128).unwrap(),
        substeps: 1,
        seed: 0x5eed_0009,
        crossing_correction: true,
        eval_time: 1.0,
    };
    let gaps =
        refinement_gaps_multilevel(&levels, &reference, (0.25, 0.75), replicas, &plan).unwrap();
    let per_unit: Vec<f64> = gaps.iter().map(|&(m, _)| m / 0.5).collect();
    let lo = 4.0 / 2.5;
    let hi = 4.0 * 2.5;
    for w in per_unit.windows(2) {
        let ratio = w[0] / w[1];
        assert!(
            ratio >= lo && ratio <= hi,
            "successive gap ratio {ratio:.2} outside [{lo:.2}, {hi:.2}] (gaps {per_unit:?})"
        );
    }
    finish(
        9,
        "refinement gap rate",
        started,
        900.0,
        format!(
            "per-unit gaps [{}], ratios [{}] within [{lo:.2}, {hi:.2}]",
            per_unit
                .iter()
                .map(|g| format!("{g:.2e}"))
                .collect::<Vec<_>>()
                .join(", "),
            per_unit
                .windows(2)
                .map(|w| format!("{:.2}", w[0] / w[1]))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    );
}

#[test]
fn criterion_10_scheme_combinatorics() {
    let _g = serial();
    let started = Instant::now();
    // Enumeration count against the falling-factorial formula.
    for n in 1..=8usize {
        for l in 0..n {
            let count = enumerate(n, l).unwrap().len();
            let expected: usize = (0..l).map(|i| n - 1 - i).product::<usize>().max(1);
            assert_eq!(count, expected, "|J({n},{l})|");
        }
    }
    // Partition block counts.
    for n in 2..=8usize {
        for s in enumerate_all(n).unwrap() {
            assert_eq!(to_partition(&s).unwrap().block_count(), n - s.merges());
        }
    }
    // Simulated three-point census partitions the event space exactly.
    let cfg = ExperimentConfig {
        kind: ExperimentKind::SchemeCensus,
        start_points: vec![0.0, 0.3, 0.6],
        replicas: 3000,
        seed: 0x5eed_0010,
        ..ExperimentConfig::default()
    };
    let (counts, excluded) = census_counts(&cfg).unwrap();
    assert_eq!(excluded, 0);
    let total: u64 = counts.values().sum();
    assert_eq!(total, cfg.replicas as u64);
    let valid_labels: Vec<String> = enumerate_all(3)
        .unwrap()
        .iter()
        .map(|s| s.label())
        .collect();
    for label in counts.keys() {
        assert!(valid_labels.contains(label), "unexpected scheme {label}");
    }
    let freq_sum: f64 = total as f64 / cfg.replicas as f64;
    assert_eq!(freq_sum, 1.0, "frequencies sum to 1 exactly");
    finish(
        10,
        "scheme combinatorics",
        started,
        5.0,
        format!(
            "counts match (n-1)!/(n-1-l)! for n <= 8; census over {} replicas covers {} schemes, frequencies sum to 1",
            cfg.replicas,
            counts.len()
        ),
    );
}
