//! The fractional-step scheme: a drift ODE flow composed with a driftless
//! coalescing segment on every cell of a time partition, together with the
//! single-path solvers used to analyse it.

use crate::driver::{PathDriver, TimeGrid};
use crate::error::{Error, Result};
use crate::flow::{DriftSpec, ParticleSystem};
use crate::schemes::CoalescenceScheme;

/// Parameters of the composed scheme on one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitScheme {
    pub grid: TimeGrid,
    pub drift: DriftSpec,
    /// Runge-Kutta substeps per cell for the drift flow.
    pub ode_substeps: usize,
    /// Coalescing-web substeps per cell.
    pub web_substeps: usize,
}

impl SplitScheme {
    pub fn new(grid: TimeGrid, drift: DriftSpec, ode_substeps: usize, web_substeps: usize) -> Result<Self> {
        if ode_substeps < 1 || web_substeps < 1 {
            return Err(Error::arg("substep counts must be at least 1"));
        }
        Ok(SplitScheme {
            grid,
            drift,
            ode_substeps,
            web_substeps,
        })
    }
}

/// Classical fourth-order Runge-Kutta for `x' = a(x)` over `[s, t]`.
pub fn rk4_flow(u: f64, s: f64, t: f64, drift: &DriftSpec, substeps: usize) -> f64 {
    let h = (t - s) / substeps as f64;
    let mut x = u;
    for _ in 0..substeps {
        let k1 = drift.eval(x);
        let k2 = drift.eval(x + 0.5 * h * k1);
        let k3 = drift.eval(x + 0.5 * h * k2);
        let k4 = drift.eval(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}

/// Drift flow value at `t` started from `u` at `s`. Zero and constant drift
/// are exact; the affine branch is exact while the clamp is inactive;
/// everything else integrates with RK4.
pub fn ode_flow(u: f64, s: f64, t: f64, drift: &DriftSpec, substeps: usize) -> Result<f64> {
    if t < s {
        return Err(Error::arg(format!("ode flow needs s <= t, got ({s}, {t})")));
    }
    if substeps < 1 {
        return Err(Error::arg("substeps must be at least 1"));
    }
    let tau = t - s;
    Ok(match drift {
        DriftSpec::Zero => u,
        DriftSpec::Constant(c) => u + c * tau,
        DriftSpec::AffineClamped { slope, intercept, bound } => {
            let exact = if *slope == 0.0 {
                u + intercept.clamp(-*bound, *bound) * tau
            } else {
                let equilibrium = -intercept / slope;
                equilibrium + (u - equilibrium) * (slope * tau).exp()
            };
            // The affine path is monotone in time, so checking the clamp at
            // both endpoints covers the whole step.
            let inactive = (slope * u + intercept).abs() < *bound
                && (slope * exact + intercept).abs() < *bound;
            if inactive {
                exact
            } else {
                rk4_flow(u, s, t, drift, substeps)
            }
        }
        DriftSpec::Tabulated { .. } => rk4_flow(u, s, t, drift, substeps),
    })
}

/// Drift-flow advance of `z` over `[s, t]` together with the accumulated
/// integral of the drift along the way; exact for zero and constant drift.
fn ode_with_integral(z: f64, s: f64, t: f64, drift: &DriftSpec, substeps: usize) -> (f64, f64) {
    match drift {
        DriftSpec::Zero => (z, 0.0),
        DriftSpec::Constant(c) => (z + c * (t - s), c * (t - s)),
        _ => {
            // Augmented RK4 on (z, integral of a(z)); the integral increment
            // equals the position increment because both integrate a(z).
            let h = (t - s) / substeps as f64;
            let mut x = z;
            let mut acc = 0.0;
            for _ in 0..substeps {
                let k1 = drift.eval(x);
                let k2 = drift.eval(x + 0.5 * h * k1);
                let k3 = drift.eval(x + 0.5 * h * k2);
                let k4 = drift.eval(x + h * k3);
                let inc = h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                acc += inc;
                x += inc;
            }
            (x, acc)
        }
    }
}

/// Euler-Maruyama path of `dx = a(x) dt + dw` from `u` on the knots of
/// `fine_grid`, using the supplied driver. Exact for zero and constant drift.
pub fn euler_path(
    driver: &mut PathDriver,
    u: f64,
    drift: &DriftSpec,
    fine_grid: &TimeGrid,
) -> Result<Vec<f64>> {
    let knots = fine_grid.knots();
    let mut out = Vec::with_capacity(knots.len());
    let mut x = u;
    out.push(x);
    for w in knots.windows(2) {
        let dt = w[1] - w[0];
        let advance = match drift {
            DriftSpec::Zero => 0.0,
            DriftSpec::Constant(c) => c * dt,
            other => other.eval(x) * dt,
        };
        x += advance + driver.increment(w[0], w[1])?;
        out.push(x);
    }
    Ok(out)
}

/// The two coupled single-particle paths of the splitting recursion,
/// sampled at `eval` times.
#[derive(Debug, Clone, PartialEq)]
pub struct PairPath {
    pub times: Vec<f64>,
    /// Live-noise path: frozen drift integral through the right endpoint of
    /// the current cell plus the live Brownian value.
    pub y: Vec<f64>,
    /// Lagged-noise path: continuous drift integral plus the Brownian value
    /// frozen at the current cell's left knot.
    pub z: Vec<f64>,
}

/// Evaluates the pair `(y, z)` driven by one Brownian path for possibly
/// distinct starts `u_y`, `u_z`. Evaluation times must be ascending within
/// `[0, 1]`; the value at 1 is the left limit.
pub fn split_pair_path(
    driver: &mut PathDriver,
    u_y: f64,
    u_z: f64,
    scheme: &SplitScheme,
    eval: &[f64],
) -> Result<PairPath> {
    if eval.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::arg("evaluation times must be strictly ascending"));
    }
    if let (Some(&first), Some(&last)) = (eval.first(), eval.last()) {
        if first < 0.0 || last > 1.0 {
            return Err(Error::arg("evaluation times must lie in [0, 1]"));
        }
    }
    let knots = scheme.grid.knots();
    let mut y = Vec::with_capacity(eval.len());
    let mut z = Vec::with_capacity(eval.len());

    // z value at the current cell's left knot, jump included.
    let mut z_left = u_z;
    let mut e = 0usize;

    for (j, w) in knots.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let (z_end, _) = ode_with_integral(z_left, a, b, &scheme.drift, scheme.ode_substeps);
        // y carries the drift integral through the cell's right endpoint; it
        // equals the z displacement net of noise jumps, i.e. u_y + (z(b-) -
        // u_z) - w(a) + w(t) evaluates the displayed formula directly.
        let w_left = driver.value_at(a)?;
        let last_cell = j + 2 == knots.len();
        while e < eval.len() && (eval[e] < b || (last_cell && eval[e] >= b)) {
            let t = eval[e];
            let wt = driver.value_at(t)?;
            // integral through b = (z_end - u_z) - (w(a) - w(0)) telescopes
            // exactly: each cell adds its ODE increment and its noise jump.
            y.push(u_y + (z_end - u_z - w_left) + wt);
            let zt = if t >= b {
                z_end // left limit at the horizon
            } else {
                ode_with_integral(z_left, a, t, &scheme.drift, scheme.ode_substeps).0
            };
            z.push(zt);
            e += 1;
        }
        let jump = driver.increment(a, b)?;
        z_left = z_end + jump;
    }
    Ok(PairPath { times: eval.to_vec(), y, z })
}

/// The composed scheme applied to ascending start points: on every cell the
/// drift flow over the whole cell, then a driftless coalescing segment.
/// Order collisions produced by the ODE step (impossible for exact Lipschitz
/// flows, possible under numerics) merge immediately and are flagged as
/// numerical events.
pub fn run_split_flow(
    start_points: &[f64],
    scheme: &SplitScheme,
    drivers: &mut [PathDriver],
    aux_seed: u64,
    crossing_correction: bool,
) -> Result<(ParticleSystem, CoalescenceScheme)> {
    run_split_flow_until(start_points, scheme, drivers, aux_seed, crossing_correction, 1.0)
}

/// As [`run_split_flow`] but evaluates the scheme at time `t`.
///
/// Cells are half-open on the right, so at an interior time the drift flow of
/// the cell containing `t` has already been applied over the whole cell while
/// the web has only run up to `t`; at the horizon the state is the left
/// limit. `t` must be a partition knot or a web substep target.
pub fn run_split_flow_until(
    start_points: &[f64],
    scheme: &SplitScheme,
    drivers: &mut [PathDriver],
    aux_seed: u64,
    crossing_correction: bool,
    t: f64,
) -> Result<(ParticleSystem, CoalescenceScheme)> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::arg(format!("evaluation time {t} outside (0, 1]")));
    }
    let mut sys = ParticleSystem::new(start_points, aux_seed, crossing_correction)?;
    let knots = scheme.grid.knots().to_vec();
    let mut reached = false;
    'cells: for w in knots.windows(2) {
        let (a, b) = (w[0], w[1]);
        if a >= t {
            // Lookahead: the cell starting at t contributes its full drift
            // flow to the state at t before any of its web runs.
            if a == t {
                sys.apply_to_survivors(|u| ode_flow(u, a, b, &scheme.drift, scheme.ode_substeps))?;
                sys.log_order_violations_as_numerical(a);
            }
            reached = true;
            break 'cells;
        }
        sys.apply_to_survivors(|u| ode_flow(u, a, b, &scheme.drift, scheme.ode_substeps))?;
        sys.log_order_violations_as_numerical(a);
        let width = b - a;
        for s in 1..=scheme.web_substeps {
            let target = if s == scheme.web_substeps {
                b
            } else {
                a + width * (s as f64 / scheme.web_substeps as f64)
            };
            sys.step_to_time(target, drivers, &DriftSpec::Zero)?;
            if target == t && target < b {
                reached = true;
                break 'cells;
            }
        }
        if b == t && b == 1.0 {
            reached = true;
        }
    }
    if !reached && t < 1.0 {
        return Err(Error::arg(format!(
            "evaluation time {t} is neither a partition knot nor a web substep target"
        )));
    }
    let scheme_out = sys.scheme();
    Ok((sys, scheme_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::replica_seed;

    #[test]
    fn ode_flow_zero_is_identity() {
        assert_eq!(ode_flow(0.7, 0.1, 0.9, &DriftSpec::Zero, 4).unwrap(), 0.7);
    }

    #[test]
    fn ode_flow_constant_integrates_directly() {
        let v = ode_flow(1.0, 0.2, 0.5, &DriftSpec::Constant(2.0), 1).unwrap();
        assert!((v - 1.6).abs() < 1e-15);
    }

    #[test]
    fn ode_flow_rejects_reversed_times() {
        assert!(ode_flow(0.0, 0.5, 0.2, &DriftSpec::Zero, 1).is_err());
    }

    #[test]
    fn affine_flow_matches_exponential() {
        // a(x) = x with a clamp far away: flow value e^{tau}.
        let drift = DriftSpec::affine_clamped(1.0, 0.0, 100.0).unwrap();
        let v = ode_flow(1.0, 0.0, 0.5, &drift, 8).unwrap();
        assert!((v - 0.5f64.exp()).abs() < 1e-12, "{v}");
        // The generic integrator reaches the same value to RK4 accuracy.
        let rk = rk4_flow(1.0, 0.0, 0.5, &drift, 8);
        assert!((rk - 0.5f64.exp()).abs() < 1e-6, "{rk}");
    }

    #[test]
    fn rk4_handles_tabulated_drift() {
        // Tabulated identity map on [-4, 4] behaves like a(x) = x.
        let drift = DriftSpec::tabulated(vec![-4.0, 4.0], vec![-4.0, 4.0]).unwrap();
        let v = ode_flow(1.0, 0.0, 0.5, &drift, 16).unwrap();
        assert!((v - 0.5f64.exp()).abs() < 1e-7, "{v}");
    }

    #[test]
    fn euler_path_zero_drift_is_the_driver() {
        let grid = TimeGrid::uniform(64);
        let mut d = PathDriver::new(5, 0, grid.clone());
        let path = euler_path(&mut d, 0.3, &DriftSpec::Zero, &grid).unwrap();
        for (k, &t) in grid.knots().iter().enumerate() {
            let w = d.value_at(t).unwrap();
            assert!((path[k] - (0.3 + w)).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_path_constant_drift_is_additive() {
        let grid = TimeGrid::uniform(64);
        let mut d = PathDriver::new(6, 0, grid.clone());
        let path = euler_path(&mut d, 0.0, &DriftSpec::Constant(1.5), &grid).unwrap();
        for (k, &t) in grid.knots().iter().enumerate() {
            let w = d.value_at(t).unwrap();
            assert!((path[k] - (1.5 * t + w)).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_self_convergence_rate() {
        // Strong self-convergence oracle: halving the mesh changes the
        // terminal value at rate O(mesh) for additive noise.
        let drift = DriftSpec::affine_clamped(-1.0, 0.5, 3.0).unwrap();
        let replicas = 400u64;
        let mut errs = Vec::new();
        let meshes = [64usize, 128, 256, 512, 1024];
        for pair in meshes.windows(2) {
            let (coarse, fine) = (pair[0], pair[1]);
            let mut sq = 0.0;
            for r in 0..replicas {
                let seed = replica_seed(2211, r);
                let mut d = PathDriver::new(seed, 0, TimeGrid::uniform(fine));
                let xf = *euler_path(&mut d, 0.2, &drift, &TimeGrid::uniform(fine))
                    .unwrap()
                    .last()
                    .unwrap();
                let xc = *euler_path(&mut d, 0.2, &drift, &TimeGrid::uniform(coarse))
                    .unwrap()
                    .last()
                    .unwrap();
                sq += (xf - xc) * (xf - xc);
            }
            errs.push((sq / replicas as f64).sqrt());
        }
        let hs: Vec<f64> = meshes[..meshes.len() - 1]
            .iter()
            .map(|m| 1.0 / *m as f64)
            .collect();
        let fit = crate::stats::log_log_slope(&hs, &errs).unwrap();
        assert!(fit.slope >= 0.9, "self-convergence slope {}", fit.slope);
    }

    #[test]
    fn split_pair_zero_drift_formulas() {
        let grid = TimeGrid::uniform(8);
        let scheme = SplitScheme::new(grid.clone(), DriftSpec::Zero, 4, 1).unwrap();
        let eval: Vec<f64> = TimeGrid::uniform(32).knots().to_vec();
        let mut d = PathDriver::new(40, 0, TimeGrid::uniform(32));
        let pair = split_pair_path(&mut d, 0.1, -0.2, &scheme, &eval).unwrap();
        for (i, &t) in eval.iter().enumerate() {
            let wt = d.value_at(t).unwrap();
            assert!((pair.y[i] - (0.1 + wt)).abs() < 1e-12, "y at {t}");
            // z freezes the noise at the cell's left knot.
            let cell_left = if t >= 1.0 {
                grid.knots()[grid.cells() - 1]
            } else {
                *grid.knots().iter().rev().find(|&&k| k <= t).unwrap()
            };
            let w_frozen = d.value_at(cell_left).unwrap();
            assert!((pair.z[i] - (-0.2 + w_frozen)).abs() < 1e-12, "z at {t}");
        }
    }

    #[test]
    fn split_pair_constant_drift_hand_evaluation() {
        let grid = TimeGrid::uniform(4);
        let c = 0.8;
        let scheme = SplitScheme::new(grid.clone(), DriftSpec::Constant(c), 1, 1).unwrap();
        let eval = [0.0, 0.125, 0.25, 0.6, 0.875, 1.0];
        let mut d = PathDriver::new(41, 0, TimeGrid::uniform(8));
        let pair = split_pair_path(&mut d, 0.5, 0.5, &scheme, &eval).unwrap();
        for (i, &t) in eval.iter().enumerate() {
            let wt = d.value_at(t).unwrap();
            let right_knot = if t >= 1.0 {
                1.0
            } else {
                *grid.knots().iter().find(|&&k| k > t).unwrap()
            };
            let expect = 0.5 + c * right_knot + wt;
            assert!((pair.y[i] - expect).abs() < 1e-12, "y at {t}");
        }
    }

    #[test]
    fn split_flow_zero_drift_matches_plain_web_bitwise() {
        let grid = TimeGrid::uniform(16);
        let starts = [0.0, 0.15, 0.4];
        for seed in 0..10u64 {
            let base = replica_seed(7070, seed);
            let mut d1: Vec<PathDriver> = (0..3)
                .map(|i| PathDriver::new(base, i as u64, grid.clone()))
                .collect();
            let mut d2 = d1.clone();
            let mut plain = ParticleSystem::new(&starts, seed, true).unwrap();
            plain.run(&grid, 4, &mut d1, &DriftSpec::Zero).unwrap();

            let scheme = SplitScheme::new(grid.clone(), DriftSpec::Zero, 2, 4).unwrap();
            let (split_sys, _) = run_split_flow(&starts, &scheme, &mut d2, seed, true).unwrap();

            for i in 0..starts.len() {
                assert_eq!(
                    plain.position(i).to_bits(),
                    split_sys.position(i).to_bits(),
                    "seed {seed} particle {i}"
                );
            }
        }
    }

    #[test]
    fn single_particle_constant_drift_telescopes() {
        // For one particle the composition collapses to u + c t + w(t) no
        // matter the partition.
        for cells in [2usize, 4, 8] {
            let grid = TimeGrid::uniform(cells);
            let scheme = SplitScheme::new(grid, DriftSpec::Constant(1.3), 1, 2).unwrap();
            let mut d = vec![PathDriver::new(3131, 0, TimeGrid::uniform(16))];
            let (sys, j) = run_split_flow(&[0.25], &scheme, &mut d, 0, false).unwrap();
            let w1 = d[0].value_at(1.0).unwrap();
            assert!((sys.position(0) - (0.25 + 1.3 + w1)).abs() < 1e-12);
            assert_eq!(j.merges(), 0);
        }
    }

    #[test]
    fn split_flow_output_ordered() {
        let grid = TimeGrid::uniform(8);
        let drift = DriftSpec::affine_clamped(-0.5, 0.2, 2.0).unwrap();
        for seed in 0..10u64 {
            let scheme = SplitScheme::new(grid.clone(), drift.clone(), 4, 2).unwrap();
            let mut d: Vec<PathDriver> = (0..4)
                .map(|i| PathDriver::new(replica_seed(660, seed), i as u64, TimeGrid::uniform(16)))
                .collect();
            let (sys, scheme_out) =
                run_split_flow(&[-0.5, -0.1, 0.3, 0.9], &scheme, &mut d, seed, true).unwrap();
            let pos = sys.all_positions();
            for p in pos.windows(2) {
                assert!(p[0] <= p[1]);
            }
            assert!(scheme_out.is_valid());
            assert_eq!(sys.numerical_merges(), 0, "Lipschitz ODE steps never cross");
        }
    }
}

