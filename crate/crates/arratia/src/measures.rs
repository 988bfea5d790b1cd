//! Atomic measures induced by coalescing flows and exact one-dimensional
//! transport distances between them.

use serde::{Deserialize, Serialize};

use crate::driver::{PathDriver, TimeGrid};
use crate::error::{Error, Result};
use crate::flow::{DriftSpec, ParticleSystem};
use crate::rng;
use crate::splitting::{self, SplitScheme};
use crate::stats;

const MASS_TOL: f64 = 1e-12;

/// A finite list of `(location, mass)` atoms with total mass one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    locations: Vec<f64>,
    masses: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(locations: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if locations.is_empty() || locations.len() != masses.len() {
            return Err(Error::arg("measure needs matching non-empty atoms"));
        }
        if locations.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("atom locations must be strictly ascending"));
        }
        if masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::arg("atom masses must be positive"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::arg(format!("masses sum to {total}, not 1")));
        }
        Ok(AtomicMeasure { locations, masses })
    }

    /// Point mass at `x`.
    pub fn dirac(x: f64) -> Self {
        AtomicMeasure {
            locations: vec![x],
            masses: vec![1.0],
        }
    }

    /// Groups repeated values of `positions` into atoms of mass
    /// `multiplicity / len`.
    pub fn from_positions(positions: &[f64]) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::arg("empty position list"));
        }
        let mut sorted = positions.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let unit = 1.0 / positions.len() as f64;
        let mut locations = Vec::new();
        let mut masses: Vec<f64> = Vec::new();
        for &p in &sorted {
            match locations.last() {
                Some(&last) if last == p => *masses.last_mut().unwrap() += unit,
                _ => {
                    locations.push(p);
                    masses.push(unit);
                }
            }
        }
        AtomicMeasure::new(locations, masses)
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.locations.iter().copied().zip(self.masses.iter().copied())
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// CSV serialization, one `location,mass` row per atom.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("location,mass\n");
        for (x, m) in self.atoms() {
            out.push_str(&format!("{x},{m}\n"));
        }
        out
    }

    /// JSON array of `[location, mass]` pairs.
    pub fn to_json(&self) -> String {
        let pairs: Vec<[f64; 2]> = self.atoms().map(|(x, m)| [x, m]).collect();
        serde_json::to_string(&pairs).expect("serializing plain floats cannot fail")
    }
}

/// The m-point uniform pushforward: atoms at the distinct entries of
/// `positions`, each carrying `multiplicity / m`.
pub fn pushforward_uniform(positions: &[f64], m: usize) -> Result<AtomicMeasure> {
    if positions.len() != m || m == 0 {
        return Err(Error::arg(format!(
            "expected {m} positions, got {}",
            positions.len()
        )));
    }
    AtomicMeasure::from_positions(positions)
}

/// Left endpoints of the cells of `start_grid`; the particle set that carries
/// the Lebesgue mass of each cell.
pub fn lebesgue_start_points(start_grid: &[f64]) -> Result<Vec<f64>> {
    validate_start_grid(start_grid)?;
    Ok(start_grid[..start_grid.len() - 1].to_vec())
}

fn validate_start_grid(start_grid: &[f64]) -> Result<()> {
    if start_grid.len() < 2
        || start_grid[0] != 0.0
        || *start_grid.last().unwrap() != 1.0
        || start_grid.windows(2).any(|w| !(w[0] < w[1]))
    {
        return Err(Error::arg("start grid must ascend from 0 to 1"));
    }
    Ok(())
}

/// Pushforward of Lebesgue measure on `[0, 1]` through a flow observed on a
/// finite start grid: the particle representing cell `[u_i, u_{i+1}]` carries
/// mass `u_{i+1} - u_i`, and atoms collect the mass of the cells whose
/// representatives coalesced.
///
/// `cluster_map[i]` is the cluster id of cell `i`'s representative and
/// `positions[i]` its terminal position; both come from a flow run over
/// [`lebesgue_start_points`].
pub fn pushforward_lebesgue(
    start_grid: &[f64],
    cluster_map: &[usize],
    positions: &[f64],
) -> Result<AtomicMeasure> {
    validate_start_grid(start_grid)?;
    let cells = start_grid.len() - 1;
    if cluster_map.len() != cells || positions.len() != cells {
        return Err(Error::arg(format!(
            "expected {cells} cluster entries and positions"
        )));
    }
    let mut by_cluster: std::collections::BTreeMap<usize, (f64, f64)> =
        std::collections::BTreeMap::new();
    for i in 0..cells {
        let length = start_grid[i + 1] - start_grid[i];
        let entry = by_cluster
            .entry(cluster_map[i])
            .or_insert((positions[i], 0.0));
        if entry.0.to_bits() != positions[i].to_bits() {
            return Err(Error::Internal(format!(
                "cluster {} carries distinct positions",
                cluster_map[i]
            )));
        }
        entry.1 += length;
    }
    let mut atoms: Vec<(f64, f64)> = by_cluster.into_values().collect();
    atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (locations, masses): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
    AtomicMeasure::new(locations, masses)
}

/// Exact p-Wasserstein distance between two atomic probability measures via
/// the quantile coupling: the integral of `|F^{-1} - G^{-1}|^p` evaluated in
/// closed form over the merged quantile breakpoints.
pub fn wasserstein(mu: &AtomicMeasure, nu: &AtomicMeasure, p: f64) -> Result<f64> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::arg(format!("order p must be >= 1, got {p}")));
    }
    let mut i = 0usize;
    let mut j = 0usize;
    let mut cum_mu = 0.0f64;
    let mut cum_nu = 0.0f64;
    let mut q = 0.0f64;
    let mut total = 0.0f64;
    while i < mu.len() && j < nu.len() {
        let next_mu = cum_mu + mu.masses[i];
        let next_nu = cum_nu + nu.masses[j];
        let q_next = next_mu.min(next_nu).min(1.0);
        let seg = q_next - q;
        if seg > 0.0 {
            total += seg * (mu.locations[i] - nu.locations[j]).abs().powf(p);
        }
        if next_mu <= q_next + MASS_TOL {
            cum_mu = next_mu;
            i += 1;
        }
        if next_nu <= q_next + MASS_TOL {
            cum_nu = next_nu;
            j += 1;
        }
        q = q_next;
    }
    Ok(total.powf(1.0 / p))
}

/// How a coupled replica realizes the flow on shared drivers.
#[derive(Debug, Clone)]
pub enum FlowRoute {
    /// Fine-step coalescing SDE integration on `grid`.
    Direct { grid: TimeGrid, substeps: usize },
    /// The fractional-step scheme.
    Split(SplitScheme),
}

impl FlowRoute {
    fn drift(&self) -> Option<&DriftSpec> {
        match self {
            FlowRoute::Direct { .. } => None,
            FlowRoute::Split(s) => Some(&s.drift),
        }
    }

    /// Terminal positions per original particle at time `t`.
    fn positions_at(
        &self,
        starts: &[f64],
        drift: &DriftSpec,
        drivers: &mut [PathDriver],
        aux_seed: u64,
        crossing: bool,
        t: f64,
    ) -> Result<Vec<f64>> {
        match self {
            FlowRoute::Direct { grid, substeps } => {
                let mut sys = ParticleSystem::new(starts, aux_seed, crossing)?;
                sys.run_until(grid, *substeps, drivers, drift, t)?;
                Ok(sys.all_positions())
            }
            FlowRoute::Split(scheme) => {
                let (sys, _) = splitting::run_split_flow_until(
                    starts, scheme, drivers, aux_seed, crossing, t,
                )?;
                Ok(sys.all_positions())
            }
        }
    }
}

/// Monte Carlo coupling estimate of a transport distance between the laws of
/// two random measures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawDistanceEstimate {
    /// Mean of `W_p` over the coupled replicas; an upper bound estimate for
    /// the infimum over couplings, never the infimum itself.
    pub point_estimate: f64,
    pub std_error: f64,
    pub replicas: usize,
    pub p: f64,
    /// Replicas dropped because a route failed.
    pub skipped: usize,
}

/// Shared-driver plan for [`estimate_law_distance`].
#[derive(Debug, Clone)]
pub struct CouplingPlan {
    /// Common start points of both routes.
    pub start_points: Vec<f64>,
    /// Base grid of the drivers; it must contain every time either route
    /// queries so the coupling stays exact.
    pub driver_grid: TimeGrid,
    pub drift: DriftSpec,
    /// Measures are taken at this time (a knot of both route grids).
    pub eval_time: f64,
    pub seed: u64,
    pub crossing_correction: bool,
}

/// Averages `W_p` between the measures produced by two routes on common
/// start points and common drivers, replica by replica. The couplings of the
/// convergence analysis are exactly of this form, so the estimate upper
/// bounds the law-level distance.
pub fn estimate_law_distance(
    route_a: &FlowRoute,
    route_b: &FlowRoute,
    plan: &CouplingPlan,
    p: f64,
    replicas: usize,
) -> Result<LawDistanceEstimate> {
    if replicas < 2 {
        return Err(Error::arg("need at least two replicas"));
    }
    for route in [route_a, route_b] {
        if let Some(d) = route.drift() {
            if *d != plan.drift {
                return Err(Error::arg("route drift differs from the coupling plan"));
            }
        }
    }
    let m = plan.start_points.len();
    let mut drivers: Vec<PathDriver> = (0..m)
        .map(|i| PathDriver::new(0, i as u64, plan.driver_grid.clone()))
        .collect();
    let mut samples = Vec::with_capacity(replicas);
    let mut skipped = 0usize;
    for r in 0..replicas {
        let seed = rng::replica_seed(plan.seed, r as u64);
        for (i, d) in drivers.iter_mut().enumerate() {
            d.reseed(seed, i as u64);
        }
        let aux = rng::mix(seed, 0xaaaa);
        let result = (|| -> Result<f64> {
            let pos_a = route_a.positions_at(
                &plan.start_points,
                &plan.drift,
                &mut drivers,
                aux,
                plan.crossing_correction,
                plan.eval_time,
            )?;
            let pos_b = route_b.positions_at(
                &plan.start_points,
                &plan.drift,
                &mut drivers,
                aux,
                plan.crossing_correction,
                plan.eval_time,
            )?;
            let mu = pushforward_uniform(&pos_a, m)?;
            let nu = pushforward_uniform(&pos_b, m)?;
            wasserstein(&mu, &nu, p)
        })();
        match result {
            Ok(v) => samples.push(v),
            Err(_) => skipped += 1,
        }
    }
    if samples.len() < 2 {
        return Err(Error::Internal("all coupling replicas failed".into()));
    }
    let (mean, se) = stats::mean_and_se(&samples)?;
    Ok(LawDistanceEstimate {
        point_estimate: mean,
        std_error: se,
        replicas: samples.len(),
        p,
        skipped,
    })
}

/// Minimum transport cost between equal-count, equal-mass atom lists by
/// exhaustive assignment. Test oracle for [`wasserstein`]; independent of the
/// quantile evaluator.
pub fn wasserstein_equal_mass_bruteforce(xs: &[f64], ys: &[f64], p: f64) -> Result<f64> {
    if xs.len() != ys.len() || xs.is_empty() || xs.len() > 8 {
        return Err(Error::arg("brute force handles equal small atom counts"));
    }
    if !(p >= 1.0) {
        return Err(Error::arg("order p must be >= 1"));
    }
    let n = xs.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    // Heap's algorithm over assignments.
    fn visit(xs: &[f64], ys: &[f64], perm: &mut Vec<usize>, k: usize, p: f64, best: &mut f64) {
        if k == 1 {
            let cost: f64 = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| (xs[i] - ys[j]).abs().powf(p))
                .sum::<f64>()
                / xs.len() as f64;
            if cost < *best {
                *best = cost;
            }
            return;
        }
        for i in 0..k {
            visit(xs, ys, perm, k - 1, p, best);
            if k % 2 == 0 {
                perm.swap(i, k - 1);
            } else {
                perm.swap(0, k - 1);
            }
        }
    }
    visit(xs, ys, &mut perm, n, p, &mut best);
    Ok(best.powf(1.0 / p))
}
