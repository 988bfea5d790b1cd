//! The n-point motion of a coalescing Brownian flow.
//!
//! Particles advance by drift plus their driver's Brownian increment and merge
//! on contact; after a merge the cluster follows the driver of its member with
//! the lowest start index, and the merge is appended to the event log with the
//! absorbing particle's rank among the survivors present at that moment, which
//! is what the scheme recursion needs.

use serde::{Deserialize, Serialize};

use crate::driver::{PathDriver, TimeGrid};
use crate::error::{Error, Result};
use crate::rng;
use crate::schemes::CoalescenceScheme;
use crate::stats;

/// Bounded Lipschitz drift fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DriftSpec {
    Zero,
    Constant(f64),
    /// `clamp(slope * x + intercept, -bound, bound)`.
    AffineClamped { slope: f64, intercept: f64, bound: f64 },
    /// Piecewise-linear interpolation between `(xs, ys)` samples, constant
    /// beyond the ends.
    Tabulated { xs: Vec<f64>, ys: Vec<f64> },
}

impl DriftSpec {
    pub fn affine_clamped(slope: f64, intercept: f64, bound: f64) -> Result<Self> {
        if !(bound > 0.0) || !slope.is_finite() || !intercept.is_finite() {
            return Err(Error::arg("affine drift needs finite coefficients and bound > 0"));
        }
        Ok(DriftSpec::AffineClamped { slope, intercept, bound })
    }

    pub fn tabulated(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::arg("tabulated drift needs matching xs/ys of length >= 2"));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("tabulated drift abscissae must be strictly ascending"));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::arg("tabulated drift values must be finite"));
        }
        Ok(DriftSpec::Tabulated { xs, ys })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            DriftSpec::Zero => 0.0,
            DriftSpec::Constant(c) => *c,
            DriftSpec::AffineClamped { slope, intercept, bound } => {
                (slope * x + intercept).clamp(-bound, *bound)
            }
            DriftSpec::Tabulated { xs, ys } => {
                if x <= xs[0] {
                    return ys[0];
                }
                if x >= *xs.last().unwrap() {
                    return *ys.last().unwrap();
                }
                let i = xs.partition_point(|&v| v <= x);
                let (x0, x1) = (xs[i - 1], xs[i]);
                let (y0, y1) = (ys[i - 1], ys[i]);
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// A valid Lipschitz constant of the represented function.
    pub fn lipschitz_bound(&self) -> f64 {
        match self {
            DriftSpec::Zero | DriftSpec::Constant(_) => 0.0,
            DriftSpec::AffineClamped { slope, .. } => slope.abs(),
            DriftSpec::Tabulated { xs, ys } => xs
                .windows(2)
                .zip(ys.windows(2))
                .map(|(xw, yw)| ((yw[1] - yw[0]) / (xw[1] - xw[0])).abs())
                .fold(0.0, f64::max),
        }
    }

    /// A valid sup bound of the represented function.
    pub fn sup_bound(&self) -> f64 {
        match self {
            DriftSpec::Zero => 0.0,
            DriftSpec::Constant(c) => c.abs(),
            DriftSpec::AffineClamped { bound, .. } => *bound,
            DriftSpec::Tabulated { ys, .. } => ys.iter().fold(0.0f64, |m, y| m.max(y.abs())),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, DriftSpec::Zero)
    }
}

/// One recorded merge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeEvent {
    pub time: f64,
    /// 1-based rank of the absorbing (lower start) particle among the
    /// survivors present just before this merge.
    pub survivor_index: usize,
    /// True when the merge was forced by an order violation of the drift ODE
    /// step rather than by the coalescing web.
    pub numerical: bool,
}

/// Ordered coalescing particle state.
///
/// Single-threaded by design; independent replicas use distinct instances.
#[derive(Debug, Clone)]
pub struct ParticleSystem {
    starts: Vec<f64>,
    /// Authoritative position per cluster representative.
    positions: Vec<f64>,
    /// Union-find forest over original indices; roots are representatives.
    parent: Vec<usize>,
    events: Vec<MergeEvent>,
    clock: f64,
    substep_count: u64,
    crossing_correction: bool,
    aux_seed: u64,
    /// Scratch list of survivors, maintained across steps.
    alive: Vec<usize>,
    /// Scratch snapshot of positions at the start of the current substep.
    pre_positions: Vec<f64>,
}

impl ParticleSystem {
    /// `aux_seed` feeds the crossing-correction coin flips; it should be
    /// distinct from the driver seeds.
    pub fn new(starts: &[f64], aux_seed: u64, crossing_correction: bool) -> Result<Self> {
        if starts.is_empty() {
            return Err(Error::arg("need at least one start point"));
        }
        if starts.windows(2).any(|w| !(w[0] < w[1])) || starts.iter().any(|u| !u.is_finite()) {
            return Err(Error::arg("start points must be finite and strictly ascending"));
        }
        Ok(ParticleSystem {
            starts: starts.to_vec(),
            positions: starts.to_vec(),
            parent: (0..starts.len()).collect(),
            events: Vec::new(),
            clock: 0.0,
            substep_count: 0,
            crossing_correction,
            aux_seed,
            alive: (0..starts.len()).collect(),
            pre_positions: starts.to_vec(),
        })
    }

    /// Resets to the start configuration, keeping allocations.
    pub fn reset(&mut self, aux_seed: u64) {
        self.positions.copy_from_slice(&self.starts);
        for (i, p) in self.parent.iter_mut().enumerate() {
            *p = i;
        }
        self.events.clear();
        self.clock = 0.0;
        self.substep_count = 0;
        self.aux_seed = aux_seed;
        self.alive.clear();
        self.alive.extend(0..self.starts.len());
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn starts(&self) -> &[f64] {
        &self.starts
    }

    pub fn events(&self) -> &[MergeEvent] {
        &self.events
    }

    pub fn cluster_count(&self) -> usize {
        self.alive.len()
    }

    pub fn numerical_merges(&self) -> usize {
        self.events.iter().filter(|e| e.numerical).count()
    }

    /// Representative (lowest start index) of particle `i`'s cluster.
    pub fn representative(&self, i: usize) -> usize {
        let mut r = i;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        r
    }

    /// Current position of particle `i` (identical for merged particles).
    pub fn position(&self, i: usize) -> f64 {
        self.positions[self.representative(i)]
    }

    /// Positions of all original particles in start order.
    pub fn all_positions(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.position(i)).collect()
    }

    /// Sorted representatives of the surviving clusters.
    pub fn survivors(&self) -> &[usize] {
        &self.alive
    }

    /// Distinct positions of the clusters owning the given original indices.
    /// With a subset of `0..len()` this realizes the restriction of the flow
    /// to a coarser start set on the same realized web.
    pub fn distinct_positions(&self, subset: &[usize]) -> Vec<f64> {
        let mut reps: Vec<usize> = subset.iter().map(|&i| self.representative(i)).collect();
        reps.sort_unstable();
        reps.dedup();
        reps.iter().map(|&r| self.positions[r]).collect()
    }

    /// Scheme built from the event log.
    pub fn scheme(&self) -> CoalescenceScheme {
        let indices: Vec<usize> = self.events.iter().map(|e| e.survivor_index).collect();
        CoalescenceScheme::new(self.len(), indices)
            .expect("event log violates scheme index ranges")
    }

    fn merge_at(&mut self, rank_of_left: usize, time: f64, numerical: bool) {
        let left = self.alive[rank_of_left];
        let right = self.alive[rank_of_left + 1];
        self.parent[right] = left;
        self.alive.remove(rank_of_left + 1);
        self.events.push(MergeEvent {
            time,
            survivor_index: rank_of_left + 1,
            numerical,
        });
    }

    /// Merges every adjacent survivor pair whose order is violated or
    /// equalized, left to right, logging events at `time`.
    fn enforce_order(&mut self, time: f64, numerical: bool) {
        let mut k = 0;
        while k + 1 < self.alive.len() {
            if self.positions[self.alive[k + 1]] <= self.positions[self.alive[k]] {
                self.merge_at(k, time, numerical);
            } else {
                k += 1;
            }
        }
    }

    /// Advances all clusters to `target`, merging on contact. The optional
    /// Brownian-bridge crossing correction merges a still-ordered adjacent
    /// pair with probability `exp(-2ab / (2 dt))`, the conditional chance
    /// that the driftless gap bridged zero inside the substep; without it the
    /// endpoint check misses crossings at rate O(sqrt(dt)).
    fn step_to(
        &mut self,
        target: f64,
        drivers: &mut [PathDriver],
        drift: &DriftSpec,
    ) -> Result<()> {
        let dt = target - self.clock;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::arg(format!(
                "step must move the clock forward: {} -> {target}",
                self.clock
            )));
        }
        if target > 1.0 + 1e-12 {
            return Err(Error::arg(format!("step past the horizon: {target}")));
        }
        if drivers.len() != self.len() {
            return Err(Error::arg("need one driver per original particle"));
        }

        let apply_crossing = self.crossing_correction && self.alive.len() > 1;
        if apply_crossing {
            self.pre_positions.copy_from_slice(&self.positions);
        }

        for idx in 0..self.alive.len() {
            let rep = self.alive[idx];
            let pos = self.positions[rep];
            let advance = match drift {
                DriftSpec::Zero => 0.0,
                DriftSpec::Constant(c) => c * dt,
                other => other.eval(pos) * dt,
            };
            let noise = drivers[rep].increment(self.clock, target)?;
            self.positions[rep] = pos + advance + noise;
        }

        self.enforce_order(target, false);

        if apply_crossing {
            let step_key = self.substep_count;
            let mut k = 0;
            while k + 1 < self.alive.len() {
                let left = self.alive[k];
                let right = self.alive[k + 1];
                // Both reps were survivors before the substep, so their
                // pre-step positions are authoritative and strictly ordered.
                let a = self.pre_positions[right] - self.pre_positions[left];
                let b = self.positions[right] - self.positions[left];
                let p = (-(a * b) / dt).exp();
                let u = rng::crossing_uniform(self.aux_seed, left as u64, step_key);
                if u < p {
                    self.merge_at(k, target, false);
                } else {
                    k += 1;
                }
            }
        }

        self.clock = target;
        self.substep_count += 1;
        Ok(())
    }

    /// One substep of length `dt`.
    pub fn step(&mut self, dt: f64, drivers: &mut [PathDriver], drift: &DriftSpec) -> Result<()> {
        self.step_to(self.clock + dt, drivers, drift)
    }

    /// One substep to an explicit target time, avoiding clock drift from
    /// accumulated `dt` additions.
    pub fn step_to_time(
        &mut self,
        target: f64,
        drivers: &mut [PathDriver],
        drift: &DriftSpec,
    ) -> Result<()> {
        self.step_to(target, drivers, drift)
    }

    /// Applies a monotone map to every surviving cluster position without
    /// advancing the clock (the drift half of a split step).
    pub fn apply_to_survivors(&mut self, f: impl Fn(f64) -> Result<f64>) -> Result<()> {
        for idx in 0..self.alive.len() {
            let rep = self.alive[idx];
            self.positions[rep] = f(self.positions[rep])?;
        }
        Ok(())
    }

    /// Merges any order violations introduced outside the web integrator,
    /// logging them as numerical events at `time`.
    pub fn log_order_violations_as_numerical(&mut self, time: f64) {
        self.enforce_order(time, true);
    }

    /// Runs over `grid`, each cell split into `substeps` equal substeps, and
    /// returns the coalescence scheme of the completed run. Stops at the
    /// terminal knot (time 1); state at 1 is the left limit, merges landing
    /// exactly at 1 are logged.
    pub fn run(
        &mut self,
        grid: &TimeGrid,
        substeps: usize,
        drivers: &mut [PathDriver],
        drift: &DriftSpec,
    ) -> Result<CoalescenceScheme> {
        self.run_until(grid, substeps, drivers, drift, 1.0)
    }

    /// As [`run`](Self::run) but stops at knot `t` of `grid`.
    pub fn run_until(
        &mut self,
        grid: &TimeGrid,
        substeps: usize,
        drivers: &mut [PathDriver],
        drift: &DriftSpec,
        t: f64,
    ) -> Result<CoalescenceScheme> {
        if substeps < 1 {
            return Err(Error::arg("substeps must be at least 1"));
        }
        if grid.knot_index(t).is_none() {
            return Err(Error::arg(format!("stop time {t} is not a grid knot")));
        }
        let knots = grid.knots();
        for w in knots.windows(2) {
            if w[0] >= t {
                break;
            }
            let (a, b) = (w[0], w[1]);
            let width = b - a;
            for s in 1..=substeps {
                // Exact when the grid and substep counts are dyadic, which is
                // what keeps coupled runs on shared drivers aligned.
                let target = if s == substeps {
                    b
                } else {
                    a + width * (s as f64 / substeps as f64)
                };
                self.step_to(target, drivers, drift)?;
            }
        }
        Ok(self.scheme())
    }
}

/// Two-point coalescence probability by the reflection principle: the gap of
/// two independent unit Brownian motions is a Brownian motion of variance
/// `2t`, so `P(meet by t) = 2 (1 - Phi(d / sqrt(2 t)))`.
pub fn coalescence_prob_oracle(d: f64, t: f64) -> Result<f64> {
    if !(d > 0.0) || !(t > 0.0) {
        return Err(Error::arg("oracle needs d > 0 and t > 0"));
    }
    Ok(stats::two_sided_tail(d / (2.0 * t).sqrt()))
}
