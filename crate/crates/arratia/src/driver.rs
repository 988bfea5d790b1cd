//! Seedable Brownian path drivers.
//!
//! A [`PathDriver`] hands out increments of one standard Brownian motion on
//! `[0, 1]`. Values at the knots of its base grid are sampled forward on
//! demand; any other time is filled in by conditional (bridge) sampling
//! against the nearest cached neighbours. Because every draw is keyed by
//! `(seed, particle, time)`, a fixed query sequence reproduces bit-identical
//! paths, which is what makes the couplings between different schemes and
//! refinement levels exact.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// An ascending partition of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    knots: Vec<f64>,
}

impl TimeGrid {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::arg("grid needs at least two knots"));
        }
        if knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(Error::arg("grid must span [0, 1]"));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) || knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::arg("grid knots must be finite and strictly ascending"));
        }
        Ok(TimeGrid { knots })
    }

    /// `cells` equal cells: knots `j / cells`.
    pub fn uniform(cells: usize) -> Self {
        assert!(cells >= 1);
        let knots = (0..=cells).map(|j| j as f64 / cells as f64).collect();
        TimeGrid { knots }
    }

    /// A geometric ramp of cells from `first_cell` doubling up to the uniform
    /// cell size `1 / cells`, then uniform. Resolves the very fast initial
    /// coalescence of densely packed start points without paying for a fine
    /// grid on all of `[0, 1]`.
    pub fn ramped_uniform(first_cell: f64, cells: usize) -> Result<Self> {
        if !(first_cell > 0.0) || cells < 1 || first_cell >= 1.0 / cells as f64 {
            return Err(Error::arg("ramp cell must be positive and below the uniform cell"));
        }
        let uniform_cell = 1.0 / cells as f64;
        let mut knots = vec![0.0];
        let mut t = first_cell;
        while t < uniform_cell {
            knots.push(t);
            t *= 2.0;
        }
        for j in 1..=cells {
            knots.push(j as f64 / cells as f64);
        }
        TimeGrid::new(knots)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn cells(&self) -> usize {
        self.knots.len() - 1
    }

    /// Largest cell width.
    pub fn mesh(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    /// True when every knot of `coarser` is a knot of `self` (exact equality;
    /// partitions are expected to be built from the same rationals).
    pub fn refines(&self, coarser: &TimeGrid) -> bool {
        coarser
            .knots
            .iter()
            .all(|k| self.knots.binary_search_by(|c| c.partial_cmp(k).unwrap()).is_ok())
    }

    pub fn knot_index(&self, t: f64) -> Option<usize> {
        self.knots
            .binary_search_by(|c| c.partial_cmp(&t).unwrap())
            .ok()
    }
}

/// One seeded Brownian path with a dyadic-style value cache.
///
/// Distinct `(seed, particle)` pairs are independent paths. A driver is
/// single-writer: queries may extend the cache, so shared use across threads
/// requires one driver per thread.
#[derive(Debug, Clone)]
pub struct PathDriver {
    seed: u64,
    particle: u64,
    grid: TimeGrid,
    /// Path values at `grid.knots()[..frontier]`.
    base: Vec<f64>,
    frontier: usize,
    /// Off-grid values inserted by bridge sampling, keyed by time bits.
    extra: BTreeMap<u64, f64>,
}

impl PathDriver {
    pub fn new(seed: u64, particle: u64, grid: TimeGrid) -> Self {
        let mut base = Vec::with_capacity(grid.knots().len());
        base.push(0.0);
        PathDriver {
            seed,
            particle,
            grid,
            base,
            frontier: 1,
            extra: BTreeMap::new(),
        }
    }

    /// Rebinds the driver to a fresh path, keeping allocations.
    pub fn reseed(&mut self, seed: u64, particle: u64) {
        self.seed = seed;
        self.particle = particle;
        self.base.clear();
        self.base.push(0.0);
        self.frontier = 1;
        self.extra.clear();
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn particle(&self) -> u64 {
        self.particle
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    fn extend_frontier(&mut self, upto: usize) {
        let knots = self.grid.knots();
        while self.frontier <= upto {
            let k = self.frontier;
            let dt = knots[k] - knots[k - 1];
            let z = rng::forward_normal(self.seed, self.particle, knots[k].to_bits());
            let w = self.base[k - 1] + dt.sqrt() * z;
            self.base.push(w);
            self.frontier += 1;
        }
    }

    /// Nearest cached time-value pair at or left of `t` within `(lo, t]`.
    fn left_neighbour(&self, lo_bits: u64, t_bits: u64, lo_val: f64) -> (u64, f64) {
        match self
            .extra
            .range((std::ops::Bound::Excluded(lo_bits), std::ops::Bound::Excluded(t_bits)))
            .next_back()
        {
            Some((&k, &v)) => (k, v),
            None => (lo_bits, lo_val),
        }
    }

    fn right_neighbour(&self, t_bits: u64, hi_bits: u64, hi_val: f64) -> (u64, f64) {
        match self
            .extra
            .range((std::ops::Bound::Excluded(t_bits), std::ops::Bound::Excluded(hi_bits)))
            .next()
        {
            Some((&k, &v)) => (k, v),
            None => (hi_bits, hi_val),
        }
    }

    /// Path value `w(t) - w(0)`. Samples lazily; previously returned values
    /// are never changed by later queries.
    pub fn value_at(&mut self, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::arg(format!("time {t} outside [0, 1]")));
        }
        let knots = self.grid.knots();
        match knots.binary_search_by(|c| c.partial_cmp(&t).unwrap()) {
            Ok(i) => {
                self.extend_frontier(i);
                Ok(self.base[i])
            }
            Err(pos) => {
                // pos >= 1 because knots[0] == 0.0 <= t.
                if let Some(&v) = self.extra.get(&t.to_bits()) {
                    return Ok(v);
                }
                let left_knot_bits = knots[pos - 1].to_bits();
                let right_knot_bits = knots[pos].to_bits();
                self.extend_frontier(pos);
                let (lb, lv) = self.left_neighbour(left_knot_bits, t.to_bits(), self.base[pos - 1]);
                let (rb, rv) = self.right_neighbour(t.to_bits(), right_knot_bits, self.base[pos]);
                let l = f64::from_bits(lb);
                let r = f64::from_bits(rb);
                let frac = (t - l) / (r - l);
                let mean = lv + frac * (rv - lv);
                let var = (t - l) * (r - t) / (r - l);
                let z = rng::bridge_normal(self.seed, self.particle, t.to_bits());
                let w = mean + var.sqrt() * z;
                self.extra.insert(t.to_bits(), w);
                Ok(w)
            }
        }
    }

    /// Increment `w(t) - w(s)` over a non-empty interval.
    pub fn increment(&mut self, s: f64, t: f64) -> Result<f64> {
        if !(s < t) {
            return Err(Error::arg(format!("increment needs s < t, got ({s}, {t})")));
        }
        let ws = self.value_at(s)?;
        let wt = self.value_at(t)?;
        Ok(wt - ws)
    }

    /// Conditional refinement onto a finer base grid. All previously sampled
    /// values are preserved bit-exactly; new interior knots are filled by
    /// bridge sampling.
    pub fn refine(&self, grid: &TimeGrid) -> Result<PathDriver> {
        if !grid.refines(&self.grid) {
            return Err(Error::NotARefinement(format!(
                "driver grid has {} knots not contained in the new grid",
                self.grid.knots().len()
            )));
        }
        let mut scratch = self.clone();
        let mut base = Vec::with_capacity(grid.knots().len());
        for &k in grid.knots() {
            base.push(scratch.value_at(k)?);
        }
        let mut extra = BTreeMap::new();
        for (&bits, &v) in &scratch.extra {
            if grid.knot_index(f64::from_bits(bits)).is_none() {
                extra.insert(bits, v);
            }
        }
        Ok(PathDriver {
            seed: self.seed,
            particle: self.particle,
            grid: grid.clone(),
            frontier: base.len(),
            base,
            extra,
        })
    }
}
