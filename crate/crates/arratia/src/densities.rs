//! Collision densities of the driftless n-point motion.
//!
//! Analytic side: the Gaussian kernel, the determinant density of ordered
//! Brownian particles killed on first collision, and the two-particle
//! specialization of the boundary-integral formula for the density after one
//! merge. Monte Carlo side: histogram estimators of the k-point densities,
//! optionally resolved by coalescence scheme, and pathwise-coupled refinement
//! gaps between nested start grids.

use serde::{Deserialize, Serialize};

use crate::driver::{PathDriver, TimeGrid};
use crate::error::{Error, Result};
use crate::flow::{DriftSpec, ParticleSystem};
use crate::quad::{adaptive_simpson_panels, QuadSpec};
use crate::rng;
use crate::schemes::CoalescenceScheme;

/// Heat kernel `g_t(a) = exp(-a^2 / 2t) / sqrt(2 pi t)`.
pub fn gauss_kernel(a: f64, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::arg(format!("gauss kernel needs t > 0, got {t}")));
    }
    Ok((-a * a / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt())
}

fn gauss(a: f64, t: f64) -> f64 {
    (-a * a / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t).sqrt()
}

/// Determinant `det || g_t(x_i - y_j) ||` without ordering checks. The 2x2
/// case expands in a fixed order so the antisymmetry and vanishing-diagonal
/// identities hold exactly in floating point.
pub fn km_determinant(x: &[f64], y: &[f64], t: f64) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::arg("determinant needs matching non-empty points"));
    }
    if !(t > 0.0) {
        return Err(Error::arg("determinant needs t > 0"));
    }
    let m = x.len();
    Ok(match m {
        1 => gauss(x[0] - y[0], t),
        2 => {
            gauss(x[0] - y[0], t) * gauss(x[1] - y[1], t)
                - gauss(x[0] - y[1], t) * gauss(x[1] - y[0], t)
        }
        _ => {
            let mut a: Vec<f64> = Vec::with_capacity(m * m);
            for i in 0..m {
                for j in 0..m {
                    a.push(gauss(x[i] - y[j], t));
                }
            }
            det_lu(&mut a, m)
        }
    })
}

/// Determinant by LU with partial pivoting; consumes the buffer.
fn det_lu(a: &mut [f64], m: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..m {
        let mut pivot = col;
        for row in col + 1..m {
            if a[row * m + col].abs() > a[pivot * m + col].abs() {
                pivot = row;
            }
        }
        if a[pivot * m + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..m {
                a.swap(col * m + j, pivot * m + j);
            }
            det = -det;
        }
        let d = a[col * m + col];
        det *= d;
        for row in col + 1..m {
            let f = a[row * m + col] / d;
            for j in col..m {
                a[row * m + j] -= f * a[col * m + j];
            }
        }
    }
    det
}

/// Transition density of `m` ordered Brownian particles killed on first
/// collision, evaluated at strictly ordered `x`, `y`.
pub fn km_density(x: &[f64], y: &[f64], t: f64) -> Result<f64> {
    if x.windows(2).any(|w| !(w[0] < w[1])) || y.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::arg("chamber points must be strictly ascending"));
    }
    km_determinant(x, y, t)
}

/// The determinant kernel at a fixed dimension and time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmKernel {
    pub dim: usize,
    pub t: f64,
}

impl KmKernel {
    pub fn new(dim: usize, t: f64) -> Result<Self> {
        if dim < 1 {
            return Err(Error::arg("kernel dimension must be at least 1"));
        }
        if !(t > 0.0) {
            return Err(Error::arg("kernel time must be positive"));
        }
        Ok(KmKernel { dim, t })
    }

    pub fn density(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim || y.len() != self.dim {
            return Err(Error::arg(format!("kernel dimension is {}", self.dim)));
        }
        km_density(x, y, self.t)
    }
}

/// Density of a still-free pair: no collision means the killed-motion
/// determinant is the density itself.
pub fn pair_density_free(x: (f64, f64), y: (f64, f64), t: f64) -> Result<f64> {
    km_density(&[x.0, x.1], &[y.0, y.1], t)
}

/// Outward normal derivative of the two-particle killed density with respect
/// to the second argument, on the collision diagonal `z = (z*, z*)`, computed
/// from the determinant in closed form:
/// `-sqrt(2) (x2 - x1) / s * g_s(x1 - z*) g_s(x2 - z*)`.
pub fn pair_normal_derivative_on_diagonal(x: (f64, f64), z: f64, s: f64) -> Result<f64> {
    if !(x.0 < x.1) {
        return Err(Error::arg("start pair must be strictly ordered"));
    }
    if !(s > 0.0) {
        return Err(Error::arg("time must be positive"));
    }
    let d = x.1 - x.0;
    Ok(-std::f64::consts::SQRT_2 * d / s * gauss(x.0 - z, s) * gauss(x.1 - z, s))
}

/// Density at `y` of the merged location of a pair started at `x`, given one
/// collision happened by time `t`: the single boundary integral
/// `int_0^t dt1 int m(dz) (-1/2) dnu p2(x, z) g_{t-t1}(z - y)` with the
/// surface measure `sqrt(2) dz*` on the diagonal, both integrals adaptive.
/// Integrates to the coalescence probability over `y`.
pub fn pair_density_merged(x: (f64, f64), y: f64, t: f64, quad: &QuadSpec) -> Result<f64> {
    if !(x.0 < x.1) {
        return Err(Error::arg("start pair must be strictly ordered"));
    }
    if !(t > 0.0) {
        return Err(Error::arg("time must be positive"));
    }
    let (x1, x2) = x;
    let d = x2 - x1;
    let inner_spec = QuadSpec {
        abs_tol: quad.abs_tol * 0.1,
        max_depth: quad.max_depth,
    };
    let inner_failure: std::cell::Cell<Option<f64>> = std::cell::Cell::new(None);
    let outer = |s: f64| -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        if s >= t {
            // Limit t1 -> t: the propagator collapses to a point mass at y.
            return std::f64::consts::SQRT_2
                * (-0.5)
                * pair_normal_derivative_on_diagonal(x, y, t).unwrap_or(0.0);
        }
        // The integrand is a product of Gaussians around the start pair
        // (width sqrt(s)) and around y (width sqrt(t - s)); only the overlap
        // of their supports contributes.
        let w1 = 12.0 * s.sqrt();
        let w2 = 12.0 * (t - s).sqrt();
        let lo = (x1 - w1).max(y - w2);
        let hi = (x2 + w1).min(y + w2);
        if !(lo < hi) {
            return 0.0;
        }
        let inner = |z: f64| -> f64 {
            std::f64::consts::SQRT_2
                * (-0.5)
                * (-std::f64::consts::SQRT_2 * d / s * gauss(x1 - z, s) * gauss(x2 - z, s))
                * gauss(z - y, t - s)
        };
        match adaptive_simpson_panels(inner, lo, hi, 8, &inner_spec) {
            Ok(v) => v,
            Err(Error::QuadratureNoConvergence { achieved, .. }) => {
                inner_failure.set(Some(achieved));
                0.0
            }
            Err(_) => {
                inner_failure.set(Some(f64::INFINITY));
                0.0
            }
        }
    };
    // The time integrand carries the first-passage weight of the gap, which
    // concentrates near d^2 / 2; panel seeding keeps it visible.
    let value = adaptive_simpson_panels(outer, 0.0, t, 16, quad)?;
    if let Some(achieved) = inner_failure.get() {
        return Err(Error::QuadratureNoConvergence {
            requested: inner_spec.abs_tol,
            achieved,
        });
    }
    if !(value >= -quad.abs_tol) {
        return Err(Error::Internal(format!(
            "merged-pair density came out negative: {value}"
        )));
    }
    Ok(value.max(0.0))
}

/// Total mass of [`pair_density_merged`] over a window of `y`, by quadrature.
pub fn merged_pair_total_mass(x: (f64, f64), t: f64, quad: &QuadSpec) -> Result<f64> {
    let centre = 0.5 * (x.0 + x.1);
    let w = 8.0 * t.sqrt() + (x.1 - x.0);
    let point_spec = QuadSpec {
        abs_tol: quad.abs_tol * 0.05,
        max_depth: quad.max_depth,
    };
    adaptive_simpson_panels(
        |y| pair_density_merged(x, y, t, &point_spec).unwrap_or(0.0),
        centre - w,
        centre + w,
        24,
        quad,
    )
}

/// Zero-drift web simulation plan shared by the Monte Carlo estimators.
#[derive(Debug, Clone)]
pub struct WebSimPlan {
    pub grid: TimeGrid,
    pub substeps: usize,
    pub seed: u64,
    pub crossing_correction: bool,
    /// Knot of `grid` at which observables are read.
    pub eval_time: f64,
}

impl WebSimPlan {
    /// Uniform grid with crossing correction, evaluated at the horizon.
    pub fn standard(cells: usize, seed: u64) -> Self {
        WebSimPlan {
            grid: TimeGrid::uniform(cells),
            substeps: 1,
            seed,
            crossing_correction: true,
            eval_time: 1.0,
        }
    }
}

/// Equal-width histogram window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramSpec {
    pub lo: f64,
    pub hi: f64,
    pub bins: usize,
}

impl HistogramSpec {
    pub fn edges(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins as f64;
        (0..=self.bins).map(|i| self.lo + w * i as f64).collect()
    }

    fn bin_of(&self, v: f64) -> Option<usize> {
        if v < self.lo || v >= self.hi {
            return None;
        }
        let w = (self.hi - self.lo) / self.bins as f64;
        Some(((v - self.lo) / w).min(self.bins as f64 - 1.0) as usize)
    }
}

/// Histogram estimate of a k-point density with normal-approximation
/// confidence half-widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub bin_edges: Vec<f64>,
    /// Density values, length `bins^k` (row-major for k = 2).
    pub values: Vec<f64>,
    /// 95% confidence half-widths per bin.
    pub half_widths: Vec<f64>,
    /// Raw tuple counts per bin.
    pub counts: Vec<u64>,
    pub k: usize,
    pub scheme_filter: Option<CoalescenceScheme>,
    /// Bins with fewer than 20 hits, where the normal CI is unreliable.
    pub low_confidence: Vec<bool>,
    pub replicas: usize,
}

impl DensityEstimate {
    pub fn bins(&self) -> usize {
        self.bin_edges.len() - 1
    }

    /// CSV rows `bin_left,bin_right,value,half_width` (order-1 histograms).
    pub fn to_csv(&self) -> Result<String> {
        if self.k != 1 {
            return Err(Error::arg("csv export is defined for k = 1 histograms"));
        }
        let mut out = String::from("bin_left,bin_right,value,half_width\n");
        for i in 0..self.bins() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.bin_edges[i],
                self.bin_edges[i + 1],
                self.values[i],
                self.half_widths[i]
            ));
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plain data serializes")
    }

    /// Integral of the estimate over its window.
    pub fn total_mass(&self) -> f64 {
        let w = (self.bin_edges[self.bins()] - self.bin_edges[0]) / self.bins() as f64;
        let vol = w.powi(self.k as i32);
        self.values.iter().sum::<f64>() * vol
    }
}

/// Monte Carlo estimate of the k-point density of the motion started from
/// `starts`, optionally restricted to one coalescence scheme. Each replica
/// contributes the ordered k-tuples of distinct terminal positions, so for
/// k = 2 both orders are counted and the histogram is symmetric.
pub fn estimate_scheme_density(
    starts: &[f64],
    k: usize,
    scheme_filter: Option<&CoalescenceScheme>,
    hist: &HistogramSpec,
    replicas: usize,
    plan: &WebSimPlan,
) -> Result<DensityEstimate> {
    let n = starts.len();
    if k == 0 || k > n {
        return Err(Error::arg(format!("tuple order k = {k} outside 1..={n}")));
    }
    if k > 2 {
        return Err(Error::arg(
            "histogram estimator implements k = 1 and k = 2; higher orders have no 1-d bin layout",
        ));
    }
    if let Some(f) = scheme_filter {
        if f.n() != n {
            return Err(Error::arg("scheme filter particle count mismatch"));
        }
        if k > f.clusters() {
            return Err(Error::arg(format!(
                "k = {k} exceeds the {} clusters implied by the scheme",
                f.clusters()
            )));
        }
    }
    if replicas < 100 {
        return Err(Error::arg("density estimation needs at least 100 replicas"));
    }
    if hist.bins == 0 || !(hist.lo < hist.hi) {
        return Err(Error::arg("empty histogram window"));
    }

    let cell_count = if k == 1 { hist.bins } else { hist.bins * hist.bins };
    let mut sums = vec![0.0f64; cell_count];
    let mut sqsums = vec![0.0f64; cell_count];
    let mut counts = vec![0u64; cell_count];
    let mut scratch = vec![0u32; cell_count];

    let mut sys = ParticleSystem::new(starts, 0, plan.crossing_correction)?;
    let mut drivers: Vec<PathDriver> = (0..n)
        .map(|i| PathDriver::new(0, i as u64, plan.grid.clone()))
        .collect();
    let all_indices: Vec<usize> = (0..n).collect();

    for r in 0..replicas {
        let seed = rng::replica_seed(plan.seed, r as u64);
        sys.reset(rng::mix(seed, 0xa0a0));
        for (i, d) in drivers.iter_mut().enumerate() {
            d.reseed(seed, i as u64);
        }
        let realized = sys.run_until(
            &plan.grid,
            plan.substeps,
            &mut drivers,
            &DriftSpec::Zero,
            plan.eval_time,
        )?;
        let keep = match scheme_filter {
            Some(f) => realized == *f,
            None => true,
        };
        for c in scratch.iter_mut() {
            *c = 0;
        }
        if keep {
            let atoms = sys.distinct_positions(&all_indices);
            if atoms.len() >= k {
                match k {
                    1 => {
                        for &a in &atoms {
                            if let Some(b) = hist.bin_of(a) {
                                scratch[b] += 1;
                            }
                        }
                    }
                    _ => {
                        for (i, &a) in atoms.iter().enumerate() {
                            for (j, &b) in atoms.iter().enumerate() {
                                if i == j {
                                    continue;
                                }
                                if let (Some(ba), Some(bb)) = (hist.bin_of(a), hist.bin_of(b)) {
                                    scratch[ba * hist.bins + bb] += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        for (cell, &c) in scratch.iter().enumerate() {
            let cf = c as f64;
            sums[cell] += cf;
            sqsums[cell] += cf * cf;
            counts[cell] += c as u64;
        }
    }

    let nf = replicas as f64;
    let width = (hist.hi - hist.lo) / hist.bins as f64;
    let vol = width.powi(k as i32);
    let mut values = Vec::with_capacity(cell_count);
    let mut half_widths = Vec::with_capacity(cell_count);
    let mut low_confidence = Vec::with_capacity(cell_count);
    for cell in 0..cell_count {
        let mean = sums[cell] / nf;
        let var = ((sqsums[cell] - sums[cell] * mean) / (nf - 1.0)).max(0.0);
        values.push(mean / vol);
        half_widths.push(1.96 * (var / nf).sqrt() / vol);
        low_confidence.push(counts[cell] < 20);
    }
    Ok(DensityEstimate {
        bin_edges: hist.edges(),
        values,
        half_widths,
        counts,
        k,
        scheme_filter: scheme_filter.cloned(),
        low_confidence,
        replicas,
    })
}

/// Pathwise-coupled estimate of `E #atoms(reference) - E #atoms(level)` in
/// `interval`, per level, all levels projected from one simulation of the
/// finest start set. The difference is non-negative in every replica because
/// a restriction of the realized web can only lose atoms.
pub fn refinement_gaps_multilevel(
    levels: &[Vec<f64>],
    reference: &[f64],
    interval: (f64, f64),
    replicas: usize,
    plan: &WebSimPlan,
) -> Result<Vec<(f64, f64)>> {
    if replicas < 2 {
        return Err(Error::arg("need at least two replicas"));
    }
    if !(interval.0 < interval.1) {
        return Err(Error::arg("empty target interval"));
    }
    let index_of = |u: f64| -> Result<usize> {
        reference
            .binary_search_by(|v| v.partial_cmp(&u).unwrap())
            .map_err(|_| Error::arg(format!("start point {u} missing from the reference grid")))
    };
    let mut level_indices: Vec<Vec<usize>> = Vec::with_capacity(levels.len());
    for level in levels {
        if level.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("level start points must be strictly ascending"));
        }
        level_indices.push(level.iter().map(|&u| index_of(u)).collect::<Result<_>>()?);
    }
    let n = reference.len();
    let all: Vec<usize> = (0..n).collect();

    let mut sums = vec![0.0f64; levels.len()];
    let mut sqs = vec![0.0f64; levels.len()];
    let mut sys = ParticleSystem::new(reference, 0, plan.crossing_correction)?;
    let mut drivers: Vec<PathDriver> = (0..n)
        .map(|i| PathDriver::new(0, i as u64, plan.grid.clone()))
        .collect();

    let count_in = |positions: &[f64]| -> usize {
        positions
            .iter()
            .filter(|&&p| p >= interval.0 && p <= interval.1)
            .count()
    };

    for r in 0..replicas {
        let seed = rng::replica_seed(plan.seed, r as u64);
        sys.reset(rng::mix(seed, 0xb1b1));
        for (i, d) in drivers.iter_mut().enumerate() {
            d.reseed(seed, i as u64);
        }
        sys.run_until(
            &plan.grid,
            plan.substeps,
            &mut drivers,
            &DriftSpec::Zero,
            plan.eval_time,
        )?;
        let ref_count = count_in(&sys.distinct_positions(&all));
        for (l, idx) in level_indices.iter().enumerate() {
            let level_count = count_in(&sys.distinct_positions(idx));
            let gap = ref_count as f64 - level_count as f64;
            debug_assert!(gap >= 0.0, "projection can only lose atoms");
            sums[l] += gap;
            sqs[l] += gap * gap;
        }
    }
    let nf = replicas as f64;
    Ok((0..levels.len())
        .map(|l| {
            let mean = sums[l] / nf;
            let var = ((sqs[l] - sums[l] * mean) / (nf - 1.0)).max(0.0);
            (mean, (var / nf).sqrt())
        })
        .collect())
}

/// Two-level refinement gap: coarse start set against a finer one containing
/// it, on one shared web.
pub fn refinement_gap(
    u_coarse: &[f64],
    u_fine: &[f64],
    interval: (f64, f64),
    replicas: usize,
    plan: &WebSimPlan,
) -> Result<(f64, f64)> {
    let gaps = refinement_gaps_multilevel(
        std::slice::from_ref(&u_coarse.to_vec()),
        u_fine,
        interval,
        replicas,
        plan,
    )?;
    Ok(gaps[0])
}
