//! Adaptive Simpson quadrature used by the density evaluators.

use crate::error::{Error, Result};

/// Controls the nested quadratures of the density machinery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadSpec {
    /// Target absolute error of the full integral.
    pub abs_tol: f64,
    /// Maximum bisection depth per level.
    pub max_depth: u32,
}

impl Default for QuadSpec {
    fn default() -> Self {
        QuadSpec {
            abs_tol: 1e-8,
            max_depth: 40,
        }
    }
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

struct Adaptive<'f> {
    f: &'f dyn Fn(f64) -> f64,
    max_depth: u32,
    achieved: f64,
}

impl Adaptive<'_> {
    fn recurse(&mut self, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = (self.f)(lm);
        let frm = (self.f)(rm);
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let err = (left + right - whole) / 15.0;
        if depth >= self.max_depth || err.abs() <= tol {
            if depth >= self.max_depth {
                self.achieved += err.abs();
            }
            return left + right + err;
        }
        self.recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)
            + self.recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)
    }
}

/// Integrates `f` over `[a, b]` to absolute tolerance `spec.abs_tol`.
///
/// Fails with the achieved tolerance when the depth limit is hit before the
/// requested accuracy is met.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, spec: &QuadSpec) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::arg(format!("bad integration interval [{a}, {b}]")));
    }
    if spec.abs_tol <= 0.0 {
        return Err(Error::arg("quadrature tolerance must be positive"));
    }
    let fa = f(a);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let fb = f(b);
    let whole = simpson(fa, fm, fb, b - a);
    let mut state = Adaptive {
        f: &f,
        max_depth: spec.max_depth,
        achieved: 0.0,
    };
    let value = state.recurse(a, b, fa, fm, fb, whole, spec.abs_tol, 0);
    if state.achieved > spec.abs_tol {
        return Err(Error::QuadratureNoConvergence {
            requested: spec.abs_tol,
            achieved: state.achieved,
        });
    }
    if !value.is_finite() {
        return Err(Error::Internal("non-finite quadrature value".into()));
    }
    Ok(value)
}

/// Adaptive Simpson seeded with `panels` equal panels. Plain adaptive
/// quadrature can report a narrow bump inside a wide window as zero when the
/// initial stencil misses it entirely; seeding forces a minimum resolution.
pub fn adaptive_simpson_panels(
    f: impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    panels: usize,
    spec: &QuadSpec,
) -> Result<f64> {
    if panels == 0 {
        return Err(Error::arg("need at least one panel"));
    }
    let panel_spec = QuadSpec {
        abs_tol: spec.abs_tol / panels as f64,
        max_depth: spec.max_depth,
    };
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for i in 0..panels {
        let lo = a + h * i as f64;
        let hi = if i + 1 == panels { b } else { a + h * (i + 1) as f64 };
        total += adaptive_simpson(&f, lo, hi, &panel_spec)?;
    }
    Ok(total)
}
