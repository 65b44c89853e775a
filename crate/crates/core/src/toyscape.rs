//! A one-dimensional loss landscape with a genuinely flat plateau, plus a
//! separable 2-d extension and a gradient-descent tracer. Initialized beyond
//! the plateau, plain gradient descent walks downhill into the flat region
//! and stops there instead of reaching the global minimum at 0.

use serde::Serialize;
use std::io::Write;

/// Piecewise landscape, even in w: a cubic rise from f(0)=0 to f(a)=h, a
/// flat plateau of height h on [a, b], and a quadratic bowl beyond b.
/// C1 at both knots.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PlateauFunction {
    pub plateau_start: f64,
    pub plateau_end: f64,
    pub plateau_height: f64,
}

impl Default for PlateauFunction {
    fn default() -> Self {
        Self {
            plateau_start: 2.0,
            plateau_end: 3.0,
            plateau_height: 2.0,
        }
    }
}

/// Value and first two derivatives at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointEval {
    pub f: f64,
    pub df: f64,
    pub d2f: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TracePoint {
    pub w: f64,
    pub f: f64,
    pub df: f64,
}

impl PlateauFunction {
    pub fn new(plateau_start: f64, plateau_end: f64, plateau_height: f64) -> Self {
        assert!(
            plateau_start > 0.0 && plateau_end > plateau_start && plateau_height > 0.0,
            "need 0 < a < b and h > 0"
        );
        Self {
            plateau_start,
            plateau_end,
            plateau_height,
        }
    }

    /// Closed-form f, f', f'' with even extension f(-w) = f(w).
    /// With defaults: f(w) = w^2 (3 - w) / 2 on [0, 2], f = 2 on [2, 3],
    /// f = 2 + (w - 3)^2 beyond.
    pub fn eval(&self, w: f64) -> PointEval {
        let (a, b, h) = (self.plateau_start, self.plateau_end, self.plateau_height);
        let x = w.abs();
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        // Region edges absorb rounding: gradient descent from beyond b stalls
        // a few ulps outside the plateau, and the pieces agree to O(eps^2)
        // across a knot, so points this close are evaluated as plateau.
        let eps = 1e-9 * b.max(1.0);
        let (f, df, d2f) = if x < a - eps {
            // h * x^2 (3a - 2x) / a^3: matches 0 at 0 and h with zero slope at a.
            let a3 = a * a * a;
            (
                h * x * x * (3.0 * a - 2.0 * x) / a3,
                6.0 * h * x * (a - x) / a3,
                6.0 * h * (a - 2.0 * x) / a3,
            )
        } else if x <= b + eps {
            (h, 0.0, 0.0)
        } else {
            (h + (x - b) * (x - b), 2.0 * (x - b), 2.0)
        };
        PointEval {
            f,
            df: sign * df,
            d2f,
        }
    }

    /// Separable 2-d extension f2(w1, w2) = f(w1) + w2^2 / 2.
    /// Returns (value, gradient, Hessian rows).
    pub fn eval_2d(&self, w1: f64, w2: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let e = self.eval(w1);
        (
            e.f + 0.5 * w2 * w2,
            [e.df, w2],
            [[e.d2f, 0.0], [0.0, 1.0]],
        )
    }

    /// Plain gradient descent w <- w - eta * f'(w). The trajectory includes
    /// the start point, so its length is steps + 1.
    pub fn gd_trace(&self, start: f64, eta: f64, steps: usize) -> Vec<TracePoint> {
        assert!(eta > 0.0, "step size must be > 0");
        let mut w = start;
        let mut trace = Vec::with_capacity(steps + 1);
        for _ in 0..steps {
            let e = self.eval(w);
            trace.push(TracePoint {
                w,
                f: e.f,
                df: e.df,
            });
            w -= eta * e.df;
        }
        let e = self.eval(w);
        trace.push(TracePoint {
            w,
            f: e.f,
            df: e.df,
        });
        trace
    }

    /// Writes a `w1,w2,f` grid over [w1_range] x [w2_range] with n points
    /// per axis, for external plotting.
    pub fn write_mesh_csv(
        &self,
        w1_range: (f64, f64),
        w2_range: (f64, f64),
        n: usize,
        out: &mut dyn Write,
    ) -> std::io::Result<()> {
        assert!(n >= 2, "need at least a 2x2 grid");
        writeln!(out, "w1,w2,f")?;
        for i in 0..n {
            let w1 = w1_range.0 + (w1_range.1 - w1_range.0) * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let w2 = w2_range.0 + (w2_range.1 - w2_range.0) * j as f64 / (n - 1) as f64;
                let (f, _, _) = self.eval_2d(w1, w2);
                writeln!(out, "{w1:?},{w2:?},{f:?}")?;
            }
        }
        Ok(())
    }
}
