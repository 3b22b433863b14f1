//! Separable convex minimization over a box with chain spacing constraints:
//! the PA placement subproblem after surrogate construction. Each coordinate
//! carries a smooth convex 1-D term (cubic with nonnegative leading
//! coefficient plus square-root distance terms); coordinates couple only
//! through x_{n+1} − x_n ≥ Δ, so the barrier Newton system is tridiagonal.

use crate::error::{Error, Result};
use crate::kernel::linalg::tridiag_solve;

/// coef·√((x − center)² + offset_sq) with coef ≥ 0 (convex).
#[derive(Debug, Clone, Copy)]
pub struct SqrtTerm {
    pub coef: f64,
    pub center: f64,
    pub offset_sq: f64,
}

/// Smooth convex 1-D objective piece:
/// c₃x³ + c₂x² + c₁x + c₀ + Σ sqrt terms, with c₃ ≥ 0, c₂ ≥ 0 on x ≥ 0.
#[derive(Debug, Clone, Default)]
pub struct Term1D {
    pub c3: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
    pub sqrts: Vec<SqrtTerm>,
}

impl Term1D {
    pub fn eval(&self, x: f64) -> f64 {
        let mut v = ((self.c3 * x + self.c2) * x + self.c1) * x + self.c0;
        for s in &self.sqrts {
            let dx = x - s.center;
            v += s.coef * (dx * dx + s.offset_sq).sqrt();
        }
        v
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let mut v = (3.0 * self.c3 * x + 2.0 * self.c2) * x + self.c1;
        for s in &self.sqrts {
            let dx = x - s.center;
            v += s.coef * dx / (dx * dx + s.offset_sq).sqrt();
        }
        v
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        let mut v = 6.0 * self.c3 * x + 2.0 * self.c2;
        for s in &self.sqrts {
            let dx = x - s.center;
            let r2 = dx * dx + s.offset_sq;
            v += s.coef * s.offset_sq / (r2 * r2.sqrt());
        }
        v
    }

    fn is_convex_piece(&self) -> bool {
        self.c3 >= -1e-12 && self.c2 >= -1e-9 && self.sqrts.iter().all(|s| s.coef >= -1e-12)
    }
}

/// Chain of coordinates in [lo, hi] with x_{n+1} − x_n ≥ delta.
#[derive(Debug, Clone)]
pub struct BoxChainProblem {
    pub terms: Vec<Term1D>,
    pub lo: f64,
    pub hi: f64,
    pub delta: f64,
}

impl BoxChainProblem {
    pub fn validate(&self) -> Result<()> {
        let n = self.terms.len();
        if n == 0 {
            return Err(Error::InvalidInput("empty chain".into()));
        }
        if self.delta * (n as f64 - 1.0) > self.hi - self.lo + 1e-12 {
            return Err(Error::InvalidInput(format!(
                "chain infeasible: {}·{} > {}",
                self.delta,
                n - 1,
                self.hi - self.lo
            )));
        }
        for (i, t) in self.terms.iter().enumerate() {
            if !t.is_convex_piece() {
                return Err(Error::InvalidInput(format!(
                    "coordinate {i}: non-convex 1-D term (c3={}, c2={})",
                    t.c3, t.c2
                )));
            }
        }
        Ok(())
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.terms.iter().zip(x).map(|(t, &xi)| t.eval(xi)).sum()
    }

    fn feasible(&self, x: &[f64], slack: f64) -> bool {
        let n = x.len();
        x.iter().all(|&xi| xi >= self.lo - slack && xi <= self.hi + slack)
            && (0..n.saturating_sub(1)).all(|i| x[i + 1] - x[i] >= self.delta - slack)
    }

    /// A strictly interior point near `x0` (or a centered chain when the
    /// start cannot be nudged inside).
    fn interior_start(&self, x0: &[f64]) -> Vec<f64> {
        let n = self.terms.len();
        let span = self.hi - self.lo;
        let slack_total = span - self.delta * (n as f64 - 1.0);
        let eps = (slack_total / (4.0 * n as f64)).min(1e-3).max(0.0);
        if eps <= 0.0 {
            // Rigid chain: the only feasible layout.
            return (0..n).map(|i| self.lo + self.delta * i as f64).collect();
        }
        let mut x: Vec<f64> = x0.to_vec();
        for xi in x.iter_mut() {
            *xi = xi.clamp(self.lo + eps, self.hi - eps);
        }
        for i in 1..n {
            if x[i] - x[i - 1] < self.delta + eps {
                x[i] = x[i - 1] + self.delta + eps;
            }
        }
        // Forward pass may have pushed past the upper bound; sweep back.
        if x[n - 1] > self.hi - eps {
            x[n - 1] = self.hi - eps;
            for i in (0..n - 1).rev() {
                if x[i + 1] - x[i] < self.delta + eps {
                    x[i] = x[i + 1] - self.delta - eps;
                }
            }
        }
        x
    }
}

#[derive(Debug, Clone)]
pub struct BoxChainSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub newton_steps: usize,
}

/// Log-barrier Newton over the chain polyhedron. Tridiagonal Hessian solves
/// keep each step O(N).
pub fn solve_box_chain(
    problem: &BoxChainProblem,
    x0: &[f64],
    tol: f64,
) -> Result<BoxChainSolution> {
    problem.validate()?;
    let n = problem.terms.len();
    let span = problem.hi - problem.lo;
    if span - problem.delta * (n as f64 - 1.0) <= 1e-15 {
        let x: Vec<f64> = (0..n).map(|i| problem.lo + problem.delta * i as f64).collect();
        return Ok(BoxChainSolution {
            objective: problem.objective(&x),
            x,
            newton_steps: 0,
        });
    }

    let mut x = problem.interior_start(x0);
    let m = (2 * n + n.saturating_sub(1)) as f64;
    let mut t = 1.0;
    let mut newton_steps = 0;

    // Barrier merit at fixed t.
    let merit = |x: &[f64], t: f64| -> f64 {
        let mut v = t * problem.objective(x);
        for &xi in x {
            v -= (xi - problem.lo).ln() + (problem.hi - xi).ln();
        }
        for i in 0..n - 1 {
            v -= (x[i + 1] - x[i] - problem.delta).ln();
        }
        v
    };

    while m / t > tol.max(1e-12) {
        for _ in 0..100 {
            // Assemble gradient and tridiagonal Hessian.
            let mut grad = vec![0.0; n];
            let mut diag = vec![0.0; n];
            let mut off = vec![0.0; n.saturating_sub(1)];
            for i in 0..n {
                grad[i] = t * problem.terms[i].deriv(x[i]);
                diag[i] = t * problem.terms[i].second_deriv(x[i]).max(0.0);
                let a = x[i] - problem.lo;
                let b = problem.hi - x[i];
                grad[i] += -1.0 / a + 1.0 / b;
                diag[i] += 1.0 / (a * a) + 1.0 / (b * b);
            }
            for i in 0..n.saturating_sub(1) {
                let gap = x[i + 1] - x[i] - problem.delta;
                grad[i] += 1.0 / gap;
                grad[i + 1] -= 1.0 / gap;
                let h = 1.0 / (gap * gap);
                diag[i] += h;
                diag[i + 1] += h;
                off[i] -= h;
            }
            let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
            let dx = tridiag_solve(&diag, &off, &neg);
            newton_steps += 1;

            let decrement: f64 = dx.iter().zip(&grad).map(|(d, g)| -d * g).sum();
            if !decrement.is_finite() || decrement / 2.0 < 1e-14 * (1.0 + t) {
                break;
            }

            // Step-to-boundary fraction then Armijo.
            let mut s: f64 = 1.0;
            for i in 0..n {
                if dx[i] < 0.0 {
                    s = s.min(0.99 * (problem.lo - x[i]) / dx[i]);
                }
                if dx[i] > 0.0 {
                    s = s.min(0.99 * (problem.hi - x[i]) / dx[i]);
                }
            }
            for i in 0..n.saturating_sub(1) {
                let dgap = dx[i + 1] - dx[i];
                if dgap < 0.0 {
                    let gap = x[i + 1] - x[i] - problem.delta;
                    s = s.min(-0.99 * gap / dgap);
                }
            }
            let m0 = merit(&x, t);
            let slope: f64 = grad.iter().zip(&dx).map(|(g, d)| g * d).sum();
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi + s * di).collect();
                if problem.feasible(&cand, 0.0)
                    && cand.iter().all(|&c| c > problem.lo && c < problem.hi)
                {
                    let mc = merit(&cand, t);
                    if mc <= m0 + 0.01 * s * slope || mc < m0 {
                        x = cand;
                        accepted = true;
                        break;
                    }
                }
                s *= 0.5;
            }
            if !accepted {
                break;
            }
            if newton_steps > 5000 {
                return Err(Error::MaxIterations {
                    cap: 5000,
                    residual: m / t,
                });
            }
        }
        t *= 20.0;
    }

    Ok(BoxChainSolution {
        objective: problem.objective(&x),
        x,
        newton_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(center: f64) -> Term1D {
        // (x − center)²
        Term1D {
            c3: 0.0,
            c2: 1.0,
            c1: -2.0 * center,
            c0: center * center,
            sqrts: Vec::new(),
        }
    }

    #[test]
    fn single_coordinate_interior_minimum() {
        let problem = BoxChainProblem {
            terms: vec![quad(3.7)],
            lo: 0.0,
            hi: 10.0,
            delta: 0.0,
        };
        let sol = solve_box_chain(&problem, &[5.0], 1e-10).unwrap();
        assert!((sol.x[0] - 3.7).abs() < 1e-6, "got {}", sol.x[0]);
    }

    #[test]
    fn single_coordinate_clamped_to_lower_bound() {
        let problem = BoxChainProblem {
            terms: vec![quad(-2.0)],
            lo: 0.0,
            hi: 10.0,
            delta: 0.0,
        };
        let sol = solve_box_chain(&problem, &[5.0], 1e-10).unwrap();
        assert!(sol.x[0] >= 0.0);
        assert!(sol.x[0] < 1e-4, "got {}", sol.x[0]);
    }

    /// Two-stage grid oracle over the feasible chain polytope.
    fn grid_oracle(problem: &BoxChainProblem, coarse: usize) -> Vec<f64> {
        let step = (problem.hi - problem.lo) / coarse as f64;
        let mut best = (f64::INFINITY, vec![0.0; 3]);
        let sweep = |range: &[(f64, f64)], step: f64, best: &mut (f64, Vec<f64>)| {
            let counts: Vec<usize> = range
                .iter()
                .map(|(lo, hi)| ((hi - lo) / step).ceil() as usize + 1)
                .collect();
            for i0 in 0..counts[0] {
                let x0 = range[0].0 + i0 as f64 * step;
                for i1 in 0..counts[1] {
                    let x1 = range[1].0 + i1 as f64 * step;
                    if x1 - x0 < problem.delta - 1e-9 {
                        continue;
                    }
                    for i2 in 0..counts[2] {
                        let x2 = range[2].0 + i2 as f64 * step;
                        if x2 - x1 < problem.delta - 1e-9 || x2 > problem.hi + 1e-12 {
                            continue;
                        }
                        let x = [x0, x1, x2];
                        if x.iter().any(|&v| v < problem.lo || v > problem.hi) {
                            continue;
                        }
                        let f = problem.objective(&x);
                        if f < best.0 {
                            *best = (f, x.to_vec());
                        }
                    }
                }
            }
        };
        let full: Vec<(f64, f64)> = vec![(problem.lo, problem.hi); 3];
        sweep(&full, step, &mut best);
        // Refine around the coarse winner.
        for refine_step in [step / 10.0, step / 100.0] {
            let centre = best.1.clone();
            let range: Vec<(f64, f64)> = centre
                .iter()
                .map(|&c| {
                    (
                        (c - 12.0 * refine_step).max(problem.lo),
                        (c + 12.0 * refine_step).min(problem.hi),
                    )
                })
                .collect();
            sweep(&range, refine_step, &mut best);
        }
        best.1
    }

    #[test]
    fn three_chain_active_spacing_matches_grid() {
        // All three coordinates want the same spot, so Δ must go active.
        let problem = BoxChainProblem {
            terms: vec![quad(1.0), quad(1.0), quad(1.0)],
            lo: 0.0,
            hi: 2.0,
            delta: 0.4,
        };
        let sol = solve_box_chain(&problem, &[0.2, 0.9, 1.6], 1e-10).unwrap();
        let oracle = grid_oracle(&problem, 40);
        for i in 0..3 {
            assert!(
                (sol.x[i] - oracle[i]).abs() < 1e-3,
                "coord {i}: solver {} vs grid {:?}",
                sol.x[i],
                oracle
            );
        }
        // Spacing is active at the optimum here.
        assert!(sol.x[1] - sol.x[0] - 0.4 < 1e-5);
    }

    #[test]
    fn mixed_terms_beat_random_probes() {
        use rand::{Rng, SeedableRng};
        let problem = BoxChainProblem {
            terms: vec![
                Term1D {
                    c3: 0.2,
                    c2: 0.5,
                    c1: -1.0,
                    c0: 0.0,
                    sqrts: vec![SqrtTerm {
                        coef: 2.0,
                        center: 3.0,
                        offset_sq: 4.0,
                    }],
                },
                quad(2.0),
                Term1D {
                    c3: 0.0,
                    c2: 0.3,
                    c1: 0.1,
                    c0: 0.0,
                    sqrts: vec![SqrtTerm {
                        coef: 1.0,
                        center: 0.5,
                        offset_sq: 9.0,
                    }],
                },
            ],
            lo: 0.0,
            hi: 5.0,
            delta: 0.25,
        };
        let sol = solve_box_chain(&problem, &[1.0, 2.0, 3.0], 1e-10).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let mut probe = [0.0; 3];
            probe[0] = rng.gen_range(0.0..5.0);
            probe[1] = rng.gen_range(0.0..5.0);
            probe[2] = rng.gen_range(0.0..5.0);
            probe.sort_by(|a, b| a.partial_cmp(b).unwrap());
            if probe[1] - probe[0] < 0.25 || probe[2] - probe[1] < 0.25 {
                continue;
            }
            assert!(problem.objective(&probe) >= sol.objective - 1e-7);
        }
    }

    #[test]
    fn rigid_chain_unique_point() {
        let problem = BoxChainProblem {
            terms: vec![quad(0.0), quad(5.0)],
            lo: 0.0,
            hi: 1.0,
            delta: 1.0,
        };
        let sol = solve_box_chain(&problem, &[0.0, 1.0], 1e-10).unwrap();
        assert_eq!(sol.x, vec![0.0, 1.0]);
    }

    #[test]
    fn infeasible_chain_rejected() {
        let problem = BoxChainProblem {
            terms: vec![quad(0.0); 4],
            lo: 0.0,
            hi: 1.0,
            delta: 0.5,
        };
        assert!(solve_box_chain(&problem, &[0.0; 4], 1e-8).is_err());
    }

    #[test]
    fn deterministic_repeat() {
        let problem = BoxChainProblem {
            terms: vec![quad(1.0), quad(4.0)],
            lo: 0.0,
            hi: 5.0,
            delta: 0.5,
        };
        let a = solve_box_chain(&problem, &[1.0, 3.0], 1e-10).unwrap();
        let b = solve_box_chain(&problem, &[1.0, 3.0], 1e-10).unwrap();
        assert_eq!(a.x, b.x);
    }
}
