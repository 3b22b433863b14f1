//! Dense convex QCQP solver: log-barrier interior point with a
//! slack-augmented phase-one when no strictly feasible start is available.
//!
//! Problems are small (tens of variables) and solved thousands of times per
//! run, so the implementation favors a plain dense Newton method with exact
//! feasibility-preserving line searches over sparse machinery.

use crate::error::{Error, Result};
use crate::kernel::linalg::{solve_spd_regularized, symv};

/// f(x) = ½·xᵀPx + cᵀx + d with P symmetric (empty `p` means linear).
#[derive(Debug, Clone)]
pub struct QuadForm {
    pub p: Vec<f64>,
    pub c: Vec<f64>,
    pub d: f64,
}

impl QuadForm {
    pub fn linear(c: Vec<f64>, d: f64) -> Self {
        Self { p: Vec::new(), c, d }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut v = self.d;
        for i in 0..n {
            v += self.c[i] * x[i];
        }
        if !self.p.is_empty() {
            let mut px = vec![0.0; n];
            symv(&self.p, n, x, &mut px);
            for i in 0..n {
                v += 0.5 * x[i] * px[i];
            }
        }
        v
    }

    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        let n = x.len();
        if self.p.is_empty() {
            out.copy_from_slice(&self.c);
        } else {
            symv(&self.p, n, x, out);
            for i in 0..n {
                out[i] += self.c[i];
            }
        }
    }

    /// ΔᵀPΔ (zero for linear forms).
    fn curvature(&self, dx: &[f64]) -> f64 {
        if self.p.is_empty() {
            return 0.0;
        }
        let n = dx.len();
        let mut pd = vec![0.0; n];
        symv(&self.p, n, dx, &mut pd);
        dx.iter().zip(&pd).map(|(a, b)| a * b).sum()
    }
}

/// Arrow sparsity hint: variables laid out as `num_blocks` contiguous blocks
/// of `block_len` followed by a `border_len` tail that couples them. The
/// barrier Hessian then factors by block elimination.
#[derive(Debug, Clone, Copy)]
pub struct ArrowPattern {
    pub block_len: usize,
    pub num_blocks: usize,
    pub border_len: usize,
}

/// Convex QCQP: minimize a PSD quadratic subject to convex quadratic and
/// linear inequalities `f_i(x) ≤ 0`.
#[derive(Debug, Clone)]
pub struct QcqpProblem {
    pub n: usize,
    pub objective: QuadForm,
    pub constraints: Vec<QuadForm>,
    /// Optional arrow structure (every constraint must respect it: support
    /// inside one block, or inside the border).
    pub arrow: Option<ArrowPattern>,
}

/// Sparse view of a QuadForm used for fast per-constraint work inside the
/// barrier loops.
struct SparseForm {
    /// (row, col, value) of the upper triangle of P, diagonal included.
    upper: Vec<(u32, u32, f64)>,
    lin: Vec<(u32, f64)>,
    d: f64,
    /// All variables this form touches.
    support: Vec<u32>,
}

impl SparseForm {
    fn build(q: &QuadForm, n: usize) -> Self {
        let mut upper = Vec::new();
        let mut touched = vec![false; n];
        if !q.p.is_empty() {
            for r in 0..n {
                for c in r..n {
                    let v = q.p[r * n + c];
                    if v != 0.0 {
                        upper.push((r as u32, c as u32, v));
                        touched[r] = true;
                        touched[c] = true;
                    }
                }
            }
        }
        let mut lin = Vec::new();
        for (i, &v) in q.c.iter().enumerate() {
            if v != 0.0 {
                lin.push((i as u32, v));
                touched[i] = true;
            }
        }
        let support = touched
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| if t { Some(i as u32) } else { None })
            .collect();
        Self {
            upper,
            lin,
            d: q.d,
            support,
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.d;
        for &(i, c) in &self.lin {
            v += c * x[i as usize];
        }
        for &(r, c, p) in &self.upper {
            let (r, c) = (r as usize, c as usize);
            if r == c {
                v += 0.5 * p * x[r] * x[r];
            } else {
                v += p * x[r] * x[c];
            }
        }
        v
    }

    /// Gradient on the support only, written into `out[support]`.
    fn grad_sparse(&self, x: &[f64], out: &mut [f64]) {
        for &i in &self.support {
            out[i as usize] = 0.0;
        }
        for &(i, c) in &self.lin {
            out[i as usize] += c;
        }
        for &(r, c, p) in &self.upper {
            let (r, c) = (r as usize, c as usize);
            out[r] += p * x[c];
            if r != c {
                out[c] += p * x[r];
            }
        }
    }

    fn curvature(&self, dx: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &(r, c, p) in &self.upper {
            let (r, c) = (r as usize, c as usize);
            if r == c {
                acc += p * dx[r] * dx[r];
            } else {
                acc += 2.0 * p * dx[r] * dx[c];
            }
        }
        acc
    }
}

impl QcqpProblem {
    /// Validate shapes and PSD-ness of every quadratic part
    /// (Cholesky-with-slack).
    pub fn validate(&self) -> Result<()> {
        let check = |q: &QuadForm, what: &str| -> Result<()> {
            if q.c.len() != self.n || (!q.p.is_empty() && q.p.len() != self.n * self.n) {
                return Err(Error::InvalidInput(format!("{what}: dimension mismatch")));
            }
            if !q.p.is_empty() {
                let scale = (0..self.n)
                    .map(|i| q.p[i * self.n + i].abs())
                    .fold(1.0, f64::max);
                let mut slacked = q.p.clone();
                for i in 0..self.n {
                    slacked[i * self.n + i] += scale * 1e-9;
                }
                if crate::kernel::linalg::cholesky(&slacked, self.n).is_none() {
                    return Err(Error::InvalidInput(format!("{what}: quadratic not PSD")));
                }
            }
            Ok(())
        };
        check(&self.objective, "objective")?;
        for (i, con) in self.constraints.iter().enumerate() {
            check(con, &format!("constraint {i}"))?;
        }
        if let Some(a) = self.arrow {
            if a.block_len * a.num_blocks + a.border_len != self.n {
                return Err(Error::InvalidInput("arrow pattern dimension mismatch".into()));
            }
        }
        Ok(())
    }
}

/// Stationarity / feasibility targets.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub stationarity: f64,
    pub feasibility: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            stationarity: 1e-8,
            feasibility: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QcqpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// ‖∇f₀ + Σ λᵢ∇fᵢ‖∞ with λᵢ = −1/(t·fᵢ).
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub newton_steps: usize,
}

const MAX_NEWTON_TOTAL: usize = 4000;
const MU: f64 = 20.0;

/// Minimize `t·f₀ + φ` for fixed t; returns Newton step count.
fn center(
    problem: &QcqpProblem,
    sparse: &[SparseForm],
    x: &mut [f64],
    t: f64,
    budget: usize,
) -> usize {
    let n = problem.n;
    let m = problem.constraints.len();
    let mut steps = 0;
    let mut grad = vec![0.0; n];
    let mut gi = vec![0.0; n];
    let mut hess = vec![0.0; n * n];

    let fvals = |x: &[f64]| -> Vec<f64> { sparse.iter().map(|c| c.eval(x)).collect() };
    let merit = |x: &[f64], f: &[f64]| -> f64 {
        t * problem.objective.eval(x) - f.iter().map(|&fi| (-fi).ln()).sum::<f64>()
    };

    loop {
        if steps >= budget {
            return steps;
        }
        let f = fvals(x);
        // Gradient and Hessian of the barrier-augmented objective; the
        // constraint contributions only touch each form's support.
        problem.objective.grad(x, &mut grad);
        for g in grad.iter_mut() {
            *g *= t;
        }
        hess.fill(0.0);
        if !problem.objective.p.is_empty() {
            for (h, &p) in hess.iter_mut().zip(&problem.objective.p) {
                *h = t * p;
            }
        }
        for (i, con) in sparse.iter().enumerate() {
            con.grad_sparse(x, &mut gi);
            let inv = -1.0 / f[i];
            let inv2 = 1.0 / (f[i] * f[i]);
            for &r in &con.support {
                let gr = gi[r as usize];
                grad[r as usize] += inv * gr;
                for &c in &con.support {
                    hess[r as usize * n + c as usize] += inv2 * gr * gi[c as usize];
                }
            }
            for &(r, c, p) in &con.upper {
                let (r, c) = (r as usize, c as usize);
                hess[r * n + c] += inv * p;
                if r != c {
                    hess[c * n + r] += inv * p;
                }
            }
        }
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let dx = match problem.arrow {
            Some(a) => crate::kernel::linalg::solve_arrow(
                &hess,
                n,
                a.block_len,
                a.num_blocks,
                a.border_len,
                &neg,
            )
            .unwrap_or_else(|| solve_spd_regularized(&hess, n, &neg)),
            None => solve_spd_regularized(&hess, n, &neg),
        };
        steps += 1;

        let decrement: f64 = dx.iter().zip(&grad).map(|(d, g)| -d * g).sum();
        if decrement <= 1e-13 * (1.0 + t.abs()) || !decrement.is_finite() {
            return steps;
        }

        // Largest step keeping every constraint strictly negative: each
        // f_i(x+s·dx) is quadratic in s, so the blocking root is explicit.
        let mut s_max: f64 = 1.0;
        for (i, con) in sparse.iter().enumerate() {
            con.grad_sparse(x, &mut gi);
            let b = con
                .support
                .iter()
                .map(|&j| gi[j as usize] * dx[j as usize])
                .sum::<f64>();
            let a = 0.5 * con.curvature(&dx);
            let c0 = f[i];
            // Roots of a·s² + b·s + c0 = 0 with c0 < 0.
            let root = if a.abs() < 1e-300 {
                if b > 0.0 {
                    -c0 / b
                } else {
                    f64::INFINITY
                }
            } else {
                let disc = b * b - 4.0 * a * c0;
                if disc <= 0.0 {
                    f64::INFINITY
                } else {
                    let sq = disc.sqrt();
                    let r1 = (-b - sq) / (2.0 * a);
                    let r2 = (-b + sq) / (2.0 * a);
                    let mut best = f64::INFINITY;
                    for r in [r1, r2] {
                        if r > 0.0 && r < best {
                            best = r;
                        }
                    }
                    best
                }
            };
            if root.is_finite() {
                s_max = s_max.min(0.99 * root);
            }
        }

        // Armijo backtracking on the merit function.
        let m0 = merit(x, &f);
        let slope: f64 = grad.iter().zip(&dx).map(|(g, d)| g * d).sum();
        let mut s = s_max;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi + s * di).collect();
            let fc = fvals(&cand);
            if fc.iter().all(|&fi| fi < 0.0) {
                let mc = merit(&cand, &fc);
                if mc <= m0 + 0.01 * s * slope || mc < m0 {
                    x.copy_from_slice(&cand);
                    accepted = true;
                    break;
                }
            }
            s *= 0.5;
        }
        if !accepted {
            return steps;
        }
        if decrement / 2.0 <= 1e-12 * (1.0 + m as f64 * (1.0_f64).max(t)) {
            return steps;
        }
        let _ = m;
    }
}

/// Phase one: minimize w + ς·‖x − x₀‖² over (x, w) with fᵢ(x) ≤ w. The
/// proximal term keeps the search near the warm start (a bare linear-w
/// objective lets x drift arbitrarily far along the unbounded feasible
/// set). Returns a strictly feasible x, or the least-violation point.
fn phase_one(problem: &QcqpProblem, x0: &[f64], tol: &Tolerance) -> std::result::Result<Vec<f64>, (Vec<f64>, f64)> {
    let n = problem.n;
    let aug_n = n + 1;
    let mut constraints = Vec::with_capacity(problem.constraints.len());
    for con in &problem.constraints {
        // f_i(x) − w ≤ 0 in the (x, w) variables.
        let mut p = vec![0.0; aug_n * aug_n];
        if !con.p.is_empty() {
            for r in 0..n {
                for c in 0..n {
                    p[r * aug_n + c] = con.p[r * n + c];
                }
            }
        }
        let mut c = vec![0.0; aug_n];
        c[..n].copy_from_slice(&con.c);
        c[n] = -1.0;
        constraints.push(QuadForm { p, c, d: con.d });
    }
    // Objective ½·2ς‖x − x₀‖² + w (coordinates are pre-equilibrated, so a
    // fixed ς is well-scaled).
    let varsigma = 1e-2;
    let mut obj_p = vec![0.0; aug_n * aug_n];
    for i in 0..n {
        obj_p[i * aug_n + i] = 2.0 * varsigma;
    }
    let mut obj_c = vec![0.0; aug_n];
    for i in 0..n {
        obj_c[i] = -2.0 * varsigma * x0[i];
    }
    obj_c[n] = 1.0;
    let aug = QcqpProblem {
        n: aug_n,
        objective: QuadForm {
            p: obj_p,
            c: obj_c,
            d: varsigma * x0.iter().map(|v| v * v).sum::<f64>(),
        },
        constraints,
        arrow: None,
    };

    let worst = |x: &[f64]| -> f64 {
        problem
            .constraints
            .iter()
            .map(|c| c.eval(x))
            .fold(f64::NEG_INFINITY, f64::max)
    };

    let mut z = vec![0.0; aug_n];
    z[..n].copy_from_slice(x0);
    z[n] = worst(x0) + 1.0;

    let aug_sparse: Vec<SparseForm> =
        aug.constraints.iter().map(|c| SparseForm::build(c, aug_n)).collect();
    let mut t = 1.0;
    let mcount = aug.constraints.len().max(1) as f64;
    let mut spent = 0;
    while spent < MAX_NEWTON_TOTAL {
        // Small centering chunks so a strictly feasible iterate exits as
        // soon as it appears.
        for _ in 0..12 {
            spent += center(&aug, &aug_sparse, &mut z, t, 15);
            if worst(&z[..n]) < -tol.feasibility {
                return Ok(z[..n].to_vec());
            }
        }
        if mcount / t < 0.25 * tol.feasibility.max(1e-12) {
            break;
        }
        t *= MU;
    }
    let w_now = worst(&z[..n]);
    if w_now < 0.0 {
        Ok(z[..n].to_vec())
    } else {
        Err((z[..n].to_vec(), w_now))
    }
}

/// Solve a validated convex QCQP from an optional warm start.
///
/// The problem is Jacobi-equilibrated first (variables scaled so the
/// objective Hessian has unit diagonal) — with penalty-type objectives the
/// raw diagonal spans many orders of magnitude and unscaled Newton systems
/// lose the factorization.
pub fn solve_qcqp(
    problem: &QcqpProblem,
    x0: Option<&[f64]>,
    tol: &Tolerance,
) -> Result<QcqpSolution> {
    problem.validate()?;
    let n = problem.n;

    let diag_max = if problem.objective.p.is_empty() {
        1.0
    } else {
        (0..n)
            .map(|i| problem.objective.p[i * n + i].abs())
            .fold(0.0f64, f64::max)
            .max(1e-300)
    };
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = if problem.objective.p.is_empty() {
                0.0
            } else {
                problem.objective.p[i * n + i]
            };
            d.max(diag_max * 1e-12).sqrt().recip()
        })
        .collect();
    let rescale_form = |q: &QuadForm| -> QuadForm {
        let p = if q.p.is_empty() {
            Vec::new()
        } else {
            let mut p = q.p.clone();
            for r in 0..n {
                for c in 0..n {
                    p[r * n + c] *= scale[r] * scale[c];
                }
            }
            p
        };
        QuadForm {
            p,
            c: q.c.iter().zip(&scale).map(|(v, s)| v * s).collect(),
            d: q.d,
        }
    };
    let scaled = QcqpProblem {
        n,
        objective: rescale_form(&problem.objective),
        constraints: problem.constraints.iter().map(rescale_form).collect(),
        arrow: problem.arrow,
    };
    let x0_scaled: Option<Vec<f64>> =
        x0.map(|x| x.iter().zip(&scale).map(|(v, s)| v / s).collect());
    let mut sol = solve_qcqp_raw(&scaled, x0_scaled.as_deref(), tol)?;
    for (xi, s) in sol.x.iter_mut().zip(&scale) {
        *xi *= s;
    }
    // Report objective, violation, and KKT in the original coordinates.
    sol.objective = problem.objective.eval(&sol.x);
    sol.max_violation = problem
        .constraints
        .iter()
        .map(|c| c.eval(&sol.x).max(0.0))
        .fold(0.0, f64::max);
    Ok(sol)
}

fn solve_qcqp_raw(
    problem: &QcqpProblem,
    x0: Option<&[f64]>,
    tol: &Tolerance,
) -> Result<QcqpSolution> {
    let n = problem.n;
    let start: Vec<f64> = match x0 {
        Some(x) => x.to_vec(),
        None => vec![0.0; n],
    };

    // Unconstrained minimizer first: if it is strictly feasible it is the
    // global optimum and the barrier path is unnecessary.
    let mut newton_steps = 0;
    let unconstrained = {
        let mut g0 = vec![0.0; n];
        problem.objective.grad(&vec![0.0; n], &mut g0);
        if problem.objective.p.is_empty() {
            None
        } else {
            let neg: Vec<f64> = g0.iter().map(|g| -g).collect();
            newton_steps += 1;
            let solve = |rhs: &[f64]| -> Vec<f64> {
                match problem.arrow {
                    Some(a) => crate::kernel::linalg::solve_arrow(
                        &problem.objective.p,
                        n,
                        a.block_len,
                        a.num_blocks,
                        a.border_len,
                        rhs,
                    )
                    .unwrap_or_else(|| solve_spd_regularized(&problem.objective.p, n, rhs)),
                    None => solve_spd_regularized(&problem.objective.p, n, rhs),
                }
            };
            let mut x = solve(&neg);
            // Iterative refinement: mixed variable scales can leave the
            // one-shot Cholesky solve with a large absolute gradient.
            let mut grad = vec![0.0; n];
            for _ in 0..4 {
                problem.objective.grad(&x, &mut grad);
                let gnorm = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
                if gnorm <= tol.stationarity {
                    break;
                }
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                let dx = solve(&neg);
                for i in 0..n {
                    x[i] += dx[i];
                }
                newton_steps += 1;
            }
            Some(x)
        }
    };
    if let Some(xu) = &unconstrained {
        let feasible = problem
            .constraints
            .iter()
            .all(|c| c.eval(xu) <= -tol.feasibility.max(0.0));
        let mut grad = vec![0.0; n];
        problem.objective.grad(xu, &mut grad);
        let gnorm = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
        let scale = (0..n)
            .map(|i| {
                if problem.objective.p.is_empty() {
                    1.0
                } else {
                    problem.objective.p[i * n + i].abs()
                }
            })
            .fold(1.0, f64::max);
        if (problem.constraints.is_empty() || feasible) && gnorm <= tol.stationarity * scale.max(1.0)
        {
            return Ok(QcqpSolution {
                objective: problem.objective.eval(xu),
                kkt_residual: gnorm,
                max_violation: problem
                    .constraints
                    .iter()
                    .map(|c| c.eval(xu).max(0.0))
                    .fold(0.0, f64::max),
                newton_steps,
                x: xu.clone(),
            });
        }
    }

    if problem.constraints.is_empty() {
        // PSD but possibly singular objective: polish with plain Newton.
        let mut x = unconstrained.unwrap_or(start);
        let bare = QcqpProblem {
            n,
            objective: problem.objective.clone(),
            constraints: Vec::new(),
            arrow: problem.arrow,
        };
        newton_steps += center(&bare, &[], &mut x, 1.0, 50);
        let mut grad = vec![0.0; n];
        problem.objective.grad(&x, &mut grad);
        let kkt = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
        return Ok(QcqpSolution {
            objective: problem.objective.eval(&x),
            kkt_residual: kkt,
            max_violation: 0.0,
            newton_steps,
            x,
        });
    }

    // Strictly feasible start, via phase one when needed.
    let worst0 = problem
        .constraints
        .iter()
        .map(|c| c.eval(&start))
        .fold(f64::NEG_INFINITY, f64::max);
    let trace_on = std::env::var("WDPASS_QCQP_TRACE").is_ok();
    let mut x = if worst0 < -tol.feasibility {
        start
    } else {
        if trace_on {
            eprintln!("QTRC phase one (worst0={worst0:.3e})");
        }
        match phase_one(problem, &start, tol) {
            Ok(x) => x,
            Err((_, violation)) => {
                return Err(Error::Infeasible {
                    max_violation: violation,
                })
            }
        }
    };
    if trace_on {
        let worst = problem
            .constraints
            .iter()
            .map(|c| c.eval(&x))
            .fold(f64::NEG_INFINITY, f64::max);
        eprintln!(
            "QTRC start f0={:.6e} worst={worst:.3e}",
            problem.objective.eval(&x)
        );
    }

    let sparse: Vec<SparseForm> = problem
        .constraints
        .iter()
        .map(|c| SparseForm::build(c, n))
        .collect();
    let m = problem.constraints.len() as f64;
    let mut t = 1.0;
    let mut prev_f0 = f64::INFINITY;
    let mut stalled_stages = 0;
    loop {
        let before = newton_steps;
        newton_steps += center(problem, &sparse, &mut x, t, 120);
        let f0 = problem.objective.eval(&x);
        let scale = 1.0 + f0.abs();
        if trace_on {
            eprintln!(
                "QTRC t={t:.2e} steps={} f0={f0:.6e} gap={:.2e}",
                newton_steps - before,
                m / t
            );
        }
        if m / t <= tol.stationarity * scale {
            break;
        }
        // Two consecutive stages without objective progress: the centering
        // hit its numerical floor, so further t escalation cannot help.
        if (prev_f0 - f0).abs() <= 1e-13 * scale {
            stalled_stages += 1;
            if stalled_stages >= 2 {
                break;
            }
        } else {
            stalled_stages = 0;
        }
        prev_f0 = f0;
        if newton_steps > MAX_NEWTON_TOTAL {
            return Err(Error::MaxIterations {
                cap: MAX_NEWTON_TOTAL,
                residual: m / t,
            });
        }
        t *= MU;
    }

    // KKT residual with barrier multipliers λᵢ = −1/(t·fᵢ).
    let mut grad = vec![0.0; n];
    problem.objective.grad(&x, &mut grad);
    let mut gi = vec![0.0; n];
    for con in &problem.constraints {
        let fi = con.eval(&x);
        con.grad(&x, &mut gi);
        let lam = -1.0 / (t * fi);
        for j in 0..n {
            grad[j] += lam * gi[j];
        }
    }
    let kkt = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
    let max_violation = problem
        .constraints
        .iter()
        .map(|c| c.eval(&x).max(0.0))
        .fold(0.0, f64::max);

    Ok(QcqpSolution {
        objective: problem.objective.eval(&x),
        kkt_residual: kkt,
        max_violation,
        newton_steps,
        x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eye_scaled(n: usize, s: f64) -> Vec<f64> {
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            p[i * n + i] = s;
        }
        p
    }

    /// min ‖x − c‖² s.t. ‖x‖² ≤ 1 with ‖c‖ > 1 → x = c/‖c‖.
    #[test]
    fn projection_onto_ball() {
        let c = [1.5, -2.0, 0.5];
        let norm = (c.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let problem = QcqpProblem {
            n: 3,
            objective: QuadForm {
                p: eye_scaled(3, 2.0),
                c: c.iter().map(|v| -2.0 * v).collect(),
                d: norm * norm,
            },
            constraints: vec![QuadForm {
                p: eye_scaled(3, 2.0),
                c: vec![0.0; 3],
                d: -1.0,
            }],
            arrow: None,
        };
        let sol = solve_qcqp(&problem, None, &Tolerance::default()).unwrap();
        for i in 0..3 {
            assert!(
                (sol.x[i] - c[i] / norm).abs() < 1e-6,
                "x[{i}]={} expected {}",
                sol.x[i],
                c[i] / norm
            );
        }
        assert!(sol.max_violation <= 1e-9);
    }

    #[test]
    fn unconstrained_quadratic_single_newton() {
        // min ½xᵀPx + cᵀx with known minimizer −P⁻¹c.
        let p = vec![4.0, 1.0, 1.0, 3.0];
        let c = vec![-1.0, 2.0];
        let problem = QcqpProblem {
            n: 2,
            objective: QuadForm { p, c, d: 0.0 },
            constraints: vec![],
            arrow: None,
        };
        let sol = solve_qcqp(&problem, None, &Tolerance::default()).unwrap();
        assert!(sol.kkt_residual < 1e-10);
        // Solve 2x2 by hand: [4 1; 1 3] x = [1, -2].
        let det = 4.0 * 3.0 - 1.0;
        let x0 = (1.0 * 3.0 - 1.0 * -2.0) / det;
        let x1 = (4.0 * -2.0 - 1.0 * 1.0) / det;
        assert!((sol.x[0] - x0).abs() < 1e-10);
        assert!((sol.x[1] - x1).abs() < 1e-10);
    }

    /// Penalty-method oracle: gradient descent on f₀ + μ·Σ max(fᵢ,0)² with an
    /// escalating penalty. Independent of the interior-point path.
    fn penalty_oracle(problem: &QcqpProblem, x0: &[f64]) -> f64 {
        let n = problem.n;
        let mut x = x0.to_vec();
        let mut mu = 10.0;
        for _ in 0..12 {
            for _ in 0..4000 {
                let mut g = vec![0.0; n];
                problem.objective.grad(&x, &mut g);
                let mut gi = vec![0.0; n];
                for con in &problem.constraints {
                    let v = con.eval(&x);
                    if v > 0.0 {
                        con.grad(&x, &mut gi);
                        for j in 0..n {
                            g[j] += 2.0 * mu * v * gi[j];
                        }
                    }
                }
                let gn: f64 = g.iter().map(|v| v * v).sum::<f64>();
                if gn < 1e-20 {
                    break;
                }
                // Backtracking step.
                let f_now = problem.objective.eval(&x)
                    + mu * problem
                        .constraints
                        .iter()
                        .map(|c| c.eval(&x).max(0.0).powi(2))
                        .sum::<f64>();
                let mut s: f64 = 1.0;
                for _ in 0..60 {
                    let cand: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - s * gi).collect();
                    let f_cand = problem.objective.eval(&cand)
                        + mu * problem
                            .constraints
                            .iter()
                            .map(|c| c.eval(&cand).max(0.0).powi(2))
                            .sum::<f64>();
                    if f_cand < f_now - 0.25 * s * gn {
                        x = cand;
                        break;
                    }
                    s *= 0.5;
                }
            }
            mu *= 4.0;
        }
        problem.objective.eval(&x)
    }

    #[test]
    fn random_qcqp_matches_penalty_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..5 {
            let n = 5;
            // Random PSD objective AᵀA + I, random linear term.
            let a: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut p = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        p[i * n + j] += a[k * n + i] * a[k * n + j];
                    }
                }
                p[i * n + i] += 1.0;
            }
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            // Two ball constraints containing the origin strictly.
            let mut constraints = Vec::new();
            for _ in 0..2 {
                let center: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.3..0.3)).collect();
                let radius: f64 = rng.gen_range(1.0..2.0);
                let norm2: f64 = center.iter().map(|v| v * v).sum();
                constraints.push(QuadForm {
                    p: eye_scaled(n, 2.0),
                    c: center.iter().map(|v| -2.0 * v).collect(),
                    d: norm2 - radius * radius,
                });
            }
            let problem = QcqpProblem {
                n,
                objective: QuadForm { p, c, d: 0.0 },
                constraints,
                arrow: None,
            };
            let sol = solve_qcqp(&problem, None, &Tolerance::default()).unwrap();
            let oracle = penalty_oracle(&problem, &vec![0.0; n]);
            assert!(
                (sol.objective - oracle).abs() < 1e-4 * (1.0 + oracle.abs()),
                "trial {trial}: ip={} oracle={}",
                sol.objective,
                oracle
            );
        }
    }

    #[test]
    fn solution_beats_random_feasible_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4;
        let problem = QcqpProblem {
            n,
            objective: QuadForm {
                p: eye_scaled(n, 1.0),
                c: vec![0.3, -0.7, 0.1, 0.9],
                d: 0.0,
            },
            constraints: vec![QuadForm {
                p: eye_scaled(n, 2.0),
                c: vec![0.0; n],
                d: -4.0,
            }],
            arrow: None,
        };
        let sol = solve_qcqp(&problem, None, &Tolerance::default()).unwrap();
        for _ in 0..1000 {
            // Rejection-sample the ball of radius 2.
            let probe: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            if probe.iter().map(|v| v * v).sum::<f64>() > 4.0 {
                continue;
            }
            let f = problem.objective.eval(&probe);
            assert!(sol.objective <= f + 1e-7, "probe beat solver: {f} < {}", sol.objective);
        }
    }

    #[test]
    fn infeasible_reported_with_violation() {
        // ‖x‖² ≤ 1 and ‖x − (3,0)‖² ≤ 1 cannot both hold.
        let problem = QcqpProblem {
            n: 2,
            objective: QuadForm {
                p: eye_scaled(2, 2.0),
                c: vec![0.0; 2],
                d: 0.0,
            },
            constraints: vec![
                QuadForm {
                    p: eye_scaled(2, 2.0),
                    c: vec![0.0; 2],
                    d: -1.0,
                },
                QuadForm {
                    p: eye_scaled(2, 2.0),
                    c: vec![-6.0, 0.0],
                    d: 9.0 - 1.0,
                },
            ],
            arrow: None,
        };
        match solve_qcqp(&problem, None, &Tolerance::default()) {
            Err(Error::Infeasible { max_violation }) => assert!(max_violation > 0.0),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_repeat() {
        let problem = QcqpProblem {
            n: 3,
            objective: QuadForm {
                p: eye_scaled(3, 1.5),
                c: vec![1.0, -2.0, 0.5],
                d: 0.0,
            },
            constraints: vec![QuadForm {
                p: eye_scaled(3, 2.0),
                c: vec![0.2, 0.2, 0.2],
                d: -1.0,
            }],
            arrow: None,
        };
        let a = solve_qcqp(&problem, None, &Tolerance::default()).unwrap();
        let b = solve_qcqp(&problem, None, &Tolerance::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn non_psd_objective_rejected() {
        let problem = QcqpProblem {
            n: 2,
            objective: QuadForm {
                p: vec![1.0, 2.0, 2.0, 1.0],
                c: vec![0.0; 2],
                d: 0.0,
            },
            constraints: vec![],
            arrow: None,
        };
        assert!(problem.validate().is_err());
    }
}
