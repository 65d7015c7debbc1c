//! Variable-step BDF time stepping for `v' = f(t, v)` with a two-stage
//! third-order SDIRK starter, Newton inner solves, and the perturbed-run
//! experiment that measures solution differences against the stability
//! bounds.
//!
//! One step of the k-step scheme solves `D_k v^n = f(t_n, v^n)` for `v^n`,
//! where `D_k` is the convolution form from [`crate::kernels`]. The starter
//! supplies `v^1..v^{k-1}`; every implicit solve runs the same damped-free
//! Newton iteration (tolerance 1e-12 on the update, small-residual early
//! exit, budget of 25 iterations, dense LU with partial pivoting).

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{abs_row_and_column_sums, DocTable, KernelTable};
use crate::mesh::TimeMesh;

/// Absolute tolerance on the Newton update.
pub const NEWTON_ATOL: f64 = 1e-12;
/// Relative tolerance on the Newton update.
pub const NEWTON_RTOL: f64 = 1e-12;
/// Iteration budget before a solve is declared divergent.
pub const NEWTON_BUDGET: usize = 25;
/// Residual-floor factor for the early exit: a residual below
/// `32 eps * scale` cannot be improved in binary64, so the iterate is
/// accepted without a further solve (this is what makes linear problems
/// finish in a single productive iteration).
const RESIDUAL_FLOOR: f64 = 32.0 * f64::EPSILON;

/// SDIRK diagonal `(3 + sqrt(3)) / 6`; the two-stage tableau built on it is
/// A-stable and third-order.
fn sdirk_gamma() -> f64 {
    (3.0 + 3.0f64.sqrt()) / 6.0
}

/// Identifier recorded in trajectories so runs can be reproduced.
pub const STARTER_ID: &str = "sdirk3(two-stage, gamma=(3+sqrt(3))/6)";

type Rhs = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;
type Jac = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// An initial value problem `v' = f(t, v)`, `v(0) = v0`, on `[0, T]`.
///
/// The Jacobian is optional (forward differences are used when absent); the
/// Lipschitz constant is user-supplied and consumed only by the perturbation
/// bound checks.
pub struct OdeProblem {
    rhs: Box<Rhs>,
    /// Row-major `d x d` Jacobian `df/dv`, if provided.
    jacobian: Option<Box<Jac>>,
    initial: Vec<f64>,
    horizon: f64,
    lipschitz: Option<f64>,
}

impl OdeProblem {
    pub fn new(
        initial: Vec<f64>,
        horizon: f64,
        rhs: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if initial.is_empty() || initial.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("initial value must be finite and nonempty".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        Ok(OdeProblem { rhs: Box::new(rhs), jacobian: None, initial, horizon, lipschitz: None })
    }

    /// Scalar convenience constructor.
    pub fn scalar(
        v0: f64,
        horizon: f64,
        rhs: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(vec![v0], horizon, move |t, v| vec![rhs(t, v[0])])
    }

    /// Attaches an analytic Jacobian `df/dv` (row-major `d x d`).
    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Box::new(jacobian));
        self
    }

    /// Records the Lipschitz constant of `f` in `v`, needed by
    /// [`perturbed_run`]'s bound evaluation.
    pub fn with_lipschitz(mut self, lipschitz: f64) -> Result<Self> {
        if !(lipschitz > 0.0) || !lipschitz.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "Lipschitz constant must be positive, got {lipschitz}"
            )));
        }
        self.lipschitz = Some(lipschitz);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    fn eval(&self, t: f64, v: &[f64]) -> Vec<f64> {
        let out = (self.rhs)(t, v);
        debug_assert_eq!(out.len(), self.initial.len());
        out
    }

    /// `df/dv` at `(t, v)`: the user closure, or forward differences with
    /// step `sqrt(eps) * (1 + |v_j|)` per column.
    fn jacobian_at(&self, t: f64, v: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        if let Some(jac) = &self.jacobian {
            let flat = jac(t, v);
            debug_assert_eq!(flat.len(), d * d);
            return DMatrix::from_row_slice(d, d, &flat);
        }
        let f0 = self.eval(t, v);
        let mut m = DMatrix::zeros(d, d);
        let mut vp = v.to_vec();
        for j in 0..d {
            let h = f64::EPSILON.sqrt() * (1.0 + v[j].abs());
            vp[j] = v[j] + h;
            let f1 = self.eval(t, &vp);
            vp[j] = v[j];
            for i in 0..d {
                m[(i, j)] = (f1[i] - f0[i]) / h;
            }
        }
        m
    }
}

impl std::fmt::Debug for OdeProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OdeProblem")
            .field("dim", &self.dim())
            .field("horizon", &self.horizon)
            .field("lipschitz", &self.lipschitz)
            .field("has_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

/// How the starting values were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StarterInfo {
    /// Starter identifier (see [`STARTER_ID`]); `"none"` for `k = 1`.
    pub method: &'static str,
    /// Newton iterations per starter stage, in stage order.
    pub stage_iterations: Vec<usize>,
}

/// A computed discrete solution over one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mesh: TimeMesh,
    /// Nodal values `v^0..v^N`, each of the problem dimension.
    pub values: Vec<Vec<f64>>,
    /// Newton iterations per multistep level `n = k..N`.
    pub newton_iterations: Vec<usize>,
    pub starter: StarterInfo,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn value(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    /// Writes the trajectory as CSV `n,t_n,v_1..v_d` (17 significant
    /// digits).
    pub fn dump_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "n,t_n")?;
        for j in 1..=self.dim() {
            write!(w, ",v_{j}")?;
        }
        writeln!(w)?;
        for (n, v) in self.values.iter().enumerate() {
            write!(w, "{n},{:.16e}", self.mesh.node(n))?;
            for x in v {
                write!(w, ",{x:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Damping-free Newton iteration on `F(v) = 0`.
///
/// Accepts when the update drops below `1e-12 (1 + |v|)` or when the residual
/// is already at the roundoff floor `32 eps * scale(v)`; the returned count
/// is the number of linear solves performed.
fn newton_solve(
    mut v: Vec<f64>,
    residual: impl Fn(&[f64]) -> Vec<f64>,
    jacobian: impl Fn(&[f64]) -> DMatrix<f64>,
    scale: impl Fn(&[f64]) -> f64,
    step: usize,
) -> Result<(Vec<f64>, usize)> {
    let mut last_update = f64::NAN;
    for iter in 0..NEWTON_BUDGET {
        let r = residual(&v);
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NewtonDivergence { step, iterations: iter, last_update });
        }
        if inf_norm(&r) <= RESIDUAL_FLOOR * scale(&v) {
            return Ok((v, iter));
        }
        let lu = jacobian(&v).lu();
        let delta = lu
            .solve(&(-DVector::from_column_slice(&r)))
            .ok_or(Error::SingularJacobian { step })?;
        for (vi, di) in v.iter_mut().zip(delta.iter()) {
            *vi += di;
        }
        last_update = delta.amax();
        if last_update < NEWTON_ATOL + NEWTON_RTOL * inf_norm(&v) {
            return Ok((v, iter + 1));
        }
    }
    Err(Error::NewtonDivergence { step, iterations: NEWTON_BUDGET, last_update })
}

/// Advances the starter through levels `1..k-1` with the two-stage
/// third-order SDIRK method, one mesh interval per step (no sub-stepping).
///
/// Returns the starting values `v^1..v^{k-1}` and the Newton iteration count
/// of each implicit stage. Newton failures surface as starter failures with
/// the offending level.
pub fn sdirk3_start(
    problem: &OdeProblem,
    mesh: &TimeMesh,
    k: usize,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if !(2..=3).contains(&k) {
        return Err(Error::UnsupportedOrder(k));
    }
    if mesh.n() < k - 1 {
        return Err(Error::InvalidArgument(format!(
            "mesh with {} steps cannot start an order-{k} run",
            mesh.n()
        )));
    }
    let g = sdirk_gamma();
    let (a21, b, c) = (1.0 - 2.0 * g, [0.5, 0.5], [g, 1.0 - g]);

    let mut values = Vec::with_capacity(k - 1);
    let mut iterations = Vec::new();
    let mut prev = problem.initial.to_vec();
    for m in 1..k {
        let tau = mesh.tau(m);
        let t0 = mesh.node(m - 1);

        // stage 1: g1 = prev + tau*g*f(t0 + c1*tau, g1)
        let (g1, it1) = implicit_stage(problem, t0 + c[0] * tau, tau * g, &prev, m)?;
        let f1 = problem.eval(t0 + c[0] * tau, &g1);

        // stage 2: g2 = prev + tau*(a21*f1 + g*f(t0 + c2*tau, g2))
        let base: Vec<f64> = prev.iter().zip(&f1).map(|(p, f)| p + tau * a21 * f).collect();
        let (g2, it2) = implicit_stage(problem, t0 + c[1] * tau, tau * g, &base, m)?;
        let f2 = problem.eval(t0 + c[1] * tau, &g2);

        let next: Vec<f64> = prev
            .iter()
            .zip(f1.iter().zip(&f2))
            .map(|(p, (x, y))| p + tau * (b[0] * x + b[1] * y))
            .collect();
        iterations.push(it1);
        iterations.push(it2);
        values.push(next.clone());
        prev = next;
    }
    Ok((values, iterations))
}

/// Solves one SDIRK stage `y = base + w * f(t, y)` by Newton.
fn implicit_stage(
    problem: &OdeProblem,
    t: f64,
    w: f64,
    base: &[f64],
    step: usize,
) -> Result<(Vec<f64>, usize)> {
    let d = problem.dim();
    let base_norm = inf_norm(base);
    let out = newton_solve(
        base.to_vec(),
        |y| {
            let f = problem.eval(t, y);
            (0..d).map(|i| y[i] - base[i] - w * f[i]).collect()
        },
        |y| {
            let mut m = problem.jacobian_at(t, y) * (-w);
            for i in 0..d {
                m[(i, i)] += 1.0;
            }
            m
        },
        |y| 1.0 + base_norm + inf_norm(y),
        step,
    );
    out.map_err(|e| Error::StarterFailure { step, reason: e.to_string() })
}

/// Solves the level-`n` multistep equation `D_k v^n = f(t_n, v^n)` given the
/// trailing history `v^{n-k}..v^{n-1}`.
///
/// Returns the new value and the Newton iteration count. For linear
/// right-hand sides the quadratic model is exact and a single productive
/// iteration suffices.
pub fn bdf_step(
    problem: &OdeProblem,
    kernel: &KernelTable,
    n: usize,
    history: &[Vec<f64>],
) -> Result<(Vec<f64>, usize)> {
    bdf_step_offset(problem, kernel, n, history, 0.0)
}

/// [`bdf_step`] with a constant perturbation `offset` added to every
/// component of the right-hand side (the perturbed scheme solves
/// `D_k v^n = f + eps^n`).
fn bdf_step_offset(
    problem: &OdeProblem,
    kernel: &KernelTable,
    n: usize,
    history: &[Vec<f64>],
    offset: f64,
) -> Result<(Vec<f64>, usize)> {
    let k = kernel.order();
    if history.len() != k {
        return Err(Error::LengthMismatch { expected: k, got: history.len() });
    }
    let mesh = kernel.mesh();
    let d = problem.dim();
    let t_n = mesh.node(n);
    let tau_n = mesh.tau(n);
    let lead = kernel.coeff(n, 0) / tau_n;

    // Known part of D_k v^n: the banded convolution over past difference
    // quotients (offsets 1..k-1).
    let mut known = vec![0.0; d];
    for off in 1..k.min(n) {
        let c = kernel.coeff(n, off);
        let j = n - off; // contributes (v^j - v^{j-1}) / tau_j
        let vj = &history[k - off];
        let vjm1 = &history[k - off - 1];
        for i in 0..d {
            known[i] += c * (vj[i] - vjm1[i]) / mesh.tau(j);
        }
    }

    let prev = &history[k - 1];
    let prev_norm = inf_norm(prev);
    let known_norm = inf_norm(&known);
    newton_solve(
        prev.clone(),
        |v| {
            let f = problem.eval(t_n, v);
            (0..d).map(|i| lead * (v[i] - prev[i]) + known[i] - f[i] - offset).collect()
        },
        |v| {
            let mut m = -problem.jacobian_at(t_n, v);
            for i in 0..d {
                m[(i, i)] += lead;
            }
            m
        },
        |v| lead * (1.0 + inf_norm(v) + prev_norm) + known_norm + offset.abs(),
        n,
    )
}

/// Integrates the problem over the mesh with the k-step scheme
/// (`k` in `{1, 2, 3}`), starter included. Deterministic for fixed inputs.
pub fn integrate(problem: &OdeProblem, mesh: &TimeMesh, k: usize) -> Result<Trajectory> {
    integrate_perturbed(problem, mesh, k, None, None)
}

/// Shared driver: optionally reuses prescribed starter values and applies a
/// per-level right-hand-side offset (the perturbation).
fn integrate_perturbed(
    problem: &OdeProblem,
    mesh: &TimeMesh,
    k: usize,
    starter_values: Option<&[Vec<f64>]>,
    epsilon: Option<&[f64]>,
) -> Result<Trajectory> {
    let kernel = KernelTable::build(k, mesh)?;
    let mut values = Vec::with_capacity(mesh.n() + 1);
    values.push(problem.initial.to_vec());

    let starter = if k == 1 {
        StarterInfo { method: "none", stage_iterations: Vec::new() }
    } else if let Some(given) = starter_values {
        values.extend(given.iter().cloned());
        StarterInfo { method: STARTER_ID, stage_iterations: Vec::new() }
    } else {
        let (start, iters) = sdirk3_start(problem, mesh, k)?;
        values.extend(start);
        StarterInfo { method: STARTER_ID, stage_iterations: iters }
    };

    let mut newton_iterations = Vec::with_capacity(mesh.n() + 1 - k);
    for n in k..=mesh.n() {
        let offset = epsilon.map_or(0.0, |e| e[n - k]);
        let (v, iters) = bdf_step_offset(problem, &kernel, n, &values[n - k..n], offset)?;
        values.push(v);
        newton_iterations.push(iters);
    }
    Ok(Trajectory { mesh: mesh.clone(), values, newton_iterations, starter })
}

/// Maximum nodal error `e(N) = max_{1<=n<=N} |v(t_n) - v^n|` against an
/// exact solution (max-norm over components).
pub fn max_error(traj: &Trajectory, exact: impl Fn(f64) -> Vec<f64>) -> f64 {
    let mut worst = 0.0f64;
    for n in 1..=traj.mesh.n() {
        let truth = exact(traj.mesh.node(n));
        let err = traj.values[n]
            .iter()
            .zip(&truth)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(err);
    }
    worst
}

/// Observed convergence order `log(e_coarse/e_fine) / log(tau_coarse/
/// tau_fine)` between two refinement levels.
pub fn convergence_order(
    e_coarse: f64,
    e_fine: f64,
    tau_coarse: f64,
    tau_fine: f64,
) -> Result<f64> {
    for v in [e_coarse, e_fine, tau_coarse, tau_fine] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "convergence order needs positive errors and steps, got {v}"
            )));
        }
    }
    Ok((e_coarse / e_fine).ln() / (tau_coarse / tau_fine).ln())
}

/// Result of integrating the scheme and its perturbed variant
/// `D_k vbar^n = f(t_n, vbar^n) + eps^n` with shared starting values.
#[derive(Debug)]
pub struct PerturbationRun {
    pub order: usize,
    /// Perturbation values at levels `k..N`.
    pub epsilon: Vec<f64>,
    pub base: Trajectory,
    pub perturbed: Trajectory,
    /// `|vtilde^n| = |vbar^n - v^n|` (max-norm) for `n = 0..N`.
    pub diff_abs: Vec<f64>,
    /// Stability-bound value at levels `k..N` (same indexing as `epsilon`).
    pub bound: Vec<f64>,
}

impl PerturbationRun {
    pub fn max_diff(&self) -> f64 {
        inf_norm(&self.diff_abs)
    }

    /// Whether `|vtilde^n|` stayed within the bound at every level.
    pub fn bound_holds(&self) -> bool {
        let k = self.order;
        self.bound
            .iter()
            .enumerate()
            .all(|(idx, b)| self.diff_abs[idx + k] <= *b)
    }

    /// Writes the run as CSV `n,t_n,vtilde_abs,bound` (bound empty for the
    /// starting levels `n < k`).
    pub fn dump_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,t_n,vtilde_abs,bound")?;
        for (n, diff) in self.diff_abs.iter().enumerate() {
            let t = self.base.mesh.node(n);
            if n < self.order {
                writeln!(w, "{n},{t:.16e},{diff:.16e},")?;
            } else {
                writeln!(w, "{n},{t:.16e},{diff:.16e},{:.16e}", self.bound[n - self.order])?;
            }
        }
        Ok(())
    }
}

/// Integrates the scheme and its perturbed variant and evaluates the
/// stability bound at every level.
///
/// The perturbation enters only at multistep levels (`n >= k`); both runs
/// share the same starting values, so the starting differences vanish. For
/// `k = 2` the bound is the unconditional-stability estimate
/// `2 exp(4 L t_{n-1}) (|vt^1| + 2 tau |d_tau vt^1| + 2 t_n max |eps|)`,
/// valid whenever the maximum step satisfies `tau <= 1/(4L)`. For `k = 3`
/// the same bound shape is evaluated with the empirical kernel-sum surrogate
/// in place of the analytic constant:
/// `2 exp(4 C L t_{n-1}) (|vt^2| + 5 C tau |d_tau vt^2| + 2 C tau
/// |d_tau vt^1| + 2 C t_n max |eps|)` — a diagnostic envelope, not a proven
/// bound.
pub fn perturbed_run(
    problem: &OdeProblem,
    mesh: &TimeMesh,
    k: usize,
    epsilon: &[f64],
) -> Result<PerturbationRun> {
    if !(2..=3).contains(&k) {
        return Err(Error::UnsupportedOrder(k));
    }
    let expected = mesh.n() + 1 - k;
    if epsilon.len() != expected {
        return Err(Error::LengthMismatch { expected, got: epsilon.len() });
    }
    let lipschitz = problem.lipschitz.ok_or_else(|| {
        Error::InvalidArgument("perturbation bounds need a Lipschitz constant".into())
    })?;

    let base = integrate(problem, mesh, k)?;
    let starter_values: Vec<Vec<f64>> = base.values[1..k].to_vec();
    let perturbed =
        integrate_perturbed(problem, mesh, k, Some(&starter_values), Some(epsilon))?;

    let diff_abs: Vec<f64> = base
        .values
        .iter()
        .zip(&perturbed.values)
        .map(|(a, b)| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((y - x).abs())))
        .collect();

    // starting-difference magnitudes (zero here by construction, but the
    // bound is evaluated as stated)
    let dt1 = diff_abs[1] / mesh.tau(1); // |d_tau vt^1| upper bound
    let tau = mesh.max_step();
    let constant = if k == 3 {
        let doc = DocTable::build(&KernelTable::build(3, mesh)?);
        let (rows, cols) = abs_row_and_column_sums(&doc);
        rows.max(cols)
    } else {
        1.0
    };

    let mut bound = Vec::with_capacity(expected);
    let mut eps_running = 0.0f64;
    for n in k..=mesh.n() {
        eps_running = eps_running.max(epsilon[n - k].abs());
        let grow = 2.0 * (4.0 * constant * lipschitz * mesh.node(n - 1)).exp();
        let start_terms = if k == 2 {
            diff_abs[1] + 2.0 * tau * dt1
        } else {
            let dt2 = (diff_abs[2] + diff_abs[1]) / mesh.tau(2);
            diff_abs[2] + 5.0 * constant * tau * dt2 + 2.0 * constant * tau * dt1
        };
        bound.push(grow * (start_terms + 2.0 * constant * mesh.node(n) * eps_running));
    }

    Ok(PerturbationRun { order: k, epsilon: epsilon.to_vec(), base, perturbed, diff_abs, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn model_problem() -> OdeProblem {
        OdeProblem::scalar(1.0, 1.0, |t, v| 2.0 * v - 3.0 * (-t).exp())
            .unwrap()
            .with_jacobian(|_, _| vec![2.0])
            .with_lipschitz(2.0)
            .unwrap()
    }

    #[test]
    fn starter_zero_field_keeps_value() {
        let problem = OdeProblem::scalar(3.5, 1.0, |_, _| 0.0).unwrap();
        let mesh = TimeMesh::uniform(4, 1.0).unwrap();
        let (vals, _) = sdirk3_start(&problem, &mesh, 3).unwrap();
        assert_eq!(vals.len(), 2);
        assert_abs_diff_eq!(vals[0][0], 3.5, epsilon = 1e-14);
        assert_abs_diff_eq!(vals[1][0], 3.5, epsilon = 1e-14);
    }

    #[test]
    fn starter_matches_stability_function() {
        // for v' = lambda v one step reproduces the rational stability
        // function of the tableau
        let lambda = -3.0f64;
        let problem = OdeProblem::scalar(2.0, 0.1, move |_, v| lambda * v).unwrap();
        let mesh = TimeMesh::uniform(1, 0.1).unwrap();
        let (vals, iters) = sdirk3_start(&problem, &mesh, 2).unwrap();
        let g = sdirk_gamma();
        let z = lambda * 0.1;
        let r = (1.0 + (1.0 - 2.0 * g) * z + (0.5 - 2.0 * g + g * g) * z * z)
            / (1.0 - g * z).powi(2);
        assert_relative_eq!(vals[0][0], 2.0 * r, max_relative = 1e-13);
        // linear stages finish in one productive Newton iteration each
        assert!(iters.iter().all(|&it| it <= 2), "iterations {iters:?}");
    }

    #[test]
    fn starter_local_error_is_fourth_order() {
        let problem = model_problem();
        let err = |tau: f64| {
            let mesh = TimeMesh::uniform(1, tau).unwrap();
            let (vals, _) = sdirk3_start(&problem, &mesh, 2).unwrap();
            (vals[0][0] - (-tau).exp()).abs()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((10.0..24.0).contains(&ratio), "local error ratio {ratio}");
    }

    #[test]
    fn starter_rejects_bad_orders() {
        let problem = model_problem();
        let mesh = TimeMesh::uniform(4, 1.0).unwrap();
        assert!(sdirk3_start(&problem, &mesh, 1).is_err());
        assert!(sdirk3_start(&problem, &mesh, 4).is_err());
    }

    #[test]
    fn bdf_step_zero_field_constant_history() {
        let problem = OdeProblem::scalar(1.25, 1.0, |_, _| 0.0).unwrap();
        let mesh = TimeMesh::random(10, 1.0, 3, None).unwrap();
        for k in [1usize, 2, 3] {
            let kernel = KernelTable::build(k, &mesh).unwrap();
            let history = vec![vec![1.25]; k];
            let (v, iters) = bdf_step(&problem, &kernel, k, &history).unwrap();
            assert_eq!(v[0], 1.25);
            assert_eq!(iters, 0); // residual is exactly zero at the guess
        }
    }

    #[test]
    fn bdf_step_linear_closed_form() {
        // f = a v + b(t) has a closed-form update; Newton must land on it
        // with a single productive iteration
        let (a, b) = (1.3f64, -0.7f64);
        let problem = OdeProblem::scalar(0.4, 1.0, move |t, v| a * v + b * t)
            .unwrap()
            .with_jacobian(move |_, _| vec![a]);
        let mesh = TimeMesh::graded(8, 1.0, 2.0).unwrap();
        let kernel = KernelTable::build(2, &mesh).unwrap();
        let history = vec![vec![0.31], vec![0.42]];
        let n = 5;
        let (v, iters) = bdf_step(&problem, &kernel, n, &history).unwrap();
        assert!(iters <= 1, "took {iters} iterations");

        let lead = kernel.coeff(n, 0) / mesh.tau(n);
        let known = kernel.coeff(n, 1) * (history[1][0] - history[0][0]) / mesh.tau(n - 1);
        let expect = (lead * history[1][0] - known + b * mesh.node(n)) / (lead - a);
        assert_relative_eq!(v[0], expect, max_relative = 1e-14);
    }

    #[test]
    fn bdf_step_reproduces_linear_solution() {
        // v' = 1 with exact nodal history stays on v = t
        let problem = OdeProblem::scalar(0.0, 1.0, |_, _| 1.0).unwrap();
        let mesh = TimeMesh::random(12, 1.0, 7, None).unwrap();
        for k in [2usize, 3] {
            let kernel = KernelTable::build(k, &mesh).unwrap();
            for n in k..=12 {
                let history: Vec<Vec<f64>> =
                    (n - k..n).map(|j| vec![mesh.node(j)]).collect();
                let (v, _) = bdf_step(&problem, &kernel, n, &history).unwrap();
                assert_abs_diff_eq!(v[0], mesh.node(n), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn bdf_step_checks_history_length() {
        let problem = model_problem();
        let mesh = TimeMesh::uniform(6, 1.0).unwrap();
        let kernel = KernelTable::build(2, &mesh).unwrap();
        assert!(matches!(
            bdf_step(&problem, &kernel, 3, &[vec![1.0]]),
            Err(Error::LengthMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn newton_divergence_is_reported() {
        // the residual reduces to a cube root, whose Newton iterates double
        // their distance from the root every step
        let problem = OdeProblem::scalar(0.3, 1.0, |_, v| {
            4.0 * (v - 0.3) - (v - 0.8).signum() * (v - 0.8).abs().cbrt()
        })
        .unwrap();
        let mesh = TimeMesh::uniform(4, 1.0).unwrap();
        let kernel = KernelTable::build(1, &mesh).unwrap();
        let err = bdf_step(&problem, &kernel, 1, &[vec![0.3]]).unwrap_err();
        assert!(
            matches!(err, Error::NewtonDivergence { .. } | Error::SingularJacobian { .. }),
            "unexpected error {err:?}"
        );
    }

    #[test]
    fn integrate_model_problem_converges_second_order() {
        let problem = model_problem();
        let exact = |t: f64| vec![(-t).exp()];
        let err = |n: usize| {
            let mesh = TimeMesh::uniform(n, 1.0).unwrap();
            max_error(&integrate(&problem, &mesh, 2).unwrap(), exact)
        };
        let ratio = err(40) / err(80);
        assert!((3.4..4.6).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn integrate_matches_reference_table_entry() {
        // graded mesh, gamma = 2, N = 40, two-step method
        let problem = model_problem();
        let mesh = TimeMesh::graded(40, 1.0, 2.0).unwrap();
        let traj = integrate(&problem, &mesh, 2).unwrap();
        let e = max_error(&traj, |t| vec![(-t).exp()]);
        assert_relative_eq!(e, 5.28e-4, max_relative = 0.05);
        assert_eq!(traj.values.len(), 41);
        assert_eq!(traj.newton_iterations.len(), 39);
        assert_eq!(traj.starter.method, STARTER_ID);
    }

    #[test]
    fn integrate_is_deterministic() {
        let problem = model_problem();
        let mesh = TimeMesh::random(50, 1.0, 5, None).unwrap();
        let a = integrate(&problem, &mesh, 3).unwrap();
        let b = integrate(&problem, &mesh, 3).unwrap();
        assert_eq!(a.values, b.values); // bit-identical
    }

    #[test]
    fn max_error_zero_on_exact_input() {
        let problem = model_problem();
        let mesh = TimeMesh::uniform(10, 1.0).unwrap();
        let mut traj = integrate(&problem, &mesh, 2).unwrap();
        for n in 0..=10 {
            traj.values[n] = vec![mesh.node(n).sin()];
        }
        assert_eq!(max_error(&traj, |t| vec![t.sin()]), 0.0);
    }

    #[test]
    fn convergence_order_basics() {
        assert_relative_eq!(convergence_order(2.0, 1.0, 2.0, 1.0).unwrap(), 1.0);
        assert_relative_eq!(
            convergence_order(5.28e-4, 1.34e-4, 1.0 / 40.0, 1.0 / 80.0).unwrap(),
            1.97,
            max_relative = 0.005
        );
        assert!(convergence_order(0.0, 1.0, 2.0, 1.0).is_err());
        assert!(convergence_order(1.0, -1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn perturbation_zero_epsilon_gives_zero_difference() {
        let problem = model_problem();
        let mesh = TimeMesh::graded(40, 1.0, 2.0).unwrap();
        for k in [2usize, 3] {
            let eps = vec![0.0; mesh.n() + 1 - k];
            let run = perturbed_run(&problem, &mesh, k, &eps).unwrap();
            assert!(run.max_diff() < 1e-12, "k = {k}: {}", run.max_diff());
        }
    }

    #[test]
    fn perturbation_bound_holds_for_two_step() {
        let problem = model_problem();
        // max step 1/40 <= 1/(4 L) = 1/8
        for mesh in [
            TimeMesh::uniform(40, 1.0).unwrap(),
            TimeMesh::graded(80, 1.0, 2.0).unwrap(),
            TimeMesh::random(60, 1.0, 9, None).unwrap(),
        ] {
            let eps = vec![1e-6; mesh.n() - 1];
            let run = perturbed_run(&problem, &mesh, 2, &eps).unwrap();
            assert!(run.bound_holds(), "bound violated on mesh N = {}", mesh.n());
            assert!(run.max_diff() > 0.0);
        }
    }

    #[test]
    fn perturbation_scales_linearly_for_linear_problems() {
        let problem = model_problem();
        let mesh = TimeMesh::graded(40, 1.0, 2.0).unwrap();
        let eps1 = vec![1e-6; 39];
        let eps2 = vec![2e-6; 39];
        let r1 = perturbed_run(&problem, &mesh, 2, &eps1).unwrap();
        let r2 = perturbed_run(&problem, &mesh, 2, &eps2).unwrap();
        // the solves leave eps-level absolute noise on 1e-6-sized
        // differences, so 1e-8 relative is the honest resolution
        for n in 2..=40 {
            if r1.diff_abs[n] > 1e-9 {
                assert_relative_eq!(r2.diff_abs[n] / r1.diff_abs[n], 2.0, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn perturbation_three_step_envelope() {
        let problem = model_problem();
        let mesh = TimeMesh::random_bounded(80, 1.0, 2.54, 13).unwrap();
        let eps = vec![1e-6; 78];
        let run = perturbed_run(&problem, &mesh, 3, &eps).unwrap();
        assert!(run.bound.iter().all(|b| b.is_finite()));
        assert!(run.bound_holds(), "envelope violated, max diff {}", run.max_diff());
    }

    #[test]
    fn perturbation_input_checks() {
        let problem = model_problem();
        let mesh = TimeMesh::uniform(10, 1.0).unwrap();
        assert!(matches!(
            perturbed_run(&problem, &mesh, 1, &[]),
            Err(Error::UnsupportedOrder(1))
        ));
        assert!(matches!(
            perturbed_run(&problem, &mesh, 2, &[0.0; 3]),
            Err(Error::LengthMismatch { expected: 9, got: 3 })
        ));
        let no_lipschitz = OdeProblem::scalar(1.0, 1.0, |_, v| -v).unwrap();
        assert!(perturbed_run(&no_lipschitz, &mesh, 2, &[1e-6; 9]).is_err());
    }

    #[test]
    fn csv_dumps_have_expected_shape() {
        let problem = model_problem();
        let mesh = TimeMesh::uniform(4, 1.0).unwrap();
        let traj = integrate(&problem, &mesh, 2).unwrap();
        let mut buf = Vec::new();
        traj.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,t_n,v_1");
        assert_eq!(lines.len(), 6);

        let run = perturbed_run(&problem, &mesh, 2, &[1e-6; 3]).unwrap();
        let mut buf = Vec::new();
        run.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n,t_n,vtilde_abs,bound");
        assert!(lines[1].ends_with(',') && lines[2].ends_with(','));
        assert!(!lines[3].ends_with(','));
    }

    #[test]
    fn vector_problem_integrates() {
        // two uncoupled copies of the model problem
        let problem = OdeProblem::new(vec![1.0, 1.0], 1.0, |t, v| {
            vec![2.0 * v[0] - 3.0 * (-t).exp(), 2.0 * v[1] - 3.0 * (-t).exp()]
        })
        .unwrap();
        let mesh = TimeMesh::graded(40, 1.0, 2.0).unwrap();
        let traj = integrate(&problem, &mesh, 3).unwrap();
        let e = max_error(&traj, |t| vec![(-t).exp(), (-t).exp()]);
        assert!(e < 1e-4, "error {e}");
        // FD-Jacobian path must agree with the scalar analytic-Jacobian run
        let scalar = integrate(&model_problem(), &mesh, 3).unwrap();
        for n in 0..=40 {
            assert_abs_diff_eq!(traj.values[n][0], scalar.values[n][0], epsilon = 1e-10);
            assert_eq!(traj.values[n][0], traj.values[n][1]);
        }
    }
}
