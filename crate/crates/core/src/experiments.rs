//! Reproducible experiment drivers: convergence tables on graded and random
//! meshes for the scalar test equation, and the kernel-decay figure data.
//!
//! Every report echoes enough configuration (method, mesh family, seed, PRNG
//! name, solver tolerances, starter id) to re-run bit-identically. CSV output
//! carries the configuration as `#` comment lines and no timestamp, so a
//! fixed seed produces identical bytes; the JSON form adds a timestamp.
//!
//! Reference digits for the graded tables and the admissible order windows
//! for random meshes are bundled in `data/reference_tables.json`, consumed by
//! [`check_graded`] / [`check_random`].

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{
    convergence_order, integrate, max_error, OdeProblem, NEWTON_ATOL, NEWTON_BUDGET,
    NEWTON_RTOL, STARTER_ID,
};
use crate::kernels::KernelTable;
use crate::mesh::{TimeMesh, GENERATOR_NAME};
use crate::stability::threshold_roots;

const REFERENCE_TABLES: &str = include_str!("../data/reference_tables.json");

/// Human-readable statement of the test equation.
pub const MODEL_DESCRIPTION: &str = "v' = 2v - 3 exp(-t), v(0) = 1 on [0, 1]";

/// The scalar test equation `v' = 2v - 3 exp(-t)`, `v(0) = 1`, on `[0, 1]`,
/// whose exact solution is `exp(-t)`; Lipschitz constant 2.
pub fn model_problem() -> OdeProblem {
    OdeProblem::scalar(1.0, 1.0, |t, v| 2.0 * v - 3.0 * (-t).exp())
        .expect("valid model data")
        .with_jacobian(|_, _| vec![2.0])
        .with_lipschitz(2.0)
        .expect("positive Lipschitz constant")
}

/// Exact solution of the test equation.
pub fn model_exact(t: f64) -> f64 {
    (-t).exp()
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn method_name(k: usize) -> Result<&'static str> {
    match k {
        2 => Ok("bdf2"),
        3 => Ok("bdf3"),
        other => Err(Error::UnsupportedOrder(other)),
    }
}

fn validate_levels(levels: &[usize]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("need at least one mesh level".into()));
    }
    if levels[0] < 4 {
        return Err(Error::InvalidArgument(format!(
            "coarsest level {} is too small to start the scheme",
            levels[0]
        )));
    }
    for pair in levels.windows(2) {
        if pair[1] != 2 * pair[0] {
            return Err(Error::InvalidArgument(format!(
                "levels must double: {} does not follow {}",
                pair[1], pair[0]
            )));
        }
    }
    Ok(())
}

/// Mesh family a table was generated on.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MeshFamily {
    Graded { gamma: f64 },
    Random { seed: u64 },
}

/// One refinement level of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub n: usize,
    /// Maximum step size on the level's mesh.
    pub tau: f64,
    /// Maximum nodal error against the exact solution.
    pub error: f64,
    /// Observed order from the previous level (`None` on the coarsest one).
    pub order: Option<f64>,
    pub r_max: f64,
    /// `tau / tau_1`: coarsest-to-first step ratio of the mesh.
    pub tau_over_tau1: f64,
    /// Number of ratios at or above the three-step threshold (random
    /// three-step tables only).
    pub n1: Option<usize>,
}

/// A convergence table together with the configuration that produced it.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub method: String,
    pub family: MeshFamily,
    pub levels: Vec<usize>,
    pub model: String,
    pub starter: String,
    pub newton_atol: f64,
    pub newton_rtol: f64,
    pub newton_budget: usize,
    /// PRNG provenance; present for random families.
    pub generator: Option<String>,
    /// Step-ratio threshold used for ratio diagnostics.
    pub ratio_threshold: f64,
    pub rows: Vec<ExperimentRow>,
    /// Levels that failed to integrate, with the reason; such rows are
    /// absent from `rows` and flagged in the CSV.
    pub failures: Vec<String>,
    /// Unix seconds at assembly time (JSON only; never written to CSV).
    pub timestamp: u64,
}

impl ExperimentReport {
    /// Writes the table as CSV: configuration as `#` comments, then one row
    /// per level. Deterministic for a fixed configuration.
    pub fn dump_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# model = {}", self.model)?;
        writeln!(w, "# method = {}", self.method)?;
        match &self.family {
            MeshFamily::Graded { gamma } => writeln!(w, "# family = graded, gamma = {gamma}")?,
            MeshFamily::Random { seed } => writeln!(w, "# family = random, seed = {seed}")?,
        }
        if let Some(gen) = &self.generator {
            writeln!(w, "# generator = {gen}")?;
        }
        writeln!(w, "# starter = {}", self.starter)?;
        writeln!(
            w,
            "# newton = atol {:e}, rtol {:e}, budget {}",
            self.newton_atol, self.newton_rtol, self.newton_budget
        )?;
        writeln!(w, "# ratio_threshold = {:.16e}", self.ratio_threshold)?;
        for failure in &self.failures {
            writeln!(w, "# failed: {failure}")?;
        }
        let with_n1 = self.rows.iter().any(|r| r.n1.is_some());
        if with_n1 {
            writeln!(w, "N,tau_N,e_N,order,r_max,N_1,tau_over_tau1")?;
        } else {
            writeln!(w, "N,tau_N,e_N,order,r_max,tau_over_tau1")?;
        }
        for row in &self.rows {
            let order = row.order.map_or(String::new(), |o| format!("{o:.16e}"));
            if with_n1 {
                writeln!(
                    w,
                    "{},{:.16e},{:.16e},{order},{:.16e},{},{:.16e}",
                    row.n,
                    row.tau,
                    row.error,
                    row.r_max,
                    row.n1.unwrap_or(0),
                    row.tau_over_tau1
                )?;
            } else {
                writeln!(
                    w,
                    "{},{:.16e},{:.16e},{order},{:.16e},{:.16e}",
                    row.n, row.tau, row.error, row.r_max, row.tau_over_tau1
                )?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn run_level(problem: &OdeProblem, mesh: &TimeMesh, k: usize) -> Result<f64> {
    let traj = integrate(problem, mesh, k)?;
    Ok(max_error(&traj, |t| vec![model_exact(t)]))
}

fn assemble_report(
    k: usize,
    family: MeshFamily,
    levels: &[usize],
    meshes: impl Iterator<Item = Result<TimeMesh>>,
    with_n1: bool,
) -> Result<ExperimentReport> {
    let method = method_name(k)?;
    validate_levels(levels)?;
    let problem = model_problem();
    let r3 = threshold_roots().r3;

    let mut rows = Vec::with_capacity(levels.len());
    let mut failures = Vec::new();
    let mut prev: Option<(f64, f64)> = None; // (tau, error) of last good level
    for (&n, mesh) in levels.iter().zip(meshes) {
        let mesh = mesh?;
        match run_level(&problem, &mesh, k) {
            Ok(error) => {
                let stats = mesh.stats(r3);
                let order = match prev {
                    Some((tau_c, e_c)) => {
                        Some(convergence_order(e_c, error, tau_c, stats.max_step)?)
                    }
                    None => None,
                };
                rows.push(ExperimentRow {
                    n,
                    tau: stats.max_step,
                    error,
                    order,
                    r_max: stats.max_ratio,
                    tau_over_tau1: stats.first_step_ratio,
                    n1: with_n1.then_some(stats.violation_count),
                });
                prev = Some((stats.max_step, error));
            }
            Err(e) => failures.push(format!("N = {n}: {e}")),
        }
    }

    let generator = match family {
        MeshFamily::Random { .. } => Some(GENERATOR_NAME.to_string()),
        MeshFamily::Graded { .. } => None,
    };
    Ok(ExperimentReport {
        method: method.to_string(),
        family,
        levels: levels.to_vec(),
        model: MODEL_DESCRIPTION.to_string(),
        starter: STARTER_ID.to_string(),
        newton_atol: NEWTON_ATOL,
        newton_rtol: NEWTON_RTOL,
        newton_budget: NEWTON_BUDGET,
        generator,
        ratio_threshold: threshold_roots().r3,
        rows,
        failures,
        timestamp: now_unix(),
    })
}

/// Convergence table of the k-step scheme on graded meshes
/// `t_j = (j/N)^gamma`, one row per level.
pub fn table_graded(k: usize, gamma: f64, levels: &[usize]) -> Result<ExperimentReport> {
    assemble_report(
        k,
        MeshFamily::Graded { gamma },
        levels,
        levels.iter().map(|&n| TimeMesh::graded(n, 1.0, gamma)),
        false,
    )
}

/// Convergence table on seeded random meshes; level `i` draws from
/// `seed + i`, so a base seed pins the whole table.
pub fn table_random(k: usize, levels: &[usize], seed: u64) -> Result<ExperimentReport> {
    assemble_report(
        k,
        MeshFamily::Random { seed },
        levels,
        levels
            .iter()
            .enumerate()
            .map(|(i, &n)| TimeMesh::random(n, 1.0, seed + i as u64, None)),
        k == 3,
    )
}

/// Step-ratio pattern for the kernel-decay figure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DocPattern {
    /// `r_j = 1`: the uniform mesh.
    Uniform,
    /// `r_j = scale * eps_j` with `eps_j` uniform on `(0, 1)`.
    ScaledRandom { scale: f64 },
}

/// Three-step kernel magnitudes `theta^(n)_j`, `j = 0..n-3`, on one mesh,
/// plus ratio diagnostics for the scaled-random patterns.
#[derive(Debug, Clone, Serialize)]
pub struct FigureDoc {
    pub pattern: String,
    pub scale: Option<f64>,
    pub n: usize,
    pub seed: Option<u64>,
    pub generator: Option<String>,
    pub ratio_threshold: f64,
    /// Fraction of ratios at or above the threshold (scaled-random only).
    pub violation_fraction: Option<f64>,
    pub ratios: Vec<f64>,
    /// Kernel values by offset `j`.
    pub thetas: Vec<f64>,
    pub timestamp: u64,
}

impl FigureDoc {
    pub fn dump_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# pattern = {}", self.pattern)?;
        if let Some(scale) = self.scale {
            writeln!(w, "# scale = {scale}")?;
        }
        writeln!(w, "# n = {}", self.n)?;
        if let Some(seed) = self.seed {
            writeln!(w, "# seed = {seed}")?;
        }
        if let Some(gen) = &self.generator {
            writeln!(w, "# generator = {gen}")?;
        }
        writeln!(w, "# ratio_threshold = {:.16e}", self.ratio_threshold)?;
        if let Some(fraction) = self.violation_fraction {
            writeln!(w, "# violation_fraction = {fraction:.16e}")?;
        }
        writeln!(w, "j,theta")?;
        for (j, theta) in self.thetas.iter().enumerate() {
            writeln!(w, "{j},{theta:.16e}")?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("figure serializes")
    }
}

/// Computes the three-step kernel row at level `n` (so offsets `0..n-3`) on
/// a mesh with the requested ratio pattern.
pub fn figure_doc(pattern: DocPattern, n: usize, seed: u64) -> Result<FigureDoc> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "kernel row needs n >= 3, got {n}"
        )));
    }
    let r3 = threshold_roots().r3;
    let (mesh, name, scale, used_seed) = match pattern {
        DocPattern::Uniform => (TimeMesh::uniform(n, 1.0)?, "uniform", None, None),
        DocPattern::ScaledRandom { scale } => (
            TimeMesh::ratio_pattern(n, 1.0, scale, seed)?,
            "scaled-random",
            Some(scale),
            Some(seed),
        ),
    };
    let doc = crate::kernels::DocTable::build(&KernelTable::build(3, &mesh)?);
    let thetas = doc.row(n).to_vec();
    let violation_fraction = match pattern {
        DocPattern::Uniform => None,
        DocPattern::ScaledRandom { .. } => {
            Some(mesh.stats(r3).violation_count as f64 / (n - 1) as f64)
        }
    };
    Ok(FigureDoc {
        pattern: name.to_string(),
        scale,
        n,
        seed: used_seed,
        generator: used_seed.map(|_| GENERATOR_NAME.to_string()),
        ratio_threshold: r3,
        violation_fraction,
        ratios: mesh.ratios().to_vec(),
        thetas,
        timestamp: now_unix(),
    })
}

#[derive(Deserialize)]
struct GradedExpectation {
    error_rtol: f64,
    error_rtol_tiny: f64,
    tiny_threshold: f64,
    final_order: f64,
    final_order_tol: f64,
    tables: BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct RandomExpectation {
    order_range: (f64, f64),
}

#[derive(Deserialize)]
struct Expectations {
    levels: Vec<usize>,
    graded: BTreeMap<String, GradedExpectation>,
    random: BTreeMap<String, RandomExpectation>,
}

fn expectations() -> Expectations {
    serde_json::from_str(REFERENCE_TABLES).expect("bundled reference tables parse")
}

fn gamma_key(gamma: f64) -> String {
    if gamma.fract() == 0.0 {
        format!("{}", gamma as i64)
    } else {
        format!("{gamma}")
    }
}

/// Grades a graded-mesh table against the bundled reference digits: every
/// error within the relative tolerance (looser below the tiny-error
/// threshold, where roundoff shows) and, when the run reaches the finest
/// reference level, the final observed order inside its window.
///
/// Returns the list of violations (empty means the table checks out). The
/// run must use a reference gamma and a prefix of the reference levels.
pub fn check_graded(report: &ExperimentReport) -> Result<Vec<String>> {
    let MeshFamily::Graded { gamma } = report.family else {
        return Err(Error::InvalidArgument("not a graded-mesh table".into()));
    };
    let exp = expectations();
    let method = exp
        .graded
        .get(&report.method)
        .ok_or_else(|| Error::InvalidArgument(format!("no digits for {}", report.method)))?;
    let reference = method.tables.get(&gamma_key(gamma)).ok_or_else(|| {
        Error::InvalidArgument(format!("no reference digits for gamma = {gamma}"))
    })?;
    if report.levels.len() > exp.levels.len()
        || report.levels.iter().zip(&exp.levels).any(|(a, b)| a != b)
    {
        return Err(Error::InvalidArgument(format!(
            "reference digits cover levels {:?} (prefixes allowed), got {:?}",
            exp.levels, report.levels
        )));
    }

    let mut violations: Vec<String> = report.failures.iter().map(|f| f.clone()).collect();
    for (row, &reference) in report.rows.iter().zip(reference) {
        let rtol = if reference < method.tiny_threshold {
            method.error_rtol_tiny
        } else {
            method.error_rtol
        };
        let rel = (row.error - reference).abs() / reference;
        if !(rel <= rtol) {
            violations.push(format!(
                "N = {}: e = {:.3e} deviates from reference {:.3e} by {:.1}% (> {:.0}%)",
                row.n,
                row.error,
                reference,
                100.0 * rel,
                100.0 * rtol
            ));
        }
    }
    if report.levels.len() == exp.levels.len() {
        match report.rows.last().and_then(|r| r.order) {
            Some(order) if (order - method.final_order).abs() <= method.final_order_tol => {}
            Some(order) => violations.push(format!(
                "final order {order:.4} outside {} +/- {}",
                method.final_order, method.final_order_tol
            )),
            None => violations.push("final level missing or without an order".into()),
        }
    }
    Ok(violations)
}

/// Grades a random-mesh table: every observed order must fall inside the
/// bundled admissible window (digits are seed-dependent and not checked).
pub fn check_random(report: &ExperimentReport) -> Result<Vec<String>> {
    if !matches!(report.family, MeshFamily::Random { .. }) {
        return Err(Error::InvalidArgument("not a random-mesh table".into()));
    }
    let exp = expectations();
    let method = exp
        .random
        .get(&report.method)
        .ok_or_else(|| Error::InvalidArgument(format!("no window for {}", report.method)))?;
    let (lo, hi) = method.order_range;

    let mut violations: Vec<String> = report.failures.iter().map(|f| f.clone()).collect();
    for row in &report.rows {
        if !row.error.is_finite() {
            violations.push(format!("N = {}: error is not finite", row.n));
        }
        if let Some(order) = row.order {
            if !(lo..=hi).contains(&order) {
                violations.push(format!(
                    "N = {}: order {order:.4} outside [{lo}, {hi}]",
                    row.n
                ));
            }
        }
    }
    Ok(violations)
}
