//! Time meshes: uniform, graded, and random grids over `[0, T]` together with
//! the step-ratio statistics the convergence experiments report.
//!
//! Index conventions follow the time-stepping literature: nodes are
//! `t_0 < t_1 < ... < t_N`, steps are `tau_k = t_k - t_{k-1}` for
//! `1 <= k <= N`, and ratios are `r_k = tau_k / tau_{k-1}` for `k >= 2` with
//! the convention `r_1 = 0`.

use std::io::Write;

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Name of the pseudorandom source used by all seeded constructors, recorded
/// in experiment reports so runs can be reproduced exactly.
pub const GENERATOR_NAME: &str = "ChaCha8(seed_from_u64) + Open01";

/// Number of full-mesh redraws [`TimeMesh::random`] attempts before giving up
/// on a ratio cap.
pub const REDRAW_BUDGET: usize = 10_000;

/// Lower edge of the pre-normalization step band used by
/// [`TimeMesh::random_bounded`].
const BAND_FLOOR: f64 = 1e-3;

/// A fixed, strictly positive partition of `[0, T]`.
///
/// The struct stores nodes, steps, and ratios redundantly; the constructors
/// guarantee they stay consistent (ratios are always derived from the stored
/// steps). Meshes are immutable once built and cheap to clone.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMesh {
    nodes: Vec<f64>,
    steps: Vec<f64>,
    ratios: Vec<f64>,
    horizon: f64,
}

/// Aggregate step statistics of one mesh, as reported in the experiment
/// tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeshStats {
    /// Maximum step size `tau = max_k tau_k`.
    pub max_step: f64,
    /// Maximum step ratio `r_max = max_{k>=2} r_k` (zero for `N = 1`).
    pub max_ratio: f64,
    /// `tau / tau_1`: the maximum step relative to the first one.
    pub first_step_ratio: f64,
    /// Number of levels whose ratio meets or exceeds the queried threshold.
    pub violation_count: usize,
}

impl TimeMesh {
    /// Uniform mesh: `tau_k = T/N` for every step.
    pub fn uniform(n: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("mesh needs at least one step".into()));
        }
        check_horizon(horizon)?;
        let step = horizon / n as f64;
        let mut nodes: Vec<f64> = (0..=n).map(|k| k as f64 * step).collect();
        nodes[n] = horizon;
        let steps = vec![step; n];
        Ok(Self::assemble(nodes, steps, horizon))
    }

    /// Graded mesh `t_k = T (k/N)^gamma`, concentrating steps near `t = 0`.
    ///
    /// The maximum ratio is attained at the second step, `r_2 = 2^gamma - 1`,
    /// and ratios decrease monotonically toward 1. Requires `gamma >= 1`;
    /// `gamma = 1` reduces to the uniform mesh.
    pub fn graded(n: usize, horizon: f64, gamma: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("graded mesh needs at least two steps".into()));
        }
        check_horizon(horizon)?;
        if !(gamma >= 1.0) || !gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grading exponent must satisfy gamma >= 1, got {gamma}"
            )));
        }
        let nodes: Vec<f64> = (0..=n)
            .map(|k| horizon * (k as f64 / n as f64).powf(gamma))
            .collect();
        let steps: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self::assemble(nodes, steps, horizon))
    }

    /// Random mesh with steps `tau_k = T eps_k / sum(eps)` for i.i.d.
    /// `eps_k` uniform on `(0, 1)`.
    ///
    /// With `ratio_cap = Some(c)` the whole mesh is redrawn until every ratio
    /// is below `c`, up to [`REDRAW_BUDGET`] attempts. The acceptance
    /// probability of a single draw decays geometrically in `n`, so caps are
    /// practical only for short meshes; see [`TimeMesh::random_bounded`] for a
    /// capped construction that scales to any length.
    pub fn random(n: usize, horizon: f64, seed: u64, ratio_cap: Option<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("random mesh needs at least two steps".into()));
        }
        check_horizon(horizon)?;
        if let Some(cap) = ratio_cap {
            if !(cap > 0.0) {
                return Err(Error::InvalidArgument(format!("ratio cap must be positive, got {cap}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let budget = if ratio_cap.is_some() { REDRAW_BUDGET } else { 1 };
        for _ in 0..budget {
            let eps: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Open01)).collect();
            let total: f64 = eps.iter().sum();
            let steps: Vec<f64> = eps.iter().map(|e| horizon * e / total).collect();
            let capped_ok = match ratio_cap {
                Some(cap) => steps.windows(2).all(|w| w[1] / w[0] < cap),
                None => true,
            };
            if capped_ok {
                return Ok(Self::from_positive_steps(steps, horizon));
            }
        }
        Err(Error::CapUnsatisfiable {
            cap: ratio_cap.unwrap_or(f64::NAN),
            budget: REDRAW_BUDGET,
        })
    }

    /// Mesh prescribed through its ratio sequence: `r_k = scale * eps_k` for
    /// `k >= 2` with `eps_k` uniform on `(0, 1)`, then steps normalized to
    /// sum to `T`.
    ///
    /// This is the construction behind the kernel-figure step-ratio patterns
    /// (`scale` equal to the decay threshold, or 3 for the deliberately
    /// violating pattern). The multiplicative step chain drifts over long
    /// meshes, so keep `n` modest (a few hundred); the kernel and certificate
    /// machinery only consumes the ratios, which stay exact.
    pub fn ratio_pattern(n: usize, horizon: f64, scale: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("ratio pattern needs at least two steps".into()));
        }
        check_horizon(horizon)?;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidArgument(format!("ratio scale must be positive, got {scale}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut steps = Vec::with_capacity(n);
        steps.push(1.0);
        for k in 1..n {
            let r = scale * rng.sample::<f64, _>(Open01);
            steps.push(steps[k - 1] * r);
        }
        let total: f64 = steps.iter().sum();
        for s in &mut steps {
            *s *= horizon / total;
        }
        if steps.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ratio pattern with scale {scale} underflowed at n = {n}; use a shorter mesh"
            )));
        }
        Ok(Self::from_positive_steps(steps, horizon))
    }

    /// Random mesh whose ratios all stay strictly below `cap` (`cap > 1`) and
    /// whose pre-normalization steps stay inside a fixed band, so arbitrarily
    /// long meshes remain well conditioned.
    ///
    /// Each auxiliary draw is uniform on the window
    /// `(max(eps_{k-1}/cap, floor), min(1, cap * eps_{k-1}))`, which keeps
    /// `r_k < cap` by construction without the rejection cost of
    /// [`TimeMesh::random`]. Used by the perturbation experiments, where a
    /// capped mesh of several hundred steps must still be integrable.
    pub fn random_bounded(n: usize, horizon: f64, cap: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument("random mesh needs at least two steps".into()));
        }
        check_horizon(horizon)?;
        if !(cap > 1.0) || !cap.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "band construction needs cap > 1, got {cap}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut eps = Vec::with_capacity(n);
        eps.push(BAND_FLOOR + (1.0 - BAND_FLOOR) * rng.sample::<f64, _>(Open01));
        for k in 1..n {
            let prev: f64 = eps[k - 1];
            let lo = (prev / cap).max(BAND_FLOOR);
            let hi = (cap * prev).min(1.0);
            eps.push(lo + (hi - lo) * rng.sample::<f64, _>(Open01));
        }
        let total: f64 = eps.iter().sum();
        let steps: Vec<f64> = eps.iter().map(|e| horizon * e / total).collect();
        Ok(Self::from_positive_steps(steps, horizon))
    }

    /// Builds a mesh from explicit step sizes; the horizon is their sum.
    pub fn from_steps(steps: Vec<f64>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument("mesh needs at least one step".into()));
        }
        if steps.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("every step must be positive and finite".into()));
        }
        let horizon: f64 = steps.iter().sum();
        Ok(Self::from_positive_steps(steps, horizon))
    }

    fn from_positive_steps(steps: Vec<f64>, horizon: f64) -> Self {
        // Compensated summation keeps node drift at one rounding of the
        // horizon even for thousands of wildly different steps.
        let mut nodes = Vec::with_capacity(steps.len() + 1);
        nodes.push(0.0);
        let (mut sum, mut carry) = (0.0f64, 0.0f64);
        for &s in &steps {
            let y = s - carry;
            let t = sum + y;
            carry = (t - sum) - y;
            sum = t;
            nodes.push(sum);
        }
        Self::assemble(nodes, steps, horizon)
    }

    fn assemble(nodes: Vec<f64>, steps: Vec<f64>, horizon: f64) -> Self {
        let mut ratios = Vec::with_capacity(steps.len());
        ratios.push(0.0); // r_1 = 0 by convention
        for k in 1..steps.len() {
            ratios.push(steps[k] / steps[k - 1]);
        }
        TimeMesh { nodes, steps, ratios, horizon }
    }

    /// Number of steps `N`.
    pub fn n(&self) -> usize {
        self.steps.len()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Node `t_k` for `0 <= k <= N`.
    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Step `tau_k` for `1 <= k <= N`.
    pub fn tau(&self, k: usize) -> f64 {
        self.steps[k - 1]
    }

    /// Ratio `r_k` for `1 <= k <= N`; `ratio(1)` is 0 by convention.
    pub fn ratio(&self, k: usize) -> f64 {
        self.ratios[k - 1]
    }

    /// All nodes `t_0..t_N`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// All steps `tau_1..tau_N`.
    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// All ratios `r_1..r_N` (first entry 0).
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn max_step(&self) -> f64 {
        self.steps.iter().cloned().fold(0.0, f64::max)
    }

    /// Step statistics; `threshold` feeds the violation count
    /// `N_1 = #{k : r_k >= threshold}`.
    pub fn stats(&self, threshold: f64) -> MeshStats {
        let max_step = self.max_step();
        let max_ratio = self.ratios[1..].iter().cloned().fold(0.0, f64::max);
        MeshStats {
            max_step,
            max_ratio,
            first_step_ratio: max_step / self.steps[0],
            violation_count: self.ratios[1..].iter().filter(|r| **r >= threshold).count(),
        }
    }

    /// Writes the mesh as CSV `k,t_k,tau_k,r_k` with 17 significant digits.
    /// The `k = 0` row leaves the step and ratio fields empty.
    pub fn dump_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "k,t_k,tau_k,r_k")?;
        writeln!(w, "0,{:.16e},,", self.nodes[0])?;
        for k in 1..=self.n() {
            writeln!(w, "{k},{:.16e},{:.16e},{:.16e}", self.nodes[k], self.tau(k), self.ratio(k))?;
        }
        Ok(())
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    Ok(())
}
