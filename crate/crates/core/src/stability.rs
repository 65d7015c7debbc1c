//! Companion-matrix machinery for the three-step method: the auxiliary
//! ratio functions `alpha` and `beta`, elliptic `H`-norms, step-ratio
//! threshold roots, grid verification of the analytical lemmas, and decay
//! certificates for DOC kernel tables.
//!
//! The modified DOC kernels obey a two-term recursion whose state propagates
//! through companion matrices `A_m = ((alpha_m, -beta_m), (1, 0))` with
//! `alpha_m = alpha(r_m, r_{m-1})` and `beta_m = beta(r_m, r_{m-1})`. Kernel
//! decay therefore reduces to contractivity of the `A_m` in a suitable norm;
//! the elliptic norm induced by `H = ((mu, conj(mu)), (1, 1))` admits the
//! closed form implemented in [`h_norm`], and contractivity is equivalent to
//! the complex parameter `mu` lying inside a family of disks indexed by the
//! two adjacent step ratios ([`disk_condition`]). Everything here works on
//! plain `f64` pairs; no complex-number type appears in the public surface.

use std::io::Write;

use crate::error::{Error, Result};
use crate::kernels::{d_coeff, DocTable};
use crate::mesh::TimeMesh;

/// Ratio function `alpha(x, y) = -d_1(x, y) / d_0(x, y)` in closed rational
/// form. Strictly increasing in both arguments for `x, y > 0`.
pub fn alpha(x: f64, y: f64) -> Result<f64> {
    check_ratios(x, y)?;
    Ok(alpha_raw(x, y))
}

/// Ratio function `beta(x, y) = d_2(x, y) / d_0(x, y)` in closed rational
/// form. Strictly increasing in both arguments for `x, y > 0`.
pub fn beta(x: f64, y: f64) -> Result<f64> {
    check_ratios(x, y)?;
    Ok(beta_raw(x, y))
}

fn check_ratios(x: f64, y: f64) -> Result<()> {
    if !(x >= 0.0) || !(y >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step ratios must be nonnegative, got x = {x}, y = {y}"
        )));
    }
    Ok(())
}

/// Common denominator factor `3x^2 y + 4xy + 2x + y + 1` of the ratio
/// functions; at least 1 on the admissible domain.
fn q_factor(x: f64, y: f64) -> f64 {
    3.0 * x * x * y + 4.0 * x * y + 2.0 * x + y + 1.0
}

fn alpha_raw(x: f64, y: f64) -> f64 {
    let num = x * (x * x * y * y + 4.0 * x * y * y + 3.0 * y * y + 2.0 * x * y + 3.0 * y + 1.0);
    num / ((y + 1.0) * q_factor(x, y))
}

fn beta_raw(x: f64, y: f64) -> f64 {
    x * (x + 1.0) * (x + 1.0) * y * y / ((y + 1.0) * q_factor(x, y))
}

/// Closed-form gradient `(d alpha/dx, d alpha/dy)`; both components are
/// strictly positive for `x, y > 0`.
pub fn alpha_grad(x: f64, y: f64) -> (f64, f64) {
    let q = q_factor(x, y);
    let dx = ((x + 1.0).powi(2) * (3.0 * x * x + 2.0 * x + 3.0) * y.powi(3)
        + 2.0 * (2.0 * x.powi(3) + 5.0 * x * x + 6.0 * x + 3.0) * y * y
        + (x + 2.0).powi(2) * y
        + 1.0)
        / ((y + 1.0) * q * q);
    let dy = x * (x + 1.0).powi(2) * (x * y + y + 1.0) * (3.0 * x * y + 3.0 * y + 1.0)
        / ((y + 1.0).powi(2) * q * q);
    (dx, dy)
}

/// Closed-form gradient `(d beta/dx, d beta/dy)`; both components are
/// strictly positive for `x, y > 0`.
pub fn beta_grad(x: f64, y: f64) -> (f64, f64) {
    let q = q_factor(x, y);
    let dx = (x + 1.0)
        * y
        * y
        * (3.0 * x.powi(3) * y + 5.0 * x * x * y + 4.0 * x * x + 3.0 * x * y + 3.0 * x + y + 1.0)
        / ((y + 1.0) * q * q);
    let dy = x * (x + 1.0).powi(2) * y * (3.0 * x * x * y + 6.0 * x * y + 4.0 * x + 2.0 * y + 2.0)
        / ((y + 1.0).powi(2) * q * q);
    (dx, dy)
}

/// The 2x2 companion matrix `((alpha, -beta), (1, 0))` driving the modified
/// DOC recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Companion2x2 {
    alpha: f64,
    beta: f64,
}

impl Companion2x2 {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Companion2x2 { alpha, beta }
    }

    /// Companion matrix of the step-ratio pair `(x, y)`.
    pub fn from_ratios(x: f64, y: f64) -> Result<Self> {
        check_ratios(x, y)?;
        Ok(Companion2x2 { alpha: alpha_raw(x, y), beta: beta_raw(x, y) })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Applies the matrix to a state vector `(u, v)`.
    pub fn apply(&self, state: [f64; 2]) -> [f64; 2] {
        [self.alpha * state[0] - self.beta * state[1], state[0]]
    }
}

/// A complex norm parameter `mu` (with `Im(mu) != 0`) and the transform
/// `H = ((mu, conj(mu)), (1, 1))` it induces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HNormConfig {
    re: f64,
    im: f64,
}

impl HNormConfig {
    pub fn new(re: f64, im: f64) -> Result<Self> {
        if im == 0.0 || !re.is_finite() || !im.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "norm parameter must have nonzero imaginary part, got {re} + {im}i"
            )));
        }
        Ok(HNormConfig { re, im })
    }

    /// The canonical parameter `mu* = 1/2 + i/2` used by the decay analysis.
    pub fn mu_star() -> Self {
        HNormConfig { re: 0.5, im: 0.5 }
    }

    pub fn re(&self) -> f64 {
        self.re
    }

    pub fn im(&self) -> f64 {
        self.im
    }

    /// `max`-norm of `H` itself: `max(2|mu|, 2)`.
    pub fn h_inf_norm(&self) -> f64 {
        let modulus = (self.re * self.re + self.im * self.im).sqrt();
        2.0 * modulus.max(1.0)
    }

    /// `max`-norm of `H^{-1}`: `(1 + |mu|) / (2 |Im(mu)|)`.
    pub fn h_inv_inf_norm(&self) -> f64 {
        let modulus = (self.re * self.re + self.im * self.im).sqrt();
        (1.0 + modulus) / (2.0 * self.im.abs())
    }
}

/// Elliptic norm `||A||_{H,inf}` of a companion matrix: the induced max-norm
/// of `H^{-1} A H`, evaluated through its closed form
/// `|w|/|mu - conj(mu)| + sqrt(beta + |w|^2/|mu - conj(mu)|^2)` with
/// `w = mu^2 - alpha mu + beta`.
pub fn h_norm(a: &Companion2x2, mu: &HNormConfig) -> f64 {
    let (re, im) = (mu.re, mu.im);
    let w_re = re * re - im * im - a.alpha * re + a.beta;
    let w_im = 2.0 * re * im - a.alpha * im;
    let q = (w_re * w_re + w_im * w_im).sqrt() / (2.0 * im.abs());
    q + (a.beta + q * q).sqrt()
}

/// Degenerate-parameter norm `||A||_{H_0,inf} = max(alpha, 1 - alpha +
/// 2 beta)`; below 1 exactly when `2 beta < alpha < 1`.
pub fn h0_norm(a: &Companion2x2) -> f64 {
    a.alpha.max(1.0 - a.alpha + 2.0 * a.beta)
}

/// Moduli of the two eigenvalues (roots of `lambda^2 - alpha lambda + beta`),
/// largest first. A complex pair shares the modulus `sqrt(beta)`.
pub fn eigen_moduli(a: &Companion2x2) -> (f64, f64) {
    let disc = a.alpha * a.alpha - 4.0 * a.beta;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let l1 = 0.5 * (a.alpha + s);
        let l2 = 0.5 * (a.alpha - s);
        let (m1, m2) = (l1.abs(), l2.abs());
        (m1.max(m2), m1.min(m2))
    } else {
        let m = a.beta.sqrt();
        (m, m)
    }
}

/// Signed margin of `mu` against the disk attached to the ratio pair
/// `(x, y)`: `(1 - beta)/2 - |mu - alpha/2 - (i/2) sqrt((1+beta)^2 -
/// alpha^2)|`.
///
/// Positive exactly when `mu` lies strictly inside the disk, which is
/// equivalent to `||A(x, y)||_{H,inf} < 1` for the norm induced by `mu`.
/// Callers must supply `x, y >= 0` (the radicand is then positive).
///
/// The norm is invariant under conjugation of `mu`, so a parameter in the
/// lower half-plane is reflected onto the disk's half-plane before the
/// distance is taken.
pub fn disk_condition(mu: &HNormConfig, x: f64, y: f64) -> f64 {
    let a = alpha_raw(x, y);
    let b = beta_raw(x, y);
    let center_im = 0.5 * ((1.0 + b) * (1.0 + b) - a * a).sqrt();
    let dx = mu.re - 0.5 * a;
    let dy = mu.im.abs() - center_im;
    0.5 * (1.0 - b) - (dx * dx + dy * dy).sqrt()
}

/// `R^6 + R^5 - 4R^4 - 8R^3 - 10R^2 - 6R - 2`, whose unique positive root is
/// the kernel-decay threshold.
pub fn poly_r3(r: f64) -> f64 {
    ((((((r + 1.0) * r - 4.0) * r - 8.0) * r - 10.0) * r - 6.0) * r) - 2.0
}

/// `R^4 - 2R^3 - 4R^2 - 3R - 1`, whose unique positive root bounds the
/// region where `beta < 1`.
pub fn poly_r3_hat(r: f64) -> f64 {
    (((r - 2.0) * r - 4.0) * r - 3.0) * r - 1.0
}

/// `R^3 - R^2 - R - 1`, whose unique positive root bounds the region where
/// the degenerate norm stays below 1.
pub fn poly_r3_zero(r: f64) -> f64 {
    ((r - 1.0) * r - 1.0) * r - 1.0
}

/// `9R^6 - 2R^5 - 35R^4 - 42R^3 - 22R^2 - 4R + 1`, from squaring the
/// disk-tangency condition; it has two positive roots, of which only the
/// larger satisfies the unsquared geometric condition.
pub fn poly_r3_tilde(r: f64) -> f64 {
    (((((9.0 * r - 2.0) * r - 35.0) * r - 42.0) * r - 22.0) * r - 4.0) * r + 1.0
}

/// The step-ratio threshold roots and the tangency point of the disk
/// geometry, all resolved to 1e-12 by bracketing bisection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRatioThresholds {
    /// Decay threshold, unique positive root of [`poly_r3`] (~2.5535).
    pub r3: f64,
    /// `beta < 1` threshold, unique positive root of [`poly_r3_hat`]
    /// (~3.4406).
    pub r3_hat: f64,
    /// Degenerate-norm threshold, unique positive root of [`poly_r3_zero`]
    /// (~1.8393).
    pub r3_zero: f64,
    /// Both positive roots of [`poly_r3_tilde`], `(smaller, larger)`
    /// (~0.1305, ~2.5809). The smaller one is an artifact of squaring.
    pub r3_tilde: (f64, f64),
    /// `(re, im)` of the point where the zero-ratio disk touches the disk of
    /// the larger tilde root — the geometric obstruction fixing the norm
    /// parameter.
    pub tangential_point: (f64, f64),
}

/// Solves the four threshold polynomials and the tangency geometry.
///
/// Brackets come from a sign scan of `[0.01, 10]` at step 0.01; each bracket
/// is bisected to an interval of width 1e-12. Panics if a polynomial does not
/// produce the expected root count, which cannot happen for these fixed
/// polynomials.
pub fn threshold_roots() -> StepRatioThresholds {
    let r3 = expect_single_root(poly_r3, "decay threshold");
    let r3_hat = expect_single_root(poly_r3_hat, "beta threshold");
    let r3_zero = expect_single_root(poly_r3_zero, "degenerate-norm threshold");
    let tilde = positive_roots(poly_r3_tilde);
    assert!(tilde.len() == 2, "tangency polynomial must have two positive roots in range");

    // Tangency point: the zero-ratio disk (center (0, 1/2), radius 1/2)
    // touches the disk of the larger tilde root externally; the contact point
    // divides the center segment in the ratio of the radii.
    let rt = tilde[1];
    let a = alpha_raw(rt, rt);
    let b = beta_raw(rt, rt);
    let c1 = (0.0, 0.5);
    let r1 = 0.5;
    let c2 = (0.5 * a, 0.5 * ((1.0 + b) * (1.0 + b) - a * a).sqrt());
    let r2 = 0.5 * (1.0 - b);
    let t = r1 / (r1 + r2);
    let tangential_point = (c1.0 + t * (c2.0 - c1.0), c1.1 + t * (c2.1 - c1.1));

    StepRatioThresholds { r3, r3_hat, r3_zero, r3_tilde: (tilde[0], tilde[1]), tangential_point }
}

fn expect_single_root(p: impl Fn(f64) -> f64 + Copy, what: &str) -> f64 {
    let roots = positive_roots(p);
    assert!(roots.len() == 1, "{what}: expected one positive root, found {}", roots.len());
    roots[0]
}

fn positive_roots(p: impl Fn(f64) -> f64 + Copy) -> Vec<f64> {
    let step = 0.01;
    let mut roots = Vec::new();
    for i in 1..1000 {
        let a = i as f64 * step;
        let b = (i + 1) as f64 * step;
        let (fa, fb) = (p(a), p(b));
        if fa == 0.0 {
            roots.push(a);
        } else if fa * fb < 0.0 {
            roots.push(bisect(p, a, b));
        }
    }
    roots
}

fn bisect(p: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let rising = p(hi) > 0.0;
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        let v = p(mid);
        if (v > 0.0) == rising {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The auxiliary function `g(x, y) = (2 alpha^2 + 3 beta^2 - 4 alpha beta -
/// 2 alpha + 2 beta) / (x (x + 1))`, evaluated through its explicit rational
/// form (which remains valid at `x = 0`).
///
/// Negativity of `g` on the open square below the decay threshold is the
/// heart of the contractivity argument; the maximum over that square sits at
/// the far corner and is of order `-3e-5`.
pub fn g_function(x: f64, y: f64) -> f64 {
    let q = q_factor(x, y);
    let y2 = y * y;
    let num = (x + 1.0) * (x + 1.0) * (x * x + x - 4.0) * y2 * y2
        - 2.0 * (4.0 * x * x + 11.0 * x + 7.0) * y2 * y
        - 2.0 * (2.0 * x * x + 10.0 * x + 9.0) * y2
        - 2.0 * (3.0 * x + 5.0) * y
        - 2.0;
    num / ((y + 1.0) * (y + 1.0) * q * q)
}

/// Worst (closest-to-violating) margin of one verified lemma over a grid,
/// with the location where it occurred.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaReport {
    pub lemma: &'static str,
    pub worst_margin: f64,
    pub x_at_worst: f64,
    pub y_at_worst: f64,
    pub grid_step: f64,
}

/// Scans the analytical lemmas on a dense grid and reports the worst margin
/// of each, one entry per lemma:
///
/// - `alpha-beta-order`: `0 < beta < alpha < 1 + beta` on the square below
///   the `beta` threshold (margin: smallest of the three gaps, including
///   `beta > 0`);
/// - `beta-below-one`: `beta < 1` on the same square (margin `1 - beta`;
///   positivity of `beta` is already covered by the ordering row);
/// - `elliptic-negativity`: `g < 0` on the square below the decay threshold
///   (margin: `-g`);
/// - `alpha-monotone`, `beta-monotone`: closed-form partial derivatives and
///   forward differences all positive;
/// - `kernel-monotone`: `|d_nu|` increasing in both ratios for each `nu`.
///
/// All statements are open-region, so the scan starts one `grid_step` inside;
/// a positive `worst_margin` in every row is the pass condition. The grid
/// step must lie in `(0, 0.1]`.
pub fn verify_lemmas(grid_step: f64) -> Result<Vec<LemmaReport>> {
    if !(grid_step > 0.0 && grid_step <= 0.1) {
        return Err(Error::InvalidArgument(format!(
            "grid step must lie in (0, 0.1], got {grid_step}"
        )));
    }
    let thresholds = threshold_roots();
    let h = grid_step;

    // Fused pass over the larger square: ordering, beta bound, and the three
    // monotonicity checks share their alpha/beta evaluations.
    let mut order = GridMin::new();
    let mut beta_bound = GridMin::new();
    let mut alpha_mono = GridMin::new();
    let mut beta_mono = GridMin::new();
    let mut kernel_mono = GridMin::new();
    grid_points(thresholds.r3_hat, h, |x, y| {
        let a = alpha_raw(x, y);
        let b = beta_raw(x, y);
        order.update(b.min(a - b).min(1.0 + b - a), x, y);
        beta_bound.update(1.0 - b, x, y);

        let (adx, ady) = alpha_grad(x, y);
        let fdx = (alpha_raw(x + h, y) - a) / h;
        let fdy = (alpha_raw(x, y + h) - a) / h;
        alpha_mono.update(adx.min(ady).min(fdx).min(fdy), x, y);

        let (bdx, bdy) = beta_grad(x, y);
        let fdx = (beta_raw(x + h, y) - b) / h;
        let fdy = (beta_raw(x, y + h) - b) / h;
        beta_mono.update(bdx.min(bdy).min(fdx).min(fdy), x, y);

        let mut worst = f64::INFINITY;
        for nu in 0..3 {
            let here = d_coeff(nu, x, y).unwrap().abs();
            let right = d_coeff(nu, x + h, y).unwrap().abs();
            let up = d_coeff(nu, x, y + h).unwrap().abs();
            worst = worst.min((right - here) / h).min((up - here) / h);
        }
        kernel_mono.update(worst, x, y);
    });

    let mut elliptic = GridMin::new();
    grid_points(thresholds.r3, h, |x, y| {
        elliptic.update(-g_function(x, y), x, y);
    });

    Ok(vec![
        order.report("alpha-beta-order", h),
        beta_bound.report("beta-below-one", h),
        elliptic.report("elliptic-negativity", h),
        alpha_mono.report("alpha-monotone", h),
        beta_mono.report("beta-monotone", h),
        kernel_mono.report("kernel-monotone", h),
    ])
}

/// Writes lemma reports as CSV `lemma,worst_margin,x_at_worst,y_at_worst,
/// grid_step`.
pub fn dump_lemma_report<W: Write>(reports: &[LemmaReport], mut w: W) -> Result<()> {
    writeln!(w, "lemma,worst_margin,x_at_worst,y_at_worst,grid_step")?;
    for r in reports {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.lemma, r.worst_margin, r.x_at_worst, r.y_at_worst, r.grid_step
        )?;
    }
    Ok(())
}

/// Visits the interior grid `(i h, j h)` for `i h, j h < limit`, `i, j >= 1`.
fn grid_points(limit: f64, h: f64, mut visit: impl FnMut(f64, f64)) {
    let mut i = 1usize;
    while (i as f64) * h < limit {
        let x = i as f64 * h;
        let mut j = 1usize;
        while (j as f64) * h < limit {
            visit(x, j as f64 * h);
            j += 1;
        }
        i += 1;
    }
}

struct GridMin {
    value: f64,
    x: f64,
    y: f64,
}

impl GridMin {
    fn new() -> Self {
        GridMin { value: f64::INFINITY, x: 0.0, y: 0.0 }
    }

    fn update(&mut self, v: f64, x: f64, y: f64) {
        if v < self.value {
            self.value = v;
            self.x = x;
            self.y = y;
        }
    }

    fn report(self, lemma: &'static str, grid_step: f64) -> LemmaReport {
        LemmaReport { lemma, worst_margin: self.value, x_at_worst: self.x, y_at_worst: self.y, grid_step }
    }
}

/// One companion matrix of a certificate: its index, ratio pair, ratio
/// functions, and elliptic norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateRow {
    pub i: usize,
    pub r_i: f64,
    pub r_im1: f64,
    pub alpha: f64,
    pub beta: f64,
    pub h_norm: f64,
}

/// Outcome of a kernel-decay check over one mesh: the contraction factor
/// `delta`, the amplitude `c_R`, and whether the geometric envelope
/// `|theta^{(3,n)}_{n-j}| <= c_R delta^{n-j-1}` held for every `n >= j + 2`.
///
/// A certificate passes only when `delta < 1` *and* the envelope held; a
/// failing certificate is an ordinary value (with the offending companion
/// index or envelope position filled in), not an error.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCertificate {
    pub rows: Vec<CertificateRow>,
    /// `max_i ||A_i||_{H,inf}` over the mesh's companion matrices.
    pub delta: f64,
    /// Envelope amplitude `||H|| ||H^{-1}|| alpha(R3, R3)`; equals
    /// `(2 + sqrt(2)) alpha(R3, R3)` for the canonical parameter.
    pub c_r: f64,
    /// Whether the geometric envelope held entrywise.
    pub decay_holds: bool,
    pub passes: bool,
    /// Companion index attaining `delta`, recorded when `delta >= 1`.
    pub offending_index: Option<usize>,
    /// First `(n, j)` where the envelope broke, if it did.
    pub envelope_violation: Option<(usize, usize)>,
}

impl StabilityCertificate {
    /// Writes the certificate as CSV `i,r_i,r_im1,alpha,beta,hnorm`, followed
    /// by a summary row `summary,<delta>,<c_R>,<pass|fail>,,`.
    pub fn dump_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "i,r_i,r_im1,alpha,beta,hnorm")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.i, r.r_i, r.r_im1, r.alpha, r.beta, r.h_norm
            )?;
        }
        let verdict = if self.passes { "pass" } else { "fail" };
        writeln!(w, "summary,{:.16e},{:.16e},{verdict},,", self.delta, self.c_r)?;
        Ok(())
    }
}

/// Builds the decay certificate of a three-step DOC table under the norm
/// parameter `mu`.
///
/// Computes `delta = max_{i>=3} ||A_i||_{H,inf}` from the mesh ratios, sets
/// the amplitude `c_R`, and checks every kernel entry with offset at least 2
/// against the geometric envelope. The certificate verdict reflects both
/// `delta < 1` and the entrywise check; neither failing is an error.
pub fn decay_certificate(
    mesh: &TimeMesh,
    doc: &DocTable,
    mu: &HNormConfig,
) -> Result<StabilityCertificate> {
    if doc.order() != 3 {
        return Err(Error::UnsupportedOrder(doc.order()));
    }
    if doc.mesh() != mesh {
        return Err(Error::MeshMismatch("certificate mesh differs from the table's".into()));
    }

    let mut rows = Vec::with_capacity(mesh.n().saturating_sub(2));
    let mut delta = 0.0f64;
    let mut offending = 0usize;
    for i in 3..=mesh.n() {
        let (x, y) = (mesh.ratio(i), mesh.ratio(i - 1));
        let a = Companion2x2::from_ratios(x, y)?;
        let norm = h_norm(&a, mu);
        if norm > delta {
            delta = norm;
            offending = i;
        }
        rows.push(CertificateRow { i, r_i: x, r_im1: y, alpha: a.alpha(), beta: a.beta(), h_norm: norm });
    }

    let thresholds = threshold_roots();
    let alpha_at_r3 = alpha_raw(thresholds.r3, thresholds.r3);
    let c_r = mu.h_inf_norm() * mu.h_inv_inf_norm() * alpha_at_r3;

    let mut envelope_violation = None;
    'outer: for n in 3..=mesh.n() {
        for j in 3..=n.saturating_sub(2) {
            let bound = c_r * delta.powi((n - j - 1) as i32);
            if doc.theta(n, j).abs() > bound {
                envelope_violation = Some((n, j));
                break 'outer;
            }
        }
    }

    let decay_holds = envelope_violation.is_none();
    let passes = delta < 1.0 && decay_holds;
    Ok(StabilityCertificate {
        rows,
        delta,
        c_r,
        decay_holds,
        passes,
        offending_index: (delta >= 1.0).then_some(offending),
        envelope_violation,
    })
}
