//! BDF kernel coefficients, the convolution form of the discrete derivative
//! `D_k`, and the discrete orthogonal convolution (DOC) kernels that invert
//! it row by row.
//!
//! The multistep formula is written as a convolution of local difference
//! quotients,
//!
//! ```text
//! D_k v^n = sum_{j=1}^{n} d^{(k,n)}_{n-j} (v^j - v^{j-1}) / tau_j,
//! ```
//!
//! where the band coefficients `d^{(k,n)}_j` (zero for `j >= k`) are rational
//! functions of the two adjacent step ratios. The DOC kernels
//! `theta^{(k,n)}_{n-j}` are defined by a triangular recursion so that the
//! lower-triangular matrices of the two kernel families are exact mutual
//! inverses; both orthogonality identities hold to roundoff and are checked
//! by [`verify_orthogonality`].

use std::io::Write;

use crate::error::{Error, Result};
use crate::mesh::TimeMesh;

/// Evaluates the BDF coefficient function `d_nu(x, y)` for `nu` in `{0,1,2}`.
///
/// `x` is the step ratio at the current level and `y` the one before it;
/// zero ratios are admitted (they encode the lower-order formulas: `y = 0`
/// gives the two-step kernels, `x = y = 0` the backward Euler kernel). All
/// denominators are at least 1 on the admissible domain, so the result is
/// always finite.
pub fn d_coeff(nu: usize, x: f64, y: f64) -> Result<f64> {
    if !(x >= 0.0) || !(y >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step ratios must be nonnegative, got x = {x}, y = {y}"
        )));
    }
    if nu > 2 {
        return Err(Error::InvalidArgument(format!("coefficient index {nu} out of range 0..=2")));
    }
    Ok(d_row(x, y)[nu])
}

/// `[d_0, d_1, d_2]` at `(x, y)`; callers guarantee `x, y >= 0`.
fn d_row(x: f64, y: f64) -> [f64; 3] {
    let p = x * y / (1.0 + y + x * y);
    let d0 = (1.0 + 2.0 * x) / (1.0 + x) + p;
    let d2 = p * y * (1.0 + x) / (1.0 + y);
    let d1 = -x / (1.0 + x) - p - d2;
    [d0, d1, d2]
}

/// Band rows of the discrete derivative `D_k` over one mesh.
///
/// Row `n` (for `k <= n <= N`) holds `d^{(k,n)}_0..d^{(k,n)}_2`; entries at
/// and beyond the band width `k` are zero. The starting levels `n < k` are
/// not represented — a Runge–Kutta starter covers those in the integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    k: usize,
    rows: Vec<[f64; 3]>,
    mesh: TimeMesh,
}

impl KernelTable {
    /// Builds the coefficient rows for order `k` in `{1, 2, 3}`.
    ///
    /// Row `n` evaluates the coefficient functions at `(r_n, r_{n-1})` for
    /// `k = 3`, at `(r_n, 0)` for `k = 2`, and at `(0, 0)` for `k = 1`.
    pub fn build(k: usize, mesh: &TimeMesh) -> Result<Self> {
        if !(1..=3).contains(&k) {
            return Err(Error::UnsupportedOrder(k));
        }
        if mesh.n() < k {
            return Err(Error::InvalidArgument(format!(
                "mesh with {} steps cannot host an order-{k} table",
                mesh.n()
            )));
        }
        let rows = (k..=mesh.n())
            .map(|n| match k {
                1 => d_row(0.0, 0.0),
                2 => d_row(mesh.ratio(n), 0.0),
                _ => d_row(mesh.ratio(n), mesh.ratio(n - 1)),
            })
            .collect();
        Ok(KernelTable { k, rows, mesh: mesh.clone() })
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    /// Row `n` of the band, `k <= n <= N`.
    pub fn row(&self, n: usize) -> [f64; 3] {
        self.rows[n - self.k]
    }

    /// Coefficient `d^{(k,n)}_j`; zero for `j` at or beyond the band width.
    pub fn coeff(&self, n: usize, j: usize) -> f64 {
        if j >= self.k {
            0.0
        } else {
            self.rows[n - self.k][j]
        }
    }

    /// Applies `D_k` to nodal values `v^0..v^N`, returning
    /// `D_k v^n` for `n = k..=N`.
    ///
    /// Exact (up to roundoff) on polynomials of degree at most `k` sampled at
    /// the nodes, on any mesh.
    pub fn apply_bdf(&self, values: &[f64]) -> Result<Vec<f64>> {
        let n_mesh = self.mesh.n();
        if values.len() != n_mesh + 1 {
            return Err(Error::LengthMismatch { expected: n_mesh + 1, got: values.len() });
        }
        let diffs: Vec<f64> = (1..=n_mesh)
            .map(|j| (values[j] - values[j - 1]) / self.mesh.tau(j))
            .collect();
        let out = (self.k..=n_mesh)
            .map(|n| {
                // only offsets inside the band contribute
                (0..self.k.min(n)).map(|off| self.coeff(n, off) * diffs[n - off - 1]).sum()
            })
            .collect();
        Ok(out)
    }
}

/// DOC kernel rows `theta^{(k,n)}_{n-j}` for `k <= j <= n <= N`, plus the
/// modified kernels `theta_hat = theta * d^{(k,j)}_0` for `k = 3`.
///
/// Stores the full lower triangle (`O(N^2)` memory): the experiment sizes
/// stay in the low thousands, and keeping every row makes the column-sum
/// diagnostics cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTable {
    k: usize,
    /// `rows[n - k][n - j]` is `theta^{(k,n)}_{n-j}`.
    rows: Vec<Vec<f64>>,
    /// Same layout for the modified kernels; populated only for `k = 3`.
    modified: Option<Vec<Vec<f64>>>,
    mesh: TimeMesh,
}

impl DocTable {
    /// Runs the DOC recursion over a kernel table.
    ///
    /// Row base: `theta^{(k,n)}_0 = 1 / d^{(k,n)}_0`. Interior entries follow
    /// `theta^{(k,n)}_{n-j} = -(1/d^{(k,j)}_0) sum_i theta^{(k,n)}_{n-i}
    /// d^{(k,i)}_{i-j}` with `i` running over the band `j < i <= min(n,
    /// j+k-1)`.
    pub fn build(kernel: &KernelTable) -> Self {
        let k = kernel.k;
        let n_mesh = kernel.mesh.n();
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_mesh + 1 - k);
        for n in k..=n_mesh {
            let mut row = vec![0.0; n - k + 1];
            row[0] = 1.0 / kernel.coeff(n, 0);
            for j in (k..n).rev() {
                let hi = n.min(j + k - 1);
                let acc: f64 = (j + 1..=hi).map(|i| row[n - i] * kernel.coeff(i, i - j)).sum();
                row[n - j] = -acc / kernel.coeff(j, 0);
            }
            rows.push(row);
        }
        let modified = (k == 3).then(|| {
            rows.iter()
                .enumerate()
                .map(|(idx, row)| {
                    let n = idx + k;
                    // offset 0 is 1 by the defining initial data, not the
                    // rounded product (1/d0) * d0
                    (0..=n - k)
                        .map(|s| if s == 0 { 1.0 } else { row[s] * kernel.coeff(n - s, 0) })
                        .collect()
                })
                .collect()
        });
        DocTable { k, rows, modified, mesh: kernel.mesh.clone() }
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    /// `theta^{(k,n)}_{n-j}` for `k <= j <= n <= N`.
    pub fn theta(&self, n: usize, j: usize) -> f64 {
        self.rows[n - self.k][n - j]
    }

    /// Modified kernel `theta_hat^{(3,n)}_{n-j}`; `None` unless `k = 3`.
    pub fn theta_hat(&self, n: usize, j: usize) -> Option<f64> {
        self.modified.as_ref().map(|m| m[n - self.k][n - j])
    }

    /// Row `n` as entries indexed by the offset `s = n - j`, `s = 0..=n-k`.
    pub fn row(&self, n: usize) -> &[f64] {
        &self.rows[n - self.k]
    }

    /// Writes the table as CSV `n,j,theta,theta_hat` (last column empty for
    /// orders other than 3), 17 significant digits.
    pub fn dump_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,j,theta,theta_hat")?;
        for n in self.k..=self.mesh.n() {
            for j in self.k..=n {
                match self.theta_hat(n, j) {
                    Some(hat) => {
                        writeln!(w, "{n},{j},{:.16e},{hat:.16e}", self.theta(n, j))?
                    }
                    None => writeln!(w, "{n},{j},{:.16e},", self.theta(n, j))?,
                }
            }
        }
        Ok(())
    }
}

fn check_same_family(kernel: &KernelTable, doc: &DocTable) -> Result<()> {
    if kernel.k != doc.k {
        return Err(Error::MeshMismatch(format!(
            "kernel table has order {}, DOC table has order {}",
            kernel.k, doc.k
        )));
    }
    if kernel.mesh != doc.mesh {
        return Err(Error::MeshMismatch("tables were built over different meshes".into()));
    }
    Ok(())
}

/// Largest deviation of the two triangular kernel products from the
/// identity: `(max |Theta D - I|, max |D Theta - I|)` entrywise over
/// `k <= j <= n <= N`.
pub fn verify_orthogonality(kernel: &KernelTable, doc: &DocTable) -> Result<(f64, f64)> {
    check_same_family(kernel, doc)?;
    let (k, n_mesh) = (kernel.k, kernel.mesh.n());
    let mut theta_d = 0.0f64;
    let mut d_theta = 0.0f64;
    for n in k..=n_mesh {
        for j in k..=n {
            let target = if n == j { 1.0 } else { 0.0 };
            // Theta_k D_k: band limits i to j..=min(n, j+k-1).
            let hi = n.min(j + k - 1);
            let s1: f64 = (j..=hi).map(|i| doc.theta(n, i) * kernel.coeff(i, i - j)).sum();
            theta_d = theta_d.max((s1 - target).abs());
            // D_k Theta_k: band limits i to max(j, n-k+1)..=n.
            let lo = j.max(n + 1 - k);
            let s2: f64 = (lo..=n).map(|i| kernel.coeff(n, n - i) * doc.theta(i, j)).sum();
            d_theta = d_theta.max((s2 - target).abs());
        }
    }
    Ok((theta_d, d_theta))
}

/// Row sum `sum_{j=2}^{n} theta^{(2,n)}_{n-j}` of the two-step DOC kernels.
///
/// Equals `1 - prod_{i=2}^{n} r_i / (1 + 2 r_i)`, hence lies strictly below 1
/// in exact arithmetic (roundoff can push it above by a few ulps on long
/// meshes, so comparisons should carry a tolerance).
pub fn doc_sum_bdf2(doc: &DocTable, n: usize) -> Result<f64> {
    if doc.k != 2 {
        return Err(Error::UnsupportedOrder(doc.k));
    }
    if n < 2 || n > doc.mesh.n() {
        return Err(Error::InvalidArgument(format!("row index {n} outside 2..={}", doc.mesh.n())));
    }
    Ok(doc.row(n).iter().sum())
}

/// Closed form of the two-step DOC kernel:
/// `theta^{(2,n)}_{n-j} = (1/d^{(2,j)}_0) prod_{i=j+1}^{n} r_i/(1+2r_i)`.
pub fn bdf2_closed_form(mesh: &TimeMesh, n: usize, j: usize) -> f64 {
    let d0 = 1.0 + mesh.ratio(j) / (1.0 + mesh.ratio(j));
    let prod: f64 = (j + 1..=n).map(|i| mesh.ratio(i) / (1.0 + 2.0 * mesh.ratio(i))).product();
    prod / d0
}

/// Closed form of the three-step DOC kernel on a uniform mesh at offset
/// `s = n - j`.
///
/// The characteristic roots are `(7 ± i sqrt(39)) / 22`, giving a damped
/// oscillation with modulus `sqrt(2/11)` per level.
pub fn bdf3_uniform_closed_form(s: usize) -> f64 {
    let rho = (2.0f64 / 11.0).sqrt();
    let phi = 39.0f64.sqrt().atan2(7.0);
    let hat = 22.0 / 39.0f64.sqrt() * rho.powi(s as i32 + 1) * ((s as f64 + 1.0) * phi).sin();
    hat * 6.0 / 11.0
}

/// Starting effect `I_k^n[v] = sum_{j=1}^{k-1} (d_tau v^j) sum_{i=k}^{n}
/// theta^{(k,n)}_{n-i} d^{(k,i)}_{i-j}`: how the pre-stepping difference
/// quotients propagate into level `n` through the DOC machinery.
pub fn starting_effect(
    kernel: &KernelTable,
    doc: &DocTable,
    start_diffs: &[f64],
    n: usize,
) -> Result<f64> {
    check_same_family(kernel, doc)?;
    let k = kernel.k;
    if start_diffs.len() != k - 1 {
        return Err(Error::LengthMismatch { expected: k - 1, got: start_diffs.len() });
    }
    if n < k || n > kernel.mesh.n() {
        return Err(Error::InvalidArgument(format!("level {n} outside {k}..={}", kernel.mesh.n())));
    }
    let mut total = 0.0;
    for (j, diff) in start_diffs.iter().enumerate().map(|(idx, d)| (idx + 1, d)) {
        let hi = n.min(j + k - 1); // band: d^{(k,i)}_{i-j} = 0 past i = j+k-1
        let inner: f64 = (k..=hi).map(|i| doc.theta(n, i) * kernel.coeff(i, i - j)).sum();
        total += diff * inner;
    }
    Ok(total)
}

/// Maxima of the absolute row sums `sum_{j=k}^{n} |theta^{(k,n)}_{n-j}|` and
/// absolute column sums `sum_{n=j}^{N} |theta^{(k,n)}_{n-j}|`.
///
/// For `k = 3` these are the two quantities whose uniform boundedness powers
/// the stability estimate; the returned pair serves as the empirical
/// surrogate for that constant (no analytic bound is claimed). Orders 1 and 2
/// are accepted too — their row sums are below 1 by positivity.
pub fn abs_row_and_column_sums(doc: &DocTable) -> (f64, f64) {
    let (k, n_mesh) = (doc.k, doc.mesh.n());
    let mut row_max = 0.0f64;
    for n in k..=n_mesh {
        row_max = row_max.max(doc.row(n).iter().map(|t| t.abs()).sum());
    }
    let mut col_max = 0.0f64;
    for j in k..=n_mesh {
        col_max = col_max.max((j..=n_mesh).map(|n| doc.theta(n, j).abs()).sum());
    }
    (row_max, col_max)
}
