//! Gaussian kernel density estimates, empirical kernelized mutual
//! information, and GW-based upper bounds on it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::ot::distance::{pairwise_dist, sq_euclid};
use crate::ot::gw::GwSolver;

/// Distance used inside the kernel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMetric {
    #[default]
    Euclidean,
}

/// Gaussian kernel `k(a, b) = exp(-d(a, b)^2 / (2 tau^2)) / (sqrt(2 pi) tau)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub tau: f64,
    #[serde(default)]
    pub metric: KernelMetric,
}

impl KernelConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("kernel bandwidth must be positive, got {tau}")));
        }
        Ok(Self {
            tau,
            metric: KernelMetric::Euclidean,
        })
    }

    /// Bandwidth set to the median nonzero pairwise distance of `points`
    /// (1.0 when every point coincides).
    pub fn median_heuristic<P: AsRef<[f64]> + Sync>(points: &[P]) -> Result<Self> {
        Self::new(median_pairwise_distance(points)?.unwrap_or(1.0))
    }

    /// Normalizing factor `1 / (sqrt(2 pi) tau)`.
    pub fn peak(&self) -> f64 {
        1.0 / ((2.0 * PI).sqrt() * self.tau)
    }

    /// Exponent of the kernel (log value without the normalizing factor).
    fn log_shape(&self, sq_dist: f64) -> f64 {
        -sq_dist / (2.0 * self.tau * self.tau)
    }

    pub fn eval_sq(&self, sq_dist: f64) -> f64 {
        self.peak() * self.log_shape(sq_dist).exp()
    }
}

/// Median of the nonzero pairwise distances, if any.
pub fn median_pairwise_distance<P: AsRef<[f64]> + Sync>(points: &[P]) -> Result<Option<f64>> {
    let d = pairwise_dist(points, points)?;
    let n = d.rows();
    let mut v: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| d.get(i, j))
        .filter(|&x| x > 0.0)
        .collect();
    if v.is_empty() {
        return Ok(None);
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Ok(Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }))
}

fn check_points<P: AsRef<[f64]>>(samples: &[P], what: &str) -> Result<usize> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid(format!("{what} must be nonempty")))?;
    let dim = first.as_ref().len();
    if samples.iter().any(|s| s.as_ref().len() != dim) {
        return Err(Error::invalid(format!("{what} have inconsistent dimensions")));
    }
    Ok(dim)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `(1/N) sum_n k(query, x_n)`.
pub fn kde_marginal<P: AsRef<[f64]>>(samples: &[P], query: &[f64], cfg: &KernelConfig) -> Result<f64> {
    let dim = check_points(samples, "samples")?;
    if query.len() != dim {
        return Err(Error::invalid(format!(
            "query has dimension {}, samples have {dim}",
            query.len()
        )));
    }
    let total: f64 = samples
        .iter()
        .map(|s| cfg.eval_sq(sq_euclid(s.as_ref(), query)))
        .sum();
    Ok(total / samples.len() as f64)
}

fn log_kernel_matrix<P: AsRef<[f64]>>(pts: &[P], cfg: &KernelConfig) -> Vec<Vec<f64>> {
    pts.iter()
        .map(|a| {
            pts.iter()
                .map(|b| cfg.log_shape(sq_euclid(a.as_ref(), b.as_ref())))
                .collect()
        })
        .collect()
}

/// Plug-in estimate of the mutual information between paired samples from
/// kernel density estimates:
/// `(1/N) sum_n log( N sum_m kx(n,m) kz(n,m) / (sum_m kx(n,m) sum_m kz(n,m)) )`.
///
/// Evaluated in the log domain so small bandwidths do not underflow.
pub fn empirical_kmi<P: AsRef<[f64]>, Q: AsRef<[f64]>>(
    xs: &[P],
    zs: &[Q],
    cfg_x: &KernelConfig,
    cfg_z: &KernelConfig,
) -> Result<f64> {
    if xs.len() != zs.len() {
        return Err(Error::invalid(format!(
            "paired samples differ in length: {} vs {}",
            xs.len(),
            zs.len()
        )));
    }
    check_points(xs, "xs")?;
    check_points(zs, "zs")?;
    let n = xs.len();
    let lx = log_kernel_matrix(xs, cfg_x);
    let lz = log_kernel_matrix(zs, cfg_z);
    let ln_n = (n as f64).ln();
    let mut joint = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        for (j, slot) in joint.iter_mut().enumerate() {
            *slot = lx[i][j] + lz[i][j];
        }
        acc += ln_n + log_sum_exp(&joint) - log_sum_exp(&lx[i]) - log_sum_exp(&lz[i]);
    }
    Ok(acc / n as f64)
}

/// `N^4 (2 pi tau^2 - alpha)^2 / (8 (N^4 - 1) alpha^2)`; requires `N >= 2`.
pub fn jensen_constant(n: usize, tau: f64, alpha: f64) -> f64 {
    let n4 = (n as f64).powi(4);
    let gap = 2.0 * PI * tau * tau - alpha;
    n4 * gap * gap / (8.0 * (n4 - 1.0) * alpha * alpha)
}

/// Large-sample limit of [`jensen_constant`].
pub fn jensen_constant_limit(tau: f64, alpha: f64) -> f64 {
    let gap = 2.0 * PI * tau * tau - alpha;
    gap * gap / (8.0 * alpha * alpha)
}

/// Every ingredient of the GW upper bound on the kernelized mutual information.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub kmi: f64,
    /// `||D_X - D_Z||_F^2 / N^2`
    pub transport_cost_term: f64,
    pub gw_sq: f64,
    pub jensen_constant: f64,
    pub bound_value: f64,
    pub diam_x: f64,
    pub diam_z: f64,
    pub alpha: f64,
    pub tau: f64,
}

impl BoundReport {
    /// Recompute the bound from the stored parts.
    pub fn compose(tau: f64, transport_cost_term: f64, gw_sq: f64, jensen_constant: f64) -> f64 {
        (transport_cost_term - gw_sq) / (2.0 * tau * tau) + jensen_constant
    }
}

fn paired_distances<P, Q>(xs: &[P], zs: &[Q]) -> Result<(DenseMatrix, DenseMatrix)>
where
    P: AsRef<[f64]> + Sync,
    Q: AsRef<[f64]> + Sync,
{
    if xs.len() != zs.len() {
        return Err(Error::invalid(format!(
            "paired samples differ in length: {} vs {}",
            xs.len(),
            zs.len()
        )));
    }
    Ok((pairwise_dist(xs, xs)?, pairwise_dist(zs, zs)?))
}

/// `||D_X - D_Z||_F^2 / N^2` for two same-size distance matrices.
pub fn distortion(d_x: &DenseMatrix, d_z: &DenseMatrix) -> Result<f64> {
    let n = d_x.rows() as f64;
    Ok(d_x.sub(d_z)?.frobenius_norm_sq() / (n * n))
}

/// Upper bound on [`empirical_kmi`] (same bandwidth in both spaces) from the
/// distortion of the pairing and the GW discrepancy between the samples.
pub fn kmi_upper_bound<P, Q>(xs: &[P], zs: &[Q], cfg: &KernelConfig, gw_solver: &GwSolver) -> Result<BoundReport>
where
    P: AsRef<[f64]> + Sync,
    Q: AsRef<[f64]> + Sync,
{
    let n = xs.len();
    if n < 2 {
        return Err(Error::invalid("the bound needs at least two paired samples"));
    }
    let (d_x, d_z) = paired_distances(xs, zs)?;
    let kmi = empirical_kmi(xs, zs, cfg, cfg)?;
    let transport_cost_term = distortion(&d_x, &d_z)?;
    let (gw_sq, _) = gw_solver.solve(&d_x, &d_z)?;
    let diam_x = d_x.max_abs();
    let diam_z = d_z.max_abs();
    let tau = cfg.tau;
    let alpha = (-(diam_x * diam_x + diam_z * diam_z) / (2.0 * tau * tau)).exp();
    let c = jensen_constant(n, tau, alpha);
    Ok(BoundReport {
        kmi,
        transport_cost_term,
        gw_sq,
        jensen_constant: c,
        bound_value: BoundReport::compose(tau, transport_cost_term, gw_sq, c),
        diam_x,
        diam_z,
        alpha,
        tau,
    })
}

/// Distortion of the given pairing minus the best achievable distortion
/// over all couplings: `||D_X - D_Z||_F^2 / N^2 - GW^2(X, Z)`.
pub fn monge_gap<P, Q>(xs: &[P], zs: &[Q], gw_solver: &GwSolver) -> Result<f64>
where
    P: AsRef<[f64]> + Sync,
    Q: AsRef<[f64]> + Sync,
{
    let (d_x, d_z) = paired_distances(xs, zs)?;
    let (gw_sq, _) = gw_solver.solve(&d_x, &d_z)?;
    Ok(distortion(&d_x, &d_z)? - gw_sq)
}
