//! Brute-force reference implementations for small instances.
//!
//! Everything here is deliberately naive: direct quadruple sums, exhaustive
//! permutation enumeration, and a textbook Hungarian assignment. They share
//! no code with the fast paths so they can serve as independent checks.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Largest size accepted by the enumeration oracles.
pub const ORACLE_MAX_N: usize = 8;

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// `sum_{m,n,k,l} T[m][n] T[k][l] (d_a[m][k] - d_b[n][l])^2`, term by term.
pub fn gw_quadruple_sum(d_a: &DenseMatrix, d_b: &DenseMatrix, t: &DenseMatrix) -> f64 {
    let (na, nb) = (d_a.rows(), d_b.rows());
    let mut s = 0.0;
    for m in 0..na {
        for n in 0..nb {
            let tmn = t.get(m, n);
            if tmn == 0.0 {
                continue;
            }
            for k in 0..na {
                for l in 0..nb {
                    let diff = d_a.get(m, k) - d_b.get(n, l);
                    s += tmn * t.get(k, l) * diff * diff;
                }
            }
        }
    }
    s
}

/// `sum_{m,n} cost[m][n] T[m][n]`.
pub fn linear_sum(cost: &DenseMatrix, t: &DenseMatrix) -> f64 {
    let mut s = 0.0;
    for m in 0..t.rows() {
        for n in 0..t.cols() {
            s += cost.get(m, n) * t.get(m, n);
        }
    }
    s
}

/// The joint control/treated objective written out as separate quadruple sums.
pub fn fused_quadruple_sum(
    d_x0: &DenseMatrix,
    d_x1: &DenseMatrix,
    d_z0: &DenseMatrix,
    d_z1: &DenseMatrix,
    d_z01: &DenseMatrix,
    beta: f64,
    t: &DenseMatrix,
) -> f64 {
    let tt = t.transpose();
    gw_quadruple_sum(d_x0, d_z1, t)
        + gw_quadruple_sum(d_x1, d_z0, &tt)
        + (1.0 - beta) * linear_sum(d_z01, t)
        + beta * gw_quadruple_sum(d_z0, d_z1, t)
}

/// Scaled permutation matrix `P[i][perm[i]] = 1/n`.
pub fn permutation_matrix(perm: &[usize]) -> DenseMatrix {
    let n = perm.len();
    DenseMatrix::from_fn(n, n, |i, j| if perm[i] == j { 1.0 / n as f64 } else { 0.0 })
}

fn check_square(n: usize, m: usize) -> Result<()> {
    if n != m {
        return Err(Error::invalid("permutation oracles need square problems"));
    }
    if n == 0 || n > ORACLE_MAX_N {
        return Err(Error::invalid(format!(
            "permutation oracles accept 1..={ORACLE_MAX_N} atoms, got {n}"
        )));
    }
    Ok(())
}

/// Minimum of `f(P_sigma)` over all scaled permutation matrices; the first
/// permutation attaining it is returned.
pub fn min_over_permutations(n: usize, f: impl Fn(&DenseMatrix) -> f64) -> Result<(f64, Vec<usize>)> {
    check_square(n, n)?;
    let mut best = (f64::INFINITY, Vec::new());
    for perm in permutations(n) {
        let v = f(&permutation_matrix(&perm));
        if v < best.0 {
            best = (v, perm);
        }
    }
    Ok(best)
}

/// Exact uniform-marginal EMD for square costs by enumerating Birkhoff vertices.
pub fn brute_force_emd(cost: &DenseMatrix) -> Result<(f64, Vec<usize>)> {
    check_square(cost.rows(), cost.cols())?;
    min_over_permutations(cost.rows(), |p| linear_sum(cost, p))
}

/// Minimum of the GW quadruple sum over permutation vertices.
pub fn brute_force_gw(d_a: &DenseMatrix, d_b: &DenseMatrix) -> Result<(f64, Vec<usize>)> {
    check_square(d_a.rows(), d_b.rows())?;
    min_over_permutations(d_a.rows(), |p| gw_quadruple_sum(d_a, d_b, p))
}

/// Minimum of the joint objective over permutation vertices.
pub fn brute_force_fused(
    d_x0: &DenseMatrix,
    d_x1: &DenseMatrix,
    d_z0: &DenseMatrix,
    d_z1: &DenseMatrix,
    d_z01: &DenseMatrix,
    beta: f64,
) -> Result<(f64, Vec<usize>)> {
    check_square(d_z01.rows(), d_z01.cols())?;
    min_over_permutations(d_z01.rows(), |p| {
        fused_quadruple_sum(d_x0, d_x1, d_z0, d_z1, d_z01, beta, p)
    })
}

/// Minimum-cost perfect matching on a square matrix (Hungarian method with
/// potentials). Returns the total cost and `assignment[row] = col`.
pub fn hungarian(cost: &DenseMatrix) -> Result<(f64, Vec<usize>)> {
    let n = cost.rows();
    if n == 0 || cost.cols() != n {
        return Err(Error::invalid("assignment needs a nonempty square cost"));
    }
    // 1-based arrays with a sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
    Ok((total, assignment))
}

/// Exact uniform-marginal EMD for rectangular `m x n` costs: each source atom
/// is split into `n` copies and each target atom into `m` copies, giving an
/// `mn x mn` assignment problem with the same optimal value.
pub fn expanded_assignment_emd(cost: &DenseMatrix) -> Result<f64> {
    let (m, n) = cost.shape();
    let size = m * n;
    let big = DenseMatrix::from_fn(size, size, |r, c| cost.get(r / n, c / m));
    let (total, _) = hungarian(&big)?;
    Ok(total / size as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutation_counts() {
        assert_eq!(permutations(1).len(), 1);
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(5).len(), 120);
        assert_eq!(permutations(3)[1], vec![0, 2, 1]);
    }

    #[test]
    fn hungarian_matches_enumeration() {
        let cost = DenseMatrix::from_fn(5, 5, |i, j| ((i * 13 + j * 7) % 11) as f64 - 0.3 * j as f64);
        let (h, _) = hungarian(&cost).unwrap();
        let (b, _) = brute_force_emd(&cost).unwrap();
        assert!((h / 5.0 - b).abs() < 1e-12);
    }

    #[test]
    fn expanded_assignment_on_square_agrees() {
        let cost = DenseMatrix::from_fn(3, 3, |i, j| ((i + 2 * j) % 4) as f64);
        let (b, _) = brute_force_emd(&cost).unwrap();
        assert!((expanded_assignment_emd(&cost).unwrap() - b).abs() < 1e-12);
    }

    #[test]
    fn quadruple_sum_small_case() {
        let da = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let db = DenseMatrix::zeros(2, 2);
        let prod = DenseMatrix::filled(2, 2, 0.25);
        assert!((gw_quadruple_sum(&da, &db, &prod) - 0.5).abs() < 1e-15);
    }
}
