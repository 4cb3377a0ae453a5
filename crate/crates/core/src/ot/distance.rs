use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::par;

fn check_dims<P: AsRef<[f64]>>(a: &[P], b: &[P]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("point sets must be nonempty"));
    }
    let dim = a[0].as_ref().len();
    for (i, p) in a.iter().chain(b).enumerate() {
        if p.as_ref().len() != dim {
            return Err(Error::invalid(format!(
                "point {i} has dimension {}, expected {dim}",
                p.as_ref().len()
            )));
        }
    }
    Ok(dim)
}

#[inline]
pub(crate) fn sq_euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn build<P, F>(a: &[P], b: &[P], f: F) -> Result<DenseMatrix>
where
    P: AsRef<[f64]> + Sync,
    F: Fn(f64) -> f64 + Sync + Send,
{
    let dim = check_dims(a, b)?;
    let (n, m) = (a.len(), b.len());
    let mut data = vec![0.0; n * m];
    par::for_each_row(&mut data, m, n * m * dim.max(1), |i, row| {
        let ai = a[i].as_ref();
        for (j, out) in row.iter_mut().enumerate() {
            *out = f(sq_euclid(ai, b[j].as_ref()));
        }
    });
    DenseMatrix::new(n, m, data)
}

/// `[‖a_m − b_n‖²]`, the squared Euclidean cost between two point sets.
pub fn pairwise_sq_dist<P: AsRef<[f64]> + Sync>(a: &[P], b: &[P]) -> Result<DenseMatrix> {
    build(a, b, |s| s)
}

/// `[‖a_m − b_n‖₂]`, the Euclidean distance between two point sets.
pub fn pairwise_dist<P: AsRef<[f64]> + Sync>(a: &[P], b: &[P]) -> Result<DenseMatrix> {
    build(a, b, f64::sqrt)
}
