use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// Tolerance on the total mass of a [`DiscreteMeasure`].
pub const MASS_TOL: f64 = 1e-12;
/// Tolerance on plan marginals.
pub const MARGINAL_TOL: f64 = 1e-9;

/// Nonnegative weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("measure must have at least one atom"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("measure weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!(
                "measure weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { weights })
    }

    /// `1/n` on each of `n` atoms.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform measure needs at least one atom");
        Self {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        let u = 1.0 / self.len() as f64;
        self.weights.iter().all(|&w| w == u)
    }
}

/// A coupling of two discrete measures: `plan >= 0` with prescribed row and
/// column sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    plan: DenseMatrix,
    source: DiscreteMeasure,
    target: DiscreteMeasure,
}

impl TransportPlan {
    /// Validate nonnegativity and both marginals.
    pub fn new(plan: DenseMatrix, source: DiscreteMeasure, target: DiscreteMeasure) -> Result<Self> {
        if plan.shape() != (source.len(), target.len()) {
            return Err(Error::invalid(format!(
                "plan is {}x{} but measures have {} and {} atoms",
                plan.rows(),
                plan.cols(),
                source.len(),
                target.len()
            )));
        }
        if plan.as_slice().iter().any(|&x| x < 0.0) {
            return Err(Error::invalid("plan has negative entries"));
        }
        let out = Self {
            plan,
            source,
            target,
        };
        let err = out.marginal_error();
        if err > MARGINAL_TOL {
            return Err(Error::invalid(format!(
                "plan marginals deviate by {err:e}"
            )));
        }
        Ok(out)
    }

    pub(crate) fn from_parts_unchecked(
        plan: DenseMatrix,
        source: DiscreteMeasure,
        target: DiscreteMeasure,
    ) -> Self {
        Self {
            plan,
            source,
            target,
        }
    }

    /// The independent coupling `mu nu^T`.
    pub fn product(source: &DiscreteMeasure, target: &DiscreteMeasure) -> Self {
        let plan = DenseMatrix::from_fn(source.len(), target.len(), |i, j| {
            source.weights()[i] * target.weights()[j]
        });
        Self::from_parts_unchecked(plan, source.clone(), target.clone())
    }

    /// Scaled permutation matrix: row `i` sends all its `1/n` mass to column `perm[i]`.
    pub fn permutation(perm: &[usize]) -> Result<Self> {
        let n = perm.len();
        if n == 0 {
            return Err(Error::invalid("empty permutation"));
        }
        let mut seen = vec![false; n];
        for &p in perm {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(Error::invalid(format!("{perm:?} is not a permutation")));
            }
        }
        let w = 1.0 / n as f64;
        let mut plan = DenseMatrix::zeros(n, n);
        for (i, &j) in perm.iter().enumerate() {
            plan.set(i, j, w);
        }
        let u = DiscreteMeasure::uniform(n);
        Ok(Self::from_parts_unchecked(plan, u.clone(), u))
    }

    /// The unique coupling when either side has a single atom.
    pub fn singleton_side(source: &DiscreteMeasure, target: &DiscreteMeasure) -> Option<Self> {
        (source.len() == 1 || target.len() == 1).then(|| Self::product(source, target))
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.plan
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.target
    }

    pub fn shape(&self) -> (usize, usize) {
        self.plan.shape()
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.plan
    }

    /// The same coupling seen from the other side.
    pub fn transposed(&self) -> Self {
        Self::from_parts_unchecked(self.plan.transpose(), self.target.clone(), self.source.clone())
    }

    /// Largest absolute deviation of row/column sums from the measures.
    pub fn marginal_error(&self) -> f64 {
        let rows = self.plan.row_sums();
        let cols = self.plan.col_sums();
        rows.iter()
            .zip(self.source.weights())
            .chain(cols.iter().zip(self.target.weights()))
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `(1 - tau) * self + tau * other`.
    pub fn interpolate(&self, other: &TransportPlan, tau: f64) -> Self {
        let data = self
            .plan
            .as_slice()
            .iter()
            .zip(other.plan.as_slice())
            .map(|(&a, &b)| ((1.0 - tau) * a + tau * b).max(0.0))
            .collect();
        Self::from_parts_unchecked(
            DenseMatrix::from_vec_unchecked(self.plan.rows(), self.plan.cols(), data),
            self.source.clone(),
            self.target.clone(),
        )
    }

    /// Permute the columns: `out[i][j] = self[i][perm[j]]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.plan.cols() {
            return Err(Error::invalid("column permutation has wrong length"));
        }
        let plan = DenseMatrix::from_fn(self.plan.rows(), self.plan.cols(), |i, j| {
            self.plan.get(i, perm[j])
        });
        let weights = perm.iter().map(|&p| self.target.weights()[p]).collect();
        Ok(Self::from_parts_unchecked(
            plan,
            self.source.clone(),
            DiscreteMeasure { weights },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_validation() {
        assert!(DiscreteMeasure::new(vec![0.5, 0.5]).is_ok());
        assert!(DiscreteMeasure::new(vec![0.5, 0.6]).is_err());
        assert!(DiscreteMeasure::new(vec![1.5, -0.5]).is_err());
        assert!(DiscreteMeasure::new(vec![]).is_err());
        assert!(DiscreteMeasure::uniform(7).is_uniform());
    }

    #[test]
    fn plan_validation() {
        let u = DiscreteMeasure::uniform(2);
        let ok = DenseMatrix::from_rows(&[[0.5, 0.0], [0.0, 0.5]]).unwrap();
        assert!(TransportPlan::new(ok, u.clone(), u.clone()).is_ok());
        let bad = DenseMatrix::from_rows(&[[0.5, 0.5], [0.0, 0.0]]).unwrap();
        assert!(TransportPlan::new(bad, u.clone(), u.clone()).is_err());
        let neg = DenseMatrix::from_rows(&[[0.6, -0.1], [-0.1, 0.6]]).unwrap();
        assert!(TransportPlan::new(neg, u.clone(), u).is_err());
    }

    #[test]
    fn permutation_and_product_are_feasible() {
        let p = TransportPlan::permutation(&[2, 0, 1]).unwrap();
        assert!(p.marginal_error() < 1e-15);
        assert!(TransportPlan::permutation(&[0, 0, 1]).is_err());
        let q = TransportPlan::product(&DiscreteMeasure::uniform(3), &DiscreteMeasure::uniform(5));
        assert!(q.marginal_error() < 1e-15);
        assert_eq!(q.transposed().shape(), (5, 3));
    }
}
