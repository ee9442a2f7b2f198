//! Small shared linear-algebra helpers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Minimum-norm least-squares solution of `design * x = rhs` via the
/// normal equations and a symmetric eigendecomposition (small systems
/// only). Returns the solution and whether the system was rank deficient.
pub fn min_norm_solve(design: &DMatrix<f64>, rhs: &DVector<f64>) -> (DVector<f64>, bool) {
    let gram = design.transpose() * design;
    let b = design.transpose() * rhs;
    let n = gram.nrows();
    let eig = SymmetricEigen::new(gram);
    let max_ev = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    let tol = 1e-10 * max_ev.max(f64::MIN_POSITIVE);
    let mut rank = 0usize;
    let mut sol = DVector::zeros(n);
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam.abs() > tol {
            rank += 1;
            let v = eig.eigenvectors.column(k);
            sol += v * (v.dot(&b) / lam);
        }
    }
    (sol, rank < n)
}
