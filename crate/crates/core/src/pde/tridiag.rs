//! Tridiagonal direct solve (Thomas algorithm) with a diagonal-dominance
//! guard; the guard is what turns an over-aggressive advective time step into
//! a named error instead of a silent oscillation.

/// Row dominance failure: position and how badly the row lost dominance.
pub struct DominanceViolation {
    pub position: usize,
    pub excess: f64,
}

/// Check strict-enough diagonal dominance `|diag| >= |lower| + |upper|`.
pub fn check_dominance(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
) -> Option<DominanceViolation> {
    let n = diag.len();
    for i in 0..n {
        let l = if i > 0 { lower[i].abs() } else { 0.0 };
        let u = if i + 1 < n { upper[i].abs() } else { 0.0 };
        let excess = l + u - diag[i].abs();
        if excess > 0.0 {
            return Some(DominanceViolation {
                position: i,
                excess,
            });
        }
    }
    None
}

/// Solve the tridiagonal system in place: `x` enters holding the right-hand
/// side and leaves holding the solution. `lower[i]` multiplies `x[i-1]`,
/// `upper[i]` multiplies `x[i+1]`. Scratch must have length `n`.
pub fn solve(lower: &[f64], diag: &[f64], upper: &[f64], x: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    debug_assert!(lower.len() == n && upper.len() == n && x.len() == n && scratch.len() == n);
    // forward sweep
    let mut beta = diag[0];
    x[0] /= beta;
    for i in 1..n {
        scratch[i] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * scratch[i];
        x[i] = (x[i] - lower[i] * x[i - 1]) / beta;
    }
    // back substitution
    for i in (0..n - 1).rev() {
        x[i] -= scratch[i + 1] * x[i + 1];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_reference_system() {
        // [2 1 0; 1 3 1; 0 1 2] x = [3, 10, 9] -> x = [0.5, 2, 3.5]
        let lower = [0.0, 1.0, 1.0];
        let diag = [2.0, 3.0, 2.0];
        let upper = [1.0, 1.0, 0.0];
        let mut x = [3.0, 10.0, 9.0];
        let mut scratch = [0.0; 3];
        solve(&lower, &diag, &upper, &mut x, &mut scratch);
        for (got, want) in x.iter().zip([0.5, 2.0, 3.5]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn identity_matrix_is_noop() {
        let lower = [0.0; 5];
        let diag = [1.0; 5];
        let upper = [0.0; 5];
        let mut x = [1.0, -2.0, 3.0, -4.0, 5.0];
        let mut scratch = [0.0; 5];
        solve(&lower, &diag, &upper, &mut x, &mut scratch);
        assert_eq!(x, [1.0, -2.0, 3.0, -4.0, 5.0]);
    }

    #[test]
    fn dominance_violation_located() {
        let lower = [0.0, 5.0, 0.1];
        let diag = [1.0, 1.0, 1.0];
        let upper = [0.1, 0.1, 0.0];
        let v = check_dominance(&lower, &diag, &upper).unwrap();
        assert_eq!(v.position, 1);
        assert!(v.excess > 4.0);
    }

    #[test]
    fn dominant_passes() {
        let lower = [0.0, -0.3, -0.3];
        let diag = [1.5, 1.5, 1.5];
        let upper = [-0.3, -0.3, 0.0];
        assert!(check_dominance(&lower, &diag, &upper).is_none());
    }
}
