//! Small numerical helpers shared across modules.

/// Logistic function 1 / (1 + e^-x).
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log sigmoid(x), computed without overflow for large |x|.
pub fn log_sigmoid(x: f64) -> f64 {
    // log phi(x) = -softplus(-x) = min(x, 0) - ln(1 + e^-|x|)
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// Mean and standard error of a sample.
pub fn mean_and_se(sum: f64, sum_sq: f64, n: u64) -> (f64, f64) {
    let n_f = n as f64;
    let mean = sum / n_f;
    let var = (sum_sq / n_f - mean * mean).max(0.0);
    (mean, (var / n_f).sqrt())
}

/// Determinant of a dense column-major K x K matrix via partial-pivot LU.
pub fn det_lu(matrix: &[f64], k: usize) -> f64 {
    assert_eq!(matrix.len(), k * k);
    let mut a = matrix.to_vec();
    let at = |a: &[f64], row: usize, col: usize| a[col * k + row];
    let mut det = 1.0;
    for p in 0..k {
        let mut pivot = p;
        for r in (p + 1)..k {
            if at(&a, r, p).abs() > at(&a, pivot, p).abs() {
                pivot = r;
            }
        }
        if at(&a, pivot, p) == 0.0 {
            return 0.0;
        }
        if pivot != p {
            for c in 0..k {
                a.swap(c * k + p, c * k + pivot);
            }
            det = -det;
        }
        let pv = at(&a, p, p);
        det *= pv;
        for r in (p + 1)..k {
            let f = at(&a, r, p) / pv;
            for c in p..k {
                a[c * k + r] -= f * at(&a, p, c);
            }
        }
    }
    det
}

/// Cosine similarity of two vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigmoid_basics() {
        assert_relative_eq!(sigmoid(0.0), 0.5);
        assert_relative_eq!(sigmoid(1.0), 1.0 / (1.0 + (-1.0f64).exp()));
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert_relative_eq!(sigmoid(3.0) + sigmoid(-3.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn log_sigmoid_matches_direct_eval() {
        for &x in &[-30.0, -2.0, -0.1, 0.0, 0.1, 2.0, 30.0] {
            assert_relative_eq!(log_sigmoid(x), sigmoid(x).ln(), epsilon = 1e-12);
        }
        // No overflow far in the tails.
        assert!(log_sigmoid(-1e4).is_finite());
        assert_eq!(log_sigmoid(1e4), 0.0);
    }

    #[test]
    fn det_of_small_matrices() {
        // column-major 2x2 [[0.8, 0.2], [0.2, 0.8]]
        let m = [0.8, 0.2, 0.2, 0.8];
        assert_relative_eq!(det_lu(&m, 2), 0.6, epsilon = 1e-14);
        let id3 = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_relative_eq!(det_lu(&id3, 3), 1.0);
        let singular = [1.0, 1.0, 1.0, 1.0];
        assert_eq!(det_lu(&singular, 2), 0.0);
    }
}
