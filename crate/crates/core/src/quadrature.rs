//! Gauss-Hermite quadrature for expectations under a standard normal.
//!
//! Physicists' convention: nodes are roots of H_n and
//! integral f(x) e^{-x^2} dx ~= sum_i w_i f(x_i). Expectations under
//! N(0, 1) follow by the substitution z = sqrt(2) x.

/// One Gauss-Hermite rule.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Computes the n-point rule by Newton iteration on the orthonormal
    /// Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "need at least 2 nodes");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = (n + 1) / 2;
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            // Standard initial guesses for the i-th largest root.
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..200 {
                let (p, dp) = eval_orthonormal_hermite(n, z);
                pp = dp;
                let dz = p / dp;
                z -= dz;
                if dz.abs() < 1e-15 * (1.0 + z.abs()) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        GaussHermite { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// E[f(Z)] for Z ~ N(0, 1).
    pub fn expect_standard_normal(&self, f: impl Fn(f64) -> f64) -> f64 {
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let sqrt2 = std::f64::consts::SQRT_2;
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(sqrt2 * x);
        }
        acc * inv_sqrt_pi
    }
}

/// Value and derivative of the orthonormal Hermite polynomial of degree n.
fn eval_orthonormal_hermite(n: usize, x: f64) -> (f64, f64) {
    let pi_m4 = std::f64::consts::PI.powf(-0.25);
    let mut p_prev = 0.0;
    let mut p = pi_m4;
    for j in 0..n {
        let jf = j as f64;
        let p_next = x * (2.0 / (jf + 1.0)).sqrt() * p - (jf / (jf + 1.0)).sqrt() * p_prev;
        p_prev = p;
        p = p_next;
    }
    let dp = (2.0 * n as f64).sqrt() * p_prev;
    (p, dp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for &n in &[8usize, 16, 32] {
            let gh = GaussHermite::new(n);
            let sum: f64 = gh.weights().iter().sum();
            assert_relative_eq!(sum, std::f64::consts::PI.sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn standard_normal_moments() {
        let gh = GaussHermite::new(32);
        assert_relative_eq!(gh.expect_standard_normal(|_| 1.0), 1.0, epsilon = 1e-13);
        assert_relative_eq!(gh.expect_standard_normal(|z| z), 0.0, epsilon = 1e-13);
        assert_relative_eq!(gh.expect_standard_normal(|z| z * z), 1.0, epsilon = 1e-12);
        assert_relative_eq!(
            gh.expect_standard_normal(|z| z.powi(4)),
            3.0,
            epsilon = 1e-11
        );
        assert_relative_eq!(
            gh.expect_standard_normal(|z| z.powi(6)),
            15.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn integrates_gaussian_mgf() {
        // E[e^{tZ}] = e^{t^2/2}; smooth integrand, rapid convergence.
        let gh = GaussHermite::new(32);
        for &t in &[0.5, 1.0, 2.0] {
            let got = gh.expect_standard_normal(|z| (t * z).exp());
            assert_relative_eq!(got, (t * t / 2.0f64).exp(), epsilon = 1e-9);
        }
    }

    #[test]
    fn nodes_are_symmetric_and_sorted_pairs() {
        let gh = GaussHermite::new(32);
        let n = gh.nodes().len();
        for i in 0..n {
            assert_relative_eq!(gh.nodes()[i], -gh.nodes()[n - 1 - i], epsilon = 1e-12);
        }
    }
}
