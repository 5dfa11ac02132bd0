//! Sine basis `e_i(ξ) = √2 sin(iπξ)` of `L²(0,1)` with trapezoid quadrature.

/// Intervals of the default spatial grid.
pub const DEFAULT_INTERVALS: usize = 128;

/// Interior nodes `ξ_j = j/J`, weight `1/J`, and the basis sampled on them.
///
/// The endpoint nodes carry no basis mass (Dirichlet conditions), so the
/// trapezoid rule reduces to equal weights on the interior; the sampled basis
/// is exactly orthonormal for modes below `J`.
#[derive(Clone, Debug)]
pub struct SineGrid {
    pub n_modes: usize,
    pub nodes: Vec<f64>,
    pub weight: f64,
    // [mode][node]
    basis: Vec<f64>,
}

impl SineGrid {
    pub fn new(n_modes: usize, intervals: usize) -> Self {
        assert!(n_modes < intervals, "modes must stay below the grid size");
        let weight = 1.0 / intervals as f64;
        let nodes: Vec<f64> = (1..intervals).map(|j| j as f64 * weight).collect();
        let mut basis = Vec::with_capacity(n_modes * nodes.len());
        for i in 1..=n_modes {
            for &xi in &nodes {
                basis.push(std::f64::consts::SQRT_2 * (i as f64 * std::f64::consts::PI * xi).sin());
            }
        }
        Self {
            n_modes,
            nodes,
            weight,
            basis,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// `e_i(ξ_j)` for mode index `i` (0-based).
    pub fn mode(&self, i: usize) -> &[f64] {
        let n = self.nodes.len();
        &self.basis[i * n..(i + 1) * n]
    }

    /// Field values `Σ_i c_i e_i(ξ_j)` from the first `coeffs.len()` modes.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        for (i, c) in coeffs.iter().enumerate() {
            if *c != 0.0 {
                for (o, e) in out.iter_mut().zip(self.mode(i)) {
                    *o += c * e;
                }
            }
        }
        out
    }

    /// Quadrature coefficients `Σ_j w v_j e_i(ξ_j)` for the first `n` modes.
    pub fn analyze(&self, values: &[f64], n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| self.weight * crate::spectral::dot(values, self.mode(i)))
            .collect()
    }

    /// Trapezoid integral of a field whose endpoint values are `boundary`.
    pub fn integrate(&self, values: &[f64], boundary: f64) -> f64 {
        self.weight * (values.iter().sum::<f64>() + boundary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrete_orthonormality() {
        let g = SineGrid::new(40, DEFAULT_INTERVALS);
        for i in 0..40 {
            for k in 0..40 {
                let ip = g.weight * crate::spectral::dot(g.mode(i), g.mode(k));
                let want = if i == k { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-13, "({i},{k}) {ip}");
            }
        }
    }

    #[test]
    fn synthesis_and_analysis_invert() {
        let g = SineGrid::new(8, DEFAULT_INTERVALS);
        let c = [0.3, -1.0, 0.0, 2.0, 0.5, 0.0, 0.1, -0.2];
        let back = g.analyze(&g.synthesize(&c), 8);
        for (a, b) in c.iter().zip(&back) {
            assert!((a - b).abs() < 1e-13);
        }
        // ∫ e_1 = 2√2/π
        let one = g.integrate(g.mode(0), 0.0);
        assert!((one - 2.0 * std::f64::consts::SQRT_2 / std::f64::consts::PI).abs() < 1e-4);
    }
}
