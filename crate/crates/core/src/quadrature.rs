//! Gauss rules built with the Golub–Welsch eigenvalue method.
//!
//! Rules are returned as probability-weighted node sets (weights sum to one),
//! so `Σ wᵢ f(xᵢ)` approximates `E[f(Z)]` directly.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and probability weights of a Gauss rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ wᵢ f(xᵢ)`.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Point mass at `x`.
    pub fn point(x: f64) -> Self {
        Self {
            nodes: vec![x],
            weights: vec![1.0],
        }
    }
}

fn golub_welsch(diag: &[f64], off: &[f64]) -> GaussRule {
    let n = diag.len();
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        j[(i, i)] = diag[i];
        if i + 1 < n {
            j[(i, i + 1)] = off[i];
            j[(i + 1, i)] = off[i];
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1 / total).collect(),
    }
}

/// Generalized Gauss–Laguerre rule for the Gamma(`shape`, 1) law.
pub fn gauss_gamma(n: usize, shape: f64) -> GaussRule {
    assert!(n >= 1 && shape > 0.0);
    let a = shape - 1.0;
    let diag: Vec<f64> = (0..n).map(|i| 2.0 * i as f64 + a + 1.0).collect();
    let off: Vec<f64> = (1..n)
        .map(|i| (i as f64 * (i as f64 + a)).sqrt())
        .collect();
    golub_welsch(&diag, &off)
}

/// Gauss rule for a chi-square law with `df` degrees of freedom.
/// `df = 0` is the point mass at zero.
pub fn gauss_chi_square(n: usize, df: usize) -> GaussRule {
    if df == 0 {
        return GaussRule::point(0.0);
    }
    let mut rule = gauss_gamma(n, df as f64 / 2.0);
    for x in &mut rule.nodes {
        *x *= 2.0;
    }
    rule
}

/// Gauss–Legendre rule for the uniform law on `(lo, hi)`.
pub fn gauss_uniform(n: usize, lo: f64, hi: f64) -> GaussRule {
    assert!(n >= 1);
    let diag = vec![0.0; n];
    let off: Vec<f64> = (1..n)
        .map(|i| {
            let i = i as f64;
            i / (4.0 * i * i - 1.0).sqrt()
        })
        .collect();
    let mut rule = golub_welsch(&diag, &off);
    let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
    for x in &mut rule.nodes {
        *x = mid + half * *x;
    }
    rule
}

/// Composite rule for `χ²_df` that is graded towards the point `kink`.
///
/// Integrands like `|1 − cX|^s` are not smooth at `X = 1/c`, which ruins the
/// spectral accuracy of a plain Gauss rule. This integrates in `u = √X` with
/// Gauss–Legendre panels that shrink geometrically towards `√kink`.
pub fn graded_chi_square(df: usize, kink: f64, per_panel: usize) -> GaussRule {
    assert!(df >= 1 && per_panel >= 1);
    let k = df as f64;
    let top = k.sqrt() + 13.0;
    let mut cuts = vec![0.0, top];
    let add_uniform = |lo: f64, hi: f64, cuts: &mut Vec<f64>| {
        let n = ((hi - lo) / 0.5).ceil() as usize;
        for i in 1..n {
            cuts.push(lo + (hi - lo) * i as f64 / n as f64);
        }
    };
    if kink.is_finite() && kink > 0.0 && kink.sqrt() < top {
        let u0 = kink.sqrt();
        cuts.push(u0);
        for j in 1..48 {
            let f = 0.5f64.powi(j);
            cuts.push(u0 - u0 * f);
            cuts.push(u0 + (top - u0) * f);
        }
        add_uniform(0.0, u0 / 2.0, &mut cuts);
        add_uniform(u0 + (top - u0) / 2.0, top, &mut cuts);
    } else {
        add_uniform(0.0, top, &mut cuts);
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15 * top);
    let base = gauss_uniform(per_panel, 0.0, 1.0);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        for (&t, &wt) in base.nodes.iter().zip(&base.weights) {
            let u = lo + (hi - lo) * t;
            // density of u up to a constant: u^{df-1} e^{-u²/2}
            let dens = ((k - 1.0) * u.ln() - 0.5 * u * u).exp();
            let wu = wt * (hi - lo) * if df == 1 { (-0.5 * u * u).exp() } else { dens };
            nodes.push(u * u);
            weights.push(wu);
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    GaussRule { nodes, weights }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_moments_are_exact() {
        for df in [1usize, 2, 5, 10, 99] {
            let r = gauss_chi_square(128, df);
            let k = df as f64;
            assert!((r.expect(|_| 1.0) - 1.0).abs() < 1e-12);
            assert!((r.expect(|x| x) - k).abs() < 1e-9 * k.max(1.0));
            let m2 = k * k + 2.0 * k;
            assert!((r.expect(|x| x * x) - m2).abs() < 1e-9 * m2);
        }
    }

    #[test]
    fn zero_df_is_point_mass() {
        let r = gauss_chi_square(128, 0);
        assert_eq!(r.nodes, vec![0.0]);
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn graded_rule_moments() {
        let root_mean = [(1usize, 0.7978845608028655), (3, 1.5957691216057308), (10, 3.084327759799864)];
        for (df, kink) in [(1usize, 2.5), (3, 7.0), (10, 1e6), (10, 0.01)] {
            let r = root_mean.iter().find(|p| p.0 == df).unwrap().1;
            let g = graded_chi_square(df, kink, 20);
            let k = df as f64;
            assert!((g.expect(|x| x) - k).abs() < 1e-10 * k, "{df} {kink}");
            assert!((g.expect(|x| x * x) - (k * k + 2.0 * k)).abs() < 1e-9 * k * k);
            assert!((g.expect(|x| x.sqrt()) - r).abs() < 1e-10);
        }
    }

    #[test]
    fn uniform_rule_integrates_polynomials() {
        let r = gauss_uniform(16, 0.5, 1.5);
        // E[x^3] for U(0.5,1.5) = (1.5^4 - 0.5^4) / 4
        let exact = (1.5f64.powi(4) - 0.5f64.powi(4)) / 4.0;
        assert!((r.expect(|x| x.powi(3)) - exact).abs() < 1e-13);
        assert!(r.nodes.iter().all(|&x| x > 0.5 && x < 1.5));
    }
}
