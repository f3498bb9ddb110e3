//! Gaussian policy with an RBF-parameterized mean.
//!
//! The mean is `mu(s) = sum_k theta_k * phi_k(s)` with
//! `phi_k(s) = exp(-|s - c_k|^2 / (2 sigma^2))` and one 2-vector `theta_k` per
//! kernel. The covariance is a fixed diagonal. In the flat parameter layout,
//! kernel `k` owns positions `2k` and `2k + 1`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::ScoreFunction;
use crate::navenv::{sq_dist, Vec2};

/// Uniform grid of kernel centers, `nx * ny` points starting at `origin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lattice {
    pub origin: Vec2,
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
}

impl Default for Lattice {
    /// 41 x 41 points covering [0, 10]^2 at spacing 0.25, both edges included.
    fn default() -> Self {
        Self { origin: [0.0, 0.0], spacing: 0.25, nx: 41, ny: 41 }
    }
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Centers in row-major order (x varies fastest).
    pub fn centers(&self) -> Vec<Vec2> {
        let mut out = Vec::with_capacity(self.len());
        for j in 0..self.ny {
            for i in 0..self.nx {
                out.push([self.origin[0] + i as f64 * self.spacing, self.origin[1] + j as f64 * self.spacing]);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyHyper {
    pub lattice: Lattice,
    pub bandwidth: f64,
    pub covariance_diag: Vec2,
}

impl Default for PolicyHyper {
    fn default() -> Self {
        Self { lattice: Lattice::default(), bandwidth: 0.5, covariance_diag: [0.5, 0.5] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    centers: Vec<Vec2>,
    bandwidth: f64,
    coefficients: Vec<Vec2>,
    covariance_diag: Vec2,
    /// Set when `centers` is exactly `grid.centers()`; enables separable features.
    grid: Option<Lattice>,
}

impl PolicyParams {
    pub fn new(centers: Vec<Vec2>, bandwidth: f64, coefficients: Vec<Vec2>, covariance_diag: Vec2) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidPolicy("bandwidth must be positive".into()));
        }
        if !covariance_diag.iter().all(|&c| c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidPolicy("covariance entries must be positive".into()));
        }
        if coefficients.len() != centers.len() {
            return Err(Error::LengthMismatch { expected: centers.len(), found: coefficients.len() });
        }
        Ok(Self { centers, bandwidth, coefficients, covariance_diag, grid: None })
    }

    /// Zero coefficients on the configured lattice.
    pub fn from_hyper(hyper: &PolicyHyper) -> Result<Self> {
        let centers = hyper.lattice.centers();
        let coefficients = vec![[0.0; 2]; centers.len()];
        let mut params = Self::new(centers, hyper.bandwidth, coefficients, hyper.covariance_diag)?;
        params.grid = Some(hyper.lattice.clone());
        Ok(params)
    }

    /// The lattice the centers were generated from, if any.
    pub fn lattice(&self) -> Option<&Lattice> {
        self.grid.as_ref()
    }

    pub fn centers(&self) -> &[Vec2] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn coefficients(&self) -> &[Vec2] {
        &self.coefficients
    }

    pub fn covariance_diag(&self) -> Vec2 {
        self.covariance_diag
    }

    pub fn num_kernels(&self) -> usize {
        self.centers.len()
    }

    /// Length of the flat parameter vector, `2 * num_kernels()`.
    pub fn num_params(&self) -> usize {
        2 * self.centers.len()
    }

    pub fn flat_coefficients(&self) -> &[f64] {
        self.coefficients.as_flattened()
    }

    pub fn with_flat_coefficients(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch { expected: self.num_params(), found: flat.len() });
        }
        let coefficients = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Ok(Self { coefficients, ..self.clone() })
    }

    /// `self + scale * direction` in the flat layout.
    pub fn step_along(&self, direction: &[f64], scale: f64) -> Result<Self> {
        if direction.len() != self.num_params() {
            return Err(Error::LengthMismatch { expected: self.num_params(), found: direction.len() });
        }
        let mut next = self.clone();
        for (c, d) in next.coefficients.as_flattened_mut().iter_mut().zip(direction) {
            *c += scale * d;
        }
        Ok(next)
    }

    pub fn features(&self, state: Vec2) -> Vec<f64> {
        let mut out = vec![0.0; self.centers.len()];
        self.features_into(state, &mut out);
        out
    }

    pub fn features_into(&self, state: Vec2, out: &mut [f64]) {
        let inv = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        if let Some(grid) = &self.grid {
            // exp(-(dx^2 + dy^2) k) = exp(-dx^2 k) exp(-dy^2 k) on a lattice
            let axis = |origin: f64, n: usize, x: f64| -> Vec<f64> {
                (0..n)
                    .map(|i| {
                        let d = x - (origin + i as f64 * grid.spacing);
                        (-d * d * inv).exp()
                    })
                    .collect()
            };
            let ex = axis(grid.origin[0], grid.nx, state[0]);
            let ey = axis(grid.origin[1], grid.ny, state[1]);
            for (row, fy) in out.chunks_exact_mut(grid.nx).zip(&ey) {
                for (f, fx) in row.iter_mut().zip(&ex) {
                    *f = fx * fy;
                }
            }
            return;
        }
        for (f, c) in out.iter_mut().zip(&self.centers) {
            *f = (-sq_dist(state, *c) * inv).exp();
        }
    }

    pub fn mean(&self, state: Vec2) -> Vec2 {
        self.mean_from_features(&self.features(state))
    }

    pub fn mean_from_features(&self, features: &[f64]) -> Vec2 {
        let mut m = [0.0; 2];
        for (f, c) in features.iter().zip(&self.coefficients) {
            m[0] += f * c[0];
            m[1] += f * c[1];
        }
        m
    }

    pub fn sample<R: Rng + ?Sized>(&self, state: Vec2, rng: &mut R) -> Vec2 {
        self.sample_from_features(&self.features(state), rng)
    }

    pub(crate) fn sample_from_features<R: Rng + ?Sized>(&self, features: &[f64], rng: &mut R) -> Vec2 {
        let m = self.mean_from_features(features);
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        [m[0] + self.covariance_diag[0].sqrt() * z0, m[1] + self.covariance_diag[1].sqrt() * z1]
    }

    /// Log-density of the bivariate Gaussian, normalizer `2 pi |Sigma|^(1/2)`.
    pub fn log_prob(&self, state: Vec2, action: Vec2) -> f64 {
        let m = self.mean(state);
        let [c0, c1] = self.covariance_diag;
        let (d0, d1) = (action[0] - m[0], action[1] - m[1]);
        -0.5 * (d0 * d0 / c0 + d1 * d1 / c1) - (2.0 * std::f64::consts::PI).ln() - 0.5 * (c0 * c1).ln()
    }

    /// Gradient of `log_prob` with respect to the flat coefficient vector.
    pub fn score(&self, state: Vec2, action: Vec2) -> Vec<f64> {
        let mut out = vec![0.0; self.num_params()];
        self.accumulate_score(&state, &action, 1.0, &mut out);
        out
    }

    /// `Sigma^-1 (a - mu(s))`, the per-kernel score before the feature factor.
    pub(crate) fn whitened_residual(&self, features: &[f64], action: Vec2) -> Vec2 {
        let m = self.mean_from_features(features);
        [(action[0] - m[0]) / self.covariance_diag[0], (action[1] - m[1]) / self.covariance_diag[1]]
    }
}

impl ScoreFunction<Vec2, Vec2> for PolicyParams {
    fn num_params(&self) -> usize {
        PolicyParams::num_params(self)
    }

    fn accumulate_score(&self, state: &Vec2, action: &Vec2, weight: f64, out: &mut [f64]) {
        let features = self.features(*state);
        let r = self.whitened_residual(&features, *action);
        let (w0, w1) = (weight * r[0], weight * r[1]);
        for (f, o) in features.iter().zip(out.chunks_exact_mut(2)) {
            o[0] += f * w0;
            o[1] += f * w1;
        }
    }

    fn accumulate_score_pair(&self, state: &Vec2, action: &Vec2, weights: (f64, f64), outs: (&mut [f64], &mut [f64])) {
        let features = self.features(*state);
        let r = self.whitened_residual(&features, *action);
        for (k, f) in features.iter().enumerate() {
            for (i, ri) in r.iter().enumerate() {
                outs.0[2 * k + i] += f * weights.0 * ri;
                outs.1[2 * k + i] += f * weights.1 * ri;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{EpisodeStreams, StreamDomain};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(center: Vec2, coef: Vec2) -> PolicyParams {
        PolicyParams::new(vec![center], 0.5, vec![coef], [0.5, 0.5]).unwrap()
    }

    #[test]
    fn default_lattice() {
        let lattice = Lattice::default();
        let centers = lattice.centers();
        assert_eq!(centers.len(), 1681);
        assert_eq!(centers[0], [0.0, 0.0]);
        assert_eq!(centers[1], [0.25, 0.0]);
        assert_eq!(centers[1680], [10.0, 10.0]);
        let p = PolicyParams::from_hyper(&PolicyHyper::default()).unwrap();
        assert_eq!(p.num_params(), 3362);
        assert!(p.flat_coefficients().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn feature_values() {
        let p = single([2.0, 3.0], [0.0, 0.0]);
        assert_eq!(p.features([2.0, 3.0]), vec![1.0]);
        // distance sigma * sqrt(2) = 0.5 * sqrt(2)
        let d = 0.5 * 2f64.sqrt();
        let f = p.features([2.0 + d, 3.0])[0];
        assert!((f - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn mean_examples() {
        let p = PolicyParams::from_hyper(&PolicyHyper::default()).unwrap();
        assert_eq!(p.mean([3.3, 4.1]), [0.0, 0.0]);
        let q = single([1.0, 1.0], [1.0, 2.0]);
        assert_eq!(q.mean([1.0, 1.0]), [1.0, 2.0]);
    }

    #[test]
    fn mean_is_linear_in_coefficients() {
        let centers = vec![[0.0, 0.0], [1.0, 0.5], [2.0, 2.0]];
        let c1 = vec![[0.3, -1.0], [2.0, 0.1], [-0.7, 0.4]];
        let c2 = vec![[1.1, 0.2], [-0.5, 0.9], [0.0, -2.0]];
        let sum: Vec<Vec2> = c1.iter().zip(&c2).map(|(a, b)| [a[0] + b[0], a[1] + b[1]]).collect();
        let p = |c: Vec<Vec2>| PolicyParams::new(centers.clone(), 0.7, c, [0.5, 0.5]).unwrap();
        let s = [0.8, 1.2];
        let (a, b, ab) = (p(c1).mean(s), p(c2).mean(s), p(sum).mean(s));
        for i in 0..2 {
            assert!((ab[i] - a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_covariance_samples_the_mean() {
        let p = PolicyParams::new(vec![[0.0, 0.0]], 0.5, vec![[1.5, -2.0]], [1e-300, 1e-300]).unwrap();
        let a = p.sample([0.0, 0.0], &mut ChaCha8Rng::seed_from_u64(1));
        assert!((a[0] - 1.5).abs() < 1e-100 && (a[1] + 2.0).abs() < 1e-100);
    }

    #[test]
    fn sample_moments() {
        let p = single([0.0, 0.0], [1.0, -1.0]);
        let mut rng = EpisodeStreams::new(5, StreamDomain::Eval).episode(0);
        let n = 100_000;
        let draws: Vec<Vec2> = (0..n).map(|_| p.sample([0.0, 0.0], &mut rng)).collect();
        for i in 0..2 {
            let mean = draws.iter().map(|a| a[i]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|a| (a[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let target = [1.0, -1.0][i];
            assert!((mean - target).abs() < 4.0 * (0.5 / n as f64).sqrt(), "mean {mean}");
            assert!((var - 0.5).abs() < 0.05 * 0.5, "var {var}");
        }
    }

    #[test]
    fn log_prob_at_mean() {
        let p = single([0.0, 0.0], [0.2, 0.3]);
        let lp = p.log_prob([0.0, 0.0], [0.2, 0.3]);
        assert!((lp + std::f64::consts::PI.ln()).abs() < 1e-12);
        assert!((lp + 1.14473).abs() < 1e-5);
    }

    #[test]
    fn log_prob_translation_invariant() {
        let p = single([0.0, 0.0], [0.2, 0.3]);
        let q = single([0.0, 0.0], [1.2, -0.7]);
        let a = p.log_prob([0.0, 0.0], [0.5, 0.5]);
        let b = q.log_prob([0.0, 0.0], [1.5, -0.5]);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        // midpoint rule over +-8 standard deviations
        let p = PolicyParams::new(vec![[0.0, 0.0]], 0.5, vec![[0.4, -0.3]], [0.5, 0.8]).unwrap();
        let h = 0.01;
        let n = 1600;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let a = [
                    -8.0 * 0.5f64.sqrt() + 0.4 + (i as f64 + 0.5) * h * 0.5f64.sqrt(),
                    -8.0 * 0.8f64.sqrt() - 0.3 + (j as f64 + 0.5) * h * 0.8f64.sqrt(),
                ];
                total += p.log_prob([0.0, 0.0], a).exp();
            }
        }
        total *= h * h * (0.5f64 * 0.8).sqrt();
        assert!((total - 1.0).abs() < 1e-3, "{total}");
    }

    #[test]
    fn score_examples() {
        let p = single([1.0, 1.0], [0.5, 0.5]);
        assert_eq!(p.score([1.0, 1.0], [0.5, 0.5]), vec![0.0, 0.0]);
        let s = p.score([1.0, 1.0], [0.6, 0.5]);
        assert!((s[0] - 0.2).abs() < 1e-12 && s[1].abs() < 1e-15);
        // central differences of log_prob
        let eps = 1e-6;
        for i in 0..2 {
            let mut flat = p.flat_coefficients().to_vec();
            flat[i] += eps;
            let plus = p.with_flat_coefficients(&flat).unwrap().log_prob([1.0, 1.0], [0.6, 0.5]);
            flat[i] -= 2.0 * eps;
            let minus = p.with_flat_coefficients(&flat).unwrap().log_prob([1.0, 1.0], [0.6, 0.5]);
            let fd = (plus - minus) / (2.0 * eps);
            assert!((fd - s[i]).abs() <= 1e-6 * 0.2, "{fd} vs {}", s[i]);
        }
    }

    #[test]
    fn score_has_zero_mean() {
        let p =
            PolicyParams::new(vec![[0.0, 0.0], [0.5, 0.0]], 0.5, vec![[1.0, 0.0], [0.0, -1.0]], [0.5, 0.5]).unwrap();
        let s = [0.2, 0.1];
        let n = 100_000;
        let mut rng = EpisodeStreams::new(9, StreamDomain::Eval).episode(1);
        let mut sum = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..n {
            let a = p.sample(s, &mut rng);
            for (i, g) in p.score(s, a).into_iter().enumerate() {
                sum[i] += g;
                sq[i] += g * g;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|x| x / n as f64).collect();
        let se: Vec<f64> = sq.iter().zip(&mean).map(|(q, m)| ((q / n as f64 - m * m) / n as f64).sqrt()).collect();
        let norm = mean.iter().map(|m| m * m).sum::<f64>().sqrt();
        let se_norm = se.iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!(norm < 4.0 * se_norm, "{norm} vs {se_norm}");
    }

    #[test]
    fn separable_features_match_direct_sum() {
        let hyper = PolicyHyper::default();
        let grid = PolicyParams::from_hyper(&hyper).unwrap();
        let direct = PolicyParams::new(hyper.lattice.centers(), 0.5, vec![[0.0; 2]; 1681], [0.5, 0.5]).unwrap();
        assert!(grid.lattice().is_some() && direct.lattice().is_none());
        for s in [[1.0, 8.5], [3.3, 7.1], [9.99, 0.01], [-2.0, 12.0]] {
            for (a, b) in grid.features(s).iter().zip(direct.features(s)) {
                assert!((a - b).abs() <= 1e-12 * b + 1e-300, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn nearest_center_dominates() {
        let p = PolicyParams::from_hyper(&PolicyHyper::default()).unwrap();
        let f = p.features([3.3, 7.1]);
        let nearest = p
            .centers()
            .iter()
            .enumerate()
            .min_by(|a, b| sq_dist(*a.1, [3.3, 7.1]).total_cmp(&sq_dist(*b.1, [3.3, 7.1])))
            .unwrap()
            .0;
        assert!(f.iter().all(|&x| x > 0.0 && x <= 1.0));
        assert!(f.iter().all(|&x| x <= f[nearest]));
    }

    #[test]
    fn rejects_invalid() {
        assert!(PolicyParams::new(vec![[0.0, 0.0]], 0.0, vec![[0.0, 0.0]], [0.5, 0.5]).is_err());
        assert!(PolicyParams::new(vec![[0.0, 0.0]], 0.5, vec![[0.0, 0.0]], [0.5, 0.0]).is_err());
        assert!(PolicyParams::new(vec![[0.0, 0.0]], 0.5, vec![], [0.5, 0.5]).is_err());
    }
}
