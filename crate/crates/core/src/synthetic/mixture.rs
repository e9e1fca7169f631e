use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::points::{LabeledSample, Points};

/// Dimension of the geometric benchmark.
pub const GEOMETRIC_DIM: usize = 50;

const LOG_RATIO_CAP: f64 = 700.0;

/// Finite mixture of multivariate normals with cached Cholesky factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureParams", into = "MixtureParams")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
    log_norms: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MixtureParams {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    /// Row-major `d x d` blocks.
    covariances: Vec<Vec<f64>>,
}

impl TryFrom<MixtureParams> for GaussianMixture {
    type Error = Error;

    fn try_from(p: MixtureParams) -> Result<Self> {
        let d = p.means.first().map_or(0, Vec::len);
        let covs = p
            .covariances
            .into_iter()
            .map(|c| {
                if c.len() != d * d {
                    return Err(invalid("covariance block has the wrong size"));
                }
                Ok(DMatrix::from_row_slice(d, d, &c))
            })
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(p.weights, p.means, covs)
    }
}

impl From<GaussianMixture> for MixtureParams {
    fn from(g: GaussianMixture) -> Self {
        MixtureParams {
            weights: g.weights,
            means: g.means,
            covariances: g
                .covariances
                .iter()
                .map(|c| c.transpose().as_slice().to_vec())
                .collect(),
        }
    }
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(invalid("mixture needs matching nonempty weights, means and covariances"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("mixture weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d || m.iter().any(|v| !v.is_finite())) {
            return Err(invalid("component means must share a positive dimension and be finite"));
        }
        let mut factors = Vec::with_capacity(k);
        let mut log_norms = Vec::with_capacity(k);
        for (j, cov) in covariances.iter().enumerate() {
            if cov.nrows() != d || cov.ncols() != d {
                return Err(invalid(format!("covariance {j} is not {d}x{d}")));
            }
            if (cov - cov.transpose()).amax() > 1e-12 * cov.amax().max(1.0) {
                return Err(invalid(format!("covariance {j} is not symmetric")));
            }
            let chol = cov
                .clone()
                .cholesky()
                .ok_or_else(|| invalid(format!("covariance {j} is not positive definite")))?;
            let l = chol.l();
            let log_det_half: f64 = l.diagonal().iter().map(|v| v.ln()).sum();
            log_norms.push(-0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - log_det_half);
            factors.push(l);
        }
        Ok(GaussianMixture {
            weights,
            means,
            covariances,
            factors,
            log_norms,
        })
    }

    /// One component with identity covariance.
    pub fn standard(mean: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        GaussianMixture::new(vec![1.0], vec![mean], vec![DMatrix::identity(d, d)])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(invalid(format!(
                "point has dimension {}, mixture has {}",
                x.len(),
                self.dim()
            )));
        }
        let mut terms = Vec::with_capacity(self.components());
        for j in 0..self.components() {
            if self.weights[j] == 0.0 {
                continue;
            }
            let diff = DVector::from_iterator(x.len(), x.iter().zip(&self.means[j]).map(|(a, b)| a - b));
            let z = self.factors[j]
                .solve_lower_triangular(&diff)
                .expect("Cholesky factor has a positive diagonal");
            terms.push(self.weights[j].ln() + self.log_norms[j] - 0.5 * z.norm_squared());
        }
        let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(top + terms.iter().map(|t| (t - top).exp()).sum::<f64>().ln())
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }

    /// Categorical component choice followed by a correlated normal draw.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Points {
        let d = self.dim();
        let mut data = Vec::with_capacity(count * d);
        let mut z = DVector::zeros(d);
        for _ in 0..count {
            let j = self.pick_component(rng.random::<f64>());
            for v in z.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let x = &self.factors[j] * &z;
            data.extend(x.iter().zip(&self.means[j]).map(|(a, m)| a + m));
        }
        Points::new(d, data).expect("dimension is positive")
    }

    fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (j, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return j;
            }
        }
        self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }
}

pub fn mixture_density(gm: &GaussianMixture, x: &[f64]) -> Result<f64> {
    gm.density(x)
}

pub fn sample_mixture(gm: &GaussianMixture, count: usize, seed: u64) -> Points {
    gm.sample(count, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Numerator `p` (label +1) and denominator `q` mixtures with the exact ratio
/// `p / q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePairProblem {
    pub p: GaussianMixture,
    pub q: GaussianMixture,
    pub seed: u64,
}

impl MixturePairProblem {
    pub fn new(p: GaussianMixture, q: GaussianMixture, seed: u64) -> Result<Self> {
        if p.dim() != q.dim() {
            return Err(invalid("numerator and denominator mixtures differ in dimension"));
        }
        Ok(MixturePairProblem { p, q, seed })
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    /// `p(x)/q(x)`, with the log-ratio capped so the value stays finite.
    pub fn exact_ratio(&self, x: &[f64]) -> Result<f64> {
        let lr = self.p.log_density(x)? - self.q.log_density(x)?;
        Ok(lr.clamp(-LOG_RATIO_CAP, LOG_RATIO_CAP).exp())
    }

    pub fn exact_ratios(&self, points: &Points) -> Result<Vec<f64>> {
        points.rows().map(|x| self.exact_ratio(x)).collect()
    }

    /// `m` numerator and `n` denominator draws from independent streams.
    pub fn sample(&self, m: usize, n: usize, seed: u64) -> LabeledSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xp = self.p.sample(m, &mut rng);
        let xq = self.q.sample(n, &mut rng);
        LabeledSample::new(xp, xq).expect("mixtures share a dimension")
    }

    /// Copy in which both sides use the denominator mixture.
    pub fn with_shared_parameters(&self) -> Self {
        MixturePairProblem {
            p: self.q.clone(),
            q: self.q.clone(),
            seed: self.seed,
        }
    }
}

fn random_mixture(rng: &mut ChaCha8Rng, components: usize, dim: usize) -> GaussianMixture {
    let raw: Vec<f64> = (0..components).map(|_| rng.random::<f64>() + f64::MIN_POSITIVE).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let drift: f64 = 1.0 - weights.iter().sum::<f64>();
    weights[components - 1] += drift;
    let means = (0..components)
        .map(|_| (0..dim).map(|_| 0.5 * rng.random::<f64>()).collect())
        .collect();
    let covs = (0..components)
        .map(|_| {
            let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let mut s = &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.1;
            // symmetrize away rounding in the product
            s = (&s + s.transpose()) * 0.5;
            s
        })
        .collect();
    GaussianMixture::new(weights, means, covs).expect("sampled covariance is positive definite")
}

/// Random mixture pair in `R^50`: `n` components for `p` and `4 - n` for `q`.
pub fn make_geometric_problem(seed: u64) -> MixturePairProblem {
    make_geometric_problem_with_dim(seed, GEOMETRIC_DIM)
}

pub fn make_geometric_problem_with_dim(seed: u64, dim: usize) -> MixturePairProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=3usize);
    let p = random_mixture(&mut rng, n, dim);
    let q = random_mixture(&mut rng, 4 - n, dim);
    MixturePairProblem { p, q, seed }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_density_at_mean() {
        for d in [1usize, 3, 7] {
            let g = GaussianMixture::standard(vec![0.5; d]).unwrap();
            let want = (2.0 * std::f64::consts::PI).powf(-(d as f64) / 2.0);
            assert!((g.density(&vec![0.5; d]).unwrap() - want).abs() < 1e-14 * want.max(1.0));
        }
    }

    #[test]
    fn two_symmetric_components() {
        let g = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![0.0], vec![1.0]],
            vec![DMatrix::identity(1, 1), DMatrix::identity(1, 1)],
        )
        .unwrap();
        assert!((g.density(&[0.5]).unwrap() - 0.35206533).abs() < 1e-8);
        let twin = GaussianMixture::new(
            vec![0.3, 0.7],
            vec![vec![0.2], vec![0.2]],
            vec![DMatrix::identity(1, 1) * 2.0, DMatrix::identity(1, 1) * 2.0],
        )
        .unwrap();
        let single = GaussianMixture::new(vec![1.0], vec![vec![0.2]], vec![DMatrix::identity(1, 1) * 2.0]).unwrap();
        for x in [-1.0, 0.0, 0.4, 3.0] {
            assert!((twin.density(&[x]).unwrap() - single.density(&[x]).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_mixtures() {
        let i = DMatrix::<f64>::identity(2, 2);
        assert!(GaussianMixture::new(vec![0.5, 0.4], vec![vec![0.0; 2]; 2], vec![i.clone(), i.clone()]).is_err());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0; 2]], vec![bad]).is_err());
        let skew = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(GaussianMixture::new(vec![1.0], vec![vec![0.0; 2]], vec![skew]).is_err());
        assert!(GaussianMixture::standard(vec![0.0]).unwrap().density(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let g = make_geometric_problem_with_dim(4, 5).p;
        assert_eq!(sample_mixture(&g, 0, 1).len(), 0);
        assert_eq!(sample_mixture(&g, 50, 9), sample_mixture(&g, 50, 9));
        assert_ne!(sample_mixture(&g, 50, 9), sample_mixture(&g, 50, 10));
    }

    #[test]
    fn sample_mean_within_clt_envelope() {
        let mu = vec![0.3, -1.2, 2.0];
        let g = GaussianMixture::standard(mu.clone()).unwrap();
        let n = 100_000;
        let x = sample_mixture(&g, n, 17);
        for (j, m) in mu.iter().enumerate() {
            let avg = x.rows().map(|r| r[j]).sum::<f64>() / n as f64;
            assert!((avg - m).abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn geometric_problem_shape() {
        for seed in 0..20 {
            let prob = make_geometric_problem_with_dim(seed, 6);
            assert_eq!(prob.p.components() + prob.q.components(), 4);
            for m in prob.p.means().iter().chain(prob.q.means()) {
                assert!(m.iter().all(|v| (0.0..=0.5).contains(v)));
            }
            let r = prob.exact_ratio(&[0.25; 6]).unwrap();
            assert!(r.is_finite() && r > 0.0);
            let far = prob.exact_ratio(&[1e3; 6]).unwrap();
            assert!(far.is_finite() && far > 0.0);
            let flat = prob.with_shared_parameters();
            assert_eq!(flat.exact_ratio(&[0.1; 6]).unwrap(), 1.0);
        }
        assert_eq!(make_geometric_problem(3).dim(), 50);
    }

    #[test]
    fn mixture_serde_roundtrip() {
        let g = make_geometric_problem_with_dim(2, 3).q;
        let text = serde_json::to_string(&g).unwrap();
        let back: GaussianMixture = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
    }
}
