//! Exact Bayesian linear regression.
//!
//! A linear-kernel Gaussian process over a feature map is the same object as
//! Bayesian linear regression on the features: with a zero-mean prior
//! `w ~ N(0, Σp)` and observation noise `σ²`, the posterior is
//! `N(σ⁻² A⁻¹ Φᵀ Y, A⁻¹)` with precision `A = σ⁻² ΦᵀΦ + Σp⁻¹` (rows of `Φ`
//! are feature vectors). Multi-output targets share the precision matrix and
//! differ only in their mean columns.
//!
//! The posterior stores the precision and the information vector
//! `b = σ⁻² ΦᵀY`, both additive in the data, and solves through a Cholesky
//! factor. No explicit inverse is formed on the update path.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;

/// Precision matrices with a larger condition number are flagged as ill-conditioned.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLinearPrior {
    prior_covariance: DMatrix<f64>,
    prior_precision: DMatrix<f64>,
    noise_variance: f64,
}

impl GaussianLinearPrior {
    pub fn new(prior_covariance: DMatrix<f64>, noise_variance: f64) -> Result<Self> {
        let d = prior_covariance.nrows();
        if d == 0 || prior_covariance.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "prior covariance must be square and non-empty, got {}x{}",
                prior_covariance.nrows(),
                prior_covariance.ncols()
            )));
        }
        ensure_finite(&prior_covariance, "prior covariance")?;
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        let asymmetry = max_asymmetry(&prior_covariance);
        if asymmetry > SYMMETRY_TOL {
            return Err(Error::InvalidParameter(format!(
                "prior covariance is not symmetric (max |C - Cᵀ| = {asymmetry:e})"
            )));
        }
        let chol = Cholesky::new(prior_covariance.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("prior covariance".into()))?;
        let mut prior_precision = chol.inverse();
        symmetrize(&mut prior_precision);
        Ok(Self {
            prior_covariance,
            prior_precision,
            noise_variance,
        })
    }

    /// `Σp = scale · I`.
    pub fn isotropic(dim: usize, scale: f64, noise_variance: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prior scale must be positive, got {scale}"
            )));
        }
        Self::new(DMatrix::identity(dim, dim) * scale, noise_variance)
    }

    pub fn dim(&self) -> usize {
        self.prior_covariance.nrows()
    }

    pub fn prior_covariance(&self) -> &DMatrix<f64> {
        &self.prior_covariance
    }

    pub fn prior_precision(&self) -> &DMatrix<f64> {
        &self.prior_precision
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Largest eigenvalue of the prior covariance.
    pub fn max_prior_variance(&self) -> f64 {
        SymmetricEigen::new(self.prior_covariance.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Posterior over a `d_φ × d_out` weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLinearPosterior {
    mean: DMatrix<f64>,
    precision: DMatrix<f64>,
    information: DMatrix<f64>,
    cholesky_lower: DMatrix<f64>,
    noise_variance: f64,
    n_points: usize,
    ill_conditioned: bool,
}

/// One draw of the weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSample {
    pub weights: DMatrix<f64>,
}

impl GaussianLinearPosterior {
    /// The prior viewed as a posterior with no data.
    pub fn from_prior(prior: &GaussianLinearPrior, output_dim: usize) -> Result<Self> {
        let d = prior.dim();
        Self::assemble(
            prior.prior_precision.clone(),
            DMatrix::zeros(d, output_dim),
            prior.noise_variance,
            0,
        )
    }

    /// Batch posterior from `features` (N × d_φ) and `targets` (N × d_out).
    pub fn from_data(
        prior: &GaussianLinearPrior,
        features: &DMatrix<f64>,
        targets: &DMatrix<f64>,
    ) -> Result<Self> {
        check_data(prior.dim(), targets.ncols(), features, targets)?;
        let inv_noise = 1.0 / prior.noise_variance;
        let mut precision = features.tr_mul(features) * inv_noise;
        symmetrize(&mut precision);
        precision += &prior.prior_precision;
        let information = features.tr_mul(targets) * inv_noise;
        Self::assemble(precision, information, prior.noise_variance, features.nrows())
    }

    /// Absorbs additional rows. Equal (up to round-off) to [`Self::from_data`]
    /// on the concatenated data.
    pub fn sequential_update(
        &self,
        features: &DMatrix<f64>,
        targets: &DMatrix<f64>,
    ) -> Result<Self> {
        check_data(self.dim(), self.output_dim(), features, targets)?;
        if features.nrows() == 0 {
            return Ok(self.clone());
        }
        let inv_noise = 1.0 / self.noise_variance;
        let mut gram = features.tr_mul(features) * inv_noise;
        symmetrize(&mut gram);
        let precision = &self.precision + gram;
        let information = &self.information + features.tr_mul(targets) * inv_noise;
        Self::assemble(
            precision,
            information,
            self.noise_variance,
            self.n_points + features.nrows(),
        )
    }

    fn assemble(
        precision: DMatrix<f64>,
        information: DMatrix<f64>,
        noise_variance: f64,
        n_points: usize,
    ) -> Result<Self> {
        let eigenvalues = SymmetricEigen::new(precision.clone()).eigenvalues;
        let (lo, hi) = eigenvalues
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        let ill_conditioned = !(lo > 0.0) || hi / lo > CONDITION_LIMIT;
        if ill_conditioned {
            log::warn!(
                "posterior precision is ill-conditioned (eigenvalues in [{lo:e}, {hi:e}], {n_points} points)"
            );
        }
        let chol = Cholesky::new(precision.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("posterior precision".into()))?;
        let mean = chol.solve(&information);
        Ok(Self {
            mean,
            precision,
            information,
            cholesky_lower: chol.unpack(),
            noise_variance,
            n_points,
            ill_conditioned,
        })
    }

    /// Draws `W` with each column distributed `N(mean column, A⁻¹)`.
    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> WeightSample {
        let d = self.dim();
        let z = DMatrix::from_fn(d, self.output_dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        // L Lᵀ = A, so x = L⁻ᵀ z has covariance A⁻¹.
        let offset = self
            .cholesky_lower
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        WeightSample {
            weights: &self.mean + offset,
        }
    }

    /// Epistemic variance `φᵀ A⁻¹ φ` (noise variance excluded).
    pub fn predictive_variance(&self, feature: &DVector<f64>) -> Result<f64> {
        if feature.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "feature has length {}, posterior expects {}",
                feature.len(),
                self.dim()
            )));
        }
        let v = self
            .cholesky_lower
            .solve_lower_triangular(feature)
            .expect("Cholesky factor has a positive diagonal");
        Ok(v.norm_squared().max(0.0))
    }

    /// Posterior mean prediction `meanᵀ φ`.
    pub fn predictive_mean(&self, feature: &DVector<f64>) -> Result<DVector<f64>> {
        if feature.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "feature has length {}, posterior expects {}",
                feature.len(),
                self.dim()
            )));
        }
        Ok(self.mean.tr_mul(feature))
    }

    /// `A⁻¹`, formed explicitly. Meant for diagnostics and tests.
    pub fn covariance(&self) -> DMatrix<f64> {
        let l_inv = self
            .cholesky_lower
            .solve_lower_triangular(&DMatrix::identity(self.dim(), self.dim()))
            .expect("Cholesky factor has a positive diagonal");
        let mut cov = l_inv.tr_mul(&l_inv);
        symmetrize(&mut cov);
        cov
    }

    pub fn mean(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn dim(&self) -> usize {
        self.precision.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.mean.ncols()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn is_ill_conditioned(&self) -> bool {
        self.ill_conditioned
    }
}

/// Free-function form of [`GaussianLinearPosterior::from_data`].
pub fn posterior_from_data(
    prior: &GaussianLinearPrior,
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Result<GaussianLinearPosterior> {
    GaussianLinearPosterior::from_data(prior, features, targets)
}

fn check_data(
    dim: usize,
    output_dim: usize,
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Result<()> {
    if features.ncols() != dim {
        return Err(Error::DimensionMismatch(format!(
            "features have {} columns, expected {dim}",
            features.ncols()
        )));
    }
    if targets.nrows() != features.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows but {} target rows",
            features.nrows(),
            targets.nrows()
        )));
    }
    if targets.ncols() != output_dim {
        return Err(Error::DimensionMismatch(format!(
            "targets have {} columns, expected {output_dim}",
            targets.ncols()
        )));
    }
    ensure_finite(features, "features")?;
    ensure_finite(targets, "targets")
}

pub(crate) fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    for (j, col) in m.column_iter().enumerate() {
        if let Some(i) = col.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{what} at row {i}, column {j}")));
        }
    }
    Ok(())
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use num::{BigInt, BigRational, Signed, ToPrimitive, Zero};
    use proptest::prelude::*;
    use rand::Rng;

    fn scalar_prior() -> GaussianLinearPrior {
        GaussianLinearPrior::isotropic(1, 1.0, 1.0).unwrap()
    }

    /// Posterior mean and variance of a scalar weight by brute-force Bayes
    /// rule on a grid over `[-10, 10]`.
    fn grid_posterior_1d(prior_var: f64, noise_var: f64, xs: &[f64], ys: &[f64]) -> (f64, f64) {
        let step = 1e-4;
        let n = (20.0 / step) as usize;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for k in 0..=n {
            let w = -10.0 + k as f64 * step;
            let mut log_p = -0.5 * w * w / prior_var;
            for (x, y) in xs.iter().zip(ys) {
                log_p -= 0.5 * (y - w * x).powi(2) / noise_var;
            }
            let p = log_p.exp();
            z += p;
            m1 += p * w;
            m2 += p * w * w;
        }
        let mean = m1 / z;
        (mean, m2 / z - mean * mean)
    }

    #[test]
    fn empty_data_returns_prior() {
        let prior = scalar_prior();
        let post = posterior_from_data(&prior, &DMatrix::zeros(0, 1), &DMatrix::zeros(0, 1)).unwrap();
        assert_eq!(post.mean()[(0, 0)], 0.0);
        assert_eq!(post.precision()[(0, 0)], 1.0);
        assert_eq!(post.covariance()[(0, 0)], 1.0);
        assert_eq!(post.n_points(), 0);
    }

    #[test]
    fn single_point_matches_grid_bayes() {
        let post = posterior_from_data(
            &scalar_prior(),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, 2.0),
        )
        .unwrap();
        let (grid_mean, grid_var) = grid_posterior_1d(1.0, 1.0, &[1.0], &[2.0]);
        assert!((grid_mean - 1.0).abs() < 1e-8 && (grid_var - 0.5).abs() < 1e-8);
        assert!((post.precision()[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((post.mean()[(0, 0)] - grid_mean).abs() < 1e-8);
        assert!((post.covariance()[(0, 0)] - grid_var).abs() < 1e-8);
    }

    #[test]
    fn repeated_point_sequential() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let two = DMatrix::from_element(1, 1, 2.0);
        let post = GaussianLinearPosterior::from_prior(&scalar_prior(), 1)
            .unwrap()
            .sequential_update(&one, &two)
            .unwrap()
            .sequential_update(&one, &two)
            .unwrap();
        let (grid_mean, grid_var) = grid_posterior_1d(1.0, 1.0, &[1.0, 1.0], &[2.0, 2.0]);
        assert!((grid_mean - 4.0 / 3.0).abs() < 1e-8);
        assert!((post.precision()[(0, 0)] - 3.0).abs() < 1e-15);
        assert!((post.mean()[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
        assert!((post.covariance()[(0, 0)] - grid_var).abs() < 1e-8);
    }

    fn rational(x: f64) -> BigRational {
        BigRational::from_float(x).unwrap()
    }

    /// Exact rational evaluation of `A = σ⁻²ΦᵀΦ + I` and `A m = σ⁻²ΦᵀY` for a
    /// two-dimensional design, solved by Cramer's rule.
    fn exact_two_dim(features: &DMatrix<f64>, targets: &DMatrix<f64>, noise_var: f64) -> ([[f64; 2]; 2], [f64; 2]) {
        let inv = BigRational::from_integer(BigInt::from(1)) / rational(noise_var);
        let mut a = [[BigRational::zero(), BigRational::zero()], [BigRational::zero(), BigRational::zero()]];
        let mut b = [BigRational::zero(), BigRational::zero()];
        for r in 0..features.nrows() {
            let phi = [rational(features[(r, 0)]), rational(features[(r, 1)])];
            let y = rational(targets[(r, 0)]);
            for i in 0..2 {
                for j in 0..2 {
                    a[i][j] += &inv * &phi[i] * &phi[j];
                }
                b[i] += &inv * &phi[i] * &y;
            }
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += BigRational::from_integer(BigInt::from(1));
        }
        let det = &a[0][0] * &a[1][1] - &a[0][1] * &a[1][0];
        assert!(det.is_positive());
        let m0 = (&b[0] * &a[1][1] - &a[0][1] * &b[1]) / &det;
        let m1 = (&a[0][0] * &b[1] - &a[1][0] * &b[0]) / &det;
        let f = |q: &BigRational| q.to_f64().unwrap();
        ([[f(&a[0][0]), f(&a[0][1])], [f(&a[1][0]), f(&a[1][1])]], [f(&m0), f(&m1)])
    }

    #[test]
    fn fifty_points_match_exact_rational_evaluation() {
        let mut rng = seeded(11);
        let features = DMatrix::from_fn(50, 2, |_, _| rng.random_range(-2.0..2.0));
        let targets = DMatrix::from_fn(50, 1, |r, _| {
            0.7 * features[(r, 0)] - 1.3 * features[(r, 1)] + rng.random_range(-0.5..0.5)
        });
        let prior = GaussianLinearPrior::isotropic(2, 1.0, 0.25).unwrap();
        let post = posterior_from_data(&prior, &features, &targets).unwrap();
        let (a, m) = exact_two_dim(&features, &targets, 0.25);
        for i in 0..2 {
            assert!((post.mean()[(i, 0)] - m[i]).abs() < 1e-12, "mean[{i}]");
            for j in 0..2 {
                assert!((post.precision()[(i, j)] - a[i][j]).abs() < 1e-10 * a[i][j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn split_update_equals_batch() {
        let mut rng = seeded(3);
        let features = DMatrix::from_fn(40, 3, |_, _| rng.random_range(-1.0..1.0));
        let targets = DMatrix::from_fn(40, 2, |_, _| rng.random_range(-1.0..1.0));
        let prior = GaussianLinearPrior::isotropic(3, 2.0, 0.1).unwrap();
        let batch = posterior_from_data(&prior, &features, &targets).unwrap();
        let seq = posterior_from_data(&prior, &features.rows(0, 25).into(), &targets.rows(0, 25).into())
            .unwrap()
            .sequential_update(&features.rows(25, 15).into(), &targets.rows(25, 15).into())
            .unwrap();
        assert!((batch.mean() - seq.mean()).norm() < 1e-8);
        assert!((batch.precision() - seq.precision()).norm() < 1e-8);
        assert_eq!(seq.n_points(), 40);
    }

    #[test]
    fn zero_row_update_is_identity() {
        let prior = GaussianLinearPrior::isotropic(2, 1.0, 0.5).unwrap();
        let post = posterior_from_data(&prior, &DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), &DMatrix::from_element(1, 1, 3.0)).unwrap();
        let same = post.sequential_update(&DMatrix::zeros(0, 2), &DMatrix::zeros(0, 1)).unwrap();
        assert_eq!(post, same);
    }

    #[test]
    fn rejects_bad_inputs() {
        let prior = GaussianLinearPrior::isotropic(2, 1.0, 0.5).unwrap();
        let bad = DMatrix::from_row_slice(1, 2, &[f64::NAN, 0.0]);
        assert!(matches!(
            posterior_from_data(&prior, &bad, &DMatrix::zeros(1, 1)),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            posterior_from_data(&prior, &DMatrix::zeros(2, 2), &DMatrix::zeros(1, 1)),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(GaussianLinearPrior::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]), 1.0).is_err());
        assert!(GaussianLinearPrior::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]), 1.0).is_err());
        assert!(GaussianLinearPrior::isotropic(2, 1.0, 0.0).is_err());
    }

    #[test]
    fn near_singular_precision_is_flagged() {
        let prior = GaussianLinearPrior::isotropic(2, 1.0, 1e-14).unwrap();
        let features = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let post = posterior_from_data(&prior, &features, &DMatrix::zeros(1, 1)).unwrap();
        assert!(post.is_ill_conditioned());
        let fine = posterior_from_data(&GaussianLinearPrior::isotropic(2, 1.0, 1.0).unwrap(), &features, &DMatrix::zeros(1, 1)).unwrap();
        assert!(!fine.is_ill_conditioned());
    }

    #[test]
    fn collapsed_posterior_sample_equals_mean() {
        let prior = GaussianLinearPrior::new(DMatrix::identity(2, 2) * 1e-12, 1.0).unwrap();
        let post = GaussianLinearPosterior::from_prior(&prior, 1).unwrap();
        let sample = post.sample_weights(&mut seeded(5));
        assert!((sample.weights - post.mean()).amax() < 1e-5);
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let prior = GaussianLinearPrior::isotropic(3, 1.0, 1.0).unwrap();
        let post = GaussianLinearPosterior::from_prior(&prior, 2).unwrap();
        assert_eq!(post.sample_weights(&mut seeded(9)), post.sample_weights(&mut seeded(9)));
    }

    #[test]
    fn sample_moments_match_closed_form() {
        let prior = GaussianLinearPrior::isotropic(2, 1.0, 0.5).unwrap();
        let features = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 1.0, 0.2, 0.2]);
        let targets = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 0.3]);
        let post = posterior_from_data(&prior, &features, &targets).unwrap();
        let n = 100_000;
        let mut rng = seeded(17);
        let draws: Vec<DMatrix<f64>> = (0..n).map(|_| post.sample_weights(&mut rng).weights).collect();
        let cov = post.covariance();
        let mut mean = DVector::zeros(2);
        for w in &draws {
            mean += w.column(0);
        }
        mean /= n as f64;
        for i in 0..2 {
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((mean[i] - post.mean()[(i, 0)]).abs() < 3.0 * se, "mean[{i}]");
        }
        let mut emp = DMatrix::zeros(2, 2);
        for w in &draws {
            let c = w.column(0) - &mean;
            emp += &c * c.transpose();
        }
        emp /= (n - 1) as f64;
        for i in 0..2 {
            assert!((emp[(i, i)] / cov[(i, i)] - 1.0).abs() < 0.05);
        }
        let scale = (cov[(0, 0)] * cov[(1, 1)]).sqrt();
        assert!((emp[(0, 1)] - cov[(0, 1)]).abs() < 0.05 * scale);
    }

    #[test]
    fn predictive_variance_examples() {
        let prior = GaussianLinearPrior::isotropic(2, 1.0, 1.0).unwrap();
        let post = GaussianLinearPosterior::from_prior(&prior, 1).unwrap();
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(post.predictive_variance(&DVector::zeros(2)).unwrap(), 0.0);
        assert!((post.predictive_variance(&e1).unwrap() - 1.0).abs() < 1e-15);
        let post = post
            .sequential_update(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), &DMatrix::zeros(1, 1))
            .unwrap();
        assert!((post.predictive_variance(&e1).unwrap() - 0.5).abs() < 1e-15);
        assert!(post.predictive_variance(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn precision_stays_symmetric_over_many_updates() {
        let mut rng = seeded(23);
        let prior = GaussianLinearPrior::isotropic(4, 1.0, 0.01).unwrap();
        let mut post = GaussianLinearPosterior::from_prior(&prior, 1).unwrap();
        for _ in 0..10_000 {
            let phi = DMatrix::from_fn(1, 4, |_, _| rng.random_range(-1.0..1.0));
            post = post.sequential_update(&phi, &DMatrix::from_element(1, 1, rng.random())).unwrap();
        }
        assert!(max_asymmetry(post.precision()) <= 1e-10);
        let data_part = post.precision() - prior.prior_precision();
        let min_eig = SymmetricEigen::new(data_part).eigenvalues.min();
        assert!(min_eig > -1e-8 * post.precision().amax());
    }

    fn design(n: usize, d: usize) -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>)> {
        (
            proptest::collection::vec(-3.0f64..3.0, n * d),
            proptest::collection::vec(-3.0f64..3.0, n),
        )
            .prop_map(move |(f, t)| (DMatrix::from_row_slice(n, d, &f), DMatrix::from_row_slice(n, 1, &t)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sequential_composition_equals_batch((features, targets) in design(12, 3), split in 0usize..=12) {
            let prior = GaussianLinearPrior::isotropic(3, 1.5, 0.2).unwrap();
            let batch = posterior_from_data(&prior, &features, &targets).unwrap();
            let first = posterior_from_data(&prior, &features.rows(0, split).into(), &targets.rows(0, split).into()).unwrap();
            let seq = first.sequential_update(&features.rows(split, 12 - split).into(), &targets.rows(split, 12 - split).into()).unwrap();
            prop_assert!((batch.mean() - seq.mean()).norm() < 1e-8);
            prop_assert!((batch.precision() - seq.precision()).norm() < 1e-8);
        }

        #[test]
        fn variance_never_increases_with_data(
            (features, targets) in design(8, 3),
            query in proptest::collection::vec(-3.0f64..3.0, 3),
            extra in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let prior = GaussianLinearPrior::isotropic(3, 1.0, 0.3).unwrap();
            let before = posterior_from_data(&prior, &features, &targets).unwrap();
            let after = before.sequential_update(&DMatrix::from_row_slice(1, 3, &extra), &DMatrix::zeros(1, 1)).unwrap();
            let q = DVector::from_vec(query);
            prop_assert!(after.predictive_variance(&q).unwrap() <= before.predictive_variance(&q).unwrap() + 1e-10);
        }
    }
}
