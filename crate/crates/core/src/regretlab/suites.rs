//! Randomized verification suites with serializable summaries.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::concentration::{concentration_check, ConcentrationReport};
use super::quadrature::{trapezoid, QuadResult};
use super::regret::{run_regret, RegretConfig, RegretRun};
use super::tv::{
    lemma1_bound_check, marginal_l1, tv_gaussian_shared_cov, uniform_product_l1, NoiseFamily, SymmetricNoiseSpec, TV_STEP,
};
use super::varsum::{variance_sum_experiment, VarianceSumReport};
use crate::bayes::{GaussianLinearPosterior, GaussianLinearPrior};
use crate::error::Result;
use crate::rng::{derived, StreamRng};

/// Agreement required between the closed-form Gaussian TV and quadrature.
pub const TV_AGREEMENT_TOL: f64 = 1e-6;
/// Agreement required between rotated and axis-aligned distances.
pub const ROTATION_TOL: f64 = 1e-8;

fn random_vector(d: usize, half_width: f64, rng: &mut StreamRng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-half_width..half_width))
}

fn random_orthogonal(d: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

/// One random Lemma 1 case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Row {
    pub family: NoiseFamily,
    pub case: usize,
    pub dim: usize,
    pub scale: f64,
    pub distance: f64,
    pub tv: f64,
    pub bound: f64,
    pub holds: bool,
    pub flagged: bool,
    /// Exact product-measure L1 distance, for the uniform family only.
    pub exact_product_l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: NoiseFamily,
    pub cases: usize,
    pub violations: usize,
    pub flagged: usize,
    /// Largest `tv / bound` over cases with a positive bound.
    pub max_ratio: f64,
    /// Uniform only: cases where the exact product-measure distance exceeds the bound.
    pub exact_product_violations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Summary {
    pub cases_per_family: usize,
    pub families: Vec<FamilySummary>,
    pub violations: usize,
    pub flagged: usize,
}

/// `cases` random (μ₁, μ₂, σ, d ≤ 5) per noise family. One case in ten uses
/// a mean gap beyond the support or bulk of the law.
pub fn lemma1_suite(cases: usize, seed: u64) -> Result<(Lemma1Summary, Vec<Lemma1Row>)> {
    let mut rows = Vec::with_capacity(3 * cases);
    let mut families = Vec::new();
    for (fi, family) in NoiseFamily::ALL.into_iter().enumerate() {
        let fam_rows: Vec<Lemma1Row> = (0..cases)
            .into_par_iter()
            .map(|case| {
                let mut rng = derived(seed, &[fi as u64, case as u64]);
                let dim = rng.random_range(1..=5);
                let scale = rng.random_range(0.1..3.0);
                let spec = SymmetricNoiseSpec::new(family, scale, dim)?;
                let half_width = if case % 10 == 9 { 10.0 * scale } else { 2.0 * scale };
                let mu1 = random_vector(dim, half_width, &mut rng);
                let mu2 = random_vector(dim, half_width, &mut rng);
                let check = lemma1_bound_check(&spec, &mu1, &mu2)?;
                let exact_product_l1 =
                    (family == NoiseFamily::Uniform).then(|| uniform_product_l1(&(&mu1 - &mu2), 3f64.sqrt() * scale));
                Ok(Lemma1Row {
                    family,
                    case,
                    dim,
                    scale,
                    distance: (&mu1 - &mu2).norm(),
                    tv: check.numeric,
                    bound: check.bound,
                    holds: check.holds,
                    flagged: check.flagged,
                    exact_product_l1,
                })
            })
            .collect::<Result<_>>()?;
        families.push(FamilySummary {
            family,
            cases,
            violations: fam_rows.iter().filter(|r| !r.holds).count(),
            flagged: fam_rows.iter().filter(|r| r.flagged).count(),
            max_ratio: fam_rows
                .iter()
                .filter(|r| r.bound > 0.0)
                .map(|r| r.tv / r.bound)
                .fold(0.0, f64::max),
            exact_product_violations: (family == NoiseFamily::Uniform).then(|| {
                fam_rows
                    .iter()
                    .filter(|r| r.exact_product_l1.is_some_and(|e| e > r.bound + 1e-9))
                    .count()
            }),
        });
        rows.extend(fam_rows);
    }
    let summary = Lemma1Summary {
        cases_per_family: cases,
        violations: families.iter().map(|f| f.violations).sum(),
        flagged: families.iter().map(|f| f.flagged).sum(),
        families,
    };
    Ok((summary, rows))
}

/// `∫∫|p₁ − p₂|` for two isotropic 2-D Gaussians: trapezoid over the first
/// coordinate, closed form over the second.
pub fn gaussian_l1_2d_nested(mu1: &[f64; 2], mu2: &[f64; 2], sigma: f64) -> QuadResult {
    let phi_upper = |z: f64| 0.5 * libm::erfc(z / std::f64::consts::SQRT_2);
    let inner = |x: f64| {
        let za = (x - mu1[0]) / sigma;
        let zb = (x - mu2[0]) / sigma;
        let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let a = norm * (-0.5 * za * za).exp();
        let b = norm * (-0.5 * zb * zb).exp();
        let (m1, m2) = (mu1[1], mu2[1]);
        if m1 == m2 {
            return (a - b).abs();
        }
        // a φ(y − m1) and b φ(y − m2) cross once, at y*
        let log_ratio = -0.5 * (za * za - zb * zb);
        let y = 0.5 * (m1 + m2) + sigma * sigma * log_ratio / (m2 - m1);
        let lower = |m: f64| phi_upper((m - y) / sigma);
        let upper = |m: f64| phi_upper((y - m) / sigma);
        (a * lower(m1) - b * lower(m2)).abs() + (a * upper(m1) - b * upper(m2)).abs()
    };
    let lo = mu1[0].min(mu2[0]) - 12.0 * sigma;
    let hi = mu1[0].max(mu2[0]) + 12.0 * sigma;
    trapezoid(inner, lo, hi, &[0.5 * (mu1[0] + mu2[0])], TV_STEP * sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianTvSummary {
    pub cases: usize,
    /// Max |closed form − ½ quadrature|.
    pub max_abs_error: f64,
    pub within_tolerance: bool,
    pub rotation_cases: usize,
    /// Max over random rotations in d ≤ 5 of |TV(Qμ₁, Qμ₂) − TV(μ₁, μ₂)|.
    pub rotation_max_error: f64,
    /// Max over 2-D cases of |nested L1 of a rotated pair − nested L1 of the axis-aligned pair|.
    pub nested_rotation_max_error: f64,
    /// Max over 2-D cases of |nested L1 − 2·closed form|.
    pub nested_closed_form_max_error: f64,
    pub rotation_invariant: bool,
}

pub fn gaussian_tv_suite(cases: usize, rotation_cases: usize, seed: u64) -> Result<GaussianTvSummary> {
    let errors: Vec<f64> = (0..cases)
        .into_par_iter()
        .map(|case| {
            let mut rng = derived(seed, &[0, case as u64]);
            let dim = rng.random_range(1..=5);
            let sigma = rng.random_range(0.1..3.0);
            let mu1 = random_vector(dim, 3.0, &mut rng);
            let mu2 = random_vector(dim, 3.0, &mut rng);
            let spec = SymmetricNoiseSpec::new(NoiseFamily::Gaussian, sigma, dim)?;
            let quad = 0.5 * marginal_l1(&spec, (&mu1 - &mu2).norm()).value;
            Ok((tv_gaussian_shared_cov(&mu1, &mu2, sigma) - quad).abs())
        })
        .collect::<Result<_>>()?;
    let max_abs_error = errors.iter().copied().fold(0.0, f64::max);

    let rotations: Vec<(f64, f64, f64)> = (0..rotation_cases)
        .into_par_iter()
        .map(|case| {
            let mut rng = derived(seed, &[1, case as u64]);
            let dim = rng.random_range(1..=5);
            let sigma = rng.random_range(0.1..3.0);
            let mu1 = random_vector(dim, 3.0, &mut rng);
            let mu2 = random_vector(dim, 3.0, &mut rng);
            let q = random_orthogonal(dim, &mut rng);
            let direct = (tv_gaussian_shared_cov(&(&q * &mu1), &(&q * &mu2), sigma)
                - tv_gaussian_shared_cov(&mu1, &mu2, sigma))
            .abs();

            let sigma2 = rng.random_range(0.2..2.0);
            let a: [f64; 2] = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let b: [f64; 2] = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let rot = |p: [f64; 2]| [theta.cos() * p[0] - theta.sin() * p[1], theta.sin() * p[0] + theta.cos() * p[1]];
            let dist = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            let rotated = gaussian_l1_2d_nested(&rot(a), &rot(b), sigma2).value;
            let aligned = gaussian_l1_2d_nested(&[0.0, 0.0], &[dist, 0.0], sigma2).value;
            let closed = 2.0 * libm::erf(dist / (2.0 * std::f64::consts::SQRT_2 * sigma2));
            (direct, (rotated - aligned).abs(), (rotated - closed).abs())
        })
        .collect();
    let max_of = |f: fn(&(f64, f64, f64)) -> f64| rotations.iter().map(f).fold(0.0, f64::max);
    let rotation_max_error = max_of(|r| r.0);
    let nested_rotation_max_error = max_of(|r| r.1);
    let nested_closed_form_max_error = max_of(|r| r.2);
    Ok(GaussianTvSummary {
        cases,
        max_abs_error,
        within_tolerance: max_abs_error <= TV_AGREEMENT_TOL,
        rotation_cases,
        rotation_max_error,
        nested_rotation_max_error,
        nested_closed_form_max_error,
        rotation_invariant: rotation_max_error <= ROTATION_TOL
            && nested_rotation_max_error <= ROTATION_TOL
            && nested_closed_form_max_error <= ROTATION_TOL,
    })
}

/// Episodes at which the normalized variance sum is compared.
pub const VARSUM_EARLY: usize = 200;
/// Largest allowed growth of the normalized sum from `VARSUM_EARLY` to the end.
pub const VARSUM_GROWTH_LIMIT: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarsumRow {
    pub dim: usize,
    pub episodes: usize,
    pub pointwise_violations: usize,
    pub bound_holds: bool,
    pub ratio_early: f64,
    pub ratio_final: f64,
    pub no_growth: bool,
    pub sum: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarsumSummary {
    pub rows: Vec<VarsumRow>,
    pub passed: bool,
}

pub fn varsum_suite(
    dims: &[usize],
    episodes: usize,
    points_per_episode: usize,
    noise_variance: f64,
    seed: u64,
) -> Result<(VarsumSummary, Vec<VarianceSumReport>)> {
    let reports: Vec<VarianceSumReport> = dims
        .par_iter()
        .map(|&d| variance_sum_experiment(d, episodes, points_per_episode, noise_variance, seed))
        .collect::<Result<_>>()?;
    let rows: Vec<VarsumRow> = reports
        .iter()
        .map(|r| {
            let early = VARSUM_EARLY.min(episodes);
            let ratio_early = r.normalized_sum(early);
            let ratio_final = r.normalized_sum(episodes);
            VarsumRow {
                dim: r.dim,
                episodes,
                pointwise_violations: r.pointwise_violations,
                bound_holds: r.bound_holds(),
                ratio_early,
                ratio_final,
                no_growth: ratio_final <= VARSUM_GROWTH_LIMIT * ratio_early,
                sum: *r.cumulative.last().unwrap_or(&0.0),
                bound: *r.bound_cumulative.last().unwrap_or(&0.0),
            }
        })
        .collect();
    let passed = rows.iter().all(|r| r.bound_holds && r.no_growth);
    Ok((VarsumSummary { rows, passed }, reports))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationSummary {
    pub reports: Vec<ConcentrationReport>,
    pub passed: bool,
}

/// A fixed posterior per state dimension (3 features, 30 points), queried at
/// five random unit-ball features.
pub fn concentration_suite(deltas: &[f64], state_dims: &[usize], trials: usize, seed: u64) -> Result<ConcentrationSummary> {
    let mut reports = Vec::new();
    for &d_s in state_dims {
        let mut rng = derived(seed, &[d_s as u64]);
        let prior = GaussianLinearPrior::isotropic(3, 1.0, 0.1)?;
        let phi = DMatrix::from_fn(30, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(30, d_s, |_, _| rng.sample::<f64, _>(StandardNormal));
        let post = GaussianLinearPosterior::from_data(&prior, &phi, &y)?;
        let queries: Vec<DVector<f64>> = (0..5).map(|_| super::varsum::unit_ball_point(3, &mut rng)).collect();
        for (i, &delta) in deltas.iter().enumerate() {
            reports.push(concentration_check(&post, &queries, delta, trials, crate::rng::derive_seed(seed, &[d_s as u64, i as u64]))?);
        }
    }
    let passed = reports.iter().all(|r| r.holds);
    Ok(ConcentrationSummary { reports, passed })
}

/// Largest allowed `Regret(4T) / Regret(T)`.
pub const GROWTH_RATIO_LIMIT: f64 = 3.2;
/// Control-run regret must lie within this many standard errors of zero.
pub const CONTROL_SE_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegretSuiteConfig {
    pub regret: RegretConfig,
    pub horizon: usize,
    pub t_max: usize,
    pub checkpoints: Vec<usize>,
    pub control_episodes: usize,
    /// Extra horizons run at the same `t_max` and reported without a threshold.
    pub sweep_horizons: Vec<usize>,
}

impl Default for RegretSuiteConfig {
    fn default() -> Self {
        Self {
            regret: RegretConfig::default(),
            horizon: 10,
            t_max: 20_000,
            checkpoints: vec![1250, 2500, 5000],
            control_episodes: 100,
            sweep_horizons: vec![20],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub t: usize,
    pub regret_t: f64,
    pub regret_4t: f64,
    pub ratio: f64,
    pub sublinear: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub horizon: usize,
    pub t: usize,
    pub regret: f64,
    /// Relative to the base horizon at the same `T`.
    pub ratio_to_base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub growth: Vec<GrowthRow>,
    pub control_mean: f64,
    pub control_stderr: f64,
    pub control_ok: bool,
    pub escape_rate: f64,
    pub invalid: bool,
    pub sweep: Vec<SweepRow>,
    pub passed: bool,
}

/// Learning run, known-MDP control and horizon sweep. Returns the summary and
/// all runs (learning, control, then sweep).
pub fn regret_suite(config: &RegretSuiteConfig) -> Result<(RegretSummary, Vec<RegretRun>)> {
    let run = run_regret(&config.regret, config.horizon, config.t_max / config.horizon)?;
    let control_cfg = RegretConfig {
        known_mdp: true,
        ..config.regret.clone()
    };
    let control = run_regret(&control_cfg, config.horizon, config.control_episodes)?;
    let (control_mean, control_stderr) = control.pooled_regret();

    let growth: Vec<GrowthRow> = config
        .checkpoints
        .iter()
        .map(|&t| {
            let regret_t = run.cumulative_at(t).unwrap_or(f64::NAN);
            let regret_4t = run.cumulative_at(4 * t).unwrap_or(f64::NAN);
            let ratio = regret_4t / regret_t;
            GrowthRow {
                t,
                regret_t,
                regret_4t,
                ratio,
                sublinear: ratio < GROWTH_RATIO_LIMIT,
            }
        })
        .collect();

    let mut runs = vec![run, control];
    let mut sweep = Vec::new();
    for &h in &config.sweep_horizons {
        let other = run_regret(&config.regret, h, config.t_max / h)?;
        for &t in config.checkpoints.iter().chain(std::iter::once(&config.t_max)) {
            let regret = other.cumulative_at(t).unwrap_or(f64::NAN);
            sweep.push(SweepRow {
                horizon: h,
                t,
                regret,
                ratio_to_base: regret / runs[0].cumulative_at(t).unwrap_or(f64::NAN),
            });
        }
        runs.push(other);
    }

    let escape_rate = runs[0].escape_rate.max(runs[1].escape_rate);
    let invalid = runs[0].invalid || runs[1].invalid;
    let control_ok = control_mean.abs() <= CONTROL_SE_LIMIT * control_stderr;
    let passed = !invalid && control_ok && growth.iter().all(|g| g.sublinear);
    Ok((
        RegretSummary {
            growth,
            control_mean,
            control_stderr,
            control_ok,
            escape_rate,
            invalid,
            sweep,
            passed,
        },
        runs,
    ))
}
