//! Semi-supervised domain adaptation: choosing the matrix penalty from
//! test-domain statistics.
//!
//! Given a large unlabeled test sample (or the exact test covariate Gram)
//! and a small labeled one, the penalty `Gamma = diag(Gamma_x, gamma_y)` is
//! chosen so the penalized normal equations reproduce the test-domain OLS
//! system with a variance-reduced right-hand side:
//!
//! - `Gamma_x` solves the quadratic matrix equation
//!   `G0_x + Gamma_x D_x Gamma_x = Sigma_x^v`, whose unique PSD solution is
//!   `D_x^{-1/2} [D_x^{1/2} (Sigma_x^v - G0_x) D_x^{1/2}]^{1/2} D_x^{-1/2}`;
//! - `gamma_y` then minimizes the population test MSE of the closed-form
//!   solution, a scalar least-squares projection of the labeled cross moment
//!   onto the single direction the penalty can move.
//!
//! Because the labeled cross moment only enters through that one projection,
//! the adaptive fit has far lower variance than the plug-in test OLS when
//! labeled samples are scarce, while agreeing with it in population.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{
    self, drig_a_loss, EstimatorError, FitResult, GammaMatrix, MethodTag,
};
use crate::io::serde_mat;
use crate::linalg;
use crate::scm::EnvironmentMoments;

/// Errors from penalty selection and test-domain fits.
#[derive(Debug, Error)]
pub enum AdaptationError {
    /// The training heterogeneity `D_x` is not positive definite, so the
    /// quadratic matrix equation has no solution to plug into.
    #[error("SingularHeterogeneity: training heterogeneity not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    SingularHeterogeneity { min_eigenvalue: f64 },
    /// The test covariate second moment falls below the reference
    /// environment's beyond the clamping tolerance.
    #[error("TestBelowReference: Sigma_x^v - G0_x has eigenvalue {min_eigenvalue:.3e}")]
    TestBelowReference { min_eigenvalue: f64 },
    /// The penalty direction `Gamma_x D_xy` vanishes; `gamma_y` is undefined.
    #[error("DegenerateDirection: ||Sigma_x^{{-1/2}} Gamma_x D_xy|| below 1e-12")]
    DegenerateDirection,
    /// The test covariate Gram is singular.
    #[error("SingularTestGram: test covariate second moment not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    SingularTestGram { min_eigenvalue: f64 },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// A sample count that may be "population" (exact moments, no sampling noise).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSize {
    Finite(usize),
    Population,
}

impl Serialize for SampleSize {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SampleSize::Finite(n) => s.serialize_u64(*n as u64),
            SampleSize::Population => s.serialize_str("population"),
        }
    }
}

impl<'de> Deserialize<'de> for SampleSize {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Wire {
            N(usize),
            S(String),
        }
        match Wire::deserialize(d)? {
            Wire::N(n) => Ok(SampleSize::Finite(n)),
            Wire::S(s) if s == "population" => Ok(SampleSize::Population),
            Wire::S(s) => Err(serde::de::Error::custom(format!(
                "expected a count or \"population\", got `{s}`"
            ))),
        }
    }
}

/// Test-domain information: the covariate second moment from unlabeled data
/// (or population) and the covariate-response cross moment from labeled data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestDomainInfo {
    /// `Sigma_x^v`, `p x p` symmetric PSD.
    #[serde(with = "serde_mat::matrix")]
    pub sigma_x: DMatrix<f64>,
    /// `Sigma_xy^v`, length `p`.
    #[serde(with = "serde_mat::vector")]
    pub sigma_xy: DVector<f64>,
    /// Labeled sample count behind `sigma_xy`.
    pub n_l: SampleSize,
    /// Unlabeled sample count behind `sigma_x`.
    pub n_u: SampleSize,
}

impl TestDomainInfo {
    /// Builds the statistics from a labeled sample (rows of `(X, Y)`) and
    /// optionally a separate unlabeled covariate sample; without one, the
    /// labeled covariates double as the unlabeled sample.
    pub fn from_samples(labeled: &DMatrix<f64>, unlabeled: Option<&DMatrix<f64>>) -> Self {
        let p = labeled.ncols() - 1;
        let n_l = labeled.nrows();
        let mut sigma_xy = DVector::zeros(p);
        for i in 0..n_l {
            for j in 0..p {
                sigma_xy[j] += labeled[(i, j)] * labeled[(i, p)];
            }
        }
        sigma_xy /= n_l as f64;
        let (sigma_x, n_u) = match unlabeled {
            Some(u) => (covariate_gram(u, p), u.nrows()),
            None => (covariate_gram(labeled, p), n_l),
        };
        TestDomainInfo {
            sigma_x,
            sigma_xy,
            n_l: SampleSize::Finite(n_l),
            n_u: SampleSize::Finite(n_u),
        }
    }

    /// As [`Self::from_samples`], but with the exact population covariate
    /// second moment in place of an unlabeled sample.
    pub fn with_population_sigma_x(labeled: &DMatrix<f64>, sigma_x: DMatrix<f64>) -> Self {
        let mut info = Self::from_samples(labeled, None);
        info.sigma_x = sigma_x;
        info.n_u = SampleSize::Population;
        info
    }
}

fn covariate_gram(rows: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let n = rows.nrows();
    let mut gram = DMatrix::zeros(p, p);
    for i in 0..n {
        for a in 0..p {
            for b in a..p {
                gram[(a, b)] += rows[(i, a)] * rows[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    gram / n as f64
}

/// The symmetric matrix solving `G0_x + Gamma D_x Gamma = Sigma_x^v`.
///
/// Requires positive-definite training heterogeneity `D_x` (the derivation
/// pseudo-inverting a singular `D_x` would silently change the robustness
/// guarantee, so singularity is an error) and `Sigma_x^v - G0_x` PSD after
/// clamping eigenvalues in `[-1e-10 * trace, 0)`, which absorbs sampling
/// noise in an estimated `Sigma_x^v`.
pub fn gamma_star_x(
    sigma_x: &DMatrix<f64>,
    moments: &[EnvironmentMoments],
) -> Result<DMatrix<f64>, AdaptationError> {
    let dx = estimators::delta_x(moments);
    let dx_inv_sqrt = linalg::sym_inv_sqrt(&dx).map_err(|min_eigenvalue| {
        AdaptationError::SingularHeterogeneity { min_eigenvalue }
    })?;
    let dx_sqrt = linalg::sym_sqrt(&dx).expect("PD matrix has a square root");
    let excess = sigma_x - moments[0].gram_x();
    let clamped = linalg::psd_project(&excess)
        .map_err(|min_eigenvalue| AdaptationError::TestBelowReference { min_eigenvalue })?;
    let inner = &dx_sqrt * clamped * &dx_sqrt;
    let inner = (&inner + inner.transpose()) * 0.5;
    let inner_sqrt = linalg::sym_sqrt(&inner).expect("congruence of a PSD matrix is PSD");
    let gamma = &dx_inv_sqrt * inner_sqrt * &dx_inv_sqrt;
    Ok((&gamma + gamma.transpose()) * 0.5)
}

/// The scalar `gamma_y` minimizing the population test MSE of the
/// closed-form penalized solution for a fixed `Gamma_x`: the least-squares
/// coefficient of `Sigma_x^{-1/2}(Sigma_xy^v - g0)` on the direction
/// `Sigma_x^{-1/2} Gamma_x D_xy`.
pub fn gamma_star_y(
    sigma_x: &DMatrix<f64>,
    sigma_xy: &DVector<f64>,
    gamma_x: &DMatrix<f64>,
    moments: &[EnvironmentMoments],
) -> Result<f64, AdaptationError> {
    let sx_inv_sqrt = linalg::sym_inv_sqrt(sigma_x)
        .map_err(|min_eigenvalue| AdaptationError::SingularTestGram { min_eigenvalue })?;
    let direction = &sx_inv_sqrt * (gamma_x * estimators::delta_xy(moments));
    let norm_sq = direction.norm_squared();
    if norm_sq.sqrt() < 1e-12 {
        return Err(AdaptationError::DegenerateDirection);
    }
    let shift = &sx_inv_sqrt * (sigma_xy - moments[0].gram_xy());
    Ok(direction.dot(&shift) / norm_sq)
}

/// The adaptively penalized fit: plugs `Gamma_x = gamma_star_x` and
/// `gamma_y = gamma_star_y` into the closed-form penalized solve.
///
/// When the penalty direction vanishes (`DegenerateDirection`, e.g. the test
/// domain equals the reference environment so `Gamma_x = 0`), `gamma_y` is
/// irrelevant and is set to zero rather than failing, which reduces the fit
/// to reference OLS. The fitted `gamma_y` may be negative: it minimizes test
/// MSE rather than defining a worst-case class, so the PSD penalty contract
/// does not apply here.
pub fn drig_a_adaptive(
    moments: &[EnvironmentMoments],
    info: &TestDomainInfo,
) -> Result<FitResult, AdaptationError> {
    let gamma_x = gamma_star_x(&info.sigma_x, moments)?;
    let gamma_y = match gamma_star_y(&info.sigma_x, &info.sigma_xy, &gamma_x, moments) {
        Ok(g) => g,
        Err(AdaptationError::DegenerateDirection) => 0.0,
        Err(e) => return Err(e),
    };
    let gamma = GammaMatrix { gamma_x, gamma_y };
    let f = moments[0].gram_x() + &gamma.gamma_x * estimators::delta_x(moments) * &gamma.gamma_x;
    let f = (&f + f.transpose()) * 0.5;
    let g = moments[0].gram_xy() + &gamma.gamma_x * estimators::delta_xy(moments) * gamma.gamma_y;
    let sol = linalg::spd_solve(&f, &g).map_err(EstimatorError::from)?;
    let objective = drig_a_loss(&sol.x, moments, &gamma);
    let residual = estimators::gradient_invariance_residual(&sol.x, moments);
    Ok(FitResult {
        method: MethodTag::DrigA,
        b: sol.x,
        objective,
        grad_invariance_residual: Some(residual),
        condition: sol.rcond,
    })
}

/// Plug-in ordinary least squares on the test-domain statistics,
/// `b = (Sigma_x^v)^{-1} Sigma_xy^v`.
///
/// The statistics do not determine `E[(Y^v)^2]` or any training quantity, so
/// `objective` is the test risk up to that additive constant
/// (`b' Sigma_x b - 2 b' Sigma_xy`) and the gradient-invariance residual is
/// absent.
pub fn test_ols(info: &TestDomainInfo) -> Result<FitResult, AdaptationError> {
    let sol = linalg::spd_solve(&info.sigma_x, &info.sigma_xy).map_err(|e| {
        AdaptationError::SingularTestGram {
            min_eigenvalue: e.min_eigenvalue,
        }
    })?;
    let objective = (&info.sigma_x * &sol.x).dot(&sol.x) - 2.0 * sol.x.dot(&info.sigma_xy);
    Ok(FitResult {
        method: MethodTag::TestOls,
        b: sol.x,
        objective,
        grad_invariance_residual: None,
        condition: sol.rcond,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::example1_spec;

    fn example1_env1_info() -> (Vec<EnvironmentMoments>, TestDomainInfo) {
        let spec = example1_spec();
        let moments = spec.population_moments().unwrap();
        let info = TestDomainInfo {
            sigma_x: DMatrix::from_row_slice(1, 1, &[2.25]),
            sigma_xy: DVector::from_row_slice(&[5.0]),
            n_l: SampleSize::Population,
            n_u: SampleSize::Population,
        };
        (moments, info)
    }

    #[test]
    fn gamma_star_scalars_on_example1() {
        let (moments, info) = example1_env1_info();
        let gamma_x = gamma_star_x(&info.sigma_x, &moments).unwrap();
        assert!((gamma_x[(0, 0)] - 2.0f64.sqrt()).abs() < 1e-12);
        let gamma_y = gamma_star_y(&info.sigma_x, &info.sigma_xy, &gamma_x, &moments).unwrap();
        assert!((gamma_y - 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gamma_star_x_zero_when_test_equals_reference() {
        let (moments, _) = example1_env1_info();
        let sigma_x = moments[0].gram_x();
        let gamma_x = gamma_star_x(&sigma_x, &moments).unwrap();
        assert!(gamma_x.amax() < 1e-12);
    }

    /// Random instance with a non-trivial causal parameter, so the training
    /// cross-moment shift is nonzero.
    fn confounded_instance(
        p: usize,
        n_train_envs: usize,
        edge_prob: f64,
        base_seed: u64,
    ) -> (crate::ScmSpec, Vec<crate::experiments::TestLaw>) {
        for seed in base_seed.. {
            let out = crate::experiments::random_instance(
                &crate::experiments::RandomInstanceSpec {
                    p,
                    n_train_envs,
                    n_test_envs: 1,
                    edge_prob,
                    intervene_y: false,
                },
                seed,
            );
            let moments = out.0.population_moments().unwrap();
            if out.0.causal_parameter().amax() > 0.1
                && estimators::delta_xy(&moments).norm() > 1e-3
            {
                return out;
            }
        }
        unreachable!()
    }

    #[test]
    fn gamma_star_x_plug_back_on_p5_instance() {
        let (spec, laws) = confounded_instance(5, 2, 0.3, 91);
        let moments = spec.population_moments().unwrap();
        let tm = spec.test_moments(&laws[0].mu, &(laws[0].cov.clone() * 4.0)).unwrap();
        let sigma_x = tm.gram_x();
        let gamma_x = gamma_star_x(&sigma_x, &moments).unwrap();
        let dx = estimators::delta_x(&moments);
        let back = moments[0].gram_x() + &gamma_x * dx * &gamma_x;
        let rel = (&back - &sigma_x).norm() / sigma_x.norm();
        assert!(rel < 1e-8, "plug-back relative error {rel}");
    }

    #[test]
    fn gamma_star_y_zero_without_cross_moment_shift() {
        let (moments, info) = example1_env1_info();
        let gamma_x = gamma_star_x(&info.sigma_x, &moments).unwrap();
        let gamma_y =
            gamma_star_y(&info.sigma_x, &moments[0].gram_xy(), &gamma_x, &moments).unwrap();
        assert!(gamma_y.abs() < 1e-12);
    }

    #[test]
    fn gamma_star_y_matches_grid_search_on_p3_instance() {
        let (spec, laws) = confounded_instance(3, 2, 0.4, 7);
        let moments = spec.population_moments().unwrap();
        let tm = spec.test_moments(&laws[0].mu, &(laws[0].cov.clone() * 9.0)).unwrap();
        let sigma_x = tm.gram_x();
        let sigma_xy = tm.gram_xy();
        let gamma_x = gamma_star_x(&sigma_x, &moments).unwrap();
        let star = gamma_star_y(&sigma_x, &sigma_xy, &gamma_x, &moments).unwrap();

        // brute-force oracle: scan the test MSE of the closed-form solution
        let sx_inv = sigma_x.clone().try_inverse().unwrap();
        let direction = &gamma_x * estimators::delta_xy(&moments);
        let g0 = moments[0].gram_xy();
        let mse_at = |gy: f64| {
            let b = &sx_inv * (&g0 + &direction * gy);
            estimators::evaluate_mse(&b, &tm)
        };
        let mut best = (f64::INFINITY, f64::NAN);
        let mut gy = star - 0.5;
        while gy <= star + 0.5 {
            let v = mse_at(gy);
            if v < best.0 {
                best = (v, gy);
            }
            gy += 1e-4;
        }
        assert!((best.1 - star).abs() < 1e-4, "grid {} vs star {star}", best.1);

        // the population test MSE is a parabola in gamma_y minimized at star
        let h = 1e-5;
        let derivative = (mse_at(star + h) - mse_at(star - h)) / (2.0 * h);
        assert!(derivative.abs() < 1e-6, "derivative {derivative}");
    }

    #[test]
    fn adaptive_fit_with_population_info_is_test_ols() {
        let (moments, info) = example1_env1_info();
        let fit = drig_a_adaptive(&moments, &info).unwrap();
        assert!((fit.b[0] - 5.0 / 2.25).abs() < 1e-12);
        let ols = test_ols(&info).unwrap();
        assert!((fit.b[0] - ols.b[0]).abs() < 1e-12);
    }

    #[test]
    fn adaptive_fit_reduces_to_reference_ols_on_reference_test_domain() {
        let (moments, _) = example1_env1_info();
        let info = TestDomainInfo {
            sigma_x: moments[0].gram_x(),
            sigma_xy: moments[0].gram_xy(),
            n_l: SampleSize::Population,
            n_u: SampleSize::Population,
        };
        let fit = drig_a_adaptive(&moments, &info).unwrap();
        assert!((fit.b[0] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn test_ols_edge_cases() {
        let (_, info) = example1_env1_info();
        let fit = test_ols(&info).unwrap();
        assert!((fit.b[0] - 5.0 / 2.25).abs() < 1e-13);
        assert!(fit.grad_invariance_residual.is_none());

        let zero_info = TestDomainInfo {
            sigma_xy: DVector::zeros(1),
            ..info.clone()
        };
        assert!(test_ols(&zero_info).unwrap().b.amax() < 1e-15);

        let singular = TestDomainInfo {
            sigma_x: DMatrix::zeros(1, 1),
            ..info
        };
        assert!(matches!(
            test_ols(&singular),
            Err(AdaptationError::SingularTestGram { .. })
        ));
    }

    #[test]
    fn singular_heterogeneity_is_an_error() {
        let (moments, info) = example1_env1_info();
        let identical = vec![moments[0].clone(), moments[0].clone()];
        assert!(matches!(
            gamma_star_x(&info.sigma_x, &identical),
            Err(AdaptationError::SingularHeterogeneity { .. })
        ));
    }

    #[test]
    fn test_below_reference_is_an_error() {
        let (moments, _) = example1_env1_info();
        let sigma_x = DMatrix::from_row_slice(1, 1, &[0.2]); // below G0_x = 1
        assert!(matches!(
            gamma_star_x(&sigma_x, &moments),
            Err(AdaptationError::TestBelowReference { .. })
        ));
    }

    #[test]
    fn sample_size_serialization() {
        let info = TestDomainInfo {
            sigma_x: DMatrix::identity(1, 1),
            sigma_xy: DVector::zeros(1),
            n_l: SampleSize::Finite(50),
            n_u: SampleSize::Population,
        };
        let json = serde_json::to_string(&info).unwrap();
        assert!(json.contains("\"n_l\":50"));
        assert!(json.contains("\"n_u\":\"population\""));
        let back: TestDomainInfo = serde_json::from_str(&json).unwrap();
        assert_eq!(back.n_l, SampleSize::Finite(50));
        assert_eq!(back.n_u, SampleSize::Population);
    }
}
