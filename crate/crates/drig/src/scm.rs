//! Linear structural causal models with per-environment additive
//! interventions.
//!
//! The observed vector `Z = (X, Y)` of `p` covariates and one response
//! satisfies `Z = B Z + eps + delta^e` in environment `e`, where `eps` is a
//! shared noise vector (off-diagonal covariance encodes latent confounding)
//! and `delta^e` is the environment's additive intervention. Solving the
//! structural equations gives `Z^e = C (eps + delta^e)` with
//! `C = (I - B)^{-1}`, so every second moment propagates in closed form:
//!
//! ```text
//! E[Z^e Z^e'] = C (noise_cov + S^e + mu^e mu^e') C'
//! ```
//!
//! Environment 0 is the *reference*: its intervention has zero mean, all data
//! are centered by the reference mean, and its intervention second moment is
//! expected (warning, not error) to be dominated by the weighted average over
//! environments.
//!
//! The module computes exact population moments, draws Gaussian samples, and
//! turns per-environment samples into the [`EnvironmentMoments`] sufficient
//! statistics that every estimator in this crate consumes.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::serde_mat;
use crate::linalg;

/// Errors from model validation, moment propagation and sampling.
#[derive(Debug, Error)]
pub enum ScmError {
    /// `I - B` is numerically singular (reciprocal condition number below 1e-12).
    #[error("SingularModel: I - B is numerically singular (rcond {rcond:.3e})")]
    SingularModel { rcond: f64 },
    /// A structural field violates the model invariants.
    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),
    /// An environment was supplied without any samples.
    #[error("EmptyEnvironment: environment {0} has no samples")]
    EmptyEnvironment(usize),
}

/// Non-fatal findings from [`ScmSpec::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum ScmWarning {
    /// The weighted average intervention second moment does not dominate the
    /// reference environment's; carries the most negative eigenvalue of the
    /// difference.
    ReferenceDominanceViolated { min_eigenvalue: f64 },
}

/// Additive intervention law of one environment: `delta^e ~ (mu, S)` with
/// sampling weight `omega^e`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterventionLaw {
    /// Intervention mean, length `p + 1`.
    #[serde(with = "serde_mat::vector")]
    pub mu: DVector<f64>,
    /// Intervention covariance, `(p+1) x (p+1)` symmetric PSD.
    #[serde(rename = "S", with = "serde_mat::matrix")]
    pub cov: DMatrix<f64>,
    /// Environment weight in `(0, 1]`; weights sum to one across a spec.
    pub weight: f64,
}

impl InterventionLaw {
    /// Second moment `E[delta delta'] = S + mu mu'`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.cov + &self.mu * self.mu.transpose()
    }
}

/// A linear SCM with additive interventions; ground truth for simulation and
/// for the exact worst-case-risk machinery.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScmSpec {
    /// Covariate count; the observed vector has dimension `p + 1`.
    pub p: usize,
    /// Adjacency matrix, `(p+1) x (p+1)`; entry `(i, j)` is the direct effect
    /// of variable `j` on variable `i`. The response's self-loop entry is zero.
    #[serde(rename = "B", with = "serde_mat::matrix")]
    pub adjacency: DMatrix<f64>,
    /// Noise second moment `E[eps eps']`, symmetric PSD; off-diagonal entries
    /// encode latent confounding.
    #[serde(with = "serde_mat::matrix")]
    pub noise_cov: DMatrix<f64>,
    /// Ordered intervention laws; index 0 is the reference environment.
    pub environments: Vec<InterventionLaw>,
}

impl ScmSpec {
    fn dim(&self) -> usize {
        self.p + 1
    }

    /// Causal parameter: the response row of the adjacency matrix restricted
    /// to the covariates.
    pub fn causal_parameter(&self) -> DVector<f64> {
        DVector::from_iterator(self.p, (0..self.p).map(|j| self.adjacency[(self.p, j)]))
    }

    /// `C = (I - B)^{-1}`, the map from structural noise to observations.
    pub fn structural_inverse(&self) -> Result<DMatrix<f64>, ScmError> {
        let d = self.dim();
        let i_minus_b = DMatrix::<f64>::identity(d, d) - &self.adjacency;
        let rcond = linalg::rcond(&i_minus_b);
        if rcond < linalg::RCOND_TOL {
            return Err(ScmError::SingularModel { rcond });
        }
        i_minus_b
            .try_inverse()
            .ok_or(ScmError::SingularModel { rcond })
    }

    /// Checks every structural invariant; hard violations are errors, the
    /// reference-dominance property only produces a warning.
    pub fn validate(&self) -> Result<Vec<ScmWarning>, ScmError> {
        let d = self.dim();
        if self.p == 0 {
            return Err(ScmError::InvalidSpec("p must be positive".into()));
        }
        if self.adjacency.nrows() != d || self.adjacency.ncols() != d {
            return Err(ScmError::InvalidSpec(format!(
                "B must be {d}x{d}, got {}x{}",
                self.adjacency.nrows(),
                self.adjacency.ncols()
            )));
        }
        if self.adjacency[(self.p, self.p)] != 0.0 {
            return Err(ScmError::InvalidSpec(
                "the response's diagonal entry of B must be zero".into(),
            ));
        }
        if self.noise_cov.nrows() != d || self.noise_cov.ncols() != d {
            return Err(ScmError::InvalidSpec("noise_cov has wrong shape".into()));
        }
        check_symmetric_psd(&self.noise_cov, "noise_cov")?;
        if self.environments.is_empty() {
            return Err(ScmError::InvalidSpec(
                "at least the reference environment is required".into(),
            ));
        }
        let mut weight_sum = 0.0;
        for (e, law) in self.environments.iter().enumerate() {
            if law.mu.len() != d {
                return Err(ScmError::InvalidSpec(format!(
                    "environment {e}: mu must have length {d}"
                )));
            }
            if law.cov.nrows() != d || law.cov.ncols() != d {
                return Err(ScmError::InvalidSpec(format!(
                    "environment {e}: S has wrong shape"
                )));
            }
            check_symmetric_psd(&law.cov, &format!("environment {e} S"))?;
            if !(law.weight > 0.0 && law.weight <= 1.0) {
                return Err(ScmError::InvalidSpec(format!(
                    "environment {e}: weight must lie in (0, 1], got {}",
                    law.weight
                )));
            }
            weight_sum += law.weight;
        }
        if (weight_sum - 1.0).abs() > 1e-12 {
            return Err(ScmError::InvalidSpec(format!(
                "environment weights must sum to 1 (got {weight_sum})"
            )));
        }
        let mu0 = &self.environments[0].mu;
        if mu0.amax() > 1e-12 {
            return Err(ScmError::InvalidSpec(
                "reference environment must have zero intervention mean".into(),
            ));
        }
        self.structural_inverse()?;

        let mut warnings = Vec::new();
        let diff = self.intervention_heterogeneity();
        let min = linalg::min_eigenvalue(&diff);
        let scale = linalg::PSD_TOL * diff.trace().abs().max(1.0);
        if min < -scale {
            warnings.push(ScmWarning::ReferenceDominanceViolated {
                min_eigenvalue: min,
            });
        }
        Ok(warnings)
    }

    /// Weighted excess intervention second moment over the reference
    /// environment: `sum_e omega^e (S^e - S^0 + mu^e mu^e')`. Drives both the
    /// DRIG regularizer and the perturbation-class bounds.
    pub fn intervention_heterogeneity(&self) -> DMatrix<f64> {
        let d = self.dim();
        let ref_gram = self.environments[0].second_moment();
        let mut acc = DMatrix::zeros(d, d);
        for law in &self.environments {
            acc += (law.second_moment() - &ref_gram) * law.weight;
        }
        acc
    }

    /// Exact population moments of every environment. The reference mean is
    /// zero by the centering convention, so no shift is applied.
    pub fn population_moments(&self) -> Result<Vec<EnvironmentMoments>, ScmError> {
        let c = self.structural_inverse()?;
        let ct = c.transpose();
        Ok(self
            .environments
            .iter()
            .map(|law| {
                let inner = &self.noise_cov + law.second_moment();
                EnvironmentMoments {
                    mean: &c * &law.mu,
                    gram: &c * inner * &ct,
                    weight: law.weight,
                    n: None,
                }
            })
            .collect())
    }

    /// Exact moments of the test distribution generated by an unseen additive
    /// intervention with mean `v_mean` and covariance `v_cov`.
    pub fn test_moments(
        &self,
        v_mean: &DVector<f64>,
        v_cov: &DMatrix<f64>,
    ) -> Result<EnvironmentMoments, ScmError> {
        check_symmetric_psd(v_cov, "test intervention covariance")?;
        let c = self.structural_inverse()?;
        let inner = &self.noise_cov + v_cov + v_mean * v_mean.transpose();
        Ok(EnvironmentMoments {
            mean: &c * v_mean,
            gram: &c * inner * c.transpose(),
            weight: 1.0,
            n: None,
        })
    }

    /// Draws `n` i.i.d. Gaussian rows of `(X^e, Y^e)` for one training
    /// environment. Deterministic given the seed.
    pub fn sample(&self, env_index: usize, n: usize, seed: u64) -> Result<DMatrix<f64>, ScmError> {
        let law = self.environments.get(env_index).ok_or_else(|| {
            ScmError::InvalidSpec(format!("environment index {env_index} out of range"))
        })?;
        self.sample_intervention(&law.mu, &law.cov, n, seed)
    }

    /// Draws `n` rows from the test SCM under intervention `(v_mean, v_cov)`.
    pub fn sample_test(
        &self,
        v_mean: &DVector<f64>,
        v_cov: &DMatrix<f64>,
        n: usize,
        seed: u64,
    ) -> Result<DMatrix<f64>, ScmError> {
        self.sample_intervention(v_mean, v_cov, n, seed)
    }

    fn sample_intervention(
        &self,
        mu: &DVector<f64>,
        cov: &DMatrix<f64>,
        n: usize,
        seed: u64,
    ) -> Result<DMatrix<f64>, ScmError> {
        if n == 0 {
            return Err(ScmError::InvalidSpec("sample size must be >= 1".into()));
        }
        let d = self.dim();
        let c = self.structural_inverse()?;
        let noise_root = psd_root(&self.noise_cov, "noise_cov")?;
        let shift_root = psd_root(cov, "intervention covariance")?;
        // ChaCha is counter-based: distinct seeds give independent,
        // reproducible streams, so parallel replications can safely use
        // seed + replication_index.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = DMatrix::zeros(n, d);
        let mut u = DVector::zeros(d);
        for row in 0..n {
            let mut structural = mu.clone();
            fill_standard_normal(&mut u, &mut rng);
            structural += &noise_root * &u;
            fill_standard_normal(&mut u, &mut rng);
            structural += &shift_root * &u;
            let z = &c * structural;
            for j in 0..d {
                out[(row, j)] = z[j];
            }
        }
        Ok(out)
    }
}

fn fill_standard_normal(v: &mut DVector<f64>, rng: &mut ChaCha8Rng) {
    for x in v.iter_mut() {
        *x = StandardNormal.sample(rng);
    }
}

fn check_symmetric_psd(m: &DMatrix<f64>, what: &str) -> Result<(), ScmError> {
    let asym = (m - m.transpose()).amax();
    let scale = m.amax().max(1.0);
    if asym > 1e-10 * scale {
        return Err(ScmError::InvalidSpec(format!("{what} is not symmetric")));
    }
    if !linalg::is_psd(m) {
        return Err(ScmError::InvalidSpec(format!(
            "{what} is not positive semidefinite (min eigenvalue {:.3e})",
            linalg::min_eigenvalue(m)
        )));
    }
    Ok(())
}

fn psd_root(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>, ScmError> {
    linalg::sym_sqrt(m).map_err(|eig| {
        ScmError::InvalidSpec(format!(
            "{what} is not positive semidefinite (min eigenvalue {eig:.3e})"
        ))
    })
}

/// Per-environment sufficient statistics: mean and second moment of
/// `(X^e, Y^e)` after centering by the reference environment's mean, plus the
/// environment weight. Every estimator consumes a slice of these.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentMoments {
    /// Mean of the centered observation vector, length `p + 1`.
    #[serde(with = "serde_mat::vector")]
    pub mean: DVector<f64>,
    /// Second moment `E[Z Z']` of the centered observations, symmetric PSD.
    #[serde(with = "serde_mat::matrix")]
    pub gram: DMatrix<f64>,
    /// Environment weight.
    pub weight: f64,
    /// Backing sample count; `None` for exact population moments.
    pub n: Option<usize>,
}

impl EnvironmentMoments {
    /// Covariate count.
    pub fn p(&self) -> usize {
        self.gram.nrows() - 1
    }

    /// Covariate block of the second moment, `p x p`.
    pub fn gram_x(&self) -> DMatrix<f64> {
        self.gram.view((0, 0), (self.p(), self.p())).into()
    }

    /// Covariate-response block `E[X Y]`, length `p`.
    pub fn gram_xy(&self) -> DVector<f64> {
        let p = self.p();
        DVector::from_iterator(p, (0..p).map(|i| self.gram[(i, p)]))
    }

    /// Response second moment `E[Y^2]`.
    pub fn gram_y(&self) -> f64 {
        let p = self.p();
        self.gram[(p, p)]
    }

    /// Covariate block of the mean.
    pub fn mean_x(&self) -> DVector<f64> {
        DVector::from_iterator(self.p(), (0..self.p()).map(|i| self.mean[i]))
    }

    /// Response mean.
    pub fn mean_y(&self) -> f64 {
        self.mean[self.p()]
    }

    /// Centered covariance `gram - mean mean'`.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.gram - &self.mean * self.mean.transpose()
    }
}

/// Builds [`EnvironmentMoments`] from per-environment sample matrices (rows
/// are observations of `(X, Y)`; index 0 is the reference environment).
///
/// The reference environment's sample mean is subtracted from every
/// environment before computing Grams, mirroring the population centering
/// convention. Weights default to sample-size proportions `n_e / n` when not
/// supplied.
pub fn empirical_moments(
    samples: &[DMatrix<f64>],
    weights: Option<&[f64]>,
) -> Result<Vec<EnvironmentMoments>, ScmError> {
    if samples.is_empty() {
        return Err(ScmError::InvalidSpec("no environments supplied".into()));
    }
    for (e, s) in samples.iter().enumerate() {
        if s.nrows() == 0 {
            return Err(ScmError::EmptyEnvironment(e));
        }
        if s.ncols() != samples[0].ncols() {
            return Err(ScmError::InvalidSpec(format!(
                "environment {e} has {} columns, expected {}",
                s.ncols(),
                samples[0].ncols()
            )));
        }
    }
    if let Some(w) = weights {
        if w.len() != samples.len() {
            return Err(ScmError::InvalidSpec(
                "weights length must match environment count".into(),
            ));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || w.iter().any(|&x| x <= 0.0) {
            return Err(ScmError::InvalidSpec(
                "weights must be positive and sum to 1".into(),
            ));
        }
    }

    let total: usize = samples.iter().map(|s| s.nrows()).sum();
    let reference_mean = samples[0].row_mean().transpose();
    let d = samples[0].ncols();

    Ok(samples
        .iter()
        .enumerate()
        .map(|(e, s)| {
            let n = s.nrows();
            let mut mean = DVector::zeros(d);
            let mut gram = DMatrix::zeros(d, d);
            let mut centered_row = DVector::zeros(d);
            for i in 0..n {
                for j in 0..d {
                    centered_row[j] = s[(i, j)] - reference_mean[j];
                }
                mean += &centered_row;
                for a in 0..d {
                    for b in a..d {
                        gram[(a, b)] += centered_row[a] * centered_row[b];
                    }
                }
            }
            mean /= n as f64;
            gram /= n as f64;
            for a in 0..d {
                for b in 0..a {
                    gram[(a, b)] = gram[(b, a)];
                }
            }
            let weight = match weights {
                Some(w) => w[e],
                None => n as f64 / total as f64,
            };
            EnvironmentMoments {
                mean,
                gram,
                weight,
                n: Some(n),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_op_norm;

    /// The two-environment, single-covariate model used across the crate's
    /// tests: `Y = 2X + eps_y`, correlated noise, one environment shifting
    /// only the covariate.
    pub(crate) fn example1() -> ScmSpec {
        ScmSpec {
            p: 1,
            adjacency: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0]),
            noise_cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            environments: vec![
                InterventionLaw {
                    mu: DVector::zeros(2),
                    cov: DMatrix::zeros(2, 2),
                    weight: 0.5,
                },
                InterventionLaw {
                    mu: DVector::from_row_slice(&[0.5, 0.0]),
                    cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
                    weight: 0.5,
                },
            ],
        }
    }

    #[test]
    fn example1_population_moments_match_hand_propagation() {
        let spec = example1();
        assert!(spec.validate().unwrap().is_empty());
        let moments = spec.population_moments().unwrap();
        let g0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.5, 2.5, 7.0]);
        let g1 = DMatrix::from_row_slice(2, 2, &[2.25, 5.0, 5.0, 12.0]);
        assert!((&moments[0].gram - g0).amax() < 1e-12);
        assert!((&moments[1].gram - g1).amax() < 1e-12);
        assert!(moments[0].mean.amax() < 1e-15);
        // mean of env 1 propagates through C = [[1,0],[2,1]]
        assert!((moments[1].mean[0] - 0.5).abs() < 1e-12);
        assert!((moments[1].mean[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn example1_population_moments_match_monte_carlo() {
        let spec = example1();
        let moments = spec.population_moments().unwrap();
        for env in 0..2 {
            let s = spec.sample(env, 1_000_000, 42 + env as u64).unwrap();
            let emp = empirical_moments(std::slice::from_ref(&s), Some(&[1.0])).unwrap();
            // own-environment centering differs from reference centering for
            // env 1, so compare uncentered grams directly
            let mut gram = DMatrix::zeros(2, 2);
            for i in 0..s.nrows() {
                let row = s.row(i).transpose();
                gram += &row * row.transpose();
            }
            gram /= s.nrows() as f64;
            let rel =
                sym_op_norm(&(&gram - &moments[env].gram)) / sym_op_norm(&moments[env].gram);
            assert!(rel < 1e-2, "env {env} Monte-Carlo relative gram error {rel}");
            drop(emp);
        }
    }

    #[test]
    fn no_intervention_gives_identical_environments() {
        let mut spec = example1();
        spec.environments[1] = InterventionLaw {
            mu: DVector::zeros(2),
            cov: DMatrix::zeros(2, 2),
            weight: 0.5,
        };
        let moments = spec.population_moments().unwrap();
        assert!((&moments[0].gram - &moments[1].gram).amax() < 1e-15);
    }

    #[test]
    fn independent_sum_of_covariances() {
        let spec = ScmSpec {
            p: 1,
            adjacency: DMatrix::zeros(2, 2),
            noise_cov: DMatrix::identity(2, 2),
            environments: vec![
                InterventionLaw {
                    mu: DVector::zeros(2),
                    cov: DMatrix::zeros(2, 2),
                    weight: 0.5,
                },
                InterventionLaw {
                    mu: DVector::zeros(2),
                    cov: DMatrix::identity(2, 2),
                    weight: 0.5,
                },
            ],
        };
        let moments = spec.population_moments().unwrap();
        assert!((&moments[1].gram - DMatrix::<f64>::identity(2, 2) * 2.0).amax() < 1e-14);
    }

    #[test]
    fn test_moments_consistent_with_population() {
        let spec = example1();
        let law = &spec.environments[1];
        let tm = spec.test_moments(&law.mu, &law.cov).unwrap();
        let moments = spec.population_moments().unwrap();
        assert!((&tm.gram - &moments[1].gram).amax() < 1e-13);
        let zero = spec
            .test_moments(&DVector::zeros(2), &DMatrix::zeros(2, 2))
            .unwrap();
        assert!((&zero.gram - &moments[0].gram).amax() < 1e-13);
    }

    #[test]
    fn test_moments_example1_alpha_scaling() {
        // E[v_x^2] = 1.25 * alpha with alpha = 2 puts the covariate second
        // moment at 1 + 2.5
        let spec = example1();
        let v_cov = DMatrix::from_row_slice(2, 2, &[2.5, 0.0, 0.0, 0.0]);
        let tm = spec.test_moments(&DVector::zeros(2), &v_cov).unwrap();
        assert!((tm.gram[(0, 0)] - 3.5).abs() < 1e-13);
    }

    #[test]
    fn sampling_is_deterministic_and_finite() {
        let spec = example1();
        let a = spec.sample(0, 1, 7).unwrap();
        assert_eq!(a.nrows(), 1);
        assert!(a.iter().all(|v| v.is_finite()));
        let b = spec.sample(1, 64, 99).unwrap();
        let c = spec.sample(1, 64, 99).unwrap();
        assert_eq!(b, c);
        let d = spec.sample(1, 64, 100).unwrap();
        assert_ne!(b, d);
    }

    #[test]
    fn sample_gram_converges_to_population() {
        let spec = example1();
        let moments = spec.population_moments().unwrap();
        let s = spec.sample(0, 1_000_000, 3).unwrap();
        let emp = empirical_moments(std::slice::from_ref(&s), Some(&[1.0])).unwrap();
        assert!(sym_op_norm(&(&emp[0].gram - &moments[0].gram)) < 1e-2);
    }

    #[test]
    fn empirical_moments_center_by_reference() {
        let spec = example1();
        let samples: Vec<_> = (0..2)
            .map(|e| spec.sample(e, 100_000, 11 + e as u64).unwrap())
            .collect();
        let emp = empirical_moments(&samples, None).unwrap();
        // reference mean is exactly zero after centering
        assert!(emp[0].mean.amax() < 1e-12);
        let moments = spec.population_moments().unwrap();
        for e in 0..2 {
            // relative operator norm; the Gram entries are O(10)
            let rel = sym_op_norm(&(&emp[e].gram - &moments[e].gram))
                / sym_op_norm(&moments[e].gram);
            assert!(rel < 2e-2, "env {e} relative gram error {rel}");
        }
        // equal sample sizes give equal default weights
        assert!((emp[0].weight - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empirical_moments_single_environment_and_symmetry() {
        let spec = example1();
        let s = spec.sample(0, 500, 5).unwrap();
        let one = empirical_moments(std::slice::from_ref(&s), None).unwrap();
        assert!((one[0].weight - 1.0).abs() < 1e-15);
        // reference-centering equals ordinary mean-centering for a single env
        let cov = one[0].covariance();
        assert!(linalg::is_psd(&cov));

        let duplicated = vec![s.clone(), s.clone()];
        let two = empirical_moments(&duplicated, None).unwrap();
        assert!((&two[0].gram - &two[1].gram).amax() < 1e-15);
        assert!((&two[0].mean - &two[1].mean).amax() < 1e-15);
    }

    #[test]
    fn empty_environment_is_an_error() {
        let spec = example1();
        let s = spec.sample(0, 10, 1).unwrap();
        let empty = DMatrix::<f64>::zeros(0, 2);
        match empirical_moments(&[s, empty], None) {
            Err(ScmError::EmptyEnvironment(1)) => {}
            other => panic!("expected EmptyEnvironment(1), got {other:?}"),
        }
    }

    #[test]
    fn validation_catches_structural_errors() {
        let mut spec = example1();
        spec.adjacency[(1, 1)] = 0.5;
        assert!(matches!(spec.validate(), Err(ScmError::InvalidSpec(_))));

        let mut spec = example1();
        spec.environments[0].mu[0] = 0.3;
        assert!(matches!(spec.validate(), Err(ScmError::InvalidSpec(_))));

        let mut spec = example1();
        spec.environments[1].weight = 0.4;
        assert!(matches!(spec.validate(), Err(ScmError::InvalidSpec(_))));

        // cyclic with feedback loop making I - B singular
        let mut spec = example1();
        spec.adjacency = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        spec.adjacency[(1, 1)] = 0.0;
        assert!(matches!(
            spec.validate(),
            Err(ScmError::SingularModel { .. })
        ));
    }

    #[test]
    fn dominance_violation_is_a_warning() {
        // reference environment carries a large intervention covariance that
        // the weighted average cannot dominate
        let spec = ScmSpec {
            p: 1,
            adjacency: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0]),
            noise_cov: DMatrix::identity(2, 2),
            environments: vec![
                InterventionLaw {
                    mu: DVector::zeros(2),
                    cov: DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]),
                    weight: 0.5,
                },
                InterventionLaw {
                    mu: DVector::zeros(2),
                    cov: DMatrix::zeros(2, 2),
                    weight: 0.5,
                },
            ],
        };
        let warnings = spec.validate().unwrap();
        assert!(matches!(
            warnings.as_slice(),
            [ScmWarning::ReferenceDominanceViolated { .. }]
        ));
    }
}
