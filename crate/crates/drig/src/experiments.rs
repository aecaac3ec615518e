//! Declaratively configured synthetic studies.
//!
//! A configuration names a scenario, an estimator set, a grid of test
//! perturbation strengths `alpha` and a seed; [`run`] produces a long-format
//! result table (one row per test-environment evaluation) plus a JSON-ready
//! summary with per-method worst-case curves and bootstrap confidence
//! intervals. Population scenarios are exact; sampled scenarios are fully
//! seeded, so identical configurations yield bit-identical tables.
//!
//! Scenarios:
//! - `example1` / `example2`: the fixed single-covariate models with
//!   covariate-only and all-variable interventions, exact population curves.
//! - `example3`: five covariates, a diagonal-shaped test shift, showcasing a
//!   non-scalar penalty matrix.
//! - `example4`: twenty covariates, semi-supervised adaptation with a small
//!   labeled test sample against the test-OLS baseline.
//! - `appendix_g_covariate` / `appendix_g_all`: random DAG instances with
//!   three interventional environments, finite training samples, twenty test
//!   environments, and worst-case reporting; the covariate variant leaves the
//!   response and latents untouched.
//! - `custom`: a user-supplied model plus test laws.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{self, TestDomainInfo};
use crate::estimators::{self, GammaMatrix};
use crate::io::serde_mat;
use crate::linalg;
use crate::scm::{empirical_moments, EnvironmentMoments, InterventionLaw, ScmError, ScmSpec};

/// Errors from configuration validation and experiment execution.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Scm(#[from] ScmError),
}

// ---------------------------------------------------------------------------
// fixed illustrative models
// ---------------------------------------------------------------------------

/// Single covariate, `Y = 2X + eps_y`, correlated noise, one environment
/// shifting only the covariate (`delta_x ~ N(0.5, 1)`).
pub fn example1_spec() -> ScmSpec {
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

/// As [`example1_spec`], but the intervention also shifts the response:
/// `(delta_x, delta_y) ~ N((0.5, 0.1), [[1, 0.1], [0.1, 0.05]])`.
pub fn example2_spec() -> ScmSpec {
    let mut spec = example1_spec();
    spec.environments[1] = InterventionLaw {
        mu: DVector::from_row_slice(&[0.5, 0.1]),
        cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 0.05]),
        weight: 0.5,
    };
    spec
}

// ---------------------------------------------------------------------------
// random instances
// ---------------------------------------------------------------------------

/// Recipe for a random multi-environment instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomInstanceSpec {
    /// Covariate count.
    pub p: usize,
    /// Number of interventional training environments (the observational
    /// reference environment is always added on top).
    pub n_train_envs: usize,
    /// Number of test intervention laws to generate.
    pub n_test_envs: usize,
    /// Erdos-Renyi edge probability of the random DAG.
    pub edge_prob: f64,
    /// Whether interventions may hit the response coordinate; when false the
    /// last entry of every mean and the last row/column of every covariance
    /// are zeroed.
    pub intervene_y: bool,
}

/// A unit-strength test intervention law; at strength `alpha` the
/// intervention is `v ~ N(sqrt(alpha) * mu, alpha * cov)`, so its second
/// moment scales linearly in `alpha`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestLaw {
    #[serde(with = "serde_mat::vector")]
    pub mu: DVector<f64>,
    #[serde(with = "serde_mat::matrix")]
    pub cov: DMatrix<f64>,
}

fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    // splitmix64-style mixing keeps parallel replication streams disjoint
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn random_unit_mean(rng: &mut ChaCha8Rng, d: usize, intervene_y: bool) -> DVector<f64> {
    let mut mu = DVector::from_fn(d, |_, _| rng.gen::<f64>());
    if !intervene_y {
        mu[d - 1] = 0.0;
    }
    let norm = mu.norm();
    if norm > 0.0 {
        mu /= norm;
    }
    mu
}

fn random_unit_cov(rng: &mut ChaCha8Rng, d: usize, intervene_y: bool) -> DMatrix<f64> {
    let factor = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>());
    let mut cov = &factor * factor.transpose();
    if !intervene_y {
        for i in 0..d {
            cov[(i, d - 1)] = 0.0;
            cov[(d - 1, i)] = 0.0;
        }
    }
    let norm = linalg::sym_op_norm(&cov);
    if norm > 0.0 {
        cov /= norm;
    }
    cov
}

fn random_dag(rng: &mut ChaCha8Rng, d: usize, edge_prob: f64) -> DMatrix<f64> {
    // topological order first, then independent edges from earlier to later
    let mut order: Vec<usize> = (0..d).collect();
    order.shuffle(rng);
    let mut b = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..i {
            if rng.gen::<f64>() < edge_prob {
                b[(order[i], order[j])] = rng.gen_range(-1.0..1.0);
            }
        }
    }
    b
}

fn random_instance_scaled(
    spec: &RandomInstanceSpec,
    seed: u64,
    mean_scale: f64,
    cov_scale: f64,
) -> (ScmSpec, Vec<TestLaw>) {
    let d = spec.p + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let adjacency = random_dag(&mut rng, d, spec.edge_prob);
    let factor = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>());
    let noise_cov = &factor * factor.transpose();

    let k = spec.n_train_envs + 1;
    let weight = 1.0 / k as f64;
    let mut environments = vec![InterventionLaw {
        mu: DVector::zeros(d),
        cov: DMatrix::zeros(d, d),
        weight,
    }];
    for _ in 0..spec.n_train_envs {
        environments.push(InterventionLaw {
            mu: random_unit_mean(&mut rng, d, spec.intervene_y) * mean_scale,
            cov: random_unit_cov(&mut rng, d, spec.intervene_y) * cov_scale,
            weight,
        });
    }
    let tests = (0..spec.n_test_envs)
        .map(|_| TestLaw {
            mu: random_unit_mean(&mut rng, d, spec.intervene_y),
            cov: random_unit_cov(&mut rng, d, spec.intervene_y),
        })
        .collect();
    (
        ScmSpec {
            p: spec.p,
            adjacency,
            noise_cov,
            environments,
        },
        tests,
    )
}

/// Generates a reproducible random instance: a random-DAG model with an
/// observational reference plus `n_train_envs` interventional environments,
/// and `n_test_envs` unit-strength test laws.
///
/// Means and covariances are drawn entrywise from `Unif[0, 1]` (covariances
/// as `S S'`), normalized to unit 2-norm; training means are then scaled by
/// `sqrt(10)` and training covariances by `10` so the training environments
/// carry substantial heterogeneity, while test laws stay at unit strength
/// (the sweep's `alpha` scales them).
pub fn random_instance(spec: &RandomInstanceSpec, seed: u64) -> (ScmSpec, Vec<TestLaw>) {
    random_instance_scaled(spec, seed, 10.0f64.sqrt(), 10.0)
}

/// Covariance of the entrywise product `X * Y` for a jointly Gaussian vector
/// `(X, Y)` with the given mean and covariance (Isserlis' theorem).
pub fn gaussian_cross_moment_variance(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> DMatrix<f64> {
    let p = mean.len() - 1;
    let y = p;
    DMatrix::from_fn(p, p, |i, j| {
        cov[(i, j)] * cov[(y, y)]
            + cov[(i, y)] * cov[(j, y)]
            + mean[i] * mean[j] * cov[(y, y)]
            + mean[i] * mean[y] * cov[(j, y)]
            + mean[j] * mean[y] * cov[(i, y)]
            + mean[y] * mean[y] * cov[(i, j)]
    })
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

/// Which synthetic study to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Example1,
    Example2,
    Example3,
    Example4,
    AppendixGCovariate,
    AppendixGAll,
    Custom,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Example1 => "example1",
            Scenario::Example2 => "example2",
            Scenario::Example3 => "example3",
            Scenario::Example4 => "example4",
            Scenario::AppendixGCovariate => "appendix_g_covariate",
            Scenario::AppendixGAll => "appendix_g_all",
            Scenario::Custom => "custom",
        }
    }
}

/// Environment weighting for sampled scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum WeightsMode {
    #[default]
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "sample-size")]
    SampleSize,
}

/// Either a fixed regularization strength or the per-test-environment
/// oracle choice over the configured grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaChoice {
    Fixed(f64),
    Oracle,
}

impl Serialize for GammaChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            GammaChoice::Fixed(g) => s.serialize_f64(*g),
            GammaChoice::Oracle => s.serialize_str("oracle"),
        }
    }
}

impl<'de> Deserialize<'de> for GammaChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Wire {
            F(f64),
            S(String),
        }
        match Wire::deserialize(d)? {
            Wire::F(g) => Ok(GammaChoice::Fixed(g)),
            Wire::S(s) if s == "oracle" => Ok(GammaChoice::Oracle),
            Wire::S(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"oracle\", got `{s}`"
            ))),
        }
    }
}

/// One estimator to include in the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSpec {
    /// Estimator tag: `ols_ref`, `ols_pooled`, `drig`, `anchor`, `causal`,
    /// `causal_dantzig`, `drig_inf`, `group_dro`, `drig_a`,
    /// `drig_a_adaptive`, `test_ols`.
    pub name: String,
    /// Strength for `drig` / `anchor` (number or `"oracle"`); for `drig_a`
    /// a number is the scalar strength reproducing `drig(gamma)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaChoice>,
    /// Explicit covariate penalty block for `drig_a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_x: Option<Vec<Vec<f64>>>,
    /// Explicit response penalty for `drig_a`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_y: Option<f64>,
    /// Labeled test sample size for `drig_a_adaptive` / `test_ols`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_l: Option<usize>,
}

impl MethodSpec {
    /// Plain method by name, no parameters.
    pub fn plain(name: &str) -> Self {
        MethodSpec {
            name: name.to_string(),
            gamma: None,
            gamma_x: None,
            gamma_y: None,
            n_l: None,
        }
    }

    /// Method with a fixed strength.
    pub fn with_gamma(name: &str, gamma: f64) -> Self {
        MethodSpec {
            gamma: Some(GammaChoice::Fixed(gamma)),
            ..Self::plain(name)
        }
    }

    /// Method with the oracle strength scheme.
    pub fn oracle(name: &str) -> Self {
        MethodSpec {
            gamma: Some(GammaChoice::Oracle),
            ..Self::plain(name)
        }
    }

    fn gamma_label(&self) -> String {
        match (&self.gamma, &self.gamma_x, self.name.as_str()) {
            (_, _, "drig_a_adaptive") => "adaptive".to_string(),
            (Some(GammaChoice::Oracle), _, _) => "oracle".to_string(),
            (Some(GammaChoice::Fixed(g)), _, _) => format!("{g}"),
            (None, Some(_), _) => "matrix".to_string(),
            _ => String::new(),
        }
    }
}

/// A user-supplied scenario: explicit model, test laws and optional
/// per-environment training sample size (population moments when absent).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomScenario {
    pub spec: ScmSpec,
    pub test_laws: Vec<TestLaw>,
    #[serde(default)]
    pub n_train: Option<usize>,
}

fn default_gamma_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]
}

fn default_repetitions() -> usize {
    1
}

fn default_n_labeled() -> usize {
    50
}

fn default_n_train() -> usize {
    10_000
}

/// Declarative description of one sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Test perturbation strengths; strictly positive and sorted ascending.
    pub alpha_grid: Vec<f64>,
    /// Grid for the oracle strength scheme.
    #[serde(default = "default_gamma_grid")]
    pub gamma_grid: Vec<f64>,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: WeightsMode,
    /// Override for the random-instance recipe of the appendix scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<RandomInstanceSpec>,
    /// Per-environment training sample size for sampled scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    /// Labeled test sample size for adaptive methods (default 50).
    #[serde(default = "default_n_labeled")]
    pub n_labeled: usize,
    /// Required when `scenario` is `custom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomScenario>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.methods.is_empty() {
            return Err(ExperimentError::InvalidConfig(
                "method list must not be empty".into(),
            ));
        }
        if self.alpha_grid.is_empty() {
            return Err(ExperimentError::InvalidConfig(
                "alpha_grid must not be empty".into(),
            ));
        }
        if self.alpha_grid.iter().any(|&a| a <= 0.0) {
            return Err(ExperimentError::InvalidConfig(
                "alpha_grid must be strictly positive".into(),
            ));
        }
        if self.alpha_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::InvalidConfig(
                "alpha_grid must be strictly increasing".into(),
            ));
        }
        if self.repetitions < 1 {
            return Err(ExperimentError::InvalidConfig(
                "repetitions must be >= 1".into(),
            ));
        }
        if self.scenario == Scenario::Custom && self.custom.is_none() {
            return Err(ExperimentError::InvalidConfig(
                "custom scenario requires the `custom` block".into(),
            ));
        }
        let known = [
            "ols_ref",
            "ols_pooled",
            "drig",
            "anchor",
            "causal",
            "causal_dantzig",
            "drig_inf",
            "group_dro",
            "drig_a",
            "drig_a_adaptive",
            "test_ols",
        ];
        for m in &self.methods {
            if !known.contains(&m.name.as_str()) {
                return Err(ExperimentError::InvalidConfig(format!(
                    "unknown method `{}`",
                    m.name
                )));
            }
            if matches!(m.name.as_str(), "drig" | "anchor") && m.gamma.is_none() {
                return Err(ExperimentError::InvalidConfig(format!(
                    "method `{}` needs a gamma (number or \"oracle\")",
                    m.name
                )));
            }
            if m.name == "drig_a" && m.gamma.is_none() && (m.gamma_x.is_none() || m.gamma_y.is_none())
            {
                return Err(ExperimentError::InvalidConfig(
                    "method `drig_a` needs gamma or an explicit gamma_x/gamma_y".into(),
                ));
            }
        }
        if self.gamma_grid.is_empty()
            && self
                .methods
                .iter()
                .any(|m| matches!(m.gamma, Some(GammaChoice::Oracle)))
        {
            return Err(ExperimentError::InvalidConfig(
                "oracle scheme requires a non-empty gamma_grid".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// test environments and instances
// ---------------------------------------------------------------------------

/// A test environment, either an intervention law propagated through the
/// model or a directly specified second-moment matrix.
#[derive(Debug, Clone)]
pub enum TestEnvironment {
    /// `v ~ N(sqrt(alpha) mu, alpha cov)` pushed through the structural map.
    Intervention(TestLaw),
    /// Observation second moment given directly as `base + alpha * shift`
    /// (clamped to PSD); used when only the test Gram is specified.
    DirectGram {
        base: DMatrix<f64>,
        shift: DMatrix<f64>,
    },
}

impl TestEnvironment {
    /// Exact test moments at strength `alpha`.
    pub fn moments(&self, spec: &ScmSpec, alpha: f64) -> Result<EnvironmentMoments, ScmError> {
        match self {
            TestEnvironment::Intervention(law) => {
                spec.test_moments(&(&law.mu * alpha.sqrt()), &(&law.cov * alpha))
            }
            TestEnvironment::DirectGram { base, shift } => {
                let raw = base + shift * alpha;
                let gram = linalg::psd_project(&raw).unwrap_or_else(|_| {
                    // strongly indefinite direct Grams are clamped hard;
                    // the quadratic MSE stays well defined
                    let (vals, vecs) = linalg::sym_eigen(&raw);
                    let clamped = vals.map(|v| v.max(0.0));
                    &vecs * DMatrix::from_diagonal(&clamped) * vecs.transpose()
                });
                Ok(EnvironmentMoments {
                    mean: DVector::zeros(gram.nrows()),
                    gram,
                    weight: 1.0,
                    n: None,
                })
            }
        }
    }

    /// Draws `n` labeled test rows at strength `alpha`.
    pub fn sample(
        &self,
        spec: &ScmSpec,
        alpha: f64,
        n: usize,
        seed: u64,
    ) -> Result<DMatrix<f64>, ScmError> {
        match self {
            TestEnvironment::Intervention(law) => {
                spec.sample_test(&(&law.mu * alpha.sqrt()), &(&law.cov * alpha), n, seed)
            }
            TestEnvironment::DirectGram { .. } => {
                let m = self.moments(spec, alpha)?;
                let root = linalg::sym_sqrt(&m.gram)
                    .map_err(|_| ScmError::InvalidSpec("test gram not PSD".into()))?;
                let d = root.nrows();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut out = DMatrix::zeros(n, d);
                for i in 0..n {
                    let u = DVector::from_fn(d, |_, _| {
                        rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)
                    });
                    let z = &root * u;
                    for j in 0..d {
                        out[(i, j)] = z[j];
                    }
                }
                Ok(out)
            }
        }
    }
}

/// One realized training instance with its test environments.
pub struct Instance {
    pub spec: ScmSpec,
    pub train_moments: Vec<EnvironmentMoments>,
    pub tests: Vec<TestEnvironment>,
}

/// Shrinks a candidate reference-environment intervention covariance until
/// the interventional environment dominates it on the covariate block with a
/// definite margin. The model's standing assumption requires the weighted
/// intervention second moments to dominate the reference environment's; a
/// raw random draw violates it often, which would leave the large-penalty
/// estimators without a positive-definite system.
fn dominated_reference_cov(
    raw: &DMatrix<f64>,
    interventional: &InterventionLaw,
    p: usize,
) -> DMatrix<f64> {
    let a = interventional
        .second_moment()
        .view((0, 0), (p, p))
        .clone_owned();
    let b = raw.view((0, 0), (p, p)).clone_owned();
    let margin = 0.1 * linalg::min_eigenvalue(&a).max(0.0);
    let feasible = |rho: f64| linalg::min_eigenvalue(&(&a - &b * rho)) >= margin;
    if feasible(1.0) {
        return raw.clone();
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    raw * lo
}

/// Realizes the configured scenario for one repetition: the model, the
/// training moments (population or sampled, as the scenario prescribes) and
/// the test environments.
pub fn instantiate(config: &ExperimentConfig, rep: usize) -> Result<Instance, ExperimentError> {
    let rep_u = rep as u64;
    match config.scenario {
        Scenario::Example1 | Scenario::Example2 => {
            let spec = if config.scenario == Scenario::Example1 {
                example1_spec()
            } else {
                example2_spec()
            };
            let cov = if config.scenario == Scenario::Example1 {
                DMatrix::from_row_slice(2, 2, &[1.25, 0.0, 0.0, 0.0])
            } else {
                DMatrix::from_row_slice(2, 2, &[1.25, 0.15, 0.15, 0.06]) * 0.5
            };
            let train_moments = spec.population_moments()?;
            Ok(Instance {
                spec,
                train_moments,
                tests: vec![TestEnvironment::Intervention(TestLaw {
                    mu: DVector::zeros(2),
                    cov,
                })],
            })
        }
        Scenario::Example3 => {
            let recipe = RandomInstanceSpec {
                p: 5,
                n_train_envs: 1,
                n_test_envs: 0,
                edge_prob: 0.3,
                intervene_y: false,
            };
            let seed = derive_seed(config.seed, 1, rep_u);
            let (mut spec, _) = random_instance_scaled(&recipe, seed, 1.0, 1.0);
            // the reference environment itself carries a random intervention
            // covariance in this scenario, shrunk into the dominated regime
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 4, rep_u));
            let raw = random_unit_cov(&mut rng, 6, false);
            spec.environments[0].cov =
                dominated_reference_cov(&raw, &spec.environments[1].clone(), recipe.p);
            let train_moments = spec.population_moments()?;
            let g0 = train_moments[0].gram.clone();
            let g1 = &train_moments[1].gram;
            let shape = DMatrix::from_diagonal(&DVector::from_row_slice(&[
                1.0, 2.0, 3.0, 4.0, 5.0, 6.0,
            ]));
            let shift = (&shape * (g1 - &g0) * &shape) * 0.5;
            Ok(Instance {
                spec,
                train_moments,
                tests: vec![TestEnvironment::DirectGram { base: g0, shift }],
            })
        }
        Scenario::Example4 => {
            // one fixed instance; repetitions redraw the labeled test sample
            let recipe = config.instance.clone().unwrap_or(RandomInstanceSpec {
                p: 20,
                n_train_envs: 1,
                n_test_envs: 0,
                edge_prob: 0.3,
                intervene_y: false,
            });
            let seed = derive_seed(config.seed, 1, 0);
            let (mut spec, _) = random_instance_scaled(&recipe, seed, 1.0, 1.0);
            let d = recipe.p + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 4, 0));
            let raw = random_unit_cov(&mut rng, d, false);
            spec.environments[0].cov =
                dominated_reference_cov(&raw, &spec.environments[1].clone(), recipe.p);
            let test_cov = random_unit_cov(&mut rng, d, false);
            let train_moments = spec.population_moments()?;
            Ok(Instance {
                spec,
                train_moments,
                tests: vec![TestEnvironment::Intervention(TestLaw {
                    mu: DVector::zeros(d),
                    cov: test_cov,
                })],
            })
        }
        Scenario::AppendixGCovariate | Scenario::AppendixGAll => {
            let recipe = config.instance.clone().unwrap_or(RandomInstanceSpec {
                p: 10,
                n_train_envs: 3,
                n_test_envs: 20,
                edge_prob: 0.3,
                intervene_y: config.scenario == Scenario::AppendixGAll,
            });
            let seed = derive_seed(config.seed, 1, rep_u);
            let (spec, laws) = random_instance(&recipe, seed);
            let n_train = config.n_train.unwrap_or_else(default_n_train);
            let samples: Vec<DMatrix<f64>> = (0..spec.environments.len())
                .map(|e| {
                    spec.sample(e, n_train, derive_seed(config.seed, 2, rep_u * 101 + e as u64))
                })
                .collect::<Result<_, _>>()?;
            let weights = match config.weights {
                WeightsMode::Uniform => {
                    Some(vec![1.0 / samples.len() as f64; samples.len()])
                }
                WeightsMode::SampleSize => None,
            };
            let train_moments = empirical_moments(&samples, weights.as_deref())?;
            Ok(Instance {
                spec,
                train_moments,
                tests: laws.into_iter().map(TestEnvironment::Intervention).collect(),
            })
        }
        Scenario::Custom => {
            let custom = config.custom.as_ref().expect("validated");
            let spec = custom.spec.clone();
            spec.validate()?;
            let train_moments = match custom.n_train {
                None => spec.population_moments()?,
                Some(n) => {
                    let samples: Vec<DMatrix<f64>> = (0..spec.environments.len())
                        .map(|e| {
                            spec.sample(e, n, derive_seed(config.seed, 2, rep_u * 101 + e as u64))
                        })
                        .collect::<Result<_, _>>()?;
                    let weights = match config.weights {
                        WeightsMode::Uniform => {
                            Some(vec![1.0 / samples.len() as f64; samples.len()])
                        }
                        WeightsMode::SampleSize => None,
                    };
                    empirical_moments(&samples, weights.as_deref())?
                }
            };
            Ok(Instance {
                spec,
                train_moments,
                tests: custom
                    .test_laws
                    .iter()
                    .cloned()
                    .map(TestEnvironment::Intervention)
                    .collect(),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// oracle strength selection
// ---------------------------------------------------------------------------

/// Which scalar-strength estimator the oracle scheme tunes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    Drig,
    Anchor,
}

/// Grid argmin of the exact test MSE over `gamma_grid`, ties broken toward
/// the smaller strength. Strengths whose fit fails count as infinite MSE.
pub fn oracle_gamma(
    train_moments: &[EnvironmentMoments],
    test_env: &EnvironmentMoments,
    gamma_grid: &[f64],
    method: OracleMethod,
) -> (f64, f64) {
    let mut best = (f64::NAN, f64::INFINITY);
    for &gamma in gamma_grid {
        let fit = match method {
            OracleMethod::Drig => estimators::drig(train_moments, gamma),
            OracleMethod::Anchor => estimators::anchor(train_moments, gamma),
        };
        let mse = match fit {
            Ok(f) => estimators::evaluate_mse(&f.b, test_env),
            Err(_) => f64::INFINITY,
        };
        if mse < best.1 {
            best = (gamma, mse);
        }
    }
    best
}

/// Convenience wrapper fitting on the exact population moments of `spec` and
/// evaluating on the exact moments of a test law at strength `alpha = 1`.
pub fn oracle_gamma_for_spec(
    spec: &ScmSpec,
    law: &TestLaw,
    gamma_grid: &[f64],
    method: OracleMethod,
) -> Result<(f64, f64), ScmError> {
    let train = spec.population_moments()?;
    let test = spec.test_moments(&law.mu, &law.cov)?;
    Ok(oracle_gamma(&train, &test, gamma_grid, method))
}

// ---------------------------------------------------------------------------
// the sweep driver
// ---------------------------------------------------------------------------

/// One evaluation row of the long-format result table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub method: String,
    pub gamma_or_adaptive: String,
    pub alpha: f64,
    pub repetition: usize,
    pub mse: f64,
    pub worst_case_flag: bool,
}

/// Mean/median worst-case MSE at one strength with a bootstrap interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub mean: f64,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Per-method summary: the worst-case curve over `alpha`, plus the mean
/// oracle strength per `alpha` for oracle-scheme methods.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub gamma_or_adaptive: String,
    pub worst_case: Vec<CurvePoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_oracle_gamma: Option<Vec<f64>>,
}

/// JSON summary of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary {
    pub scenario: String,
    pub alpha_grid: Vec<f64>,
    pub repetitions: usize,
    pub methods: Vec<MethodSummary>,
    pub errors: Vec<String>,
}

impl Summary {
    /// One human-readable line per (method, strength) at each alpha.
    pub fn render_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for m in &self.methods {
            for pt in &m.worst_case {
                let label = if m.gamma_or_adaptive.is_empty() {
                    m.method.clone()
                } else {
                    format!("{}({})", m.method, m.gamma_or_adaptive)
                };
                lines.push(format!(
                    "scenario={} method={} alpha={} worst_case_mean={:.6} median={:.6} ci=[{:.6},{:.6}]",
                    self.scenario, label, pt.alpha, pt.mean, pt.median, pt.ci_low, pt.ci_high
                ));
            }
        }
        lines
    }
}

/// A result table plus its summary.
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
}

struct CellResult {
    method_idx: usize,
    alpha_idx: usize,
    repetition: usize,
    mses: Vec<f64>,
    oracle_gammas: Option<Vec<f64>>,
    errors: Vec<String>,
}

/// Runs the configured sweep. Estimator failures are recorded per row (NaN
/// MSE plus a summary error entry) rather than aborting the sweep.
/// Repetitions execute in parallel; the output ordering is deterministic.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    config.validate()?;

    let rep_results: Vec<Result<Vec<CellResult>, ExperimentError>> = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(config, rep))
        .collect();

    let mut cells = Vec::new();
    for r in rep_results {
        cells.extend(r?);
    }

    // deterministic order: method, then alpha, then repetition
    cells.sort_by(|a, b| {
        (a.method_idx, a.alpha_idx, a.repetition).cmp(&(b.method_idx, b.alpha_idx, b.repetition))
    });

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for cell in &cells {
        let method = &config.methods[cell.method_idx];
        let alpha = config.alpha_grid[cell.alpha_idx];
        let finite_max = cell
            .mses
            .iter()
            .cloned()
            .filter(|m| m.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        let worst_idx = cell.mses.iter().position(|&m| m == finite_max);
        for (i, &mse) in cell.mses.iter().enumerate() {
            rows.push(ResultRow {
                scenario: config.scenario.name().to_string(),
                method: method.name.clone(),
                gamma_or_adaptive: method.gamma_label(),
                alpha,
                repetition: cell.repetition,
                mse,
                worst_case_flag: worst_idx == Some(i),
            });
        }
        errors.extend(cell.errors.iter().cloned());
    }

    let summary = summarize(config, &cells, errors);
    Ok(RunOutput {
        rows,
        summary,
    })
}

fn run_repetition(config: &ExperimentConfig, rep: usize) -> Result<Vec<CellResult>, ExperimentError> {
    let instance = instantiate(config, rep)?;
    let mut cells = Vec::new();

    for (method_idx, method) in config.methods.iter().enumerate() {
        // fixed-coefficient methods fit once per instance
        let fixed_fit: Option<Result<DVector<f64>, String>> = match method.name.as_str() {
            "ols_ref" => Some(estimators::ols_ref(&instance.train_moments).map(|f| f.b).map_err(|e| e.to_string())),
            "ols_pooled" => Some(estimators::ols_pooled(&instance.train_moments).map(|f| f.b).map_err(|e| e.to_string())),
            "causal" => Some(Ok(instance.spec.causal_parameter())),
            "causal_dantzig" => Some(
                estimators::causal_dantzig(&instance.train_moments)
                    .map(|f| f.b)
                    .map_err(|e| e.to_string()),
            ),
            "drig_inf" => Some(
                estimators::drig_infinity(&instance.train_moments)
                    .map(|f| f.b)
                    .map_err(|e| e.to_string()),
            ),
            "group_dro" => Some(
                estimators::group_dro(&instance.train_moments, 1e-6, 100_000)
                    .map(|f| f.b)
                    .map_err(|e| e.to_string()),
            ),
            "drig" | "anchor" => match method.gamma {
                Some(GammaChoice::Fixed(gamma)) => {
                    let fit = if method.name == "drig" {
                        estimators::drig(&instance.train_moments, gamma)
                    } else {
                        estimators::anchor(&instance.train_moments, gamma)
                    };
                    Some(fit.map(|f| f.b).map_err(|e| e.to_string()))
                }
                _ => None, // oracle handled per test environment
            },
            "drig_a" => {
                let gamma = match (&method.gamma, &method.gamma_x, method.gamma_y) {
                    (Some(GammaChoice::Fixed(g)), _, _) => {
                        Ok(GammaMatrix::drig_equivalent(*g, instance.spec.p))
                    }
                    (_, Some(gx), Some(gy)) => {
                        let rows = gx.len();
                        let cols = gx.first().map_or(0, |r| r.len());
                        if rows != instance.spec.p || cols != instance.spec.p {
                            Err(format!("gamma_x must be {0}x{0}", instance.spec.p))
                        } else {
                            Ok(GammaMatrix {
                                gamma_x: DMatrix::from_fn(rows, cols, |i, j| gx[i][j]),
                                gamma_y: gy,
                            })
                        }
                    }
                    _ => Err("drig_a needs gamma or gamma_x/gamma_y".to_string()),
                };
                Some(gamma.and_then(|g| {
                    estimators::drig_a(&instance.train_moments, &g)
                        .map(|f| f.b)
                        .map_err(|e| e.to_string())
                }))
            }
            _ => None,
        };

        for (alpha_idx, &alpha) in config.alpha_grid.iter().enumerate() {
            let mut mses = Vec::with_capacity(instance.tests.len());
            let mut oracle_gammas = Vec::new();
            let mut errors = Vec::new();

            for (env_idx, test) in instance.tests.iter().enumerate() {
                let test_moments = match test.moments(&instance.spec, alpha) {
                    Ok(m) => m,
                    Err(e) => {
                        errors.push(format!(
                            "{} rep={rep} alpha={alpha} env={env_idx}: {e}",
                            method.name
                        ));
                        mses.push(f64::NAN);
                        continue;
                    }
                };
                let mse = match (&fixed_fit, method.name.as_str()) {
                    (Some(Ok(b)), _) => estimators::evaluate_mse(b, &test_moments),
                    (Some(Err(msg)), _) => {
                        errors.push(format!(
                            "{} rep={rep} alpha={alpha} env={env_idx}: {msg}",
                            method.name
                        ));
                        f64::NAN
                    }
                    (None, "drig") | (None, "anchor") => {
                        let kind = if method.name == "drig" {
                            OracleMethod::Drig
                        } else {
                            OracleMethod::Anchor
                        };
                        let (gamma, mse) = oracle_gamma(
                            &instance.train_moments,
                            &test_moments,
                            &config.gamma_grid,
                            kind,
                        );
                        oracle_gammas.push(gamma);
                        mse
                    }
                    (None, "drig_a_adaptive") | (None, "test_ols") => {
                        let n_l = method.n_l.unwrap_or(config.n_labeled);
                        let seed = derive_seed(
                            config.seed,
                            3 + method_idx as u64,
                            (rep as u64) * 1_000_003
                                + (alpha_idx as u64) * 1_009
                                + env_idx as u64,
                        );
                        match test.sample(&instance.spec, alpha, n_l, seed) {
                            Ok(labeled) => {
                                let info = TestDomainInfo::with_population_sigma_x(
                                    &labeled,
                                    test_moments.gram_x(),
                                );
                                let fit = if method.name == "drig_a_adaptive" {
                                    adaptation::drig_a_adaptive(&instance.train_moments, &info)
                                        .map(|f| f.b)
                                        .map_err(|e| e.to_string())
                                } else {
                                    adaptation::test_ols(&info)
                                        .map(|f| f.b)
                                        .map_err(|e| e.to_string())
                                };
                                match fit {
                                    Ok(b) => estimators::evaluate_mse(&b, &test_moments),
                                    Err(msg) => {
                                        errors.push(format!(
                                            "{} rep={rep} alpha={alpha} env={env_idx}: {msg}",
                                            method.name
                                        ));
                                        f64::NAN
                                    }
                                }
                            }
                            Err(e) => {
                                errors.push(format!(
                                    "{} rep={rep} alpha={alpha} env={env_idx}: {e}",
                                    method.name
                                ));
                                f64::NAN
                            }
                        }
                    }
                    _ => f64::NAN,
                };
                mses.push(mse);
            }

            cells.push(CellResult {
                method_idx,
                alpha_idx,
                repetition: rep,
                mses,
                oracle_gammas: if oracle_gammas.is_empty() {
                    None
                } else {
                    Some(oracle_gammas)
                },
                errors,
            });
        }
    }
    Ok(cells)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = (q * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn summarize(config: &ExperimentConfig, cells: &[CellResult], errors: Vec<String>) -> Summary {
    let mut methods = Vec::new();
    for (method_idx, method) in config.methods.iter().enumerate() {
        let mut worst_case = Vec::new();
        let mut mean_oracle = Vec::new();
        let mut any_oracle = false;
        for (alpha_idx, &alpha) in config.alpha_grid.iter().enumerate() {
            let mut per_rep: Vec<f64> = Vec::new();
            let mut gammas: Vec<f64> = Vec::new();
            for cell in cells
                .iter()
                .filter(|c| c.method_idx == method_idx && c.alpha_idx == alpha_idx)
            {
                let worst = cell
                    .mses
                    .iter()
                    .cloned()
                    .filter(|m| m.is_finite())
                    .fold(f64::NEG_INFINITY, f64::max);
                if worst.is_finite() {
                    per_rep.push(worst);
                }
                if let Some(g) = &cell.oracle_gammas {
                    gammas.extend_from_slice(g);
                    any_oracle = true;
                }
            }
            let mean = if per_rep.is_empty() {
                f64::NAN
            } else {
                per_rep.iter().sum::<f64>() / per_rep.len() as f64
            };
            let mut sorted = per_rep.clone();
            sorted.sort_by(f64::total_cmp);
            let median = percentile(&sorted, 0.5);
            // percentile bootstrap over repetitions, 1000 resamples, 95%
            let (ci_low, ci_high) = if per_rep.len() > 1 {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    7,
                    (method_idx * 1_000 + alpha_idx) as u64,
                ));
                let mut boots: Vec<f64> = (0..1000)
                    .map(|_| {
                        let mean: f64 = (0..per_rep.len())
                            .map(|_| per_rep[rng.gen_range(0..per_rep.len())])
                            .sum::<f64>()
                            / per_rep.len() as f64;
                        mean
                    })
                    .collect();
                boots.sort_by(f64::total_cmp);
                (percentile(&boots, 0.025), percentile(&boots, 0.975))
            } else {
                (mean, mean)
            };
            worst_case.push(CurvePoint {
                alpha,
                mean,
                median,
                ci_low,
                ci_high,
            });
            mean_oracle.push(if gammas.is_empty() {
                f64::NAN
            } else {
                gammas.iter().sum::<f64>() / gammas.len() as f64
            });
        }
        methods.push(MethodSummary {
            method: method.name.clone(),
            gamma_or_adaptive: method.gamma_label(),
            worst_case,
            mean_oracle_gamma: if any_oracle { Some(mean_oracle) } else { None },
        });
    }
    Summary {
        scenario: config.scenario.name().to_string(),
        alpha_grid: config.alpha_grid.clone(),
        repetitions: config.repetitions,
        methods,
        errors,
    }
}

/// Renders the result table as CSV with the fixed long-format header.
pub fn rows_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::from("scenario,method,gamma_or_adaptive,alpha,repetition,mse,worst_case_flag\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.scenario, r.method, r.gamma_or_adaptive, r.alpha, r.repetition, r.mse, r.worst_case_flag
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example1_config(methods: Vec<MethodSpec>, alphas: Vec<f64>) -> ExperimentConfig {
        ExperimentConfig {
            scenario: Scenario::Example1,
            alpha_grid: alphas,
            gamma_grid: default_gamma_grid(),
            methods,
            repetitions: 1,
            seed: 7,
            weights: WeightsMode::Uniform,
            instance: None,
            n_train: None,
            n_labeled: 50,
            custom: None,
        }
    }

    #[test]
    fn example1_population_curves_cross_as_derived() {
        let config = example1_config(
            vec![
                MethodSpec::plain("ols_ref"),
                MethodSpec::plain("ols_pooled"),
                MethodSpec::with_gamma("drig", 5.0),
                MethodSpec::with_gamma("anchor", 5.0),
                MethodSpec::plain("causal"),
            ],
            vec![0.25, 1.0, 4.0, 10.0],
        );
        let out = run(&config).unwrap();
        assert!(out.summary.errors.is_empty());
        let mse = |method: &str, alpha: f64| -> f64 {
            out.rows
                .iter()
                .find(|r| r.method == method && r.alpha == alpha)
                .unwrap()
                .mse
        };
        // causal parameter is invariant under covariate-only interventions
        for &a in &[0.25, 1.0, 4.0, 10.0] {
            assert!((mse("causal", a) - 1.0).abs() < 1e-12, "alpha={a}");
        }
        // exact curves: drig(5) and ols_ref cross near alpha = 0.49
        assert!(mse("drig", 0.25) > mse("ols_ref", 0.25));
        assert!(mse("drig", 1.0) < mse("ols_ref", 1.0));
        assert!(mse("drig", 4.0) < mse("ols_ref", 4.0));
        assert!(mse("drig", 10.0) < mse("ols_ref", 10.0));
        // drig(5) below the causal parameter under weak perturbations
        assert!(mse("drig", 1.0) < mse("causal", 1.0));
        // exact values from the closed-form curves
        assert!((mse("ols_ref", 4.0) - 2.0).abs() < 1e-12);
        let b5 = 8.75 / 4.125f64;
        let w = 2.0 - b5;
        let expected = (1.0 + w * w + w) + 1.25 * 4.0 * w * w;
        assert!((mse("drig", 4.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn example2_causal_mse_strictly_increases() {
        let config = ExperimentConfig {
            scenario: Scenario::Example2,
            ..example1_config(
                vec![MethodSpec::plain("causal"), MethodSpec::with_gamma("drig", 5.0)],
                vec![1.0, 2.0, 4.0, 8.0],
            )
        };
        let out = run(&config).unwrap();
        let causal: Vec<f64> = out
            .rows
            .iter()
            .filter(|r| r.method == "causal")
            .map(|r| r.mse)
            .collect();
        for w in causal.windows(2) {
            assert!(w[1] > w[0] + 1e-12);
        }
    }

    #[test]
    fn oracle_gamma_example1_matches_twice_alpha() {
        // at test strength alpha the optimal strength is 2 * alpha
        let spec = example1_spec();
        let train = spec.population_moments().unwrap();
        let alpha = 2.0;
        let test = spec
            .test_moments(
                &DVector::zeros(2),
                &DMatrix::from_row_slice(2, 2, &[1.25 * alpha, 0.0, 0.0, 0.0]),
            )
            .unwrap();
        let grid: Vec<f64> = (1..=16).map(|i| i as f64 * 0.5).collect();
        let (gamma, mse) = oracle_gamma(&train, &test, &grid, OracleMethod::Drig);
        assert_eq!(gamma, 4.0);
        // oracle is at least as good as every fixed grid strength
        for &g in &grid {
            let fit = estimators::drig(&train, g).unwrap();
            assert!(estimators::evaluate_mse(&fit.b, &test) >= mse - 1e-12);
        }
    }

    #[test]
    fn oracle_gamma_small_alpha_picks_grid_minimum() {
        let spec = example1_spec();
        let train = spec.population_moments().unwrap();
        let test = spec
            .test_moments(
                &DVector::zeros(2),
                &DMatrix::from_row_slice(2, 2, &[1e-9, 0.0, 0.0, 0.0]),
            )
            .unwrap();
        let (gamma, _) = oracle_gamma(&train, &test, &default_gamma_grid(), OracleMethod::Drig);
        assert_eq!(gamma, 0.0);
    }

    #[test]
    fn random_instance_is_reproducible_and_respects_covariate_flag() {
        let recipe = RandomInstanceSpec {
            p: 10,
            n_train_envs: 3,
            n_test_envs: 20,
            edge_prob: 0.3,
            intervene_y: false,
        };
        let (a, laws_a) = random_instance(&recipe, 5);
        let (b, _) = random_instance(&recipe, 5);
        assert_eq!(a.adjacency, b.adjacency);
        assert_eq!(a.environments[1].mu, b.environments[1].mu);
        let d = recipe.p + 1;
        for law in a.environments.iter().skip(1) {
            assert_eq!(law.mu[d - 1], 0.0);
            for i in 0..d {
                assert_eq!(law.cov[(i, d - 1)], 0.0);
                assert_eq!(law.cov[(d - 1, i)], 0.0);
            }
        }
        for law in &laws_a {
            assert_eq!(law.mu[d - 1], 0.0);
        }
        assert_eq!(laws_a.len(), 20);
        a.validate().unwrap();

        let (c, _) = random_instance(&recipe, 6);
        assert_ne!(a.adjacency, c.adjacency);
    }

    #[test]
    fn random_instance_heterogeneity_is_usually_full_rank() {
        let recipe = RandomInstanceSpec {
            p: 10,
            n_train_envs: 3,
            n_test_envs: 1,
            edge_prob: 0.3,
            intervene_y: false,
        };
        let mut full_rank = 0;
        for seed in 0..100 {
            let (spec, _) = random_instance(&recipe, seed);
            let moments = spec.population_moments().unwrap();
            let dx = estimators::delta_x(&moments);
            if linalg::sym_rank(&dx) == recipe.p {
                full_rank += 1;
            }
        }
        assert!(full_rank >= 95, "full rank in {full_rank}/100 seeds");
    }

    #[test]
    fn tables_are_bit_identical_across_runs() {
        let config = ExperimentConfig {
            scenario: Scenario::AppendixGCovariate,
            alpha_grid: vec![1.0, 10.0],
            gamma_grid: default_gamma_grid(),
            methods: vec![
                MethodSpec::plain("ols_pooled"),
                MethodSpec::with_gamma("drig", 10.0),
            ],
            repetitions: 2,
            seed: 42,
            weights: WeightsMode::Uniform,
            instance: Some(RandomInstanceSpec {
                p: 4,
                n_train_envs: 2,
                n_test_envs: 3,
                edge_prob: 0.3,
                intervene_y: false,
            }),
            n_train: Some(500),
            n_labeled: 50,
            custom: None,
        };
        let a = rows_to_csv(&run(&config).unwrap().rows);
        let b = rows_to_csv(&run(&config).unwrap().rows);
        assert_eq!(a, b);
        assert!(a.starts_with("scenario,method,gamma_or_adaptive,alpha,repetition,mse,worst_case_flag\n"));
    }

    #[test]
    fn worst_case_flag_marks_the_maximum() {
        let config = ExperimentConfig {
            scenario: Scenario::AppendixGCovariate,
            alpha_grid: vec![4.0],
            gamma_grid: default_gamma_grid(),
            methods: vec![MethodSpec::with_gamma("drig", 10.0)],
            repetitions: 1,
            seed: 3,
            weights: WeightsMode::Uniform,
            instance: Some(RandomInstanceSpec {
                p: 3,
                n_train_envs: 2,
                n_test_envs: 5,
                edge_prob: 0.3,
                intervene_y: false,
            }),
            n_train: Some(400),
            n_labeled: 50,
            custom: None,
        };
        let out = run(&config).unwrap();
        let max = out
            .rows
            .iter()
            .map(|r| r.mse)
            .fold(f64::NEG_INFINITY, f64::max);
        let flagged: Vec<_> = out.rows.iter().filter(|r| r.worst_case_flag).collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].mse, max);
    }

    #[test]
    fn example3_nonscalar_penalty_beats_scalar_methods() {
        // diagonal-shaped test shifts favor the matching matrix penalty
        let shape: Vec<Vec<f64>> = (0..5)
            .map(|i| {
                (0..5)
                    .map(|j| if i == j { 10.0 * (i + 1) as f64 } else { 0.0 })
                    .collect()
            })
            .collect();
        let config = ExperimentConfig {
            scenario: Scenario::Example3,
            alpha_grid: vec![5.0],
            gamma_grid: default_gamma_grid(),
            methods: vec![
                MethodSpec {
                    gamma_x: Some(shape),
                    gamma_y: Some(60.0),
                    ..MethodSpec::plain("drig_a")
                },
                MethodSpec::with_gamma("drig", 10.0),
                MethodSpec::with_gamma("anchor", 10.0),
            ],
            repetitions: 12,
            seed: 11,
            weights: WeightsMode::Uniform,
            instance: None,
            n_train: None,
            n_labeled: 50,
            custom: None,
        };
        let out = run(&config).unwrap();
        let mean = |method: &str| {
            out.summary
                .methods
                .iter()
                .find(|m| m.method == method)
                .unwrap()
                .worst_case[0]
                .mean
        };
        assert!(mean("drig_a").is_finite());
        assert!(
            mean("drig_a") < mean("drig"),
            "drig_a {} vs drig {}",
            mean("drig_a"),
            mean("drig")
        );
        assert!(
            mean("drig_a") < mean("anchor"),
            "drig_a {} vs anchor {}",
            mean("drig_a"),
            mean("anchor")
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut config = example1_config(vec![], vec![1.0]);
        assert!(matches!(
            run(&config),
            Err(ExperimentError::InvalidConfig(_))
        ));
        config.methods = vec![MethodSpec::plain("ols_ref")];
        config.alpha_grid = vec![2.0, 1.0];
        assert!(config.validate().is_err());
        config.alpha_grid = vec![-1.0];
        assert!(config.validate().is_err());
        config.alpha_grid = vec![1.0];
        config.methods = vec![MethodSpec::plain("drig")];
        assert!(config.validate().is_err());
        config.methods = vec![MethodSpec::plain("unknown_method")];
        assert!(config.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let json = r#"{
            "scenario": "example1",
            "alpha_grid": [1.0, 4.0],
            "methods": [
                {"name": "drig", "gamma": 5.0},
                {"name": "drig", "gamma": "oracle"},
                {"name": "causal"}
            ],
            "repetitions": 2,
            "seed": 9,
            "weights": "sample-size"
        }"#;
        let config: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(config.scenario, Scenario::Example1);
        assert_eq!(config.weights, WeightsMode::SampleSize);
        assert_eq!(config.gamma_grid, default_gamma_grid());
        assert_eq!(config.methods[0].gamma, Some(GammaChoice::Fixed(5.0)));
        assert_eq!(config.methods[1].gamma, Some(GammaChoice::Oracle));
        assert!(config.validate().is_ok());
    }
}
