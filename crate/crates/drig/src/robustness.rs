//! Perturbation classes and exact worst-case risks.
//!
//! Each estimator in [`crate::estimators`] minimizes the supremum of the test
//! MSE over a class of additive test interventions `v` constrained by a
//! second-moment bound `E[vv'] <= M` (PSD order). For a fixed coefficient `b`
//! the supremum is available in closed form: writing
//! `w = C' (-b, 1)` with `C = (I - B)^{-1}`, the residual satisfies
//! `Y^v - b'X^v = w'(eps + v)`, so
//!
//! ```text
//! sup { E[(Y^v - b'X^v)^2] : E[vv'] <= M } = w' noise_cov w + w' M w,
//! ```
//!
//! attained by the deterministic intervention `v = M^{1/2} u` with `u` the
//! unit vector along `M^{1/2} w`. The bound matrix `M` depends on the method:
//! the reference intervention covariance plus a scaled copy of the training
//! heterogeneity for DRIG, a mean-only strengthening for anchor regression, a
//! reshaped copy for the matrix-penalized variant, and the dominating
//! environment's intervention second moment for group DRO. The causal
//! parameter's class has no moment bound at all; it constrains the response
//! coordinate of `v` to zero and its worst-case risk is infinite for any
//! other coefficient.
//!
//! [`verify_duality`] checks the resulting identity `loss(b) = worst-case
//! risk(b)` on probe coefficients and that the fitted coefficient is not
//! beaten by any probe, using the moment-based loss on one side and the
//! structural-model computation on the other.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{self, EstimatorError, GammaMatrix};
use crate::linalg;
use crate::scm::{ScmError, ScmSpec};

/// Errors from class construction and duality checks.
#[derive(Debug, Error)]
pub enum RobustnessError {
    /// Group DRO's class is only defined when some environment's intervention
    /// second moment dominates every other's.
    #[error("NoDominatingEnvironment: no environment dominates all others in the PSD order")]
    NoDominatingEnvironment,
    #[error("InvalidInput: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Which method's perturbation class to build.
#[derive(Debug, Clone)]
pub enum ClassKind {
    Drig { gamma: f64 },
    Anchor { gamma: f64 },
    DrigA(GammaMatrix),
    GroupDro,
    Causal,
}

impl ClassKind {
    pub fn label(&self) -> String {
        match self {
            ClassKind::Drig { gamma } => format!("drig({gamma})"),
            ClassKind::Anchor { gamma } => format!("anchor({gamma})"),
            ClassKind::DrigA(_) => "drig_a".to_string(),
            ClassKind::GroupDro => "group_dro".to_string(),
            ClassKind::Causal => "causal".to_string(),
        }
    }
}

/// A second-moment-bounded set of admissible test interventions.
#[derive(Debug, Clone)]
pub struct PerturbationClass {
    pub kind: ClassKind,
    /// Bound matrix `M` with the contract `E[vv'] <= M`; `None` for the
    /// causal class, which instead constrains the response coordinate of `v`
    /// to zero.
    pub bound: Option<DMatrix<f64>>,
}

/// Builds the perturbation class a method is worst-case optimal against.
pub fn build_class(spec: &ScmSpec, kind: ClassKind) -> Result<PerturbationClass, RobustnessError> {
    let s0 = &spec.environments[0].cov;
    let heterogeneity = spec.intervention_heterogeneity();
    let bound = match &kind {
        ClassKind::Drig { gamma } => {
            if *gamma < 0.0 {
                return Err(RobustnessError::InvalidInput(
                    "gamma must be non-negative".into(),
                ));
            }
            Some(s0 + &heterogeneity * *gamma)
        }
        ClassKind::Anchor { gamma } => {
            if *gamma < 0.0 {
                return Err(RobustnessError::InvalidInput(
                    "gamma must be non-negative".into(),
                ));
            }
            let d = spec.p + 1;
            let mut m = DMatrix::zeros(d, d);
            for law in &spec.environments {
                m += (&law.cov + &law.mu * law.mu.transpose() * *gamma) * law.weight;
            }
            Some(m)
        }
        ClassKind::DrigA(gamma) => {
            gamma.validate()?;
            if gamma.gamma_x.nrows() != spec.p {
                return Err(RobustnessError::InvalidInput(format!(
                    "Gamma_x must be {0}x{0}",
                    spec.p
                )));
            }
            let d = spec.p + 1;
            let c = spec.structural_inverse()?;
            let i_minus_b = DMatrix::<f64>::identity(d, d) - &spec.adjacency;
            let reshaped = i_minus_b * gamma.full() * c;
            let m = s0 + &reshaped * &heterogeneity * reshaped.transpose();
            Some((&m + m.transpose()) * 0.5)
        }
        ClassKind::GroupDro => {
            let m = dominating_environment(spec).ok_or(RobustnessError::NoDominatingEnvironment)?;
            Some(spec.environments[m].second_moment())
        }
        ClassKind::Causal => None,
    };
    Ok(PerturbationClass { kind, bound })
}

/// Numerical rank of the training heterogeneity matrix: the number of
/// independent directions the data-dependent perturbation classes extend
/// along (a pure mean shift from a single environment contributes one, rich
/// random interventions fill every intervened coordinate).
pub fn heterogeneity_rank(spec: &ScmSpec) -> usize {
    linalg::sym_rank(&spec.intervention_heterogeneity())
}

/// Index of an environment whose intervention second moment dominates every
/// other's in the PSD order, if one exists.
pub fn dominating_environment(spec: &ScmSpec) -> Option<usize> {
    let grams: Vec<DMatrix<f64>> = spec
        .environments
        .iter()
        .map(|law| law.second_moment())
        .collect();
    (0..grams.len()).find(|&m| {
        (0..grams.len()).all(|e| e == m || linalg::psd_dominates(&grams[m], &grams[e]))
    })
}

/// Residual weight vector `w = C' (-b, 1)`: the linear functional of the
/// structural noise that the prediction residual of `b` applies.
pub fn residual_weights(spec: &ScmSpec, b: &DVector<f64>) -> Result<DVector<f64>, ScmError> {
    let c = spec.structural_inverse()?;
    let mut sel = DVector::zeros(spec.p + 1);
    for i in 0..spec.p {
        sel[i] = -b[i];
    }
    sel[spec.p] = 1.0;
    Ok(c.transpose() * sel)
}

/// Exact supremum of the test MSE of `b` over the class.
///
/// Infinite for the causal class whenever the covariate part of `w` is
/// nonzero, i.e. for every coefficient other than the causal parameter;
/// downstream comparisons treat the infinity as larger than any finite risk.
pub fn worst_case_risk(
    spec: &ScmSpec,
    b: &DVector<f64>,
    class: &PerturbationClass,
) -> Result<f64, RobustnessError> {
    let w = residual_weights(spec, b)?;
    let base = (&spec.noise_cov * &w).dot(&w);
    match &class.bound {
        Some(m) => Ok(base + (m * &w).dot(&w)),
        None => {
            let wx_norm = (0..spec.p).map(|i| w[i] * w[i]).sum::<f64>().sqrt();
            if wx_norm <= 1e-10 * w.norm().max(1e-300) {
                Ok(base)
            } else {
                Ok(f64::INFINITY)
            }
        }
    }
}

/// A deterministic intervention attaining the worst-case risk: `v = M^{1/2} u`
/// with `u` the unit vector along `M^{1/2} w`. Returns the zero vector when
/// the bound annihilates `w`, and `None` for the (unbounded) causal class.
pub fn attaining_intervention(
    spec: &ScmSpec,
    b: &DVector<f64>,
    class: &PerturbationClass,
) -> Result<Option<DVector<f64>>, RobustnessError> {
    let Some(m) = &class.bound else {
        return Ok(None);
    };
    let w = residual_weights(spec, b)?;
    let root = linalg::sym_sqrt(m)
        .map_err(|eig| RobustnessError::InvalidInput(format!("bound not PSD ({eig:.3e})")))?;
    let direction = &root * &w;
    let norm = direction.norm();
    if norm <= 1e-300 {
        return Ok(Some(DVector::zeros(w.len())));
    }
    Ok(Some(root * (direction / norm)))
}

/// Outcome of a duality check; serializes to
/// `{max_identity_violation, min_gap_vs_drig, probes}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualityReport {
    /// Largest relative `|loss(b) - worst_case_risk(b)|` over the probes.
    pub max_identity_violation: f64,
    /// Smallest `worst_case_risk(probe) - worst_case_risk(fit)`; negative
    /// values beyond tolerance mean a probe beat the fitted coefficient.
    pub min_gap_vs_drig: f64,
    /// Number of probe coefficients evaluated.
    pub probes: usize,
}

/// Probe coefficients for [`verify_duality`]: the causal parameter plus
/// Gaussian perturbations at scales 0.1 and 1, topped up with a uniform grid
/// when `p <= 2`.
pub fn default_probes(spec: &ScmSpec, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let p = spec.p;
    let b_star = spec.causal_parameter();
    let mut probes = vec![b_star.clone()];
    if p <= 2 {
        let per_axis = if p == 1 { count / 4 } else { 5 };
        let lo = -2.0;
        let hi = 2.0;
        let mut add_grid = |offsets: &[f64]| {
            let mut v = b_star.clone();
            for (i, o) in offsets.iter().enumerate() {
                v[i] += o;
            }
            probes.push(v);
        };
        let steps: Vec<f64> = (0..per_axis.max(2))
            .map(|i| lo + (hi - lo) * i as f64 / (per_axis.max(2) - 1) as f64)
            .collect();
        if p == 1 {
            for &s in &steps {
                add_grid(&[s]);
            }
        } else {
            for &s1 in &steps {
                for &s2 in &steps {
                    add_grid(&[s1, s2]);
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while probes.len() < count {
        for scale in [0.1, 1.0] {
            let noise =
                DVector::from_iterator(p, (0..p).map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                }));
            probes.push(&b_star + noise);
            if probes.len() >= count {
                break;
            }
        }
    }
    probes.truncate(count);
    probes
}

/// Checks, on probe coefficients, (i) that the method's population loss
/// equals the exact worst-case risk over its class, and (ii) that no probe
/// achieves a smaller worst-case risk than the fitted coefficient.
///
/// Supports the bounded classes; the causal class has no finite loss
/// function to compare against.
pub fn verify_duality(
    spec: &ScmSpec,
    kind: ClassKind,
    probes: &[DVector<f64>],
) -> Result<DualityReport, RobustnessError> {
    let moments = spec.population_moments()?;
    let class = build_class(spec, kind.clone())?;
    let loss: Box<dyn Fn(&DVector<f64>) -> f64> = match &kind {
        ClassKind::Drig { gamma } => {
            let g = *gamma;
            let m = moments.clone();
            Box::new(move |b| estimators::drig_loss(b, &m, g))
        }
        ClassKind::Anchor { gamma } => {
            let g = *gamma;
            let m = moments.clone();
            Box::new(move |b| estimators::anchor_loss(b, &m, g))
        }
        ClassKind::DrigA(gamma) => {
            let g = gamma.clone();
            let m = moments.clone();
            Box::new(move |b| estimators::drig_a_loss(b, &m, &g))
        }
        ClassKind::GroupDro => {
            let m = moments.clone();
            Box::new(move |b| {
                m.iter()
                    .map(|env| estimators::evaluate_mse(b, env))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
        }
        ClassKind::Causal => {
            return Err(RobustnessError::InvalidInput(
                "the causal class has no finite loss to verify against".into(),
            ))
        }
    };
    let fit = match &kind {
        ClassKind::Drig { gamma } => estimators::drig(&moments, *gamma)?,
        ClassKind::Anchor { gamma } => estimators::anchor(&moments, *gamma)?,
        ClassKind::DrigA(gamma) => estimators::drig_a(&moments, gamma)?,
        ClassKind::GroupDro => estimators::group_dro(&moments, 1e-9, 200_000)?,
        ClassKind::Causal => unreachable!(),
    };
    let fit_risk = worst_case_risk(spec, &fit.b, &class)?;

    let mut max_violation = 0.0f64;
    let mut min_gap = f64::INFINITY;
    for b in probes {
        let risk = worst_case_risk(spec, b, &class)?;
        let value = loss(b);
        let violation = (value - risk).abs() / risk.abs().max(1e-12);
        max_violation = max_violation.max(violation);
        min_gap = min_gap.min(risk - fit_risk);
    }
    Ok(DualityReport {
        max_identity_violation: max_violation,
        min_gap_vs_drig: min_gap,
        probes: probes.len(),
    })
}
