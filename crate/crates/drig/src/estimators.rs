//! Closed-form linear estimators over per-environment moments.
//!
//! Every method here minimizes a quadratic risk built from the
//! [`EnvironmentMoments`] sufficient statistics. The central objective is the
//! gradient-invariance regularized risk
//!
//! ```text
//! L_gamma(b) = mse_0(b) + gamma * sum_e w_e (mse_e(b) - mse_0(b))
//! ```
//!
//! whose minimizer solves `(G0_x + gamma D_x) b = g0 + gamma D_xy`, where
//! `D_x` and `D_xy` are the weighted excesses of the environment Grams over
//! the reference environment. `gamma = 0` recovers ordinary least squares on
//! the reference environment, `gamma = 1` the pooled OLS, and `gamma -> inf`
//! the most predictive coefficient whose weighted average loss gradient
//! matches the reference gradient (`drig_infinity`). Anchor regression,
//! causal Dantzig, group DRO and the matrix-penalized variant (`drig_a`)
//! round out the family.
//!
//! All solves go through a symmetric positive-definite factorization with an
//! explicit tolerance; a near-singular system is an error rather than a
//! silently regularized answer, since the worst-case-risk semantics of the
//! fitted coefficient would otherwise be corrupted.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg;
use crate::scm::EnvironmentMoments;

/// Errors surfaced by the estimators.
#[derive(Debug, Error)]
pub enum EstimatorError {
    /// The normal-equation matrix is not positive definite; for DRIG this
    /// signals a `gamma` too large for the observed heterogeneity.
    #[error("NonPdSystem: system matrix not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    NonPdSystem { min_eigenvalue: f64 },
    /// No coefficient satisfies the gradient-invariance constraint within
    /// tolerance; the subspace-inclusion hypothesis fails.
    #[error("InconsistentInvariance: gradient-invariance constraint unsatisfiable (residual {residual:.3e})")]
    InconsistentInvariance { residual: f64 },
    /// The two-environment Gram difference is singular.
    #[error("SingularDifference: environment Gram difference is singular (rcond {rcond:.3e})")]
    SingularDifference { rcond: f64 },
    /// Group DRO did not certify the requested minimax gap.
    #[error("NoConvergence: group DRO gap {gap:.3e} after {iterations} iterations")]
    NoConvergence { gap: f64, iterations: usize },
    /// A structural precondition on the inputs is violated.
    #[error("InvalidInput: {0}")]
    InvalidInput(String),
}

impl From<linalg::NotPositiveDefinite> for EstimatorError {
    fn from(e: linalg::NotPositiveDefinite) -> Self {
        EstimatorError::NonPdSystem {
            min_eigenvalue: e.min_eigenvalue,
        }
    }
}

/// Which estimator produced a [`FitResult`], with its scalar tuning value
/// when the method has one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodTag {
    Drig { gamma: f64 },
    DrigInf,
    Anchor { gamma: f64 },
    DrigA,
    CausalDantzig,
    GroupDro,
    OlsRef,
    OlsPooled,
    TestOls,
}

impl MethodTag {
    pub fn name(&self) -> &'static str {
        match self {
            MethodTag::Drig { .. } => "drig",
            MethodTag::DrigInf => "drig_inf",
            MethodTag::Anchor { .. } => "anchor",
            MethodTag::DrigA => "drig_a",
            MethodTag::CausalDantzig => "causal_dantzig",
            MethodTag::GroupDro => "group_dro",
            MethodTag::OlsRef => "ols_ref",
            MethodTag::OlsPooled => "ols_pooled",
            MethodTag::TestOls => "test_ols",
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self {
            MethodTag::Drig { gamma } | MethodTag::Anchor { gamma } => Some(*gamma),
            _ => None,
        }
    }
}

/// An estimated coefficient vector with diagnostics.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub method: MethodTag,
    /// Estimated coefficients, length `p`.
    pub b: DVector<f64>,
    /// Value of the method's objective at `b`.
    pub objective: f64,
    /// `||2 (D_x b - D_xy)||_2`, zero iff `b` is gradient invariant.
    /// `None` when the fit had no training moments to measure it against
    /// (test-domain OLS).
    pub grad_invariance_residual: Option<f64>,
    /// Reciprocal condition number of the solved linear system, in `[0, 1]`.
    pub condition: f64,
}

#[derive(Serialize, Deserialize)]
struct FitResultWire {
    method: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    gamma: Option<f64>,
    b: Vec<f64>,
    objective: f64,
    grad_invariance_residual: Option<f64>,
    condition: f64,
}

impl Serialize for FitResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        FitResultWire {
            method: self.method.name().to_string(),
            gamma: self.method.gamma(),
            b: self.b.as_slice().to_vec(),
            objective: self.objective,
            grad_invariance_residual: self.grad_invariance_residual,
            condition: self.condition,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FitResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let wire = FitResultWire::deserialize(d)?;
        let method = match (wire.method.as_str(), wire.gamma) {
            ("drig", Some(gamma)) => MethodTag::Drig { gamma },
            ("anchor", Some(gamma)) => MethodTag::Anchor { gamma },
            ("drig_inf", _) => MethodTag::DrigInf,
            ("drig_a", _) => MethodTag::DrigA,
            ("causal_dantzig", _) => MethodTag::CausalDantzig,
            ("group_dro", _) => MethodTag::GroupDro,
            ("ols_ref", _) => MethodTag::OlsRef,
            ("ols_pooled", _) => MethodTag::OlsPooled,
            ("test_ols", _) => MethodTag::TestOls,
            (other, _) => {
                return Err(serde::de::Error::custom(format!(
                    "unknown method tag `{other}`"
                )))
            }
        };
        Ok(FitResult {
            method,
            b: DVector::from_vec(wire.b),
            objective: wire.objective,
            grad_invariance_residual: wire.grad_invariance_residual,
            condition: wire.condition,
        })
    }
}

/// Matrix penalty for the adaptive estimator: a block-diagonal
/// `diag(Gamma_x, gamma_y)` acting separately on covariates and response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaMatrix {
    #[serde(with = "crate::io::serde_mat::matrix")]
    pub gamma_x: DMatrix<f64>,
    pub gamma_y: f64,
}

impl GammaMatrix {
    /// Literal scalar penalty matrix `gamma * I`.
    pub fn scalar(gamma: f64, p: usize) -> Self {
        GammaMatrix {
            gamma_x: DMatrix::identity(p, p) * gamma,
            gamma_y: gamma,
        }
    }

    /// The penalty reproducing `drig(gamma)` exactly. The penalty matrix
    /// enters the objective quadratically, so the scalar method of strength
    /// `gamma` embeds as `sqrt(gamma) * I`.
    pub fn drig_equivalent(gamma: f64, p: usize) -> Self {
        Self::scalar(gamma.max(0.0).sqrt(), p)
    }

    /// The full `(p+1) x (p+1)` block-diagonal matrix.
    pub fn full(&self) -> DMatrix<f64> {
        let p = self.gamma_x.nrows();
        let mut m = DMatrix::zeros(p + 1, p + 1);
        m.view_mut((0, 0), (p, p)).copy_from(&self.gamma_x);
        m[(p, p)] = self.gamma_y;
        m
    }

    /// Checks the PSD-penalty contract: `Gamma_x` symmetric PSD and
    /// `gamma_y >= 0`, within tolerance.
    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.gamma_x.nrows() != self.gamma_x.ncols() {
            return Err(EstimatorError::InvalidInput("Gamma_x must be square".into()));
        }
        let asym = (&self.gamma_x - self.gamma_x.transpose()).amax();
        if asym > 1e-10 * self.gamma_x.amax().max(1.0) {
            return Err(EstimatorError::InvalidInput(
                "Gamma_x must be symmetric".into(),
            ));
        }
        if !linalg::is_psd(&self.gamma_x) || self.gamma_y < -1e-12 {
            return Err(EstimatorError::InvalidInput(
                "diag(Gamma_x, gamma_y) must be positive semidefinite".into(),
            ));
        }
        Ok(())
    }
}

fn check_moments(moments: &[EnvironmentMoments]) -> Result<usize, EstimatorError> {
    let first = moments
        .first()
        .ok_or_else(|| EstimatorError::InvalidInput("no environments".into()))?;
    let p = first.p();
    if moments.iter().any(|m| m.p() != p) {
        return Err(EstimatorError::InvalidInput(
            "environments have mismatched dimensions".into(),
        ));
    }
    let wsum: f64 = moments.iter().map(|m| m.weight).sum();
    if (wsum - 1.0).abs() > 1e-9 {
        return Err(EstimatorError::InvalidInput(format!(
            "environment weights must sum to 1 (got {wsum})"
        )));
    }
    Ok(p)
}

/// Weighted excess of the covariate Gram over the reference environment:
/// `sum_e w_e (G^e_x - G^0_x)`.
pub fn delta_x(moments: &[EnvironmentMoments]) -> DMatrix<f64> {
    let ref_x = moments[0].gram_x();
    let mut acc = DMatrix::zeros(ref_x.nrows(), ref_x.ncols());
    for m in moments {
        acc += (m.gram_x() - &ref_x) * m.weight;
    }
    acc
}

/// Weighted excess of the covariate-response cross moment:
/// `sum_e w_e (g^e - g^0)`.
pub fn delta_xy(moments: &[EnvironmentMoments]) -> DVector<f64> {
    let ref_xy = moments[0].gram_xy();
    let mut acc = DVector::zeros(ref_xy.len());
    for m in moments {
        acc += (m.gram_xy() - &ref_xy) * m.weight;
    }
    acc
}

/// Weighted excess of the response second moment: `sum_e w_e (G^e_y - G^0_y)`.
pub fn delta_y(moments: &[EnvironmentMoments]) -> f64 {
    let ref_y = moments[0].gram_y();
    moments
        .iter()
        .map(|m| m.weight * (m.gram_y() - ref_y))
        .sum()
}

/// Population (or empirical) mean squared error of the linear predictor `b`
/// on one environment: `E[Y^2] - 2 b'E[XY] + b'E[XX']b`.
pub fn evaluate_mse(b: &DVector<f64>, m: &EnvironmentMoments) -> f64 {
    m.gram_y() - 2.0 * b.dot(&m.gram_xy()) + (m.gram_x() * b).dot(b)
}

/// Norm of the gradient-invariance defect `||2 (D_x b - D_xy)||_2`; zero iff
/// the weighted average loss gradient equals the reference gradient at `b`.
pub fn gradient_invariance_residual(b: &DVector<f64>, moments: &[EnvironmentMoments]) -> f64 {
    ((delta_x(moments) * b - delta_xy(moments)) * 2.0).norm()
}

/// The gradient-invariance regularized risk `L_gamma` evaluated from its
/// definition as weighted per-environment MSEs.
pub fn drig_loss(b: &DVector<f64>, moments: &[EnvironmentMoments], gamma: f64) -> f64 {
    let mse0 = evaluate_mse(b, &moments[0]);
    let excess: f64 = moments
        .iter()
        .map(|m| m.weight * (evaluate_mse(b, m) - mse0))
        .sum();
    mse0 + gamma * excess
}

/// The anchor-regression risk: pooled MSE plus `(gamma - 1)` times the
/// weighted squared per-environment mean residuals.
pub fn anchor_loss(b: &DVector<f64>, moments: &[EnvironmentMoments], gamma: f64) -> f64 {
    let pooled: f64 = moments.iter().map(|m| m.weight * evaluate_mse(b, m)).sum();
    let mean_term: f64 = moments
        .iter()
        .map(|m| {
            let resid = m.mean_y() - b.dot(&m.mean_x());
            m.weight * resid * resid
        })
        .sum();
    pooled + (gamma - 1.0) * mean_term
}

/// The matrix-penalized risk behind [`drig_a`]: reference MSE plus the
/// weighted excess of `E[(gamma_y Y - b' Gamma_x X)^2]` over the reference.
pub fn drig_a_loss(b: &DVector<f64>, moments: &[EnvironmentMoments], gamma: &GammaMatrix) -> f64 {
    let scaled = |m: &EnvironmentMoments| -> f64 {
        let gx_b = &gamma.gamma_x * b;
        gamma.gamma_y * gamma.gamma_y * m.gram_y() - 2.0 * gamma.gamma_y * gx_b.dot(&m.gram_xy())
            + (m.gram_x() * &gx_b).dot(&gx_b)
    };
    let base = scaled(&moments[0]);
    let excess: f64 = moments.iter().map(|m| m.weight * (scaled(m) - base)).sum();
    evaluate_mse(b, &moments[0]) + excess
}

fn finish(
    method: MethodTag,
    b: DVector<f64>,
    objective: f64,
    moments: &[EnvironmentMoments],
    condition: f64,
) -> FitResult {
    let residual = gradient_invariance_residual(&b, moments);
    FitResult {
        method,
        b,
        objective,
        grad_invariance_residual: Some(residual),
        condition,
    }
}

/// Gradient-invariance regularized least squares with strength `gamma >= 0`.
///
/// Solves `(G0_x + gamma D_x) b = g0 + gamma D_xy`. Errors with
/// [`EstimatorError::NonPdSystem`] when the system loses positive
/// definiteness, which signals that `gamma` extrapolates beyond the observed
/// heterogeneity.
pub fn drig(moments: &[EnvironmentMoments], gamma: f64) -> Result<FitResult, EstimatorError> {
    check_moments(moments)?;
    if gamma < 0.0 {
        return Err(EstimatorError::InvalidInput(format!(
            "gamma must be non-negative, got {gamma}"
        )));
    }
    let f = moments[0].gram_x() + delta_x(moments) * gamma;
    let g = moments[0].gram_xy() + delta_xy(moments) * gamma;
    let sol = linalg::spd_solve(&f, &g)?;
    let objective = drig_loss(&sol.x, moments, gamma);
    Ok(finish(
        MethodTag::Drig { gamma },
        sol.x,
        objective,
        moments,
        sol.rcond,
    ))
}

/// Ordinary least squares on the reference environment (`gamma = 0`).
pub fn ols_ref(moments: &[EnvironmentMoments]) -> Result<FitResult, EstimatorError> {
    check_moments(moments)?;
    let sol = linalg::spd_solve(&moments[0].gram_x(), &moments[0].gram_xy())?;
    let objective = evaluate_mse(&sol.x, &moments[0]);
    Ok(finish(MethodTag::OlsRef, sol.x, objective, moments, sol.rcond))
}

/// Ordinary least squares on the weight-pooled data (`gamma = 1`).
pub fn ols_pooled(moments: &[EnvironmentMoments]) -> Result<FitResult, EstimatorError> {
    check_moments(moments)?;
    let p = moments[0].p();
    let mut gram = DMatrix::zeros(p, p);
    let mut cross = DVector::zeros(p);
    for m in moments {
        gram += m.gram_x() * m.weight;
        cross += m.gram_xy() * m.weight;
    }
    let sol = linalg::spd_solve(&gram, &cross)?;
    let objective: f64 = moments
        .iter()
        .map(|m| m.weight * evaluate_mse(&sol.x, m))
        .sum();
    Ok(finish(
        MethodTag::OlsPooled,
        sol.x,
        objective,
        moments,
        sol.rcond,
    ))
}

/// The `gamma -> infinity` limit: minimizes the reference-environment MSE
/// subject to the linear gradient-invariance constraint `D_x b = D_xy`.
///
/// Solved as an explicit KKT system rather than by taking a large `gamma`,
/// which would be ill-conditioned. When the constraint leaves free
/// directions, the reference MSE decides among them; if the reference Gram is
/// itself degenerate along a free direction, the minimum-norm completion
/// is taken.
pub fn drig_infinity(moments: &[EnvironmentMoments]) -> Result<FitResult, EstimatorError> {
    let p = check_moments(moments)?;
    let dx = delta_x(moments);
    let dxy = delta_xy(moments);
    let (vals, vecs) = linalg::sym_eigen(&dx);
    let max_abs = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let rank_tol = linalg::PSD_TOL * max_abs.max(1e-300);

    // consistency: the null-space component of D_xy must vanish
    let dxy_norm = dxy.norm();
    let mut null_resid_sq = 0.0;
    for i in 0..p {
        if vals[i].abs() <= rank_tol {
            let c = vecs.column(i).dot(&dxy);
            null_resid_sq += c * c;
        }
    }
    let null_resid = null_resid_sq.sqrt();
    if null_resid > 1e-8 * dxy_norm.max(1e-300) && dxy_norm > 0.0 {
        return Err(EstimatorError::InconsistentInvariance {
            residual: null_resid,
        });
    }

    // particular solution along constrained directions
    let mut b = DVector::zeros(p);
    let mut constrained_rcond = 1.0f64;
    let mut free_cols = Vec::new();
    let mut min_abs = f64::INFINITY;
    for i in 0..p {
        if vals[i].abs() > rank_tol {
            let coeff = vecs.column(i).dot(&dxy) / vals[i];
            b += vecs.column(i) * coeff;
            min_abs = min_abs.min(vals[i].abs());
        } else {
            free_cols.push(i);
        }
    }
    if max_abs > 0.0 && min_abs.is_finite() {
        constrained_rcond = min_abs / max_abs;
    }

    let condition = if free_cols.is_empty() {
        constrained_rcond
    } else {
        // minimize reference MSE over the free subspace
        let g0x = moments[0].gram_x();
        let g0xy = moments[0].gram_xy();
        let basis = DMatrix::from_fn(p, free_cols.len(), |i, j| vecs[(i, free_cols[j])]);
        let reduced = basis.transpose() * &g0x * &basis;
        let rhs = basis.transpose() * (&g0xy - &g0x * &b);
        match linalg::spd_solve(&reduced, &rhs) {
            Ok(sol) => {
                b += &basis * sol.x;
                sol.rcond.min(constrained_rcond)
            }
            Err(_) => {
                // degenerate reference Gram along free directions:
                // minimum-norm completion via clamped pseudo-inverse
                let (rvals, rvecs) = linalg::sym_eigen(&reduced);
                let rmax = rvals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let cut = linalg::PSD_TOL * rmax.max(1e-300);
                let coeffs = rvecs.transpose() * rhs;
                let y = DVector::from_iterator(
                    rvals.len(),
                    coeffs
                        .iter()
                        .zip(rvals.iter())
                        .map(|(c, v)| if v.abs() > cut { c / v } else { 0.0 }),
                );
                b += &basis * (rvecs * y);
                0.0
            }
        }
    };

    let objective = evaluate_mse(&b, &moments[0]);
    Ok(finish(MethodTag::DrigInf, b, objective, moments, condition))
}

/// Anchor regression with strength `gamma >= 0`, implemented through the
/// per-environment mean residual penalty. Coincides with [`drig`] whenever
/// the interventions shift only the means.
pub fn anchor(moments: &[EnvironmentMoments], gamma: f64) -> Result<FitResult, EstimatorError> {
    let p = check_moments(moments)?;
    if gamma < 0.0 {
        return Err(EstimatorError::InvalidInput(format!(
            "gamma must be non-negative, got {gamma}"
        )));
    }
    let mut gram = DMatrix::zeros(p, p);
    let mut cross = DVector::zeros(p);
    for m in moments {
        gram += m.gram_x() * m.weight;
        cross += m.gram_xy() * m.weight;
        let mx = m.mean_x();
        gram += (&mx * mx.transpose()) * ((gamma - 1.0) * m.weight);
        cross += mx * ((gamma - 1.0) * m.weight * m.mean_y());
    }
    let sol = linalg::spd_solve(&gram, &cross)?;
    let objective = anchor_loss(&sol.x, moments, gamma);
    Ok(finish(
        MethodTag::Anchor { gamma },
        sol.x,
        objective,
        moments,
        sol.rcond,
    ))
}

/// Causal Dantzig: with exactly two environments, solves the Gram-difference
/// system `(G^1_x - G^0_x) b = g^1 - g^0`, the `gamma -> infinity` limit of
/// [`drig`] in that setting.
pub fn causal_dantzig(moments: &[EnvironmentMoments]) -> Result<FitResult, EstimatorError> {
    check_moments(moments)?;
    if moments.len() != 2 {
        return Err(EstimatorError::InvalidInput(format!(
            "causal Dantzig requires exactly two environments, got {}",
            moments.len()
        )));
    }
    let diff = moments[1].gram_x() - moments[0].gram_x();
    let rhs = moments[1].gram_xy() - moments[0].gram_xy();
    let rc = linalg::rcond(&diff);
    if rc < linalg::RCOND_TOL {
        return Err(EstimatorError::SingularDifference { rcond: rc });
    }
    let b = diff
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(EstimatorError::SingularDifference { rcond: rc })?;
    // value of the limiting objective: the loss difference between the two
    // environments, zero exactly when gradient invariance is attainable
    let objective = evaluate_mse(&b, &moments[1]) - evaluate_mse(&b, &moments[0]);
    Ok(finish(MethodTag::CausalDantzig, b, objective, moments, rc))
}

/// Group distributionally robust optimization:
/// `argmin_b max_e mse_e(b)`.
///
/// When one environment's Gram dominates all others in the PSD order its OLS
/// solution is exactly minimax and is returned directly. Otherwise the
/// environment mixture is found by multiplicative weights (step size
/// `0.1/sqrt(t)`), with each inner step a closed-form OLS on the mixture
/// Gram; iteration stops once the certified primal-dual gap falls below
/// `tolerance`.
pub fn group_dro(
    moments: &[EnvironmentMoments],
    tolerance: f64,
    max_iters: usize,
) -> Result<FitResult, EstimatorError> {
    let p = check_moments(moments)?;
    let k = moments.len();

    // dominating environment: max_e mse_e(b) is that environment's MSE for
    // every b, so its OLS is exactly minimax
    'outer: for m in 0..k {
        for e in 0..k {
            if e != m && !linalg::psd_dominates(&moments[m].gram, &moments[e].gram) {
                continue 'outer;
            }
        }
        let sol = linalg::spd_solve(&moments[m].gram_x(), &moments[m].gram_xy())?;
        let objective = evaluate_mse(&sol.x, &moments[m]);
        return Ok(finish(
            MethodTag::GroupDro,
            sol.x,
            objective,
            moments,
            sol.rcond,
        ));
    }

    let mut q = vec![1.0 / k as f64; k];
    let mut best_primal = f64::INFINITY;
    let mut best_b: Option<(DVector<f64>, f64)> = None;
    let mut best_dual = f64::NEG_INFINITY;
    let mut gap = f64::INFINITY;
    let mut mses = vec![0.0; k];

    for t in 1..=max_iters {
        let mut gram = DMatrix::zeros(p, p);
        let mut cross = DVector::zeros(p);
        for (m, &qe) in moments.iter().zip(&q) {
            gram += m.gram_x() * qe;
            cross += m.gram_xy() * qe;
        }
        let sol = linalg::spd_solve(&gram, &cross)?;
        for (slot, m) in mses.iter_mut().zip(moments) {
            *slot = evaluate_mse(&sol.x, m);
        }
        let primal = mses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // the inner OLS is the exact best response, so the mixture value is
        // a valid lower bound on the game value
        let dual: f64 = mses.iter().zip(&q).map(|(mse, qe)| mse * qe).sum();
        if primal < best_primal {
            best_primal = primal;
            best_b = Some((sol.x, sol.rcond));
        }
        best_dual = best_dual.max(dual);
        gap = best_primal - best_dual;
        if gap < tolerance {
            break;
        }
        let eta = 0.1 / (t as f64).sqrt();
        let max_mse = primal;
        let mut norm = 0.0;
        for (qe, mse) in q.iter_mut().zip(&mses) {
            *qe *= (eta * (mse - max_mse)).exp();
            norm += *qe;
        }
        for qe in q.iter_mut() {
            *qe /= norm;
        }
    }

    if gap >= tolerance {
        return Err(EstimatorError::NoConvergence {
            gap,
            iterations: max_iters,
        });
    }
    let (b, rcond) = best_b.expect("at least one iteration ran");
    Ok(finish(MethodTag::GroupDro, b, best_primal, moments, rcond))
}

/// Matrix-penalized estimator: solves
/// `(G0_x + Gamma_x D_x Gamma_x) b = g0 + gamma_y Gamma_x D_xy`.
///
/// With `Gamma = gamma * I` this reduces exactly to [`drig`]; a non-scalar
/// penalty reshapes (not just rescales) the protected perturbation class.
pub fn drig_a(
    moments: &[EnvironmentMoments],
    gamma: &GammaMatrix,
) -> Result<FitResult, EstimatorError> {
    let p = check_moments(moments)?;
    gamma.validate()?;
    if gamma.gamma_x.nrows() != p {
        return Err(EstimatorError::InvalidInput(format!(
            "Gamma_x must be {p}x{p}"
        )));
    }
    let f = moments[0].gram_x() + &gamma.gamma_x * delta_x(moments) * &gamma.gamma_x;
    let f = (&f + f.transpose()) * 0.5;
    let g = moments[0].gram_xy() + &gamma.gamma_x * delta_xy(moments) * gamma.gamma_y;
    let sol = linalg::spd_solve(&f, &g)?;
    let objective = drig_a_loss(&sol.x, moments, gamma);
    Ok(finish(MethodTag::DrigA, sol.x, objective, moments, sol.rcond))
}
