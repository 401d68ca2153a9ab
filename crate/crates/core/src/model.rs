//! Shared numeric types and the evaluator contract implemented by every demand
//! model.
//!
//! A model maps mean utilities `x` to consumer surplus `U(x)`, inside-good
//! shares `σ(x)` and, on request, the share Jacobian `∂σ/∂x`. Because
//! `∂U/∂x = σ(x)`, the Jacobian is also the Hessian of `U`, and the inversion
//! `σ(x) = σ*` becomes the convex problem `min_x U(x) − x'σ*`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Euler–Mascheroni constant, the mean of a standard Gumbel shock.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Slack allowed on `Σ s_j ≤ 1` when validating user-supplied shares.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// Inside-good market shares, an element of the simplex `{s ≥ 0, Σ s ≤ 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ShareVector(DVector<f64>);

impl ShareVector {
    pub fn new(values: impl Into<Vec<f64>>) -> Result<Self> {
        let values = values.into();
        for (index, &s) in values.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::NonFinite {
                    what: "share vector",
                    index,
                });
            }
            if s < 0.0 {
                return Err(Error::OutsideSimplex {
                    reason: format!("coordinate {index} is negative ({s:?})"),
                });
            }
        }
        let total: f64 = values.iter().sum();
        if total > 1.0 + SIMPLEX_TOLERANCE {
            return Err(Error::OutsideSimplex {
                reason: format!("coordinates sum to {total:?} > 1"),
            });
        }
        Ok(Self(DVector::from_vec(values)))
    }

    /// Wraps model output without re-validating; evaluators guarantee the
    /// simplex invariants up to rounding.
    pub(crate) fn from_model(values: DVector<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// `1 − Σ s_j`, clamped at zero.
    pub fn residual_outside(&self) -> f64 {
        (1.0 - self.0.sum()).max(0.0)
    }

    pub fn min_inside(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index of the first zero coordinate, if any.
    pub fn first_zero(&self) -> Option<usize> {
        self.0.iter().position(|&s| s == 0.0)
    }
}

impl TryFrom<Vec<f64>> for ShareVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ShareVector> for Vec<f64> {
    fn from(s: ShareVector) -> Self {
        s.0.as_slice().to_vec()
    }
}

/// Mean utilities (demand shifters), one per product. Always finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MeanUtility(DVector<f64>);

impl MeanUtility {
    pub fn new(values: impl Into<Vec<f64>>) -> Result<Self> {
        Self::from_vector(DVector::from_vec(values.into()))
    }

    pub fn from_vector(values: DVector<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "mean utility",
                index,
            });
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(DVector::zeros(len))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for MeanUtility {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<MeanUtility> for Vec<f64> {
    fn from(x: MeanUtility) -> Self {
        x.0.as_slice().to_vec()
    }
}

/// Output of one model evaluation at a point `x`.
#[derive(Clone, Debug)]
pub struct ModelEvaluation {
    /// Consumer surplus `U(x)`.
    pub welfare: f64,
    pub shares: ShareVector,
    /// Outside-option share, accumulated directly rather than as `1 − Σ s_j`
    /// so tiny outside masses keep their relative precision.
    pub outside_share: f64,
    /// `∂σ/∂x`, symmetric positive semidefinite.
    pub jacobian: Option<DMatrix<f64>>,
}

/// The capability every demand model provides.
///
/// Implementations are immutable after construction and `evaluate` is a pure
/// function of `x`, so it may be called from many threads at once.
pub trait DemandModel: Sync {
    /// Number of inside products `J`.
    fn products(&self) -> usize;

    fn evaluate(&self, x: &MeanUtility, want_jacobian: bool) -> Result<ModelEvaluation>;

    fn check_dimension(&self, x: &MeanUtility) -> Result<()> {
        if x.len() != self.products() {
            return Err(Error::dimension("mean utility", self.products(), x.len()));
        }
        Ok(())
    }
}

impl<M: DemandModel + ?Sized> DemandModel for &M {
    fn products(&self) -> usize {
        (**self).products()
    }

    fn evaluate(&self, x: &MeanUtility, want_jacobian: bool) -> Result<ModelEvaluation> {
        (**self).evaluate(x, want_jacobian)
    }
}

/// Value, gradient and optional Hessian of `f(x) = U(x) − x'σ*`.
#[derive(Clone, Debug)]
pub struct Objective {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

impl Objective {
    /// `‖σ(x) − σ*‖∞`, the share residual.
    pub fn residual_norm(&self) -> f64 {
        self.gradient.amax()
    }
}

/// Evaluates the convex inversion objective at `x`.
pub fn convex_objective<M: DemandModel + ?Sized>(
    model: &M,
    target: &ShareVector,
    x: &MeanUtility,
    want_hessian: bool,
) -> Result<Objective> {
    if target.len() != model.products() {
        return Err(Error::dimension("target shares", model.products(), target.len()));
    }
    model.check_dimension(x)?;
    let eval = model.evaluate(x, want_hessian)?;
    let value = eval.welfare - x.as_vector().dot(target.as_vector());
    let gradient = eval.shares.as_vector() - target.as_vector();
    Ok(Objective {
        value,
        gradient,
        hessian: eval.jacobian,
    })
}

/// Central-difference gradient of the welfare function. Test oracle for the
/// identity `∂U/∂x = σ(x)`.
pub fn finite_difference_gradient<M: DemandModel + ?Sized>(
    model: &M,
    x: &MeanUtility,
    step: f64,
) -> Result<DVector<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("difference step must be positive, got {step}")));
    }
    model.check_dimension(x)?;
    let mut grad = DVector::zeros(x.len());
    let mut probe = x.as_vector().clone();
    for j in 0..x.len() {
        let base = probe[j];
        probe[j] = base + step;
        let up = model
            .evaluate(&MeanUtility::from_vector(probe.clone())?, false)?
            .welfare;
        probe[j] = base - step;
        let down = model
            .evaluate(&MeanUtility::from_vector(probe.clone())?, false)?
            .welfare;
        probe[j] = base;
        grad[j] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// Largest absolute difference between `m` and its transpose.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues().min()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn share_vector_rejects_negative_and_overfull() {
        let err = ShareVector::new(vec![0.2, -0.1]).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
        assert!(ShareVector::new(vec![0.6, 0.5]).is_err());
        assert!(ShareVector::new(vec![f64::NAN]).is_err());
        let ok = ShareVector::new(vec![0.25, 0.0, 0.5]).unwrap();
        assert_eq!(ok.first_zero(), Some(1));
        assert_eq!(ok.residual_outside(), 0.25);
    }

    #[test]
    fn mean_utility_rejects_non_finite() {
        assert!(MeanUtility::new(vec![0.0, f64::INFINITY]).is_err());
        assert!(MeanUtility::new(vec![f64::NAN]).is_err());
        assert!(MeanUtility::new(vec![-1e300, 3.0]).is_ok());
    }

    #[test]
    fn serde_is_a_plain_array() {
        let x = MeanUtility::new(vec![0.1, -2.5]).unwrap();
        let text = serde_json::to_string(&x).unwrap();
        assert_eq!(text, "[0.1,-2.5]");
        let back: MeanUtility = serde_json::from_str(&text).unwrap();
        assert_eq!(back, x);
        assert!(serde_json::from_str::<ShareVector>("[0.7,0.7]").is_err());
    }

    #[test]
    fn eigen_helpers() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        assert!((min_symmetric_eigenvalue(&m) - 1.0).abs() < 1e-14);
        assert_eq!(asymmetry(&m), 0.0);
    }
}
