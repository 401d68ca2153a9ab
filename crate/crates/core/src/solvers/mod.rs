//! Inversion algorithms sharing one configuration and result format.
//!
//! * [`Method::Contraction`]: the BLP fixed point `x ← x + log σ* − log σ(x)`.
//! * [`Method::ConvexTrustRegion`]: trust-region Newton on `U(x) − x'σ*`.
//! * [`Method::ResidualTrustRegion`]: Levenberg–Marquardt trust region on
//!   `½‖σ(x) − σ*‖²`, the classic nonlinear-equation approach.
//!
//! All three stop on the share residual `‖σ(x) − σ*‖∞` and record the
//! best-so-far residual at every accepted iterate.

mod contraction;
mod convex;
mod residual;
pub mod subproblem;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DemandModel, MeanUtility, ShareVector};

pub use contraction::contraction_invert;
pub use convex::convex_trust_region_invert;
pub use residual::residual_trust_region_invert;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once `‖σ(x) − σ*‖∞` is at or below this value.
    pub gradient_tolerance: f64,
    pub initial_radius: f64,
    pub radius_max: f64,
    /// Minimum actual/predicted reduction ratio for accepting a step.
    pub accept_ratio: f64,
    /// Ratio above which a boundary step expands the radius.
    pub expand_ratio: f64,
    pub shrink_factor: f64,
    pub expand_factor: f64,
    /// Floor on the Levenberg–Marquardt damping of the residual solver.
    pub regularization_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-13,
            initial_radius: 1.0,
            radius_max: 1e6,
            accept_ratio: 0.1,
            expand_ratio: 0.75,
            shrink_factor: 0.25,
            expand_factor: 2.0,
            regularization_floor: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gradient_tolerance", self.gradient_tolerance),
            ("initial_radius", self.initial_radius),
            ("radius_max", self.radius_max),
            ("regularization_floor", self.regularization_floor),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.accept_ratio > 0.0 && self.accept_ratio <= 0.25) {
            return Err(Error::invalid("accept_ratio must lie in (0, 1/4]"));
        }
        if !(self.expand_ratio >= self.accept_ratio && self.expand_ratio < 1.0) {
            return Err(Error::invalid("expand_ratio must lie in [accept_ratio, 1)"));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0 && self.expand_factor > 1.0) {
            return Err(Error::invalid("need 0 < shrink_factor < 1 < expand_factor"));
        }
        Ok(())
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.gradient_tolerance = tolerance;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "contraction")]
    Contraction,
    #[serde(rename = "convex_tr")]
    ConvexTrustRegion,
    #[serde(rename = "residual_tr")]
    ResidualTrustRegion,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::Contraction,
        Method::ConvexTrustRegion,
        Method::ResidualTrustRegion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Contraction => "contraction",
            Method::ConvexTrustRegion => "convex_tr",
            Method::ResidualTrustRegion => "residual_tr",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMethod(s.to_string()))
    }
}

/// Cumulative model-call totals, split by the quantity each call supplied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub welfare: usize,
    pub shares: usize,
    pub jacobian: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    /// No acceptable step could be found (radius collapse or a stationary
    /// point of the merit function with a nonzero residual).
    Stalled,
    /// A model share hit exactly zero, so the contraction cannot continue.
    Diverged,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InversionResult {
    pub method: Method,
    /// Best iterate found.
    pub x_final: MeanUtility,
    pub converged: bool,
    pub status: Status,
    /// Accepted iterations.
    pub iterations_used: usize,
    /// Best-so-far `‖σ(x) − σ*‖∞`; entry 0 is the starting point.
    pub error_trace: Vec<f64>,
    /// Cumulative evaluation counts at each trace entry.
    pub eval_trace: Vec<EvalCounts>,
    pub eval_counts: EvalCounts,
}

impl InversionResult {
    pub fn final_error(&self) -> f64 {
        *self.error_trace.last().expect("trace always holds the start point")
    }

    /// Best-so-far error after `iteration` accepted steps, carrying the last
    /// value forward past the end of the trace.
    pub fn error_at(&self, iteration: usize) -> f64 {
        self.error_trace
            .get(iteration)
            .copied()
            .unwrap_or_else(|| self.final_error())
    }
}

/// Bookkeeping shared by the solvers: best iterate, trace and call counts.
pub(crate) struct Progress {
    method: Method,
    best_x: DVector<f64>,
    best_error: f64,
    trace: Vec<f64>,
    eval_trace: Vec<EvalCounts>,
    pub counts: EvalCounts,
    pub iterations: usize,
}

impl Progress {
    pub fn start(method: Method, x0: &DVector<f64>, error: f64, counts: EvalCounts) -> Self {
        Self {
            method,
            best_x: x0.clone(),
            best_error: error,
            trace: vec![error],
            eval_trace: vec![counts],
            counts,
            iterations: 0,
        }
    }

    /// Records an accepted iterate.
    pub fn accept(&mut self, x: &DVector<f64>, error: f64) {
        self.iterations += 1;
        if error < self.best_error {
            self.best_error = error;
            self.best_x.copy_from(x);
        }
        self.trace.push(self.best_error);
        self.eval_trace.push(self.counts);
    }

    pub fn best_error(&self) -> f64 {
        self.best_error
    }

    pub fn finish(self, status: Status) -> InversionResult {
        InversionResult {
            method: self.method,
            x_final: MeanUtility::from_vector(self.best_x).expect("iterates are kept finite"),
            converged: status == Status::Converged,
            status,
            iterations_used: self.iterations,
            error_trace: self.trace,
            eval_trace: self.eval_trace,
            eval_counts: self.counts,
        }
    }
}

pub(crate) fn check_problem<M: DemandModel + ?Sized>(
    model: &M,
    sigma_star: &ShareVector,
    x0: &MeanUtility,
    cfg: &SolverConfig,
) -> Result<()> {
    cfg.validate()?;
    if sigma_star.len() != model.products() {
        return Err(Error::DimensionMismatch {
            what: "target shares",
            expected: model.products(),
            found: sigma_star.len(),
        });
    }
    model.check_dimension(x0)
}

/// Solves `σ(x) = σ*` with the chosen method, starting from `x0`.
pub fn invert<M: DemandModel + ?Sized>(
    model: &M,
    sigma_star: &ShareVector,
    method: Method,
    x0: &MeanUtility,
    cfg: &SolverConfig,
) -> Result<InversionResult> {
    match method {
        Method::Contraction => contraction_invert(model, sigma_star, x0, cfg),
        Method::ConvexTrustRegion => convex_trust_region_invert(model, sigma_star, x0, cfg),
        Method::ResidualTrustRegion => residual_trust_region_invert(model, sigma_star, x0, cfg),
    }
}

/// Radius update shared by both trust-region solvers.
pub(crate) fn update_radius(cfg: &SolverConfig, radius: f64, step_norm: f64, rho: f64, on_boundary: bool) -> f64 {
    const SHRINK_BELOW: f64 = 0.25;
    if !(rho >= SHRINK_BELOW) {
        cfg.shrink_factor * radius.min(step_norm)
    } else if rho >= cfg.expand_ratio && on_boundary {
        (cfg.expand_factor * radius).min(cfg.radius_max)
    } else {
        radius
    }
}

/// Radius below which no representable step can make progress from `x`.
pub(crate) fn radius_floor(x: &DVector<f64>) -> f64 {
    f64::EPSILON * (1.0 + x.amax())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!(matches!("newton".parse::<Method>(), Err(Error::UnknownMethod(_))));
    }

    #[test]
    fn default_config_is_valid() {
        SolverConfig::default().validate().unwrap();
        let bad = SolverConfig {
            shrink_factor: 1.5,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            gradient_tolerance: 0.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg: SolverConfig = serde_json::from_str(r#"{"max_iterations": 50}"#).unwrap();
        assert_eq!(cfg.max_iterations, 50);
        assert_eq!(cfg.gradient_tolerance, 1e-13);
    }

    #[test]
    fn progress_keeps_best_so_far() {
        let x = DVector::from_vec(vec![0.0]);
        let mut p = Progress::start(Method::Contraction, &x, 1.0, EvalCounts::default());
        p.accept(&DVector::from_vec(vec![1.0]), 0.5);
        p.accept(&DVector::from_vec(vec![2.0]), 0.7);
        let r = p.finish(Status::MaxIterations);
        assert_eq!(r.error_trace, vec![1.0, 0.5, 0.5]);
        assert_eq!(r.x_final.as_slice(), &[1.0]);
        assert_eq!(r.error_at(10), 0.5);
        assert!(!r.converged);
    }
}
