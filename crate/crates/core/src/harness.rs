//! Replication harness for the convergence experiments.
//!
//! Each replication draws a fresh market from a child seed, perturbs the true
//! mean utilities by a random vector of fixed Euclidean norm, and runs every
//! requested method from that same start. Traces are then summarized into
//! per-iteration min/median/max bands.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::AnyModel;
use crate::logit::make_logit_instance;
use crate::model::{DemandModel, MeanUtility, ShareVector};
use crate::par;
use crate::purechar::make_purechar_instance;
use crate::rng::{self, Stream};
use crate::solvers::{invert, InversionResult, Method, SolverConfig};

/// Ratios averaged by [`TraceBand::empirical_rate`].
pub const RATE_WINDOW: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Logit,
    Purechar,
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(ModelFamily::Logit),
            "purechar" => Ok(ModelFamily::Purechar),
            _ => Err(Error::invalid(format!(
                "unknown model family `{s}` (expected logit or purechar)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model_family: ModelFamily,
    #[serde(rename = "J")]
    pub products: usize,
    #[serde(rename = "M")]
    pub attributes: usize,
    #[serde(rename = "n")]
    pub consumers: usize,
    pub replications: usize,
    #[serde(default = "default_delta_norm")]
    pub delta_norm: f64,
    pub methods: Vec<Method>,
    #[serde(default)]
    pub solver_cfg: SolverConfig,
    pub master_seed: u64,
    #[serde(default = "default_degeneracy_threshold")]
    pub degeneracy_threshold: f64,
}

fn default_delta_norm() -> f64 {
    20.0
}

fn default_degeneracy_threshold() -> f64 {
    1e-14
}

impl ExperimentSpec {
    pub fn new(family: ModelFamily, products: usize, attributes: usize, consumers: usize) -> Self {
        let methods = match family {
            ModelFamily::Logit => vec![Method::Contraction, Method::ConvexTrustRegion],
            ModelFamily::Purechar => vec![Method::ResidualTrustRegion, Method::ConvexTrustRegion],
        };
        Self {
            model_family: family,
            products,
            attributes,
            consumers,
            replications: 100,
            delta_norm: default_delta_norm(),
            methods,
            solver_cfg: SolverConfig::default(),
            master_seed: 0,
            degeneracy_threshold: default_degeneracy_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if !(self.delta_norm >= 0.0 && self.delta_norm.is_finite()) {
            return Err(Error::invalid("delta_norm must be a finite non-negative number"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("at least one method is required"));
        }
        if self.products == 0 || self.consumers == 0 || self.attributes == 0 {
            return Err(Error::invalid("J, M and n must all be at least 1"));
        }
        if self.model_family == ModelFamily::Purechar && self.attributes < 2 {
            return Err(Error::invalid("the pure characteristics family needs M ≥ 2"));
        }
        if !(self.degeneracy_threshold > 0.0) {
            return Err(Error::invalid("degeneracy_threshold must be positive"));
        }
        self.solver_cfg.validate()
    }
}

/// A generated market with its truth, as used by one replication.
#[derive(Clone, Debug)]
pub struct Instance {
    pub model: AnyModel,
    pub x_star: MeanUtility,
    pub sigma_star: ShareVector,
}

pub fn make_instance(
    family: ModelFamily,
    products: usize,
    attributes: usize,
    consumers: usize,
    seed: u64,
) -> Result<Instance> {
    Ok(match family {
        ModelFamily::Logit => {
            let inst = make_logit_instance(products, attributes, consumers, seed)?;
            Instance {
                model: AnyModel::Logit(inst.market),
                x_star: inst.x_star,
                sigma_star: inst.sigma_star,
            }
        }
        ModelFamily::Purechar => {
            let inst = make_purechar_instance(products, attributes, consumers, seed)?;
            Instance {
                model: AnyModel::Purechar(inst.market),
                x_star: inst.x_star,
                sigma_star: inst.sigma_star,
            }
        }
    })
}

/// `x* + delta_norm·u` with `u` uniform on the unit sphere (a normalized
/// Gaussian draw from the seed's perturbation stream).
pub fn perturb_start(x_star: &MeanUtility, delta_norm: f64, seed: u64) -> Result<MeanUtility> {
    if !(delta_norm >= 0.0) {
        return Err(Error::invalid(format!(
            "delta_norm must be non-negative, got {delta_norm}"
        )));
    }
    if delta_norm == 0.0 {
        return Ok(x_star.clone());
    }
    let mut stream = rng::stream(seed, Stream::Perturbation);
    let direction = loop {
        let d = DVector::from_vec(rng::normal_vec(&mut stream, x_star.len()));
        let norm = d.norm();
        if norm > 0.0 {
            break d / norm;
        }
    };
    MeanUtility::from_vector(x_star.as_vector() + direction * delta_norm)
}

/// Median of the last `window` successive ratios `e_{k+1}/e_k` of a trace.
/// A trace that reaches exactly zero has rate zero.
pub fn empirical_rate(trace: &[f64], window: usize) -> Result<f64> {
    if window < 2 || trace.len() <= window {
        return Err(Error::invalid(format!(
            "empirical rate needs window ≥ 2 and more than `window` trace entries (window {window}, length {})",
            trace.len()
        )));
    }
    if trace.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::invalid("trace entries must be finite and non-negative"));
    }
    if trace.last() == Some(&0.0) {
        return Ok(0.0);
    }
    let tail = &trace[trace.len() - window - 1..];
    let ratios: Vec<f64> = tail.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(median(ratios))
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-iteration summary of one method across replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceBand {
    pub method: Method,
    /// Replications that produced a trace (solver errors are excluded).
    pub replications: usize,
    pub min: Vec<f64>,
    pub median: Vec<f64>,
    pub max: Vec<f64>,
    /// Median over replications of [`empirical_rate`] with window
    /// [`RATE_WINDOW`], shortened for traces that stop earlier; `None` when
    /// no replication has at least one ratio.
    pub empirical_rate: Option<f64>,
}

impl TraceBand {
    /// Builds the band from complete traces, padding each to `length` by
    /// carrying its final value forward.
    pub fn from_results<'a>(
        method: Method,
        results: impl IntoIterator<Item = &'a InversionResult>,
        length: usize,
    ) -> Self {
        let results: Vec<&InversionResult> = results.into_iter().collect();
        let mut band = TraceBand {
            method,
            replications: results.len(),
            min: Vec::with_capacity(length),
            median: Vec::with_capacity(length),
            max: Vec::with_capacity(length),
            empirical_rate: None,
        };
        if results.is_empty() {
            return band;
        }
        for k in 0..length {
            let column: Vec<f64> = results.iter().map(|r| r.error_at(k)).collect();
            band.min.push(column.iter().copied().fold(f64::INFINITY, f64::min));
            band.max.push(column.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            band.median.push(median(column));
        }
        let rates: Vec<f64> = results
            .iter()
            .filter_map(|r| {
                let trace = &r.error_trace;
                let window = RATE_WINDOW.min(trace.len().saturating_sub(1));
                if window == 0 {
                    return None;
                }
                if trace.last() == Some(&0.0) {
                    return Some(0.0);
                }
                let tail = &trace[trace.len() - window - 1..];
                Some(median(tail.windows(2).map(|w| w[1] / w[0]).collect()))
            })
            .collect();
        if !rates.is_empty() {
            band.empirical_rate = Some(median(rates));
        }
        band
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationDegeneracy {
    pub replication: usize,
    pub min_inside_share: f64,
    pub outside_share: f64,
    pub min_overall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyStats {
    pub threshold: f64,
    pub per_replication: Vec<ReplicationDegeneracy>,
    /// Fraction of replications with `min_overall < threshold`.
    pub fraction_below: f64,
}

impl DegeneracyStats {
    pub fn fraction_below(&self, threshold: f64) -> f64 {
        if self.per_replication.is_empty() {
            return 0.0;
        }
        let hits = self
            .per_replication
            .iter()
            .filter(|r| r.min_overall < threshold)
            .count();
        hits as f64 / self.per_replication.len() as f64
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    /// `Err` holds the solver's error message.
    pub outcome: std::result::Result<InversionResult, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub seed: u64,
    pub x_star: MeanUtility,
    pub x0: MeanUtility,
    pub degeneracy: ReplicationDegeneracy,
    pub runs: Vec<MethodRun>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteReport {
    pub replications: Vec<ReplicationOutcome>,
    pub bands: Vec<TraceBand>,
    pub degeneracy: DegeneracyStats,
}

impl SuiteReport {
    pub fn band(&self, method: Method) -> Option<&TraceBand> {
        self.bands.iter().find(|b| b.method == method)
    }

    /// Successful results of one method in replication order.
    pub fn results(&self, method: Method) -> impl Iterator<Item = &InversionResult> {
        self.replications.iter().flat_map(move |rep| {
            rep.runs
                .iter()
                .filter(move |run| run.method == method)
                .filter_map(|run| run.outcome.as_ref().ok())
        })
    }

    pub fn failures(&self) -> impl Iterator<Item = (usize, Method, &str)> {
        self.replications.iter().flat_map(|rep| {
            rep.runs.iter().filter_map(move |run| {
                run.outcome
                    .as_ref()
                    .err()
                    .map(|e| (rep.replication, run.method, e.as_str()))
            })
        })
    }
}

fn run_replication(spec: &ExperimentSpec, replication: usize) -> Result<ReplicationOutcome> {
    let seed = rng::derive_seed(spec.master_seed, replication as u64);
    let inst = make_instance(spec.model_family, spec.products, spec.attributes, spec.consumers, seed)?;
    let x0 = perturb_start(&inst.x_star, spec.delta_norm, seed)?;

    let truth = inst.model.evaluate(&inst.x_star, false)?;
    let min_inside_share = truth.shares.min_inside();
    let outside_share = truth.outside_share.max(0.0);
    let degeneracy = ReplicationDegeneracy {
        replication,
        min_inside_share,
        outside_share,
        min_overall: min_inside_share.min(outside_share).max(0.0),
    };

    let runs = spec
        .methods
        .iter()
        .map(|&method| MethodRun {
            method,
            outcome: invert(&inst.model, &inst.sigma_star, method, &x0, &spec.solver_cfg).map_err(|e| e.to_string()),
        })
        .collect();
    Ok(ReplicationOutcome {
        replication,
        seed,
        x_star: inst.x_star,
        x0,
        degeneracy,
        runs,
    })
}

/// Runs every replication (concurrently when the `parallel` feature is on)
/// and aggregates in replication order.
pub fn run_suite(spec: &ExperimentSpec) -> Result<SuiteReport> {
    spec.validate()?;
    let outcomes = par::map_in_order((0..spec.replications).collect(), |r| run_replication(spec, r));
    let replications = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let length = spec.solver_cfg.max_iterations + 1;
    let mut methods = spec.methods.clone();
    methods.dedup();
    let bands = methods
        .iter()
        .map(|&method| {
            let results = replications.iter().flat_map(|rep| {
                rep.runs
                    .iter()
                    .filter(move |run| run.method == method)
                    .filter_map(|run| run.outcome.as_ref().ok())
            });
            TraceBand::from_results(method, results, length)
        })
        .collect();

    let per_replication: Vec<ReplicationDegeneracy> = replications.iter().map(|r| r.degeneracy.clone()).collect();
    let mut degeneracy = DegeneracyStats {
        threshold: spec.degeneracy_threshold,
        per_replication,
        fraction_below: 0.0,
    };
    degeneracy.fraction_below = degeneracy.fraction_below(spec.degeneracy_threshold);
    Ok(SuiteReport {
        replications,
        bands,
        degeneracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perturbation_has_exact_norm() {
        let x = MeanUtility::new(vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        assert_eq!(perturb_start(&x, 0.0, 3).unwrap(), x);
        for seed in 0..20 {
            let x0 = perturb_start(&x, 20.0, seed).unwrap();
            let delta = x0.as_vector() - x.as_vector();
            assert_abs_diff_eq!(delta.norm(), 20.0, epsilon = 1e-12);
            assert_eq!(perturb_start(&x, 20.0, seed).unwrap(), x0);
        }
        assert!(perturb_start(&x, -1.0, 0).is_err());
    }

    #[test]
    fn geometric_trace_rate() {
        let trace: Vec<f64> = (0..30).map(|k| 0.9f64.powi(k)).collect();
        assert_abs_diff_eq!(empirical_rate(&trace, 5).unwrap(), 0.9, epsilon = 1e-12);
        assert_eq!(empirical_rate(&[1.0, 0.1, 0.0], 2).unwrap(), 0.0);
        assert!(empirical_rate(&[1.0, 0.5], 2).is_err());
        assert!(empirical_rate(&trace, 1).is_err());
    }

    #[test]
    fn spec_json_uses_short_names_and_defaults() {
        let spec: ExperimentSpec = serde_json::from_str(
            r#"{"model_family":"logit","J":3,"M":2,"n":10,"replications":2,
                "methods":["contraction","convex_tr"],"master_seed":5}"#,
        )
        .unwrap();
        assert_eq!(spec.delta_norm, 20.0);
        assert_eq!(spec.solver_cfg, SolverConfig::default());
        assert_eq!(spec.degeneracy_threshold, 1e-14);
        spec.validate().unwrap();
        let bad = ExperimentSpec {
            replications: 0,
            ..spec
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_replication_band_is_the_trace() {
        let mut spec = ExperimentSpec::new(ModelFamily::Logit, 3, 2, 50);
        spec.replications = 1;
        spec.solver_cfg.max_iterations = 40;
        let report = run_suite(&spec).unwrap();
        for band in &report.bands {
            let result = report.results(band.method).next().unwrap();
            assert_eq!(band.min.len(), 41);
            for k in 0..41 {
                assert_eq!(band.min[k], result.error_at(k));
                assert_eq!(band.median[k], band.min[k]);
                assert_eq!(band.max[k], band.min[k]);
            }
        }
    }

    #[test]
    fn methods_share_instance_and_start() {
        let mut spec = ExperimentSpec::new(ModelFamily::Purechar, 4, 3, 40);
        spec.replications = 3;
        spec.solver_cfg.max_iterations = 30;
        let report = run_suite(&spec).unwrap();
        for rep in &report.replications {
            assert_abs_diff_eq!(
                (rep.x0.as_vector() - rep.x_star.as_vector()).norm(),
                20.0,
                epsilon = 1e-12
            );
            assert_eq!(rep.runs.len(), 2);
        }
        for band in &report.bands {
            for k in 0..band.min.len() {
                assert!(band.min[k] <= band.median[k] && band.median[k] <= band.max[k]);
                assert!(band.min[k] >= 0.0);
            }
        }
    }

    #[test]
    fn failing_method_is_recorded_not_fatal() {
        // Contraction cannot take logs of zero shares; a far-off product in a
        // one-draw pure characteristics market has share exactly zero.
        let mut spec = ExperimentSpec::new(ModelFamily::Purechar, 10, 3, 1);
        spec.methods = vec![Method::Contraction, Method::ConvexTrustRegion];
        spec.replications = 6;
        spec.solver_cfg.max_iterations = 20;
        let report = run_suite(&spec).unwrap();
        let failures = report.failures().count();
        assert!(failures > 0, "expected some zero-share targets");
        assert_eq!(report.band(Method::ConvexTrustRegion).unwrap().replications, 6);
        assert_eq!(report.band(Method::Contraction).unwrap().replications, 6 - failures);
    }
}
