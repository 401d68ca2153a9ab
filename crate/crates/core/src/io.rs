//! On-disk formats: JSON model and truth files, long-form trace CSV.
//!
//! Floats are written in shortest round-trip form, so a model written and
//! read back evaluates to bit-identical shares.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::ModelFamily;
use crate::logit::LogitMarket;
use crate::model::{DemandModel, MeanUtility, ModelEvaluation, ShareVector};
use crate::purechar::PureCharMarket;
use crate::solvers::InversionResult;

/// Either demand model, for code that picks the family at run time.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Logit(LogitMarket),
    Purechar(PureCharMarket),
}

impl AnyModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            AnyModel::Logit(_) => ModelFamily::Logit,
            AnyModel::Purechar(_) => ModelFamily::Purechar,
        }
    }
}

impl DemandModel for AnyModel {
    fn products(&self) -> usize {
        match self {
            AnyModel::Logit(m) => m.products(),
            AnyModel::Purechar(m) => m.products(),
        }
    }

    fn evaluate(&self, x: &MeanUtility, want_jacobian: bool) -> Result<ModelEvaluation> {
        match self {
            AnyModel::Logit(m) => m.evaluate(x, want_jacobian),
            AnyModel::Purechar(m) => m.evaluate(x, want_jacobian),
        }
    }
}

/// JSON model file. `nu` is `n × M` for logit and `n × (M − 1)` for pure
/// characteristics, whose slopes live in the first column of `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub family: ModelFamily,
    #[serde(rename = "J")]
    pub products: usize,
    #[serde(rename = "M")]
    pub attributes: usize,
    #[serde(rename = "n")]
    pub consumers: usize,
    pub beta: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub nu: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(what: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::invalid(format!(
            "{what}: expected {nrows} rows, found {}",
            rows.len()
        )));
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::invalid(format!(
            "{what}: row {i} has {} entries, expected {ncols}",
            row.len()
        )));
    }
    Ok(DMatrix::from_row_iterator(nrows, ncols, rows.iter().flatten().copied()))
}

impl ModelFile {
    pub fn from_model(model: &AnyModel, seed: Option<u64>) -> Self {
        match model {
            AnyModel::Logit(m) => ModelFile {
                family: ModelFamily::Logit,
                products: m.products(),
                attributes: m.attributes(),
                consumers: m.consumers(),
                beta: m.beta().iter().copied().collect(),
                z: rows_of(m.z()),
                nu: rows_of(m.nu()),
                seed,
            },
            AnyModel::Purechar(m) => ModelFile {
                family: ModelFamily::Purechar,
                products: m.products(),
                attributes: m.attributes(),
                consumers: m.consumers(),
                beta: m.beta().iter().copied().collect(),
                z: rows_of(m.z()),
                nu: rows_of(m.nu_rest()),
                seed,
            },
        }
    }

    pub fn to_model(&self) -> Result<AnyModel> {
        let (j, m, n) = (self.products, self.attributes, self.consumers);
        if self.beta.len() != m {
            return Err(Error::invalid(format!(
                "beta: expected {m} entries, found {}",
                self.beta.len()
            )));
        }
        let z = matrix_from_rows("z", &self.z, j, m)?;
        let beta = DVector::from_vec(self.beta.clone());
        Ok(match self.family {
            ModelFamily::Logit => AnyModel::Logit(LogitMarket::new(z, matrix_from_rows("nu", &self.nu, n, m)?, beta)?),
            ModelFamily::Purechar => {
                if m < 2 {
                    return Err(Error::invalid("the pure characteristics family needs M ≥ 2"));
                }
                AnyModel::Purechar(PureCharMarket::new(
                    z,
                    matrix_from_rows("nu", &self.nu, n, m - 1)?,
                    beta,
                )?)
            }
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// Sidecar holding the true mean utilities and the shares they generate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub x_star: MeanUtility,
    pub sigma_star: ShareVector,
}

impl TruthFile {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

/// `model.json` → `model.truth.json`.
pub fn truth_path(model_path: &Path) -> PathBuf {
    sibling(model_path, "truth.json")
}

/// `out.json` → `out.<suffix>`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub const TRACE_HEADER: &str = "replication_id,method,iteration,error_maxnorm,welfare_evals,share_evals,jacobian_evals";

/// Long-form trace CSV, one row per trace entry, sorted by
/// `(method, replication_id, iteration)`.
pub fn trace_csv<'a>(results: impl IntoIterator<Item = (usize, &'a InversionResult)>) -> String {
    let mut rows: Vec<(usize, &InversionResult)> = results.into_iter().collect();
    rows.sort_by(|a, b| a.1.method.name().cmp(b.1.method.name()).then(a.0.cmp(&b.0)));
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for (replication, result) in rows {
        for (k, (err, counts)) in result.error_trace.iter().zip(&result.eval_trace).enumerate() {
            // `{:?}` prints the shortest decimal that round-trips.
            let _ = writeln!(
                out,
                "{replication},{},{k},{err:?},{},{},{}",
                result.method, counts.welfare, counts.shares, counts.jacobian
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logit::make_logit_instance;
    use crate::purechar::make_purechar_instance;
    use crate::solvers::{invert, Method, SolverConfig};

    #[test]
    fn model_file_round_trip_is_bit_exact() {
        let inst = make_logit_instance(4, 3, 25, 8).unwrap();
        let model = AnyModel::Logit(inst.market);
        let text = serde_json::to_string(&ModelFile::from_model(&model, Some(8))).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        let reloaded = back.to_model().unwrap();
        let a = model.evaluate(&inst.x_star, false).unwrap().shares;
        let b = reloaded.evaluate(&inst.x_star, false).unwrap().shares;
        assert_eq!(a, b);
        assert_eq!(a, inst.sigma_star);

        let pc = make_purechar_instance(3, 3, 10, 2).unwrap();
        let file = ModelFile::from_model(&AnyModel::Purechar(pc.market), None);
        assert_eq!(file.nu[0].len(), 2);
        assert!(!serde_json::to_string(&file).unwrap().contains("seed"));
        let back: ModelFile = serde_json::from_str(&serde_json::to_string(&file).unwrap()).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn shape_errors_are_reported() {
        let inst = make_logit_instance(2, 2, 3, 1).unwrap();
        let mut file = ModelFile::from_model(&AnyModel::Logit(inst.market), None);
        file.nu[1].pop();
        let err = file.to_model().unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
        let mut file2 = file.clone();
        file2.family = ModelFamily::Purechar;
        file2.attributes = 1;
        assert!(file2.to_model().is_err());
    }

    #[test]
    fn csv_rows_are_sorted_and_exact() {
        let inst = make_logit_instance(3, 2, 20, 5).unwrap();
        let x0 = MeanUtility::zeros(3);
        let cfg = SolverConfig::default().with_max_iterations(3);
        let a = invert(&inst.market, &inst.sigma_star, Method::ConvexTrustRegion, &x0, &cfg).unwrap();
        let b = invert(&inst.market, &inst.sigma_star, Method::Contraction, &x0, &cfg).unwrap();
        let csv = trace_csv([(1, &a), (0, &b), (0, &a)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TRACE_HEADER);
        assert!(lines[1].starts_with("0,contraction,0,"));
        let first_convex = lines.iter().position(|l| l.contains("convex_tr")).unwrap();
        assert!(lines[first_convex].starts_with("0,convex_tr,0,"));
        assert!(lines.last().unwrap().starts_with("1,convex_tr,"));
        let err: f64 = lines[1].split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(err, b.error_trace[0]);
    }

    #[test]
    fn sibling_paths() {
        assert_eq!(truth_path(Path::new("/tmp/m.json")), PathBuf::from("/tmp/m.truth.json"));
        assert_eq!(
            sibling(Path::new("out/res.json"), "trace.csv"),
            PathBuf::from("out/res.trace.csv")
        );
    }
}
