//! Interchange formats.
//!
//! Bundles, fused models and ground truths are JSON; datasets are headed CSV.
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! write followed by a read reproduces every parameter bit for bit. Matrices
//! are row-major nested arrays; SPD matrices are stored in full and validated
//! on read.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::expfam::{DiagGaussian, Dirichlet, ExpFamComponent, Family, NormalWishart, PosteriorBundle};
use crate::synthgen::{GroundTruth, SynthConfig};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagGaussianRecord {
    mean: Vec<f64>,
    variance: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DirichletRecord {
    alpha: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalWishartRecord {
    mean: Vec<f64>,
    kappa: f64,
    scale: Vec<Vec<f64>>,
    dof: f64,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], field: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Shape(format!("{field} must be a square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn component_to_json(c: &ExpFamComponent) -> Value {
    let v = match c {
        ExpFamComponent::DiagGaussian(g) => serde_json::to_value(DiagGaussianRecord {
            mean: g.mean().to_vec(),
            variance: g.variance().to_vec(),
        }),
        ExpFamComponent::Dirichlet(d) => serde_json::to_value(DirichletRecord {
            alpha: d.alpha().to_vec(),
        }),
        ExpFamComponent::NormalWishart(nw) => serde_json::to_value(NormalWishartRecord {
            mean: nw.mean().iter().copied().collect(),
            kappa: nw.kappa(),
            scale: matrix_rows(nw.scale()),
            dof: nw.dof(),
        }),
    };
    v.expect("plain records always serialize")
}

pub fn component_from_json(family: Family, dim: usize, value: &Value) -> Result<ExpFamComponent> {
    let parse_err = |e: serde_json::Error| Error::Value(format!("malformed {family} record: {e}"));
    let c: ExpFamComponent = match family {
        Family::DiagGaussian => {
            let r: DiagGaussianRecord = serde_json::from_value(value.clone()).map_err(parse_err)?;
            DiagGaussian::new(r.mean, r.variance)?.into()
        }
        Family::Dirichlet => {
            let r: DirichletRecord = serde_json::from_value(value.clone()).map_err(parse_err)?;
            Dirichlet::new(r.alpha)?.into()
        }
        Family::NormalWishart => {
            let r: NormalWishartRecord = serde_json::from_value(value.clone()).map_err(parse_err)?;
            let scale = matrix_from_rows(&r.scale, "scale")?;
            NormalWishart::new(DVector::from_vec(r.mean), r.kappa, scale, r.dof)?.into()
        }
    };
    if c.dim() != dim {
        return Err(Error::Shape(format!("component has dimension {} but the file declares {dim}", c.dim())));
    }
    Ok(c)
}

fn components_from_json(family: Family, dim: usize, values: &[Value], what: &str) -> Result<Vec<ExpFamComponent>> {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            component_from_json(family, dim, v).map_err(|e| Error::Value(format!("{what} component {i}: {e}")))
        })
        .collect()
}

fn family_and_dim<'a>(mut comps: impl Iterator<Item = &'a ExpFamComponent>) -> Result<(Family, usize)> {
    let first = comps
        .next()
        .ok_or_else(|| Error::Empty("nothing to serialize: no components".into()))?;
    for c in comps {
        first.check_compatible(c)?;
    }
    Ok((first.family(), first.dim()))
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Value(format!("unsupported format version {v}")));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    id: String,
    components: Vec<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleFile {
    version: u32,
    family: Family,
    dim: usize,
    datasets: Vec<DatasetRecord>,
}

pub fn bundles_to_json(bundles: &[PosteriorBundle]) -> Result<String> {
    let (family, dim) = family_and_dim(bundles.iter().flat_map(|b| b.components.iter()))?;
    let file = BundleFile {
        version: FORMAT_VERSION,
        family,
        dim,
        datasets: bundles
            .iter()
            .map(|b| DatasetRecord {
                id: b.id.clone(),
                components: b.components.iter().map(component_to_json).collect(),
                weights: b.weights.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Internal(e.to_string()))
}

pub fn bundles_from_json(text: &str) -> Result<Vec<PosteriorBundle>> {
    let file: BundleFile = serde_json::from_str(text).map_err(|e| Error::Value(format!("malformed bundle file: {e}")))?;
    check_version(file.version)?;
    file.datasets
        .iter()
        .map(|d| {
            let components = components_from_json(file.family, file.dim, &d.components, &format!("dataset {:?}", d.id))?;
            if let Some(w) = &d.weights {
                if w.len() != components.len() || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(Error::Value(format!("dataset {:?}: invalid weights", d.id)));
                }
            }
            Ok(PosteriorBundle {
                id: d.id.clone(),
                components,
                weights: d.weights.clone(),
            })
        })
        .collect()
}

/// A fused global model as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedModel {
    pub components: Vec<ExpFamComponent>,
    pub usage: Vec<usize>,
    pub dataset_ids: Vec<String>,
    /// Per dataset, the global index of each local component.
    pub assignments: Vec<Vec<usize>>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub mode: String,
    pub lambda: f64,
    pub seed: u64,
    /// Wall-clock seconds spent in fusion.
    pub wall_seconds: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FusedModelFile {
    version: u32,
    family: Family,
    dim: usize,
    components: Vec<Value>,
    usage: Vec<usize>,
    dataset_ids: Vec<String>,
    assignments: Vec<Vec<usize>>,
    objective_trace: Vec<f64>,
    iterations: usize,
    mode: String,
    lambda: f64,
    seed: u64,
    wall_seconds: f64,
}

pub fn fused_model_to_json(m: &FusedModel) -> Result<String> {
    let (family, dim) = family_and_dim(m.components.iter())?;
    let file = FusedModelFile {
        version: FORMAT_VERSION,
        family,
        dim,
        components: m.components.iter().map(component_to_json).collect(),
        usage: m.usage.clone(),
        dataset_ids: m.dataset_ids.clone(),
        assignments: m.assignments.clone(),
        objective_trace: m.objective_trace.clone(),
        iterations: m.iterations,
        mode: m.mode.clone(),
        lambda: m.lambda,
        seed: m.seed,
        wall_seconds: m.wall_seconds,
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Internal(e.to_string()))
}

pub fn fused_model_from_json(text: &str) -> Result<FusedModel> {
    let f: FusedModelFile = serde_json::from_str(text).map_err(|e| Error::Value(format!("malformed model file: {e}")))?;
    check_version(f.version)?;
    let components = components_from_json(f.family, f.dim, &f.components, "global")?;
    if f.usage.len() != components.len() || f.assignments.len() != f.dataset_ids.len() {
        return Err(Error::Consistency("model file lengths disagree".into()));
    }
    if f.assignments.iter().flatten().any(|&g| g >= components.len()) {
        return Err(Error::Consistency("assignment refers to a missing global component".into()));
    }
    Ok(FusedModel {
        components,
        usage: f.usage,
        dataset_ids: f.dataset_ids,
        assignments: f.assignments,
        objective_trace: f.objective_trace,
        iterations: f.iterations,
        mode: f.mode,
        lambda: f.lambda,
        seed: f.seed,
        wall_seconds: f.wall_seconds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfigRecord {
    #[serde(rename = "G")]
    pub n_global: usize,
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "J")]
    pub n_datasets: usize,
    pub n: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inclusion: Option<f64>,
}

impl From<&SynthConfig> for SynthConfigRecord {
    fn from(c: &SynthConfig) -> Self {
        Self {
            n_global: c.n_global,
            dim: c.dim,
            n_datasets: c.n_datasets,
            n: c.n_per_dataset,
            separation: c.separation,
            noise: c.noise,
            seed: c.seed,
            inclusion: c.inclusion_override,
        }
    }
}

impl From<&SynthConfigRecord> for SynthConfig {
    fn from(r: &SynthConfigRecord) -> Self {
        Self {
            n_global: r.n_global,
            dim: r.dim,
            n_datasets: r.n_datasets,
            n_per_dataset: r.n,
            separation: r.separation,
            noise: r.noise,
            seed: r.seed,
            inclusion_override: r.inclusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthDataset {
    pub id: String,
    /// Ground-truth component indices present in this dataset.
    pub subset: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub config: SynthConfig,
    pub ground_truth: GroundTruth,
    pub datasets: Vec<TruthDataset>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TruthFile {
    version: u32,
    config: SynthConfigRecord,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    inclusion: Vec<f64>,
    datasets: Vec<TruthDataset>,
}

pub fn truth_to_json(t: &Truth) -> Result<String> {
    let file = TruthFile {
        version: FORMAT_VERSION,
        config: SynthConfigRecord::from(&t.config),
        means: t.ground_truth.means.iter().map(|m| m.iter().copied().collect()).collect(),
        covariances: t.ground_truth.covariances.iter().map(matrix_rows).collect(),
        inclusion: t.ground_truth.inclusion.clone(),
        datasets: t.datasets.clone(),
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::Internal(e.to_string()))
}

pub fn truth_from_json(text: &str) -> Result<Truth> {
    let f: TruthFile = serde_json::from_str(text).map_err(|e| Error::Value(format!("malformed truth file: {e}")))?;
    check_version(f.version)?;
    let config = SynthConfig::from(&f.config);
    let g = f.means.len();
    if g == 0 || f.covariances.len() != g || f.inclusion.len() != g {
        return Err(Error::Consistency("truth file lengths disagree".into()));
    }
    let d = f.means[0].len();
    if f.means.iter().any(|m| m.len() != d || m.iter().any(|v| !v.is_finite())) {
        return Err(Error::Value("truth means must be finite and share one dimension".into()));
    }
    let covariances = f
        .covariances
        .iter()
        .map(|c| {
            let m = matrix_from_rows(c, "covariance")?;
            if m.nrows() != d {
                return Err(Error::Shape("covariance dimension disagrees with means".into()));
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    if f.datasets.iter().flat_map(|d| &d.subset).any(|&k| k >= g) {
        return Err(Error::Consistency("dataset subset refers to a missing component".into()));
    }
    Ok(Truth {
        config,
        ground_truth: GroundTruth {
            means: f.means.into_iter().map(DVector::from_vec).collect(),
            covariances,
            inclusion: f.inclusion,
        },
        datasets: f.datasets,
    })
}

pub fn data_to_csv(data: &DMatrix<f64>) -> String {
    let mut out = (0..data.ncols()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for row in data.row_iter() {
        out.push_str(&row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

pub fn data_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let d = reader
        .headers()
        .map_err(|e| Error::Value(format!("malformed CSV header: {e}")))?
        .len();
    let mut values = Vec::new();
    let mut n = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Value(format!("malformed CSV row {}: {e}", i + 1)))?;
        if record.len() != d {
            return Err(Error::Shape(format!("CSV row {} has {} fields instead of {d}", i + 1, record.len())));
        }
        for field in record.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Value(format!("CSV row {}: {field:?} is not a number", i + 1)))?;
            if !v.is_finite() {
                return Err(Error::domain(format!("row {}", i + 1), "non-finite value"));
            }
            values.push(v);
        }
        n += 1;
    }
    if n == 0 || d == 0 {
        return Err(Error::Empty("CSV has no data rows".into()));
    }
    Ok(DMatrix::from_row_slice(n, d, &values))
}

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_bundles(path: &Path) -> anyhow::Result<Vec<PosteriorBundle>> {
    let bundles = bundles_from_json(&read_text(path)?).with_context(|| format!("{}", path.display()))?;
    if bundles.is_empty() {
        bail!("{}: bundle file has no datasets", path.display());
    }
    Ok(bundles)
}

pub fn read_fused_model(path: &Path) -> anyhow::Result<FusedModel> {
    fused_model_from_json(&read_text(path)?).with_context(|| format!("{}", path.display()))
}

pub fn read_truth(path: &Path) -> anyhow::Result<Truth> {
    truth_from_json(&read_text(path)?).with_context(|| format!("{}", path.display()))
}

pub fn read_data(path: &Path) -> anyhow::Result<DMatrix<f64>> {
    data_from_csv(&read_text(path)?).with_context(|| format!("{}", path.display()))
}
