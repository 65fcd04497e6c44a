//! On-disk dataset directories.
//!
//! A dataset directory holds `dataset.json` (the simulation config and the
//! scalars needed to rebuild the forward model), `f.grd`, `v.grd`,
//! `u_gt.grd`, `u_deformed.grd` and `phi_gt.json`.

use std::fs;
use std::path::Path;

use jointrecon::simulate::{Dataset, DeformationSpec, SimulationConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::grd;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub simulation: SimulationConfig,
    pub scale: f64,
    pub background: f64,
    pub generator: String,
}

/// Ground-truth deformation; `params` is absent for non-affine ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiGt {
    pub deformation: DeformationSpec,
    pub params: Option<Vec<f64>>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    grd::write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    if !path.exists() {
        return Err(CliError::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format { path: path.to_path_buf(), reason: e.to_string() })
}

pub fn save(dir: &Path, ds: &Dataset) -> CliResult<()> {
    let meta = DatasetMeta {
        simulation: ds.config.clone(),
        scale: ds.scale,
        background: ds.background,
        generator: format!("jointrecon {}", env!("CARGO_PKG_VERSION")),
    };
    grd::write(&dir.join("f.grd"), &ds.f)?;
    grd::write(&dir.join("v.grd"), &ds.v)?;
    grd::write(&dir.join("u_gt.grd"), &ds.u_gt)?;
    grd::write(&dir.join("u_deformed.grd"), &ds.u_deformed)?;
    let phi = PhiGt { deformation: ds.config.deformation.clone(), params: ds.phi_gt().map(|a| a.0.to_vec()) };
    write_json(&dir.join("phi_gt.json"), &phi)?;
    write_json(&dir.join("dataset.json"), &meta)
}

pub fn load(dir: &Path) -> CliResult<Dataset> {
    let meta: DatasetMeta = read_json(&dir.join("dataset.json"))?;
    let ds = Dataset {
        config: meta.simulation,
        f: grd::read(&dir.join("f.grd"))?,
        scale: meta.scale,
        v: grd::read(&dir.join("v.grd"))?,
        u_gt: grd::read(&dir.join("u_gt.grd"))?,
        u_deformed: grd::read(&dir.join("u_deformed.grd"))?,
        background: meta.background,
    };
    let expected = ds.config.operator.build(ds.target_geometry(), 1.0)?.data_len();
    if ds.f.values().len() != expected {
        return Err(CliError::Format {
            path: dir.join("f.grd"),
            reason: format!("{} data values, the operator produces {expected}", ds.f.values().len()),
        });
    }
    Ok(ds)
}
