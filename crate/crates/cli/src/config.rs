use std::path::Path;

use serde::{Deserialize, Serialize};
use ssmaxwell_core::kernel_quadrature::{build_quadrature, KernelProfile, KernelSpec, SphereQuadrature};
use ssmaxwell_core::spectral_field::GridGeometry;
use ssmaxwell_core::{DeformationMatrix, Error, Result, SymMatrix};

/// Experiment configuration. Every field is optional; command-line flags win.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub dim: Option<usize>,
    /// "isotropic", "bump(center,width)" or "csv:PATH".
    pub kernel: Option<String>,
    pub quad_resolution: Option<usize>,
    /// Deformation matrix, row-major nested arrays.
    pub matrix: Option<Vec<Vec<f64>>>,
    pub p_values: Option<Vec<f64>>,
    pub n_axis: Option<usize>,
    pub r_max: Option<f64>,
    pub p: Option<f64>,
    pub tol: Option<f64>,
    pub t_max: Option<f64>,
    pub n_tau: Option<usize>,
    pub max_iter: Option<usize>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub times: Option<Vec<f64>>,
    /// Initial covariance, row-major nested arrays.
    pub b0: Option<Vec<Vec<f64>>>,
    pub u0: Option<Vec<f64>>,
    /// Cosine modulation U in the stability initial datum G_C(k)·cos(U·k), C = B0 - UUᵀ.
    pub modulation: Option<Vec<f64>>,
    pub m_max: Option<u32>,
    pub radius: Option<f64>,
    pub particles: Option<usize>,
    pub record_every: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn dim(&self) -> Result<usize> {
        let d = self.dim.unwrap_or(3);
        if d != 2 && d != 3 {
            return Err(Error::UnsupportedDimension(d));
        }
        Ok(d)
    }

    pub fn kernel(&self) -> Result<(KernelSpec, SphereQuadrature)> {
        let d = self.dim()?;
        let res = self.quad_resolution.unwrap_or(if d == 3 { 12 } else { 64 });
        let quad = build_quadrature(d, res)?;
        let name = self.kernel.as_deref().unwrap_or("isotropic");
        let profile = match name.strip_prefix("csv:") {
            Some(path) => KernelProfile::from_csv_str(&std::fs::read_to_string(path)?)?,
            None => KernelProfile::parse(name)?,
        };
        let spec = KernelSpec::new(d, profile, &quad)?;
        Ok((spec, quad))
    }

    pub fn matrix(&self) -> Result<DeformationMatrix> {
        let d = self.dim()?;
        match &self.matrix {
            None => Ok(DeformationMatrix::zeros(d)),
            Some(rows) => DeformationMatrix::from_rows(d, &flatten(rows, d, "matrix")?),
        }
    }

    pub fn b0(&self) -> Result<Option<SymMatrix>> {
        let d = self.dim()?;
        self.b0.as_ref().map(|rows| SymMatrix::from_rows(d, &flatten(rows, d, "b0")?)).transpose()
    }

    pub fn vector(&self, v: &Option<Vec<f64>>, what: &str) -> Result<Vec<f64>> {
        let d = self.dim()?;
        match v {
            None => Ok(vec![0.0; d]),
            Some(x) if x.len() == d => Ok(x.clone()),
            Some(x) => Err(Error::InvalidArgument(format!("{what} has {} entries, expected {d}", x.len()))),
        }
    }

    pub fn geometry(&self) -> Result<GridGeometry> {
        let d = self.dim()?;
        let def = GridGeometry::default_for(d)?;
        GridGeometry::new(d, self.n_axis.unwrap_or(def.n_axis), self.r_max.unwrap_or(def.r_max))
    }
}

fn flatten(rows: &[Vec<f64>], d: usize, what: &str) -> Result<Vec<f64>> {
    if rows.len() != d || rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument(format!("{what} must be {d}x{d}")));
    }
    Ok(rows.concat())
}

/// Reads a matrix file: either a bare nested array or an object with a "matrix" key.
pub fn read_matrix_file(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let m = match v.get("matrix") {
        Some(inner) => inner.clone(),
        None => v,
    };
    serde_json::from_value(m).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_lists_every_field() {
        let schema: serde_json::Value =
            serde_json::from_str(include_str!("../config.schema.json")).unwrap();
        let mut documented: Vec<String> = schema["properties"].as_object().unwrap().keys().cloned().collect();
        let mut fields: Vec<String> =
            serde_json::to_value(Config::default()).unwrap().as_object().unwrap().keys().cloned().collect();
        documented.sort();
        fields.sort();
        assert_eq!(documented, fields);
    }
}
