//! File formats: headerless CSV matrices, dataset manifests and certificate directories.

use crate::data_model::{NoiseModel, TrajectoryData};
use crate::error::{Error, Result};
use crate::informativity::{StabilizationCertificate, SynthesisWitness};
use crate::sim::Mode;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

/// Reads a comma-separated matrix without header.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{}: {s:?}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Parse(format!("{}: ragged rows", path.display())));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Noiseless,
    EnergyBound { q: f64 },
}

impl NoiseSpec {
    pub fn from_q(q: f64) -> Self {
        if q == 0.0 {
            Self::Noiseless
        } else {
            Self::EnergyBound { q }
        }
    }

    pub fn q(&self) -> f64 {
        match *self {
            Self::Noiseless => 0.0,
            Self::EnergyBound { q } => q,
        }
    }

    pub fn model(&self, n: usize, t: usize) -> Result<NoiseModel> {
        NoiseModel::energy_bound(self.q(), n, t)
    }
}

/// One mode of a dataset manifest. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEntry {
    /// `m × T` input matrix.
    pub inputs: PathBuf,
    /// `n × (T+1)` state matrix.
    pub states: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<usize>,
    /// True system matrices, used only by the bound analysis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub noise: NoiseSpec,
    pub modes: Vec<ModeEntry>,
}

/// Manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub manifest: DatasetManifest,
    pub base: PathBuf,
}

impl LoadedManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if manifest.modes.is_empty() {
            return Err(Error::Parse(format!("{}: manifest lists no modes", path.display())));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, base })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn datasets(&self) -> Result<Vec<TrajectoryData>> {
        self.manifest
            .modes
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let d = TrajectoryData::new(
                    read_matrix(&self.resolve(&e.inputs))?,
                    read_matrix(&self.resolve(&e.states))?,
                )?;
                if let Some(t) = e.t {
                    if t != d.len() {
                        return Err(Error::DimensionMismatch(format!(
                            "mode {}: manifest says T = {t}, data has {}",
                            i + 1,
                            d.len()
                        )));
                    }
                }
                Ok(d)
            })
            .collect()
    }

    pub fn noise_models(&self, data: &[TrajectoryData]) -> Result<Vec<NoiseModel>> {
        data.iter().map(|d| self.manifest.noise.model(d.n(), d.len())).collect()
    }

    /// True `(A_i, B_i)` of every mode; fails if any mode lacks them.
    pub fn truth(&self) -> Result<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
        self.manifest
            .modes
            .iter()
            .enumerate()
            .map(|(i, e)| match (&e.a, &e.b) {
                (Some(a), Some(b)) => Ok((read_matrix(&self.resolve(a))?, read_matrix(&self.resolve(b))?)),
                _ => Err(Error::Parse(format!("mode {} has no true system matrices", i + 1))),
            })
            .collect()
    }
}

/// Writes `U_i.csv`, `X_i.csv` (and `A_i.csv`, `B_i.csv` if given) plus `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, data: &[TrajectoryData], noise: NoiseSpec, truth: Option<&[Mode]>) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut modes = Vec::with_capacity(data.len());
    for (i, d) in data.iter().enumerate() {
        let k = i + 1;
        let entry = ModeEntry {
            inputs: PathBuf::from(format!("U_{k}.csv")),
            states: PathBuf::from(format!("X_{k}.csv")),
            t: Some(d.len()),
            a: truth.map(|_| PathBuf::from(format!("A_{k}.csv"))),
            b: truth.map(|_| PathBuf::from(format!("B_{k}.csv"))),
        };
        write_matrix(&dir.join(&entry.inputs), d.inputs())?;
        write_matrix(&dir.join(&entry.states), d.states())?;
        if let Some(ms) = truth {
            write_matrix(&dir.join(format!("A_{k}.csv")), &ms[i].a)?;
            write_matrix(&dir.join(format!("B_{k}.csv")), &ms[i].b)?;
        }
        modes.push(entry);
    }
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&DatasetManifest { noise, modes })?)?;
    Ok(path)
}

/// Reads an online record given as `inputs.csv,states.csv`.
pub fn read_online_pair(pair: &str) -> Result<TrajectoryData> {
    let (u, x) = pair
        .split_once(',')
        .ok_or_else(|| Error::Parse(format!("expected <inputs.csv>,<states.csv>, got {pair:?}")))?;
    let inputs = read_matrix(Path::new(u.trim()))?;
    let states = read_matrix(Path::new(x.trim()))?;
    if inputs.ncols() == 0 && states.ncols() > 0 {
        return Ok(TrajectoryData::initial(&states.column(0).into_owned(), inputs.nrows()));
    }
    TrajectoryData::new(inputs, states)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateEntry {
    /// 1-based mode index.
    pub mode: usize,
    pub gain: PathBuf,
    pub lyapunov: PathBuf,
    pub beta: f64,
    pub lmi_margin: f64,
    pub p_condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateSet {
    pub lambda: f64,
    pub modes: Vec<CertificateEntry>,
}

pub const CERTIFICATE_FILE: &str = "certificate.json";

/// Writes `K_i.csv`, `P_i.csv`, `Q_i.csv`, `L_i.csv` and `certificate.json` into `dir`.
pub fn write_certificates(dir: &Path, certs: &[StabilizationCertificate], lambda: f64) -> Result<CertificateSet> {
    fs::create_dir_all(dir)?;
    let mut modes = Vec::with_capacity(certs.len());
    for (i, c) in certs.iter().enumerate() {
        let k = i + 1;
        let entry = CertificateEntry {
            mode: k,
            gain: PathBuf::from(format!("K_{k}.csv")),
            lyapunov: PathBuf::from(format!("P_{k}.csv")),
            beta: c.witness.beta,
            lmi_margin: c.lmi_margin,
            p_condition: crate::linalg::max_eig(&c.lyapunov) / crate::linalg::min_eig(&c.lyapunov),
        };
        write_matrix(&dir.join(&entry.gain), &c.gain)?;
        write_matrix(&dir.join(&entry.lyapunov), &c.lyapunov)?;
        write_matrix(&dir.join(format!("Q_{k}.csv")), &c.witness.q)?;
        write_matrix(&dir.join(format!("L_{k}.csv")), &c.witness.l)?;
        modes.push(entry);
    }
    let set = CertificateSet { lambda, modes };
    fs::write(dir.join(CERTIFICATE_FILE), serde_json::to_string_pretty(&set)?)?;
    Ok(set)
}

/// Reads the certificates written by [`write_certificates`], ordered by mode.
pub fn read_certificates(dir: &Path) -> Result<Vec<StabilizationCertificate>> {
    let set: CertificateSet = serde_json::from_str(&fs::read_to_string(dir.join(CERTIFICATE_FILE))?)?;
    let mut entries = set.modes.clone();
    entries.sort_by_key(|e| e.mode);
    entries
        .iter()
        .map(|e| {
            let k = e.mode;
            let gain = read_matrix(&dir.join(&e.gain))?;
            let lyapunov = read_matrix(&dir.join(&e.lyapunov))?;
            let q = read_matrix(&dir.join(format!("Q_{k}.csv"))).unwrap_or_else(|_| DMatrix::zeros(0, 0));
            let l = read_matrix(&dir.join(format!("L_{k}.csv"))).unwrap_or_else(|_| DMatrix::zeros(0, 0));
            if !lyapunov.is_square() || gain.ncols() != lyapunov.nrows() {
                return Err(Error::DimensionMismatch(format!(
                    "mode {k}: K is {:?}, P is {:?}",
                    gain.shape(),
                    lyapunov.shape()
                )));
            }
            Ok(StabilizationCertificate {
                gain,
                lyapunov,
                decay: set.lambda,
                witness: SynthesisWitness { q, l, beta: e.beta },
                lmi_margin: e.lmi_margin,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("ddsc-io-{name}-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tmp("matrix");
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, 2.5e10, -0.0, 7.0]);
        write_matrix(&dir.join("m.csv"), &m).unwrap();
        assert_eq!(read_matrix(&dir.join("m.csv")).unwrap(), m);
        fs::write(dir.join("bad.csv"), "1,2\n3\n").unwrap();
        assert!(read_matrix(&dir.join("bad.csv")).is_err());
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tmp("manifest");
        let d = TrajectoryData::new(
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.5]),
        )
        .unwrap();
        let mode = Mode::new(DMatrix::from_row_slice(1, 1, &[0.5]), DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        let path =
            write_dataset(&dir, std::slice::from_ref(&d), NoiseSpec::from_q(0.01), Some(std::slice::from_ref(&mode)))
                .unwrap();
        let loaded = LoadedManifest::load(&path).unwrap();
        assert_eq!(loaded.datasets().unwrap(), vec![d]);
        assert_eq!(loaded.truth().unwrap(), vec![(mode.a, mode.b)]);
        assert_eq!(loaded.manifest.noise.q(), 0.01);
        fs::remove_dir_all(dir).ok();
    }
}
