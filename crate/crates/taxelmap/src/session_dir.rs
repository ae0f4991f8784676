//! Scan sessions on disk: `session.json` plus one robot and one
//! accelerometer CSV per pass.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taxelmap_core::scansim::{AccelSample, Direction, IntensityField, RobotSample, ScanConfig, ScanPass, ScanSession};
use thiserror::Error;

pub const MANIFEST: &str = "session.json";

#[derive(Debug, Error)]
pub enum SessionIoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: pass file name must be a plain file name")]
    BadFileName { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PassEntry {
    pub lane_index: u32,
    pub pass_index: u32,
    pub x_mm: f64,
    pub direction: Direction,
    pub robot: String,
    pub accel: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ScanConfig,
    /// Ground truth, present for simulated sessions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<IntensityField>,
    pub passes: Vec<PassEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SessionIoError + '_ {
    move |source| SessionIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), SessionIoError> {
    let csv_err = |source| SessionIoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SessionIoError> {
    let csv_err = |source| SessionIoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err)
}

/// Writes a session into `dir`, creating it if needed.
pub fn write_session(
    session: &ScanSession,
    field: Option<&IntensityField>,
    dir: impl AsRef<Path>,
) -> Result<(), SessionIoError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut passes = Vec::with_capacity(session.passes.len());
    for (k, p) in session.passes.iter().enumerate() {
        let entry = PassEntry {
            lane_index: p.lane_index,
            pass_index: p.pass_index,
            x_mm: p.x_mm,
            direction: p.direction,
            robot: format!("robot_{k:04}.csv"),
            accel: format!("accel_{k:04}.csv"),
        };
        write_csv(&dir.join(&entry.robot), &p.robot)?;
        write_csv(&dir.join(&entry.accel), &p.accel)?;
        passes.push(entry);
    }
    let manifest = Manifest {
        config: session.config.clone(),
        field: field.cloned(),
        passes,
    };
    let path = dir.join(MANIFEST);
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    fs::write(&path, json).map_err(io_err(&path))
}

fn pass_file(dir: &Path, name: &str) -> Result<PathBuf, SessionIoError> {
    let p = Path::new(name);
    if p.file_name() != Some(p.as_os_str()) {
        return Err(SessionIoError::BadFileName { path: p.to_path_buf() });
    }
    Ok(dir.join(p))
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest, SessionIoError> {
    let path = dir.as_ref().join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| SessionIoError::Json { path, source })
}

pub fn read_session(dir: impl AsRef<Path>) -> Result<(ScanSession, Option<IntensityField>), SessionIoError> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut passes = Vec::with_capacity(manifest.passes.len());
    for e in &manifest.passes {
        let robot: Vec<RobotSample> = read_csv(&pass_file(dir, &e.robot)?)?;
        let accel: Vec<AccelSample> = read_csv(&pass_file(dir, &e.accel)?)?;
        passes.push(ScanPass {
            lane_index: e.lane_index,
            pass_index: e.pass_index,
            x_mm: e.x_mm,
            direction: e.direction,
            robot,
            accel,
        });
    }
    Ok((
        ScanSession {
            config: manifest.config,
            passes,
        },
        manifest.field,
    ))
}
