//! Correspondence CSV (`x_mm,y_mm,u_px,v_px`) and projection JSON files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use taxelmap_core::geometry::{
    Calibration, CameraProjection, Correspondence, GeometryError, PixelPoint, WorldPoint,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibrationIoError {
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
    #[error("{path}: {source}")]
    Geometry { path: PathBuf, source: GeometryError },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct Row {
    x_mm: f64,
    y_mm: f64,
    u_px: f64,
    v_px: f64,
}

pub fn read_correspondences(path: impl AsRef<Path>) -> Result<Vec<Correspondence>, CalibrationIoError> {
    let path = path.as_ref();
    let csv_err = |source| CalibrationIoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize::<Row>()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            Ok(Correspondence {
                world: WorldPoint::new(row.x_mm, row.y_mm),
                pixel: PixelPoint::new(row.u_px, row.v_px),
            })
        })
        .collect()
}

pub fn write_correspondences(points: &[Correspondence], path: impl AsRef<Path>) -> Result<(), CalibrationIoError> {
    let path = path.as_ref();
    let csv_err = |source| CalibrationIoError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for c in points {
        w.serialize(Row {
            x_mm: c.world.x_mm,
            y_mm: c.world.y_mm,
            u_px: c.pixel.u_px,
            v_px: c.pixel.v_px,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| CalibrationIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// On-disk projection: row-major homography with its reprojection RMSE.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionFile {
    pub h: [f64; 9],
    pub rmse_px: f64,
}

impl From<&Calibration> for ProjectionFile {
    fn from(c: &Calibration) -> Self {
        Self {
            h: c.projection.to_row_major(),
            rmse_px: c.rmse_px,
        }
    }
}

pub fn write_projection(cal: &Calibration, path: impl AsRef<Path>) -> Result<(), CalibrationIoError> {
    let path = path.as_ref();
    let mut json = serde_json::to_string_pretty(&ProjectionFile::from(cal)).expect("projection serializes");
    json.push('\n');
    fs::write(path, json).map_err(|source| CalibrationIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_projection(path: impl AsRef<Path>) -> Result<Calibration, CalibrationIoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CalibrationIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let f: ProjectionFile = serde_json::from_str(&text).map_err(|source| CalibrationIoError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let projection = CameraProjection::from_row_major(f.h).map_err(|source| CalibrationIoError::Geometry {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Calibration {
        projection,
        rmse_px: f.rmse_px,
    })
}
