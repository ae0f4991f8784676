//! Subcommand implementations behind the `taxelmap` binary.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use taxelmap_core::alignment::align_pass;
use taxelmap_core::geometry::{calibrate_planar, Calibration, CameraProjection, GeometryError};
use taxelmap_core::pipeline::{assemble_map, BuildConfig, MapBuild, PassReport, PipelineError};
use taxelmap_core::scansim::{simulate_session, ScanError, ScanSession};
use taxelmap_core::vibmap::{map_stats, MapError, MapStats};
use thiserror::Error;

use crate::calibration::{read_correspondences, read_projection, write_projection, CalibrationIoError};
use crate::client::ClientError;
use crate::config::{ConfigError, PipelineConfig};
use crate::mapfile::{read_map, write_map, write_preview_png, MapFileError};
use crate::server::ServerError;
use crate::session_dir::{read_session, write_session, SessionIoError};

#[derive(Debug, Error)]
pub enum CommandError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    SessionIo(#[from] SessionIoError),
    #[error(transparent)]
    CalibrationIo(#[from] CalibrationIoError),
    #[error("calibration failed: {0}")]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("{path}: {source}")]
    MapFile { path: PathBuf, source: MapFileError },
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CommandError {
    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) | CommandError::Scan(_) => 2,
            _ => 1,
        }
    }
}

fn map_file_err(path: &Path) -> impl FnOnce(MapFileError) -> CommandError + '_ {
    move |source| CommandError::MapFile {
        path: path.to_path_buf(),
        source,
    }
}

/// Simulates a scan session into `out_dir`.
pub fn simulate(cfg: &PipelineConfig, out_dir: &Path) -> Result<ScanSession, CommandError> {
    cfg.validate()?;
    let session = simulate_session(&cfg.field, &cfg.scan)?;
    write_session(&session, Some(&cfg.field), out_dir)?;
    info!(
        "wrote {} passes ({} lanes) to {}",
        session.passes.len(),
        cfg.scan.lanes,
        out_dir.display()
    );
    Ok(session)
}

/// Fits a projection to a correspondence CSV and writes it as JSON.
pub fn calibrate(points: &Path, out: &Path) -> Result<Calibration, CommandError> {
    let pts = read_correspondences(points)?;
    let cal = calibrate_planar(&pts)?;
    write_projection(&cal, out)?;
    info!("{} points, reprojection rmse {:.6} px", pts.len(), cal.rmse_px);
    Ok(cal)
}

/// Aligns every pass, in parallel, keeping session order.
pub fn align_parallel(session: &ScanSession, w: f64) -> Vec<PassReport> {
    let l = session.config.y_len_mm;
    session
        .passes
        .par_iter()
        .map(|p| PassReport {
            lane_index: p.lane_index,
            pass_index: p.pass_index,
            result: align_pass(p, l, w),
        })
        .collect()
}

/// Same result as the sequential pipeline; assembly order is fixed.
pub fn build_map_parallel(
    session: &ScanSession,
    proj: &CameraProjection,
    cfg: &BuildConfig,
) -> Result<MapBuild, PipelineError> {
    assemble_map(align_parallel(session, cfg.w), proj, cfg)
}

fn log_passes(passes: &[PassReport]) {
    for p in passes {
        match &p.result {
            Ok(a) => info!(
                "lane {} pass {}: fit rmse {:.6} mm, slope {:.4} mm/s, {} samples",
                p.lane_index,
                p.pass_index,
                a.fit.rmse_mm,
                a.fit.m,
                a.samples.len()
            ),
            Err(e) => warn!("lane {} pass {} rejected: {e}", p.lane_index, p.pass_index),
        }
    }
}

/// Builds a normalized map from a session directory and a projection file.
pub fn buildmap(
    session_dir: &Path,
    projection: &Path,
    cfg: &BuildConfig,
    out_map: &Path,
    out_png: Option<&Path>,
) -> Result<MapBuild, CommandError> {
    let (session, _) = read_session(session_dir)?;
    let cal = read_projection(projection)?;
    let reports = align_parallel(&session, cfg.w);
    log_passes(&reports);
    let build = assemble_map(reports, &cal.projection, cfg)?;
    let rejected = build.rejected().count();
    if rejected > 0 {
        warn!("{rejected} of {} passes rejected", build.passes.len());
    }
    info!("rejected passes: {rejected}");
    write_map(&build.map, out_map).map_err(map_file_err(out_map))?;
    if let Some(png) = out_png {
        write_preview_png(&build.map, png).map_err(map_file_err(png))?;
    }
    info!(
        "map {}x{}, {} touched pixels -> {}",
        build.map.width(),
        build.map.height(),
        build.map.touched_count(),
        out_map.display()
    );
    Ok(build)
}

pub fn stats(map_path: &Path) -> Result<MapStats, CommandError> {
    let map = read_map(map_path).map_err(map_file_err(map_path))?;
    Ok(map_stats(&map)?)
}
