use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use taxelmap::client::{replay, ReplayOptions, TrajectoryScript};
use taxelmap::commands::{self, CommandError};
use taxelmap::config::{ConfigError, PipelineConfig};
use taxelmap::server::{Server, TextureStore};
use taxelmap_core::vibmap::MapStats;

/// Vibration map pipeline: simulate, calibrate, build, inspect, serve, replay.
#[derive(Debug, Parser)]
#[command(name = "taxelmap", version)]
struct Cli {
    /// JSON pipeline configuration; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scan session into a directory.
    Simulate {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a camera projection to world/pixel correspondences.
    Calibrate {
        /// CSV with header x_mm,y_mm,u_px,v_px.
        #[arg(long, value_name = "CSV")]
        points: PathBuf,
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
    },
    /// Build a vibration map from a session directory.
    Buildmap(BuildArgs),
    /// Print raw map statistics as CSV.
    Stats {
        map: PathBuf,
        /// Also write the CSV here.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Serve textures to clients.
    Serve(ServeArgs),
    /// Replay a contact script against a server and record the trace.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long, value_name = "DIR")]
    session: PathBuf,
    #[arg(long, value_name = "JSON")]
    projection: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, value_name = "FILE")]
    png: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    w: Option<f64>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, value_name = "DIR")]
    textures: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, conflicts_with = "no_ws")]
    ws_port: Option<u16>,
    /// Disable the WebSocket listener.
    #[arg(long)]
    no_ws: bool,
    #[arg(long, value_name = "HZ")]
    f_out: Option<f64>,
    #[arg(long)]
    frame_len: Option<usize>,
    #[arg(long, value_name = "MM")]
    d_ref: Option<f64>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    #[arg(long, value_name = "HOST:PORT")]
    server: String,
    #[arg(long)]
    texture: u16,
    /// CSV with header t,u,v,depth_mm.
    #[arg(long, value_name = "FILE")]
    script: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Send contacts without real-time pacing.
    #[arg(long)]
    accelerated: bool,
    #[arg(long, value_name = "FILE")]
    svg: Option<PathBuf>,
    /// Release contact time; extends the trace past the last script row.
    #[arg(long, value_name = "S")]
    end_t: Option<f64>,
}

fn run(cli: Cli) -> Result<(), CommandError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Simulate { out, seed } => {
            if let Some(s) = seed {
                cfg.scan.seed = s;
            }
            commands::simulate(&cfg, &out)?;
        }
        Command::Calibrate { points, out } => {
            commands::calibrate(&points, &out)?;
        }
        Command::Buildmap(a) => {
            let b = &mut cfg.build;
            b.width_px = a.width.unwrap_or(b.width_px);
            b.height_px = a.height.unwrap_or(b.height_px);
            b.w = a.w.unwrap_or(b.w);
            cfg.validate()?;
            commands::buildmap(&a.session, &a.projection, &cfg.build, &a.out, a.png.as_deref())?;
        }
        Command::Stats { map, out } => {
            let st = commands::stats(&map)?;
            let text = format!("{}\n{}\n", MapStats::CSV_HEADER, st.csv_line());
            print!("{text}");
            if let Some(out) = out {
                std::fs::write(out, text)?;
            }
        }
        Command::Serve(a) => {
            let s = &mut cfg.server;
            if let Some(d) = a.textures {
                s.texture_dir = d;
            }
            if let Some(b) = a.bind {
                s.bind = b;
            }
            s.tcp_port = a.port.unwrap_or(s.tcp_port);
            if a.no_ws {
                s.ws_port = None;
            } else if a.ws_port.is_some() {
                s.ws_port = a.ws_port;
            }
            s.f_out_hz = a.f_out.unwrap_or(s.f_out_hz);
            s.frame_len = a.frame_len.unwrap_or(s.frame_len);
            s.d_ref_mm = a.d_ref.unwrap_or(s.d_ref_mm);
            cfg.validate()?;
            let store = TextureStore::load_dir(&cfg.server.texture_dir)?;
            if store.is_empty() {
                return Err(ConfigError::Invalid(format!(
                    "no .vibmap files in {}",
                    cfg.server.texture_dir.display()
                ))
                .into());
            }
            let server = Server::bind(cfg.server.clone(), store)?;
            log::info!("binary protocol on {}", server.tcp_addr()?);
            if let Some(ws) = server.ws_addr() {
                log::info!("websocket json on {ws}");
            }
            server.run()?;
        }
        Command::Replay(a) => {
            let script = TrajectoryScript::read_csv(&a.script)?;
            let opts = ReplayOptions {
                accelerated: a.accelerated,
                end_t: a.end_t,
                ..ReplayOptions::default()
            };
            let r = replay(a.server.as_str(), a.texture, &script, &opts)?;
            r.trace.write_csv(&a.out)?;
            if let Some(svg) = a.svg {
                r.trace.write_svg(svg)?;
            }
            log::info!("{} frames, {} samples -> {}", r.frames.len(), r.trace.len(), a.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
