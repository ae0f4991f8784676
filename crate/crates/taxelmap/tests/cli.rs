use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use taxelmap::calibration::write_correspondences;
use taxelmap::mapfile::read_map;
use taxelmap::session_dir::read_manifest;
use taxelmap_core::geometry::{Correspondence, PixelPoint, WorldPoint};

fn taxelmap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taxelmap"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

const CONFIG: &str = r#"{
  "scan": { "lanes": 5, "passes_per_lane": 2, "noise_sigma_g": 0.0 },
  "field": { "kind": "constant", "value": 0.0 },
  "build": { "width_px": 200, "height_px": 400 }
}"#;

/// 8 px/mm with a 20 px margin, sampled on a 4 × 3 grid.
fn write_points(path: &Path) {
    let pts: Vec<Correspondence> = (0..12)
        .map(|i| {
            let (x, y) = ((i % 4) as f64 * 3.0, (i / 4) as f64 * 20.0);
            Correspondence {
                world: WorldPoint::new(x, y),
                pixel: PixelPoint::new(8.0 * x + 20.0, 8.0 * y + 20.0),
            }
        })
        .collect();
    write_correspondences(&pts, path).unwrap();
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn flat_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("cfg.json"), CONFIG).unwrap();
    write_points(&d.join("pts.csv"));

    ok(&taxelmap(d, &["--config", "cfg.json", "simulate", "--out", "s1"]));
    ok(&taxelmap(d, &["--config", "cfg.json", "simulate", "--out", "s2"]));
    assert_eq!(dir_bytes(&d.join("s1")), dir_bytes(&d.join("s2")));
    let robot = fs::read_to_string(d.join("s1/accel_0000.csv")).unwrap();
    assert!(robot.lines().skip(1).all(|l| l.ends_with(",1.0")));

    ok(&taxelmap(d, &["calibrate", "--points", "pts.csv", "--out", "proj.json"]));
    let proj: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("proj.json")).unwrap()).unwrap();
    assert_eq!(proj["h"].as_array().unwrap().len(), 9);
    assert!(proj["rmse_px"].as_f64().unwrap() <= 1e-6);

    let out = taxelmap(
        d,
        &["--config", "cfg.json", "buildmap", "--session", "s1", "--projection", "proj.json", "--out", "m.vibmap", "--png", "m.png"],
    );
    ok(&out);
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("rejected passes: 0"), "{log}");
    assert!(log.contains("fit rmse"));
    assert!(out.stdout.is_empty());
    assert!(d.join("m.png").is_file());
    let map = read_map(d.join("m.vibmap")).unwrap();
    assert_eq!((map.width(), map.height()), (200, 400));

    let out = taxelmap(d, &["stats", "m.vibmap"]);
    ok(&out);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "v_scale,v_mean,v_std\n0.000,0.000,0.000\n");
}

#[test]
fn shuffled_pass_is_rejected_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("cfg.json"), CONFIG).unwrap();
    write_points(&d.join("pts.csv"));
    ok(&taxelmap(d, &["--config", "cfg.json", "simulate", "--out", "s"]));
    ok(&taxelmap(d, &["calibrate", "--points", "pts.csv", "--out", "proj.json"]));

    let manifest = read_manifest(d.join("s")).unwrap();
    let victim = d.join("s").join(&manifest.passes[3].robot);
    let text = fs::read_to_string(&victim).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines.swap(5, 40);
    fs::write(&victim, lines.join("\n") + "\n").unwrap();

    let out = taxelmap(
        d,
        &["--config", "cfg.json", "buildmap", "--session", "s", "--projection", "proj.json", "--out", "m.vibmap"],
    );
    ok(&out);
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("rejected passes: 1"), "{log}");
    assert!(log.contains("lane 1 pass 1 rejected"), "{log}");
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.json"), r#"{"scan": {"lanes": 0}}"#).unwrap();
    fs::write(d.join("typo.json"), r#"{"scann": {}}"#).unwrap();
    for cfg in ["bad.json", "typo.json", "missing.json"] {
        let out = taxelmap(d, &["--config", cfg, "simulate", "--out", "s"]);
        assert_eq!(out.status.code(), Some(2), "{cfg}");
    }
    let out = taxelmap(d, &["simulate", "--out", "s", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("s").exists());
    let out = taxelmap(d, &["buildmap", "--session", "s", "--projection", "p", "--out", "m", "--w", "0.7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn every_subcommand_has_help() {
    let tmp = tempfile::tempdir().unwrap();
    for sub in ["simulate", "calibrate", "buildmap", "stats", "serve", "replay"] {
        let out = taxelmap(tmp.path(), &[sub, "--help"]);
        ok(&out);
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn serve_and_replay_commands() {
    use std::io::{BufRead, BufReader};
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::create_dir(d.join("tex")).unwrap();
    let g = taxelmap_core::Grid::from_fn(50, 50, |x, _| x as f32);
    let raw = taxelmap_core::vibmap::VibrationMap::from_raw(g, vec![true; 2500]).unwrap();
    taxelmap::mapfile::write_map(&taxelmap_core::vibmap::normalize(&raw), d.join("tex/ramp.vibmap")).unwrap();
    fs::write(d.join("script.csv"), "t,u,v,depth_mm\n0,0,0.5,1\n0.1,0.5,0.5,1\n0.2,1,0.5,1\n").unwrap();

    let mut child = Command::new(env!("CARGO_BIN_EXE_taxelmap"))
        .current_dir(d)
        .args(["serve", "--textures", "tex", "--port", "0", "--no-ws"])
        .env("RUST_LOG", "info")
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(rest) = line.split("binary protocol on ").nth(1) {
            break rest.trim().to_string();
        }
    };
    let out = taxelmap(
        d,
        &["replay", "--server", &addr, "--texture", "0", "--script", "script.csv", "--out", "trace.csv", "--accelerated", "--svg", "trace.svg", "--end-t", "0.3"],
    );
    child.kill().unwrap();
    let _ = child.wait();
    ok(&out);
    let csv = fs::read_to_string(d.join("trace.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "t,intensity");
    assert_eq!(rows.len(), 301);
    assert_eq!(rows[1], "0.000000,0.000000");
    assert!(fs::read_to_string(d.join("trace.svg")).unwrap().contains(r#"data-y-max="0.8""#));
}
