use std::io::Write;
use std::net::TcpStream;
use std::time::{Duration, Instant};

use taxelmap::client::{replay, ClientError, ReplayOptions, TrajectoryScript};
use taxelmap::json_mirror::{from_json, to_json};
use taxelmap::mapfile::{read_map, write_map};
use taxelmap::server::{ClockMode, Server, ServerConfig, ServerHandle, TextureStore};
use taxelmap::wire::{write_message, MessageReader};
use taxelmap_core::protocol::{decode_frame, error_code, Contact, Message};
use taxelmap_core::vibmap::{normalize, VibrationMap};
use taxelmap_core::Grid;

/// Vertical stripes, 10 px wide, alternating raw 0.1 and 0.5.
fn stripes(w: usize, h: usize) -> VibrationMap {
    let g = Grid::from_fn(w, h, |x, _| if (x / 10) % 2 == 0 { 0.1f32 } else { 0.5 });
    normalize(&VibrationMap::from_raw(g, vec![true; w * h]).unwrap())
}

fn gradient(w: usize, h: usize) -> VibrationMap {
    let g = Grid::from_fn(w, h, |x, y| (x + 2 * y) as f32);
    normalize(&VibrationMap::from_raw(g, vec![true; w * h]).unwrap())
}

fn config() -> ServerConfig {
    ServerConfig {
        tcp_port: 0,
        ws_port: Some(0),
        ..ServerConfig::default()
    }
}

fn start(store: TextureStore, cfg: ServerConfig) -> ServerHandle {
    Server::bind(cfg, store).unwrap().spawn().unwrap()
}

fn two_textures() -> TextureStore {
    let mut store = TextureStore::new();
    store.add("stripes", stripes(101, 21), None).unwrap();
    store.add("gradient", gradient(64, 32), None).unwrap();
    store
}

fn accelerated(end_t: Option<f64>) -> ReplayOptions {
    ReplayOptions {
        accelerated: true,
        end_t,
        ..ReplayOptions::default()
    }
}

#[test]
fn empty_script_streams_zeros() {
    let server = start(two_textures(), config());
    let r = replay(server.tcp_addr, 0, &TrajectoryScript::default(), &accelerated(Some(1.0))).unwrap();
    assert_eq!(r.trace.len(), 1000);
    assert!(r.trace.samples.iter().all(|s| s.intensity == 0.0));
    assert_eq!(r.textures.len(), 2);
    server.shutdown();
}

#[test]
fn constant_contact_reads_map_file_value() {
    let dir = tempfile::tempdir().unwrap();
    write_map(&gradient(64, 32), dir.path().join("a_gradient.vibmap")).unwrap();
    write_map(&stripes(101, 21), dir.path().join("b_stripes.vibmap")).unwrap();
    let store = TextureStore::load_dir(dir.path()).unwrap();
    assert_eq!(store.list()[0].name, "a_gradient");
    let server = start(store, config());

    let map = read_map(dir.path().join("a_gradient.vibmap")).unwrap();
    let (px, py) = (21, 9);
    let (u, v) = (px as f32 / 63.0, py as f32 / 31.0);
    let rows: Vec<Contact> = (0..50).map(|i| Contact { t: i as f64 * 0.01, u, v, depth_mm: 1.5 }).collect();
    let script = TrajectoryScript::new(rows).unwrap();
    let r = replay(server.tcp_addr, 0, &script, &accelerated(Some(0.5))).unwrap();
    let expect = map.values().get(px, py) as f64;
    assert_eq!(r.trace.len(), 500);
    for s in &r.trace.samples {
        assert!((s.intensity - expect).abs() <= 1e-6, "{} vs {expect}", s.intensity);
    }
    server.shutdown();
}

#[test]
fn sweep_alternates_with_stripe_period() {
    let server = start(two_textures(), config());
    // 100 px/s across 10 px stripes: a full light/dark cycle every 0.2 s.
    let script = TrajectoryScript::line((0.0, 0.5), (1.0, 0.5), 1.0, 0.001, 1.0).unwrap();
    let r = replay(server.tcp_addr, 0, &script, &accelerated(None)).unwrap();
    let rises: Vec<f64> = r
        .trace
        .samples
        .windows(2)
        .filter(|w| w[0].intensity < 0.5 && w[1].intensity >= 0.5)
        .map(|w| w[1].t)
        .collect();
    assert_eq!(rises.len(), 5);
    for pair in rises.windows(2) {
        assert!((pair[1] - pair[0] - 0.2).abs() <= 0.002, "{rises:?}");
    }
    let high = r.trace.samples.iter().filter(|s| s.intensity == 1.0).count();
    let low = r.trace.samples.iter().filter(|s| s.intensity == 0.0).count();
    assert!(high > 400 && low > 400, "{high} high, {low} low");
    server.shutdown();
}

#[test]
fn replay_is_deterministic_and_sessions_are_isolated() {
    let server = start(two_textures(), config());
    let a = TrajectoryScript::line((0.1, 0.2), (0.9, 0.8), 0.7, 0.003, 0.8).unwrap();
    let b = TrajectoryScript::line((0.9, 0.1), (0.0, 1.0), 0.9, 0.002, 2.0).unwrap();
    let solo_a = replay(server.tcp_addr, 0, &a, &accelerated(None)).unwrap();
    let solo_b = replay(server.tcp_addr, 1, &b, &accelerated(None)).unwrap();
    let addr = server.tcp_addr;
    let (ta, tb) = (a.clone(), b.clone());
    let ha = std::thread::spawn(move || replay(addr, 0, &ta, &accelerated(None)).unwrap());
    let hb = std::thread::spawn(move || replay(addr, 1, &tb, &accelerated(None)).unwrap());
    let (ca, cb) = (ha.join().unwrap(), hb.join().unwrap());
    assert_eq!(ca.trace.to_csv(), solo_a.trace.to_csv());
    assert_eq!(cb.trace.to_csv(), solo_b.trace.to_csv());
    assert_eq!(ca.frames, solo_a.frames);
    assert_eq!(cb.frames, solo_b.frames);
    server.shutdown();
}

#[test]
fn paced_replay_matches_accelerated() {
    let server = start(two_textures(), config());
    let script = TrajectoryScript::line((0.0, 0.0), (1.0, 1.0), 0.3, 0.01, 1.0).unwrap();
    let fast = replay(server.tcp_addr, 0, &script, &accelerated(None)).unwrap();
    let t = Instant::now();
    let paced = replay(server.tcp_addr, 0, &script, &ReplayOptions::default()).unwrap();
    assert!(t.elapsed() >= Duration::from_millis(290));
    assert_eq!(paced.trace, fast.trace);
    server.shutdown();
}

#[test]
fn unknown_texture_is_reported() {
    let server = start(two_textures(), config());
    let err = replay(server.tcp_addr, 9, &TrajectoryScript::default(), &accelerated(Some(0.1))).unwrap_err();
    assert!(matches!(err, ClientError::UnknownTexture(9)));
    server.shutdown();
}

fn raw_session(addr: std::net::SocketAddr) -> (TcpStream, MessageReader<TcpStream>) {
    let s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let r = MessageReader::new(s.try_clone().unwrap());
    (s, r)
}

#[test]
fn protocol_errors_keep_session_alive() {
    let server = start(two_textures(), config());
    let (mut w, mut r) = raw_session(server.tcp_addr);
    write_message(&mut w, &Message::Select { id: 0 }).unwrap();
    assert!(matches!(r.read_message().unwrap(), Message::Error { code: error_code::UNEXPECTED_MESSAGE, .. }));
    write_message(&mut w, &Message::Hello { version: 1 }).unwrap();
    assert_eq!(r.read_message().unwrap(), Message::Hello { version: 1 });
    let contact = Contact { t: 0.0, u: 0.5, v: 0.5, depth_mm: 1.0 };
    write_message(&mut w, &Message::Contact(contact)).unwrap();
    assert!(matches!(r.read_message().unwrap(), Message::Error { code: error_code::NO_TEXTURE_SELECTED, .. }));
    w.write_all(&[0, 0, 0, 1, 42, 0]).unwrap();
    assert!(matches!(r.read_message().unwrap(), Message::Error { code: error_code::UNEXPECTED_MESSAGE, .. }));
    write_message(&mut w, &Message::Select { id: 7 }).unwrap();
    assert!(matches!(r.read_message().unwrap(), Message::Error { code: error_code::UNKNOWN_TEXTURE, .. }));
    write_message(&mut w, &Message::Select { id: 1 }).unwrap();
    write_message(&mut w, &Message::Contact(Contact { u: 1.5, ..contact })).unwrap();
    assert!(matches!(r.read_message().unwrap(), Message::Error { code: error_code::INVALID_CONTACT, .. }));
    write_message(&mut w, &Message::Contact(Contact { t: 0.1, ..contact })).unwrap();
    write_message(&mut w, &Message::Bye).unwrap();
    let mut samples = 0;
    loop {
        match r.read_message().unwrap() {
            Message::VibFrame(f) => samples += f.n(),
            Message::Bye => break,
            m => panic!("{m:?}"),
        }
    }
    assert_eq!(samples, 100);
    server.shutdown();
}

#[test]
fn version_mismatch_closes_session() {
    let server = start(two_textures(), config());
    let (mut w, mut r) = raw_session(server.tcp_addr);
    write_message(&mut w, &Message::Hello { version: 2 }).unwrap();
    assert!(matches!(r.read_message().unwrap(), Message::Error { code: error_code::VERSION_MISMATCH, .. }));
    assert!(r.read_message().is_err());
    server.shutdown();
}

fn ws_connect(addr: std::net::SocketAddr) -> tungstenite::WebSocket<TcpStream> {
    let stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let (ws, _) = tungstenite::client(format!("ws://{addr}/"), stream).unwrap();
    ws
}

fn ws_send(ws: &mut tungstenite::WebSocket<TcpStream>, m: &Message) {
    ws.send(tungstenite::Message::text(to_json(m))).unwrap();
}

fn ws_recv(ws: &mut tungstenite::WebSocket<TcpStream>) -> Message {
    loop {
        if let tungstenite::Message::Text(t) = ws.read().unwrap() {
            return from_json(t.as_str()).unwrap();
        }
    }
}

#[test]
fn websocket_mirror_streams_in_wall_clock() {
    let server = start(two_textures(), config());
    let mut ws = ws_connect(server.ws_addr.unwrap());
    ws_send(&mut ws, &Message::Hello { version: 1 });
    assert_eq!(ws_recv(&mut ws), Message::Hello { version: 1 });
    ws_send(&mut ws, &Message::ListTextures);
    let Message::TextureList { entries } = ws_recv(&mut ws) else { panic!() };
    assert_eq!(entries[0].name, "stripes");
    assert_eq!((entries[0].width_px, entries[0].height_px), (101, 21));
    ws_send(&mut ws, &Message::Select { id: 0 });
    // Pixel column 15 is a bright stripe.
    let touch = Contact { t: 0.0, u: 0.15, v: 0.5, depth_mm: 1.0 };
    ws_send(&mut ws, &Message::Contact(touch));

    let mut saw_high = false;
    while !saw_high {
        if let Message::VibFrame(f) = ws_recv(&mut ws) {
            saw_high = decode_frame(&f).unwrap().contains(&1.0);
        }
    }
    // Pointer up: the stream must fall to zero and stay there.
    ws_send(&mut ws, &Message::Contact(Contact { depth_mm: 0.0, ..touch }));
    let mut frames_until_zero = 0;
    loop {
        if let Message::VibFrame(f) = ws_recv(&mut ws) {
            if decode_frame(&f).unwrap().iter().all(|&s| s == 0.0) {
                break;
            }
            frames_until_zero += 1;
        }
    }
    assert!(frames_until_zero <= 2, "{frames_until_zero}");
    ws_send(&mut ws, &Message::Bye);
    loop {
        if ws_recv(&mut ws) == Message::Bye {
            break;
        }
    }
    server.shutdown();
}

#[test]
fn websocket_logical_clock_matches_binary() {
    let cfg = ServerConfig {
        ws_clock: ClockMode::Logical,
        ..config()
    };
    let server = start(two_textures(), cfg);
    let script = TrajectoryScript::line((0.0, 0.3), (1.0, 0.3), 0.5, 0.002, 1.0).unwrap();
    let binary = replay(server.tcp_addr, 0, &script, &accelerated(None)).unwrap();

    let mut ws = ws_connect(server.ws_addr.unwrap());
    ws_send(&mut ws, &Message::Hello { version: 1 });
    ws_recv(&mut ws);
    ws_send(&mut ws, &Message::Select { id: 0 });
    for c in script.rows() {
        ws_send(&mut ws, &Message::Contact(*c));
    }
    ws_send(&mut ws, &Message::Bye);
    let mut frames = Vec::new();
    loop {
        match ws_recv(&mut ws) {
            Message::VibFrame(f) => frames.push(f),
            Message::Bye => break,
            m => panic!("{m:?}"),
        }
    }
    assert_eq!(frames, binary.frames);
    server.shutdown();
}
