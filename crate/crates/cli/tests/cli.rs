use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

fn eskin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_eskin"));
    for (k, _) in std::env::vars() {
        if k.starts_with("ESKIN_") {
            cmd.env_remove(k);
        }
    }
    cmd.env("ESKIN_THREADS", "1");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas").join(format!("{name}.schema.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn assert_valid(name: &str, doc: &Value) {
    let validator = jsonschema::validator_for(&schema(name)).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name} output violates schema: {errors:?}");
}

fn gen_small(dir: &Path, per_class: usize) -> PathBuf {
    let out = run(eskin()
        .args(["gen", "--json", "--per-class", &per_class.to_string(), "--out"])
        .arg(dir));
    let doc = json_of(&out);
    assert_valid("gen", &doc);
    PathBuf::from(doc["manifest"].as_str().unwrap())
}

#[test]
fn gen_writes_nine_files_per_sample_per_class_and_is_repeatable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = gen_small(a.path(), 1);
    let taer = std::fs::read_dir(a.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "taer"))
        .count();
    assert_eq!(taer, 9);
    let mb = gen_small(b.path(), 1);
    assert_eq!(std::fs::read(ma).unwrap(), std::fs::read(mb).unwrap());
}

#[test]
fn config_precedence_is_flag_then_env_then_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("eskin.toml");
    std::fs::write(&cfg, "[gen]\nper_class = 2\n").unwrap();
    let samples = |cmd: &mut Command| json_of(&run(cmd))["samples"].as_u64().unwrap();

    let from_file = samples(eskin().args(["gen", "--json", "--config"]).arg(&cfg).arg("--out").arg(dir.path().join("f")));
    assert_eq!(from_file, 18);
    let from_env = samples(
        eskin()
            .env("ESKIN_PER_CLASS", "1")
            .args(["gen", "--json", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join("e")),
    );
    assert_eq!(from_env, 9);
    let from_flag = samples(
        eskin()
            .env("ESKIN_PER_CLASS", "1")
            .args(["gen", "--json", "--per-class", "3", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join("g")),
    );
    assert_eq!(from_flag, 27);
}

#[test]
fn encode_constant_input_gives_empty_stream() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("flat.json");
    let frame = vec![120.0f32; 256];
    let frames = vec![frame; 30];
    std::fs::write(&input, serde_json::json!({"rows": 16, "cols": 16, "frames": frames}).to_string()).unwrap();
    let out = dir.path().join("flat.taer");
    let doc = json_of(&run(eskin().args(["encode", "--json", "--input"]).arg(&input).arg("--out").arg(&out)));
    assert_valid("encode", &doc);
    assert_eq!(doc["stats"]["event_count"], 0);
    assert_eq!(std::fs::metadata(&out).unwrap().len(), 16);
}

#[test]
fn encode_digit_five_is_sparse() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("five.taer");
    let doc = json_of(&run(eskin().args(["encode", "--json", "--digit", "5", "--delta", "6", "--out"]).arg(&out)));
    assert_valid("encode", &doc);
    let sparsity = doc["stats"]["sparsity"].as_f64().unwrap();
    assert!(sparsity >= 0.98, "sparsity {sparsity}");
    assert!(doc["stats"]["event_count"].as_u64().unwrap() > 0);
    let stats: Value = serde_json::from_str(&std::fs::read_to_string(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(stats, doc["stats"]);
}

#[test]
fn missing_input_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(eskin()
        .args(["encode", "--input"])
        .arg(dir.path().join("absent.json"))
        .arg("--out")
        .arg(dir.path().join("x.taer")));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
}

#[test]
fn usage_errors_exit_with_two() {
    let out = run(eskin().args(["train", "--network", "resnet", "--manifest", "m.json", "--out", "c.bin"]));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("resnet"));
    assert_eq!(run(eskin().args(["frobnicate"])).status.code(), Some(2));
    assert_eq!(run(eskin().args(["gen"])).status.code(), Some(2));
}

#[test]
fn eval_of_fresh_checkpoint_reproduces_training_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_small(&dir.path().join("data"), 3);
    for (network, bits) in [("cnn", "0"), ("conv_snn", "5")] {
        let ckpt = dir.path().join(format!("{network}.eskw"));
        let train = json_of(&run(eskin()
            .args(["train", "--json", "--epochs", "2", "--bits", bits, "--network", network, "--manifest"])
            .arg(&manifest)
            .arg("--out")
            .arg(&ckpt)));
        assert_valid("train", &train);
        let eval = json_of(&run(eskin()
            .args(["eval", "--json", "--manifest"])
            .arg(&manifest)
            .arg("--checkpoint")
            .arg(&ckpt)));
        assert_valid("eval", &eval);
        assert_eq!(eval["accuracy"], train["final_test_accuracy"], "{network}");
        assert_eq!(eval["samples"], train["test_samples"]);
        if bits == "0" {
            assert_eq!(train["curve"][1]["test_accuracy"], train["final_test_accuracy"]);
        }
    }
}

#[test]
fn bench_scan_writes_curve_csv() {
    let dir = tempfile::tempdir().unwrap();
    let doc = json_of(&run(eskin().args(["bench", "scan", "--json", "--sizes", "16,256", "--out"]).arg(dir.path())));
    assert_valid("bench", &doc);
    let csv = std::fs::read_to_string(dir.path().join("scan_curves.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("n,"));
    let n256: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
    assert_eq!(n256[0], "256");
    assert_eq!(doc["report"]["scan_curves"][1]["binary_worst_sim"], 20);
    assert!(doc["report"]["config"]["scan"].is_object());
}

struct Server {
    child: Child,
    addr: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn start_server(extra: &[&str]) -> Server {
    let mut child = eskin()
        .args(["serve", "--port", "0", "--lockstep"])
        .args(extra)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("listen line").to_string();
    Server { child, addr }
}

fn http_get(addr: &str, path: &str) -> String {
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut body = String::new();
    s.read_to_string(&mut body).unwrap();
    body
}

#[test]
fn healthz_reports_version_and_checkpoint_hash() {
    let server = start_server(&[]);
    let resp = http_get(&server.addr, "/healthz");
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    let body: Value = serde_json::from_str(resp.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["version"], env!("CARGO_PKG_VERSION"));
    assert!(body["checkpoint_hash"].is_null());
}

#[tokio::test]
async fn lockstep_session_over_websocket() {
    use futures::{SinkExt, StreamExt};
    use tokio_tungstenite::tungstenite::Message;

    let server = start_server(&[]);
    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{}/stream", server.addr)).await.unwrap();
    let wire = jsonschema::validator_for(&schema("wire")).unwrap();
    let ready = loop {
        if let Message::Text(t) = ws.next().await.unwrap().unwrap() {
            break serde_json::from_str::<Value>(&t).unwrap();
        }
    };
    assert_eq!(ready["type"], "ready");
    assert!(wire.is_valid(&ready));

    let send = |v: Value| Message::Text(v.to_string().into());
    ws.send(send(serde_json::json!({"type": "hello", "grid": [16, 16]}))).await.unwrap();
    for t in 0..3 {
        ws.send(send(serde_json::json!({"type": "touch", "t": t, "x": 0.6, "y": 0.4, "pressure": 300}))).await.unwrap();
    }
    ws.send(send(serde_json::json!({"type": "touch", "t": 3, "x": 2.0, "y": 0.5, "pressure": 300}))).await.unwrap();
    ws.send(send(serde_json::json!({"type": "tick", "count": 3}))).await.unwrap();

    let mut seen = Vec::new();
    while seen.len() < 13 {
        if let Message::Text(t) = ws.next().await.unwrap().unwrap() {
            let v: Value = serde_json::from_str(&t).unwrap();
            assert!(wire.is_valid(&v), "{v}");
            seen.push(v);
        }
    }
    assert_eq!(seen[0]["type"], "error");
    assert_eq!(seen[0]["code"], "range");
    let frames: Vec<u64> = seen[1..].iter().map(|m| m["frame"].as_u64().unwrap()).collect();
    assert_eq!(frames, [0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
    let hotspot = seen.iter().rfind(|m| m["type"] == "hotspot").unwrap();
    assert_eq!((hotspot["r"].as_u64(), hotspot["c"].as_u64()), (Some(6), Some(9)));
    let stats = seen.iter().rfind(|m| m["type"] == "scan_stats").unwrap();
    assert_eq!(stats["mode"], "tracking");
}
