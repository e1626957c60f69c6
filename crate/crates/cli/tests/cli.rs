use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rirkit::dsp::{write_wav, Waveform};
use rirkit::manifest::Manifest;
use rirkit::synth::coherent_grid_target;
use serde_json::Value;
use sha2::{Digest, Sha256};

const SMALL_CONFIG: &str = "\
[codec]
num_stages = 2
codebook_size = 16
frame_len = 512

[sample]
ngram_order = 2

[eval]
n_resamples = 200
";

struct Run {
    code: i32,
    summary: Option<Value>,
    stderr: String,
}

fn rirkit(dir: &Path, args: &[&str]) -> Run {
    let out: Output = Command::new(env!("CARGO_BIN_EXE_rirkit"))
        .args(args)
        .current_dir(dir)
        .env_remove("RIRKIT_CONFIG")
        .output()
        .expect("binary runs");
    let stdout = String::from_utf8_lossy(&out.stdout);
    Run {
        code: out.status.code().unwrap_or(-1),
        summary: stdout.lines().last().and_then(|l| serde_json::from_str(l).ok()),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let r = rirkit(dir, args);
    assert_eq!(r.code, 0, "{args:?} failed: {}", r.stderr);
    r.summary.expect("summary line")
}

fn sha(path: &Path) -> String {
    format!("{:x}", Sha256::digest(fs::read(path).unwrap()))
}

fn setup(n: usize) -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_path_buf();
    fs::write(dir.join("small.toml"), SMALL_CONFIG).unwrap();
    ok(&dir, &["--seed", "3", "synth", "--random", &n.to_string(), "--out-dir", "rirs"]);
    (tmp, dir)
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(rirkit(d, &["frobnicate"]).code, 2);
    assert_eq!(rirkit(d, &["sample", "bogus", "--codec", "c", "--manifest", "m", "--out-dir", "o"]).code, 2);
    assert_eq!(rirkit(d, &["analyze", "x.wav", "--no-such-flag"]).code, 2);
    let missing = rirkit(d, &["analyze", "missing.wav"]);
    assert_eq!(missing.code, 1);
    assert!(missing.stderr.contains("missing.wav"), "{}", missing.stderr);
    fs::create_dir(d.join("empty")).unwrap();
    assert_eq!(rirkit(d, &["ingest", "empty", "--out", "m.jsonl"]).code, 1);
    fs::write(d.join("bad.toml"), "no_such_key = 1\n").unwrap();
    assert_eq!(rirkit(d, &["--config", "bad.toml", "ingest", "empty", "--out", "m.jsonl"]).code, 1);
}

#[test]
fn ingest_marks_invalid_rows_and_is_repeatable() {
    let (_tmp, dir) = setup(10);
    write_wav(dir.join("rirs/silence.wav"), &Waveform::silence(44100, 44100).unwrap()).unwrap();
    fs::write(dir.join("rirs/broken.wav"), b"not a wav").unwrap();

    let s = ok(&dir, &["ingest", "rirs", "--out", "ref/a.jsonl"]);
    assert_eq!(s["rows"], 12);
    assert_eq!(s["valid"], 10);
    ok(&dir, &["ingest", "rirs", "--out", "ref/b.jsonl"]);
    assert_eq!(fs::read(dir.join("ref/a.jsonl")).unwrap(), fs::read(dir.join("ref/b.jsonl")).unwrap());

    let m = Manifest::load(dir.join("ref/a.jsonl")).unwrap();
    let silence = m.get("silence").unwrap();
    assert!(!silence.valid);
    assert_eq!(silence.exclusion_reason.as_deref(), Some("degenerate-signal"));
    assert!(m.get("broken").unwrap().exclusion_reason.as_deref().unwrap().starts_with("unreadable"));

    // Ingested values agree with the targets the synthesiser was given.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut close = 0;
    for i in 0..10 {
        let target = coherent_grid_target(&mut rng);
        let row = m.get(&format!("rir_{i:04}")).unwrap();
        assert!(row.valid && row.quantized.is_some(), "{row:?}");
        let got = row.params.as_ref().unwrap().broadband;
        let want = target.broadband;
        let rel = |a: Option<f64>, b: Option<f64>| (a.unwrap() - b.unwrap()).abs() / b.unwrap();
        if rel(got.t30_s, want.t30_s) < 0.1
            && rel(got.edt_s, want.edt_s) < 0.15
            && (got.d50_pct.unwrap() - want.d50_pct.unwrap()).abs() < 5.0
            && (got.c80_db.unwrap() - want.c80_db.unwrap()).abs() < 1.0
        {
            close += 1;
        }
    }
    assert!(close >= 9, "{close}");
}

#[test]
fn maskgit_oracle_reproduces_codec_decode() {
    let (_tmp, dir) = setup(2);
    ok(&dir, &["ingest", "rirs", "--out", "ref/m.jsonl"]);
    ok(&dir, &["--config", "small.toml", "codec", "train", "ref/m.jsonl", "--out", "codec.rvq"]);
    ok(&dir, &["--config", "small.toml", "--seed", "9", "sample", "maskgit", "--codec", "codec.rvq", "--manifest", "ref/m.jsonl", "--out-dir", "mg"]);
    for id in ["rir_0000", "rir_0001"] {
        let wav = format!("rirs/{id}.wav");
        let cgr = format!("{id}.json");
        let out = format!("{id}.wav");
        ok(&dir, &["--config", "small.toml", "codec", "encode", "--codec", "codec.rvq", &wav, "--out", &cgr]);
        ok(&dir, &["codec", "decode", "--codec", "codec.rvq", &cgr, "--out", &out]);
        assert_eq!(sha(&dir.join(&out)), sha(&dir.join("mg").join(&out)));
    }
}

#[test]
fn sampling_is_reproducible_and_eval_of_self_is_zero() {
    let (_tmp, dir) = setup(3);
    ok(&dir, &["ingest", "rirs", "--out", "ref/m.jsonl"]);
    ok(&dir, &["--config", "small.toml", "codec", "train", "ref/m.jsonl", "--out", "codec.rvq"]);
    for out in ["a", "b"] {
        ok(&dir, &["--config", "small.toml", "--seed", "5", "sample", "ar-cfg", "--codec", "codec.rvq", "--manifest", "ref/m.jsonl", "--out-dir", out]);
    }
    for f in ["manifest.jsonl", "rir_0000.wav", "rir_0001.cgr", "rir_0002.wav"] {
        assert_eq!(sha(&dir.join("a").join(f)), sha(&dir.join("b").join(f)), "{f}");
    }
    ok(&dir, &["--config", "small.toml", "--seed", "6", "sample", "ar-cfg", "--codec", "codec.rvq", "--manifest", "ref/m.jsonl", "--out-dir", "c"]);
    assert_ne!(sha(&dir.join("a/rir_0000.wav")), sha(&dir.join("c/rir_0000.wav")));

    let s = ok(&dir, &["--config", "small.toml", "eval", "--generated", "ref/m.jsonl", "--reference", "ref/m.jsonl", "--out", "self.json", "--csv", "self.csv"]);
    assert_eq!(s["samples"], 3);
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("self.json")).unwrap()).unwrap();
    for m in report["metrics"].as_array().unwrap() {
        let i = &m["interval"];
        assert_eq!((i["mean"].as_f64(), i["lower"].as_f64(), i["upper"].as_f64()), (Some(0.0), Some(0.0), Some(0.0)), "{m}");
    }
    assert!(fs::read_to_string(dir.join("self.csv")).unwrap().starts_with("method,t30,"));

    let s = ok(&dir, &["--config", "small.toml", "eval", "--generated", "a/manifest.jsonl", "--reference", "ref/m.jsonl", "--out", "gen.json"]);
    assert_eq!(s["command"], "eval");
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("gen.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"].as_array().unwrap().len(), 12);
}

#[test]
fn guided_and_flow_modes_run() {
    let (_tmp, dir) = setup(2);
    let cfg = format!("clip_seconds = 0.3\n{SMALL_CONFIG}");
    fs::write(dir.join("short.toml"), cfg).unwrap();
    ok(&dir, &["ingest", "rirs", "--out", "ref/m.jsonl"]);
    ok(&dir, &["--config", "small.toml", "codec", "train", "ref/m.jsonl", "--out", "codec.rvq"]);
    let s = ok(&dir, &["--config", "short.toml", "sample", "ar-cg", "--codec", "codec.rvq", "--manifest", "ref/m.jsonl", "--out-dir", "cg"]);
    assert_eq!(s["count"], 2);
    let s = ok(&dir, &["--config", "short.toml", "sample", "flow", "--codec", "codec.rvq", "--manifest", "ref/m.jsonl", "--out-dir", "fl"]);
    assert_eq!(s["mode"], "flow");
    assert!(dir.join("fl/rir_0001.wav").exists());
}

#[test]
fn config_from_environment() {
    let (_tmp, dir) = setup(1);
    fs::write(dir.join("bad.toml"), "bogus = 1\n").unwrap();
    let with_env = |cfg: &str| {
        Command::new(env!("CARGO_BIN_EXE_rirkit"))
            .args(["ingest", "rirs", "--out", "m.jsonl"])
            .current_dir(&dir)
            .env("RIRKIT_CONFIG", cfg)
            .status()
            .unwrap()
            .code()
    };
    assert_eq!(with_env("bad.toml"), Some(1));
    assert_eq!(with_env("small.toml"), Some(0));
    let analyze = ok(&dir, &["analyze", "rirs/rir_0000.wav"]);
    assert!(analyze["params"]["broadband"]["t30_s"].as_f64().unwrap() > 0.0);
}
