use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use synthtumor_core::phantom::{liver_phantom, PhantomSpec};
use synthtumor_core::volgrid::{load_labels, save_labels, save_nifti, LIVER, TUMOR};

const BIN: &str = env!("CARGO_BIN_EXE_synthtumor");

/// Checksums of `synth --preset small --seed 7` on the 40³ seed-3 phantom,
/// recorded on the first verified run.
const GOLDEN_CT_SHA256: &str = "21088fc27e534ad87a443799ce4689adf1e6634fbbc773d0b217a4c1f731896e";
const GOLDEN_LABEL_SHA256: &str = "478aa401ed06a8845aaa2199e1a79561904a327c446a7aeb40751f4d7d70ac5a";

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("SYNTHTUMOR_CONFIG").env("RUST_LOG", "warn").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn sha(path: &Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn write_phantom(dir: &Path, name: &str, seed: u64) {
    let p = liver_phantom(&PhantomSpec { dims: [40; 3], vessels: 2, seed, ..PhantomSpec::default() });
    std::fs::create_dir_all(dir.join("scans")).unwrap();
    std::fs::create_dir_all(dir.join("livers")).unwrap();
    save_nifti(&p.ct, dir.join(format!("scans/{name}.nii.gz"))).unwrap();
    save_labels(&p.liver, dir.join(format!("livers/{name}.nii.gz"))).unwrap();
}

fn p(dir: &Path, rel: &str) -> String {
    dir.join(rel).to_string_lossy().into_owned()
}

fn synth(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "synth".to_string(),
        "--ct".into(),
        p(dir, "scans/a.nii.gz"),
        "--liver".into(),
        p(dir, "livers/a.nii.gz"),
        "--out-ct".into(),
        p(dir, &format!("{out}/ct.nii.gz")),
        "--out-label".into(),
        p(dir, &format!("{out}/label.nii.gz")),
        "--provenance".into(),
        p(dir, &format!("{out}/provenance.json")),
    ];
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run(&refs)
}

#[test]
fn help_for_every_subcommand() {
    for sub in [&["--help"][..], &["vessels", "--help"], &["synth", "--help"], &["grid", "--help"], &["grid", "build", "--help"], &["grid", "eval", "--help"], &["eval", "--help"], &["turing-export", "--help"], &["serve", "--help"]] {
        let o = run(sub);
        assert!(o.status.success(), "{sub:?}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{sub:?}");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["synth", "--ct", "x.nii"]).status.code(), Some(2));
    assert_eq!(run(&["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["synth", "--ct", "a", "--liver", "b", "--out-ct", "c", "--out-label", "d", "--preset", "huge"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_1_naming_the_path() {
    let o = run(&["synth", "--ct", "/no/such/ct.nii.gz", "--liver", "/no/such/l.nii.gz", "--out-ct", "/tmp/x.nii", "--out-label", "/tmp/y.nii"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    let last = err.lines().last().unwrap();
    assert!(last.starts_with("error: io: "), "{last}");
    assert!(last.contains("/no/such/ct.nii.gz"));
}

#[test]
fn synth_is_reproducible_and_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_phantom(d, "a", 3);
    let a = synth(d, "one", &["--preset", "small", "--seed", "7"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let err = stderr(&a);
    assert!(err.contains("# resolved config") && err.contains("# seed = 7"), "{err}");
    assert!(err.contains("capsule_brightening"));
    let b = synth(d, "two", &["--preset", "small", "--seed", "7"]);
    assert!(b.status.success());
    for f in ["ct.nii.gz", "label.nii.gz", "provenance.json"] {
        assert_eq!(std::fs::read(d.join("one").join(f)).unwrap(), std::fs::read(d.join("two").join(f)).unwrap(), "{f}");
    }

    let labels = load_labels(d.join("one/label.nii.gz")).unwrap();
    assert!(labels.count(TUMOR) > 0);
    let prov: Value = serde_json::from_slice(&std::fs::read(d.join("one/provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["seed"], 7);
    assert_eq!(prov["resolved_preset"], "small");

    let (ct, label) = (sha(&d.join("one/ct.nii.gz")), sha(&d.join("one/label.nii.gz")));
    assert_eq!(ct, GOLDEN_CT_SHA256);
    assert_eq!(label, GOLDEN_LABEL_SHA256);

    // Replaying the provenance specs reproduces the labels.
    let specs = serde_json::to_string(&prov["tumors"].as_array().unwrap().iter().map(|t| t["spec"].clone()).collect::<Vec<_>>()).unwrap();
    std::fs::write(d.join("specs.json"), specs).unwrap();
    let r = synth(d, "replay", &["--spec", &p(d, "specs.json"), "--seed", "7"]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert_eq!(load_labels(d.join("replay/label.nii.gz")).unwrap(), labels);
}

#[test]
fn config_file_from_env_and_training_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_phantom(d, "a", 3);
    std::fs::write(d.join("cfg.toml"), "capsule_brightening = 77.0\n").unwrap();
    let o = Command::new(BIN)
        .args(["--training", "vessels", "--ct", &p(d, "scans/a.nii.gz"), "--liver", &p(d, "livers/a.nii.gz"), "--out", &p(d, "v.nii.gz")])
        .env("SYNTHTUMOR_CONFIG", d.join("cfg.toml"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("capsule_brightening = 77.0"), "{err}");
    assert!(err.contains("mass_effect = false"));
    let v = load_labels(d.join("v.nii.gz")).unwrap();
    assert!(v.count(1) > 0);
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["vessel_voxels"].as_u64().unwrap() as usize, v.count(1));

    std::fs::write(d.join("bad.toml"), "no_such_key = 1\n").unwrap();
    let o = run(&["--config", &p(d, "bad.toml"), "vessels", "--ct", "a", "--liver", "b", "--out", "c"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).lines().last().unwrap().starts_with("error: config: "));
}

#[test]
fn eval_reports_scores() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_phantom(d, "a", 5);
    let s = synth(d, "out", &["--seed", "2", "--preset", "small"]);
    assert!(s.status.success(), "{}", stderr(&s));
    let gt = p(d, "out/label.nii.gz");
    let o = run(&["eval", "--gt", &gt, "--pred", &gt, "--report", &p(d, "rep/report.json")]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&std::fs::read(d.join("rep/report.json")).unwrap()).unwrap();
    assert_eq!(r["mean_dsc"], 1.0);
    assert_eq!(r["mean_nsd"], 1.0);
    assert_eq!(r["detection"]["sensitivity"], 1.0);

    let empty = load_labels(&gt).unwrap().map(|l| l.min(LIVER));
    save_labels(&empty, d.join("empty.nii.gz")).unwrap();
    let o = run(&["eval", "--gt", &gt, "--pred", &p(d, "empty.nii.gz")]);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["mean_dsc"], 0.0);
    assert_eq!(r["detection"]["sensitivity"], 0.0);
}

#[test]
fn grid_build_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_phantom(d, "a", 1);
    let o = run(&[
        "--training",
        "grid",
        "build",
        "--scans",
        &p(d, "scans"),
        "--livers",
        &p(d, "livers"),
        "--out",
        &p(d, "grid"),
        "--levels",
        "3",
        "--dims",
        "size,intensity",
        "--seed",
        "4",
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Value = serde_json::from_slice(&std::fs::read(d.join("grid/manifest.json")).unwrap()).unwrap();
    let variants = m["scans"][0]["variants"].as_array().unwrap();
    assert_eq!(variants.len(), 6);

    let preds = d.join("preds");
    std::fs::create_dir_all(&preds).unwrap();
    for v in variants {
        let id = v["id"].as_str().unwrap();
        std::fs::copy(d.join("grid").join(v["label_path"].as_str().unwrap()), preds.join(format!("{id}.nii.gz"))).unwrap();
    }
    let o = run(&["grid", "eval", "--grid", &p(d, "grid"), "--pred", &p(d, "preds"), "--report", &p(d, "grid_eval.json")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("100.00"));

    let first = variants[0]["id"].as_str().unwrap();
    std::fs::remove_file(preds.join(format!("{first}.nii.gz"))).unwrap();
    let o = run(&["grid", "eval", "--grid", &p(d, "grid"), "--pred", &p(d, "preds")]);
    assert_eq!(o.status.code(), Some(1));
    let last = stderr(&o).lines().last().unwrap().to_string();
    assert!(last.starts_with("error: evaluation: ") && last.contains(first), "{last}");
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(10))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut out = String::new();
    s.read_to_string(&mut out).ok()?;
    Some(out)
}

#[test]
fn turing_export_then_serve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_phantom(d, "a", 1);
    write_phantom(d, "b", 2);
    let s = synth(d, "syn", &["--seed", "1", "--preset", "small"]);
    assert!(s.status.success(), "{}", stderr(&s));
    std::fs::write(
        d.join("study.json"),
        json!({ "name": "pilot", "seed": 3, "real": ["scans/a.nii.gz", "scans/b.nii.gz"], "synthetic": ["syn/ct.nii.gz"] }).to_string(),
    )
    .unwrap();
    let data = d.join("data");
    let o = run(&["turing-export", "--manifest", &p(d, "study.json"), "--out-dir", &data.to_string_lossy()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let key: Value = serde_json::from_slice(&std::fs::read(data.join("bundles/pilot.json")).unwrap()).unwrap();
    let scans = key["scans"].as_array().unwrap();
    assert_eq!(scans.len(), 3);
    assert_eq!(scans.iter().filter(|s| s["truth"] == "synthetic").count(), 1);
    for s in scans {
        let id = s["scan_id"].as_str().unwrap();
        assert!(id.starts_with("pilot-"));
        assert!(data.join(format!("scans/{id}.nii.gz")).is_file());
    }

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(BIN)
        .args(["serve", "--port", &port.to_string(), "--data-dir", &data.to_string_lossy()])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let start = Instant::now();
    let mut body = None;
    while start.elapsed() < Duration::from_secs(20) {
        if let Some(r) = http_get(port, "/scans") {
            body = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let body = body.expect("server answered");
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("pilot-001") && !body.contains("truth"));
}
