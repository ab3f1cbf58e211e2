use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rcgff::environment::EdgeWeights;
use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rcgff"))
}

fn write_config(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn run(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .args(["run", sub, "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn base() -> Value {
    json!({
        "d": 3,
        "lambda": 0.5,
        "environment": {"law": {"kind": "iid_uniform", "params": {"low": 0.5, "high": 1.0}}, "seed": 4},
        "master_seed": 9
    })
}

fn with(mut v: Value, key: &str, section: Value) -> Value {
    v[key] = section;
    v
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash="));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn env_with_constant_law_writes_unit_weights() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = with(base(), "env", json!({"lo": [0, 0, 0], "hi": [7, 7, 7]}));
    cfg["environment"]["law"] = json!({"kind": "constant", "params": {"c": 1.0}});
    let c = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("o");
    assert!(run("env", &c, &out, &[]).status.success());
    let rows = csv_rows(&out.join("environment.csv"));
    assert_eq!(rows[0], ["edges", "min", "max", "mean", "lambda"]);
    assert_eq!(&rows[1][1..4], ["1.0", "1.0", "1.0"]);
    let mut f = fs::File::open(out.join("environment.bin")).unwrap();
    let env = rcgff::environment::Conductances::read_binary(&mut f).unwrap();
    let w: Vec<f64> = env.edges().filter_map(|(b, i)| env.edge(&b, i)).collect();
    assert!(!w.is_empty() && w.iter().all(|&x| x == 1.0));
    let manifest: Value = serde_json::from_slice(&fs::read(out.join("run_manifest.json")).unwrap()).unwrap();
    let bin_hash = rcgff_cli::output::sha256_hex(&fs::read(out.join("environment.bin")).unwrap());
    assert_eq!(manifest["environment_hash"], json!(bin_hash));
}

#[test]
fn singleton_capacity_row() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = with(
        base(),
        "potential",
        json!({
            "a": {"kind": "sites", "sites": [[0, 0, 0]]},
            "b": {"kind": "lattice_ball", "center": [0, 0, 0], "radius": 0}
        }),
    );
    cfg["environment"]["law"] = json!({"kind": "constant", "params": {"c": 1.0}});
    let c = write_config(tmp.path(), "c.json", &cfg);
    let out = tmp.path().join("o");
    assert!(run("potential", &c, &out, &[]).status.success());
    let rows = csv_rows(&out.join("potential.csv"));
    assert_eq!(rows[0][2], "cap");
    assert_eq!(rows[1][2], "6.0");
}

fn gff_config() -> Value {
    with(base(), "gff", json!({"domain": {"kind": "lattice_ball", "center": [0, 0, 0], "radius": 1}, "samples": 600, "write_fields": true}))
}

#[test]
fn identical_configs_reproduce_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let c = write_config(tmp.path(), "c.json", &gff_config());
    let (o1, o2, o3) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    assert!(run("gff", &c, &o1, &[]).status.success());
    assert!(run("gff", &c, &o2, &["--threads", "1"]).status.success());
    assert!(run("gff", &c, &o3, &["--seed-override", "10"]).status.success());
    for f in ["gff.csv", "fields.bin"] {
        assert_eq!(fs::read(o1.join(f)).unwrap(), fs::read(o2.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(o1.join("gff.csv")).unwrap(), fs::read(o3.join("gff.csv")).unwrap());
    let m1: Value = serde_json::from_slice(&fs::read(o1.join("run_manifest.json")).unwrap()).unwrap();
    let m3: Value = serde_json::from_slice(&fs::read(o3.join("run_manifest.json")).unwrap()).unwrap();
    assert_ne!(m1["config_hash"], m3["config_hash"]);
    assert_eq!(m3["config"]["master_seed"], json!(10));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, r#"{"d": 3, "lambda": 0.5, "bogus": 1}"#).unwrap();
    assert_eq!(run("gff", &bad, &out, &[]).status.code(), Some(2));
    let c = write_config(tmp.path(), "nogff.json", &base());
    assert_eq!(run("gff", &c, &out, &[]).status.code(), Some(2));
    let c = write_config(tmp.path(), "g.json", &gff_config());
    assert_eq!(run("nonsense", &c, &out, &[]).status.code(), Some(2));
    let nested = with(
        base(),
        "homogenize",
        json!({
            "a": {"kind": "euclidean_ball", "center": [0, 0, 0], "radius": 2.0},
            "b": {"kind": "euclidean_ball", "center": [0, 0, 0], "radius": 1.0},
            "ns": [2, 4]
        }),
    );
    let c = write_config(tmp.path(), "n.json", &nested);
    assert_eq!(run("homogenize", &c, &out, &[]).status.code(), Some(4));
    let mut starved = with(
        base(),
        "potential",
        json!({
            "a": {"kind": "sites", "sites": [[0, 0, 0]]},
            "b": {"kind": "lattice_ball", "center": [0, 0, 0], "radius": 6}
        }),
    );
    starved["solver"] = json!({"kind": "pcg", "params": {"max_iter": 1}});
    let c = write_config(tmp.path(), "s.json", &starved);
    assert_eq!(run("potential", &c, &out, &[]).status.code(), Some(3));
}

fn diagnostics(dir: &Path, v: &Value) -> Vec<String> {
    let c = write_config(dir, "v.json", v);
    let o = bin().args(["validate", "--config"]).arg(&c).output().unwrap();
    assert!(o.status.success());
    String::from_utf8(o.stdout).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn validate_reports_cross_field_problems() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(diagnostics(tmp.path(), &gff_config()), ["ok"]);
    let nested = with(
        base(),
        "potential",
        json!({
            "a": {"kind": "lattice_ball", "center": [0, 0, 0], "radius": 2},
            "b": {"kind": "lattice_ball", "center": [0, 0, 0], "radius": 1}
        }),
    );
    let d = diagnostics(tmp.path(), &nested);
    assert!(d.len() == 1 && d[0].contains("A ⊄ B"), "{d:?}");
    let incompatible = with(
        base(),
        "solidify",
        json!({
            "a": {"kind": "euclidean_ball", "center": [0, 0, 0], "radius": 0.5},
            "b": {"kind": "linf_box", "center": [0, 0, 0], "half_width": 2.0},
            "ns": [4], "offset": 0.5, "epsilon": 2, "puncture_fractions": [0.0],
            "scales": {"i": 1, "j": 1, "ell_star": 30}
        }),
    );
    let d = diagnostics(tmp.path(), &incompatible);
    assert!(d.len() == 1 && d[0].contains("compatible") && d[0].contains("ℓ0 - (I+1)(J+1)L"), "{d:?}");
    let padding = with(
        base(),
        "homogenize",
        json!({
            "a": {"kind": "euclidean_ball", "center": [0, 0, 0], "radius": 0.5},
            "b": {"kind": "euclidean_ball", "center": [0, 0, 0], "radius": 2.0},
            "ns": [4],
            "diffusivity": {"clock": "variable", "t_horizon": 100.0, "window": 10, "replicas": 10}
        }),
    );
    let d = diagnostics(tmp.path(), &padding);
    assert!(d.len() == 1 && d[0].contains("padding"), "{d:?}");
    let d = diagnostics(tmp.path(), &json!({"d": 3}));
    assert!(d.len() == 1 && d[0].contains("schema"), "{d:?}");
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for e in fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            let o = bin().args(["validate", "--config"]).arg(&p).output().unwrap();
            assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), "ok", "{}", p.display());
            seen += 1;
        }
    }
    assert!(seen >= 7);
}
