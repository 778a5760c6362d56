use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use elastonet::generate::{random_network, RandomNetworkSpec};
use elastonet::{Network, NodeKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tempfile::TempDir;

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn elastonet(args: &[&str], envs: &[(&str, &str)]) -> Out {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_elastonet"));
    cmd.args(args).env_remove("ELASTONET_SEED");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    let out = cmd.output().expect("binary runs");
    Out {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn run(args: &[&str]) -> Out {
    elastonet(args, &[])
}

fn write(dir: &TempDir, name: &str, value: &serde_json::Value) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn network_json(net: &Network<f64>) -> serde_json::Value {
    let nodes: Vec<_> = net
        .nodes()
        .iter()
        .map(|n| {
            json!({
                "label": n.label,
                "position": n.position.iter().collect::<Vec<_>>(),
                "mass": n.mass,
                "kind": if n.kind == NodeKind::Terminal { "terminal" } else { "interior" },
            })
        })
        .collect();
    let springs: Vec<_> = net
        .springs()
        .iter()
        .map(|sp| {
            json!({
                "labels": [net.nodes()[sp.ends.0].label, net.nodes()[sp.ends.1].label],
                "stiffness": sp.stiffness,
            })
        })
        .collect();
    json!({"version": "elastonet-network/1", "dimension": net.dimension(), "nodes": nodes, "springs": springs})
}

/// Terminal `a` tied to a unit mass by a unit spring along x.
fn single_mass() -> serde_json::Value {
    json!({
        "version": "elastonet-network/1",
        "dimension": 2,
        "nodes": [
            {"label": "a", "position": [0, 0], "mass": 0, "kind": "terminal"},
            {"label": "m", "position": [1, 0], "mass": 1, "kind": "interior"}
        ],
        "springs": [{"labels": ["a", "m"], "stiffness": 1}]
    })
}

fn series_chain() -> serde_json::Value {
    json!({
        "version": "elastonet-network/1",
        "dimension": 2,
        "nodes": [
            {"label": "a", "position": [0, 0], "mass": 0, "kind": "terminal"},
            {"label": "b", "position": [2, 0], "mass": 0, "kind": "terminal"},
            {"label": "m", "position": [1, 0], "mass": 1, "kind": "interior"}
        ],
        "springs": [
            {"labels": ["a", "m"], "stiffness": 1},
            {"labels": ["m", "b"], "stiffness": 1}
        ]
    })
}

fn static_triangle() -> serde_json::Value {
    json!({
        "version": "elastonet-network/1",
        "dimension": 2,
        "nodes": [
            {"label": "t0", "position": [0, 0], "mass": 0, "kind": "terminal"},
            {"label": "t1", "position": [1, 0], "mass": 0, "kind": "terminal"},
            {"label": "t2", "position": [0.4, 0.9], "mass": 0, "kind": "terminal"},
            {"label": "h", "position": [0.45, 0.35], "mass": 0, "kind": "interior"}
        ],
        "springs": [
            {"labels": ["t0", "h"], "stiffness": 1},
            {"labels": ["t1", "h"], "stiffness": 2},
            {"labels": ["t2", "h"], "stiffness": 0.7},
            {"labels": ["t0", "t1"], "stiffness": 0.5}
        ]
    })
}

fn csv_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn number_after(text: &str, key: &str) -> f64 {
    let line = text.lines().find(|l| l.contains(key)).unwrap_or_else(|| panic!("no {key:?} in\n{text}"));
    line.rsplit(' ').next().unwrap().parse().unwrap()
}

#[test]
fn sweep_shows_single_pole() {
    let dir = TempDir::new().unwrap();
    let net = write(&dir, "chain.json", &single_mass());
    let out = run(&["analyze", s(&net), "--sweep", "0.1:3:8"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.starts_with("omega,w_1_1,w_1_2,w_2_1,w_2_2\n"));
    let rows = csv_rows(&out.stdout);
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let w2 = r[0] * r[0];
        let want = w2 / (w2 - 1.0);
        assert!((r[1] - want).abs() <= 1e-12 * want.abs().max(1.0), "{r:?}");
        assert!(r[2..].iter().all(|x| x.abs() < 1e-12));
    }
    // Sign flips across the pole at ω = 1.
    let below = rows.iter().filter(|r| r[0] < 1.0).all(|r| r[1] < 0.0);
    let above = rows.iter().filter(|r| r[0] > 1.0).all(|r| r[1] > 0.0);
    assert!(below && above);
    assert!(out.stderr.contains("resonances: 1"));
    assert!(out.stderr.contains("residue rank 1"));
}

#[test]
fn omega_on_pole_gives_nan_row() {
    let dir = TempDir::new().unwrap();
    let net = write(&dir, "chain.json", &single_mass());
    let csv = dir.path().join("w.csv");
    let out = run(&["analyze", s(&net), "--omega", "0.5,1", "-o", s(&csv)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stderr.contains("warning"));
    let rows = csv_rows(&fs::read_to_string(&csv).unwrap());
    assert!(rows[0][1].is_finite());
    assert!(rows[1][1..].iter().all(|x| x.is_nan()));
    assert!(out.stdout.contains("resonances: 1"));
}

#[test]
fn static_network_has_constant_rows() {
    let dir = TempDir::new().unwrap();
    let net = write(&dir, "tri.json", &static_triangle());
    let out = run(&["analyze", s(&net), "--omega", "0,0.3,2,17"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let rows = csv_rows(&out.stdout);
    assert_eq!(rows.len(), 4);
    for r in &rows[1..] {
        assert_eq!(r[1..], rows[0][1..]);
    }
}

#[test]
fn malformed_network_names_record() {
    let dir = TempDir::new().unwrap();
    let mut v = series_chain();
    v["springs"][1]["labels"][1] = json!("zz");
    let net = write(&dir, "bad.json", &v);
    let out = run(&["analyze", s(&net)]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("spring 1: unknown node label \"zz\""), "{}", out.stderr);

    let mut v = series_chain();
    v["nodes"][2]["position"] = json!([1, 0, 0]);
    let net = write(&dir, "bad2.json", &v);
    let out = run(&["analyze", s(&net)]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("node 2 (\"m\")"), "{}", out.stderr);

    let trunc = dir.path().join("trunc.json");
    fs::write(&trunc, "{\"version\": \"elastonet-network/1\", \"nodes\": [").unwrap();
    assert_eq!(run(&["analyze", s(&trunc)]).code, 2);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]).code, 2);
    assert_eq!(run(&["analyze", "x.json", "--sweep", "3:1:4"]).code, 2);
    assert_eq!(run(&["perturb", "x.json"]).code, 2);
    assert_eq!(run(&["--help"]).code, 0);
}

#[test]
fn exported_spec_validates() {
    let dir = TempDir::new().unwrap();
    let net = write(&dir, "chain.json", &series_chain());
    let spec = dir.path().join("spec.json");
    assert_eq!(run(&["analyze", s(&net), "--export-spec", s(&spec)]).code, 0);
    let out = run(&["validate", s(&spec)]);
    assert_eq!(out.code, 0, "{}{}", out.stdout, out.stderr);
    assert!(out.stdout.contains("realizable"));
}

#[test]
fn export_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let net = write(&dir, "tri.json", &static_triangle());
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    run(&["analyze", s(&net), "--export-spec", s(&a)]);
    run(&["analyze", s(&net), "--export-spec", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(fs::read_to_string(&a).unwrap().contains("\"static\""));
}

#[test]
fn asymmetric_matrix_fails_validation() {
    let dir = TempDir::new().unwrap();
    let spec = write(
        &dir,
        "asym.json",
        &json!({
            "version": "elastonet-response/1",
            "terminal_positions": [[0, 0], [1, 0]],
            "static": {"matrix": [[1, 0, -1, 0.5], [0, 0, 0, 0], [-1, 0, 1, 0], [0, 0, 0, 0]]}
        }),
    );
    let out = run(&["validate", s(&spec)]);
    assert_eq!(out.code, 1);
    assert!(out.stdout.lines().any(|l| l.starts_with("symmetry") && l.contains("FAIL")));
}

#[test]
fn negative_resonance_fails_validation() {
    let dir = TempDir::new().unwrap();
    let spec = write(
        &dir,
        "neg.json",
        &json!({
            "version": "elastonet-response/1",
            "terminal_positions": [[0, 0]],
            "modal": {"a": [[1, 0], [0, 0]], "masses": [0], "terms": [{"omega_sq": -1, "c": [[1, 0], [0, 0]]}]}
        }),
    );
    let out = run(&["validate", s(&spec)]);
    assert_eq!(out.code, 1);
    assert!(out.stdout.lines().any(|l| l.starts_with("resonances positive") && l.contains("FAIL")));
}

#[test]
fn tol_flag_loosens_validation() {
    let dir = TempDir::new().unwrap();
    let spec = write(
        &dir,
        "near.json",
        &json!({
            "version": "elastonet-response/1",
            "terminal_positions": [[0, 0], [1, 0]],
            "static": {"matrix": [[1, 0, -1, 1e-7], [0, 0, 0, 0], [-1, 0, 1, 0], [0, 0, 0, 0]]}
        }),
    );
    assert_eq!(run(&["validate", s(&spec)]).code, 1);
    let out = run(&["--tol", "1e-6", "validate", s(&spec)]);
    assert_eq!(out.code, 0, "{}", out.stdout);
}

#[test]
fn synthesize_static_spec() {
    let dir = TempDir::new().unwrap();
    let net = write(&dir, "tri.json", &static_triangle());
    let spec = dir.path().join("spec.json");
    run(&["analyze", s(&net), "--export-spec", s(&spec)]);
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let out = run(&["synthesize", s(&spec), "--seed", "7", "-o", s(&a)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(number_after(&out.stdout, "round-trip error") <= 1e-6);
    assert!(out.stdout.contains("crossings:"));
    assert!(out.stdout.contains("placement eps: 0.5"));
    // Same seed from the environment gives the same bytes.
    let out = elastonet(&["synthesize", s(&spec), "-o", s(&b)], &[("ELASTONET_SEED", "7")]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    // The written network reproduces the spec.
    let again = dir.path().join("again.json");
    run(&["analyze", s(&a), "--export-spec", s(&again)]);
    let want: serde_json::Value = serde_json::from_str(&fs::read_to_string(&spec).unwrap()).unwrap();
    let got: serde_json::Value = serde_json::from_str(&fs::read_to_string(&again).unwrap()).unwrap();
    let flat = |v: &serde_json::Value| -> Vec<f64> {
        v["static"]["matrix"]
            .as_array()
            .unwrap()
            .iter()
            .flat_map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()))
            .collect()
    };
    let (w, g) = (flat(&want), flat(&got));
    let scale = w.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    assert!(w.iter().zip(&g).all(|(x, y)| (x - y).abs() <= 1e-8 * scale));
}

#[test]
fn synthesize_rejects_invalid_and_spatial_specs() {
    let dir = TempDir::new().unwrap();
    let spec = write(
        &dir,
        "asym.json",
        &json!({
            "version": "elastonet-response/1",
            "terminal_positions": [[0, 0], [1, 0]],
            "static": {"matrix": [[1, 0, -1, 0.5], [0, 0, 0, 0], [-1, 0, 1, 0], [0, 0, 0, 0]]}
        }),
    );
    let out = run(&["synthesize", s(&spec), "-o", s(&dir.path().join("x.json"))]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("validation failed"));

    let spec = write(
        &dir,
        "d3.json",
        &json!({
            "version": "elastonet-response/1",
            "terminal_positions": [[0, 0, 0], [1, 0, 0]],
            "static": {"matrix": [
                [1, 0, 0, -1, 0, 0], [0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0],
                [-1, 0, 0, 1, 0, 0], [0, 0, 0, 0, 0, 0], [0, 0, 0, 0, 0, 0]
            ]}
        }),
    );
    let out = run(&["synthesize", s(&spec), "-o", s(&dir.path().join("y.json"))]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("not supported"), "{}", out.stderr);
    assert!(!dir.path().join("y.json").exists());
}

#[test]
fn roundtrip_random_network() {
    let dir = TempDir::new().unwrap();
    let mut spec = RandomNetworkSpec::new(2, 3, 3);
    spec.edge_probability = 0.7;
    let net: Network<f64> = random_network(&mut ChaCha8Rng::seed_from_u64(11), &spec);
    let path = write(&dir, "rand.json", &network_json(&net));
    let out = run(&["roundtrip", s(&path)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(number_after(&out.stdout, "max relative error") <= 1e-6, "{}", out.stdout);
}

#[test]
fn roundtrip_static_network() {
    let dir = TempDir::new().unwrap();
    let path = write(&dir, "tri.json", &static_triangle());
    let out = run(&["roundtrip", s(&path)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(number_after(&out.stdout, "max relative error") <= 1e-8, "{}", out.stdout);
}

#[test]
fn roundtrip_spatial_network_is_analysis_only() {
    let dir = TempDir::new().unwrap();
    let path = write(
        &dir,
        "d3.json",
        &json!({
            "version": "elastonet-network/1",
            "dimension": 3,
            "nodes": [
                {"label": "a", "position": [0, 0, 0], "kind": "terminal"},
                {"label": "b", "position": [1, 0, 0], "kind": "terminal"},
                {"label": "c", "position": [0, 1, 0], "kind": "terminal"},
                {"label": "m", "position": [0.3, 0.3, 0.5], "mass": 1, "kind": "interior"}
            ],
            "springs": [
                {"labels": ["a", "m"], "stiffness": 1},
                {"labels": ["b", "m"], "stiffness": 1},
                {"labels": ["c", "m"], "stiffness": 1}
            ]
        }),
    );
    let out = run(&["roundtrip", s(&path)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.contains("resonances: 3"));
    assert!(out.stdout.contains("synthesis skipped"));
}

#[test]
fn floppy_chain_is_fixed() {
    let dir = TempDir::new().unwrap();
    let net = write(&dir, "chain.json", &series_chain());
    let fixed = dir.path().join("fixed.json");
    let out = run(&["floppy", s(&net), "--fix", "1e-4", "-o", s(&fixed)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert!(out.stdout.contains("1 floppy modes"));
    assert!(out.stdout.contains("remaining floppy modes: 0"));
    let drift = out
        .stdout
        .lines()
        .find(|l| l.starts_with("response drift"))
        .and_then(|l| l.split_whitespace().nth(2))
        .map(|x| x.parse::<f64>().unwrap())
        .unwrap();
    assert!(drift > 0.0 && drift < 1e-2, "{drift}");
    let out = run(&["floppy", s(&fixed)]);
    assert_eq!(out.code, 0);
    assert_eq!(out.stdout.trim(), "no floppy modes");
}

#[test]
fn rigid_network_has_no_floppy_modes() {
    let dir = TempDir::new().unwrap();
    let net = write(&dir, "tri.json", &static_triangle());
    let out = run(&["floppy", s(&net)]);
    assert_eq!(out.code, 0);
    assert_eq!(out.stdout.trim(), "no floppy modes");
}

#[test]
fn perturbation_drift_is_linear() {
    let dir = TempDir::new().unwrap();
    let net = write(&dir, "tri.json", &static_triangle());
    let out = run(&["perturb", s(&net), "--eps", "1e-2,1e-3,1e-4", "--seed", "4"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let slope = number_after(&out.stdout, "log-log slope");
    assert!((slope - 1.0).abs() < 0.1, "{slope}");
}
