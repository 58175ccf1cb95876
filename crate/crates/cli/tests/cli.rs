use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

fn liebflux(args: &[&str], config: Option<&Path>, out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_liebflux"));
    cmd.args(args);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    if let Some(o) = out {
        cmd.arg("--out").arg(o);
    }
    cmd.output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn unknown_key_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "experiment = \"toy\"\n[toy]\nomega1 = \"2*pi/1000\"\nomega2 = \"2*pi/1000\"\nomega3 = 1\n",
    );
    let o = liebflux(&["toy"], Some(&cfg), Some(&dir.path().join("out")));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("toy.omega3"), "{}", stderr(&o));
    assert!(stderr(&o).contains("config_unknown_key"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_and_mistyped_keys_are_distinguished() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[lattice]\nnx = 2\n");
    let o = liebflux(&["spectrum"], Some(&cfg), None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config_missing_key") && stderr(&o).contains("lattice.ny"));

    let cfg = write_config(dir.path(), "[lattice]\nnx = 2\nny = true\n");
    let o = liebflux(&["spectrum"], Some(&cfg), None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("config_type_mismatch"));

    let o = liebflux(&["spectrum"], Some(&dir.path().join("absent.toml")), None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unconverged_evolution_exits_with_convergence_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[lattice]\nnx = 2\nny = 2\n[gauge]\nx0 = -4\ny0 = -4\n[schedule]\nomega = \"2*pi*1e-3\"\n[evolve]\nphi_final = \"3*pi\"\ndphi_step = 0.2\nmax_refinements = 0\n",
    );
    let o = liebflux(&["evolve"], Some(&cfg), Some(&dir.path().join("out")));
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("not_converged") || stderr(&o).contains("converge"));
}

#[test]
fn manifest_lists_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "plot = true\n[lattice]\nnx = 2\nny = 2\n[spectrum]\nphi_max = \"4*pi\"\npoints = 33\n",
    );
    let o = liebflux(&["spectrum"], Some(&cfg), Some(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let on_disk: BTreeSet<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let manifest: toml::Table = std::fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    let listed: BTreeSet<String> = manifest["outputs"]["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    assert_eq!(on_disk, listed);
    assert!(listed.contains("butterfly.svg"));
    assert_eq!(manifest["tool"]["version"].as_str(), Some(env!("CARGO_PKG_VERSION")));
    assert_eq!(manifest["spectrum"]["points"].as_integer(), Some(33));

    let butterfly = std::fs::read_to_string(out.join("butterfly.csv")).unwrap();
    assert_eq!(butterfly.lines().count(), 34);
    let degeneracy = std::fs::read_to_string(out.join("degeneracy.csv")).unwrap();
    // phi = 0 row: 4 flat states plus the A-supported mode
    assert!(degeneracy.lines().nth(1).unwrap().ends_with(",5,4"));
}

#[test]
fn fast_flag_overrides_ramp_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "[lattice]\nnx = 2\nny = 2\n[schedule]\nomega = \"2*pi*1e-5\"\n[evolve]\nphi_final = \"1.5*pi\"\ncheck_convergence = false\ndphi_step = 1e-2\n",
    );
    let o = liebflux(&["evolve", "--fast"], Some(&cfg), Some(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: toml::Table = std::fs::read_to_string(out.join("manifest.toml")).unwrap().parse().unwrap();
    let omega = manifest["schedule"]["omega"].as_float().unwrap();
    assert!((omega - 2.0 * std::f64::consts::PI * 1e-3).abs() < 1e-15);
    let csv = std::fs::read_to_string(out.join("evolution.csv")).unwrap();
    assert!(csv.lines().any(|l| l == "t,phi,P,w_plus,w_minus,energy,norm"));
}

#[test]
fn subcommand_conflicting_with_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiment = \"rates\"\n[lattice]\nnx = 2\nny = 2\n");
    let o = liebflux(&["localized"], Some(&cfg), None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plot_renders_run_output_and_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "[lattice]\nnx = 2\nny = 2\n");
    let o = liebflux(&["localized"], Some(&cfg), Some(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("localized_state.csv")).unwrap();
    assert!(csv.contains("index,sublattice,x,y,re,im"));

    let toy_cfg = dir.path().join("toy.toml");
    std::fs::write(
        &toy_cfg,
        "[toy]\nomega1 = \"2*pi/1000\"\nomega2 = \"2*pi/1000\"\nt_start = 50\nt_final = 400\ncheck_convergence = false\n",
    )
    .unwrap();
    let o = liebflux(&["toy"], Some(&toy_cfg), Some(&out));
    assert!(o.status.success(), "{}", stderr(&o));
    let svg_path = dir.path().join("toy.svg");
    let o = Command::new(env!("CARGO_BIN_EXE_liebflux"))
        .arg("plot")
        .arg(out.join("toy.csv"))
        .arg("--out")
        .arg(&svg_path)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = std::fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("ω1t"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "t,phi,P,w_plus,w_minus,energy,norm\n0,1,oops,0,0,0,1\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_liebflux")).arg("plot").arg(&bad).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("malformed_csv"));
}
