use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn weldlab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weldlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("WELDLAB_OUT")
        .output()
        .expect("spawn weldlab")
}

fn files_with(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(ext))
        .collect();
    v.sort();
    v
}

fn manifest(dir: &Path) -> serde_json::Value {
    let m = files_with(dir, ".manifest.json");
    assert_eq!(m.len(), 1, "{m:?}");
    serde_json::from_str(&std::fs::read_to_string(&m[0]).unwrap()).unwrap()
}

#[test]
fn drive_stops_at_continuation_threshold() {
    let d = tempfile::tempdir().unwrap();
    let o = weldlab(&["drive", "--kappa", "2", "--rho", "-2.5@0+", "--T", "10", "--dt", "1e-4", "--seed", "7"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rec = files_with(d.path(), ".driving");
    assert_eq!(rec.len(), 1);
    let name = rec[0].file_name().unwrap().to_string_lossy().into_owned();
    assert!(name.starts_with("drive-7-"), "{name}");
    let r = weldlab::io::read_driving(std::fs::File::open(&rec[0]).unwrap()).unwrap();
    assert_eq!(r.stop.tag(), "continuation_threshold");
    let m = manifest(d.path());
    assert_eq!(m["params"]["horizon"], "10");
    assert_eq!(m["params"]["engine"], "chordal");
    assert_eq!(m["summary"]["stop"], "continuation_threshold");
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cmds: [&[&str]; 3] = [
        &["drive", "--kappa", "3", "--engine", "radial", "--T", "0.5", "--dt", "1e-3", "--seed", "11"],
        &["sample-gff", "--grid", "h:17:9:2:2", "--seed", "5"],
        &["sample-liouville", "--gamma", "1", "--grid", "h:17:9:2:2", "--insertions", "b:1:0", "--seed", "5"],
    ];
    for c in cmds {
        assert_eq!(weldlab(c, a.path()).status.code(), Some(0));
        assert_eq!(weldlab(c, b.path()).status.code(), Some(0));
    }
    for ext in [".driving", ".field"] {
        let (fa, fb) = (files_with(a.path(), ext), files_with(b.path(), ext));
        assert!(!fa.is_empty());
        assert_eq!(fa.len(), fb.len());
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{x:?}");
        }
    }
}

#[test]
fn trace_then_extract_roundtrip() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(weldlab(&["drive", "--kappa", "2", "--T", "0.05", "--dt", "1e-4", "--seed", "3"], d.path()).status.code(), Some(0));
    let drv = files_with(d.path(), ".driving").remove(0);
    let o = weldlab(&["trace", "--input", drv.to_str().unwrap()], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let curve = files_with(d.path(), ".curve").remove(0);
    let e = tempfile::tempdir().unwrap();
    assert_eq!(weldlab(&["extract", "--input", curve.to_str().unwrap()], e.path()).status.code(), Some(0));
    let back = weldlab::io::read_driving(std::fs::File::open(files_with(e.path(), ".driving").remove(0)).unwrap()).unwrap();
    let orig = weldlab::io::read_driving(std::fs::File::open(&drv).unwrap()).unwrap();
    assert!(weldlab::sle::sup_driving_error(&orig, &back) < 0.05);
}

#[test]
fn config_errors_exit_two_and_name_the_key() {
    let d = tempfile::tempdir().unwrap();
    let o = weldlab(&["sample-liouville", "--seed", "1"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
    let o = weldlab(&["sample-surface", "--gamma", "2.2", "--kind", "disk2", "--w", "2", "--seed", "1"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gamma"));
    let o = weldlab(&["drive", "--kappa", "2", "--T", "1", "--seed", "x"], d.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    let o = weldlab(&["frobnicate"], d.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_with_flag_override() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("run.cfg");
    std::fs::write(&cfg, "# radial run\nkappa = 4\nengine = radial\nT = 0.2\nseed = 9\n").unwrap();
    let o = weldlab(&["drive", "--config", cfg.to_str().unwrap(), "--kappa", "2"], d.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(d.path());
    assert_eq!(m["params"]["kappa"], "2");
    assert_eq!(m["params"]["engine"], "radial");
    assert_eq!(m["params"]["dt"], "1e-3");
}

#[test]
fn output_dir_from_environment() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_weldlab"))
        .args(["drive", "--kappa", "2", "--T", "0.01", "--seed", "1"])
        .env("WELDLAB_OUT", d.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(files_with(d.path(), ".driving").len(), 1);
}

#[test]
fn weld_starvation_is_a_numerical_abort() {
    let d = tempfile::tempdir().unwrap();
    let o = weldlab(
        &["weld", "--gamma", "1", "--w", "2", "--max_proposals", "3", "--delta_weld", "1e-9", "--seed", "3"],
        d.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    let diag = files_with(d.path(), ".diag.txt");
    assert_eq!(diag.len(), 1);
    assert!(std::fs::read_to_string(&diag[0]).unwrap().contains("starvation"));
    assert_eq!(manifest(d.path())["status"], "numerical_abort");
}

fn zipper_report(dir: &Path, seed: &str) -> PathBuf {
    let o = weldlab(&["experiment-zipper", "--gamma", "1", "--n", "20", "--seed", seed], dir);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    files_with(dir, ".report.json").into_iter().find(|p| p.to_string_lossy().contains(&format!("-{seed}-"))).unwrap()
}

#[test]
fn stats_merges_reports() {
    let d = tempfile::tempdir().unwrap();
    let (r1, r2) = (zipper_report(d.path(), "1"), zipper_report(d.path(), "2"));
    let single = tempfile::tempdir().unwrap();
    let o = weldlab(&["stats", "--inputs", r1.to_str().unwrap()], single.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let merged = files_with(single.path(), ".report.json").remove(0);
    let parse = |p: &Path| -> serde_json::Value { serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap() };
    assert_eq!(parse(&merged), parse(&r1));

    let both = tempfile::tempdir().unwrap();
    let inputs = format!("{},{}", r1.display(), r2.display());
    assert_eq!(weldlab(&["stats", "--inputs", &inputs], both.path()).status.code(), Some(0));
    let m: weldlab::welding::Report =
        serde_json::from_str(&std::fs::read_to_string(files_with(both.path(), ".report.json").remove(0)).unwrap()).unwrap();
    let a: weldlab::welding::Report = serde_json::from_str(&std::fs::read_to_string(&r1).unwrap()).unwrap();
    let t = m.test("zipper_bulk_slope").unwrap();
    assert_eq!(t.n, 2 * a.test("zipper_bulk_slope").unwrap().n);

    let other = tempfile::tempdir().unwrap();
    let o = weldlab(&["experiment-zipper", "--gamma", "1.2", "--n", "20", "--seed", "1"], other.path());
    assert_eq!(o.status.code(), Some(0));
    let r3 = files_with(other.path(), ".report.json").remove(0);
    let bad = tempfile::tempdir().unwrap();
    let inputs = format!("{},{}", r1.display(), r3.display());
    let o = weldlab(&["stats", "--inputs", &inputs], bad.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).to_lowercase().contains("schema"));
}
