use std::process::{Command, Output};

fn vfckit(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vfckit"));
    cmd.args(args);
    if let Some(t) = threads {
        cmd.env("VFCKIT_THREADS", t);
    }
    cmd.output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

#[test]
fn count_on_the_sign_line() {
    let out = vfckit(&["count", "gallery:G2", "--n", "100", "--seed", "7"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["results"]["total"], "1/2");
    assert_eq!(v["seed"], 7);
    assert_eq!(v["pass"], true);
}

#[test]
fn boundary_of_the_half_circle() {
    let out = vfckit(&["boundary", "gallery:G4", "--n", "50"], None);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["results"]["total"], "0/1");
}

#[test]
fn stokes_on_the_strip() {
    let out = vfckit(&["stokes", "gallery:G5", "--epsilon", "0.1"], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn json_and_csv_files() {
    let dir = std::env::temp_dir().join(format!("vfckit-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let (j, c) = (dir.join("r.json"), dir.join("r.csv"));
    let out = vfckit(&["perturb", "gallery:G1", "--json", j.to_str().unwrap(), "--csv", c.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&j).unwrap()).unwrap();
    assert_eq!(v["command"], "perturb");
    assert!(std::fs::read_to_string(&c).unwrap().lines().count() > 1);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    for args in [["count", "gallery:G3:3"], ["perturb", "gallery:G4"], ["stokes", "gallery:G5"], ["build-gcs", "gallery:G7"]] {
        let strip = |o: Output| {
            let mut v = json(&o);
            v.as_object_mut().unwrap().remove("wall_time_ms");
            v.to_string()
        };
        let one = strip(vfckit(&args, Some("1")));
        let eight = strip(vfckit(&args, Some("8")));
        assert_eq!(one, eight, "{args:?}");
    }
}

#[test]
fn gallery_listing() {
    let out = vfckit(&["gallery"], None);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 7);
}

#[test]
fn unknown_command_exits_two() {
    let out = vfckit(&["integrate", "gallery:G1"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("UNKNOWN_COMMAND:"));
}

#[test]
fn mismatched_command_exits_two() {
    let out = vfckit(&["count", "gallery:G4"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("COMMAND_SCENARIO_MISMATCH:"));
}

#[test]
fn bad_scenario_file_exits_two() {
    let path = std::env::temp_dir().join(format!("vfckit-bad-{}.toml", std::process::id()));
    std::fs::write(&path, "name = \"x\"\n[[chartt]]\nlabel = \"c\"\n").unwrap();
    let out = vfckit(&["verify", path.to_str().unwrap()], None);
    std::fs::remove_file(&path).unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("PARSE_ERROR:"));
}

#[test]
fn failing_check_exits_one() {
    // A residual bound below rounding cannot be met at the coarse quadrature order.
    let out = vfckit(&["stokes", "gallery:G5", "--grid", "4", "--tol", "1e-300"], None);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["pass"], false);
}
