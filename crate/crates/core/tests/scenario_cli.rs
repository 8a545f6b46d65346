mod common;

use common::*;
use num_rational::Rational64;
use vfckit::gallery::{all, by_name, gallery as entries};
use vfckit::report::{rational, scenario_hash};
use vfckit::run::{run, Flags, COMMANDS};
use vfckit::scenario::{load_scenario, Model, Scenario};

const LINE: &str = r#"
name = "line"

[[chart]]
label = "c"
rank = 1
s = ["y1"]
psi = ["y1"]
domain = { lo = [-2.0], hi = [2.0] }
"#;

#[test]
fn gallery_lists_seven_entries() {
    let e = entries();
    assert_eq!(e.len(), 7);
    let names: Vec<&str> = e.iter().map(|x| x.name).collect();
    assert_eq!(names, ["G1", "G2", "G3", "G4", "G5", "G6", "G7"]);
    assert_eq!(e.iter().filter(|x| x.boundary).count(), 2);
    assert_eq!(all().len(), ALL.len());
}

#[test]
fn cone_order_selection() {
    assert_eq!(by_name("G3:2").unwrap().charts[0].group, "rotation:2");
    assert_eq!(by_name("G3:n=4").unwrap().charts[0].group, "rotation:4");
    assert_eq!(by_name("G3").unwrap(), by_name("G3:3").unwrap());
    assert_eq!(by_name("G3:5").unwrap_err().code(), "UNRESOLVED_LABEL");
    assert_eq!(by_name("G9").unwrap_err().code(), "UNRESOLVED_LABEL");
}

#[test]
fn every_scenario_round_trips() {
    for (name, sc) in all() {
        let text = sc.to_toml().unwrap();
        let back = Scenario::from_toml(&text).unwrap();
        assert_eq!(back, sc, "{name}");
        assert_eq!(scenario_hash(&back).unwrap(), scenario_hash(&sc).unwrap());
        Model::build(back).unwrap();
    }
}

#[test]
fn minimal_scenario_builds() {
    let m = toml(LINE);
    assert_eq!(m.presentations.len(), 1);
    assert_eq!(m.primary().ks.vdim(), Some(0));
}

#[test]
fn misspelt_key_reports_position() {
    let bad = LINE.replace("[[chart]]", "[[chartt]]");
    match Scenario::from_toml(&bad) {
        Err(vfckit::Error::Parse { line, col, msg }) => {
            assert_eq!(line, 4);
            assert!(col >= 1);
            assert!(msg.contains("chartt"), "{msg}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
    let bad = LINE.replace("rank = 1", "rank = 1\nsupport_radius = 2");
    assert_eq!(Scenario::from_toml(&bad).unwrap_err().code(), "PARSE_ERROR");
}

#[test]
fn absolute_value_is_not_smooth() {
    let bad = LINE.replace(r#"s = ["y1"]"#, r#"s = ["abs(y1)"]"#);
    let err = Model::build(Scenario::from_toml(&bad).unwrap()).unwrap_err();
    assert_eq!(err.code(), "TYPE_ERROR");
}

#[test]
fn unknown_labels() {
    let bad = format!("{LINE}\n[[support]]\nchart = \"d\"\nk = {{ lo = [-1.0], hi = [1.0] }}\n");
    assert_eq!(Model::build(Scenario::from_toml(&bad).unwrap()).unwrap_err().code(), "UNRESOLVED_LABEL");
    let bad = format!("{LINE}\n[run]\nstokes_form = \"nothing\"\n");
    assert_eq!(Model::build(Scenario::from_toml(&bad).unwrap()).unwrap_err().code(), "UNRESOLVED_LABEL");
    assert_eq!(load_scenario("gallery:G8").unwrap_err().code(), "UNRESOLVED_LABEL");
}

#[test]
fn missing_file_is_a_parse_error() {
    assert_eq!(load_scenario("/nonexistent/scenario.toml").unwrap_err().code(), "PARSE_ERROR");
}

#[test]
fn commands_refuse_the_wrong_dimension() {
    let g4 = gallery("G4");
    let err = run("count", &g4, &Flags::default()).unwrap_err();
    assert_eq!(err.code(), "COMMAND_SCENARIO_MISMATCH");
    let g1 = gallery("G1");
    assert_eq!(run("boundary", &g1, &Flags::default()).unwrap_err().code(), "COMMAND_SCENARIO_MISMATCH");
    assert_eq!(run("sweep", &g1, &Flags::default()).unwrap_err().code(), "COMMAND_SCENARIO_MISMATCH");
}

#[test]
fn rationals_print_with_denominator() {
    assert_eq!(rational(Rational64::from_integer(0)), "0/1");
    assert_eq!(rational(Rational64::new(2, 6)), "1/3");
    assert_eq!(rational(Rational64::new(-1, 2)), "-1/2");
    assert_eq!(rational(Rational64::from_integer(1)), "1/1");
}

#[test]
fn count_report_shape() {
    let out = run("count", &gallery("G2"), &Flags { n: Some(100), seed: Some(7), ..Flags::default() }).unwrap();
    let r = &out.report;
    assert_eq!(r.exit_code(), 0);
    assert_eq!(r.command, "count");
    assert_eq!(r.seed, 7);
    assert_eq!(r.results["total"], "1/2");
    assert_eq!(r.scenario_hash.len(), 64);
    let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert!(v.get("wall_time_ms").is_some());
    let v: serde_json::Value = serde_json::from_str(&r.to_json_without_time().unwrap()).unwrap();
    assert!(v.get("wall_time_ms").is_none());
    let csv = out.csv.unwrap();
    assert!(csv.lines().count() > 1);
}

#[test]
fn boundary_report_prints_zero_as_rational() {
    let out = run("boundary", &gallery("G4"), &Flags { n: Some(50), ..Flags::default() }).unwrap();
    assert_eq!(out.report.results["total"], "0/1");
    assert_eq!(out.report.exit_code(), 0);
}

#[test]
fn reports_are_reproducible() {
    for (cmd, name) in [("count", "G3:3"), ("perturb", "G1"), ("stokes", "G5"), ("build-gcs", "G7")] {
        let a = run(cmd, &gallery(name), &Flags::default()).unwrap().report.to_json_without_time().unwrap();
        let b = run(cmd, &gallery(name), &Flags::default()).unwrap().report.to_json_without_time().unwrap();
        assert_eq!(a, b, "{cmd} {name}");
    }
}

#[test]
fn every_applicable_command_passes_on_the_gallery() {
    for name in ALL {
        let m = gallery(name);
        for cmd in COMMANDS {
            match run(cmd, &m, &Flags::default()) {
                Ok(out) => assert_eq!(
                    out.report.exit_code(),
                    0,
                    "{cmd} {name}: {:?}",
                    out.report.checks.iter().filter(|c| !c.passed()).map(|c| &c.name).collect::<Vec<_>>()
                ),
                Err(e) => assert_eq!(e.code(), "COMMAND_SCENARIO_MISMATCH", "{cmd} {name}: {e}"),
            }
        }
    }
}
