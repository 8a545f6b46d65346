#![allow(dead_code)]

use vfckit::scenario::{load_scenario, Model, Scenario};

pub fn gallery(name: &str) -> Model {
    load_scenario(&format!("gallery:{name}")).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn toml(src: &str) -> Model {
    Model::build(Scenario::from_toml(src).unwrap()).unwrap()
}

pub const ALL: [&str; 9] = ["G1", "G2", "G3:2", "G3:3", "G3:4", "G4", "G5", "G6", "G7"];

/// Three nested charts R ⊂ R² ⊂ R³ over the point {0}.
pub fn nested_ok() -> Model {
    toml(
        r#"
name = "nested"

[[chart]]
label = "c1"
rank = 1
s = ["y1"]
psi = ["y1"]
domain = { lo = [-2.0], hi = [2.0] }

[[chart]]
label = "c2"
rank = 2
s = ["y1", "y2"]
psi = ["y1"]
domain = { lo = [-2.0, -2.0], hi = [2.0, 2.0] }

[[chart]]
label = "c3"
rank = 3
s = ["y1", "y2", "y3"]
psi = ["y1"]
domain = { lo = [-2.0, -2.0, -2.0], hi = [2.0, 2.0, 2.0] }

[[change]]
label = "c1>c2"
src = "c1"
dst = "c2"
phi = ["y1", "0"]
phi_hat = [["1"], ["0"]]
domain = { lo = [-2.0], hi = [2.0] }

[[change]]
label = "c2>c3"
src = "c2"
dst = "c3"
phi = ["y1", "y2", "0"]
phi_hat = [["1", "0"], ["0", "1"], ["0", "0"]]
domain = { lo = [-2.0, -2.0], hi = [2.0, 2.0] }

[[change]]
label = "c1>c3"
src = "c1"
dst = "c3"
phi = ["y1", "0", "0"]
phi_hat = [["1"], ["0"], ["0"]]
domain = { lo = [-2.0], hi = [2.0] }
"#,
    )
}
