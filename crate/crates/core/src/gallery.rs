//! Built-in scenarios G1 … G7.

use crate::error::{Error, Result};
use crate::scenario::Scenario;

/// Gallery entry: name, virtual dimension, whether it has boundary, what it exercises.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: &'static str,
    pub vdim: i64,
    pub boundary: bool,
    pub doc: &'static str,
}

pub fn gallery() -> Vec<Entry> {
    vec![
        Entry { name: "G1", vdim: 0, boundary: false, doc: "line (-2,2), trivial group, s = y; counts, zero-set convergence, pushout to a point" },
        Entry { name: "G2", vdim: 0, boundary: false, doc: "line with Z/2 acting by y -> -y on chart and fibre; orbifold count 1/2, equivariance up to permutation" },
        Entry { name: "G3", vdim: 0, boundary: false, doc: "spindle S^2(n,n) as two Z/n cone charts with the radial field; count 2/n, n in {2,3,4}" },
        Entry { name: "G4", vdim: 1, boundary: true, doc: "half circle s = x^2 + t^2 - 1 on t >= 0; boundary vanishing, level sweep, Stokes, cobordism" },
        Entry { name: "G5", vdim: 1, boundary: true, doc: "strip [0,1] x (-1,1) with s = y; boundary vanishing, Stokes, grid pushout to [0,1]" },
        Entry { name: "G6", vdim: 2, boundary: false, doc: "Fubini square (0,1)^2 with E = 0 as a correspondence interval -> interval; composition and Fubini" },
        Entry { name: "G7", vdim: 0, boundary: false, doc: "point presented by one chart or by a nested pair of charts; invariance of counts and pushouts" },
    ]
}

/// `G1` … `G7`, with `G3:n` selecting the cone order (default 3).
pub fn by_name(name: &str) -> Result<Scenario> {
    let (base, arg) = match name.split_once(':') {
        Some((b, a)) => (b, Some(a)),
        None => (name, None),
    };
    let src = match (base, arg) {
        ("G1", None) => G1.to_string(),
        ("G2", None) => G2.to_string(),
        ("G3", a) => {
            let n: usize = match a {
                None => 3,
                Some(s) => s.trim_start_matches("n=").parse().map_err(|_| Error::UnresolvedLabel(format!("gallery:{name}")))?,
            };
            if !(2..=4).contains(&n) {
                return Err(Error::UnresolvedLabel(format!("gallery:{name} (cone order must be 2, 3 or 4)")));
            }
            g3(n)
        }
        ("G4", None) => G4.to_string(),
        ("G5", None) => G5.to_string(),
        ("G6", None) => G6.to_string(),
        ("G7", None) => G7.to_string(),
        _ => return Err(Error::UnresolvedLabel(format!("gallery:{name}"))),
    };
    Scenario::from_toml(&src)
}

/// Every gallery scenario, G3 at n = 2, 3, 4.
pub fn all() -> Vec<(String, Scenario)> {
    ["G1", "G2", "G3:2", "G3:3", "G3:4", "G4", "G5", "G6", "G7"]
        .iter()
        .map(|n| (n.to_string(), by_name(n).expect("gallery scenarios parse")))
        .collect()
}

const G1: &str = r#"
name = "G1"
doc = "line (-2,2), trivial group, s = y"

[[chart]]
label = "c"
rank = 1
s = ["y1"]
psi = ["y1"]
domain = { lo = [-2.0], hi = [2.0] }

[[support]]
chart = "c"
k = { lo = [-1.5], hi = [1.5] }
k_prime = { lo = [-1.0], hi = [1.0] }

[[alt_support]]
chart = "c"
k = { lo = [-1.2], hi = [1.2] }
k_prime = { lo = [-0.6], hi = [0.6] }

[[form]]
name = "one"
on = "c"
degree = 0
terms = [{ coef = "1" }]

[[form]]
name = "bump"
on = "c"
degree = 0
terms = [{ coef = "exp(-y1^2)" }]

[run]
pushout_form = "one"
"#;

const G2: &str = r#"
name = "G2"
doc = "line (-2,2) with Z/2 acting by sign on chart and fibre, s = y"

[[chart]]
label = "c"
group = "sign"
rank = 1
rep = "sign"
s = ["y1"]
psi = ["y1^2"]
domain = { lo = [-2.0], hi = [2.0] }

[[support]]
chart = "c"
k = { lo = [-1.5], hi = [1.5] }
k_prime = { lo = [-1.0], hi = [1.0] }

[[alt_support]]
chart = "c"
k = { lo = [-1.2], hi = [1.2] }
k_prime = { lo = [-0.6], hi = [0.6] }

[[form]]
name = "one"
on = "c"
degree = 0
terms = [{ coef = "1" }]

[run]
pushout_form = "one"
"#;

fn g3(n: usize) -> String {
    format!(
        r#"
name = "G3:{n}"
doc = "spindle with two Z/{n} cone points, radial field; count 2/{n}"

[[chart]]
label = "N"
group = "rotation:{n}"
rank = 2
rep = "group"
s = ["y1", "y2"]
psi = ["y1^2 + y2^2", "1"]
domain = {{ center = [0.0, 0.0], radius = 1.0 }}

[[chart]]
label = "S"
group = "rotation:{n}"
rank = 2
rep = "group"
s = ["y1", "y2"]
psi = ["y1^2 + y2^2", "-1"]
domain = {{ center = [0.0, 0.0], radius = 1.0 }}

[[support]]
chart = "N"
k = {{ center = [0.0, 0.0], radius = 0.8 }}
k_prime = {{ center = [0.0, 0.0], radius = 0.6 }}

[[support]]
chart = "S"
k = {{ center = [0.0, 0.0], radius = 0.8 }}
k_prime = {{ center = [0.0, 0.0], radius = 0.6 }}

[[alt_support]]
chart = "N"
k = {{ center = [0.0, 0.0], radius = 0.7 }}
k_prime = {{ center = [0.0, 0.0], radius = 0.4 }}

[[alt_support]]
chart = "S"
k = {{ center = [0.0, 0.0], radius = 0.7 }}
k_prime = {{ center = [0.0, 0.0], radius = 0.4 }}

[[form]]
name = "one"
on = "N"
degree = 0
terms = [{{ coef = "1" }}]

[[form]]
name = "one"
on = "S"
degree = 0
terms = [{{ coef = "1" }}]

[[form]]
name = "one"
on = "M"
degree = 0
dim = 0
terms = [{{ coef = "1" }}]

[run]
stokes_form = "one"
pushout_form = "one"
"#
    )
}

const G4: &str = r#"
name = "G4"
doc = "half circle x^2 + t^2 = 1 on t >= 0 with boundary points (1,0) and (-1,0)"

[[chart]]
label = "c"
rank = 1
s = ["y1^2 + y2^2 - 1"]
psi = ["y1", "y2"]
domain = { lo = [-2.0, 0.0], hi = [2.0, 2.0], closed_lo = [false, true] }

[[support]]
chart = "c"
k = { lo = [-1.8, 0.0], hi = [1.8, 1.8], closed_lo = [false, true] }
k_prime = { lo = [-1.6, 0.0], hi = [1.6, 1.6], closed_lo = [false, true] }

[[map]]
name = "height"
target_dim = 1
exprs = { c = ["y2"] }

[[form]]
name = "h"
on = "c"
degree = 0
terms = [{ coef = "exp(y1) * cos(3 * y2)" }]

[[form]]
name = "dx"
on = "c"
degree = 1
terms = [{ idx = [1], coef = "1" }]

[run]
levels = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.5]
sweep = "height"
stokes_form = "h"
"#;

const G5: &str = r#"
name = "G5"
doc = "strip [0,1] x (-1,1) in (t,y), s = y with reversed fibre orientation"

[[chart]]
label = "c"
rank = 1
s = ["y2"]
psi = ["y1", "y2"]
or_e = -1
domain = { lo = [0.0, -1.0], hi = [1.0, 1.0], closed_lo = [true, false], closed_hi = [true, false] }

[[support]]
chart = "c"
k = { lo = [0.0, -0.8], hi = [1.0, 0.8], closed_lo = [true, false], closed_hi = [true, false] }
k_prime = { lo = [0.0, -0.6], hi = [1.0, 0.6], closed_lo = [true, false], closed_hi = [true, false] }

[[map]]
name = "t"
target_dim = 1
exprs = { c = ["y1"] }

[[map]]
name = "edge"
target_dim = 1
exprs = { c = ["y1 * (1 - y1)"] }

[[form]]
name = "one"
on = "c"
degree = 0
terms = [{ coef = "1" }]

[[form]]
name = "h"
on = "c"
degree = 0
terms = [{ coef = "exp(-20 * (y1 - 0.4)^2)" }]

[[form]]
name = "rho"
on = "M"
degree = 1
dim = 1
terms = [{ idx = [1], coef = "y1^2" }]

[[form]]
name = "wave"
on = "M"
degree = 0
dim = 1
terms = [{ coef = "cos(2 * y1)" }]

[run]
levels = [0.05, 0.1, 0.15, 0.2, 0.23, 0.4]
sweep = "edge"
stokes_form = "h"
pushout_form = "one"
pushout_map = "t"
pair_form = "rho"
chain_form = "wave"
grid = [[0.25], [0.5], [0.75]]
"#;

const G6: &str = r#"
name = "G6"
doc = "Fubini square (0,1)^2 with E = 0; correspondences interval -> interval"

[[chart]]
label = "sq"
rank = 0
psi = ["y1", "y2"]
domain = { lo = [0.0, 0.0], hi = [1.0, 1.0] }

[[chart]]
label = "iv"
rank = 0
psi = ["y1"]
domain = { lo = [0.0], hi = [1.0] }

[[support]]
chart = "sq"
k = { lo = [0.0, 0.0], hi = [1.0, 1.0] }

[[support]]
chart = "iv"
k = { lo = [0.0], hi = [1.0] }

[[presentation]]
name = "square"
charts = ["sq"]

[[presentation]]
name = "interval"
charts = ["iv"]

[[map]]
name = "src"
target_dim = 1
exprs = { sq = ["y1"] }

[[map]]
name = "dst"
target_dim = 1
exprs = { sq = ["y2"] }

[[map]]
name = "id"
target_dim = 1
exprs = { iv = ["y1"] }

[[form]]
name = "dx"
on = "M"
degree = 1
dim = 1
terms = [{ idx = [1], coef = "1" }]

[[form]]
name = "x_dx"
on = "M"
degree = 1
dim = 1
terms = [{ idx = [1], coef = "y1" }]

[[form]]
name = "x2_dx"
on = "M"
degree = 1
dim = 1
terms = [{ idx = [1], coef = "y1^2" }]

[[form]]
name = "exp_dx"
on = "M"
degree = 1
dim = 1
terms = [{ idx = [1], coef = "exp(y1)" }]

[[form]]
name = "sin_dx"
on = "M"
degree = 1
dim = 1
terms = [{ idx = [1], coef = "sin(pi * y1)" }]

[[correspondence]]
name = "square"
presentation = "square"
source = "src"
target = "dst"
dim_source = 1
dim_target = 1

[[correspondence]]
name = "identity"
presentation = "interval"
source = "id"
target = "id"
dim_source = 1
dim_target = 1

[run.compose]
first = "square"
second = "identity"
middle = { lo = [0.0], hi = [1.0] }

[[run.compose.pair]]
label = "dx|x dx"
h = "dx"
rho = "x_dx"
oracle = 0.5

[[run.compose.pair]]
label = "dx|x^2 dx"
h = "dx"
rho = "x2_dx"
oracle = 0.3333333333333333

[[run.compose.pair]]
label = "e^x dx|sin(pi x) dx"
h = "exp_dx"
rho = "sin_dx"
oracle = 1.0938921864969489

[[run.compose.kernel]]
label = "dy1|x dx"
h1 = "1"
h2 = "y1"
oracle = 0.5
fibre = { lo = [0.0], hi = [1.0] }
base = { lo = [0.0], hi = [1.0] }

[[run.compose.kernel]]
label = "x dy1|x dx"
h1 = "y2"
h2 = "y1"
oracle = 0.3333333333333333
fibre = { lo = [0.0], hi = [1.0] }
base = { lo = [0.0], hi = [1.0] }

[[run.compose.kernel]]
label = "e^y1 x dy1|cos(x) dx"
h1 = "exp(y1) * y2"
h2 = "cos(y1)"
oracle = 0.6559941079596461
fibre = { lo = [0.0], hi = [1.0] }
base = { lo = [0.0], hi = [1.0] }
"#;

const G7: &str = r#"
name = "G7"
doc = "the point {0} as the single chart (-2,2)^2 or as the nested pair (-2,2) < (-2,2)^2; bump equal to 1 near X"

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

[[change]]
label = "c1>c2"
src = "c1"
dst = "c2"
phi = ["y1", "0"]
phi_hat = [["1"], ["0"]]
domain = { lo = [-2.0], hi = [2.0] }

[[datum]]
change = "c1>c2"
pi = ["y1"]
phi_tilde = [["1"], ["0"]]
omega12 = { lo = [-2.0, -2.0], hi = [2.0, 2.0] }
omega1 = { lo = [-2.0], hi = [2.0] }

[gcs]
order = [["p1", "p2"]]
pieces = [{ label = "p1", sheets = ["c1"] }, { label = "p2", sheets = ["c2"] }]

[[support]]
chart = "c1"
k = { lo = [-0.03], hi = [0.03] }
k_prime = { lo = [-0.025], hi = [0.025] }

[[support]]
chart = "c2"
k = { lo = [-1.5, -1.5], hi = [1.5, 1.5] }
k_prime = { lo = [-1.2, -1.2], hi = [1.2, 1.2] }

[[presentation]]
name = "two"
charts = ["c1", "c2"]

[[presentation]]
name = "one"
charts = ["c2"]

[[form]]
name = "bump"
on = "c1"
degree = 0
terms = [{ coef = "step(4 * (1 - y1^2))" }]

[[form]]
name = "bump"
on = "c2"
degree = 0
terms = [{ coef = "step(4 * (1 - y1^2))" }]

[run]
pushout_form = "bump"

[run.invariance]
a = "one"
b = "two"
form = "bump"
"#;
