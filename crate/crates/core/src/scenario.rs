//! Scenario documents: TOML with named blocks, expressions in the smooth language.

use crate::bundle::{BundleChart, BundleExtensionDatum};
use crate::error::{Error, Result};
use crate::expr::{Expr, VarSpace};
use crate::kuranishi::{
    build_gcs, ChangeKind, ChartEmbedding, CoordinateChange, EmbeddingKind, EmbeddingRecord, Gcs, KuranishiChart,
    KuranishiStructure, Piece, Support,
};
use crate::map::{ExprMatrix, SmoothMap};
use crate::orbifold::{Domain, FiniteGroupAction, Form, OrbifoldChart};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub doc: String,
    #[serde(default, rename = "chart")]
    pub charts: Vec<ChartSpec>,
    #[serde(default, rename = "change", skip_serializing_if = "Vec::is_empty")]
    pub changes: Vec<ChangeSpec>,
    #[serde(default, rename = "datum", skip_serializing_if = "Vec::is_empty")]
    pub data: Vec<DatumSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gcs: Option<GcsSpec>,
    #[serde(default, rename = "support", skip_serializing_if = "Vec::is_empty")]
    pub supports: Vec<SupportSpec>,
    #[serde(default, rename = "alt_support", skip_serializing_if = "Vec::is_empty")]
    pub alt_supports: Vec<SupportSpec>,
    #[serde(default, rename = "presentation", skip_serializing_if = "Vec::is_empty")]
    pub presentations: Vec<PresentationSpec>,
    #[serde(default, rename = "map", skip_serializing_if = "Vec::is_empty")]
    pub maps: Vec<MapSpec>,
    #[serde(default, rename = "form", skip_serializing_if = "Vec::is_empty")]
    pub forms: Vec<FormSpec>,
    #[serde(default, rename = "correspondence", skip_serializing_if = "Vec::is_empty")]
    pub correspondences: Vec<CorrespondenceSpec>,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub tolerances: TolSpec,
}

/// Box (lo/hi with optional closed faces) or ball (center/radius).
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lo: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub closed_lo: Vec<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub closed_hi: Vec<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub center: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub label: String,
    /// `trivial`, `sign`, `rotation:N` or `matrices`.
    #[serde(default = "trivial")]
    pub group: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group_matrices: Vec<Vec<Vec<f64>>>,
    pub rank: usize,
    /// `trivial`, `sign`, `group` (the base action) or `matrices`.
    #[serde(default = "trivial")]
    pub rep: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rep_matrices: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub s: Vec<String>,
    pub psi: Vec<String>,
    #[serde(default = "plus")]
    pub or_u: i8,
    #[serde(default = "plus")]
    pub or_e: i8,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub base_point: Vec<f64>,
    pub domain: DomainSpec,
}

fn trivial() -> String {
    "trivial".into()
}
fn plus() -> i8 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChangeSpec {
    pub label: String,
    pub src: String,
    pub dst: String,
    /// `strong`, `weak` or `open`.
    #[serde(default = "strong")]
    pub kind: String,
    pub phi: Vec<String>,
    /// Image of each source group element; identity indices by default.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hom: Vec<usize>,
    pub phi_hat: Vec<Vec<String>>,
    pub domain: DomainSpec,
}

fn strong() -> String {
    "strong".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumSpec {
    pub change: String,
    pub pi: Vec<String>,
    pub phi_tilde: Vec<Vec<String>>,
    pub omega12: DomainSpec,
    pub omega1: DomainSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub label: String,
    pub sheets: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcsSpec {
    /// Pairs (lower, higher) of piece labels.
    #[serde(default)]
    pub order: Vec<[String; 2]>,
    pub pieces: Vec<PieceSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportSpec {
    pub chart: String,
    pub k: DomainSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_prime: Option<DomainSpec>,
}

/// A sub-family of charts presented as its own structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresentationSpec {
    pub name: String,
    pub charts: Vec<String>,
}

/// Smooth map to R^target_dim given per chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub name: String,
    pub target_dim: usize,
    pub exprs: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    /// 1-based increasing indices; empty for functions.
    #[serde(default)]
    pub idx: Vec<usize>,
    pub coef: String,
}

/// Differential form on one chart, or on the target when `on = "M"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormSpec {
    pub name: String,
    pub on: String,
    pub degree: usize,
    /// Dimension of the target; only for `on = "M"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub terms: Vec<TermSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrespondenceSpec {
    pub name: String,
    pub presentation: String,
    pub source: String,
    pub target: String,
    pub dim_source: usize,
    pub dim_target: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub label: String,
    pub h: String,
    pub rho: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<f64>,
}

/// Manifold Fubini kernel on fibre × base: h1 on the product, h2 on the base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub label: String,
    pub h1: String,
    pub h2: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<f64>,
    pub fibre: DomainSpec,
    pub base: DomainSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeSpec {
    pub first: String,
    pub second: String,
    pub middle: DomainSpec,
    #[serde(default, rename = "pair")]
    pub pairs: Vec<PairSpec>,
    #[serde(default, rename = "kernel")]
    pub kernels: Vec<KernelSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvarianceSpec {
    /// Presentations compared; the first must embed into the second chart by chart.
    pub a: String,
    pub b: String,
    pub form: String,
}

/// Command parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_n")]
    pub n: Vec<u64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_ladder")]
    pub ladder: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stokes_form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pushout_form: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pushout_map: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_form: Option<String>,
    /// Function on the target for the chain-map identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_form: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grid: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compose: Option<ComposeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariance: Option<InvarianceSpec>,
}

fn default_n() -> Vec<u64> {
    vec![50, 100]
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn default_ladder() -> Vec<f64> {
    crate::tol::EPS_LADDER.to_vec()
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            n: default_n(),
            seeds: default_seeds(),
            ladder: default_ladder(),
            levels: Vec::new(),
            sweep: None,
            stokes_form: None,
            pushout_form: None,
            pushout_map: None,
            pair_form: None,
            chain_form: None,
            grid: Vec::new(),
            compose: None,
            invariance: None,
        }
    }
}

/// Bounds asserted by the commands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolSpec {
    #[serde(default = "d_structural")]
    pub structural: f64,
    #[serde(default = "d_stokes")]
    pub stokes: f64,
    #[serde(default = "d_compose")]
    pub compose: f64,
    #[serde(default = "d_pushout")]
    pub pushout_gap: f64,
    #[serde(default = "d_delta_u")]
    pub delta_u: f64,
}

fn d_structural() -> f64 {
    1e-8
}
fn d_stokes() -> f64 {
    1e-6
}
fn d_compose() -> f64 {
    1e-8
}
fn d_pushout() -> f64 {
    1e-6
}
fn d_delta_u() -> f64 {
    crate::tol::DELTA_U
}

impl Default for TolSpec {
    fn default() -> Self {
        TolSpec { structural: d_structural(), stokes: d_stokes(), compose: d_compose(), pushout_gap: d_pushout(), delta_u: d_delta_u() }
    }
}

impl Scenario {
    pub fn from_toml(src: &str) -> Result<Scenario> {
        toml::from_str(src).map_err(|e| {
            let (line, col) = e.span().map_or((0, 0), |s| line_col(src, s.start));
            Error::Parse { line, col, msg: e.message().to_string() }
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Type(format!("cannot serialize scenario: {e}")))
    }
}

fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, col)
}

/// Load a file path or `gallery:NAME[:n]`.
pub fn load_scenario(path: &str) -> Result<Model> {
    let sc = match path.strip_prefix("gallery:") {
        Some(name) => crate::gallery::by_name(name)?,
        None => {
            let src = std::fs::read_to_string(path).map_err(|e| Error::Parse { line: 0, col: 0, msg: format!("{path}: {e}") })?;
            Scenario::from_toml(&src)?
        }
    };
    Model::build(sc)
}

/// One presentation turned into a good coordinate system.
#[derive(Clone, Debug)]
pub struct Presentation {
    pub name: String,
    pub ks: KuranishiStructure,
    pub gcs: Gcs,
    /// Embedding of the generating family into the good coordinate system.
    pub kg: EmbeddingRecord,
    pub alt_supports: Option<Vec<Support>>,
}

/// Validated object graph of a scenario.
#[derive(Clone, Debug)]
pub struct Model {
    pub scenario: Scenario,
    pub charts: Vec<KuranishiChart>,
    pub presentations: Vec<Presentation>,
    /// name → chart label → map.
    pub maps: BTreeMap<String, (usize, BTreeMap<String, SmoothMap>)>,
    /// name → chart label (or "M") → form.
    pub forms: BTreeMap<String, BTreeMap<String, Form>>,
}

pub fn domain(d: &DomainSpec) -> Result<Domain> {
    if let Some(r) = d.radius {
        if !d.lo.is_empty() || !d.hi.is_empty() {
            return Err(Error::Type("a domain is either a box or a ball".into()));
        }
        if r <= 0.0 || d.center.is_empty() {
            return Err(Error::Type("ball needs a center and a positive radius".into()));
        }
        return Ok(Domain::ball(d.center.clone(), r));
    }
    let n = d.lo.len();
    if n == 0 || d.hi.len() != n || d.lo.iter().zip(&d.hi).any(|(a, b)| a >= b) {
        return Err(Error::Type(format!("box needs lo < hi componentwise, got {:?} and {:?}", d.lo, d.hi)));
    }
    let flags = |v: &Vec<bool>| if v.is_empty() { Ok(vec![false; n]) } else if v.len() == n { Ok(v.clone()) } else { Err(Error::Type("face flags do not match the box dimension".into())) };
    Ok(Domain::with_faces(d.lo.clone(), d.hi.clone(), flags(&d.closed_lo)?, flags(&d.closed_hi)?))
}

pub fn domain_spec(d: &Domain) -> DomainSpec {
    match d {
        Domain::Box(b) => DomainSpec {
            lo: b.lo.clone(),
            hi: b.hi.clone(),
            closed_lo: if b.closed_lo.iter().any(|x| *x) { b.closed_lo.clone() } else { Vec::new() },
            closed_hi: if b.closed_hi.iter().any(|x| *x) { b.closed_hi.clone() } else { Vec::new() },
            ..Default::default()
        },
        Domain::Ball { center, radius } => DomainSpec { center: center.clone(), radius: Some(*radius), ..Default::default() },
    }
}

fn group(name: &str, matrices: &[Vec<Vec<f64>>], dim: usize) -> Result<FiniteGroupAction> {
    match name {
        "trivial" => Ok(FiniteGroupAction::trivial(dim)),
        "sign" => Ok(FiniteGroupAction::sign(dim)),
        "matrices" => FiniteGroupAction::from_rows(matrices.to_vec()),
        _ => match name.strip_prefix("rotation:").map(str::parse::<usize>) {
            Some(Ok(n)) if n >= 1 && dim == 2 => Ok(FiniteGroupAction::rotation(n)),
            Some(Ok(_)) => Err(Error::Type("rotation groups act on the plane".into())),
            _ => Err(Error::Type(format!("unknown group {name}"))),
        },
    }
}

fn parse_exprs(srcs: &[String], space: VarSpace) -> Result<Vec<Expr>> {
    srcs.iter().map(|s| Expr::parse(s, space)).collect()
}

fn expr_matrix(rows: &[Vec<String>], ny: usize, nrows: usize, ncols: usize) -> Result<ExprMatrix> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::MalformedMatrix(format!("expected a {nrows}x{ncols} matrix")));
    }
    ExprMatrix::from_rows(rows.iter().map(|r| parse_exprs(r, VarSpace::y(ny))).collect::<Result<_>>()?)
}

fn build_chart(c: &ChartSpec) -> Result<KuranishiChart> {
    let dom = domain(&c.domain)?;
    let n = dom.dim();
    let g = group(&c.group, &c.group_matrices, n)?;
    let base_point = if c.base_point.is_empty() {
        let (lo, hi) = dom.bbox();
        lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect()
    } else {
        c.base_point.clone()
    };
    let order = g.order();
    let base = OrbifoldChart::new(c.label.clone(), dom, g.clone(), base_point);
    let rep: Vec<DMatrix<f64>> = match c.rep.as_str() {
        "trivial" => vec![DMatrix::identity(c.rank, c.rank); order],
        "sign" => (0..order).map(|k| if k == 0 { DMatrix::identity(c.rank, c.rank) } else { -DMatrix::identity(c.rank, c.rank) }).collect(),
        "group" => g.elements.clone(),
        "matrices" => FiniteGroupAction::from_rows(c.rep_matrices.clone())?.elements,
        other => return Err(Error::Type(format!("unknown representation {other}"))),
    };
    let bundle = BundleChart::new(base, c.rank, rep)?;
    let s = SmoothMap::new(parse_exprs(&c.s, VarSpace::y(n))?, n, 0);
    let psi = SmoothMap::new(parse_exprs(&c.psi, VarSpace::y(n))?, n, 0);
    KuranishiChart::new(bundle, s, psi, c.or_u, c.or_e)
}

fn build_change(ch: &ChangeSpec, charts: &[KuranishiChart]) -> Result<CoordinateChange> {
    let find = |l: &str| charts.iter().find(|c| c.label() == l).ok_or_else(|| Error::UnresolvedLabel(l.into()));
    let (src, dst) = (find(&ch.src)?, find(&ch.dst)?);
    let kind = match ch.kind.as_str() {
        "strong" => ChangeKind::Strong,
        "weak" => ChangeKind::Weak,
        "open" => ChangeKind::Open,
        other => return Err(Error::Type(format!("unknown change kind {other}"))),
    };
    let n = src.dim();
    let phi = SmoothMap::new(parse_exprs(&ch.phi, VarSpace::y(n))?, n, 0);
    if phi.dim_out() != dst.dim() {
        return Err(Error::DimMismatch(format!("{} maps into a {}-dimensional chart", ch.label, dst.dim())));
    }
    let hom = if ch.hom.is_empty() { (0..src.group().order()).collect() } else { ch.hom.clone() };
    if hom.len() != src.group().order() || hom.iter().any(|&h| h >= dst.group().order()) {
        return Err(Error::Type(format!("{}: group homomorphism table does not fit", ch.label)));
    }
    Ok(CoordinateChange {
        label: ch.label.clone(),
        kind,
        src: ch.src.clone(),
        dst: ch.dst.clone(),
        domain: domain(&ch.domain)?,
        phi,
        hom,
        phi_hat: expr_matrix(&ch.phi_hat, n, dst.rank(), src.rank())?,
    })
}

fn build_datum(d: &DatumSpec, ks_changes: &[CoordinateChange], charts: &[KuranishiChart]) -> Result<BundleExtensionDatum> {
    let ch = ks_changes.iter().find(|c| c.label == d.change).ok_or_else(|| Error::UnresolvedLabel(d.change.clone()))?;
    let find = |l: &str| charts.iter().find(|c| c.label() == l).ok_or_else(|| Error::UnresolvedLabel(l.into()));
    let (src, dst) = (find(&ch.src)?, find(&ch.dst)?);
    let n = dst.dim();
    let pi = SmoothMap::new(parse_exprs(&d.pi, VarSpace::y(n))?, n, 0);
    if pi.dim_out() != src.dim() {
        return Err(Error::DimMismatch(format!("retraction of {} lands in dimension {}", d.change, pi.dim_out())));
    }
    Ok(BundleExtensionDatum {
        change: d.change.clone(),
        pi,
        phi_tilde: expr_matrix(&d.phi_tilde, n, dst.rank(), src.rank())?,
        omega12: domain(&d.omega12)?,
        omega1: domain(&d.omega1)?,
    })
}

fn supports_for(specs: &[SupportSpec], ks: &KuranishiStructure) -> Result<Option<Vec<Support>>> {
    let mine: Vec<&SupportSpec> = specs.iter().filter(|s| ks.charts.iter().any(|c| c.label() == s.chart)).collect();
    if mine.is_empty() {
        return Ok(None);
    }
    let mut out = Vec::new();
    for c in &ks.charts {
        let s = mine.iter().find(|s| s.chart == c.label()).ok_or_else(|| Error::Type(format!("no support declared for {}", c.label())))?;
        let k = domain(&s.k)?;
        let k_prime = s.k_prime.as_ref().map(domain).transpose()?;
        out.push(Support { k, k_prime });
    }
    Ok(Some(out))
}

impl Model {
    pub fn build(sc: Scenario) -> Result<Model> {
        let charts: Vec<KuranishiChart> = sc.charts.iter().map(build_chart).collect::<Result<_>>()?;
        for (i, c) in charts.iter().enumerate() {
            if charts[..i].iter().any(|d| d.label() == c.label()) {
                return Err(Error::Type(format!("chart label {} is used twice", c.label())));
            }
        }
        let changes: Vec<CoordinateChange> = sc.changes.iter().map(|c| build_change(c, &charts)).collect::<Result<_>>()?;
        let data: Vec<BundleExtensionDatum> = sc.data.iter().map(|d| build_datum(d, &changes, &charts)).collect::<Result<_>>()?;
        for s in sc.supports.iter().chain(&sc.alt_supports) {
            if !charts.iter().any(|c| c.label() == s.chart) {
                return Err(Error::UnresolvedLabel(s.chart.clone()));
            }
        }

        let pres_specs = if sc.presentations.is_empty() {
            vec![PresentationSpec { name: "main".into(), charts: charts.iter().map(|c| c.label().to_string()).collect() }]
        } else {
            sc.presentations.clone()
        };
        let mut presentations = Vec::new();
        for p in &pres_specs {
            let mut ks = KuranishiStructure::default();
            for l in &p.charts {
                ks.charts.push(charts.iter().find(|c| c.label() == l).cloned().ok_or_else(|| Error::UnresolvedLabel(l.clone()))?);
            }
            let inside = |l: &str| p.charts.iter().any(|x| x == l);
            ks.changes = changes.iter().filter(|c| inside(&c.src) && inside(&c.dst)).cloned().collect();
            ks.data = data.iter().filter(|d| ks.changes.iter().any(|c| c.label == d.change)).cloned().collect();
            let supports = supports_for(&sc.supports, &ks)?;
            let alt_supports = supports_for(&sc.alt_supports, &ks)?;
            let declared = sc.gcs.as_ref().filter(|g| g.pieces.iter().all(|pc| pc.sheets.iter().all(|s| inside(s))) && presentations.is_empty());
            let (gcs, kg) = match declared {
                Some(g) => {
                    let pieces: Vec<Piece> = g
                        .pieces
                        .iter()
                        .map(|pc| Ok(Piece { label: pc.label.clone(), sheets: pc.sheets.iter().map(|s| ks.chart_index(s)).collect::<Result<_>>()? }))
                        .collect::<Result<_>>()?;
                    let piece = |l: &str| pieces.iter().position(|pc| pc.label == l).ok_or_else(|| Error::UnresolvedLabel(l.into()));
                    let order: Vec<(usize, usize)> = g.order.iter().map(|[a, b]| Ok((piece(a)?, piece(b)?))).collect::<Result<_>>()?;
                    let sup = match supports.clone() {
                        Some(s) => s,
                        None => build_gcs(&ks, None)?.0.supports,
                    };
                    let gcs = Gcs::new(ks.clone(), pieces, &order, sup)?;
                    let kg = EmbeddingRecord {
                        kind: EmbeddingKind::KG,
                        maps: ks.charts.iter().map(|c| ChartEmbedding::identity(c, c.domain().clone())).collect(),
                        index_map: Vec::new(),
                    };
                    (gcs, kg)
                }
                None => build_gcs(&ks, supports)?,
            };
            presentations.push(Presentation { name: p.name.clone(), ks, gcs, kg, alt_supports });
        }

        let mut maps = BTreeMap::new();
        for m in &sc.maps {
            let mut per = BTreeMap::new();
            for (label, exprs) in &m.exprs {
                let c = charts.iter().find(|c| c.label() == label).ok_or_else(|| Error::UnresolvedLabel(label.clone()))?;
                if exprs.len() != m.target_dim {
                    return Err(Error::DimMismatch(format!("map {} on {label} has {} components", m.name, exprs.len())));
                }
                per.insert(label.clone(), SmoothMap::new(parse_exprs(exprs, VarSpace::y(c.dim()))?, c.dim(), 0));
            }
            if maps.insert(m.name.clone(), (m.target_dim, per)).is_some() {
                return Err(Error::Type(format!("map {} declared twice", m.name)));
            }
        }

        let mut forms: BTreeMap<String, BTreeMap<String, Form>> = BTreeMap::new();
        for f in &sc.forms {
            let dim = if f.on == "M" {
                f.dim.ok_or_else(|| Error::Type(format!("form {} on the target needs dim", f.name)))?
            } else {
                charts.iter().find(|c| c.label() == f.on).ok_or_else(|| Error::UnresolvedLabel(f.on.clone()))?.dim()
            };
            let terms: Vec<(Vec<usize>, String)> = f.terms.iter().map(|t| (t.idx.clone(), t.coef.clone())).collect();
            let form = Form::parse(dim, f.degree, &terms)?;
            if forms.entry(f.name.clone()).or_default().insert(f.on.clone(), form).is_some() {
                return Err(Error::Type(format!("form {} given twice on {}", f.name, f.on)));
            }
        }

        let model = Model { scenario: sc, charts, presentations, maps, forms };
        model.check_references()?;
        Ok(model)
    }

    fn check_references(&self) -> Result<()> {
        let r = &self.scenario.run;
        for m in r.sweep.iter().chain(&r.pushout_map) {
            if !self.maps.contains_key(m) {
                return Err(Error::UnresolvedLabel(m.clone()));
            }
        }
        for f in r.stokes_form.iter().chain(&r.pushout_form).chain(&r.pair_form).chain(&r.chain_form) {
            if !self.forms.contains_key(f) {
                return Err(Error::UnresolvedLabel(f.clone()));
            }
        }
        for c in &self.scenario.correspondences {
            self.presentation(&c.presentation)?;
            for m in [&c.source, &c.target] {
                if !self.maps.contains_key(m) {
                    return Err(Error::UnresolvedLabel(m.clone()));
                }
            }
        }
        if let Some(inv) = &r.invariance {
            self.presentation(&inv.a)?;
            self.presentation(&inv.b)?;
        }
        Ok(())
    }

    /// The first presentation.
    pub fn primary(&self) -> &Presentation {
        &self.presentations[0]
    }

    pub fn presentation(&self, name: &str) -> Result<&Presentation> {
        self.presentations.iter().find(|p| p.name == name).ok_or_else(|| Error::UnresolvedLabel(name.into()))
    }

    /// Map `name` on every chart of `gcs`, in chart order.
    pub fn map_on(&self, name: &str, gcs: &Gcs) -> Result<Vec<SmoothMap>> {
        let (_, per) = self.maps.get(name).ok_or_else(|| Error::UnresolvedLabel(name.into()))?;
        gcs.ks
            .charts
            .iter()
            .map(|c| per.get(c.label()).cloned().ok_or_else(|| Error::UnresolvedLabel(format!("{name} on {}", c.label()))))
            .collect()
    }

    /// Form `name` on every chart of `gcs`, in chart order.
    pub fn form_on(&self, name: &str, gcs: &Gcs) -> Result<Vec<Form>> {
        let per = self.forms.get(name).ok_or_else(|| Error::UnresolvedLabel(name.into()))?;
        gcs.ks
            .charts
            .iter()
            .map(|c| per.get(c.label()).cloned().ok_or_else(|| Error::UnresolvedLabel(format!("{name} on {}", c.label()))))
            .collect()
    }

    /// Form `name` on the target space.
    pub fn target_form(&self, name: &str) -> Result<Form> {
        self.forms.get(name).and_then(|p| p.get("M")).cloned().ok_or_else(|| Error::UnresolvedLabel(format!("{name} on M")))
    }
}
