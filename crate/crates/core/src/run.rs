//! Command dispatch shared by the CLI and the tests.

use crate::check::{Check, CheckReport, Status};
use crate::error::{Error, Result};
use crate::expr::{Expr, VarSpace};
use crate::integrate::{
    chain_map_check, composition_check, fubini_kernel, gcs_partition, invariance_checks, pushout, pushout_degree,
    stokes_check, Correspondence, Mode, PushoutData, PushoutValue, Quad,
};
use crate::kuranishi::{
    verify_embedding_record, verify_gcs_axioms, verify_structure_cocycle, ChartEmbedding, EmbeddingKind, EmbeddingRecord, Gcs, Side,
};
use crate::orbifold::Form;
use crate::perturbation::{
    build_cfp_system, build_multivalued_perturbation, check_branches, verify_cfp, verify_multisection, zero_support_and_convergence, Perturbed,
};
use crate::report::{rational, Report};
use crate::scenario::{domain, domain_spec, Model, Presentation};
use crate::tol;
use crate::vfc::{boundary_vanishing_check, level_sweep, virtual_chain_dim0, WeightedZeroSet};
use num_rational::Rational64;
use serde_json::{json, Value};
use std::time::Instant;

pub const COMMANDS: [&str; 10] = ["verify", "build-gcs", "perturb", "count", "boundary", "sweep", "pushout", "stokes", "compose", "invariance"];

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Flags {
    pub n: Option<u64>,
    pub epsilon: Option<f64>,
    pub seed: Option<u64>,
    /// Gauss–Legendre order for fibre and curve quadrature.
    pub grid: Option<usize>,
    pub tol: Option<f64>,
    /// point, pair or grid.
    pub mode: Option<String>,
}

/// A report plus an optional CSV table.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: Report,
    pub csv: Option<String>,
}

struct Ctx<'a> {
    model: &'a Model,
    flags: &'a Flags,
    rep: Report,
    csv: Option<String>,
}

impl Ctx<'_> {
    fn seeds(&self) -> Vec<u64> {
        match self.flags.seed {
            Some(s) => vec![s],
            None => self.model.scenario.run.seeds.clone(),
        }
    }
    fn seed(&self) -> u64 {
        self.seeds().first().copied().unwrap_or(1)
    }
    fn ns(&self) -> Vec<u64> {
        match self.flags.n {
            Some(n) => vec![n],
            None => self.model.scenario.run.n.clone(),
        }
    }
    fn n(&self) -> u64 {
        self.ns().last().copied().unwrap_or(100)
    }
    fn eps(&self) -> f64 {
        self.flags.epsilon.unwrap_or(0.1)
    }
    fn quad(&self) -> Quad {
        Quad { order: self.flags.grid.unwrap_or(tol::GL_ORDER) }
    }
    fn vdim(&self) -> Result<i64> {
        self.model.primary().ks.vdim().ok_or_else(|| Error::Type("charts disagree on the virtual dimension".into()))
    }
    fn mismatch(&self, command: &str, reason: impl Into<String>) -> Error {
        Error::CommandScenarioMismatch { command: command.into(), reason: reason.into() }
    }
}

/// Runs `command` on a loaded scenario.
pub fn run(command: &str, model: &Model, flags: &Flags) -> Result<Outcome> {
    let start = Instant::now();
    let mut ctx = Ctx { model, flags, rep: Report::new(command, &model.scenario, 0)?, csv: None };
    ctx.rep.seed = ctx.seed();
    record_flags(&mut ctx.rep, flags);
    match command {
        "verify" => verify(&mut ctx)?,
        "build-gcs" => build_gcs_cmd(&mut ctx)?,
        "perturb" => perturb(&mut ctx)?,
        "count" => count(&mut ctx)?,
        "boundary" => boundary(&mut ctx)?,
        "sweep" => sweep(&mut ctx)?,
        "pushout" => pushout_cmd(&mut ctx)?,
        "stokes" => stokes(&mut ctx)?,
        "compose" => compose_cmd(&mut ctx)?,
        "invariance" => invariance(&mut ctx)?,
        other => return Err(Error::Type(format!("unknown command {other}"))),
    }
    ctx.rep.finish();
    ctx.rep.wall_time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(Outcome { report: ctx.rep, csv: ctx.csv })
}

fn record_flags(rep: &mut Report, f: &Flags) {
    let mut put = |k: &str, v: Value| {
        rep.flags.insert(k.into(), v);
    };
    if let Some(n) = f.n {
        put("n", json!(n));
    }
    if let Some(e) = f.epsilon {
        put("epsilon", json!(e));
    }
    if let Some(s) = f.seed {
        put("seed", json!(s));
    }
    if let Some(g) = f.grid {
        put("grid", json!(g));
    }
    if let Some(t) = f.tol {
        put("tol", json!(t));
    }
    if let Some(m) = &f.mode {
        put("mode", json!(m));
    }
}

fn points_json(z: &WeightedZeroSet) -> Value {
    Value::Array(
        z.points
            .iter()
            .map(|p| {
                json!({
                    "chart": p.chart,
                    "coords": p.coords,
                    "global": p.global,
                    "multiplicity": rational(p.multiplicity),
                    "stabilizer_order": p.stabilizer_order,
                    "branches": p.branches,
                    "signs": p.signs,
                })
            })
            .collect(),
    )
}

fn gcs_json(g: &Gcs) -> Value {
    let ks = &g.ks;
    json!({
        "pieces": g.pieces.iter().map(|p| json!({
            "label": p.label,
            "sheets": p.sheets.iter().map(|&s| ks.charts[s].label().to_string()).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "order": g.order.iter().map(|&(a, b)| [g.pieces[a].label.clone(), g.pieces[b].label.clone()]).collect::<Vec<_>>(),
        "supports": ks.charts.iter().zip(&g.supports).map(|(c, s)| json!({
            "chart": c.label(),
            "k": domain_spec(&s.k),
            "k_prime": s.k_prime.as_ref().map(domain_spec),
        })).collect::<Vec<_>>(),
    })
}

fn verify_presentation(rep: &mut Report, p: &Presentation) -> Result<()> {
    let pre = &p.name;
    rep.checks(&format!("{pre}/structure"), p.ks.verify()?);
    rep.checks(&format!("{pre}/cocycle"), verify_structure_cocycle(&p.ks, tol::EQUIV));
    rep.checks(&format!("{pre}/gcs"), verify_gcs_axioms(&p.gcs));
    rep.checks(&format!("{pre}/kg"), verify_embedding_record(&p.kg, Side::Ks(&p.ks), Side::Gcs(&p.gcs))?);
    Ok(())
}

fn verify(ctx: &mut Ctx) -> Result<()> {
    for p in &ctx.model.presentations {
        verify_presentation(&mut ctx.rep, p)?;
    }
    let vdim = ctx.vdim()?;
    ctx.rep.set("vdim", vdim);
    ctx.rep.set("presentations", ctx.model.presentations.iter().map(|p| p.name.clone()).collect::<Vec<_>>());
    Ok(())
}

fn build_gcs_cmd(ctx: &mut Ctx) -> Result<()> {
    let mut out = serde_json::Map::new();
    for p in &ctx.model.presentations {
        ctx.rep.checks(&format!("{}/gcs", p.name), verify_gcs_axioms(&p.gcs));
        ctx.rep.checks(&format!("{}/kg", p.name), verify_embedding_record(&p.kg, Side::Ks(&p.ks), Side::Gcs(&p.gcs))?);
        out.insert(p.name.clone(), gcs_json(&p.gcs));
    }
    ctx.rep.set("gcs", Value::Object(out));
    Ok(())
}

fn perturb(ctx: &mut Ctx) -> Result<()> {
    let p = ctx.model.primary();
    let g = &p.gcs;
    let (seed, ns) = (ctx.seed(), ctx.ns());
    let mvp = build_multivalued_perturbation(g, seed, &ns)?;
    let mut branches = serde_json::Map::new();
    for &n in &ns {
        for ms in mvp.at(g, n) {
            let c = g.ks.chart_index(&ms.chart)?;
            let chart = &g.ks.charts[c];
            ctx.rep.checks(&format!("multisection[{},n={n}]", ms.chart), verify_multisection(&ms, chart)?);
            let tr = check_branches(&ms.branches, chart, &g.supports[c].k)?;
            ctx.rep.check(tr.to_check(&format!("transversal[{},n={n}]", ms.chart)));
            if n == *ns.last().unwrap_or(&n) {
                branches.insert(ms.chart.clone(), json!(ms.branches.iter().map(|b| b.to_strings()).collect::<Vec<_>>()));
            }
        }
    }
    ctx.rep.set("branches", Value::Object(branches));

    let cfps = build_cfp_system(g)?;
    for cfp in &cfps {
        let chart = &g.ks.charts[cfp.chart];
        ctx.rep.checks(&format!("cfp[{}]", chart.label()), verify_cfp(cfp, chart)?);
    }

    let ladder = match ctx.flags.epsilon {
        Some(e) => vec![e],
        None => ctx.model.scenario.run.ladder.clone(),
    };
    let mut rows_in: Vec<Perturbed> = ladder.iter().map(|&e| Perturbed::Cf(&cfps, e)).collect();
    rows_in.extend(ns.iter().map(|&n| Perturbed::Multi(&mvp, n)));
    let rows = zero_support_and_convergence(g, &rows_in, p.alt_supports.as_deref());
    let (cf, multi) = rows.split_at(ladder.len());
    for (name, part) in [("cf", cf), ("multi", multi)] {
        if part.is_empty() {
            continue;
        }
        let hs: Vec<f64> = part.iter().map(|r| r.hausdorff).collect();
        if hs.iter().all(|&h| h == 0.0) {
            ctx.rep.check(Check::new(format!("{name}/hausdorff_decreasing"), true, 0.0).with_detail("perturbed zero set equals X"));
        } else {
            let dec = hs.windows(2).all(|w| w[1] < w[0]);
            ctx.rep.check(Check::new(format!("{name}/hausdorff_decreasing"), dec, hs[hs.len() - 1]).with_detail(format!("{hs:?}")));
        }
        for r in part {
            ctx.rep.check(Check::new(format!("{name}/inside_supports[{}]", r.param), r.inside_supports, r.hausdorff));
            if let Some(a) = r.supports_agree {
                ctx.rep.check(Check::new(format!("{name}/supports_agree[{}]", r.param), a, 0.0));
            }
        }
    }
    if let (Some(last), Some(&e)) = (cf.last(), ladder.last()) {
        ctx.rep.check(Check::new("cf/hausdorff_below_eps", last.hausdorff < e, last.hausdorff).with_detail(format!("eps {e}")));
    }
    let table: Vec<Value> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            json!({
                "kind": if i < ladder.len() { "cf" } else { "multi" },
                "param": r.param,
                "hausdorff": r.hausdorff,
                "inside_supports": r.inside_supports,
                "supports_agree": r.supports_agree,
                "zeros": r.zeros,
            })
        })
        .collect();
    let mut csv = String::from("kind,param,hausdorff,zeros\n");
    for (i, r) in rows.iter().enumerate() {
        csv.push_str(&format!("{},{},{:e},{}\n", if i < ladder.len() { "cf" } else { "multi" }, r.param, r.hausdorff, r.zeros));
    }
    ctx.csv = Some(csv);
    ctx.rep.set("convergence", table);
    Ok(())
}

fn count(ctx: &mut Ctx) -> Result<()> {
    let vdim = ctx.vdim()?;
    if vdim != 0 {
        return Err(ctx.mismatch("count", format!("virtual dimension is {vdim}, counting needs 0")));
    }
    let p = ctx.model.primary();
    let g = &p.gcs;
    let du = ctx.model.scenario.tolerances.delta_u;
    let (seeds, ns) = (ctx.seeds(), ctx.ns());
    let mut runs = Vec::new();
    let mut totals: Vec<Rational64> = Vec::new();
    let mut first: Option<WeightedZeroSet> = None;
    let mut csv = String::from("seed,n,supports,delta_u,total,points\n");
    for &seed in &seeds {
        let mvp = build_multivalued_perturbation(g, seed, &ns)?;
        for &n in &ns {
            let mut variants: Vec<(&str, &[crate::kuranishi::Support], f64)> = vec![("main", &g.supports, du), ("main", &g.supports, du / 2.0)];
            if let Some(alt) = &p.alt_supports {
                variants.push(("alt", alt, du));
            }
            for (name, sup, d) in variants {
                let (z, chain) = virtual_chain_dim0(g, &mvp, n, sup, d)?;
                csv.push_str(&format!("{seed},{n},{name},{d},{},{}\n", rational(chain.total), z.points.len()));
                runs.push(json!({
                    "seed": seed,
                    "n": n,
                    "supports": name,
                    "delta_u": d,
                    "total": rational(chain.total),
                    "points": z.points.len(),
                    "merged": z.merged,
                }));
                totals.push(chain.total);
                if first.is_none() {
                    first = Some(z);
                }
            }
        }
    }
    let total = totals[0];
    let spread: Vec<String> = totals.iter().map(|t| rational(*t)).collect();
    let same = totals.iter().all(|t| *t == total);
    ctx.rep.check(
        Check::new("count_independent", same, 0.0).with_detail(format!("seeds {seeds:?}, n {ns:?}, supports and delta_u variants: {}", spread.join(" "))),
    );
    ctx.rep.set("total", rational(total));
    ctx.rep.set("runs", runs);
    ctx.rep.set("points", first.as_ref().map(points_json).unwrap_or(Value::Null));
    ctx.csv = Some(csv);
    Ok(())
}

fn boundary(ctx: &mut Ctx) -> Result<()> {
    let vdim = ctx.vdim()?;
    if vdim != 1 {
        return Err(ctx.mismatch("boundary", format!("virtual dimension is {vdim}, the boundary chain needs 1")));
    }
    let g = &ctx.model.primary().gcs;
    let n = ctx.n();
    let mut runs = Vec::new();
    let mut total = None;
    for seed in ctx.seeds() {
        let mvp = build_multivalued_perturbation(g, seed, &[n])?;
        let out = boundary_vanishing_check(g, &mvp, n)?;
        ctx.rep.checks(&format!("seed={seed}"), out.checks);
        runs.push(json!({ "seed": seed, "n": n, "total": rational(out.chain.total), "points": points_json(&out.zeros) }));
        total.get_or_insert(out.chain.total);
    }
    ctx.rep.set("total", total.map(rational));
    ctx.rep.set("runs", runs);
    Ok(())
}

fn sweep(ctx: &mut Ctx) -> Result<()> {
    let vdim = ctx.vdim()?;
    let r = &ctx.model.scenario.run;
    let name = r.sweep.as_ref().ok_or_else(|| ctx.mismatch("sweep", "no sweep map declared"))?;
    if vdim != 1 {
        return Err(ctx.mismatch("sweep", format!("virtual dimension is {vdim}, level sets need 1")));
    }
    let g = &ctx.model.primary().gcs;
    let f = ctx.model.map_on(name, g)?;
    let (seed, n) = (ctx.seed(), ctx.n());
    let mvp = build_multivalued_perturbation(g, seed, &[n])?;
    let out = level_sweep(g, &mvp, n, &f, &r.levels)?;
    ctx.rep.checks("", out.checks);
    let mut csv = String::from("level,chain,points\n");
    let rows: Vec<Value> = out
        .rows
        .iter()
        .map(|row| {
            let chain = row.chain.map(rational);
            csv.push_str(&format!("{},{},{}\n", row.level, chain.clone().unwrap_or_else(|| "critical".into()), row.points));
            json!({ "level": row.level, "chain": chain, "points": row.points })
        })
        .collect();
    ctx.rep.set("levels", rows);
    ctx.csv = Some(csv);
    Ok(())
}

fn linear_check(name: &str, a: f64, b: f64) -> Check {
    let r = (a - b).abs();
    Check::residual(name, r, 1e-10 * (1.0 + a.abs()))
}

fn pushout_cmd(ctx: &mut Ctx) -> Result<()> {
    let r = &ctx.model.scenario.run;
    let hname = r.pushout_form.as_ref().ok_or_else(|| ctx.mismatch("pushout", "no pushout form declared"))?;
    let g = &ctx.model.primary().gcs;
    let vdim = ctx.vdim()?;
    let default_mode = if r.pushout_map.is_none() {
        "point"
    } else if !r.grid.is_empty() {
        "grid"
    } else {
        "pair"
    };
    let mode = ctx.flags.mode.clone().unwrap_or_else(|| default_mode.into());
    let h = ctx.model.form_on(hname, g)?;
    let f = match mode.as_str() {
        "point" => Vec::new(),
        "pair" | "grid" => {
            let m = r.pushout_map.as_ref().ok_or_else(|| ctx.mismatch("pushout", format!("{mode} mode needs a pushout map")))?;
            ctx.model.map_on(m, g)?
        }
        other => return Err(Error::ModeUnsupported(other.into())),
    };
    let cfps = build_cfp_system(g)?;
    let pou = gcs_partition(g)?;
    let (eps, quad) = (ctx.eps(), ctx.quad());
    let data = PushoutData { gcs: g, cfps: &cfps, pou: &pou, h: &h, f: &f };
    let deg_h = h.first().map_or(0, |x| x.degree);
    let dim_m = f.first().map_or(0, |x| x.dim_out());
    let out_deg = pushout_degree(deg_h, dim_m, vdim);
    ctx.rep.set("mode", &mode);
    ctx.rep.set("epsilon", eps);
    ctx.rep.set("degree", out_deg);
    let tripled: Vec<Form> = h.iter().map(|x| x.scale(&Expr::num(3.0))).collect();
    let data3 = PushoutData { h: &tripled, ..data };
    match mode.as_str() {
        "point" => {
            ctx.rep.check(Check::new("degree", out_deg == 0, out_deg as f64).with_detail(format!("deg h {deg_h} - vdim {vdim}")));
            let v = pushout(&data, eps, Mode::Point, quad)?.scalar().unwrap_or(f64::NAN);
            let v3 = pushout(&data3, eps, Mode::Point, quad)?.scalar().unwrap_or(f64::NAN);
            ctx.rep.check(linear_check("linearity", 3.0 * v, v3));
            ctx.rep.set("value", v);
        }
        "pair" => {
            let rname = r.pair_form.as_ref().ok_or_else(|| ctx.mismatch("pushout", "pair mode needs a pair form"))?;
            let rho = ctx.model.target_form(rname)?;
            let total = out_deg + rho.degree as i64;
            ctx.rep.check(Check::new("degree", total == dim_m as i64, total as f64).with_detail(format!("deg f!(h) {out_deg} + deg rho {} vs dim M {dim_m}", rho.degree)));
            let v = pushout(&data, eps, Mode::Pair(&rho), quad)?.scalar().unwrap_or(f64::NAN);
            let v3 = pushout(&data3, eps, Mode::Pair(&rho), quad)?.scalar().unwrap_or(f64::NAN);
            ctx.rep.check(linear_check("linearity", 3.0 * v, v3));
            ctx.rep.set("value", v);
        }
        _ => {
            ctx.rep.check(Check::new("degree", out_deg == 0, out_deg as f64).with_detail("grid samples a function on M"));
            let pts = &r.grid;
            if pts.is_empty() {
                return Err(ctx.mismatch("pushout", "grid mode needs grid points"));
            }
            let PushoutValue::Samples(s) = pushout(&data, eps, Mode::Grid(pts), quad)? else {
                return Err(Error::Type("grid pushout returned a scalar".into()));
            };
            let mut csv = String::from("x,value\n");
            for (p, v) in &s {
                csv.push_str(&format!("{},{v}\n", p.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")));
            }
            ctx.csv = Some(csv);
            ctx.rep.set("samples", s.iter().map(|(p, v)| json!({ "x": p, "value": v })).collect::<Vec<_>>());
        }
    }
    Ok(())
}

fn stokes(ctx: &mut Ctx) -> Result<()> {
    let r = &ctx.model.scenario.run;
    let hname = r.stokes_form.as_ref().ok_or_else(|| ctx.mismatch("stokes", "no stokes form declared"))?;
    let g = &ctx.model.primary().gcs;
    let h = ctx.model.form_on(hname, g)?;
    if h.iter().any(|x| x.degree != 0) {
        return Err(ctx.mismatch("stokes", "the Stokes form must be a function"));
    }
    let cfps = build_cfp_system(g)?;
    let pou = gcs_partition(g)?;
    let ladder = match ctx.flags.epsilon {
        Some(e) => vec![e],
        None => r.ladder.iter().copied().filter(|&e| e <= 0.1 + 1e-12).collect(),
    };
    let bound = ctx.flags.tol.unwrap_or(ctx.model.scenario.tolerances.stokes);
    let quad = ctx.quad();
    let out = stokes_check(g, &cfps, &pou, &h, &ladder, quad, bound)?;
    ctx.rep.checks("", out.checks);
    let mut csv = String::from("eps,order,lhs,rhs,residual\n");
    let rows: Vec<Value> = out
        .rows
        .iter()
        .map(|row| {
            csv.push_str(&format!("{},{},{:.15e},{:.15e},{:e}\n", row.eps, row.order, row.lhs, row.rhs, row.residual));
            json!({ "eps": row.eps, "order": row.order, "lhs": row.lhs, "rhs": row.rhs, "residual": row.residual })
        })
        .collect();
    ctx.rep.set("rows", rows);
    if let (Some(cname), Some(mname)) = (&r.chain_form, &r.pushout_map) {
        let f = ctx.model.map_on(mname, g)?;
        let rho = ctx.model.target_form(cname)?;
        let c = chain_map_check(g, &cfps, &pou, &h, &f, &rho, ladder.last().copied().unwrap_or(0.1), quad, bound)?;
        ctx.rep.check(c);
    }
    ctx.csv = Some(csv);
    Ok(())
}

fn correspondence(model: &Model, name: &str) -> Result<Correspondence> {
    let spec = model
        .scenario
        .correspondences
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::UnresolvedLabel(name.into()))?;
    let p = model.presentation(&spec.presentation)?;
    let g = p.gcs.clone();
    let cfps = build_cfp_system(&g)?;
    let pou = gcs_partition(&g)?;
    let f_s = model.map_on(&spec.source, &g)?;
    let f_t = model.map_on(&spec.target, &g)?;
    Ok(Correspondence { gcs: g, cfps, pou, f_s, f_t, dim_s: spec.dim_source, dim_t: spec.dim_target })
}

fn compose_cmd(ctx: &mut Ctx) -> Result<()> {
    let spec = ctx.model.scenario.run.compose.clone().ok_or_else(|| ctx.mismatch("compose", "no composition declared"))?;
    let c21 = correspondence(ctx.model, &spec.first)?;
    let c32 = correspondence(ctx.model, &spec.second)?;
    let bound = ctx.flags.tol.unwrap_or(ctx.model.scenario.tolerances.compose);
    let (eps, quad) = (ctx.eps(), ctx.quad());
    let mut pairs = Vec::new();
    for p in &spec.pairs {
        pairs.push((p.label.clone(), ctx.model.target_form(&p.h)?, ctx.model.target_form(&p.rho)?, p.oracle));
    }
    let middle = domain(&spec.middle)?;
    ctx.rep.set("degree_shift", [c21.degree_shift(), c32.degree_shift()]);
    let (rows, checks) = composition_check(&c21, &c32, eps, &pairs, &middle, quad, bound)?;
    ctx.rep.checks("", checks);
    let mut csv = String::from("label,nested,composite,oracle\n");
    let mut out = Vec::new();
    for r in &rows {
        csv.push_str(&format!("{},{:.15},{:.15},{}\n", r.label, r.nested, r.composite, r.oracle.map_or(String::new(), |o| o.to_string())));
        out.push(json!({ "label": r.label, "nested": r.nested, "composite": r.composite, "oracle": r.oracle, "gap": r.gap }));
    }
    for k in &spec.kernels {
        let fibre = domain(&k.fibre)?;
        let base = domain(&k.base)?;
        let h1 = Expr::parse(&k.h1, VarSpace::y(fibre.dim() + base.dim()))?;
        let h2 = Expr::parse(&k.h2, VarSpace::y(base.dim()))?;
        let (lhs, rhs) = fubini_kernel(&fibre, &base, &h1, &h2, quad)?;
        ctx.rep.check(Check::residual(format!("kernel[{}]", k.label), (lhs - rhs).abs(), bound).with_detail(format!("{lhs:.15} vs {rhs:.15}")));
        if let Some(o) = k.oracle {
            ctx.rep.check(Check::residual(format!("kernel_oracle[{}]", k.label), (o - lhs).abs().max((o - rhs).abs()), bound));
        }
        csv.push_str(&format!("{},{lhs:.15},{rhs:.15},{}\n", k.label, k.oracle.map_or(String::new(), |o| o.to_string())));
        out.push(json!({ "label": k.label, "kernel": true, "total": lhs, "iterated": rhs, "oracle": k.oracle }));
    }
    ctx.rep.set("rows", out);
    ctx.csv = Some(csv);
    Ok(())
}

/// Identity embedding of every chart of `a` into the same chart of `b`.
pub fn presentation_embedding(a: &Gcs, b: &Gcs) -> Result<EmbeddingRecord> {
    let mut maps = Vec::new();
    let mut index_map = Vec::new();
    for (i, c) in a.ks.charts.iter().enumerate() {
        let j = b.ks.chart_index(c.label())?;
        maps.push(ChartEmbedding::identity(c, c.domain().clone()));
        let pair = (a.pieces[a.piece_of(i)].label.clone(), b.pieces[b.piece_of(j)].label.clone());
        if !index_map.contains(&pair) {
            index_map.push(pair);
        }
    }
    Ok(EmbeddingRecord { kind: EmbeddingKind::GG, maps, index_map })
}

fn invariance(ctx: &mut Ctx) -> Result<()> {
    let vdim = ctx.vdim()?;
    if let Some(inv) = ctx.model.scenario.run.invariance.clone() {
        let (pa, pb) = (ctx.model.presentation(&inv.a)?, ctx.model.presentation(&inv.b)?);
        verify_presentation(&mut ctx.rep, pa)?;
        verify_presentation(&mut ctx.rep, pb)?;
        let gg = presentation_embedding(&pa.gcs, &pb.gcs)?;
        ctx.rep.checks("gg", verify_embedding_record(&gg, Side::Gcs(&pa.gcs), Side::Gcs(&pb.gcs))?);
        ctx.rep.set("index_map", &gg.index_map);
        let (seed, n) = (ctx.seed(), ctx.n());
        let du = ctx.model.scenario.tolerances.delta_u;
        let mut counts = Vec::new();
        for p in [pa, pb] {
            let mvp = build_multivalued_perturbation(&p.gcs, seed, &[n])?;
            counts.push(virtual_chain_dim0(&p.gcs, &mvp, n, &p.gcs.supports, du)?.1.total);
        }
        let (cfa, cfb) = (build_cfp_system(&pa.gcs)?, build_cfp_system(&pb.gcs)?);
        let (pua, pub_) = (gcs_partition(&pa.gcs)?, gcs_partition(&pb.gcs)?);
        let (ha, hb) = (ctx.model.form_on(&inv.form, &pa.gcs)?, ctx.model.form_on(&inv.form, &pb.gcs)?);
        let da = PushoutData { gcs: &pa.gcs, cfps: &cfa, pou: &pua, h: &ha, f: &[] };
        let db = PushoutData { gcs: &pb.gcs, cfps: &cfb, pou: &pub_, h: &hb, f: &[] };
        let bound = ctx.flags.tol.unwrap_or(ctx.model.scenario.tolerances.pushout_gap);
        let out = invariance_checks((counts[0], counts[1]), &da, &db, ctx.eps(), ctx.quad(), bound)?;
        ctx.rep.checks("", out.checks);
        ctx.rep.set("counts", [rational(out.counts.0), rational(out.counts.1)]);
        ctx.rep.set("pushouts", [out.pushouts.0, out.pushouts.1]);
        return Ok(());
    }
    if vdim != 1 {
        return Err(ctx.mismatch("invariance", "no second presentation and no cobordism to sample"));
    }
    // Cobordism: the boundary of a vdim-1 space splits into ends whose counts cancel.
    let g = &ctx.model.primary().gcs;
    let n = ctx.n();
    let mvp = build_multivalued_perturbation(g, ctx.seed(), &[n])?;
    let out = boundary_vanishing_check(g, &mvp, n)?;
    let pos: Rational64 = out.zeros.points.iter().map(|p| p.multiplicity).filter(|m| *m > Rational64::from_integer(0)).sum();
    let neg: Rational64 = out.zeros.points.iter().map(|p| p.multiplicity).filter(|m| *m < Rational64::from_integer(0)).sum();
    let mut cb = CheckReport::new();
    let status = if pos == Rational64::from_integer(0) { Status::Unknown } else { Status::Pass };
    cb.push(
        Check::new("ends_cancel", pos + neg == Rational64::from_integer(0), 0.0)
            .with_detail(format!("{} + {}", rational(pos), rational(neg)))
            .with_status(if pos + neg == Rational64::from_integer(0) { status } else { Status::Fail }),
    );
    ctx.rep.checks("cobordism", cb);
    ctx.rep.set("ends", [rational(pos), rational(neg)]);
    ctx.rep.set("points", points_json(&out.zeros));
    Ok(())
}
