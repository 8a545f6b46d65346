//! Acceptance criteria 1–9, one PASS/FAIL line each.

mod common;

use common::*;
use num_rational::Rational64;
use std::time::Instant;
use vfckit::check::CheckReport;
use vfckit::expr::VarSpace;
use vfckit::integrate::{gcs_partition, stokes_check, Quad};
use vfckit::kuranishi::*;
use vfckit::map::SmoothMap;
use vfckit::orbifold::Domain;
use vfckit::perturbation::*;
use vfckit::run::{run, Flags};
use vfckit::scenario::Model;
use vfckit::tol;
use vfckit::vfc::*;

type Verdict = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn count(m: &Model, seed: u64, n: u64, supports: Option<&[Support]>, delta_u: f64) -> Rational64 {
    let g = &m.primary().gcs;
    let mvp = build_multivalued_perturbation(g, seed, &[n]).unwrap();
    solve_zeros_dim0(g, &mvp, n, supports.unwrap_or(&g.supports), delta_u).unwrap().total()
}

fn counts() -> Verdict {
    let want = [("G1", (1, 1)), ("G2", (1, 2)), ("G3:2", (1, 1)), ("G3:3", (2, 3))];
    let mut seen = Vec::new();
    for (name, (p, q)) in want {
        let m = gallery(name);
        for seed in [1, 2, 3] {
            for n in [50, 100] {
                let c = count(&m, seed, n, None, tol::DELTA_U);
                ensure(c == Rational64::new(p, q), format!("{name} seed {seed} n {n}: {c}"))?;
            }
        }
        seen.push(format!("{name}={p}/{q}"));
    }
    Ok(seen.join(", "))
}

fn independence() -> Verdict {
    let mut runs = 0;
    for name in ["G1", "G2", "G3:2", "G3:3", "G3:4"] {
        let m = gallery(name);
        let alt = m.primary().alt_supports.clone();
        let reference = count(&m, 1, 100, None, tol::DELTA_U);
        for seed in [11, 12, 13] {
            let mut variants = vec![count(&m, seed, 100, None, tol::DELTA_U), count(&m, seed, 100, None, tol::DELTA_U / 2.0)];
            if let Some(a) = &alt {
                variants.push(count(&m, seed, 100, Some(a), tol::DELTA_U));
            }
            for v in variants {
                ensure(v == reference, format!("{name} seed {seed}: {v} vs {reference}"))?;
                runs += 1;
            }
        }
        let rep = run("count", &m, &Flags::default()).map_err(|e| e.to_string())?;
        let c = rep.report.checks.iter().find(|c| c.name == "count_independent").ok_or("no count_independent check")?;
        ensure(c.passed(), format!("{name}: {}", c.detail))?;
    }
    Ok(format!("{runs} perturbation/support/neighbourhood variants agree exactly"))
}

fn boundary() -> Verdict {
    for name in ["G4", "G5"] {
        let m = gallery(name);
        let g = &m.primary().gcs;
        for seed in 1..=5 {
            let mvp = build_multivalued_perturbation(g, seed, &[50]).map_err(|e| e.to_string())?;
            let out = boundary_vanishing_check(g, &mvp, 50).map_err(|e| e.to_string())?;
            ensure(out.chain.total == Rational64::from_integer(0), format!("{name} seed {seed}: {}", out.chain.total))?;
        }
    }
    let m = gallery("G4");
    let g = &m.primary().gcs;
    let f = m.map_on(m.scenario.run.sweep.as_ref().unwrap(), g).unwrap();
    let mvp = build_multivalued_perturbation(g, 1, &[50]).unwrap();
    let levels = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 1.5];
    let out = level_sweep(g, &mvp, 50, &f, &levels).map_err(|e| e.to_string())?;
    let top = out.morse.critical_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let regular: Vec<Rational64> = out.rows.iter().filter(|r| r.level < top).filter_map(|r| r.chain).collect();
    ensure(regular.len() == 8, format!("{} regular levels below {top}", regular.len()))?;
    ensure(regular.iter().all(|c| *c == regular[0]), "sweep chain changes across regular levels")?;
    ensure(out.rows.iter().filter(|r| r.level > top).all(|r| r.points == 0), "points above the maximum level")?;
    ensure(out.checks.all_pass(), "sweep checks")?;
    Ok(format!("boundary 0/1 for 5 seeds on G4 and G5; sweep {} on 8 levels, empty above {top:.3}", vfckit::report::rational(regular[0])))
}

fn stokes() -> Verdict {
    let mut worst: f64 = 0.0;
    for name in ["G5", "G4"] {
        let m = gallery(name);
        let g = &m.primary().gcs;
        let cfps = build_cfp_system(g).unwrap();
        let pou = gcs_partition(g).unwrap();
        let h = m.form_on(m.scenario.run.stokes_form.as_ref().unwrap(), g).unwrap();
        let out = stokes_check(g, &cfps, &pou, &h, &[0.1, 0.05], Quad { order: tol::GL_ORDER }, 1e-6).map_err(|e| e.to_string())?;
        for c in &out.checks.checks {
            ensure(c.passed(), format!("{name} {}: {}", c.name, c.detail))?;
        }
        for r in out.rows.iter().filter(|r| r.order == tol::GL_ORDER) {
            worst = worst.max(r.residual);
        }
    }
    Ok(format!("max residual {worst:.2e} at order {}; tenfold gain from order {}", tol::GL_ORDER, tol::GL_ORDER / 2))
}

fn composition() -> Verdict {
    let out = run("compose", &gallery("G6"), &Flags::default()).map_err(|e| e.to_string())?;
    let comp: Vec<_> = out.report.checks.iter().filter(|c| c.name.contains("composition[")).collect();
    ensure(comp.len() >= 3, format!("{} integrand pairs", comp.len()))?;
    let gap = comp.iter().map(|c| c.residual).fold(0.0, f64::max);
    ensure(gap <= 1e-8, format!("gap {gap:e}"))?;
    let oracles: Vec<_> = out.report.checks.iter().filter(|c| c.name.contains("oracle[")).collect();
    for want in ["0.500000000000000", "0.333333333333333"] {
        ensure(oracles.iter().any(|c| c.passed() && c.detail.contains(want)), format!("oracle {want} missing"))?;
    }
    ensure(out.report.exit_code() == 0, "compose report fails")?;
    Ok(format!("{} pairs, max gap {gap:.2e}, oracles 1/2 and 1/3 matched", comp.len()))
}

fn invariance() -> Verdict {
    let out = run("invariance", &gallery("G7"), &Flags::default()).map_err(|e| e.to_string())?;
    let r = &out.report;
    let find = |s: &str| r.checks.iter().find(|c| c.name.ends_with(s)).ok_or(format!("no {s} check"));
    let counts = find("count_equal")?;
    ensure(counts.passed(), counts.detail.clone())?;
    let gap = find("pushout_gap")?;
    ensure(gap.passed() && gap.residual <= 1e-6, format!("pushout gap {:e}", gap.residual))?;
    let squares: Vec<_> = r.checks.iter().filter(|c| (c.name.contains("kg/") || c.name.contains("gg/")) && c.name.ends_with("_square")).collect();
    ensure(squares.iter().any(|c| c.name.contains("gg/")), "no GG embedding checks")?;
    let emb = squares.iter().map(|c| c.residual).fold(0.0, f64::max);
    ensure(emb <= 1e-8, format!("embedding residual {emb:e}"))?;
    ensure(r.exit_code() == 0, "invariance report fails")?;
    Ok(format!("counts {}, pushout gap {:.2e}, embedding residual {emb:.2e}", counts.detail, gap.residual))
}

fn convergence() -> Verdict {
    let mut out = Vec::new();
    for name in ["G1", "G4"] {
        let m = gallery(name);
        let g = &m.primary().gcs;
        let cfps = build_cfp_system(g).unwrap();
        let rows: Vec<Perturbed> = tol::EPS_LADDER.iter().map(|&e| Perturbed::Cf(&cfps, e)).collect();
        let d: Vec<f64> = zero_support_and_convergence(g, &rows, None).iter().map(|r| r.hausdorff).collect();
        ensure(d.windows(2).all(|w| w[1] < w[0]), format!("{name}: {d:?} not strictly decreasing"))?;
        ensure(d[2] < 0.05, format!("{name}: d_H(0.05) = {}", d[2]))?;
        out.push(format!("{name} {:.4}>{:.4}>{:.4}", d[0], d[1], d[2]));
    }
    Ok(out.join(", "))
}

fn with_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap().install(f)
}

fn hygiene() -> Verdict {
    let mut cfps_seen = 0;
    let mut ms_seen = 0;
    for name in ALL {
        let m = gallery(name);
        for p in &m.presentations {
            for (c, cfp) in build_cfp_system(&p.gcs).map_err(|e| e.to_string())?.iter().enumerate() {
                let mass = cfp.omega_mass(tol::GL_ORDER);
                ensure((mass - 1.0).abs() <= 1e-10, format!("{name}: mass {mass}"))?;
                ensure(verify_cfp(cfp, &p.gcs.ks.charts[c]).map_err(|e| e.to_string())?.all_pass(), format!("{name}: cfp checks"))?;
                cfps_seen += 1;
            }
            let mvp = build_multivalued_perturbation(&p.gcs, 1, &[50, 100]).map_err(|e| e.to_string())?;
            for n in [50, 100] {
                for (f, s) in mvp.families.iter().zip(mvp.at(&p.gcs, n)) {
                    let rep = verify_multisection(&s, &p.gcs.ks.charts[f.chart]).map_err(|e| format!("{name}: {e}"))?;
                    ensure(rep.all_pass(), format!("{name}: multisection"))?;
                    ms_seen += 1;
                }
            }
        }
    }
    let ops = [("build-gcs", "G7"), ("perturb", "G4"), ("perturb", "G3:3"), ("count", "G3:3"), ("stokes", "G5"), ("compose", "G6")];
    for (cmd, name) in ops {
        let m = gallery(name);
        let a = with_threads(1, || run(cmd, &m, &Flags::default()).unwrap().report.to_json_without_time().unwrap());
        let b = with_threads(8, || run(cmd, &m, &Flags::default()).unwrap().report.to_json_without_time().unwrap());
        ensure(a == b, format!("{cmd} {name} differs between 1 and 8 threads"))?;
    }
    Ok(format!("{cfps_seen} cfps normalized, {ms_seen} multisections equivariant, {} reports identical on 1 and 8 threads", ops.len()))
}

fn failing_with_witness(rep: &CheckReport, name: &str) -> Result<(), String> {
    let c = rep.get(name).ok_or(format!("no {name} check"))?;
    ensure(!c.passed(), format!("{name} passed on a defect"))?;
    ensure(c.witness.is_some() || name == "order_preserving", format!("{name} failed without a witness"))
}

fn structural() -> Verdict {
    let mut items = 0;
    for name in ALL {
        let m = gallery(name);
        for p in &m.presentations {
            let coc = verify_structure_cocycle(&p.ks, tol::EQUIV);
            let ax = verify_gcs_axioms(&p.gcs);
            let kg = verify_embedding_record(&p.kg, Side::Ks(&p.ks), Side::Gcs(&p.gcs)).map_err(|e| e.to_string())?;
            for rep in [&coc, &ax, &kg] {
                ensure(rep.all_pass(), format!("{name}/{}: {:?}", p.name, rep.failures().map(|c| &c.name).collect::<Vec<_>>()))?;
                items += rep.checks.len();
            }
            let res = coc.checks.iter().chain(kg.checks.iter().filter(|c| c.name.ends_with("_square"))).map(|c| c.residual).fold(0.0, f64::max);
            ensure(res < 1e-8, format!("{name}: residual {res:e}"))?;
        }
    }

    // Good coordinate system axioms on the nested pair.
    let g7 = gallery("G7");
    let g = &g7.presentation("two").unwrap().gcs;
    let unordered = Gcs::new(g.ks.clone(), g.pieces.clone(), &[], g.supports.clone()).unwrap();
    failing_with_witness(&verify_gcs_axioms(&unordered), "comparability")?;
    let mut sup = g.supports.clone();
    sup[0] = Support { k: Domain::open_box(vec![0.5], vec![1.0]), k_prime: None };
    sup[1] = Support { k: Domain::open_box(vec![0.5, 0.5], vec![1.0, 1.0]), k_prime: None };
    let uncovered = Gcs::new(g.ks.clone(), g.pieces.clone(), &[(0, 1)], sup).unwrap();
    failing_with_witness(&verify_gcs_axioms(&uncovered), "support_covering")?;
    let mut sup = g.supports.clone();
    sup[1].k_prime = Some(Domain::open_box(vec![-1.8, -1.8], vec![1.8, 1.8]));
    let loose = Gcs::new(g.ks.clone(), g.pieces.clone(), &[(0, 1)], sup).unwrap();
    failing_with_witness(&verify_gcs_axioms(&loose), "support_pairs")?;

    // Cocycle on three nested charts.
    let nested = nested_ok();
    let base = nested.primary().ks.clone();
    let edit = |label: &str, phi: Option<&[&str]>, hat: Option<nalgebra::DMatrix<f64>>| {
        let mut ks = base.clone();
        let ch = ks.changes.iter_mut().find(|c| c.label == label).unwrap();
        if let Some(p) = phi {
            ch.phi = SmoothMap::parse(p, VarSpace::y(ch.phi.dim_in())).unwrap();
        }
        if let Some(h) = hat {
            ch.phi_hat = vfckit::map::ExprMatrix::constant(&h);
        }
        verify_structure_cocycle(&ks, tol::EQUIV)
    };
    failing_with_witness(&edit("c1>c3", Some(&["y1 + 0.01", "0", "0"]), None), "cocycle[c1>c2>c3]")?;
    failing_with_witness(&edit("c1>c3", None, Some(nalgebra::DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.5]))), "cocycle[c1>c2>c3]")?;
    failing_with_witness(&edit("c2>c3", Some(&["y1", "y2", "0.01 * y1"]), None), "cocycle[c1>c2>c3]")?;

    // Embedding records.
    let check = |rec: &EmbeddingRecord| verify_embedding_record(rec, Side::Gcs(g), Side::Gcs(g)).unwrap();
    let mut rec = identity_gg(g);
    rec.maps[1].phi = SmoothMap::parse(&["y1 + 0.01", "y2"], VarSpace::y(2)).unwrap();
    failing_with_witness(&check(&rec), "c2>c2/section_square")?;
    let mut rec = identity_gg(g);
    rec.maps[0].phi_hat = vfckit::map::ExprMatrix::constant(&nalgebra::DMatrix::from_element(1, 1, 2.0));
    failing_with_witness(&check(&rec), "c1>c1/section_square")?;
    let mut rec = identity_gg(g);
    rec.maps[0].domain = Domain::open_box(vec![0.5], vec![2.0]);
    failing_with_witness(&check(&rec), "c1>c1/domain_cover")?;

    Ok(format!("{items} checks pass on the gallery; 9 injected defects caught with witnesses"))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("exact counts", counts),
        ("perturbation and support independence", independence),
        ("boundary vanishing and level sweep", boundary),
        ("Stokes", stokes),
        ("composition and Fubini", composition),
        ("embedding and presentation invariance", invariance),
        ("zero-set convergence", convergence),
        ("perturbation hygiene and determinism", hygiene),
        ("structural verification", structural),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        let v = v.and_then(|m| if secs < 60.0 { Ok(m) } else { Err(format!("took {secs:.1}s")) });
        match v {
            Ok(m) => println!("PASS criterion {}: {name} ({m}; {secs:.2}s)", i + 1),
            Err(m) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({m})", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
