//! One function per subcommand. Each returns the exit code it wants
//! (0 or 1) after writing its files; failures propagate as errors.

use std::io::Write;

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use stochline::driver::{replicate_rng, smooth_driver, uniform_mesh, DriverPath, FbmSampler};
use stochline::geometry::{bracket_of_word, build_frame, exterior_derivative_pair};
use stochline::integrals::{iterated_line_integral, line_integral};
use stochline::lab::{exactform_pair_experiment, run_conditional_samples, summarize, ExperimentSpec, LabTolerances};
use stochline::nondeg::{
    construct_elliptic_bump, construct_general, construct_step2, criterion_elliptic_with, criterion_general_with,
    criterion_step2_with, default_lambda_candidates, heisenberg_condition_with, sard_lambda_select,
};
use stochline::reconstruct::{build_grid, recover_route, route_report, CubeGrid, Regime, Step2Setup};
use stochline::selftest::run_selftest;
use stochline::{FbmSpec, GridSpec, OneForm, System, Trajectory, Verdict, ZeroTolerances};

use crate::config::{CriterionKind, DriverConfig, FormPlan, Prepared, RegimeKind, SchemaError};
use crate::output::OutputDir;

/// A form together with what its constructor decided along the way.
pub struct BuiltForm {
    pub form: OneForm,
    pub detail: serde_json::Value,
}

pub fn build_form(plan: &FormPlan, p: &Prepared) -> Result<BuiltForm> {
    let n = p.dim();
    let f = &p.fields;
    Ok(match plan {
        FormPlan::Components(form) => BuiltForm { form: form.clone(), detail: serde_json::Value::Null },
        FormPlan::Exact(e) => BuiltForm { form: OneForm::exact(e, n), detail: serde_json::Value::Null },
        FormPlan::Step2 { c1, c2 } => BuiltForm { form: construct_step2(c1, c2, &f[0], &f[1])?, detail: serde_json::Value::Null },
        FormPlan::General { seeds } => {
            let frame = build_frame(f, &p.frame_base(), &p.frame_options())?;
            let g = construct_general(&frame, seeds)?;
            let coefficients: serde_json::Map<String, serde_json::Value> =
                g.coefficients.iter().map(|(w, c)| (w.to_string(), c.display_with(&p.names).to_string().into())).collect();
            let detail = json!({ "coefficients": coefficients, "growth": frame.growth(), "radius": frame.radius() });
            BuiltForm { form: g.form, detail }
        }
        FormPlan::EllipticBump(region) => BuiltForm { form: construct_elliptic_bump(region)?, detail: serde_json::Value::Null },
        FormPlan::Sard { f: ff, g, lambdas, side } => {
            let candidates = lambdas.clone().unwrap_or_else(default_lambda_candidates);
            let sel = sard_lambda_select(ff, g, &GridSpec::cube(3, 1.0, *side), &candidates, &ZeroTolerances::default())?;
            let form = construct_step2(&sel.c1, &sel.c2, &f[0], &f[1])?;
            BuiltForm { form, detail: serde_json::to_value(&sel)? }
        }
    })
}

fn form_strings(form: &OneForm, p: &Prepared) -> Vec<String> {
    form.components().iter().map(|c| c.display_with(&p.names).to_string()).collect()
}

fn single_form(p: &Prepared, command: &str) -> Result<(FormPlan, BuiltForm)> {
    match p.forms.as_slice() {
        [plan] => Ok((plan.clone(), build_form(plan, p)?)),
        [] => bail!(SchemaError::new("form", format!("section required by `{command}`"))),
        _ => bail!(SchemaError::new("forms", format!("`{command}` takes a single form"))),
    }
}

pub fn criterion(p: &Prepared, out: &mut OutputDir) -> Result<u8> {
    let Some(cc) = &p.config.criterion else {
        bail!(SchemaError::new("criterion", "section required by `criterion`"));
    };
    let grid = p.criterion_grid(cc);
    let tol = cc.tolerances;
    let report = if cc.kind == CriterionKind::Heisenberg {
        let (c1, c2) = p.heisenberg_coefficients.as_ref().expect("validated with the config");
        heisenberg_condition_with(c1, c2, &grid, &tol, true)?
    } else {
        let (_, built) = single_form(p, "criterion")?;
        match cc.kind {
            CriterionKind::Elliptic => criterion_elliptic_with(&built.form, &grid, &tol, true)?,
            CriterionKind::General => {
                let frame = build_frame(&p.fields, &p.frame_base(), &p.frame_options())?;
                criterion_general_with(&built.form, &frame, &grid, &tol, true)?
            }
            CriterionKind::Step2 => criterion_step2_with(&built.form, &p.fields[0], &p.fields[1], &grid, &tol, true)?,
            CriterionKind::Heisenberg => unreachable!(),
        }
    };
    out.json("report.json", &report)?;
    out.csv("grid.csv", |buf, c| Ok(report.write_grid_csv(buf, Some(c))?))?;
    println!(
        "criterion {}: {} (zero fraction {:.6} of {} support points, tolerance {:.6})",
        report.criterion,
        verdict_name(report.verdict),
        report.fraction_zero,
        report.support_points,
        report.zero_measure_tol
    );
    Ok(if report.verdict == Verdict::Satisfied { 0 } else { 1 })
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Satisfied => "satisfied",
        Verdict::Violated => "violated",
        Verdict::Inconclusive => "inconclusive",
    }
}

#[derive(Serialize)]
struct Postcondition {
    check: &'static str,
    points: usize,
    max_abs: f64,
    tolerance: f64,
    passed: bool,
}

/// Cell centres of a cube around `centre`, at least 100 of them.
fn check_points(centre: &[f64], half: f64) -> Vec<Vec<f64>> {
    let n = centre.len();
    let side = (100f64.powf(1.0 / n as f64)).ceil() as usize;
    let lower = centre.iter().map(|c| c - half).collect();
    let upper = centre.iter().map(|c| c + half).collect();
    let grid = GridSpec::new(lower, upper, side.max(2));
    (0..grid.len()).map(|i| grid.point(i)).collect()
}

fn postcondition(plan: &FormPlan, form: &OneForm, p: &Prepared) -> Result<Option<Postcondition>> {
    let f = &p.fields;
    let worst = |points: &[Vec<f64>], value: &dyn Fn(&[f64]) -> Result<f64>| -> Result<f64> {
        let mut m: f64 = 0.0;
        for x in points {
            m = m.max(value(x)?.abs());
        }
        Ok(m)
    };
    Ok(match plan {
        FormPlan::Step2 { .. } | FormPlan::Sard { .. } => {
            let pts = check_points(&[0.0; 3], 1.0);
            let m = worst(&pts, &|x| Ok(exterior_derivative_pair(form, &f[0], &f[1], x)?))?;
            Some(Postcondition { check: "dphi(V1, V2) = 0", points: pts.len(), max_abs: m, tolerance: 1e-10, passed: m <= 1e-10 })
        }
        FormPlan::General { .. } => {
            let frame = build_frame(f, &p.frame_base(), &p.frame_options())?;
            let half = 0.5 * frame.radius().min(1.0) / (p.dim() as f64).sqrt();
            let pts = check_points(&p.frame_base(), half);
            let pairs: Vec<_> = frame
                .words()
                .into_iter()
                .filter(|w| w.len() >= 2)
                .map(|w| (w.head(), bracket_of_word(f, &w.tail().expect("word of length ≥ 2"))))
                .collect();
            let m = worst(&pts, &|x| {
                let mut m: f64 = 0.0;
                for (a, vj) in &pairs {
                    m = m.max(exterior_derivative_pair(form, &f[*a], vj, x)?.abs());
                }
                Ok(m)
            })?;
            Some(Postcondition { check: "dphi(V_a, V_J) = 0 for |aJ| >= 2", points: pts.len(), max_abs: m, tolerance: 1e-8, passed: m <= 1e-8 })
        }
        FormPlan::EllipticBump(region) => {
            // points in the surrounding box but outside the region, where φ must vanish
            let centre = region.centre();
            let half = region.lower.iter().zip(&region.upper).map(|(a, b)| b - a).fold(0.0, f64::max);
            let pts: Vec<Vec<f64>> = check_points(&centre, half).into_iter().filter(|x| !region.contains(x)).collect();
            let m = worst(&pts, &|x| Ok(form.eval(x)?.amax()))?;
            Some(Postcondition { check: "phi = 0 outside the box", points: pts.len(), max_abs: m, tolerance: 0.0, passed: m == 0.0 })
        }
        FormPlan::Components(_) | FormPlan::Exact(_) => None,
    })
}

pub fn construct(p: &Prepared, out: &mut OutputDir) -> Result<u8> {
    let (plan, built) = single_form(p, "construct")?;
    let post = postcondition(&plan, &built.form, p)?;
    let passed = post.as_ref().is_none_or(|c| c.passed);
    out.json(
        "form.json",
        &json!({
            "components": form_strings(&built.form, p),
            "construction": built.detail,
            "postcondition": post,
        }),
    )?;
    for (i, c) in form_strings(&built.form, p).iter().enumerate() {
        println!("phi[{}] = {c}", i + 1);
    }
    if let Some(c) = &post {
        println!("postcondition {}: max {:e} over {} points ({})", c.check, c.max_abs, c.points, if c.passed { "ok" } else { "FAILED" });
    }
    Ok(if passed { 0 } else { 1 })
}

fn fbm_spec(d: &DriverConfig, dim: usize) -> FbmSpec {
    FbmSpec { hurst: d.hurst, horizon: d.horizon, steps: d.steps, seed: d.seed, dim }
}

pub fn density(p: &Prepared, out: &mut OutputDir) -> Result<u8> {
    let dc = p.driver("density")?;
    if dc.formulas.is_some() {
        bail!(SchemaError::new("driver.formulas", "density needs a random driver"));
    }
    let mc = p.config.mc.clone().unwrap_or_default();
    let tolerances = LabTolerances { atom_tol: mc.atom_tol, kernel_tol: mc.kernel_tol };
    if p.exact_functions.is_none() && p.forms.is_empty() {
        bail!(SchemaError::new("form", "density needs a form or mc.exact_functions"));
    }
    let forms = p.forms.iter().map(|plan| Ok(build_form(plan, p)?.form)).collect::<Result<Vec<_>>>()?;
    let spec = ExperimentSpec {
        system: System::new(p.fields.clone())?,
        x0: p.x0.clone(),
        driver: fbm_spec(dc, p.n_drivers()),
        solver: p.solver(dc, mc.kernel),
        forms,
        event: mc.event.clone(),
        replicates: mc.replicates,
        tolerances,
        kernel: mc.kernel,
    };
    let (samples, wedge_rank) = match &p.exact_functions {
        Some(fs) => {
            let e = exactform_pair_experiment(fs, &spec)?;
            (e.samples, Some(e.wedge_rank))
        }
        None => (run_conditional_samples(&spec)?, None),
    };
    let summary = summarize(&samples, &tolerances)?;
    let degenerate_kernel = summary.kernel_vanishing_rate.is_some_and(|r| r > mc.max_vanishing_rate);
    let negative = !summary.atoms.is_empty() || degenerate_kernel;
    out.csv("samples.csv", |buf, c| Ok(samples.write_csv(buf, Some(c))?))?;
    out.json(
        "summary.json",
        &json!({
            "summary": summary,
            "wedge_rank": wedge_rank,
            "max_vanishing_rate": mc.max_vanishing_rate,
            "atom_found": !summary.atoms.is_empty(),
            "kernel_degenerate": degenerate_kernel,
        }),
    )?;
    println!("density: {} conditional of {} replicates", summary.conditional, summary.replicates);
    for a in &summary.atoms {
        println!("atom at {:.9} with mass {:.4} ± {:.4}", a.value, a.mass, a.sigma);
    }
    if let Some(r) = summary.kernel_vanishing_rate {
        println!("kernel vanishing rate {r:.4} (limit {})", mc.max_vanishing_rate);
    }
    Ok(if negative { 1 } else { 0 })
}

fn route_grid(p: &Prepared) -> Result<(CubeGrid, &crate::config::GridConfig)> {
    let Some(g) = &p.config.grid else {
        bail!(SchemaError::new("grid", "section required by `reconstruct`"));
    };
    let regime = match g.regime {
        RegimeKind::Elliptic => Regime::Elliptic,
        RegimeKind::Step2 => {
            let (f, gg) = p.sard_fg.clone().expect("validated with the config");
            let mut setup = Step2Setup::flat(p.fields[0].clone(), p.fields[1].clone());
            setup.f = f;
            setup.g = gg;
            if let Some(l) = &g.lambdas {
                setup.lambda_candidates = l.clone();
            }
            if let Some(s) = g.sard_side {
                setup.sard_side = s;
            }
            Regime::Step2(setup)
        }
    };
    Ok((build_grid(&g.lower, &g.upper, g.epsilon, g.delta, &regime)?, g))
}

#[derive(Serialize)]
struct RouteRow {
    replicate: u64,
    clean: bool,
    #[serde(rename = "match")]
    matches: bool,
    recovered_len: usize,
    truth_len: usize,
    error: String,
}

pub fn reconstruct(p: &Prepared, out: &mut OutputDir) -> Result<u8> {
    let (grid, g) = route_grid(p)?;
    let dc = p.driver("reconstruct")?;
    let system = System::new(p.fields.clone())?;
    let opts = p.solver(dc, false);
    let route_of = |w: &DriverPath| -> Result<(Trajectory, Result<stochline::reconstruct::RouteRecovery, String>)> {
        let traj = system.solve(&p.x0, w, &opts)?;
        let rec = recover_route(&traj, &grid, &g.search).map_err(|e| e.to_string());
        Ok((traj, rec))
    };

    if let Some(formulas) = &p.driver_formulas {
        let w = smooth_driver(formulas, uniform_mesh(dc.horizon, dc.steps))?;
        let (traj, rec) = route_of(&w)?;
        let rec = rec.map_err(anyhow::Error::msg)?;
        let report = route_report(&traj, &grid, &rec, &g.clean);
        out.json("report.json", &json!({ "mode": "deterministic", "cubes": grid.len(), "route": report }))?;
        println!("route: recovered {:?}, true {:?}, match={}", report.recovered, report.truth, report.matches);
        return Ok(if report.matches { 0 } else { 1 });
    }

    let sampler = FbmSampler::new(&fbm_spec(dc, p.n_drivers()))?;
    let rows = (0..g.replicates)
        .into_par_iter()
        .map(|replicate| -> Result<RouteRow> {
            let w = sampler.sample(&mut replicate_rng(dc.seed, replicate));
            let (traj, rec) = route_of(&w)?;
            let truth = stochline::reconstruct::true_route(&traj, &grid);
            let clean = stochline::reconstruct::crossing_is_clean(&traj, &grid, &g.clean);
            Ok(match rec {
                Ok(r) => RouteRow {
                    replicate,
                    clean,
                    matches: r.word == truth,
                    recovered_len: r.word.len(),
                    truth_len: truth.len(),
                    error: String::new(),
                },
                Err(e) => RouteRow { replicate, clean, matches: false, recovered_len: 0, truth_len: truth.len(), error: e },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let clean = rows.iter().filter(|r| r.clean).count();
    let clean_matched = rows.iter().filter(|r| r.clean && r.matches).count();
    let matched = rows.iter().filter(|r| r.matches).count();
    let fraction = |a: usize, b: usize| if b == 0 { None } else { Some(a as f64 / b as f64) };
    out.csv("routes.csv", |buf, c| {
        writeln!(buf, "# {c}")?;
        writeln!(buf, "replicate,clean,match,recovered_len,truth_len,error")?;
        for r in &rows {
            writeln!(buf, "{},{},{},{},{},{}", r.replicate, u8::from(r.clean), u8::from(r.matches), r.recovered_len, r.truth_len, r.error.replace(',', ";"))?;
        }
        Ok(())
    })?;
    out.json(
        "report.json",
        &json!({
            "mode": "brownian",
            "cubes": grid.len(),
            "replicates": rows.len(),
            "clean": clean,
            "clean_matched": clean_matched,
            "match_fraction_clean": fraction(clean_matched, clean),
            "match_fraction_all": fraction(matched, rows.len()),
            "cleanliness": g.clean,
        }),
    )?;
    println!("routes: {clean_matched}/{clean} clean crossings matched, {matched}/{} overall", rows.len());
    Ok(if clean_matched == clean { 0 } else { 1 })
}

pub fn simulate(p: &Prepared, out: &mut OutputDir, replicate: u64) -> Result<u8> {
    let dc = p.driver("simulate")?;
    let w = match &p.driver_formulas {
        Some(f) => smooth_driver(f, uniform_mesh(dc.horizon, dc.steps))?,
        None => FbmSampler::new(&fbm_spec(dc, p.n_drivers()))?.sample(&mut replicate_rng(dc.seed, replicate)),
    };
    let system = System::new(p.fields.clone())?;
    let traj = system.solve(&p.x0, &w, &p.solver(dc, true))?;
    let forms = p.forms.iter().map(|plan| Ok(build_form(plan, p)?.form)).collect::<Result<Vec<_>>>()?;
    let line: Vec<f64> = forms.iter().map(|f| line_integral(f, &traj)).collect::<Result<_, _>>()?;
    let iterated = if forms.len() > 1 { Some(iterated_line_integral(&forms, &traj)?.value) } else { None };
    out.csv("driver.csv", |buf, c| Ok(w.write_csv(buf, Some(c))?))?;
    out.csv("trajectory.csv", |buf, c| Ok(traj.write_csv(buf, Some(c))?))?;
    out.json(
        "summary.json",
        &json!({
            "replicate": if p.driver_formulas.is_some() { None } else { Some(replicate) },
            "final_point": traj.final_point(),
            "inverse_drift": traj.inverse_drift(),
            "line_integrals": line,
            "iterated_integral": iterated,
        }),
    )?;
    println!("final point {:?}", traj.final_point());
    Ok(0)
}

pub fn selftest(out: &mut OutputDir) -> Result<u8> {
    let checks = run_selftest();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    out.json("selftest.json", &checks)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(if failed == 0 { 0 } else { 1 })
}
