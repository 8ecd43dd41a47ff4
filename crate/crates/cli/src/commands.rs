use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cqdyn::audit::{
    conservation_check, conserved_observable_search, consistency_suite, noether_audit, rate_probe, so3_family,
    symmetry_test_states, AuditProbe, ConsistencyOptions,
};
use cqdyn::evolution::{evolve, EvolveOptions, FaultInjection};
use cqdyn::generator::{build_liouvillian_matrix, check_diffusion_decoherence, BackreactionSummary};
use cqdyn::models::{spec_backreaction, Model};
use cqdyn::spectral::{asymptotic_projection, classify_spectrum, Asymptotic, DEFAULT_TOL_ZERO};
use cqdyn::toy::{nonconservation_demo, toy_generator};
use cqdyn::{CMatrix, HybridState, HybridStateGrid};
use serde_json::{json, Map, Value};

use crate::config::{Analysis, ScenarioConfig};
use crate::error::CliError;
use crate::schema;

pub struct Context {
    pub config: ScenarioConfig,
    pub out: PathBuf,
}

impl Context {
    pub fn new(config: ScenarioConfig, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self, CliError> {
        let mut config = config;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        let out = out.unwrap_or_else(|| config.output.dir.clone());
        std::fs::create_dir_all(&out).map_err(|source| CliError::Io { path: out.clone(), source })?;
        Ok(Self { config, out })
    }

    fn dir(&self) -> &Path {
        &self.out
    }
}

fn liouvillian(model: &Model) -> Result<CMatrix, CliError> {
    Ok(build_liouvillian_matrix(&model.spec)?)
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let model = cfg.build_model()?;
    let i = &cfg.integration;
    let mut opts = EvolveOptions::new(i.t_final, i.dt);
    opts.snapshot_every = 0;
    opts.monitor_every = i.monitor_every;
    if let Some(t) = i.trace_tol {
        opts.trace_tol = t;
    }
    if let Some(t) = i.positivity_tol {
        opts.positivity_tol = t;
    }
    opts.fault = cfg.test_hooks.fault.as_ref().map(|f| FaultInjection { step: f.step, magnitude: f.magnitude });
    for o in &model.observables {
        opts = opts.observe(o.clone());
    }
    let steps = opts.steps()?;
    let analyses: Vec<Value> = cfg.analyses.iter().map(|a| json!(analysis_name(*a))).collect();
    let mut summary = json!({
        "status": "ok",
        "model": model.name,
        "seed": cfg.seed,
        "t_final": i.t_final,
        "dt": i.dt,
        "steps": steps,
        "samples": 0,
        "abort": null,
        "max_trace_dev": null,
        "min_eigenvalue": null,
        "final_observables": {},
        "analyses": analyses,
    });

    let traj = match evolve(&model.spec, &model.initial, &opts) {
        Ok(t) => t,
        Err(cqdyn::Error::MonitorAbort { time, reason }) => {
            summary["status"] = json!("monitor_abort");
            summary["abort"] = json!({ "time": time, "reason": reason });
            schema::write_json(ctx.dir(), "summary.json", &summary, &schema::summary_shape())?;
            return Err(CliError::Abort { time, reason });
        }
        Err(e) => return Err(e.into()),
    };

    // rows at every `snapshot_every`-th step, plus the last
    let last = traj.times.len() - 1;
    let keep: Vec<usize> = (0..=last)
        .filter(|&k| ((traj.times[k] / i.dt).round() as usize).is_multiple_of(i.snapshot_every) || k == last)
        .collect();
    let mut thin = traj.clone();
    thin.times = keep.iter().map(|&k| traj.times[k]).collect();
    thin.trace_dev = keep.iter().map(|&k| traj.trace_dev[k]).collect();
    thin.min_eig = keep.iter().map(|&k| traj.min_eig[k]).collect();
    thin.observables = traj.observables.iter().map(|s| keep.iter().map(|&k| s[k]).collect()).collect();
    let mut columns: Vec<String> = ["t", "trace_dev", "min_eig"].iter().map(|s| s.to_string()).collect();
    columns.extend(traj.labels.iter().cloned());
    schema::write_csv(ctx.dir(), "trajectory.csv", &thin.to_csv(), &columns)?;

    let mut finals = Map::new();
    for (label, series) in traj.labels.iter().zip(&traj.observables) {
        if let Some(v) = series.last() {
            finals.insert(label.clone(), json!(v));
        }
    }
    summary["samples"] = json!(thin.times.len());
    summary["max_trace_dev"] = json!(traj.trace_dev.iter().copied().fold(0.0, f64::max));
    summary["min_eigenvalue"] = json!(traj.min_eig.iter().copied().fold(f64::INFINITY, f64::min));
    summary["final_observables"] = Value::Object(finals);
    schema::write_json(ctx.dir(), "summary.json", &summary, &schema::summary_shape())?;

    for a in &cfg.analyses {
        match a {
            Analysis::Spectrum => spectrum_with(ctx, &model)?,
            Analysis::Audit => audit_with(ctx, &model)?,
            Analysis::DdCheck => check_dd_with(ctx, Some(&model))?,
            Analysis::Consistency => {
                let report = consistency(ctx, &model)?;
                schema::write_json(ctx.dir(), "consistency.json", &report, &schema::consistency_shape())?;
            }
        }
    }
    Ok(())
}

fn analysis_name(a: Analysis) -> &'static str {
    match a {
        Analysis::Spectrum => "spectrum",
        Analysis::Audit => "audit",
        Analysis::DdCheck => "dd_check",
        Analysis::Consistency => "consistency",
    }
}

pub fn spectrum(ctx: &Context) -> Result<(), CliError> {
    let model = ctx.config.build_model()?;
    spectrum_with(ctx, &model)
}

fn observables_at(model: &Model, state: &HybridStateGrid) -> Value {
    let mut map = Map::new();
    for o in &model.observables {
        map.insert(o.label.clone(), json!(state.expectation(o).re));
    }
    Value::Object(map)
}

fn spectrum_with(ctx: &Context, model: &Model) -> Result<(), CliError> {
    let l = liouvillian(model)?;
    let report = classify_spectrum(&l, DEFAULT_TOL_ZERO)?;
    let asymptotic = match asymptotic_projection(&l, &model.initial, DEFAULT_TOL_ZERO)? {
        Asymptotic::Limit(s) => json!({ "kind": "limit", "observables": observables_at(model, &s) }),
        Asymptotic::Orbit { rotating } => json!({
            "kind": "orbit",
            "rotating": rotating.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        }),
    };
    let mut out = report.to_json();
    out["model"] = json!(model.name);
    out["state_len"] = json!(model.spec.state_len());
    out["asymptotic"] = asymptotic;
    schema::write_json(ctx.dir(), "spectrum.json", &out, &schema::spectrum_shape())
}

pub fn audit(ctx: &Context) -> Result<(), CliError> {
    let model = ctx.config.build_model()?;
    audit_with(ctx, &model)
}

fn consistency(ctx: &Context, model: &Model) -> Result<Value, CliError> {
    let cfg = &ctx.config;
    let laws = if cfg.toy_params().is_some() { model.observables.clone() } else { Vec::new() };
    let opts = ConsistencyOptions {
        dt: cfg.integration.dt,
        samples: cfg.audit.samples,
        seed: cfg.seed,
        conservation_laws: laws,
    };
    let report = consistency_suite(&model.spec, &model.initial, cfg.audit.horizon, &opts)?;
    Ok(serde_json::to_value(report).expect("report serializes"))
}

fn audit_with(ctx: &Context, model: &Model) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let a = &cfg.audit;
    let dt = cfg.integration.dt;
    let mut verdicts = Vec::new();
    match cfg.toy_params() {
        Some(params) => {
            let generator = toy_generator(params)?;
            let family = so3_family(cfg.seed, a.rotations);
            let probe = AuditProbe {
                initial: model.initial.clone(),
                horizon: a.horizon,
                dt,
                samples: a.samples,
                symmetry_states: symmetry_test_states(cfg.seed, &params.initial_state()),
            };
            for obs in &model.observables {
                let v = noether_audit(&model.spec, &generator, &family, obs, &probe)?;
                verdicts.push(serde_json::to_value(v).expect("verdict serializes"));
            }
        }
        None => {
            // no atomic form to rotate, so only the conservation side
            for obs in &model.observables {
                let cons = conservation_check(&model.spec, obs)?;
                let rates = rate_probe(&model.spec, obs, &model.initial, a.horizon, dt, a.samples)?;
                verdicts.push(json!({
                    "observable": obs.label,
                    "symmetric": null,
                    "conserved": cons <= 1e-8 && rates.max_rate <= 1e-8 * rates.scale,
                    "symmetry_residual": null,
                    "conservation_residual": cons,
                    "dJdt_samples": rates.samples,
                    "rate_disagreement": rates.disagreement,
                    "internally_consistent": rates.disagreement <= 1e-7,
                }));
            }
        }
    }
    let conserved_fields = match conserved_observable_search(&model.spec) {
        Ok(f) => Some(f.len()),
        Err(cqdyn::Error::Capacity { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let out = json!({
        "model": model.name,
        "seed": cfg.seed,
        "rotations": a.rotations,
        "verdicts": verdicts,
        "conserved_fields": conserved_fields,
        "consistency": consistency(ctx, model)?,
    });
    schema::write_json(ctx.dir(), "audit.json", &out, &schema::audit_shape())
}

pub fn check_dd(ctx: &Context) -> Result<(), CliError> {
    if ctx.config.dd.is_some() {
        return check_dd_with(ctx, None);
    }
    let model = ctx.config.build_model()?;
    check_dd_with(ctx, Some(&model))
}

fn evaluation(state: &str, summary: &BackreactionSummary) -> Value {
    json!({
        "state": state,
        "summary": summary,
        "verdict": check_diffusion_decoherence(summary),
    })
}

fn check_dd_with(ctx: &Context, model: Option<&Model>) -> Result<(), CliError> {
    let mut evaluations = Vec::new();
    let source = match (&ctx.config.dd, model) {
        (Some(m), _) => {
            let n = m.d1.len();
            if m.d2.len() != n || m.d2.iter().any(|r| r.len() != n) {
                return Err(CliError::Config(format!("dd.d2: expected a {n}x{n} matrix to match dd.d1")));
            }
            let summary = BackreactionSummary { d0: m.d0, d1: m.d1.clone(), d2: m.d2.clone(), imaginary_residual: 0.0 };
            evaluations.push(evaluation("manual", &summary));
            "manual"
        }
        (None, Some(model)) => {
            evaluations.push(evaluation("initial", &spec_backreaction(&model.spec, &model.initial)?));
            // the long-time state, when the model has one and is small enough
            match build_liouvillian_matrix(&model.spec) {
                Ok(l) => {
                    if let Asymptotic::Limit(s) = asymptotic_projection(&l, &model.initial, DEFAULT_TOL_ZERO)? {
                        evaluations.push(evaluation("asymptotic", &spec_backreaction(&model.spec, &s)?));
                    }
                }
                Err(cqdyn::Error::Capacity { .. }) => {}
                Err(e) => return Err(e.into()),
            }
            "model"
        }
        (None, None) => unreachable!("check_dd without model or manual summary"),
    };
    let pass = evaluations.iter().all(|e| e["verdict"]["pass"] == json!(true));
    let out = json!({
        "model": model.map(|m| m.name.clone()),
        "source": source,
        "evaluations": evaluations,
        "pass": pass,
    });
    schema::write_json(ctx.dir(), "dd.json", &out, &schema::dd_shape())
}

/// Simulate, spectrum and audit on the toy model, plus the angular momentum
/// table and the verdict file.
pub fn toy(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let params =
        cfg.toy_params().ok_or_else(|| CliError::Config("model.kind: the toy subcommand needs a toy model".into()))?;
    let model = cfg.build_model()?;

    let i = &cfg.integration;
    let stride = i.dt * i.snapshot_every as f64;
    let n = (i.t_final / stride).round() as usize;
    let t_grid: Vec<f64> = (0..=n).map(|k| (k as f64 * stride).min(i.t_final)).collect();
    let report = nonconservation_demo(params, &t_grid, cfg.seed)?;

    let labels = ["L_x", "L_y", "L_z", "S_x", "S_y", "S_z", "J_x", "J_y", "J_z"];
    let mut csv = String::from("t");
    for l in labels {
        csv.push(',');
        csv.push_str(l);
    }
    csv.push('\n');
    for r in &report.records {
        let _ = write!(csv, "{:.16e}", r.t);
        for v in r.l_orbital.iter().chain(&r.s_spin).chain(&r.j_total) {
            let _ = write!(csv, ",{v:.16e}");
        }
        csv.push('\n');
    }
    let mut columns = vec!["t".to_string()];
    columns.extend(labels.iter().map(|s| s.to_string()));
    schema::write_csv(ctx.dir(), "angular_momentum.csv", &csv, &columns)?;

    simulate(ctx)?;
    spectrum_with(ctx, &model)?;
    audit_with(ctx, &model)?;

    let l = liouvillian(&model)?;
    let spec = classify_spectrum(&l, DEFAULT_TOL_ZERO)?;
    let verdict = json!({
        "params": params,
        "seed": cfg.seed,
        "samples": report.records.len(),
        "eom_rotationally_invariant": report.eom_rotationally_invariant,
        "J_conserved": report.j_conserved,
        "max_deviation_atomic": report.max_deviation_atomic,
        "max_deviation_grid": report.max_deviation_grid,
        "symmetry_residual": report.symmetry_residual,
        "conservation_residual": report.conservation_residual,
        "j_drift": report.j_drift,
        "spectrum": {
            "zero_multiplicity": spec.zero_multiplicity,
            "eigenvalues": spec.eigenvalues.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
        },
    });
    schema::write_json(ctx.dir(), "toy_verdict.json", &verdict, &schema::toy_verdict_shape())
}
