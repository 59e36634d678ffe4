//! Subcommand implementations. Each returns its exit code and fills the report.

use nalgebra::DVector;

use sbrl_core::builtin::Example1;
use sbrl_core::certify::{
    check_external, check_internal, default_beta_grid, default_linear_beta_grid, empirical_gain,
    gamma_star_search, linear_brl, linear_brl_search, StorageFamily, VSearch,
};
use sbrl_core::dynamics::{ensemble_seeds, simulate};
use sbrl_core::noise::derive_seed;
use sbrl_core::synth::certify_controller;
use sbrl_core::{
    Certificate, ControlLaw, DisturbanceEnsemble, DomainBox, Dynamics, Error, Sampling, Trajectory,
};

use crate::config::{
    CertificateSpec, Example1Params, GammaSearchSpec, LawRegistry, RunConfig, StorageSpec,
    SystemSpec,
};
use crate::error::CliError;
use crate::output::{combine_exit, LabeledGain, OutputDir, RunReport, Timings};
use crate::svg::{LinePlot, Series};

/// Shared state of one invocation.
pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub registry: &'a LawRegistry,
    pub out: &'a mut OutputDir,
    pub report: &'a mut RunReport,
    pub timings: &'a mut Timings,
}

fn ensemble_label(e: &DisturbanceEnsemble) -> &'static str {
    match e {
        DisturbanceEnsemble::Zero => "zero",
        DisturbanceEnsemble::DecayingSine { .. } => "decaying_sine",
        DisturbanceEnsemble::WhiteNoise { .. } => "white_noise",
        DisturbanceEnsemble::Impulse { .. } => "impulse",
    }
}

/// CSV text from equal-length columns, with a leading `k` index column.
fn columns_csv(header: &[&str], cols: &[Vec<f64>]) -> String {
    let mut s = String::from("k");
    for h in header {
        s.push(',');
        s.push_str(h);
    }
    s.push('\n');
    let rows = cols.iter().map(Vec::len).max().unwrap_or(0);
    for k in 0..rows {
        s.push_str(&k.to_string());
        for c in cols {
            s.push(',');
            if let Some(v) = c.get(k) {
                s.push_str(&format!("{v:?}"));
            }
        }
        s.push('\n');
    }
    s
}

fn write_figure(
    ctx: &mut Ctx,
    stem: &str,
    title: &str,
    y_label: &str,
    header: &[&str],
    cols: Vec<Vec<f64>>,
) -> Result<(), CliError> {
    let format = ctx.cfg.format();
    if format.csv() {
        ctx.out.write(&format!("{stem}.csv"), columns_csv(header, &cols))?;
    }
    if format.svg() {
        let plot = LinePlot {
            title: title.to_string(),
            x_label: "k".into(),
            y_label: y_label.to_string(),
            series: header
                .iter()
                .zip(cols)
                .map(|(h, c)| Series::indexed(*h, c))
                .collect(),
        };
        ctx.out.write(&format!("{stem}.svg"), plot.render())?;
    }
    Ok(())
}

fn record_certificate(ctx: &mut Ctx, name: &str, cert: Certificate) -> Result<i32, CliError> {
    let code = cert.status.exit_code();
    log::info!("{name}: {:?}, worst margin {:e}", cert.status, cert.worst_margin);
    for (k, v) in &cert.summary {
        ctx.report.summary.insert(format!("{name}.{k}"), *v);
    }
    ctx.report
        .summary
        .insert(format!("{name}.worst_margin"), cert.worst_margin);
    if ctx.cfg.format().csv() {
        let file = if name == "external" || name == "controller" {
            "margins.csv".to_string()
        } else {
            format!("margins_{name}.csv")
        };
        ctx.out.write_with(&file, |w| cert.write_margins_csv(w))?;
    }
    ctx.report.certificates.insert(name.to_string(), cert);
    Ok(code)
}

pub fn certify(ctx: &mut Ctx) -> Result<i32, CliError> {
    let cfg = ctx.cfg;
    let c = &cfg.certificate;
    let v = cfg.build_storage()?;
    let domain = cfg.domain()?;
    let scheme = cfg.scheme();
    let search = c.search.clone().unwrap_or(VSearch::Auto);
    let beta = c.beta.unwrap_or(2.0);
    let gamma = c.gamma.unwrap_or(1.0);
    let mut codes = Vec::new();

    if matches!(cfg.system, SystemSpec::Linear(_)) {
        return linear_brl_cmd(ctx);
    }
    if cfg.is_controlled() {
        let plant = cfg.build_plant()?;
        let law = cfg.build_law(ctx.registry)?;
        let cert = ctx.timings.time("certify_controller", || {
            certify_controller(&plant, &law, &v, beta, gamma, &domain, &scheme, &search)
        })?;
        codes.push(record_certificate(ctx, "controller", cert)?);
    } else if let Some(gs) = &c.gamma_search {
        let sys = cfg.build_affine(ctx.registry)?;
        let family = StorageFamily::Scaled {
            base: v.clone(),
            scales: gs.scales.clone(),
        };
        let betas = gs.betas.clone().unwrap_or_else(default_beta_grid);
        let r = ctx.timings.time("gamma_star_search", || {
            gamma_star_search(&sys, &family, &betas, &domain, &scheme, &search)
        })?;
        let s = &mut ctx.report.summary;
        s.insert("feasible_pairs".into(), r.feasible as f64);
        s.insert("evaluated_pairs".into(), r.evaluated as f64);
        if let (Some(g), Some(b), Some(p)) = (r.gamma_star_sq, r.beta, r.parameter) {
            s.insert("gamma_star_sq".into(), g);
            s.insert("beta_star".into(), b);
            s.insert("scale_star".into(), p);
        } else {
            ctx.report
                .notes
                .push("no (beta, V) pair certified H1 <= 0 on the domain".into());
        }
        codes.push(record_certificate(ctx, "external", r.certificate)?);
    } else {
        let sys = cfg.build_affine(ctx.registry)?;
        let cert = ctx.timings.time("check_external", || {
            check_external(&sys, &v, beta, gamma, &domain, &scheme, &search)
        })?;
        codes.push(record_certificate(ctx, "external", cert)?);
    }

    if let Some(c2) = c.c2 {
        let sys = cfg.build_affine(ctx.registry)?;
        let cert = ctx
            .timings
            .time("check_internal", || check_internal(&sys, &v, c2, &domain, &scheme))?;
        codes.push(record_certificate(ctx, "internal", cert)?);
    }
    Ok(combine_exit(&codes))
}

/// Runs every configured disturbance ensemble from `x₀ = 0`.
fn gain_reports(ctx: &mut Ctx, gamma_sq: f64, seed_offset: u64) -> Result<Vec<i32>, CliError> {
    let cfg = ctx.cfg;
    let sys = cfg.build_affine(ctx.registry)?;
    let e = &cfg.ensemble;
    let horizon = e.horizon.unwrap_or(200);
    let size = e.trajectories.unwrap_or(200);
    let ensembles = e.disturbances.clone().unwrap_or_default();
    if ensembles.is_empty() {
        return Err(CliError::invalid("ensemble.disturbances: at least one ensemble is required"));
    }
    let mut codes = Vec::new();
    for (i, ens) in ensembles.iter().enumerate() {
        let seed = derive_seed(cfg.seed, seed_offset + i as u64);
        let mut label = ensemble_label(ens).to_string();
        if ctx.report.gain_reports.iter().any(|g| g.ensemble == label) {
            label = format!("{label}_{i}");
        }
        let r = ctx.timings.time(&format!("gain_{label}"), || {
            empirical_gain(&sys, None, ens, horizon, size, gamma_sq, seed)
        })?;
        log::info!(
            "{label}: mean ratio {:.6}, max ratio {:.6}, {:?}",
            r.mean_ratio,
            r.max_ratio,
            r.verdict
        );
        let s = &mut ctx.report.summary;
        s.insert(format!("{label}.mean_ratio"), r.mean_ratio);
        s.insert(format!("{label}.max_ratio"), r.max_ratio);
        s.insert(format!("{label}.std_error"), r.std_error);
        codes.push(r.verdict.exit_code());
        ctx.report.gain_reports.push(LabeledGain {
            ensemble: label,
            report: r,
        });
    }
    if cfg.format().csv() {
        let mut csv = String::from("ensemble,trajectory,ratio\n");
        for g in &ctx.report.gain_reports {
            for (j, r) in g.report.ratios.iter().enumerate() {
                csv.push_str(&format!("{},{j},{r:?}\n", g.ensemble));
            }
        }
        ctx.out.write("ratios.csv", csv)?;
    }
    Ok(codes)
}

pub fn gain(ctx: &mut Ctx) -> Result<i32, CliError> {
    let gamma_sq = ctx.cfg.ensemble.gamma_sq.unwrap_or(1.0);
    ctx.report.summary.insert("gamma_sq".into(), gamma_sq);
    let codes = gain_reports(ctx, gamma_sq, 10)?;
    Ok(combine_exit(&codes))
}

fn trajectory_csv(t: &Trajectory) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    t.write_csv(&mut buf)?;
    Ok(buf)
}

pub fn simulate_cmd(ctx: &mut Ctx) -> Result<i32, CliError> {
    let cfg = ctx.cfg;
    let e = &cfg.ensemble;
    let horizon = e.horizon.unwrap_or(200);
    let size = e.trajectories.unwrap_or(1);
    let x0 = DVector::from_vec(e.x0.clone().unwrap_or_default());
    let ens = e
        .disturbances
        .as_ref()
        .and_then(|d| d.first().cloned())
        .unwrap_or(DisturbanceEnsemble::Zero);

    let (sys, law): (Box<dyn Dynamics>, Option<Box<dyn ControlLaw>>) = if cfg.is_controlled() {
        (
            Box::new(cfg.build_plant()?),
            Some(Box::new(cfg.build_law(ctx.registry)?)),
        )
    } else {
        (Box::new(cfg.build_affine(ctx.registry)?), None)
    };
    let nv = sys.dims().disturbance;
    let width = size.saturating_sub(1).to_string().len().max(3);
    let mut first: Option<Trajectory> = None;
    for j in 0..size {
        let (noise_seed, dist_seed) = ensemble_seeds(derive_seed(cfg.seed, 3), j);
        let policy = ens.realize(nv, horizon, dist_seed)?;
        let name = format!("trajectory_{j:0width$}.csv");
        match simulate(sys.as_ref(), &x0, law.as_deref(), &policy, horizon, noise_seed) {
            Ok(t) => {
                if cfg.format().csv() {
                    ctx.out.write(&name, trajectory_csv(&t)?)?;
                }
                if first.is_none() {
                    first = Some(t);
                }
            }
            Err(Error::Divergence { step, norm, partial }) => {
                ctx.out.write(&name, trajectory_csv(&partial)?)?;
                ctx.report.summary.insert("divergence_step".into(), step as f64);
                ctx.report.summary.insert("divergence_trajectory".into(), j as f64);
                ctx.report.notes.push(format!(
                    "trajectory {j} diverged at step {step} (|x| = {norm:e}); partial output in {name}"
                ));
                return Err(CliError::Core(Error::Divergence { step, norm, partial }));
            }
            Err(other) => return Err(other.into()),
        }
    }
    if let Some(t) = first {
        let n = t.states.first().map_or(0, |x| x.len());
        let names: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
        let header: Vec<&str> = names.iter().map(String::as_str).collect();
        let cols = (0..n)
            .map(|i| t.states.iter().map(|x| x[i]).collect())
            .collect();
        if cfg.format().svg() {
            let plot = LinePlot {
                title: "states, trajectory 0".into(),
                x_label: "k".into(),
                y_label: "x_k".into(),
                series: header
                    .iter()
                    .zip::<Vec<Vec<f64>>>(cols)
                    .map(|(h, c)| Series::indexed(*h, c))
                    .collect(),
            };
            ctx.out.write("states.svg", plot.render())?;
        }
        let s = &mut ctx.report.summary;
        s.insert("final_state_norm".into(), t.states.last().map_or(0.0, |x| x.norm()));
        s.insert("output_energy".into(), t.total_output_energy());
        s.insert("disturbance_energy".into(), t.total_disturbance_energy());
    }
    ctx.report.summary.insert("trajectories".into(), size as f64);
    Ok(0)
}

pub fn linear_brl_cmd(ctx: &mut Ctx) -> Result<i32, CliError> {
    let cfg = ctx.cfg;
    let sys = cfg.build_linear()?;
    let gamma = cfg.certificate.gamma.unwrap_or(1.0);
    let spec = &cfg.certificate.linear_brl;
    let (status, value) = match (&spec.p, spec.beta) {
        (Some(p), Some(beta)) => {
            let p = sbrl_core::linalg::from_rows(p)
                .ok_or_else(|| CliError::invalid("certificate.linear_brl.P: ragged rows"))?;
            let r = ctx.timings.time("linear_brl", || linear_brl(&sys, &p, beta, gamma))?;
            let s = &mut ctx.report.summary;
            s.insert("margin_gain".into(), r.margin_gain);
            s.insert("margin_dissipation".into(), r.margin_dissipation);
            s.insert("sigma_bar".into(), r.diagnostics.sigma_bar);
            (r.status, serde_json::to_value(&r))
        }
        (None, None) => {
            let betas = spec
                .betas
                .clone()
                .unwrap_or_else(|| default_linear_beta_grid(&sys));
            let strategy = spec.strategy.clone().unwrap_or_default();
            let r = ctx.timings.time("linear_brl_search", || {
                linear_brl_search(&sys, gamma, &betas, &strategy)
            })?;
            let s = &mut ctx.report.summary;
            s.insert("sigma_bar".into(), r.diagnostics.sigma_bar);
            if let Some(rep) = &r.report {
                s.insert("beta".into(), rep.beta);
                s.insert("margin_gain".into(), rep.margin_gain);
                s.insert("margin_dissipation".into(), rep.margin_dissipation);
            }
            ctx.report.notes.extend(r.notes.iter().cloned());
            (r.status, serde_json::to_value(&r))
        }
        _ => {
            return Err(CliError::invalid(
                "certificate.linear_brl: give both P and beta, or neither",
            ))
        }
    };
    ctx.report.linear_brl =
        Some(value.map_err(|e| CliError::Io(format!("serializing linear_brl: {e}")))?);
    log::info!("linear bounded-real check: {status:?}");
    Ok(status.exit_code())
}

/// Built-in configuration of a worked example.
pub fn example_config(which: u32) -> Result<RunConfig, CliError> {
    let base = RunConfig {
        system: SystemSpec::Example2,
        noise: None,
        storage: None,
        law: None,
        certificate: CertificateSpec::default(),
        ensemble: Default::default(),
        output: Default::default(),
        seed: 0,
    };
    match which {
        1 => {
            let e = Example1::default();
            let mut betas = default_beta_grid();
            betas.push(e.optimal_beta());
            let domain = DomainBox::cube(1, -5.0, 5.0, Sampling::Grid { points_per_axis: 21 })?;
            Ok(RunConfig {
                system: SystemSpec::Example1(Example1Params::default()),
                storage: Some(StorageSpec::Quadratic { p: vec![vec![1.0]] }),
                certificate: CertificateSpec {
                    gamma_search: Some(GammaSearchSpec {
                        scales: vec![0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0],
                        betas: Some(betas),
                    }),
                    domain: Some(domain),
                    ..Default::default()
                },
                ..base
            })
        }
        2 => Ok(base),
        n => Err(CliError::invalid(format!(
            "example {n}: only examples 1 and 2 are built in"
        ))),
    }
}

/// One trajectory from the configured `x₀` under the first disturbance ensemble.
fn illustrative_trajectory(ctx: &Ctx) -> Result<Trajectory, CliError> {
    let cfg = ctx.cfg;
    let e = &cfg.ensemble;
    let horizon = e.horizon.unwrap_or(200);
    let ens = e
        .disturbances
        .as_ref()
        .and_then(|d| d.first().cloned())
        .unwrap_or(DisturbanceEnsemble::Zero);
    let (noise_seed, dist_seed) = ensemble_seeds(derive_seed(cfg.seed, 4), 0);
    if cfg.is_controlled() {
        let plant = cfg.build_plant()?;
        let law = cfg.build_law(ctx.registry)?;
        let x0 = DVector::from_vec(e.x0.clone().unwrap_or_default());
        let policy = ens.realize(plant.disturbance_dim(), horizon, dist_seed)?;
        Ok(simulate(&plant, &x0, Some(&law), &policy, horizon, noise_seed)?)
    } else {
        let sys = cfg.build_affine(ctx.registry)?;
        let x0 = DVector::zeros(sys.state_dim());
        let policy = ens.realize(sys.disturbance_dim(), horizon, dist_seed)?;
        Ok(simulate(&sys, &x0, None, &policy, horizon, noise_seed)?)
    }
}

pub fn example(ctx: &mut Ctx, which: u32) -> Result<i32, CliError> {
    let mut codes = vec![certify(ctx)?];
    let gamma_sq = match which {
        1 => ctx.report.summary.get("gamma_star_sq").copied(),
        _ => ctx.cfg.ensemble.gamma_sq,
    };
    let Some(gamma_sq) = gamma_sq else {
        ctx.report
            .notes
            .push("no certified gamma: empirical gain and figures skipped".into());
        return Ok(combine_exit(&codes));
    };
    ctx.report.summary.insert("gamma_sq".into(), gamma_sq);
    codes.extend(gain_reports(ctx, gamma_sq, 10)?);

    let t = illustrative_trajectory(ctx)?;
    let gv: Vec<f64> = t.v_sq.iter().map(|v| gamma_sq * v).collect();
    let gcv: Vec<f64> = t.cum_v_sq.iter().map(|v| gamma_sq * v).collect();
    if which == 1 {
        write_figure(
            ctx,
            "fig1",
            "Example 1: output energy against gamma*^2 disturbance energy",
            "energy",
            &["z_sq", "gamma_sq_v_sq", "v_sq", "cum_z_sq", "gamma_sq_cum_v_sq"],
            vec![t.z_sq.clone(), gv, t.v_sq.clone(), t.cum_z_sq.clone(), gcv],
        )?;
    } else {
        if let Some(g) = ctx.report.summary.get("controller.g_beta_sup").copied() {
            ctx.report.summary.insert("g_beta".into(), g);
        }
        let controls = t.controls.clone().unwrap_or_default();
        let m = controls.first().map_or(0, |u| u.len());
        let u_names: Vec<String> = (1..=m).map(|i| format!("u_{i}")).collect();
        let u_header: Vec<&str> = u_names.iter().map(String::as_str).collect();
        let u_cols = (0..m).map(|i| controls.iter().map(|u| u[i]).collect()).collect();
        write_figure(ctx, "fig2", "Example 2: control u*(x_k)", "u_k", &u_header, u_cols)?;

        let n = t.states.first().map_or(0, |x| x.len());
        let x_names: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
        let x_header: Vec<&str> = x_names.iter().map(String::as_str).collect();
        let x_cols = (0..n).map(|i| t.states.iter().map(|x| x[i]).collect()).collect();
        write_figure(ctx, "fig3", "Example 2: closed-loop states", "x_k", &x_header, x_cols)?;

        write_figure(
            ctx,
            "fig4",
            "Example 2: output energy against gamma^2 disturbance energy",
            "energy",
            &["z_sq", "gamma_sq_v_sq", "cum_z_sq", "gamma_sq_cum_v_sq"],
            vec![t.z_sq.clone(), gv, t.cum_z_sq.clone(), gcv],
        )?;
    }
    if ctx.cfg.format().csv() {
        ctx.out.write("trajectory.csv", trajectory_csv(&t)?)?;
    }
    Ok(combine_exit(&codes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_csv_pads_short_columns() {
        let s = columns_csv(&["a", "b"], &[vec![1.0, 2.5], vec![3.0]]);
        assert_eq!(s, "k,a,b\n0,1.0,3.0\n1,2.5,\n");
    }

    #[test]
    fn unknown_example_is_rejected() {
        assert!(example_config(3).is_err());
        assert!(example_config(1).is_ok());
    }
}
