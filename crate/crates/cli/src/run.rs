//! Mode dispatch and artifact export.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use clap::ValueEnum;
use fgam::data::{SparseFunctionalDataset, Subject};
use fgam::fpca::{pace_init, FpcaOptions, FpcaResult};
use fgam::mcmc::{
    predict_mcmc, quantile, run_mcmc, McmcConfig, PosteriorSamples, Prediction, SurfaceSummary,
};
use fgam::model::{FgamModel, Hyperparameters, SurfaceOptions};
use fgam::sim::{
    generate_dataset, run_scenario, Method, Metric, Scenario, SimSettings, SurfaceGrid, TrueSurface,
};
use fgam::vb::{predict_vb, predict_vb_trajectories, run_vb, VbConfig, VbState};
use nalgebra::DMatrix;

use crate::io::{load_dataset, num, write_text, AtomicCsv, LoadedData};
use crate::{Args, CliError, Mode};

/// Side of the rectangular surface export grid.
const SURFACE_GRID: usize = 40;

struct Settings {
    fpca: FpcaOptions,
    surface: SurfaceOptions,
    hyper: Hyperparameters,
    vb: VbConfig,
    mcmc: McmcConfig,
    warm: McmcConfig,
}

fn settings(a: &Args) -> Result<Settings, CliError> {
    let fpca = FpcaOptions {
        grid_size: a.grid_size,
        pve: a.pve,
        max_components: if a.max_pcs == 0 {
            None
        } else {
            Some(a.max_pcs)
        },
        ..FpcaOptions::default()
    };
    let surface = SurfaceOptions {
        kx: a.kx,
        kt: a.kt,
        dx: a.dx,
        dt: a.dt,
        ..SurfaceOptions::default()
    };
    let hyper = Hyperparameters {
        a_s: a.a_s,
        b_s: a.b_s,
        a_x: a.ax,
        b_x: a.bx,
        a_l: a.al,
        b_l: a.bl,
        sigma_beta2: a.sigma_beta2,
        sigma_eta2: a.sigma_eta2,
    };
    hyper.validate()?;
    let vb = VbConfig {
        tol: a.vb_tol,
        max_iter: a.vb_max_iter,
        laguerre_points: a.laguerre_points,
        ..VbConfig::default()
    };
    vb.validate()?;
    let base = McmcConfig {
        seed: a.seed,
        thin: a.thin,
        ..McmcConfig::default()
    };
    let mcmc = McmcConfig {
        iters: a.iters.unwrap_or(11_000),
        burnin: a.burnin.unwrap_or(1_000),
        ..base
    };
    let warm = McmcConfig {
        iters: a.iters.unwrap_or(1_500),
        burnin: a.burnin.unwrap_or(500),
        ..base
    };
    match a.mode {
        Mode::Mcmc => mcmc.validate()?,
        Mode::VbMcmc | Mode::Predict => warm.validate()?,
        _ => {}
    }
    Ok(Settings {
        fpca,
        surface,
        hyper,
        vb,
        mcmc,
        warm,
    })
}

/// Accumulates `runlog.txt`; timing lines are kept apart and written last.
#[derive(Default)]
struct RunLog {
    body: String,
    timings: String,
}

impl RunLog {
    fn line(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.body, "{key}: {value}");
    }

    fn time(&mut self, stage: &str, since: Instant) {
        let _ = writeln!(
            self.timings,
            "time.{stage}: {:.3} s",
            since.elapsed().as_secs_f64()
        );
    }

    fn finish(self, dir: &Path) -> Result<(), CliError> {
        write_text(dir, "runlog.txt", &(self.body + &self.timings))
    }
}

pub fn dispatch(a: &Args) -> Result<(), CliError> {
    let s = settings(a)?;
    std::fs::create_dir_all(&a.out)
        .map_err(|e| CliError::Output(format!("{}: {e}", a.out.display())))?;
    let mut log = RunLog::default();
    log.line(
        "mode",
        a.mode
            .to_possible_value()
            .expect("no skipped variants")
            .get_name(),
    );
    log.line("seed", a.seed);
    if a.mode == Mode::Simulate {
        return simulate(a, &s, log);
    }
    let (obs, resp) = match (&a.obs, &a.resp) {
        (Some(o), Some(r)) => (o, r),
        _ => {
            return Err(CliError::Usage(format!(
                "--obs and --resp are required in {:?} mode",
                a.mode
            )))
        }
    };
    let data = load_dataset(obs, resp)?;
    if a.mode == Mode::Predict && data.targets.is_empty() {
        return Err(CliError::Usage(
            "predict mode needs subjects with a blank response in --resp".into(),
        ));
    }
    log.line("subjects.labelled", data.train.len());
    log.line("subjects.targets", data.targets.len());
    log.line("observations", data.train.total_obs());
    let out = a.out.as_path();

    let t0 = Instant::now();
    if a.mode == Mode::Pace {
        let all = data.all_subjects()?;
        let fpca = pace_init(&all, &s.fpca)?;
        log.time("pace", t0);
        fpca_log(&mut log, &fpca);
        write_fpca(out, &all, &fpca)?;
        return log.finish(out);
    }
    let fpca = pace_init(&data.train, &s.fpca)?;
    log.time("pace", t0);
    fpca_log(&mut log, &fpca);
    let model = FgamModel::new(&data.train, fpca, s.surface, s.hyper)?;

    match a.mode {
        Mode::Mcmc => {
            let t = Instant::now();
            let samples = run_mcmc(&model, &s.mcmc, None)?;
            log.time("mcmc", t);
            mcmc_outputs(out, &model, &data, &samples, &mut log)?;
        }
        Mode::Vb => {
            let t = Instant::now();
            let st = run_vb(&model, &s.vb, None)?;
            log.time("vb", t);
            vb_outputs(out, &model, &data, &st, &mut log, true)?;
        }
        Mode::VbMcmc | Mode::Predict => {
            let t = Instant::now();
            let st = run_vb(&model, &s.vb, None)?;
            log.time("vb", t);
            vb_outputs(out, &model, &data, &st, &mut log, false)?;
            let t = Instant::now();
            let samples = run_mcmc(&model, &s.warm, Some(st.to_mcmc_state(&model)))?;
            log.time("mcmc", t);
            mcmc_outputs(out, &model, &data, &samples, &mut log)?;
        }
        Mode::Pace | Mode::Simulate => unreachable!("handled above"),
    }
    log.time("total", t0);
    log.finish(out)
}

fn fpca_log(log: &mut RunLog, f: &FpcaResult) {
    log.line("fpca.components", f.num_components());
    log.line("fpca.pve", num(f.pve));
    log.line("fpca.sigma_x2", num(f.sigma_x2));
    log.line(
        "fpca.eigenvalues",
        f.nu.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" "),
    );
    log.line("fpca.sigma_x2_floored", f.diagnostics.sigma_floored);
    log.line("fpca.negative_mass", num(f.diagnostics.negative_mass));
    log.line("fpca.condition", num(f.diagnostics.condition));
    log.line("fpca.ill_conditioned", f.diagnostics.ill_conditioned);
}

fn write_fpca(out: &Path, data: &SparseFunctionalDataset, f: &FpcaResult) -> Result<(), CliError> {
    let m = f.num_components();
    let mut header = vec!["t".to_string(), "mu".to_string()];
    header.extend((1..=m).map(|c| format!("phi_{c}")));
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = AtomicCsv::create(out, "eigenfunctions.csv", &h)?;
    for (g, &t) in f.grid.points().iter().enumerate() {
        let mut row = vec![num(t), num(f.mu[g])];
        row.extend((0..m).map(|c| num(f.phi[(g, c)])));
        w.row(row)?;
    }
    w.finish()?;
    let mut w = AtomicCsv::create(out, "eigenvalues.csv", &["component", "nu"])?;
    for (c, v) in f.nu.iter().enumerate() {
        w.row([(c + 1).to_string(), num(*v)])?;
    }
    w.finish()?;
    let traj = DMatrix::from_fn(data.len(), f.grid.len(), |i, g| {
        f.mu[g]
            + (0..m)
                .map(|c| f.scores[(i, c)] * f.phi[(g, c)])
                .sum::<f64>()
    });
    write_scores(out, "scores.csv", data.subjects(), &f.scores)?;
    write_trajectories(out, data.subjects(), f.grid.points(), &traj)
}

fn write_scores(
    out: &Path,
    name: &str,
    subjects: &[Subject],
    scores: &DMatrix<f64>,
) -> Result<(), CliError> {
    let mut header = vec!["subject_id".to_string()];
    header.extend((1..=scores.ncols()).map(|c| format!("xi_{c}")));
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut w = AtomicCsv::create(out, name, &h)?;
    for (i, s) in subjects.iter().enumerate() {
        let mut row = vec![s.id.clone()];
        row.extend(scores.row(i).iter().map(|v| num(*v)));
        w.row(row)?;
    }
    w.finish()
}

fn write_trajectories(
    out: &Path,
    subjects: &[Subject],
    ts: &[f64],
    traj: &DMatrix<f64>,
) -> Result<(), CliError> {
    let mut w = AtomicCsv::create(out, "trajectories.csv", &["subject_id", "t", "value"])?;
    for (i, s) in subjects.iter().enumerate() {
        for (g, &t) in ts.iter().enumerate() {
            w.row([s.id.clone(), num(t), num(traj[(i, g)])])?;
        }
    }
    w.finish()
}

fn write_predictions(
    out: &Path,
    name: &str,
    subjects: &[Subject],
    preds: &[Prediction],
) -> Result<(), CliError> {
    let mut w = AtomicCsv::create(out, name, &["subject_id", "y", "fitted", "lower", "upper"])?;
    for (s, p) in subjects.iter().zip(preds) {
        let y = if s.y.is_finite() {
            num(s.y)
        } else {
            String::new()
        };
        w.row([s.id.clone(), y, num(p.mean), num(p.lower), num(p.upper)])?;
    }
    w.finish()
}

fn surface_grid(model: &FgamModel, traj: &DMatrix<f64>) -> Result<SurfaceGrid, CliError> {
    let pts = SurfaceGrid::trajectory_points(traj, &model.fpca.grid);
    Ok(SurfaceGrid::from_points(&pts, SURFACE_GRID)?)
}

fn write_surface(
    out: &Path,
    name: &str,
    grid: &SurfaceGrid,
    s: &SurfaceSummary,
) -> Result<(), CliError> {
    let mut w = AtomicCsv::create(out, name, &["x", "t", "estimate", "sd", "in_hull"])?;
    for (a, &x) in grid.xs.iter().enumerate() {
        for (b, &t) in grid.ts.iter().enumerate() {
            let inside = grid.mask[a * grid.ts.len() + b];
            w.row([
                num(x),
                num(t),
                num(s.mean[(a, b)]),
                num(s.sd[(a, b)]),
                u8::from(inside).to_string(),
            ])?;
        }
    }
    w.finish()
}

fn mcmc_outputs(
    out: &Path,
    model: &FgamModel,
    data: &LoadedData,
    samples: &PosteriorSamples,
    log: &mut RunLog,
) -> Result<(), CliError> {
    let subjects = data.train.subjects();
    let mut names: Vec<String> = Vec::new();
    names.extend((1..=model.p0()).map(|j| format!("eta0[{j}]")));
    names.extend((1..=model.reparam.null_dim()).map(|j| format!("beta[{j}]")));
    names.extend((1..=model.reparam.pen_dim()).map(|j| format!("delta[{j}]")));
    names.extend(["lambda_x", "lambda_t", "sigma2", "sigma_x2"].map(String::from));
    let mut w = AtomicCsv::create(out, "samples.csv", &["iter", "param", "value"])?;
    for d in 0..samples.len() {
        let it = samples.iterations[d].to_string();
        let values = samples.eta0[d]
            .iter()
            .chain(samples.beta[d].iter())
            .chain(samples.delta[d].iter())
            .chain([
                &samples.lambda_x[d],
                &samples.lambda_t[d],
                &samples.sigma2[d],
                &samples.sigma_x2[d],
            ]);
        for (name, v) in names.iter().zip(values) {
            w.row([it.as_str(), name.as_str(), num(*v).as_str()])?;
        }
    }
    w.finish()?;

    let traj = samples.trajectory_mean(model);
    if let Some(xi) = samples.xi_mean() {
        write_scores(out, "scores.csv", subjects, &xi)?;
    }
    write_trajectories(out, subjects, model.fpca.grid.points(), &traj)?;
    let fitted: Vec<Prediction> = (0..model.n())
        .map(|i| {
            let mut v: Vec<f64> = samples.fitted.iter().map(|f| f[i]).collect();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.sort_by(|a, b| a.total_cmp(b));
            Prediction {
                mean,
                lower: quantile(&v, 0.025),
                upper: quantile(&v, 0.975),
            }
        })
        .collect();
    write_predictions(out, "fitted.csv", subjects, &fitted)?;
    let grid = surface_grid(model, &traj)?;
    write_surface(
        out,
        "surface.csv",
        &grid,
        &samples.surface_summary(model, &grid.xs, &grid.ts),
    )?;
    if !data.targets.is_empty() {
        let p = predict_mcmc(model, samples, &data.targets)?;
        write_predictions(out, "predictions.csv", &data.targets, &p)?;
    }

    let acc = &samples.acceptance;
    log.line("mcmc.draws", samples.len());
    if !acc.is_empty() {
        let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        log.line(
            "mcmc.acceptance.mean",
            format!("{:.4}", samples.mean_acceptance()),
        );
        log.line("mcmc.acceptance.min", format!("{lo:.4}"));
        log.line("mcmc.acceptance.max", format!("{hi:.4}"));
    }
    log.line("mcmc.clamped", samples.clamped);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    log.line("mcmc.mean.lambda_x", num(mean(&samples.lambda_x)));
    log.line("mcmc.mean.lambda_t", num(mean(&samples.lambda_t)));
    log.line("mcmc.mean.sigma2", num(mean(&samples.sigma2)));
    log.line("mcmc.mean.sigma_x2", num(mean(&samples.sigma_x2)));
    Ok(())
}

/// `primary` selects whether the VB fit owns the common artifact names.
fn vb_outputs(
    out: &Path,
    model: &FgamModel,
    data: &LoadedData,
    st: &VbState,
    log: &mut RunLog,
    primary: bool,
) -> Result<(), CliError> {
    let mut w = AtomicCsv::create(out, "bound.csv", &["iter", "bound"])?;
    for (k, b) in st.bound_history.iter().enumerate() {
        w.row([(k + 1).to_string(), num(*b)])?;
    }
    w.finish()?;
    let subjects = data.train.subjects();
    let traj = st.trajectories(model);
    let grid = surface_grid(model, &traj)?;
    let surf = st.surface_summary(model, &grid.xs, &grid.ts);
    if primary {
        write_scores(out, "scores.csv", subjects, &st.xi0)?;
        write_trajectories(out, subjects, model.fpca.grid.points(), &traj)?;
        let fitted = predict_vb_trajectories(model, st, &traj, &model.u)?;
        write_predictions(out, "fitted.csv", subjects, &fitted)?;
        write_surface(out, "surface.csv", &grid, &surf)?;
        if !data.targets.is_empty() {
            let p = predict_vb(model, st, &data.targets)?;
            write_predictions(out, "predictions.csv", &data.targets, &p)?;
        }
    } else {
        write_surface(out, "vb_surface.csv", &grid, &surf)?;
    }
    log.line("vb.iterations", st.iterations);
    log.line("vb.converged", st.converged);
    log.line(
        "vb.bound",
        st.bound_history.last().map_or(String::new(), |b| num(*b)),
    );
    log.line("vb.bound_decreases", st.bound_decreases);
    log.line("vb.largest_relative_decrease", num(st.largest_decrease));
    log.line("vb.regularized_subjects", st.regularized.len());
    log.line("vb.clamped", st.clamped);
    log.line("vb.mean.lambda_x", num(st.lambda_x.mean));
    log.line("vb.mean.lambda_t", num(st.lambda_t.mean));
    log.line("vb.mean.sigma2", num(st.scale_s / (st.shape_s - 1.0)));
    log.line("vb.mean.sigma_x2", num(st.scale_x / (st.shape_x - 1.0)));
    Ok(())
}

fn simulate(a: &Args, s: &Settings, mut log: RunLog) -> Result<(), CliError> {
    let out = a.out.as_path();
    let surface = TrueSurface::parse(&a.surface)?;
    let sc = Scenario {
        seed: a.seed,
        grid_size: a.grid_size,
        ..Scenario::new(surface, a.obs_per_subject, a.sigma_x2)
    };
    sc.validate()?;
    log.line("scenario", sc.label());
    let (data, truth) = generate_dataset(&sc)?;
    let subjects = data.subjects();
    let mut w = AtomicCsv::create(out, "obs.csv", &["subject_id", "t", "value"])?;
    for sub in subjects {
        for (t, v) in sub.times.iter().zip(&sub.values) {
            w.row([sub.id.clone(), num(*t), num(*v)])?;
        }
    }
    w.finish()?;
    let mut w = AtomicCsv::create(out, "resp.csv", &["subject_id", "y"])?;
    for sub in subjects {
        w.row([sub.id.clone(), num(sub.y)])?;
    }
    w.finish()?;
    let mut w = AtomicCsv::create(out, "truth.csv", &["subject_id", "t", "value"])?;
    for (i, sub) in subjects.iter().enumerate() {
        for (g, t) in truth.grid.points().iter().enumerate() {
            w.row([sub.id.clone(), num(*t), num(truth.trajectories[(i, g)])])?;
        }
    }
    w.finish()?;

    if a.replications > 0 {
        let methods = a
            .methods
            .split(',')
            .map(|m| Method::parse(m.trim()))
            .collect::<fgam::Result<Vec<_>>>()?;
        let settings = SimSettings {
            mcmc: s.mcmc,
            warm_mcmc: s.warm,
            vb: s.vb,
            fpca: s.fpca.clone(),
            surface: s.surface,
            hyper: s.hyper,
            ..SimSettings::default()
        };
        let t = Instant::now();
        let report = run_scenario(&sc, &methods, a.replications, &settings)?;
        log.time("simulate", t);
        let metrics = [
            (Metric::RmiseX, "rmise_x"),
            (Metric::RiseF, "rise_f"),
            (Metric::RmseY, "rmse_y"),
        ];
        let mut w = AtomicCsv::create(
            out,
            "metrics.csv",
            &["replication", "seed", "method", "metric", "value"],
        )?;
        for rep in &report.replications {
            for r in &rep.results {
                let vals = [r.rmise_x, Some(r.rise_f), Some(r.rmse_y)];
                for ((_, name), v) in metrics.iter().zip(vals) {
                    if let Some(v) = v {
                        w.row([
                            rep.replication.to_string(),
                            rep.seed.to_string(),
                            r.method.name().to_string(),
                            name.to_string(),
                            num(v),
                        ])?;
                    }
                }
            }
        }
        w.finish()?;
        let mut w = AtomicCsv::create(out, "summary.csv", &["method", "metric", "median", "mean"])?;
        for &m in &methods {
            for (metric, name) in metrics {
                if report.values(m, metric).is_empty() {
                    continue;
                }
                w.row([
                    m.name().to_string(),
                    name.to_string(),
                    num(report.median(m, metric)),
                    num(report.mean(m, metric)),
                ])?;
            }
        }
        w.finish()?;
        log.line("replications", a.replications);
        log.line(
            "methods",
            methods
                .iter()
                .map(|m| m.name())
                .collect::<Vec<_>>()
                .join(","),
        );
    }
    log.finish(out)
}
