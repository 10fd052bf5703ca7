//! Simulation study: data generation, competing fits, and metrics.

pub mod flm;
pub mod metrics;
pub mod scenario;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::SparseFunctionalDataset;
use crate::error::{FgamError, Result};
use crate::fpca::{pace_init, FpcaOptions, FpcaResult};
use crate::mcmc::{predict_mcmc, predict_mcmc_trajectories, run_mcmc, McmcConfig, PosteriorSamples};
use crate::model::{FgamModel, Hyperparameters, SurfaceOptions};
use crate::rng::child_seed;
use crate::vb::{predict_vb, run_vb, VbConfig, VbState};

pub use flm::{fit_flm, flm_lambda_grid, FlmFit};
pub use metrics::{convex_hull, in_hull, rise_f, rmise_x, rmse_y, SurfaceGrid};
pub use scenario::{generate_dataset, GroundTruth, Scenario, TrueSurface};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mcmc,
    Vb,
    VbMcmc,
    /// Surface fitted on the initial score predictions held fixed.
    Pace,
    /// Sampler given the true trajectories.
    TrueX,
    /// Functional linear model on the initial score predictions.
    FlmPace,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Mcmc,
        Method::Vb,
        Method::VbMcmc,
        Method::Pace,
        Method::TrueX,
        Method::FlmPace,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Mcmc => "mcmc",
            Method::Vb => "vb",
            Method::VbMcmc => "vb-mcmc",
            Method::Pace => "pace",
            Method::TrueX => "truex",
            Method::FlmPace => "flm-pace",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| FgamError::invalid(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct SimSettings {
    pub mcmc: McmcConfig,
    /// Sampler settings after a variational warm start.
    pub warm_mcmc: McmcConfig,
    pub vb: VbConfig,
    pub fpca: FpcaOptions,
    pub surface: SurfaceOptions,
    pub hyper: Hyperparameters,
    pub eval_grid: usize,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            mcmc: McmcConfig::default(),
            warm_mcmc: McmcConfig {
                iters: 1_500,
                burnin: 500,
                ..McmcConfig::default()
            },
            vb: VbConfig::default(),
            fpca: FpcaOptions::default(),
            surface: SurfaceOptions::default(),
            hyper: Hyperparameters::default(),
            eval_grid: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    /// Training-trajectory error; absent for the true-trajectory fit.
    pub rmise_x: Option<f64>,
    pub rise_f: f64,
    pub rmse_y: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationResult {
    pub replication: usize,
    pub seed: u64,
    pub results: Vec<MethodResult>,
}

impl ReplicationResult {
    pub fn get(&self, m: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    RmiseX,
    RiseF,
    RmseY,
    Seconds,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::RmiseX => "rmise_x",
            Metric::RiseF => "rise_f",
            Metric::RmseY => "rmse_y",
            Metric::Seconds => "seconds",
        }
    }

    fn of(&self, r: &MethodResult) -> Option<f64> {
        match self {
            Metric::RmiseX => r.rmise_x,
            Metric::RiseF => Some(r.rise_f),
            Metric::RmseY => Some(r.rmse_y),
            Metric::Seconds => Some(r.seconds),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub replications: Vec<ReplicationResult>,
}

impl ScenarioReport {
    pub fn values(&self, m: Method, metric: Metric) -> Vec<f64> {
        self.replications
            .iter()
            .filter_map(|r| r.get(m).and_then(|x| metric.of(x)))
            .collect()
    }

    pub fn median(&self, m: Method, metric: Metric) -> f64 {
        median(self.values(m, metric))
    }

    pub fn mean(&self, m: Method, metric: Metric) -> f64 {
        let v = self.values(m, metric);
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Everything a method needs from one generated dataset.
struct Prepared<'a> {
    sc: &'a Scenario,
    settings: &'a SimSettings,
    truth: GroundTruth,
    train: SparseFunctionalDataset,
    test: SparseFunctionalDataset,
    fpca: FpcaResult,
    grid: SurfaceGrid,
    true_surface: DMatrix<f64>,
    pace_train: DMatrix<f64>,
    pace_test: DMatrix<f64>,
    n_train: usize,
}

impl Prepared<'_> {
    fn true_train(&self) -> DMatrix<f64> {
        self.truth.trajectories.rows(0, self.n_train).into_owned()
    }

    fn true_test(&self) -> DMatrix<f64> {
        let n = self.truth.trajectories.nrows();
        self.truth.trajectories.rows(self.n_train, n - self.n_train).into_owned()
    }

    fn y_test(&self) -> DVector<f64> {
        self.test.responses()
    }

    fn model(&self) -> Result<FgamModel> {
        FgamModel::new(&self.train, self.fpca.clone(), self.settings.surface, self.settings.hyper)
    }

    fn fixed_model(&self, trajs: DMatrix<f64>) -> Result<FgamModel> {
        FgamModel::with_trajectories(&self.train, self.fpca.clone(), trajs, self.settings.surface, self.settings.hyper)
    }

    fn rise(&self, est: &DMatrix<f64>) -> Result<f64> {
        rise_f(&self.true_surface, est, &self.grid.mask)
    }

    fn mcmc_result(&self, method: Method, model: &FgamModel, s: &PosteriorSamples, start: Instant) -> Result<MethodResult> {
        let surf = s.surface_summary(model, &self.grid.xs, &self.grid.ts).mean;
        let (rmise, pred) = if model.fixed.is_some() {
            let offsets = DMatrix::zeros(self.test.len(), 0);
            (None, predict_mcmc_trajectories(model, s, &self.true_test(), &offsets)?)
        } else {
            let est = s.trajectory_mean(model);
            (
                Some(rmise_x(&self.true_train(), &est, &self.truth.grid)?),
                predict_mcmc(model, s, self.test.subjects())?,
            )
        };
        let yhat = DVector::from_iterator(pred.len(), pred.iter().map(|p| p.mean));
        Ok(MethodResult {
            method,
            rmise_x: rmise,
            rise_f: self.rise(&surf)?,
            rmse_y: rmse_y(&self.y_test(), &yhat)?,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn vb_result(&self, method: Method, model: &FgamModel, st: &VbState, start: Instant) -> Result<MethodResult> {
        let surf = st.surface_summary(model, &self.grid.xs, &self.grid.ts).mean;
        let est = st.trajectories(model);
        let pred = predict_vb(model, st, self.test.subjects())?;
        let yhat = DVector::from_iterator(pred.len(), pred.iter().map(|p| p.mean));
        Ok(MethodResult {
            method,
            rmise_x: Some(rmise_x(&self.true_train(), &est, &self.truth.grid)?),
            rise_f: self.rise(&surf)?,
            rmse_y: rmse_y(&self.y_test(), &yhat)?,
            seconds: start.elapsed().as_secs_f64(),
        })
    }
}

fn blup_trajectories(fpca: &FpcaResult, data: &SparseFunctionalDataset) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(data.len(), fpca.grid.len());
    for (i, s) in data.subjects().iter().enumerate() {
        let xi = fpca.blup(s)?;
        out.set_row(i, &fpca.trajectory(xi.as_slice()).transpose());
    }
    Ok(out)
}

fn prepare<'a>(sc: &'a Scenario, settings: &'a SimSettings) -> Result<Prepared<'a>> {
    let (data, truth) = generate_dataset(sc)?;
    let n_train = sc.n_train();
    let train = data.select(&(0..n_train).collect::<Vec<_>>())?;
    let test = data.select(&(n_train..data.len()).collect::<Vec<_>>())?;
    let fpca_opts = FpcaOptions {
        grid_size: sc.grid_size,
        domain: Some(sc.surface.domain()),
        ..settings.fpca.clone()
    };
    let fpca = pace_init(&train, &fpca_opts)?;
    let true_train = truth.trajectories.rows(0, n_train).into_owned();
    let pts = SurfaceGrid::trajectory_points(&true_train, &truth.grid);
    let grid = SurfaceGrid::from_points(&pts, settings.eval_grid)?;
    let true_surface = grid.evaluate(|x, t| sc.surface.eval(x, t));
    let pace_train = blup_trajectories(&fpca, &train)?;
    let pace_test = blup_trajectories(&fpca, &test)?;
    Ok(Prepared {
        sc,
        settings,
        truth,
        train,
        test,
        fpca,
        grid,
        true_surface,
        pace_train,
        pace_test,
        n_train,
    })
}

/// Generates the dataset for `sc` and fits every requested method.
pub fn run_replication(sc: &Scenario, methods: &[Method], settings: &SimSettings) -> Result<Vec<MethodResult>> {
    let prep = prepare(sc, settings)?;
    let seeded = |c: &McmcConfig| McmcConfig {
        seed: child_seed(prep.sc.seed, 7),
        ..*c
    };
    let mut out = Vec::with_capacity(methods.len());
    let mut vb_cache: Option<(FgamModel, VbState, f64)> = None;
    for &m in methods {
        let start = Instant::now();
        let r = match m {
            Method::Mcmc => {
                let model = prep.model()?;
                let s = run_mcmc(&model, &seeded(&settings.mcmc), None)?;
                prep.mcmc_result(m, &model, &s, start)?
            }
            Method::Vb | Method::VbMcmc => {
                if vb_cache.is_none() {
                    let t0 = Instant::now();
                    let model = prep.model()?;
                    let st = run_vb(&model, &settings.vb, None)?;
                    vb_cache = Some((model, st, t0.elapsed().as_secs_f64()));
                }
                let (model, st, vb_secs) = vb_cache.as_ref().expect("cached above");
                if m == Method::Vb {
                    let mut r = prep.vb_result(m, model, st, start)?;
                    r.seconds = *vb_secs;
                    r
                } else {
                    let s = run_mcmc(model, &seeded(&settings.warm_mcmc), Some(st.to_mcmc_state(model)))?;
                    let mut r = prep.mcmc_result(m, model, &s, start)?;
                    r.seconds += vb_secs;
                    r
                }
            }
            Method::Pace => {
                let model = prep.fixed_model(prep.pace_train.clone())?;
                let st = run_vb(&model, &settings.vb, None)?;
                let mut r = prep.vb_result(m, &model, &st, start)?;
                r.rmise_x = Some(rmise_x(&prep.true_train(), &prep.pace_train, &prep.truth.grid)?);
                r
            }
            Method::TrueX => {
                let model = prep.fixed_model(prep.true_train())?;
                let s = run_mcmc(&model, &seeded(&settings.mcmc), None)?;
                prep.mcmc_result(m, &model, &s, start)?
            }
            Method::FlmPace => {
                let fit = fit_flm(
                    &prep.pace_train,
                    &prep.train.responses(),
                    &prep.truth.grid,
                    settings.surface.kt,
                    settings.surface.dt,
                    &flm_lambda_grid(),
                )?;
                let surf = fit.surface(&prep.grid.xs, &prep.grid.ts)?;
                let yhat = fit.predict(&prep.pace_test)?;
                MethodResult {
                    method: m,
                    rmise_x: Some(rmise_x(&prep.true_train(), &prep.pace_train, &prep.truth.grid)?),
                    rise_f: prep.rise(&surf)?,
                    rmse_y: rmse_y(&prep.y_test(), &yhat)?,
                    seconds: start.elapsed().as_secs_f64(),
                }
            }
        };
        out.push(r);
    }
    Ok(out)
}

/// Runs `replications` seeded copies of `sc`; replication `r` uses the
/// seed `child_seed(sc.seed, r)`.
pub fn run_scenario(
    sc: &Scenario,
    methods: &[Method],
    replications: usize,
    settings: &SimSettings,
) -> Result<ScenarioReport> {
    sc.validate()?;
    let reps: Vec<Result<ReplicationResult>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let seed = child_seed(sc.seed, r as u64);
            let sc_r = Scenario { seed, ..*sc };
            let results = run_replication(&sc_r, methods, settings)?;
            Ok(ReplicationResult {
                replication: r,
                seed,
                results,
            })
        })
        .collect();
    Ok(ScenarioReport {
        scenario: *sc,
        replications: reps.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("bogus").is_err());
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
