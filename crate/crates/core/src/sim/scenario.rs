//! Data generation for the simulation study.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::basis::WorkingGrid;
use crate::data::{SparseFunctionalDataset, Subject};
use crate::error::{FgamError, Result};
use crate::rng::substream;

/// The two true regression surfaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrueSurface {
    /// `2x sin(πt)` on `[0, 1]`.
    F1,
    /// `20 cos(−x/8 + t/4 − 5)` on `[0, 10]`.
    F2,
}

impl TrueSurface {
    pub fn domain(&self) -> (f64, f64) {
        match self {
            TrueSurface::F1 => (0.0, 1.0),
            TrueSurface::F2 => (0.0, 10.0),
        }
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        match self {
            TrueSurface::F1 => 2.0 * x * (PI * t).sin(),
            TrueSurface::F2 => 20.0 * (-x / 8.0 + t / 4.0 - 5.0).cos(),
        }
    }

    /// As `eval`, rejecting `t` outside the domain.
    pub fn eval_checked(&self, x: f64, t: f64) -> Result<f64> {
        let (lo, hi) = self.domain();
        if !(lo..=hi).contains(&t) {
            return Err(FgamError::invalid(format!("t = {t} lies outside [{lo}, {hi}]")));
        }
        Ok(self.eval(x, t))
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrueSurface::F1 => "F1",
            TrueSurface::F2 => "F2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "F1" => Ok(TrueSurface::F1),
            "F2" => Ok(TrueSurface::F2),
            _ => Err(FgamError::invalid(format!("unknown surface '{s}' (expected F1 or F2)"))),
        }
    }
}

/// The four true eigenfunctions, `sin/cos(πt/|T|)` and `sin/cos(2πt/|T|)`.
pub fn true_eigenfunctions(t: f64, lo: f64, hi: f64) -> [f64; 4] {
    let u = (t - lo) / (hi - lo);
    [(PI * u).sin(), (PI * u).cos(), (2.0 * PI * u).sin(), (2.0 * PI * u).cos()]
}

/// Standard deviation of the `j`-th true score (1-based), `sqrt(8 / j²)`.
pub fn score_sd(j: usize) -> f64 {
    (8.0 / (j * j) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub surface: TrueSurface,
    /// Observations per subject.
    pub j: usize,
    /// Measurement-error variance.
    pub sigma_x2: f64,
    /// Response noise variance.
    pub noise_var: f64,
    pub n: usize,
    pub train_fraction: f64,
    pub grid_size: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn new(surface: TrueSurface, j: usize, sigma_x2: f64) -> Self {
        Scenario {
            surface,
            j,
            sigma_x2,
            noise_var: 1.0,
            n: 100,
            train_fraction: 2.0 / 3.0,
            grid_size: 50,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.j == 0 || self.j > self.grid_size {
            return Err(FgamError::invalid(format!(
                "observations per subject must be in 1..={}, got {}",
                self.grid_size, self.j
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(FgamError::invalid("training fraction must lie in (0, 1)"));
        }
        if !(self.sigma_x2 >= 0.0 && self.noise_var >= 0.0) {
            return Err(FgamError::invalid("noise variances must be nonnegative"));
        }
        let nt = self.n_train();
        if nt < 2 || nt >= self.n {
            return Err(FgamError::invalid("split leaves too few training or test subjects"));
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        (self.n as f64 * self.train_fraction).round() as usize
    }

    pub fn grid(&self) -> Result<WorkingGrid> {
        let (lo, hi) = self.surface.domain();
        WorkingGrid::uniform(lo, hi, self.grid_size)
    }

    pub fn label(&self) -> String {
        format!("{}_J{}_sx{}", self.surface.name(), self.j, self.sigma_x2)
    }
}

/// What the generator knows and the fitters do not.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub surface: TrueSurface,
    pub grid: WorkingGrid,
    /// `N × 4`.
    pub scores: DMatrix<f64>,
    /// `N × T` on the generation grid.
    pub trajectories: DMatrix<f64>,
    /// `∫ F(X_i(t), t) dt` before response noise.
    pub signal: DVector<f64>,
}

/// Draws one dataset. Each subject has its own random stream and the
/// standardized noise is drawn in a fixed order, so scenarios that differ
/// only in the noise variances share their underlying random numbers.
pub fn generate_dataset(sc: &Scenario) -> Result<(SparseFunctionalDataset, GroundTruth)> {
    sc.validate()?;
    let grid = sc.grid()?;
    let (lo, hi) = sc.surface.domain();
    let t = grid.len();
    let basis: Vec<[f64; 4]> = grid.points().iter().map(|&s| true_eigenfunctions(s, lo, hi)).collect();
    let mut scores = DMatrix::zeros(sc.n, 4);
    let mut trajectories = DMatrix::zeros(sc.n, t);
    let mut signal = DVector::zeros(sc.n);
    let mut subjects = Vec::with_capacity(sc.n);
    let sx = sc.sigma_x2.sqrt();
    let se = sc.noise_var.sqrt();
    let mut f = vec![0.0; t];
    for i in 0..sc.n {
        let mut rng = substream(sc.seed, 0x5157, i as u64);
        for j in 0..4 {
            scores[(i, j)] = score_sd(j + 1) * rng.sample::<f64, _>(StandardNormal);
        }
        for (g, b) in basis.iter().enumerate() {
            let x: f64 = (0..4).map(|j| scores[(i, j)] * b[j]).sum();
            trajectories[(i, g)] = x;
            f[g] = sc.surface.eval(x, grid.points()[g]);
        }
        signal[i] = grid.integrate(&f);
        let mut idx = sample(&mut rng, t, sc.j).into_vec();
        idx.sort_unstable();
        let times: Vec<f64> = idx.iter().map(|&g| grid.points()[g]).collect();
        let values: Vec<f64> = idx
            .iter()
            .map(|&g| trajectories[(i, g)] + sx * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y = signal[i] + se * rng.sample::<f64, _>(StandardNormal);
        subjects.push(Subject::new(format!("s{i:03}"), times, values, y, Vec::new()));
    }
    let data = SparseFunctionalDataset::new(subjects)?;
    Ok((
        data,
        GroundTruth {
            surface: sc.surface,
            grid,
            scores,
            trajectories,
            signal,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surfaces_at_reference_points() {
        assert!((TrueSurface::F1.eval(1.0, 0.5) - 2.0).abs() < 1e-15);
        assert!((TrueSurface::F2.eval(0.0, 0.0) - 20.0 * (-5.0f64).cos()).abs() < 1e-12);
        assert!(TrueSurface::F2.eval_checked(0.0, 20.0).is_err());
    }

    #[test]
    fn score_variances() {
        assert!((score_sd(1).powi(2) - 8.0).abs() < 1e-12);
        assert!((score_sd(4).powi(2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn observation_counts_and_split() {
        let sc = Scenario::new(TrueSurface::F1, 10, 1.0);
        assert_eq!(sc.n_train(), 67);
        let (d, truth) = generate_dataset(&sc).unwrap();
        assert_eq!(d.len(), 100);
        assert!(d.subjects().iter().all(|s| s.n_obs() == 10));
        assert_eq!(truth.trajectories.ncols(), 50);
        let bad = Scenario { j: 51, ..sc };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noise_levels_share_random_numbers() {
        let a = generate_dataset(&Scenario::new(TrueSurface::F2, 10, 0.0)).unwrap();
        let b = generate_dataset(&Scenario::new(TrueSurface::F2, 10, 4.0)).unwrap();
        assert_eq!(a.1.scores, b.1.scores);
        let (sa, sb) = (&a.0.subjects()[3], &b.0.subjects()[3]);
        assert_eq!(sa.times, sb.times);
        assert_eq!(sa.y, sb.y);
        assert_ne!(sa.values, sb.values);
    }
}
