//! Signal and vacuum ensemble runs and their detection analysis.

use rayon::prelude::*;
use thiserror::Error;

use crate::detection::{build_filter, Convolver, CrossingProfile, DetectionError, MatchedFilter};
use crate::integrator::{
    derive_seed, run_ensemble, solve_master, IntegrationError, MasterSolution, SolverChoice,
    SolverOptions, TimeGrid, TrajectoryFailure, TrajectoryRecord, STABILITY_LIMIT,
};
use crate::metrics::{EnsembleProfiles, MetricsError, MetricsSummary, VacuumStatistics};
use crate::model::{build, initial_state, DetectorConfig, ModelError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{failed} of {total} trajectories failed; first: {first}")]
    TrajectoriesFailed {
        failed: usize,
        total: usize,
        first: String,
    },
}

/// Filter energy left outside the part of a vacuum record treated as stationary.
pub const FILL_TAIL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub grid: TimeGrid,
    pub n_traj: usize,
    pub base_seed: u64,
    pub solver: SolverChoice,
    pub workers: Option<usize>,
    pub noise_oversampling: usize,
}

impl RunSettings {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            record_traces: false,
            noise_oversampling: self.noise_oversampling,
        }
    }
}

/// Base seed of the vacuum ensemble, distinct from the signal ensemble's streams.
pub fn vacuum_base_seed(base_seed: u64) -> u64 {
    derive_seed(base_seed ^ 0xD1B5_4A32_D192_ED03, u64::MAX)
}

/// Grid for the unconditional run: same record times as `grid`, with the largest step
/// dividing the record spacing that satisfies the stability guard.
pub fn master_grid(grid: &TimeGrid, max_rate: f64) -> TimeGrid {
    let record_dt = grid.record_dt();
    let mut m = 1usize;
    while max_rate * record_dt / m as f64 > STABILITY_LIMIT {
        m += 1;
    }
    TimeGrid {
        t_end: grid.t_end,
        dt: record_dt / m as f64,
        record_stride: m,
    }
}

/// Unconditional evolution from the signal state, sampled at the record times of `grid`.
pub fn master_traces(cfg: &DetectorConfig, grid: &TimeGrid) -> Result<MasterSolution, ExperimentError> {
    let cfg = cfg.clone().with_photon(true);
    let model = build(&cfg)?;
    let psi = initial_state(&cfg, &model.space)?;
    Ok(solve_master(&model, &psi, &master_grid(grid, model.max_rate))?)
}

#[derive(Debug, Clone)]
pub struct EnsembleRun {
    pub records: Vec<TrajectoryRecord>,
    pub failures: Vec<TrajectoryFailure>,
}

impl EnsembleRun {
    pub fn require_complete(&self) -> Result<(), ExperimentError> {
        match self.failures.first() {
            None => Ok(()),
            Some(f) => Err(ExperimentError::TrajectoriesFailed {
                failed: self.failures.len(),
                total: self.failures.len() + self.records.len(),
                first: format!("trajectory {} (seed {}): {}", f.index, f.seed, f.error),
            }),
        }
    }

    /// Trajectories whose final top-level population breaches the truncation limit.
    pub fn truncation_breaches(&self, limit: f64) -> usize {
        self.records.iter().filter(|r| r.top_level_pop >= limit).count()
    }
}

/// One ensemble, with or without the signal photon.
pub fn run_trajectories(
    cfg: &DetectorConfig,
    settings: &RunSettings,
    with_photon: bool,
) -> Result<EnsembleRun, ExperimentError> {
    let cfg = cfg.clone().with_photon(with_photon);
    let model = build(&cfg)?;
    let psi = initial_state(&cfg, &model.space)?;
    let base = if with_photon {
        settings.base_seed
    } else {
        vacuum_base_seed(settings.base_seed)
    };
    let out = run_ensemble(
        &model,
        &psi,
        &settings.grid,
        settings.n_traj,
        base,
        settings.solver,
        settings.options(),
        settings.workers,
    )?;
    let mut run = EnsembleRun {
        records: Vec::with_capacity(out.len()),
        failures: Vec::new(),
    };
    for r in out {
        match r {
            Ok(rec) => run.records.push(rec),
            Err(f) => run.failures.push(f),
        }
    }
    Ok(run)
}

/// Filtered signal and vacuum ensembles, reduced to crossing profiles.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub filter: MatchedFilter,
    pub signal: Vec<CrossingProfile>,
    pub vacuum: Vec<CrossingProfile>,
    pub vacuum_stats: Option<VacuumStatistics>,
    pub record_length: f64,
    pub dt: f64,
}

impl Analysis {
    pub fn new(
        filter: MatchedFilter,
        signal: &[Vec<f64>],
        vacuum: &[Vec<f64>],
        dt: f64,
    ) -> Result<Self, ExperimentError> {
        let len = signal
            .first()
            .or(vacuum.first())
            .map_or(0, Vec::len);
        let conv = Convolver::new(&filter, len, dt)?;
        let profile = |j: &Vec<f64>| -> Result<(CrossingProfile, Vec<f64>), DetectionError> {
            let jbar = conv.apply(j)?;
            Ok((CrossingProfile::new(&jbar, dt), jbar))
        };
        let signal: Vec<CrossingProfile> = signal
            .par_iter()
            .map(|j| profile(j).map(|p| p.0))
            .collect::<Result<_, _>>()?;
        let start = (filter.fill_time(FILL_TAIL) / dt).round() as usize;
        let filtered: Vec<(CrossingProfile, Vec<f64>)> =
            vacuum.par_iter().map(profile).collect::<Result<_, _>>()?;
        let vacuum_stats =
            VacuumStatistics::from_filtered(filtered.iter().map(|(_, j)| j.as_slice()), dt, start).ok();
        Ok(Self {
            filter,
            signal,
            vacuum: filtered.into_iter().map(|(p, _)| p).collect(),
            vacuum_stats,
            record_length: len as f64 * dt,
            dt,
        })
    }

    pub fn profiles(&self) -> EnsembleProfiles<'_> {
        EnsembleProfiles {
            signal: &self.signal,
            vacuum: &self.vacuum,
            vacuum_stats: self.vacuum_stats.as_ref(),
            record_length: self.record_length,
        }
    }

    /// Window grid with the record spacing as step.
    pub fn windows(&self) -> Vec<f64> {
        crate::metrics::window_grid(self.dt, self.record_length)
    }
}

/// Unconditional run, both ensembles and their analysis.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub master: MasterSolution,
    pub signal: EnsembleRun,
    pub vacuum: EnsembleRun,
    pub analysis: Analysis,
}

pub fn currents(run: &EnsembleRun) -> Vec<Vec<f64>> {
    run.records.iter().map(|r| r.current.clone()).collect()
}

pub fn run_experiment(cfg: &DetectorConfig, settings: &RunSettings) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let master = master_traces(cfg, &settings.grid)?;
    let filter = build_filter(&master.traces)?;
    let signal = run_trajectories(cfg, settings, true)?;
    signal.require_complete()?;
    let vacuum = run_trajectories(cfg, settings, false)?;
    vacuum.require_complete()?;
    let analysis = Analysis::new(filter, &currents(&signal), &currents(&vacuum), settings.grid.record_dt())?;
    Ok(ExperimentOutput {
        master,
        signal,
        vacuum,
        analysis,
    })
}

/// Fidelity-optimal metrics over a threshold grid.
pub fn best_metrics(analysis: &Analysis, thresholds: &[f64]) -> Result<MetricsSummary, ExperimentError> {
    Ok(analysis.profiles().best_threshold(thresholds, &analysis.windows())?)
}

/// Evenly spaced thresholds `lo, lo+step, …, hi`.
pub fn threshold_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| crate::metrics::round_significant(lo + k as f64 * step)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn master_grid_shares_record_times() {
        let g = TimeGrid::with_stride(10.0, 0.005, 10).unwrap();
        let m = master_grid(&g, 1.0);
        assert_eq!(m.record_times().len(), g.record_times().len());
        assert!((m.record_dt() - g.record_dt()).abs() < 1e-15);
        assert!(m.check_stability(1.0).is_ok());
    }

    #[test]
    fn vacuum_seeds_differ_from_signal_seeds() {
        assert_ne!(vacuum_base_seed(5), 5);
        assert_eq!(vacuum_base_seed(5), vacuum_base_seed(5));
    }

    #[test]
    fn threshold_grid_is_inclusive() {
        let g = threshold_grid(1.0, 2.0, 0.25);
        assert_eq!(g, vec![1.0, 1.25, 1.5, 1.75, 2.0]);
    }
}
