//! End-to-end experiments driven by a JSON config.
//!
//! Every runner takes the validated config plus the loaded (or generated)
//! inputs and returns typed results; [`execute`] additionally writes the
//! result files into the output directory.

pub mod output;
pub mod synthetic;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibration::{self, CalibrationError, CalibrationResult, ParamGrid};
use crate::country_data::{
    build_normalization, load_countries, load_observations, CountryRecord, DataError, MonotonePolicy,
    ObservationSeries,
};
use crate::filter::{run_filter, FilterConfig, FilterError, FilterRunResult};
use crate::metrics::{self, EnsembleSummary, MetricsError};
use crate::model::{Model, ModelError, ModelParams};
use crate::seed::{derive_seed, label};
use synthetic::{generate_synthetic, SyntheticError, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BaseRun,
    PfVsEnsemble,
    ParticleCountSweep,
    DaWindowSweep,
    Calibrate,
    GenerateSynthetic,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        Self::BaseRun,
        Self::PfVsEnsemble,
        Self::ParticleCountSweep,
        Self::DaWindowSweep,
        Self::Calibrate,
        Self::GenerateSynthetic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BaseRun => "base_run",
            Self::PfVsEnsemble => "pf_vs_ensemble",
            Self::ParticleCountSweep => "particle_count_sweep",
            Self::DaWindowSweep => "da_window_sweep",
            Self::Calibrate => "calibrate",
            Self::GenerateSynthetic => "generate_synthetic",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.as_str()).collect();
                format!("unknown experiment `{s}`; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Countries CSV. Together with `observations`; when both are absent a
    /// synthetic world is generated instead.
    pub countries: Option<PathBuf>,
    pub observations: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            countries: None,
            observations: None,
            output_dir: PathBuf::from("results"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: ModelParams,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    #[serde(default = "default_horizon")]
    pub horizon_days: usize,
    #[serde(default = "default_master_seed")]
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub paths: Paths,
    /// Replace countries that leave lockdown by their running maximum instead
    /// of rejecting the file.
    #[serde(default)]
    pub clamp_exits: bool,
    /// Particle counts of the particle sweep.
    #[serde(default)]
    pub particle_counts: Option<Vec<usize>>,
    /// Windows of the window sweep; `null` is the unfiltered ensemble.
    #[serde(default)]
    pub windows: Option<Vec<Option<usize>>>,
    #[serde(default)]
    pub grid: Option<ParamGrid>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    /// Seed of the synthetic world. Derived from `master_seed` when absent.
    #[serde(default)]
    pub synthetic_seed: Option<u64>,
}

fn default_ensemble_size() -> usize {
    100
}
fn default_horizon() -> usize {
    31
}
fn default_master_seed() -> u64 {
    1
}
fn default_trials() -> usize {
    20
}

pub const DEFAULT_PARTICLE_COUNTS: [usize; 7] = [64, 128, 256, 512, 1024, 2048, 4096];
pub const DEFAULT_WINDOWS: [Option<usize>; 6] = [None, Some(15), Some(10), Some(5), Some(2), Some(1)];
/// Counts above this get a single trial in the particle sweep.
pub const REPEATED_COUNT_LIMIT: usize = 512;

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            model: ModelParams::default(),
            filter: FilterConfig::default(),
            ensemble_size: default_ensemble_size(),
            horizon_days: default_horizon(),
            master_seed: default_master_seed(),
            trials: default_trials(),
            paths: Paths::default(),
            clamp_exits: false,
            particle_counts: None,
            windows: None,
            grid: None,
            synthetic: None,
            synthetic_seed: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        let config: Self = serde_json::from_str(text).map_err(ExperimentError::Parse)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |msg: &str| Err(ExperimentError::Invalid(msg.to_string()));
        self.model.validate()?;
        self.filter.validate()?;
        if self.ensemble_size < 2 {
            return invalid("ensemble_size must be at least 2");
        }
        if self.horizon_days == 0 {
            return invalid("horizon_days must be at least 1");
        }
        if self.trials == 0 {
            return invalid("trials must be at least 1");
        }
        if let Some(counts) = &self.particle_counts {
            if counts.is_empty() || counts.contains(&0) {
                return invalid("particle_counts must be non-empty and positive");
            }
        }
        if let Some(windows) = &self.windows {
            if windows.is_empty() || windows.contains(&Some(0)) {
                return invalid("windows must be non-empty and positive");
            }
        }
        if let Some(grid) = &self.grid {
            if grid.is_empty() {
                return invalid("grid must have at least one value on every axis");
            }
        }
        if self.paths.countries.is_some() != self.paths.observations.is_some() {
            return invalid("paths.countries and paths.observations go together");
        }
        if self.experiment == ExperimentKind::GenerateSynthetic && self.paths.countries.is_some() {
            return invalid("generate_synthetic takes no input files");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of this config with the output
    /// directory cleared, as lowercase hex.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.paths.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn particle_counts(&self) -> Vec<usize> {
        self.particle_counts
            .clone()
            .unwrap_or_else(|| DEFAULT_PARTICLE_COUNTS.to_vec())
    }

    pub fn windows(&self) -> Vec<Option<usize>> {
        self.windows.clone().unwrap_or_else(|| DEFAULT_WINDOWS.to_vec())
    }

    pub fn grid(&self) -> ParamGrid {
        self.grid.clone().unwrap_or_default()
    }

    pub fn synthetic_seed(&self) -> u64 {
        self.synthetic_seed
            .unwrap_or_else(|| derive_seed(self.master_seed, &[label::SYNTHETIC]))
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot parse config: {0}")]
    Parse(serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Synthetic(#[from] SyntheticError),
    #[error("result file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
}

impl ExperimentError {
    /// Process exit code: 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        let io = match self {
            Self::Io { .. } => true,
            Self::Data(DataError::Io { .. }) => true,
            Self::Data(DataError::Csv(e)) => e.is_io_error(),
            Self::Calibration(CalibrationError::Data(DataError::Io { .. })) => true,
            Self::Synthetic(SyntheticError::Data(DataError::Io { .. })) => true,
            _ => false,
        };
        if io {
            2
        } else {
            1
        }
    }
}

/// Country attributes and observations an experiment runs against.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub countries: Vec<CountryRecord>,
    pub observations: ObservationSeries,
    /// Seed of the generated world, if the inputs are synthetic.
    pub synthetic_seed: Option<u64>,
}

impl Inputs {
    pub fn model(&self, params: ModelParams) -> Result<Model, ExperimentError> {
        let norm = build_normalization(&self.countries)?;
        Ok(Model::new(&self.countries, &norm, params)?)
    }
}

/// Loads the configured files, or generates a synthetic world when no paths
/// are given.
pub fn load_inputs(config: &ExperimentConfig) -> Result<Inputs, ExperimentError> {
    match (&config.paths.countries, &config.paths.observations) {
        (Some(c), Some(o)) => {
            let countries = load_countries(c)?;
            let policy = if config.clamp_exits {
                MonotonePolicy::Clamp
            } else {
                MonotonePolicy::Reject
            };
            let observations = load_observations(o, &countries, policy)?;
            Ok(Inputs {
                countries,
                observations,
                synthetic_seed: None,
            })
        }
        (None, None) => {
            let spec = config.synthetic.clone().unwrap_or_default();
            let seed = config.synthetic_seed();
            let world = generate_synthetic(&spec, &config.model, config.horizon_days, seed)?;
            Ok(Inputs {
                countries: world.countries,
                observations: world.observations,
                synthetic_seed: Some(seed),
            })
        }
        _ => Err(ExperimentError::Invalid(
            "paths.countries and paths.observations go together".into(),
        )),
    }
}

fn plain_ensemble(size: usize, horizon: usize) -> FilterConfig {
    FilterConfig {
        n_particles: size,
        da_window: horizon + 1,
        ..FilterConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseRunResult {
    pub run: FilterRunResult,
    pub summary: EnsembleSummary,
    /// `None` when either curve is constant.
    pub rho: Option<f64>,
    pub max_abs_deviation: f64,
    /// Share of days whose observed fraction lies inside the 95% band.
    pub inside_ci95: f64,
}

fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    metrics::pearson_correlation(a, b).ok()
}

/// Unfiltered ensemble of `ensemble_size` runs from the observed day-0 state.
pub fn run_base(config: &ExperimentConfig, inputs: &Inputs) -> Result<BaseRunResult, ExperimentError> {
    let model = inputs.model(config.model)?;
    let seed = derive_seed(config.master_seed, &[label::BASE_RUN]);
    let run = run_filter(
        &plain_ensemble(config.ensemble_size, config.horizon_days),
        &model,
        &inputs.observations,
        config.horizon_days,
        seed,
    )?;
    let summary = run.summary()?;
    let mean = &summary.per_day_mean_fraction;
    let rho = correlation(mean, &run.observed);
    let max_abs_deviation = mean
        .iter()
        .zip(&run.observed)
        .map(|(m, o)| (m - o).abs())
        .fold(0.0, f64::max);
    let inside = summary
        .per_day_ci95
        .iter()
        .zip(&run.observed)
        .filter(|((lo, hi), o)| lo <= *o && *o <= hi)
        .count();
    let inside_ci95 = inside as f64 / run.observed.len() as f64;
    Ok(BaseRunResult {
        run,
        summary,
        rho,
        max_abs_deviation,
        inside_ci95,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PfComparison {
    pub no_filter: FilterRunResult,
    pub filter: FilterRunResult,
    /// Per-day `mse_pf / mse_nopf`; `None` where the unfiltered error is zero.
    pub ratio: Vec<Option<f64>>,
    /// `1 − summed_pf / summed_nopf`.
    pub summed_reduction: f64,
    /// Day with the largest relative reduction, if any day has a ratio.
    pub best_day: Option<usize>,
    pub best_day_reduction: Option<f64>,
}

/// Runs the unfiltered ensemble and the filter with the same population size
/// from independent seed families.
pub fn run_pf_comparison(config: &ExperimentConfig, inputs: &Inputs) -> Result<PfComparison, ExperimentError> {
    let model = inputs.model(config.model)?;
    let h = config.horizon_days;
    let n = config.filter.n_particles;
    let seed_of = |arm| derive_seed(config.master_seed, &[label::PF_VS_ENSEMBLE, arm]);
    let no_filter = run_filter(
        &plain_ensemble(n, h),
        &model,
        &inputs.observations,
        h,
        seed_of(label::ARM_NO_FILTER),
    )?;
    let filter = run_filter(&config.filter, &model, &inputs.observations, h, seed_of(label::ARM_FILTER))?;
    Ok(compare(no_filter, filter))
}

/// Builds the paired comparison of two runs over the same horizon.
pub fn compare(no_filter: FilterRunResult, filter: FilterRunResult) -> PfComparison {
    let ratio: Vec<Option<f64>> = no_filter
        .mse
        .iter()
        .zip(&filter.mse)
        .map(|(&a, &b)| (a > 0.0).then(|| b / a))
        .collect();
    let best = ratio
        .iter()
        .enumerate()
        .filter_map(|(d, r)| r.map(|r| (d, 1.0 - r)))
        .fold(None, |acc: Option<(usize, f64)>, (d, red)| match acc {
            Some((_, best)) if best >= red => acc,
            _ => Some((d, red)),
        });
    let summed_reduction = 1.0 - filter.summed_mse / no_filter.summed_mse;
    PfComparison {
        no_filter,
        filter,
        ratio,
        summed_reduction,
        best_day: best.map(|b| b.0),
        best_day_reduction: best.map(|b| b.1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSweepRow {
    pub n_particles: usize,
    pub trial: usize,
    pub summed_mse_nopf: f64,
    pub summed_mse_pf: f64,
    pub seed_nopf: u64,
    pub seed_pf: u64,
}

/// Seeds of one particle-sweep trial: `(no filter, filter)`.
pub fn particle_sweep_seeds(master_seed: u64, cell: usize, trial: usize) -> (u64, u64) {
    let path = |arm| [label::PARTICLE_SWEEP, cell as u64, trial as u64, arm];
    (
        derive_seed(master_seed, &path(label::ARM_NO_FILTER)),
        derive_seed(master_seed, &path(label::ARM_FILTER)),
    )
}

/// For each particle count, paired filtered and unfiltered runs of that
/// size; counts up to 512 get `trials` repetitions, larger ones one.
pub fn run_particle_sweep(
    config: &ExperimentConfig,
    inputs: &Inputs,
) -> Result<Vec<ParticleSweepRow>, ExperimentError> {
    let model = inputs.model(config.model)?;
    let h = config.horizon_days;
    let mut rows = Vec::new();
    for (cell, n) in config.particle_counts().into_iter().enumerate() {
        let trials = if n <= REPEATED_COUNT_LIMIT { config.trials } else { 1 };
        for trial in 0..trials {
            let (seed_nopf, seed_pf) = particle_sweep_seeds(config.master_seed, cell, trial);
            let nopf = run_filter(&plain_ensemble(n, h), &model, &inputs.observations, h, seed_nopf)?;
            let pf_config = FilterConfig {
                n_particles: n,
                ..config.filter
            };
            let pf = run_filter(&pf_config, &model, &inputs.observations, h, seed_pf)?;
            rows.push(ParticleSweepRow {
                n_particles: n,
                trial,
                summed_mse_nopf: nopf.summed_mse,
                summed_mse_pf: pf.summed_mse,
                seed_nopf,
                seed_pf,
            });
        }
    }
    Ok(rows)
}

/// Per-count aggregate of a particle sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleCountStats {
    pub n_particles: usize,
    pub trials: usize,
    /// Trials where the filter has the lower summed MSE.
    pub wins: usize,
    pub mean_summed_mse_nopf: f64,
    pub mean_summed_mse_pf: f64,
    /// `1 − mean_pf / mean_nopf`.
    pub reduction: f64,
}

pub fn particle_count_stats(rows: &[ParticleSweepRow]) -> Vec<ParticleCountStats> {
    let mut counts: Vec<usize> = Vec::new();
    for r in rows {
        if !counts.contains(&r.n_particles) {
            counts.push(r.n_particles);
        }
    }
    counts
        .into_iter()
        .map(|n| {
            let cell: Vec<&ParticleSweepRow> = rows.iter().filter(|r| r.n_particles == n).collect();
            let nopf: Vec<f64> = cell.iter().map(|r| r.summed_mse_nopf).collect();
            let pf: Vec<f64> = cell.iter().map(|r| r.summed_mse_pf).collect();
            let (a, b) = (metrics::mean(&nopf), metrics::mean(&pf));
            ParticleCountStats {
                n_particles: n,
                trials: cell.len(),
                wins: cell.iter().filter(|r| r.summed_mse_pf < r.summed_mse_nopf).count(),
                mean_summed_mse_nopf: a,
                mean_summed_mse_pf: b,
                reduction: 1.0 - b / a,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSweepRow {
    /// `None` for the unfiltered ensemble.
    pub window: Option<usize>,
    pub assimilations: usize,
    pub summed_mse: f64,
    /// Mean over days `1..=horizon` of the population-mean micro accuracy.
    pub mean_micro_accuracy: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSweep {
    pub rows: Vec<WindowSweepRow>,
    /// Least-squares slope of summed MSE against the number of assimilations.
    pub slope: Option<f64>,
}

/// Runs the filter with `filter.n_particles` particles once per window.
pub fn run_window_sweep(config: &ExperimentConfig, inputs: &Inputs) -> Result<WindowSweep, ExperimentError> {
    let model = inputs.model(config.model)?;
    let h = config.horizon_days;
    let mut rows = Vec::new();
    for (cell, window) in config.windows().into_iter().enumerate() {
        let filter = FilterConfig {
            da_window: window.unwrap_or(h + 1),
            ..config.filter
        };
        let seed = derive_seed(config.master_seed, &[label::WINDOW_SWEEP, cell as u64]);
        let run = run_filter(&filter, &model, &inputs.observations, h, seed)?;
        let micro = run.mean_micro_accuracy();
        rows.push(WindowSweepRow {
            window,
            assimilations: run.assimilations.len(),
            summed_mse: run.summed_mse,
            mean_micro_accuracy: metrics::mean(&micro[1..]),
            seed,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.assimilations as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.summed_mse).collect();
    let slope = metrics::ols_slope(&x, &y).ok();
    Ok(WindowSweep { rows, slope })
}

/// Grid search over the configured (or default) grid with `ensemble_size`
/// runs per cell.
pub fn run_calibration(config: &ExperimentConfig, inputs: &Inputs) -> Result<CalibrationResult, ExperimentError> {
    Ok(calibration::grid_search(
        &config.grid(),
        &config.model,
        config.ensemble_size,
        &inputs.countries,
        &inputs.observations,
        config.horizon_days,
        config.master_seed,
    )?)
}

/// Runs the configured experiment and writes its result files. Returns the
/// paths written.
pub fn execute(config: &ExperimentConfig) -> Result<Vec<PathBuf>, ExperimentError> {
    config.validate()?;
    let inputs = load_inputs(config)?;
    let out = output::OutputDir::create(config)?;
    match config.experiment {
        ExperimentKind::BaseRun => out.write_base(&run_base(config, &inputs)?),
        ExperimentKind::PfVsEnsemble => out.write_pf_comparison(&run_pf_comparison(config, &inputs)?),
        ExperimentKind::ParticleCountSweep => out.write_particle_sweep(&run_particle_sweep(config, &inputs)?),
        ExperimentKind::DaWindowSweep => out.write_window_sweep(&run_window_sweep(config, &inputs)?),
        ExperimentKind::Calibrate => out.write_calibration(&run_calibration(config, &inputs)?),
        ExperimentKind::GenerateSynthetic => out.write_synthetic(&inputs, config.horizon_days),
    }
}
