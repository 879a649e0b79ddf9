//! Exhaustive grid search over the global parameters `(B, S, p)`.
//!
//! Each grid cell runs a plain ensemble from the observed day-0 state and is
//! scored by the summed squared error of the ensemble-mean curve. The Pearson
//! correlation with the observed curve is reported alongside.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::country_data::{build_normalization, CountryRecord, DataError, ObservationSeries};
use crate::filter::{run_filter, FilterConfig, FilterError, Weighting};
use crate::metrics::{self, MetricsError};
use crate::model::{DistanceMatrix, ModelError, ModelParams, Model};
use crate::seed::{self, label};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("calibration grid is empty")]
    EmptyGrid,
    #[error("ensemble size {0} is too small; at least 2 runs are needed")]
    EnsembleTooSmall(usize),
    #[error("observed curve is constant over the horizon; nothing to fit")]
    Degenerate,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("score table: {0}")]
    Table(#[from] csv::Error),
    #[error("score table row {row}: {reason}")]
    TableRow { row: usize, reason: String },
}

/// Axis values of the search grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    /// Values of the own-initiative base `B`.
    pub asocial: Vec<f64>,
    /// Values of the social base `S`.
    pub social: Vec<f64>,
    /// Values of the peer-group size `p`.
    pub peer_group: Vec<usize>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        Self {
            asocial: vec![0.002, 0.005, 0.01, 0.02, 0.05],
            social: vec![0.05, 0.09, 0.13, 0.17, 0.21, 0.25],
            peer_group: vec![6, 12, 18, 24, 30],
        }
    }
}

impl ParamGrid {
    pub fn singleton(params: &ModelParams) -> Self {
        Self {
            asocial: vec![params.asocial_threshold_global],
            social: vec![params.social_threshold_global],
            peer_group: vec![params.peer_group_size],
        }
    }

    pub fn len(&self) -> usize {
        self.asocial.len() * self.social.len() * self.peer_group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in lexicographic `(B, S, p)` order of axis position.
    pub fn cells(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::with_capacity(self.len());
        for &b in &self.asocial {
            for &s in &self.social {
                for &p in &self.peer_group {
                    out.push((b, s, p));
                }
            }
        }
        out
    }

    /// The grid point nearest to `params` on every axis.
    pub fn nearest_cell(&self, params: &ModelParams) -> Option<(f64, f64, usize)> {
        let nearest = |axis: &[f64], x: f64| {
            axis.iter()
                .copied()
                .min_by(|a, b| (a - x).abs().total_cmp(&(b - x).abs()).then(a.total_cmp(b)))
        };
        let b = nearest(&self.asocial, params.asocial_threshold_global)?;
        let s = nearest(&self.social, params.social_threshold_global)?;
        let p = self
            .peer_group
            .iter()
            .copied()
            .min_by_key(|&p| (p.abs_diff(params.peer_group_size), p))?;
        Some((b, s, p))
    }
}

/// One row of the score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridScore {
    #[serde(rename = "B")]
    pub asocial: f64,
    #[serde(rename = "S")]
    pub social: f64,
    pub p: usize,
    pub summed_mse: f64,
    /// `None` when the ensemble-mean curve is constant.
    pub pearson_rho: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub best: ModelParams,
    pub best_index: usize,
    pub table: Vec<GridScore>,
}

impl CalibrationResult {
    pub fn best_score(&self) -> &GridScore {
        &self.table[self.best_index]
    }
}

/// Seed of grid cell `index` under `master_seed`.
pub fn cell_seed(master_seed: u64, index: usize) -> u64 {
    seed::derive_seed(master_seed, &[label::CALIBRATE, index as u64])
}

/// Scores a single parameter set with an ensemble of `ensemble_size` runs.
pub fn score_cell(
    distances: &Arc<DistanceMatrix>,
    countries: &[CountryRecord],
    observations: &ObservationSeries,
    params: ModelParams,
    ensemble_size: usize,
    horizon: usize,
    seed_value: u64,
) -> Result<GridScore, CalibrationError> {
    let model = Model::with_distances(Arc::clone(distances), countries, params)?;
    let config = FilterConfig {
        n_particles: ensemble_size,
        da_window: horizon + 1,
        weighting: Weighting::AccuracySquared,
    };
    let run = run_filter(&config, &model, observations, horizon, seed_value)?;
    let rho = match metrics::pearson_correlation(&run.mean_curve(), &run.observed) {
        Ok(r) => Some(r),
        Err(MetricsError::ZeroVariance) => None,
        Err(e) => unreachable!("curves share their length: {e}"),
    };
    Ok(GridScore {
        asocial: params.asocial_threshold_global,
        social: params.social_threshold_global,
        p: params.peer_group_size,
        summed_mse: run.summed_mse,
        pearson_rho: rho,
        seed: seed_value,
    })
}

/// Runs every grid cell and returns the argmin of summed MSE.
///
/// Parameters not on the grid (pressure steepness, update mode) are taken
/// from `base`. Ties are broken towards the lexicographically smallest
/// `(B, S, p)`.
pub fn grid_search(
    grid: &ParamGrid,
    base: &ModelParams,
    ensemble_size: usize,
    countries: &[CountryRecord],
    observations: &ObservationSeries,
    horizon: usize,
    master_seed: u64,
) -> Result<CalibrationResult, CalibrationError> {
    if grid.is_empty() {
        return Err(CalibrationError::EmptyGrid);
    }
    if ensemble_size < 2 {
        return Err(CalibrationError::EnsembleTooSmall(ensemble_size));
    }
    if observations.days() < horizon + 1 {
        return Err(FilterError::ObservationsTooShort {
            needed: horizon + 1,
            available: observations.days(),
        }
        .into());
    }
    let observed = observations.fraction_curve(horizon);
    if observed.iter().all(|&v| v == observed[0]) {
        return Err(CalibrationError::Degenerate);
    }

    let norm = build_normalization(countries)?;
    let distances = Arc::new(DistanceMatrix::build(countries, &norm));
    let cells = grid.cells();
    let table = cells
        .par_iter()
        .enumerate()
        .map(|(index, &(b, s, p))| {
            let params = ModelParams {
                asocial_threshold_global: b,
                social_threshold_global: s,
                peer_group_size: p,
                ..*base
            };
            score_cell(
                &distances,
                countries,
                observations,
                params,
                ensemble_size,
                horizon,
                cell_seed(master_seed, index),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let best_index = (0..table.len())
        .min_by(|&i, &j| compare_scores(&table[i], &table[j]))
        .expect("grid is non-empty");
    let best = ModelParams {
        asocial_threshold_global: table[best_index].asocial,
        social_threshold_global: table[best_index].social,
        peer_group_size: table[best_index].p,
        ..*base
    };
    Ok(CalibrationResult {
        best,
        best_index,
        table,
    })
}

fn compare_scores(a: &GridScore, b: &GridScore) -> Ordering {
    a.summed_mse
        .total_cmp(&b.summed_mse)
        .then(a.asocial.total_cmp(&b.asocial))
        .then(a.social.total_cmp(&b.social))
        .then(a.p.cmp(&b.p))
}

pub const TABLE_HEADER: [&str; 6] = ["B", "S", "p", "summed_mse", "pearson_rho", "seed"];

/// Writes the score table as CSV. Floats use the shortest representation
/// that parses back to the same value.
pub fn write_score_table<W: Write>(writer: W, table: &[GridScore]) -> Result<(), CalibrationError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TABLE_HEADER)?;
    for row in table {
        w.write_record([
            row.asocial.to_string(),
            row.social.to_string(),
            row.p.to_string(),
            row.summed_mse.to_string(),
            row.pearson_rho.map(|r| r.to_string()).unwrap_or_default(),
            row.seed.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a table written by [`write_score_table`]. Lines starting with `#`
/// are skipped.
pub fn read_score_table<R: Read>(reader: R) -> Result<Vec<GridScore>, CalibrationError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().ne(TABLE_HEADER) {
        return Err(CalibrationError::TableRow {
            row: 0,
            reason: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let bad = |what: &str| CalibrationError::TableRow {
            row,
            reason: format!("cannot parse {what}"),
        };
        let f = |k: usize, what: &str| record[k].parse::<f64>().map_err(|_| bad(what));
        out.push(GridScore {
            asocial: f(0, "B")?,
            social: f(1, "S")?,
            p: record[2].parse().map_err(|_| bad("p"))?,
            summed_mse: f(3, "summed_mse")?,
            pearson_rho: if record[4].is_empty() {
                None
            } else {
                Some(f(4, "pearson_rho")?)
            },
            seed: record[5].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(out)
}
