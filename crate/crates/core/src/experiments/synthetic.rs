//! Synthetic country sets and model-generated observations, for runs without
//! data files.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::country_data::{build_normalization, CountryRecord, DataError, ObservationSeries};
use crate::model::{Model, ModelError, ModelParams, WorldState};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_countries: usize,
    /// Share of countries in lockdown on day 0.
    pub initial_fraction: f64,
    /// Log-normal parameters (of the natural log) for GDP per capita.
    pub income_log_mean: f64,
    pub income_log_sd: f64,
    /// Log-normal parameters for population density.
    pub density_log_mean: f64,
    pub density_log_sd: f64,
    pub layout: Layout,
}

/// Geographic layout of the synthetic world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Layout {
    /// Capitals uniform on the sphere; attributes independent of location.
    UniformSphere,
    /// Countries belong to `regions` regions with centres drawn uniformly
    /// between 60°S and 60°N. Capitals scatter around their centre with a
    /// standard deviation of `spread_deg` per axis. Democracy and income keep
    /// their marginal distributions but are assigned by the rank of a latent
    /// score `coupling·regional + sqrt(1 − coupling²)·own`, so neighbours
    /// resemble each other.
    Regional {
        regions: usize,
        spread_deg: f64,
        coupling: f64,
    },
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_countries: 164,
            initial_fraction: 0.08,
            income_log_mean: 9.6,
            income_log_sd: 1.0,
            density_log_mean: 1.8,
            density_log_sd: 0.4,
            layout: Layout::UniformSphere,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub countries: Vec<CountryRecord>,
    pub observations: ObservationSeries,
}

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid synthetic spec: {0}")]
    Spec(&'static str),
}

/// Samples country attributes only. Every country starts out of lockdown.
pub fn sample_countries<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Vec<CountryRecord>, SyntheticError> {
    let n = spec.n_countries;
    if n < 2 {
        return Err(SyntheticError::Spec("need at least two countries"));
    }
    let income = LogNormal::new(spec.income_log_mean, spec.income_log_sd)
        .map_err(|_| SyntheticError::Spec("income log-sd must be non-negative"))?;
    let density = LogNormal::new(spec.density_log_mean, spec.density_log_sd)
        .map_err(|_| SyntheticError::Spec("density log-sd must be non-negative"))?;
    let democracy = Uniform::new_inclusive(1.0, 10.0).expect("static bounds");

    let mut incomes: Vec<f64> = (0..n).map(|_| income.sample(rng)).collect();
    let mut scores: Vec<f64> = (0..n).map(|_| democracy.sample(rng)).collect();
    let densities: Vec<f64> = (0..n).map(|_| density.sample(rng)).collect();

    let capitals: Vec<(f64, f64)> = match spec.layout {
        Layout::UniformSphere => (0..n).map(|_| uniform_band(rng, 90.0)).collect(),
        Layout::Regional {
            regions,
            spread_deg,
            coupling,
        } => {
            if regions == 0 {
                return Err(SyntheticError::Spec("regions must be positive"));
            }
            if !(0.0..=1.0).contains(&coupling) {
                return Err(SyntheticError::Spec("coupling must lie in [0, 1]"));
            }
            let scatter = Normal::new(0.0, spread_deg)
                .map_err(|_| SyntheticError::Spec("spread_deg must be non-negative"))?;
            let centres: Vec<((f64, f64), f64, f64)> = (0..regions)
                .map(|_| (uniform_band(rng, 60.0), rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let own = (1.0 - coupling * coupling).sqrt();
            let mut democracy_latent = Vec::with_capacity(n);
            let mut income_latent = Vec::with_capacity(n);
            let capitals = (0..n)
                .map(|_| {
                    let ((lat0, lon0), dem, inc) = centres[rng.random_range(0..regions)];
                    let lat = (lat0 + scatter.sample(rng)).clamp(-89.0, 89.0);
                    let lon = (lon0 + scatter.sample(rng) + 180.0).rem_euclid(360.0) - 180.0;
                    democracy_latent.push(coupling * dem + own * rng.sample::<f64, _>(StandardNormal));
                    income_latent.push(coupling * inc + own * rng.sample::<f64, _>(StandardNormal));
                    (lat, lon)
                })
                .collect();
            scores = assign_by_rank(scores, &democracy_latent);
            incomes = assign_by_rank(incomes, &income_latent);
            capitals
        }
    };

    Ok((0..n)
        .map(|id| CountryRecord {
            id,
            code: format!("S{id:03}"),
            name: format!("Synthetic {id}"),
            income: incomes[id],
            democracy: scores[id],
            capital_lat: capitals[id].0,
            capital_lon: capitals[id].1,
            pop_density: densities[id],
            initial_lockdown: false,
        })
        .collect())
}

/// Uniform point on the sphere restricted to `|lat| <= max_lat` degrees.
fn uniform_band<R: Rng + ?Sized>(rng: &mut R, max_lat: f64) -> (f64, f64) {
    let z = (2.0 * rng.random::<f64>() - 1.0) * max_lat.to_radians().sin();
    (z.asin().to_degrees(), 360.0 * rng.random::<f64>() - 180.0)
}

/// Reorders `values` so the i-th smallest goes to the holder of the i-th
/// smallest latent score.
fn assign_by_rank(mut values: Vec<f64>, latent: &[f64]) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let mut order: Vec<usize> = (0..latent.len()).collect();
    order.sort_by(|&a, &b| latent[a].total_cmp(&latent[b]));
    let mut out = vec![0.0; values.len()];
    for (rank, i) in order.into_iter().enumerate() {
        out[i] = values[rank];
    }
    out
}

/// Samples a country set, seeds `initial_fraction` of it into lockdown and
/// runs the model for `horizon` days to produce `horizon + 1` observed days.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    params: &ModelParams,
    horizon: usize,
    seed_value: u64,
) -> Result<SyntheticWorld, SyntheticError> {
    if !(0.0..=1.0).contains(&spec.initial_fraction) {
        return Err(SyntheticError::Spec("initial_fraction must lie in [0, 1]"));
    }
    let mut rng = seed::stream(seed_value);
    let mut countries = sample_countries(spec, &mut rng)?;
    let n = countries.len();
    let k = ((spec.initial_fraction * n as f64).round() as usize).clamp(1, n);
    for i in index::sample(&mut rng, n, k) {
        countries[i].initial_lockdown = true;
    }

    let norm = build_normalization(&countries)?;
    let model = Model::new(&countries, &norm, *params)?;
    let start = WorldState::new(0, countries.iter().map(|c| c.initial_lockdown).collect());
    let trajectory = model.run_trajectory(&start, horizon, &mut rng);
    let rows = (0..n)
        .map(|i| trajectory.iter().map(|s| s.status[i]).collect())
        .collect();
    let observations = ObservationSeries::from_rows(rows)?;
    Ok(SyntheticWorld {
        countries,
        observations,
    })
}
