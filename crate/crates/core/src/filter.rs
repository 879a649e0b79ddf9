//! Particle filter with sequential importance resampling.
//!
//! A particle is one model trajectory with its own random stream. Between
//! observations every particle is propagated by the model; on an
//! assimilation day each particle is scored by the squared fraction of
//! countries it gets right, the scores are normalized into weights, and a new
//! population is drawn by systematic resampling. Copies receive fresh
//! streams from the filter's master stream so that duplicates diverge again.

use std::collections::HashSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::country_data::ObservationSeries;
use crate::metrics::{self, EnsembleSummary, MetricsError};
use crate::model::{Model, WorldState};
use crate::seed::{self, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("observations cover {available} days, horizon needs {needed}")]
    ObservationsTooShort { needed: usize, available: usize },
    #[error("observations have {found} countries, model has {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid filter config: {0}")]
    Config(&'static str),
}

/// How particles are scored on an assimilation day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Square of the fraction of correctly estimated countries.
    #[default]
    AccuracySquared,
    /// Every particle scores the same; resampling then only shuffles copies.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Days between assimilation events. A window longer than the horizon
    /// means no assimilation at all.
    pub da_window: usize,
    #[serde(default)]
    pub weighting: Weighting,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            n_particles: 1000,
            da_window: 5,
            weighting: Weighting::AccuracySquared,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        if self.n_particles == 0 {
            return Err(FilterError::Config("n_particles must be at least 1"));
        }
        if self.da_window == 0 {
            return Err(FilterError::Config("da_window must be at least 1"));
        }
        Ok(())
    }

    /// Days `k·window` for `k ≥ 1` up to and including `horizon`.
    pub fn assimilation_days(&self, horizon: usize) -> Vec<usize> {
        (1..)
            .map(|k| k * self.da_window)
            .take_while(|&d| d <= horizon)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Particle {
    pub state: WorldState,
    pub stream_seed: u64,
    pub weight: f64,
    rng: Stream,
}

impl Particle {
    pub fn new(state: WorldState, stream_seed: u64, weight: f64) -> Self {
        Self {
            state,
            stream_seed,
            weight,
            rng: seed::stream(stream_seed),
        }
    }

    /// Propagates the particle one day with its own stream.
    pub fn advance(&mut self, model: &Model) {
        model.step_in_place(&mut self.state, &mut self.rng);
    }
}

/// Unnormalized scores `(1 − c/N)²`, `c` the number of wrongly estimated
/// countries.
pub fn compute_weight_scores(particles: &[Particle], observation: &[bool]) -> Vec<f64> {
    particles
        .par_iter()
        .map(|p| {
            let e = metrics::micro_accuracy(&p.state.status, observation);
            e * e
        })
        .collect()
}

/// Scales scores to sum to one; all-zero scores give uniform weights.
pub fn normalize_weights(scores: &[f64]) -> Vec<f64> {
    let total: f64 = scores.iter().sum();
    if total > 0.0 {
        scores.iter().map(|s| s / total).collect()
    } else {
        vec![1.0 / scores.len() as f64; scores.len()]
    }
}

/// Systematic resampling: one offset `u₀ ~ U[0, 1/n)` and the points
/// `u₀ + m/n` are matched against the cumulative weights. Particle `i` is
/// copied `⌊n·wᵢ⌋` or `⌈n·wᵢ⌉` times.
pub fn systematic_resample<R: Rng + ?Sized>(weights: &[f64], n_out: usize, rng: &mut R) -> Vec<usize> {
    assert!(!weights.is_empty(), "cannot resample an empty population");
    let offset: f64 = rng.random();
    let last = weights.len() - 1;
    let mut out = Vec::with_capacity(n_out);
    let mut i = 0;
    let mut cumulative = weights[0];
    for m in 0..n_out {
        let u = (m as f64 + offset) / n_out as f64;
        while u >= cumulative && i < last {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}

/// Diagnostics of one assimilation event, computed on the pre-resample weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssimilationRecord {
    pub day: usize,
    pub weight_entropy: f64,
    pub max_weight: f64,
    pub effective_sample_size: f64,
    /// Number of distinct parents that survived resampling.
    pub unique_parents: usize,
}

/// Reweights and resamples `particles` against an observed day slice.
///
/// The result has the same size; every particle carries a copied state, a
/// fresh distinct stream seed drawn from `master`, and uniform weight.
pub fn assimilate<R: Rng + ?Sized>(
    particles: &[Particle],
    observation: &[bool],
    weighting: Weighting,
    master: &mut R,
) -> (Vec<Particle>, AssimilationRecord) {
    assert!(!particles.is_empty(), "cannot assimilate an empty population");
    let n = particles.len();
    let scores = match weighting {
        Weighting::AccuracySquared => compute_weight_scores(particles, observation),
        Weighting::Uniform => vec![1.0; n],
    };
    let weights = normalize_weights(&scores);
    let parents = systematic_resample(&weights, n, master);
    let seeds = fresh_seeds(n, master);

    let unique_parents = {
        let mut p = parents.clone();
        p.dedup();
        p.len()
    };
    let record = AssimilationRecord {
        day: particles[0].state.day as usize,
        weight_entropy: metrics::weight_entropy(&weights),
        max_weight: weights.iter().copied().fold(0.0, f64::max),
        effective_sample_size: 1.0 / weights.iter().map(|w| w * w).sum::<f64>(),
        unique_parents,
    };
    let uniform = 1.0 / n as f64;
    let next = parents
        .into_iter()
        .zip(seeds)
        .map(|(parent, s)| Particle::new(particles[parent].state.clone(), s, uniform))
        .collect();
    (next, record)
}

fn fresh_seeds<R: Rng + ?Sized>(n: usize, master: &mut R) -> Vec<u64> {
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s: u64 = master.random();
        if seen.insert(s) {
            out.push(s);
        }
    }
    out
}

/// Everything recorded during one filtered (or unfiltered) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRunResult {
    pub config: FilterConfig,
    pub horizon: usize,
    pub master_seed: u64,
    /// Stream seeds of the day-0 population.
    pub initial_seeds: Vec<u64>,
    /// Day-major macro fractions: `[day][particle]`. On assimilation days
    /// these are the values before resampling.
    pub macro_fractions: Vec<Vec<f64>>,
    /// Day-major micro accuracies against the observation of that day.
    pub micro_accuracies: Vec<Vec<f64>>,
    pub assimilations: Vec<AssimilationRecord>,
    /// Observed macro fractions, days `0..=horizon`.
    pub observed: Vec<f64>,
    /// Per-day squared error of the population-mean fraction.
    pub mse: Vec<f64>,
    pub summed_mse: f64,
}

impl FilterRunResult {
    pub fn mean_curve(&self) -> Vec<f64> {
        self.macro_fractions.iter().map(|d| metrics::mean(d)).collect()
    }

    pub fn mean_micro_accuracy(&self) -> Vec<f64> {
        self.micro_accuracies.iter().map(|d| metrics::mean(d)).collect()
    }

    /// Per-day mean of each particle's own squared error.
    pub fn per_member_mse(&self) -> Vec<f64> {
        metrics::per_member_mse_curve(&self.macro_fractions, &self.observed)
            .expect("dimensions fixed at construction")
    }

    pub fn summary(&self) -> Result<EnsembleSummary, MetricsError> {
        metrics::summarize_ensemble(&self.macro_fractions, &self.micro_accuracies)
    }
}

/// Runs the filter from the observed day-0 state for `horizon` days.
///
/// With a window longer than the horizon this is a plain ensemble of
/// `n_particles` independent trajectories.
pub fn run_filter(
    config: &FilterConfig,
    model: &Model,
    observations: &ObservationSeries,
    horizon: usize,
    master_seed: u64,
) -> Result<FilterRunResult, FilterError> {
    config.validate()?;
    if observations.n_countries() != model.n_countries() {
        return Err(FilterError::Dimension {
            expected: model.n_countries(),
            found: observations.n_countries(),
        });
    }
    if observations.days() < horizon + 1 {
        return Err(FilterError::ObservationsTooShort {
            needed: horizon + 1,
            available: observations.days(),
        });
    }

    let mut master = seed::stream(master_seed);
    let n = config.n_particles;
    let initial_seeds = fresh_seeds(n, &mut master);
    let start = WorldState::new(0, observations.day_slice(0));
    let uniform = 1.0 / n as f64;
    let mut particles: Vec<Particle> = initial_seeds
        .iter()
        .map(|&s| Particle::new(start.clone(), s, uniform))
        .collect();

    let mut macro_fractions = Vec::with_capacity(horizon + 1);
    let mut micro_accuracies = Vec::with_capacity(horizon + 1);
    let mut assimilations = Vec::new();
    let record = |particles: &[Particle], obs: &[bool], macros: &mut Vec<Vec<f64>>, micros: &mut Vec<Vec<f64>>| {
        macros.push(particles.iter().map(|p| metrics::macro_fraction(&p.state.status)).collect());
        micros.push(
            particles
                .iter()
                .map(|p| metrics::micro_accuracy(&p.state.status, obs))
                .collect(),
        );
    };

    record(&particles, &start.status, &mut macro_fractions, &mut micro_accuracies);
    for day in 1..=horizon {
        particles.par_iter_mut().for_each(|p| p.advance(model));
        let obs = observations.day_slice(day);
        record(&particles, &obs, &mut macro_fractions, &mut micro_accuracies);
        if day % config.da_window == 0 {
            let (next, diag) = assimilate(&particles, &obs, config.weighting, &mut master);
            particles = next;
            assimilations.push(diag);
        }
    }

    let observed = observations.fraction_curve(horizon);
    let mean: Vec<f64> = macro_fractions.iter().map(|d| metrics::mean(d)).collect();
    let mse = metrics::mse_curve(&mean, &observed).expect("equal lengths");
    let summed_mse = metrics::summed_mse(&mse);
    Ok(FilterRunResult {
        config: *config,
        horizon,
        master_seed,
        initial_seeds,
        macro_fractions,
        micro_accuracies,
        assimilations,
        observed,
        mse,
        summed_mse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;
    use proptest::prelude::*;

    fn particle(status: Vec<bool>, seed: u64) -> Particle {
        Particle::new(WorldState::new(5, status), seed, 0.0)
    }

    #[test]
    fn scores_follow_squared_accuracy() {
        let obs: Vec<bool> = (0..164).map(|i| i % 3 == 0).collect();
        let exact = particle(obs.clone(), 1);
        let complement = particle(obs.iter().map(|b| !b).collect(), 2);
        let mut partial = obs.clone();
        for cell in partial.iter_mut().take(41) {
            *cell = !*cell;
        }
        let scores = compute_weight_scores(&[exact, complement, particle(partial, 3)], &obs);
        assert_eq!(scores[0], 1.0);
        assert_eq!(scores[1], 0.0);
        assert!((scores[2] - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn normalization_cases() {
        assert_eq!(normalize_weights(&[1.0; 4]), vec![0.25; 4]);
        assert_eq!(normalize_weights(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(normalize_weights(&[3.0, 1.0]), vec![0.75, 0.25]);
    }

    #[test]
    fn resample_degenerate_and_uniform() {
        let mut rng = stream(1);
        assert_eq!(systematic_resample(&[1.0, 0.0, 0.0], 7, &mut rng), vec![0; 7]);
        for _ in 0..50 {
            let w = vec![0.1; 10];
            assert_eq!(systematic_resample(&w, 10, &mut rng), (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn resample_integral_counts_for_every_offset() {
        // enumerate offsets on a fine lattice; counts must not depend on u0
        struct Fixed(f64);
        impl rand::RngCore for Fixed {
            fn next_u32(&mut self) -> u32 {
                unreachable!()
            }
            fn next_u64(&mut self) -> u64 {
                // StandardUniform for f64 uses the top 53 bits
                ((self.0 * (1u64 << 53) as f64) as u64) << 11
            }
            fn fill_bytes(&mut self, _: &mut [u8]) {
                unreachable!()
            }
        }
        for k in 0..1000 {
            let u0 = k as f64 / 1000.0;
            let idx = systematic_resample(&[0.7, 0.3], 10, &mut Fixed(u0));
            let zeros = idx.iter().filter(|&&i| i == 0).count();
            assert_eq!((zeros, 10 - zeros), (7, 3), "u0 = {u0}");
        }
    }

    #[test]
    fn one_perfect_particle_takes_over() {
        let obs = vec![true, false, true, true];
        let mut pop = vec![particle(obs.clone(), 0)];
        for s in 1..8 {
            pop.push(particle(obs.iter().map(|b| !b).collect(), s));
        }
        let (next, diag) = assimilate(&pop, &obs, Weighting::AccuracySquared, &mut stream(3));
        assert_eq!(next.len(), 8);
        assert!(next.iter().all(|p| p.state.status == obs));
        assert_eq!(diag.max_weight, 1.0);
        assert_eq!(diag.unique_parents, 1);
        let total: f64 = next.iter().map(|p| p.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_population_only_reseeded() {
        let pop: Vec<Particle> = (0..6).map(|s| particle(vec![true, false], s)).collect();
        let (next, _) = assimilate(&pop, &[false, false], Weighting::AccuracySquared, &mut stream(9));
        assert!(next.iter().all(|p| p.state == pop[0].state));
        let seeds: HashSet<u64> = next.iter().map(|p| p.stream_seed).collect();
        assert_eq!(seeds.len(), 6);
    }

    #[test]
    fn two_particle_copy_ratio() {
        // scores 0.81 and 0.09 normalize to 0.9 : 0.1
        let obs = vec![true; 10];
        let mut nine = vec![true; 10];
        nine[0] = false;
        let mut three = vec![false; 10];
        for cell in three.iter_mut().take(3) {
            *cell = true;
        }
        let pop = vec![particle(nine.clone(), 0), particle(three, 1)];
        let w = normalize_weights(&compute_weight_scores(&pop, &obs));
        assert!((w[0] - 0.9).abs() < 1e-12 && (w[1] - 0.1).abs() < 1e-12);
        let counts = systematic_resample(&w, 100, &mut stream(2));
        let zeros = counts.iter().filter(|&&i| i == 0).count();
        assert_eq!(zeros, 90);
    }

    #[test]
    fn assimilation_days_schedule() {
        let c = |w| FilterConfig { n_particles: 1, da_window: w, weighting: Weighting::default() };
        assert_eq!(c(5).assimilation_days(31), vec![5, 10, 15, 20, 25, 30]);
        assert_eq!(c(15).assimilation_days(31), vec![15, 30]);
        assert_eq!(c(10).assimilation_days(31).len(), 3);
        assert_eq!(c(2).assimilation_days(31).len(), 15);
        assert_eq!(c(1).assimilation_days(31).len(), 31);
        assert!(c(40).assimilation_days(31).is_empty());
        assert!(c(0).validate().is_err());
        assert!(FilterConfig { n_particles: 0, ..c(5) }.validate().is_err());
    }

    proptest! {
        #[test]
        fn resample_counts_within_floor_ceil(
            raw in prop::collection::vec(0.0..1.0f64, 1..60),
            n_out in 1usize..300,
            seed in any::<u64>(),
        ) {
            let w = normalize_weights(&raw);
            let idx = systematic_resample(&w, n_out, &mut stream(seed));
            prop_assert_eq!(idx.len(), n_out);
            let mut counts = vec![0usize; w.len()];
            for i in idx { counts[i] += 1; }
            for (c, wi) in counts.iter().zip(&w) {
                let expected = n_out as f64 * wi;
                prop_assert!(*c as f64 >= expected.floor() - 1e-9 && *c as f64 <= expected.ceil() + 1e-9,
                    "count {} for n*w = {}", c, expected);
            }
        }

        #[test]
        fn resampling_never_invents_states(
            bits in prop::collection::vec(prop::collection::vec(any::<bool>(), 6), 1..30),
            obs in prop::collection::vec(any::<bool>(), 6),
            seed in any::<u64>(),
        ) {
            let pop: Vec<Particle> = bits.iter().enumerate().map(|(i, b)| particle(b.clone(), i as u64)).collect();
            let (next, _) = assimilate(&pop, &obs, Weighting::AccuracySquared, &mut stream(seed));
            prop_assert_eq!(next.len(), pop.len());
            for p in &next {
                prop_assert!(bits.contains(&p.state.status));
            }
            let total: f64 = next.iter().map(|p| p.weight).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn uniform_scores_preserve_multiset(
            bits in prop::collection::vec(prop::collection::vec(any::<bool>(), 5), 1..40),
            seed in any::<u64>(),
        ) {
            let pop: Vec<Particle> = bits.iter().enumerate().map(|(i, b)| particle(b.clone(), i as u64)).collect();
            let (next, _) = assimilate(&pop, &[true; 5], Weighting::Uniform, &mut stream(seed));
            let mut before = bits.clone();
            let mut after: Vec<Vec<bool>> = next.into_iter().map(|p| p.state.status).collect();
            before.sort();
            after.sort();
            prop_assert_eq!(before, after);
        }
    }
}
