//! Result files and their readers.
//!
//! Every CSV starts with one comment line
//! `# covpol experiment=<name> config_hash=<hex> master_seed=<n>`; the same
//! fields are top-level keys of `summary.json`. Floats are written in their
//! shortest round-trip form, so reading a file back gives the exact values.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    particle_count_stats, BaseRunResult, ExperimentConfig, ExperimentError, ExperimentKind, Inputs,
    ParticleCountStats, ParticleSweepRow, PfComparison, WindowSweep, WindowSweepRow,
};
use crate::calibration::{self, CalibrationResult};
use crate::country_data::{write_countries_to, write_observations_to};
use crate::filter::AssimilationRecord;
use crate::metrics::EnsembleSummary;

pub const MACRO_CURVE: &str = "macro_curve.csv";
pub const MACRO_CURVE_NOPF: &str = "macro_curve_nopf.csv";
pub const MICRO_CURVE: &str = "micro_curve.csv";
pub const MICRO_CURVE_NOPF: &str = "micro_curve_nopf.csv";
pub const MSE_CURVE: &str = "mse_curve.csv";
pub const MSE_RATIO: &str = "mse_ratio.csv";
pub const SWEEP: &str = "sweep.csv";
pub const SUMMARY: &str = "summary.json";
pub const COUNTRIES: &str = "countries.csv";
pub const OBSERVATIONS: &str = "observations.csv";

const MACRO_HEADER: [&str; 8] = ["day", "mean", "std", "ci50_lo", "ci50_hi", "ci95_lo", "ci95_hi", "observed"];
const MICRO_HEADER: [&str; 3] = ["day", "mean_accuracy", "std"];
const MSE_HEADER: [&str; 3] = ["day", "mse_nopf", "mse_pf"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub experiment: ExperimentKind,
    pub config_hash: String,
    pub master_seed: u64,
}

impl Provenance {
    pub fn of(config: &ExperimentConfig) -> Self {
        Self {
            experiment: config.experiment,
            config_hash: config.hash(),
            master_seed: config.master_seed,
        }
    }

    pub fn header_line(&self) -> String {
        format!(
            "# covpol experiment={} config_hash={} master_seed={}\n",
            self.experiment, self.config_hash, self.master_seed
        )
    }

    /// Parses the first line of a result CSV.
    pub fn parse(text: &str) -> Option<Self> {
        let line = text.lines().next()?.strip_prefix("# covpol ")?;
        let mut experiment = None;
        let mut config_hash = None;
        let mut master_seed = None;
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=')?;
            match k {
                "experiment" => experiment = v.parse().ok(),
                "config_hash" => config_hash = Some(v.to_string()),
                "master_seed" => master_seed = v.parse().ok(),
                _ => return None,
            }
        }
        Some(Self {
            experiment: experiment?,
            config_hash: config_hash?,
            master_seed: master_seed?,
        })
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryFile<T> {
    #[serde(flatten)]
    pub provenance: Provenance,
    /// Seed of the generated world; absent for file inputs.
    pub synthetic_seed: Option<u64>,
    pub metrics: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMetrics {
    pub ensemble_size: usize,
    pub rho: Option<f64>,
    pub summed_mse: f64,
    pub max_abs_deviation: f64,
    pub inside_ci95: f64,
    pub max_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfMetrics {
    pub n_particles: usize,
    pub da_window: usize,
    pub rho_nopf: Option<f64>,
    pub rho_pf: Option<f64>,
    pub summed_mse_nopf: f64,
    pub summed_mse_pf: f64,
    pub summed_reduction: f64,
    pub best_day: Option<usize>,
    pub best_day_reduction: Option<f64>,
    pub assimilations: Vec<AssimilationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSweepMetrics {
    pub counts: Vec<ParticleCountStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSweepMetrics {
    pub slope: Option<f64>,
    /// `1 − last / first` summed MSE over the sweep order.
    pub total_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMetrics {
    #[serde(rename = "B")]
    pub asocial: f64,
    #[serde(rename = "S")]
    pub social: f64,
    pub p: usize,
    pub summed_mse: f64,
    pub pearson_rho: Option<f64>,
    pub cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMetrics {
    pub n_countries: usize,
    pub days: usize,
    pub day0_fraction: f64,
    pub final_fraction: f64,
}

/// Output directory bound to one config.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    provenance: Provenance,
    synthetic_seed: Option<u64>,
}

impl OutputDir {
    pub fn create(config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let dir = config.paths.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|source| ExperimentError::Io {
            path: dir.clone(),
            source,
        })?;
        let synthetic_seed = config.paths.countries.is_none().then(|| config.synthetic_seed());
        Ok(Self {
            dir,
            provenance: Provenance::of(config),
            synthetic_seed,
        })
    }

    fn write(&self, name: &str, body: &[u8]) -> Result<PathBuf, ExperimentError> {
        let path = self.dir.join(name);
        let mut bytes = self.provenance.header_line().into_bytes();
        bytes.extend_from_slice(body);
        std::fs::write(&path, bytes).map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    fn write_summary<T: Serialize>(&self, metrics: T) -> Result<PathBuf, ExperimentError> {
        let file = SummaryFile {
            provenance: self.provenance.clone(),
            synthetic_seed: self.synthetic_seed,
            metrics,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("summary serializes");
        text.push('\n');
        let path = self.dir.join(SUMMARY);
        std::fs::write(&path, text).map_err(|source| ExperimentError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }

    pub fn write_base(&self, r: &BaseRunResult) -> Result<Vec<PathBuf>, ExperimentError> {
        Ok(vec![
            self.write(MACRO_CURVE, &macro_curve_csv(&r.summary, &r.run.observed))?,
            self.write(MICRO_CURVE, &micro_curve_csv(&r.summary))?,
            self.write(MSE_CURVE, &mse_curve_csv(Some(&r.run.mse), None))?,
            self.write_summary(BaseMetrics {
                ensemble_size: r.run.config.n_particles,
                rho: r.rho,
                summed_mse: r.run.summed_mse,
                max_abs_deviation: r.max_abs_deviation,
                inside_ci95: r.inside_ci95,
                max_std: r.summary.per_day_std.iter().copied().fold(0.0, f64::max),
            })?,
        ])
    }

    pub fn write_pf_comparison(&self, r: &PfComparison) -> Result<Vec<PathBuf>, ExperimentError> {
        let pf = r.filter.summary()?;
        let nopf = r.no_filter.summary()?;
        let rho = |s: &EnsembleSummary| {
            crate::metrics::pearson_correlation(&s.per_day_mean_fraction, &r.filter.observed).ok()
        };
        Ok(vec![
            self.write(MACRO_CURVE, &macro_curve_csv(&pf, &r.filter.observed))?,
            self.write(MICRO_CURVE, &micro_curve_csv(&pf))?,
            self.write(MACRO_CURVE_NOPF, &macro_curve_csv(&nopf, &r.no_filter.observed))?,
            self.write(MICRO_CURVE_NOPF, &micro_curve_csv(&nopf))?,
            self.write(MSE_CURVE, &mse_curve_csv(Some(&r.no_filter.mse), Some(&r.filter.mse)))?,
            self.write(MSE_RATIO, &ratio_csv(&r.ratio))?,
            self.write_summary(PfMetrics {
                n_particles: r.filter.config.n_particles,
                da_window: r.filter.config.da_window,
                rho_nopf: rho(&nopf),
                rho_pf: rho(&pf),
                summed_mse_nopf: r.no_filter.summed_mse,
                summed_mse_pf: r.filter.summed_mse,
                summed_reduction: r.summed_reduction,
                best_day: r.best_day,
                best_day_reduction: r.best_day_reduction,
                assimilations: r.filter.assimilations.clone(),
            })?,
        ])
    }

    pub fn write_particle_sweep(&self, rows: &[ParticleSweepRow]) -> Result<Vec<PathBuf>, ExperimentError> {
        Ok(vec![
            self.write(SWEEP, &serde_csv(rows))?,
            self.write_summary(ParticleSweepMetrics {
                counts: particle_count_stats(rows),
            })?,
        ])
    }

    pub fn write_window_sweep(&self, s: &WindowSweep) -> Result<Vec<PathBuf>, ExperimentError> {
        let first = s.rows.first().map_or(f64::NAN, |r| r.summed_mse);
        let last = s.rows.last().map_or(f64::NAN, |r| r.summed_mse);
        Ok(vec![
            self.write(SWEEP, &serde_csv(&s.rows))?,
            self.write_summary(WindowSweepMetrics {
                slope: s.slope,
                total_reduction: 1.0 - last / first,
            })?,
        ])
    }

    pub fn write_calibration(&self, r: &CalibrationResult) -> Result<Vec<PathBuf>, ExperimentError> {
        let mut body = Vec::new();
        calibration::write_score_table(&mut body, &r.table)?;
        let best = r.best_score();
        Ok(vec![
            self.write(SWEEP, &body)?,
            self.write_summary(CalibrationMetrics {
                asocial: best.asocial,
                social: best.social,
                p: best.p,
                summed_mse: best.summed_mse,
                pearson_rho: best.pearson_rho,
                cells: r.table.len(),
            })?,
        ])
    }

    pub fn write_synthetic(&self, inputs: &Inputs, horizon: usize) -> Result<Vec<PathBuf>, ExperimentError> {
        let countries = write_countries_to(Vec::new(), &inputs.countries)?
            .into_inner()
            .expect("in-memory writer");
        let observations = write_observations_to(Vec::new(), &inputs.countries, &inputs.observations)?
            .into_inner()
            .expect("in-memory writer");
        let obs = &inputs.observations;
        Ok(vec![
            self.write(COUNTRIES, &countries)?,
            self.write(OBSERVATIONS, &observations)?,
            self.write_summary(SyntheticMetrics {
                n_countries: obs.n_countries(),
                days: obs.days(),
                day0_fraction: obs.fraction(0),
                final_fraction: obs.fraction(horizon.min(obs.days() - 1)),
            })?,
        ])
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory writer")
}

fn serde_csv<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory writer")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn macro_curve_csv(summary: &EnsembleSummary, observed: &[f64]) -> Vec<u8> {
    let rows = (0..summary.days()).map(|d| {
        vec![
            d.to_string(),
            summary.per_day_mean_fraction[d].to_string(),
            summary.per_day_std[d].to_string(),
            summary.per_day_ci50[d].0.to_string(),
            summary.per_day_ci50[d].1.to_string(),
            summary.per_day_ci95[d].0.to_string(),
            summary.per_day_ci95[d].1.to_string(),
            opt(observed.get(d).copied()),
        ]
    });
    csv_bytes(&MACRO_HEADER, rows)
}

pub fn micro_curve_csv(summary: &EnsembleSummary) -> Vec<u8> {
    let rows = (0..summary.days()).map(|d| {
        vec![
            d.to_string(),
            summary.per_day_micro_accuracy_mean[d].to_string(),
            summary.per_day_micro_accuracy_std[d].to_string(),
        ]
    });
    csv_bytes(&MICRO_HEADER, rows)
}

/// Either column may be absent; missing values are left empty.
pub fn mse_curve_csv(nopf: Option<&[f64]>, pf: Option<&[f64]>) -> Vec<u8> {
    let days = nopf.map_or(0, |v| v.len()).max(pf.map_or(0, |v| v.len()));
    let rows = (0..days).map(|d| {
        vec![
            d.to_string(),
            opt(nopf.and_then(|v| v.get(d).copied())),
            opt(pf.and_then(|v| v.get(d).copied())),
        ]
    });
    csv_bytes(&MSE_HEADER, rows)
}

fn ratio_csv(ratio: &[Option<f64>]) -> Vec<u8> {
    let rows = ratio
        .iter()
        .enumerate()
        .map(|(d, r)| vec![d.to_string(), opt(*r)]);
    csv_bytes(&["day", "ratio"], rows)
}

fn format_error(path: &Path, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads a result CSV: checks the header row and returns the rows as
/// strings. Comment lines are skipped.
fn read_table(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>, ExperimentError> {
    let file = std::fs::File::open(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_table_from(file, header).map_err(|reason| format_error(path, reason))
}

fn read_table_from<R: Read>(reader: R, header: &[&str]) -> Result<Vec<csv::StringRecord>, String> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let found = r.headers().map_err(|e| e.to_string())?;
    if found.iter().ne(header.iter().copied()) {
        return Err(format!("expected header {}", header.join(",")));
    }
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| e.to_string())?;
            if rec.get(0) != Some(i.to_string().as_str()) {
                return Err(format!("row {} does not hold day {i}", i + 1));
            }
            Ok(rec)
        })
        .collect()
}

fn num(rec: &csv::StringRecord, k: usize) -> Result<f64, String> {
    rec[k]
        .parse()
        .map_err(|_| format!("cannot parse `{}` as a number", &rec[k]))
}

fn opt_num(rec: &csv::StringRecord, k: usize) -> Result<Option<f64>, String> {
    if rec[k].is_empty() {
        Ok(None)
    } else {
        num(rec, k).map(Some)
    }
}

/// Reads `macro_curve.csv` and `micro_curve.csv` back into an
/// [`EnsembleSummary`] and the observed curve.
pub fn read_ensemble_summary(
    macro_path: &Path,
    micro_path: &Path,
) -> Result<(EnsembleSummary, Column), ExperimentError> {
    let macro_rows = read_table(macro_path, &MACRO_HEADER)?;
    let micro_rows = read_table(micro_path, &MICRO_HEADER)?;
    if macro_rows.len() != micro_rows.len() {
        return Err(format_error(micro_path, "day count differs from the macro curve"));
    }
    let mut s = EnsembleSummary {
        per_day_mean_fraction: Vec::new(),
        per_day_std: Vec::new(),
        per_day_ci50: Vec::new(),
        per_day_ci95: Vec::new(),
        per_day_micro_accuracy_mean: Vec::new(),
        per_day_micro_accuracy_std: Vec::new(),
    };
    let mut observed = Vec::new();
    for rec in &macro_rows {
        let f = |k| num(rec, k).map_err(|e| format_error(macro_path, e));
        s.per_day_mean_fraction.push(f(1)?);
        s.per_day_std.push(f(2)?);
        s.per_day_ci50.push((f(3)?, f(4)?));
        s.per_day_ci95.push((f(5)?, f(6)?));
        observed.push(opt_num(rec, 7).map_err(|e| format_error(macro_path, e))?);
    }
    for rec in &micro_rows {
        let f = |k| num(rec, k).map_err(|e| format_error(micro_path, e));
        s.per_day_micro_accuracy_mean.push(f(1)?);
        s.per_day_micro_accuracy_std.push(f(2)?);
    }
    Ok((s, observed))
}

/// A result column; empty cells read as `None`.
pub type Column = Vec<Option<f64>>;

/// Reads `mse_curve.csv` as `(mse_nopf, mse_pf)` columns.
pub fn read_mse_curve(path: &Path) -> Result<(Column, Column), ExperimentError> {
    let rows = read_table(path, &MSE_HEADER)?;
    let mut a = Vec::with_capacity(rows.len());
    let mut b = Vec::with_capacity(rows.len());
    for rec in &rows {
        a.push(opt_num(rec, 1).map_err(|e| format_error(path, e))?);
        b.push(opt_num(rec, 2).map_err(|e| format_error(path, e))?);
    }
    Ok((a, b))
}

fn read_serde_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ExperimentError> {
    let file = std::fs::File::open(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(file)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| format_error(path, e.to_string()))
}

pub fn read_particle_sweep(path: &Path) -> Result<Vec<ParticleSweepRow>, ExperimentError> {
    read_serde_rows(path)
}

pub fn read_window_sweep(path: &Path) -> Result<Vec<WindowSweepRow>, ExperimentError> {
    read_serde_rows(path)
}

pub fn read_summary<T: DeserializeOwned>(path: &Path) -> Result<SummaryFile<T>, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| format_error(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary() -> EnsembleSummary {
        EnsembleSummary {
            per_day_mean_fraction: vec![0.08, 0.1 + 0.2, 1.0 / 3.0],
            per_day_std: vec![0.0, 0.012_345_678_901_234_5, 0.2],
            per_day_ci50: vec![(0.08, 0.08), (0.25, 0.35), (0.3, 0.4)],
            per_day_ci95: vec![(0.08, 0.08), (0.2, 0.4), (0.1, 0.6)],
            per_day_micro_accuracy_mean: vec![1.0, 0.9, 2.0 / 3.0],
            per_day_micro_accuracy_std: vec![0.0, 0.05, 0.1],
        }
    }

    #[test]
    fn provenance_line_parses_back() {
        let p = Provenance {
            experiment: ExperimentKind::DaWindowSweep,
            config_hash: "ab12".into(),
            master_seed: u64::MAX,
        };
        let line = p.header_line();
        assert!(line.starts_with("# covpol ") && line.ends_with('\n'));
        assert_eq!(Provenance::parse(&line), Some(p));
        assert_eq!(Provenance::parse("day,mean\n"), None);
    }

    #[test]
    fn curves_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let s = summary();
        let observed = [0.08, 0.31, 1.0 / 7.0];
        let header = "# covpol experiment=base_run config_hash=00 master_seed=1\n";
        let m = dir.path().join(MACRO_CURVE);
        let u = dir.path().join(MICRO_CURVE);
        std::fs::write(&m, [header.as_bytes(), &macro_curve_csv(&s, &observed)].concat()).unwrap();
        std::fs::write(&u, [header.as_bytes(), &micro_curve_csv(&s)].concat()).unwrap();
        let (back, obs) = read_ensemble_summary(&m, &u).unwrap();
        assert_eq!(back, s);
        assert_eq!(obs, observed.map(Some).to_vec());
    }

    #[test]
    fn mse_curve_leaves_missing_column_empty() {
        let text = String::from_utf8(mse_curve_csv(Some(&[0.0, 0.5]), None)).unwrap();
        assert_eq!(text, "day,mse_nopf,mse_pf\n0,0,\n1,0.5,\n");
    }

    #[test]
    fn reader_rejects_wrong_header_and_day_gaps() {
        assert!(read_table_from("day,mean\n0,1\n".as_bytes(), &MICRO_HEADER).is_err());
        let gap = "day,mean_accuracy,std\n0,1,0\n2,1,0\n";
        assert!(read_table_from(gap.as_bytes(), &MICRO_HEADER).is_err());
    }

    #[test]
    fn window_rows_round_trip_with_missing_window() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            WindowSweepRow {
                window: None,
                assimilations: 0,
                summed_mse: 0.123_456_789,
                mean_micro_accuracy: 0.8,
                seed: 5,
            },
            WindowSweepRow {
                window: Some(5),
                assimilations: 6,
                summed_mse: 0.1,
                mean_micro_accuracy: 0.85,
                seed: u64::MAX,
            },
        ];
        let path = dir.path().join(SWEEP);
        std::fs::write(&path, serde_csv(&rows)).unwrap();
        assert_eq!(read_window_sweep(&path).unwrap(), rows);
    }
}
