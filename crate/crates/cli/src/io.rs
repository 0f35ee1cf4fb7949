use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sidarthe::data::{derive_french, load_french_raw, load_series, DataQuality, ObservedSeries};
use sidarthe::integrator::{ParamTrajectory, TimeGrid, Trajectory};
use sidarthe::model::{basic_reproduction_number, Rate, RateVector, RATE_COUNT};

use crate::config::{DataConfig, DataFormat, IntegratorConfig};

pub const STATE_HEADER: [&str; 9] = ["S", "I", "D", "A", "R", "T", "H", "E", "H_d"];

pub fn load_observations(cfg: &DataConfig) -> sidarthe::Result<(ObservedSeries, Option<DataQuality>)> {
    match cfg.format {
        DataFormat::Table => Ok((load_series(&cfg.path, &cfg.columns, cfg.population)?, None)),
        DataFormat::French => {
            let raw = load_french_raw(&cfg.path, &cfg.french_columns, cfg.population, cfg.quarantine_days)?;
            let (obs, quality) = derive_french(&raw)?;
            Ok((obs, Some(quality)))
        }
    }
}

fn rate_names() -> impl Iterator<Item = String> {
    Rate::ALL.into_iter().map(|r| serde_json::to_value(r).unwrap().as_str().unwrap().to_owned())
}

fn r0_cell(rates: &RateVector<f64>) -> String {
    basic_reproduction_number(rates).map(|v| v.to_string()).unwrap_or_default()
}

/// One row per node: time, the 18 rates and the reproduction number.
pub fn write_params(path: &Path, params: &ParamTrajectory<f64>) -> sidarthe::Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["t".to_owned()];
    header.extend(rate_names());
    header.push("r0".into());
    w.write_record(&header)?;
    for (i, rates) in params.values.iter().enumerate() {
        let mut row = vec![params.grid.node_time(i).to_string()];
        row.extend(rates.as_array().iter().map(f64::to_string));
        row.push(r0_cell(rates));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a parameter table with a `t` column and one column per rate.
/// Missing rate columns are zero; other columns are ignored.
pub fn read_params(path: &Path, integrator: &IntegratorConfig) -> sidarthe::Result<ParamTrajectory<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let column = |name: &str| header.iter().position(|h| h.trim() == name);
    let t_col = column("t").ok_or_else(|| sidarthe::Error::Parse { row: 1, message: "missing column t".into() })?;
    let rate_cols: Vec<Option<usize>> = rate_names().map(|n| column(&n)).collect();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (k, record) in r.records().enumerate() {
        let record = record?;
        let number = |c: usize| -> sidarthe::Result<f64> {
            let cell = record.get(c).unwrap_or("").trim();
            cell.parse().map_err(|_| sidarthe::Error::Parse { row: k + 2, message: format!("not a number: {cell:?}") })
        };
        times.push(number(t_col)?);
        let mut rates = [0.0; RATE_COUNT];
        for (slot, col) in rates.iter_mut().zip(&rate_cols) {
            if let Some(c) = col {
                *slot = number(*c)?;
            }
        }
        values.push(RateVector::from_array(rates));
    }
    if values.len() < 2 {
        return Err(sidarthe::Error::Data(format!("{} needs at least two nodes", path.display())));
    }
    let grid = TimeGrid::new(times[0], *times.last().unwrap(), values.len() - 1)?
        .with_substeps(integrator.substeps)?
        .with_interpolation(integrator.interpolation);
    ParamTrajectory::new(grid, values)
}

/// One row per node: time, the nine states and the reproduction number at that node.
pub fn write_trajectory(path: &Path, grid: &TimeGrid<f64>, traj: &Trajectory<f64>, params: &ParamTrajectory<f64>) -> sidarthe::Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["t"];
    header.extend(STATE_HEADER);
    header.push("r0");
    w.write_record(&header)?;
    for i in 0..grid.node_count() {
        let mut row = vec![grid.node_time(i).to_string()];
        row.extend(traj.states[i].to_array().iter().map(f64::to_string));
        row.push(r0_cell(&params.values[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Metadata written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct Sidecar<'a, E: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub extrapolation: &'a str,
    pub outputs: Vec<String>,
    pub details: E,
}

pub const EXTRAPOLATION: &str = "rates held at their last-node values beyond the fitted horizon";

impl<E: Serialize> Sidecar<'_, E> {
    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

pub fn file_names(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.csv");
        let grid = TimeGrid::daily(3).unwrap();
        let values = (0..4).map(|i| RateVector::giordano().with(Rate::Alpha, 0.1 * i as f64 + 1.0 / 3.0)).collect();
        let params = ParamTrajectory::new(grid, values).unwrap();
        write_params(&path, &params).unwrap();
        let back = read_params(&path, &IntegratorConfig::default()).unwrap();
        assert_eq!(back, params);
    }

    #[test]
    fn params_file_with_missing_rates_reads_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "t,alpha,note\n0,0.5,x\n1,0.25,y\n").unwrap();
        let p = read_params(&path, &IntegratorConfig::default()).unwrap();
        assert_eq!(p.values[1][Rate::Alpha], 0.25);
        assert_eq!(p.values[1][Rate::Tau], 0.0);
    }

    #[test]
    fn bad_params_cell_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        std::fs::write(&path, "t,alpha\n0,0.5\n1,oops\n").unwrap();
        assert!(matches!(read_params(&path, &IntegratorConfig::default()), Err(sidarthe::Error::Parse { row: 3, .. })));
    }
}
