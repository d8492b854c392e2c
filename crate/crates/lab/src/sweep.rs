//! `sweep`: the full check suite at every value of one axis, collected into
//! a CSV table with fitted log-log slopes appended.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::config::{ExperimentConfig, SweepAxis};
use crate::report::{format_float, CheckRecord, RunReport};
use crate::runner::{append_log, evaluate, run_config, with_pool, RunOptions};
use crate::LabError;

/// One row of the sweep table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub records: Vec<CheckRecord>,
}

pub fn sweep(
    cfg: &ExperimentConfig,
    sha256: &str,
    axis: SweepAxis,
    values: &[f64],
    opts: &RunOptions,
) -> Result<RunReport, LabError> {
    if values.is_empty() {
        return Err(LabError::Config("sweep.values: at least one value is required".into()));
    }
    if values.len() == 1 {
        return run_config(&cfg.with_axis(axis, values[0])?, sha256, opts);
    }
    let started = Instant::now();
    let configs = values
        .iter()
        .map(|&v| cfg.with_axis(axis, v))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = with_pool(opts.workers, || {
        configs
            .par_iter()
            .zip(values.par_iter())
            .map(|(c, &value)| {
                let records = evaluate(c)?.into_iter().flat_map(|(o, _)| o.records).collect();
                Ok(SweepRow { value, records })
            })
            .collect::<Result<Vec<_>, LabError>>()
    })??;

    let dir = opts.out_dir(cfg);
    std::fs::create_dir_all(&dir)?;
    let file = std::fs::File::create(dir.join(format!("sweep_{}.csv", axis.name())))?;
    write_table(file, axis, &rows)?;

    let records = rows
        .iter()
        .flat_map(|row| {
            row.records.iter().map(move |r| {
                let mut r = r.clone();
                r.name = format!("{}[{}={}]", r.name, axis.name(), row.value);
                r
            })
        })
        .collect();
    let report = RunReport::new(&cfg.name, sha256.to_string(), cfg.seed, records);
    std::fs::write(dir.join("report.json"), report.to_json()?)?;
    append_log(&dir, "sweep", &report, started, &[])?;
    Ok(report)
}

/// Fitted slope of `log|y|` against `log x` per column, `NaN` when
/// undefined.
pub fn column_slopes(rows: &[SweepRow]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    (0..first.records.len())
        .map(|k| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for row in rows {
                if let Some(v) = row.records.get(k).and_then(|r| r.value) {
                    xs.push(row.value);
                    ys.push(v.abs());
                }
            }
            if xs.len() < 2 || xs.iter().chain(&ys).any(|&v| !(v > 0.0)) {
                f64::NAN
            } else {
                scatterlab_core::linalg::log_log_slope(&xs, &ys)
            }
        })
        .collect()
}

pub fn write_table<W: std::io::Write>(w: W, axis: SweepAxis, rows: &[SweepRow]) -> Result<(), LabError> {
    let mut out = csv::Writer::from_writer(w);
    let names: Vec<String> = rows
        .first()
        .map(|r| r.records.iter().map(|c| c.name.clone()).collect())
        .unwrap_or_default();
    let mut header = vec![axis.name().to_string()];
    header.extend(names.iter().cloned());
    out.write_record(&header)?;
    for row in rows {
        let mut line = vec![format_float(row.value)];
        line.extend(row.records.iter().map(|r| r.value.map(format_float).unwrap_or_else(|| "null".into())));
        out.write_record(&line)?;
    }
    let mut slope = vec!["slope".to_string()];
    slope.extend(column_slopes(rows).into_iter().map(format_float));
    out.write_record(&slope)?;
    out.flush()?;
    Ok(())
}

pub fn sweep_path(path: &Path, axis: Option<SweepAxis>, values: Option<Vec<f64>>, opts: &RunOptions) -> Result<RunReport, LabError> {
    let loaded = crate::runner::load(path)?;
    let cfg = loaded.config;
    let (axis, values) = match (axis, values, &cfg.sweep) {
        (Some(a), Some(v), _) => (a, v),
        (a, v, Some(s)) => (a.unwrap_or(s.axis), v.unwrap_or_else(|| s.values.clone())),
        _ => {
            return Err(LabError::Config(
                "sweep: --axis and --values are required when the config has no sweep section".into(),
            ))
        }
    };
    sweep(&cfg, &loaded.sha256, axis, &values, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(value: f64, v: f64) -> SweepRow {
        SweepRow {
            value,
            records: vec![CheckRecord::diagnostic("e", v), CheckRecord::diagnostic("z", 0.0)],
        }
    }

    #[test]
    fn slopes_and_table_layout() {
        let rows = vec![row(0.1, 0.01), row(0.2, 0.04), row(0.4, 0.16)];
        let s = column_slopes(&rows);
        assert!((s[0] - 2.0).abs() < 1e-12);
        assert!(s[1].is_nan());
        let mut buf = Vec::new();
        write_table(&mut buf, SweepAxis::Dt, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "dt,e,z");
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("slope,2.0000000000000"));
        assert!(lines[4].ends_with(",null"));
    }
}
