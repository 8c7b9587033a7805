//! File formats: study and truth CSVs, metric tables, predictor JSON, and
//! the flat key-value config file.
//!
//! Floats are written with the shortest representation that parses back to
//! the identical bits, so a study round-trips exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::{MetricRow, SummaryRow};
use crate::model::{
    FittedPredictor, GenConfig, ObservedSample, Split, Study, Treatment, TruthRecord,
};

/// `s.csv` -> `s.truth.csv`.
pub fn truth_path(samples_path: &Path) -> PathBuf {
    let stem = samples_path
        .file_stem()
        .map(|s| s.to_string_lossy())
        .unwrap_or_default();
    samples_path.with_file_name(format!("{stem}.truth.csv"))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Write the observed-samples CSV: header
/// `location,t,y,x_0..x_{d-1},z_0..z_{d-1}`, with empty z fields on
/// desired-treatment rows.
pub fn write_study_csv(study: &Study, path: &Path) -> Result<()> {
    let d = study.dim();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec!["location".to_string(), "t".to_string(), "y".to_string()];
    header.extend((0..d).map(|i| format!("x_{i}")));
    header.extend((0..d).map(|i| format!("z_{i}")));
    w.write_record(&header)?;
    for s in &study.samples {
        let mut rec = Vec::with_capacity(3 + 2 * d);
        rec.push(s.location.to_string());
        rec.push(s.t.as_str().to_string());
        rec.push(fmt(s.y));
        rec.extend(s.x.iter().map(|&v| fmt(v)));
        match &s.z {
            Some(z) => rec.extend(z.iter().map(|&v| fmt(v))),
            None => rec.extend(std::iter::repeat_n(String::new(), d)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Companion truth CSV: `nu,mu_a1,mu_a3,y_a1,pi,z_0..z_{d-1}`.
pub fn write_truth_csv(study: &Study, path: &Path) -> Result<()> {
    let d = study.dim();
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let mut header = vec![
        "nu".to_string(),
        "mu_a1".to_string(),
        "mu_a3".to_string(),
        "y_a1".to_string(),
        "pi".to_string(),
    ];
    header.extend((0..d).map(|i| format!("z_{i}")));
    w.write_record(&header)?;
    for t in &study.truth {
        let mut rec = Vec::with_capacity(5 + d);
        rec.push(fmt(t.nu));
        rec.push(fmt(t.mu_a1));
        rec.push(fmt(t.mu_a3));
        rec.push(fmt(t.y_a1));
        rec.push(fmt(t.pi));
        rec.extend(t.z_full.iter().map(|&v| fmt(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("bad {what} value '{field}'")))
}

/// Read a study back from its samples CSV and optional truth CSV. The
/// generator config is inferred from the data (dimension from the header,
/// location count and per-location size from the rows); remaining fields take
/// defaults since the CSV schema does not carry them. All samples are marked
/// as training; callers re-split as needed.
pub fn read_study_csv(samples_path: &Path, truth_path: Option<&Path>) -> Result<Study> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(samples_path)?));
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 5 || (cols - 3) % 2 != 0 {
        return Err(Error::Parse(format!(
            "unexpected study header width {cols}"
        )));
    }
    let d = (cols - 3) / 2;
    let mut samples = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != cols {
            return Err(Error::Parse(format!(
                "row width {} != header width {cols}",
                rec.len()
            )));
        }
        let location: usize = rec[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bad location '{}'", &rec[0])))?;
        let t = Treatment::parse(&rec[1])?;
        let y = parse_f64(&rec[2], "outcome")?;
        let x: Vec<f64> = (0..d)
            .map(|i| parse_f64(&rec[3 + i], "x"))
            .collect::<Result<_>>()?;
        let z_fields: Vec<&str> = (0..d).map(|i| &rec[3 + d + i]).collect();
        let z = if z_fields.iter().all(|f| f.is_empty()) {
            None
        } else {
            Some(
                z_fields
                    .iter()
                    .map(|f| parse_f64(f, "z"))
                    .collect::<Result<Vec<f64>>>()?,
            )
        };
        if z.is_none() != (t == Treatment::A1) {
            return Err(Error::Parse(format!(
                "row {}: hidden confounders must be empty exactly on a1 rows",
                samples.len() + 2
            )));
        }
        samples.push(ObservedSample {
            location,
            t,
            y,
            x,
            z,
        });
    }

    let truth = match truth_path {
        Some(p) => read_truth_csv(p, d, samples.len())?,
        None => samples
            .iter()
            .map(|s| TruthRecord {
                nu: 0.0,
                mu_a1: 0.0,
                mu_a3: 0.0,
                y_a1: 0.0,
                pi: 0.5,
                z_full: s.z.clone().unwrap_or_else(|| vec![0.0; d]),
            })
            .collect(),
    };

    let locations = samples
        .iter()
        .map(|s| s.location)
        .max()
        .map_or(0, |m| m + 1);
    let n = samples.len().checked_div(locations).unwrap_or(0);
    let config = GenConfig {
        locations,
        samples_per_location: n.max(1),
        dim: d,
        k_x: d,
        k_z: d,
        rho: 0.0,
        tau: 0.0,
        ar_range: (0.3, 0.5),
        seed: 0,
    };
    let split = vec![Split::Train; samples.len()];
    let study = Study {
        samples,
        truth,
        config,
        split,
    };
    study.check_invariants()?;
    Ok(study)
}

fn read_truth_csv(path: &Path, d: usize, expected_rows: usize) -> Result<Vec<TruthRecord>> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let cols = r.headers()?.len();
    if cols != 5 + d {
        return Err(Error::Parse(format!(
            "truth header width {cols}, expected {}",
            5 + d
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(TruthRecord {
            nu: parse_f64(&rec[0], "nu")?,
            mu_a1: parse_f64(&rec[1], "mu_a1")?,
            mu_a3: parse_f64(&rec[2], "mu_a3")?,
            y_a1: parse_f64(&rec[3], "y_a1")?,
            pi: parse_f64(&rec[4], "pi")?,
            z_full: (0..d)
                .map(|i| parse_f64(&rec[5 + i], "z"))
                .collect::<Result<_>>()?,
        });
    }
    if out.len() != expected_rows {
        return Err(Error::Parse(format!(
            "truth rows {} do not match sample rows {expected_rows}",
            out.len()
        )));
    }
    Ok(out)
}

/// Metric rows as CSV: `seed,setting,param,learner,metric,value`.
pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["seed", "setting", "param", "learner", "metric", "value"])?;
    for r in rows {
        w.write_record([
            r.seed.to_string(),
            r.setting.clone(),
            fmt(r.param),
            r.learner.clone(),
            r.metric.clone(),
            fmt(r.value),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 6 {
            return Err(Error::Parse(format!("metric row width {}", rec.len())));
        }
        rows.push(MetricRow {
            seed: rec[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad seed '{}'", &rec[0])))?,
            setting: rec[1].to_string(),
            param: parse_f64(&rec[2], "param")?,
            learner: rec[3].to_string(),
            metric: rec[4].to_string(),
            value: parse_f64(&rec[5], "value")?,
        });
    }
    Ok(rows)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record([
        "setting", "param", "learner", "metric", "mean", "stderr", "count",
    ])?;
    for r in rows {
        w.write_record([
            r.setting.clone(),
            fmt(r.param),
            r.learner.clone(),
            r.metric.clone(),
            fmt(r.mean),
            fmt(r.stderr),
            r.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_predictor_json(p: &FittedPredictor, path: &Path) -> Result<()> {
    p.validate_for_export()?;
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, p)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

pub fn read_predictor_json(path: &Path) -> Result<FittedPredictor> {
    let p: FittedPredictor = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    p.validate_for_export()?;
    Ok(p)
}

/// Flat `key = value` config file; `#` starts a comment. Returned pairs are
/// applied before CLI flags so flags win.
pub fn read_flags_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse(format!(
                "config line {}: expected key = value",
                lineno + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GenConfig;
    use crate::synth::generate_study;

    #[test]
    fn study_round_trips_bit_exactly() {
        let config = GenConfig {
            locations: 3,
            samples_per_location: 40,
            dim: 5,
            k_x: 2,
            k_z: 2,
            rho: 0.3,
            tau: 0.7,
            ar_range: (0.3, 0.5),
            seed: 99,
        };
        let study = generate_study(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let sp = dir.path().join("s.csv");
        let tp = truth_path(&sp);
        write_study_csv(&study, &sp).unwrap();
        write_truth_csv(&study, &tp).unwrap();
        let loaded = read_study_csv(&sp, Some(&tp)).unwrap();
        assert_eq!(loaded.samples.len(), study.samples.len());
        for (a, b) in study.samples.iter().zip(&loaded.samples) {
            assert_eq!(a.location, b.location);
            assert_eq!(a.t, b.t);
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            for (u, v) in a.x.iter().zip(&b.x) {
                assert_eq!(u.to_bits(), v.to_bits());
            }
            assert_eq!(a.z.is_some(), b.z.is_some());
            if let (Some(az), Some(bz)) = (&a.z, &b.z) {
                for (u, v) in az.iter().zip(bz) {
                    assert_eq!(u.to_bits(), v.to_bits());
                }
            }
        }
        for (a, b) in study.truth.iter().zip(&loaded.truth) {
            assert_eq!(a.y_a1.to_bits(), b.y_a1.to_bits());
            assert_eq!(a.pi.to_bits(), b.pi.to_bits());
        }
    }

    #[test]
    fn truth_path_derivation() {
        assert_eq!(
            truth_path(Path::new("out/s.csv")),
            Path::new("out/s.truth.csv")
        );
        assert_eq!(truth_path(Path::new("x.csv")), Path::new("x.truth.csv"));
    }

    #[test]
    fn flags_file_parses_and_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(
            &p,
            "# comment\nsetting = A\nreplicates= 5\n\nseed =9 # trailing\n",
        )
        .unwrap();
        let flags = read_flags_file(&p).unwrap();
        assert_eq!(
            flags,
            vec![
                ("setting".to_string(), "A".to_string()),
                ("replicates".to_string(), "5".to_string()),
                ("seed".to_string(), "9".to_string()),
            ]
        );
        std::fs::write(&p, "not a pair\n").unwrap();
        assert!(read_flags_file(&p).is_err());
    }

    #[test]
    fn nuisance_free_two_stage_predictors_refuse_export() {
        use crate::model::{Aggregate, FeatureMode, Learner, LinearModel};
        let m = LinearModel {
            coefficients: vec![0.5],
            intercept: 0.0,
            feature_mode: FeatureMode::XOnly,
        };
        let p = FittedPredictor {
            learner: Learner::Ra,
            fold_models: vec![m.clone(), m],
            nuisance_mu: None,
            nuisance_pi: None,
            aggregate: Aggregate::Mean,
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(write_predictor_json(&p, &dir.path().join("p.json")).is_err());
    }

    #[test]
    fn predictor_json_round_trips() {
        use crate::model::{Aggregate, FeatureMode, Learner, LinearModel};
        let p = FittedPredictor {
            learner: Learner::Sp,
            fold_models: vec![LinearModel {
                coefficients: vec![0.25, -1.5],
                intercept: 0.125,
                feature_mode: FeatureMode::XOnly,
            }],
            nuisance_mu: None,
            nuisance_pi: None,
            aggregate: Aggregate::Mean,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_predictor_json(&p, &path).unwrap();
        let q = read_predictor_json(&path).unwrap();
        assert_eq!(q.fold_models[0].coefficients, p.fold_models[0].coefficients);
        assert_eq!(q.fold_models[0].intercept, p.fold_models[0].intercept);
    }
}
