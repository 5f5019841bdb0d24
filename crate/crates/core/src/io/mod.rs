//! File formats: experiment config, trial datasets, feature tables and reports.
//!
//! Every float written by this module carries nine significant digits. Files
//! are written to a temporary sibling and renamed into place.

mod config;
mod dataset;
mod tables;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use config::{DatasetSource, ExperimentConfig, GenerationBlock, Overrides, SCHEMA_VERSION};
pub use dataset::{
    read_events, read_trial_set, write_trial_set, Manifest, TrialEvent, INDEX_COLUMNS,
};
pub use tables::{
    eval_reports_csv, feature_columns, importance_csv, plot_accuracy_vs_wait, plot_gap_vs_missed,
    plot_gap_vs_speed, plot_gap_vs_wait, read_features_csv, strategy_reports_csv,
    transfer_matrix_csv, write_features_csv, PlotBin,
};

/// Rounds to nine significant digits.
pub fn round_sig(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

/// Shortest decimal form of `v` rounded to nine significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    let r = round_sig(v);
    if r == 0.0 {
        return "0".into();
    }
    let s = format!("{r}");
    // Display never uses exponents; keep very small or large values compact.
    if s.len() > 24 {
        format!("{r:e}")
    } else {
        s
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn round_json(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = round_sig(n.as_f64().expect("f64 number"));
            if let Some(num) = serde_json::Number::from_f64(r) {
                *n = num;
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_json),
        Value::Object(o) => o.values_mut().for_each(round_json),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to nine significant digits.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_json(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Single-line variant for JSON-lines files.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_json(&mut v);
    Ok(serde_json::to_string(&v)?)
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json_string(value)?.as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serialises CSV records into memory.
pub(crate) fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::invalid(format!("csv buffer: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_f64(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_f64(2.0), "2");
        assert_eq!(fmt_f64(-1234.56789012), "-1234.56789");
        assert_eq!(fmt_f64(6.5), "6.5");
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(to_json_line(&vec![0.1 + 0.2]).unwrap(), "[0.3]");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn formatting_is_idempotent(v in -1e12f64..1e12) {
            let once: f64 = fmt_f64(v).parse().unwrap();
            prop_assert_eq!(fmt_f64(once), fmt_f64(v));
            prop_assert!((once - v).abs() <= 1e-8 * v.abs().max(1e-300));
        }
    }
}
