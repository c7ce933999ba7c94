//! Trace file format, chronological splitting and standardization.
//!
//! A [`Trace`] is an evenly spaced series of non-negative demand values
//! (Mbps averaged over each tick). The on-disk format is a two-column CSV
//! with header `timestamp,demand`; timestamps are ISO-8601 with millisecond
//! resolution. Values are written with Rust's shortest round-trip float
//! formatting, so `read_trace(write_trace(t)) == t` bit-exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{Duration, NaiveDateTime};

use crate::error::{Error, Result};

const TIMESTAMP_FMT: &str = "%Y-%m-%dT%H:%M:%S%.3f";

/// Evenly spaced demand series at a stated granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    start_time: NaiveDateTime,
    granularity_ms: u64,
    values: Vec<f64>,
}

impl Trace {
    /// Builds a trace, enforcing the type invariants: at least one value,
    /// all values finite and non-negative, positive granularity.
    pub fn new(start_time: NaiveDateTime, granularity_ms: u64, values: Vec<f64>) -> Result<Self> {
        if granularity_ms == 0 {
            return Err(Error::InvalidArgument("granularity_ms must be > 0".into()));
        }
        if values.is_empty() {
            return Err(Error::InvalidArgument("trace must have >= 1 value".into()));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::InvalidArgument(format!(
                "trace value {v} at index {i} is not a finite non-negative number"
            )));
        }
        Ok(Self {
            start_time,
            granularity_ms,
            values,
        })
    }

    /// Default epoch used when no real wall-clock anchor exists (synthetic data).
    pub fn default_start_time() -> NaiveDateTime {
        chrono::NaiveDate::from_ymd_opt(2024, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()
    }

    pub fn start_time(&self) -> NaiveDateTime {
        self.start_time
    }

    pub fn granularity_ms(&self) -> u64 {
        self.granularity_ms
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Timestamp of tick `i`.
    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start_time + Duration::milliseconds((i as u64 * self.granularity_ms) as i64)
    }

    /// Timestamps for a contiguous tick range, as used by the forecasters'
    /// time-feature embeddings.
    pub fn timestamps(&self, start: usize, len: usize) -> Vec<NaiveDateTime> {
        (start..start + len).map(|i| self.timestamp(i)).collect()
    }
}

/// Writes a trace to the CSV format described in the module docs.
pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(w, "timestamp,demand")?;
        for (i, v) in trace.values.iter().enumerate() {
            writeln!(w, "{},{}", trace.timestamp(i).format(TIMESTAMP_FMT), v)?;
        }
        w.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Reads a trace from a CSV file; granularity is inferred from the first two
/// timestamps and uneven spacing is rejected.
pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        lines.push((idx + 1, line));
    }
    parse_trace_csv(lines.iter().map(|(n, l)| (*n, l.as_str())))
}

/// Parses trace CSV content already split into `(line_number, line)` pairs.
/// Exposed separately so untrusted input can be parsed without touching the
/// filesystem.
pub fn parse_trace_csv<'a>(lines: impl IntoIterator<Item = (usize, &'a str)>) -> Result<Trace> {
    let mut iter = lines.into_iter();
    let (header_no, header) = iter.next().ok_or_else(|| Error::parse(0, "empty file"))?;
    if header.trim() != "timestamp,demand" {
        return Err(Error::parse(
            header_no,
            format!("expected header `timestamp,demand`, got `{header}`"),
        ));
    }

    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (line_no, line) in iter {
        if line.trim().is_empty() {
            continue;
        }
        let (ts_str, val_str) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(line_no, "expected `timestamp,demand` row"))?;
        let ts = NaiveDateTime::parse_from_str(ts_str.trim(), TIMESTAMP_FMT)
            .map_err(|e| Error::parse(line_no, format!("bad timestamp `{ts_str}`: {e}")))?;
        let v: f64 = val_str
            .trim()
            .parse()
            .map_err(|e| Error::parse(line_no, format!("bad demand `{val_str}`: {e}")))?;
        if !v.is_finite() || v < 0.0 {
            return Err(Error::parse(
                line_no,
                format!("demand {v} is not a finite non-negative number"),
            ));
        }
        timestamps.push(ts);
        values.push(v);
    }

    if values.is_empty() {
        return Err(Error::parse(header_no, "no data rows"));
    }
    let granularity_ms = if timestamps.len() >= 2 {
        let delta = (timestamps[1] - timestamps[0]).num_milliseconds();
        if delta <= 0 {
            return Err(Error::parse(2, "timestamps must be strictly increasing"));
        }
        for (i, pair) in timestamps.windows(2).enumerate() {
            let d = (pair[1] - pair[0]).num_milliseconds();
            if d != delta {
                return Err(Error::parse(
                    i + 3, // header + one-based + second row of the pair
                    format!("uneven spacing: expected {delta} ms, got {d} ms"),
                ));
            }
        }
        delta as u64
    } else {
        // Single row: spacing cannot be inferred, fall back to the base tick.
        10
    };

    Trace::new(timestamps[0], granularity_ms, values)
}

/// Fractions of a chronological train/validation/test split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.7,
            val_frac: 0.1,
            test_frac: 0.2,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| *f <= 0.0) {
            return Err(Error::InvalidArgument(
                "split fractions must be positive".into(),
            ));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions must sum to 1, got {sum}"
            )));
        }
        Ok(())
    }
}

/// Splits a trace into contiguous (train, val, test) segments in time order.
///
/// Validation and test sizes are `floor(n * frac)`; the remainder goes to
/// train, so the concatenation always reproduces the input.
pub fn split_chronological(trace: &Trace, spec: &SplitSpec) -> Result<(Trace, Trace, Trace)> {
    spec.validate()?;
    let n = trace.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "trace too short to split: {n} < 10"
        )));
    }
    let n_val = (n as f64 * spec.val_frac).floor() as usize;
    let n_test = (n as f64 * spec.test_frac).floor() as usize;
    let n_train = n - n_val - n_test;

    let slice = |start: usize, len: usize| -> Result<Trace> {
        Trace::new(
            trace.timestamp(start),
            trace.granularity_ms,
            trace.values[start..start + len].to_vec(),
        )
    };
    Ok((
        slice(0, n_train)?,
        slice(n_train, n_val)?,
        slice(n_train + n_val, n_test)?,
    ))
}

/// Affine rescaling to zero mean and unit variance, fit on the training
/// split only and reused for validation and test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    /// Fits mean and sample (n-1) standard deviation on the training split.
    pub fn fit(train: &Trace) -> Result<Self> {
        Self::fit_values(train.values())
    }

    pub fn fit_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "standardizer needs >= 2 training values".into(),
            ));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        let std = (ss / (n - 1) as f64).sqrt();
        // Exact zero never happens in floats once rounding enters; treat
        // anything at rounding scale as constant.
        if std <= 1e-12 * mean.abs().max(1.0) {
            return Err(Error::ConstantSeries);
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| (v - self.mean) / self.std).collect()
    }

    pub fn invert(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|v| v * self.std + self.mean).collect()
    }
}
