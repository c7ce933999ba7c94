//! Calendar time features at millisecond resolution.
//!
//! Each timestamp maps to a 7-component vector (month, day, weekday, hour,
//! minute, second, millisecond), every component affinely scaled to
//! [-0.5, 0.5]. The millisecond component distinguishes sub-second ticks,
//! which plain calendar features cannot.

use chrono::{Datelike, NaiveDateTime, Timelike};

use super::tensor::Tensor;

pub const TIME_FEATURES: usize = 7;

/// One 7-component feature row per timestamp.
pub fn time_features(timestamps: &[NaiveDateTime]) -> Tensor {
    let mut out = Tensor::zeros(timestamps.len(), TIME_FEATURES);
    for (i, ts) in timestamps.iter().enumerate() {
        let row = out.row_mut(i);
        row[0] = (ts.month0() as f64) / 11.0 - 0.5;
        row[1] = (ts.day0() as f64) / 30.0 - 0.5;
        row[2] = (ts.weekday().num_days_from_monday() as f64) / 6.0 - 0.5;
        row[3] = (ts.hour() as f64) / 23.0 - 0.5;
        row[4] = (ts.minute() as f64) / 59.0 - 0.5;
        row[5] = (ts.second() as f64) / 59.0 - 0.5;
        row[6] = ((ts.and_utc().timestamp_subsec_millis()) as f64) / 999.0 - 0.5;
    }
    out
}
