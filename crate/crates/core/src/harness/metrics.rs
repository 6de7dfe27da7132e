use serde::Serialize;

use crate::error::{Result, SimError};

/// Half-width of the settling band as a fraction of the reference.
pub const SETTLING_BAND: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// V².
    pub mse: f64,
    /// V.
    pub rmse: f64,
    /// V.
    pub mae: f64,
}

/// MSE, RMSE and MAE of `series` against the constant reference `vr`.
pub fn compute_metrics(series: &[f64], vr: f64) -> Result<Metrics> {
    let mut acc = MetricAccumulator::default();
    for &v in series {
        acc.push(v - vr);
    }
    acc.finish()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MetricAccumulator {
    sum_sq: f64,
    sum_abs: f64,
    count: usize,
}

impl MetricAccumulator {
    pub fn push(&mut self, err: f64) {
        self.sum_sq += err * err;
        self.sum_abs += err.abs();
        self.count += 1;
    }

    pub fn finish(&self) -> Result<Metrics> {
        if self.count == 0 {
            return Err(SimError::invalid("metrics need at least one sample"));
        }
        let n = self.count as f64;
        let mse = self.sum_sq / n;
        Ok(Metrics {
            mse,
            rmse: mse.sqrt(),
            mae: self.sum_abs / n,
        })
    }
}

/// Recovery after one event (start of run or load change).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SettlingEvent {
    pub t_event: f64,
    /// Time from the event until `v0` stays inside the band for the rest of
    /// the segment; `None` if it never does.
    pub recovery_time: Option<f64>,
}

/// Online tracker of band entry per event segment.
#[derive(Debug, Clone)]
pub struct SettlingTracker {
    lo: f64,
    hi: f64,
    upcoming: Vec<f64>,
    current: f64,
    entered_at: Option<f64>,
    done: Vec<SettlingEvent>,
}

impl SettlingTracker {
    /// `events` are the load change times; the run start is always an event.
    pub fn new(vr: f64, events: impl IntoIterator<Item = f64>) -> Self {
        let mut upcoming: Vec<f64> = events.into_iter().filter(|&t| t > 0.0).collect();
        upcoming.sort_by(f64::total_cmp);
        upcoming.reverse();
        Self {
            lo: vr * (1.0 - SETTLING_BAND),
            hi: vr * (1.0 + SETTLING_BAND),
            upcoming,
            current: 0.0,
            entered_at: None,
            done: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, v0: f64) {
        while self.upcoming.last().is_some_and(|&next| t >= next) {
            self.close();
            self.current = self.upcoming.pop().unwrap();
        }
        if (self.lo..=self.hi).contains(&v0) {
            self.entered_at.get_or_insert(t);
        } else {
            self.entered_at = None;
        }
    }

    fn close(&mut self) {
        self.done.push(SettlingEvent {
            t_event: self.current,
            recovery_time: self.entered_at.take().map(|t| t - self.current),
        });
    }

    /// Events reached so far; later events beyond the last sample are dropped.
    pub fn finish(mut self) -> Vec<SettlingEvent> {
        self.close();
        self.done
    }

    /// Whether the most recent event has been followed by a settled sample
    /// at least `window` seconds ago.
    pub fn settled_for(&self, t: f64, window: f64) -> bool {
        self.entered_at.is_some_and(|e| t - e >= window)
    }
}
