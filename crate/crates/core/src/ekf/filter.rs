//! Event-driven multi-rate filter loop.

use log::warn;

use super::model::{predict, ProcessNoiseParams};
use super::update::{correct, FilterStep, PseudoMeasurement, StepSource};
use crate::error::{Error, Result};
use crate::eval::{LogRecord, TrajectoryLog};
use crate::state::{CovarianceMatrix, StateVector, Timestamp};

pub const DEFAULT_TS_MAX: f64 = 0.01;

/// Initial covariance diagonal used when a scenario does not give one.
pub const DEFAULT_INITIAL_COV_DIAG: [f64; 7] = [1.0, 1.0, 0.25, 0.25, 0.05, 0.01, 0.01];

#[derive(Clone, Debug)]
pub struct FilterConfig {
    pub ts_max: f64,
    pub process_noise: ProcessNoiseParams,
    /// The run extends to `max(end_time, last event)`.
    pub end_time: Option<Timestamp>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            ts_max: DEFAULT_TS_MAX,
            process_noise: ProcessNoiseParams::default(),
            end_time: None,
        }
    }
}

/// Checks `(timestamp, source)` ordering with LiDAR before thermal on ties.
pub fn validate_event_order(events: &[PseudoMeasurement]) -> Result<()> {
    for (i, pair) in events.windows(2).enumerate() {
        let (a, b) = (&pair[0], &pair[1]);
        let ordered = a.timestamp < b.timestamp
            || (a.timestamp == b.timestamp && a.source <= b.source);
        if !ordered {
            return Err(Error::invalid(format!(
                "events not sorted at index {}: ({}, {}) precedes ({}, {})",
                i + 1,
                a.timestamp,
                a.source,
                b.timestamp,
                b.source
            )));
        }
    }
    Ok(())
}

/// Sorts events into filter order.
pub fn sort_events(events: &mut [PseudoMeasurement]) {
    events.sort_by(|a, b| {
        a.timestamp
            .secs()
            .total_cmp(&b.timestamp.secs())
            .then(a.source.cmp(&b.source))
    });
}

struct Runner {
    cfg: FilterConfig,
    state: StateVector,
    cov: CovarianceMatrix,
    t: f64,
    record: bool,
    steps: Vec<FilterStep>,
    skipped: usize,
}

impl Runner {
    fn new(cfg: &FilterConfig, initial: (StateVector, CovarianceMatrix), record: bool) -> Result<Self> {
        if !(cfg.ts_max > 0.0 && cfg.ts_max.is_finite()) {
            return Err(Error::invalid(format!("ts_max must be positive, got {}", cfg.ts_max)));
        }
        if !initial.0.is_finite() {
            return Err(Error::invalid("initial state is not finite"));
        }
        Ok(Runner {
            cfg: cfg.clone(),
            state: initial.0,
            cov: initial.1,
            t: 0.0,
            record,
            steps: Vec::new(),
            skipped: 0,
        })
    }

    /// Predicts up to `target`, logging every sub-step except the last one,
    /// which is returned un-logged so a correction can be attached to it.
    fn advance(&mut self, target: f64) -> Result<bool> {
        let span = target - self.t;
        if span <= 0.0 {
            return Ok(false);
        }
        let n = ((span / self.cfg.ts_max) - 1e-9).ceil().max(1.0) as usize;
        let dt = span / n as f64;
        let t0 = self.t;
        for i in 1..=n {
            let (x, p) = predict(&self.state, &self.cov, dt, &self.cfg.process_noise)?;
            self.state = x;
            self.cov = p;
            self.t = if i == n { target } else { t0 + i as f64 * dt };
            if i < n {
                self.push_prediction();
            }
        }
        Ok(true)
    }

    fn push_prediction(&mut self) {
        if !self.record {
            return;
        }
        self.steps.push(FilterStep::prediction(
            self.state,
            self.cov,
            StepSource::Prediction,
            Timestamp::new(self.t).expect("filter time stays non-negative"),
        ));
    }

    fn apply(&mut self, meas: &PseudoMeasurement) -> Result<()> {
        self.advance(meas.timestamp.secs())?;
        match correct(&self.state, &self.cov, meas) {
            Ok(step) => {
                self.state = step.posterior_state;
                self.cov = step.posterior_cov;
                if self.record {
                    self.steps.push(step);
                }
            }
            Err(Error::SingularUpdate { condition }) => {
                warn!(
                    "skipping {} update at {}: innovation condition {condition:.3e}",
                    meas.source, meas.timestamp
                );
                self.skipped += 1;
                if self.record {
                    self.steps.push(FilterStep::prediction(
                        self.state,
                        self.cov,
                        StepSource::Measurement(meas.source),
                        meas.timestamp,
                    ));
                }
            }
            Err(e) => return Err(e),
        }
        Ok(())
    }
}

/// Runs the filter and returns every predict/correct step, starting with the
/// initial state at t = 0.
pub fn run_filter_steps(
    events: &[PseudoMeasurement],
    initial: (StateVector, CovarianceMatrix),
    cfg: &FilterConfig,
) -> Result<(Vec<FilterStep>, usize)> {
    validate_event_order(events)?;
    for e in events {
        if !(e.timestamp.secs() >= 0.0 && e.timestamp.secs().is_finite()) {
            return Err(Error::invalid(format!("event timestamp {} out of range", e.timestamp)));
        }
    }

    let mut r = Runner::new(cfg, initial, true)?;
    r.steps.push(FilterStep::prediction(
        r.state,
        r.cov,
        StepSource::Initial,
        Timestamp::ZERO,
    ));
    for e in events {
        r.apply(e)?;
    }
    if let Some(end) = cfg.end_time {
        if r.advance(end.secs())? {
            r.push_prediction();
        }
    }
    Ok((r.steps, r.skipped))
}

/// Incremental filter that keeps only its latest estimate.
///
/// Takes the same sub-steps as [`run_filter`], so feeding it the same events
/// reproduces the final estimate of a batch run exactly.
pub struct OnlineFilter(Runner);

impl OnlineFilter {
    pub fn new(initial: (StateVector, CovarianceMatrix), cfg: &FilterConfig) -> Result<Self> {
        Ok(OnlineFilter(Runner::new(cfg, initial, false)?))
    }

    pub fn time(&self) -> f64 {
        self.0.t
    }

    pub fn state(&self) -> &StateVector {
        &self.0.state
    }

    pub fn covariance(&self) -> &CovarianceMatrix {
        &self.0.cov
    }

    pub fn skipped_updates(&self) -> usize {
        self.0.skipped
    }

    /// Predicts forward to `t`; earlier times are a no-op.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        self.0.advance(t).map(|_| ())
    }

    /// Prediction of the state at `t` without touching the filter.
    pub fn peek(&self, t: f64) -> Result<StateVector> {
        let mut probe = Runner {
            cfg: self.0.cfg.clone(),
            state: self.0.state,
            cov: self.0.cov,
            t: self.0.t,
            record: false,
            steps: Vec::new(),
            skipped: 0,
        };
        probe.advance(t)?;
        Ok(probe.state)
    }

    pub fn update(&mut self, meas: &PseudoMeasurement) -> Result<()> {
        if meas.timestamp.secs() < self.0.t {
            return Err(Error::invalid(format!(
                "measurement at {} precedes filter time {}",
                meas.timestamp, self.0.t
            )));
        }
        self.0.apply(meas)
    }
}

/// Runs the filter over a time-ordered event stream.
pub fn run_filter(
    events: &[PseudoMeasurement],
    initial: (StateVector, CovarianceMatrix),
    cfg: &FilterConfig,
) -> Result<TrajectoryLog> {
    let (steps, skipped_updates) = run_filter_steps(events, initial, cfg)?;
    Ok(TrajectoryLog {
        records: steps.iter().map(LogRecord::from_step).collect(),
        skipped_updates,
    })
}
