//! Piecewise-linear contact bias with optional periodic extension.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("times and values differ in length ({times} vs {values})")]
    LengthMismatch { times: usize, values: usize },
    #[error("at least two breakpoints are required")]
    TooShort,
    #[error("breakpoint times must start at 0 and be strictly increasing")]
    NotIncreasing,
    #[error("breakpoint times and values must be finite")]
    NotFinite,
    #[error("a periodic signal must end at its starting value ({start} vs {end})")]
    PeriodicJump { start: f64, end: f64 },
}

/// Breakpoint times in seconds and values in volts.
#[derive(Clone, Debug, PartialEq)]
pub struct BiasSignal {
    times: Vec<f64>,
    values: Vec<f64>,
    pub periodic: bool,
}

/// Continuity tolerance at breakpoints and at the period boundary.
pub const CONTINUITY_TOL: f64 = 1e-12;

impl BiasSignal {
    pub fn new(times: Vec<f64>, values: Vec<f64>, periodic: bool) -> Result<Self, SignalError> {
        if times.len() != values.len() {
            return Err(SignalError::LengthMismatch {
                times: times.len(),
                values: values.len(),
            });
        }
        if times.len() < 2 {
            return Err(SignalError::TooShort);
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(SignalError::NotFinite);
        }
        if times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SignalError::NotIncreasing);
        }
        let (start, end) = (values[0], values[values.len() - 1]);
        if periodic && (start - end).abs() > CONTINUITY_TOL * (1.0 + start.abs().max(end.abs())) {
            return Err(SignalError::PeriodicJump { start, end });
        }
        Ok(Self {
            times,
            values,
            periodic,
        })
    }

    /// Identically zero bias.
    pub fn zero() -> Self {
        Self {
            times: vec![0.0, 1.0],
            values: vec![0.0, 0.0],
            periodic: true,
        }
    }

    /// Triangle wave of period 80 ns with amplitude 100 V and slope 5 V/ns.
    pub fn triangle() -> Self {
        Self {
            times: vec![0.0, 20e-9, 60e-9, 80e-9],
            values: vec![0.0, 100.0, -100.0, 0.0],
            periodic: true,
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn period(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// Bias in volts at time `t` (seconds). Before the first breakpoint the first
/// value is held; past the last one the signal repeats when periodic and is
/// held otherwise.
pub fn bias_at(signal: &BiasSignal, t: f64) -> f64 {
    let (ts, vs) = (&signal.times, &signal.values);
    let period = signal.period();
    let t = if signal.periodic && t > period {
        let r = t.rem_euclid(period);
        // Exact multiples of the period map to its end, which equals its start.
        if r == 0.0 {
            period
        } else {
            r
        }
    } else {
        t
    };
    if t <= ts[0] {
        return vs[0];
    }
    if t >= period {
        return vs[vs.len() - 1];
    }
    let i = ts.partition_point(|&s| s <= t) - 1;
    let w = (t - ts[i]) / (ts[i + 1] - ts[i]);
    vs[i] + w * (vs[i + 1] - vs[i])
}

/// Largest jump of the signal across its breakpoints and period boundary,
/// measured by one-sided evaluation.
pub fn max_breakpoint_jump(signal: &BiasSignal) -> f64 {
    let scale = signal.period() * 1e-12;
    let mut worst: f64 = 0.0;
    let mut pts: Vec<f64> = signal.times[1..].to_vec();
    if signal.periodic {
        pts.push(signal.period() * 2.0);
    }
    for t in pts {
        let slope = signal
            .values
            .windows(2)
            .zip(signal.times.windows(2))
            .map(|(v, s)| ((v[1] - v[0]) / (s[1] - s[0])).abs())
            .fold(0.0, f64::max);
        let left = bias_at(signal, t - scale);
        let right = bias_at(signal, t + scale);
        worst = worst.max((left - right).abs() - 2.0 * scale * slope);
    }
    worst.max(0.0)
}
