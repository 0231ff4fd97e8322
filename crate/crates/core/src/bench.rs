//! Single-instance inference latency measurement.
//!
//! Only the network forward pass is timed; quantizing the text is not.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::architecture::{round2, Model};
use crate::error::{Error, Result};
use crate::tensor::Real;

pub const DEFAULT_REPS: usize = 1000;
pub const DEFAULT_WARMUP: usize = 10;

/// Millisecond time source.
pub trait Clock {
    fn now_ms(&mut self) -> f64;
    /// Smallest step the clock can report, in milliseconds.
    fn resolution_ms(&mut self) -> f64;
}

/// Monotonic wall clock.
#[derive(Debug)]
pub struct MonotonicClock {
    origin: Instant,
}

impl Default for MonotonicClock {
    fn default() -> Self {
        MonotonicClock { origin: Instant::now() }
    }
}

impl Clock for MonotonicClock {
    fn now_ms(&mut self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1e3
    }

    fn resolution_ms(&mut self) -> f64 {
        let mut best = f64::INFINITY;
        for _ in 0..1000 {
            let a = self.now_ms();
            let mut b = self.now_ms();
            while b == a {
                b = self.now_ms();
            }
            best = best.min(b - a);
        }
        best
    }
}

/// Replays fixed durations: each start/stop pair advances by the next value.
#[derive(Clone, Debug)]
pub struct ScriptedClock {
    durations: Vec<f64>,
    next: usize,
    now: f64,
    started: bool,
}

impl ScriptedClock {
    pub fn new(durations_ms: &[f64]) -> Self {
        ScriptedClock {
            durations: durations_ms.to_vec(),
            next: 0,
            now: 0.0,
            started: false,
        }
    }
}

impl Clock for ScriptedClock {
    fn now_ms(&mut self) -> f64 {
        if self.started {
            self.now += self.durations.get(self.next).copied().unwrap_or(0.0);
            self.next += 1;
        }
        self.started = !self.started;
        self.now
    }

    fn resolution_ms(&mut self) -> f64 {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub reps: usize,
    pub warmup: usize,
    pub environment: String,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            reps: DEFAULT_REPS,
            warmup: DEFAULT_WARMUP,
            environment: format!("{}-{} cpu", std::env::consts::OS, std::env::consts::ARCH),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub model: String,
    pub environment: String,
    pub mean_ms: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std_ms: f64,
    /// Fastest single repetition.
    pub min_ms: f64,
    pub reps: usize,
    pub warmup: usize,
    /// Set when the clock resolution exceeds 1% of the mean.
    pub coarse_timer: bool,
}

/// Times `reps` calls of `run` after `warmup` untimed ones.
pub fn measure<C: Clock>(
    mut run: impl FnMut() -> Result<()>,
    cfg: &BenchConfig,
    clock: &mut C,
    model: &str,
) -> Result<LatencyStats> {
    if cfg.reps < 2 {
        return Err(Error::arg(format!("need at least 2 repetitions, got {}", cfg.reps)));
    }
    for _ in 0..cfg.warmup {
        run()?;
    }
    let mut times = Vec::with_capacity(cfg.reps);
    for _ in 0..cfg.reps {
        let start = clock.now_ms();
        run()?;
        times.push(clock.now_ms() - start);
    }
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(LatencyStats {
        model: model.to_string(),
        environment: cfg.environment.clone(),
        mean_ms: mean,
        std_ms: var.sqrt(),
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        reps: cfg.reps,
        warmup: cfg.warmup,
        coarse_timer: clock.resolution_ms() > 0.01 * mean,
    })
}

/// Latency of eval-mode single-sample forward passes on `input`.
pub fn measure_latency_with_clock<T: Real, C: Clock>(
    model: &Model<T>,
    input: &[usize],
    cfg: &BenchConfig,
    clock: &mut C,
) -> Result<LatencyStats> {
    if input.len() != model.spec.seq_len {
        return Err(Error::arg(format!(
            "input has {} characters, model expects {}",
            input.len(),
            model.spec.seq_len
        )));
    }
    let label = format!("{}-{}", model.spec.family, model.spec.depth);
    measure(|| model.predict(input, 1).map(drop), cfg, clock, &label)
}

pub fn measure_latency<T: Real>(model: &Model<T>, input: &[usize], cfg: &BenchConfig) -> Result<LatencyStats> {
    measure_latency_with_clock(model, input, cfg, &mut MonotonicClock::default())
}

/// `a.mean_ms / b.mean_ms` rounded to two decimals.
pub fn latency_ratio(a: &LatencyStats, b: &LatencyStats) -> Result<f64> {
    if b.mean_ms.is_nan() || b.mean_ms <= 0.0 {
        return Err(Error::arg(format!(
            "cannot divide by a mean latency of {} ms",
            b.mean_ms
        )));
    }
    Ok(round2(a.mean_ms / b.mean_ms))
}

/// Plain-text table with one row per run.
pub fn format_table(rows: &[LatencyStats]) -> String {
    let mut out = format!(
        "{:<12} {:<24} {:>22} {:>6}\n",
        "model", "environment", "latency (ms)", "reps"
    );
    for r in rows {
        let latency = format!("{:.2} ± {:.2}", r.mean_ms, r.std_ms);
        let flag = if r.coarse_timer { " (coarse timer)" } else { "" };
        out.push_str(&format!(
            "{:<12} {:<24} {:>22} {:>6}{flag}\n",
            r.model, r.environment, latency, r.reps
        ));
    }
    out
}
