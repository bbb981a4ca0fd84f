//! Closed-form backlog/catch-up model and an exact event-driven simulator
//! for a stream that keeps arriving while the server pauses to decode.
//!
//! The server consumes arriving segments at rate `mu`; segments arrive at
//! rate `lambda`; every `decode_period_s` the server pauses for a decode
//! window. In `Interleaved` mode the pause lasts the full decode duration,
//! in `Decoupled` mode only the configured per-decode overhead (zero by
//! default), which models ingestion continuing on its own track while
//! decoding runs elsewhere.
//!
//! Arrivals are a uniform fluid inflow by default, so backlog is piecewise
//! linear and the simulator integrates it exactly between events — measured
//! catch-up agrees with the closed form to float precision, not to a
//! discretization tolerance. A Poisson arrival option (unit-sized jumps,
//! seeded) exists for stochastic traces.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LatencyError {
    #[error("invalid rate config: {0}")]
    InvalidConfig(String),
    #[error("invalid horizon: {0}")]
    InvalidHorizon(String),
}

/// Rates and decode-cost parameters for one workload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConfig {
    /// Arrival rate, segments per second.
    pub lambda: f64,
    /// Processing rate, segments per second.
    pub mu: f64,
    /// Decoding-pause duration per cycle, seconds.
    pub t_dec: f64,
    /// Seconds per output token.
    pub c_tok: f64,
    /// Output tokens per decode step.
    pub l_tokens: f64,
}

impl RateConfig {
    /// Utilization ρ = λ/μ; derived, never stored.
    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }

    pub fn validate(&self) -> Result<(), LatencyError> {
        let positive = [("lambda", self.lambda), ("mu", self.mu)];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(LatencyError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [("t_dec", self.t_dec), ("c_tok", self.c_tok), ("l_tokens", self.l_tokens)];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(LatencyError::InvalidConfig(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// A duration that stops being finite once the queue is critically loaded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CatchUp {
    Finite(f64),
    Divergent,
}

impl CatchUp {
    pub fn finite(self) -> Option<f64> {
        match self {
            CatchUp::Finite(v) => Some(v),
            CatchUp::Divergent => None,
        }
    }
}

/// Backlog accumulated over one decode pause: λ · T_dec segments.
pub fn backlog_closed_form(cfg: &RateConfig) -> f64 {
    cfg.lambda * cfg.t_dec
}

/// Time to drain that backlog at net rate (μ − λ): (ρ/(1−ρ)) · T_dec.
pub fn catch_up_closed_form(cfg: &RateConfig) -> CatchUp {
    let rho = cfg.rho();
    if rho < 1.0 {
        CatchUp::Finite(rho / (1.0 - rho) * cfg.t_dec)
    } else {
        CatchUp::Divergent
    }
}

/// Stream lag purchased by an L-token answer: (ρ/(1−ρ)) · c_tok · L.
/// Linear in L, so spending tokens on quality directly defers the stream.
pub fn quality_coupling(cfg: &RateConfig) -> CatchUp {
    let rho = cfg.rho();
    if rho < 1.0 {
        CatchUp::Finite(rho / (1.0 - rho) * cfg.c_tok * cfg.l_tokens)
    } else {
        CatchUp::Divergent
    }
}

/// Whether ingestion halts for the whole decode window or only for the
/// per-decode overhead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LatencyMode {
    Interleaved,
    Decoupled,
}

impl fmt::Display for LatencyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LatencyMode::Interleaved => "interleaved",
            LatencyMode::Decoupled => "decoupled",
        })
    }
}

impl FromStr for LatencyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "interleaved" => Ok(LatencyMode::Interleaved),
            "decoupled" => Ok(LatencyMode::Decoupled),
            other => Err(format!("unknown latency mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalModel {
    /// Continuous fluid inflow at exactly λ — the default, and the one the
    /// closed forms describe.
    Uniform,
    /// Unit-sized arrivals with exponential gaps, inverse-transform sampled
    /// from a seeded generator.
    Poisson { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub horizon_s: f64,
    pub sample_dt: f64,
    /// Decode windows start at every multiple of this period (first at one
    /// full period, so the queue reaches steady state before pausing).
    pub decode_period_s: f64,
    /// Extra ingestion stall per decode window — scheduling/synchronization
    /// cost that hits even the decoupled mode. Zero by default.
    pub decode_overhead_s: f64,
    pub arrivals: ArrivalModel,
}

impl SimOptions {
    pub fn new(horizon_s: f64, sample_dt: f64, decode_period_s: f64) -> Self {
        Self {
            horizon_s,
            sample_dt,
            decode_period_s,
            decode_overhead_s: 0.0,
            arrivals: ArrivalModel::Uniform,
        }
    }
}

/// Backlog over time plus the measured catch-up of the first decode window.
#[derive(Debug, Clone, PartialEq)]
pub struct BacklogTrace {
    pub mode: LatencyMode,
    /// (time_s, backlog_segments), sampled at multiples of `sample_dt`.
    pub samples: Vec<(f64, f64)>,
    /// Time from the first decode window's end until backlog first returned
    /// to its value at that window's start; `None` if it never did within
    /// the horizon.
    pub catch_up_s: Option<f64>,
}

/// How long ingestion stalls per decode window under the given mode.
fn halt_duration(cfg: &RateConfig, mode: LatencyMode, opts: &SimOptions) -> f64 {
    match mode {
        LatencyMode::Interleaved => cfg.t_dec + opts.decode_overhead_s,
        LatencyMode::Decoupled => opts.decode_overhead_s,
    }
}

fn validate_sim(cfg: &RateConfig, mode: LatencyMode, opts: &SimOptions) -> Result<(), LatencyError> {
    cfg.validate()?;
    if !opts.sample_dt.is_finite() || opts.sample_dt <= 0.0 {
        return Err(LatencyError::InvalidConfig(format!(
            "sample_dt must be positive, got {}",
            opts.sample_dt
        )));
    }
    if !opts.decode_overhead_s.is_finite() || opts.decode_overhead_s < 0.0 {
        return Err(LatencyError::InvalidConfig("decode overhead must be non-negative".into()));
    }
    let halt = halt_duration(cfg, LatencyMode::Interleaved, opts);
    if !opts.decode_period_s.is_finite() || opts.decode_period_s <= halt {
        return Err(LatencyError::InvalidConfig(format!(
            "decode period {} must exceed the decode stall {halt}",
            opts.decode_period_s
        )));
    }
    if !opts.horizon_s.is_finite() || opts.horizon_s <= 0.0 {
        return Err(LatencyError::InvalidHorizon(format!(
            "horizon must be positive, got {}",
            opts.horizon_s
        )));
    }
    // The horizon must cover one full decode window, and when the queue is
    // subcritical also the drain that follows, or catch-up is unmeasurable.
    let mode_halt = halt_duration(cfg, mode, opts);
    let mut needed = opts.decode_period_s + mode_halt;
    let rho = cfg.rho();
    if rho < 1.0 {
        needed += rho / (1.0 - rho) * mode_halt;
    }
    if opts.horizon_s < needed {
        return Err(LatencyError::InvalidHorizon(format!(
            "horizon {} too short to cover one decode/catch-up cycle ({needed})",
            opts.horizon_s
        )));
    }
    Ok(())
}

/// Runs the fluid (or Poisson) backlog simulation. Backlog is integrated
/// piecewise linearly between events — window edges, zero crossings,
/// recovery crossings, arrivals, and sample points — so the trace is exact
/// for uniform arrivals.
pub fn simulate(
    cfg: &RateConfig,
    mode: LatencyMode,
    opts: &SimOptions,
) -> Result<BacklogTrace, LatencyError> {
    validate_sim(cfg, mode, opts)?;
    let halt = halt_duration(cfg, mode, opts);
    let period = opts.decode_period_s;
    let horizon = opts.horizon_s;

    let mut rng = match opts.arrivals {
        ArrivalModel::Uniform => None,
        ArrivalModel::Poisson { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let draw_gap = |rng: &mut Option<ChaCha8Rng>| -> f64 {
        let r = rng.as_mut().expect("poisson arrivals need a generator");
        let u: f64 = r.gen();
        -(1.0 - u).ln() / cfg.lambda
    };

    let fluid = matches!(opts.arrivals, ArrivalModel::Uniform);
    let mut t = 0.0_f64;
    let mut b = 0.0_f64;
    let mut serving = true;
    let mut window_k = 1_u64;
    let mut next_transition = period;
    let mut next_arrival = if fluid { f64::INFINITY } else { draw_gap(&mut rng) };
    let mut sample_k = 0_u64;
    let mut samples = Vec::new();
    let mut target: Option<f64> = None;
    let mut first_halt_end: Option<f64> = None;
    let mut recovering = false;
    let mut catch_up: Option<f64> = None;

    loop {
        let inflow = if fluid { cfg.lambda } else { 0.0 };
        let slope = if serving {
            if b > 0.0 {
                inflow - cfg.mu
            } else {
                (inflow - cfg.mu).max(0.0)
            }
        } else {
            inflow
        };

        let next_sample = sample_k as f64 * opts.sample_dt;
        let zero_hit = if slope < 0.0 && b > 0.0 { Some(t + b / -slope) } else { None };
        let target_hit = match target {
            Some(goal) if recovering && slope < 0.0 && b > goal => {
                Some(t + (b - goal) / -slope)
            }
            _ => None,
        };
        let mut t_next = horizon.min(next_transition).min(next_arrival);
        if next_sample <= horizon {
            t_next = t_next.min(next_sample);
        }
        if let Some(z) = zero_hit {
            t_next = t_next.min(z);
        }
        if let Some(g) = target_hit {
            t_next = t_next.min(g);
        }

        b += slope * (t_next - t);
        t = t_next;
        if zero_hit == Some(t) {
            b = 0.0;
        }
        if target_hit == Some(t) {
            b = target.expect("target set when hit scheduled");
        }

        if t == next_transition {
            if serving {
                serving = false;
                if target.is_none() {
                    target = Some(b);
                }
                next_transition = t + halt;
            } else {
                serving = true;
                if first_halt_end.is_none() {
                    first_halt_end = Some(t);
                    recovering = true;
                }
                window_k += 1;
                next_transition = window_k as f64 * period;
            }
        }
        if recovering && b <= target.expect("recovery implies a target") {
            catch_up = Some(t - first_halt_end.expect("recovery starts at a halt end"));
            recovering = false;
        }
        if t == next_arrival {
            b += 1.0;
            next_arrival = t + draw_gap(&mut rng);
        }
        if t == next_sample && next_sample <= horizon {
            samples.push((t, b));
            sample_k += 1;
        }
        if t >= horizon {
            break;
        }
    }
    Ok(BacklogTrace { mode, samples, catch_up_s: catch_up })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lambda: f64, mu: f64, t_dec: f64) -> RateConfig {
        RateConfig { lambda, mu, t_dec, c_tok: 0.02, l_tokens: 100.0 }
    }

    #[test]
    fn window_backlog_is_rate_times_pause() {
        assert_eq!(backlog_closed_form(&cfg(1.0, 2.0, 10.0)), 10.0);
        assert_eq!(backlog_closed_form(&cfg(2.0, 4.0, 0.0)), 0.0);
        assert_eq!(backlog_closed_form(&cfg(0.5, 1.0, 4.0)), 2.0);
    }

    #[test]
    fn catch_up_scales_with_utilization_and_diverges_at_one() {
        assert_eq!(catch_up_closed_form(&cfg(1.0, 2.0, 10.0)), CatchUp::Finite(10.0));
        let v = catch_up_closed_form(&cfg(0.9, 1.0, 5.0)).finite().unwrap();
        assert!((v - 45.0).abs() < 1e-12, "rho 0.9 multiplies the pause by 9, got {v}");
        assert_eq!(catch_up_closed_form(&cfg(2.0, 2.0, 1.0)), CatchUp::Divergent);
        assert_eq!(catch_up_closed_form(&cfg(3.0, 2.0, 1.0)), CatchUp::Divergent);
    }

    #[test]
    fn answer_length_buys_lag_linearly() {
        let base = cfg(1.0, 2.0, 10.0);
        assert_eq!(quality_coupling(&base), CatchUp::Finite(2.0));
        let mut zero = base;
        zero.l_tokens = 0.0;
        assert_eq!(quality_coupling(&zero), CatchUp::Finite(0.0));
        let mut double = base;
        double.l_tokens = 200.0;
        assert_eq!(
            quality_coupling(&double).finite().unwrap(),
            2.0 * quality_coupling(&base).finite().unwrap()
        );
        let mut prev = 0.0;
        for i in 1..10 {
            let rho = i as f64 / 10.0;
            let c = cfg(rho, 1.0, 1.0);
            let q = quality_coupling(&c).finite().unwrap();
            assert!(q > prev, "quality cost must grow with utilization");
            prev = q;
        }
    }

    #[test]
    fn interleaved_measurement_matches_the_closed_form_exactly() {
        let c = cfg(1.0, 2.0, 10.0);
        let opts = SimOptions::new(100.0, 5.0, 40.0);
        let trace = simulate(&c, LatencyMode::Interleaved, &opts).unwrap();
        let measured = trace.catch_up_s.expect("subcritical queue must recover");
        let predicted = catch_up_closed_form(&c).finite().unwrap();
        assert!(
            (measured - predicted).abs() / predicted < 1e-12,
            "fluid integration is exact: measured {measured}, predicted {predicted}"
        );
    }

    #[test]
    fn decoupled_ingestion_never_builds_backlog() {
        let c = cfg(1.0, 2.0, 10.0);
        let opts = SimOptions::new(100.0, 5.0, 40.0);
        let trace = simulate(&c, LatencyMode::Decoupled, &opts).unwrap();
        assert_eq!(trace.catch_up_s, Some(0.0));
        assert!(trace.samples.iter().all(|&(_, b)| b == 0.0));
    }

    #[test]
    fn supercritical_backlog_grows_every_cycle() {
        let c = cfg(2.1, 2.0, 5.0);
        let opts = SimOptions::new(200.0, 20.0, 20.0);
        let trace = simulate(&c, LatencyMode::Interleaved, &opts).unwrap();
        assert_eq!(trace.catch_up_s, None, "an overloaded queue never recovers");
        let boundary: Vec<f64> = trace.samples.iter().skip(1).map(|&(_, b)| b).collect();
        for pair in boundary.windows(2) {
            assert!(pair[0] < pair[1], "backlog must grow strictly across cycles");
        }
    }

    #[test]
    fn decoupled_backlog_never_exceeds_interleaved() {
        for (lambda, mu, t_dec, overhead) in
            [(1.0, 2.0, 10.0, 0.0), (0.8, 1.0, 5.0, 0.5), (2.5, 2.0, 2.0, 1.0)]
        {
            let c = cfg(lambda, mu, t_dec);
            let mut opts = SimOptions::new(150.0, 2.5, 50.0);
            opts.decode_overhead_s = overhead;
            let int = simulate(&c, LatencyMode::Interleaved, &opts).unwrap();
            let dec = simulate(&c, LatencyMode::Decoupled, &opts).unwrap();
            assert_eq!(int.samples.len(), dec.samples.len());
            for (a, b) in int.samples.iter().zip(&dec.samples) {
                assert_eq!(a.0, b.0);
                assert!(
                    b.1 <= a.1 + 1e-12,
                    "at t={} decoupled backlog {} exceeds interleaved {}",
                    a.0,
                    b.1,
                    a.1
                );
            }
        }
    }

    #[test]
    fn overhead_leaves_residual_backlog_even_when_decoupled() {
        let c = cfg(1.0, 2.0, 10.0);
        let mut opts = SimOptions::new(100.0, 1.0, 40.0);
        opts.decode_overhead_s = 2.0;
        let trace = simulate(&c, LatencyMode::Decoupled, &opts).unwrap();
        let peak = trace.samples.iter().map(|&(_, b)| b).fold(0.0, f64::max);
        assert!(peak > 0.0, "a synchronization stall must show up as backlog");
        let measured = trace.catch_up_s.unwrap();
        let expected = c.rho() / (1.0 - c.rho()) * opts.decode_overhead_s;
        assert!((measured - expected).abs() < 1e-12);
    }

    #[test]
    fn traces_are_sampled_on_a_clean_grid() {
        let c = cfg(0.5, 1.0, 4.0);
        let opts = SimOptions::new(60.0, 3.0, 20.0);
        let trace = simulate(&c, LatencyMode::Interleaved, &opts).unwrap();
        assert_eq!(trace.samples.len(), 21);
        for (i, &(t, b)) in trace.samples.iter().enumerate() {
            assert_eq!(t, i as f64 * 3.0);
            assert!(b >= 0.0, "backlog can never be negative");
        }
        for pair in trace.samples.windows(2) {
            assert!(pair[0].0 < pair[1].0, "sample times must strictly increase");
        }
    }

    #[test]
    fn poisson_arrivals_are_seeded_and_reproducible() {
        let c = cfg(1.0, 2.0, 5.0);
        let mut opts = SimOptions::new(120.0, 2.0, 30.0);
        opts.arrivals = ArrivalModel::Poisson { seed: 7 };
        let a = simulate(&c, LatencyMode::Interleaved, &opts).unwrap();
        let b = simulate(&c, LatencyMode::Interleaved, &opts).unwrap();
        assert_eq!(a, b, "same seed must reproduce the trace");
        opts.arrivals = ArrivalModel::Poisson { seed: 8 };
        let c2 = simulate(&c, LatencyMode::Interleaved, &opts).unwrap();
        assert_ne!(a.samples, c2.samples, "a different seed must change arrivals");
        assert!(a.samples.iter().all(|&(_, b)| b >= 0.0));
    }

    #[test]
    fn bad_configs_and_horizons_are_rejected() {
        let opts = SimOptions::new(100.0, 5.0, 40.0);
        let bad = RateConfig { lambda: 0.0, mu: 2.0, t_dec: 1.0, c_tok: 0.0, l_tokens: 0.0 };
        assert!(matches!(
            simulate(&bad, LatencyMode::Interleaved, &opts).unwrap_err(),
            LatencyError::InvalidConfig(_)
        ));
        let c = cfg(1.0, 2.0, 10.0);
        let mut short = opts;
        short.horizon_s = 30.0;
        assert!(matches!(
            simulate(&c, LatencyMode::Interleaved, &short).unwrap_err(),
            LatencyError::InvalidHorizon(_)
        ));
        let mut tight = opts;
        tight.decode_period_s = 10.0;
        assert!(matches!(
            simulate(&c, LatencyMode::Interleaved, &tight).unwrap_err(),
            LatencyError::InvalidConfig(_)
        ));
        let mut neg = opts;
        neg.sample_dt = 0.0;
        assert!(matches!(
            simulate(&c, LatencyMode::Interleaved, &neg).unwrap_err(),
            LatencyError::InvalidConfig(_)
        ));
    }
}
