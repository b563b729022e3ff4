//! Empirical attacker best response against arbitrary schedule generators,
//! under the three visibility models.

use crate::error::{Error, Result};
use crate::harness::seeding::derive_seed;
use crate::instance::{GraphInstance, PolyUtility};
use crate::schedule::{sample_trace, GeneratorFactory, ScheduleTrace};
use crate::tours::{bgt_generator, bgt_plan, GroupOrder};
use crate::Visibility;
use rayon::prelude::*;
use serde::Serialize;

/// Result of an empirical best-response search.
#[derive(Debug, Clone, Serialize)]
pub struct PayoffReport {
    pub model: Visibility,
    /// pooled mean payoff at the maximizing cell
    pub value: f64,
    pub site_attacked: usize,
    /// observed patroller site conditioning the attack start: the watched
    /// site under full visibility, the attacked site under local visibility,
    /// absent without visibility
    pub condition: Option<usize>,
    pub duration: u64,
    /// sampled traces
    pub samples: usize,
    /// qualifying attack events at the maximizing cell
    pub events: usize,
    /// standard error of per-trace mean payoffs at the maximizing cell
    pub stderr: f64,
    /// payoff underestimate bound from aligning attacks to arrival slots
    pub alignment_bound: f64,
    pub zeta: Option<f64>,
    pub normalized_value: Option<f64>,
    /// cells (condition, target) that had no qualifying events
    pub uncovered: Vec<(Option<usize>, usize)>,
}

/// Search parameters for [`best_response_empirical`].
#[derive(Debug, Clone)]
pub struct EmpiricalConfig {
    pub model: Visibility,
    pub penalty: f64,
    pub horizon: u64,
    pub samples: usize,
    pub t_max: u64,
    pub seed: u64,
}

/// Realized payoff of one attack on one trace: utilities accrue per slot
/// until the duration ends or the patroller arrives; an arrival at relative
/// time t' (at most T) collects through t' and charges the penalty.
pub fn attack_payoff(
    trace: &ScheduleTrace,
    target: usize,
    start: u64,
    duration: u64,
    utility: &PolyUtility,
    penalty: f64,
) -> Result<f64> {
    if duration < 1 {
        return Err(Error::Domain("attack duration must be at least 1".into()));
    }
    if start + duration > trace.horizon() {
        return Err(Error::Horizon(format!(
            "attack window ({start}, {}] exceeds the trace horizon {}",
            start + duration,
            trace.horizon()
        )));
    }
    let times = &trace.visit_times()[target];
    let first_after = match times.partition_point(|&t| t <= start) {
        k if k < times.len() => Some(times[k]),
        _ => None,
    };
    Ok(match first_after {
        Some(t) if t - start <= duration => utility.cumulative(t - start) - penalty,
        _ => utility.cumulative(duration),
    })
}

/// Worst payoff underestimate from aligning attack starts to arrival slots:
/// the utility a target can accrue while the patroller crosses one edge.
pub fn alignment_bound(travel: &[Vec<u64>], utilities: &[PolyUtility]) -> f64 {
    let n = travel.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        for (j, u) in utilities.iter().enumerate() {
            if i != j {
                worst = worst.max(u.cumulative(travel[i][j]));
            }
        }
    }
    worst
}

/// Relative capture times of one conditioned cell, pooled over events:
/// `hist[t]` counts captures exactly t slots in, `far` counts windows the
/// patroller never reaches within `t_max`.
#[derive(Debug, Clone)]
struct CellHist {
    hist: Vec<u64>,
    far: u64,
}

impl CellHist {
    fn new(t_max: u64) -> Self {
        Self {
            hist: vec![0; t_max as usize + 1],
            far: 0,
        }
    }

    fn record(&mut self, rel: Option<u64>, t_max: u64) {
        match rel {
            Some(r) if r <= t_max => self.hist[r as usize] += 1,
            _ => self.far += 1,
        }
    }

    fn events(&self) -> u64 {
        self.hist.iter().sum::<u64>() + self.far
    }

    /// Best duration for this cell: sweeps T once, carrying prefix capture
    /// counts and captured-payoff sums.
    fn best_duration(&self, cum: &[f64], penalty: f64, t_max: u64) -> Option<(f64, u64)> {
        let total = self.events();
        if total == 0 {
            return None;
        }
        let mut captured = 0u64;
        let mut captured_sum = 0.0;
        let mut best: Option<(f64, u64)> = None;
        for t in 1..=t_max {
            captured += self.hist[t as usize];
            captured_sum += self.hist[t as usize] as f64 * cum[t as usize];
            let uncaught = total - captured;
            let mean = (captured_sum - penalty * captured as f64
                + uncaught as f64 * cum[t as usize])
                / total as f64;
            if best.map_or(true, |(v, _)| mean > v) {
                best = Some((mean, t));
            }
        }
        best
    }
}

/// First arrival at `target` strictly after `start`, as a relative time.
fn relative_capture(times: &[u64], start: u64) -> Option<u64> {
    let k = times.partition_point(|&t| t <= start);
    times.get(k).map(|&t| t - start)
}

/// Start events of a trace under a model: (condition site, start slot).
/// Only events whose full window fits the horizon qualify, so every
/// duration sees the same event set.
fn start_events(trace: &ScheduleTrace, t_max: u64) -> Vec<(usize, u64)> {
    trace
        .visits()
        .iter()
        .filter(|v| v.time + t_max <= trace.horizon())
        .map(|v| (v.site, v.time))
        .collect()
}

/// Empirical attacker best response: samples traces from the factory, pools
/// qualifying attack events per conditioned cell, and maximizes the mean
/// payoff over (condition, target, duration). Standard errors come from
/// per-trace batch means at the maximizing cell.
pub fn best_response_empirical(
    factory: &dyn GeneratorFactory,
    utilities: &[PolyUtility],
    cfg: &EmpiricalConfig,
) -> Result<PayoffReport> {
    if cfg.samples < 1 {
        return Err(Error::Domain("need at least one sampled trace".into()));
    }
    if cfg.t_max < 1 || cfg.t_max >= cfg.horizon {
        return Err(Error::Horizon(format!(
            "need 1 <= T_max < horizon, got T_max = {}, horizon = {}",
            cfg.t_max, cfg.horizon
        )));
    }
    let traces: Vec<ScheduleTrace> = (0..cfg.samples)
        .into_par_iter()
        .map(|k| {
            let mut gen = factory.build(derive_seed(cfg.seed, k as u64));
            sample_trace(gen.as_mut(), cfg.horizon)
        })
        .collect::<Result<Vec<_>>>()?;
    best_response_on_traces(&traces, utilities, cfg)
}

/// The same search over an already sampled trace set (used by the exact
/// same-trace comparisons across penalties and models).
pub fn best_response_on_traces(
    traces: &[ScheduleTrace],
    utilities: &[PolyUtility],
    cfg: &EmpiricalConfig,
) -> Result<PayoffReport> {
    let n = utilities.len();
    let t_max = cfg.t_max;
    let cum: Vec<Vec<f64>> = utilities
        .iter()
        .map(|u| (0..=t_max).map(|t| u.cumulative(t)).collect())
        .collect();

    // conditions: one per site under full visibility, a single pooled
    // condition otherwise
    let conditions = match cfg.model {
        Visibility::Full => n,
        Visibility::Local | Visibility::None => 1,
    };
    let mut cells: Vec<Vec<CellHist>> = (0..conditions)
        .map(|_| (0..n).map(|_| CellHist::new(t_max)).collect())
        .collect();

    for trace in traces {
        let times = trace.visit_times();
        for (site, start) in start_events(trace, t_max) {
            match cfg.model {
                Visibility::Full => {
                    for j in 0..n {
                        cells[site][j].record(relative_capture(&times[j], start), t_max);
                    }
                }
                Visibility::Local => {
                    // departures from j condition attacks on j only
                    cells[0][site].record(relative_capture(&times[site], start), t_max);
                }
                Visibility::None => {
                    for j in 0..n {
                        cells[0][j].record(relative_capture(&times[j], start), t_max);
                    }
                }
            }
        }
    }

    let mut best: Option<(f64, usize, usize, u64)> = None;
    let mut uncovered = Vec::new();
    for j in 0..n {
        for c in 0..conditions {
            match cells[c][j].best_duration(&cum[j], cfg.penalty, t_max) {
                Some((value, t)) => {
                    if best.map_or(true, |(v, _, _, _)| value > v) {
                        best = Some((value, j, c, t));
                    }
                }
                None => {
                    let cond = match cfg.model {
                        Visibility::Full => Some(c),
                        Visibility::Local => Some(j),
                        Visibility::None => None,
                    };
                    uncovered.push((cond, j));
                }
            }
        }
    }
    let (value, site_attacked, cond_idx, duration) = best.ok_or_else(|| {
        Error::NoFeasibleSchedule(
            "no attack cell had qualifying events; extend the horizon".into(),
        )
    })?;
    let condition = match cfg.model {
        Visibility::Full => Some(cond_idx),
        Visibility::Local => Some(site_attacked),
        Visibility::None => None,
    };

    // second pass: per-trace means at the maximizing cell
    let mut trace_means = Vec::new();
    let mut events_total = 0usize;
    for trace in traces {
        let times = trace.visit_times();
        let mut sum = 0.0;
        let mut count = 0usize;
        for (site, start) in start_events(trace, t_max) {
            let qualifies = match cfg.model {
                Visibility::Full => Some(site) == condition,
                Visibility::Local => site == site_attacked,
                Visibility::None => true,
            };
            if !qualifies {
                continue;
            }
            let payoff = match relative_capture(&times[site_attacked], start) {
                Some(r) if r <= duration => cum[site_attacked][r as usize] - cfg.penalty,
                _ => cum[site_attacked][duration as usize],
            };
            sum += payoff;
            count += 1;
        }
        if count > 0 {
            trace_means.push(sum / count as f64);
            events_total += count;
        }
    }
    let stderr = if trace_means.len() > 1 {
        let m = trace_means.iter().sum::<f64>() / trace_means.len() as f64;
        let var = trace_means.iter().map(|x| (x - m).powi(2)).sum::<f64>()
            / (trace_means.len() as f64 - 1.0);
        (var / trace_means.len() as f64).sqrt()
    } else {
        0.0
    };

    Ok(PayoffReport {
        model: cfg.model,
        value,
        site_attacked,
        condition,
        duration,
        samples: traces.len(),
        events: events_total,
        stderr,
        alignment_bound: 0.0,
        zeta: None,
        normalized_value: None,
        uncovered,
    })
}

/// Attaches the arrival-alignment underestimate bound for an instance.
pub fn with_alignment_bound(mut report: PayoffReport, instance: &GraphInstance) -> PayoffReport {
    report.alignment_bound = alignment_bound(instance.travel_matrix(), instance.utilities());
    report
}

/// Normalization constant: the attacker's payoff against the deterministic
/// grouped schedule under the same model, penalty, horizon, and durations.
pub fn bgt_zeta(instance: &GraphInstance, cfg: &EmpiricalConfig) -> Result<f64> {
    let plan = bgt_plan(instance, GroupOrder::Tree)?;
    let mut gen = bgt_generator(&plan, instance);
    let trace = sample_trace(&mut gen, cfg.horizon)?;
    let report = best_response_on_traces(&[trace], instance.utilities(), cfg)?;
    Ok(report.value)
}

/// Divides value and error by the normalization constant.
pub fn normalize(mut report: PayoffReport, zeta: f64) -> Result<PayoffReport> {
    if !(zeta > 0.0 && zeta.is_finite()) {
        return Err(Error::Domain(format!(
            "normalization constant must be positive, got {zeta}"
        )));
    }
    report.zeta = Some(zeta);
    report.normalized_value = Some(report.value / zeta);
    report.stderr /= zeta;
    Ok(report)
}
