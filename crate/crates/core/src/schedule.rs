//! Schedule generators and sampled patrol traces.
//!
//! A generator walks the patroller over sites in discrete time slots. Moving
//! between distinct sites takes the travel time of the edge; revisiting the
//! current site (a wait, or a degenerate skip that wraps a whole tour) takes
//! one slot so that arrival times strictly increase.

use crate::error::{Error, Result};
use crate::instance::PolyUtility;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

/// One arrival of the patroller at a site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Visit {
    pub site: usize,
    pub time: u64,
}

/// A stochastic (or deterministic) patrol schedule, stepped one arrival at a
/// time.
pub trait ScheduleGenerator: Send {
    /// Number of sites in the underlying instance.
    fn num_sites(&self) -> usize;

    /// Site the patroller currently occupies.
    fn position(&self) -> usize;

    /// Distribution of the next visited site as seen just before `step`,
    /// or `None` when the generator does not expose one.
    fn next_site_distribution(&self) -> Option<Vec<f64>>;

    /// Advances to the next site and returns the arrival.
    fn step(&mut self) -> Visit;
}

/// Builds independent schedule samples from per-trace seeds.
pub trait GeneratorFactory: Send + Sync {
    fn build(&self, seed: u64) -> Box<dyn ScheduleGenerator>;
    fn label(&self) -> String;
}

/// A deterministic or random site sequence driving a generator. Cloning must
/// snapshot the full sequence state (used to enumerate skip distributions).
pub trait SiteSequence: Clone + Send {
    fn current(&self) -> usize;
    /// Moves to the next site of the sequence and returns it.
    fn advance(&mut self) -> usize;
}

/// A finished sample: every arrival with time at most the horizon, starting
/// with the initial position at time 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTrace {
    visits: Vec<Visit>,
    num_sites: usize,
    horizon: u64,
}

impl ScheduleTrace {
    pub fn new(visits: Vec<Visit>, num_sites: usize, horizon: u64) -> Result<Self> {
        let mut last: Option<u64> = None;
        for v in &visits {
            if v.site >= num_sites {
                return Err(Error::Domain(format!(
                    "visit site {} out of range for {num_sites} sites",
                    v.site
                )));
            }
            if v.time > horizon {
                return Err(Error::Domain(format!(
                    "visit time {} beyond horizon {horizon}",
                    v.time
                )));
            }
            if let Some(prev) = last {
                if v.time <= prev {
                    return Err(Error::Domain(
                        "visit times must strictly increase".into(),
                    ));
                }
            }
            last = Some(v.time);
        }
        Ok(Self {
            visits,
            num_sites,
            horizon,
        })
    }

    pub fn visits(&self) -> &[Visit] {
        &self.visits
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn horizon(&self) -> u64 {
        self.horizon
    }

    /// Arrival times per site, ascending.
    pub fn visit_times(&self) -> Vec<Vec<u64>> {
        let mut times = vec![Vec::new(); self.num_sites];
        for v in &self.visits {
            times[v.site].push(v.time);
        }
        times
    }

    /// Largest gap between consecutive visits to the same site, over sites
    /// visited at least twice.
    pub fn max_return_time(&self) -> Option<u64> {
        self.visit_times()
            .iter()
            .filter_map(|ts| ts.windows(2).map(|w| w[1] - w[0]).max())
            .max()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut body = String::from("t,site\n");
        for v in &self.visits {
            body.push_str(&format!("{},{}\n", v.time, v.site));
        }
        out.write_all(body.as_bytes()).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

/// Runs a generator until the next arrival would pass the horizon.
pub fn sample_trace(gen: &mut dyn ScheduleGenerator, horizon: u64) -> Result<ScheduleTrace> {
    let num_sites = gen.num_sites();
    let mut visits = vec![Visit {
        site: gen.position(),
        time: 0,
    }];
    loop {
        let v = gen.step();
        if v.time > horizon {
            break;
        }
        if v.time <= visits.last().expect("nonempty").time {
            return Err(Error::Domain(
                "generator produced a non-increasing arrival time".into(),
            ));
        }
        visits.push(v);
    }
    ScheduleTrace::new(visits, num_sites, horizon)
}

/// Travel-time lookup shared across generators; same-site moves dwell one
/// slot.
#[derive(Debug, Clone)]
pub struct TravelTimes {
    travel: Arc<Vec<Vec<u64>>>,
}

impl TravelTimes {
    pub fn new(travel: Vec<Vec<u64>>) -> Self {
        Self {
            travel: Arc::new(travel),
        }
    }

    pub fn num_sites(&self) -> usize {
        self.travel.len()
    }

    pub fn gap(&self, from: usize, to: usize) -> u64 {
        if from == to {
            1
        } else {
            self.travel[from][to]
        }
    }

    pub fn matrix(&self) -> &[Vec<u64>] {
        &self.travel
    }
}

/// Endless repetition of a fixed site list.
#[derive(Debug, Clone)]
pub struct CyclicSequence {
    period: Arc<Vec<usize>>,
    at: usize,
}

impl CyclicSequence {
    pub fn new(period: Vec<usize>) -> Result<Self> {
        if period.is_empty() {
            return Err(Error::Domain("cyclic sequence needs at least one site".into()));
        }
        Ok(Self {
            period: Arc::new(period),
            at: 0,
        })
    }
}

impl SiteSequence for CyclicSequence {
    fn current(&self) -> usize {
        self.period[self.at]
    }

    fn advance(&mut self) -> usize {
        self.at = (self.at + 1) % self.period.len();
        self.period[self.at]
    }
}

/// Follows a site sequence literally; the exposed next-site distribution is
/// a point mass.
#[derive(Debug, Clone)]
pub struct DeterministicGenerator<S: SiteSequence> {
    seq: S,
    travel: TravelTimes,
    time: u64,
}

impl<S: SiteSequence> DeterministicGenerator<S> {
    pub fn new(seq: S, travel: TravelTimes) -> Self {
        Self {
            seq,
            travel,
            time: 0,
        }
    }
}

impl<S: SiteSequence> ScheduleGenerator for DeterministicGenerator<S> {
    fn num_sites(&self) -> usize {
        self.travel.num_sites()
    }

    fn position(&self) -> usize {
        self.seq.current()
    }

    fn next_site_distribution(&self) -> Option<Vec<f64>> {
        let mut probe = self.seq.clone();
        let next = probe.advance();
        let mut dist = vec![0.0; self.num_sites()];
        dist[next] = 1.0;
        Some(dist)
    }

    fn step(&mut self) -> Visit {
        let from = self.seq.current();
        let to = self.seq.advance();
        self.time += self.travel.gap(from, to);
        Visit {
            site: to,
            time: self.time,
        }
    }
}

/// Factory around a deterministic sequence; the seed is ignored, every
/// sample is the same schedule.
pub struct DeterministicFactory<S: SiteSequence + Sync + 'static> {
    base: S,
    travel: TravelTimes,
    label: String,
}

impl<S: SiteSequence + Sync + 'static> DeterministicFactory<S> {
    pub fn new(base: S, travel: TravelTimes, label: impl Into<String>) -> Self {
        Self {
            base,
            travel,
            label: label.into(),
        }
    }
}

impl<S: SiteSequence + Sync + 'static> GeneratorFactory for DeterministicFactory<S> {
    fn build(&self, _seed: u64) -> Box<dyn ScheduleGenerator> {
        Box::new(DeterministicGenerator::new(
            self.base.clone(),
            self.travel.clone(),
        ))
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Empirical maximal reward per site: the attacker waits at j and collects
/// utility over a full between-visit interval.
#[derive(Debug, Clone)]
pub struct SiteExposure {
    pub site: usize,
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    /// Set when some trace saw the site fewer than twice and the horizon was
    /// used as the interval, making the estimate a lower bound.
    pub lower_bound: bool,
}

#[derive(Debug, Clone)]
pub struct EmrReport {
    pub per_site: Vec<SiteExposure>,
    /// max over sites of the mean exposure
    pub emr: f64,
    pub argmax_site: usize,
}

/// Estimates the expected maximal reward from sampled traces: per site, the
/// mean over observed between-visit gaps of the cumulative utility across
/// the gap.
pub fn emr_estimate(traces: &[ScheduleTrace], utilities: &[PolyUtility]) -> Result<EmrReport> {
    let num_sites = traces
        .first()
        .map(|t| t.num_sites())
        .ok_or_else(|| Error::Domain("emr_estimate needs at least one trace".into()))?;
    if utilities.len() != num_sites {
        return Err(Error::Domain(format!(
            "expected {num_sites} utilities, got {}",
            utilities.len()
        )));
    }
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); num_sites];
    let mut lower = vec![false; num_sites];
    for trace in traces {
        if trace.num_sites() != num_sites {
            return Err(Error::Domain("traces disagree on site count".into()));
        }
        for (j, times) in trace.visit_times().iter().enumerate() {
            if times.len() >= 2 {
                for w in times.windows(2) {
                    values[j].push(utilities[j].cumulative(w[1] - w[0]));
                }
            } else {
                values[j].push(utilities[j].cumulative(trace.horizon()));
                lower[j] = true;
            }
        }
    }
    let per_site: Vec<SiteExposure> = values
        .iter()
        .enumerate()
        .map(|(j, vals)| {
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let stderr = if n > 1 {
                let var =
                    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            SiteExposure {
                site: j,
                mean,
                stderr,
                samples: n,
                lower_bound: lower[j],
            }
        })
        .collect();
    let argmax_site = per_site
        .iter()
        .enumerate()
        .max_by(|(_, a), (_, b)| a.mean.partial_cmp(&b.mean).expect("finite means"))
        .map(|(j, _)| j)
        .expect("at least one site");
    Ok(EmrReport {
        emr: per_site[argmax_site].mean,
        argmax_site,
        per_site,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyUnit {
    Nats,
    Bits,
}

/// Shannon entropy of a distribution; zero-probability terms contribute
/// nothing, so point masses give exactly 0.
pub fn entropy(dist: &[f64], unit: EntropyUnit) -> f64 {
    let nats: f64 = dist
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    match unit {
        EntropyUnit::Nats => nats,
        EntropyUnit::Bits => nats / std::f64::consts::LN_2,
    }
}

#[derive(Debug, Clone)]
pub struct EntropyRateReport {
    pub rate: f64,
    pub unit: EntropyUnit,
    pub steps: usize,
    /// Steps where the generator exposed no distribution (excluded from the
    /// average).
    pub unexposed_steps: usize,
}

/// Average per-step entropy of the exposed next-site distribution along one
/// sampled run of `steps` moves.
pub fn entropy_rate_estimate(
    gen: &mut dyn ScheduleGenerator,
    steps: usize,
    unit: EntropyUnit,
) -> Result<EntropyRateReport> {
    if steps == 0 {
        return Err(Error::Domain("entropy estimate needs at least one step".into()));
    }
    let mut total = 0.0;
    let mut exposed = 0usize;
    for _ in 0..steps {
        if let Some(dist) = gen.next_site_distribution() {
            total += entropy(&dist, unit);
            exposed += 1;
        }
        gen.step();
    }
    Ok(EntropyRateReport {
        rate: if exposed > 0 { total / exposed as f64 } else { 0.0 },
        unit,
        steps,
        unexposed_steps: steps - exposed,
    })
}
