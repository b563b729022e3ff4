//! SG: schedules from a state machine over per-site elapsed times. The
//! minimum-bottleneck cycle of the state graph is the optimal deterministic
//! schedule within the utility cap; a biased random walk on the same state
//! space yields the randomized variant.

use crate::error::{Error, Result};
use crate::instance::{GraphInstance, PolyUtility};
use crate::schedule::{
    emr_estimate, sample_trace, CyclicSequence, DeterministicGenerator, GeneratorFactory,
    ScheduleGenerator, TravelTimes, Visit,
};
use crate::tours::{bgt_generator, bgt_plan, GroupOrder};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

/// Default limit on materialized states during the breadth-first closure.
pub const DEFAULT_MAX_STATES: usize = 2_000_000;
/// Node limit for the cubic bottleneck-cycle search.
const MINIMAX_NODE_LIMIT: usize = 1000;

/// Defender-side state: slots elapsed since the patroller last left each
/// site (zero for the current position and for never-departed clocks at the
/// start), plus the position itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StateNode {
    pub elapsed: Vec<u64>,
    pub position: usize,
}

impl StateNode {
    /// Accrued-utility component per site.
    pub fn components(&self, utilities: &[PolyUtility]) -> Vec<f64> {
        self.elapsed
            .iter()
            .zip(utilities)
            .map(|(&e, h)| h.cumulative(e))
            .collect()
    }
}

/// Shared instance data the state space is built over.
#[derive(Debug, Clone)]
struct SgContext {
    travel: Arc<Vec<Vec<u64>>>,
    utilities: Arc<Vec<PolyUtility>>,
}

impl SgContext {
    fn new(instance: &GraphInstance) -> Self {
        Self {
            travel: Arc::new(instance.travel_matrix().to_vec()),
            utilities: Arc::new(instance.utilities().to_vec()),
        }
    }

    fn num_sites(&self) -> usize {
        self.travel.len()
    }

    /// Applies the move rule and returns (successor, arc weight): every
    /// clock other than the target advances by the travel time, the target
    /// resets, and the weight is the worst utility any site could have
    /// accrued by the arrival, the captured attacker included.
    fn successor(&self, state: &StateNode, target: usize) -> (StateNode, f64) {
        let d = self.travel[state.position][target];
        let mut weight = 0.0f64;
        let mut elapsed = Vec::with_capacity(state.elapsed.len());
        for (i, (&e, h)) in state.elapsed.iter().zip(self.utilities.iter()).enumerate() {
            weight = weight.max(h.cumulative(e + d));
            elapsed.push(if i == target || h.is_zero() {
                // zero utilities never influence weights; pinning their
                // clocks keeps the closure finite
                0
            } else {
                e + d
            });
        }
        (
            StateNode {
                elapsed,
                position: target,
            },
            weight,
        )
    }

    fn successors(&self, state: &StateNode) -> Vec<(StateNode, f64)> {
        (0..self.num_sites())
            .filter(|&t| t != state.position)
            .map(|t| self.successor(state, t))
            .collect()
    }
}

/// Breadth-first closure of the state space under a utility cap.
pub struct StateGraph {
    ctx: SgContext,
    nodes: Vec<StateNode>,
    /// per node: (successor index, bottleneck arc weight), capped
    arcs: Vec<Vec<(usize, f64)>>,
    cap: f64,
}

impl StateGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[StateNode] {
        &self.nodes
    }

    pub fn arcs(&self, node: usize) -> &[(usize, f64)] {
        &self.arcs[node]
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn num_sites(&self) -> usize {
        self.ctx.num_sites()
    }
}

pub fn sg_build(instance: &GraphInstance, cap: f64) -> Result<StateGraph> {
    sg_build_with_limit(instance, cap, DEFAULT_MAX_STATES)
}

/// Expands states reachable from the all-zero start within the cap. An arc
/// is kept only when its bottleneck weight stays at or below the cap, which
/// also prunes every state whose own components would exceed it.
pub fn sg_build_with_limit(
    instance: &GraphInstance,
    cap: f64,
    max_states: usize,
) -> Result<StateGraph> {
    if !(cap > 0.0 && cap.is_finite()) {
        return Err(Error::Domain(format!(
            "utility cap must be positive, got {cap}"
        )));
    }
    let ctx = SgContext::new(instance);
    let start = StateNode {
        elapsed: vec![0; instance.len()],
        position: 0,
    };
    let mut index: HashMap<StateNode, usize> = HashMap::new();
    let mut nodes = vec![start.clone()];
    index.insert(start, 0);
    let mut arcs: Vec<Vec<(usize, f64)>> = vec![Vec::new()];
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        let state = nodes[u].clone();
        for (succ, weight) in ctx.successors(&state) {
            if weight > cap {
                continue;
            }
            let v = match index.get(&succ) {
                Some(&v) => v,
                None => {
                    if nodes.len() >= max_states {
                        return Err(Error::ResourceCap(format!(
                            "state graph exceeded {max_states} states; lower the cap"
                        )));
                    }
                    let v = nodes.len();
                    nodes.push(succ.clone());
                    index.insert(succ, v);
                    arcs.push(Vec::new());
                    queue.push_back(v);
                    v
                }
            };
            arcs[u].push((v, weight));
        }
    }
    Ok(StateGraph { ctx, nodes, arcs, cap })
}

/// Default cap: 1.5 times the empirical maximal reward of the deterministic
/// grouped schedule, a feasible upper bound on the optimum.
pub fn sg_default_cap(instance: &GraphInstance) -> Result<f64> {
    let plan = bgt_plan(instance, GroupOrder::Tree)?;
    let n = instance.len() as u64;
    let mut horizon = 32 * n * instance.diameter().max(1);
    for _ in 0..20 {
        let mut gen = bgt_generator(&plan, instance);
        let trace = sample_trace(&mut gen, horizon)?;
        if trace.visit_times().iter().all(|ts| ts.len() >= 3) {
            let report = emr_estimate(
                &[trace],
                instance.utilities(),
            )?;
            return Ok(1.5 * report.emr);
        }
        horizon *= 2;
    }
    Err(Error::NoFeasibleSchedule(
        "grouped schedule failed to revisit every site within the probe horizon".into(),
    ))
}

/// The optimal deterministic schedule inside the cap: a periodic site list
/// and its bottleneck value.
#[derive(Debug, Clone, PartialEq)]
pub struct SgCycle {
    pub sites: Vec<usize>,
    pub bottleneck: f64,
}

/// Minimum-bottleneck cycle via the minimax Floyd-Warshall relaxation
/// dist(u,v) = min over mid of max(dist(u,mid), dist(mid,v)), then a
/// breadth-first reconstruction over arcs within the optimal bottleneck.
pub fn sg_optimal_deterministic(sg: &StateGraph) -> Result<SgCycle> {
    let v = sg.len();
    if v == 0 {
        return Err(Error::NoFeasibleSchedule("empty state graph".into()));
    }
    if v > MINIMAX_NODE_LIMIT {
        return Err(Error::ResourceCap(format!(
            "{v} states exceed the bottleneck-search limit {MINIMAX_NODE_LIMIT}; lower the cap"
        )));
    }
    const INF: f64 = f64::INFINITY;
    let mut dist = vec![vec![INF; v]; v];
    for u in 0..v {
        for &(t, w) in sg.arcs(u) {
            if w < dist[u][t] {
                dist[u][t] = w;
            }
        }
    }
    for mid in 0..v {
        for u in 0..v {
            let du = dist[u][mid];
            if du == INF {
                continue;
            }
            for t in 0..v {
                let cand = du.max(dist[mid][t]);
                if cand < dist[u][t] {
                    dist[u][t] = cand;
                }
            }
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for u in 0..v {
        let d = dist[u][u];
        if d.is_finite() && best.map_or(true, |(_, b)| d < b) {
            best = Some((u, d));
        }
    }
    let (start, bottleneck) = best.ok_or_else(|| {
        Error::NoFeasibleSchedule(
            "the pruned state graph is acyclic; raise the utility cap".into(),
        )
    })?;

    // shortest cycle through `start` using only arcs within the bottleneck
    let mut parent = vec![usize::MAX; v];
    let mut seen = vec![false; v];
    let mut queue = VecDeque::new();
    let mut closing: Option<usize> = None;
    seen[start] = true;
    queue.push_back(start);
    'bfs: while let Some(u) = queue.pop_front() {
        for &(t, w) in sg.arcs(u) {
            if w > bottleneck {
                continue;
            }
            if t == start {
                closing = Some(u);
                break 'bfs;
            }
            if !seen[t] {
                seen[t] = true;
                parent[t] = u;
                queue.push_back(t);
            }
        }
    }
    let mut cycle_states = Vec::new();
    let mut cur = closing.ok_or_else(|| {
        Error::NoFeasibleSchedule("bottleneck cycle reconstruction failed".into())
    })?;
    while cur != start {
        cycle_states.push(cur);
        cur = parent[cur];
    }
    cycle_states.push(start);
    cycle_states.reverse();
    let sites = cycle_states
        .iter()
        .map(|&s| sg.nodes()[s].position)
        .collect();
    Ok(SgCycle { sites, bottleneck })
}

/// Deterministic generator cycling the optimal schedule.
pub fn sg_cycle_generator(
    cycle: &SgCycle,
    instance: &GraphInstance,
) -> Result<DeterministicGenerator<CyclicSequence>> {
    Ok(DeterministicGenerator::new(
        CyclicSequence::new(cycle.sites.clone())?,
        TravelTimes::new(instance.travel_matrix().to_vec()),
    ))
}

/// Walks the state space with transition weight c proportional to
/// 1/(max accrued component)^alpha, favoring successors that leave less on
/// the table; states expand lazily, so no cap is involved.
pub struct SgRandomGenerator {
    ctx: SgContext,
    alpha: f64,
    rng: ChaCha8Rng,
    state: StateNode,
    time: u64,
}

impl SgRandomGenerator {
    pub fn new(sg: &StateGraph, alpha: f64, seed: u64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!(
                "state-walk bias must satisfy alpha >= 0, got {alpha}"
            )));
        }
        if sg.num_sites() < 2 {
            return Err(Error::Domain("state walk needs at least 2 sites".into()));
        }
        Ok(Self {
            ctx: sg.ctx.clone(),
            alpha,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: sg.nodes()[0].clone(),
            time: 0,
        })
    }

    /// Walks the state space directly over an instance, without materializing
    /// the capped closure first. The walk expands states lazily, so this is
    /// the cheap entry point for sampling.
    pub fn from_instance(instance: &GraphInstance, alpha: f64, seed: u64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!(
                "state-walk bias must satisfy alpha >= 0, got {alpha}"
            )));
        }
        if instance.len() < 2 {
            return Err(Error::Domain("state walk needs at least 2 sites".into()));
        }
        let ctx = SgContext::new(instance);
        let state = StateNode {
            elapsed: vec![0; instance.len()],
            position: 0,
        };
        Ok(Self {
            ctx,
            alpha,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state,
            time: 0,
        })
    }

    /// Successor probabilities in log space: ln c = -alpha ln(max component),
    /// with an all-zero successor weighted as c = 1.
    fn successor_probs(&self) -> Vec<(StateNode, f64)> {
        let succs = self.ctx.successors(&self.state);
        let logs: Vec<f64> = succs
            .iter()
            .map(|(s, _)| {
                let m = s
                    .components(&self.ctx.utilities)
                    .into_iter()
                    .fold(0.0f64, f64::max);
                if m > 0.0 {
                    -self.alpha * m.ln()
                } else {
                    0.0
                }
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|&l| (l - top).exp()).collect();
        let total: f64 = exps.iter().sum();
        succs
            .into_iter()
            .zip(exps)
            .map(|((s, _), e)| (s, e / total))
            .collect()
    }
}

impl ScheduleGenerator for SgRandomGenerator {
    fn num_sites(&self) -> usize {
        self.ctx.num_sites()
    }

    fn position(&self) -> usize {
        self.state.position
    }

    fn next_site_distribution(&self) -> Option<Vec<f64>> {
        let mut dist = vec![0.0; self.num_sites()];
        for (s, p) in self.successor_probs() {
            dist[s.position] += p;
        }
        Some(dist)
    }

    fn step(&mut self) -> Visit {
        let probs = self.successor_probs();
        let mut u: f64 = self.rng.gen();
        let mut picked = probs.len() - 1;
        for (k, (_, p)) in probs.iter().enumerate() {
            if u < *p {
                picked = k;
                break;
            }
            u -= p;
        }
        let (next, _) = probs.into_iter().nth(picked).expect("picked in range");
        self.time += self.ctx.travel[self.state.position][next.position];
        self.state = next;
        Visit {
            site: self.state.position,
            time: self.time,
        }
    }
}

/// Factory for independent state-walk samples.
pub struct SgRandomFactory {
    sg: Arc<StateGraph>,
    alpha: f64,
}

impl SgRandomFactory {
    pub fn new(sg: Arc<StateGraph>, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Domain(format!(
                "state-walk bias must satisfy alpha >= 0, got {alpha}"
            )));
        }
        Ok(Self { sg, alpha })
    }
}

impl GeneratorFactory for SgRandomFactory {
    fn build(&self, seed: u64) -> Box<dyn ScheduleGenerator> {
        Box::new(SgRandomGenerator::new(&self.sg, self.alpha, seed).expect("validated"))
    }

    fn label(&self) -> String {
        "sg_rand".into()
    }
}

/// Lazy state-walk factory over an instance: no capped closure is built, so
/// it stays cheap at sizes where the full state graph would blow up.
pub struct SgWalkFactory {
    instance: GraphInstance,
    alpha: f64,
}

impl SgWalkFactory {
    pub fn new(instance: GraphInstance, alpha: f64) -> Result<Self> {
        // validate once up front so build() cannot fail
        SgRandomGenerator::from_instance(&instance, alpha, 0)?;
        Ok(Self { instance, alpha })
    }
}

impl GeneratorFactory for SgWalkFactory {
    fn build(&self, seed: u64) -> Box<dyn ScheduleGenerator> {
        Box::new(
            SgRandomGenerator::from_instance(&self.instance, self.alpha, seed)
                .expect("validated"),
        )
    }

    fn label(&self) -> String {
        "sg_rand".into()
    }
}
