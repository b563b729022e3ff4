//! Closed-form analysis of first-order Markov-chain defender strategies:
//! first-visit probabilities, hitting times, stationary distribution, Kemeny
//! constant, and attacker payoffs under the three visibility models.

use crate::error::{Error, Result};
use crate::instance::PolyUtility;
use crate::Visibility;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Default dense-tensor entry cap (f64 entries) for the first-visit tensor.
pub const DEFAULT_TENSOR_ENTRY_CAP: usize = 64_000_000;

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic transition matrix over sites. Self-loops are permitted and
/// take one time slot (the patroller waits in place).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    p: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self> {
        let n = p.len();
        if n == 0 {
            return Err(Error::InvalidTransitionMatrix("matrix is empty".into()));
        }
        for (i, row) in p.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidTransitionMatrix(format!(
                    "row {i} has length {}, expected {n}",
                    row.len()
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidTransitionMatrix(format!(
                    "row {i} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|x| !(0.0..=1.0 + ROW_SUM_TOL).contains(x)) {
                return Err(Error::InvalidTransitionMatrix(format!(
                    "row {i} has an entry outside [0,1]"
                )));
            }
        }
        Ok(Self { p })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.p[from][to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.p[from]
    }

    /// First pair (i,j) with j unreachable from i along positive-probability
    /// edges, if any.
    pub fn find_unreachable_pair(&self) -> Option<(usize, usize)> {
        let n = self.len();
        for i in 0..n {
            let mut seen = vec![false; n];
            let mut queue = vec![i];
            seen[i] = true;
            while let Some(u) = queue.pop() {
                for v in 0..n {
                    if !seen[v] && self.p[u][v] > 0.0 {
                        seen[v] = true;
                        queue.push(v);
                    }
                }
            }
            if let Some(j) = seen.iter().position(|s| !s) {
                return Some((i, j));
            }
        }
        None
    }

    pub fn is_irreducible(&self) -> bool {
        self.find_unreachable_pair().is_none()
    }
}

/// Serializes a real matrix as row-major arrays of decimal strings.
pub fn matrix_to_json(m: &[Vec<f64>]) -> String {
    let rows: Vec<Vec<String>> = m
        .iter()
        .map(|row| row.iter().map(|x| format!("{x}")).collect())
        .collect();
    serde_json::to_string(&rows).expect("string matrix serializes")
}

pub fn matrix_from_json(raw: &str) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<String>> =
        serde_json::from_str(raw).map_err(|e| Error::Serialization(e.to_string()))?;
    rows.iter()
        .map(|row| {
            row.iter()
                .map(|x| x.parse().map_err(|e| Error::Serialization(format!("{e}"))))
                .collect()
        })
        .collect()
}

/// F_k(i,j): probability that the patroller starting at i reaches j for the
/// first time in exactly k slots, truncated at `k_max`.
#[derive(Debug, Clone)]
pub struct FirstVisitTensor {
    /// Flat [k-1][i][j] layout.
    f: Vec<f64>,
    n: usize,
    k_max: usize,
}

impl FirstVisitTensor {
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, k: usize, from: usize, to: usize) -> f64 {
        debug_assert!(k >= 1 && k <= self.k_max);
        self.f[(k - 1) * self.n * self.n + from * self.n + to]
    }

    /// Total captured probability mass for a pair, at most 1.
    pub fn mass(&self, from: usize, to: usize) -> f64 {
        (1..=self.k_max).map(|k| self.get(k, from, to)).sum()
    }

    /// 1 - captured mass; an upper bound on everything truncated away.
    pub fn tail_mass(&self, from: usize, to: usize) -> f64 {
        (1.0 - self.mass(from, to)).max(0.0)
    }
}

/// Effective per-step travel time: self-loops dwell one slot.
#[inline]
fn step_time(w: &[Vec<u64>], from: usize, to: usize) -> u64 {
    if from == to {
        1
    } else {
        w[from][to]
    }
}

/// Truncation horizon used by the consistency checks: 200 * n * max(W).
pub fn default_k_max(w: &[Vec<u64>]) -> usize {
    let n = w.len();
    let max_w = w
        .iter()
        .flat_map(|row| row.iter().copied())
        .max()
        .unwrap_or(1)
        .max(1);
    200 * n * max_w as usize
}

pub fn compute_first_visit(
    p: &TransitionMatrix,
    w: &[Vec<u64>],
    k_max: usize,
) -> Result<FirstVisitTensor> {
    compute_first_visit_with_cap(p, w, k_max, DEFAULT_TENSOR_ENTRY_CAP)
}

/// The two-case first-visit recursion:
/// F_k(i,j) = p_ij 1[w_ij = k] + sum_{h != j} p_ih F_{k - w_ih}(h,j).
pub fn compute_first_visit_with_cap(
    p: &TransitionMatrix,
    w: &[Vec<u64>],
    k_max: usize,
    entry_cap: usize,
) -> Result<FirstVisitTensor> {
    let n = p.len();
    if k_max < 1 {
        return Err(Error::Domain("k_max must be at least 1".into()));
    }
    let max_w = (0..n)
        .flat_map(|i| (0..n).map(move |j| step_time(w, i, j)))
        .max()
        .unwrap_or(1) as usize;
    if k_max < max_w {
        return Err(Error::Domain(format!(
            "k_max = {k_max} is below the maximum edge weight {max_w}"
        )));
    }
    let entries = n
        .checked_mul(n)
        .and_then(|x| x.checked_mul(k_max))
        .ok_or_else(|| Error::ResourceCap("first-visit tensor size overflow".into()))?;
    if entries > entry_cap {
        return Err(Error::ResourceCap(format!(
            "first-visit tensor needs {entries} entries, cap is {entry_cap}"
        )));
    }

    let mut f = vec![0.0f64; entries];
    let idx = |k: usize, i: usize, j: usize| (k - 1) * n * n + i * n + j;
    for k in 1..=k_max {
        for i in 0..n {
            for j in 0..n {
                let mut value = 0.0;
                if step_time(w, i, j) as usize == k {
                    value += p.prob(i, j);
                }
                if k >= 2 {
                    for h in 0..n {
                        if h == j {
                            continue;
                        }
                        let p_ih = p.prob(i, h);
                        if p_ih == 0.0 {
                            continue;
                        }
                        let step = step_time(w, i, h) as usize;
                        if k > step {
                            value += p_ih * f[idx(k - step, h, j)];
                        }
                    }
                }
                f[idx(k, i, j)] = value;
            }
        }
    }
    Ok(FirstVisitTensor { f, n, k_max })
}

/// Expected first hitting times; the diagonal holds expected first RETURN
/// times. Carries the per-pair truncation tail of the source tensor.
#[derive(Debug, Clone)]
pub struct HittingTimeMatrix {
    a: Vec<Vec<f64>>,
    tail: Vec<Vec<f64>>,
}

impl HittingTimeMatrix {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.a[from][to]
    }

    pub fn tail(&self, from: usize, to: usize) -> f64 {
        self.tail[from][to]
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.a
    }

    pub fn to_json(&self) -> String {
        matrix_to_json(&self.a)
    }
}

/// a_ij = sum_{k <= k_max} k F_k(i,j), rejecting pairs whose truncated tail
/// mass exceeds `tail_tol`.
pub fn compute_hitting_times(f: &FirstVisitTensor, tail_tol: f64) -> Result<HittingTimeMatrix> {
    let n = f.len();
    let mut a = vec![vec![0.0; n]; n];
    let mut tail = vec![vec![0.0; n]; n];
    let mut worst: Option<(usize, usize, f64)> = None;
    for i in 0..n {
        for j in 0..n {
            let mut total = 0.0;
            let mut mass = 0.0;
            for k in 1..=f.k_max() {
                let fk = f.get(k, i, j);
                total += k as f64 * fk;
                mass += fk;
            }
            a[i][j] = total;
            let t = (1.0 - mass).max(0.0);
            tail[i][j] = t;
            if worst.map_or(true, |(_, _, wt)| t > wt) {
                worst = Some((i, j, t));
            }
        }
    }
    if let Some((i, j, t)) = worst {
        if t > tail_tol {
            return Err(Error::TruncationInsufficient {
                from: i,
                to: j,
                tail: t,
                tol: tail_tol,
            });
        }
    }
    Ok(HittingTimeMatrix { a, tail })
}

/// Exact hitting/return times by solving, per target j, the linear system
/// a_ij = sum_h p_ih (w_ih + 1[h != j] a_hj). Serves as the independent
/// oracle for `compute_hitting_times`.
pub fn hitting_times_exact(p: &TransitionMatrix, w: &[Vec<u64>]) -> Result<HittingTimeMatrix> {
    let n = p.len();
    if let Some((i, j)) = p.find_unreachable_pair() {
        return Err(Error::ReducibleChain { from: i, to: j });
    }
    let mut a = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for i in 0..n {
            m[(i, i)] += 1.0;
            let mut expected_step = 0.0;
            for h in 0..n {
                let p_ih = p.prob(i, h);
                expected_step += p_ih * step_time(w, i, h) as f64;
                if h != j {
                    m[(i, h)] -= p_ih;
                }
            }
            rhs[i] = expected_step;
        }
        let solution = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidTransitionMatrix("singular hitting-time system".into()))?;
        for i in 0..n {
            a[i][j] = solution[i];
        }
    }
    Ok(HittingTimeMatrix {
        tail: vec![vec![0.0; n]; n],
        a,
    })
}

/// Stationary distribution of an irreducible chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryDist {
    pi: Vec<f64>,
}

impl StationaryDist {
    pub fn probabilities(&self) -> &[f64] {
        &self.pi
    }

    pub fn get(&self, site: usize) -> f64 {
        self.pi[site]
    }
}

/// Solves pi P = pi, sum pi = 1 directly (no power iteration, so periodic
/// chains are fine).
pub fn stationary_distribution(p: &TransitionMatrix) -> Result<StationaryDist> {
    let n = p.len();
    if let Some((i, j)) = p.find_unreachable_pair() {
        return Err(Error::ReducibleChain { from: i, to: j });
    }
    // (P^T - I) pi = 0 with the last balance equation replaced by sum = 1.
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for r in 0..n - 1 {
        for c in 0..n {
            m[(r, c)] = p.prob(c, r) - if r == c { 1.0 } else { 0.0 };
        }
    }
    for c in 0..n {
        m[(n - 1, c)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    let solution = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidTransitionMatrix("singular stationary system".into()))?;
    let mut pi: Vec<f64> = solution.iter().map(|x| x.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    for x in pi.iter_mut() {
        *x /= total;
    }
    for j in 0..n {
        let balance: f64 = (0..n).map(|i| pi[i] * p.prob(i, j)).sum();
        if (balance - pi[j]).abs() > 1e-9 {
            return Err(Error::InvalidTransitionMatrix(format!(
                "stationary residual {:.3e} at site {j}",
                (balance - pi[j]).abs()
            )));
        }
    }
    Ok(StationaryDist { pi })
}

/// Kemeny constant kappa = pi^T A pi together with the per-start values
/// kappa_i = sum_j a_ij pi_j. The diagonal of A holds return times, so this
/// kappa equals the classical Kemeny constant plus one on unit-weight chains.
#[derive(Debug, Clone, Serialize)]
pub struct KemenyReport {
    pub kappa: f64,
    pub per_start: Vec<f64>,
}

pub fn kemeny_constant(p: &TransitionMatrix, w: &[Vec<u64>]) -> Result<KemenyReport> {
    let a = hitting_times_exact(p, w)?;
    let pi = stationary_distribution(p)?;
    let n = p.len();
    let per_start: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| a.get(i, j) * pi.get(j)).sum())
        .collect();
    let kappa = (0..n).map(|i| pi.get(i) * per_start[i]).sum();
    Ok(KemenyReport { kappa, per_start })
}

/// Expected attacker payoff plus the truncation slack of the tail sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PayoffValue {
    pub value: f64,
    pub truncation_bound: f64,
}

/// Z_{i,j,T} = sum_{t<=T} [(h_j(t) - M) F_t(i,j) + h_j(t) sum_{k>t} F_k(i,j)],
/// with tail sums truncated at the tensor horizon and the dropped mass
/// reported as a bound.
pub fn payoff_full_visibility(
    f: &FirstVisitTensor,
    utility: &PolyUtility,
    penalty: f64,
    from: usize,
    target: usize,
    duration: u64,
) -> Result<PayoffValue> {
    let k_max = f.k_max() as u64;
    if duration < 1 {
        return Err(Error::Domain("attack duration must be at least 1".into()));
    }
    if duration > k_max {
        return Err(Error::Horizon(format!(
            "duration {duration} exceeds the first-visit horizon {k_max}"
        )));
    }
    let total_mass = f.mass(from, target);
    let mut prefix = 0.0;
    let mut value = 0.0;
    let mut h_sum = 0.0;
    for t in 1..=duration {
        let ft = f.get(t as usize, from, target);
        prefix += ft;
        let h = utility.eval(t)?;
        h_sum += h;
        value += (h - penalty) * ft + h * (total_mass - prefix).max(0.0);
    }
    Ok(PayoffValue {
        value,
        truncation_bound: (1.0 - total_mass).max(0.0) * h_sum,
    })
}

/// Attacker best response over a Markov strategy, per visibility model.
#[derive(Debug, Clone, Serialize)]
pub struct MarkovBestResponse {
    pub model: Visibility,
    pub value: f64,
    pub site_from: Option<usize>,
    pub site_attacked: usize,
    pub duration: u64,
    pub truncation_bound: f64,
}

/// Reducible chains give the attacker an unbounded payoff on the witness
/// pair; everything else yields a finite maximizer.
#[derive(Debug, Clone)]
pub enum BestResponseOutcome {
    Bounded(MarkovBestResponse),
    Unbounded { from: usize, to: usize },
}

pub fn best_response_markov(
    p: &TransitionMatrix,
    f: &FirstVisitTensor,
    utilities: &[PolyUtility],
    penalty: f64,
    model: Visibility,
    t_max: u64,
) -> Result<BestResponseOutcome> {
    let n = p.len();
    if utilities.len() != n {
        return Err(Error::Domain(format!(
            "expected {n} utilities, got {}",
            utilities.len()
        )));
    }
    if t_max < 1 || t_max > f.k_max() as u64 {
        return Err(Error::Horizon(format!(
            "T_max must be in [1, {}], got {t_max}",
            f.k_max()
        )));
    }
    if let Some((i, j)) = p.find_unreachable_pair() {
        return Ok(BestResponseOutcome::Unbounded { from: i, to: j });
    }

    // Best over T of a conditioned payoff stream, scanned incrementally;
    // ties resolved toward the smaller T by strict comparison.
    let payoff_stream = |i: usize, j: usize| -> (f64, u64) {
        let mass = f.mass(i, j);
        let mut prefix = 0.0;
        let mut running = 0.0;
        let mut best = f64::NEG_INFINITY;
        let mut best_t = 1;
        for t in 1..=t_max {
            let ft = f.get(t as usize, i, j);
            prefix += ft;
            let h = utilities[j].eval(t).expect("t >= 1");
            running += (h - penalty) * ft + h * (mass - prefix).max(0.0);
            if running > best {
                best = running;
                best_t = t;
            }
        }
        (best, best_t)
    };

    let mut best: Option<MarkovBestResponse> = None;
    let mut consider = |value: f64,
                        site_from: Option<usize>,
                        site_attacked: usize,
                        duration: u64,
                        bound: f64| {
        // Lexicographic (j, i, T) tie-breaking comes from scan order plus
        // strict improvement.
        if best.as_ref().map_or(true, |b| value > b.value) {
            best = Some(MarkovBestResponse {
                model,
                value,
                site_from,
                site_attacked,
                duration,
                truncation_bound: bound,
            });
        }
    };

    match model {
        Visibility::Full => {
            for j in 0..n {
                for i in 0..n {
                    let (value, duration) = payoff_stream(i, j);
                    let bound = f.tail_mass(i, j) * utilities[j].cumulative(duration);
                    consider(value, Some(i), j, duration, bound);
                }
            }
        }
        Visibility::Local => {
            for j in 0..n {
                let (value, duration) = payoff_stream(j, j);
                let bound = f.tail_mass(j, j) * utilities[j].cumulative(duration);
                consider(value, Some(j), j, duration, bound);
            }
        }
        Visibility::None => {
            let pi = stationary_distribution(p)?;
            for j in 0..n {
                let masses: Vec<f64> = (0..n).map(|i| f.mass(i, j)).collect();
                let mut prefixes = vec![0.0; n];
                let mut running = 0.0;
                let mut best_value = f64::NEG_INFINITY;
                let mut best_t = 1;
                for t in 1..=t_max {
                    let h = utilities[j].eval(t).expect("t >= 1");
                    let mut z = 0.0;
                    for i in 0..n {
                        let ft = f.get(t as usize, i, j);
                        prefixes[i] += ft;
                        z += pi.get(i)
                            * ((h - penalty) * ft + h * (masses[i] - prefixes[i]).max(0.0));
                    }
                    running += z;
                    if running > best_value {
                        best_value = running;
                        best_t = t;
                    }
                }
                let bound: f64 = (0..n)
                    .map(|i| pi.get(i) * f.tail_mass(i, j))
                    .sum::<f64>()
                    * utilities[j].cumulative(best_t);
                consider(best_value, None, j, best_t, bound);
            }
        }
    }

    Ok(BestResponseOutcome::Bounded(best.expect("n >= 1")))
}

/// High-penalty diagnostic: max over (i,j,T) of h_j T - (M+1) sum_{t<=T} F_t.
#[derive(Debug, Clone, Serialize)]
pub struct HighPenaltyReport {
    pub value: f64,
    pub site_from: usize,
    pub site_attacked: usize,
    pub duration: u64,
    /// True when the maximizer sits on the horizon boundary, i.e. the printed
    /// objective keeps growing with T and the score diverges.
    pub saturated_horizon: bool,
}

pub fn high_penalty_objective(
    f: &FirstVisitTensor,
    utilities: &[PolyUtility],
    penalty: f64,
    t_max: u64,
) -> Result<HighPenaltyReport> {
    if let Some(bad) = utilities.iter().position(|u| !u.is_constant()) {
        return Err(Error::Unsupported(format!(
            "the high-penalty simplification requires constant utilities; site {bad} is non-constant"
        )));
    }
    if t_max < 1 || t_max > f.k_max() as u64 {
        return Err(Error::Horizon(format!(
            "T_max must be in [1, {}], got {t_max}",
            f.k_max()
        )));
    }
    let n = f.len();
    let mut best: Option<HighPenaltyReport> = None;
    for j in 0..n {
        let h = utilities[j].coefficient(0);
        for i in 0..n {
            let mut prefix = 0.0;
            let mut best_value = f64::NEG_INFINITY;
            let mut best_t = 1;
            for t in 1..=t_max {
                prefix += f.get(t as usize, i, j);
                let value = h * t as f64 - (penalty + 1.0) * prefix;
                if value > best_value {
                    best_value = value;
                    best_t = t;
                }
            }
            if best.as_ref().map_or(true, |b| best_value > b.value) {
                best = Some(HighPenaltyReport {
                    value: best_value,
                    site_from: i,
                    site_attacked: j,
                    duration: best_t,
                    saturated_horizon: best_t == t_max,
                });
            }
        }
    }
    Ok(best.expect("n >= 1"))
}
