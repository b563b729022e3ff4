//! Deterministic backbone tours: a 2-opt TSP heuristic for uniform
//! utilities and the grouped bamboo-garden-trimming (BGT) schedule for
//! weighted sites.

use crate::error::{Error, Result};
use crate::instance::GraphInstance;
use crate::schedule::{DeterministicGenerator, SiteSequence, TravelTimes};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// A cyclic visiting order over all sites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tour {
    pub order: Vec<usize>,
    /// Total travel time around the cycle, closing edge included.
    pub length: u64,
}

impl Tour {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tour serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        serde_json::from_str(raw).map_err(|e| Error::Serialization(e.to_string()))
    }
}

fn cycle_length(order: &[usize], travel: &[Vec<u64>]) -> u64 {
    if order.len() < 2 {
        return 0;
    }
    let mut total = 0;
    for i in 0..order.len() {
        let a = order[i];
        let b = order[(i + 1) % order.len()];
        total += travel[a][b];
    }
    total
}

fn tsp_tour_over(sites: &[usize], travel: &[Vec<u64>]) -> Tour {
    if sites.len() <= 1 {
        return Tour {
            order: sites.to_vec(),
            length: 0,
        };
    }
    // Nearest neighbor from the lowest site id, ties toward the lower id.
    let mut order = vec![sites[0]];
    let mut remaining: Vec<usize> = sites[1..].to_vec();
    while !remaining.is_empty() {
        let here = *order.last().expect("nonempty");
        let (pick, _) = remaining
            .iter()
            .enumerate()
            .min_by_key(|(_, &s)| (travel[here][s], s))
            .expect("nonempty remaining");
        order.push(remaining.remove(pick));
    }
    // First-improvement 2-opt: reverse order[a+1..=b] while it shortens the
    // cycle.
    let m = order.len();
    let mut improved = true;
    while improved {
        improved = false;
        'outer: for a in 0..m - 1 {
            for b in a + 1..m {
                if a == 0 && b == m - 1 {
                    continue;
                }
                let (pa, na) = (order[a], order[(a + 1) % m]);
                let (pb, nb) = (order[b], order[(b + 1) % m]);
                let before = travel[pa][na] + travel[pb][nb];
                let after = travel[pa][pb] + travel[na][nb];
                if after < before {
                    order[a + 1..=b].reverse();
                    improved = true;
                    break 'outer;
                }
            }
        }
    }
    let length = cycle_length(&order, travel);
    Tour { order, length }
}

/// Deterministic approximate TSP tour: nearest neighbor from site 0, then
/// first-improvement 2-opt to a local optimum.
pub fn tsp_tour(instance: &GraphInstance) -> Tour {
    let sites: Vec<usize> = (0..instance.len()).collect();
    tsp_tour_over(&sites, instance.travel_matrix())
}

/// Cyclic sequence over a tour's order.
#[derive(Debug, Clone)]
pub struct TourSequence {
    order: Arc<Vec<usize>>,
    at: usize,
}

impl TourSequence {
    pub fn new(tour: &Tour) -> Self {
        Self {
            order: Arc::new(tour.order.clone()),
            at: 0,
        }
    }
}

impl SiteSequence for TourSequence {
    fn current(&self) -> usize {
        self.order[self.at]
    }

    fn advance(&mut self) -> usize {
        self.at = (self.at + 1) % self.order.len();
        self.order[self.at]
    }
}

/// Follows the tour literally, one site per move.
pub fn tour_generator(
    tour: &Tour,
    instance: &GraphInstance,
) -> DeterministicGenerator<TourSequence> {
    DeterministicGenerator::new(
        TourSequence::new(tour),
        TravelTimes::new(instance.travel_matrix().to_vec()),
    )
}

/// One weight group: the member sites and the tour segment schedule walks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BgtGroup {
    /// Group index i; sites satisfy 2^{i-1} n^{-2} < w <= 2^i n^{-2}, with
    /// index 0 collecting everything at or below n^{-2}.
    pub index: usize,
    pub sites: Vec<usize>,
    pub tour: Tour,
}

/// How nonempty groups are interleaved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupOrder {
    /// Inorder traversal of a complete binary tree with the lightest group
    /// at the root; heavier groups recur exponentially more often.
    Tree,
    /// Plain round robin.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BgtPlan {
    pub groups: Vec<BgtGroup>,
    /// Normalized per-site weights (top-degree utility coefficients).
    #[serde(with = "crate::instance::real_string_vec")]
    pub weights: Vec<f64>,
    /// One period of the infinite group sequence, as indices into `groups`.
    pub visit_order: Vec<usize>,
    /// Per-segment travel budget: the graph diameter.
    pub diameter: u64,
}

impl BgtPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        serde_json::from_str(raw).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Weight of site j: the coefficient of the highest degree attained by any
/// site's utility, zero where a site's polynomial is shorter.
fn site_weights(instance: &GraphInstance) -> Result<Vec<f64>> {
    let d = instance
        .utilities()
        .iter()
        .map(|u| u.effective_degree())
        .max()
        .ok_or(Error::EmptyInstance)?;
    let raw: Vec<f64> = instance
        .utilities()
        .iter()
        .map(|u| u.coefficient(d).max(0.0))
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInstance(
            "all top-degree utility weights are zero".into(),
        ));
    }
    Ok(raw.iter().map(|w| w / total).collect())
}

/// Builds the grouped schedule: sites bucketed by weight scale, a tour per
/// group, and the periodic group visiting order.
pub fn bgt_plan(instance: &GraphInstance, group_order: GroupOrder) -> Result<BgtPlan> {
    let n = instance.len();
    if n < 2 {
        return Err(Error::InvalidInstance(
            "the grouped schedule needs at least 2 sites".into(),
        ));
    }
    let weights = site_weights(instance)?;
    let s = (2.0 * (n as f64).log2()).ceil() as usize;
    let base = (n as f64).powi(-2);
    let group_of = |w: f64| -> usize {
        if w <= base {
            return 0;
        }
        let mut i = 1;
        while w > 2f64.powi(i as i32) * base && i < s {
            i += 1;
        }
        i
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); s + 1];
    for (j, &w) in weights.iter().enumerate() {
        members[group_of(w)].push(j);
    }
    let groups: Vec<BgtGroup> = members
        .into_iter()
        .enumerate()
        .filter(|(_, sites)| !sites.is_empty())
        .map(|(index, sites)| {
            let tour = tsp_tour_over(&sites, instance.travel_matrix());
            BgtGroup { index, sites, tour }
        })
        .collect();

    // Group list is already ascending by weight scale; assign tree depths so
    // the heaviest nonempty group sits deepest.
    let g = groups.len();
    let visit_order = match group_order {
        GroupOrder::RoundRobin => (0..g).collect(),
        GroupOrder::Tree => {
            // inorder of the complete binary tree whose level d holds the
            // d-th lightest group: order(d) = order(d+1), d, order(d+1)
            fn inorder(depth: usize, levels: usize, out: &mut Vec<usize>) {
                if depth >= levels {
                    return;
                }
                inorder(depth + 1, levels, out);
                out.push(depth);
                inorder(depth + 1, levels, out);
            }
            let mut order = Vec::new();
            inorder(0, g, &mut order);
            // depth d = d-th lightest, i.e. index d in the ascending list
            order
        }
    };

    Ok(BgtPlan {
        groups,
        weights,
        visit_order,
        diameter: instance.diameter(),
    })
}

/// Deterministic realization of a [`BgtPlan`]: each group turn walks a
/// whole-site segment of the group's tour with travel time at most the
/// diameter (always at least one site), resuming from a per-group cursor.
/// Group 0 contributes exactly one site per turn, cycling its members in id
/// order.
#[derive(Debug, Clone)]
pub struct BgtSequence {
    plan: Arc<BgtPlan>,
    travel: TravelTimes,
    /// index into visit_order of the segment currently being walked
    order_pos: usize,
    /// per-group resume position within the group tour
    cursors: Vec<usize>,
    /// sites still to emit in the current segment
    segment_left: usize,
    current: usize,
}

impl BgtSequence {
    pub fn new(plan: BgtPlan, travel: TravelTimes) -> Self {
        let mut seq = Self {
            cursors: vec![0; plan.groups.len()],
            plan: Arc::new(plan),
            travel,
            order_pos: usize::MAX,
            segment_left: 0,
            current: 0,
        };
        seq.current = seq.emit();
        seq
    }

    /// Number of whole sites a segment starting at `cursor` covers within
    /// the travel budget.
    fn segment_sites(&self, group: usize, cursor: usize) -> usize {
        let order = &self.plan.groups[group].tour.order;
        let mut count = 1;
        let mut spent = 0u64;
        while count < order.len() {
            let a = order[(cursor + count - 1) % order.len()];
            let b = order[(cursor + count) % order.len()];
            let hop = self.travel.gap(a, b);
            if spent + hop > self.plan.diameter {
                break;
            }
            spent += hop;
            count += 1;
        }
        count
    }

    fn emit(&mut self) -> usize {
        if self.segment_left == 0 {
            self.order_pos = if self.order_pos == usize::MAX {
                0
            } else {
                (self.order_pos + 1) % self.plan.visit_order.len()
            };
            let g = self.plan.visit_order[self.order_pos];
            self.segment_left = if self.plan.groups[g].index == 0 {
                1
            } else {
                self.segment_sites(g, self.cursors[g])
            };
        }
        let g = self.plan.visit_order[self.order_pos];
        let group = &self.plan.groups[g];
        // Group 0 cycles its members in id order, one per turn; the others
        // walk their tours.
        let order: &[usize] = if group.index == 0 {
            &group.sites
        } else {
            &group.tour.order
        };
        let site = order[self.cursors[g]];
        self.cursors[g] = (self.cursors[g] + 1) % order.len();
        self.segment_left -= 1;
        site
    }
}

impl SiteSequence for BgtSequence {
    fn current(&self) -> usize {
        self.current
    }

    fn advance(&mut self) -> usize {
        self.current = self.emit();
        self.current
    }
}

pub fn bgt_generator(
    plan: &BgtPlan,
    instance: &GraphInstance,
) -> DeterministicGenerator<BgtSequence> {
    let travel = TravelTimes::new(instance.travel_matrix().to_vec());
    DeterministicGenerator::new(BgtSequence::new(plan.clone(), travel.clone()), travel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{PolyUtility, Site};
    use crate::schedule::{sample_trace, ScheduleGenerator};

    fn square_instance() -> GraphInstance {
        let sites = vec![
            Site { id: 0, x: 0.0, y: 0.0 },
            Site { id: 1, x: 1.0, y: 0.0 },
            Site { id: 2, x: 1.0, y: 1.0 },
            Site { id: 3, x: 0.0, y: 1.0 },
        ];
        let utilities = vec![PolyUtility::constant(1.0).unwrap(); 4];
        GraphInstance::from_coordinates(sites, utilities, 0.0).unwrap()
    }

    fn weighted_instance(weights: &[f64]) -> GraphInstance {
        let n = weights.len();
        let sites: Vec<Site> = (0..n)
            .map(|i| Site { id: i, x: i as f64, y: 0.0 })
            .collect();
        let utilities: Vec<PolyUtility> = weights
            .iter()
            .map(|&w| PolyUtility::constant(w).unwrap())
            .collect();
        GraphInstance::from_coordinates(sites, utilities, 0.0).unwrap()
    }

    #[test]
    fn single_site_tour_is_trivial() {
        let inst = weighted_instance(&[1.0]);
        let tour = tsp_tour(&inst);
        assert_eq!(tour.order, vec![0]);
        assert_eq!(tour.length, 0);
    }

    #[test]
    fn unit_square_tour_has_perimeter_length() {
        // optimal by enumerating the 3 distinct 4-site cyclic orders
        let tour = tsp_tour(&square_instance());
        assert_eq!(tour.length, 4);
        assert_eq!(tour.order.len(), 4);
    }

    #[test]
    fn two_opt_never_worsens_nearest_neighbor() {
        for seed in 0..10u64 {
            let spec = crate::instance::UtilitySpec {
                degree: 0,
                coeff_min: 0.5,
                coeff_max: 1.5,
            };
            let inst = GraphInstance::generate_random(9, 100.0, seed, &spec).unwrap();
            let tour = tsp_tour(&inst);
            // rebuild plain nearest-neighbor length
            let travel = inst.travel_matrix();
            let mut order = vec![0usize];
            let mut rest: Vec<usize> = (1..inst.len()).collect();
            while !rest.is_empty() {
                let here = *order.last().unwrap();
                let (k, _) = rest
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, &s)| (travel[here][s], s))
                    .unwrap();
                order.push(rest.remove(k));
            }
            assert!(tour.length <= cycle_length(&order, travel));
        }
    }

    #[test]
    fn two_opt_local_optimality() {
        let spec = crate::instance::UtilitySpec {
            degree: 0,
            coeff_min: 0.5,
            coeff_max: 1.5,
        };
        let inst = GraphInstance::generate_random(8, 60.0, 3, &spec).unwrap();
        let tour = tsp_tour(&inst);
        let travel = inst.travel_matrix();
        let m = tour.order.len();
        for a in 0..m - 1 {
            for b in a + 1..m {
                if a == 0 && b == m - 1 {
                    continue;
                }
                let mut alt = tour.order.clone();
                alt[a + 1..=b].reverse();
                assert!(cycle_length(&alt, travel) >= tour.length);
            }
        }
    }

    #[test]
    fn equal_weights_give_single_group() {
        let inst = weighted_instance(&[1.0, 1.0, 1.0, 1.0]);
        let plan = bgt_plan(&inst, GroupOrder::Tree).unwrap();
        assert_eq!(plan.groups.len(), 1);
        assert_eq!(plan.visit_order, vec![0]);
        let tour_len = plan.groups[0].tour.order.len();
        let mut gen = bgt_generator(&plan, &inst);
        let mut seen = Vec::new();
        for _ in 0..2 * tour_len {
            seen.push(gen.step().site);
        }
        // cycling the single group tour
        assert_eq!(seen[..tour_len], seen[tour_len..]);
    }

    #[test]
    fn group_thresholds_hold_exactly() {
        let inst = weighted_instance(&[0.9, 0.05, 0.02, 0.02, 0.009, 0.001]);
        let plan = bgt_plan(&inst, GroupOrder::Tree).unwrap();
        let n = inst.len() as f64;
        for group in &plan.groups {
            for &j in &group.sites {
                let w = plan.weights[j];
                if group.index == 0 {
                    assert!(w <= n.powi(-2));
                } else {
                    assert!(w > 2f64.powi(group.index as i32 - 1) * n.powi(-2));
                    assert!(w <= 2f64.powi(group.index as i32) * n.powi(-2));
                }
            }
        }
        let grouped: usize = plan.groups.iter().map(|g| g.sites.len()).sum();
        assert_eq!(grouped, inst.len());
    }

    #[test]
    fn three_group_inorder_pattern() {
        // weights placed to land in exactly three nonempty groups (ascending)
        let inst = weighted_instance(&[0.6, 0.3, 0.05, 0.02, 0.02, 0.005, 0.004, 0.001]);
        let plan = bgt_plan(&inst, GroupOrder::Tree).unwrap();
        if plan.groups.len() == 3 {
            assert_eq!(plan.visit_order, vec![2, 1, 2, 0, 2, 1, 2]);
        } else {
            // fall back to the structural property: deepest group appears
            // 2^(g-1) times per period
            let g = plan.groups.len();
            let count = plan.visit_order.iter().filter(|&&x| x == g - 1).count();
            assert_eq!(count, 1 << (g - 1));
        }
    }

    #[test]
    fn tree_period_visit_counts_are_powers_of_two() {
        let inst = weighted_instance(&[0.5, 0.3, 0.1, 0.05, 0.03, 0.015, 0.004, 0.001]);
        let plan = bgt_plan(&inst, GroupOrder::Tree).unwrap();
        let g = plan.groups.len();
        assert_eq!(plan.visit_order.len(), (1 << g) - 1);
        for depth in 0..g {
            let count = plan.visit_order.iter().filter(|&&x| x == depth).count();
            assert_eq!(count, 1 << depth);
        }
    }

    #[test]
    fn round_robin_order() {
        let inst = weighted_instance(&[0.5, 0.3, 0.1, 0.05, 0.03, 0.015, 0.004, 0.001]);
        let plan = bgt_plan(&inst, GroupOrder::RoundRobin).unwrap();
        let g = plan.groups.len();
        assert_eq!(plan.visit_order, (0..g).collect::<Vec<_>>());
    }

    #[test]
    fn heavy_singleton_appears_every_other_slot() {
        // two nonempty groups: one heavy site, the rest light
        let inst = weighted_instance(&[0.97, 0.01, 0.01, 0.01]);
        let plan = bgt_plan(&inst, GroupOrder::Tree).unwrap();
        assert_eq!(plan.groups.len(), 2);
        // inorder of the 2-level tree: heavy leaf, light root, heavy leaf
        assert_eq!(plan.visit_order, vec![1, 0, 1]);
        let heavy = plan.groups[1].sites.clone();
        assert_eq!(heavy, vec![0]);
    }

    #[test]
    fn generator_visits_every_site_and_is_deterministic() {
        let inst = weighted_instance(&[0.9, 0.05, 0.02, 0.02, 0.009, 0.001]);
        let plan = bgt_plan(&inst, GroupOrder::Tree).unwrap();
        let mut a = bgt_generator(&plan, &inst);
        let mut b = bgt_generator(&plan, &inst);
        let ta = sample_trace(&mut a, 400).unwrap();
        let tb = sample_trace(&mut b, 400).unwrap();
        assert_eq!(ta, tb);
        let times = ta.visit_times();
        for (j, ts) in times.iter().enumerate() {
            assert!(ts.len() >= 2, "site {j} not revisited");
        }
    }

    #[test]
    fn all_zero_weights_error() {
        let inst = weighted_instance(&[0.0, 0.0, 0.0]);
        assert!(bgt_plan(&inst, GroupOrder::Tree).is_err());
    }

    #[test]
    fn tour_and_plan_json_round_trip() {
        let inst = weighted_instance(&[0.9, 0.05, 0.02, 0.02, 0.009, 0.001]);
        let tour = tsp_tour(&inst);
        assert_eq!(Tour::from_json(&tour.to_json()).unwrap(), tour);
        let plan = bgt_plan(&inst, GroupOrder::Tree).unwrap();
        assert_eq!(BgtPlan::from_json(&plan.to_json()).unwrap(), plan);
    }
}
