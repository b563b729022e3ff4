//! Patrol-game instances: sites, integer travel times, polynomial utilities,
//! and the capture penalty.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Serialize reals as decimal strings so instance files round-trip bit-exactly.
pub(crate) mod real_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

pub(crate) mod real_string_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| format!("{x}")))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|x| x.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}

/// A patrol site: an index plus planar coordinates in length units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: usize,
    #[serde(with = "real_string")]
    pub x: f64,
    #[serde(with = "real_string")]
    pub y: f64,
}

/// A site utility h(t) = sum_k c_k t^k with nonnegative coefficients,
/// so h(t) >= 0 for all t >= 1 by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolyUtility {
    #[serde(with = "real_string_vec")]
    coefficients: Vec<f64>,
}

impl PolyUtility {
    pub fn new(coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(Error::InvalidUtility(
                "at least one coefficient is required".into(),
            ));
        }
        if coefficients.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidUtility(
                "coefficients must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { coefficients })
    }

    pub fn constant(c: f64) -> Result<Self> {
        Self::new(vec![c])
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// True degree, ignoring trailing zero coefficients.
    pub fn effective_degree(&self) -> usize {
        self.coefficients
            .iter()
            .rposition(|c| *c > 0.0)
            .unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.effective_degree() == 0
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.iter().all(|c| *c == 0.0)
    }

    /// Coefficient of t^k (0 if beyond the stored degree).
    pub fn coefficient(&self, k: usize) -> f64 {
        self.coefficients.get(k).copied().unwrap_or(0.0)
    }

    /// h(t) for a time slot t >= 1.
    pub fn eval(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::Domain(
                "utility is only defined for time slots t >= 1".into(),
            ));
        }
        let t = t as f64;
        // Horner evaluation.
        Ok(self
            .coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * t + c))
    }

    /// Sum of h(t) over t = 1..=T; 0 for T = 0.
    pub fn cumulative(&self, horizon: u64) -> f64 {
        let mut total = 0.0;
        for t in 1..=horizon {
            total += self.eval(t).expect("t >= 1");
        }
        total
    }
}

/// How utility coefficients are drawn when not given explicitly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub degree: usize,
    pub coeff_min: f64,
    pub coeff_max: f64,
}

impl UtilitySpec {
    pub fn new(degree: usize, coeff_min: f64, coeff_max: f64) -> Result<Self> {
        if !(coeff_min > 0.0 && coeff_max >= coeff_min && coeff_max.is_finite()) {
            return Err(Error::InvalidUtility(format!(
                "coefficient range must satisfy 0 < min <= max, got [{coeff_min}, {coeff_max}]"
            )));
        }
        Ok(Self {
            degree,
            coeff_min,
            coeff_max,
        })
    }

    fn draw(&self, rng: &mut impl Rng) -> PolyUtility {
        let coefficients = (0..=self.degree)
            .map(|_| rng.gen_range(self.coeff_min..=self.coeff_max))
            .collect();
        PolyUtility { coefficients }
    }
}

/// A validated patrol-game instance: metric integer travel times, one utility
/// function per site, and a global capture penalty.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphInstance {
    sites: Vec<Site>,
    travel: Vec<Vec<u64>>,
    utilities: Vec<PolyUtility>,
    #[serde(with = "real_string")]
    penalty: f64,
}

impl GraphInstance {
    pub fn new(
        sites: Vec<Site>,
        travel: Vec<Vec<u64>>,
        utilities: Vec<PolyUtility>,
        penalty: f64,
    ) -> Result<Self> {
        let instance = Self {
            sites,
            travel,
            utilities,
            penalty,
        };
        instance.validate()?;
        Ok(instance)
    }

    fn validate(&self) -> Result<()> {
        let n = self.sites.len();
        if n == 0 {
            return Err(Error::EmptyInstance);
        }
        for (i, site) in self.sites.iter().enumerate() {
            if site.id != i {
                return Err(Error::InvalidInstance(format!(
                    "site ids must be contiguous 0..n-1, position {i} has id {}",
                    site.id
                )));
            }
        }
        if self.utilities.len() != n {
            return Err(Error::InvalidInstance(format!(
                "expected {n} utility functions, got {}",
                self.utilities.len()
            )));
        }
        if !(self.penalty.is_finite() && self.penalty >= 0.0) {
            return Err(Error::InvalidInstance(format!(
                "penalty must be a nonnegative real, got {}",
                self.penalty
            )));
        }
        if self.travel.len() != n || self.travel.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidInstance(format!(
                "travel matrix must be {n}x{n}"
            )));
        }
        for i in 0..n {
            if self.travel[i][i] != 0 {
                return Err(Error::InvalidInstance(format!(
                    "travel diagonal must be zero, travel[{i}][{i}] = {}",
                    self.travel[i][i]
                )));
            }
            for j in 0..n {
                if i != j && self.travel[i][j] == 0 {
                    return Err(Error::InvalidInstance(format!(
                        "off-diagonal travel times must be positive, travel[{i}][{j}] = 0"
                    )));
                }
                if self.travel[i][j] != self.travel[j][i] {
                    return Err(Error::InvalidInstance(format!(
                        "travel matrix must be symmetric at ({i},{j})"
                    )));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if self.travel[i][k] > self.travel[i][j] + self.travel[j][k] {
                        return Err(Error::InvalidInstance(format!(
                            "triangle inequality violated: travel[{i}][{k}] > travel[{i}][{j}] + travel[{j}][{k}]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Builds an instance from site coordinates, deriving travel times from
    /// Euclidean distances (rounded up, minimum 1 off-diagonal).
    pub fn from_coordinates(
        sites: Vec<Site>,
        utilities: Vec<PolyUtility>,
        penalty: f64,
    ) -> Result<Self> {
        let travel = travel_from_coordinates(&sites);
        Self::new(sites, travel, utilities, penalty)
    }

    /// Sites i.i.d. uniform in a `side` x `side` square; one length unit is
    /// one time slot, distances rounded up with a minimum of 1 off-diagonal.
    pub fn generate_random(
        n: usize,
        side: f64,
        seed: u64,
        utility_spec: &UtilitySpec,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInstance);
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(Error::InvalidInstance(format!(
                "side length must be positive, got {side}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sites: Vec<Site> = (0..n)
            .map(|id| Site {
                id,
                x: rng.gen_range(0.0..side),
                y: rng.gen_range(0.0..side),
            })
            .collect();
        let travel = travel_from_coordinates(&sites);
        let utilities = (0..n).map(|_| utility_spec.draw(&mut rng)).collect();
        Self::new(sites, travel, utilities, 0.0)
    }

    /// Loads sites from a CSV with header `id,x,y[,c0,c1,...]`. Utility
    /// coefficients come from the columns when present, otherwise they are
    /// drawn per `utility_spec` with the given seed.
    pub fn load_sites_csv(
        path: impl AsRef<Path>,
        utility_spec: &UtilitySpec,
        seed: u64,
    ) -> Result<Self> {
        let path = path.as_ref();
        let path_str = path.display().to_string();
        let mut reader = csv::Reader::from_path(path).map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io {
                path: path_str.clone(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
            },
            _ => Error::Parse {
                path: path_str.clone(),
                row: 0,
                column: "header".into(),
                message: e.to_string(),
            },
        })?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Parse {
                path: path_str.clone(),
                row: 0,
                column: "header".into(),
                message: e.to_string(),
            })?
            .clone();
        let columns: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
        if columns.len() < 3 || columns[0] != "id" || columns[1] != "x" || columns[2] != "y" {
            return Err(Error::Parse {
                path: path_str,
                row: 0,
                column: "header".into(),
                message: "expected header id,x,y[,c0,c1,...]".into(),
            });
        }
        let coeff_columns = columns.len() - 3;
        for (k, name) in columns[3..].iter().enumerate() {
            if *name != format!("c{k}") {
                return Err(Error::Parse {
                    path: path_str,
                    row: 0,
                    column: name.clone(),
                    message: format!("expected coefficient column c{k}"),
                });
            }
        }

        let mut rows: Vec<(usize, f64, f64, Vec<f64>)> = Vec::new();
        for (idx, record) in reader.records().enumerate() {
            let row = idx + 1;
            let record = record.map_err(|e| Error::Parse {
                path: path_str.clone(),
                row,
                column: "<record>".into(),
                message: e.to_string(),
            })?;
            if record.len() != columns.len() {
                return Err(Error::Parse {
                    path: path_str,
                    row,
                    column: "<record>".into(),
                    message: format!("expected {} fields, got {}", columns.len(), record.len()),
                });
            }
            let field = |pos: usize| -> Result<f64> {
                record[pos].trim().parse::<f64>().map_err(|e| Error::Parse {
                    path: path_str.clone(),
                    row,
                    column: columns[pos].clone(),
                    message: e.to_string(),
                })
            };
            let id = record[0].trim().parse::<usize>().map_err(|e| Error::Parse {
                path: path_str.clone(),
                row,
                column: "id".into(),
                message: e.to_string(),
            })?;
            let x = field(1)?;
            let y = field(2)?;
            let coeffs: Vec<f64> = (0..coeff_columns)
                .map(|k| field(3 + k))
                .collect::<Result<_>>()?;
            rows.push((id, x, y, coeffs));
        }
        if rows.is_empty() {
            return Err(Error::EmptyInstance);
        }

        rows.sort_by_key(|r| r.0);
        for (i, row) in rows.iter().enumerate() {
            if row.0 != i {
                let message = if rows.iter().filter(|r| r.0 == row.0).count() > 1 {
                    format!("duplicate id {}", row.0)
                } else {
                    format!("ids must be contiguous 0..n-1, missing id {i}")
                };
                return Err(Error::Parse {
                    path: path_str,
                    row: i + 1,
                    column: "id".into(),
                    message,
                });
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sites: Vec<Site> = rows
            .iter()
            .map(|&(id, x, y, _)| Site { id, x, y })
            .collect();
        let utilities: Vec<PolyUtility> = rows
            .iter()
            .map(|(_, _, _, coeffs)| {
                if coeff_columns > 0 {
                    PolyUtility::new(coeffs.clone())
                } else {
                    Ok(utility_spec.draw(&mut rng))
                }
            })
            .collect::<Result<_>>()?;
        let travel = travel_from_coordinates(&sites);
        Self::new(sites, travel, utilities, 0.0)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn travel(&self, from: usize, to: usize) -> u64 {
        self.travel[from][to]
    }

    pub fn travel_matrix(&self) -> &[Vec<u64>] {
        &self.travel
    }

    pub fn utilities(&self) -> &[PolyUtility] {
        &self.utilities
    }

    pub fn utility(&self, site: usize) -> &PolyUtility {
        &self.utilities[site]
    }

    pub fn penalty(&self) -> f64 {
        self.penalty
    }

    pub fn set_penalty(&mut self, penalty: f64) -> Result<()> {
        if !(penalty.is_finite() && penalty >= 0.0) {
            return Err(Error::InvalidInstance(format!(
                "penalty must be a nonnegative real, got {penalty}"
            )));
        }
        self.penalty = penalty;
        Ok(())
    }

    /// Replaces all utilities, e.g. to force a constant-utility variant.
    pub fn with_utilities(mut self, utilities: Vec<PolyUtility>) -> Result<Self> {
        self.utilities = utilities;
        self.validate()?;
        Ok(self)
    }

    /// Maximum pairwise travel time.
    pub fn diameter(&self) -> u64 {
        self.travel
            .iter()
            .flat_map(|row| row.iter().copied())
            .max()
            .unwrap_or(0)
    }

    /// Minimum off-diagonal travel time (0 for a single-site instance).
    pub fn min_travel(&self) -> u64 {
        let n = self.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.travel[i][j])
            .min()
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let instance: Self =
            serde_json::from_str(raw).map_err(|e| Error::Serialization(e.to_string()))?;
        instance.validate()?;
        Ok(instance)
    }
}

fn travel_from_coordinates(sites: &[Site]) -> Vec<Vec<u64>> {
    let n = sites.len();
    let mut travel = vec![vec![0u64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = sites[i].x - sites[j].x;
            let dy = sites[i].y - sites[j].y;
            let d = (dx * dx + dy * dy).sqrt();
            // One length unit takes one time slot; round up, at least 1 slot.
            let slots = (d.ceil() as u64).max(1);
            travel[i][j] = slots;
            travel[j][i] = slots;
        }
    }
    travel
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec() -> UtilitySpec {
        UtilitySpec::new(1, 0.001, 1.0).unwrap()
    }

    #[test]
    fn single_site_instance_is_degenerate() {
        let inst = GraphInstance::generate_random(1, 100.0, 7, &spec()).unwrap();
        assert_eq!(inst.len(), 1);
        assert_eq!(inst.travel_matrix(), &[vec![0u64]]);
    }

    #[test]
    fn default_paper_size_instance() {
        let inst = GraphInstance::generate_random(30, 1000.0, 3, &spec()).unwrap();
        assert_eq!(inst.len(), 30);
        assert_eq!(inst.utilities().len(), 30);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = GraphInstance::generate_random(5, 10.0, 42, &spec()).unwrap();
        let b = GraphInstance::generate_random(5, 10.0, 42, &spec()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn empty_and_invalid_inputs_error() {
        assert!(matches!(
            GraphInstance::generate_random(0, 10.0, 1, &spec()),
            Err(Error::EmptyInstance)
        ));
        assert!(GraphInstance::generate_random(3, -1.0, 1, &spec()).is_err());
    }

    #[test]
    fn eval_utility_examples() {
        let constant = PolyUtility::constant(2.0).unwrap();
        assert_eq!(constant.eval(5).unwrap(), 2.0);
        let linear = PolyUtility::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(linear.eval(3).unwrap(), 3.0);
        let quad = PolyUtility::new(vec![1.0, 0.0, 1.0]).unwrap();
        assert_eq!(quad.eval(4).unwrap(), 17.0);
        assert!(quad.eval(0).is_err());
    }

    #[test]
    fn cumulative_utility_examples() {
        let constant = PolyUtility::constant(1.0).unwrap();
        assert_eq!(constant.cumulative(7), 7.0);
        assert_eq!(constant.cumulative(0), 0.0);
        let linear = PolyUtility::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(linear.cumulative(4), 10.0);
        let square = PolyUtility::new(vec![0.0, 0.0, 1.0]).unwrap();
        // Independent summation: 1 + 4 + 9.
        let direct: f64 = (1..=3u64).map(|t| (t * t) as f64).sum();
        assert_eq!(square.cumulative(3), direct);
    }

    #[test]
    fn csv_three_four_five_triangle() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sites.csv");
        std::fs::write(&path, "id,x,y\n0,0,0\n1,3,4\n").unwrap();
        let inst = GraphInstance::load_sites_csv(&path, &spec(), 1).unwrap();
        assert_eq!(inst.travel(0, 1), 5);
    }

    #[test]
    fn csv_constant_utility_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sites.csv");
        std::fs::write(&path, "id,x,y,c0\n0,0,0,0.5\n1,3,4,2.0\n").unwrap();
        let inst = GraphInstance::load_sites_csv(&path, &spec(), 1).unwrap();
        assert_eq!(inst.utility(0).coefficients(), &[0.5]);
        assert_eq!(inst.utility(1).coefficients(), &[2.0]);
    }

    #[test]
    fn csv_errors_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sites.csv");
        std::fs::write(&path, "id,x,y\n0,zero,0\n").unwrap();
        match GraphInstance::load_sites_csv(&path, &spec(), 1) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "x");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&path, "id,x,y\n0,0,0\n0,1,1\n").unwrap();
        match GraphInstance::load_sites_csv(&path, &spec(), 1) {
            Err(Error::Parse { column, message, .. }) => {
                assert_eq!(column, "id");
                assert!(message.contains("duplicate"));
            }
            other => panic!("expected duplicate-id error, got {other:?}"),
        }

        assert!(GraphInstance::load_sites_csv(dir.path().join("nope.csv"), &spec(), 1).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let inst = GraphInstance::generate_random(6, 250.0, 11, &spec()).unwrap();
        let json = inst.to_json().unwrap();
        let back = GraphInstance::from_json(&json).unwrap();
        assert_eq!(json, back.to_json().unwrap());
        assert_eq!(inst.travel_matrix(), back.travel_matrix());
        assert_eq!(inst.penalty(), back.penalty());
        for (a, b) in inst.utilities().iter().zip(back.utilities()) {
            assert_eq!(a.coefficients(), b.coefficients());
        }
    }

    proptest! {
        #[test]
        fn generated_instances_satisfy_invariants(
            n in 1usize..12,
            side in 1.0f64..500.0,
            seed in any::<u64>(),
        ) {
            // GraphInstance::new re-validates symmetry, positivity, triangle inequality.
            let inst = GraphInstance::generate_random(n, side, seed, &spec()).unwrap();
            prop_assert_eq!(inst.len(), n);
        }

        #[test]
        fn cumulative_difference_equals_eval(
            c0 in 0.0f64..5.0,
            c1 in 0.0f64..5.0,
            c2 in 0.0f64..5.0,
            horizon in 1u64..40,
        ) {
            let u = PolyUtility::new(vec![c0, c1, c2]).unwrap();
            let diff = u.cumulative(horizon) - u.cumulative(horizon - 1);
            prop_assert!((diff - u.eval(horizon).unwrap()).abs() < 1e-9 * (1.0 + diff.abs()));
        }
    }
}
