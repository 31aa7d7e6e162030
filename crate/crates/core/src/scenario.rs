//! Static world: vehicle and exogenous-variable placement, ground-truth
//! relevance, and per-epoch local detections.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::rng::{DrawKey, RngStreams, Stream};

/// Detection probabilities below this are treated as exactly zero when the
/// per-vehicle candidate lists are built.
pub const DETECTION_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl VehicleId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarId(pub u32);

impl VarId {
    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Position in meters inside the square scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExogenousVariable {
    pub id: VarId,
    pub pos: Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub id: VehicleId,
    pub pos: Position,
}

/// Logistic local-detection model `1 / (1 + c1 * exp(c2 * (d - c3)))`.
///
/// `c2` is the decay rate per meter and `c3` the distance offset, so the
/// defaults (0.08, 0.08, 60) give near-certain detection at short range and
/// less than 1% at the 150 m perception range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionModelParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    #[serde(rename = "perception_range_m")]
    pub perception_range: f64,
}

impl Default for DetectionModelParams {
    fn default() -> Self {
        Self {
            c1: 0.08,
            c2: 0.08,
            c3: 60.0,
            perception_range: 150.0,
        }
    }
}

impl DetectionModelParams {
    /// Distance beyond which the detection probability is under `floor`.
    pub fn cutoff_distance(&self, floor: f64) -> f64 {
        // 1 / (1 + c1 e^{c2 (d - c3)}) = floor  <=>  d = c3 + ln((1/floor - 1) / c1) / c2
        self.c3 + ((1.0 / floor - 1.0) / self.c1).ln() / self.c2
    }
}

/// Probability that a vehicle detects a variable `d` meters away.
#[inline]
pub fn detection_probability(d: f64, params: &DetectionModelParams) -> f64 {
    debug_assert!(d >= 0.0);
    1.0 / (1.0 + params.c1 * (params.c2 * (d - params.c3)).exp())
}

/// How the relevant subset is drawn from the variables within the relevance range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceSelection {
    #[default]
    Uniform,
    NearestM,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    #[serde(rename = "area_side_m")]
    pub area_side: f64,
    pub density_per_km2: f64,
    #[serde(rename = "relevance_range_m")]
    pub relevance_range: f64,
    pub relevant_count: u32,
    pub relevance_selection: RelevanceSelection,
    pub torus: bool,
    pub persistent_detection: bool,
    pub detection: DetectionModelParams,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            area_side: 2000.0,
            density_per_km2: 750.0,
            relevance_range: 400.0,
            relevant_count: 40,
            relevance_selection: RelevanceSelection::Uniform,
            torus: false,
            persistent_detection: false,
            detection: DetectionModelParams::default(),
        }
    }
}

/// Binary ground-truth relevance per vehicle. Immutable for a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelevanceMap {
    pub relevance_range: f64,
    pub target_count: u32,
    /// Sorted relevant variable ids per vehicle.
    sets: Vec<Vec<VarId>>,
    #[serde(skip)]
    bits: Vec<Vec<u64>>,
}

impl RelevanceMap {
    pub fn new(relevance_range: f64, target_count: u32, n_variables: usize, mut sets: Vec<Vec<VarId>>) -> Self {
        let words = n_variables.div_ceil(64);
        let bits = sets
            .iter_mut()
            .map(|set| {
                set.sort_unstable();
                set.dedup();
                let mut b = vec![0u64; words];
                for x in set.iter() {
                    b[x.idx() / 64] |= 1 << (x.idx() % 64);
                }
                b
            })
            .collect();
        Self {
            relevance_range,
            target_count,
            sets,
            bits,
        }
    }

    #[inline]
    pub fn is_relevant(&self, vehicle: VehicleId, var: VarId) -> bool {
        let i = var.idx();
        self.bits[vehicle.idx()]
            .get(i / 64)
            .is_some_and(|w| w & (1 << (i % 64)) != 0)
    }

    /// Weight `w` of `var` for `vehicle`; only 0 and 1 occur.
    pub fn weight(&self, vehicle: VehicleId, var: VarId) -> f64 {
        if self.is_relevant(vehicle, var) {
            1.0
        } else {
            0.0
        }
    }

    pub fn relevant_set(&self, vehicle: VehicleId) -> &[VarId] {
        &self.sets[vehicle.idx()]
    }

    pub fn vehicle_count(&self) -> usize {
        self.sets.len()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct World {
    pub area_side: f64,
    pub torus: bool,
    pub vehicles: Vec<VehicleSpec>,
    pub variables: Vec<ExogenousVariable>,
    pub relevance: RelevanceMap,
    pub detection: DetectionModelParams,
    /// Per vehicle, every variable with detection probability above
    /// [`DETECTION_FLOOR`], sorted by id.
    #[serde(skip)]
    detection_candidates: Vec<Vec<(VarId, f64)>>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("at least two vehicles are required, got {0}")]
    TooFewVehicles(usize),
    #[error("area side must be positive, got {0}")]
    BadArea(f64),
    #[error("variable density must be finite and non-negative, got {0}")]
    BadDensity(f64),
    #[error("{what} {id} at ({x}, {y}) lies outside the {side} m square")]
    OutOfArea {
        what: &'static str,
        id: u32,
        x: f64,
        y: f64,
        side: f64,
    },
    #[error("ids must be dense 0..n; found {what} id {found} at index {index}")]
    SparseIds {
        what: &'static str,
        index: usize,
        found: u32,
    },
}

impl World {
    /// Place variables by a Poisson point process and vehicles uniformly,
    /// then draw each vehicle's relevant set inside the relevance range.
    pub fn generate(params: &ScenarioParams, n_vehicles: usize, rng: &RngStreams) -> Result<Self, ScenarioError> {
        if n_vehicles < 2 {
            return Err(ScenarioError::TooFewVehicles(n_vehicles));
        }
        if !(params.area_side > 0.0 && params.area_side.is_finite()) {
            return Err(ScenarioError::BadArea(params.area_side));
        }
        if !(params.density_per_km2 >= 0.0 && params.density_per_km2.is_finite()) {
            return Err(ScenarioError::BadDensity(params.density_per_km2));
        }
        let side = params.area_side;

        let mut var_rng = rng.sequential(Stream::Placement, DrawKey::new(0, 0, 0, 0));
        let mean = params.density_per_km2 * (side / 1000.0).powi(2);
        let k = if mean > 0.0 {
            Poisson::new(mean).expect("positive finite mean").sample(&mut var_rng) as usize
        } else {
            0
        };
        let variables = (0..k)
            .map(|i| ExogenousVariable {
                id: VarId(i as u32),
                pos: Position::new(var_rng.random_range(0.0..side), var_rng.random_range(0.0..side)),
            })
            .collect::<Vec<_>>();

        let mut veh_rng = rng.sequential(Stream::Placement, DrawKey::new(0, 1, 0, 0));
        let vehicles = (0..n_vehicles)
            .map(|i| VehicleSpec {
                id: VehicleId(i as u32),
                pos: Position::new(veh_rng.random_range(0.0..side), veh_rng.random_range(0.0..side)),
            })
            .collect::<Vec<_>>();

        let mut rel_rng = rng.sequential(Stream::Placement, DrawKey::new(0, 2, 0, 0));
        let m = params.relevant_count as usize;
        let mut sets = Vec::with_capacity(n_vehicles);
        for v in &vehicles {
            let mut candidates: Vec<(f64, VarId)> = variables
                .iter()
                .map(|x| (distance(v.pos, x.pos, side, params.torus), x.id))
                .filter(|(d, _)| *d <= params.relevance_range)
                .collect();
            if candidates.is_empty() {
                log::warn!("vehicle {} has no variables within {} m; its relevant set is empty", v.id.0, params.relevance_range);
            }
            let take = m.min(candidates.len());
            let chosen: Vec<VarId> = match params.relevance_selection {
                RelevanceSelection::Uniform => index::sample(&mut rel_rng, candidates.len(), take)
                    .into_iter()
                    .map(|i| candidates[i].1)
                    .collect(),
                RelevanceSelection::NearestM => {
                    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    candidates[..take].iter().map(|c| c.1).collect()
                }
            };
            sets.push(chosen);
        }
        let relevance = RelevanceMap::new(params.relevance_range, params.relevant_count, variables.len(), sets);
        Ok(Self::assemble(side, params.torus, vehicles, variables, relevance, params.detection))
    }

    /// Build a world from explicit placements and relevant sets.
    pub fn from_parts(
        area_side: f64,
        torus: bool,
        vehicles: Vec<VehicleSpec>,
        variables: Vec<ExogenousVariable>,
        relevant: Vec<Vec<VarId>>,
        relevance_range: f64,
        detection: DetectionModelParams,
    ) -> Result<Self, ScenarioError> {
        if vehicles.len() < 2 {
            return Err(ScenarioError::TooFewVehicles(vehicles.len()));
        }
        if !(area_side > 0.0) {
            return Err(ScenarioError::BadArea(area_side));
        }
        for (i, v) in vehicles.iter().enumerate() {
            if v.id.idx() != i {
                return Err(ScenarioError::SparseIds { what: "vehicle", index: i, found: v.id.0 });
            }
            check_inside("vehicle", v.id.0, v.pos, area_side)?;
        }
        for (i, x) in variables.iter().enumerate() {
            if x.id.idx() != i {
                return Err(ScenarioError::SparseIds { what: "variable", index: i, found: x.id.0 });
            }
            check_inside("variable", x.id.0, x.pos, area_side)?;
        }
        let target = relevant.iter().map(Vec::len).max().unwrap_or(0) as u32;
        let relevance = RelevanceMap::new(relevance_range, target, variables.len(), relevant);
        Ok(Self::assemble(area_side, torus, vehicles, variables, relevance, detection))
    }

    fn assemble(
        area_side: f64,
        torus: bool,
        vehicles: Vec<VehicleSpec>,
        variables: Vec<ExogenousVariable>,
        relevance: RelevanceMap,
        detection: DetectionModelParams,
    ) -> Self {
        let cutoff = detection.cutoff_distance(DETECTION_FLOOR);
        let detection_candidates = vehicles
            .iter()
            .map(|v| {
                variables
                    .iter()
                    .filter_map(|x| {
                        let d = distance(v.pos, x.pos, area_side, torus);
                        (d <= cutoff).then(|| (x.id, detection_probability(d, &detection)))
                    })
                    .filter(|(_, p)| *p >= DETECTION_FLOOR)
                    .collect()
            })
            .collect();
        Self {
            area_side,
            torus,
            vehicles,
            variables,
            relevance,
            detection,
            detection_candidates,
        }
    }

    pub fn n_vehicles(&self) -> usize {
        self.vehicles.len()
    }

    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }

    #[inline]
    pub fn vehicle_distance(&self, a: VehicleId, b: VehicleId) -> f64 {
        distance(self.vehicles[a.idx()].pos, self.vehicles[b.idx()].pos, self.area_side, self.torus)
    }

    #[inline]
    pub fn var_distance(&self, v: VehicleId, x: VarId) -> f64 {
        distance(self.vehicles[v.idx()].pos, self.variables[x.idx()].pos, self.area_side, self.torus)
    }

    /// Variables within the relevance range of `v`, sorted by id.
    pub fn variables_within(&self, v: VehicleId, range: f64) -> Vec<VarId> {
        self.variables
            .iter()
            .filter(|x| self.var_distance(v, x.id) <= range)
            .map(|x| x.id)
            .collect()
    }

    pub fn detection_candidates(&self, v: VehicleId) -> &[(VarId, f64)] {
        &self.detection_candidates[v.idx()]
    }
}

fn check_inside(what: &'static str, id: u32, p: Position, side: f64) -> Result<(), ScenarioError> {
    if (0.0..=side).contains(&p.x) && (0.0..=side).contains(&p.y) {
        Ok(())
    } else {
        Err(ScenarioError::OutOfArea { what, id, x: p.x, y: p.y, side })
    }
}

/// Euclidean distance, optionally wrapped on a torus of side `side`.
#[inline]
pub fn distance(a: Position, b: Position, side: f64, torus: bool) -> f64 {
    let mut dx = (a.x - b.x).abs();
    let mut dy = (a.y - b.y).abs();
    if torus {
        dx = dx.min(side - dx);
        dy = dy.min(side - dy);
    }
    dx.hypot(dy)
}

/// Independent Bernoulli detection of every candidate variable, keyed by
/// `(epoch, vehicle, variable)`. With `persistent` the epoch is ignored so the
/// same set is returned for the whole run.
pub fn sample_detections(world: &World, vehicle: VehicleId, epoch: u32, persistent: bool, rng: &RngStreams) -> Vec<VarId> {
    let e = if persistent { 0 } else { epoch };
    world
        .detection_candidates(vehicle)
        .iter()
        .filter(|(x, p)| rng.bernoulli(Stream::Detection, DrawKey::new(e, vehicle.0, x.0, 0), *p))
        .map(|(x, _)| *x)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(d: f64) -> f64 {
        detection_probability(d, &DetectionModelParams::default())
    }

    #[test]
    fn detection_probability_reference_points() {
        assert_relative_eq!(p(60.0), 1.0 / 1.08, epsilon = 1e-12);
        assert!((p(150.0) - 0.00925).abs() < 5e-5, "{}", p(150.0));
        assert!(p(150.0) < 0.01);
        assert!(p(1e6) < 1e-10);
        assert!(p(0.0) > 0.999);
    }

    #[test]
    fn cutoff_inverts_the_model() {
        let params = DetectionModelParams::default();
        let d = params.cutoff_distance(1e-6);
        assert_relative_eq!(detection_probability(d, &params), 1e-6, max_relative = 1e-9);
    }

    #[test]
    fn torus_distance_wraps() {
        let a = Position::new(10.0, 10.0);
        let b = Position::new(1990.0, 10.0);
        assert_relative_eq!(distance(a, b, 2000.0, false), 1980.0);
        assert_relative_eq!(distance(a, b, 2000.0, true), 20.0);
    }

    #[test]
    fn zero_density_gives_empty_world() {
        let params = ScenarioParams {
            density_per_km2: 0.0,
            ..Default::default()
        };
        let w = World::generate(&params, 10, &RngStreams::new(1)).unwrap();
        assert_eq!(w.n_variables(), 0);
        for v in &w.vehicles {
            assert!(w.relevance.relevant_set(v.id).is_empty());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let params = ScenarioParams::default();
        assert_eq!(
            World::generate(&params, 1, &RngStreams::new(1)).unwrap_err(),
            ScenarioError::TooFewVehicles(1)
        );
        let bad = ScenarioParams {
            area_side: 0.0,
            ..Default::default()
        };
        assert!(matches!(World::generate(&bad, 5, &RngStreams::new(1)), Err(ScenarioError::BadArea(_))));
    }

    #[test]
    fn interior_vehicle_gets_exactly_m_relevant() {
        let params = ScenarioParams::default();
        let w = World::generate(&params, 50, &RngStreams::new(5)).unwrap();
        for v in &w.vehicles {
            let interior = (400.0..=1600.0).contains(&v.pos.x) && (400.0..=1600.0).contains(&v.pos.y);
            let within = w.variables_within(v.id, params.relevance_range);
            let set = w.relevance.relevant_set(v.id);
            assert_eq!(set.len(), within.len().min(40));
            if interior {
                // pi * 400^2 * 750e-6 ~ 377 candidates
                assert!((280..480).contains(&within.len()), "{}", within.len());
                assert_eq!(set.len(), 40);
            }
            for x in set {
                assert!(w.var_distance(v.id, *x) <= params.relevance_range);
            }
        }
    }

    #[test]
    fn nearest_m_picks_closest() {
        let params = ScenarioParams {
            relevance_selection: RelevanceSelection::NearestM,
            ..Default::default()
        };
        let w = World::generate(&params, 3, &RngStreams::new(2)).unwrap();
        let v = VehicleId(0);
        let set = w.relevance.relevant_set(v);
        let far = set.iter().map(|x| w.var_distance(v, *x)).fold(0.0, f64::max);
        let outside_closer = w
            .variables
            .iter()
            .filter(|x| !set.contains(&x.id))
            .any(|x| w.var_distance(v, x.id) < far);
        assert!(!outside_closer);
    }

    #[test]
    fn far_variables_never_detected() {
        let vehicles = vec![
            VehicleSpec { id: VehicleId(0), pos: Position::new(0.0, 0.0) },
            VehicleSpec { id: VehicleId(1), pos: Position::new(5.0, 5.0) },
        ];
        let variables = vec![ExogenousVariable { id: VarId(0), pos: Position::new(2_000_000.0, 0.0) }];
        let w = World::from_parts(3e6, false, vehicles, variables, vec![vec![], vec![]], 400.0, Default::default()).unwrap();
        let rng = RngStreams::new(9);
        for e in 0..1000 {
            assert!(sample_detections(&w, VehicleId(0), e, false, &rng).is_empty());
        }
    }

    #[test]
    fn single_variable_detection_frequency() {
        let vehicles = vec![
            VehicleSpec { id: VehicleId(0), pos: Position::new(100.0, 100.0) },
            VehicleSpec { id: VehicleId(1), pos: Position::new(900.0, 900.0) },
        ];
        let variables = vec![ExogenousVariable { id: VarId(0), pos: Position::new(160.0, 100.0) }];
        let w = World::from_parts(1000.0, false, vehicles, variables, vec![vec![], vec![]], 400.0, Default::default()).unwrap();
        let rng = RngStreams::new(11);
        let hits = (0..10_000)
            .filter(|e| !sample_detections(&w, VehicleId(0), *e, false, &rng).is_empty())
            .count();
        let freq = hits as f64 / 10_000.0;
        assert!((freq - 0.926).abs() < 0.01, "{freq}");
    }

    #[test]
    fn persistent_detection_freezes_the_set() {
        let w = World::generate(&ScenarioParams::default(), 4, &RngStreams::new(3)).unwrap();
        let rng = RngStreams::new(3);
        let first = sample_detections(&w, VehicleId(1), 0, true, &rng);
        for e in 1..20 {
            assert_eq!(sample_detections(&w, VehicleId(1), e, true, &rng), first);
        }
    }
}
