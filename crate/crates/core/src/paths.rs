//! Uniform time grids and samplers for filament cores: Brownian motion,
//! Brownian bridge and drifted SDEs integrated by Euler-Maruyama.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("at least one step is required".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }
}

/// A discretized filament core: `steps + 1` points, the first being the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    grid: TimeGrid,
    points: Vec<Vec3>,
}

impl Path {
    pub fn new(grid: TimeGrid, points: Vec<Vec3>) -> Result<Self> {
        if points.len() != grid.steps + 1 {
            return Err(Error::InvalidArgument(format!(
                "path has {} points but the grid needs {}",
                points.len(),
                grid.steps + 1
            )));
        }
        if let Some(j) = points.iter().position(|p| !vec3::is_finite(p)) {
            return Err(Error::InvalidArgument(format!("non-finite point at node {j}")));
        }
        Ok(Self { grid, points })
    }

    /// The path that sits at `x0` for the whole horizon.
    pub fn constant(grid: TimeGrid, x0: Vec3) -> Self {
        Self {
            grid,
            points: vec![x0; grid.steps + 1],
        }
    }

    /// Samples a deterministic curve `gamma` at the grid nodes.
    pub fn from_fn(grid: TimeGrid, gamma: impl Fn(f64) -> Vec3) -> Result<Self> {
        let points = (0..=grid.steps).map(|j| gamma(grid.time(j))).collect();
        Self::new(grid, points)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn origin(&self) -> Vec3 {
        self.points[0]
    }

    pub fn endpoint(&self) -> Vec3 {
        self.points[self.grid.steps]
    }

    /// `X_T - X_0`.
    pub fn displacement(&self) -> Vec3 {
        vec3::sub(&self.endpoint(), &self.origin())
    }

    pub fn increment(&self, j: usize) -> Vec3 {
        vec3::sub(&self.points[j + 1], &self.points[j])
    }

    pub fn increments(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.points.windows(2).map(|w| vec3::sub(&w[1], &w[0]))
    }

    pub fn is_closed(&self) -> bool {
        self.origin() == self.endpoint()
    }

    pub fn translate(&self, shift: &Vec3) -> Self {
        Self {
            grid: self.grid,
            points: self.points.iter().map(|p| vec3::add(p, shift)).collect(),
        }
    }

    /// Scales positions about the origin point.
    pub fn dilate(&self, factor: f64) -> Self {
        let o = self.origin();
        Self {
            grid: self.grid,
            points: self
                .points
                .iter()
                .map(|p| vec3::add(&o, &vec3::scale(&vec3::sub(p, &o), factor)))
                .collect(),
        }
    }

    /// Keeps every `factor`-th node, giving the same realization on a coarser grid.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.grid.steps.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!(
                "cannot coarsen {} steps by {factor}",
                self.grid.steps
            )));
        }
        let grid = TimeGrid::new(self.grid.horizon, self.grid.steps / factor)?;
        let points = self.points.iter().step_by(factor).copied().collect();
        Ok(Self { grid, points })
    }

    /// `sum_j (dX_j^a)(dX_j^b)` for coordinates `a`, `b`.
    pub fn covariation(&self, a: usize, b: usize) -> f64 {
        self.increments().map(|d| d[a] * d[b]).sum()
    }
}

/// Identifies the random stream of one sample.
///
/// The stream is ChaCha8 keyed by `master_seed` with stream id `sample_index`,
/// so a sample's path never depends on which worker produced it or in what order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub sample_index: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64, sample_index: u64) -> Self {
        Self {
            master_seed,
            sample_index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.sample_index);
        rng
    }

    /// An independent sub-stream for the `lane`-th auxiliary path of the same sample.
    pub fn lane(&self, lane: u64) -> Self {
        Self {
            master_seed: splitmix64(self.master_seed ^ splitmix64(lane.wrapping_add(1))),
            sample_index: self.sample_index,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub type DriftFn = dyn Fn(f64, &Vec3) -> Vec3 + Send + Sync;

/// The drift `b` of `dX = b dt + dW`.
#[derive(Clone)]
pub enum DriftModel {
    Zero,
    Constant(Vec3),
    /// Pulls the path to `target` at time `horizon`: `b(t, x) = (target - x) / (horizon - t)`.
    Bridge { target: Vec3, horizon: f64 },
    Field(Arc<DriftFn>),
}

impl fmt::Debug for DriftModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DriftModel::Zero => f.write_str("Zero"),
            DriftModel::Constant(c) => f.debug_tuple("Constant").field(c).finish(),
            DriftModel::Bridge { target, horizon } => f
                .debug_struct("Bridge")
                .field("target", target)
                .field("horizon", horizon)
                .finish(),
            DriftModel::Field(_) => f.write_str("Field(<fn>)"),
        }
    }
}

impl DriftModel {
    pub fn field(f: impl Fn(f64, &Vec3) -> Vec3 + Send + Sync + 'static) -> Self {
        DriftModel::Field(Arc::new(f))
    }

    pub fn eval(&self, t: f64, x: &Vec3) -> Vec3 {
        match self {
            DriftModel::Zero => vec3::ZERO,
            DriftModel::Constant(c) => *c,
            DriftModel::Bridge { target, horizon } => {
                vec3::scale(&vec3::sub(target, x), 1.0 / (horizon - t))
            }
            DriftModel::Field(f) => f(t, x),
        }
    }

    fn check_grid(&self, grid: &TimeGrid) -> Result<()> {
        if let DriftModel::Bridge { horizon, .. } = self {
            if *horizon != grid.horizon {
                return Err(Error::InvalidArgument(format!(
                    "bridge drift built for horizon {horizon} used on a grid with horizon {}",
                    grid.horizon
                )));
            }
        }
        Ok(())
    }
}

fn gaussian_step(rng: &mut ChaCha8Rng, sd: f64) -> Vec3 {
    let z: [f64; 3] = [
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
        StandardNormal.sample(rng),
    ];
    vec3::scale(&z, sd)
}

pub fn sample_bm(grid: TimeGrid, x0: Vec3, seed: SeedSpec) -> Path {
    let mut rng = seed.rng();
    let sd = grid.dt().sqrt();
    let mut points = Vec::with_capacity(grid.steps + 1);
    let mut x = x0;
    points.push(x);
    for _ in 0..grid.steps {
        x = vec3::add(&x, &gaussian_step(&mut rng, sd));
        points.push(x);
    }
    Path { grid, points }
}

/// `X_{t_j} = B_{t_j} - (t_j / T) B_T + x0` with `B` drawn from the same stream
/// `sample_bm` would use; the last point is set to `x0` exactly.
pub fn sample_bridge(grid: TimeGrid, x0: Vec3, seed: SeedSpec) -> Path {
    let b = sample_bm(grid, vec3::ZERO, seed);
    let n = grid.steps;
    let end = b.points[n];
    let mut points: Vec<Vec3> = b
        .points
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let s = j as f64 / n as f64;
            vec3::add(&vec3::sub(p, &vec3::scale(&end, s)), &x0)
        })
        .collect();
    points[n] = x0;
    Path { grid, points }
}

/// Euler-Maruyama with left-point drift.
pub fn sample_sde_euler(
    grid: TimeGrid,
    x0: Vec3,
    drift: &DriftModel,
    seed: SeedSpec,
) -> Result<Path> {
    drift.check_grid(&grid)?;
    if matches!(drift, DriftModel::Zero) {
        return Ok(sample_bm(grid, x0, seed));
    }
    let mut rng = seed.rng();
    let dt = grid.dt();
    let sd = dt.sqrt();
    let mut points = Vec::with_capacity(grid.steps + 1);
    let mut x = x0;
    points.push(x);
    for j in 0..grid.steps {
        let t = grid.time(j);
        let b = drift.eval(t, &x);
        if !vec3::is_finite(&b) {
            return Err(Error::NonFiniteDrift { step: j, time: t });
        }
        let dw = gaussian_step(&mut rng, sd);
        x = vec3::add(&vec3::add(&x, &vec3::scale(&b, dt)), &dw);
        points.push(x);
    }
    Path::new(grid, points)
}

/// Monte Carlo estimate of `E (int_0^T |b_t| dt)^2` by left Riemann sums.
pub fn drift_l1_moment(samples: &[(Path, DriftModel)]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("drift moment sample set"));
    }
    let mut total = 0.0;
    for (path, drift) in samples {
        drift.check_grid(path.grid())?;
        let dt = path.grid.dt();
        let mut integral = 0.0;
        for j in 0..path.grid.steps {
            let t = path.grid.time(j);
            let b = drift.eval(t, &path.points[j]);
            if !vec3::is_finite(&b) {
                return Err(Error::NonFiniteDrift { step: j, time: t });
            }
            integral += vec3::norm(&b) * dt;
        }
        total += integral * integral;
    }
    Ok(total / samples.len() as f64)
}

/// Which core process an ensemble samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Process {
    Bm,
    Bridge,
    Sde { drift: DriftSpec },
}

/// Drifts that can be written down in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DriftSpec {
    Zero,
    Constant { c: Vec3 },
    /// Euler-integrated bridge back to the starting point.
    Bridge,
}

impl DriftSpec {
    pub fn model(&self, grid: &TimeGrid, x0: Vec3) -> DriftModel {
        match self {
            DriftSpec::Zero => DriftModel::Zero,
            DriftSpec::Constant { c } => DriftModel::Constant(*c),
            DriftSpec::Bridge => DriftModel::Bridge {
                target: x0,
                horizon: grid.horizon(),
            },
        }
    }
}

impl Process {
    pub fn sample(&self, grid: TimeGrid, x0: Vec3, seed: SeedSpec) -> Result<Path> {
        match self {
            Process::Bm => Ok(sample_bm(grid, x0, seed)),
            Process::Bridge => Ok(sample_bridge(grid, x0, seed)),
            Process::Sde { drift } => sample_sde_euler(grid, x0, &drift.model(&grid, x0), seed),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Process::Bm => "bm",
            Process::Bridge => "bridge",
            Process::Sde { .. } => "sde",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(t: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t, n).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(0.0, 4).is_err());
        assert!(TimeGrid::new(-1.0, 4).is_err());
        assert!(TimeGrid::new(f64::NAN, 4).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
        let g = grid(2.0, 8);
        assert_eq!(g.dt(), 0.25);
        assert_eq!(g.time(8), 2.0);
    }

    #[test]
    fn bm_has_n_plus_one_points_anchored_at_x0() {
        let x0 = [1.0, -2.0, 0.5];
        let p = sample_bm(grid(1.0, 4), x0, SeedSpec::new(7, 3));
        assert_eq!(p.points().len(), 5);
        assert_eq!(p.origin(), x0);
    }

    #[test]
    fn bridge_endpoint_is_pinned_bitwise() {
        for idx in 0..50 {
            let x0 = [0.3, -0.0, 1e-9];
            let p = sample_bridge(grid(1.7, 37), x0, SeedSpec::new(11, idx));
            assert_eq!(p.endpoint().map(f64::to_bits), x0.map(f64::to_bits));
            assert_eq!(p.origin(), x0);
        }
        let p = sample_bridge(grid(1.0, 1), [2.0; 3], SeedSpec::new(0, 0));
        assert_eq!(p.points(), &[[2.0; 3], [2.0; 3]]);
    }

    #[test]
    fn zero_drift_euler_is_bm() {
        let g = grid(1.0, 64);
        let s = SeedSpec::new(5, 9);
        let a = sample_bm(g, [0.0; 3], s);
        let b = sample_sde_euler(g, [0.0; 3], &DriftModel::Zero, s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn field_drift_matches_equivalent_constant() {
        let g = grid(1.0, 32);
        let s = SeedSpec::new(5, 1);
        let c = [0.5, 0.0, -1.0];
        let a = sample_sde_euler(g, [0.0; 3], &DriftModel::Constant(c), s).unwrap();
        let b = sample_sde_euler(g, [0.0; 3], &DriftModel::field(move |_, _| c), s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_drift_reports_step_and_time() {
        let g = grid(1.0, 8);
        let drift = DriftModel::field(|t, _| if t > 0.3 { [f64::NAN; 3] } else { [0.0; 3] });
        match sample_sde_euler(g, [0.0; 3], &drift, SeedSpec::new(1, 1)) {
            Err(Error::NonFiniteDrift { step, time }) => {
                assert_eq!(step, 3);
                assert_eq!(time, 0.375);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bridge_drift_requires_matching_horizon() {
        let d = DriftModel::Bridge {
            target: [0.0; 3],
            horizon: 2.0,
        };
        assert!(sample_sde_euler(grid(1.0, 8), [0.0; 3], &d, SeedSpec::new(0, 0)).is_err());
    }

    #[test]
    fn drift_moment_trivial_cases() {
        let g = grid(1.0, 16);
        let p = sample_bm(g, [0.0; 3], SeedSpec::new(3, 0));
        let zero = drift_l1_moment(&[(p.clone(), DriftModel::Zero)]).unwrap();
        assert_eq!(zero, 0.0);
        let c = [3.0, 4.0, 0.0];
        let m = drift_l1_moment(&[(p, DriftModel::Constant(c))]).unwrap();
        assert!((m - 25.0).abs() < 1e-12);
        assert!(drift_l1_moment(&[]).is_err());
    }

    #[test]
    fn seeds_are_independent_of_call_order() {
        let g = grid(1.0, 16);
        let forward: Vec<Path> = (0..8).map(|i| sample_bm(g, [0.0; 3], SeedSpec::new(42, i))).collect();
        let backward: Vec<Path> = (0..8)
            .rev()
            .map(|i| sample_bm(g, [0.0; 3], SeedSpec::new(42, i)))
            .collect();
        for (i, p) in forward.iter().enumerate() {
            assert_eq!(p, &backward[7 - i]);
        }
        assert_ne!(forward[0], forward[1]);
        let lane = SeedSpec::new(42, 0).lane(0);
        assert_ne!(sample_bm(g, [0.0; 3], lane), forward[0]);
    }

    #[test]
    fn coarsen_keeps_shared_nodes() {
        let p = sample_bm(grid(1.0, 16), [0.0; 3], SeedSpec::new(1, 2));
        let c = p.coarsen(4).unwrap();
        assert_eq!(c.grid().steps(), 4);
        assert_eq!(c.points()[1], p.points()[4]);
        assert_eq!(c.endpoint(), p.endpoint());
        assert!(p.coarsen(3).is_err());
    }

    #[test]
    fn process_config_round_trips() {
        let p = Process::Sde {
            drift: DriftSpec::Constant { c: [1.0, 0.0, 0.0] },
        };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Process>(&s).unwrap(), p);
    }

    proptest! {
        #[test]
        fn translation_shifts_every_point(seed in any::<u64>(), shift in prop::array::uniform3(-10.0f64..10.0)) {
            let p = sample_bm(grid(1.0, 8), [0.0; 3], SeedSpec::new(seed, 0));
            let q = p.translate(&shift);
            for (a, b) in p.points().iter().zip(q.points()) {
                for c in 0..3 {
                    prop_assert_eq!(b[c], a[c] + shift[c]);
                }
            }
        }

        #[test]
        fn bridge_is_closed(seed in any::<u64>(), idx in any::<u64>(), n in 1usize..64) {
            let p = sample_bridge(grid(1.0, n), [1.0, 2.0, 3.0], SeedSpec::new(seed, idx));
            prop_assert!(p.is_closed());
        }
    }
}
