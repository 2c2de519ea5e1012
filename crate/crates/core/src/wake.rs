//! Synthetic wake-model calibration benchmark.
//!
//! A Jensen-type wake simulator over a small turbine grid: each upwind
//! turbine casts a linearly expanding wake cone whose fractional velocity
//! deficit decays as `(r / (r + theta * s))^2`; multiple wakes combine by
//! root-sum-of-squares. Simulated per-turbine power comes from a parametric
//! cubic power curve. The synthetic dataset generator plants a known decay
//! coefficient and heteroscedastic observation noise that grows with
//! turbulence intensity, so the benchmark has structure worth stratifying on.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Weibull};

use crate::conv::ConcomitantCandidate;
use crate::data::{DataPoint, Dataset};
use crate::problem::{AuxiliaryRecord, Problem};
use crate::rng::RandomStream;
use crate::strata::{Covariate, CovariateSource, Transform};

/// Industry-standard offshore wake decay value, reported alongside results
/// for reference.
pub const REFERENCE_DECAY: f64 = 0.04;

/// Turbine geometry and ratings shared by the simulator and the generator.
#[derive(Debug, Clone)]
pub struct FarmLayout {
    /// Turbine coordinates in meters on the ground plane.
    pub positions: Vec<(f64, f64)>,
    pub rotor_radius: f64,
    pub thrust_coefficient: f64,
    pub cut_in: f64,
    pub rated: f64,
    pub cut_out: f64,
}

impl FarmLayout {
    /// 5x2 grid spaced ten rotor radii apart.
    pub fn default_grid() -> Self {
        let rotor_radius = 40.0;
        let spacing = 10.0 * rotor_radius;
        let mut positions = Vec::new();
        for col in 0..5 {
            for row in 0..2 {
                positions.push((col as f64 * spacing, row as f64 * spacing));
            }
        }
        Self {
            positions,
            rotor_radius,
            thrust_coefficient: 0.8,
            cut_in: 3.0,
            rated: 16.0,
            cut_out: 25.0,
        }
    }

    pub fn turbine_count(&self) -> usize {
        self.positions.len()
    }
}

/// Free-stream wind state for one record.
#[derive(Debug, Clone, Copy)]
pub struct WindCondition {
    pub speed: f64,
    pub direction_deg: f64,
    pub turbulence: f64,
}

impl WindCondition {
    /// Reads the benchmark feature layout `[WS, direction, TI]`.
    pub fn from_features(x: &[f64]) -> Self {
        Self {
            speed: x[0],
            direction_deg: x[1],
            turbulence: x[2],
        }
    }
}

/// Wake decay coefficient, the calibration target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WakeParameters {
    pub decay: f64,
}

/// Effective wind speed at every turbine under the Jensen cone model with
/// root-sum-of-squares superposition of upstream deficits.
pub fn jensen_deficits(layout: &FarmLayout, condition: &WindCondition, decay: f64) -> Vec<f64> {
    let phi = condition.direction_deg.to_radians();
    let downwind = (phi.cos(), phi.sin());
    let r = layout.rotor_radius;
    let ct_term = 1.0 - (1.0 - layout.thrust_coefficient).sqrt();
    let n = layout.turbine_count();
    let mut speeds = Vec::with_capacity(n);
    for j in 0..n {
        let (xj, yj) = layout.positions[j];
        let mut sum_sq = 0.0;
        for i in 0..n {
            if i == j {
                continue;
            }
            let (xi, yi) = layout.positions[i];
            let (dx, dy) = (xj - xi, yj - yi);
            let s = dx * downwind.0 + dy * downwind.1;
            if s <= 0.0 {
                continue; // not downwind of turbine i
            }
            let crosswind = (dx * downwind.1 - dy * downwind.0).abs();
            let wake_radius = r + decay * s;
            if crosswind > wake_radius {
                continue;
            }
            let deficit = ct_term * (r / wake_radius) * (r / wake_radius);
            sum_sq += deficit * deficit;
        }
        let combined = sum_sq.sqrt().min(1.0);
        speeds.push(condition.speed * (1.0 - combined));
    }
    speeds
}

/// Normalized power output in [0, 1]: zero outside the operating band, one at
/// or above rated speed, and a smooth monotone cubic ramp in between.
pub fn power_curve(speed: f64, layout: &FarmLayout) -> f64 {
    if speed < layout.cut_in || speed > layout.cut_out {
        return 0.0;
    }
    if speed >= layout.rated {
        return 1.0;
    }
    let t = (speed - layout.cut_in) / (layout.rated - layout.cut_in);
    t * t * (3.0 - 2.0 * t)
}

/// Indices into the wake problem's auxiliary record.
pub const AUX_WS: usize = 0;
pub const AUX_H: usize = 1;
pub const AUX_WS_SQ: usize = 2;
pub const AUX_H_SQ: usize = 3;
pub const AUX_WS_CUBE: usize = 4;

const WAKE_AUX_KEYS: [&str; 5] = ["ws_hat", "h_hat", "ws_hat_sq", "h_hat_sq", "ws_hat_cube"];

/// The calibration problem: squared error between simulated and observed
/// normalized power, averaged over turbines.
#[derive(Debug, Clone)]
pub struct WakeProblem {
    pub layout: FarmLayout,
}

impl WakeProblem {
    pub fn new(layout: FarmLayout) -> Self {
        Self { layout }
    }

    /// Simulated per-turbine normalized power at `decay` for one record.
    pub fn simulated_power(&self, decay: f64, x: &[f64]) -> Vec<f64> {
        let condition = WindCondition::from_features(x);
        jensen_deficits(&self.layout, &condition, decay)
            .into_iter()
            .map(|u| power_curve(u, &self.layout))
            .collect()
    }
}

impl Problem for WakeProblem {
    fn theta_dim(&self) -> usize {
        1
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(1e-3, 0.5)]
    }

    fn aux_keys(&self) -> &'static [&'static str] {
        &WAKE_AUX_KEYS
    }

    fn evaluate(&self, theta: &[f64], point: &DataPoint) -> (f64, AuxiliaryRecord) {
        let condition = WindCondition::from_features(&point.x);
        let speeds = jensen_deficits(&self.layout, &condition, theta[0]);
        let p = speeds.len() as f64;
        let mut loss = 0.0;
        let mut mean_speed = 0.0;
        let mut mean_power = 0.0;
        for (j, &u) in speeds.iter().enumerate() {
            let h = power_curve(u, &self.layout);
            let d = h - point.y[j];
            loss += d * d;
            mean_speed += u;
            mean_power += h;
        }
        loss /= p;
        mean_speed /= p;
        mean_power /= p;
        let aux = AuxiliaryRecord::new(vec![
            mean_speed,
            mean_power,
            mean_speed * mean_speed,
            mean_power * mean_power,
            mean_speed * mean_speed * mean_speed,
        ]);
        (loss, aux)
    }
}

/// Concomitant candidates over the real inputs: WS, TI and their powers.
pub fn wake_real_candidates() -> Vec<ConcomitantCandidate> {
    let ws = CovariateSource::RealInput(0);
    let ti = CovariateSource::RealInput(2);
    vec![
        ConcomitantCandidate::new("WS", Covariate { source: ws, transform: Transform::Identity }),
        ConcomitantCandidate::new("TI", Covariate { source: ti, transform: Transform::Identity }),
        ConcomitantCandidate::new("WS2", Covariate { source: ws, transform: Transform::Square }),
        ConcomitantCandidate::new("TI2", Covariate { source: ti, transform: Transform::Square }),
        ConcomitantCandidate::new("WS3", Covariate { source: ws, transform: Transform::Cube }),
    ]
}

/// Concomitant candidates over simulated auxiliaries: mean simulated wind
/// speed, mean simulated power, and their powers.
pub fn wake_simulated_candidates() -> Vec<ConcomitantCandidate> {
    let cand = |name: &str, index: usize| {
        ConcomitantCandidate::new(
            name,
            Covariate {
                source: CovariateSource::SimulatedAux(index),
                transform: Transform::Identity,
            },
        )
    };
    vec![
        cand("WSsim", AUX_WS),
        cand("hsim", AUX_H),
        cand("WSsim2", AUX_WS_SQ),
        cand("hsim2", AUX_H_SQ),
        cand("WSsim3", AUX_WS_CUBE),
    ]
}

/// Input feature indices the tree builder may split on (WS and TI).
pub fn wake_tree_variables() -> Vec<usize> {
    vec![0, 2]
}

/// Wind-direction sector for the synthetic generator, degrees around the
/// grid's row axis.
const DIRECTION_SECTOR: (f64, f64) = (-20.0, 20.0);

/// Draws `n` synthetic SCADA records at ground-truth `theta_star`.
///
/// Wind speed is Weibull(shape 2, scale 8 m/s) truncated to the operating
/// band, direction uniform over a sector, turbulence intensity lognormal.
/// Observed powers are the simulated powers plus Gaussian noise with standard
/// deviation `noise_scale * (0.02 + 0.3 * TI * u0 / rated)`, clipped to
/// [0, 1].
pub fn generate_synthetic_dataset(
    layout: &FarmLayout,
    n: usize,
    theta_star: f64,
    noise_scale: f64,
    stream: &mut RandomStream,
) -> Dataset {
    let problem = WakeProblem::new(layout.clone());
    let weibull = Weibull::new(8.0, 2.0).unwrap();
    let lognormal = LogNormal::new(0.1f64.ln(), 0.35).unwrap();
    let standard = Normal::new(0.0, 1.0).unwrap();
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let speed = loop {
            let u: f64 = weibull.sample(stream);
            if (layout.cut_in..=layout.cut_out).contains(&u) {
                break u;
            }
        };
        let direction = stream.random_range(DIRECTION_SECTOR.0..DIRECTION_SECTOR.1);
        let turbulence = lognormal.sample(stream);
        let x = vec![speed, direction, turbulence];
        let sd = noise_scale * (0.02 + 0.3 * turbulence * speed / layout.rated);
        let y: Vec<f64> = problem
            .simulated_power(theta_star, &x)
            .into_iter()
            .map(|h| (h + sd * standard.sample(stream)).clamp(0.0, 1.0))
            .collect();
        points.push(DataPoint::new(x, y).expect("generated records are finite"));
    }
    Dataset::new(points).expect("n >= 1")
}

/// 1-D stochastic quadratic with optimum at `theta = 0.3`.
///
/// The loss is `(theta - 0.3)^2 + max(0, 0.5 + noise_std * z)` where `z` is
/// the point's stored noise seed, keeping every loss non-negative.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub noise_std: f64,
}

pub const QUADRATIC_OPTIMUM: f64 = 0.3;

impl QuadraticProblem {
    pub fn new(noise_std: f64) -> Self {
        Self { noise_std }
    }
}

impl Problem for QuadraticProblem {
    fn theta_dim(&self) -> usize {
        1
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 2.0)]
    }

    fn aux_keys(&self) -> &'static [&'static str] {
        &["noise_input"]
    }

    fn evaluate(&self, theta: &[f64], point: &DataPoint) -> (f64, AuxiliaryRecord) {
        let d = theta[0] - QUADRATIC_OPTIMUM;
        let noise = (0.5 + self.noise_std * point.x[0]).max(0.0);
        (d * d + noise, AuxiliaryRecord::new(vec![point.x[0]]))
    }
}

/// Points for [`QuadraticProblem`]: x holds a standard-normal noise seed.
pub fn quadratic_dataset(n: usize, stream: &mut RandomStream) -> Dataset {
    let standard = Normal::new(0.0, 1.0).unwrap();
    Dataset::new(
        (0..n)
            .map(|_| {
                DataPoint::new(vec![standard.sample(stream)], vec![0.0])
                    .expect("finite draws")
            })
            .collect(),
    )
    .expect("n >= 1")
}

/// Two-regime heteroscedastic problem with the optimal 1-D strata boundary at
/// `x = 0.5` by construction: losses run `Normal(10, 1)` below it and
/// `Normal(20, 25)` above it (plus the same quadratic calibration term).
#[derive(Debug, Clone)]
pub struct TwoRegimeProblem;

pub const TWO_REGIME_BOUNDARY: f64 = 0.5;
pub const TWO_REGIME_MEANS: (f64, f64) = (10.0, 20.0);
pub const TWO_REGIME_SIGMAS: (f64, f64) = (1.0, 5.0);

impl Problem for TwoRegimeProblem {
    fn theta_dim(&self) -> usize {
        1
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(-1.0, 2.0)]
    }

    fn evaluate(&self, theta: &[f64], point: &DataPoint) -> (f64, AuxiliaryRecord) {
        let d = theta[0] - QUADRATIC_OPTIMUM;
        let (mean, sd) = if point.x[0] < TWO_REGIME_BOUNDARY {
            (TWO_REGIME_MEANS.0, TWO_REGIME_SIGMAS.0)
        } else {
            (TWO_REGIME_MEANS.1, TWO_REGIME_SIGMAS.1)
        };
        let level = (mean + sd * point.x[1]).max(0.0);
        (d * d + level, AuxiliaryRecord::empty())
    }
}

/// Points for [`TwoRegimeProblem`]: x = [position in (0,1), noise seed].
pub fn two_regime_dataset(n: usize, stream: &mut RandomStream) -> Dataset {
    let standard = Normal::new(0.0, 1.0).unwrap();
    Dataset::new(
        (0..n)
            .map(|_| {
                DataPoint::new(
                    vec![stream.random_range(0.0..1.0), standard.sample(stream)],
                    vec![0.0],
                )
                .expect("finite draws")
            })
            .collect(),
    )
    .expect("n >= 1")
}

/// The two analytic oracle problems used throughout the test suites.
pub fn analytic_problems() -> (QuadraticProblem, TwoRegimeProblem) {
    (QuadraticProblem::new(0.1), TwoRegimeProblem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::RunningStats;
    use approx::assert_abs_diff_eq;

    fn layout() -> FarmLayout {
        FarmLayout::default_grid()
    }

    fn west_wind(speed: f64) -> WindCondition {
        WindCondition {
            speed,
            direction_deg: 0.0,
            turbulence: 0.1,
        }
    }

    #[test]
    fn upwind_turbines_see_free_stream() {
        let l = layout();
        let speeds = jensen_deficits(&l, &west_wind(10.0), 0.05);
        // First column (x = 0) has no upwind turbines.
        assert_eq!(speeds[0], 10.0);
        assert_eq!(speeds[1], 10.0);
        // Downstream columns are slowed.
        assert!(speeds[2] < 10.0);
        assert!(speeds[9] < 10.0);
    }

    #[test]
    fn huge_decay_dilutes_the_wake_away() {
        let l = layout();
        let speeds = jensen_deficits(&l, &west_wind(10.0), 1e6);
        for &u in &speeds {
            assert_abs_diff_eq!(u, 10.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn two_turbine_inline_deficit_matches_hand_value() {
        let l = FarmLayout {
            positions: vec![(0.0, 0.0), (400.0, 0.0)],
            rotor_radius: 40.0,
            thrust_coefficient: 0.8,
            cut_in: 3.0,
            rated: 12.0,
            cut_out: 25.0,
        };
        let speeds = jensen_deficits(&l, &west_wind(10.0), 0.05);
        // deficit = (1 - sqrt(0.2)) * (40/60)^2 = 0.2456828464...
        assert_abs_diff_eq!(speeds[1], 10.0 * (1.0 - 0.2456828464), epsilon = 1e-8);
        assert_eq!(speeds[0], 10.0);
    }

    #[test]
    fn wake_recovery_is_monotone_in_decay_and_distance() {
        // Full range on an inline pair, where recovery is monotone for any
        // decay value.
        let inline = FarmLayout {
            positions: vec![(0.0, 0.0), (400.0, 0.0)],
            ..layout()
        };
        let mut prev = 0.0;
        for k in 1..400 {
            let decay = k as f64 * 0.005;
            let u = jensen_deficits(&inline, &west_wind(10.0), decay)[1];
            assert!(u >= prev);
            prev = u;
        }
        // On the grid, below the first cross-row cone-entry threshold
        // (theta ~ 0.225 for the 1600 m pair), recovery is monotone too.
        let l = layout();
        let mut prev = 0.0;
        for k in 1..=44 {
            let decay = k as f64 * 0.005;
            let u = jensen_deficits(&l, &west_wind(10.0), decay)[8];
            assert!(u >= prev, "decay {decay}");
            prev = u;
        }
        // Farther downstream distance recovers more speed for a fixed source.
        let two = |s: f64| {
            let l = FarmLayout {
                positions: vec![(0.0, 0.0), (s, 0.0)],
                ..layout()
            };
            jensen_deficits(&l, &west_wind(10.0), 0.05)[1]
        };
        assert!(two(400.0) < two(800.0));
        assert!(two(800.0) < two(1600.0));
    }

    #[test]
    fn combined_deficit_never_exceeds_one() {
        let l = layout();
        for k in 0..60 {
            let decay = 1e-4 + k as f64 * 0.01;
            for &u in &jensen_deficits(&l, &west_wind(10.0), decay) {
                assert!((0.0..=10.0).contains(&u));
            }
        }
    }

    #[test]
    fn stacked_wakes_clamp_to_zero_speed() {
        // Nine tightly packed upwind turbines at a near-zero decay push the
        // root-sum-of-squares deficit past one; the combined deficit clamps.
        let positions: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 * 2.0, 0.0)).collect();
        let l = FarmLayout {
            positions,
            ..layout()
        };
        let speeds = jensen_deficits(&l, &west_wind(10.0), 1e-4);
        assert_eq!(*speeds.last().unwrap(), 0.0);
        assert!(speeds.iter().all(|&u| u >= 0.0));
    }

    #[test]
    fn power_curve_shape() {
        let l = layout();
        assert_eq!(power_curve(0.0, &l), 0.0);
        assert_eq!(power_curve(2.9, &l), 0.0);
        assert_eq!(power_curve(3.0, &l), 0.0); // ramp starts at zero
        assert_eq!(power_curve(l.rated, &l), 1.0);
        assert_eq!(power_curve(20.0, &l), 1.0);
        assert_eq!(power_curve(25.1, &l), 0.0);
        // Midpoint of the ramp hits exactly one half.
        let mid = 0.5 * (l.cut_in + l.rated);
        assert_abs_diff_eq!(power_curve(mid, &l), 0.5, epsilon = 1e-15);
        // Monotone over the ramp.
        let mut prev = -1.0;
        for k in 0..=1000 {
            let u = l.cut_in + (l.rated - l.cut_in) * k as f64 / 1000.0;
            let p = power_curve(u, &l);
            assert!(p >= prev);
            prev = p;
        }
    }

    #[test]
    fn zero_noise_dataset_has_zero_loss_at_truth() {
        let l = layout();
        let mut stream = RandomStream::derive(31, 0, "data");
        let ds = generate_synthetic_dataset(&l, 50, 0.05, 0.0, &mut stream);
        let problem = WakeProblem::new(l);
        for p in ds.points() {
            let (loss, _) = problem.evaluate(&[0.05], p);
            assert_eq!(loss, 0.0);
        }
    }

    #[test]
    fn loss_grid_is_minimized_at_truth() {
        let l = layout();
        let mut stream = RandomStream::derive(32, 0, "data");
        let ds = generate_synthetic_dataset(&l, 200, 0.05, 0.0, &mut stream);
        let problem = WakeProblem::new(l);
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..=60 {
            let theta = k as f64 * 0.0025; // 0.0025 .. 0.15
            let mean: f64 = ds
                .points()
                .iter()
                .map(|p| problem.evaluate(&[theta], p).0)
                .sum::<f64>()
                / ds.len() as f64;
            if mean < best.0 {
                best = (mean, theta);
            }
        }
        assert_abs_diff_eq!(best.1, 0.05, epsilon = 0.0026);
    }

    #[test]
    fn generated_outputs_stay_normalized() {
        let l = layout();
        let mut stream = RandomStream::derive(33, 0, "data");
        let ds = generate_synthetic_dataset(&l, 500, 0.05, 3.0, &mut stream);
        for p in ds.points() {
            assert!(p.y.iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(p.x[0] >= l.cut_in && p.x[0] <= l.cut_out);
            assert!(p.x[2] > 0.0);
        }
    }

    fn spearman(a: &[f64], b: &[f64]) -> f64 {
        fn ranks(v: &[f64]) -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
            let mut r = vec![0.0; v.len()];
            for (rank, &i) in idx.iter().enumerate() {
                r[i] = rank as f64;
            }
            r
        }
        crate::stats::pearson_correlation(&ranks(a), &ranks(b)).unwrap()
    }

    #[test]
    fn noise_is_heteroscedastic_in_turbulence() {
        let l = layout();
        let mut stream = RandomStream::derive(34, 0, "data");
        let ds = generate_synthetic_dataset(&l, 10_000, 0.05, 1.0, &mut stream);
        let problem = WakeProblem::new(l);
        let ti: Vec<f64> = ds.points().iter().map(|p| p.x[2]).collect();
        let sq_resid: Vec<f64> = ds
            .points()
            .iter()
            .map(|p| problem.evaluate(&[0.05], p).0)
            .collect();
        let rho = spearman(&ti, &sq_resid);
        assert!(rho > 0.2, "spearman = {rho}");
    }

    #[test]
    fn loss_is_continuous_in_theta() {
        let l = layout();
        let mut stream = RandomStream::derive(35, 0, "data");
        let ds = generate_synthetic_dataset(&l, 100, 0.05, 1.0, &mut stream);
        let problem = WakeProblem::new(l.clone());
        // Conservative Lipschitz bound: power-curve slope 1.5/(rated-cut_in),
        // per-pair deficit slope <= 2*ct_term*s/r at theta -> 0, up to 9
        // upwind turbines, |dloss/dh| <= 2.
        let ct_term = 1.0 - (1.0 - l.thrust_coefficient).sqrt();
        let s_max = 4.0 * 10.0 * l.rotor_radius;
        let du = 9.0 * 2.0 * ct_term * s_max / l.rotor_radius * l.cut_out;
        let lipschitz = 2.0 * 1.5 / (l.rated - l.cut_in) * du;
        let h = 1e-3;
        let mut prev: Option<f64> = None;
        for k in 0..=300 {
            let theta = 0.01 + k as f64 * h;
            let mean: f64 = ds
                .points()
                .iter()
                .map(|p| problem.evaluate(&[theta], p).0)
                .sum::<f64>()
                / ds.len() as f64;
            if let Some(prev) = prev {
                assert!((mean - prev).abs() <= lipschitz * h);
            }
            prev = Some(mean);
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let l = layout();
        let mut stream = RandomStream::derive(36, 0, "data");
        let ds = generate_synthetic_dataset(&l, 10, 0.05, 1.0, &mut stream);
        let problem = WakeProblem::new(l);
        for p in ds.points() {
            let (l1, a1) = problem.evaluate(&[0.07], p);
            let (l2, a2) = problem.evaluate(&[0.07], p);
            assert_eq!(l1, l2);
            assert_eq!(a1, a2);
        }
    }

    #[test]
    fn aux_record_matches_key_contract() {
        let l = layout();
        let problem = WakeProblem::new(l);
        let point = DataPoint::new(vec![10.0, 0.0, 0.1], vec![0.5; 10]).unwrap();
        let (_, aux) = problem.evaluate(&[0.05], &point);
        assert_eq!(aux.values().len(), problem.aux_keys().len());
        assert_abs_diff_eq!(
            aux.get(AUX_WS_SQ),
            aux.get(AUX_WS) * aux.get(AUX_WS),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            aux.get(AUX_H_SQ),
            aux.get(AUX_H) * aux.get(AUX_H),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            aux.get(AUX_WS_CUBE),
            aux.get(AUX_WS).powi(3),
            epsilon = 1e-9
        );
        assert_eq!(REFERENCE_DECAY, 0.04);
    }

    #[test]
    fn quadratic_problem_is_minimized_at_optimum() {
        let mut stream = RandomStream::derive(37, 0, "quad");
        let ds = quadratic_dataset(500, &mut stream);
        let noiseless = QuadraticProblem::new(0.0);
        let mean_at = |theta: f64| -> f64 {
            ds.points()
                .iter()
                .map(|p| noiseless.evaluate(&[theta], p).0)
                .sum::<f64>()
                / ds.len() as f64
        };
        assert!(mean_at(0.3) < mean_at(0.25));
        assert!(mean_at(0.3) < mean_at(0.35));
        assert_abs_diff_eq!(mean_at(QUADRATIC_OPTIMUM), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn two_regime_stratification_gain_is_analytic() {
        use crate::strata::analytic_variances;
        // With the true boundary, proportional allocation variance must be
        // well below the unstratified variance.
        let p = [0.5, 0.5];
        let sigma = [TWO_REGIME_SIGMAS.0, TWO_REGIME_SIGMAS.1];
        let n = 100;
        let (_, prop) = analytic_variances(&p, &sigma, n);
        let spread = (TWO_REGIME_MEANS.1 - TWO_REGIME_MEANS.0) / 2.0;
        let unstrat = (p[0] * sigma[0] * sigma[0]
            + p[1] * sigma[1] * sigma[1]
            + p[0] * spread * spread
            + p[1] * spread * spread)
            / n as f64;
        assert!(prop < 0.8 * unstrat, "prop {prop} vs unstrat {unstrat}");
    }

    #[test]
    fn two_regime_sample_moments_match_design() {
        let mut stream = RandomStream::derive(38, 0, "regime");
        let ds = two_regime_dataset(20_000, &mut stream);
        let problem = TwoRegimeProblem;
        let mut low = RunningStats::new();
        let mut high = RunningStats::new();
        for p in ds.points() {
            let (loss, _) = problem.evaluate(&[QUADRATIC_OPTIMUM], p);
            if p.x[0] < TWO_REGIME_BOUNDARY {
                low.push(loss);
            } else {
                high.push(loss);
            }
        }
        assert_abs_diff_eq!(low.mean(), TWO_REGIME_MEANS.0, epsilon = 0.05);
        assert_abs_diff_eq!(high.mean(), TWO_REGIME_MEANS.1, epsilon = 0.15);
        assert_abs_diff_eq!(low.variance().unwrap(), 1.0, epsilon = 0.05);
        assert_abs_diff_eq!(high.variance().unwrap(), 25.0, epsilon = 1.0);
    }

    #[test]
    fn oracle_stratification_has_headroom() {
        // The designed heteroscedasticity leaves real variance for a good
        // (WS, TI) stratification to remove, at far and near iterates alike.
        let l = layout();
        let mut stream = RandomStream::derive(901, 0, "oracle");
        let ds = generate_synthetic_dataset(&l, 20_000, 0.05, 1.0, &mut stream);
        let problem = WakeProblem::new(l);
        for theta in [0.1, 0.05] {
            let losses: Vec<f64> = ds
                .points()
                .iter()
                .map(|p| problem.evaluate(&[theta], p).0)
                .collect();
            let total = RunningStats::from_slice(&losses).variance().unwrap();
            let mut ws: Vec<f64> = ds.points().iter().map(|p| p.x[0]).collect();
            ws.sort_by(f64::total_cmp);
            let mut ti: Vec<f64> = ds.points().iter().map(|p| p.x[2]).collect();
            ti.sort_by(f64::total_cmp);
            let n = ds.len();
            let wcut: Vec<f64> = (1..10).map(|i| ws[n * i / 10]).collect();
            let tcut: Vec<f64> = (1..3).map(|i| ti[n * i / 3]).collect();
            let mut cells = vec![RunningStats::new(); 30];
            for (p, &loss) in ds.points().iter().zip(&losses) {
                let wi = wcut.partition_point(|&c| c <= p.x[0]);
                let tj = tcut.partition_point(|&c| c <= p.x[2]);
                cells[wi * 3 + tj].push(loss);
            }
            let within: f64 = cells
                .iter()
                .filter(|c| c.count() > 1)
                .map(|c| c.count() as f64 / n as f64 * c.variance().unwrap())
                .sum();
            assert!(
                within < 0.9 * total,
                "theta {theta}: within {within:.3e} vs total {total:.3e}"
            );
        }
    }
}
