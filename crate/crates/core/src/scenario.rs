//! Versioned JSON scenario: route, GPS denial, obstacles, parameter
//! overrides, simulation settings and planner settings.

use nalgebra::{DMatrix, DVector, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::collision::{ObstacleMap, ObstacleSpec};
use crate::error::{Error, Result};
use crate::lincov::{AugmentedCovariance, NominalTrajectory, StopCondition};
use crate::montecarlo::{CompareOptions, RunConfig};
use crate::rrt::{plan, planner_rng, Continuation, PlanContext, PlanResult, PlannerConfig};
use crate::sysmodel::Dimensions;
use crate::uav::{
    mapping_matrix_padded, ClosedLoop, GpsCoverage, LoopState, Rect, UavModel, UavParams,
    WaypointTracker,
};

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
    /// route in (north, east), m; for planning, first is the start and last the goal
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default)]
    pub gps_denied: Vec<Rect>,
    #[serde(default)]
    pub obstacles: ObstacleConfig,
    #[serde(default)]
    pub params: UavParams,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub initial: InitialUncertainty,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub planner: PlannerSettings,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleConfig {
    /// collision box half-widths (north, east), m
    pub half_extent: [f64; 2],
    pub items: Vec<ObstacleSpec>,
}

impl Default for ObstacleConfig {
    fn default() -> Self {
        Self {
            half_extent: [10.0, 10.0],
            items: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// integration step, s
    pub dt: f64,
    /// steps between GPS fixes; 0 disables GPS
    pub gps_period_steps: usize,
    /// fixed horizon, s; when absent the run ends at the last waypoint
    pub duration: Option<f64>,
    /// record every n-th step in output series
    pub output_stride: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            gps_period_steps: 100,
            duration: None,
            output_stride: 1,
        }
    }
}

/// Initial 1σ uncertainties. Truth order: p_n, p_e, V_g, ψ, ω, u_w, T_dist;
/// navigation error order: p_n, p_e, V_g, ψ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialUncertainty {
    pub truth_sigma: [f64; 7],
    pub nav_sigma: [f64; 4],
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        Self {
            // gust and torque start at their stationary spread
            truth_sigma: [1.0, 1.0, 0.1, 0.01, 0.01, 1.06, 0.0033],
            nav_sigma: [1.0, 1.0, 0.033, 0.01],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub runs: usize,
    /// accepted relative deviation of MC σ from LinCov σ
    pub tolerance: f64,
    /// initial span excluded from the comparison, s
    pub transient: f64,
    /// span after leaving a GPS-denied region that is flagged, not scored, s
    pub exit_window: f64,
    /// fraction of scored points that must be within tolerance
    pub min_fraction: f64,
    /// σ below which both estimates count as zero
    pub abs_floor: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            runs: 500,
            tolerance: 0.15,
            transient: 5.0,
            exit_window: 5.0,
            min_fraction: 0.95,
            abs_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerSettings {
    pub bounds_min: [f64; 2],
    pub bounds_max: [f64; 2],
    pub iterations: usize,
    /// steer distance λ, m; also the goal-connection radius
    pub step: f64,
    /// collision probability threshold p_max
    pub threshold: f64,
    pub goal_bias: f64,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        Self {
            bounds_min: [0.0, 0.0],
            bounds_max: [1000.0, 1000.0],
            iterations: 3000,
            step: 100.0,
            threshold: 0.01,
            goal_bias: 0.05,
        }
    }
}

fn config_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn finite_pair(path: &str, v: &[f64; 2]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(config_err(path, "must be finite"))
    }
}

impl Scenario {
    /// Scenario with the given route and every other field defaulted.
    pub fn with_waypoints(waypoints: Vec<[f64; 2]>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: String::new(),
            note: String::new(),
            waypoints,
            gps_denied: Vec::new(),
            obstacles: ObstacleConfig::default(),
            params: UavParams::default(),
            simulation: SimulationConfig::default(),
            initial: InitialUncertainty::default(),
            monte_carlo: MonteCarloConfig::default(),
            planner: PlannerSettings::default(),
            seed: default_seed(),
        }
    }

    /// Parses and validates JSON text. Blank input is treated as `{}` so the
    /// report names the missing required fields.
    pub fn from_json(text: &str) -> Result<Self> {
        let text = if text.trim().is_empty() { "{}" } else { text };
        let de = &mut serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(path, e.into_inner().to_string())
        })?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if self.waypoints.len() < 2 {
            return Err(config_err("waypoints", "at least two waypoints are required"));
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            finite_pair(&format!("waypoints[{i}]"), w)?;
            if i > 0 && *w == self.waypoints[i - 1] {
                return Err(config_err(format!("waypoints[{i}]"), "repeats the previous waypoint"));
            }
        }
        for (i, r) in self.gps_denied.iter().enumerate() {
            if !r.is_valid() {
                return Err(config_err(format!("gps_denied[{i}]"), "requires min < max on both axes"));
            }
        }
        let l = self.obstacles.half_extent;
        if !(l[0] > 0.0 && l[1] > 0.0 && l[0].is_finite() && l[1].is_finite()) {
            return Err(config_err("obstacles.half_extent", "must be positive"));
        }
        for (i, o) in self.obstacles.items.iter().enumerate() {
            o.to_gaussian::<f64>()
                .map_err(|e| config_err(format!("obstacles.items[{i}]"), e.to_string()))?;
        }
        if let Some(field) = self.params.first_invalid() {
            return Err(config_err(format!("params.{field}"), "must be finite and positive (noise intensities: non-negative)"));
        }
        let sensor = &self.params.sensor;
        if self.simulation.gps_period_steps > 0 && !(sensor.sigma_pos > 0.0 && sensor.sigma_vel > 0.0) {
            return Err(config_err(
                "params.sensor",
                "GPS noise must be positive while GPS updates are enabled",
            ));
        }
        let s = &self.simulation;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(config_err("simulation.dt", "must be positive"));
        }
        if let Some(d) = s.duration {
            if !(d > 0.0 && d.is_finite()) {
                return Err(config_err("simulation.duration", "must be positive"));
            }
        }
        if s.output_stride == 0 {
            return Err(config_err("simulation.output_stride", "must be at least 1"));
        }
        for (i, v) in self.initial.truth_sigma.iter().enumerate() {
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(config_err(format!("initial.truth_sigma[{i}]"), "must be non-negative"));
            }
        }
        for (i, v) in self.initial.nav_sigma.iter().enumerate() {
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(config_err(format!("initial.nav_sigma[{i}]"), "must be non-negative"));
            }
        }
        let mc = &self.monte_carlo;
        if mc.runs < 2 {
            return Err(config_err("monte_carlo.runs", "at least two runs are required"));
        }
        if !(mc.tolerance > 0.0) {
            return Err(config_err("monte_carlo.tolerance", "must be positive"));
        }
        if !(mc.transient >= 0.0 && mc.exit_window >= 0.0) {
            return Err(config_err("monte_carlo", "transient and exit_window must be non-negative"));
        }
        if !(mc.min_fraction > 0.0 && mc.min_fraction <= 1.0) {
            return Err(config_err("monte_carlo.min_fraction", "must lie in (0, 1]"));
        }
        if !(mc.abs_floor >= 0.0) {
            return Err(config_err("monte_carlo.abs_floor", "must be non-negative"));
        }
        self.validate_planner()
    }

    fn validate_planner(&self) -> Result<()> {
        let p = &self.planner;
        finite_pair("planner.bounds_min", &p.bounds_min)?;
        finite_pair("planner.bounds_max", &p.bounds_max)?;
        if p.bounds_min[0] > p.bounds_max[0] || p.bounds_min[1] > p.bounds_max[1] {
            return Err(config_err("planner.bounds_min", "exceeds bounds_max"));
        }
        if p.iterations == 0 {
            return Err(config_err("planner.iterations", "must be at least 1"));
        }
        if !(p.step > 0.0 && p.step.is_finite()) {
            return Err(config_err("planner.step", "must be positive"));
        }
        if !(p.threshold > 0.0 && p.threshold <= 1.0) {
            return Err(config_err("planner.threshold", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&p.goal_bias) {
            return Err(config_err("planner.goal_bias", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Start and goal must lie inside the sampling bounds when planning.
    pub fn validate_for_planning(&self) -> Result<()> {
        let p = &self.planner;
        let inside = |w: &[f64; 2]| {
            (0..2).all(|i| w[i] >= p.bounds_min[i] && w[i] <= p.bounds_max[i])
        };
        if !inside(&self.waypoints[0]) {
            return Err(config_err("waypoints[0]", "start lies outside the planner bounds"));
        }
        let last = self.waypoints.len() - 1;
        if !inside(&self.waypoints[last]) {
            return Err(config_err(format!("waypoints[{last}]"), "goal lies outside the planner bounds"));
        }
        Ok(())
    }

    pub fn waypoint_vectors(&self) -> Vec<Vector2<f64>> {
        self.waypoints.iter().map(|w| Vector2::new(w[0], w[1])).collect()
    }

    pub fn model(&self) -> UavModel<f64> {
        UavModel::new(self.params)
    }

    pub fn gps(&self) -> GpsCoverage {
        GpsCoverage {
            period_steps: self.simulation.gps_period_steps,
            denied: self.gps_denied.clone(),
        }
    }

    pub fn closed_loop(&self) -> ClosedLoop<f64> {
        ClosedLoop::new(self.model(), self.simulation.dt, self.gps())
    }

    pub fn tracker(&self) -> Result<WaypointTracker<f64>> {
        WaypointTracker::new(self.waypoint_vectors())
    }

    /// Trim flight at the first waypoint heading along the first leg, with
    /// the filter covariance set from the initial navigation uncertainty.
    pub fn initial_state(&self) -> LoopState<f64> {
        let w = self.waypoint_vectors();
        let d = w[1] - w[0];
        let (x, x_hat, x_check) = self.model().trim(w[0], d[1].atan2(d[0]));
        LoopState {
            step: 0,
            x,
            x_hat,
            x_check,
            p_hat: Matrix4::from_diagonal(&self.p0_diagonal()),
        }
    }

    fn p0_diagonal(&self) -> Vector4<f64> {
        Vector4::from_iterator(self.initial.nav_sigma.iter().map(|s| s * s))
    }

    pub fn d0(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            7,
            self.initial.truth_sigma.iter().map(|s| s * s),
        ))
    }

    pub fn p0(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(self.p0_diagonal().as_slice()))
    }

    pub fn initial_covariance(&self) -> Result<AugmentedCovariance<f64>> {
        let m_x = mapping_matrix_padded::<f64>().rows(0, 4).into_owned();
        AugmentedCovariance::initial(&Dimensions::UAV, &self.d0(), &self.p0(), &m_x)
    }

    pub fn obstacle_map(&self) -> Result<ObstacleMap<f64>> {
        let items = self
            .obstacles
            .items
            .iter()
            .map(|o| o.to_gaussian())
            .collect::<Result<Vec<_>>>()?;
        let l = self.obstacles.half_extent;
        ObstacleMap::new(items, Vector2::new(l[0], l[1]))
    }

    /// Stop rule for the nominal: the configured duration, or the last
    /// waypoint with a cap of three times the straight-line flight time.
    pub fn stop_condition(&self) -> StopCondition {
        let dt = self.simulation.dt;
        match self.simulation.duration {
            Some(d) => StopCondition::Steps((d / dt).round() as usize),
            None => {
                let w = self.waypoint_vectors();
                let length: f64 = w.windows(2).map(|p| (p[1] - p[0]).norm()).sum();
                let cap = 3.0 * length / self.params.vehicle.v_bar;
                StopCondition::RouteComplete {
                    max_steps: (cap / dt).ceil() as usize,
                }
            }
        }
    }

    /// Monte Carlo set-up over `nominal` with the scenario's noise, initial
    /// uncertainty, seed, run count and output stride.
    pub fn run_config<'a>(&self, nominal: &'a NominalTrajectory<f64>) -> RunConfig<'a> {
        RunConfig {
            closed_loop: self.closed_loop(),
            waypoints: self.waypoint_vectors(),
            nominal,
            noise: nominal.model.noise_spec(),
            d0: self.d0(),
            p0: self.p0(),
            seed: self.seed,
            runs: self.monte_carlo.runs,
            stride: self.simulation.output_stride,
        }
    }

    pub fn compare_options(&self) -> CompareOptions {
        let m = &self.monte_carlo;
        CompareOptions {
            tolerance: m.tolerance,
            transient: m.transient,
            exit_window: m.exit_window,
            min_fraction: m.min_fraction,
            abs_floor: m.abs_floor,
        }
    }

    pub fn planner_config(&self) -> PlannerConfig {
        let p = &self.planner;
        PlannerConfig {
            iterations: p.iterations,
            step: p.step,
            bounds_min: Vector2::new(p.bounds_min[0], p.bounds_min[1]),
            bounds_max: Vector2::new(p.bounds_max[0], p.bounds_max[1]),
            threshold: p.threshold,
            goal_bias: p.goal_bias,
        }
    }

    pub fn plan_context(&self) -> Result<PlanContext> {
        let closed_loop = self.closed_loop();
        Ok(PlanContext {
            noise: closed_loop.model.noise_spec(),
            closed_loop,
            obstacles: self.obstacle_map()?,
        })
    }

    /// Continuation state at the start waypoint.
    pub fn plan_start(&self) -> Result<Continuation> {
        Ok(Continuation {
            state: self.initial_state(),
            c_a: self.initial_covariance()?,
        })
    }

    /// Runs the planner from the first waypoint to the last with the
    /// scenario's seed.
    pub fn plan(&self) -> Result<PlanResult> {
        self.validate_for_planning()?;
        let w = self.waypoint_vectors();
        let mut rng = planner_rng(self.seed);
        plan(
            &self.plan_context()?,
            &self.planner_config(),
            w[0],
            self.plan_start()?,
            w[w.len() - 1],
            &mut rng,
        )
    }

    pub fn nominal(&self) -> Result<NominalTrajectory<f64>> {
        let lp = self.closed_loop();
        let mut state = self.initial_state();
        let mut tracker = self.tracker()?;
        NominalTrajectory::simulate(&lp, &mut state, &mut tracker, self.stop_condition())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_path(err: Error) -> (String, String) {
        match err {
            Error::Config { path, message } => (path, message),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_gps_noise_requires_gps_off() {
        let mut sc = Scenario::with_waypoints(vec![[0.0, 0.0], [100.0, 0.0]]);
        sc.params.sensor.sigma_pos = 0.0;
        assert_eq!(config_path(sc.validate().unwrap_err()).0, "params.sensor");
        sc.simulation.gps_period_steps = 0;
        assert!(sc.validate().is_ok());
    }

    #[test]
    fn empty_input_reports_missing_waypoints() {
        for text in ["", "  \n", "{}"] {
            let (_, msg) = config_path(Scenario::from_json(text).unwrap_err());
            assert!(msg.contains("waypoints"), "{msg}");
        }
    }

    #[test]
    fn minimal_file_takes_table_defaults() {
        let sc = Scenario::from_json(r#"{"waypoints": [[0, 0], [1000, 0]]}"#).unwrap();
        assert_eq!(sc.params, UavParams::default());
        assert_eq!(sc.params.vehicle.v_bar, 35.0);
        assert_eq!(sc.params.vehicle.mass, 25.0);
        assert_eq!(sc.params.disturbance.sigma_u, 1.06);
        assert_eq!(sc.params.sensor.arw, 16.7);
        assert_eq!(sc.params.control.d_t, 111.0);
        assert_eq!(sc.simulation.dt, 0.01);
        assert_eq!(sc.simulation.gps_period_steps, 100);
        assert_eq!(sc.monte_carlo.runs, 500);
        assert_eq!(sc.planner.iterations, 3000);
        assert_eq!(sc.obstacles.half_extent, [10.0, 10.0]);
        assert_eq!(sc.schema_version, SCHEMA_VERSION);
    }

    #[test]
    fn round_trip() {
        let mut sc = Scenario::with_waypoints(vec![[0.0, 0.0], [500.0, 200.0], [900.0, -50.0]]);
        sc.name = "rt".into();
        sc.gps_denied.push(Rect {
            north_min: 100.0,
            north_max: 300.0,
            east_min: -50.0,
            east_max: 250.0,
        });
        sc.obstacles.items.push(ObstacleSpec {
            mean: [400.0, 100.0],
            cov: [[1600.0, 0.0], [0.0, 1600.0]],
        });
        sc.params.control.k_path = 0.07;
        sc.simulation.duration = Some(42.5);
        let back = Scenario::from_json(&sc.to_json()).unwrap();
        assert_eq!(back, sc);
    }

    #[test]
    fn schema_violations_name_the_field() {
        let cases = [
            (r#"{"waypoints": [[0, 0]]}"#, "waypoints"),
            (r#"{"waypoints": [[0, 0], [0, 0]]}"#, "waypoints[1]"),
            (r#"{"waypoints": [[0, 0], [1, 0]], "params": {"vehicle": {"mass": -1}}}"#, "params.vehicle.mass"),
            (r#"{"waypoints": [[0, 0], [1, 0]], "params": {"vehicle": {"massx": 1}}}"#, "params.vehicle"),
            (r#"{"waypoints": [[0, 0], [1, 0]], "simulation": {"dt": "fast"}}"#, "simulation.dt"),
            (r#"{"waypoints": [[0, 0], [1, 0]], "gps_denied": [{"north_min": 5, "north_max": 1, "east_min": 0, "east_max": 1}]}"#, "gps_denied[0]"),
            (r#"{"waypoints": [[0, 0], [1, 0]], "obstacles": {"items": [{"mean": [0, 0], "cov": [[1, 0], [0, -1]]}]}}"#, "obstacles.items[0]"),
            (r#"{"waypoints": [[0, 0], [1, 0]], "monte_carlo": {"runs": 1}}"#, "monte_carlo.runs"),
            (r#"{"waypoints": [[0, 0], [1, 0]], "schema_version": 7}"#, "schema_version"),
            (r#"{"waypoints": [[0, 0], [1, 0]], "planner": {"threshold": 0}}"#, "planner.threshold"),
        ];
        for (text, want) in cases {
            let (path, msg) = config_path(Scenario::from_json(text).unwrap_err());
            assert!(path.starts_with(want), "{text}: got {path} ({msg})");
        }
    }

    #[test]
    fn goal_outside_bounds_is_a_config_error() {
        let mut sc = Scenario::with_waypoints(vec![[0.0, 0.0], [1200.0, 1000.0]]);
        assert!(sc.validate().is_ok());
        let (path, _) = config_path(sc.validate_for_planning().unwrap_err());
        assert_eq!(path, "waypoints[1]");
        sc.waypoints[1] = [1000.0, 1000.0];
        assert!(sc.validate_for_planning().is_ok());
    }

    #[test]
    fn builders() {
        let sc = Scenario::with_waypoints(vec![[0.0, 0.0], [0.0, 350.0]]);
        let s = sc.initial_state();
        assert!((s.x.psi - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(s.p_hat[(0, 0)], 1.0);
        let c = sc.initial_covariance().unwrap();
        assert_eq!(c.c_a[(5, 5)], 1.06 * 1.06);
        assert!(c.health().ok());
        let nom = sc.nominal().unwrap();
        assert!((nom.duration() - 10.0).abs() < 0.011);
    }
}
