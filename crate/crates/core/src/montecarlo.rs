//! Nonlinear Monte Carlo simulation of the closed loop, ensemble statistics
//! of truth dispersions and estimation errors, and comparison against the
//! linear covariance prediction.

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix4, SMatrix, SVector, Vector2, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lincov::{LinCovSeries, NominalTrajectory};
use crate::scalar::wrap_angle;
use crate::sysmodel::NoiseSpec;
use crate::uav::{
    ClosedLoop, ControlInput, ControllerState, LoopState, NavState, StepNoise, TruthState,
    WaypointTracker,
};

pub const TRUTH_STATES: [&str; 7] = ["p_n", "p_e", "v_g", "psi", "omega", "u_w", "t_dist"];
pub const NAV_ERROR_STATES: [&str; 4] = ["err_p_n", "err_p_e", "err_v_g", "err_psi"];

/// Everything needed to draw and integrate dispersed runs around a nominal.
#[derive(Debug, Clone)]
pub struct RunConfig<'a> {
    pub closed_loop: ClosedLoop<f64>,
    pub waypoints: Vec<Vector2<f64>>,
    pub nominal: &'a NominalTrajectory<f64>,
    /// truth noise intensities; the filter keeps its own design values
    pub noise: NoiseSpec<f64>,
    /// initial truth dispersion covariance (7×7)
    pub d0: DMatrix<f64>,
    /// initial navigation error covariance (4×4)
    pub p0: DMatrix<f64>,
    pub seed: u64,
    pub runs: usize,
    /// record every n-th step
    pub stride: usize,
}

/// One recorded point of a dispersed run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSample {
    pub step: usize,
    pub time: f64,
    pub x: TruthState<f64>,
    pub x_hat: NavState<f64>,
    pub x_check: ControllerState<f64>,
    pub u: ControlInput<f64>,
    /// `x − x̄` with wrapped heading
    pub dx: SVector<f64, 7>,
    /// `x̂ − M x` with wrapped heading
    pub de: Vector4<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrajectory {
    pub run: usize,
    pub samples: Vec<RunSample>,
}

fn lower_cholesky(name: &str, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // zero-variance channels of a semidefinite input stay exactly zero
    let active: Vec<usize> = (0..m.nrows()).filter(|&i| m[(i, i)] != 0.0).collect();
    let mut l = DMatrix::zeros(m.nrows(), m.ncols());
    if active.is_empty() {
        return Ok(l);
    }
    let sub = m.select_rows(&active).select_columns(&active);
    let jitter = sub.diagonal().max() * 1e-15;
    let reg = &sub + DMatrix::identity(active.len(), active.len()) * jitter;
    let c = reg
        .cholesky()
        .ok_or_else(|| Error::Domain(format!("{name} is not positive semidefinite")))?
        .l();
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            l[(i, j)] = c[(a, b)];
        }
    }
    Ok(l)
}

fn gaussian<const N: usize>(rng: &mut ChaCha8Rng) -> SVector<f64, N> {
    SVector::<f64, N>::from_fn(|_, _| StandardNormal.sample(rng))
}

/// Lower-triangular factors turning unit normals into step noise samples.
#[derive(Debug, Clone, Copy)]
struct NoiseFactors {
    w: Matrix2<f64>,
    eta: Matrix2<f64>,
    nu: Matrix3<f64>,
}

impl NoiseFactors {
    fn new(spec: &NoiseSpec<f64>, dt: f64) -> Result<Self> {
        let w = lower_cholesky("S_w", &(&spec.s_w / dt))?;
        let eta = lower_cholesky("S_eta", &(&spec.s_eta / dt))?;
        let nu = lower_cholesky("R_nu", &spec.r_nu)?;
        Ok(Self {
            w: Matrix2::from_column_slice(w.as_slice()),
            eta: Matrix2::from_column_slice(eta.as_slice()),
            nu: Matrix3::from_column_slice(nu.as_slice()),
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> StepNoise<f64> {
        StepNoise {
            w: self.w * gaussian::<2>(rng),
            eta: self.eta * gaussian::<2>(rng),
            nu: self.nu * gaussian::<3>(rng),
        }
    }
}

/// Independent stream for run `run` of master `seed`.
pub fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

fn dispersions(nominal: &NominalTrajectory<f64>, state: &LoopState<f64>) -> (SVector<f64, 7>, Vector4<f64>) {
    let nom = &nominal.samples[state.step].point.x;
    let mut dx = state.x.to_vector() - nom.to_vector();
    dx[3] = wrap_angle(state.x.psi - nom.psi);
    let mapped = nominal.model.map_truth_to_nav(&state.x);
    let mut de = state.x_hat.to_vector() - mapped;
    de[3] = wrap_angle(state.x_hat.psi - state.x.psi);
    (dx, de)
}

fn record(
    cfg: &RunConfig<'_>,
    state: &LoopState<f64>,
    tracker: &mut WaypointTracker<f64>,
) -> RunSample {
    tracker.update(&state.x_hat.position());
    let (u, _) = cfg.closed_loop.current_outputs(state, tracker.segment());
    let (dx, de) = dispersions(cfg.nominal, state);
    RunSample {
        step: state.step,
        time: cfg.closed_loop.time(state.step),
        x: state.x,
        x_hat: state.x_hat,
        x_check: state.x_check,
        u,
        dx,
        de,
    }
}

/// One dispersed run over the nominal's horizon. Deterministic in
/// `(cfg.seed, run)`.
pub fn simulate_run(cfg: &RunConfig<'_>, run: usize) -> Result<RunTrajectory> {
    let lp = &cfg.closed_loop;
    let factors = NoiseFactors::new(&cfg.noise, lp.dt)?;
    let l_d = lower_cholesky("D0", &cfg.d0)?;
    let l_p = lower_cholesky("P0", &cfg.p0)?;
    let mut rng = run_rng(cfg.seed, run);

    let nom0 = &cfg.nominal.samples[0];
    let dx0 = SMatrix::<f64, 7, 7>::from_column_slice(l_d.as_slice()) * gaussian::<7>(&mut rng);
    let e0 = Matrix4::from_column_slice(l_p.as_slice()) * gaussian::<4>(&mut rng);
    let x = TruthState::from_vector(&(nom0.point.x.to_vector() + dx0)).wrapped();
    let x_hat = NavState::from_vector(&(cfg.nominal.model.map_truth_to_nav(&x) + e0)).wrapped();
    let mut state = LoopState {
        step: 0,
        x,
        x_hat,
        x_check: nom0.point.x_check,
        p_hat: nom0.p_hat,
    };
    let mut tracker = WaypointTracker::new(cfg.waypoints.clone())?;
    let stride = cfg.stride.max(1);
    let last = cfg.nominal.samples.len() - 1;

    let mut samples = vec![record(cfg, &state, &mut tracker)];
    for _ in 0..last {
        let noise = factors.draw(&mut rng);
        lp.step(&mut state, &mut tracker, &noise).map_err(|e| match e {
            Error::SimulationBlowUp { time, .. } => Error::SimulationBlowUp { run, time },
            Error::Domain(_) => Error::SimulationBlowUp {
                run,
                time: lp.time(state.step + 1),
            },
            other => other,
        })?;
        if state.step % stride == 0 || state.step == last {
            samples.push(record(cfg, &state, &mut tracker));
        }
    }
    Ok(RunTrajectory { run, samples })
}

/// All runs of `cfg`, in run order, computed in parallel.
pub fn simulate_ensemble(cfg: &RunConfig<'_>) -> Result<Vec<RunTrajectory>> {
    (0..cfg.runs)
        .into_par_iter()
        .map(|r| simulate_run(cfg, r))
        .collect()
}

/// Per-time sample mean and unbiased sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub runs: usize,
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub truth_mean: Vec<[f64; 7]>,
    pub truth_std: Vec<[f64; 7]>,
    pub nav_mean: Vec<[f64; 4]>,
    pub nav_std: Vec<[f64; 4]>,
}

fn mean_std<const N: usize>(values: impl Iterator<Item = [f64; N]> + Clone, n: usize) -> ([f64; N], [f64; N]) {
    let mut mean = [0.0; N];
    for v in values.clone() {
        for i in 0..N {
            mean[i] += v[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = [0.0; N];
    for v in values {
        for i in 0..N {
            let d = v[i] - mean[i];
            var[i] += d * d;
        }
    }
    let std = var.map(|s| (s / (n as f64 - 1.0)).sqrt());
    (mean, std)
}

pub fn ensemble_stats(runs: &[RunTrajectory]) -> Result<EnsembleStats> {
    if runs.len() < 2 {
        return Err(Error::Domain("ensemble statistics need at least two runs".into()));
    }
    let steps: Vec<usize> = runs[0].samples.iter().map(|s| s.step).collect();
    for r in runs {
        let same = r.samples.len() == steps.len() && r.samples.iter().zip(&steps).all(|(s, k)| s.step == *k);
        if !same {
            return Err(Error::MisalignedGrid(format!(
                "run {} does not share the grid of run {}",
                r.run, runs[0].run
            )));
        }
    }
    let n = runs.len();
    let mut stats = EnsembleStats {
        runs: n,
        steps: steps.clone(),
        times: runs[0].samples.iter().map(|s| s.time).collect(),
        truth_mean: Vec::with_capacity(steps.len()),
        truth_std: Vec::with_capacity(steps.len()),
        nav_mean: Vec::with_capacity(steps.len()),
        nav_std: Vec::with_capacity(steps.len()),
    };
    for k in 0..steps.len() {
        let truth = runs.iter().map(move |r| {
            let d = r.samples[k].dx;
            std::array::from_fn::<f64, 7, _>(|i| d[i])
        });
        let (m, s) = mean_std(truth, n);
        stats.truth_mean.push(m);
        stats.truth_std.push(s);
        let nav = runs.iter().map(move |r| {
            let d = r.samples[k].de;
            std::array::from_fn::<f64, 4, _>(|i| d[i])
        });
        let (m, s) = mean_std(nav, n);
        stats.nav_mean.push(m);
        stats.nav_std.push(s);
    }
    Ok(stats)
}

/// Scoring rules of the LinCov/MC comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareOptions {
    pub tolerance: f64,
    pub transient: f64,
    pub exit_window: f64,
    pub min_fraction: f64,
    pub abs_floor: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            tolerance: 0.15,
            transient: 5.0,
            exit_window: 5.0,
            min_fraction: 0.95,
            abs_floor: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateComparison {
    pub name: String,
    #[serde(skip)]
    pub mc_sigma: Vec<f64>,
    #[serde(skip)]
    pub lincov_sigma: Vec<f64>,
    #[serde(skip)]
    pub ratio: Vec<f64>,
    pub scored: usize,
    pub within: usize,
    pub fraction: f64,
    /// largest |ratio − 1| among scored points
    pub max_deviation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub runs: usize,
    pub options: CompareOptions,
    #[serde(skip)]
    pub times: Vec<f64>,
    /// points inside a GPS-denial exit window, excluded from scoring
    #[serde(skip)]
    pub flagged: Vec<bool>,
    pub flagged_points: usize,
    pub states: Vec<StateComparison>,
    pub passed: bool,
}

/// Times at which the nominal leaves a GPS-denied region.
pub fn denial_exit_times(nominal: &NominalTrajectory<f64>) -> Vec<f64> {
    nominal
        .samples
        .windows(2)
        .filter(|w| !w[0].gps_available && w[1].gps_available)
        .map(|w| w[1].time)
        .collect()
}

fn sigma_ratio(mc: f64, lc: f64, floor: f64) -> f64 {
    if lc > floor {
        mc / lc
    } else if mc <= floor {
        1.0
    } else {
        f64::INFINITY
    }
}

/// Scores MC σ against LinCov σ per state on the shared grid.
pub fn compare(
    lincov: &LinCovSeries<f64>,
    stats: &EnsembleStats,
    exit_times: &[f64],
    opts: &CompareOptions,
) -> Result<ComparisonReport> {
    let lc_steps: Vec<usize> = lincov.samples.iter().map(|s| s.step).collect();
    if lc_steps != stats.steps {
        return Err(Error::MisalignedGrid(format!(
            "LinCov has {} points, Monte Carlo {}",
            lc_steps.len(),
            stats.steps.len()
        )));
    }
    let times = stats.times.clone();
    let flagged: Vec<bool> = times
        .iter()
        .map(|t| exit_times.iter().any(|e| *t >= *e && *t <= *e + opts.exit_window))
        .collect();
    let scored: Vec<bool> = times
        .iter()
        .zip(&flagged)
        .map(|(t, f)| *t >= opts.transient && !*f)
        .collect();

    let mut states = Vec::new();
    let series: Vec<(&str, Box<dyn Fn(usize) -> (f64, f64)>)> = TRUTH_STATES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let f: Box<dyn Fn(usize) -> (f64, f64)> = Box::new(move |k| {
                (stats.truth_std[k][i], lincov.samples[k].d_true[(i, i)].max(0.0).sqrt())
            });
            (*name, f)
        })
        .chain(NAV_ERROR_STATES.iter().enumerate().map(|(i, name)| {
            let f: Box<dyn Fn(usize) -> (f64, f64)> = Box::new(move |k| {
                (stats.nav_std[k][i], lincov.samples[k].p_true[(i, i)].max(0.0).sqrt())
            });
            (*name, f)
        }))
        .collect();

    for (name, get) in series {
        let (mut mc, mut lc, mut ratio) = (Vec::new(), Vec::new(), Vec::new());
        let (mut n_scored, mut within, mut max_dev) = (0usize, 0usize, 0.0f64);
        for k in 0..times.len() {
            let (m, l) = get(k);
            let r = sigma_ratio(m, l, opts.abs_floor);
            mc.push(m);
            lc.push(l);
            ratio.push(r);
            if scored[k] {
                n_scored += 1;
                let dev = (r - 1.0).abs();
                max_dev = max_dev.max(dev);
                if dev <= opts.tolerance {
                    within += 1;
                }
            }
        }
        let fraction = if n_scored == 0 { 1.0 } else { within as f64 / n_scored as f64 };
        states.push(StateComparison {
            name: name.to_string(),
            mc_sigma: mc,
            lincov_sigma: lc,
            ratio,
            scored: n_scored,
            within,
            fraction,
            max_deviation: max_dev,
            passed: fraction >= opts.min_fraction,
        });
    }
    let passed = states.iter().all(|s| s.passed);
    Ok(ComparisonReport {
        runs: stats.runs,
        options: *opts,
        flagged_points: flagged.iter().filter(|f| **f).count(),
        times,
        flagged,
        states,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lincov::{run as lincov_run, AugmentedCovariance};
    use crate::scenario::Scenario;
    use crate::sysmodel::Dimensions;

    fn sample_with(step: usize, dx0: f64) -> RunSample {
        let mut dx = SVector::<f64, 7>::zeros();
        dx[0] = dx0;
        RunSample {
            step,
            time: step as f64 * 0.01,
            x: TruthState::from_vector(&SVector::zeros()),
            x_hat: NavState::from_vector(&Vector4::zeros()),
            x_check: ControllerState { sigma_f: 0.0, sigma_t: 0.0 },
            u: ControlInput::zero(),
            dx,
            de: Vector4::zeros(),
        }
    }

    #[test]
    fn two_sample_std() {
        let v = 0.7;
        let runs = vec![
            RunTrajectory { run: 0, samples: vec![sample_with(0, v)] },
            RunTrajectory { run: 1, samples: vec![sample_with(0, -v)] },
        ];
        let s = ensemble_stats(&runs).unwrap();
        assert!((s.truth_std[0][0] - v * 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(s.truth_mean[0][0], 0.0);

        let same = vec![runs[0].clone(), RunTrajectory { run: 1, ..runs[0].clone() }];
        assert_eq!(ensemble_stats(&same).unwrap().truth_std[0][0], 0.0);
    }

    #[test]
    fn misaligned_grids_rejected() {
        let runs = vec![
            RunTrajectory { run: 0, samples: vec![sample_with(0, 1.0), sample_with(10, 1.0)] },
            RunTrajectory { run: 1, samples: vec![sample_with(0, 1.0), sample_with(11, 1.0)] },
        ];
        assert!(matches!(ensemble_stats(&runs), Err(Error::MisalignedGrid(_))));
        assert!(ensemble_stats(&runs[..1]).is_err());
    }

    fn short_scenario() -> Scenario {
        let mut sc = Scenario::with_waypoints(vec![[0.0, 0.0], [300.0, 100.0], [500.0, -100.0]]);
        sc.simulation.output_stride = 10;
        sc
    }

    fn config<'a>(sc: &Scenario, nominal: &'a NominalTrajectory<f64>, runs: usize) -> RunConfig<'a> {
        RunConfig {
            closed_loop: sc.closed_loop(),
            waypoints: sc.waypoint_vectors(),
            nominal,
            noise: nominal.model.noise_spec(),
            d0: sc.d0(),
            p0: sc.p0(),
            seed: sc.seed,
            runs,
            stride: sc.simulation.output_stride,
        }
    }

    #[test]
    fn zero_noise_runs_collapse_onto_nominal() {
        let mut sc = short_scenario();
        sc.initial.truth_sigma = [0.0; 7];
        sc.initial.nav_sigma = [0.0; 4];
        let nom = sc.nominal().unwrap();
        let mut cfg = config(&sc, &nom, 1);
        cfg.noise = NoiseSpec::zeros(&crate::sysmodel::Dimensions::UAV);
        let run = simulate_run(&cfg, 0).unwrap();
        for s in &run.samples {
            let n = &nom.samples[s.step].point;
            let dist = (s.x.to_vector() - n.x.to_vector()).norm() + (s.x_hat.to_vector() - n.x_hat.to_vector()).norm();
            assert!(dist <= 1e-9, "step {}: {dist}", s.step);
        }
    }

    #[test]
    fn equal_seeds_equal_runs() {
        let sc = short_scenario();
        let nom = sc.nominal().unwrap();
        let cfg = config(&sc, &nom, 3);
        let a = simulate_run(&cfg, 2).unwrap();
        let b = simulate_run(&cfg, 2).unwrap();
        assert_eq!(a, b);
        let c = simulate_run(&cfg, 1).unwrap();
        assert_ne!(a.samples.last(), c.samples.last());
        let ens = simulate_ensemble(&cfg).unwrap();
        assert_eq!(ens[2], a);
    }

    #[test]
    fn compare_identity_and_doubling() {
        let sc = short_scenario();
        let nom = sc.nominal().unwrap();
        let lc = lincov_run(&nom, &nom.model.noise_spec(), sc.initial_covariance().unwrap(), 10).unwrap();
        let mut stats = EnsembleStats {
            runs: 500,
            steps: lc.samples.iter().map(|s| s.step).collect(),
            times: lc.samples.iter().map(|s| s.time).collect(),
            truth_mean: vec![[0.0; 7]; lc.samples.len()],
            truth_std: lc
                .samples
                .iter()
                .map(|s| std::array::from_fn(|i| s.d_true[(i, i)].sqrt()))
                .collect(),
            nav_mean: vec![[0.0; 4]; lc.samples.len()],
            nav_std: lc
                .samples
                .iter()
                .map(|s| std::array::from_fn(|i| s.p_true[(i, i)].sqrt()))
                .collect(),
        };
        let opts = CompareOptions::default();
        let rep = compare(&lc, &stats, &[], &opts).unwrap();
        assert!(rep.passed);
        for st in &rep.states {
            assert!(st.ratio.iter().all(|r| (r - 1.0).abs() < 1e-12), "{}", st.name);
        }
        for row in stats.truth_std.iter_mut() {
            row.iter_mut().for_each(|v| *v *= 2.0);
        }
        let rep = compare(&lc, &stats, &[], &opts).unwrap();
        assert!(!rep.passed);
        assert!((rep.states[0].ratio[20] - 2.0).abs() < 1e-12);
        stats.steps.pop();
        assert!(compare(&lc, &stats, &[], &opts).is_err());
    }

    #[test]
    fn exit_window_is_flagged_not_scored() {
        let sc = short_scenario();
        let nom = sc.nominal().unwrap();
        let lc = lincov_run(&nom, &nom.model.noise_spec(), AugmentedCovariance::zeros(&Dimensions::UAV), 10).unwrap();
        let n = lc.samples.len();
        let stats = EnsembleStats {
            runs: 2,
            steps: lc.samples.iter().map(|s| s.step).collect(),
            times: lc.samples.iter().map(|s| s.time).collect(),
            truth_mean: vec![[0.0; 7]; n],
            truth_std: vec![[1.0; 7]; n],
            nav_mean: vec![[0.0; 4]; n],
            nav_std: vec![[1.0; 4]; n],
        };
        let opts = CompareOptions { exit_window: 2.0, ..Default::default() };
        let rep = compare(&lc, &stats, &[6.0], &opts).unwrap();
        assert_eq!(rep.flagged_points, 21);
        assert!(rep.flagged[60] && rep.flagged[80] && !rep.flagged[81]);
        assert_eq!(rep.states[0].scored, n - 50 - 21);
    }
}
