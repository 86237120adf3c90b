//! Chance-constrained RRT. Every candidate edge is flown noise-free from the
//! parent's continuation state, and the covariance engine is continued along
//! it from the parent's augmented covariance; the edge is kept only if the
//! collision probability with every obstacle stays below the threshold at
//! every step.

use nalgebra::{DMatrix, Vector2};
use petgraph::algo::dijkstra;
use petgraph::graph::{DiGraph, EdgeIndex, NodeIndex};
use petgraph::visit::EdgeRef;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::collision::{instant_probabilities, vehicle_position, ObstacleMap};
use crate::error::{Error, Result};
use crate::lincov::{AugmentedCovariance, NominalTrajectory, Propagator, StopCondition};
use crate::scalar::{lit, Scalar};
use crate::sysmodel::NoiseSpec;
use crate::uav::{ClosedLoop, LoopState, WaypointTracker};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannerConfig {
    pub iterations: usize,
    /// steer distance λ, also the goal-connection radius
    pub step: f64,
    pub bounds_min: Vector2<f64>,
    pub bounds_max: Vector2<f64>,
    pub threshold: f64,
    pub goal_bias: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            step: 100.0,
            bounds_min: Vector2::new(0.0, 0.0),
            bounds_max: Vector2::new(1000.0, 1000.0),
            threshold: 0.01,
            goal_bias: 0.05,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Domain("iteration budget must be at least 1".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Domain("steer distance must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Domain("collision threshold must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.goal_bias) {
            return Err(Error::Domain("goal bias must lie in [0, 1)".into()));
        }
        let ok = (0..2).all(|i| {
            self.bounds_min[i].is_finite() && self.bounds_max[i].is_finite() && self.bounds_min[i] <= self.bounds_max[i]
        });
        if !ok {
            return Err(Error::Domain("sample bounds are invalid".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        (0..2).all(|i| p[i] >= self.bounds_min[i] && p[i] <= self.bounds_max[i])
    }
}

/// Everything needed to continue the simulation and the covariance from a vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Continuation {
    pub state: LoopState<f64>,
    pub c_a: AugmentedCovariance<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub position: Vector2<f64>,
    /// `None` for the goal marker, which is never grown from
    pub continuation: Option<Continuation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// traversal time, s
    pub dt: f64,
    /// largest collision probability along the edge, per obstacle
    pub max_probability: Vec<f64>,
}

/// Directed tree rooted at the start, plus the goal marker which may collect
/// several incoming edges.
#[derive(Debug, Clone)]
pub struct PlanGraph {
    pub graph: DiGraph<Vertex, Edge>,
    pub start: NodeIndex,
    pub goal: NodeIndex,
}

impl PlanGraph {
    pub fn new(start: Vector2<f64>, continuation: Continuation, goal: Vector2<f64>) -> Self {
        let mut graph = DiGraph::new();
        let start = graph.add_node(Vertex {
            position: start,
            continuation: Some(continuation),
        });
        let goal = graph.add_node(Vertex {
            position: goal,
            continuation: None,
        });
        Self { graph, start, goal }
    }

    pub fn vertex(&self, n: NodeIndex) -> &Vertex {
        &self.graph[n]
    }

    pub fn edge(&self, e: EdgeIndex) -> &Edge {
        &self.graph[e]
    }

    pub fn vertex_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }

    /// Positions of the vertices that can be grown from, with their indices.
    pub fn growable(&self) -> impl Iterator<Item = (NodeIndex, Vector2<f64>)> + '_ {
        self.graph
            .node_indices()
            .filter(|&n| self.graph[n].continuation.is_some())
            .map(|n| (n, self.graph[n].position))
    }

    /// Every edge as `(parent position, child position)`.
    pub fn edge_segments(&self) -> Vec<(Vector2<f64>, Vector2<f64>)> {
        self.graph
            .edge_references()
            .map(|e| (self.graph[e.source()].position, self.graph[e.target()].position))
            .collect()
    }
}

/// Uniform sample in the box `[lo, hi]`.
pub fn sample<T: Scalar, R: Rng + ?Sized>(rng: &mut R, lo: &Vector2<T>, hi: &Vector2<T>) -> Vector2<T> {
    Vector2::from_fn(|i, _| {
        let u: f64 = rng.random();
        lo[i] + (hi[i] - lo[i]) * lit::<T>(u)
    })
}

/// Index of the closest point, lowest index on ties.
pub fn nearest<T: Scalar>(points: &[Vector2<T>], p: &Vector2<T>) -> Result<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, q) in points.iter().enumerate() {
        let d = (q - p).norm_squared();
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyVertexSet)
}

/// Point at distance `lambda` from `from` toward `to`.
pub fn steer<T: Scalar>(from: &Vector2<T>, to: &Vector2<T>, lambda: T) -> Result<Vector2<T>> {
    let d = to - from;
    let norm = d.norm();
    if !(norm > T::zero()) {
        return Err(Error::ZeroDirection);
    }
    if norm == lambda {
        return Ok(*to);
    }
    Ok(from + d * (lambda / norm))
}

/// Fixed ingredients of a planning problem.
#[derive(Debug, Clone)]
pub struct PlanContext {
    pub closed_loop: ClosedLoop<f64>,
    pub noise: NoiseSpec<f64>,
    pub obstacles: ObstacleMap<f64>,
}

/// Noise-free flight from `from` along the straight segment to `to`,
/// stopping when the along-track coordinate reaches `to`. The time cap is
/// three times the straight-line flight time.
pub fn run_sim(
    lp: &ClosedLoop<f64>,
    state: &LoopState<f64>,
    from: &Vector2<f64>,
    to: &Vector2<f64>,
) -> Result<(NominalTrajectory<f64>, f64)> {
    let mut tracker = WaypointTracker::new(vec![*from, *to])?;
    let length = (to - from).norm();
    let cap = 3.0 * length / lp.model.params.vehicle.v_bar;
    let max_steps = (cap / lp.dt).ceil() as usize;
    let mut s = *state;
    let nominal = NominalTrajectory::simulate(lp, &mut s, &mut tracker, StopCondition::RouteComplete { max_steps })?;
    let dt = nominal.duration();
    Ok((nominal, dt))
}

/// True iff every obstacle's collision probability is below `p_max` at every
/// point of `points` (position, truth-dispersion covariance).
pub fn collision_free<I>(points: I, obstacles: &ObstacleMap<f64>, p_max: f64) -> bool
where
    I: IntoIterator<Item = (Vector2<f64>, DMatrix<f64>)>,
{
    points.into_iter().all(|(p, d)| {
        let v = vehicle_position(p, &d);
        instant_probabilities(&v, obstacles).into_iter().all(|q| q < p_max)
    })
}

/// Outcome of flying one candidate edge.
#[derive(Debug, Clone)]
pub enum EdgeOutcome {
    Accepted { edge: Edge, end: Continuation },
    /// the probability reached the threshold at this time
    Rejected { time: f64 },
    TimedOut,
}

/// Flies a candidate edge and continues the covariance along it, stopping
/// at the first step whose collision probability reaches `p_max`.
pub fn try_edge(
    ctx: &PlanContext,
    parent: &Vertex,
    to: &Vector2<f64>,
    p_max: f64,
) -> Result<EdgeOutcome> {
    let cont = parent
        .continuation
        .as_ref()
        .ok_or_else(|| Error::Domain("the goal marker cannot be grown from".into()))?;
    let (nominal, dt) = match run_sim(&ctx.closed_loop, &cont.state, &parent.position, to) {
        Ok(r) => r,
        Err(Error::EdgeTimeout { .. }) => return Ok(EdgeOutcome::TimedOut),
        Err(e) => return Err(e),
    };
    let mut prop = Propagator::new(&nominal, &ctx.noise, cont.c_a.clone())?;
    let mut max_probability = vec![0.0f64; ctx.obstacles.len()];
    while prop.advance()? {
        let k = prop.index();
        let d = crate::lincov::extract_dispersion(prop.covariance(), &crate::sysmodel::Dimensions::UAV);
        let v = vehicle_position(nominal.samples[k].point.x.position(), &d);
        for (m, q) in max_probability.iter_mut().zip(instant_probabilities(&v, &ctx.obstacles)) {
            if q >= p_max {
                return Ok(EdgeOutcome::Rejected {
                    time: nominal.samples[k].time,
                });
            }
            *m = m.max(q);
        }
    }
    let last = nominal.samples.last().expect("a nominal has at least one sample");
    let end = Continuation {
        state: LoopState {
            step: last.step,
            x: last.point.x,
            x_hat: last.point.x_hat,
            x_check: last.point.x_check,
            p_hat: last.p_hat,
        },
        c_a: prop.into_covariance(),
    };
    Ok(EdgeOutcome::Accepted {
        edge: Edge { dt, max_probability },
        end,
    })
}

/// Minimum-Δt path from `from` to `to`, as vertex indices.
pub fn select_path(g: &DiGraph<Vertex, Edge>, from: NodeIndex, to: NodeIndex) -> Result<Vec<NodeIndex>> {
    let cost = dijkstra(g, from, Some(to), |e| e.weight().dt);
    if !cost.contains_key(&to) {
        return Err(Error::NoPath);
    }
    // walk back along edges that are tight in the distance map
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        let here = cost[&cur];
        let prev = g
            .edges_directed(cur, petgraph::Direction::Incoming)
            .filter(|e| cost.contains_key(&e.source()))
            .min_by(|a, b| {
                let ea = (cost[&a.source()] + a.weight().dt - here).abs();
                let eb = (cost[&b.source()] + b.weight().dt - here).abs();
                ea.total_cmp(&eb).then(a.source().index().cmp(&b.source().index()))
            })
            .ok_or(Error::NoPath)?;
        cur = prev.source();
        path.push(cur);
    }
    path.reverse();
    Ok(path)
}

/// The selected path flown again from the start, with the full probability series.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEvaluation {
    pub times: Vec<f64>,
    pub positions: Vec<Vector2<f64>>,
    /// `probabilities[i][k]`: obstacle `i` at output point `k`
    pub probabilities: Vec<Vec<f64>>,
    pub max_probability: Vec<f64>,
    pub duration: f64,
    /// `C_A` symmetric and PSD at every recorded step
    pub healthy: bool,
}

/// Flies `waypoints` leg by leg from `start` exactly as the planner does,
/// recording every step and the collision probabilities at each.
pub fn evaluate_path(ctx: &PlanContext, start: &Continuation, waypoints: &[Vector2<f64>]) -> Result<PathEvaluation> {
    if waypoints.len() < 2 {
        return Err(Error::Domain("a path needs at least two waypoints".into()));
    }
    let n_obs = ctx.obstacles.len();
    let mut out = PathEvaluation {
        times: Vec::new(),
        positions: Vec::new(),
        probabilities: vec![Vec::new(); n_obs],
        max_probability: vec![0.0; n_obs],
        duration: 0.0,
        healthy: true,
    };
    let dims = crate::sysmodel::Dimensions::UAV;
    let record = |out: &mut PathEvaluation, time: f64, p: Vector2<f64>, c: &AugmentedCovariance<f64>| {
        let v = vehicle_position(p, &crate::lincov::extract_dispersion(c, &dims));
        out.times.push(time);
        out.positions.push(p);
        out.healthy &= c.health().ok();
        for (i, q) in instant_probabilities(&v, &ctx.obstacles).into_iter().enumerate() {
            out.probabilities[i].push(q);
            out.max_probability[i] = out.max_probability[i].max(q);
        }
    };
    let mut cont = start.clone();
    record(&mut out, ctx.closed_loop.time(cont.state.step), cont.state.x.position(), &cont.c_a);
    for leg in waypoints.windows(2) {
        let (nominal, dt) = run_sim(&ctx.closed_loop, &cont.state, &leg[0], &leg[1])?;
        out.duration += dt;
        let mut prop = Propagator::new(&nominal, &ctx.noise, cont.c_a.clone())?;
        while prop.advance()? {
            let s = &nominal.samples[prop.index()];
            record(&mut out, s.time, s.point.x.position(), prop.covariance());
        }
        let last = nominal.samples.last().expect("a nominal has at least one sample");
        cont = Continuation {
            state: LoopState {
                step: last.step,
                x: last.point.x,
                x_hat: last.point.x_hat,
                x_check: last.point.x_check,
                p_hat: last.p_hat,
            },
            c_a: prop.into_covariance(),
        };
    }
    Ok(out)
}

/// What the planner did with one candidate edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accepted,
    Rejected,
    TimedOut,
}

/// One planner iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub x_rand: Vector2<f64>,
    /// steered point, `None` when the sample coincided with its nearest vertex
    pub x_new: Option<Vector2<f64>>,
    pub decision: Option<Decision>,
    /// outcome of the goal-connection attempt, if one was made
    pub goal: Option<Decision>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlanStats {
    pub iterations: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub timed_out: usize,
    pub goal_connections: usize,
}

impl PlanStats {
    fn count(&mut self, outcome: &EdgeOutcome) -> Decision {
        match outcome {
            EdgeOutcome::Accepted { .. } => {
                self.accepted += 1;
                Decision::Accepted
            }
            EdgeOutcome::Rejected { .. } => {
                self.rejected += 1;
                Decision::Rejected
            }
            EdgeOutcome::TimedOut => {
                self.timed_out += 1;
                Decision::TimedOut
            }
        }
    }
}

/// First iteration at which two traces made different decisions.
pub fn first_divergence(a: &[IterationRecord], b: &[IterationRecord]) -> Option<usize> {
    a.iter()
        .zip(b)
        .position(|(x, y)| x.x_new != y.x_new || x.decision != y.decision || x.goal != y.goal)
}

#[derive(Debug, Clone)]
pub struct SelectedPath {
    pub vertices: Vec<NodeIndex>,
    pub waypoints: Vec<Vector2<f64>>,
    pub total_dt: f64,
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub graph: PlanGraph,
    pub stats: PlanStats,
    pub trace: Vec<IterationRecord>,
    /// `None` when the goal was never connected
    pub path: Option<SelectedPath>,
}

/// Grows the tree for the full iteration budget, then selects the
/// minimum-time path to the goal.
pub fn plan<R: Rng + ?Sized>(
    ctx: &PlanContext,
    config: &PlannerConfig,
    start: Vector2<f64>,
    start_state: Continuation,
    goal: Vector2<f64>,
    rng: &mut R,
) -> Result<PlanResult> {
    config.validate()?;
    if !config.contains(&start) || !config.contains(&goal) {
        return Err(Error::Domain("start and goal must lie inside the sample bounds".into()));
    }
    let mut g = PlanGraph::new(start, start_state, goal);
    let mut nodes = vec![g.start];
    let mut points = vec![start];
    let mut stats = PlanStats::default();
    let mut trace = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        stats.iterations += 1;
        let x_rand = if rng.random_bool(config.goal_bias) {
            goal
        } else {
            sample(rng, &config.bounds_min, &config.bounds_max)
        };
        let mut record = IterationRecord {
            x_rand,
            x_new: None,
            decision: None,
            goal: None,
        };
        let i = nearest(&points, &x_rand)?;
        let parent = nodes[i];
        let x_new = match steer(&points[i], &x_rand, config.step) {
            Ok(p) => p,
            Err(Error::ZeroDirection) => {
                trace.push(record);
                continue;
            }
            Err(e) => return Err(e),
        };
        record.x_new = Some(x_new);
        // a step landing on the goal connects directly
        let lands_on_goal = (x_new - goal).norm() <= 1e-9 * config.step;
        let target = if lands_on_goal { goal } else { x_new };
        let outcome = try_edge(ctx, &g.graph[parent], &target, config.threshold)?;
        record.decision = Some(stats.count(&outcome));
        let (edge, end) = match outcome {
            EdgeOutcome::Accepted { edge, end } => (edge, end),
            _ => {
                trace.push(record);
                continue;
            }
        };
        if lands_on_goal {
            g.graph.add_edge(parent, g.goal, edge);
            stats.goal_connections += 1;
            trace.push(record);
            continue;
        }
        let child = g.graph.add_node(Vertex {
            position: x_new,
            continuation: Some(end),
        });
        g.graph.add_edge(parent, child, edge);
        nodes.push(child);
        points.push(x_new);

        if (x_new - goal).norm() <= config.step {
            let outcome = try_edge(ctx, &g.graph[child], &goal, config.threshold)?;
            record.goal = Some(stats.count(&outcome));
            if let EdgeOutcome::Accepted { edge, .. } = outcome {
                g.graph.add_edge(child, g.goal, edge);
                stats.goal_connections += 1;
            }
        }
        trace.push(record);
    }
    let path = match select_path(&g.graph, g.start, g.goal) {
        Ok(vertices) => {
            let waypoints = vertices.iter().map(|&n| g.graph[n].position).collect();
            let total_dt = vertices
                .windows(2)
                .map(|w| {
                    g.graph
                        .edges_connecting(w[0], w[1])
                        .map(|e| e.weight().dt)
                        .fold(f64::INFINITY, f64::min)
                })
                .sum();
            Some(SelectedPath {
                vertices,
                waypoints,
                total_dt,
            })
        }
        Err(Error::NoPath) => None,
        Err(e) => return Err(e),
    };
    Ok(PlanResult {
        graph: g,
        stats,
        trace,
        path,
    })
}

/// Planner random stream for a seed.
pub fn planner_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
