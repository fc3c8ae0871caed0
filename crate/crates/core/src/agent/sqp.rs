use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::ballistics::{BallParams, FlightModel};
use crate::cradle::{cradle_step, CradleParams};
use crate::kinematics::{JointVector, KinematicModel};
use crate::sim::{EnvConfig, Observation};
use crate::sqp::{self, SqpSettings, SqpStatus};
use crate::stage_ocp::{decode, horizon, stage_transition, CatchWeights, Limits, StageControl, StageState};

use super::{Agent, AgentCommand, AgentError, Phase, PlanSnapshot, SnapshotCell};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqpAgentConfig {
    pub weights: CatchWeights,
    pub solver: SqpSettings,
    pub cradle: CradleParams,
    /// Replan every this many ticks in synchronous mode.
    pub replan_every: usize,
    /// No replanning once the plan's catch time is this close.
    pub replan_freeze: f64,
    /// Solve in a background thread instead of between ticks.
    pub asynchronous: bool,
}

impl Default for SqpAgentConfig {
    fn default() -> Self {
        Self {
            weights: CatchWeights::default(),
            solver: SqpSettings::default(),
            cradle: CradleParams::default(),
            replan_every: 1,
            replan_freeze: 0.03,
            asynchronous: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    pub x0: StageState,
    pub ball: BallParams,
    pub warm_start: Option<Vec<StageControl>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    Plan { controls: Vec<StageControl>, status: SqpStatus, objective: f64 },
    Failed(String),
}

/// Source of plans; the SQP solver in production, a stub in tests.
pub trait Planner: Send + Sync {
    fn plan(&self, request: &PlanRequest) -> PlanOutcome;
}

#[derive(Debug, Clone)]
pub struct SqpPlanner {
    pub weights: CatchWeights,
    pub settings: SqpSettings,
    pub limits: Limits,
    pub model: KinematicModel,
    pub flight: FlightModel,
}

impl SqpPlanner {
    pub fn new(cfg: &SqpAgentConfig, env: &EnvConfig) -> Self {
        Self {
            weights: cfg.weights,
            settings: cfg.solver,
            limits: env.limits.clone(),
            model: env.model.clone(),
            flight: env.flight_model(),
        }
    }
}

impl Planner for SqpPlanner {
    fn plan(&self, request: &PlanRequest) -> PlanOutcome {
        let spec = self.weights.spec(request.ball, self.flight);
        match sqp::solve(&request.x0, &spec, &self.limits, &self.model, request.warm_start.as_deref(), &self.settings) {
            Ok(sol) if sol.status == SqpStatus::Solved => {
                PlanOutcome::Plan { controls: sol.controls, status: sol.status, objective: sol.objective_value }
            }
            Ok(sol) => PlanOutcome::Failed(format!("{:?} after {} iterations", sol.status, sol.iterations)),
            Err(e) => PlanOutcome::Failed(e.to_string()),
        }
    }
}

/// Remaining stages of `snapshot` re-anchored at `(now, qd_now)`. Stage
/// end velocities are kept, so the first remaining stage absorbs any
/// tracking error.
pub fn shift_controls(snapshot: &PlanSnapshot, now: f64, qd_now: &JointVector, limits: &Limits) -> Option<Vec<StageControl>> {
    let mut x = snapshot.x0;
    let mut out = Vec::new();
    for u in &snapshot.controls {
        let next = stage_transition(&x, u, limits);
        if next.t > now {
            if out.is_empty() {
                out.push(StageControl { dqd: next.qd - qd_now, dt: next.t - now });
            } else {
                out.push(*u);
            }
        }
        x = next;
    }
    (!out.is_empty()).then_some(out)
}

fn publish(cell: &SnapshotCell, epoch: u64, request: &PlanRequest, outcome: PlanOutcome) {
    match outcome {
        PlanOutcome::Plan { controls, status, objective } => {
            let t_f = request.x0.t + horizon(&controls);
            let snapshot = PlanSnapshot { x0: request.x0, controls, t_f, status, ball: request.ball, objective, seqno: 0 };
            cell.publish(epoch, snapshot);
        }
        PlanOutcome::Failed(reason) => {
            log::debug!("replan at t = {:.3} failed: {reason}; keeping previous plan", request.x0.t);
            cell.mark_stale(epoch);
        }
    }
}

#[derive(Default)]
struct Mailbox {
    pending: Option<(u64, PlanRequest)>,
    busy: bool,
}

struct WorkerShared {
    mailbox: Mutex<Mailbox>,
    wake: Condvar,
    idle: Condvar,
    shutdown: AtomicBool,
}

/// Background replanning thread. Only the newest request is kept.
struct Worker {
    shared: Arc<WorkerShared>,
    handle: Option<JoinHandle<()>>,
}

impl Worker {
    fn spawn(planner: Arc<dyn Planner>, cell: Arc<SnapshotCell>) -> Self {
        let shared = Arc::new(WorkerShared {
            mailbox: Mutex::new(Mailbox::default()),
            wake: Condvar::new(),
            idle: Condvar::new(),
            shutdown: AtomicBool::new(false),
        });
        let inner = Arc::clone(&shared);
        let handle = std::thread::spawn(move || loop {
            let (epoch, request) = {
                let mut mb = inner.mailbox.lock().expect("mailbox lock");
                loop {
                    if inner.shutdown.load(Ordering::Acquire) {
                        return;
                    }
                    if let Some(job) = mb.pending.take() {
                        mb.busy = true;
                        break job;
                    }
                    inner.idle.notify_all();
                    mb = inner.wake.wait(mb).expect("mailbox lock");
                }
            };
            let outcome = planner.plan(&request);
            publish(&cell, epoch, &request, outcome);
            let mut mb = inner.mailbox.lock().expect("mailbox lock");
            mb.busy = false;
            if mb.pending.is_none() {
                inner.idle.notify_all();
            }
        });
        Self { shared, handle: Some(handle) }
    }

    fn submit(&self, epoch: u64, request: PlanRequest) {
        let mut mb = self.shared.mailbox.lock().expect("mailbox lock");
        mb.pending = Some((epoch, request));
        self.shared.wake.notify_one();
    }

    fn busy(&self) -> bool {
        let mb = self.shared.mailbox.lock().expect("mailbox lock");
        mb.busy || mb.pending.is_some()
    }

    fn wait_idle(&self) {
        let mut mb = self.shared.mailbox.lock().expect("mailbox lock");
        while mb.busy || mb.pending.is_some() {
            mb = self.shared.idle.wait(mb).expect("mailbox lock");
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::Release);
        {
            let _mb = self.shared.mailbox.lock().expect("mailbox lock");
            self.shared.wake.notify_all();
        }
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

/// Replanning trajectory-optimization agent with cradle handoff.
pub struct SqpAgent {
    cfg: SqpAgentConfig,
    limits: Limits,
    model: KinematicModel,
    dt: f64,
    planner: Arc<dyn Planner>,
    cell: Arc<SnapshotCell>,
    worker: Option<Worker>,
    epoch: u64,
    tick: usize,
    phase: Phase,
    catch_time: Option<f64>,
    solves: usize,
}

impl SqpAgent {
    pub fn new(cfg: SqpAgentConfig, env: &EnvConfig) -> Self {
        let planner = SqpPlanner::new(&cfg, env);
        Self::with_planner(cfg, env, Arc::new(planner))
    }

    pub fn with_planner(cfg: SqpAgentConfig, env: &EnvConfig, planner: Arc<dyn Planner>) -> Self {
        let cell = Arc::new(SnapshotCell::new());
        let worker = cfg.asynchronous.then(|| Worker::spawn(Arc::clone(&planner), Arc::clone(&cell)));
        let epoch = cell.clear();
        let cradle = CradleParams { control_dt: env.control_dt, ..cfg.cradle };
        Self {
            cfg: SqpAgentConfig { cradle, ..cfg },
            limits: env.limits.clone(),
            model: env.model.clone(),
            dt: env.control_dt,
            planner,
            cell,
            worker,
            epoch,
            tick: 0,
            phase: Phase::Intercept,
            catch_time: None,
            solves: 0,
        }
    }

    pub fn snapshot_cell(&self) -> Arc<SnapshotCell> {
        Arc::clone(&self.cell)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Solve requests issued this episode.
    pub fn solves(&self) -> usize {
        self.solves
    }

    /// Blocks until the background solver has drained its queue.
    pub fn wait_for_planner(&self) {
        if let Some(w) = &self.worker {
            w.wait_idle();
        }
    }

    pub fn planner_busy(&self) -> bool {
        self.worker.as_ref().is_some_and(Worker::busy)
    }

    fn maybe_replan(&mut self, obs: &Observation, current: Option<&PlanSnapshot>) {
        let Some(ball) = obs.ball_estimate else {
            return;
        };
        let every = self.cfg.replan_every.max(1);
        if self.worker.is_none() && !self.tick.is_multiple_of(every) {
            return;
        }
        if current.is_some_and(|s| s.t_f - obs.t < self.cfg.replan_freeze) {
            return;
        }
        let x0 = StageState { q: obs.q, qd: obs.qd, t: obs.t };
        let warm_start = current.and_then(|s| shift_controls(s, obs.t, &obs.qd, &self.limits));
        let request = PlanRequest { x0, ball, warm_start };
        self.solves += 1;
        match &self.worker {
            Some(worker) => worker.submit(self.epoch, request),
            None => {
                let outcome = self.planner.plan(&request);
                publish(&self.cell, self.epoch, &request, outcome);
            }
        }
    }

    fn intercept_command(&self, snapshot: &PlanSnapshot, now: f64) -> JointVector {
        let tau = ((now + self.dt).min(snapshot.t_f) - snapshot.x0.t).max(0.0);
        match decode(&snapshot.x0, &snapshot.controls, tau, &self.limits) {
            Ok((_, qd)) => qd,
            Err(_) => snapshot.x0.qd,
        }
    }
}

impl Agent for SqpAgent {
    fn name(&self) -> &'static str {
        "sqp"
    }

    fn reset(&mut self) {
        self.epoch = self.cell.clear();
        self.tick = 0;
        self.phase = Phase::Intercept;
        self.catch_time = None;
        self.solves = 0;
    }

    fn act(&mut self, obs: &Observation) -> Result<AgentCommand, AgentError> {
        let now = obs.t;
        let mut command = JointVector::zeros();
        if self.phase == Phase::Intercept {
            let (current, _) = self.cell.read();
            self.maybe_replan(obs, current.as_deref());
            let (latest, _) = self.cell.read();
            match latest {
                None => {}
                Some(snapshot) if now >= snapshot.t_f => {
                    self.phase = Phase::Cradle;
                    self.catch_time = Some(snapshot.t_f);
                }
                Some(snapshot) => command = self.intercept_command(&snapshot, now),
            }
        }
        if self.phase == Phase::Cradle {
            let t_f = self.catch_time.expect("cradle starts from a plan");
            if now >= t_f + self.cfg.cradle.duration() {
                self.phase = Phase::Done;
            } else {
                let u = cradle_step(&obs.q, &obs.qd, now, t_f, &self.cfg.cradle, &self.limits, &self.model);
                command = obs.qd + u * self.dt;
            }
        }
        self.tick += 1;
        Ok(AgentCommand { qd_cmd: self.limits.clamp_velocity(&command), phase: self.phase })
    }
}
