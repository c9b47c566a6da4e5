//! Deterministic toss-juggling simulator.
//!
//! A PD + gravity-compensation controller tracks the spline reference on the
//! planar arm. Balls fly ballistically, get caught by the funnel when they
//! fall into its opening and leave it again once the funnel accelerates
//! downward faster than gravity.

pub mod arm;
mod seed;

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::{spline_coefficients, BoxLimits, ConstraintMask, SplinePlan};

pub use arm::{pd_gravity_torque, ArmModel, Vec2};
pub use seed::{default_mask_spec, seed_via_points};

/// Per-step binary reward threshold on ball height (m).
pub const REWARD_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BallPhase {
    Free,
    Carried,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallState {
    /// (x, z) in m.
    pub pos: Vec2,
    pub vel: Vec2,
    pub phase: BallPhase,
}

impl BallState {
    pub fn free(pos: Vec2, vel: Vec2) -> Self {
        Self {
            pos,
            vel,
            phase: BallPhase::Free,
        }
    }
}

/// Funnel kinematics over the last step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FunnelState {
    pub pos: Vec2,
    pub vel: Vec2,
    /// Finite-difference acceleration of the funnel over the last step.
    pub acc: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactKind {
    Spawn,
    Catch,
    Release,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactEvent {
    pub time: f64,
    pub ball: usize,
    pub kind: ContactKind,
}

impl fmt::Display for ContactEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ContactKind::Spawn => "spawn",
            ContactKind::Catch => "catch",
            ContactKind::Release => "release",
            ContactKind::Drop => "drop",
        };
        write!(f, "{kind}{}", self.ball)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub q: Vec2,
    pub qd: Vec2,
    pub balls: Vec<BallState>,
    /// Number of steps taken; time is `steps * dt`.
    pub steps: u64,
    pub time: f64,
    pub carried: Option<usize>,
    pub funnel: FunnelState,
    /// Events raised during the most recent step.
    pub events: Vec<ContactEvent>,
}

/// Ball released by the launcher; its spawn time starts the episode clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Launcher {
    pub pos: Vec2,
    pub vel: Vec2,
    pub time: f64,
}

/// Everything a rollout needs besides θ and the mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub max_duration: f64,
    pub reward_threshold: f64,
    pub drop_height: f64,
    pub catch_radius: f64,
    pub ball_radius: f64,
    pub launcher: Launcher,
    pub arm: ArmModel,
    /// Via-point safety box.
    pub limits: BoxLimits,
    /// Via point where the repeating cycle begins.
    pub cycle_start: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            max_duration: 10.0,
            reward_threshold: REWARD_THRESHOLD,
            drop_height: 0.05,
            catch_radius: 0.085,
            ball_radius: 0.0375,
            launcher: Launcher {
                pos: [0.493, 1.5],
                vel: [0.0, 0.0],
                time: 0.0,
            },
            arm: ArmModel::default(),
            limits: BoxLimits {
                q_low: vec![-1.4, 0.2],
                q_high: vec![0.8, 2.6],
                qdot_max: vec![12.0, 20.0],
                t_min: 0.1,
                t_max: 2.0,
            },
            cycle_start: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.dt, self.max_duration, self.catch_radius, self.ball_radius];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("sim.dt, max_duration, catch_radius and ball_radius must be positive".into()));
        }
        if self.launcher.time < 0.0 {
            return Err(Error::Config("sim.launcher.time must be nonnegative".into()));
        }
        self.arm.validate()?;
        self.limits.validate()?;
        if self.limits.joints() != 2 {
            return Err(Error::Config("the planar arm has exactly two joints".into()));
        }
        Ok(())
    }

    pub fn max_steps(&self) -> u64 {
        (self.max_duration / self.dt).round() as u64
    }
}

impl SimState {
    /// Arm at rest on the plan's start, ball 0 in the funnel, ball 1 pending launch.
    pub fn initial(plan: &SplinePlan, model: &ArmModel) -> Self {
        let (q, qd) = plan.evaluate(0.0);
        let q = [q[0], q[1]];
        let qd = [qd[0], qd[1]];
        let pos = model.forward_kinematics(&q);
        let vel = model.end_effector_velocity(&q, &qd);
        Self {
            q,
            qd,
            balls: vec![BallState {
                pos,
                vel,
                phase: BallPhase::Carried,
            }],
            steps: 0,
            time: 0.0,
            carried: Some(0),
            funnel: FunnelState { pos, vel, acc: [0.0; 2] },
            events: Vec::new(),
        }
    }

    fn check_finite(&self) -> Result<()> {
        let arm_ok = self.q.iter().chain(&self.qd).all(|v| v.is_finite());
        let balls_ok = self
            .balls
            .iter()
            .all(|b| b.pos.iter().chain(&b.vel).all(|v| v.is_finite()));
        if arm_ok && balls_ok {
            Ok(())
        } else {
            Err(Error::numeric("non-finite simulator state", format!("{self:?}")))
        }
    }
}

/// Exact constant-gravity map for one step.
pub fn ballistic_step(ball: &mut BallState, dt: f64, gravity: f64) {
    ball.pos[0] += ball.vel[0] * dt;
    ball.pos[1] += ball.vel[1] * dt - 0.5 * gravity * dt * dt;
    ball.vel[1] -= gravity * dt;
}

/// Release, carry and catch rules for the current funnel state.
pub fn contact_update(state: &mut SimState, catch_radius: f64, gravity: f64) {
    let funnel = state.funnel;
    let mut released = None;
    if let Some(i) = state.carried {
        let ball = &mut state.balls[i];
        ball.pos = funnel.pos;
        ball.vel = funnel.vel;
        if funnel.acc[1] < -gravity {
            ball.phase = BallPhase::Free;
            state.carried = None;
            released = Some(i);
            state.events.push(ContactEvent {
                time: state.time,
                ball: i,
                kind: ContactKind::Release,
            });
        }
    }
    if state.carried.is_some() || released.is_some() {
        return;
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, ball) in state.balls.iter().enumerate() {
        if ball.phase != BallPhase::Free {
            continue;
        }
        let dx = ball.pos[0] - funnel.pos[0];
        let dz = ball.pos[1] - funnel.pos[1];
        let dist = (dx * dx + dz * dz).sqrt();
        let falling_into = ball.vel[1] - funnel.vel[1] < 0.0;
        if dist <= catch_radius && falling_into && best.is_none_or(|(_, d)| dist < d) {
            best = Some((i, dist));
        }
    }
    if let Some((i, _)) = best {
        let ball = &mut state.balls[i];
        ball.phase = BallPhase::Carried;
        ball.pos = funnel.pos;
        ball.vel = funnel.vel;
        state.carried = Some(i);
        state.events.push(ContactEvent {
            time: state.time,
            ball: i,
            kind: ContactKind::Catch,
        });
    }
}

/// One control and physics step of length `dt`.
pub fn step(state: &mut SimState, plan: &SplinePlan, config: &SimConfig) -> Result<()> {
    let model = &config.arm;
    let dt = config.dt;
    state.events.clear();

    let mut q_ref = [0.0; 2];
    let mut qd_ref = [0.0; 2];
    plan.evaluate_into(state.time, &mut q_ref, &mut qd_ref);
    let tau = pd_gravity_torque(&state.q, &state.qd, &q_ref, &qd_ref, model);
    model.integrate(&mut state.q, &mut state.qd, &tau, dt);

    state.steps += 1;
    state.time = state.steps as f64 * dt;

    let pos = model.forward_kinematics(&state.q);
    let vel = model.end_effector_velocity(&state.q, &state.qd);
    let prev = state.funnel.vel;
    state.funnel = FunnelState {
        pos,
        vel,
        acc: [(vel[0] - prev[0]) / dt, (vel[1] - prev[1]) / dt],
    };

    for ball in state.balls.iter_mut().filter(|b| b.phase == BallPhase::Free) {
        ballistic_step(ball, dt, model.gravity);
    }
    maybe_launch(state, config);
    contact_update(state, config.catch_radius, model.gravity);

    for (i, ball) in state.balls.iter_mut().enumerate() {
        if ball.phase != BallPhase::Dropped && ball.pos[1] < config.drop_height {
            ball.phase = BallPhase::Dropped;
            if state.carried == Some(i) {
                state.carried = None;
            }
            state.events.push(ContactEvent {
                time: state.time,
                ball: i,
                kind: ContactKind::Drop,
            });
        }
    }
    state.check_finite()
}

fn maybe_launch(state: &mut SimState, config: &SimConfig) {
    if state.balls.len() < 2 && state.time >= config.launcher.time {
        state.balls.push(BallState::free(config.launcher.pos, config.launcher.vel));
        state.events.push(ContactEvent {
            time: state.time,
            ball: state.balls.len() - 1,
            kind: ContactKind::Spawn,
        });
    }
}

/// 1 iff every ball is at or above `threshold`.
pub fn binary_reward(state: &SimState, threshold: f64) -> u8 {
    let min = state.balls.iter().map(|b| b.pos[1]).fold(f64::INFINITY, f64::min);
    u8::from(min >= threshold)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub q: Vec2,
    pub q_ref: Vec2,
    pub balls: Vec<BallState>,
    pub events: Vec<ContactEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    /// Seconds with every ball above the threshold.
    pub reward: f64,
    pub duration_simulated: f64,
    /// First time the reward fell to zero, if it did.
    pub drop_time: Option<f64>,
    pub catches: usize,
    pub trace: Option<Vec<TraceRow>>,
}

/// Builds the reference plan for θ.
pub fn plan_for(theta: &DVector<f64>, mask: &ConstraintMask, config: &SimConfig) -> Result<SplinePlan> {
    let via_points = mask.expand(theta, &config.limits)?;
    spline_coefficients(&via_points, Some(config.cycle_start))
}

/// Simulates θ until the reward first drops to zero or `max_duration` passes.
pub fn rollout(theta: &DVector<f64>, mask: &ConstraintMask, config: &SimConfig) -> Result<RolloutResult> {
    rollout_with(theta, mask, config, false)
}

pub fn rollout_with(
    theta: &DVector<f64>,
    mask: &ConstraintMask,
    config: &SimConfig,
    record_trace: bool,
) -> Result<RolloutResult> {
    let plan = plan_for(theta, mask, config)?;
    simulate_plan(&plan, config, record_trace)
}

pub fn simulate_plan(plan: &SplinePlan, config: &SimConfig, record_trace: bool) -> Result<RolloutResult> {
    let mut state = SimState::initial(plan, &config.arm);
    maybe_launch(&mut state, config);
    let mut trace = record_trace.then(Vec::new);
    let record = |state: &SimState, trace: &mut Option<Vec<TraceRow>>| {
        if let Some(rows) = trace.as_mut() {
            let (q_ref, _) = plan.evaluate(state.time);
            rows.push(TraceRow {
                t: state.time,
                q: state.q,
                q_ref: [q_ref[0], q_ref[1]],
                balls: state.balls.clone(),
                events: state.events.clone(),
            });
        }
    };
    record(&state, &mut trace);

    let max_steps = config.max_steps();
    let mut rewarded_steps: u64 = 0;
    let mut started = binary_reward(&state, config.reward_threshold) == 1;
    let mut drop_time = None;
    let mut catches = 0;
    while state.steps < max_steps {
        step(&mut state, plan, config).map_err(|e| match e {
            Error::Numeric { message, diagnostics } => Error::Numeric {
                message,
                diagnostics: format!("{diagnostics}\nplan: {plan:?}"),
            },
            other => other,
        })?;
        catches += state
            .events
            .iter()
            .filter(|e| e.kind == ContactKind::Catch)
            .count();
        record(&state, &mut trace);
        let r = binary_reward(&state, config.reward_threshold);
        if r == 1 {
            rewarded_steps += 1;
            started = true;
        } else if started || state.balls.iter().any(|b| b.phase == BallPhase::Dropped) {
            drop_time = Some(state.time);
            break;
        }
    }
    Ok(RolloutResult {
        reward: rewarded_steps as f64 * config.dt,
        duration_simulated: state.time,
        drop_time,
        catches,
        trace,
    })
}

/// Writes a rollout trace as CSV.
pub fn write_trace<W: Write>(mut out: W, rows: &[TraceRow]) -> Result<()> {
    writeln!(
        out,
        "t,q0,q1,q_ref0,q_ref1,ball0_x,ball0_z,ball0_phase,ball1_x,ball1_z,ball1_phase,events"
    )?;
    for row in rows {
        write!(
            out,
            "{},{},{},{},{},",
            row.t, row.q[0], row.q[1], row.q_ref[0], row.q_ref[1]
        )?;
        for k in 0..2 {
            match row.balls.get(k) {
                Some(b) => write!(out, "{},{},{},", b.pos[0], b.pos[1], phase_flag(b.phase))?,
                None => write!(out, ",,,")?,
            }
        }
        let events: Vec<String> = row.events.iter().map(|e| e.to_string()).collect();
        writeln!(out, "{}", events.join(";"))?;
    }
    Ok(())
}

fn phase_flag(p: BallPhase) -> &'static str {
    match p {
        BallPhase::Free => "free",
        BallPhase::Carried => "carried",
        BallPhase::Dropped => "dropped",
    }
}
