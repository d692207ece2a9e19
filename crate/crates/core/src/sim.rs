//! Timed 2D kinematic replay of proactive event sequences.
//!
//! The human and the robot tool centre point are points in the plane. Each
//! proactive event is bound to a motion primitive that runs to completion
//! before the next one starts. Reactive behaviour (safety stops) emerges
//! from the robot's laser-zone logic. Every step is scored with the
//! piecewise risk metric and the episode keeps the maximum.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::ModelSet;
use crate::error::{HazError, Result};

pub type Point = [f64; 2];

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Region {
    Disc { center: Point, radius: f64 },
    /// Convex polygon, vertices in either winding order.
    Polygon { points: Vec<Point> },
}

impl Region {
    pub fn contains(&self, p: Point) -> bool {
        match self {
            Region::Disc { center, radius } => dist(*center, p) <= *radius,
            Region::Polygon { points } => {
                let n = points.len();
                let mut sign = 0.0f64;
                for i in 0..n {
                    let (a, b) = (points[i], points[(i + 1) % n]);
                    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                    if cross != 0.0 {
                        if sign != 0.0 && cross.signum() != sign {
                            return false;
                        }
                        sign = cross.signum();
                    }
                }
                true
            }
        }
    }

    pub fn centre(&self) -> Point {
        match self {
            Region::Disc { center, .. } => *center,
            Region::Polygon { points } => {
                let n = points.len().max(1) as f64;
                let sx: f64 = points.iter().map(|p| p[0]).sum();
                let sy: f64 = points.iter().map(|p| p[1]).sum();
                [sx / n, sy / n]
            }
        }
    }

    fn degenerate(&self) -> bool {
        match self {
            Region::Disc { radius, .. } => radius.is_nan() || *radius <= 0.0,
            Region::Polygon { points } => {
                if points.len() < 3 {
                    return true;
                }
                let mut area = 0.0;
                for i in 0..points.len() {
                    let (a, b) = (points[i], points[(i + 1) % points.len()]);
                    area += a[0] * b[1] - b[0] * a[1];
                }
                area.abs() < 1e-12
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotCommand {
    Stop,
    Start,
    Override,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    /// Walk between two areas; feasible while standing in either.
    Shuttle { between: [String; 2] },
    /// Pick up or put down the part at an area.
    Handle {
        at: String,
        engaged_before: bool,
        engaged_after: bool,
        part_from: i64,
        part_to: i64,
        /// Point the human moves to while handling.
        #[serde(default)]
        reach: Option<Point>,
    },
    /// Walk from `from` to the panel and press a button.
    Press {
        panel: String,
        from: String,
        command: RobotCommand,
        #[serde(default)]
        hands_free: bool,
    },
    /// Step back from the current engagement.
    Retreat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Step length (s).
    pub dt: f64,
    /// Episode time limit (s).
    pub timeout: f64,
    /// Separation (m) at which human and tool centre point touch.
    pub contact_radius: f64,
    /// Uniform jitter (m) applied to every walking target.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanParams {
    pub start: String,
    /// Walk speed range (m/s), sampled once per episode.
    pub walk_speed: [f64; 2],
    /// Pick/place duration (s).
    pub handling_time: f64,
    /// Button press duration (s).
    pub press_time: f64,
    /// Initial part position code.
    #[serde(default)]
    pub part: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    /// Tool centre point shuttles along this polyline while running.
    pub path: Vec<Point>,
    /// Nominal tool speed (mm/s).
    pub nominal_speed: f64,
    /// Laser-zone detection latency (s).
    pub detection_latency: f64,
    /// Linear braking ramp duration (s).
    pub braking_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyParams {
    pub laser_zone: String,
    pub workspace: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskParams {
    /// Speed threshold (mm/s).
    pub v_crit: f64,
    /// Collision force limit (N).
    pub f_max: f64,
    /// Contact stiffness (N/m).
    pub stiffness: f64,
    pub robot_mass: f64,
    pub human_mass: f64,
    /// Multiplier applied to the distance (m) inside the exponential.
    pub distance_scale: f64,
}

impl Default for RiskParams {
    fn default() -> Self {
        RiskParams {
            v_crit: 250.0,
            f_max: 140.0,
            stiffness: 75_000.0,
            robot_mass: 30.0,
            human_mass: 4.4,
            distance_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub sim: SimParams,
    pub human: HumanParams,
    pub robot: RobotParams,
    pub safety: SafetyParams,
    pub risk: RiskParams,
    pub areas: BTreeMap<String, Region>,
    pub bindings: BTreeMap<String, Primitive>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario> {
        let s: Scenario = toml::from_str(text).map_err(|e| HazError::Config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn scenario_a() -> Scenario {
        Scenario::from_toml(crate::bundled::SCENARIO_A_SCN).expect("bundled scenario is valid")
    }

    /// Bound events, sorted.
    pub fn alphabet(&self) -> Vec<String> {
        self.bindings.keys().cloned().collect()
    }

    fn area(&self, name: &str) -> Result<&Region> {
        self.areas
            .get(name)
            .ok_or_else(|| HazError::Config(format!("scenario has no area `{name}`")))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sim.dt", self.sim.dt),
            ("sim.timeout", self.sim.timeout),
            ("human.walk_speed[0]", self.human.walk_speed[0]),
            ("human.handling_time", self.human.handling_time),
            ("human.press_time", self.human.press_time),
            ("robot.nominal_speed", self.robot.nominal_speed),
            ("risk.v_crit", self.risk.v_crit),
            ("risk.f_max", self.risk.f_max),
            ("risk.stiffness", self.risk.stiffness),
            ("risk.robot_mass", self.risk.robot_mass),
            ("risk.human_mass", self.risk.human_mass),
            ("risk.distance_scale", self.risk.distance_scale),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(HazError::Config(format!("{name} must be positive (got {v})")));
            }
        }
        let non_negative = [
            ("sim.contact_radius", self.sim.contact_radius),
            ("sim.jitter", self.sim.jitter),
            ("robot.detection_latency", self.robot.detection_latency),
            ("robot.braking_time", self.robot.braking_time),
        ];
        for (name, v) in non_negative {
            if v.is_nan() || v < 0.0 {
                return Err(HazError::Config(format!("{name} must be non-negative (got {v})")));
            }
        }
        if self.human.walk_speed[1] < self.human.walk_speed[0] {
            return Err(HazError::Config("human.walk_speed range is reversed".into()));
        }
        if self.robot.path.len() < 2 {
            return Err(HazError::Config("robot.path needs at least two points".into()));
        }
        for (name, region) in &self.areas {
            if region.degenerate() {
                return Err(HazError::Config(format!("area `{name}` is degenerate")));
            }
        }
        self.area(&self.human.start)?;
        self.area(&self.safety.laser_zone)?;
        self.area(&self.safety.workspace)?;
        for (ev, p) in &self.bindings {
            let names: Vec<&str> = match p {
                Primitive::Shuttle { between } => between.iter().map(String::as_str).collect(),
                Primitive::Handle { at, .. } => vec![at.as_str()],
                Primitive::Press { panel, from, .. } => vec![panel.as_str(), from.as_str()],
                Primitive::Retreat => Vec::new(),
            };
            for n in names {
                self.area(n)
                    .map_err(|e| HazError::Config(format!("binding `{ev}`: {e}")))?;
            }
        }
        Ok(())
    }

    /// Every proactive event of `model` must have exactly one binding.
    pub fn check_bindings(&self, model: &ModelSet) -> Result<()> {
        let missing: Vec<String> = model
            .event_table()
            .into_iter()
            .filter(|e| e.proactive && !self.bindings.contains_key(&e.name))
            .map(|e| e.name)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(HazError::Config(format!("unbound proactive events: {}", missing.join(", "))))
        }
    }
}

/// Transient two-mass contact force (N) for a robot speed in mm/s, human
/// treated as stationary.
pub fn contact_force(v_r: f64, params: &RiskParams) -> Result<f64> {
    if v_r < 0.0 || v_r.is_nan() {
        return Err(HazError::Config(format!("negative robot speed {v_r}")));
    }
    if !(params.stiffness > 0.0 && params.robot_mass > 0.0 && params.human_mass > 0.0) {
        return Err(HazError::Config("contact model needs positive stiffness and masses".into()));
    }
    let mu = params.robot_mass * params.human_mass / (params.robot_mass + params.human_mass);
    Ok(v_r / 1000.0 * (params.stiffness * mu).sqrt())
}

/// Piecewise risk: zero below the speed threshold, exponential distance
/// decay while separated, normalized contact force plus one on contact.
pub fn risk(d_hr: f64, v_r: f64, contact: bool, f_c: f64, params: &RiskParams) -> Result<f64> {
    if d_hr < 0.0 || v_r < 0.0 || f_c < 0.0 || d_hr.is_nan() || v_r.is_nan() || f_c.is_nan() {
        return Err(HazError::Config(format!(
            "risk inputs must be non-negative (d={d_hr}, v={v_r}, F={f_c})"
        )));
    }
    if contact && d_hr != 0.0 {
        return Err(HazError::Config("contact requires zero separation".into()));
    }
    Ok(if v_r < params.v_crit {
        0.0
    } else if contact {
        f_c / params.f_max + 1.0
    } else {
        (-d_hr * params.distance_scale).exp()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Safe,
    Unsafe,
}

pub const DEFAULT_THRESHOLD: f64 = 1.0;

pub fn classify_trace(trace: &RiskTrace, threshold: f64) -> Verdict {
    classify_r(trace.r_max, threshold)
}

pub fn classify_r(r_max: f64, threshold: f64) -> Verdict {
    if r_max >= threshold {
        Verdict::Unsafe
    } else {
        Verdict::Safe
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSample {
    pub t: f64,
    pub human: Point,
    pub tcp: Point,
    pub d_hr: f64,
    pub v_r: f64,
    pub contact: bool,
    pub f_c: f64,
    pub r: f64,
    pub s: bool,
    pub w: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalCause {
    SequenceExhausted,
    Contact,
    Timeout,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrace {
    pub samples: Vec<RiskSample>,
    pub r_max: f64,
    pub cause: TerminalCause,
    /// Events whose primitive was started, in order.
    pub executed: Vec<String>,
    /// Events skipped as infeasible.
    pub skipped: Vec<String>,
    pub walk_speed: f64,
    pub seed: u64,
}

impl RiskTrace {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["t", "human_x", "human_y", "tcp_x", "tcp_y", "d_hr", "v_r", "contact", "f_c", "r", "s", "w"])
            .expect("in-memory write");
        for s in &self.samples {
            w.write_record([
                format!("{:.3}", s.t),
                format!("{:.6}", s.human[0]),
                format!("{:.6}", s.human[1]),
                format!("{:.6}", s.tcp[0]),
                format!("{:.6}", s.tcp[1]),
                format!("{:.6}", s.d_hr),
                format!("{:.3}", s.v_r),
                (s.contact as u8).to_string(),
                format!("{:.3}", s.f_c),
                format!("{:.6}", s.r),
                (s.s as u8).to_string(),
                (s.w as u8).to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn summary(&self) -> TraceSummary {
        TraceSummary {
            r_max: self.r_max,
            cause: self.cause,
            executed: self.executed.clone(),
            skipped: self.skipped.clone(),
            steps: self.samples.len(),
            duration: self.samples.last().map_or(0.0, |s| s.t),
            walk_speed: self.walk_speed,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub r_max: f64,
    pub cause: TerminalCause,
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub steps: usize,
    pub duration: f64,
    pub walk_speed: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasiblePolicy {
    /// Stop the episode and flag it.
    #[default]
    Abort,
    /// Treat the event as a no-op and continue.
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RobotMode {
    Idle,
    Working,
    Override,
    Stopping { then_idle: bool },
    Stopped,
}

struct Robot<'a> {
    params: &'a RobotParams,
    mode: RobotMode,
    speed: f64,
    tcp: Point,
    segment: usize,
    forward: bool,
    zone_time: f64,
}

impl<'a> Robot<'a> {
    fn new(params: &'a RobotParams) -> Self {
        Robot {
            params,
            mode: RobotMode::Idle,
            speed: 0.0,
            tcp: params.path[0],
            segment: 0,
            forward: true,
            zone_time: 0.0,
        }
    }

    fn command(&mut self, c: RobotCommand) {
        match c {
            RobotCommand::Start => {
                self.mode = RobotMode::Working;
                self.speed = self.params.nominal_speed;
            }
            RobotCommand::Override => {
                self.mode = RobotMode::Override;
                self.speed = self.params.nominal_speed;
            }
            RobotCommand::Stop => {
                if self.speed > 0.0 {
                    self.mode = RobotMode::Stopping { then_idle: true };
                    if self.params.braking_time == 0.0 {
                        self.speed = 0.0;
                        self.mode = RobotMode::Idle;
                    }
                } else {
                    self.mode = RobotMode::Idle;
                }
            }
        }
        self.zone_time = 0.0;
    }

    fn step(&mut self, dt: f64, in_zone: bool) {
        if self.mode == RobotMode::Working {
            if in_zone {
                if self.zone_time >= self.params.detection_latency {
                    self.mode = RobotMode::Stopping { then_idle: false };
                    if self.params.braking_time == 0.0 {
                        self.speed = 0.0;
                        self.mode = RobotMode::Stopped;
                    }
                }
                self.zone_time += dt;
            } else {
                self.zone_time = 0.0;
            }
        }
        if let RobotMode::Stopping { then_idle } = self.mode {
            let decel = self.params.nominal_speed / self.params.braking_time;
            self.speed = (self.speed - decel * dt).max(0.0);
            if self.speed == 0.0 {
                self.mode = if then_idle { RobotMode::Idle } else { RobotMode::Stopped };
            }
        }
        self.advance(self.speed / 1000.0 * dt);
    }

    fn advance(&mut self, mut travel: f64) {
        let path = &self.params.path;
        let mut guard = 0;
        while travel > 0.0 && guard < 64 {
            guard += 1;
            let target = if self.forward { path[self.segment + 1] } else { path[self.segment] };
            let d = dist(self.tcp, target);
            if d > travel {
                let f = travel / d;
                self.tcp = [
                    self.tcp[0] + (target[0] - self.tcp[0]) * f,
                    self.tcp[1] + (target[1] - self.tcp[1]) * f,
                ];
                return;
            }
            travel -= d;
            self.tcp = target;
            if self.forward {
                if self.segment + 2 < path.len() {
                    self.segment += 1;
                } else {
                    self.forward = false;
                }
            } else if self.segment > 0 {
                self.segment -= 1;
            } else {
                self.forward = true;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Engagement {
    return_area: String,
    return_pos: Point,
}

#[derive(Debug, Clone)]
enum Motion {
    Walk { target: Point },
    Lerp { from: Point, to: Point, elapsed: f64, duration: f64 },
    Hold { remaining: f64 },
}

struct Activity {
    stages: Vec<Motion>,
    on_done: Option<RobotCommand>,
}

struct Human {
    pos: Point,
    area: String,
    engaged: Option<Engagement>,
    part: i64,
}

fn jittered(p: Point, jitter: f64, rng: &mut ChaCha8Rng) -> Point {
    if jitter == 0.0 {
        return p;
    }
    [p[0] + rng.gen_range(-jitter..=jitter), p[1] + rng.gen_range(-jitter..=jitter)]
}

/// Checks feasibility and, when feasible, updates the discrete human state
/// and returns the motion stages.
fn start_primitive(
    scenario: &Scenario,
    prim: &Primitive,
    human: &mut Human,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Activity>> {
    let jitter = scenario.sim.jitter;
    Ok(match prim {
        Primitive::Shuttle { between } => {
            if human.engaged.is_some() {
                return Ok(None);
            }
            let dest = if human.area == between[0] {
                &between[1]
            } else if human.area == between[1] {
                &between[0]
            } else {
                return Ok(None);
            };
            let target = jittered(scenario.area(dest)?.centre(), jitter, rng);
            human.area = dest.clone();
            Some(Activity {
                stages: vec![Motion::Walk { target }],
                on_done: None,
            })
        }
        Primitive::Handle {
            at,
            engaged_before,
            engaged_after,
            part_from,
            part_to,
            reach,
        } => {
            if &human.area != at || human.engaged.is_some() != *engaged_before || human.part != *part_from {
                return Ok(None);
            }
            let stand = scenario.area(at)?.centre();
            let to = match (reach, engaged_after) {
                (Some(r), true) => *r,
                (_, false) => human.engaged.as_ref().map_or(human.pos, |e| e.return_pos),
                (None, true) => human.pos,
            };
            human.part = *part_to;
            human.engaged = if *engaged_after {
                Some(Engagement {
                    return_area: at.clone(),
                    return_pos: if *engaged_before {
                        human.engaged.as_ref().map_or(stand, |e| e.return_pos)
                    } else {
                        human.pos
                    },
                })
            } else {
                None
            };
            Some(Activity {
                stages: vec![Motion::Lerp {
                    from: human.pos,
                    to,
                    elapsed: 0.0,
                    duration: scenario.human.handling_time,
                }],
                on_done: None,
            })
        }
        Primitive::Press {
            panel,
            from,
            command,
            hands_free,
        } => {
            if human.engaged.is_some() || &human.area != from || (*hands_free && human.part == 1) {
                return Ok(None);
            }
            let target = jittered(scenario.area(panel)?.centre(), jitter, rng);
            human.engaged = Some(Engagement {
                return_area: from.clone(),
                return_pos: human.pos,
            });
            human.area = panel.clone();
            Some(Activity {
                stages: vec![
                    Motion::Walk { target },
                    Motion::Hold {
                        remaining: scenario.human.press_time,
                    },
                ],
                on_done: Some(*command),
            })
        }
        Primitive::Retreat => match human.engaged.take() {
            None => return Ok(None),
            Some(e) => {
                human.area = e.return_area;
                let target = jittered(e.return_pos, jitter, rng);
                Some(Activity {
                    stages: vec![Motion::Walk { target }],
                    on_done: None,
                })
            }
        },
    })
}

/// Advances `pos` by one step of `motion`; returns true when it finishes.
fn advance_motion(motion: &mut Motion, pos: &mut Point, speed: f64, dt: f64) -> bool {
    match motion {
        Motion::Walk { target } => {
            let d = dist(*pos, *target);
            let step = speed * dt;
            if d <= step {
                *pos = *target;
                true
            } else {
                let f = step / d;
                *pos = [pos[0] + (target[0] - pos[0]) * f, pos[1] + (target[1] - pos[1]) * f];
                false
            }
        }
        Motion::Lerp {
            from,
            to,
            elapsed,
            duration,
        } => {
            *elapsed += dt;
            let f = (*elapsed / *duration).min(1.0);
            *pos = [from[0] + (to[0] - from[0]) * f, from[1] + (to[1] - from[1]) * f];
            f >= 1.0
        }
        Motion::Hold { remaining } => {
            *remaining -= dt;
            *remaining <= 1e-12
        }
    }
}

/// Runs one episode. Fully determined by `(scenario, events, seed, policy)`.
pub fn run_episode(scenario: &Scenario, events: &[String], seed: u64, policy: InfeasiblePolicy) -> Result<RiskTrace> {
    for e in events {
        if !scenario.bindings.contains_key(e) {
            return Err(HazError::Config(format!("event `{e}` has no simulation binding")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = scenario.human.walk_speed;
    let walk_speed = if hi > lo { rng.gen_range(lo..=hi) } else { lo };

    let zone = scenario.area(&scenario.safety.laser_zone)?;
    let workspace = scenario.area(&scenario.safety.workspace)?;
    let dt = scenario.sim.dt;

    let mut human = Human {
        pos: scenario.area(&scenario.human.start)?.centre(),
        area: scenario.human.start.clone(),
        engaged: None,
        part: scenario.human.part,
    };
    let mut robot = Robot::new(&scenario.robot);
    let mut trace = RiskTrace {
        samples: Vec::new(),
        r_max: 0.0,
        cause: TerminalCause::SequenceExhausted,
        executed: Vec::new(),
        skipped: Vec::new(),
        walk_speed,
        seed,
    };

    let mut queue = events.iter();
    let mut current: Option<Activity> = None;
    let mut step_no: u64 = 0;

    loop {
        // pick up the next feasible primitive
        while current.as_ref().is_none_or(|a| a.stages.is_empty()) {
            if let Some(done) = current.take() {
                if let Some(cmd) = done.on_done {
                    robot.command(cmd);
                }
            }
            let Some(ev) = queue.next() else {
                return Ok(trace);
            };
            match start_primitive(scenario, &scenario.bindings[ev], &mut human, &mut rng)? {
                Some(act) => {
                    trace.executed.push(ev.clone());
                    current = Some(act);
                }
                None => match policy {
                    InfeasiblePolicy::Skip => trace.skipped.push(ev.clone()),
                    InfeasiblePolicy::Abort => {
                        trace.skipped.push(ev.clone());
                        trace.cause = TerminalCause::Infeasible;
                        return Ok(trace);
                    }
                },
            }
        }

        step_no += 1;
        let t = step_no as f64 * dt;
        let act = current.as_mut().expect("activity in progress");
        if advance_motion(&mut act.stages[0], &mut human.pos, walk_speed, dt) {
            act.stages.remove(0);
        }

        let s = zone.contains(human.pos);
        let w = workspace.contains(human.pos);
        robot.step(dt, s);

        let gap = dist(human.pos, robot.tcp) - scenario.sim.contact_radius;
        let d_hr = gap.max(0.0);
        let contact = d_hr == 0.0;
        let v_r = robot.speed;
        let f_c = if contact { contact_force(v_r, &scenario.risk)? } else { 0.0 };
        let r = risk(d_hr, v_r, contact, f_c, &scenario.risk)?;
        trace.r_max = trace.r_max.max(r);
        trace.samples.push(RiskSample {
            t,
            human: human.pos,
            tcp: robot.tcp,
            d_hr,
            v_r,
            contact,
            f_c,
            r,
            s,
            w,
        });

        if contact && v_r > 0.0 {
            trace.cause = TerminalCause::Contact;
            return Ok(trace);
        }
        if t >= scenario.sim.timeout - 1e-9 {
            trace.cause = TerminalCause::Timeout;
            return Ok(trace);
        }
    }
}

/// Black-box scoring of an event sequence, as used by the search baselines.
pub trait Evaluator {
    fn alphabet(&self) -> Vec<String>;
    fn evaluate(&self, events: &[String], seed: u64) -> Evaluation;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub r_max: f64,
    /// The behaviour actually performed: executed events up to termination.
    pub executed: Vec<String>,
}

/// Simulator-backed evaluator; infeasible events are skipped.
pub struct SimEvaluator<'a> {
    pub scenario: &'a Scenario,
}

impl Evaluator for SimEvaluator<'_> {
    fn alphabet(&self) -> Vec<String> {
        self.scenario.alphabet()
    }

    fn evaluate(&self, events: &[String], seed: u64) -> Evaluation {
        match run_episode(self.scenario, events, seed, InfeasiblePolicy::Skip) {
            Ok(tr) => Evaluation {
                r_max: tr.r_max,
                executed: tr.executed,
            },
            Err(_) => Evaluation {
                r_max: 0.0,
                executed: Vec::new(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn risk_regimes() {
        let p = RiskParams::default();
        assert_eq!(risk(0.7, 100.0, false, 0.0, &p).unwrap(), 0.0);
        assert_eq!(risk(0.0, 300.0, true, p.f_max, &p).unwrap(), 2.0);
        let r = risk(1.0, 300.0, false, 0.0, &p).unwrap();
        assert!((r - (-1.0f64).exp()).abs() <= 1e-12 * r);
        assert!(risk(-0.1, 300.0, false, 0.0, &p).is_err());
        assert!(risk(0.5, 300.0, true, 10.0, &p).is_err());
    }

    #[test]
    fn force_model() {
        let p = RiskParams::default();
        assert_eq!(contact_force(0.0, &p).unwrap(), 0.0);
        let f = contact_force(250.0, &p).unwrap();
        let mu = 30.0 * 4.4 / 34.4;
        assert!((f - 0.25 * (75_000.0f64 * mu).sqrt()).abs() < 1e-9);
        assert!((f - 134.115_318_307_2).abs() < 1e-6, "{f}");
        let mut prev = 0.0;
        for v in 1..200 {
            let f = contact_force(v as f64 * 5.0, &p).unwrap();
            assert!(f > prev);
            prev = f;
        }
        assert!(contact_force(-1.0, &p).is_err());
    }

    #[test]
    fn classification_boundary() {
        assert_eq!(classify_r(0.0, 1.0), Verdict::Safe);
        assert_eq!(classify_r(1.3, 1.0), Verdict::Unsafe);
        assert_eq!(classify_r(0.99, 1.0), Verdict::Safe);
        assert_eq!(classify_r(1.0, 1.0), Verdict::Unsafe);
    }

    #[test]
    fn idle_robot_walk_is_riskless() {
        let sc = Scenario::scenario_a();
        let tr = run_episode(&sc, &seq("t1 t1"), 3, InfeasiblePolicy::Abort).unwrap();
        assert_eq!(tr.r_max, 0.0);
        assert_eq!(tr.cause, TerminalCause::SequenceExhausted);
        assert_eq!(tr.executed, seq("t1 t1"));
    }

    #[test]
    fn override_sequence_collides() {
        let sc = Scenario::scenario_a();
        for seed in 0..20 {
            let tr = run_episode(&sc, &seq("b2 r t1 u_S r t1 t2 d_R"), seed, InfeasiblePolicy::Abort).unwrap();
            assert_eq!(tr.cause, TerminalCause::Contact, "seed {seed}");
            assert!(tr.r_max >= 1.0, "seed {seed}: {}", tr.r_max);
        }
    }

    #[test]
    fn episodes_are_deterministic() {
        let sc = Scenario::scenario_a();
        let s = seq("b1 r t1 u_S r t1 t2 d_R");
        let a = run_episode(&sc, &s, 11, InfeasiblePolicy::Abort).unwrap();
        let b = run_episode(&sc, &s, 11, InfeasiblePolicy::Abort).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn infeasible_primitive_policies() {
        let sc = Scenario::scenario_a();
        let tr = run_episode(&sc, &seq("u_S t1"), 0, InfeasiblePolicy::Abort).unwrap();
        assert_eq!(tr.cause, TerminalCause::Infeasible);
        assert!(tr.executed.is_empty());
        let tr = run_episode(&sc, &seq("u_S t1"), 0, InfeasiblePolicy::Skip).unwrap();
        assert_eq!(tr.executed, seq("t1"));
        assert_eq!(tr.skipped, seq("u_S"));
        assert!(run_episode(&sc, &seq("fly"), 0, InfeasiblePolicy::Skip).is_err());
    }

    #[test]
    fn flags_follow_geometry() {
        let sc = Scenario::scenario_a();
        let zone = &sc.areas[&sc.safety.laser_zone];
        let ws = &sc.areas[&sc.safety.workspace];
        let tr = run_episode(&sc, &seq("b1 r t2 t2 t1"), 5, InfeasiblePolicy::Abort).unwrap();
        for s in &tr.samples {
            assert_eq!(s.s, zone.contains(s.human));
            assert_eq!(s.w, ws.contains(s.human));
            assert!(s.d_hr >= 0.0);
            assert!(s.v_r >= 0.0);
            assert_eq!(s.r, risk(s.d_hr, s.v_r, s.contact, s.f_c, &sc.risk).unwrap());
        }
        let max = tr.samples.iter().map(|s| s.r).fold(0.0, f64::max);
        assert_eq!(max, tr.r_max);
    }

    #[test]
    fn polygon_containment() {
        let sq = Region::Polygon {
            points: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        };
        assert!(sq.contains([0.5, 0.5]));
        assert!(!sq.contains([1.5, 0.5]));
        assert_eq!(sq.centre(), [0.5, 0.5]);
    }

    #[test]
    fn scenario_validation() {
        let mut sc = Scenario::scenario_a();
        assert!(sc.validate().is_ok());
        sc.risk.robot_mass = 0.0;
        assert!(sc.validate().is_err());
        let mut sc = Scenario::scenario_a();
        sc.areas.insert("E".into(), Region::Disc { center: [0.0, 0.0], radius: 0.0 });
        assert!(sc.validate().is_err());
        let sc = Scenario::scenario_a();
        assert_eq!(Scenario::from_toml(&sc.to_toml()).unwrap(), sc);
    }
}
