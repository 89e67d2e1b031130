use super::{step, Obstacle, Road, VehicleBody, VehicleState, WorldState};
use crate::camgeom::CameraModel;
use crate::cogmap::{
    build_map, derive_intention, CognitiveMap, DrivingIntention, NavigationCommand, SafetyParams, VehicleStateRecord,
};
use crate::neuro::{flatten, forward, FlatMap, LstmParams, Normalization, SEQ_LEN, STEER_SATURATION};
use crate::percept::{measurements_from, mix_seed, perceive_all, CameraRig, LaneMeasurements, OraclePerception};
use crate::planner::{plan, Direction, ManeuverPhase, ManeuverState, PlanEvent, PlannerParams};
use crate::teacher::{speed_command, SpeedRule, Teacher, TeacherGains};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    ConfigInvalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSpec {
    pub num_lanes: usize,
    pub lane_width: f64,
    #[serde(default = "default_road_length")]
    pub length: f64,
}

fn default_road_length() -> f64 {
    1000.0
}

impl Default for RoadSpec {
    fn default() -> Self {
        Self {
            num_lanes: 3,
            lane_width: 3.5,
            length: default_road_length(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StartSpec {
    pub lane: usize,
    /// Lateral offset from the lane center, positive right (m).
    pub offset: f64,
    pub x: f64,
    pub psi: f64,
    /// Initial speed; the cruise speed when absent (m/s).
    pub speed: Option<f64>,
}

impl Default for StartSpec {
    fn default() -> Self {
        Self {
            lane: 1,
            offset: 0.0,
            x: 0.0,
            psi: 0.0,
            speed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub lane: usize,
    /// Rear face position along the road (m).
    pub x: f64,
    #[serde(default)]
    pub appear_time: f64,
    /// Uniform extra delay in `[0, appear_jitter)` drawn from the scenario
    /// seed (s).
    #[serde(default)]
    pub appear_jitter: f64,
    #[serde(default = "default_obstacle_length")]
    pub length: f64,
    #[serde(default = "default_obstacle_width")]
    pub width: f64,
}

fn default_obstacle_length() -> f64 {
    4.5
}

fn default_obstacle_width() -> f64 {
    1.8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NaviEntry {
    pub t: f64,
    pub command: NavigationCommand,
}

/// Scripted guidance. Each entry takes effect once, at the first tick whose
/// time reaches `t`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NaviSchedule(pub Vec<NaviEntry>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraSpec {
    pub focal: f64,
    pub u0: f64,
    pub v0: f64,
    pub height: f64,
    pub image_w: u32,
    pub image_h: u32,
    pub side_yaw_deg: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        let c = CameraModel::default();
        Self {
            focal: c.focal,
            u0: c.u0,
            v0: c.v0,
            height: c.height,
            image_w: c.image_w,
            image_h: c.image_h,
            side_yaw_deg: CameraRig::DEFAULT_SIDE_YAW_DEG,
        }
    }
}

impl CameraSpec {
    pub fn rig(&self) -> CameraRig {
        let base = CameraModel {
            focal: self.focal,
            u0: self.u0,
            v0: self.v0,
            height: self.height,
            image_w: self.image_w,
            image_h: self.image_h,
            ..CameraModel::default()
        };
        CameraRig::symmetric(base, self.side_yaw_deg.to_radians())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Teacher,
    Lstm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    /// Checkpoint path for the `lstm` controller.
    #[serde(default)]
    pub checkpoint: Option<String>,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            kind: ControllerKind::Teacher,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Simulated duration (s).
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Pixel noise on every perception value (px).
    #[serde(default)]
    pub noise_sigma: f64,
    pub road: RoadSpec,
    #[serde(default)]
    pub start: StartSpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub navigation: NaviSchedule,
    #[serde(default)]
    pub camera: CameraSpec,
    #[serde(default)]
    pub safety: SafetyParams,
    #[serde(default)]
    pub speed: SpeedRule,
    #[serde(default)]
    pub teacher: TeacherGains,
    #[serde(default)]
    pub planner: PlannerParams,
    #[serde(default)]
    pub vehicle: VehicleBody,
    #[serde(default)]
    pub controller: ControllerSpec,
}

fn default_dt() -> f64 {
    0.05
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: String::new(),
            seed: 0,
            horizon: 30.0,
            dt: default_dt(),
            noise_sigma: 0.0,
            road: RoadSpec::default(),
            start: StartSpec::default(),
            obstacles: Vec::new(),
            navigation: NaviSchedule::default(),
            camera: CameraSpec::default(),
            safety: SafetyParams::default(),
            speed: SpeedRule::default(),
            teacher: TeacherGains::default(),
            planner: PlannerParams::default(),
            vehicle: VehicleBody::default(),
            controller: ControllerSpec::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |m: String| Err(ScenarioError::ConfigInvalid(m));
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return fail(format!("dt must be in (0, 0.1], got {}", self.dt));
        }
        if !finite_pos(self.horizon) {
            return fail("horizon must be positive".into());
        }
        let r = &self.road;
        if r.num_lanes == 0 {
            return fail("road needs at least one lane".into());
        }
        if !(r.lane_width.is_finite() && r.lane_width > 2.5) {
            return fail(format!("lane_width must exceed 2.5 m, got {}", r.lane_width));
        }
        if !finite_pos(r.length) {
            return fail("road length must be positive".into());
        }
        if self.start.lane >= r.num_lanes {
            return fail(format!("start lane {} does not exist", self.start.lane));
        }
        if !self.start.offset.is_finite() || self.start.offset.abs() >= r.lane_width / 2.0 {
            return fail("start offset must lie inside the start lane".into());
        }
        if !self.start.psi.is_finite() || self.start.psi.abs() >= 0.5 {
            return fail("start heading must be within ±0.5 rad".into());
        }
        if self.start.speed.is_some_and(|v| !(v.is_finite() && v >= 0.0)) {
            return fail("start speed must be non-negative".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return fail("noise_sigma must be non-negative".into());
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.lane >= r.num_lanes {
                return fail(format!("obstacle {i}: lane {} does not exist", o.lane));
            }
            if !o.x.is_finite() || !finite_pos(o.length) || !finite_pos(o.width) {
                return fail(format!("obstacle {i}: invalid geometry"));
            }
            if !(o.appear_time >= 0.0 && o.appear_jitter >= 0.0) {
                return fail(format!("obstacle {i}: appear times must be non-negative"));
            }
        }
        for (i, e) in self.navigation.0.iter().enumerate() {
            if !(e.t.is_finite() && e.t >= 0.0) {
                return fail(format!("navigation entry {i}: time must be non-negative"));
            }
        }
        if !(self.speed.cruise_speed.is_finite() && self.speed.cruise_speed >= 0.0)
            || !finite_pos(self.speed.brake_decel)
        {
            return fail("speed rule values must be non-negative".into());
        }
        if !finite_pos(self.safety.min_distance) || !(self.safety.headway >= 0.0) {
            return fail("safety params must be positive".into());
        }
        let v = &self.vehicle;
        if !finite_pos(v.wheelbase) || !finite_pos(v.length) || !finite_pos(v.width) || !(v.front_overhang >= 0.0) {
            return fail("vehicle dimensions must be positive".into());
        }
        if !finite_pos(self.planner.boundary_ratio) || !finite_pos(self.planner.boundary_tolerance) {
            return fail("planner params must be positive".into());
        }
        self.teacher
            .validate()
            .map_err(|e| ScenarioError::ConfigInvalid(e.into()))?;
        for slot in crate::percept::CameraSlot::ALL {
            self.camera
                .rig()
                .camera(slot)
                .validate()
                .map_err(|e| ScenarioError::ConfigInvalid(format!("camera: {e}")))?;
        }
        Ok(())
    }

    /// Number of recorded ticks over the horizon.
    pub fn num_ticks(&self) -> u64 {
        (self.horizon / self.dt).round() as u64
    }

    /// The same scenario reflected about the road axis: lanes are renumbered
    /// right to left, lateral offsets and headings change sign and left/right
    /// guidance swaps.
    pub fn mirrored(&self) -> ScenarioConfig {
        let n = self.road.num_lanes;
        let flip = |c: NavigationCommand| match c {
            NavigationCommand::ChangeToLeft => NavigationCommand::ChangeToRight,
            NavigationCommand::ChangeToRight => NavigationCommand::ChangeToLeft,
            NavigationCommand::StayInLane => NavigationCommand::StayInLane,
        };
        let mut m = self.clone();
        m.start.lane = n - 1 - self.start.lane;
        m.start.offset = -self.start.offset;
        m.start.psi = -self.start.psi;
        for o in &mut m.obstacles {
            o.lane = n - 1 - o.lane;
        }
        for e in &mut m.navigation.0 {
            e.command = flip(e.command);
        }
        m
    }

    fn initial_world(&self) -> WorldState {
        let road = Road {
            num_lanes: self.road.num_lanes,
            lane_width: self.road.lane_width,
            length: self.road.length,
        };
        let obstacles = self
            .obstacles
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let jitter = if o.appear_jitter > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, i as u64, 0x6f62));
                    rng.random_range(0.0..o.appear_jitter)
                } else {
                    0.0
                };
                Obstacle {
                    lane: o.lane,
                    x: o.x,
                    appear_time: o.appear_time + jitter,
                    length: o.length,
                    width: o.width,
                    is_static: true,
                }
            })
            .collect();
        WorldState {
            t: 0.0,
            vehicle: VehicleState {
                x: self.start.x,
                y: road.lane_center(self.start.lane) + self.start.offset,
                psi: self.start.psi,
                v: self.start.speed.unwrap_or(self.speed.cruise_speed),
                steering: 0.0,
            },
            road,
            obstacles,
            body: self.vehicle,
        }
    }
}

/// Two-lane road, vehicle centered in the right lane at `cruise_speed`, one
/// static obstacle in that lane with its rear face at `obstacle_x`. The left
/// lane is free, so guidance `stay_in_lane` leads to a left change.
pub fn obstacle_scenario(lane_width: f64, obstacle_x: f64) -> ScenarioConfig {
    ScenarioConfig {
        name: format!("obstacle_{obstacle_x}m_lane_{lane_width}m"),
        horizon: 30.0,
        road: RoadSpec {
            num_lanes: 2,
            lane_width,
            length: 600.0,
        },
        start: StartSpec {
            lane: 1,
            ..StartSpec::default()
        },
        obstacles: vec![ObstacleSpec {
            lane: 1,
            x: obstacle_x,
            appear_time: 0.0,
            appear_jitter: 0.0,
            length: default_obstacle_length(),
            width: default_obstacle_width(),
        }],
        ..ScenarioConfig::default()
    }
}

/// Everything a steering controller may look at on one tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlContext {
    pub tick: u64,
    pub dt: f64,
    pub map: CognitiveMap,
    pub measurements: LaneMeasurements,
    pub d_o: f64,
    /// `0` when the lane angle is unavailable.
    pub v_a: f64,
    pub speed: f64,
}

pub trait SteeringController {
    /// Road-wheel angle for this tick (rad).
    fn steer(&mut self, ctx: &ControlContext) -> f64;
    /// Called when the simulation restarts.
    fn reset(&mut self);
    /// Short identifier recorded in run manifests.
    fn id(&self) -> String;
}

impl<T: SteeringController + ?Sized> SteeringController for Box<T> {
    fn steer(&mut self, ctx: &ControlContext) -> f64 {
        (**self).steer(ctx)
    }
    fn reset(&mut self) {
        (**self).reset()
    }
    fn id(&self) -> String {
        (**self).id()
    }
}

#[derive(Debug, Clone)]
pub struct TeacherController {
    pub teacher: Teacher,
}

impl TeacherController {
    pub fn new(gains: TeacherGains) -> Self {
        Self {
            teacher: Teacher::new(gains),
        }
    }
}

impl SteeringController for TeacherController {
    fn steer(&mut self, ctx: &ControlContext) -> f64 {
        self.teacher.command(ctx.d_o, ctx.v_a, ctx.speed, ctx.dt)
    }
    fn reset(&mut self) {
        self.teacher.reset(0.0);
    }
    fn id(&self) -> String {
        "teacher".into()
    }
}

/// Recurrent controller over a sliding window of the last `SEQ_LEN` maps.
/// Until the window fills, the earliest map is repeated at the front.
#[derive(Debug, Clone)]
pub struct LstmController {
    params: LstmParams,
    norm: Normalization,
    window: VecDeque<FlatMap>,
    id: String,
}

impl LstmController {
    pub fn new(params: LstmParams, norm: Normalization, id: impl Into<String>) -> Self {
        Self {
            params,
            norm,
            window: VecDeque::with_capacity(SEQ_LEN),
            id: id.into(),
        }
    }

    /// Pads `history` (oldest first) to exactly `SEQ_LEN` maps.
    pub fn padded_window(history: &[FlatMap]) -> Vec<FlatMap> {
        let tail = &history[history.len().saturating_sub(SEQ_LEN)..];
        let mut out = vec![tail[0]; SEQ_LEN - tail.len()];
        out.extend_from_slice(tail);
        out
    }
}

impl SteeringController for LstmController {
    fn steer(&mut self, ctx: &ControlContext) -> f64 {
        if self.window.len() == SEQ_LEN {
            self.window.pop_front();
        }
        self.window.push_back(flatten(&ctx.map, &self.norm));
        let seq = Self::padded_window(self.window.make_contiguous());
        let s = forward(&self.params, &seq).expect("window has SEQ_LEN maps");
        s.clamp(-STEER_SATURATION, STEER_SATURATION)
    }
    fn reset(&mut self) {
        self.window.clear();
    }
    fn id(&self) -> String {
        self.id.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TickEvent {
    Navigation {
        command: NavigationCommand,
        live: bool,
    },
    Intention {
        from: DrivingIntention,
        to: DrivingIntention,
    },
    Plan {
        event: PlanEvent,
    },
    Collision {
        obstacle: usize,
    },
    OffRoad,
    EndOfRoad,
}

impl TickEvent {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            TickEvent::Collision { .. } | TickEvent::OffRoad | TickEvent::EndOfRoad
        )
    }

    /// Compact label used in the trajectory CSV.
    pub fn label(&self) -> String {
        match self {
            TickEvent::Navigation { command, live: false } => format!("navi:{command}"),
            TickEvent::Navigation { command, live: true } => format!("navi_live:{command}"),
            TickEvent::Intention { to, .. } => format!("intention:{to}"),
            TickEvent::Plan { event } => match event {
                PlanEvent::ManeuverStarted => "maneuver_started".into(),
                PlanEvent::ReachedBoundary => "reached_boundary".into(),
                PlanEvent::ManeuverCompleted => "maneuver_completed".into(),
                PlanEvent::MissingLane => "missing_lane".into(),
            },
            TickEvent::Collision { obstacle } => format!("collision:{obstacle}"),
            TickEvent::OffRoad => "off_road".into(),
            TickEvent::EndOfRoad => "end_of_road".into(),
        }
    }
}

/// One recorded tick: the state at `t` and the commands issued from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tick {
    pub index: u64,
    pub t: f64,
    pub world: WorldState,
    pub map: CognitiveMap,
    pub measurements: LaneMeasurements,
    pub navigation: NavigationCommand,
    pub intention: DrivingIntention,
    pub phase: ManeuverPhase,
    pub direction: Direction,
    pub d_o: f64,
    pub steering: f64,
    pub accel: f64,
    /// Lane whose centerline the vehicle is steering toward.
    pub target_lane: Option<usize>,
    pub events: Vec<TickEvent>,
}

impl Tick {
    pub fn event_label(&self) -> String {
        self.events.iter().map(TickEvent::label).collect::<Vec<_>>().join(";")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub road: Road,
    pub ticks: Vec<Tick>,
}

impl Trajectory {
    pub fn collided(&self) -> bool {
        self.events().any(|e| matches!(e, TickEvent::Collision { .. }))
    }

    pub fn changes_completed(&self) -> usize {
        self.events()
            .filter(|e| {
                matches!(
                    e,
                    TickEvent::Plan {
                        event: PlanEvent::ManeuverCompleted
                    }
                )
            })
            .count()
    }

    pub fn events(&self) -> impl Iterator<Item = &TickEvent> {
        self.ticks.iter().flat_map(|t| t.events.iter())
    }

    pub fn last_world(&self) -> Option<&WorldState> {
        self.ticks.last().map(|t| &t.world)
    }
}

/// Stepwise closed loop. Commands between ticks: [`Simulation::set_navigation`],
/// [`Simulation::set_cruise_speed`] and [`Simulation::reset`].
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: ScenarioConfig,
    rig: CameraRig,
    perception: OraclePerception,
    world: WorldState,
    tick: u64,
    maneuver: ManeuverState,
    navigation: NavigationCommand,
    next_entry: usize,
    live_override: bool,
    pending_live: bool,
    last_intention: DrivingIntention,
    prev_steering: f64,
    cruise_speed: f64,
    target_lane: Option<usize>,
    finished: bool,
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, ScenarioError> {
        cfg.validate()?;
        let mut navigation = cfg.navigation.clone();
        navigation.0.sort_by(|a, b| a.t.total_cmp(&b.t));
        let cfg = ScenarioConfig { navigation, ..cfg };
        let world = cfg.initial_world();
        Ok(Self {
            rig: cfg.camera.rig(),
            perception: OraclePerception {
                noise_sigma: cfg.noise_sigma,
                seed: cfg.seed,
            },
            target_lane: world.road.lane_of(world.vehicle.y),
            cruise_speed: cfg.speed.cruise_speed,
            world,
            cfg,
            tick: 0,
            maneuver: ManeuverState::LANEKEEP,
            navigation: NavigationCommand::StayInLane,
            next_entry: 0,
            live_override: false,
            pending_live: false,
            last_intention: DrivingIntention::StayInLane,
            prev_steering: 0.0,
            finished: false,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn rig(&self) -> &CameraRig {
        &self.rig
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.dt
    }

    pub fn navigation(&self) -> NavigationCommand {
        self.navigation
    }

    pub fn maneuver(&self) -> ManeuverState {
        self.maneuver
    }

    pub fn cruise_speed(&self) -> f64 {
        self.cruise_speed
    }

    /// True after a terminal event or once the horizon is reached.
    pub fn is_finished(&self) -> bool {
        self.finished || self.tick >= self.cfg.num_ticks()
    }

    /// Live guidance. From now on the scripted schedule is ignored.
    pub fn set_navigation(&mut self, command: NavigationCommand) {
        self.navigation = command;
        self.live_override = true;
        self.pending_live = true;
    }

    pub fn set_cruise_speed(&mut self, speed: f64) -> Result<(), ScenarioError> {
        if !(speed.is_finite() && speed >= 0.0) {
            return Err(ScenarioError::ConfigInvalid(format!(
                "speed must be non-negative, got {speed}"
            )));
        }
        self.cruise_speed = speed;
        Ok(())
    }

    /// Restores the initial state; live overrides are dropped.
    pub fn reset(&mut self) {
        *self = Self::new(self.cfg.clone()).expect("config was validated");
    }

    /// Advances one tick and returns its record, or `None` when finished.
    pub fn step(&mut self, controller: &mut dyn SteeringController) -> Option<Tick> {
        if self.is_finished() {
            return None;
        }
        let dt = self.cfg.dt;
        let t = self.time();
        self.world.t = t;
        let mut events = Vec::new();

        if self.pending_live {
            self.pending_live = false;
            events.push(TickEvent::Navigation {
                command: self.navigation,
                live: true,
            });
        }
        while let Some(e) = self.cfg.navigation.0.get(self.next_entry) {
            if e.t > t + 1e-9 {
                break;
            }
            self.next_entry += 1;
            if !self.live_override {
                self.navigation = e.command;
                events.push(TickEvent::Navigation {
                    command: e.command,
                    live: false,
                });
            }
        }

        let [xl, xm, xr] = perceive_all(&mut self.perception, &self.world, &self.rig, self.tick);
        let m = measurements_from(&xm, &xl, &xr, &self.rig);
        let speed = self.world.vehicle.v;
        let safety = self.cfg.safety.distance(speed);
        let planned_with = self
            .maneuver
            .latched_intention()
            .unwrap_or_else(|| derive_intention(self.navigation, m.o_c, m.o_l, m.o_r, safety));
        let out = plan(&self.maneuver, planned_with, &m, &self.cfg.planner);
        if let Some(event) = out.event {
            events.push(TickEvent::Plan { event });
        }
        let lane_now = self.world.road.lane_of(self.world.vehicle.y);
        if out.event == Some(PlanEvent::ManeuverStarted) {
            self.target_lane = match (lane_now, out.next.direction) {
                (Some(l), Direction::Left) => l.checked_sub(1),
                (Some(l), Direction::Right) => Some(l + 1).filter(|&r| r < self.world.road.num_lanes),
                (l, _) => l,
            };
        } else if !out.next.is_changing() {
            self.target_lane = lane_now;
        }
        let intention = if out.completed {
            if self.navigation.is_lane_change() {
                self.navigation = NavigationCommand::StayInLane;
            }
            DrivingIntention::StayInLane
        } else {
            planned_with
        };
        if intention != self.last_intention {
            events.push(TickEvent::Intention {
                from: self.last_intention,
                to: intention,
            });
            self.last_intention = intention;
        }
        self.maneuver = out.next;

        let vstate = VehicleStateRecord {
            speed,
            yaw_rate: speed / self.world.body.wheelbase * self.world.vehicle.steering.tan(),
            prev_steering: self.prev_steering,
        };
        let map = build_map(xm, xl, xr, intention, vstate, out.d_o);
        let ctx = ControlContext {
            tick: self.tick,
            dt,
            map,
            measurements: m,
            d_o: out.d_o,
            v_a: m.v_a.unwrap_or(0.0),
            speed,
        };
        let limit = self.cfg.teacher.steer_limit;
        let steering = controller.steer(&ctx).clamp(-limit, limit);
        let rule = SpeedRule {
            cruise_speed: self.cruise_speed,
            ..self.cfg.speed
        };
        let accel = speed_command(&rule, &self.cfg.teacher, intention, speed);

        let record_world = self.world.clone();
        self.world = step(&self.world, steering, accel, dt);
        self.tick += 1;
        self.world.t = self.time();
        self.prev_steering = steering;

        if let Some(obstacle) = self.world.collision() {
            events.push(TickEvent::Collision { obstacle });
        }
        if !self.world.on_road() {
            events.push(TickEvent::OffRoad);
        }
        if self.world.vehicle.x + self.world.body.front_overhang > self.world.road.length {
            events.push(TickEvent::EndOfRoad);
        }
        if events.iter().any(TickEvent::is_terminal) {
            self.finished = true;
        }

        Some(Tick {
            index: self.tick - 1,
            t,
            world: record_world,
            map,
            measurements: m,
            navigation: self.navigation,
            intention,
            phase: out.next.phase,
            direction: out.next.direction,
            d_o: out.d_o,
            steering,
            accel,
            target_lane: self.target_lane,
            events,
        })
    }
}

/// Runs a scenario to its horizon or first terminal event.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    controller: &mut dyn SteeringController,
) -> Result<Trajectory, ScenarioError> {
    let mut sim = Simulation::new(cfg.clone())?;
    controller.reset();
    let mut ticks = Vec::with_capacity(sim.config().num_ticks() as usize);
    while let Some(t) = sim.step(controller) {
        ticks.push(t);
    }
    Ok(Trajectory {
        dt: cfg.dt,
        road: sim.world().road,
        ticks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn teacher(cfg: &ScenarioConfig) -> TeacherController {
        TeacherController::new(cfg.teacher)
    }

    fn two_lane(obstacle_x: f64) -> ScenarioConfig {
        ScenarioConfig {
            road: RoadSpec {
                num_lanes: 2,
                lane_width: 3.5,
                length: 600.0,
            },
            start: StartSpec {
                lane: 1,
                ..StartSpec::default()
            },
            obstacles: vec![ObstacleSpec {
                lane: 1,
                x: obstacle_x,
                appear_time: 0.0,
                appear_jitter: 0.0,
                length: 4.5,
                width: 1.8,
            }],
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn ticks_are_evenly_spaced() {
        let cfg = ScenarioConfig::default();
        let traj = run_scenario(&cfg, &mut teacher(&cfg)).unwrap();
        assert_eq!(traj.ticks.len(), 600);
        for (k, t) in traj.ticks.iter().enumerate() {
            assert_eq!(t.t, k as f64 * cfg.dt);
            assert_eq!(t.index, k as u64);
        }
    }

    #[test]
    fn centered_start_holds_the_lane() {
        let cfg = ScenarioConfig {
            start: StartSpec {
                offset: 0.4,
                ..StartSpec::default()
            },
            ..ScenarioConfig::default()
        };
        let traj = run_scenario(&cfg, &mut teacher(&cfg)).unwrap();
        let center = traj.road.lane_center(1);
        for t in &traj.ticks[300..] {
            assert!((t.world.vehicle.y - center).abs() < 0.05, "{}", t.world.vehicle.y);
        }
        assert!(!traj.collided());
    }

    #[test]
    fn obstacle_triggers_left_change() {
        let cfg = two_lane(100.0);
        let traj = run_scenario(&cfg, &mut teacher(&cfg)).unwrap();
        assert!(!traj.collided());
        assert_eq!(traj.changes_completed(), 1);
        let first = traj
            .ticks
            .iter()
            .find(|t| t.intention == DrivingIntention::ChangeToLeft)
            .unwrap();
        assert!(first.measurements.o_c < cfg.safety.distance(first.world.vehicle.v));
        let end = traj.last_world().unwrap();
        assert!((end.vehicle.y - end.road.lane_center(0)).abs() < 0.2);
    }

    #[test]
    fn blocked_lanes_brake_to_stop() {
        let mut cfg = two_lane(100.0);
        cfg.obstacles.push(ObstacleSpec {
            lane: 0,
            ..cfg.obstacles[0]
        });
        let traj = run_scenario(&cfg, &mut teacher(&cfg)).unwrap();
        assert!(!traj.collided());
        let end = traj.last_world().unwrap();
        assert_eq!(end.vehicle.v, 0.0);
        assert!(end.vehicle.x + end.body.front_overhang < 100.0);
        assert!(traj
            .ticks
            .iter()
            .any(|t| t.intention == DrivingIntention::BrakeAndStayInLane));
    }

    #[test]
    fn scheduled_change_is_consumed_once() {
        let cfg = ScenarioConfig {
            navigation: NaviSchedule(vec![NaviEntry {
                t: 2.0,
                command: NavigationCommand::ChangeToRight,
            }]),
            ..ScenarioConfig::default()
        };
        let traj = run_scenario(&cfg, &mut teacher(&cfg)).unwrap();
        assert_eq!(traj.changes_completed(), 1);
        let end = traj.last_world().unwrap();
        assert!((end.vehicle.y - end.road.lane_center(2)).abs() < 0.2);
        assert_eq!(traj.ticks.last().unwrap().navigation, NavigationCommand::StayInLane);
    }

    #[test]
    fn live_navigation_overrides_schedule() {
        let cfg = ScenarioConfig {
            navigation: NaviSchedule(vec![NaviEntry {
                t: 1.0,
                command: NavigationCommand::ChangeToRight,
            }]),
            ..ScenarioConfig::default()
        };
        let mut sim = Simulation::new(cfg.clone()).unwrap();
        let mut c = teacher(&cfg);
        sim.step(&mut c);
        sim.set_navigation(NavigationCommand::ChangeToLeft);
        let tick = sim.step(&mut c).unwrap();
        assert_eq!(tick.navigation, NavigationCommand::ChangeToLeft);
        assert_eq!(tick.intention, DrivingIntention::ChangeToLeft);
        while let Some(t) = sim.step(&mut c) {
            assert!(!t
                .events
                .iter()
                .any(|e| matches!(e, TickEvent::Navigation { live: false, .. })));
        }
        assert!((sim.world().vehicle.y - sim.world().road.lane_center(0)).abs() < 0.2);
    }

    #[test]
    fn reset_restores_initial_state() {
        let cfg = two_lane(80.0);
        let mut sim = Simulation::new(cfg.clone()).unwrap();
        let mut c = teacher(&cfg);
        let first = sim.step(&mut c).unwrap();
        for _ in 0..50 {
            sim.step(&mut c);
        }
        sim.reset();
        c.reset();
        assert_eq!(sim.tick_index(), 0);
        assert_eq!(sim.step(&mut c).unwrap(), first);
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            ScenarioConfig {
                dt: 0.2,
                ..ScenarioConfig::default()
            },
            ScenarioConfig {
                road: RoadSpec {
                    lane_width: 2.4,
                    ..RoadSpec::default()
                },
                ..ScenarioConfig::default()
            },
            ScenarioConfig {
                schema_version: 9,
                ..ScenarioConfig::default()
            },
            ScenarioConfig {
                start: StartSpec {
                    lane: 3,
                    ..StartSpec::default()
                },
                ..ScenarioConfig::default()
            },
        ];
        for cfg in bad {
            assert!(matches!(Simulation::new(cfg), Err(ScenarioError::ConfigInvalid(_))));
        }
    }

    #[test]
    fn padded_window_repeats_first_map() {
        let a = FlatMap([1.0; 23]);
        let b = FlatMap([2.0; 23]);
        let w = LstmController::padded_window(&[a, b]);
        assert_eq!(w.len(), SEQ_LEN);
        assert_eq!(w[0], a);
        assert_eq!(w[SEQ_LEN - 2], a);
        assert_eq!(w[SEQ_LEN - 1], b);
    }
}
