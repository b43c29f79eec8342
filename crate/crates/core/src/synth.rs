//! Planar kinematic body model producing exactly paired pixel poses and IMU
//! signals.
//!
//! World coordinates are metres with y pointing up. Every segment carries an
//! absolute angle trajectory θ(t); its direction is `u(θ) = (sin θ, -cos θ)`
//! (θ = 0 hangs straight down) and its normal `p(θ) = (cos θ, sin θ)`. A sensor
//! strapped to a segment has its x axis along `u` and y axis along `p`, so
//! accelerations and angular rates follow in closed form from the sinusoids.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imu_dsp::{Channel, ImuRecording};
use crate::pose_ingest::{
    grid_len, ingest_primary_subject, Keypoint, PersonJoints, Point, PoseSequence, RawKeypointFrame,
    TrackingConfig, POSE_RATE,
};
use crate::skeleton::{Joint, Placement, NUM_JOINTS};

pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    /// Radians.
    pub amplitude: f64,
    /// Hz.
    pub frequency: f64,
    pub phase: f64,
}

/// `θ(t) = mean + rate·t + Σ a·sin(2π f t + φ)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AngleTrajectory {
    pub mean: f64,
    #[serde(default)]
    pub rate: f64,
    #[serde(default)]
    pub sinusoids: Vec<Sinusoid>,
}

impl AngleTrajectory {
    pub fn constant(mean: f64) -> Self {
        AngleTrajectory {
            mean,
            ..Default::default()
        }
    }

    /// Angle, angular rate and angular acceleration at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let mut th = self.mean + self.rate * t;
        let mut d1 = self.rate;
        let mut d2 = 0.0;
        for s in &self.sinusoids {
            let w = TAU * s.frequency;
            let arg = w * t + s.phase;
            let (sin, cos) = arg.sin_cos();
            th += s.amplitude * sin;
            d1 += s.amplitude * w * cos;
            d2 -= s.amplitude * w * w * sin;
        }
        (th, d1, d2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyDims {
    pub torso: f64,
    pub shoulder_half: f64,
    pub hip_half: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shin: f64,
    pub head: f64,
}

impl Default for BodyDims {
    fn default() -> Self {
        BodyDims {
            torso: 0.52,
            shoulder_half: 0.19,
            hip_half: 0.10,
            upper_arm: 0.30,
            forearm: 0.27,
            thigh: 0.44,
            shin: 0.42,
            head: 0.22,
        }
    }
}

/// Projection `pixel = (ox + s·X, oy - s·Y)` with `s = ppm·(1 + zoom_rate·t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub pixels_per_metre: f64,
    pub offset: Point,
    #[serde(default)]
    pub zoom_rate: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            pixels_per_metre: 300.0,
            offset: Point::new(960.0, 700.0),
            zoom_rate: 0.0,
        }
    }
}

impl Camera {
    pub fn project(&self, p: Point, t: f64) -> Point {
        let s = self.pixels_per_metre * (1.0 + self.zoom_rate * t);
        Point::new(self.offset.x + s * p.x, self.offset.y - s * p.y)
    }
}

/// Rigid segments with an angle trajectory each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Torso,
    RUpperArm,
    RForearm,
    LUpperArm,
    LForearm,
    RThigh,
    RShin,
    LThigh,
    LShin,
}

impl Segment {
    pub const ALL: [Segment; 9] = [
        Segment::Torso,
        Segment::RUpperArm,
        Segment::RForearm,
        Segment::LUpperArm,
        Segment::LForearm,
        Segment::RThigh,
        Segment::RShin,
        Segment::LThigh,
        Segment::LShin,
    ];

    fn index(self) -> usize {
        self as usize
    }

    /// Segment carrying the sensor of a placement.
    pub fn of(placement: Placement) -> Segment {
        match placement {
            Placement::LeftWrist => Segment::LForearm,
            Placement::RightWrist => Segment::RForearm,
            Placement::LeftCalf => Segment::LShin,
            Placement::RightCalf => Segment::RShin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicScene {
    pub body: BodyDims,
    /// Static MidHip position in metres.
    pub hip: Point,
    /// Indexed by [`Segment`].
    pub angles: Vec<AngleTrajectory>,
    pub camera: Camera,
    pub gravity: f64,
    pub duration: f64,
    pub class: Option<usize>,
}

impl KinematicScene {
    /// Everything at rest, arms and legs hanging straight down.
    pub fn still(duration: f64) -> Self {
        KinematicScene {
            body: BodyDims::default(),
            hip: Point::new(0.0, 0.0),
            angles: vec![AngleTrajectory::default(); Segment::ALL.len()],
            camera: Camera::default(),
            gravity: GRAVITY,
            duration,
            class: None,
        }
    }

    pub fn angle(&self, s: Segment) -> &AngleTrajectory {
        &self.angles[s.index()]
    }

    pub fn angle_mut(&mut self, s: Segment) -> &mut AngleTrajectory {
        &mut self.angles[s.index()]
    }

    /// Number of 50 Hz samples covering the scene.
    pub fn sample_count(&self) -> usize {
        grid_len(self.duration, POSE_RATE)
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles.len() != Segment::ALL.len() {
            return Err(Error::invalid(format!(
                "scene needs {} angle trajectories, got {}",
                Segment::ALL.len(),
                self.angles.len()
            )));
        }
        if !(self.camera.pixels_per_metre > 0.0) || !(self.duration > 0.0) {
            return Err(Error::invalid("pixels per metre and duration must be positive"));
        }
        for a in &self.angles {
            if a.sinusoids.iter().any(|s| !(s.frequency >= 0.0 && s.frequency < 8.0)) {
                return Err(Error::invalid("scene frequencies must lie in [0, 8) Hz"));
            }
        }
        Ok(())
    }
}

fn u(th: f64) -> Point {
    Point::new(th.sin(), -th.cos())
}

fn p(th: f64) -> Point {
    Point::new(th.cos(), th.sin())
}

/// Position, velocity and acceleration of a point.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Motion {
    pos: Point,
    vel: Point,
    acc: Point,
}

impl Motion {
    fn fixed(pos: Point) -> Self {
        Motion {
            pos,
            vel: Point::new(0.0, 0.0),
            acc: Point::new(0.0, 0.0),
        }
    }

    /// `self + c·u(θ)` for a trajectory state `(θ, θ', θ'')`.
    fn along(self, c: f64, (th, d1, d2): (f64, f64, f64)) -> Motion {
        let (uu, pp) = (u(th), p(th));
        // u' = θ' p, u'' = θ'' p - θ'^2 u
        Motion {
            pos: Point::new(self.pos.x + c * uu.x, self.pos.y + c * uu.y),
            vel: Point::new(self.vel.x + c * d1 * pp.x, self.vel.y + c * d1 * pp.y),
            acc: Point::new(
                self.acc.x + c * (d2 * pp.x - d1 * d1 * uu.x),
                self.acc.y + c * (d2 * pp.y - d1 * d1 * uu.y),
            ),
        }
    }

    /// `self + c·p(θ)`.
    fn across(self, c: f64, (th, d1, d2): (f64, f64, f64)) -> Motion {
        let (uu, pp) = (u(th), p(th));
        // p' = -θ' u, p'' = -θ'' u - θ'^2 p
        Motion {
            pos: Point::new(self.pos.x + c * pp.x, self.pos.y + c * pp.y),
            vel: Point::new(self.vel.x - c * d1 * uu.x, self.vel.y - c * d1 * uu.y),
            acc: Point::new(
                self.acc.x - c * (d2 * uu.x + d1 * d1 * pp.x),
                self.acc.y - c * (d2 * uu.y + d1 * d1 * pp.y),
            ),
        }
    }
}

struct Skeleton {
    neck: Motion,
    r_shoulder: Motion,
    l_shoulder: Motion,
    r_elbow: Motion,
    l_elbow: Motion,
    r_wrist: Motion,
    l_wrist: Motion,
    r_hip: Motion,
    l_hip: Motion,
    r_knee: Motion,
    l_knee: Motion,
    r_ankle: Motion,
    l_ankle: Motion,
    r_calf: Motion,
    l_calf: Motion,
}

fn skeleton(scene: &KinematicScene, t: f64) -> Skeleton {
    let b = &scene.body;
    let st = |s: Segment| scene.angle(s).eval(t);
    let torso = st(Segment::Torso);
    let hip = Motion::fixed(scene.hip);
    let neck = hip.along(-b.torso, torso);
    let r_shoulder = neck.across(-b.shoulder_half, torso);
    let l_shoulder = neck.across(b.shoulder_half, torso);
    let r_elbow = r_shoulder.along(b.upper_arm, st(Segment::RUpperArm));
    let l_elbow = l_shoulder.along(b.upper_arm, st(Segment::LUpperArm));
    let r_wrist = r_elbow.along(b.forearm, st(Segment::RForearm));
    let l_wrist = l_elbow.along(b.forearm, st(Segment::LForearm));
    let r_hip = Motion::fixed(Point::new(scene.hip.x - b.hip_half, scene.hip.y));
    let l_hip = Motion::fixed(Point::new(scene.hip.x + b.hip_half, scene.hip.y));
    let r_knee = r_hip.along(b.thigh, st(Segment::RThigh));
    let l_knee = l_hip.along(b.thigh, st(Segment::LThigh));
    let r_ankle = r_knee.along(b.shin, st(Segment::RShin));
    let l_ankle = l_knee.along(b.shin, st(Segment::LShin));
    let r_calf = r_knee.along(0.5 * b.shin, st(Segment::RShin));
    let l_calf = l_knee.along(0.5 * b.shin, st(Segment::LShin));
    Skeleton {
        neck,
        r_shoulder,
        l_shoulder,
        r_elbow,
        l_elbow,
        r_wrist,
        l_wrist,
        r_hip,
        l_hip,
        r_knee,
        l_knee,
        r_ankle,
        l_ankle,
        r_calf,
        l_calf,
    }
}

/// World positions (metres) of all 25 body joints at `t`.
pub fn world_joints(scene: &KinematicScene, t: f64) -> [Point; NUM_JOINTS] {
    use Joint::*;
    let s = skeleton(scene, t);
    let b = &scene.body;
    let (phi, _, _) = scene.angle(Segment::Torso).eval(t);
    let up = Point::new(-u(phi).x, -u(phi).y);
    let side = p(phi);
    let off = |base: Point, a: f64, c: f64| Point::new(base.x + a * up.x + c * side.x, base.y + a * up.y + c * side.y);
    let nose = off(s.neck.pos, b.head, 0.0);
    let foot = |ankle: Point, dir: f64| {
        [
            Point::new(ankle.x + dir * 0.09, ankle.y - 0.06),
            Point::new(ankle.x + dir * 0.12, ankle.y - 0.05),
            Point::new(ankle.x - dir * 0.01, ankle.y - 0.07),
        ]
    };
    let [r_big, r_small, r_heel] = foot(s.r_ankle.pos, -1.0);
    let [l_big, l_small, l_heel] = foot(s.l_ankle.pos, 1.0);

    let mut out = [Point::new(0.0, 0.0); NUM_JOINTS];
    let mut set = |j: Joint, v: Point| out[j.index()] = v;
    set(Nose, nose);
    set(Neck, s.neck.pos);
    set(RShoulder, s.r_shoulder.pos);
    set(RElbow, s.r_elbow.pos);
    set(RWrist, s.r_wrist.pos);
    set(LShoulder, s.l_shoulder.pos);
    set(LElbow, s.l_elbow.pos);
    set(LWrist, s.l_wrist.pos);
    set(MidHip, scene.hip);
    set(RHip, s.r_hip.pos);
    set(RKnee, s.r_knee.pos);
    set(RAnkle, s.r_ankle.pos);
    set(LHip, s.l_hip.pos);
    set(LKnee, s.l_knee.pos);
    set(LAnkle, s.l_ankle.pos);
    set(REye, off(nose, 0.03, -0.03));
    set(LEye, off(nose, 0.03, 0.03));
    set(REar, off(nose, 0.01, -0.07));
    set(LEar, off(nose, 0.01, 0.07));
    set(LBigToe, l_big);
    set(LSmallToe, l_small);
    set(LHeel, l_heel);
    set(RBigToe, r_big);
    set(RSmallToe, r_small);
    set(RHeel, r_heel);
    out
}

/// Sensor state on a placement's segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorState {
    pub position: Point,
    pub acceleration: Point,
    pub angle: f64,
    pub angular_rate: f64,
}

/// The wrist sensor sits on the wrist joint, the calf sensor halfway down
/// the shin.
pub fn sensor_state(scene: &KinematicScene, placement: Placement, t: f64) -> SensorState {
    let s = skeleton(scene, t);
    let m = match placement {
        Placement::LeftWrist => s.l_wrist,
        Placement::RightWrist => s.r_wrist,
        Placement::LeftCalf => s.l_calf,
        Placement::RightCalf => s.r_calf,
    };
    let (angle, angular_rate, _) = scene.angle(Segment::of(placement)).eval(t);
    SensorState {
        position: m.pos,
        acceleration: m.acc,
        angle,
        angular_rate,
    }
}

/// Device-frame readings `[ax, ay, az, gx, gy, gz, lax, lay, laz]`.
pub fn imu_reading(scene: &KinematicScene, placement: Placement, t: f64) -> [f64; 9] {
    let st = sensor_state(scene, placement, t);
    let (uu, pp) = (u(st.angle), p(st.angle));
    let a = st.acceleration;
    // specific force: acceleration minus gravity (0, -g)
    let f = Point::new(a.x, a.y + scene.gravity);
    let dot = |v: Point, w: Point| v.x * w.x + v.y * w.y;
    [
        dot(f, uu),
        dot(f, pp),
        0.0,
        0.0,
        0.0,
        st.angular_rate,
        dot(a, uu),
        dot(a, pp),
        0.0,
    ]
}

/// Exact IMU recording for one placement sampled at `rate` from t = 0.
pub fn analytic_imu(scene: &KinematicScene, placement: Placement, rate: f64) -> Result<ImuRecording> {
    scene.validate()?;
    let n = grid_len(scene.duration, rate);
    let timestamps: Vec<f64> = (0..n).map(|k| k as f64 / rate).collect();
    let mut channels: BTreeMap<Channel, Vec<f64>> = Channel::RAW.iter().map(|&c| (c, Vec::with_capacity(n))).collect();
    for &t in &timestamps {
        let r = imu_reading(scene, placement, t);
        for (c, v) in Channel::RAW.iter().zip(r) {
            channels.get_mut(c).expect("raw channel").push(v);
        }
    }
    ImuRecording::new(placement, timestamps, channels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderNoise {
    /// Standard deviation of additive pixel noise.
    pub pixel_sigma: f64,
    /// Probability that a joint is independently missing in a frame.
    pub dropout: f64,
}

impl RenderNoise {
    pub const NONE: RenderNoise = RenderNoise {
        pixel_sigma: 0.0,
        dropout: 0.0,
    };
}

impl Default for RenderNoise {
    fn default() -> Self {
        Self::NONE
    }
}

/// Keypoint frames as a pose estimator would emit them at `fps`.
pub fn render_frames<R: Rng>(
    scene: &KinematicScene,
    fps: f64,
    noise: &RenderNoise,
    rng: &mut R,
) -> Result<Vec<RawKeypointFrame>> {
    scene.validate()?;
    if !(fps > 0.0) || !(0.0..1.0).contains(&noise.dropout) || !(noise.pixel_sigma >= 0.0) {
        return Err(Error::invalid("render needs positive fps, dropout in [0, 1), sigma >= 0"));
    }
    let jitter = Normal::new(0.0, noise.pixel_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let n = grid_len(scene.duration, fps);
    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 / fps;
        let world = world_joints(scene, t);
        let mut person: PersonJoints = [None; NUM_JOINTS];
        for (slot, w) in person.iter_mut().zip(world) {
            // draw both numbers unconditionally so the stream does not depend on the outcome
            let dropped = rng.random::<f64>() < noise.dropout;
            let px = scene.camera.project(w, t);
            let (dx, dy) = if noise.pixel_sigma > 0.0 {
                (jitter.sample(rng), jitter.sample(rng))
            } else {
                (0.0, 0.0)
            };
            if !dropped {
                *slot = Some(Keypoint {
                    x: px.x + dx,
                    y: px.y + dy,
                    confidence: 0.9,
                });
            }
        }
        frames.push(RawKeypointFrame {
            frame_index: k,
            people: vec![person],
        });
    }
    Ok(frames)
}

/// Renders at 50 fps and runs the frames through the ingestion path.
pub fn render_poses<R: Rng>(scene: &KinematicScene, noise: &RenderNoise, rng: &mut R) -> Result<PoseSequence> {
    let frames = render_frames(scene, POSE_RATE, noise, rng)?;
    ingest_primary_subject(&frames, POSE_RATE, 0.0002, &TrackingConfig::default())
}

// ---------------------------------------------------------------------------
// scene generation

/// Four activities with separated rhythm and posture signatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    ArmSwing,
    March,
    Punch,
    JumpingJack,
}

impl Activity {
    pub const ALL: [Activity; 4] = [Activity::ArmSwing, Activity::March, Activity::Punch, Activity::JumpingJack];

    pub fn name(self) -> &'static str {
        match self {
            Activity::ArmSwing => "arm_swing",
            Activity::March => "march",
            Activity::Punch => "punch",
            Activity::JumpingJack => "jumping_jack",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Base rhythm band in Hz.
    pub fn frequency_band(self) -> (f64, f64) {
        match self {
            Activity::ArmSwing => (0.7, 1.0),
            Activity::March => (0.8, 1.1),
            Activity::Punch => (1.6, 2.2),
            Activity::JumpingJack => (0.9, 1.2),
        }
    }
}

/// Bands for unstructured movement: every segment gets independent sinusoids.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenericBands {
    pub components: usize,
    pub amplitude: (f64, f64),
    pub frequency: (f64, f64),
}

impl Default for GenericBands {
    fn default() -> Self {
        GenericBands {
            components: 2,
            amplitude: (0.05, 0.4),
            frequency: (0.2, 2.2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionKind {
    Generic(GenericBands),
    Activity(Activity),
}

/// A simulated person: body proportions, movement style and camera framing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub body: BodyDims,
    pub amplitude_scale: f64,
    pub frequency_scale: f64,
    pub camera: Camera,
}

impl Default for UserProfile {
    fn default() -> Self {
        UserProfile {
            body: BodyDims::default(),
            amplitude_scale: 1.0,
            frequency_scale: 1.0,
            camera: Camera::default(),
        }
    }
}

impl UserProfile {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let body = BodyDims::default();
        let k = rng.random_range(0.9..1.1);
        let mut jitter = || k * rng.random_range(0.96..1.04);
        let body = BodyDims {
            torso: body.torso * jitter(),
            shoulder_half: body.shoulder_half * jitter(),
            hip_half: body.hip_half * jitter(),
            upper_arm: body.upper_arm * jitter(),
            forearm: body.forearm * jitter(),
            thigh: body.thigh * jitter(),
            shin: body.shin * jitter(),
            head: body.head * jitter(),
        };
        UserProfile {
            body,
            amplitude_scale: rng.random_range(0.85..1.15),
            frequency_scale: rng.random_range(0.92..1.08),
            camera: Camera {
                pixels_per_metre: rng.random_range(220.0..380.0),
                offset: Point::new(rng.random_range(800.0..1120.0), rng.random_range(600.0..760.0)),
                zoom_rate: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub motion: MotionKind,
    pub user: UserProfile,
    pub duration: f64,
    /// Upper bound on |zoom rate| drawn per scene (1/s).
    #[serde(default)]
    pub max_zoom_rate: f64,
}

fn band<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn wave(amplitude: f64, frequency: f64, phase: f64) -> Sinusoid {
    Sinusoid {
        amplitude,
        frequency,
        phase,
    }
}

fn swing(mean: f64, amplitude: f64, frequency: f64, phase: f64) -> AngleTrajectory {
    AngleTrajectory {
        mean,
        rate: 0.0,
        sinusoids: vec![wave(amplitude, frequency, phase)],
    }
}

/// Random scene within the bands of `config`.
pub fn generate_scene<R: Rng>(config: &SceneConfig, rng: &mut R) -> Result<KinematicScene> {
    let user = &config.user;
    let mut scene = KinematicScene::still(config.duration);
    scene.body = user.body;
    scene.camera = user.camera;
    if config.max_zoom_rate > 0.0 {
        scene.camera.zoom_rate = rng.random_range(-config.max_zoom_rate..config.max_zoom_rate);
    }
    let a = user.amplitude_scale;
    match config.motion {
        MotionKind::Generic(bands) => {
            for seg in Segment::ALL {
                let (mean, gain) = generic_posture(seg, rng);
                let sinusoids = (0..bands.components)
                    .map(|_| {
                        wave(
                            gain * a * band(rng, bands.amplitude),
                            user.frequency_scale * band(rng, bands.frequency),
                            rng.random_range(0.0..TAU),
                        )
                    })
                    .collect();
                *scene.angle_mut(seg) = AngleTrajectory {
                    mean,
                    rate: 0.0,
                    sinusoids,
                };
            }
        }
        MotionKind::Activity(act) => {
            scene.class = Some(act.index());
            let f0 = user.frequency_scale * band(rng, act.frequency_band());
            let ph = rng.random_range(0.0..TAU);
            activity_scene(&mut scene, act, f0, ph, a, rng);
        }
    }
    scene.validate()?;
    Ok(scene)
}

/// Mean posture and amplitude gain for unstructured motion of one segment.
fn generic_posture<R: Rng>(seg: Segment, rng: &mut R) -> (f64, f64) {
    match seg {
        Segment::Torso => (rng.random_range(-0.05..0.05), 0.15),
        Segment::RUpperArm => (-rng.random_range(0.0..1.6), 1.5),
        Segment::LUpperArm => (rng.random_range(0.0..1.6), 1.5),
        Segment::RForearm => (-rng.random_range(0.0..2.2), 1.8),
        Segment::LForearm => (rng.random_range(0.0..2.2), 1.8),
        Segment::RThigh => (-rng.random_range(0.0..0.25), 0.5),
        Segment::LThigh => (rng.random_range(0.0..0.25), 0.5),
        Segment::RShin => (-rng.random_range(0.0..0.3), 0.8),
        Segment::LShin => (rng.random_range(0.0..0.3), 0.8),
    }
}

fn activity_scene<R: Rng>(scene: &mut KinematicScene, act: Activity, f0: f64, ph: f64, a: f64, rng: &mut R) {
    use Segment::*;
    let mut r = |lo: f64, hi: f64| rng.random_range(lo..hi);
    // small postural sway on the torso in every activity
    *scene.angle_mut(Torso) = swing(0.0, r(0.0, 0.03), r(0.1, 0.4), r(0.0, TAU));
    match act {
        Activity::ArmSwing => {
            let amp = a * r(0.35, 0.6);
            let lag = r(0.2, 0.5);
            *scene.angle_mut(RUpperArm) = swing(-0.15, amp, f0, ph);
            *scene.angle_mut(RForearm) = swing(-0.25, 1.3 * amp, f0, ph - lag);
            *scene.angle_mut(LUpperArm) = swing(0.15, amp, f0, ph + PI);
            *scene.angle_mut(LForearm) = swing(0.25, 1.3 * amp, f0, ph + PI - lag);
            for (seg, sign) in [(RThigh, -1.0), (RShin, -1.0), (LThigh, 1.0), (LShin, 1.0)] {
                *scene.angle_mut(seg) = swing(sign * 0.05, a * r(0.0, 0.03), r(0.2, 0.5), r(0.0, TAU));
            }
        }
        Activity::March => {
            let amp = a * r(0.2, 0.35);
            let knee = r(0.3, 0.6);
            *scene.angle_mut(RThigh) = swing(-0.05, amp, f0, ph);
            *scene.angle_mut(RShin) = swing(-0.05, (1.0 + knee) * amp, f0, ph + 0.3);
            *scene.angle_mut(LThigh) = swing(0.05, amp, f0, ph + PI);
            *scene.angle_mut(LShin) = swing(0.05, (1.0 + knee) * amp, f0, ph + PI + 0.3);
            let arm = a * r(0.1, 0.2);
            *scene.angle_mut(RUpperArm) = swing(-0.1, arm, f0, ph + PI);
            *scene.angle_mut(RForearm) = swing(-0.15, arm, f0, ph + PI - 0.2);
            *scene.angle_mut(LUpperArm) = swing(0.1, arm, f0, ph);
            *scene.angle_mut(LForearm) = swing(0.15, arm, f0, ph - 0.2);
        }
        Activity::Punch => {
            let raise = r(1.1, 1.4);
            let bend = r(1.8, 2.3);
            let amp = a * r(0.45, 0.7);
            *scene.angle_mut(RUpperArm) = swing(-raise, 0.3 * amp, f0, ph);
            *scene.angle_mut(RForearm) = swing(-bend, amp, f0, ph + 0.2);
            *scene.angle_mut(LUpperArm) = swing(raise, 0.3 * amp, f0, ph + PI);
            *scene.angle_mut(LForearm) = swing(bend, amp, f0, ph + PI + 0.2);
            for (seg, sign) in [(RThigh, -1.0), (RShin, -1.0), (LThigh, 1.0), (LShin, 1.0)] {
                *scene.angle_mut(seg) = swing(sign * 0.08, a * r(0.0, 0.04), f0, ph);
            }
        }
        Activity::JumpingJack => {
            let arm = a * r(1.0, 1.3);
            let leg = a * r(0.12, 0.22);
            // the cycle starts with limbs at rest: mean equals the amplitude
            *scene.angle_mut(RUpperArm) = swing(-arm, arm, f0, ph);
            *scene.angle_mut(RForearm) = swing(-1.15 * arm, 1.15 * arm, f0, ph);
            *scene.angle_mut(LUpperArm) = swing(arm, -arm, f0, ph);
            *scene.angle_mut(LForearm) = swing(1.15 * arm, -1.15 * arm, f0, ph);
            *scene.angle_mut(RThigh) = swing(-leg, leg, f0, ph);
            *scene.angle_mut(RShin) = swing(-leg, leg, f0, ph);
            *scene.angle_mut(LThigh) = swing(leg, -leg, f0, ph);
            *scene.angle_mut(LShin) = swing(leg, -leg, f0, ph);
        }
    }
}

/// Poses, exact IMU recordings and per-sample labels of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub scene: KinematicScene,
    pub poses: PoseSequence,
    pub imu: BTreeMap<Placement, ImuRecording>,
    /// One class id per pose sample; empty for unlabelled scenes.
    pub labels: Vec<usize>,
}

pub fn synthesize<R: Rng>(scene: KinematicScene, noise: &RenderNoise, rng: &mut R) -> Result<SynthSample> {
    let poses = render_poses(&scene, noise, rng)?;
    let imu = Placement::ALL
        .iter()
        .map(|&pl| Ok((pl, analytic_imu(&scene, pl, POSE_RATE)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let labels = scene.class.map(|c| vec![c; poses.len()]).unwrap_or_default();
    Ok(SynthSample {
        scene,
        poses,
        imu,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn acc_norm(r: &[f64; 9]) -> f64 {
        (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt()
    }

    #[test]
    fn still_scene_measures_gravity() {
        let scene = KinematicScene::still(2.0);
        for pl in Placement::ALL {
            for k in 0..20 {
                let r = imu_reading(&scene, pl, k as f64 * 0.1);
                assert!((acc_norm(&r) - GRAVITY).abs() < 1e-9);
                assert_eq!(r[5], 0.0);
            }
        }
    }

    #[test]
    fn circular_forearm_has_centripetal_term() {
        // forearm spinning at 1 Hz around a fixed elbow: the wrist moves on a
        // circle of radius r, so |a| = (2π)^2 r and the force has a constant
        // centripetal component along -u plus rotating gravity
        let mut scene = KinematicScene::still(3.0);
        scene.angle_mut(Segment::LForearm).rate = TAU;
        let r = scene.body.forearm;
        for k in 0..50 {
            let t = k as f64 * 0.037;
            let reading = imu_reading(&scene, Placement::LeftWrist, t);
            let lin = (reading[6].powi(2) + reading[7].powi(2)).sqrt();
            assert!((lin - TAU * TAU * r).abs() < 1e-9);
            // along the forearm: -ω²r + g·(u·ŷ) = -ω²r - g cos θ
            let th = TAU * t;
            assert!((reading[0] - (-TAU * TAU * r - GRAVITY * th.cos())).abs() < 1e-9);
            assert!((reading[1] - GRAVITY * th.sin()).abs() < 1e-9);
            assert!((reading[5] - TAU).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_acceleration_matches_finite_differences() {
        // second central difference of positions at 1 kHz
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut motions: Vec<MotionKind> = Activity::ALL.iter().map(|&a| MotionKind::Activity(a)).collect();
        motions.push(MotionKind::Generic(GenericBands {
            components: 2,
            amplitude: (0.05, 0.3),
            frequency: (0.2, 1.5),
        }));
        let h = 1e-3;
        for motion in motions {
            let config = SceneConfig {
                motion,
                user: UserProfile::random(&mut rng),
                duration: 4.0,
                max_zoom_rate: 0.0,
            };
            let scene = generate_scene(&config, &mut rng).unwrap();
            for pl in Placement::ALL {
                for k in 1..40 {
                    let t = k as f64 * 0.09;
                    let at = |t: f64| sensor_state(&scene, pl, t).position;
                    let (a, b, c) = (at(t - h), at(t), at(t + h));
                    let fd = Point::new((a.x - 2.0 * b.x + c.x) / (h * h), (a.y - 2.0 * b.y + c.y) / (h * h));
                    let exact = sensor_state(&scene, pl, t).acceleration;
                    assert!(
                        (fd.x - exact.x).abs() <= 1e-3 && (fd.y - exact.y).abs() <= 1e-3,
                        "{motion:?} {pl} t={t} {fd:?} {exact:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn gyro_norm_is_angular_speed() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let config = SceneConfig {
            motion: MotionKind::Activity(Activity::Punch),
            user: UserProfile::default(),
            duration: 2.0,
            max_zoom_rate: 0.0,
        };
        let scene = generate_scene(&config, &mut rng).unwrap();
        let rec = analytic_imu(&scene, Placement::RightWrist, 50.0).unwrap();
        let g = rec.series(Channel::GyrNorm).unwrap();
        for (i, v) in g.values.iter().enumerate() {
            let (_, d1, _) = scene.angle(Segment::RForearm).eval(i as f64 / 50.0);
            assert!((v - d1.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn seeded_generation_repeats() {
        let config = SceneConfig {
            motion: MotionKind::Activity(Activity::March),
            user: UserProfile::default(),
            duration: 5.0,
            max_zoom_rate: 0.01,
        };
        let a = generate_scene(&config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = generate_scene(&config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn amplitudes_stay_in_band() {
        let bands = GenericBands {
            components: 3,
            amplitude: (0.1, 0.2),
            frequency: (0.5, 1.0),
        };
        let config = SceneConfig {
            motion: MotionKind::Generic(bands),
            user: UserProfile::default(),
            duration: 1.0,
            max_zoom_rate: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let scene = generate_scene(&config, &mut rng).unwrap();
            for seg in Segment::ALL {
                let (_, gain) = generic_posture(seg, &mut ChaCha8Rng::seed_from_u64(0));
                for s in &scene.angle(seg).sinusoids {
                    let raw = s.amplitude / gain;
                    assert!((0.1..=0.2).contains(&raw), "{raw}");
                    assert!((0.5..=1.0).contains(&s.frequency));
                }
            }
        }
    }

    #[test]
    fn noiseless_render_is_exact_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let config = SceneConfig {
            motion: MotionKind::Activity(Activity::JumpingJack),
            user: UserProfile::random(&mut rng),
            duration: 3.0,
            max_zoom_rate: 0.02,
        };
        let scene = generate_scene(&config, &mut rng).unwrap();
        let poses = render_poses(&scene, &RenderNoise::NONE, &mut rng).unwrap();
        assert_eq!(poses.len(), 151);
        for t in [0usize, 17, 150] {
            let world = world_joints(&scene, t as f64 / 50.0);
            for j in Joint::ALL {
                let expect = scene.camera.project(world[j.index()], t as f64 / 50.0);
                let got = poses.joint(t, j);
                assert!((got.x - expect.x).abs() < 1e-9 && (got.y - expect.y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dropout_is_reconstructed_within_pixels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let config = SceneConfig {
            motion: MotionKind::Activity(Activity::ArmSwing),
            user: UserProfile::default(),
            duration: 6.0,
            max_zoom_rate: 0.0,
        };
        let scene = generate_scene(&config, &mut rng).unwrap();
        let clean = render_poses(&scene, &RenderNoise::NONE, &mut rng).unwrap();
        let noise = RenderNoise {
            pixel_sigma: 0.0,
            dropout: 0.05,
        };
        let holes = render_poses(&scene, &noise, &mut rng).unwrap();
        assert_eq!(clean.len(), holes.len());
        let mut worst = 0.0f64;
        for (a, b) in clean.frames().iter().zip(holes.frames()) {
            for (p, q) in a.iter().zip(b) {
                worst = worst.max(p.distance(*q));
            }
        }
        // a one-frame gap at 1 Hz, ~0.5 m radius, 300 px/m stays well under 5 px
        assert!(worst < 5.0, "{worst}");
    }

    #[test]
    fn activity_bands_have_separated_spectral_peaks() {
        // dominant frequency of the right forearm angle: arm swing vs punch
        let peak = |act: Activity, seed: u64| {
            let config = SceneConfig {
                motion: MotionKind::Activity(act),
                user: UserProfile::default(),
                duration: 10.0,
                max_zoom_rate: 0.0,
            };
            let scene = generate_scene(&config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let x: Vec<f64> = (0..500).map(|i| scene.angle(Segment::RForearm).eval(i as f64 / 50.0).0).collect();
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            (1..100)
                .map(|k| {
                    let f = k as f64 * 0.05;
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, v) in x.iter().enumerate() {
                        let arg = TAU * f * i as f64 / 50.0;
                        re += (v - mean) * arg.cos();
                        im += (v - mean) * arg.sin();
                    }
                    (f, re * re + im * im)
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0
        };
        for seed in 0..5 {
            assert!(peak(Activity::ArmSwing, seed) <= 1.05);
            assert!(peak(Activity::Punch, seed) >= 1.55);
        }
    }
}
