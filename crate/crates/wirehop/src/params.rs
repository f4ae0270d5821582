//! Physical parameters, shared domain types and config validation.
//!
//! All units are SI; angles are radians. The world frame is Z-up. The body
//! frame sits at the gimbal center, the leg frame at the foot with +Z pointing
//! from the foot toward the gimbal. Joint coordinates are
//! `q = (roll, pitch, slide)`: roll about body X, pitch about body Y, slide =
//! gimbal-to-foot distance.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of wires actuating the leg.
pub const WIRE_COUNT: usize = 6;

/// Indices of the upper wires (anchored high on the leg pipe; these do the
/// pushing during stance).
pub const UPPER_WIRES: std::ops::Range<usize> = 0..3;

/// Indices of the lower wires (anchored near the foot; these retract the leg
/// in flight and go slack first on touchdown).
pub const LOWER_WIRES: std::ops::Range<usize> = 3..6;

/// A 6-dimensional quantity over the wires: lengths (m), velocities (m/s) or
/// tensions (N), depending on context. Tensions must be non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireVector(pub nalgebra::SVector<f64, 6>);

impl WireVector {
    pub fn zeros() -> Self {
        WireVector(nalgebra::SVector::zeros())
    }

    pub fn from_fn(f: impl FnMut(usize, usize) -> f64) -> Self {
        WireVector(nalgebra::SVector::from_fn(f))
    }

    pub fn uniform(v: f64) -> Self {
        WireVector(nalgebra::SVector::repeat(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// True when usable as a tension vector: finite and non-negative.
    pub fn is_tension(&self) -> bool {
        self.0.iter().all(|v| v.is_finite() && *v >= 0.0)
    }
}

impl std::ops::Index<usize> for WireVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl std::ops::IndexMut<usize> for WireVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Joint positions and velocities of the three leg joints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    /// (roll rad, pitch rad, slide m)
    pub q: Vector3<f64>,
    /// (rad/s, rad/s, m/s)
    pub q_dot: Vector3<f64>,
}

impl JointState {
    pub fn new(q: Vector3<f64>, q_dot: Vector3<f64>) -> Self {
        JointState { q, q_dot }
    }

    pub fn at_rest(q: Vector3<f64>) -> Self {
        JointState { q, q_dot: Vector3::zeros() }
    }

    pub fn slide(&self) -> f64 {
        self.q[2]
    }

    pub fn slide_rate(&self) -> f64 {
        self.q_dot[2]
    }
}

/// Full simulation state: floating-base body pose/twist plus joint state.
///
/// `body_rpy` holds (roll, pitch); yaw is fixed at zero. `body_ang_rate`
/// holds the Euler-angle rates matching `body_rpy`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub body_pos: Vector3<f64>,
    pub body_vel: Vector3<f64>,
    pub body_rpy: nalgebra::Vector2<f64>,
    pub body_ang_rate: nalgebra::Vector2<f64>,
    pub joints: JointState,
    pub time: f64,
}

impl SimState {
    pub fn is_finite(&self) -> bool {
        self.body_pos.iter().all(|v| v.is_finite())
            && self.body_vel.iter().all(|v| v.is_finite())
            && self.body_rpy.iter().all(|v| v.is_finite())
            && self.body_ang_rate.iter().all(|v| v.is_finite())
            && self.joints.q.iter().all(|v| v.is_finite())
            && self.joints.q_dot.iter().all(|v| v.is_finite())
    }
}

/// Validated physical parameters of the robot.
///
/// Construct through [`validate_params`] or [`default_params`]; the fields are
/// public for reading but the invariants (six anchor pairs, positive masses,
/// ordered ranges, `f_min < f_max`) are only guaranteed for validated values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    /// Body mass (kg).
    pub body_mass: f64,
    /// Leg mass (kg).
    pub leg_mass: f64,
    /// Body moment of inertia about roll/pitch axes (kg·m²).
    pub body_inertia: f64,
    /// Leg moment of inertia about transverse axes through the leg CoG (kg·m²).
    pub leg_inertia: f64,
    /// Slide joint travel [min, max] (m).
    pub slide_range: [f64; 2],
    /// Roll joint range [min, max] (rad).
    pub roll_range: [f64; 2],
    /// Pitch joint range [min, max] (rad).
    pub pitch_range: [f64; 2],
    /// Minimum wire tension keeping every wire taut (N).
    pub f_min: f64,
    /// Maximum wire tension per wire (N).
    pub f_max: f64,
    /// Maximum wire winding speed (m/s). The motor-side no-load figure is
    /// higher (15 m/s at 70 V); this cap is the loaded wire-side limit used
    /// by the motor model.
    pub wire_speed_max: f64,
    /// Motor-to-winding-pulley reduction.
    pub gear_ratio: f64,
    /// Wire winding pulley radius (m).
    pub pulley_radius: f64,
    /// Gravitational acceleration (m/s²).
    pub gravity: f64,
    /// Wire anchor points on the body, body frame (m).
    pub anchors_body: [Vector3<f64>; WIRE_COUNT],
    /// Wire anchor points on the leg, leg frame (m). The leg frame origin is
    /// the foot, +Z toward the gimbal.
    pub anchors_leg: [Vector3<f64>; WIRE_COUNT],
    /// Height of the leg CoG above the foot, leg frame (m).
    pub leg_cog_height: f64,
    /// Body-fixed landing points that take contact when the robot sits (m).
    pub landing_points: [Vector3<f64>; 4],
}

impl RobotParams {
    /// Total mass of body and leg (kg).
    pub fn total_mass(&self) -> f64 {
        self.body_mass + self.leg_mass
    }

    /// Maximum force available on the slide joint with all three pushing
    /// wires at `f_max`, straight-line approximation (N).
    pub fn max_slide_force(&self) -> f64 {
        3.0 * self.f_max
    }

    /// Net center-of-gravity acceleration when the slide exerts
    /// `max_slide_force` from rest on a grounded foot (m/s²).
    pub fn max_cog_acceleration(&self) -> f64 {
        self.max_slide_force() / self.total_mass() - self.gravity
    }
}

/// Raw robot configuration as parsed from a config file. Every field is
/// optional and falls back to the shipped default geometry and constants.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub body_mass: Option<f64>,
    pub leg_mass: Option<f64>,
    pub body_inertia: Option<f64>,
    pub leg_inertia: Option<f64>,
    pub slide_range: Option<[f64; 2]>,
    pub roll_range: Option<[f64; 2]>,
    pub pitch_range: Option<[f64; 2]>,
    pub f_min: Option<f64>,
    pub f_max: Option<f64>,
    pub wire_speed_max: Option<f64>,
    pub gear_ratio: Option<f64>,
    pub pulley_radius: Option<f64>,
    pub gravity: Option<f64>,
    pub anchors_body: Option<Vec<[f64; 3]>>,
    pub anchors_leg: Option<Vec<[f64; 3]>>,
    pub leg_cog_height: Option<f64>,
    pub landing_points: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("anchor count must be {WIRE_COUNT}, got {0}")]
    AnchorCount(usize),
    #[error("landing point count must be 4, got {0}")]
    LandingPointCount(usize),
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} range is inverted: [{lo}, {hi}]")]
    InvertedRange { name: &'static str, lo: f64, hi: f64 },
    #[error("f_min ({f_min}) must be smaller than f_max ({f_max})")]
    TensionBounds { f_min: f64, f_max: f64 },
    #[error("f_min must be non-negative, got {0}")]
    NegativeMinTension(f64),
    #[error("{name} is not finite")]
    NonFinite { name: &'static str },
}

/// Default body-ring radius for the wire anchors (m). Sized so the leg
/// collars keep clearance from the rings over the whole joint box; smaller
/// rings get grazed at combined roll/pitch extremes.
const BODY_RING_RADIUS: f64 = 0.30;
/// Heights of the upper/lower body anchor rings above the gimbal (m).
const UPPER_RING_HEIGHT: f64 = 0.15;
const LOWER_RING_HEIGHT: f64 = -0.15;
/// Leg-frame heights of the wire collars above the foot (m). At full slide
/// extension the upper collar sits 0.25 m above the gimbal and the lower
/// collar 0.55 m below it.
const UPPER_COLLAR_HEIGHT: f64 = 1.05;
const LOWER_COLLAR_HEIGHT: f64 = 0.25;

fn default_anchors_body() -> [Vector3<f64>; WIRE_COUNT] {
    let ring = |angle_deg: f64, z: f64| {
        let a = angle_deg.to_radians();
        Vector3::new(BODY_RING_RADIUS * a.cos(), BODY_RING_RADIUS * a.sin(), z)
    };
    [
        ring(0.0, UPPER_RING_HEIGHT),
        ring(120.0, UPPER_RING_HEIGHT),
        ring(240.0, UPPER_RING_HEIGHT),
        ring(60.0, LOWER_RING_HEIGHT),
        ring(180.0, LOWER_RING_HEIGHT),
        ring(300.0, LOWER_RING_HEIGHT),
    ]
}

fn default_anchors_leg() -> [Vector3<f64>; WIRE_COUNT] {
    let upper = Vector3::new(0.0, 0.0, UPPER_COLLAR_HEIGHT);
    let lower = Vector3::new(0.0, 0.0, LOWER_COLLAR_HEIGHT);
    [upper, upper, upper, lower, lower, lower]
}

fn default_landing_points() -> [Vector3<f64>; 4] {
    let h = -0.25;
    let r = 0.20;
    [
        Vector3::new(r, r, h),
        Vector3::new(-r, r, h),
        Vector3::new(-r, -r, h),
        Vector3::new(r, -r, h),
    ]
}

fn check_positive(name: &'static str, value: f64) -> Result<f64, ParamError> {
    if !value.is_finite() {
        return Err(ParamError::NonFinite { name });
    }
    if value <= 0.0 {
        return Err(ParamError::NonPositive { name, value });
    }
    Ok(value)
}

fn check_range(name: &'static str, range: [f64; 2]) -> Result<[f64; 2], ParamError> {
    if !range[0].is_finite() || !range[1].is_finite() {
        return Err(ParamError::NonFinite { name });
    }
    if range[0] >= range[1] {
        return Err(ParamError::InvertedRange { name, lo: range[0], hi: range[1] });
    }
    Ok(range)
}

fn convert_points<const N: usize>(
    raw: Option<Vec<[f64; 3]>>,
    default: [Vector3<f64>; N],
    count_err: impl Fn(usize) -> ParamError,
) -> Result<[Vector3<f64>; N], ParamError> {
    match raw {
        None => Ok(default),
        Some(list) => {
            if list.len() != N {
                return Err(count_err(list.len()));
            }
            let mut out = default;
            for (slot, p) in out.iter_mut().zip(&list) {
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(ParamError::NonFinite { name: "anchor point" });
                }
                *slot = Vector3::new(p[0], p[1], p[2]);
            }
            Ok(out)
        }
    }
}

/// Validates a raw config into [`RobotParams`]. Missing fields take the
/// defaults of the shipped robot.
pub fn validate_params(config: &RobotConfig) -> Result<RobotParams, ParamError> {
    let body_mass = check_positive("body_mass", config.body_mass.unwrap_or(9.8))?;
    let leg_mass = check_positive("leg_mass", config.leg_mass.unwrap_or(0.5))?;
    let body_inertia = check_positive("body_inertia", config.body_inertia.unwrap_or(0.225))?;
    let leg_inertia = check_positive("leg_inertia", config.leg_inertia.unwrap_or(0.074))?;
    let slide_range = check_range("slide_range", config.slide_range.unwrap_or([0.0, 0.8]))?;
    let roll_range = check_range("roll_range", config.roll_range.unwrap_or([-0.79, 0.79]))?;
    let pitch_range = check_range("pitch_range", config.pitch_range.unwrap_or([-0.79, 0.79]))?;

    let f_min = config.f_min.unwrap_or(5.0);
    if !f_min.is_finite() {
        return Err(ParamError::NonFinite { name: "f_min" });
    }
    if f_min < 0.0 {
        return Err(ParamError::NegativeMinTension(f_min));
    }
    let f_max = check_positive("f_max", config.f_max.unwrap_or(230.0))?;
    if f_min >= f_max {
        return Err(ParamError::TensionBounds { f_min, f_max });
    }

    let wire_speed_max = check_positive("wire_speed_max", config.wire_speed_max.unwrap_or(10.7))?;
    let gear_ratio = check_positive("gear_ratio", config.gear_ratio.unwrap_or(2.5))?;
    let pulley_radius = check_positive("pulley_radius", config.pulley_radius.unwrap_or(0.010))?;
    let gravity = check_positive("gravity", config.gravity.unwrap_or(9.81))?;
    let leg_cog_height = check_positive("leg_cog_height", config.leg_cog_height.unwrap_or(0.4))?;

    let anchors_body = convert_points(
        config.anchors_body.clone(),
        default_anchors_body(),
        ParamError::AnchorCount,
    )?;
    let anchors_leg = convert_points(
        config.anchors_leg.clone(),
        default_anchors_leg(),
        ParamError::AnchorCount,
    )?;
    let landing_points = convert_points(
        config.landing_points.clone(),
        default_landing_points(),
        ParamError::LandingPointCount,
    )?;

    Ok(RobotParams {
        body_mass,
        leg_mass,
        body_inertia,
        leg_inertia,
        slide_range,
        roll_range,
        pitch_range,
        f_min,
        f_max,
        wire_speed_max,
        gear_ratio,
        pulley_radius,
        gravity,
        anchors_body,
        anchors_leg,
        leg_cog_height,
        landing_points,
    })
}

/// Parameters of the shipped robot.
pub fn default_params() -> RobotParams {
    validate_params(&RobotConfig::default()).expect("default config is valid")
}
