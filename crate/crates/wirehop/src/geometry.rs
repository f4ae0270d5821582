//! Wire routing geometry: the length function, its analytic Jacobian, wire
//! velocity mapping and tension-feasibility workspace checks.
//!
//! Wires are modeled as straight lines between a body anchor and a leg anchor.
//! The leg anchor at joint position `q = (roll, pitch, slide)` sits at
//! `Rot_x(roll) · Rot_y(pitch) · (a - slide·ẑ)` in the body frame. Positive
//! tension shortens a wire, so the joint force produced by tensions `f` is
//! `τ = -J_mᵀ f`.

use nalgebra::{Matrix3, SMatrix, Vector3};

use crate::params::{RobotParams, WireVector, WIRE_COUNT};
use crate::qp::{solve_tensions, QpStatus};

/// Muscle Jacobian: ∂(wire length)/∂(joint position), 6×3.
pub type MuscleJacobian = SMatrix<f64, 6, 3>;

/// Straight-line wire geometry derived from the robot's anchor tables.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryModel {
    anchors_body: [Vector3<f64>; WIRE_COUNT],
    anchors_leg: [Vector3<f64>; WIRE_COUNT],
}

fn rot_x(a: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos())
}

fn rot_y(a: f64) -> Matrix3<f64> {
    Matrix3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos())
}

impl GeometryModel {
    pub fn from_params(params: &RobotParams) -> Self {
        GeometryModel {
            anchors_body: params.anchors_body,
            anchors_leg: params.anchors_leg,
        }
    }

    pub fn from_anchors(
        anchors_body: [Vector3<f64>; WIRE_COUNT],
        anchors_leg: [Vector3<f64>; WIRE_COUNT],
    ) -> Self {
        GeometryModel { anchors_body, anchors_leg }
    }

    /// Body-frame position of leg anchor `i` at joint position `q`.
    pub fn leg_anchor_position(&self, q: &Vector3<f64>, i: usize) -> Vector3<f64> {
        let shifted = self.anchors_leg[i] - Vector3::new(0.0, 0.0, q[2]);
        rot_x(q[0]) * (rot_y(q[1]) * shifted)
    }

    /// Jacobian of the body-frame position of a leg-frame point with respect
    /// to the joint coordinates (columns: roll, pitch, slide).
    pub fn leg_point_jacobian(q: &Vector3<f64>, point_leg: &Vector3<f64>) -> Matrix3<f64> {
        let rx = rot_x(q[0]);
        let ry = rot_y(q[1]);
        let shifted = point_leg - Vector3::new(0.0, 0.0, q[2]);
        let p = rx * (ry * shifted);
        let dp_roll = Vector3::x().cross(&p);
        let dp_pitch = rx * Vector3::y().cross(&(ry * shifted));
        let dp_slide = rx * (ry * Vector3::new(0.0, 0.0, -1.0));
        Matrix3::from_columns(&[dp_roll, dp_pitch, dp_slide])
    }

    /// Wire lengths l(q). Lengths are strictly positive for any reachable q;
    /// a degenerate zero-length configuration indicates a broken anchor table.
    pub fn wire_lengths(&self, q: &Vector3<f64>) -> WireVector {
        WireVector::from_fn(|i, _| {
            let l = (self.leg_anchor_position(q, i) - self.anchors_body[i]).norm();
            debug_assert!(l > 0.0, "degenerate wire {i} at q = {q:?}");
            l
        })
    }

    /// Analytic muscle Jacobian J_m(q), row i = ∂l_i/∂q.
    pub fn muscle_jacobian(&self, q: &Vector3<f64>) -> MuscleJacobian {
        let rx = rot_x(q[0]);
        let ry = rot_y(q[1]);
        let x_axis = Vector3::x();
        let y_axis = Vector3::y();
        let slide_dir = rx * (ry * Vector3::new(0.0, 0.0, -1.0));

        let mut jac = MuscleJacobian::zeros();
        for i in 0..WIRE_COUNT {
            let shifted = self.anchors_leg[i] - Vector3::new(0.0, 0.0, q[2]);
            let p = rx * (ry * shifted);
            let diff = p - self.anchors_body[i];
            let len = diff.norm();
            let unit = diff / len;

            let dp_roll = x_axis.cross(&p);
            let dp_pitch = rx * y_axis.cross(&(ry * shifted));
            jac[(i, 0)] = unit.dot(&dp_roll);
            jac[(i, 1)] = unit.dot(&dp_pitch);
            jac[(i, 2)] = unit.dot(&slide_dir);
        }
        jac
    }

    /// Wire velocities l̇ = J_m(q) · q̇.
    pub fn wire_velocities(&self, q: &Vector3<f64>, q_dot: &Vector3<f64>) -> WireVector {
        WireVector(self.muscle_jacobian(q) * q_dot)
    }
}

/// Feasibility of one grid cell of the joint box.
#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub q: Vector3<f64>,
    pub feasible: bool,
    /// Squared tension norm of the solution when feasible.
    pub objective: Option<f64>,
}

/// Result of sweeping the joint box for tension feasibility.
#[derive(Debug, Clone)]
pub struct FeasibilityReport {
    pub cells: Vec<CellReport>,
    pub grid_n: usize,
}

impl FeasibilityReport {
    pub fn infeasible_cells(&self) -> impl Iterator<Item = &CellReport> {
        self.cells.iter().filter(|c| !c.feasible)
    }

    pub fn infeasible_count(&self) -> usize {
        self.infeasible_cells().count()
    }

    pub fn is_fully_feasible(&self) -> bool {
        self.infeasible_count() == 0
    }

    /// Writes the report as CSV (`q_roll,q_pitch,q_slide,feasible,objective`).
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["q_roll", "q_pitch", "q_slide", "feasible", "objective"])?;
        for cell in &self.cells {
            w.write_record([
                cell.q[0].to_string(),
                cell.q[1].to_string(),
                cell.q[2].to_string(),
                cell.feasible.to_string(),
                cell.objective.map_or(String::new(), |o| o.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Joint force that holds the leg in static equilibrium while the planted
/// foot carries the whole robot weight: the stance gravity compensation.
///
/// With the foot pinned and the ground pushing the total weight up through
/// it, the joint-space balance reads `τ + J_cogᵀ(-m_L g ẑ) + J_footᵀ(M g ẑ) = 0`.
/// At q = 0 this reduces to a pure slide force of `m_B · g`.
pub fn gravity_compensation(q: &Vector3<f64>, params: &RobotParams) -> Vector3<f64> {
    let g = params.gravity;
    let z = Vector3::z();
    let j_cog =
        GeometryModel::leg_point_jacobian(q, &Vector3::new(0.0, 0.0, params.leg_cog_height));
    let j_foot = GeometryModel::leg_point_jacobian(q, &Vector3::zeros());
    j_cog.transpose() * (z * (params.leg_mass * g))
        - j_foot.transpose() * (z * (params.total_mass() * g))
}

/// Sweeps a `grid_n`³ lattice of the joint box and reports, per cell, whether
/// the tension QP can realize the stance [`gravity_compensation`] force with
/// tensions inside `[f_min, f_max]`.
pub fn check_workspace(
    geom: &GeometryModel,
    params: &RobotParams,
    grid_n: usize,
) -> FeasibilityReport {
    let axis = |range: [f64; 2], k: usize| {
        if grid_n == 1 {
            0.5 * (range[0] + range[1])
        } else {
            range[0] + (range[1] - range[0]) * k as f64 / (grid_n - 1) as f64
        }
    };

    let mut cells = Vec::with_capacity(grid_n * grid_n * grid_n);
    for i in 0..grid_n {
        for j in 0..grid_n {
            for k in 0..grid_n {
                let q = Vector3::new(
                    axis(params.roll_range, i),
                    axis(params.pitch_range, j),
                    axis(params.slide_range, k),
                );
                let tau = gravity_compensation(&q, params);
                let jac = geom.muscle_jacobian(&q);
                let sol = solve_tensions(&tau, &jac, params.f_min, Some(params.f_max));
                cells.push(CellReport {
                    q,
                    feasible: sol.status == QpStatus::Optimal,
                    objective: (sol.status == QpStatus::Optimal).then_some(sol.objective),
                });
            }
        }
    }
    FeasibilityReport { cells, grid_n }
}
