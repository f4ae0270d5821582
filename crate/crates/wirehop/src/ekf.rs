//! Joint state estimation from wire lengths and velocities.
//!
//! The leg joints carry no encoders; an extended Kalman filter estimates
//! `x = [q; q̇] ∈ R⁶` from `z = [l; l̇] ∈ R¹²`. The state transition is
//! constant-velocity, the observation model is `h(x) = [g(q); J_m(q)·q̇]`.
//! After touchdown the lower wires go slack (they shorten quickly while
//! carrying little tension) and their measurements are deweighted for a
//! short window so the slack does not corrupt the joint estimate.

use nalgebra::{SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::GeometryModel;
use crate::params::{JointState, LOWER_WIRES};

pub type StateVector = SVector<f64, 6>;
pub type StateMatrix = SMatrix<f64, 6, 6>;
pub type Measurement = SVector<f64, 12>;
pub type MeasMatrix = SMatrix<f64, 12, 12>;

/// Filter tuning. Defaults are the values validated by the acceptance suite:
/// static convergence within 0.5 s and no divergence through hop impacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EkfConfig {
    /// Process noise on the position block, per step.
    pub q_pos: f64,
    /// Process noise on the velocity block, per step.
    pub q_vel: f64,
    /// Measurement noise on wire lengths (m²).
    pub r_len: f64,
    /// Measurement noise on wire velocities (m²/s²).
    pub r_vel: f64,
    /// Initial state covariance (diagonal).
    pub p_init: f64,
    /// Factor applied to the lower-wire channels after touchdown.
    pub deweight_factor: f64,
    /// How long the deweighting stays active after touchdown (s).
    pub deweight_window: f64,
    /// Step for the finite-difference block of the observation Jacobian.
    pub fd_step: f64,
    /// Condition-number guard on the innovation covariance.
    pub cond_max: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        EkfConfig {
            q_pos: 1e-8,
            q_vel: 1e-4,
            r_len: 1e-6,
            r_vel: 1e-4,
            p_init: 1e-4,
            deweight_factor: 100.0,
            deweight_window: 0.1,
            fd_step: 1e-6,
            cond_max: 1e12,
        }
    }
}

/// Whether a measurement was folded in or rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// Innovation covariance numerically singular; update skipped.
    SkippedIllConditioned,
}

/// Extended Kalman filter over the three leg joints.
#[derive(Debug, Clone)]
pub struct JointEkf {
    /// State estimate [q; q̇].
    pub x: StateVector,
    /// State covariance, kept symmetric PSD.
    pub p: StateMatrix,
    /// Process noise added per prediction.
    pub process_noise: StateMatrix,
    /// Base measurement noise (without touchdown deweighting).
    pub meas_noise: MeasMatrix,
    /// Seconds since the last touchdown event, if one was signalled.
    pub t_since_touchdown: Option<f64>,
    config: EkfConfig,
}

impl JointEkf {
    pub fn new(initial: JointState, config: EkfConfig) -> Self {
        let mut x = StateVector::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&initial.q);
        x.fixed_rows_mut::<3>(3).copy_from(&initial.q_dot);

        let mut process_noise = StateMatrix::zeros();
        let mut meas_noise = MeasMatrix::zeros();
        for i in 0..3 {
            process_noise[(i, i)] = config.q_pos;
            process_noise[(i + 3, i + 3)] = config.q_vel;
        }
        for i in 0..6 {
            meas_noise[(i, i)] = config.r_len;
            meas_noise[(i + 6, i + 6)] = config.r_vel;
        }

        JointEkf {
            x,
            p: StateMatrix::identity() * config.p_init,
            process_noise,
            meas_noise,
            t_since_touchdown: None,
            config,
        }
    }

    pub fn config(&self) -> &EkfConfig {
        &self.config
    }

    pub fn joints(&self) -> JointState {
        JointState {
            q: Vector3::new(self.x[0], self.x[1], self.x[2]),
            q_dot: Vector3::new(self.x[3], self.x[4], self.x[5]),
        }
    }

    /// Constant-velocity prediction over `dt`.
    pub fn predict(&mut self, dt: f64) {
        debug_assert!(dt > 0.0);
        let mut f = StateMatrix::identity();
        for i in 0..3 {
            f[(i, i + 3)] = dt;
        }
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + self.process_noise;
        symmetrize(&mut self.p);
        if let Some(t) = self.t_since_touchdown.as_mut() {
            *t += dt;
        }
    }

    /// Measurement noise with the post-touchdown deweighting applied to the
    /// lower-wire length and velocity channels.
    pub fn effective_meas_noise(&self) -> MeasMatrix {
        let mut r = self.meas_noise;
        if let Some(t) = self.t_since_touchdown {
            if t < self.config.deweight_window {
                for i in LOWER_WIRES {
                    r[(i, i)] *= self.config.deweight_factor;
                    r[(i + 6, i + 6)] *= self.config.deweight_factor;
                }
            }
        }
        r
    }

    /// Marks a touchdown event; the lower-wire channels are deweighted for
    /// the configured window from now.
    pub fn touchdown(&mut self) {
        self.t_since_touchdown = Some(0.0);
    }

    /// Predicted measurement h(x) = [g(q); J_m(q)·q̇].
    pub fn predicted_measurement(&self, geom: &GeometryModel) -> Measurement {
        let joints = self.joints();
        let lengths = geom.wire_lengths(&joints.q);
        let rates = geom.wire_velocities(&joints.q, &joints.q_dot);
        let mut z = Measurement::zeros();
        z.fixed_rows_mut::<6>(0).copy_from(&lengths.0);
        z.fixed_rows_mut::<6>(6).copy_from(&rates.0);
        z
    }

    /// Observation Jacobian at the current estimate. The length block and
    /// the velocity-vs-velocity block are the analytic muscle Jacobian; the
    /// velocity-vs-position block ∂(J_m q̇)/∂q is central-differenced.
    fn observation_jacobian(&self, geom: &GeometryModel) -> SMatrix<f64, 12, 6> {
        let joints = self.joints();
        let jac = geom.muscle_jacobian(&joints.q);
        let h_step = self.config.fd_step;

        let mut h = SMatrix::<f64, 12, 6>::zeros();
        for i in 0..6 {
            for j in 0..3 {
                h[(i, j)] = jac[(i, j)];
                h[(i + 6, j + 3)] = jac[(i, j)];
            }
        }
        for j in 0..3 {
            let mut qp = joints.q;
            let mut qm = joints.q;
            qp[j] += h_step;
            qm[j] -= h_step;
            let vp = geom.wire_velocities(&qp, &joints.q_dot);
            let vm = geom.wire_velocities(&qm, &joints.q_dot);
            for i in 0..6 {
                h[(i + 6, j)] = (vp[i] - vm[i]) / (2.0 * h_step);
            }
        }
        h
    }

    /// Standard EKF measurement update, Joseph-form covariance. Returns
    /// whether the update was applied or skipped on an ill-conditioned
    /// innovation covariance.
    pub fn update(&mut self, z: &Measurement, geom: &GeometryModel) -> UpdateOutcome {
        let h = self.observation_jacobian(geom);
        let r = self.effective_meas_noise();
        let s = h * self.p * h.transpose() + r;

        let Some(chol) = s.cholesky() else {
            return UpdateOutcome::SkippedIllConditioned;
        };
        let l_mat = chol.l();
        let mut dmin = f64::INFINITY;
        let mut dmax = 0.0f64;
        for i in 0..12 {
            let d = l_mat[(i, i)];
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
        if !(dmin > 0.0) || (dmax / dmin).powi(2) > self.config.cond_max {
            return UpdateOutcome::SkippedIllConditioned;
        }

        let innovation = z - self.predicted_measurement(geom);
        // K = P Hᵀ S⁻¹, via S Kᵀ = H Pᵀ
        let k = chol.solve(&(h * self.p)).transpose();

        self.x += k * innovation;
        let ikh = StateMatrix::identity() - k * h;
        self.p = ikh * self.p * ikh.transpose() + k * r * k.transpose();
        symmetrize(&mut self.p);
        UpdateOutcome::Applied
    }
}

fn symmetrize(m: &mut StateMatrix) {
    *m = (*m + m.transpose()) * 0.5;
}

#[derive(Debug, Error)]
pub enum OfflineError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}: expected {expected} columns, got {got}")]
    ColumnCount { row: usize, expected: usize, got: usize },
    #[error("row {row}: non-monotonic timestamp {t}")]
    NonMonotonicTime { row: usize, t: f64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Offline estimation: reads a CSV of timestamped wire measurements
/// (`t, l0..l5, ld0..ld5[, touchdown]`) and writes estimated joint
/// trajectories (`t, q_roll, q_pitch, q_slide, qd_roll, qd_pitch, qd_slide`).
/// A `touchdown` value of 1 triggers the lower-wire deweighting window.
pub fn run_offline<R: std::io::Read, W: std::io::Write>(
    input: R,
    output: W,
    geom: &GeometryModel,
    mut ekf: JointEkf,
) -> Result<usize, OfflineError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut writer = csv::Writer::from_writer(output);
    writer.write_record(["t", "q_roll", "q_pitch", "q_slide", "qd_roll", "qd_pitch", "qd_slide"])?;

    let mut prev_t: Option<f64> = None;
    let mut rows = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 13 && record.len() != 14 {
            return Err(OfflineError::ColumnCount { row: idx, expected: 13, got: record.len() });
        }
        let parse = |k: usize| record[k].trim().parse::<f64>().unwrap_or(f64::NAN);
        let t = parse(0);
        let mut z = Measurement::zeros();
        for i in 0..12 {
            z[i] = parse(i + 1);
        }
        if record.len() == 14 && parse(13) != 0.0 {
            ekf.touchdown();
        }

        if let Some(p) = prev_t {
            if t <= p {
                return Err(OfflineError::NonMonotonicTime { row: idx, t });
            }
            ekf.predict(t - p);
        }
        ekf.update(&z, geom);
        prev_t = Some(t);
        rows += 1;

        let j = ekf.joints();
        writer.write_record([
            t.to_string(),
            j.q[0].to_string(),
            j.q[1].to_string(),
            j.q[2].to_string(),
            j.q_dot[0].to_string(),
            j.q_dot[1].to_string(),
            j.q_dot[2].to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(rows)
}
