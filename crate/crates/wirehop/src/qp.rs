//! Computed muscle control: least-norm distribution of a desired joint force
//! over six non-negative wire tensions.
//!
//! Solves `min ‖f‖²  s.t.  τ = -J_mᵀ f,  f ≥ f_min` (optionally `f ≤ f_max`)
//! with a dense active-set iteration. Working sets pin variables at a bound
//! and solve the remaining equality-constrained least-norm problem in closed
//! form; at most 2⁶ working sets are visited before the solver falls back to
//! exhaustive enumeration, so termination is unconditional. The solver is
//! deterministic: ties break toward the lowest wire index.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::geometry::MuscleJacobian;
use crate::params::{WireVector, WIRE_COUNT};

/// Outcome of a tension solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

/// Solution of the tension distribution problem, including the multipliers
/// needed to evaluate KKT residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct TensionSolution {
    /// Wire tensions (N).
    pub f: WireVector,
    /// Indices of wires pinned at a bound in the final working set.
    pub active_set: Vec<usize>,
    /// Squared tension norm fᵀf (N²).
    pub objective: f64,
    pub status: QpStatus,
    /// Equality multipliers ν of `τ = -J_mᵀ f`.
    pub dual_eq: Vector3<f64>,
    /// Lower-bound multipliers, one per wire (zero for free wires).
    pub dual_lower: SVector<f64, 6>,
    /// Upper-bound multipliers (all zero without an upper bound).
    pub dual_upper: SVector<f64, 6>,
    /// Upper bound the problem was solved with, if any.
    pub f_max: Option<f64>,
}

impl TensionSolution {
    fn infeasible() -> Self {
        TensionSolution {
            f: WireVector::zeros(),
            active_set: Vec::new(),
            objective: f64::INFINITY,
            status: QpStatus::Infeasible,
            dual_eq: Vector3::zeros(),
            dual_lower: SVector::zeros(),
            dual_upper: SVector::zeros(),
            f_max: None,
        }
    }
}

/// Max-norm residuals of the three KKT blocks for a solution triple.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResidual {
    /// ‖2f + Aᵀν - μ_lo + μ_up‖∞ (N).
    pub stationarity: f64,
    /// Worst violation of the equality and the bounds (N).
    pub primal: f64,
    /// Largest complementary-slackness product (N²).
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Free,
    AtLower,
    AtUpper,
}

const MAX_WORKING_SETS: usize = 1 << WIRE_COUNT;
/// Absolute pin/release tolerances on unit-scaled problems.
const PRIMAL_TOL: f64 = 1e-11;
const DUAL_TOL: f64 = 1e-9;
/// Relative cutoff below which an eigenvalue of A_F·A_Fᵀ counts as zero.
const RANK_TOL: f64 = 1e-12;

/// Equality-constrained least-norm solve for one working set.
///
/// Returns `(f, u)` with `f_F = A_Fᵀ u` on the free set, or `None` when the
/// pinned working set cannot reproduce `tau` at all.
fn solve_working_set(
    a: &SMatrix<f64, 3, 6>,
    tau: &Vector3<f64>,
    states: &[VarState; WIRE_COUNT],
    f_min: f64,
    f_max: Option<f64>,
) -> Option<(SVector<f64, 6>, Vector3<f64>)> {
    let mut f = SVector::<f64, 6>::zeros();
    let mut r = *tau;
    for i in 0..WIRE_COUNT {
        match states[i] {
            VarState::AtLower => f[i] = f_min,
            VarState::AtUpper => f[i] = f_max.expect("upper pin without f_max"),
            VarState::Free => continue,
        }
        r -= a.column(i) * f[i];
    }

    // Gram matrix over the free columns; pseudo-inverse via symmetric
    // eigendecomposition so rank-deficient free sets are handled.
    let mut gram = Matrix3::zeros();
    for i in 0..WIRE_COUNT {
        if states[i] == VarState::Free {
            let col = a.column(i);
            gram += col * col.transpose();
        }
    }
    let eig = gram.symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let cutoff = RANK_TOL * max_eig.max(1e-300);
    let mut u = Vector3::zeros();
    for k in 0..3 {
        let lambda = eig.eigenvalues[k];
        if lambda.abs() > cutoff {
            let qk = eig.eigenvectors.column(k);
            u += qk * (qk.dot(&r) / lambda);
        }
    }

    for i in 0..WIRE_COUNT {
        if states[i] == VarState::Free {
            f[i] = a.column(i).dot(&u);
        }
    }

    // Consistency: the least-squares solve must actually meet the equality.
    let mut achieved = Vector3::zeros();
    for i in 0..WIRE_COUNT {
        if states[i] == VarState::Free {
            achieved += a.column(i) * f[i];
        }
    }
    let scale = tau.amax().max(1.0);
    if (achieved - r).amax() > 1e-9 * scale {
        return None;
    }
    Some((f, u))
}

fn assemble_solution(
    a: &SMatrix<f64, 3, 6>,
    states: &[VarState; WIRE_COUNT],
    f: SVector<f64, 6>,
    u: Vector3<f64>,
    f_max: Option<f64>,
) -> TensionSolution {
    let nu = -2.0 * u;
    let grad = 2.0 * f + a.transpose() * nu;
    let mut dual_lower = SVector::<f64, 6>::zeros();
    let mut dual_upper = SVector::<f64, 6>::zeros();
    let mut active_set = Vec::new();
    for i in 0..WIRE_COUNT {
        match states[i] {
            VarState::AtLower => {
                dual_lower[i] = grad[i];
                active_set.push(i);
            }
            VarState::AtUpper => {
                dual_upper[i] = -grad[i];
                active_set.push(i);
            }
            VarState::Free => {}
        }
    }
    TensionSolution {
        f: WireVector(f),
        active_set,
        objective: f.dot(&f),
        status: QpStatus::Optimal,
        dual_eq: nu,
        dual_lower,
        dual_upper,
        f_max,
    }
}

fn is_primal_feasible(
    a: &SMatrix<f64, 3, 6>,
    tau: &Vector3<f64>,
    f: &SVector<f64, 6>,
    f_min: f64,
    f_max: Option<f64>,
) -> bool {
    let eq_tol = 1e-8 * tau.amax().max(1.0);
    if (a * f - tau).amax() > eq_tol {
        return false;
    }
    let lo_ok = f.iter().all(|&v| v >= f_min - 1e-10);
    let hi_ok = f_max.is_none_or(|hi| f.iter().all(|&v| v <= hi + 1e-10));
    lo_ok && hi_ok
}

/// Exhaustive sweep over every bound-active working set. Unconditionally
/// correct; used when the active-set iteration fails to settle.
fn solve_by_enumeration(
    a: &SMatrix<f64, 3, 6>,
    tau: &Vector3<f64>,
    f_min: f64,
    f_max: Option<f64>,
) -> TensionSolution {
    let n_states: usize = if f_max.is_some() { 3 } else { 2 };
    let total = n_states.pow(WIRE_COUNT as u32);
    let mut best: Option<TensionSolution> = None;
    for code in 0..total {
        let mut states = [VarState::Free; WIRE_COUNT];
        let mut c = code;
        for state in states.iter_mut() {
            *state = match c % n_states {
                0 => VarState::Free,
                1 => VarState::AtLower,
                _ => VarState::AtUpper,
            };
            c /= n_states;
        }
        let Some((f, u)) = solve_working_set(a, tau, &states, f_min, f_max) else {
            continue;
        };
        if !is_primal_feasible(a, tau, &f, f_min, f_max) {
            continue;
        }
        let objective = f.dot(&f);
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(assemble_solution(a, &states, f, u, f_max));
        }
    }
    best.unwrap_or_else(TensionSolution::infeasible)
}

/// Maps a desired joint force `tau` to wire tensions.
///
/// `tau` is the generalized force on (roll, pitch, slide) in (N·m, N·m, N);
/// `jac` is the muscle Jacobian at the current joint estimate. `f_max` is
/// optional: the canonical problem has no upper bound and motor limits are
/// enforced by the simulator, but callers may request motor-respecting
/// tensions directly.
pub fn solve_tensions(
    tau: &Vector3<f64>,
    jac: &MuscleJacobian,
    f_min: f64,
    f_max: Option<f64>,
) -> TensionSolution {
    debug_assert!(f_min >= 0.0);
    debug_assert!(f_max.is_none_or(|hi| hi > f_min));
    let a: SMatrix<f64, 3, 6> = -jac.transpose();

    let mut states = [VarState::Free; WIRE_COUNT];
    for _ in 0..MAX_WORKING_SETS {
        let Some((f, u)) = solve_working_set(&a, tau, &states, f_min, f_max) else {
            // The pinned set blocks the equality; free the pinned wire whose
            // column most helps, or give up to the exhaustive sweep.
            let mut r = *tau;
            for i in 0..WIRE_COUNT {
                if states[i] != VarState::Free {
                    let v = if states[i] == VarState::AtLower {
                        f_min
                    } else {
                        f_max.unwrap()
                    };
                    r -= a.column(i) * v;
                }
            }
            let mut pick = None;
            let mut best_proj = DUAL_TOL;
            for i in 0..WIRE_COUNT {
                if states[i] != VarState::Free {
                    let proj = a.column(i).dot(&r).abs();
                    if proj > best_proj {
                        best_proj = proj;
                        pick = Some(i);
                    }
                }
            }
            match pick {
                Some(i) => {
                    states[i] = VarState::Free;
                    continue;
                }
                None => break,
            }
        };

        // Pin the worst bound violation among the free variables.
        let pin_tol = PRIMAL_TOL * f_min.abs().max(1.0);
        let mut worst = pin_tol;
        let mut pick = None;
        for i in 0..WIRE_COUNT {
            if states[i] != VarState::Free {
                continue;
            }
            let low_violation = f_min - f[i];
            if low_violation > worst {
                worst = low_violation;
                pick = Some((i, VarState::AtLower));
            }
            if let Some(hi) = f_max {
                let up_violation = f[i] - hi;
                if up_violation > worst {
                    worst = up_violation;
                    pick = Some((i, VarState::AtUpper));
                }
            }
        }
        if let Some((i, bound)) = pick {
            states[i] = bound;
            continue;
        }

        // Primal feasible: release the most negative multiplier, if any.
        let grad = 2.0 * f + a.transpose() * (-2.0 * u);
        let dual_tol = DUAL_TOL * (2.0 * f.amax()).max(1.0);
        let mut most_negative = -dual_tol;
        let mut release = None;
        for i in 0..WIRE_COUNT {
            let mu = match states[i] {
                VarState::AtLower => grad[i],
                VarState::AtUpper => -grad[i],
                VarState::Free => continue,
            };
            if mu < most_negative {
                most_negative = mu;
                release = Some(i);
            }
        }
        if let Some(i) = release {
            states[i] = VarState::Free;
            continue;
        }

        let sol = assemble_solution(&a, &states, f, u, f_max);
        if is_primal_feasible(&a, tau, &sol.f.0, f_min, f_max) {
            return sol;
        }
        break;
    }

    solve_by_enumeration(&a, tau, f_min, f_max)
}

/// KKT residual blocks of a solution (pre: `sol.status == Optimal`). The
/// multipliers stored in `sol` are used as-is, so perturbing `sol.f` surfaces
/// in the stationarity and complementarity blocks.
pub fn kkt_residual(
    sol: &TensionSolution,
    tau: &Vector3<f64>,
    jac: &MuscleJacobian,
    f_min: f64,
) -> KktResidual {
    let a: SMatrix<f64, 3, 6> = -jac.transpose();
    let f = &sol.f.0;

    let grad = 2.0 * f + a.transpose() * sol.dual_eq - sol.dual_lower + sol.dual_upper;
    let stationarity = grad.amax();

    let mut primal = (a * f - tau).amax();
    for i in 0..WIRE_COUNT {
        primal = primal.max(f_min - f[i]);
        if let Some(hi) = sol.f_max {
            primal = primal.max(f[i] - hi);
        }
    }
    primal = primal.max(0.0);

    let mut complementarity = 0.0f64;
    for i in 0..WIRE_COUNT {
        complementarity = complementarity.max((sol.dual_lower[i] * (f[i] - f_min)).abs());
        if let Some(hi) = sol.f_max {
            complementarity = complementarity.max((sol.dual_upper[i] * (hi - f[i])).abs());
        }
    }

    KktResidual { stationarity, primal, complementarity }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryModel;
    use crate::params::default_params;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// 1-DoF antagonist toy: wires 0 and 1 act on the slide with opposite
    /// sign, the other four have zero columns.
    fn toy_jacobian() -> MuscleJacobian {
        let mut jac = MuscleJacobian::zeros();
        jac[(0, 2)] = 1.0;
        jac[(1, 2)] = -1.0;
        jac
    }

    /// Independent oracle: enumerate every subset of bound-active wires,
    /// solve each equality-constrained least-norm problem through an SVD
    /// pseudo-inverse, and keep the best fully feasible candidate.
    fn oracle_best_objective(
        tau: &Vector3<f64>,
        jac: &MuscleJacobian,
        f_min: f64,
    ) -> Option<f64> {
        let a: SMatrix<f64, 3, 6> = -jac.transpose();
        let mut best: Option<f64> = None;
        for mask in 0u32..(1 << WIRE_COUNT) {
            let mut f = SVector::<f64, 6>::zeros();
            let mut r = *tau;
            let mut free_cols = Vec::new();
            for i in 0..WIRE_COUNT {
                if mask & (1 << i) != 0 {
                    f[i] = f_min;
                    r -= a.column(i) * f_min;
                } else {
                    free_cols.push(i);
                }
            }
            if !free_cols.is_empty() {
                let m = nalgebra::DMatrix::from_fn(3, free_cols.len(), |row, k| {
                    a[(row, free_cols[k])]
                });
                let svd = m.clone().svd(true, true);
                let x = svd
                    .solve(&nalgebra::DVector::from_column_slice(r.as_slice()), 1e-12)
                    .unwrap();
                for (k, &i) in free_cols.iter().enumerate() {
                    f[i] = x[k];
                }
            }
            if (a * f - tau).amax() > 1e-8 * tau.amax().max(1.0) {
                continue;
            }
            if f.iter().any(|&v| v < f_min - 1e-10) {
                continue;
            }
            let obj = f.dot(&f);
            if best.is_none_or(|b| obj < b) {
                best = Some(obj);
            }
        }
        best
    }

    #[test]
    fn toy_symmetric_antagonism() {
        let sol = solve_tensions(&Vector3::zeros(), &toy_jacobian(), 1.0, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        for i in 0..WIRE_COUNT {
            assert_relative_eq!(sol.f[i], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn toy_bound_active_by_hand() {
        // τ = 1 through A = -Jᵀ means f1 - f0 = 1; with f ≥ 0 the KKT
        // optimum is f = (0, 1).
        let sol = solve_tensions(&Vector3::new(0.0, 0.0, 1.0), &toy_jacobian(), 0.0, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.f[0], 0.0, epsilon = 1e-10);
        assert_relative_eq!(sol.f[1], 1.0, epsilon = 1e-10);
        for i in 2..WIRE_COUNT {
            assert_relative_eq!(sol.f[i], 0.0, epsilon = 1e-10);
        }
        assert_relative_eq!(sol.objective, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn toy_kkt_residuals_tiny() {
        let tau = Vector3::new(0.0, 0.0, 1.0);
        let jac = toy_jacobian();
        let sol = solve_tensions(&tau, &jac, 0.0, None);
        let res = kkt_residual(&sol, &tau, &jac, 0.0);
        assert!(res.stationarity <= 1e-12, "{res:?}");
        assert!(res.primal <= 1e-12, "{res:?}");
        assert!(res.complementarity <= 1e-12, "{res:?}");
    }

    #[test]
    fn perturbed_solution_breaks_stationarity() {
        let tau = Vector3::new(0.0, 0.0, 1.0);
        let jac = toy_jacobian();
        let mut sol = solve_tensions(&tau, &jac, 0.0, None);
        for i in 0..WIRE_COUNT {
            sol.f[i] += 1e-3;
        }
        let res = kkt_residual(&sol, &tau, &jac, 0.0);
        assert!(res.stationarity > 1e-4, "{res:?}");
    }

    #[test]
    fn origin_is_unconstrained_minimum() {
        let sol = solve_tensions(&Vector3::zeros(), &toy_jacobian(), 0.0, None);
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_eq!(sol.objective, 0.0);
        let res = kkt_residual(&sol, &Vector3::zeros(), &toy_jacobian(), 0.0);
        assert_eq!(res.max(), 0.0);
    }

    #[test]
    fn matches_enumeration_oracle_on_geometry_instances() {
        let params = default_params();
        let geom = GeometryModel::from_params(&params);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut solved = 0;
        for _ in 0..500 {
            let q = nalgebra::Vector3::new(
                rng.random_range(-0.79..0.79),
                rng.random_range(-0.79..0.79),
                rng.random_range(0.0..0.8),
            );
            let jac = geom.muscle_jacobian(&q);
            let tau = Vector3::new(
                rng.random_range(-40.0..40.0),
                rng.random_range(-40.0..40.0),
                rng.random_range(-100.0..400.0),
            );
            let sol = solve_tensions(&tau, &jac, params.f_min, None);
            let oracle = oracle_best_objective(&tau, &jac, params.f_min);
            match (sol.status, oracle) {
                (QpStatus::Optimal, Some(best)) => {
                    solved += 1;
                    let rel = (sol.objective - best).abs() / best.max(1.0);
                    assert!(rel <= 1e-6, "objective {} vs oracle {best}", sol.objective);
                    let res = kkt_residual(&sol, &tau, &jac, params.f_min);
                    assert!(res.max() <= 1e-6 * sol.objective.max(1.0), "{res:?}");
                }
                (QpStatus::Infeasible, None) => {}
                (s, o) => panic!("solver {s:?} disagrees with oracle {o:?} at q = {q:?}"),
            }
        }
        assert!(solved > 100, "too few feasible instances ({solved})");
    }

    #[test]
    fn detects_infeasible_cone() {
        // Below mid-stroke every wire shortens on extension, so a retraction
        // force cannot be produced with taut wires.
        let params = default_params();
        let geom = GeometryModel::from_params(&params);
        let jac = geom.muscle_jacobian(&Vector3::new(0.0, 0.0, 0.2));
        let sol = solve_tensions(&Vector3::new(0.0, 0.0, -50.0), &jac, params.f_min, None);
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn respects_upper_bound_when_present() {
        let params = default_params();
        let geom = GeometryModel::from_params(&params);
        let jac = geom.muscle_jacobian(&Vector3::new(0.17, -0.59, 0.50));
        let tau = Vector3::new(-67.0, 15.0, 364.0);
        let unbounded = solve_tensions(&tau, &jac, params.f_min, None);
        assert_eq!(unbounded.status, QpStatus::Optimal);
        assert!(unbounded.f.0.amax() > 230.0, "instance too easy");

        let bounded = solve_tensions(&tau, &jac, params.f_min, Some(230.0));
        assert_eq!(bounded.status, QpStatus::Optimal);
        assert!(bounded.f.0.amax() <= 230.0 + 1e-9);
        assert!(bounded.objective > unbounded.objective);
        let res = kkt_residual(&bounded, &tau, &jac, params.f_min);
        assert!(res.max() <= 1e-6 * bounded.objective, "{res:?}");
    }

    #[test]
    fn deterministic_bitwise() {
        let params = default_params();
        let geom = GeometryModel::from_params(&params);
        let jac = geom.muscle_jacobian(&Vector3::new(0.2, -0.3, 0.6));
        let tau = Vector3::new(7.5, -3.25, 180.0);
        let a = solve_tensions(&tau, &jac, params.f_min, None);
        let b = solve_tensions(&tau, &jac, params.f_min, None);
        for i in 0..WIRE_COUNT {
            assert_eq!(a.f[i].to_bits(), b.f[i].to_bits());
        }
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.active_set, b.active_set);
    }

    proptest! {
        #[test]
        fn positive_homogeneity_without_upper_bound(
            taur in -30.0f64..30.0,
            taup in -30.0f64..30.0,
            taus in -200.0f64..400.0,
            alpha in 0.1f64..8.0,
            qr in -0.7f64..0.7,
            qp in -0.7f64..0.7,
            qs in 0.05f64..0.78,
        ) {
            let geom = GeometryModel::from_params(&default_params());
            let jac = geom.muscle_jacobian(&Vector3::new(qr, qp, qs));
            let tau = Vector3::new(taur, taup, taus);
            let base = solve_tensions(&tau, &jac, 0.0, None);
            let scaled = solve_tensions(&(tau * alpha), &jac, 0.0, None);
            prop_assert_eq!(base.status, scaled.status);
            if base.status == QpStatus::Optimal {
                for i in 0..WIRE_COUNT {
                    let expect = base.f[i] * alpha;
                    prop_assert!(
                        (scaled.f[i] - expect).abs() <= 1e-9 * expect.abs().max(1.0),
                        "wire {}: {} vs {}", i, scaled.f[i], expect
                    );
                }
            }
        }
    }
}
