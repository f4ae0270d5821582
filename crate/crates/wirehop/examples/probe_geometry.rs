// Scratch probe: search for instances where the f_max cap binds yet the
// capped problem stays feasible.
use nalgebra::Vector3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use wirehop::geometry::GeometryModel;
use wirehop::params::default_params;
use wirehop::qp::{solve_tensions, QpStatus};

fn main() {
    let params = default_params();
    let geom = GeometryModel::from_params(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut found = 0;
    for _ in 0..20000 {
        let q = Vector3::new(
            rng.random_range(-0.7..0.7),
            rng.random_range(-0.7..0.7),
            rng.random_range(0.35..0.8),
        );
        let tau = Vector3::new(
            rng.random_range(-80.0..80.0),
            rng.random_range(-80.0..80.0),
            rng.random_range(0.0..450.0),
        );
        let jac = geom.muscle_jacobian(&q);
        let unbounded = solve_tensions(&tau, &jac, params.f_min, None);
        if unbounded.status != QpStatus::Optimal || unbounded.f.0.amax() < 240.0 {
            continue;
        }
        let bounded = solve_tensions(&tau, &jac, params.f_min, Some(230.0));
        if bounded.status == QpStatus::Optimal {
            println!(
                "q={:?}\ntau={:?}\nunbounded max_f={:.1} obj={:.1}, bounded max_f={:.3} obj={:.1} active={:?}",
                q.as_slice(),
                tau.as_slice(),
                unbounded.f.0.amax(),
                unbounded.objective,
                bounded.f.0.amax(),
                bounded.objective,
                bounded.active_set,
            );
            found += 1;
            if found >= 3 {
                break;
            }
        }
    }
    println!("found {found}");
}
