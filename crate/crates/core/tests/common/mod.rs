//! Shared fixtures for integration tests: seeded randomness, random chain
//! models and states, and an independent projected-gradient reference for
//! box-constrained QPs.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wbr_core::ik::ConstraintSet;
use wbr_core::kinematics::SystemState;
use wbr_core::model::{JointSpec, KinematicModel, ModelBuilder};
use wbr_core::so3::exp_so3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

/// Serial chain with random axes, origin offsets and origin orientations.
/// Wide limits and a huge velocity cap keep every constraint inactive for
/// states sampled well inside the range.
pub fn random_chain_model(rng: &mut ChaCha8Rng, joints: usize) -> KinematicModel {
    let mut b = ModelBuilder::new("chain").link("root");
    let mut parent = "root".to_string();
    for i in 0..joints {
        let child = format!("seg{i}");
        let xyz = Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
        let rpy = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
        b = b.link(&child).joint(
            JointSpec::revolute(&format!("q{i}"), &parent, &child, random_unit(rng))
                .with_origin(xyz, rpy)
                .with_limits(-10.0, 10.0)
                .with_vel_max(1e6),
        );
        parent = child;
    }
    b.build().unwrap()
}

/// Random base pose plus joints uniform inside their limits clipped to
/// ±`joint_range`.
pub fn random_state(
    rng: &mut ChaCha8Rng,
    model: &KinematicModel,
    joint_range: f64,
) -> SystemState {
    let mut state = SystemState::neutral(model);
    state.base_position = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let angle = rng.random_range(0.0..std::f64::consts::PI);
    state.base_orientation = exp_so3(&(random_unit(rng) * angle));
    for d in 0..model.n_dof() {
        let (lo, hi) = match &model.dof_joint(d).limits {
            Some(l) => (l.pos_min.max(-joint_range), l.pos_max.min(joint_range)),
            None => (-joint_range, joint_range),
        };
        state.s[d] = rng.random_range(lo..hi);
    }
    state
}

/// Per-variable box implied by rows with a single nonzero coefficient.
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub fn bounds_from_rows(constraints: &ConstraintSet, dim: usize) -> Bounds {
    let mut bounds = Bounds {
        lower: vec![f64::NEG_INFINITY; dim],
        upper: vec![f64::INFINITY; dim],
    };
    for r in 0..constraints.matrix.nrows() {
        let mut entry = None;
        for v in 0..dim {
            let c = constraints.matrix[(r, v)];
            if c != 0.0 {
                assert!(entry.is_none(), "row {r} has multiple nonzeros");
                entry = Some((v, c));
            }
        }
        let (v, c) = entry.expect("empty constraint row");
        let b = constraints.rhs[r] / c;
        if c > 0.0 {
            bounds.upper[v] = bounds.upper[v].min(b);
        } else {
            bounds.lower[v] = bounds.lower[v].max(b);
        }
    }
    bounds
}

/// Slow but independent reference: projected gradient descent on
/// ½xᵀHx + fᵀx over the box, run to numerical stagnation.
pub fn projected_gradient(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    bounds: &Bounds,
    max_iters: usize,
) -> DVector<f64> {
    let dim = f.len();
    let mut x = DVector::<f64>::zeros(dim);
    for v in 0..dim {
        x[v] = x[v].clamp(bounds.lower[v], bounds.upper[v]);
    }
    let step = 1.0 / h.norm();
    for _ in 0..max_iters {
        let grad = h * &x + f;
        let mut moved = 0.0f64;
        for v in 0..dim {
            let next = (x[v] - step * grad[v]).clamp(bounds.lower[v], bounds.upper[v]);
            moved = moved.max((next - x[v]).abs());
            x[v] = next;
        }
        if moved < 1e-15 {
            break;
        }
    }
    x
}

pub fn qp_objective(h: &DMatrix<f64>, f: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * (h * x).dot(x) + f.dot(x)
}
