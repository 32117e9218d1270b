//! Shape diagnostics of learned flows: curvature along integration paths and
//! deviation of intermediate Euler states from the straight path.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use super::{draw_noise, integrate, repeat_rows, NoiseInterval, Velocity};
use crate::error::{Error, Result};

/// Mean finite-difference time derivative magnitude of the velocity along
/// Euler trajectories with `grid` steps:
/// `mean_i |v(t_{i+1}, z_{i+1}) - v(t_i, z_i)| / (t_{i+1} - t_i)`, averaged over
/// conditioning rows and `num_noise` initial draws per row.
pub fn curvature<V: Velocity + ?Sized>(
    field: &V,
    cond: ArrayView2<f64>,
    noise: NoiseInterval,
    grid: usize,
    num_noise: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if grid < 2 {
        return Err(Error::InvalidParameter(format!(
            "curvature grid must be >= 2, got {grid}"
        )));
    }
    if num_noise == 0 || cond.nrows() == 0 {
        return Err(Error::InvalidParameter(
            "curvature needs at least one sample".into(),
        ));
    }
    let z0 = draw_noise(rng, noise, cond.nrows() * num_noise);
    let rep = repeat_rows(cond, num_noise);
    let traj = integrate(field, rep.view(), &z0, grid)?;
    let n = rep.nrows();
    let dt = 1.0 / grid as f64;
    let mut prev = field.velocity(rep.view(), &vec![0.0; n], &z0)?;
    let mut total = 0.0;
    for i in 1..=grid {
        let t = vec![i as f64 * dt; n];
        let z: Vec<f64> = traj.z.column(i).to_vec();
        let v = field.velocity(rep.view(), &t, &z)?;
        total += v.iter().zip(&prev).map(|(a, b)| (a - b).abs()).sum::<f64>() / dt;
        prev = v;
    }
    Ok(total / (n * grid) as f64)
}

/// Deviation of each intermediate Euler state from the straight line between
/// `z(0)` and `z(K)`: `d_k = z(k) - [z(0) + (k/K)(z(K) - z(0))]` for `k = 1..=K`.
/// Shape `[rows x K]`; the last column is zero.
pub fn advantage_deviation<V: Velocity + ?Sized>(
    field: &V,
    cond: ArrayView2<f64>,
    z0: &[f64],
    steps: usize,
) -> Result<Array2<f64>> {
    let traj = integrate(field, cond, z0, steps)?;
    let k = steps as f64;
    let mut out = Array2::zeros((z0.len(), steps));
    for r in 0..z0.len() {
        let start = traj.z[[r, 0]];
        let end = traj.z[[r, steps]];
        for j in 1..=steps {
            out[[r, j - 1]] = if j == steps {
                0.0
            } else {
                traj.z[[r, j]] - (start + (j as f64 / k) * (end - start))
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::{ConstantField, FnField};
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use ndarray::{array, ArrayView1};

    #[test]
    fn constant_field_is_straight() {
        let cond = array![[0.0], [1.0]];
        let noise = NoiseInterval {
            lower: -3.0,
            upper: 0.0,
        };
        let c = curvature(
            &ConstantField(0.7),
            cond.view(),
            noise,
            8,
            4,
            &mut stream(0, "c"),
        )
        .unwrap();
        assert_eq!(c, 0.0);
        let d = advantage_deviation(&ConstantField(2.0), cond.view(), &[0.0, -1.0], 4).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn ramp_field_has_unit_curvature() {
        let cond = array![[0.0]];
        let noise = NoiseInterval {
            lower: -1.0,
            upper: 0.0,
        };
        let ramp = FnField(|t: f64, _z: f64, _c: ArrayView1<f64>| t);
        for grid in [2, 5, 16] {
            let c = curvature(&ramp, cond.view(), noise, grid, 3, &mut stream(1, "c")).unwrap();
            assert_relative_eq!(c, 1.0, epsilon = 1e-12);
        }
        assert!(curvature(&ramp, cond.view(), noise, 1, 3, &mut stream(1, "c")).is_err());
    }

    #[test]
    fn two_step_linear_field() {
        let field = FnField(|_t: f64, z: f64, _c: ArrayView1<f64>| z);
        let d = advantage_deviation(&field, array![[0.0]].view(), &[1.0], 2).unwrap();
        assert_relative_eq!(d[[0, 0]], -0.125, epsilon = 1e-15);
        assert_eq!(d[[0, 1]], 0.0);
    }
}
