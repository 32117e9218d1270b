use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{repeat_rows, NoiseInterval};
use crate::encodings::{InterpolantEncoding, TimeEncoding};
use crate::error::{Error, Result};
use crate::nn::{Activation, EmaTracker, Mlp};

/// Anything that can predict scalar velocities for a batch of
/// `(conditioning row, t, z)` triples.
pub trait Velocity {
    fn velocity(&self, cond: ArrayView2<f64>, t: &[f64], z: &[f64]) -> Result<Vec<f64>>;
}

/// How `[state, action, encode(z), embed(t)]` is laid out at the network input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldLayout {
    pub state_dim: usize,
    pub action_dim: usize,
    pub interpolant: InterpolantEncoding,
    pub time: TimeEncoding,
}

impl FieldLayout {
    pub fn cond_dim(&self) -> usize {
        self.state_dim + self.action_dim
    }

    pub fn input_dim(&self) -> usize {
        self.cond_dim() + self.interpolant.dim() + self.time.dim()
    }

    pub fn build_inputs(&self, cond: ArrayView2<f64>, t: &[f64], z: &[f64]) -> Result<Array2<f64>> {
        self.check_inputs(cond, t, z)?;
        let n = cond.nrows();
        let (c, zd) = (self.cond_dim(), self.interpolant.dim());
        let mut inputs = Array2::zeros((n, self.input_dim()));
        let mut time_cache: Option<(f64, Vec<f64>)> = None;
        for (i, mut row) in inputs.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            for (dst, src) in row[..c].iter_mut().zip(cond.row(i)) {
                *dst = *src;
            }
            self.interpolant.encode_into(z[i], &mut row[c..c + zd]);
            match &time_cache {
                Some((tc, emb)) if *tc == t[i] => row[c + zd..].copy_from_slice(emb),
                _ => {
                    self.time.encode_into(t[i], &mut row[c + zd..]);
                    time_cache = Some((t[i], row[c + zd..].to_vec()));
                }
            }
        }
        Ok(inputs)
    }

    fn check_inputs(&self, cond: ArrayView2<f64>, t: &[f64], z: &[f64]) -> Result<()> {
        let n = cond.nrows();
        if cond.ncols() != self.cond_dim() {
            return Err(Error::dims(
                "velocity conditioning",
                self.cond_dim(),
                cond.ncols(),
            ));
        }
        if t.len() != n {
            return Err(Error::dims("velocity time inputs", n, t.len()));
        }
        if z.len() != n {
            return Err(Error::dims("velocity interpolant inputs", n, z.len()));
        }
        if let Some(bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::InvalidParameter(format!(
                "time must lie in [0, 1], got {bad}"
            )));
        }
        Ok(())
    }
}

/// A network viewed as a velocity field under some layout.
#[derive(Debug, Clone, Copy)]
pub struct FlowNet<'a> {
    pub net: &'a Mlp,
    pub layout: &'a FieldLayout,
}

impl Velocity for FlowNet<'_> {
    fn velocity(&self, cond: ArrayView2<f64>, t: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        // The first layer is applied block-wise: the conditioning and time
        // columns never pass through the full input matrix, and rows sharing a
        // time value share its contribution.
        let layout = self.layout;
        layout.check_inputs(cond, t, z)?;
        if self.net.input_dim() != layout.input_dim() {
            return Err(Error::dims(
                "velocity network input",
                layout.input_dim(),
                self.net.input_dim(),
            ));
        }
        let n = cond.nrows();
        let (c, zd) = (layout.cond_dim(), layout.interpolant.dim());
        let w = self.net.weights(0);
        let mut enc = Array2::zeros((n, zd));
        for (i, mut row) in enc.rows_mut().into_iter().enumerate() {
            layout
                .interpolant
                .encode_into(z[i], row.as_slice_mut().expect("standard layout"));
        }
        let mut pre = cond.dot(&w.slice(s![..c, ..]));
        pre += &enc.dot(&w.slice(s![c..c + zd, ..]));
        pre += &self.net.bias(0);
        let w_time = w.slice(s![c + zd.., ..]);
        let mut emb = vec![0.0; layout.time.dim()];
        let mut cached: Option<(f64, Array1<f64>)> = None;
        for (i, mut row) in pre.rows_mut().into_iter().enumerate() {
            if cached.as_ref().is_none_or(|(tc, _)| *tc != t[i]) {
                layout.time.encode_into(t[i], &mut emb);
                cached = Some((t[i], ArrayView1::from(&emb).dot(&w_time)));
            }
            row += &cached.as_ref().expect("cached").1;
        }
        Ok(self
            .net
            .forward_from_first(pre)?
            .into_raw_vec_and_offset()
            .0)
    }
}

/// The critic: an online velocity network and its EMA target.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    layout: FieldLayout,
    online: Mlp,
    target: EmaTracker,
}

impl VelocityField {
    pub fn new(
        layout: FieldLayout,
        hidden: &[usize],
        tau: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut sizes = vec![layout.input_dim()];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let online = Mlp::new(&sizes, Activation::Gelu, rng)?;
        let target = EmaTracker::new(&online, tau)?;
        Ok(Self {
            layout,
            online,
            target,
        })
    }

    pub fn from_parts(layout: FieldLayout, online: Mlp, target: Mlp, tau: f64) -> Result<Self> {
        if online.input_dim() != layout.input_dim() || online.output_dim() != 1 {
            return Err(Error::dims(
                "velocity network input",
                layout.input_dim(),
                online.input_dim(),
            ));
        }
        if online.sizes() != target.sizes() {
            return Err(Error::dims(
                "target network",
                online.num_params(),
                target.num_params(),
            ));
        }
        Ok(Self {
            layout,
            online,
            target: EmaTracker::with_shadow(target, tau)?,
        })
    }

    pub fn layout(&self) -> &FieldLayout {
        &self.layout
    }

    pub fn online(&self) -> FlowNet<'_> {
        FlowNet {
            net: &self.online,
            layout: &self.layout,
        }
    }

    pub fn target(&self) -> FlowNet<'_> {
        FlowNet {
            net: self.target.shadow(),
            layout: &self.layout,
        }
    }

    pub fn online_net(&self) -> &Mlp {
        &self.online
    }

    pub fn online_net_mut(&mut self) -> &mut Mlp {
        &mut self.online
    }

    pub fn target_net(&self) -> &Mlp {
        self.target.shadow()
    }

    pub fn update_target(&mut self) -> Result<()> {
        self.target.update(&self.online)
    }
}

/// `v(t, z | s, a) = c` everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantField(pub f64);

impl Velocity for ConstantField {
    fn velocity(&self, cond: ArrayView2<f64>, _t: &[f64], _z: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![self.0; cond.nrows()])
    }
}

/// Hand-written field `f(t, z, cond)`.
pub struct FnField<F>(pub F);

impl<F> Velocity for FnField<F>
where
    F: Fn(f64, f64, ArrayView1<f64>) -> f64,
{
    fn velocity(&self, cond: ArrayView2<f64>, t: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        Ok((0..cond.nrows())
            .map(|i| (self.0)(t[i], z[i], cond.row(i)))
            .collect())
    }
}

/// Euler trajectories, one row per sample, columns `z(0), ..., z(K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub z: Array2<f64>,
}

impl Trajectories {
    pub fn steps(&self) -> usize {
        self.z.ncols() - 1
    }

    pub fn final_values(&self) -> Vec<f64> {
        self.z.column(self.steps()).to_vec()
    }
}

/// Left-endpoint Euler: `z(i+1) = z(i) + v(i/K, z(i)) / K` for `i = 0..K`.
pub fn integrate<V: Velocity + ?Sized>(
    field: &V,
    cond: ArrayView2<f64>,
    z0: &[f64],
    steps: usize,
) -> Result<Trajectories> {
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "integration needs at least one step".into(),
        ));
    }
    if z0.len() != cond.nrows() {
        return Err(Error::dims("initial noise", cond.nrows(), z0.len()));
    }
    if let Some(r) = z0.iter().position(|z| !z.is_finite()) {
        return Err(Error::NonFinite(format!(
            "integrate: initial value z0 = {} at row {r}",
            z0[r]
        )));
    }
    let n = z0.len();
    let k = steps as f64;
    let mut traj = Array2::zeros((n, steps + 1));
    traj.column_mut(0).assign(&ArrayView1::from(z0));
    let mut z = z0.to_vec();
    for i in 0..steps {
        let t = vec![i as f64 / k; n];
        let v = field.velocity(cond, &t, &z).map_err(|e| match e {
            Error::NonFinite(msg) => {
                Error::NonFinite(format!("integrate step {i} (t = {}): {msg}", t[0]))
            }
            other => other,
        })?;
        for r in 0..n {
            z[r] += v[r] / k;
            if !z[r].is_finite() {
                return Err(Error::NonFinite(format!(
                    "integrate step {i} (t = {}), row {r}: velocity {} from z0 = {}",
                    t[0], v[r], z0[r]
                )));
            }
        }
        traj.column_mut(i + 1).assign(&ArrayView1::from(&z[..]));
    }
    Ok(Trajectories { z: traj })
}

/// Mean of `num_noise` integrals per conditioning row, each from fresh
/// `z(0) ~ U[l, u]`. Draws are taken row by row.
pub fn q_value<V: Velocity + ?Sized>(
    field: &V,
    cond: ArrayView2<f64>,
    noise: NoiseInterval,
    steps: usize,
    num_noise: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if num_noise == 0 {
        return Err(Error::InvalidParameter(
            "q_value needs at least one noise sample".into(),
        ));
    }
    let z0 = super::draw_noise(rng, noise, cond.nrows() * num_noise);
    let rep = repeat_rows(cond, num_noise);
    let finals = integrate(field, rep.view(), &z0, steps)?.final_values();
    Ok(finals
        .chunks(num_noise)
        .map(|c| c.iter().sum::<f64>() / num_noise as f64)
        .collect())
}
