use rand::Rng;

use crate::error::{Error, Result};

/// One direction of a GRU layer. Matrices are row-major, `hidden x input`
/// for input weights and `hidden x hidden` for recurrent ones.
#[derive(Debug, Clone, PartialEq)]
pub struct GruDirectionParams {
    pub hidden: usize,
    pub input: usize,
    pub w_z: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_h: Vec<f64>,
    pub u_z: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_h: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

pub(crate) const GRU_TENSORS: [&str; 9] = ["w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"];

impl GruDirectionParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let (w, u, b) = (vec![0.0; hidden * input], vec![0.0; hidden * hidden], vec![0.0; hidden]);
        Self {
            hidden,
            input,
            w_z: w.clone(),
            w_r: w.clone(),
            w_h: w,
            u_z: u.clone(),
            u_r: u.clone(),
            u_h: u,
            b_z: b.clone(),
            b_r: b.clone(),
            b_h: b,
        }
    }

    /// Uniform initialization scaled by fan-in.
    pub fn random(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(hidden, input);
        let (sw, su) = (1.0 / (input as f64).sqrt(), 1.0 / (hidden as f64).sqrt());
        for w in [&mut p.w_z, &mut p.w_r, &mut p.w_h] {
            w.iter_mut().for_each(|v| *v = rng.random_range(-sw..sw));
        }
        for u in [&mut p.u_z, &mut p.u_r, &mut p.u_h] {
            u.iter_mut().for_each(|v| *v = rng.random_range(-su..su));
        }
        p
    }

    pub fn shapes(&self) -> [[usize; 2]; 9] {
        let (h, i) = (self.hidden, self.input);
        [[h, i], [h, i], [h, i], [h, h], [h, h], [h, h], [h, 1], [h, 1], [h, 1]]
    }

    pub fn tensors(&self) -> [&Vec<f64>; 9] {
        [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes();
        for (i, t) in self.tensors().iter().enumerate() {
            if t.len() != shapes[i][0] * shapes[i][1] {
                return Err(Error::ShapeMismatch(format!(
                    "GRU tensor {} has {} values, expected {:?}",
                    GRU_TENSORS[i],
                    t.len(),
                    shapes[i]
                )));
            }
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `y += A x` for a row-major `rows x cols` matrix.
#[inline]
fn gemv_acc(a: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    for (row, yi) in a.chunks_exact(cols).zip(y.iter_mut()) {
        *yi += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `y += Aᵀ x` for a row-major `rows x cols` matrix.
#[inline]
fn gemv_t_acc(a: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = y.len();
    for (row, xi) in a.chunks_exact(cols).zip(x) {
        for (yj, aij) in y.iter_mut().zip(row) {
            *yj += aij * xi;
        }
    }
}

/// `A += x yᵀ`
#[inline]
fn outer_acc(a: &mut [f64], x: &[f64], y: &[f64]) {
    let cols = y.len();
    for (row, xi) in a.chunks_exact_mut(cols).zip(x) {
        for (aij, yj) in row.iter_mut().zip(y) {
            *aij += xi * yj;
        }
    }
}

struct Gates<'a> {
    z: &'a mut [f64],
    r: &'a mut [f64],
    cand: &'a mut [f64],
    out: &'a mut [f64],
}

fn cell_into(p: &GruDirectionParams, x: &[f64], h: &[f64], g: Gates<'_>, scratch: &mut [f64]) {
    g.z.copy_from_slice(&p.b_z);
    gemv_acc(&p.w_z, x, g.z);
    gemv_acc(&p.u_z, h, g.z);
    g.r.copy_from_slice(&p.b_r);
    gemv_acc(&p.w_r, x, g.r);
    gemv_acc(&p.u_r, h, g.r);
    for i in 0..p.hidden {
        g.z[i] = sigmoid(g.z[i]);
        g.r[i] = sigmoid(g.r[i]);
        scratch[i] = g.r[i] * h[i];
    }
    g.cand.copy_from_slice(&p.b_h);
    gemv_acc(&p.w_h, x, g.cand);
    gemv_acc(&p.u_h, scratch, g.cand);
    for i in 0..p.hidden {
        g.cand[i] = g.cand[i].tanh();
        g.out[i] = (1.0 - g.z[i]) * h[i] + g.z[i] * g.cand[i];
    }
}

/// `h' = (1 − z) ⊙ h + z ⊙ tanh(W_h x + U_h (r ⊙ h) + b_h)`.
pub fn gru_cell(p: &GruDirectionParams, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    p.validate()?;
    if x.len() != p.input || h.len() != p.hidden {
        return Err(Error::ShapeMismatch(format!(
            "GRU cell expects input {} and hidden {}, got {} and {}",
            p.input,
            p.hidden,
            x.len(),
            h.len()
        )));
    }
    let n = p.hidden;
    let (mut z, mut r, mut cand, mut out, mut scratch) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    cell_into(p, x, h, Gates { z: &mut z, r: &mut r, cand: &mut cand, out: &mut out }, &mut scratch);
    Ok(out)
}

/// Activations of one direction over a window, indexed by time step.
#[derive(Debug, Clone)]
pub(crate) struct DirectionCache {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub cand: Vec<f64>,
    /// Hidden state after consuming step `t`.
    pub h: Vec<f64>,
}

/// Run one direction over `xs` (`steps x input`, row-major). With `reverse`
/// the sequence is consumed from the last step to the first.
pub(crate) fn run_direction(p: &GruDirectionParams, xs: &[f64], steps: usize, reverse: bool) -> DirectionCache {
    let n = p.hidden;
    let mut c = DirectionCache {
        z: vec![0.0; steps * n],
        r: vec![0.0; steps * n],
        cand: vec![0.0; steps * n],
        h: vec![0.0; steps * n],
    };
    let zero = vec![0.0; n];
    let mut prev = zero.clone();
    let mut scratch = vec![0.0; n];
    for k in 0..steps {
        let t = if reverse { steps - 1 - k } else { k };
        let x = &xs[t * p.input..(t + 1) * p.input];
        let s = t * n..(t + 1) * n;
        cell_into(
            p,
            x,
            &prev,
            Gates {
                z: &mut c.z[s.clone()],
                r: &mut c.r[s.clone()],
                cand: &mut c.cand[s.clone()],
                out: &mut c.h[s.clone()],
            },
            &mut scratch,
        );
        prev.copy_from_slice(&c.h[s]);
    }
    c
}

/// Backpropagate `dh_feat` (gradient on every step's hidden state) through
/// the direction, accumulating parameter gradients into `grad`.
pub(crate) fn backprop_direction(
    p: &GruDirectionParams,
    xs: &[f64],
    cache: &DirectionCache,
    dh_feat: &[f64],
    steps: usize,
    reverse: bool,
    grad: &mut GruDirectionParams,
) {
    let n = p.hidden;
    let zero = vec![0.0; n];
    let mut carry = vec![0.0; n];
    let mut dh = vec![0.0; n];
    let mut da_z = vec![0.0; n];
    let mut da_r = vec![0.0; n];
    let mut da_h = vec![0.0; n];
    let mut rh = vec![0.0; n];
    let mut d_rh = vec![0.0; n];
    // processing order reversed
    for k in (0..steps).rev() {
        let t = if reverse { steps - 1 - k } else { k };
        let h_prev: &[f64] = if k == 0 {
            &zero
        } else {
            let tp = if reverse { t + 1 } else { t - 1 };
            &cache.h[tp * n..(tp + 1) * n]
        };
        let x = &xs[t * p.input..(t + 1) * p.input];
        let s = t * n..(t + 1) * n;
        let (z, r, cand) = (&cache.z[s.clone()], &cache.r[s.clone()], &cache.cand[s.clone()]);
        for i in 0..n {
            dh[i] = dh_feat[t * n + i] + carry[i];
        }
        for i in 0..n {
            let dz = dh[i] * (cand[i] - h_prev[i]);
            da_h[i] = dh[i] * z[i] * (1.0 - cand[i] * cand[i]);
            da_z[i] = dz * z[i] * (1.0 - z[i]);
            carry[i] = dh[i] * (1.0 - z[i]);
            rh[i] = r[i] * h_prev[i];
        }
        d_rh.iter_mut().for_each(|v| *v = 0.0);
        gemv_t_acc(&p.u_h, &da_h, &mut d_rh);
        for i in 0..n {
            da_r[i] = d_rh[i] * h_prev[i] * r[i] * (1.0 - r[i]);
            carry[i] += d_rh[i] * r[i];
        }
        gemv_t_acc(&p.u_z, &da_z, &mut carry);
        gemv_t_acc(&p.u_r, &da_r, &mut carry);

        outer_acc(&mut grad.w_z, &da_z, x);
        outer_acc(&mut grad.w_r, &da_r, x);
        outer_acc(&mut grad.w_h, &da_h, x);
        outer_acc(&mut grad.u_z, &da_z, h_prev);
        outer_acc(&mut grad.u_r, &da_r, h_prev);
        outer_acc(&mut grad.u_h, &da_h, &rh);
        for i in 0..n {
            grad.b_z[i] += da_z[i];
            grad.b_r[i] += da_r[i];
            grad.b_h[i] += da_h[i];
        }
    }
}
