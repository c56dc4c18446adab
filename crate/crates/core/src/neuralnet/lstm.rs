//! LSTM cell with an explicit backward pass.
//!
//! Gates act on the concatenation `[h_prev, x]`:
//!
//! ```text
//! f = σ(W_f·[h,x] + b_f)    i = σ(W_i·[h,x] + b_i)    o = σ(W_o·[h,x] + b_o)
//! C̃ = tanh(W_C·[h,x] + b_C)
//! C = f∗C_prev + i∗C̃        h = o∗tanh(C)
//! ```

use rand::Rng;

use super::tensor::{sigmoid, Matrix};
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_o: Matrix,
    pub w_c: Matrix,
    pub b_f: Vec<f64>,
    pub b_i: Vec<f64>,
    pub b_o: Vec<f64>,
    pub b_c: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = || Matrix::zeros(hidden, hidden + input);
        LstmParams {
            w_f: w(),
            w_i: w(),
            w_o: w(),
            w_c: w(),
            b_f: vec![0.0; hidden],
            b_i: vec![0.0; hidden],
            b_o: vec![0.0; hidden],
            b_c: vec![0.0; hidden],
        }
    }

    pub fn random<R: Rng>(hidden: usize, input: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = LstmParams::zeros(hidden, input);
        p.for_each_mut(|v| *v = rng.gen_range(-scale..=scale));
        p
    }

    pub fn hidden(&self) -> usize {
        self.b_f.len()
    }

    pub fn input(&self) -> usize {
        self.w_f.cols() - self.hidden()
    }

    pub fn param_count(&self) -> usize {
        4 * self.w_f.rows() * self.w_f.cols() + 4 * self.hidden()
    }

    /// Coordinates in canonical order: `W_f, W_i, W_o, W_C, b_f, b_i, b_o, b_C`.
    pub fn slices(&self) -> [&[f64]; 8] {
        [
            self.w_f.data(),
            self.w_i.data(),
            self.w_o.data(),
            self.w_c.data(),
            &self.b_f,
            &self.b_i,
            &self.b_o,
            &self.b_c,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 8] {
        [
            self.w_f.data_mut(),
            self.w_i.data_mut(),
            self.w_o.data_mut(),
            self.w_c.data_mut(),
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_o,
            &mut self.b_c,
        ]
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(&mut f);
        }
    }
}

/// Values kept from the forward pass of one step.
#[derive(Debug, Clone)]
pub struct StepCache {
    z: Vec<f64>,
    f: Vec<f64>,
    i: Vec<f64>,
    o: Vec<f64>,
    c_tilde: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// One forward step, returning `(h_t, C_t)`.
pub fn lstm_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams,
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let d = p.hidden();
    if h_prev.len() != d || c_prev.len() != d || x.len() != p.input() {
        return Err(NnError::DimensionMismatch(format!(
            "lstm step: hidden {d}, input {}, got h {} C {} x {}",
            p.input(),
            h_prev.len(),
            c_prev.len(),
            x.len()
        )));
    }
    let (h, c, _) = step_cached(x, h_prev, c_prev, p);
    Ok((h, c))
}

pub(crate) fn step_cached(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams,
) -> (Vec<f64>, Vec<f64>, StepCache) {
    let mut z = Vec::with_capacity(h_prev.len() + x.len());
    z.extend_from_slice(h_prev);
    z.extend_from_slice(x);

    let gate = |w: &Matrix, b: &[f64], act: fn(f64) -> f64| {
        let mut a = b.to_vec();
        w.matvec_acc(&z, &mut a);
        a.into_iter().map(act).collect::<Vec<f64>>()
    };
    let f = gate(&p.w_f, &p.b_f, sigmoid);
    let i = gate(&p.w_i, &p.b_i, sigmoid);
    let o = gate(&p.w_o, &p.b_o, sigmoid);
    let c_tilde = gate(&p.w_c, &p.b_c, f64::tanh);

    let c: Vec<f64> = (0..f.len())
        .map(|k| f[k] * c_prev[k] + i[k] * c_tilde[k])
        .collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();

    let cache = StepCache {
        z,
        f,
        i,
        o,
        c_tilde,
        c_prev: c_prev.to_vec(),
        tanh_c,
    };
    (h, c, cache)
}

/// Backward through one step.
///
/// `dh` and `dc` are the incoming gradients w.r.t. `h_t` and `C_t`. Parameter
/// gradients are accumulated into `grads`; returns `(dh_prev, dc_prev, dx)`.
pub(crate) fn step_backward(
    cache: &StepCache,
    dh: &[f64],
    dc: &[f64],
    p: &LstmParams,
    grads: &mut LstmParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = dh.len();
    let mut da_f = vec![0.0; d];
    let mut da_i = vec![0.0; d];
    let mut da_o = vec![0.0; d];
    let mut da_c = vec![0.0; d];
    let mut dc_prev = vec![0.0; d];
    for k in 0..d {
        let (f, i, o, ct, tc) = (
            cache.f[k],
            cache.i[k],
            cache.o[k],
            cache.c_tilde[k],
            cache.tanh_c[k],
        );
        let dc_total = dc[k] + dh[k] * o * (1.0 - tc * tc);
        da_o[k] = dh[k] * tc * o * (1.0 - o);
        da_f[k] = dc_total * cache.c_prev[k] * f * (1.0 - f);
        da_i[k] = dc_total * ct * i * (1.0 - i);
        da_c[k] = dc_total * i * (1.0 - ct * ct);
        dc_prev[k] = dc_total * f;
    }

    let mut dz = vec![0.0; cache.z.len()];
    for (w, gw, gb, da) in [
        (&p.w_f, &mut grads.w_f, &mut grads.b_f, &da_f),
        (&p.w_i, &mut grads.w_i, &mut grads.b_i, &da_i),
        (&p.w_o, &mut grads.w_o, &mut grads.b_o, &da_o),
        (&p.w_c, &mut grads.w_c, &mut grads.b_c, &da_c),
    ] {
        gw.outer_acc(da, &cache.z);
        for (b, a) in gb.iter_mut().zip(da.iter()) {
            *b += a;
        }
        w.matvec_t_acc(da, &mut dz);
    }
    let dx = dz.split_off(d);
    (dz, dc_prev, dx)
}
