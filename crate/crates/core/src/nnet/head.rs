//! Learned head `g_θ(u_t, t)`: 3×3 conv to `c` channels, FiLM modulation
//! `(1 + γ(t))·z + δ(t)`, SiLU, 3×3 conv back to one channel.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::mgcorr::{
    silu, silu_derivative, smoother_apply, smoother_kernel_grad, smoother_transpose, timestep_embedding,
    Kernel3,
};

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub channels: usize,
    pub d_emb: usize,
    pub conv1_w: Vec<Kernel3>,
    pub conv1_b: Vec<f64>,
    /// `[channel][d_emb]`
    pub film_scale_w: Vec<f64>,
    pub film_scale_b: Vec<f64>,
    pub film_shift_w: Vec<f64>,
    pub film_shift_b: Vec<f64>,
    pub conv2_w: Vec<Kernel3>,
    pub conv2_b: f64,
}

impl HeadParams {
    pub fn zeros(channels: usize, d_emb: usize) -> Self {
        Self {
            channels,
            d_emb,
            conv1_w: vec![[0.0; 9]; channels],
            conv1_b: vec![0.0; channels],
            film_scale_w: vec![0.0; channels * d_emb],
            film_scale_b: vec![0.0; channels],
            film_shift_w: vec![0.0; channels * d_emb],
            film_shift_b: vec![0.0; channels],
            conv2_w: vec![[0.0; 9]; channels],
            conv2_b: 0.0,
        }
    }

    /// First conv `N(0, 1/9)`, FiLM maps `N(0, 0.01/d_emb)`, biases and the
    /// last layer zero.
    pub fn init(channels: usize, d_emb: usize, rng: &mut impl Rng) -> Result<Self> {
        if channels == 0 || d_emb == 0 {
            return Err(Error::param("head", "channels and d_emb must be positive"));
        }
        let mut hp = Self::zeros(channels, d_emb);
        let conv = Normal::new(0.0, 1.0 / 3.0).expect("finite");
        for k in &mut hp.conv1_w {
            k.iter_mut().for_each(|w| *w = conv.sample(rng));
        }
        let film = Normal::new(0.0, 0.1 / (d_emb as f64).sqrt()).expect("finite");
        for w in hp.film_scale_w.iter_mut().chain(&mut hp.film_shift_w) {
            *w = film.sample(rng);
        }
        Ok(hp)
    }

    pub fn param_count(&self) -> usize {
        let c = self.channels;
        9 * c + c + 2 * (c * self.d_emb + c) + 9 * c + 1
    }

    pub fn validate(&self) -> Result<()> {
        let (c, d) = (self.channels, self.d_emb);
        let ok = self.conv1_w.len() == c
            && self.conv1_b.len() == c
            && self.film_scale_w.len() == c * d
            && self.film_scale_b.len() == c
            && self.film_shift_w.len() == c * d
            && self.film_shift_b.len() == c
            && self.conv2_w.len() == c;
        if !ok {
            return Err(Error::param("head", "weight shapes disagree with channels/d_emb"));
        }
        Ok(())
    }

    fn film(&self, emb: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.d_emb;
        let lin = |w: &[f64], b: &[f64]| -> Vec<f64> {
            (0..self.channels)
                .map(|c| b[c] + w[c * d..(c + 1) * d].iter().zip(emb).map(|(a, e)| a * e).sum::<f64>())
                .collect()
        };
        (
            lin(&self.film_scale_w, &self.film_scale_b),
            lin(&self.film_shift_w, &self.film_shift_b),
        )
    }
}

#[derive(Debug, Clone)]
pub(crate) struct HeadTape {
    emb: Vec<f64>,
    gamma: Vec<f64>,
    z: Vec<ScalarField>,
    pre: Vec<ScalarField>,
    act: Vec<ScalarField>,
}

pub(crate) fn head_forward_taped(u: &ScalarField, t: usize, total: usize, hp: &HeadParams) -> Result<(ScalarField, HeadTape)> {
    hp.validate()?;
    let emb = timestep_embedding(t, total, hp.d_emb)?;
    let (gamma, delta) = hp.film(&emb);
    let mut out = ScalarField::filled(*u.grid(), hp.conv2_b);
    let mut z = Vec::with_capacity(hp.channels);
    let mut pre = Vec::with_capacity(hp.channels);
    let mut act = Vec::with_capacity(hp.channels);
    for c in 0..hp.channels {
        let zc = smoother_apply(u, &hp.conv1_w[c], hp.conv1_b[c]);
        let pc = zc.map(|v| (1.0 + gamma[c]) * v + delta[c]);
        let ac = pc.map(silu);
        out.add_scaled(1.0, &smoother_apply(&ac, &hp.conv2_w[c], 0.0))?;
        z.push(zc);
        pre.push(pc);
        act.push(ac);
    }
    Ok((out, HeadTape { emb, gamma, z, pre, act }))
}

pub(crate) fn head_backward(tape: &HeadTape, hp: &HeadParams, u: &ScalarField, grad_out: &ScalarField, grad: &mut HeadParams) {
    let d = hp.d_emb;
    grad.conv2_b += grad_out.sum();
    for c in 0..hp.channels {
        for (g, v) in grad.conv2_w[c].iter_mut().zip(smoother_kernel_grad(&tape.act[c], grad_out)) {
            *g += v;
        }
        let d_act = smoother_transpose(grad_out, &hp.conv2_w[c]);
        let d_pre = d_act
            .zip_map(&tape.pre[c], |a, p| a * silu_derivative(p))
            .expect("same grid");
        let d_gamma = d_pre.dot(&tape.z[c]).expect("same grid");
        let d_delta = d_pre.sum();
        for k in 0..d {
            grad.film_scale_w[c * d + k] += d_gamma * tape.emb[k];
            grad.film_shift_w[c * d + k] += d_delta * tape.emb[k];
        }
        grad.film_scale_b[c] += d_gamma;
        grad.film_shift_b[c] += d_delta;
        let d_z = d_pre.scale(1.0 + tape.gamma[c]);
        grad.conv1_b[c] += d_z.sum();
        for (g, v) in grad.conv1_w[c].iter_mut().zip(smoother_kernel_grad(u, &d_z)) {
            *g += v;
        }
    }
}

pub fn head_forward(u: &ScalarField, t: usize, total: usize, hp: &HeadParams) -> Result<ScalarField> {
    Ok(head_forward_taped(u, t, total, hp)?.0)
}
