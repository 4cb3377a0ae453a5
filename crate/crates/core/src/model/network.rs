use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::params::{CfrGradients, CfrParams};

/// Whether dropout is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout masks drawn from a generator seeded with this value.
    Train(u64),
}

/// Observed `(x, t, y)` triples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FactualBatch {
    pub x: Vec<Vec<f64>>,
    pub t: Vec<u8>,
    pub y: Vec<f64>,
}

impl FactualBatch {
    pub fn new(x: Vec<Vec<f64>>, t: Vec<u8>, y: Vec<f64>) -> Result<Self> {
        if x.len() != t.len() || x.len() != y.len() {
            return Err(Error::invalid("batch columns have different lengths"));
        }
        if t.iter().any(|&v| v > 1) {
            return Err(Error::invalid("treatment flags must be 0 or 1"));
        }
        Ok(Self { x, t, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn group_sizes(&self) -> [usize; 2] {
        let n1 = self.t.iter().filter(|&&t| t == 1).count();
        [self.len() - n1, n1]
    }
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

struct Dropout {
    rng: Option<ChaCha8Rng>,
    keep: f64,
}

impl Dropout {
    fn new(mode: Mode, rate: f64) -> Self {
        match mode {
            Mode::Train(seed) if rate > 0.0 => Self {
                rng: Some(ChaCha8Rng::seed_from_u64(seed)),
                keep: 1.0 - rate,
            },
            _ => Self { rng: None, keep: 1.0 },
        }
    }

    /// Scale factors (0 or `1/keep`) for `n` units, or `None` in eval mode.
    fn mask(&mut self, n: usize) -> Option<Vec<f64>> {
        let keep = self.keep;
        self.rng.as_mut().map(|rng| {
            (0..n)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect()
        })
    }
}

fn apply_mask(v: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        v.iter_mut().zip(m).for_each(|(x, s)| *x *= s);
    }
}

/// Intermediate values of one encoder pass.
pub(crate) struct EncoderTrace {
    pre1: Vec<f64>,
    mask1: Option<Vec<f64>>,
    h1: Vec<f64>,
    pre2: Vec<f64>,
    mask2: Option<Vec<f64>>,
    pub(crate) z: Vec<f64>,
}

struct HeadTrace {
    pre: Vec<f64>,
    mask: Option<Vec<f64>>,
    hidden: Vec<f64>,
}

fn encoder_forward(params: &CfrParams, x: &[f64], drop: &mut Dropout) -> EncoderTrace {
    let [l1, l2] = &params.encoder;
    let mut pre1 = vec![0.0; l1.outputs];
    l1.apply(x, &mut pre1);
    let mut h1: Vec<f64> = pre1.iter().map(|&v| elu(v)).collect();
    let mask1 = drop.mask(h1.len());
    apply_mask(&mut h1, &mask1);
    let mut pre2 = vec![0.0; l2.outputs];
    l2.apply(&h1, &mut pre2);
    let mut z: Vec<f64> = if params.bounded_latent {
        pre2.iter().map(|v| v.tanh()).collect()
    } else {
        pre2.iter().map(|&v| elu(v)).collect()
    };
    let mask2 = drop.mask(z.len());
    apply_mask(&mut z, &mask2);
    EncoderTrace {
        pre1,
        mask1,
        h1,
        pre2,
        mask2,
        z,
    }
}

fn encoder_backward(params: &CfrParams, x: &[f64], tr: &EncoderTrace, dz: &[f64], grad: &mut CfrGradients) {
    let [l1, l2] = &params.encoder;
    let mut d_pre2: Vec<f64> = dz.to_vec();
    apply_mask(&mut d_pre2, &tr.mask2);
    for (d, &p) in d_pre2.iter_mut().zip(&tr.pre2) {
        *d *= if params.bounded_latent {
            1.0 - p.tanh().powi(2)
        } else {
            elu_grad(p)
        };
    }
    let mut d_h1 = vec![0.0; l1.outputs];
    let [g1, g2] = &mut grad.encoder;
    l2.backprop(&tr.h1, &d_pre2, g2, Some(&mut d_h1));
    apply_mask(&mut d_h1, &tr.mask1);
    for (d, &p) in d_h1.iter_mut().zip(&tr.pre1) {
        *d *= elu_grad(p);
    }
    l1.backprop(x, &d_h1, g1, None);
}

fn head_forward(params: &CfrParams, z: &[f64], t: u8, drop: &mut Dropout) -> (f64, HeadTrace) {
    let head = &params.heads[t as usize];
    let mut pre = vec![0.0; head.hidden.outputs];
    head.hidden.apply(z, &mut pre);
    let mut hidden: Vec<f64> = pre.iter().map(|&v| elu(v)).collect();
    let mask = drop.mask(hidden.len());
    apply_mask(&mut hidden, &mask);
    let mut y = [0.0];
    head.output.apply(&hidden, &mut y);
    (y[0], HeadTrace { pre, mask, hidden })
}

fn head_backward(
    params: &CfrParams,
    z: &[f64],
    t: u8,
    tr: &HeadTrace,
    dy: f64,
    grad: &mut CfrGradients,
) -> Vec<f64> {
    let head = &params.heads[t as usize];
    let g = &mut grad.heads[t as usize];
    let mut d_hidden = vec![0.0; head.hidden.outputs];
    head.output.backprop(&tr.hidden, &[dy], &mut g.output, Some(&mut d_hidden));
    apply_mask(&mut d_hidden, &tr.mask);
    for (d, &p) in d_hidden.iter_mut().zip(&tr.pre) {
        *d *= elu_grad(p);
    }
    let mut dz = vec![0.0; z.len()];
    head.hidden.backprop(z, &d_hidden, &mut g.hidden, Some(&mut dz));
    dz
}

fn check_input(params: &CfrParams, x: &[f64]) -> Result<()> {
    if x.len() != params.encoder[0].inputs {
        return Err(Error::invalid(format!(
            "input has dimension {}, model expects {}",
            x.len(),
            params.encoder[0].inputs
        )));
    }
    Ok(())
}

/// Latent code and the factual prediction of head `t` for one input.
pub fn forward(params: &CfrParams, x: &[f64], t: u8, train_mode: bool, rng_seed: u64) -> Result<(Vec<f64>, f64)> {
    params.check_finite()?;
    check_input(params, x)?;
    if t > 1 {
        return Err(Error::invalid("treatment flag must be 0 or 1"));
    }
    let mode = if train_mode { Mode::Train(rng_seed) } else { Mode::Eval };
    let mut drop = Dropout::new(mode, params.dropout_rate);
    let enc = encoder_forward(params, x, &mut drop);
    let (y, _) = head_forward(params, &enc.z, t, &mut drop);
    Ok((enc.z, y))
}

/// Eval-mode latent codes for a set of inputs.
pub fn encode(params: &CfrParams, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    params.check_finite()?;
    let mut drop = Dropout::new(Mode::Eval, 0.0);
    xs.iter()
        .map(|x| {
            check_input(params, x)?;
            Ok(encoder_forward(params, x, &mut drop).z)
        })
        .collect()
}

/// Eval-mode predictions `(y0_hat, y1_hat)` from both heads.
pub fn predict_both(params: &CfrParams, xs: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
    params.check_finite()?;
    let mut drop = Dropout::new(Mode::Eval, 0.0);
    xs.iter()
        .map(|x| {
            check_input(params, x)?;
            let enc = encoder_forward(params, x, &mut drop);
            let (y0, _) = head_forward(params, &enc.z, 0, &mut drop);
            let (y1, _) = head_forward(params, &enc.z, 1, &mut drop);
            Ok((y0, y1))
        })
        .collect()
}

fn check_batch(params: &CfrParams, batch: &FactualBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if batch.t.len() != batch.len() || batch.y.len() != batch.len() {
        return Err(Error::invalid("batch columns have different lengths"));
    }
    batch.x.iter().try_for_each(|x| check_input(params, x))?;
    if batch.t.iter().any(|&t| t > 1) {
        return Err(Error::invalid("treatment flags must be 0 or 1"));
    }
    Ok(())
}

/// Group-normalized squared error `sum_t (1/N_t) sum_{n in t} (h_t(phi(x_n)) - y_n)^2`.
pub fn factual_loss(params: &CfrParams, batch: &FactualBatch) -> Result<f64> {
    factual_loss_mode(params, batch, Mode::Eval)
}

pub(crate) fn factual_loss_mode(params: &CfrParams, batch: &FactualBatch, mode: Mode) -> Result<f64> {
    params.check_finite()?;
    check_batch(params, batch)?;
    let sizes = batch.group_sizes();
    let mut drop = Dropout::new(mode, params.dropout_rate);
    let mut loss = 0.0;
    for ((x, &t), &y) in batch.x.iter().zip(&batch.t).zip(&batch.y) {
        let enc = encoder_forward(params, x, &mut drop);
        let (y_hat, _) = head_forward(params, &enc.z, t, &mut drop);
        loss += (y_hat - y).powi(2) / sizes[t as usize] as f64;
    }
    Ok(loss)
}

/// Factual loss and its gradient with respect to every parameter.
pub fn factual_loss_grad(params: &CfrParams, batch: &FactualBatch, mode: Mode) -> Result<(f64, CfrGradients)> {
    params.check_finite()?;
    check_batch(params, batch)?;
    let sizes = batch.group_sizes();
    let mut drop = Dropout::new(mode, params.dropout_rate);
    let mut grad = params.zeros_like();
    let mut loss = 0.0;
    for ((x, &t), &y) in batch.x.iter().zip(&batch.t).zip(&batch.y) {
        let enc = encoder_forward(params, x, &mut drop);
        let (y_hat, head) = head_forward(params, &enc.z, t, &mut drop);
        let w = 1.0 / sizes[t as usize] as f64;
        let r = y_hat - y;
        loss += w * r * r;
        let dz = head_backward(params, &enc.z, t, &head, 2.0 * w * r, &mut grad);
        encoder_backward(params, x, &enc, &dz, &mut grad);
    }
    Ok((loss, grad))
}

/// Backpropagate latent-space gradients `dz[i]` (for eval-mode codes of
/// `xs[i]`) into the encoder parameters of `grad`.
pub(crate) fn encoder_pullback(params: &CfrParams, xs: &[Vec<f64>], dz: &[Vec<f64>], grad: &mut CfrGradients) {
    let mut drop = Dropout::new(Mode::Eval, 0.0);
    for (x, d) in xs.iter().zip(dz) {
        if d.iter().all(|&v| v == 0.0) {
            continue;
        }
        let enc = encoder_forward(params, x, &mut drop);
        encoder_backward(params, x, &enc, d, grad);
    }
}
