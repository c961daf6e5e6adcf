use rand::Rng;
use rand_distr::StandardNormal;
use ssdn_engine::{CustomOp, Real, Tape, Tensor, Var};

use crate::error::{contract, Result};

pub const NORM_EPS: f64 = 1e-5;

struct GroupNormOp<T> {
    num_groups: usize,
    /// Standardized input, same layout as x.
    xhat: Vec<T>,
    /// 1/sqrt(var + eps) per (sample, group).
    inv_std: Vec<T>,
}

impl<T: Real> CustomOp<T> for GroupNormOp<T> {
    fn name(&self) -> &str {
        "group_norm"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, grad: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let s = x.shape();
        let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
        let cpg = c / self.num_groups;
        let m = cpg * hw;
        let m_t = T::from_usize(m).unwrap();
        let g = grad.data();
        let mut dx = vec![T::zero(); x.numel()];
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for si in 0..n {
            for gi in 0..self.num_groups {
                let base = (si * c + gi * cpg) * hw;
                let mut sum_d = T::zero();
                let mut sum_dx = T::zero();
                for ch in 0..cpg {
                    let gam = gamma.data()[gi * cpg + ch];
                    let off = base + ch * hw;
                    let mut db = T::zero();
                    let mut dg = T::zero();
                    for j in off..off + hw {
                        db = db + g[j];
                        dg = dg + g[j] * self.xhat[j];
                        let d = g[j] * gam;
                        sum_d = sum_d + d;
                        sum_dx = sum_dx + d * self.xhat[j];
                    }
                    dbeta[gi * cpg + ch] = dbeta[gi * cpg + ch] + db;
                    dgamma[gi * cpg + ch] = dgamma[gi * cpg + ch] + dg;
                }
                let inv = self.inv_std[si * self.num_groups + gi];
                for ch in 0..cpg {
                    let gam = gamma.data()[gi * cpg + ch];
                    let off = base + ch * hw;
                    for j in off..off + hw {
                        let d = g[j] * gam;
                        dx[j] = inv * (d - sum_d / m_t - self.xhat[j] * sum_dx / m_t);
                    }
                }
            }
        }
        vec![
            Some(Tensor::new(s.to_vec(), dx).unwrap()),
            Some(Tensor::new([c], dgamma).unwrap()),
            Some(Tensor::new([c], dbeta).unwrap()),
        ]
    }
}

/// Per-sample, per-group standardization of `x [N,C,H,W]` followed by a
/// per-channel affine map.
pub fn group_norm<T: Real>(tape: &Tape<T>, x: Var, num_groups: usize, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
    let xv = tape.value(x)?;
    let s = xv.shape().to_vec();
    if s.len() != 4 {
        return Err(contract(format!("group_norm: expected [N,C,H,W], got {s:?}")));
    }
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    if num_groups == 0 || c % num_groups != 0 {
        return Err(contract(format!("group_norm: {c} channels not divisible into {num_groups} groups")));
    }
    let (gv, bv) = (tape.value(gamma)?, tape.value(beta)?);
    if gv.shape() != [c] || bv.shape() != [c] {
        return Err(contract(format!("group_norm: gamma {:?} / beta {:?} for {c} channels", gv.shape(), bv.shape())));
    }
    let cpg = c / num_groups;
    let m = cpg * hw;
    let m_t = T::from_usize(m).unwrap();
    let eps = T::from_f64_lossy(eps);
    let data = xv.data();
    let mut xhat = vec![T::zero(); data.len()];
    let mut out = vec![T::zero(); data.len()];
    let mut inv_std = Vec::with_capacity(n * num_groups);
    for si in 0..n {
        for gi in 0..num_groups {
            let base = (si * c + gi * cpg) * hw;
            let span = &data[base..base + m];
            let mean = span.iter().copied().sum::<T>() / m_t;
            let var = span.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m_t;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for ch in 0..cpg {
                let (gam, bet) = (gv.data()[gi * cpg + ch], bv.data()[gi * cpg + ch]);
                let off = base + ch * hw;
                for j in off..off + hw {
                    xhat[j] = (data[j] - mean) * inv;
                    out[j] = gam * xhat[j] + bet;
                }
            }
        }
    }
    drop((xv, gv, bv));
    let value = Tensor::new(s, out)?;
    Ok(tape.custom(&[x, gamma, beta], value, Box::new(GroupNormOp { num_groups, xhat, inv_std }))?)
}

/// Convolution filters that are either shared by the whole batch or
/// synthesized separately for every sample.
#[derive(Debug, Clone)]
pub enum ConvWeight {
    Shared(Var),
    PerSample(Vec<Var>),
}

/// Bias-free convolution with shared or per-sample filters.
pub fn conv<T: Real>(tape: &Tape<T>, x: Var, weight: &ConvWeight, stride: usize, pad: usize) -> Result<Var> {
    match weight {
        ConvWeight::Shared(w) => Ok(tape.conv2d(x, *w, None, stride, pad)?),
        ConvWeight::PerSample(ws) => {
            let n = tape.shape_of(x)?[0];
            if ws.len() != n {
                return Err(contract(format!("conv: {} per-sample filters for batch of {n}", ws.len())));
            }
            let outs = ws
                .iter()
                .enumerate()
                .map(|(i, w)| {
                    let xi = if n == 1 { x } else { tape.slice(x, 0, i, i + 1)? };
                    Ok(tape.conv2d(xi, *w, None, stride, pad)?)
                })
                .collect::<Result<Vec<_>>>()?;
            if outs.len() == 1 {
                Ok(outs[0])
            } else {
                Ok(tape.concat(&outs, 0)?)
            }
        }
    }
}

/// Graph handles for one pre-activation residual block.
#[derive(Debug, Clone)]
pub struct BlockWeights {
    pub norm1: (Var, Var),
    pub conv1: ConvWeight,
    pub norm2: (Var, Var),
    pub conv2: ConvWeight,
    pub proj: Option<ConvWeight>,
}

/// `norm → relu → conv3×3(stride) → norm → relu → conv3×3`, plus the input
/// (through a 1×1 projection when `proj` is present).
pub fn residual_block_forward<T: Real>(
    tape: &Tape<T>,
    x: Var,
    w: &BlockWeights,
    stride: usize,
    norm_groups: usize,
) -> Result<Var> {
    let h = group_norm(tape, x, norm_groups, w.norm1.0, w.norm1.1, NORM_EPS)?;
    let h = tape.relu(h)?;
    let h = conv(tape, h, &w.conv1, stride, 1)?;
    let h = group_norm(tape, h, norm_groups, w.norm2.0, w.norm2.1, NORM_EPS)?;
    let h = tape.relu(h)?;
    let h = conv(tape, h, &w.conv2, 1, 1)?;
    let skip = match &w.proj {
        Some(p) => conv(tape, x, p, stride, 0)?,
        None => x,
    };
    let (hs, ss) = (tape.shape_of(h)?, tape.shape_of(skip)?);
    if hs != ss {
        return Err(contract(format!(
            "residual block: branch {hs:?} vs skip {ss:?}; a projection is required when stride or width changes"
        )));
    }
    Ok(tape.add(h, skip)?)
}

/// He-normal initialization: N(0, 2/fan_in).
pub fn kaiming_normal<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(std * rng.sample::<f64, _>(StandardNormal))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
