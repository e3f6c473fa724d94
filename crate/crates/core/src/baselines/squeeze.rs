use serde::{Deserialize, Serialize};

use crate::diffnet::Model;
use crate::error::{Error, Result};
use crate::tensor::{l1_distance, Tensor};

/// Simplified non-local means: each pixel becomes a weighted mean over a
/// search window, weighted by `exp(-d²/strength²)` where `d²` is the mean
/// squared difference of the surrounding patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NlmParams {
    pub patch: usize,
    pub search: usize,
    pub strength: f64,
}

impl Default for NlmParams {
    fn default() -> Self {
        Self {
            patch: 3,
            search: 7,
            strength: 0.1,
        }
    }
}

/// `None` disables a transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SqueezeConfig {
    pub median_window: Option<usize>,
    pub bit_depth: Option<u32>,
    pub nlm: Option<NlmParams>,
}

impl Default for SqueezeConfig {
    fn default() -> Self {
        Self {
            median_window: Some(3),
            bit_depth: Some(5),
            nlm: Some(NlmParams::default()),
        }
    }
}

impl SqueezeConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.median_window {
            if w < 3 || w % 2 == 0 {
                return Err(Error::InvalidConfig(format!("median window must be odd and >= 3, got {w}")));
            }
        }
        if let Some(b) = self.bit_depth {
            if !(1..=8).contains(&b) {
                return Err(Error::InvalidConfig(format!("bit depth must lie in [1, 8], got {b}")));
            }
        }
        if let Some(n) = self.nlm {
            if n.patch % 2 == 0 || n.search % 2 == 0 || !(n.strength > 0.0) {
                return Err(Error::InvalidConfig("non-local means needs odd patch/search sizes and positive strength".into()));
            }
        }
        if self.transforms().is_empty() {
            return Err(Error::InvalidConfig("feature squeezing needs at least one transform".into()));
        }
        Ok(())
    }

    pub fn transforms(&self) -> Vec<Squeeze> {
        let mut out = Vec::new();
        if let Some(w) = self.median_window {
            out.push(Squeeze::Median(w));
        }
        if let Some(b) = self.bit_depth {
            out.push(Squeeze::BitDepth(b));
        }
        if let Some(n) = self.nlm {
            out.push(Squeeze::NonLocalMeans(n));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Squeeze {
    Median(usize),
    BitDepth(u32),
    NonLocalMeans(NlmParams),
}

/// `(channels, height, width)` view of an input shape. Vectors are
/// treated as a single row.
fn planes(shape: &[usize]) -> (usize, usize, usize) {
    match shape {
        [c, h, w] => (*c, *h, *w),
        [h, w] => (1, *h, *w),
        _ => (1, 1, shape.iter().product()),
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

impl Squeeze {
    pub fn apply(&self, x: &Tensor) -> Tensor {
        match *self {
            Squeeze::Median(k) => x.with_data(median(x, k).0),
            Squeeze::BitDepth(b) => {
                let levels = ((1u32 << b) - 1) as f64;
                x.map(|v| (v * levels).round() / levels)
            }
            Squeeze::NonLocalMeans(p) => x.with_data(non_local_means(x, p)),
        }
    }

    /// Pulls `grad_out` back to the input. The median filter routes each
    /// output gradient to the selected pixel; the other transforms use the
    /// identity.
    pub fn backward(&self, x: &Tensor, grad_out: &[f64]) -> Vec<f64> {
        match *self {
            Squeeze::Median(k) => {
                let (_, src) = median(x, k);
                let mut g = vec![0.0; x.len()];
                for (o, &s) in src.iter().enumerate() {
                    g[s] += grad_out[o];
                }
                g
            }
            _ => grad_out.to_vec(),
        }
    }
}

/// Reflect-padded median filter; also returns the source index of each
/// output value (ties broken by index).
fn median(x: &Tensor, k: usize) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = planes(x.shape());
    let d = x.data();
    let r = (k / 2) as isize;
    let mut out = vec![0.0; d.len()];
    let mut src = vec![0usize; d.len()];
    let mut window: Vec<(f64, usize)> = Vec::with_capacity(k * k);
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h {
            for j in 0..w {
                window.clear();
                for di in -r..=r {
                    for dj in -r..=r {
                        let idx = base + reflect(i as isize + di, h) * w + reflect(j as isize + dj, w);
                        window.push((d[idx], idx));
                    }
                }
                window.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let (v, s) = window[window.len() / 2];
                out[base + i * w + j] = v;
                src[base + i * w + j] = s;
            }
        }
    }
    (out, src)
}

fn non_local_means(x: &Tensor, p: NlmParams) -> Vec<f64> {
    let (c, h, w) = planes(x.shape());
    let d = x.data();
    let pr = (p.patch / 2) as isize;
    let sr = (p.search / 2) as isize;
    let h2 = p.strength * p.strength;
    let patch_len = (p.patch * p.patch) as f64;
    let at = |base: usize, i: isize, j: isize| d[base + reflect(i, h) * w + reflect(j, w)];
    let mut out = vec![0.0; d.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h as isize {
            for j in 0..w as isize {
                let (mut num, mut den) = (0.0, 0.0);
                for si in -sr..=sr {
                    for sj in -sr..=sr {
                        let (qi, qj) = (i + si, j + sj);
                        let mut dist = 0.0;
                        for oi in -pr..=pr {
                            for oj in -pr..=pr {
                                let diff = at(base, i + oi, j + oj) - at(base, qi + oi, qj + oj);
                                dist += diff * diff;
                            }
                        }
                        let weight = (-(dist / patch_len) / h2).exp();
                        num += weight * at(base, qi, qj);
                        den += weight;
                    }
                }
                out[base + i as usize * w + j as usize] = (num / den).clamp(0.0, 1.0);
            }
        }
    }
    out
}

pub fn squeeze_transforms(x: &Tensor, config: &SqueezeConfig) -> Result<Vec<Tensor>> {
    config.validate()?;
    Ok(config.transforms().iter().map(|t| t.apply(x)).collect())
}

/// Largest L1 change of the prediction over the squeezing transforms.
pub fn fs_statistic(model: &Model, x: &Tensor, config: &SqueezeConfig) -> Result<f64> {
    let p = model.probs(x)?;
    let mut best: f64 = 0.0;
    for t in squeeze_transforms(x, config)? {
        best = best.max(l1_distance(&p, &model.probs(&t)?));
    }
    Ok(best)
}
