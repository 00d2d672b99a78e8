use rand::Rng;

use crate::tensor::{Tensor, TensorError};

use super::DataError;

/// Pad-crop-flip augmentation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub target_h: usize,
    pub target_w: usize,
    /// Zero padding added on every side before cropping.
    pub pad: usize,
    pub flip_prob: f64,
}

impl AugmentConfig {
    /// 64x32 crops from a 72x40 zero-padded canvas.
    pub fn desk() -> Self {
        Self {
            target_h: 64,
            target_w: 32,
            pad: 4,
            flip_prob: 0.5,
        }
    }

    /// 256x128 crops from a 276x148 zero-padded canvas.
    pub fn paper() -> Self {
        Self {
            target_h: 256,
            target_w: 128,
            pad: 10,
            flip_prob: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(DataError::Augment(format!("flip_prob {} outside [0, 1]", self.flip_prob)));
        }
        if self.target_h == 0 || self.target_w == 0 {
            return Err(DataError::Augment("zero target size".into()));
        }
        Ok(())
    }
}

/// Per-channel standardization `(x - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

impl Normalization {
    pub fn apply(&self, image: &Tensor) -> Tensor {
        self.map(image, |v, c| (v - self.mean[c]) / self.std[c])
    }

    pub fn invert(&self, image: &Tensor) -> Tensor {
        self.map(image, |v, c| v * self.std[c] + self.mean[c])
    }

    fn map(&self, image: &Tensor, f: impl Fn(f64, usize) -> f64) -> Tensor {
        let plane = image.shape()[1..].iter().product::<usize>();
        let data = image
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, (i / plane) % 3))
            .collect();
        Tensor::new(image.shape(), data).expect("same shape")
    }
}

fn check_chw(image: &Tensor) -> Result<(usize, usize, usize), TensorError> {
    match *image.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(TensorError::InvalidShape(format!(
            "expected C x H x W image, got {:?}",
            image.shape()
        ))),
    }
}

/// Zero-pad by `pad` on each side, then take the `out_h x out_w` window
/// whose top-left corner sits at (`top`, `left`) in padded coordinates.
pub fn pad_and_crop(
    image: &Tensor,
    pad: usize,
    top: usize,
    left: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor, DataError> {
    let (c, h, w) = check_chw(image)?;
    if top + out_h > h + 2 * pad || left + out_w > w + 2 * pad {
        return Err(DataError::Augment(format!(
            "crop {out_h}x{out_w} at ({top}, {left}) leaves the padded {}x{} canvas",
            h + 2 * pad,
            w + 2 * pad
        )));
    }
    let src = image.data();
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        for i in 0..out_h {
            let si = (top + i) as isize - pad as isize;
            if si < 0 || si as usize >= h {
                continue;
            }
            for j in 0..out_w {
                let sj = (left + j) as isize - pad as isize;
                if sj >= 0 && (sj as usize) < w {
                    out[(ch * out_h + i) * out_w + j] = src[(ch * h + si as usize) * w + sj as usize];
                }
            }
        }
    }
    Ok(Tensor::new(&[c, out_h, out_w], out)?)
}

/// Random zero-pad + crop back to target size, then a random horizontal
/// flip. The input must already be at the target size.
pub fn augment_train<R: Rng + ?Sized>(image: &Tensor, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor, DataError> {
    cfg.validate()?;
    let (_, h, w) = check_chw(image)?;
    if (h, w) != (cfg.target_h, cfg.target_w) {
        return Err(DataError::Augment(format!(
            "image is {h}x{w}, expected {}x{}",
            cfg.target_h, cfg.target_w
        )));
    }
    let top = rng.gen_range(0..=2 * cfg.pad);
    let left = rng.gen_range(0..=2 * cfg.pad);
    let cropped = pad_and_crop(image, cfg.pad, top, left, h, w)?;
    let flip = rng.gen::<f64>() < cfg.flip_prob;
    Ok(if flip { cropped.flip_last_axis() } else { cropped })
}

/// Bilinear resampling with half-pixel centers.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor, TensorError> {
    let (c, h, w) = check_chw(image)?;
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    if out_h == 0 || out_w == 0 {
        return Err(TensorError::InvalidShape("zero output size".into()));
    }
    let axis = |dst: usize, src_len: usize, dst_len: usize| {
        let scale = src_len as f64 / dst_len as f64;
        let x = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (x.floor() as usize).min(src_len - 1);
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, x - i0 as f64)
    };
    let src = image.data();
    let mut out = vec![0.0; c * out_h * out_w];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for i in 0..out_h {
            let (y0, y1, fy) = axis(i, h, out_h);
            for j in 0..out_w {
                let (x0, x1, fx) = axis(j, w, out_w);
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                out[(ch * out_h + i) * out_w + j] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}
