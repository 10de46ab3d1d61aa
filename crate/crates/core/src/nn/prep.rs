//! Input preparation: the pad-to-square adaptive path and the crop / resize
//! alternatives it is compared against.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::Var;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pad-to-square input geometry and the post-stem pooling target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AabConfig {
    /// Side of the square canvas the long edge is scaled to.
    pub square_side: usize,
    /// Spatial extent the stem output is pooled to.
    pub pool_target: usize,
    pub first_conv_stride: usize,
}

impl Default for AabConfig {
    fn default() -> Self {
        Self { square_side: 800, pool_target: 190, first_conv_stride: 2 }
    }
}

impl AabConfig {
    pub fn validate(&self) -> Result<()> {
        if self.square_side == 0 || self.pool_target == 0 || self.first_conv_stride == 0 {
            return Err(Error::Config("aab sizes must be positive".into()));
        }
        if self.pool_target > self.square_side / self.first_conv_stride {
            return Err(Error::Config(format!(
                "aab pool target {} exceeds stem output {}",
                self.pool_target,
                self.square_side / self.first_conv_stride
            )));
        }
        Ok(())
    }
}

/// Preprocessing variant applied before the backbone.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Prep {
    Crop,
    Resize,
    #[default]
    Aab,
}

impl fmt::Display for Prep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Prep::Crop => "crop",
            Prep::Resize => "resize",
            Prep::Aab => "aab",
        })
    }
}

impl FromStr for Prep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crop" => Ok(Prep::Crop),
            "resize" => Ok(Prep::Resize),
            "aab" => Ok(Prep::Aab),
            other => Err(Error::Config(format!("unknown preprocessing {other:?}"))),
        }
    }
}

impl Prep {
    /// Applies the variant, producing a `C×side×side` tensor.
    pub fn apply<T: Scalar>(self, img: &Tensor<T>, side: usize) -> Result<Tensor<T>> {
        match self {
            Prep::Crop => preprocess_crop(img, side),
            Prep::Resize => preprocess_resize(img, side),
            Prep::Aab => aab_prepare(img, &AabConfig { square_side: side, pool_target: 1, first_conv_stride: 1 }),
        }
    }
}

fn image_dims<T: Scalar>(img: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *img.dims() {
        [c, h, w] => Ok((c, h, w)),
        _ => shape_err(format!("image must be C×H×W, got {:?}", img.dims())),
    }
}

/// Scales `len` by `num/den`, rounding half away from zero, never below 1.
fn scaled(len: usize, num: usize, den: usize) -> usize {
    ((len as f64 * num as f64 / den as f64).round() as usize).max(1)
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn bilinear_resize<T: Scalar>(img: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(img)?;
    if out_h == 0 || out_w == 0 {
        return shape_err("resize target must be positive");
    }
    if (h, w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let taps = |out: usize, len: usize| -> Vec<(usize, usize, T)> {
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * len as f64 / out as f64 - 0.5).clamp(0.0, (len - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(len - 1);
                (i0, i1, T::lit(src - i0 as f64))
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let src = img.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                let bottom = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                out.push(top * (T::one() - fy) + bottom * fy);
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

/// Scales the long edge to the canvas side and centres the content on a zero
/// canvas; the odd leftover pixel of padding goes to the bottom / right.
pub fn aab_prepare<T: Scalar>(img: &Tensor<T>, cfg: &AabConfig) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(img)?;
    let s = cfg.square_side;
    if s == 0 {
        return Err(Error::Config("aab square side must be positive".into()));
    }
    let (nh, nw) = if h >= w { (s, scaled(w, s, h).min(s)) } else { (scaled(h, s, w).min(s), s) };
    let content = bilinear_resize(img, nh, nw)?;
    if (nh, nw) == (s, s) {
        return Ok(content);
    }
    let (top, left) = ((s - nh) / 2, (s - nw) / 2);
    let mut out = Tensor::zeros(vec![c, s, s]);
    let dst = out.data_mut();
    let src = content.data();
    for ch in 0..c {
        for y in 0..nh {
            let d = (ch * s + top + y) * s + left;
            let o = (ch * nh + y) * nw;
            dst[d..d + nw].copy_from_slice(&src[o..o + nw]);
        }
    }
    Ok(out)
}

/// Pools the stem output of a prepared canvas to `T×T`.
pub fn aab_pool<'t, T: Scalar>(features: Var<'t, T>, cfg: &AabConfig) -> Result<Var<'t, T>> {
    let dims = features.dims();
    if dims.len() != 3 {
        return shape_err(format!("aab pool expects C×H×W, got {dims:?}"));
    }
    let t = cfg.pool_target;
    if t > dims[1] || t > dims[2] {
        return shape_err(format!("aab pool target {t} exceeds feature map {}x{}", dims[1], dims[2]));
    }
    features.adaptive_avg_pool2d(t, t)
}

/// Scales the short edge to `side` and takes the centred `side×side` window.
pub fn preprocess_crop<T: Scalar>(img: &Tensor<T>, side: usize) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims(img)?;
    let (nh, nw) = if h <= w { (side, scaled(w, side, h).max(side)) } else { (scaled(h, side, w).max(side), side) };
    let scaled_img = bilinear_resize(img, nh, nw)?;
    let (top, left) = ((nh - side) / 2, (nw - side) / 2);
    let src = scaled_img.data();
    let mut out = Vec::with_capacity(c * side * side);
    for ch in 0..c {
        for y in 0..side {
            let o = (ch * nh + top + y) * nw + left;
            out.extend_from_slice(&src[o..o + side]);
        }
    }
    Ok(Tensor::from_parts(vec![c, side, side], out))
}

/// Stretches both edges to `side`.
pub fn preprocess_resize<T: Scalar>(img: &Tensor<T>, side: usize) -> Result<Tensor<T>> {
    bilinear_resize(img, side, side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::testutil::{random_tensor, rng};

    fn ones(c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::full(vec![c, h, w], 1.0)
    }

    fn row_is_zero(t: &Tensor<f64>, y: usize) -> bool {
        let s = t.dims()[2];
        (0..s).all(|x| t.at(&[0, y, x]) == 0.0)
    }

    #[test]
    fn landscape_photo_is_letterboxed() {
        // 1000 wide, 582 high: content 800×466, 167 zero rows above and below.
        let out = aab_prepare(&ones(1, 582, 1000), &AabConfig::default()).unwrap();
        assert_eq!(out.dims(), &[1, 800, 800]);
        assert!((0..167).all(|y| row_is_zero(&out, y)));
        assert!((167..633).all(|y| !row_is_zero(&out, y)));
        assert!((633..800).all(|y| row_is_zero(&out, y)));
    }

    #[test]
    fn square_input_untouched_and_portrait_pillarboxed() {
        let img = random_tensor(&mut rng(0), &[3, 16, 16]);
        let cfg = AabConfig { square_side: 16, pool_target: 8, first_conv_stride: 2 };
        assert_eq!(aab_prepare(&img, &cfg).unwrap(), img);

        // 96 high, 32 wide on a 96 canvas: 32 zero columns each side.
        let out = aab_prepare(&ones(1, 96, 32), &AabConfig { square_side: 96, pool_target: 48, first_conv_stride: 2 }).unwrap();
        for y in 0..96 {
            for x in 0..96 {
                let expect = if (32..64).contains(&x) { 1.0 } else { 0.0 };
                assert_eq!(out.at(&[0, y, x]), expect);
            }
        }
    }

    #[test]
    fn crop_takes_central_window() {
        let mut img = Tensor::<f64>::zeros(vec![1, 380, 760]);
        for y in 0..380 {
            for x in 0..760 {
                img.set(&[0, y, x], x as f64);
            }
        }
        let out = preprocess_crop(&img, 380).unwrap();
        assert_eq!(out.dims(), &[1, 380, 380]);
        assert_eq!(out.at(&[0, 0, 0]), 190.0);
        assert_eq!(out.at(&[0, 379, 379]), 569.0);
    }

    #[test]
    fn crop_and_resize_agree_on_squares() {
        let img = random_tensor(&mut rng(1), &[3, 20, 20]);
        let c = preprocess_crop(&img, 12).unwrap();
        let r = preprocess_resize(&img, 12).unwrap();
        assert!(c.max_abs_diff(&r) < 1e-9);
    }

    #[test]
    fn resize_stretches_sampling_coordinates() {
        // 50 high, 100 wide: horizontal sample step is twice the vertical one.
        let mut img = Tensor::<f64>::zeros(vec![1, 50, 100]);
        for y in 0..50 {
            for x in 0..100 {
                img.set(&[0, y, x], x as f64 + 1000.0 * y as f64);
            }
        }
        let out = preprocess_resize(&img, 380).unwrap();
        assert_eq!(out.dims(), &[1, 380, 380]);
        let dx = out.at(&[0, 190, 201]) - out.at(&[0, 190, 200]);
        let dy = (out.at(&[0, 201, 190]) - out.at(&[0, 200, 190])) / 1000.0;
        assert!((dx / dy - 2.0).abs() < 1e-9, "dx {dx} dy {dy}");
    }

    #[test]
    fn pool_to_full_scale_shape() {
        let cfg = AabConfig::default();
        let tape = Tape::new();
        let feats = tape.constant(Tensor::<f64>::full(vec![48, 400, 400], 0.5));
        let out = aab_pool(feats, &cfg).unwrap();
        assert_eq!(out.dims(), vec![48, 190, 190]);
        assert!(out.value().data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        let id = aab_pool(feats, &AabConfig { pool_target: 400, ..cfg }).unwrap();
        assert_eq!(id.value(), feats.value());
        assert!(matches!(aab_pool(feats, &AabConfig { pool_target: 401, ..cfg }), Err(Error::Shape(_))));
    }

    #[test]
    fn extreme_aspect_ratios_are_accepted() {
        for (h, w) in [(10, 100), (100, 10), (3, 30), (30, 3), (1, 1), (1, 7)] {
            let img = ones(3, h, w);
            let cfg = AabConfig { square_side: 16, pool_target: 8, first_conv_stride: 2 };
            assert_eq!(aab_prepare(&img, &cfg).unwrap().dims(), &[3, 16, 16]);
            assert_eq!(preprocess_crop(&img, 16).unwrap().dims(), &[3, 16, 16]);
            assert_eq!(preprocess_resize(&img, 16).unwrap().dims(), &[3, 16, 16]);
        }
    }
}
