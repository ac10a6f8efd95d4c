//! False-colour rendering: turbo for depth, a blue-white-red diverging map
//! for confidences. Both are 256-entry lookup tables.

use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::io::write_rgb8;
use crate::tensor::{Scalar, Tensor};

pub type Rgb = [u8; 3];

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Polynomial fit of the turbo colormap, `x` in `[0, 1]`.
pub fn turbo(x: f64) -> Rgb {
    let x = x.clamp(0.0, 1.0);
    let poly = |c: [f64; 6]| c[0] + x * (c[1] + x * (c[2] + x * (c[3] + x * (c[4] + x * c[5]))));
    [
        to_byte(poly([
            0.13572138,
            4.61539260,
            -42.66032258,
            132.13108234,
            -152.94239396,
            59.28637943,
        ])),
        to_byte(poly([
            0.09140261,
            2.19418839,
            4.84296658,
            -14.18503333,
            4.27729857,
            2.82956604,
        ])),
        to_byte(poly([
            0.10667330,
            12.64194608,
            -60.58204836,
            110.36276771,
            -89.90310912,
            27.34824973,
        ])),
    ]
}

const COLD: [f64; 3] = [33.0, 102.0, 172.0];
const NEUTRAL: [f64; 3] = [247.0, 247.0, 247.0];
const WARM: [f64; 3] = [178.0, 24.0, 43.0];

/// Blue at 0, white at 0.5, red at 1.
pub fn diverging(t: f64) -> Rgb {
    let t = t.clamp(0.0, 1.0);
    let (a, b, s) = if t < 0.5 {
        (COLD, NEUTRAL, t * 2.0)
    } else {
        (NEUTRAL, WARM, t * 2.0 - 1.0)
    };
    std::array::from_fn(|i| (a[i] + (b[i] - a[i]) * s).round() as u8)
}

pub fn turbo_lut() -> &'static [Rgb; 256] {
    static LUT: OnceLock<[Rgb; 256]> = OnceLock::new();
    LUT.get_or_init(|| std::array::from_fn(|i| turbo(i as f64 / 255.0)))
}

pub fn diverging_lut() -> &'static [Rgb; 256] {
    static LUT: OnceLock<[Rgb; 256]> = OnceLock::new();
    LUT.get_or_init(|| std::array::from_fn(|i| diverging(i as f64 / 255.0)))
}

fn lut_index(t: f64) -> usize {
    if t.is_nan() {
        return 0;
    }
    (t.clamp(0.0, 1.0) * 255.0).round() as usize
}

fn plane<T: Scalar>(map: &Tensor<T>) -> Result<(usize, usize)> {
    match map.chw()? {
        (1, h, w) => Ok((h, w)),
        (c, _, _) => Err(Error::Shape(format!(
            "expected a single-channel map, got {c} channels"
        ))),
    }
}

/// RGB bytes of a depth map: `0` (invalid) is black, `(0, d_max]` runs
/// through turbo from near (dark blue) to far (dark red).
pub fn colorize_depth<T: Scalar>(depth: &Tensor<T>, d_max: f64) -> Result<Vec<u8>> {
    plane(depth)?;
    let lut = turbo_lut();
    Ok(depth
        .data()
        .iter()
        .flat_map(|&d| {
            let d = d.as_f64();
            if d > 0.0 {
                lut[lut_index(d / d_max)]
            } else {
                [0, 0, 0]
            }
        })
        .collect())
}

/// RGB bytes of a confidence map, symmetric around zero: `-limit` blue,
/// `0` white, `+limit` red. `limit` defaults to the largest magnitude.
pub fn colorize_confidence<T: Scalar>(conf: &Tensor<T>, limit: Option<f64>) -> Result<Vec<u8>> {
    plane(conf)?;
    let limit = limit.unwrap_or_else(|| {
        conf.data()
            .iter()
            .map(|v| v.as_f64().abs())
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
    });
    // Evaluated directly rather than via the LUT, which has no exact midpoint.
    Ok(conf
        .data()
        .iter()
        .map(|&c| match c.as_f64() {
            c if c.is_nan() => 0.0,
            c if limit > 0.0 => 0.5 + 0.5 * c / limit,
            _ => 0.5,
        })
        .flat_map(diverging)
        .collect())
}

pub fn write_depth_viz<T: Scalar>(
    depth: &Tensor<T>,
    d_max: f64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let (h, w) = plane(depth)?;
    write_rgb8(&colorize_depth(depth, d_max)?, w, h, path)
}

pub fn write_confidence_viz<T: Scalar>(conf: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = plane(conf)?;
    write_rgb8(&colorize_confidence(conf, None)?, w, h, path)
}
