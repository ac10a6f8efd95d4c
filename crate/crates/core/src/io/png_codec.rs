//! KITTI depth PNGs (16-bit grayscale, `depth = value / 256`, 0 = invalid)
//! and 8-bit RGB colour images.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, ValidityMask};

/// Largest depth a KITTI PNG can hold, in metres.
pub const MAX_DEPTH_M: f64 = 65535.0 / 256.0;

/// Per-pixel depth (metres) plus validity. Invalid pixels hold depth 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseDepthMap<T = f32> {
    depth: Tensor<T>,
    mask: ValidityMask,
}

impl<T: Scalar> SparseDepthMap<T> {
    /// Build from a `1 x H x W` depth map; pixels `<= 0` become invalid.
    pub fn from_depth(depth: Tensor<T>) -> Result<Self> {
        let mask = ValidityMask::from_positive(&depth)?;
        if !depth.is_finite() {
            return Err(Error::NonFinite("depth map".into()));
        }
        let depth = depth.map(|v| v.max(T::zero()));
        Ok(Self { depth, mask })
    }

    pub fn depth(&self) -> &Tensor<T> {
        &self.depth
    }

    pub fn mask(&self) -> &ValidityMask {
        &self.mask
    }

    pub fn height(&self) -> usize {
        self.mask.height()
    }

    pub fn width(&self) -> usize {
        self.mask.width()
    }

    pub fn density(&self) -> f64 {
        self.mask.density()
    }

    pub fn cast<U: Scalar>(&self) -> SparseDepthMap<U> {
        SparseDepthMap {
            depth: self.depth.cast(),
            mask: self.mask.clone(),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        Self {
            depth: flip_tensor(&self.depth),
            mask: self.mask.flip_horizontal(),
        }
    }
}

/// Mirror every channel of a `C x H x W` tensor left-to-right.
pub fn flip_tensor<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let w = t.shape()[t.shape().len() - 1];
    let mut data = Vec::with_capacity(t.len());
    for row in t.data().chunks(w) {
        data.extend(row.iter().rev());
    }
    Tensor::from_vec(t.shape(), data).expect("same shape")
}

fn read_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|source| Error::PngDecode {
        path: path.into(),
        source,
    })?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|source| Error::PngDecode {
            path: path.into(),
            source,
        })?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

/// Write through a sibling temp file then rename into place.
fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("png.tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        let mut encoder = png::Encoder::new(&mut w, width as u32, height as u32);
        encoder.set_color(color);
        encoder.set_depth(depth);
        let mut writer = encoder.write_header().map_err(|source| Error::PngEncode {
            path: path.into(),
            source,
        })?;
        writer
            .write_image_data(data)
            .map_err(|source| Error::PngEncode {
                path: path.into(),
                source,
            })?;
        writer.finish().map_err(|source| Error::PngEncode {
            path: path.into(),
            source,
        })?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Encode depth to KITTI 16-bit values: `round(depth * 256)`, invalid -> 0.
/// Valid depths are clamped into the representable range `[1/256, 65535/256]`.
pub fn encode_depth<T: Scalar>(map: &SparseDepthMap<T>) -> Vec<u16> {
    map.depth
        .data()
        .iter()
        .zip(map.mask.data())
        .map(|(&d, &m)| {
            if m == 0 {
                0
            } else {
                (d.as_f64() * 256.0).round().clamp(1.0, 65535.0) as u16
            }
        })
        .collect()
}

pub fn decode_depth(values: &[u16], height: usize, width: usize) -> Result<SparseDepthMap<f32>> {
    let depth = Tensor::from_vec(
        &[1, height, width],
        values.iter().map(|&v| v as f32 / 256.0).collect(),
    )?;
    SparseDepthMap::from_depth(depth)
}

pub fn read_depth_png(path: impl AsRef<Path>) -> Result<SparseDepthMap<f32>> {
    let path = path.as_ref();
    let (info, buf) = read_png(path)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::Format {
            path: path.into(),
            reason: format!(
                "expected 16-bit single-channel depth PNG, found {:?} at {:?} bits",
                info.color_type, info.bit_depth
            ),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let values: Vec<u16> = buf
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    decode_depth(&values[..w * h], h, w)
}

pub fn write_depth_png<T: Scalar>(map: &SparseDepthMap<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = encode_depth(map)
        .iter()
        .flat_map(|v| v.to_be_bytes())
        .collect();
    write_png(
        path.as_ref(),
        map.width(),
        map.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &bytes,
    )
}

/// 8-bit RGB PNG as a `3 x H x W` tensor in `[0, 1]`.
pub fn read_color_png(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let (info, buf) = read_png(path)?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format {
            path: path.into(),
            reason: format!(
                "expected 8-bit RGB PNG, found {:?} at {:?} bits",
                info.color_type, info.bit_depth
            ),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let plane = w * h;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in buf.chunks_exact(3).take(plane).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Quantize a `[0, 1]` colour value to 8 bits.
pub fn to_u8<T: Scalar>(v: T) -> u8 {
    (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_color_png<T: Scalar>(color: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let (c, h, w) = color.chw()?;
    if c != 3 {
        return Err(Error::Shape(format!(
            "colour image must have 3 channels, got {:?}",
            color.shape()
        )));
    }
    let plane = h * w;
    let bytes: Vec<u8> = (0..plane)
        .flat_map(|i| (0..3).map(move |ch| (ch, i)))
        .map(|(ch, i)| to_u8(color.data()[ch * plane + i]))
        .collect();
    write_rgb8(&bytes, w, h, path)
}

/// Raw interleaved RGB bytes.
pub fn write_rgb8(bytes: &[u8], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    if bytes.len() != width * height * 3 {
        return Err(Error::Shape(format!(
            "{} RGB bytes for {width}x{height}",
            bytes.len()
        )));
    }
    write_png(
        path.as_ref(),
        width,
        height,
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        bytes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(values: &[f32], h: usize, w: usize) -> SparseDepthMap<f32> {
        SparseDepthMap::from_depth(Tensor::from_vec(&[1, h, w], values.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn encoding_convention() {
        let m = map(&[100.0, 0.0, 0.5, 255.99609375, 400.0, 0.001], 2, 3);
        assert_eq!(encode_depth(&m), vec![25600, 0, 128, 65535, 65535, 1]);
        let back = decode_depth(&[25600, 0], 1, 2).unwrap();
        assert_eq!(back.depth().data(), &[100.0, 0.0]);
        assert_eq!(back.mask().data(), &[1, 0]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let m = map(&[1.0, 0.0, 12.5, 80.0], 2, 2);
        write_depth_png(&m, &p).unwrap();
        assert_eq!(read_depth_png(&p).unwrap(), m);
    }

    #[test]
    fn wrong_formats_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = dir.path().join("c.png");
        write_rgb8(&[255, 255, 255, 0, 0, 0], 2, 1, &rgb).unwrap();
        let err = read_depth_png(&rgb).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        let c = read_color_png(&rgb).unwrap();
        assert_eq!(c.shape(), &[3, 1, 2]);
        assert_eq!(
            (c.at(0, 0, 0), c.at(1, 0, 0), c.at(2, 0, 0)),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(
            (c.at(0, 0, 1), c.at(1, 0, 1), c.at(2, 0, 1)),
            (0.0, 0.0, 0.0)
        );

        let depth = dir.path().join("d.png");
        write_depth_png(&map(&[1.0], 1, 1), &depth).unwrap();
        assert!(matches!(
            read_color_png(&depth).unwrap_err(),
            Error::Format { .. }
        ));
    }
}
