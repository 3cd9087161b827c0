//! On-disk formats: the MTEN tensor container, 8-bit PNG images, and the
//! HSV flow visualization.
//!
//! MTEN layout, all integers little-endian:
//!
//! ```text
//! magic "MTEN" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u8 ndim
//! u32 dims[ndim] | raw little-endian element data
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MTEN_MAGIC: &[u8; 4] = b"MTEN";
pub const MTEN_VERSION: u8 = 1;
const MAX_NDIM: usize = 8;

pub fn encode_tensor<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + 4 * t.rank() + t.len() * T::BYTES);
    out.extend_from_slice(MTEN_MAGIC);
    out.push(MTEN_VERSION);
    out.push(T::DTYPE);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

/// Decode one tensor from `bytes` starting at `base` (the offset used in
/// error reports). Returns the tensor and the number of bytes consumed.
pub fn decode_tensor<T: Scalar>(bytes: &[u8], base: u64) -> Result<(Tensor<T>, usize)> {
    let err = |off: usize, msg: &str| Error::format(base + off as u64, msg);
    if bytes.len() < 7 {
        return Err(err(bytes.len(), "truncated header"));
    }
    if &bytes[0..4] != MTEN_MAGIC {
        return Err(err(0, "bad magic, expected \"MTEN\""));
    }
    if bytes[4] != MTEN_VERSION {
        return Err(err(4, &format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != T::DTYPE {
        return Err(err(
            5,
            &format!("dtype code {} does not match {}", bytes[5], T::NAME),
        ));
    }
    let ndim = bytes[6] as usize;
    if ndim > MAX_NDIM {
        return Err(err(6, &format!("ndim {ndim} exceeds limit {MAX_NDIM}")));
    }
    let mut off = 7;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        if bytes.len() < off + 4 {
            return Err(err(bytes.len(), "truncated dims"));
        }
        let d = u32::from_le_bytes([bytes[off], bytes[off + 1], bytes[off + 2], bytes[off + 3]]);
        shape.push(d as usize);
        off += 4;
    }
    let n: usize = shape.iter().product();
    let need = n * T::BYTES;
    if bytes.len() < off + need {
        return Err(err(bytes.len(), "truncated tensor data"));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        data.push(T::read_le(&bytes[off + i * T::BYTES..]));
    }
    off += need;
    Ok((Tensor::new(shape, data)?, off))
}

pub fn save_tensor<T: Scalar>(t: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, used) = decode_tensor(&bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::format(
            used as u64,
            format!("{} trailing bytes after tensor", bytes.len() - used),
        ));
    }
    Ok(t)
}

// ---------------------------------------------------------------------------
// PNG
// ---------------------------------------------------------------------------

/// Load an 8-bit PNG (or any format the `image` crate decodes) as a
/// `3 x H x W` tensor scaled to [0,1].
pub fn load_image_f32(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut t = Tensor::zeros(vec![3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                t.set3(c, y, x, p.0[c] as f32 / 255.0);
            }
        }
    }
    Ok(t)
}

/// Write a `3 x H x W` tensor as 8-bit PNG; values are clamped to [0,1].
pub fn save_image_f32(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::config(format!("expected 3 channels, got {c}")));
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px: [u8; 3] = std::array::from_fn(|ch| {
                let v = t.at3(ch, y, x).clamp(0.0, 1.0);
                (v * 255.0 + 0.5).floor() as u8
            });
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Flow visualization
// ---------------------------------------------------------------------------

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let i = h.floor();
    let f = h - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Render a `2 x H x W` flow field as an HSV wheel image: hue encodes
/// direction, brightness encodes magnitude (normalized by the max).
pub fn flow_to_rgb(flow: &Tensor<f32>) -> Result<Tensor<f32>> {
    let (c, h, w) = flow.dims3()?;
    if c != 2 {
        return Err(Error::config(format!("flow must have 2 channels, got {c}")));
    }
    let mut max_mag = 1e-6f32;
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (flow.at3(0, y, x), flow.at3(1, y, x));
            max_mag = max_mag.max((fx * fx + fy * fy).sqrt());
        }
    }
    let mut out = Tensor::zeros(vec![3, h, w]);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (flow.at3(0, y, x), flow.at3(1, y, x));
            let mag = (fx * fx + fy * fy).sqrt() / max_mag;
            let hue = fy.atan2(fx).to_degrees();
            let rgb = hsv_to_rgb(hue, 1.0, mag);
            for ch in 0..3 {
                out.set3(ch, y, x, rgb[ch]);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mten_roundtrip_f32_and_f64() {
        let t32 = Tensor::<f32>::from_fn(vec![2, 3, 4], |i| (i as f32).sin());
        let bytes = encode_tensor(&t32);
        let (back, used) = decode_tensor::<f32>(&bytes, 0).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(t32, back);

        let t64 = Tensor::<f64>::from_fn(vec![5], |i| 1.0 / (i as f64 + 1.0));
        let bytes = encode_tensor(&t64);
        let (back, _) = decode_tensor::<f64>(&bytes, 0).unwrap();
        assert_eq!(t64, back);
    }

    #[test]
    fn mten_rejects_bad_magic_with_offset() {
        let t = Tensor::<f32>::zeros(vec![2]);
        let mut bytes = encode_tensor(&t);
        bytes[0] = b'X';
        match decode_tensor::<f32>(&bytes, 100).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 100),
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn mten_rejects_truncation_with_offset() {
        let t = Tensor::<f32>::from_fn(vec![4], |i| i as f32);
        let bytes = encode_tensor(&t);
        let cut = &bytes[..bytes.len() - 3];
        match decode_tensor::<f32>(cut, 0).unwrap_err() {
            Error::Format { offset, msg } => {
                assert_eq!(offset, cut.len() as u64);
                assert!(msg.contains("truncated"));
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn mten_rejects_dtype_mismatch() {
        let t = Tensor::<f32>::zeros(vec![2]);
        let bytes = encode_tensor(&t);
        assert!(decode_tensor::<f64>(&bytes, 0).is_err());
    }

    #[test]
    fn png_roundtrip_is_exact_for_u8_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        // Values on the u8 lattice survive the round trip exactly.
        let t = Tensor::<f32>::from_fn(vec![3, 5, 7], |i| ((i * 13) % 256) as f32 / 255.0);
        save_image_f32(&t, &path).unwrap();
        let back = load_image_f32(&path).unwrap();
        assert!(t.max_abs_diff(&back) < 1e-6);
    }

    #[test]
    fn flow_viz_shape_and_range() {
        let flow = Tensor::<f32>::from_fn(vec![2, 4, 4], |i| (i as f32 * 0.37).sin());
        let rgb = flow_to_rgb(&flow).unwrap();
        assert_eq!(rgb.shape(), &[3, 4, 4]);
        assert!(rgb.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
