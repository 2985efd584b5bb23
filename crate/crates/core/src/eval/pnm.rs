//! 8-bit binary PGM (P5) and PPM (P6).

use std::path::Path;

use crate::tensor::Tensor;
use crate::{Error, Result};

/// Quantise `[0, 1]` to a byte, rounding half up.
pub fn quantize(v: f32) -> u8 {
    (f64::from(v.clamp(0.0, 1.0)) * 255.0 + 0.5).floor() as u8
}

/// Encode a `[C, H, W]` image (C = 1 or 3) with values in `[0, 1]`.
pub fn encode(img: &Tensor<f32>) -> Result<Vec<u8>> {
    let [c, h, w] = *img.dims() else {
        return Err(Error::Shape(format!("image must be [C,H,W], got {:?}", img.dims())));
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::Invalid(format!("cannot encode {c} channels as PGM/PPM"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..c {
            out.push(quantize(img.data()[ch * plane + p]));
        }
    }
    Ok(out)
}

/// Decode P5/P6 with maxval 255 into a `[C, H, W]` image in `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Invalid("truncated PNM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let c = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(Error::Invalid(format!("unsupported PNM magic {m}"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Invalid(format!("bad PNM header field {s}")));
    let (w, h, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 || w == 0 || h == 0 {
        return Err(Error::Invalid(format!("unsupported PNM geometry {w}x{h} maxval {maxval}")));
    }
    let plane = h * w;
    let body = bytes.get(pos..pos + plane * c).ok_or_else(|| Error::Invalid("truncated PNM payload".into()))?;
    let mut data = vec![0.0f32; plane * c];
    for p in 0..plane {
        for ch in 0..c {
            data[ch * plane + p] = f32::from(body[p * c + ch]) / 255.0;
        }
    }
    Ok(Tensor::new(vec![c, h, w], data)?)
}

pub fn export_image(img: &Tensor<f32>, path: &Path) -> Result<()> {
    let bytes = encode(img)?;
    std::fs::write(path, bytes).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

pub fn import_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload(img: &Tensor<f32>) -> Vec<u8> {
        let b = encode(img).unwrap();
        b[b.len() - img.numel()..].to_vec()
    }

    #[test]
    fn constant_levels() {
        assert!(payload(&Tensor::full(&[1, 3, 2], 1.0)).iter().all(|&b| b == 255));
        assert!(payload(&Tensor::full(&[1, 3, 2], 0.5)).iter().all(|&b| b == 128));
    }

    #[test]
    fn round_trip_within_half_level() {
        let img = Tensor::from_fn(&[3, 5, 4], |i| ((i * 37) % 101) as f32 / 100.0);
        let back = decode(&encode(&img).unwrap()).unwrap();
        assert_eq!(back.dims(), img.dims());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
        }
    }

    #[test]
    fn rejects_two_channels() {
        assert!(encode(&Tensor::zeros(&[2, 2, 2])).is_err());
    }
}
