use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Parse a binary PPM (P6, 3 channels) or PGM (P5, 1 channel) with
/// `maxval < 256` into a `C×H×W` tensor scaled to [0, 1].
pub fn parse_pnm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut pos = 0;
    let mut token = || -> Result<&[u8]> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated image header"));
        }
        Ok(&bytes[start..pos])
    };
    let channels = match token()? {
        b"P6" => 3,
        b"P5" => 1,
        m => return Err(format_err(format!("unsupported image magic {:?}", String::from_utf8_lossy(m)))),
    };
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(format!("bad image {what}")))
    };
    let w = number("width")?;
    let h = number("height")?;
    let maxval = number("maxval")?;
    if w == 0 || h == 0 {
        return Err(format_err("image has zero extent"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(format_err(format!("unsupported maxval {maxval}")));
    }
    // single whitespace byte separates header from raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(format_err("truncated image header"));
    }
    pos += 1;
    let n = channels * w * h;
    let raster = &bytes[pos..];
    if raster.len() < n {
        return Err(format_err(format!("truncated raster: {} of {n} bytes", raster.len())));
    }
    let scale = 1.0 / maxval as f64;
    let mut data = vec![T::zero(); n];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let b = raster[(y * w + x) * channels + c];
                if b as usize > maxval {
                    return Err(format_err("sample exceeds maxval"));
                }
                data[(c * h + y) * w + x] = T::lit(b as f64 * scale);
            }
        }
    }
    Tensor::new(vec![channels, h, w], data)
}

pub fn load_image<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path)?;
    parse_pnm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Encode a 1- or 3-channel tensor with values in [0, 1] (clamped).
pub fn write_pnm<T: Scalar>(img: &Tensor<T>) -> Result<Vec<u8>> {
    let &[c, h, w] = img.dims() else {
        return Err(Error::Shape(format!("image must be C×H×W, got {:?}", img.dims())));
    };
    let magic = match c {
        3 => "P6",
        1 => "P5",
        _ => return Err(Error::Shape(format!("image needs 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = d[(ch * h + y) * w + x].as_f64().clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn save_ppm<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    if img.dims().first() != Some(&3) {
        return Err(Error::Shape("PPM needs 3 channels".into()));
    }
    std::fs::write(path, write_pnm(img)?)?;
    Ok(())
}

pub fn save_pgm<T: Scalar>(path: &Path, img: &Tensor<T>) -> Result<()> {
    if img.dims().first() != Some(&1) {
        return Err(Error::Shape("PGM needs 1 channel".into()));
    }
    std::fs::write(path, write_pnm(img)?)?;
    Ok(())
}
