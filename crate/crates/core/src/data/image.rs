//! Binary PPM (P6) and PGM (P5) with maxval 255.

use std::path::Path;

use crate::error::{EtmaError, Result};
use crate::fsutil;
use crate::tensor::Tensor;

/// Nearest 8-bit level of a `[0, 1]` value.
pub fn to_byte(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_byte(b: u8) -> f64 {
    f64::from(b) / 255.0
}

/// Encodes an `h × w × 3` image in `[0, 1]` as P6.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    match image.shape() {
        &[h, w, 3] => Ok(encode_netpbm("P6", h, w, image.data())),
        s => Err(EtmaError::dim("encode_ppm", s, &[0, 0, 3])),
    }
}

/// Encodes an `h × w` grid of raw 8-bit levels as P5.
pub fn encode_pgm(h: usize, w: usize, levels: &[u8]) -> Result<Vec<u8>> {
    if levels.len() != h * w {
        return Err(EtmaError::dim("encode_pgm", &[h, w], &[levels.len()]));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(levels);
    Ok(out)
}

fn encode_netpbm(magic: &str, h: usize, w: usize, data: &[f64]) -> Vec<u8> {
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    out.extend(data.iter().map(|&x| to_byte(x)));
    out
}

/// Decodes P6 into `h × w × 3` or P5 into `h × w × 1`, values in `[0, 1]`.
pub fn decode_netpbm(bytes: &[u8], source: &str) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(header_error(source, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(header_error(source, &format!("unsupported magic {other:?}"))),
    };
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| header_error(source, &format!("bad number {s:?}")))
    };
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(header_error(source, &format!("maxval {maxval}, expected 255")));
    }
    let n = h * w * channels;
    let payload = bytes.get(pos..pos + n).ok_or_else(|| EtmaError::Format {
        expected: format!("{n} pixel bytes in {source}"),
        found: format!("{}", bytes.len().saturating_sub(pos)),
    })?;
    Tensor::new(&[h, w, channels], payload.iter().map(|&b| from_byte(b)).collect())
}

fn header_error(source: &str, message: &str) -> EtmaError {
    EtmaError::Parse {
        source_name: source.to_string(),
        line: 1,
        message: message.to_string(),
    }
}

pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = fsutil::read(path)?;
    decode_netpbm(&bytes, &path.display().to_string())
}

pub fn save_ppm(path: &Path, image: &Tensor) -> Result<()> {
    fsutil::write_atomic(path, &encode_ppm(image)?)
}
