//! Binary PPM (P6) images and grayscale PFM (Pf) depth maps.
//!
//! PPM samples are 8-bit with maxval 255: byte `b` decodes to `b / 255` and a
//! float `v` encodes to `round(v * 255)` clamped to `[0, 255]`. PFM files are
//! written little-endian (scale `-1.0`) with rows stored bottom-up; NaN cells
//! keep their exact bit pattern.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{DepthMap, Image};

/// Header tokenizer shared by both formats. Skips whitespace and `#`
/// comments between tokens.
struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Header<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start, format!("missing {what}")));
        }
        let tok = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(start, format!("{what} is not ASCII")))?;
        Ok((start, tok))
    }

    fn dimension(&mut self, what: &str) -> Result<usize> {
        let (at, tok) = self.token(what)?;
        match tok.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::format(at, format!("invalid {what} `{tok}`"))),
        }
    }

    /// Consumes the single whitespace byte separating header and payload.
    fn end(&mut self) -> Result<usize> {
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok(self.pos + 1),
            _ => Err(Error::format(self.pos, "expected whitespace before payload")),
        }
    }
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| (f64::from(v) * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut h = Header::new(bytes);
    let (at, magic) = h.token("magic number")?;
    if magic != "P6" {
        return Err(Error::format(at, format!("bad magic number `{magic}`, expected \"P6\"")));
    }
    let width = h.dimension("width")?;
    let height = h.dimension("height")?;
    let (at, maxval) = h.token("maxval")?;
    if maxval != "255" {
        return Err(Error::format(at, format!("unsupported maxval `{maxval}`, expected 255")));
    }
    let start = h.end()?;
    let need = width * height * 3;
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: expected {need} bytes, found {}", payload.len()),
        ));
    }
    let data = payload[..need].iter().map(|&b| f32::from(b) / 255.0).collect();
    Image::new(width, height, data)
}

/// Width and height from a P6 header, without decoding the payload.
pub fn ppm_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let mut h = Header::new(bytes);
    let (at, magic) = h.token("magic number")?;
    if magic != "P6" {
        return Err(Error::format(at, format!("bad magic number `{magic}`, expected \"P6\"")));
    }
    Ok((h.dimension("width")?, h.dimension("height")?))
}

pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = (depth.width(), depth.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for row in (0..h).rev() {
        for &v in &depth.values()[row * w..(row + 1) * w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let mut h = Header::new(bytes);
    let (at, magic) = h.token("magic number")?;
    match magic {
        "Pf" => {}
        "PF" => return Err(Error::format(at, "color PFM (\"PF\") is not a depth map, expected \"Pf\"")),
        other => return Err(Error::format(at, format!("bad magic number `{other}`, expected \"Pf\""))),
    }
    let width = h.dimension("width")?;
    let height = h.dimension("height")?;
    let (at, scale_tok) = h.token("scale")?;
    let scale: f64 = scale_tok
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite() && *s != 0.0)
        .ok_or_else(|| Error::format(at, format!("invalid scale `{scale_tok}`")))?;
    let little_endian = scale < 0.0;
    let start = h.end()?;
    let need = width * height * 4;
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: expected {need} bytes, found {}", payload.len()),
        ));
    }
    let mut values = vec![0f32; width * height];
    for (i, chunk) in payload[..need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little_endian {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        if !v.is_nan() && !(v.is_finite() && v > 0.0) {
            return Err(Error::format(
                start + i * 4,
                format!("depth value {v} is not NaN and not strictly positive and finite"),
            ));
        }
        // File rows run bottom-up.
        let (row, col) = (height - 1 - i / width, i % width);
        values[row * width + col] = v;
    }
    DepthMap::new(width, height, values)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_ppm(&read(path.as_ref())?)
}

pub fn save_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_ppm(image))
}

pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_pfm(&read(path.as_ref())?)
}

pub fn save_depth(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_pfm(depth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_encoded_red_pixel() {
        let mut file = b"P6\n1 1\n255\n".to_vec();
        file.extend_from_slice(&[255, 0, 0]);
        let img = decode_ppm(&file).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut file = b"P6 # made by hand\n1 1\n# another\n255\n".to_vec();
        file.extend_from_slice(&[0, 51, 255]);
        let img = decode_ppm(&file).unwrap();
        assert_eq!(img.pixel(0, 0), [0.0, 0.2, 1.0]);
    }

    #[test]
    fn p5_rejected_naming_p6() {
        let err = decode_ppm(b"P5\n1 1\n255\n\0").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        assert!(msg.contains("\"P6\""), "{msg}");
    }

    #[test]
    fn truncated_ppm() {
        let err = decode_ppm(b"P6\n2 1\n255\n\x01\x02\x03").unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn maxval_must_be_255() {
        let err = decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 7, .. }), "{err}");
    }

    #[test]
    fn ppm_quantizes_with_rounding() {
        let img = Image::new(1, 1, vec![0.5, 0.001, 0.999]).unwrap();
        assert_eq!(&encode_ppm(&img)[11..], &[128, 0, 255]);
    }

    #[test]
    fn hand_encoded_pfm() {
        let mut file = b"Pf\n1 1\n-1.0\n".to_vec();
        file.extend_from_slice(&0.25f32.to_le_bytes());
        let d = decode_pfm(&file).unwrap();
        assert_eq!(d.at(0, 0), 0.25);
    }

    #[test]
    fn big_endian_pfm_is_accepted() {
        let mut file = b"Pf\n1 1\n1.0\n".to_vec();
        file.extend_from_slice(&0.75f32.to_be_bytes());
        assert_eq!(decode_pfm(&file).unwrap().at(0, 0), 0.75);
    }

    #[test]
    fn pfm_rows_are_bottom_up() {
        let d = DepthMap::new(1, 2, vec![1.0, 2.0]).unwrap();
        let bytes = encode_pfm(&d);
        let payload = &bytes[bytes.len() - 8..];
        assert_eq!(&payload[..4], &2.0f32.to_le_bytes());
        assert_eq!(&payload[4..], &1.0f32.to_le_bytes());
    }

    #[test]
    fn pfm_round_trip_with_nan() {
        let d = DepthMap::new(2, 2, vec![0.5, 1.0, f32::NAN, 2.0]).unwrap();
        let back = decode_pfm(&encode_pfm(&d)).unwrap();
        assert_eq!(back, d);
        assert!(back.at(0, 1).is_nan());
    }

    #[test]
    fn pfm_rejects_color_negative_and_infinite() {
        assert!(decode_pfm(b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0").is_err());
        let mut neg = b"Pf\n1 1\n-1.0\n".to_vec();
        neg.extend_from_slice(&(-0.5f32).to_le_bytes());
        assert!(matches!(decode_pfm(&neg), Err(Error::Format { offset: 12, .. })));
        let mut inf = b"Pf\n1 1\n-1.0\n".to_vec();
        inf.extend_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(decode_pfm(&inf).is_err());
        assert!(decode_pfm(b"Pf\n1 1\nabc\n\0\0\0\0").is_err());
    }
}
