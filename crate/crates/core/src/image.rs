//! 8-bit RGB images, binary PPM (P6) codec and 68-point landmark sidecars.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("invalid image dimensions {height}x{width} for {len} bytes")]
    InvalidDimensions { height: usize, width: usize, len: usize },
    #[error("unsupported or corrupt image: {0}")]
    Decode(String),
    #[error("landmark file: {0}")]
    Landmarks(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageRGB {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ImageRGB {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(ImageError::InvalidDimensions {
                height,
                width,
                len: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Result<Self, ImageError> {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode_ppm(bytes: &[u8]) -> Result<Self, ImageError> {
        let mut pos = 0;
        let magic = next_token(bytes, &mut pos).ok_or_else(|| ImageError::Decode("empty file".into()))?;
        if magic != b"P6" {
            return Err(ImageError::Decode("only binary PPM (P6) is supported".into()));
        }
        let mut header = [0usize; 3];
        for slot in &mut header {
            let tok = next_token(bytes, &mut pos).ok_or_else(|| ImageError::Decode("truncated PPM header".into()))?;
            *slot = std::str::from_utf8(tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| ImageError::Decode("bad PPM header field".into()))?;
        }
        let [width, height, maxval] = header;
        if maxval != 255 {
            return Err(ImageError::Decode(format!("unsupported PPM maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let need = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| ImageError::Decode("PPM dimensions overflow".into()))?;
        let raster = bytes
            .get(pos..pos + need)
            .ok_or_else(|| ImageError::Decode("truncated PPM raster".into()))?;
        Self::new(height, width, raster.to_vec())
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        Self::decode_ppm(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), ImageError> {
        std::fs::write(path, self.encode_ppm())?;
        Ok(())
    }
}

/// Whitespace-separated header token, skipping `#` comments.
fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| &bytes[start..*pos])
}

pub const LANDMARK_COUNT: usize = 68;

/// 68 face landmarks `(x, y)` in pixel units, standard annotation order.
/// Points may lie outside the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<(f64, f64)>,
}

impl LandmarkSet {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, ImageError> {
        if points.len() != LANDMARK_COUNT {
            return Err(ImageError::Landmarks(format!(
                "expected {LANDMARK_COUNT} points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(ImageError::Landmarks("non-finite coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Parses 68 lines of `x y`.
    pub fn parse(text: &str) -> Result<Self, ImageError> {
        let mut points = Vec::with_capacity(LANDMARK_COUNT);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => points.push((x, y)),
                _ => return Err(ImageError::Landmarks(format!("line {}: expected `x y`", n + 1))),
            }
        }
        Self::new(points)
    }

    pub fn to_text(&self) -> String {
        self.points.iter().map(|(x, y)| format!("{x} {y}\n")).collect()
    }

    pub fn load(path: &Path) -> Result<Self, ImageError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let data: Vec<u8> = (0..2 * 3 * 3).map(|v| v as u8 * 7).collect();
        let img = ImageRGB::new(2, 3, data).unwrap();
        let back = ImageRGB::decode_ppm(&img.encode_ppm()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn ppm_with_comment() {
        let mut bytes = b"P6 # made by hand\n1 1\n255\n".to_vec();
        bytes.extend([1, 2, 3]);
        let img = ImageRGB::decode_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(0, 0), [1, 2, 3]);
    }

    #[test]
    fn ppm_truncated() {
        let bytes = b"P6\n2 2\n255\n\x01\x02".to_vec();
        assert!(ImageRGB::decode_ppm(&bytes).is_err());
        assert!(ImageRGB::decode_ppm(b"P3\n1 1\n255\n1 2 3").is_err());
    }

    #[test]
    fn image_rejects_bad_lengths() {
        assert!(ImageRGB::new(2, 2, vec![0; 11]).is_err());
        assert!(ImageRGB::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn landmarks_roundtrip() {
        let pts: Vec<(f64, f64)> = (0..68).map(|i| (i as f64 * 0.5, -(i as f64))).collect();
        let set = LandmarkSet::new(pts).unwrap();
        assert_eq!(LandmarkSet::parse(&set.to_text()).unwrap(), set);
        assert!(LandmarkSet::parse("1 2\n3 4\n").is_err());
        assert!(LandmarkSet::parse("1 x\n").is_err());
    }
}
