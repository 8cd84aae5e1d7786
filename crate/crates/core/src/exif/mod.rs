//! Extraction of the four ordinal EXIF tags (aperture, exposure time, focal
//! length, ISO speed) from JPEG and TIFF byte streams.
//!
//! Only IFD0 and the Exif sub-IFD are visited. Tags other than the four are
//! skipped without decoding, and a tag that is present in both directories
//! takes its value from the sub-IFD.

mod jpeg;
pub mod tiff;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use tiff::{ByteOrder, Rational, TiffContext};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExifError {
    #[error("malformed container: {0}")]
    MalformedContainer(&'static str),
    #[error("offset {offset} out of bounds for a {len}-byte buffer")]
    OffsetOutOfBounds { offset: u64, len: usize },
}

/// One of the four ordinal tags, in ranking-head order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExifTag {
    Aperture,
    ExposureTime,
    FocalLength,
    Iso,
}

impl ExifTag {
    pub const ALL: [ExifTag; 4] = [
        ExifTag::Aperture,
        ExifTag::ExposureTime,
        ExifTag::FocalLength,
        ExifTag::Iso,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ExifTag::Aperture => "aperture",
            ExifTag::ExposureTime => "exposure_time",
            ExifTag::FocalLength => "focal_length",
            ExifTag::Iso => "iso",
        }
    }
}

/// The four ordinal tag values of one image. Every present value is finite
/// and strictly positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ExifRecord {
    /// F-number.
    #[serde(rename = "aperture", default)]
    pub aperture_f_number: Option<f64>,
    /// Seconds.
    #[serde(rename = "exposure_time", default)]
    pub exposure_time_s: Option<f64>,
    /// Millimetres.
    #[serde(rename = "focal_length", default)]
    pub focal_length_mm: Option<f64>,
    #[serde(rename = "iso", default)]
    pub iso_speed: Option<u32>,
}

impl ExifRecord {
    pub fn get(&self, tag: ExifTag) -> Option<f64> {
        match tag {
            ExifTag::Aperture => self.aperture_f_number,
            ExifTag::ExposureTime => self.exposure_time_s,
            ExifTag::FocalLength => self.focal_length_mm,
            ExifTag::Iso => self.iso_speed.map(f64::from),
        }
    }

    pub fn present_count(&self) -> usize {
        ExifTag::ALL.iter().filter(|t| self.get(**t).is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.present_count() == 0
    }

    /// Drops any value that is not finite and strictly positive.
    pub fn sanitized(self) -> Self {
        let ok = |v: Option<f64>| v.filter(|x| x.is_finite() && *x > 0.0);
        Self {
            aperture_f_number: ok(self.aperture_f_number),
            exposure_time_s: ok(self.exposure_time_s),
            focal_length_mm: ok(self.focal_length_mm),
            iso_speed: self.iso_speed.filter(|&v| v > 0),
        }
    }
}

/// Parses a JPEG (SOI + APP1 "Exif\0\0") or bare TIFF stream.
///
/// A JPEG without an EXIF segment yields an empty record. Missing or
/// mistyped tags are absent fields, not errors.
pub fn parse_exif(bytes: &[u8]) -> Result<ExifRecord, ExifError> {
    if jpeg::is_jpeg(bytes) {
        return match jpeg::find_exif_payload(bytes)? {
            Some(payload) => parse_tiff(payload),
            None => Ok(ExifRecord::default()),
        };
    }
    if bytes.starts_with(b"II") || bytes.starts_with(b"MM") {
        return parse_tiff(bytes);
    }
    Err(ExifError::MalformedContainer("neither a JPEG nor a TIFF stream"))
}

fn parse_tiff(bytes: &[u8]) -> Result<ExifRecord, ExifError> {
    let ctx = TiffContext::new(bytes)?;
    let mut record = ExifRecord::default();
    let ifd0 = ctx.read_ifd(ctx.ifd0_offset)?;
    let mut sub_ifd = None;
    for entry in &ifd0 {
        if entry.tag == tiff::TAG_EXIF_IFD_POINTER {
            sub_ifd = ctx.first_unsigned(entry)?;
        } else {
            apply_entry(&ctx, entry, &mut record)?;
        }
    }
    if let Some(offset) = sub_ifd {
        for entry in &ctx.read_ifd(offset)? {
            apply_entry(&ctx, entry, &mut record)?;
        }
    }
    Ok(record.sanitized())
}

/// Later calls overwrite earlier ones, which gives the sub-IFD precedence.
fn apply_entry(ctx: &TiffContext<'_>, entry: &tiff::IfdEntry, record: &mut ExifRecord) -> Result<(), ExifError> {
    let rational = |ctx: &TiffContext<'_>| -> Result<Option<f64>, ExifError> {
        Ok(ctx.first_rational(entry)?.and_then(Rational::to_f64))
    };
    match entry.tag {
        tiff::TAG_F_NUMBER => {
            if let Some(v) = rational(ctx)? {
                record.aperture_f_number = Some(v);
            }
        }
        tiff::TAG_EXPOSURE_TIME => {
            if let Some(v) = rational(ctx)? {
                record.exposure_time_s = Some(v);
            }
        }
        tiff::TAG_FOCAL_LENGTH => {
            if let Some(v) = rational(ctx)? {
                record.focal_length_mm = Some(v);
            }
        }
        tiff::TAG_ISO_SPEED_RATINGS if entry.kind == tiff::TYPE_SHORT => {
            if let Some(v) = ctx.first_unsigned(entry)? {
                record.iso_speed = Some(v);
            }
        }
        _ => {}
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct RecordLine<'a> {
    path: &'a str,
    aperture: Option<f64>,
    exposure_time: Option<f64>,
    focal_length: Option<f64>,
    iso: Option<u32>,
}

#[derive(Debug, Serialize)]
struct ErrorLine<'a> {
    path: &'a str,
    error: String,
}

/// Writes one JSON line per input path. Per-file failures become
/// `{path, error}` lines. Returns the number of files that parsed.
pub fn emit_records<P: AsRef<Path>, W: Write>(paths: &[P], mut out: W) -> std::io::Result<usize> {
    let mut parsed = 0;
    for p in paths {
        let path = p.as_ref();
        let shown = path.to_string_lossy();
        let result = std::fs::read(path)
            .map_err(|e| e.to_string())
            .and_then(|bytes| parse_exif(&bytes).map_err(|e| e.to_string()));
        let line = match result {
            Ok(rec) => {
                parsed += 1;
                serde_json::to_string(&RecordLine {
                    path: &shown,
                    aperture: rec.aperture_f_number,
                    exposure_time: rec.exposure_time_s,
                    focal_length: rec.focal_length_mm,
                    iso: rec.iso_speed,
                })
            }
            Err(error) => serde_json::to_string(&ErrorLine { path: &shown, error }),
        }
        .map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(parsed)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Little-endian TIFF with one IFD holding the given `(tag, type, count, value)`
    /// entries; RATIONAL values are appended after the table.
    fn tiff_le(entries: &[(u16, u16, u32, Vec<u8>)]) -> Vec<u8> {
        let mut out = b"II".to_vec();
        out.extend(42u16.to_le_bytes());
        out.extend(8u32.to_le_bytes());
        let table_end = 8 + 2 + entries.len() * 12 + 4;
        let mut extra: Vec<u8> = Vec::new();
        out.extend((entries.len() as u16).to_le_bytes());
        for (tag, kind, count, value) in entries {
            out.extend(tag.to_le_bytes());
            out.extend(kind.to_le_bytes());
            out.extend(count.to_le_bytes());
            if value.len() <= 4 {
                let mut v = value.clone();
                v.resize(4, 0);
                out.extend(v);
            } else {
                out.extend(((table_end + extra.len()) as u32).to_le_bytes());
                extra.extend(value);
            }
        }
        out.extend(0u32.to_le_bytes());
        out.extend(extra);
        out
    }

    fn rational(num: u32, den: u32) -> Vec<u8> {
        let mut v = num.to_le_bytes().to_vec();
        v.extend(den.to_le_bytes());
        v
    }

    #[test]
    fn f_number_twenty_eight_tenths() {
        let buf = tiff_le(&[(tiff::TAG_F_NUMBER, tiff::TYPE_RATIONAL, 1, rational(28, 10))]);
        assert_eq!(parse_exif(&buf).unwrap().aperture_f_number, Some(2.8));
    }

    #[test]
    fn exposure_one_over_250() {
        let buf = tiff_le(&[(tiff::TAG_EXPOSURE_TIME, tiff::TYPE_RATIONAL, 1, rational(1, 250))]);
        assert_eq!(parse_exif(&buf).unwrap().exposure_time_s, Some(0.004));
    }

    #[test]
    fn iso_only_record() {
        let buf = tiff_le(&[(
            tiff::TAG_ISO_SPEED_RATINGS,
            tiff::TYPE_SHORT,
            1,
            400u16.to_le_bytes().to_vec(),
        )]);
        let rec = parse_exif(&buf).unwrap();
        assert_eq!(
            rec,
            ExifRecord {
                iso_speed: Some(400),
                ..Default::default()
            }
        );
    }

    #[test]
    fn unknown_marker_is_malformed() {
        assert!(matches!(
            parse_exif(b"XXnot an image"),
            Err(ExifError::MalformedContainer(_))
        ));
    }

    #[test]
    fn zero_denominator_drops_field() {
        let buf = tiff_le(&[
            (tiff::TAG_FOCAL_LENGTH, tiff::TYPE_RATIONAL, 1, rational(50, 0)),
            (tiff::TAG_F_NUMBER, tiff::TYPE_RATIONAL, 1, rational(4, 1)),
        ]);
        let rec = parse_exif(&buf).unwrap();
        assert_eq!(rec.focal_length_mm, None);
        assert_eq!(rec.aperture_f_number, Some(4.0));
    }

    #[test]
    fn iso_with_several_values_takes_first() {
        let mut v = 200u16.to_le_bytes().to_vec();
        v.extend(800u16.to_le_bytes());
        v.extend(1600u16.to_le_bytes());
        let buf = tiff_le(&[(tiff::TAG_ISO_SPEED_RATINGS, tiff::TYPE_SHORT, 3, v)]);
        assert_eq!(parse_exif(&buf).unwrap().iso_speed, Some(200));
    }

    #[test]
    fn empty_jpeg_is_an_empty_record() {
        let buf = [0xFF, 0xD8, 0xFF, 0xD9];
        let rec = parse_exif(&buf).unwrap();
        assert!(rec.is_empty());
    }

    #[test]
    fn jpeg_wrapped_tiff() {
        let tiff = tiff_le(&[(tiff::TAG_F_NUMBER, tiff::TYPE_RATIONAL, 1, rational(56, 10))]);
        let mut buf = vec![0xFF, 0xD8];
        // An unrelated APP0 segment first.
        buf.extend([0xFF, 0xE0, 0x00, 0x04, b'J', b'F']);
        buf.extend([0xFF, 0xE1]);
        buf.extend(((tiff.len() + 8) as u16).to_be_bytes());
        buf.extend(b"Exif\0\0");
        buf.extend(&tiff);
        buf.extend([0xFF, 0xD9]);
        assert_eq!(parse_exif(&buf).unwrap().aperture_f_number, Some(5.6));
    }

    #[test]
    fn ifd_offset_past_end() {
        let mut buf = tiff_le(&[]);
        buf[4..8].copy_from_slice(&1000u32.to_le_bytes());
        assert!(matches!(parse_exif(&buf), Err(ExifError::OffsetOutOfBounds { .. })));
    }

    #[test]
    fn emit_mixed_batch() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("a.tif");
        let bad = dir.path().join("b.jpg");
        std::fs::write(
            &good,
            tiff_le(&[(
                tiff::TAG_ISO_SPEED_RATINGS,
                tiff::TYPE_SHORT,
                1,
                100u16.to_le_bytes().to_vec(),
            )]),
        )
        .unwrap();
        std::fs::write(&bad, b"garbage").unwrap();
        let mut out = Vec::new();
        let parsed = emit_records(&[&good, &bad], &mut out).unwrap();
        assert_eq!(parsed, 1);
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["iso"], 100);
        assert!(lines[0]["aperture"].is_null());
        assert!(lines[1]["error"].is_string());

        let mut empty = Vec::new();
        assert_eq!(emit_records::<&Path, _>(&[], &mut empty).unwrap(), 0);
        assert!(empty.is_empty());
    }
}
