//! Byte-level TIFF and JPEG fixture builders shared by the integration tests.

#![allow(dead_code)]

pub mod harness;
pub mod oracles;

use exifgmm_core::exif::tiff::{
    TAG_EXIF_IFD_POINTER, TAG_EXPOSURE_TIME, TAG_FOCAL_LENGTH, TAG_F_NUMBER, TAG_ISO_SPEED_RATINGS, TYPE_LONG,
    TYPE_RATIONAL, TYPE_SHORT,
};
use exifgmm_core::exif::ByteOrder;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Rational(Vec<(u32, u32)>),
    Short(Vec<u16>),
    Long(Vec<u32>),
    /// Arbitrary type code with raw payload bytes.
    Raw {
        kind: u16,
        count: u32,
        bytes: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub tag: u16,
    pub value: Value,
}

pub fn rational(tag: u16, num: u32, den: u32) -> Entry {
    Entry {
        tag,
        value: Value::Rational(vec![(num, den)]),
    }
}

pub fn short(tag: u16, values: &[u16]) -> Entry {
    Entry {
        tag,
        value: Value::Short(values.to_vec()),
    }
}

pub fn long(tag: u16, values: &[u32]) -> Entry {
    Entry {
        tag,
        value: Value::Long(values.to_vec()),
    }
}

/// Logical content of a fixture: the four tags as stored rationals / shorts.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StoredTags {
    pub f_number: Option<(u32, u32)>,
    pub exposure: Option<(u32, u32)>,
    pub focal: Option<(u32, u32)>,
    pub iso: Option<u16>,
}

impl StoredTags {
    pub fn entries(&self) -> Vec<Entry> {
        let mut out = Vec::new();
        if let Some((n, d)) = self.exposure {
            out.push(rational(TAG_EXPOSURE_TIME, n, d));
        }
        if let Some((n, d)) = self.f_number {
            out.push(rational(TAG_F_NUMBER, n, d));
        }
        if let Some(v) = self.iso {
            out.push(short(TAG_ISO_SPEED_RATINGS, &[v]));
        }
        if let Some((n, d)) = self.focal {
            out.push(rational(TAG_FOCAL_LENGTH, n, d));
        }
        out
    }
}

fn put16(order: ByteOrder, v: u16) -> [u8; 2] {
    match order {
        ByteOrder::LittleEndian => v.to_le_bytes(),
        ByteOrder::BigEndian => v.to_be_bytes(),
    }
}

fn put32(order: ByteOrder, v: u32) -> [u8; 4] {
    match order {
        ByteOrder::LittleEndian => v.to_le_bytes(),
        ByteOrder::BigEndian => v.to_be_bytes(),
    }
}

fn encode(order: ByteOrder, value: &Value) -> (u16, u32, Vec<u8>) {
    match value {
        Value::Rational(rs) => {
            let mut b = Vec::new();
            for &(n, d) in rs {
                b.extend(put32(order, n));
                b.extend(put32(order, d));
            }
            (TYPE_RATIONAL, rs.len() as u32, b)
        }
        Value::Short(vs) => (
            TYPE_SHORT,
            vs.len() as u32,
            vs.iter().flat_map(|&v| put16(order, v)).collect(),
        ),
        Value::Long(vs) => (
            TYPE_LONG,
            vs.len() as u32,
            vs.iter().flat_map(|&v| put32(order, v)).collect(),
        ),
        Value::Raw { kind, count, bytes } => (*kind, *count, bytes.clone()),
    }
}

/// Byte offsets of the structural pieces of a built TIFF stream.
#[derive(Debug, Clone, Default)]
pub struct TiffLayout {
    pub ifd0: usize,
    pub sub_ifd: Option<usize>,
    pub data: usize,
    pub len: usize,
}

/// TIFF stream with the given IFD0 entries and, optionally, an Exif sub-IFD
/// linked through the pointer tag. Out-of-line values follow both tables.
pub fn build_tiff(order: ByteOrder, ifd0: &[Entry], sub: Option<&[Entry]>) -> (Vec<u8>, TiffLayout) {
    let n0 = ifd0.len() + usize::from(sub.is_some());
    let ifd0_off = 8;
    let sub_off = ifd0_off + 2 + 12 * n0 + 4;
    let data_off = match sub {
        Some(s) => sub_off + 2 + 12 * s.len() + 4,
        None => sub_off,
    };
    let mut data: Vec<u8> = Vec::new();
    let mut table = |entries: &[Entry], pointer: Option<u32>| -> Vec<u8> {
        let mut all: Vec<(u16, u16, u32, Vec<u8>)> = entries
            .iter()
            .map(|e| {
                let (k, c, b) = encode(order, &e.value);
                (e.tag, k, c, b)
            })
            .collect();
        if let Some(p) = pointer {
            all.push((TAG_EXIF_IFD_POINTER, TYPE_LONG, 1, put32(order, p).to_vec()));
        }
        let mut t = put16(order, all.len() as u16).to_vec();
        for (tag, kind, count, bytes) in all {
            t.extend(put16(order, tag));
            t.extend(put16(order, kind));
            t.extend(put32(order, count));
            if bytes.len() <= 4 {
                let mut v = bytes;
                v.resize(4, 0);
                t.extend(v);
            } else {
                t.extend(put32(order, (data_off + data.len()) as u32));
                data.extend(bytes);
            }
        }
        t.extend(put32(order, 0));
        t
    };
    let t0 = table(ifd0, sub.map(|_| sub_off as u32));
    let t1 = sub.map(|s| table(s, None));
    let mut out = match order {
        ByteOrder::LittleEndian => b"II".to_vec(),
        ByteOrder::BigEndian => b"MM".to_vec(),
    };
    out.extend(put16(order, 42));
    out.extend(put32(order, ifd0_off as u32));
    out.extend(t0);
    if let Some(t1) = t1 {
        out.extend(t1);
    }
    assert_eq!(out.len(), data_off);
    out.extend(data);
    let layout = TiffLayout {
        ifd0: ifd0_off,
        sub_ifd: sub.map(|_| sub_off),
        data: data_off,
        len: out.len(),
    };
    (out, layout)
}

/// Offsets at which each JPEG marker starts, plus the stream length.
#[derive(Debug, Clone, Default)]
pub struct JpegLayout {
    pub marker_starts: Vec<usize>,
    /// Start of the APP1 segment and the first byte after it.
    pub app1: (usize, usize),
    pub len: usize,
}

fn segment(out: &mut Vec<u8>, marker: u8, body: &[u8]) {
    out.extend([0xFF, marker]);
    out.extend(((body.len() + 2) as u16).to_be_bytes());
    out.extend(body);
}

/// SOI, APP0 (JFIF), APP1 (Exif + `tiff`), DQT, SOS with a few scan bytes, EOI.
pub fn wrap_jpeg(tiff: &[u8]) -> (Vec<u8>, JpegLayout) {
    let mut out = vec![0xFF, 0xD8];
    let mut starts = vec![0];
    starts.push(out.len());
    segment(&mut out, 0xE0, b"JFIF\0\x01\x02\0\0\x01\0\x01\0\0");
    let app1_start = out.len();
    starts.push(app1_start);
    let mut body = b"Exif\0\0".to_vec();
    body.extend(tiff);
    segment(&mut out, 0xE1, &body);
    let app1_end = out.len();
    starts.push(out.len());
    segment(&mut out, 0xDB, &[0u8; 65]);
    starts.push(out.len());
    segment(&mut out, 0xDA, &[1, 1, 0, 0, 63, 0]);
    out.extend([0x12, 0x34, 0x56]);
    starts.push(out.len());
    out.extend([0xFF, 0xD9]);
    let len = out.len();
    (
        out,
        JpegLayout {
            marker_starts: starts,
            app1: (app1_start, app1_end),
            len,
        },
    )
}

/// Minimal JPEG with no APP1 segment.
pub fn jpeg_without_exif() -> Vec<u8> {
    let mut out = vec![0xFF, 0xD8];
    segment(&mut out, 0xE0, b"JFIF\0\x01\x02\0\0\x01\0\x01\0\0");
    segment(&mut out, 0xDA, &[1, 1, 0, 0, 63, 0]);
    out.extend([0xFF, 0xD9]);
    out
}
