//! TIFF container walking.
//!
//! Layout: 8-byte header (byte order "II"/"MM", magic 42, IFD0 offset), then
//! IFDs made of a u16 entry count and 12-byte entries (tag u16, type u16,
//! count u32, value-or-offset u32). Values of at most four bytes are stored
//! inline, left-justified.

use super::ExifError;

pub const TAG_EXPOSURE_TIME: u16 = 0x829A;
pub const TAG_F_NUMBER: u16 = 0x829D;
pub const TAG_EXIF_IFD_POINTER: u16 = 0x8769;
pub const TAG_ISO_SPEED_RATINGS: u16 = 0x8827;
pub const TAG_FOCAL_LENGTH: u16 = 0x920A;

pub const TYPE_SHORT: u16 = 3;
pub const TYPE_LONG: u16 = 4;
pub const TYPE_RATIONAL: u16 = 5;
pub const TYPE_IFD: u16 = 13;

const ENTRY_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    LittleEndian,
    BigEndian,
}

/// Unsigned TIFF RATIONAL, kept exact until the final division.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    pub num: u32,
    pub den: u32,
}

impl Rational {
    /// `None` for a zero denominator.
    pub fn to_f64(self) -> Option<f64> {
        (self.den != 0).then(|| self.num as f64 / self.den as f64)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IfdEntry {
    pub tag: u16,
    pub kind: u16,
    pub count: u32,
    /// Offset of the 4-byte value-or-offset field.
    field_pos: usize,
}

/// A validated TIFF header over a borrowed buffer.
#[derive(Debug, Clone, Copy)]
pub struct TiffContext<'a> {
    pub byte_order: ByteOrder,
    pub ifd0_offset: u32,
    raw: &'a [u8],
}

impl<'a> TiffContext<'a> {
    pub fn new(raw: &'a [u8]) -> Result<Self, ExifError> {
        if raw.len() < 8 {
            return Err(ExifError::MalformedContainer("TIFF header shorter than 8 bytes"));
        }
        let byte_order = match &raw[..2] {
            b"II" => ByteOrder::LittleEndian,
            b"MM" => ByteOrder::BigEndian,
            _ => return Err(ExifError::MalformedContainer("missing II/MM byte-order marker")),
        };
        let mut ctx = Self {
            byte_order,
            ifd0_offset: 0,
            raw,
        };
        if ctx.u16_at(2)? != 42 {
            return Err(ExifError::MalformedContainer("TIFF magic is not 42"));
        }
        ctx.ifd0_offset = ctx.u32_at(4)?;
        Ok(ctx)
    }

    pub fn raw(&self) -> &'a [u8] {
        self.raw
    }

    fn bytes(&self, pos: usize, len: usize) -> Result<&'a [u8], ExifError> {
        pos.checked_add(len)
            .and_then(|end| self.raw.get(pos..end))
            .ok_or(ExifError::OffsetOutOfBounds {
                offset: pos as u64,
                len: self.raw.len(),
            })
    }

    pub fn u16_at(&self, pos: usize) -> Result<u16, ExifError> {
        let b = self.bytes(pos, 2)?;
        Ok(match self.byte_order {
            ByteOrder::LittleEndian => u16::from_le_bytes([b[0], b[1]]),
            ByteOrder::BigEndian => u16::from_be_bytes([b[0], b[1]]),
        })
    }

    pub fn u32_at(&self, pos: usize) -> Result<u32, ExifError> {
        let b = self.bytes(pos, 4)?;
        let arr = [b[0], b[1], b[2], b[3]];
        Ok(match self.byte_order {
            ByteOrder::LittleEndian => u32::from_le_bytes(arr),
            ByteOrder::BigEndian => u32::from_be_bytes(arr),
        })
    }

    /// Reads the entry table of the IFD at `offset`.
    pub fn read_ifd(&self, offset: u32) -> Result<Vec<IfdEntry>, ExifError> {
        let start = offset as usize;
        if start.checked_add(2).is_none_or(|end| end > self.raw.len()) {
            return Err(ExifError::OffsetOutOfBounds {
                offset: offset as u64,
                len: self.raw.len(),
            });
        }
        let count = self.u16_at(start)? as usize;
        let table = start + 2;
        if table + count * ENTRY_LEN > self.raw.len() {
            return Err(ExifError::MalformedContainer("truncated IFD entry table"));
        }
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let pos = table + i * ENTRY_LEN;
            entries.push(IfdEntry {
                tag: self.u16_at(pos)?,
                kind: self.u16_at(pos + 2)?,
                count: self.u32_at(pos + 4)?,
                field_pos: pos + 8,
            });
        }
        Ok(entries)
    }

    /// Position of the first value of `entry`, resolving the offset when the
    /// value does not fit inline.
    fn value_pos(&self, entry: &IfdEntry, unit: usize) -> Result<usize, ExifError> {
        let total = unit as u64 * entry.count as u64;
        if total <= 4 {
            return Ok(entry.field_pos);
        }
        let off = self.u32_at(entry.field_pos)? as usize;
        // Only the first value is ever read, but the declared extent must fit.
        if (off as u64).saturating_add(total) > self.raw.len() as u64 {
            return Err(ExifError::OffsetOutOfBounds {
                offset: off as u64,
                len: self.raw.len(),
            });
        }
        Ok(off)
    }

    /// First RATIONAL of an entry; `None` when the entry has another type.
    pub fn first_rational(&self, entry: &IfdEntry) -> Result<Option<Rational>, ExifError> {
        if entry.kind != TYPE_RATIONAL || entry.count == 0 {
            return Ok(None);
        }
        let pos = self.value_pos(entry, 8)?;
        Ok(Some(Rational {
            num: self.u32_at(pos)?,
            den: self.u32_at(pos + 4)?,
        }))
    }

    /// First SHORT or LONG of an entry.
    pub fn first_unsigned(&self, entry: &IfdEntry) -> Result<Option<u32>, ExifError> {
        if entry.count == 0 {
            return Ok(None);
        }
        match entry.kind {
            TYPE_SHORT => {
                let pos = self.value_pos(entry, 2)?;
                Ok(Some(self.u16_at(pos)? as u32))
            }
            TYPE_LONG | TYPE_IFD => {
                let pos = self.value_pos(entry, 4)?;
                Ok(Some(self.u32_at(pos)?))
            }
            _ => Ok(None),
        }
    }
}
