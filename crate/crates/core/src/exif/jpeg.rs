//! JPEG marker scan for the EXIF APP1 segment.

use super::ExifError;

const SOI: [u8; 2] = [0xFF, 0xD8];
const APP1: u8 = 0xE1;
const SOS: u8 = 0xDA;
const EOI: u8 = 0xD9;
const EXIF_SIGNATURE: &[u8; 6] = b"Exif\0\0";

pub fn is_jpeg(bytes: &[u8]) -> bool {
    bytes.starts_with(&SOI)
}

/// Returns the TIFF payload of the first EXIF APP1 segment, or `None` if the
/// stream reaches image data without one.
pub fn find_exif_payload(bytes: &[u8]) -> Result<Option<&[u8]>, ExifError> {
    if !is_jpeg(bytes) {
        return Err(ExifError::MalformedContainer("missing JPEG SOI marker"));
    }
    let mut pos = 2;
    loop {
        if pos >= bytes.len() {
            return Ok(None);
        }
        if bytes[pos] != 0xFF {
            return Err(ExifError::MalformedContainer("expected JPEG marker"));
        }
        // 0xFF fill bytes may precede a marker.
        while pos < bytes.len() && bytes[pos] == 0xFF {
            pos += 1;
        }
        let Some(&marker) = bytes.get(pos) else {
            return Err(ExifError::MalformedContainer("truncated JPEG marker"));
        };
        pos += 1;
        match marker {
            SOS | EOI => return Ok(None),
            // Standalone markers carry no length.
            0x01 | 0xD0..=0xD7 => continue,
            _ => {}
        }
        let len_bytes = bytes
            .get(pos..pos + 2)
            .ok_or(ExifError::MalformedContainer("truncated JPEG segment length"))?;
        let seg_len = u16::from_be_bytes([len_bytes[0], len_bytes[1]]) as usize;
        if seg_len < 2 {
            return Err(ExifError::MalformedContainer("JPEG segment length below 2"));
        }
        let body = bytes
            .get(pos + 2..pos + seg_len)
            .ok_or(ExifError::MalformedContainer("truncated JPEG segment"))?;
        if marker == APP1 && body.starts_with(EXIF_SIGNATURE) {
            return Ok(Some(&body[EXIF_SIGNATURE.len()..]));
        }
        pos += seg_len;
    }
}
