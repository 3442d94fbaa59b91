//! Binary Netpbm rasters: `P6` for RGB images, `P5` for label masks.
//!
//! Only `maxval = 255` is accepted. Headers may contain `#` comments.

use std::fs;
use std::path::Path;

use super::mask::LabelMask;
use crate::autograd::Tensor;
use crate::error::{Error, Result};

struct Header {
    width: usize,
    height: usize,
    /// Offset of the first payload byte.
    payload: usize,
}

fn parse_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        detail: detail.into(),
    }
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let start = skip_space_and_comments(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(parse_err(start, format!("expected {what}")));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text
        .parse::<usize>()
        .map_err(|_| parse_err(start, format!("{what} out of range")))?;
    Ok((value, end))
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(parse_err(
            0,
            format!("expected magic {}", String::from_utf8_lossy(magic)),
        ));
    }
    let (width, pos) = read_uint(bytes, 2, "width")?;
    let (height, pos) = read_uint(bytes, pos, "height")?;
    let (maxval, pos) = read_uint(bytes, pos, "maxval")?;
    if maxval != 255 {
        return Err(parse_err(pos, format!("maxval must be 255, got {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(parse_err(pos, "zero-sized raster"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(parse_err(pos, "expected a single whitespace byte after maxval")),
    }
    Ok(Header {
        width,
        height,
        payload: pos + 1,
    })
}

fn payload<'a>(bytes: &'a [u8], header: &Header, channels: usize) -> Result<&'a [u8]> {
    let need = header.width * header.height * channels;
    let have = bytes.len() - header.payload;
    if have < need {
        return Err(parse_err(
            bytes.len(),
            format!("truncated payload: {have} of {need} bytes"),
        ));
    }
    Ok(&bytes[header.payload..header.payload + need])
}

/// Encodes a `[3, H, W]` image with values in `[0, 1]`, rounding to 8 bits.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw("write_ppm")?;
    if c != 3 {
        return Err(Error::shape("write_ppm", format!("expected 3 channels, got {c}")));
    }
    let hw = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    for px in 0..hw {
        for ch in 0..3 {
            out.push((d[ch * hw + px].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let header = parse_header(bytes, b"P6")?;
    let raw = payload(bytes, &header, 3)?;
    let hw = header.width * header.height;
    let mut data = vec![0.0; 3 * hw];
    for (i, &b) in raw.iter().enumerate() {
        data[(i % 3) * hw + i / 3] = b as f64 / 255.0;
    }
    Tensor::new(&[3, header.height, header.width], data)
}

pub fn encode_pgm(mask: &LabelMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend_from_slice(mask.data());
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMask> {
    let header = parse_header(bytes, b"P5")?;
    let raw = payload(bytes, &header, 1)?;
    LabelMask::new(header.width, header.height, raw.to_vec())
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    decode_ppm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_pgm(path: &Path, mask: &LabelMask) -> Result<()> {
    fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<LabelMask> {
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_payload_bytes() {
        let m = LabelMask::new(2, 2, vec![0, 1, 2, 255]).unwrap();
        let bytes = encode_pgm(&m);
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(&bytes[11..], &[0x00, 0x01, 0x02, 0xFF]);
        assert_eq!(decode_pgm(&bytes).unwrap(), m);
    }

    #[test]
    fn header_conformance() {
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let m = decode_pgm(&bytes).unwrap();
        assert_eq!((m.width(), m.height()), (3, 2));

        let mut commented = b"P5 # mask\n# size follows\n3\t2 255\n".to_vec();
        commented.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        assert_eq!(decode_pgm(&commented).unwrap(), m);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        match decode_pgm(b"P6\n1 1\n255\n\x00") {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        match decode_pgm(b"P5\n2 2\n65535\n") {
            Err(Error::Parse { offset, detail }) => {
                assert_eq!(offset, 12);
                assert!(detail.contains("maxval"));
            }
            other => panic!("{other:?}"),
        }
        match decode_pgm(b"P5\n2 2\n255\n\x01\x02") {
            Err(Error::Parse { offset: 13, detail }) => assert!(detail.contains("truncated")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_pgm(b"P5\nx 2\n255\n"), Err(Error::Parse { offset: 3, .. })));
        assert!(matches!(decode_ppm(b"P6\n1 1\n255\n\x00\x00"), Err(Error::Parse { .. })));
    }

    #[test]
    fn image_round_trip_on_the_8bit_grid() {
        let data: Vec<f64> = (0..3 * 4 * 2).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        let img = Tensor::new(&[3, 4, 2], data).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        assert_eq!(&bytes[..11], b"P6\n2 4\n255\n");
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back, img);
        assert_eq!(encode_ppm(&back).unwrap(), bytes);
    }
}
