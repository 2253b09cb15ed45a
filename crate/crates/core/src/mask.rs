//! Binary crop-row masks and their PGM serialization.
//!
//! Coordinates follow image convention: origin at the top-left corner, `x`
//! is the column (growing rightward) and `y` is the row (growing downward).
//! All ranges are half-open.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

/// Smallest accepted mask side length.
pub const MIN_SIDE: usize = 16;

/// Greyscale values at or above this level are crop pixels.
pub const BINARIZE_THRESHOLD: u8 = 128;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MaskError {
    #[error("mask dimensions {width}x{height} below minimum {MIN_SIDE}x{MIN_SIDE}")]
    TooSmall { width: usize, height: usize },
    #[error("pixel buffer has {got} values, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("pixel value {value} at index {index} is not 0 or 1")]
    NonBinary { index: usize, value: u8 },
    #[error("column {x} out of bounds for width {width}")]
    ColumnOutOfBounds { x: usize, width: usize },
    #[error("row {y} out of bounds for height {height}")]
    RowOutOfBounds { y: usize, height: usize },
    #[error("invalid range {from}..{to} (limit {limit})")]
    BadRange { from: usize, to: usize, limit: usize },
}

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported image format {0:?}, expected P5 or P2")]
    UnsupportedFormat(String),
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("truncated PGM payload: expected {expected} samples, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    InvalidMask(#[from] MaskError),
}

/// A pixel location. `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize)]
pub struct ImagePoint {
    pub x: usize,
    pub y: usize,
}

impl ImagePoint {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Row-major binary grid; every stored value is 0 or 1.
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("ones", &self.count_ones())
            .finish()
    }
}

impl Mask {
    /// All-zero mask.
    pub fn zeros(width: usize, height: usize) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            pixels: vec![0; width * height],
        })
    }

    pub fn ones(width: usize, height: usize) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            pixels: vec![1; width * height],
        })
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        if pixels.len() != width * height {
            return Err(MaskError::BufferSize {
                expected: width * height,
                got: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(MaskError::NonBinary { index, value });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self, MaskError> {
        let mut mask = Self::zeros(width, height)?;
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    mask.pixels[y * width + x] = 1;
                }
            }
        }
        Ok(mask)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// `I(x, y)`; panics when out of bounds.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        self.pixels[y * self.width + x] = u8::from(on);
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    pub fn count_ones(&self) -> usize {
        self.pixels.iter().map(|&p| p as usize).sum()
    }

    /// Sum of `I(x, y)` for `y` in `y_from..y_to`.
    pub fn column_sum(&self, x: usize, y_from: usize, y_to: usize) -> Result<usize, MaskError> {
        if x >= self.width {
            return Err(MaskError::ColumnOutOfBounds {
                x,
                width: self.width,
            });
        }
        if y_from > y_to || y_to > self.height {
            return Err(MaskError::BadRange {
                from: y_from,
                to: y_to,
                limit: self.height,
            });
        }
        Ok((y_from..y_to)
            .map(|y| self.pixels[y * self.width + x] as usize)
            .sum())
    }

    /// Sum of `I(x, y)` over the whole row `y`.
    pub fn row_sum(&self, y: usize) -> Result<usize, MaskError> {
        if y >= self.height {
            return Err(MaskError::RowOutOfBounds {
                y,
                height: self.height,
            });
        }
        Ok(self.row(y).iter().map(|&p| p as usize).sum())
    }

    /// Mirror image about the vertical axis: column `x` becomes `W-1-x`.
    pub fn flip_horizontal(&self) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            pixels.extend(self.row(y).iter().rev());
        }
        Self {
            width: self.width,
            height: self.height,
            pixels,
        }
    }
}

fn check_dims(width: usize, height: usize) -> Result<(), MaskError> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(MaskError::TooSmall { width, height });
    }
    Ok(())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask, PgmError> {
    let bytes = fs::read(path)?;
    decode_pgm(&bytes)
}

/// Writes `mask` as binary PGM (P5, maxval 255).
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<(), PgmError> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_pgm(mask))?;
    file.flush()?;
    Ok(())
}

pub fn encode_pgm(mask: &Mask) -> Vec<u8> {
    let header = format!("P5\n{} {}\n255\n", mask.width, mask.height);
    let mut out = Vec::with_capacity(header.len() + mask.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(mask.pixels.iter().map(|&p| if p == 1 { 255u8 } else { 0 }));
    out
}

/// Parses P5 (binary) or P2 (plain) greyscale PGM. Samples are rescaled to
/// 8 bits before thresholding, so `maxval = 1` bitmaps map 1 to crop.
pub fn decode_pgm(bytes: &[u8]) -> Result<Mask, PgmError> {
    let mut cursor = HeaderCursor { bytes, pos: 0 };
    let magic = cursor
        .token()
        .ok_or_else(|| PgmError::MalformedHeader("missing magic number".into()))?;
    let plain = match magic.as_str() {
        "P5" => false,
        "P2" => true,
        other => return Err(PgmError::UnsupportedFormat(other.to_string())),
    };
    let width = cursor.number("width")?;
    let height = cursor.number("height")?;
    let maxval = cursor.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::MalformedHeader(format!("maxval {maxval} outside 1..=65535")));
    }
    let count = width
        .checked_mul(height)
        .ok_or_else(|| PgmError::MalformedHeader("dimensions overflow".into()))?;

    let scale = |v: usize| -> Result<u8, PgmError> {
        if v > maxval {
            return Err(PgmError::MalformedHeader(format!("sample {v} exceeds maxval {maxval}")));
        }
        Ok(u8::from((v * 255 + maxval / 2) / maxval >= BINARIZE_THRESHOLD as usize))
    };

    let mut pixels = Vec::with_capacity(count);
    if plain {
        for _ in 0..count {
            match cursor.token() {
                Some(tok) => {
                    let v: usize = tok.parse().map_err(|_| {
                        PgmError::MalformedHeader(format!("bad plain sample {tok:?}"))
                    })?;
                    pixels.push(scale(v)?);
                }
                None => {
                    return Err(PgmError::Truncated {
                        expected: count,
                        found: pixels.len(),
                    })
                }
            }
        }
    } else {
        // Exactly one whitespace byte separates maxval from the raster.
        let start = cursor.pos + 1;
        let sample_bytes = if maxval > 255 { 2 } else { 1 };
        let payload = bytes.get(start..).unwrap_or(&[]);
        let found = payload.len() / sample_bytes;
        if found < count {
            return Err(PgmError::Truncated {
                expected: count,
                found,
            });
        }
        for i in 0..count {
            let v = if sample_bytes == 2 {
                (payload[2 * i] as usize) << 8 | payload[2 * i + 1] as usize
            } else {
                payload[i] as usize
            };
            pixels.push(scale(v)?);
        }
    }
    Ok(Mask::from_pixels(width, height, pixels)?)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    /// Next whitespace-delimited token, skipping `#` comments. Leaves `pos`
    /// on the delimiter that ended the token.
    fn token(&mut self) -> Option<String> {
        loop {
            match self.bytes.get(self.pos)? {
                b'#' => {
                    while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
        let start = self.pos;
        while self
            .bytes
            .get(self.pos)
            .is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#')
        {
            self.pos += 1;
        }
        Some(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> Result<usize, PgmError> {
        let tok = self
            .token()
            .ok_or_else(|| PgmError::MalformedHeader(format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| PgmError::MalformedHeader(format!("bad {what} {tok:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pgm(magic: &str, w: usize, h: usize, payload: &[u8]) -> Vec<u8> {
        let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
        out.extend_from_slice(payload);
        out
    }

    #[test]
    fn all_zero_file_has_no_crop_pixels() {
        let m = decode_pgm(&pgm("P5", 512, 512, &vec![0; 512 * 512])).unwrap();
        assert_eq!((m.width(), m.height()), (512, 512));
        assert_eq!(m.count_ones(), 0);
    }

    #[test]
    fn single_bright_column_maps_to_ones() {
        let mut payload = vec![0u8; 512 * 512];
        for y in 0..512 {
            payload[y * 512 + 256] = 255;
        }
        let m = decode_pgm(&pgm("P5", 512, 512, &payload)).unwrap();
        assert_eq!(m.column_sum(256, 0, 512).unwrap(), 512);
        assert_eq!(m.count_ones(), 512);
    }

    #[test]
    fn threshold_is_128() {
        let mut payload = vec![0u8; 16 * 16];
        payload[0] = 127;
        payload[1] = 128;
        let m = decode_pgm(&pgm("P5", 16, 16, &payload)).unwrap();
        assert_eq!(m.get(0, 0), 0);
        assert_eq!(m.get(1, 0), 1);
    }

    #[test]
    fn rgb_header_is_unsupported() {
        let err = decode_pgm(&pgm("P6", 16, 16, &[0; 16 * 16 * 3])).unwrap_err();
        assert!(matches!(err, PgmError::UnsupportedFormat(ref m) if m == "P6"));
    }

    #[test]
    fn truncated_and_malformed_are_distinct() {
        let err = decode_pgm(&pgm("P5", 16, 16, &[0; 100])).unwrap_err();
        assert!(matches!(err, PgmError::Truncated { expected: 256, found: 100 }));
        let err = decode_pgm(b"P5\n16 abc\n255\n").unwrap_err();
        assert!(matches!(err, PgmError::MalformedHeader(_)));
        let err = decode_pgm(b"").unwrap_err();
        assert!(matches!(err, PgmError::MalformedHeader(_)));
    }

    #[test]
    fn plain_pgm_with_comments() {
        let mut text = String::from("P2\n# a comment\n16 16\n# another\n1\n");
        for i in 0..256 {
            text.push_str(if i % 2 == 0 { "1 " } else { "0\n" });
        }
        let m = decode_pgm(text.as_bytes()).unwrap();
        assert_eq!(m.count_ones(), 128);
        assert_eq!(m.get(0, 0), 1);
        assert_eq!(m.get(1, 0), 0);
    }

    #[test]
    fn all_ones_encodes_to_255_payload() {
        let bytes = encode_pgm(&Mask::ones(16, 16).unwrap());
        let header = b"P5\n16 16\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let payload = &bytes[header.len()..];
        assert_eq!(payload.len(), 256);
        assert!(payload.iter().all(|&b| b == 255));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let m = Mask::zeros(16, 16).unwrap();
        let err = save_mask(&m, "/nonexistent-dir/sub/mask.pgm").unwrap_err();
        assert!(matches!(err, PgmError::Io(_)));
    }

    #[test]
    fn column_sum_examples() {
        let ones = Mask::ones(512, 512).unwrap();
        assert_eq!(ones.column_sum(0, 0, 102).unwrap(), 102);
        let zeros = Mask::zeros(64, 64).unwrap();
        assert_eq!(zeros.column_sum(17, 3, 60).unwrap(), 0);

        let even = Mask::from_fn(16, 16, |x, y| x == 5 && y % 2 == 0).unwrap();
        let oracle = (0..10).filter(|y| y % 2 == 0).count();
        assert_eq!(even.column_sum(5, 0, 10).unwrap(), oracle);
        assert_eq!(oracle, 5);
    }

    #[test]
    fn column_sum_rejects_bad_indices() {
        let m = Mask::zeros(16, 16).unwrap();
        assert!(matches!(m.column_sum(16, 0, 1), Err(MaskError::ColumnOutOfBounds { .. })));
        assert!(matches!(m.column_sum(0, 5, 4), Err(MaskError::BadRange { .. })));
        assert!(matches!(m.column_sum(0, 0, 17), Err(MaskError::BadRange { .. })));
    }

    #[test]
    fn construction_validates() {
        assert!(matches!(Mask::zeros(15, 16), Err(MaskError::TooSmall { .. })));
        assert!(matches!(
            Mask::from_pixels(16, 16, vec![2; 256]),
            Err(MaskError::NonBinary { index: 0, value: 2 })
        ));
        assert!(matches!(
            Mask::from_pixels(16, 16, vec![0; 10]),
            Err(MaskError::BufferSize { .. })
        ));
    }

    fn arb_mask() -> impl Strategy<Value = Mask> {
        (16usize..40, 16usize..40).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0u8..=1, w * h)
                .prop_map(move |px| Mask::from_pixels(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pgm_round_trip(m in arb_mask()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.pgm");
            save_mask(&m, &path).unwrap();
            prop_assert_eq!(load_mask(&path).unwrap(), m);
        }

        #[test]
        fn column_sum_is_additive_and_bounded(
            m in arb_mask(), xs in 0usize..16, cuts in proptest::collection::vec(0usize..=16, 3)
        ) {
            let mut c = cuts.clone();
            c.sort();
            let (a, b, d) = (c[0], c[1], c[2]);
            let whole = m.column_sum(xs, a, d).unwrap();
            prop_assert_eq!(whole, m.column_sum(xs, a, b).unwrap() + m.column_sum(xs, b, d).unwrap());
            prop_assert!(whole <= d - a);
        }
    }
}
