//! Binary greymap (P5) images. Writing always uses 16-bit samples; reading
//! accepts any maxval from 1 to 65535.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    /// Row-major samples, each `<= maxval`.
    pub data: Vec<u16>,
}

impl Pgm {
    /// Quantizes values in `[0, 1]` to 16 bits. Out-of-range values are
    /// clamped; non-finite values are rejected.
    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        if width == 0 || height == 0 || width.checked_mul(height) != Some(values.len()) {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}×{height} image",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image".into()));
        }
        let data = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        Ok(Pgm {
            width,
            height,
            maxval: u16::MAX,
            data,
        })
    }

    /// Samples divided by maxval.
    pub fn to_unit(&self) -> Vec<f64> {
        let m = f64::from(self.maxval);
        self.data.iter().map(|&v| f64::from(v) / m).collect()
    }

    pub fn encode(&self, comment: Option<&str>) -> Vec<u8> {
        let mut out = b"P5\n".to_vec();
        if let Some(c) = comment {
            for line in c.lines() {
                out.extend_from_slice(format!("# {line}\n").as_bytes());
            }
        }
        out.extend_from_slice(format!("{} {}\n{}\n", self.width, self.height, self.maxval).as_bytes());
        for &v in &self.data {
            if self.maxval < 256 {
                out.push(v as u8);
            } else {
                out.extend_from_slice(&v.to_be_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut p = Parser { bytes, pos: 0 };
        if bytes.get(..2) != Some(b"P5") {
            return Err(Error::format("PGM", "missing P5 magic"));
        }
        p.pos = 2;
        let width = p.number()?;
        let height = p.number()?;
        let maxval = p.number()?;
        if width == 0 || height == 0 {
            return Err(Error::format("PGM", "empty image"));
        }
        if maxval == 0 || maxval > 65535 {
            return Err(Error::format("PGM", format!("maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        match bytes.get(p.pos) {
            Some(b) if b.is_ascii_whitespace() => p.pos += 1,
            _ => return Err(Error::format("PGM", "no whitespace after maxval")),
        }
        let width_bytes = if maxval < 256 { 1 } else { 2 };
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width_bytes))
            .ok_or_else(|| Error::format("PGM", "dimensions overflow"))?;
        let raster = &bytes[p.pos..];
        if raster.len() < expected {
            return Err(Error::Truncated {
                file: "PGM raster".into(),
                expected,
                found: raster.len(),
            });
        }
        if raster.len() > expected {
            return Err(Error::format("PGM", format!("{} trailing bytes", raster.len() - expected)));
        }
        let data: Vec<u16> = if width_bytes == 1 {
            raster.iter().map(|&b| u16::from(b)).collect()
        } else {
            raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        };
        let maxval = maxval as u16;
        if let Some(v) = data.iter().find(|&&v| v > maxval) {
            return Err(Error::format("PGM", format!("sample {v} exceeds maxval {maxval}")));
        }
        Ok(Pgm {
            width,
            height,
            maxval,
            data,
        })
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
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

    fn number(&mut self) -> Result<usize> {
        let start = self.pos;
        self.skip_space_and_comments();
        if self.pos == start {
            return Err(Error::format("PGM", "header fields must be separated by whitespace"));
        }
        let digits_start = self.pos;
        let mut value: usize = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(usize::from(b - b'0')))
                .ok_or_else(|| Error::format("PGM", "header number overflows"))?;
            self.pos += 1;
        }
        if self.pos == digits_start {
            return Err(Error::format("PGM", "expected a decimal number in the header"));
        }
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::ProptestConfig;
    use proptest::{prop_assert, prop_assert_eq, proptest};

    #[test]
    fn sixteen_bit_round_trip() {
        let values: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let img = Pgm::from_unit(4, 3, &values).unwrap();
        let bytes = img.encode(Some("case 3\nseed 7"));
        assert!(bytes.starts_with(b"P5\n# case 3\n# seed 7\n4 3\n65535\n"));
        let back = Pgm::decode(&bytes).unwrap();
        assert_eq!(back, img);
        for (a, b) in back.to_unit().iter().zip(&values) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-15);
        }
    }

    #[test]
    fn eight_bit_and_comments() {
        let mut bytes = b"P5 # comment\n2 # more\n 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 1]);
        let img = Pgm::decode(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.maxval), (2, 2, 255));
        assert_eq!(img.to_unit()[1], 1.0);
        assert_eq!(Pgm::decode(&img.encode(None)).unwrap(), img);
    }

    #[test]
    fn malformed_inputs() {
        assert!(Pgm::decode(b"P2\n1 1\n255\n\x00").is_err());
        assert!(Pgm::decode(b"P5\n2 2\n255\n\x00\x00").is_err());
        assert!(Pgm::decode(b"P5\n1 1\n0\n\x00").is_err());
        assert!(Pgm::decode(b"P5\n1 1\n70000\n\x00\x00").is_err());
        assert!(Pgm::decode(b"P5\n1 1\n10\n\x0b").is_err());
        assert!(Pgm::decode(b"P5\n99999999999999999999999 1\n255\n").is_err());
        assert!(Pgm::from_unit(2, 2, &[0.0; 3]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(proptest::num::u8::ANY, 0..64)) {
            let mut input = b"P5\n".to_vec();
            input.extend_from_slice(&bytes);
            let _ = Pgm::decode(&input);
        }

        #[test]
        fn encode_decode(w in 1usize..6, h in 1usize..6, seed in proptest::num::u16::ANY) {
            let data: Vec<u16> = (0..w * h).map(|i| seed.wrapping_mul(i as u16 + 1)).collect();
            let img = Pgm { width: w, height: h, maxval: u16::MAX, data };
            let back = Pgm::decode(&img.encode(Some("x"))).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert!(back.to_unit().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
