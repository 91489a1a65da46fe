//! Binary 8-bit grayscale PGM (`P5`, maxval 255).

use std::fs;
use std::path::Path;

use super::DataError;

/// An 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), height * width, "pixel count must match {height}×{width}");
        Self { height, width, pixels }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self, DataError> {
        let bad = |msg: String| DataError::Pgm {
            path: origin.to_path_buf(),
            msg,
        };
        let mut pos = 0;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header".into()));
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if tokens[0] != "P5" {
            return Err(bad(format!("unsupported magic `{}` (need P5)", tokens[0])));
        }
        let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| bad(format!("bad {what} `{s}`")));
        let (width, height, maxval) = (
            num(&tokens[1], "width")?,
            num(&tokens[2], "height")?,
            num(&tokens[3], "maxval")?,
        );
        if maxval != 255 {
            return Err(bad(format!("maxval {maxval} unsupported (need 255)")));
        }
        let need = width * height;
        let raster = bytes.get(pos..).unwrap_or(&[]);
        if raster.len() != need {
            return Err(bad(format!("expected {need} raster bytes, found {}", raster.len())));
        }
        Ok(Self::new(height, width, raster.to_vec()))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.encode()).map_err(|e| DataError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let img = GrayImage::new(2, 3, vec![0, 1, 2, 253, 254, 255]);
        let back = GrayImage::decode(&img.encode(), Path::new("mem")).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let img = GrayImage::decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(img.pixels, vec![7, 9]);
    }

    #[test]
    fn rejects_other_maxval_and_magic() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0, 0]);
        assert!(GrayImage::decode(&bytes, Path::new("mem")).is_err());
        assert!(GrayImage::decode(b"P2\n1 1\n255\n0", Path::new("mem")).is_err());
        assert!(GrayImage::decode(b"P5\n2 2\n255\n\x00", Path::new("mem")).is_err());
    }
}
