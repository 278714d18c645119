//! Binary PNM (P5/P6, maxval 255) images and the pixel transforms used by
//! the memory experiments.

use thiserror::Error;

/// Row-major 8-bit image with one (gray) or three (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("wrong magic: expected P5 or P6")]
    WrongMagic,
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
    #[error("unsupported maxval {0}; only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("invalid dimensions {width}x{height}x{channels} for {len} pixel bytes")]
    InvalidDimensions {
        width: usize,
        height: usize,
        channels: usize,
        len: usize,
    },
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, ImageError> {
        let ok = width > 0
            && height > 0
            && (channels == 1 || channels == 3)
            && width.checked_mul(height).and_then(|n| n.checked_mul(channels)) == Some(pixels.len());
        if !ok {
            return Err(ImageError::InvalidDimensions {
                width,
                height,
                channels,
                len: pixels.len(),
            });
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Single-channel image from a closure over `(x, y)`.
    pub fn from_fn_gray(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        ImageBuffer::new(width, height, 1, pixels).expect("dimensions match by construction")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Sample at column `x`, row `y`, channel `c`.
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Binary PNM encoding (P5 for gray, P6 for RGB).
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    fn remap(&self, width: usize, height: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Self {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..height {
            for x in 0..width {
                let (sx, sy) = src(x, y);
                let base = (sy * self.width + sx) * self.channels;
                pixels.extend_from_slice(&self.pixels[base..base + self.channels]);
            }
        }
        ImageBuffer {
            width,
            height,
            channels: self.channels,
            pixels,
        }
    }

    /// Quarter turn clockwise.
    pub fn rotate90(&self) -> Self {
        let h = self.height;
        self.remap(self.height, self.width, |x, y| (y, h - 1 - x))
    }

    pub fn rotate180(&self) -> Self {
        let (w, h) = (self.width, self.height);
        self.remap(w, h, |x, y| (w - 1 - x, h - 1 - y))
    }

    /// Quarter turn counter-clockwise.
    pub fn rotate270(&self) -> Self {
        let w = self.width;
        self.remap(self.height, self.width, |x, y| (w - 1 - y, x))
    }

    /// Mirror across the vertical axis (left and right swap).
    pub fn mirror_horizontal(&self) -> Self {
        let w = self.width;
        self.remap(self.width, self.height, |x, y| (w - 1 - x, y))
    }

    /// Mirror across the horizontal axis (top and bottom swap).
    pub fn mirror_vertical(&self) -> Self {
        let h = self.height;
        self.remap(self.width, self.height, |x, y| (x, h - 1 - y))
    }

    /// Mirror across the main diagonal.
    pub fn transpose(&self) -> Self {
        self.remap(self.height, self.width, |x, y| (y, x))
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &'static str) -> Result<u32, ImageError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImageError::MalformedHeader(what));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(ImageError::MalformedHeader(what))
    }
}

/// Decodes a binary PGM (`P5`) or PPM (`P6`) file with maxval 255.
///
/// Header comments are skipped. Bytes after the expected payload are ignored.
pub fn load_image_pnm(bytes: &[u8]) -> Result<ImageBuffer, ImageError> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(ImageError::WrongMagic),
    };
    let mut cursor = HeaderCursor { bytes, pos: 2 };
    if !cursor.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(ImageError::MalformedHeader("missing separator after magic"));
    }
    let width = cursor.number("width")? as usize;
    let height = cursor.number("height")? as usize;
    let maxval = cursor.number("maxval")?;
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(ImageError::MalformedHeader("zero dimension"));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(cursor.pos) {
        Some(b) if b.is_ascii_whitespace() => cursor.pos += 1,
        _ => return Err(ImageError::MalformedHeader("missing separator before payload")),
    }

    let expected = width * height * channels;
    let payload = &bytes[cursor.pos..];
    if payload.len() < expected {
        return Err(ImageError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    ImageBuffer::new(width, height, channels, payload[..expected].to_vec())
}

/// BT.601 luma, `round(0.299 R + 0.587 G + 0.114 B)`, in exact integer
/// arithmetic. Gray input is returned unchanged.
pub fn to_grayscale(image: &ImageBuffer) -> ImageBuffer {
    if image.channels == 1 {
        return image.clone();
    }
    let pixels = image
        .pixels
        .chunks_exact(3)
        .map(|rgb| {
            let weighted = 299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32;
            ((weighted + 500) / 1000).min(255) as u8
        })
        .collect();
    ImageBuffer {
        width: image.width,
        height: image.height,
        channels: 1,
        pixels,
    }
}
