//! Binary PPM (P6, 8-bit) reading and writing. The writer emits the
//! canonical header `P6\n{w} {h}\n255\n`, so write(read(f)) is
//! byte-identical for canonical files; parse failures report the byte
//! offset where the input stopped making sense.

use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub struct PpmError {
    pub offset: usize,
    pub msg: String,
}

impl fmt::Display for PpmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ppm parse error at byte {}: {}", self.offset, self.msg)
    }
}

impl std::error::Error for PpmError {}

#[derive(Debug, Clone)]
pub struct Image {
    pub w: usize,
    pub h: usize,
    /// Interleaved RGB, row-major, 3 bytes per pixel.
    pub rgb: Vec<u8>,
}

impl Image {
    /// Planar `[3,H,W]` floats in [0,1].
    pub fn to_planar_f32(&self) -> Vec<f32> {
        let hw = self.w * self.h;
        let mut out = vec![0.0f32; 3 * hw];
        for i in 0..hw {
            for c in 0..3 {
                out[c * hw + i] = self.rgb[3 * i + c] as f32 / 255.0;
            }
        }
        out
    }

    pub fn from_planar_f32(data: &[f32], h: usize, w: usize) -> Image {
        let hw = h * w;
        assert_eq!(data.len(), 3 * hw);
        let mut rgb = vec![0u8; 3 * hw];
        for i in 0..hw {
            for c in 0..3 {
                let v = (data[c * hw + i].clamp(0.0, 1.0) * 255.0).round() as u8;
                rgb[3 * i + c] = v;
            }
        }
        Image { w, h, rgb }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, PpmError> {
        Err(PpmError {
            offset: self.pos,
            msg: msg.into(),
        })
    }

    /// Skip whitespace and `#` comments between header tokens.
    fn skip_separators(&mut self) -> Result<(), PpmError> {
        let mut seen = false;
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => {
                    self.pos += 1;
                    seen = true;
                }
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                    seen = true;
                }
                _ => break,
            }
        }
        if !seen {
            return self.err("expected whitespace");
        }
        Ok(())
    }

    fn number(&mut self) -> Result<usize, PpmError> {
        let start = self.pos;
        let mut v: usize = 0;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            v = v
                .checked_mul(10)
                .and_then(|v| v.checked_add((self.bytes[self.pos] - b'0') as usize))
                .ok_or(PpmError {
                    offset: self.pos,
                    msg: "numeric overflow".into(),
                })?;
            self.pos += 1;
        }
        if self.pos == start {
            return self.err("expected a decimal number");
        }
        Ok(v)
    }
}

pub fn parse(bytes: &[u8]) -> Result<Image, PpmError> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return c.err("missing 'P6' magic");
    }
    c.pos = 2;
    c.skip_separators()?;
    let w = c.number()?;
    c.skip_separators()?;
    let h = c.number()?;
    c.skip_separators()?;
    let maxval = c.number()?;
    if maxval != 255 {
        return c.err(format!("unsupported maxval {maxval}, only 255"));
    }
    // exactly one whitespace byte separates the header from the payload
    if c.pos >= bytes.len() || !bytes[c.pos].is_ascii_whitespace() {
        return c.err("expected single whitespace before payload");
    }
    c.pos += 1;
    if w == 0 || h == 0 {
        return c.err("zero image dimension");
    }
    let need = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(3))
        .ok_or(PpmError {
            offset: c.pos,
            msg: "dimensions overflow".into(),
        })?;
    let have = bytes.len() - c.pos;
    if have < need {
        return Err(PpmError {
            offset: bytes.len(),
            msg: format!("payload truncated: need {need} bytes, have {have}"),
        });
    }
    if have > need {
        return Err(PpmError {
            offset: c.pos + need,
            msg: format!("{} trailing bytes after payload", have - need),
        });
    }
    Ok(Image {
        w,
        h,
        rgb: bytes[c.pos..].to_vec(),
    })
}

pub fn encode(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.w, img.h).into_bytes();
    out.extend_from_slice(&img.rgb);
    out
}

pub fn read_ppm(path: &Path) -> anyhow::Result<Image> {
    let bytes = std::fs::read(path)?;
    parse(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

pub fn write_ppm(path: &Path, img: &Image) -> anyhow::Result<()> {
    std::fs::write(path, encode(img))?;
    Ok(())
}
