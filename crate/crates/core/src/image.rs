//! Image handling: PGM/PPM reading and writing (ASCII and binary variants)
//! and the crop/resize arithmetic for the real-image path.
//!
//! Images are tensors of shape `H x W x ch` (ch 1 or 3) with values in
//! [0, 1]; bytes map through `v = byte / 255` on read and
//! `byte = round(v * 255)` on write.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn image_dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match *image.shape() {
        [h, w] => Ok((h, w, 1)),
        [h, w, ch] if ch == 1 || ch == 3 => Ok((h, w, ch)),
        _ => Err(Error::Dimension {
            what: "image tensor".into(),
            expected: "H x W x {1|3}".into(),
            got: format!("{:?}", image.shape()),
        }),
    }
}

/// Encode as binary PGM (1 channel, `P5`) or PPM (3 channels, `P6`).
pub fn to_pnm_bytes(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w, ch) = image_dims(image)?;
    let magic = if ch == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for &v in image.data() {
        out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn save_pnm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_pnm_bytes(image)?;
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(&bytes)
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

struct PnmReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmReader<'a> {
    /// Next whitespace-separated token, skipping `#` comments.
    fn token(&mut self) -> Result<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return Err(Error::Format("pnm: unexpected end of header".into()));
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("pnm: bad number {:?}", tok)))
    }
}

/// Decode PGM/PPM bytes, accepting ASCII (`P2`/`P3`) and binary (`P5`/`P6`).
pub fn from_pnm_bytes(bytes: &[u8]) -> Result<Tensor> {
    let mut r = PnmReader { bytes, pos: 0 };
    let magic = r.token()?.to_vec();
    let (channels, ascii) = match magic.as_slice() {
        b"P2" => (1usize, true),
        b"P3" => (3usize, true),
        b"P5" => (1usize, false),
        b"P6" => (3usize, false),
        other => {
            return Err(Error::Format(format!(
                "pnm: unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let w = r.number()?;
    let h = r.number()?;
    let maxval = r.number()?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("pnm: unsupported maxval {maxval}")));
    }
    let count = h * w * channels;
    let mut data = Vec::with_capacity(count);
    if ascii {
        for _ in 0..count {
            let v = r.number()?;
            data.push((v.min(maxval)) as f64 / maxval as f64);
        }
    } else {
        // Exactly one whitespace byte separates maxval from the payload.
        let start = r.pos + 1;
        if start + count > bytes.len() {
            return Err(Error::Format(format!(
                "pnm: payload truncated (need {count} bytes, have {})",
                bytes.len().saturating_sub(start)
            )));
        }
        data.extend(
            bytes[start..start + count]
                .iter()
                .map(|&b| b as f64 / maxval as f64),
        );
    }
    Tensor::new(vec![h, w, channels], data)
}

pub fn load_pnm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    from_pnm_bytes(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Expand a grayscale image to 3 channels; passes RGB through unchanged.
pub fn to_rgb(image: &Tensor) -> Result<Tensor> {
    let (h, w, ch) = image_dims(image)?;
    if ch == 3 {
        return image.reshape(vec![h, w, 3]);
    }
    let mut data = Vec::with_capacity(h * w * 3);
    for &v in image.data() {
        data.extend_from_slice(&[v, v, v]);
    }
    Tensor::new(vec![h, w, 3], data)
}

/// Center crop to `(width, height)`; source must be at least that large.
pub fn center_crop(image: &Tensor, width: usize, height: usize) -> Result<Tensor> {
    let (h, w, ch) = image_dims(image)?;
    if width > w || height > h {
        return Err(Error::Dimension {
            what: "center crop".into(),
            expected: format!("source at least {width}x{height}"),
            got: format!("{w}x{h}"),
        });
    }
    let y0 = (h - height) / 2;
    let x0 = (w - width) / 2;
    let mut data = Vec::with_capacity(height * width * ch);
    for y in y0..y0 + height {
        let row_start = (y * w + x0) * ch;
        data.extend_from_slice(&image.data()[row_start..row_start + width * ch]);
    }
    Tensor::new(vec![height, width, ch], data)
}

/// Bilinear sample of a single-channel `h x w` grid at fractional (y, x).
pub(crate) fn bilinear_at(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y0 = (y.floor() as usize).min(h - 1);
    let x0 = (x.floor() as usize).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    let v00 = plane[y0 * w + x0];
    let v01 = plane[y0 * w + x1];
    let v10 = plane[y1 * w + x0];
    let v11 = plane[y1 * w + x1];
    (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11)
}

/// Bilinear resize of a single-channel plane to `out_h x out_w`, corners
/// aligned (`src = dst * (src_len - 1) / (dst_len - 1)`).
pub fn bilinear_resize_plane(
    plane: &[f64],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    let sy = if out_h > 1 {
        (h - 1) as f64 / (out_h - 1) as f64
    } else {
        0.0
    };
    let sx = if out_w > 1 {
        (w - 1) as f64 / (out_w - 1) as f64
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        for ox in 0..out_w {
            out.push(bilinear_at(plane, h, w, oy as f64 * sy, ox as f64 * sx));
        }
    }
    out
}

/// Bilinear resize of an `H x W x ch` image.
pub fn bilinear_resize(image: &Tensor, out_w: usize, out_h: usize) -> Result<Tensor> {
    let (h, w, ch) = image_dims(image)?;
    let mut planes = Vec::with_capacity(ch);
    for c in 0..ch {
        let plane: Vec<f64> = (0..h * w).map(|i| image.data()[i * ch + c]).collect();
        planes.push(bilinear_resize_plane(&plane, h, w, out_h, out_w));
    }
    let mut data = Vec::with_capacity(out_h * out_w * ch);
    for i in 0..out_h * out_w {
        for plane in planes.iter() {
            data.push(plane[i]);
        }
    }
    Tensor::new(vec![out_h, out_w, ch], data)
}
