use std::io::Write;

use super::dex::DexSections;
use crate::error::{Error, Result};
use crate::nnkit::Tensor;

pub const DEFAULT_WIDTH: usize = 256;
pub const DEFAULT_OUT_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SectionTag {
    Pad,
    Header,
    Ids,
    Data,
}

impl SectionTag {
    /// Gray level used in provenance dumps.
    pub fn gray(self) -> u8 {
        match self {
            SectionTag::Pad => 0,
            SectionTag::Header => 64,
            SectionTag::Ids => 128,
            SectionTag::Data => 192,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub red: Vec<u8>,
    pub green: Vec<u8>,
    pub blue: Vec<u8>,
}

impl RgbImage {
    pub fn channel(&self, c: usize) -> &[u8] {
        match c {
            0 => &self.red,
            1 => &self.green,
            _ => &self.blue,
        }
    }

    /// `[3, H, W]` with bytes scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = (0..3)
            .flat_map(|c| self.channel(c).iter().map(|&b| b as f64 / 255.0))
            .collect();
        Tensor::new(vec![3, self.height, self.width], data).expect("channel sizes")
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.red.len() * 3);
        for i in 0..self.red.len() {
            buf.extend_from_slice(&[self.red[i], self.green[i], self.blue[i]]);
        }
        w.write_all(&buf)?;
        Ok(())
    }
}

/// Full-resolution section image (one pixel per byte) plus its resized copy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SectionImage {
    pub height: usize,
    pub width: usize,
    pub red: Vec<u8>,
    pub green: Vec<u8>,
    pub blue: Vec<u8>,
    pub provenance: Vec<SectionTag>,
    pub resized: RgbImage,
}

impl SectionImage {
    pub fn full(&self) -> RgbImage {
        RgbImage {
            height: self.height,
            width: self.width,
            red: self.red.clone(),
            green: self.green.clone(),
            blue: self.blue.clone(),
        }
    }

    pub fn channel_sum(&self, c: usize) -> u64 {
        let ch = match c {
            0 => &self.red,
            1 => &self.green,
            _ => &self.blue,
        };
        ch.iter().map(|&b| b as u64).sum()
    }

    pub fn write_provenance_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let buf: Vec<u8> = self.provenance.iter().map(|t| t.gray()).collect();
        w.write_all(&buf)?;
        Ok(())
    }
}

/// Lays `header ∥ ids ∥ data` out row-major at `width` bytes per row, one
/// channel per section, then area-averages each channel to `out_size²`.
pub fn encode_rgb_image(sections: &DexSections, width: usize, out_size: usize) -> Result<SectionImage> {
    if width == 0 {
        return Err(Error::Parameter("image width must be at least 1".into()));
    }
    if out_size == 0 {
        return Err(Error::Parameter("output size must be at least 1".into()));
    }
    let l = sections.total_len();
    if l == 0 {
        return Err(Error::Parameter("cannot image an empty byte stream".into()));
    }
    let height = l.div_ceil(width);
    let n = height * width;
    let mut red = vec![0u8; n];
    let mut green = vec![0u8; n];
    let mut blue = vec![0u8; n];
    let mut provenance = vec![SectionTag::Pad; n];
    let mut at = 0;
    for (bytes, chan, tag) in [
        (&sections.header, &mut red, SectionTag::Header),
        (&sections.ids, &mut green, SectionTag::Ids),
        (&sections.data, &mut blue, SectionTag::Data),
    ] {
        chan[at..at + bytes.len()].copy_from_slice(bytes);
        provenance[at..at + bytes.len()].fill(tag);
        at += bytes.len();
    }
    let resized = RgbImage {
        height: out_size,
        width: out_size,
        red: area_resample(&red, height, width, out_size),
        green: area_resample(&green, height, width, out_size),
        blue: area_resample(&blue, height, width, out_size),
    };
    Ok(SectionImage {
        height,
        width,
        red,
        green,
        blue,
        provenance,
        resized,
    })
}

/// For each of `s` output cells along an axis of length `n`, the source
/// indices it overlaps and the overlap as a fraction of the cell.
fn axis_weights(n: usize, s: usize) -> Vec<Vec<(usize, f64)>> {
    // Work in units of 1/s source pixels so every overlap is an integer.
    (0..s)
        .map(|o| {
            let (lo, hi) = (o * n, (o + 1) * n);
            (lo / s..hi.div_ceil(s))
                .filter_map(|i| {
                    let ov = hi.min((i + 1) * s).saturating_sub(lo.max(i * s));
                    (ov > 0).then(|| (i, ov as f64 / n as f64))
                })
                .collect()
        })
        .collect()
}

fn area_resample(src: &[u8], h: usize, w: usize, s: usize) -> Vec<u8> {
    let wy = axis_weights(h, s);
    let wx = axis_weights(w, s);
    let mut rows = vec![0.0f64; s * w];
    for (oy, taps) in wy.iter().enumerate() {
        let dst = &mut rows[oy * w..(oy + 1) * w];
        for &(i, wt) in taps {
            for (d, &v) in dst.iter_mut().zip(&src[i * w..(i + 1) * w]) {
                *d += wt * v as f64;
            }
        }
    }
    let mut out = vec![0u8; s * s];
    for oy in 0..s {
        let row = &rows[oy * w..(oy + 1) * w];
        for (ox, taps) in wx.iter().enumerate() {
            let v: f64 = taps.iter().map(|&(j, wt)| wt * row[j]).sum();
            out[oy * s + ox] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(h: usize, i: usize, d: usize) -> DexSections {
        DexSections {
            header: (0..h).map(|k| (k % 251) as u8 + 1).collect(),
            ids: (0..i).map(|k| (k * 7 % 253) as u8 + 1).collect(),
            data: (0..d).map(|k| (k * 13 % 255) as u8 + 1).collect(),
        }
    }

    #[test]
    fn header_only_single_row() {
        let s = secs(112, 0, 0);
        let img = encode_rgb_image(&s, 112, 64).unwrap();
        assert_eq!((img.height, img.width), (1, 112));
        assert_eq!(img.red, s.header);
        assert!(img.green.iter().chain(&img.blue).all(|&b| b == 0));
    }

    #[test]
    fn per_section_sums_conserved() {
        let s = secs(112, 8, 8);
        let img = encode_rgb_image(&s, 16, 64).unwrap();
        let sum = |v: &[u8]| v.iter().map(|&b| b as u64).sum::<u64>();
        assert_eq!(img.channel_sum(0), sum(&s.header));
        assert_eq!(img.channel_sum(1), sum(&s.ids));
        assert_eq!(img.channel_sum(2), sum(&s.data));
        assert_eq!(img.height, 8);
    }

    #[test]
    fn resized_shape_is_cnn_input() {
        let img = encode_rgb_image(&secs(112, 500, 3000), DEFAULT_WIDTH, DEFAULT_OUT_SIZE).unwrap();
        assert_eq!(img.resized.to_tensor().shape, vec![3, 64, 64]);
    }

    #[test]
    fn zero_width_rejected() {
        assert!(matches!(encode_rgb_image(&secs(112, 0, 0), 0, 64), Err(Error::Parameter(_))));
    }

    #[test]
    fn tail_is_pad() {
        let img = encode_rgb_image(&secs(112, 8, 9), 16, 4).unwrap();
        assert_eq!(img.provenance.last(), Some(&SectionTag::Pad));
        assert_eq!(img.provenance[112], SectionTag::Ids);
        assert_eq!(img.provenance[120], SectionTag::Data);
    }

    #[test]
    fn area_average_of_constant_is_constant() {
        let src = vec![200u8; 7 * 5];
        assert!(area_resample(&src, 7, 5, 3).iter().all(|&v| v == 200));
        assert!(area_resample(&src, 7, 5, 64).iter().all(|&v| v == 200));
    }

    #[test]
    fn area_average_by_hand() {
        // 1×4 → 2×2: cells average pairs, the single row is stretched.
        assert_eq!(area_resample(&[10, 20, 30, 41], 1, 4, 2)[..], [15, 36, 15, 36]);
        // 1×3 → 1×2: weights (2/3,1/3) and (1/3,2/3).
        let out = area_resample(&[30, 60, 90], 1, 3, 2);
        assert_eq!(out[0], 40);
        assert_eq!(out[1], 80);
    }

    #[test]
    fn ppm_headers() {
        let img = encode_rgb_image(&secs(112, 8, 8), 16, 2).unwrap();
        let mut p6 = Vec::new();
        img.full().write_ppm(&mut p6).unwrap();
        assert!(p6.starts_with(b"P6\n16 8\n255\n"));
        assert_eq!(p6.len(), 12 + 16 * 8 * 3);
        let mut p5 = Vec::new();
        img.write_provenance_pgm(&mut p5).unwrap();
        assert!(p5.starts_with(b"P5\n16 8\n255\n"));
        assert_eq!(p5[12], 64);
        assert_eq!(p5[12 + 112], 128);
        assert_eq!(p5[12 + 120], 192);
    }
}
