//! RVF1 video files and PGM frame directories.

use std::path::Path;

use super::manifest::Rational;
use super::resample::resize_bilinear;
use crate::{Error, Result};

pub const RVF_MAGIC: &[u8; 4] = b"RVF1";
const HEADER_LEN: usize = 24;

/// Grayscale frames stored contiguously, frame-major then row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub height: usize,
    pub width: usize,
    pub fps: Rational,
    pub data: Vec<u8>,
}

impl VideoClip {
    pub fn new(height: usize, width: usize, fps: Rational, data: Vec<u8>) -> Result<Self> {
        let px = height * width;
        if px == 0 || data.len() % px != 0 {
            return Err(Error::Format(format!("{} bytes do not divide into {height}x{width} frames", data.len())));
        }
        if !fps.is_positive() {
            return Err(Error::Format("fps must be positive".into()));
        }
        Ok(Self { height, width, fps, data })
    }

    pub fn n_frames(&self) -> usize {
        self.data.len() / (self.height * self.width)
    }

    pub fn frame(&self, i: usize) -> &[u8] {
        let px = self.height * self.width;
        &self.data[i * px..(i + 1) * px]
    }

    pub fn duration(&self) -> f64 {
        self.n_frames() as f64 / self.fps.as_f64()
    }

    /// Nearest-frame resampling to `target` fps. The output holds
    /// `floor(n * target / fps)` frames; frame `k` copies the source frame
    /// whose timestamp is nearest to `k / target`.
    pub fn decimated(&self, target: Rational) -> VideoClip {
        if target == self.fps {
            return self.clone();
        }
        let n = self.n_frames() as u64;
        let (sn, sd) = (self.fps.num as u64, self.fps.den as u64);
        let (tn, td) = (target.num as u64, target.den as u64);
        let out_n = n * sd * tn / (sn * td);
        let mut data = Vec::with_capacity(out_n as usize * self.height * self.width);
        for k in 0..out_n {
            // round(k * (sn/sd) / (tn/td))
            let idx = (2 * k * sn * td + sd * tn) / (2 * sd * tn);
            data.extend_from_slice(self.frame(idx.min(n - 1) as usize));
        }
        VideoClip { height: self.height, width: self.width, fps: target, data }
    }

    /// Bilinear resize of every frame to `size x size`.
    pub fn resized(&self, size: usize) -> VideoClip {
        if self.height == size && self.width == size {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.n_frames() * size * size);
        for i in 0..self.n_frames() {
            data.extend(resize_bilinear(self.frame(i), self.height, self.width, size, size));
        }
        VideoClip { height: size, width: size, fps: self.fps, data }
    }
}

pub fn rvf_bytes(clip: &VideoClip) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + clip.data.len());
    out.extend_from_slice(RVF_MAGIC);
    for v in [clip.height as u32, clip.width as u32, clip.n_frames() as u32, clip.fps.num, clip.fps.den] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&clip.data);
    out
}

fn header(bytes: &[u8]) -> Result<(usize, usize, usize, Rational)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != RVF_MAGIC {
        return Err(Error::Format("RVF1: bad magic or short header".into()));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let fps = Rational::new(u(3), u(4));
    if u(0) == 0 || u(1) == 0 || !fps.is_positive() {
        return Err(Error::Format("RVF1: zero dimension or fps".into()));
    }
    Ok((u(0) as usize, u(1) as usize, u(2) as usize, fps))
}

pub fn parse_rvf(bytes: &[u8]) -> Result<VideoClip> {
    let (h, w, n, fps) = header(bytes)?;
    let expected = n.checked_mul(h * w).ok_or_else(|| Error::Format("RVF1: size overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::Format(format!("RVF1: expected {expected} pixel bytes, found {}", body.len())));
    }
    VideoClip::new(h, w, fps, body.to_vec())
}

pub fn write_rvf(clip: &VideoClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, rvf_bytes(clip)).map_err(|e| Error::io(path, e))
}

/// Binary (P5) 8-bit PGM.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Format(format!("PGM: {m}"));
    let mut pos = 0;
    let mut fields = Vec::new();
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::UnsupportedEncoding("only binary P5 PGM is supported".into()));
    }
    pos += 2;
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("malformed header"));
        }
        let v: usize = std::str::from_utf8(&bytes[start..pos]).unwrap().parse().map_err(|_| bad("bad number"))?;
        fields.push(v);
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedEncoding(format!("PGM maxval {maxval}, expected at most 255")));
    }
    let n = w * h;
    if bytes.len() < pos + n {
        return Err(bad("truncated raster"));
    }
    Ok((h, w, bytes[pos..pos + n].to_vec()))
}

fn read_pgm_dir(dir: &Path, fps: Rational) -> Result<VideoClip> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format(format!("{}: no .pgm frames", dir.display())));
    }
    let mut data = Vec::new();
    let mut dims = None;
    for f in &files {
        let bytes = std::fs::read(f).map_err(|e| Error::io(f, e))?;
        let (h, w, px) = parse_pgm(&bytes)?;
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::Format(format!("{}: frame is {h}x{w}, expected {}x{}", f.display(), d.0, d.1)));
            }
            _ => {}
        }
        data.extend(px);
    }
    let (h, w) = dims.unwrap();
    VideoClip::new(h, w, fps, data)
}

/// Decode an RVF1 file or a directory of PGM frames (whose rate is
/// `fallback_fps`, since PGM carries none), then resample to `target_fps` and
/// resize to `image_size`.
pub fn read_video(path: impl AsRef<Path>, fallback_fps: Rational, target_fps: Rational, image_size: usize) -> Result<VideoClip> {
    let path = path.as_ref();
    let clip = if path.is_dir() {
        read_pgm_dir(path, fallback_fps)?
    } else {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_rvf(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })?
    };
    Ok(clip.decimated(target_fps).resized(image_size))
}

/// Frame count of an RVF1 file after resampling to `target_fps`, reading only the header.
pub fn rvf_frame_count(path: impl AsRef<Path>, target_fps: Rational) -> Result<usize> {
    use std::io::Read;
    let path = path.as_ref();
    let mut buf = [0u8; HEADER_LEN];
    std::fs::File::open(path).and_then(|mut f| f.read_exact(&mut buf)).map_err(|e| Error::io(path, e))?;
    let (_, _, n, fps) = header(&buf)?;
    let (sn, sd) = (fps.num as u64, fps.den as u64);
    let (tn, td) = (target_fps.num as u64, target_fps.den as u64);
    Ok(if fps == target_fps { n } else { (n as u64 * sd * tn / (sn * td)) as usize })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(n: usize, fps: Rational) -> VideoClip {
        let data = (0..n * 4).map(|i| (i / 4) as u8).collect();
        VideoClip::new(2, 2, fps, data).unwrap()
    }

    #[test]
    fn decimation_count_is_floor_of_duration() {
        // 23.18 fps for about 10 s
        let src = clip(232, Rational::new(2318, 100));
        let out = src.decimated(Rational::integer(15));
        assert_eq!(out.n_frames(), (src.duration() * 15.0).floor() as usize);
        assert_eq!(out.n_frames(), 150);
        // frame 1 at t=1/15 -> nearest source index round(23.18/15) = 2
        assert_eq!(out.frame(1)[0], 2);
    }

    #[test]
    fn rvf_roundtrip_and_resize() {
        let c = VideoClip::new(68, 68, Rational::integer(15), vec![9; 68 * 68 * 3]).unwrap();
        let back = parse_rvf(&rvf_bytes(&c)).unwrap();
        assert_eq!(back, c);
        let big = back.resized(128);
        assert_eq!((big.height, big.width, big.n_frames()), (128, 128, 3));
    }

    #[test]
    fn rvf_rejects_bad_lengths() {
        let mut b = rvf_bytes(&clip(3, Rational::integer(15)));
        b.pop();
        assert!(parse_rvf(&b).is_err());
        assert!(parse_rvf(b"RVF2").is_err());
    }

    #[test]
    fn pgm_with_comment() {
        let mut b = b"P5\n# frame\n3 2\n255\n".to_vec();
        b.extend([1, 2, 3, 4, 5, 6]);
        assert_eq!(parse_pgm(&b).unwrap(), (2, 3, vec![1, 2, 3, 4, 5, 6]));
        assert!(matches!(parse_pgm(b"P2\n1 1\n255\n0"), Err(Error::UnsupportedEncoding(_))));
    }

    #[test]
    fn pgm_directory() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..4u8 {
            let mut b = b"P5 2 2 255\n".to_vec();
            b.extend([i; 4]);
            std::fs::write(dir.path().join(format!("{i:04}.pgm")), b).unwrap();
        }
        let v = read_video(dir.path(), Rational::integer(30), Rational::integer(15), 2).unwrap();
        assert_eq!(v.n_frames(), 2);
        assert_eq!(v.frame(1)[0], 2);
    }
}
