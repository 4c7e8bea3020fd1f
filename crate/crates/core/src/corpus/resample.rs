//! Windowed-sinc audio resampling and bilinear image resizing.

/// Filter length of the resampler.
pub const TAPS: usize = 64;
/// Kaiser window shape parameter.
pub const KAISER_BETA: f64 = 8.0;

/// Zeroth-order modified Bessel function of the first kind (power series).
pub fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Number of output samples for a clip of `n` input samples.
pub fn resampled_len(n: usize, from: u32, to: u32) -> usize {
    ((n as u64 * to as u64) / from as u64) as usize
}

/// Resample with a 64-tap Kaiser-windowed sinc (beta = 8), low-passing at the
/// lower of the two Nyquist rates. Weights are normalized to unit DC gain.
pub fn resample(input: &[f64], from: u32, to: u32) -> Vec<f64> {
    assert!(from > 0 && to > 0, "sample rates must be positive");
    if from == to {
        return input.to_vec();
    }
    let cutoff = (to as f64 / from as f64).min(1.0);
    let half = (TAPS / 2) as f64;
    let norm = bessel_i0(KAISER_BETA);
    let n_out = resampled_len(input.len(), from, to);
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let t = (j as u64 * from as u64) as f64 / to as f64;
        let base = t.floor() as i64;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for k in (base - TAPS as i64 / 2 + 1)..=(base + TAPS as i64 / 2) {
            let d = t - k as f64;
            let r = d / half;
            if r.abs() > 1.0 {
                continue;
            }
            let w = cutoff * sinc(cutoff * d) * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm;
            wsum += w;
            if k >= 0 && (k as usize) < input.len() {
                acc += w * input[k as usize];
            }
        }
        out.push(if wsum != 0.0 { acc / wsum } else { 0.0 });
    }
    out
}

/// Bilinear resize of a `h x w` grayscale image (pixel-center alignment).
pub fn resize_bilinear(src: &[u8], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<u8> {
    assert_eq!(src.len(), h * w);
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let mut out = Vec::with_capacity(out_h * out_w);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for y in 0..out_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..out_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let p = |yy: usize, xx: usize| src[yy * w + xx] as f64;
            let top = p(y0, x0) * (1.0 - tx) + p(y0, x1) * tx;
            let bottom = p(y1, x0) * (1.0 - tx) + p(y1, x1) * tx;
            out.push((top * (1.0 - ty) + bottom * ty).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i0_known_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-12);
        assert!((bessel_i0(8.0) - 427.564_115_721_804_7).abs() < 1e-8);
    }

    #[test]
    fn lengths() {
        assert_eq!(resampled_len(20000, 20000, 16000), 16000);
        assert_eq!(resample(&vec![0.0; 20000], 20000, 16000).len(), 16000);
    }

    #[test]
    fn dc_preserved() {
        let out = resample(&vec![0.5; 2000], 20000, 16000);
        for v in &out[40..out.len() - 40] {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn passband_tone_survives_and_alias_is_removed() {
        let from = 20000;
        let tone = |f: f64| -> Vec<f64> { (0..20000).map(|i| (std::f64::consts::TAU * f * i as f64 / from as f64).sin()).collect() };
        let rms = |v: &[f64]| (v[200..v.len() - 200].iter().map(|x| x * x).sum::<f64>() / (v.len() - 400) as f64).sqrt();
        let low = resample(&tone(1000.0), from, 16000);
        assert!((rms(&low) - 0.5f64.sqrt()).abs() < 0.01);
        // 9.5 kHz is above the 8 kHz output Nyquist
        let high = resample(&tone(9500.0), from, 16000);
        assert!(rms(&high) < 0.05);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img: Vec<u8> = (0..16).collect();
        assert_eq!(resize_bilinear(&img, 4, 4, 4, 4), img);
        let flat = vec![77u8; 68 * 68];
        assert!(resize_bilinear(&flat, 68, 68, 128, 128).iter().all(|&p| p == 77));
    }
}
