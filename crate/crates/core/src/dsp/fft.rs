use num_complex::Complex64;

use super::DspError;

/// In-place iterative radix-2 FFT. `inverse` uses the conjugate twiddles and
/// scales by `1/n`.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) -> Result<(), DspError> {
    let n = buf.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(DspError::NotPowerOfTwo(n));
    }
    // bit reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) };
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * std::f64::consts::PI / len as f64;
        let half = len / 2;
        // exact per-index twiddles; recurrence drift matters at 1e-9
        let tw: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, ang * k as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * tw[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    if inverse {
        let s = 1.0 / n as f64;
        buf.iter_mut().for_each(|v| *v *= s);
    }
    Ok(())
}

/// Spectrum of a real frame zero-padded to `fft_size`; returns the
/// `fft_size/2 + 1` non-negative frequency bins.
pub fn compute_fft(frame: &[f64], fft_size: usize) -> Result<Vec<Complex64>, DspError> {
    if fft_size == 0 || !fft_size.is_power_of_two() {
        return Err(DspError::NotPowerOfTwo(fft_size));
    }
    if frame.len() > fft_size {
        return Err(DspError::InvalidConfig(format!(
            "frame of {} samples exceeds fft_size {fft_size}",
            frame.len()
        )));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    for (b, &x) in buf.iter_mut().zip(frame) {
        b.re = x;
    }
    fft_in_place(&mut buf, false)?;
    buf.truncate(fft_size / 2 + 1);
    Ok(buf)
}

/// `|X_k|²` for each bin.
pub fn power_spectrum(frame: &[f64], fft_size: usize) -> Result<Vec<f64>, DspError> {
    Ok(compute_fft(frame, fft_size)?.iter().map(|c| c.norm_sqr()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn impulse_is_flat() {
        let mut x = vec![0.0; 8];
        x[0] = 1.0;
        for c in compute_fft(&x, 8).unwrap() {
            assert!((c.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zeros_stay_zero() {
        assert!(compute_fft(&[0.0; 16], 16).unwrap().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(matches!(compute_fft(&[1.0; 3], 12), Err(DspError::NotPowerOfTwo(12))));
    }

    #[test]
    fn inverse_roundtrip() {
        let mut buf: Vec<Complex64> = (0..32).map(|i| Complex64::new(i as f64, -(i as f64) / 2.0)).collect();
        let orig = buf.clone();
        fft_in_place(&mut buf, false).unwrap();
        fft_in_place(&mut buf, true).unwrap();
        for (a, b) in buf.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
