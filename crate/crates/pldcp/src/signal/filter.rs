//! Fourth-order Butterworth bandpass, applied forward-backward for zero phase.
//!
//! "Fourth-order" names the lowpass prototype (the usual convention for
//! bandpass design): a 4th-order analog Butterworth lowpass is taken through
//! the lowpass-to-bandpass transform (8 poles), then the bilinear transform
//! with pre-warped edges, and realized as four cascaded biquads.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Complex {
    re: f64,
    im: f64,
}

impl Complex {
    fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    fn add(self, o: Complex) -> Complex {
        Complex::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: Complex) -> Complex {
        Complex::new(self.re - o.re, self.im - o.im)
    }

    fn mul(self, o: Complex) -> Complex {
        Complex::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }

    fn div(self, o: Complex) -> Complex {
        let d = o.re * o.re + o.im * o.im;
        Complex::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }

    fn scale(self, c: f64) -> Complex {
        Complex::new(self.re * c, self.im * c)
    }

    fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    fn sqrt(self) -> Complex {
        let r = self.abs().sqrt();
        let theta = self.im.atan2(self.re) / 2.0;
        Complex::new(r * theta.cos(), r * theta.sin())
    }
}

/// One second-order section, denominator normalized (a0 = 1).
#[derive(Clone, Copy, Debug)]
struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    /// Direct form II transposed, zero initial state.
    fn filter_in_place(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b0 * input + s1;
            s1 = self.b1 * input - self.a1 * y + s2;
            s2 = self.b2 * input - self.a2 * y;
            *v = y;
        }
    }

    /// |H(e^{j omega})| for omega in radians/sample.
    fn magnitude_at(&self, omega: f64) -> f64 {
        let z1 = Complex::new(omega.cos(), -omega.sin()); // z^-1
        let z2 = z1.mul(z1);
        let num = Complex::new(self.b0, 0.0)
            .add(z1.scale(self.b1))
            .add(z2.scale(self.b2));
        let den = Complex::new(1.0, 0.0)
            .add(z1.scale(self.a1))
            .add(z2.scale(self.a2));
        num.div(den).abs()
    }
}

/// Zero-phase 4th-order Butterworth bandpass for a fixed sample rate.
#[derive(Clone, Debug)]
pub struct Bandpass {
    sections: [Biquad; 4],
    low_hz: f64,
    high_hz: f64,
    sample_rate: f64,
}

impl Bandpass {
    pub fn design(low_hz: f64, high_hz: f64, sample_rate: f64) -> Result<Self> {
        let nyquist = sample_rate / 2.0;
        if !(sample_rate > 0.0) {
            return Err(Error::Config(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if !(low_hz > 0.0 && low_hz < high_hz) {
            return Err(Error::Config(format!(
                "band edges must satisfy 0 < low < high, got {low_hz}..{high_hz}"
            )));
        }
        if high_hz >= nyquist {
            return Err(Error::Config(format!(
                "upper band edge {high_hz} Hz must be below the Nyquist frequency {nyquist} Hz"
            )));
        }

        // Pre-warped analog edges for the bilinear transform.
        let fs2 = 2.0 * sample_rate;
        let warp = |f: f64| fs2 * (std::f64::consts::PI * f / sample_rate).tan();
        let (w1, w2) = (warp(low_hz), warp(high_hz));
        let w0_sq = w1 * w2;
        let bw = w2 - w1;

        // Upper-half-plane poles of the 4th-order Butterworth lowpass
        // prototype; conjugates are implied. The lowpass-to-bandpass transform
        // splits each into two poles, giving four conjugate pairs.
        let mut analog_poles = Vec::with_capacity(4);
        for k in [1usize, 2] {
            let angle = std::f64::consts::PI * (2 * k + 3) as f64 / 8.0;
            let proto = Complex::new(angle.cos(), angle.sin());
            let t = proto.scale(bw / 2.0);
            let disc = t.mul(t).sub(Complex::new(w0_sq, 0.0)).sqrt();
            analog_poles.push(t.add(disc));
            analog_poles.push(t.sub(disc));
        }

        // Bilinear: z = (1 + s/fs2) / (1 - s/fs2); each analog pole and its
        // conjugate form one biquad with zeros at z = +-1.
        let mut sections = [Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1: 0.0,
            a2: 0.0,
        }; 4];
        for (i, &p) in analog_poles.iter().enumerate() {
            let zp = Complex::new(1.0, 0.0)
                .add(p.scale(1.0 / fs2))
                .div(Complex::new(1.0, 0.0).sub(p.scale(1.0 / fs2)));
            sections[i].a1 = -2.0 * zp.re;
            sections[i].a2 = zp.re * zp.re + zp.im * zp.im;
            if sections[i].a2 >= 1.0 {
                return Err(Error::Numeric(format!(
                    "bandpass design unstable for edges {low_hz}..{high_hz} Hz at {sample_rate} Hz"
                )));
            }
        }

        // Unity gain at the (warped) center frequency, folded into section 0.
        let center_omega = 2.0 * (w0_sq.sqrt() / fs2).atan();
        let gain: f64 = sections.iter().map(|s| s.magnitude_at(center_omega)).product();
        let k = 1.0 / gain;
        sections[0].b0 *= k;
        sections[0].b1 *= k;
        sections[0].b2 *= k;

        Ok(Bandpass {
            sections,
            low_hz,
            high_hz,
            sample_rate,
        })
    }

    pub fn band(&self) -> (f64, f64) {
        (self.low_hz, self.high_hz)
    }

    /// Single forward pass through both sections.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.filter_in_place(&mut y);
        }
        y
    }

    /// Forward-backward application: zero phase, squared magnitude response.
    /// The input is odd-reflected at both ends long enough for the slowest
    /// pole to settle before the retained segment begins.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = x.len();
        if n < 2 {
            return Err(Error::Data(format!(
                "filtfilt needs at least 2 samples, got {n}"
            )));
        }
        let padlen = ((3.0 * self.sample_rate / self.low_hz).ceil() as usize).min(n - 1);

        let mut ext = Vec::with_capacity(n + 2 * padlen);
        for i in (1..=padlen).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in (1..=padlen).rev() {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }

        for s in &self.sections {
            s.filter_in_place(&mut ext);
        }
        ext.reverse();
        for s in &self.sections {
            s.filter_in_place(&mut ext);
        }
        ext.reverse();

        Ok(ext[padlen..padlen + n].to_vec())
    }

    /// Two-pass (zero-phase) magnitude response at `hz`.
    pub fn zero_phase_gain_at(&self, hz: f64) -> f64 {
        let omega = 2.0 * std::f64::consts::PI * hz / self.sample_rate;
        let single: f64 = self.sections.iter().map(|s| s.magnitude_at(omega)).product();
        single * single
    }
}

/// Convenience wrapper: design and run the zero-phase bandpass in one call.
pub fn bandpass(signal: &[f64], low_hz: f64, high_hz: f64, sample_rate: f64) -> Result<Vec<f64>> {
    Bandpass::design(low_hz, high_hz, sample_rate)?.filtfilt(signal)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Magnitude of the DFT of `x` at frequency `hz` (single-bin projection).
    fn dft_magnitude(x: &[f64], hz: f64, sample_rate: f64) -> f64 {
        let n = x.len() as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in x.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * hz * t as f64 / sample_rate;
            re += v * phase.cos();
            im += v * phase.sin();
        }
        (re.hypot(im)) * 2.0 / n
    }

    fn sine(hz: f64, seconds: f64, sample_rate: f64) -> Vec<f64> {
        let n = (seconds * sample_rate) as usize;
        (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * hz * t as f64 / sample_rate).sin())
            .collect()
    }

    #[test]
    fn passband_tone_keeps_its_amplitude() {
        let fs = 200.0;
        let x = sine(10.0, 10.0, fs);
        let y = bandpass(&x, 0.3, 50.0, fs).unwrap();
        let ratio = dft_magnitude(&y, 10.0, fs) / dft_magnitude(&x, 10.0, fs);
        assert!(
            (0.95..=1.05).contains(&ratio),
            "10 Hz amplitude ratio {ratio}"
        );
    }

    #[test]
    fn mains_tone_is_attenuated_past_twenty_db() {
        let fs = 200.0;
        let x = sine(60.0, 10.0, fs);
        let y = bandpass(&x, 0.3, 50.0, fs).unwrap();
        let ratio = dft_magnitude(&y, 60.0, fs) / dft_magnitude(&x, 60.0, fs);
        let db = -20.0 * ratio.log10();
        assert!(db > 20.0, "60 Hz attenuation only {db:.2} dB");
    }

    #[test]
    fn response_matches_transfer_function_prediction() {
        let fs = 200.0;
        let filt = Bandpass::design(0.3, 50.0, fs).unwrap();
        for hz in [5.0, 10.0, 25.0, 45.0, 60.0, 80.0] {
            let x = sine(hz, 20.0, fs);
            let y = filt.filtfilt(&x).unwrap();
            let measured = dft_magnitude(&y, hz, fs) / dft_magnitude(&x, hz, fs);
            let predicted = filt.zero_phase_gain_at(hz);
            assert!(
                (measured - predicted).abs() < 0.02,
                "{hz} Hz: measured {measured:.4} vs predicted {predicted:.4}"
            );
        }
    }

    #[test]
    fn zero_phase_means_no_delay() {
        // Cross-correlate input and output of a mid-band tone: the peak lag
        // must be zero.
        let fs = 200.0;
        let x = sine(12.0, 5.0, fs);
        let y = bandpass(&x, 0.3, 50.0, fs).unwrap();
        let mut best = (0isize, f64::NEG_INFINITY);
        for lag in -5isize..=5 {
            let mut acc = 0.0;
            for i in 0..x.len() {
                let j = i as isize + lag;
                if j >= 0 && (j as usize) < y.len() {
                    acc += x[i] * y[j as usize];
                }
            }
            if acc > best.1 {
                best = (lag, acc);
            }
        }
        assert_eq!(best.0, 0, "output delayed by {} samples", best.0);
    }

    #[test]
    fn output_length_matches_input() {
        let fs = 200.0;
        let x = sine(10.0, 1.0, fs);
        assert_eq!(bandpass(&x, 1.0, 50.0, fs).unwrap().len(), x.len());
    }

    #[test]
    fn invalid_edges_are_rejected() {
        assert!(Bandpass::design(50.0, 0.3, 200.0).is_err());
        assert!(Bandpass::design(0.0, 50.0, 200.0).is_err());
        assert!(Bandpass::design(0.3, 100.0, 200.0).is_err());
        assert!(Bandpass::design(0.3, 120.0, 200.0).is_err());
        assert!(Bandpass::design(0.3, 50.0, 200.0).is_ok());
    }
}
