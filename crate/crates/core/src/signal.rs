//! Off-line signal processing: zero-phase Butterworth filtering, central
//! differences, kinematics estimation from positions and parallel decimation.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowpass filter settings for kinematics estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub cutoff_hz: f64,
    /// Order of each pass.
    #[serde(default = "default_order")]
    pub order: usize,
    /// Forward then backward pass (zero phase). A single causal pass otherwise.
    #[serde(default = "default_true")]
    pub forward_backward: bool,
}

fn default_order() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl FilterSpec {
    pub fn new(cutoff_hz: f64) -> Self {
        Self { cutoff_hz, order: default_order(), forward_backward: true }
    }

    pub fn validate(&self, fm: f64) -> Result<()> {
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < fm / 2.0) {
            return Err(Error::InvalidInput(format!(
                "cutoff {} Hz must lie in (0, {}) for fm = {fm} Hz",
                self.cutoff_hz,
                fm / 2.0
            )));
        }
        if self.order < 2 {
            return Err(Error::InvalidInput(format!("filter order must be >= 2, got {}", self.order)));
        }
        Ok(())
    }

    /// Samples needed by the edge padding.
    pub fn pad_len(&self) -> usize {
        3 * self.order
    }
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self::new(20.0)
    }
}

/// Anti-alias filter plus keep-one-in-`nd` subsampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecimationSpec {
    pub nd: usize,
    /// `None` uses `0.8 * fm / (2 * nd)`.
    #[serde(default)]
    pub cutoff_hz: Option<f64>,
}

impl DecimationSpec {
    pub fn new(nd: usize) -> Self {
        Self { nd, cutoff_hz: None }
    }

    pub fn cutoff_for(&self, fm: f64) -> f64 {
        self.cutoff_hz.unwrap_or(0.8 * fm / (2.0 * self.nd as f64))
    }

    pub fn filter_for(&self, fm: f64) -> FilterSpec {
        FilterSpec::new(self.cutoff_for(fm))
    }

    pub fn validate(&self, fm: f64) -> Result<()> {
        if self.nd == 0 {
            return Err(Error::InvalidInput("decimation factor must be >= 1".into()));
        }
        self.filter_for(fm).validate(fm)
    }
}

/// Second-order section in transposed direct form II, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    /// State that makes a constant input `1` pass through without transient.
    fn unit_step_state(&self) -> [f64; 2] {
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1]);
        let z2 = self.b[2] - self.a[1] * dc;
        let z1 = dc - self.b[0];
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for s in x.iter_mut() {
            let xin = *s;
            let y = b0 * xin + z[0];
            z[0] = b1 * xin - a1 * y + z[1];
            z[1] = b2 * xin - a2 * y;
            *s = y;
        }
    }

    fn response(&self, w: f64) -> (f64, f64) {
        // H(e^{jw}) = B(z^-1) / A(z^-1)
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        let br = self.b[0] + self.b[1] * c1 + self.b[2] * c2;
        let bi = -(self.b[1] * s1 + self.b[2] * s2);
        let ar = 1.0 + self.a[0] * c1 + self.a[1] * c2;
        let ai = -(self.a[0] * s1 + self.a[1] * s2);
        let den = ar * ar + ai * ai;
        ((br * ar + bi * ai) / den, (bi * ar - br * ai) / den)
    }
}

/// Digital Butterworth lowpass from the bilinear transform with prewarping,
/// stored as cascaded second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Butterworth {
    sections: Vec<Biquad>,
}

impl Butterworth {
    pub fn lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Self> {
        FilterSpec { cutoff_hz, order, forward_backward: false }.validate(fs)?;
        let k = (PI * cutoff_hz / fs).tan();
        let k2 = k * k;
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for i in 1..=order / 2 {
            let inv_q = 2.0 * (PI * (2 * i - 1) as f64 / (2 * order) as f64).sin();
            let norm = 1.0 / (1.0 + k * inv_q + k2);
            let b0 = k2 * norm;
            sections
                .push(Biquad { b: [b0, 2.0 * b0, b0], a: [2.0 * (k2 - 1.0) * norm, (1.0 - k * inv_q + k2) * norm] });
        }
        if order % 2 == 1 {
            let b0 = k / (1.0 + k);
            sections.push(Biquad { b: [b0, b0, 0.0], a: [(k - 1.0) / (k + 1.0), 0.0] });
        }
        Ok(Self { sections })
    }

    /// Magnitude of one pass at frequency `f` (Hz).
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let (mut re, mut im) = (1.0, 0.0);
        for s in &self.sections {
            let (r, i) = s.response(w);
            (re, im) = (re * r - im * i, re * i + im * r);
        }
        re.hypot(im)
    }

    /// Causal pass with the filter state started at steady state for `x[0]`.
    pub fn filter_in_place(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        for s in &self.sections {
            let z = s.unit_step_state().map(|v| v * x0);
            s.run(x, z);
        }
    }

    /// Forward-backward pass with odd reflection of `pad` samples at both ends.
    ///
    /// Edge transients make forward-then-backward differ slightly from
    /// backward-then-forward, so both orders are run and averaged. The result
    /// is exactly symmetric under time reversal.
    pub fn filtfilt(&self, x: &[f64], pad: usize) -> Result<Vec<f64>> {
        let n = x.len();
        if n <= pad {
            return Err(Error::SeriesTooShort { needed: pad + 1, got: n });
        }
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (x[0], x[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));
        let mut rev = ext.clone();
        rev.reverse();
        for buf in [&mut ext, &mut rev] {
            self.filter_in_place(buf);
            buf.reverse();
            self.filter_in_place(buf);
        }
        // `ext` now holds the reversed forward-backward result, `rev` the
        // backward-forward one in natural order.
        Ok((0..n).map(|k| 0.5 * (ext[n + pad - 1 - k] + rev[pad + k])).collect())
    }
}

/// Lowpass filters `series` at `spec.cutoff_hz`, zero phase unless the spec
/// asks for a single causal pass.
pub fn zero_phase_lowpass(series: &[f64], fm: f64, spec: &FilterSpec) -> Result<Vec<f64>> {
    spec.validate(fm)?;
    let pad = spec.pad_len();
    if series.len() <= pad {
        return Err(Error::SeriesTooShort { needed: pad + 1, got: series.len() });
    }
    let bw = Butterworth::lowpass(spec.order, spec.cutoff_hz, fm)?;
    if spec.forward_backward {
        bw.filtfilt(series, pad)
    } else {
        let mut out = series.to_vec();
        bw.filter_in_place(&mut out);
        Ok(out)
    }
}

/// Fraction of white-noise variance that survives [`zero_phase_lowpass`]
/// with `spec`, from a midpoint rule over the Nyquist band.
pub fn white_noise_gain(spec: &FilterSpec, fm: f64) -> Result<f64> {
    spec.validate(fm)?;
    let bw = Butterworth::lowpass(spec.order, spec.cutoff_hz, fm)?;
    let passes = if spec.forward_backward { 4 } else { 2 };
    const N: usize = 20_000;
    let half = fm / 2.0;
    let sum: f64 = (0..N).map(|i| bw.magnitude((i as f64 + 0.5) * half / N as f64, fm).powi(passes)).sum();
    Ok(sum / N as f64)
}

/// Central difference in the interior, one-sided first differences at the ends.
pub fn central_difference(series: &[f64], fm: f64) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 3 {
        return Err(Error::SeriesTooShort { needed: 3, got: n });
    }
    let mut d = Vec::with_capacity(n);
    d.push((series[1] - series[0]) * fm);
    d.extend(series.windows(3).map(|w| (w[2] - w[0]) * fm / 2.0));
    d.push((series[n - 1] - series[n - 2]) * fm);
    Ok(d)
}

/// Position, velocity and acceleration estimates for both joints.
#[derive(Debug, Clone, PartialEq)]
pub struct Kinematics {
    pub q: Vec<[f64; 2]>,
    pub qd: Vec<[f64; 2]>,
    pub qdd: Vec<[f64; 2]>,
}

fn split(series: &[[f64; 2]]) -> [Vec<f64>; 2] {
    [0, 1].map(|j| series.iter().map(|s| s[j]).collect())
}

fn join(cols: &[Vec<f64>; 2]) -> Vec<[f64; 2]> {
    cols[0].iter().zip(&cols[1]).map(|(&a, &b)| [a, b]).collect()
}

/// Estimates `(q, qd, qdd)` from sampled positions: optional lowpass, then two
/// central differences. `spec = None` differentiates the raw samples.
pub fn estimate_kinematics(q: &[[f64; 2]], fm: f64, spec: Option<&FilterSpec>) -> Result<Kinematics> {
    let cols = split(q);
    let qf = match spec {
        Some(s) => [zero_phase_lowpass(&cols[0], fm, s)?, zero_phase_lowpass(&cols[1], fm, s)?],
        None => cols,
    };
    let qd = [central_difference(&qf[0], fm)?, central_difference(&qf[1], fm)?];
    let qdd = [central_difference(&qd[0], fm)?, central_difference(&qd[1], fm)?];
    Ok(Kinematics { q: join(&qf), qd: join(&qd), qdd: join(&qdd) })
}

/// Keeps every `factor`-th sample starting from the first. No anti-alias filter.
pub fn downsample<T: Copy>(series: &[T], factor: usize) -> Result<Vec<T>> {
    if factor == 0 {
        return Err(Error::InvalidInput("downsampling factor must be >= 1".into()));
    }
    Ok(series.iter().step_by(factor).copied().collect())
}

/// Lowpass filters `y` and every column of `w` block by block, then keeps one
/// row in `nd` within each block. Returns the new block bounds as well.
pub fn parallel_decimate(
    y: &DVector<f64>,
    w: &DMatrix<f64>,
    blocks: &[Range<usize>],
    fm: f64,
    spec: &DecimationSpec,
) -> Result<(DVector<f64>, DMatrix<f64>, Vec<Range<usize>>)> {
    if y.len() != w.nrows() {
        return Err(Error::DimensionMismatch(format!("Y has {} rows, W has {}", y.len(), w.nrows())));
    }
    let covered: usize = blocks.iter().map(|b| b.len()).sum();
    if covered != y.len() || blocks.iter().any(|b| b.end > y.len()) {
        return Err(Error::DimensionMismatch("joint blocks do not tile the observation rows".into()));
    }
    spec.validate(fm)?;
    let filter = spec.filter_for(fm);
    let bw = Butterworth::lowpass(filter.order, filter.cutoff_hz, fm)?;
    let pad = filter.pad_len();

    let decimate = |col: &[f64]| -> Result<Vec<f64>> {
        let filtered = if col.iter().all(|&v| v == 0.0) { col.to_vec() } else { bw.filtfilt(col, pad)? };
        downsample(&filtered, spec.nd)
    };

    let mut out_rows = Vec::with_capacity(blocks.len());
    let mut out_blocks = Vec::with_capacity(blocks.len());
    let mut start = 0;
    for b in blocks {
        let yb = decimate(y.rows(b.start, b.len()).as_slice())?;
        let cols = (0..w.ncols())
            .map(|c| {
                let col: Vec<f64> = w.view((b.start, c), (b.len(), 1)).iter().copied().collect();
                decimate(&col)
            })
            .collect::<Result<Vec<_>>>()?;
        out_blocks.push(start..start + yb.len());
        start += yb.len();
        out_rows.push((yb, cols));
    }
    let ncols = w.ncols();
    let mut y2 = DVector::zeros(start);
    let mut w2 = DMatrix::zeros(start, ncols);
    for ((yb, cols), range) in out_rows.iter().zip(&out_blocks) {
        for (i, r) in range.clone().enumerate() {
            y2[r] = yb[i];
            for c in 0..ncols {
                w2[(r, c)] = cols[c][i];
            }
        }
    }
    Ok((y2, w2, out_blocks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{QuinticReference, ReferenceTrajectory};
    use proptest::prelude::*;

    fn sine(f: f64, fm: f64, n: usize, phase: f64) -> Vec<f64> {
        (0..n).map(|k| (2.0 * PI * f * k as f64 / fm + phase).sin()).collect()
    }

    /// Least-squares fit of `a sin(wt) + b cos(wt)` over `range`; returns (amplitude, phase).
    fn fit_sine(x: &[f64], f: f64, fm: f64, range: Range<usize>) -> (f64, f64) {
        let (mut ss, mut sc, mut cc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in range {
            let w = 2.0 * PI * f * k as f64 / fm;
            let (s, c) = (w.sin(), w.cos());
            ss += s * s;
            sc += s * c;
            cc += c * c;
            xs += x[k] * s;
            xc += x[k] * c;
        }
        let det = ss * cc - sc * sc;
        let a = (xs * cc - xc * sc) / det;
        let b = (xc * ss - xs * sc) / det;
        (a.hypot(b), b.atan2(a))
    }

    #[test]
    fn white_noise_gain_matches_simulation() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let spec = DecimationSpec::new(20).filter_for(200.0);
        let g = white_noise_gain(&spec, 200.0).unwrap();
        // A brick wall at 4 Hz would pass 4 / 100 of the variance; the squared
        // Butterworth rolls off a little inside the band.
        assert!(g < 0.04 && g > 0.034, "{g}");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..200_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y = zero_phase_lowpass(&x, 200.0, &spec).unwrap();
        let var = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        assert!((var / g - 1.0).abs() < 0.05, "{var} vs {g}");
    }

    #[test]
    fn second_order_coefficients_match_closed_form() {
        // fc = fs/4 gives k = 1: b = [1,2,1]/(2+sqrt2), a1 = 0, a2 = (2-sqrt2)/(2+sqrt2).
        let bw = Butterworth::lowpass(2, 25.0, 100.0).unwrap();
        let s = bw.sections[0];
        let d = 2.0 + 2f64.sqrt();
        assert!((s.b[0] - 1.0 / d).abs() < 1e-15);
        assert!((s.b[1] - 2.0 / d).abs() < 1e-15);
        assert!(s.a[0].abs() < 1e-15);
        assert!((s.a[1] - (2.0 - 2f64.sqrt()) / d).abs() < 1e-15);
    }

    #[test]
    fn magnitude_is_butterworth_shaped() {
        for order in [2, 3, 4, 5] {
            let bw = Butterworth::lowpass(order, 20.0, 200.0).unwrap();
            assert!((bw.magnitude(0.0, 200.0) - 1.0).abs() < 1e-12);
            assert!((bw.magnitude(20.0, 200.0) - 0.5f64.sqrt()).abs() < 1e-12, "order {order}");
            assert!(bw.magnitude(99.999, 200.0) < 1e-6);
        }
    }

    #[test]
    fn in_band_sinusoid_passes_without_delay() {
        let (fm, fc) = (200.0, 20.0);
        let x = sine(fc / 10.0, fm, 4000, 0.3);
        let y = zero_phase_lowpass(&x, fm, &FilterSpec::new(fc)).unwrap();
        let (a, ph) = fit_sine(&y, fc / 10.0, fm, 200..3800);
        let (a0, ph0) = fit_sine(&x, fc / 10.0, fm, 200..3800);
        assert!((a / a0 - 1.0).abs() < 0.01, "gain {}", a / a0);
        let delay_samples = (ph - ph0) / (2.0 * PI * fc / 10.0 / fm);
        assert!(delay_samples.abs() < 0.1, "delay {delay_samples}");
    }

    #[test]
    fn constant_is_unchanged() {
        let x = vec![1.75; 300];
        let y = zero_phase_lowpass(&x, 200.0, &FilterSpec::new(20.0)).unwrap();
        for v in y {
            assert!((v - 1.75).abs() < 1e-12);
        }
    }

    #[test]
    fn stopband_attenuation_doubles_in_db() {
        let (fm, fc) = (200.0, 10.0);
        let f = 4.0 * fc;
        let single_db = -20.0 * Butterworth::lowpass(4, fc, fm).unwrap().magnitude(f, fm).log10();
        let x = sine(f, fm, 6000, 0.0);
        let y = zero_phase_lowpass(&x, fm, &FilterSpec::new(fc)).unwrap();
        let (a, _) = fit_sine(&y, f, fm, 500..5500);
        let two_pass_db = -20.0 * a.log10();
        assert!(two_pass_db >= 2.0 * single_db * 0.99, "{two_pass_db} dB vs single {single_db} dB");
    }

    #[test]
    fn short_series_is_rejected() {
        let err = zero_phase_lowpass(&[0.0; 12], 200.0, &FilterSpec::new(20.0)).unwrap_err();
        assert_eq!(err, Error::SeriesTooShort { needed: 13, got: 12 });
        assert!(zero_phase_lowpass(&[0.0; 13], 200.0, &FilterSpec::new(20.0)).is_ok());
        assert!(FilterSpec::new(100.0).validate(200.0).is_err());
        assert!(FilterSpec { order: 1, ..FilterSpec::new(10.0) }.validate(200.0).is_err());
    }

    #[test]
    fn central_difference_examples() {
        let fm = 200.0;
        let ramp: Vec<f64> = (0..50).map(|k| k as f64 / fm).collect();
        for d in central_difference(&ramp, fm).unwrap() {
            assert!((d - 1.0).abs() < 1e-12);
        }
        assert!(central_difference(&[3.0; 10], fm).unwrap().iter().all(|&d| d == 0.0));
        assert!(matches!(central_difference(&[0.0, 1.0], fm), Err(Error::SeriesTooShort { .. })));

        let f = 3.0;
        let x = sine(f, fm, 2000, 0.0);
        let d = central_difference(&x, fm).unwrap();
        let (a, _) = fit_sine(&d, f, fm, 10..1990);
        let w = 2.0 * PI * f / fm;
        let expected = 2.0 * PI * f * w.sin() / w;
        assert!((a - expected).abs() < 1e-9 * expected, "{a} vs {expected}");
    }

    #[test]
    fn filtered_kinematics_track_quintic_reference() {
        let traj = QuinticReference::exciting_default();
        let fm = 200.0;
        let n = (traj.duration() * fm) as usize;
        let samples: Vec<_> = (0..n).map(|k| traj.eval(k as f64 / fm)).collect();
        let q: Vec<_> = samples.iter().map(|s| s.q).collect();
        let k = estimate_kinematics(&q, fm, Some(&FilterSpec::new(20.0))).unwrap();
        let rms_rel = |est: &[[f64; 2]], truth: &dyn Fn(usize) -> [f64; 2]| {
            let (mut e, mut t) = (0.0, 0.0);
            for i in 2..n - 2 {
                for j in 0..2 {
                    e += (est[i][j] - truth(i)[j]).powi(2);
                    t += truth(i)[j].powi(2);
                }
            }
            (e / t).sqrt()
        };
        let vel = rms_rel(&k.qd, &|i| samples[i].qd);
        let acc = rms_rel(&k.qdd, &|i| samples[i].qdd);
        assert!(vel < 0.02, "velocity {vel}");
        assert!(acc < 0.02, "acceleration {acc}");
    }

    #[test]
    fn raw_double_difference_amplifies_noise_by_fm_squared() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let (fm, sigma) = (200.0, 1e-4);
        let q: Vec<[f64; 2]> = (0..20000)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                [sigma * a, sigma * b]
            })
            .collect();
        let k = estimate_kinematics(&q, fm, None).unwrap();
        let var: f64 = k.qdd[2..k.qdd.len() - 2].iter().map(|v| v[0] * v[0]).sum::<f64>() / (k.qdd.len() - 4) as f64;
        // (x[k+2] - 2x[k] + x[k-2]) fm^2 / 4 has variance 6 sigma^2 fm^4 / 16.
        let expected = 6.0 / 16.0 * sigma * sigma * fm.powi(4);
        assert!((var / expected - 1.0).abs() < 0.1, "{var} vs {expected}");

        let still = estimate_kinematics(&vec![[0.4, -1.0]; 100], fm, Some(&FilterSpec::default())).unwrap();
        assert!(still.qd.iter().chain(&still.qdd).all(|v| v[0].abs() < 1e-10 && v[1].abs() < 1e-10));
    }

    #[test]
    fn downsample_examples() {
        let x: Vec<usize> = (0..1000).collect();
        assert_eq!(downsample(&x, 1).unwrap(), x);
        let d = downsample(&x, 400).unwrap();
        assert_eq!(d, vec![0, 400, 800]);
        assert!(downsample(&x, 0).is_err());

        // 199 Hz sampled at 200 Hz keeps every sample and looks like -1 Hz.
        let fm = 200.0;
        let hi = sine(199.0, fm, 400, 0.0);
        let alias = sine(1.0, fm, 400, 0.0);
        for (a, b) in hi.iter().zip(&alias) {
            assert!((a + b).abs() < 1e-9);
        }
        // Keeping one in 10 of a 21 Hz tone at 200 Hz gives a 1 Hz tone at 20 Hz.
        let tone = sine(21.0, fm, 2000, 0.0);
        let kept = downsample(&tone, 10).unwrap();
        let slow = sine(1.0, 20.0, 200, 0.0);
        for (a, b) in kept.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn smooth_system(n: usize) -> (DVector<f64>, DMatrix<f64>, Vec<Range<usize>>) {
        let w = DMatrix::from_fn(2 * n, 3, |r, c| {
            let t = (r % n) as f64 / 200.0;
            ((c + 1) as f64 * t + r as f64 / n as f64).sin() + 0.1 * c as f64
        });
        let chi = DVector::from_vec(vec![1.5, -0.3, 0.7]);
        (&w * chi, w, vec![0..n, n..2 * n])
    }

    #[test]
    fn parallel_decimation_shapes_and_cutoff() {
        let spec = DecimationSpec::new(20);
        assert_eq!(spec.cutoff_for(200.0), 4.0);
        let (y, w, blocks) = smooth_system(4000);
        let (y2, w2, b2) = parallel_decimate(&y, &w, &blocks, 200.0, &spec).unwrap();
        assert_eq!(y2.len(), 400);
        assert_eq!(w2.shape(), (400, 3));
        assert_eq!(b2, vec![0..200, 200..400]);

        let ones = DVector::from_element(100, 2.0);
        let wc = DMatrix::from_element(100, 2, -1.0);
        let (yc, wcc, _) = parallel_decimate(&ones, &wc, &[0..50, 50..100], 200.0, &DecimationSpec::new(5)).unwrap();
        assert_eq!(yc.len(), 20);
        assert!(yc.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(wcc.iter().all(|v| (v + 1.0).abs() < 1e-12));

        let bad = parallel_decimate(&y.rows(0, 10).into_owned(), &w, &blocks, 200.0, &spec);
        assert!(matches!(bad, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn unit_decimation_is_near_identity_on_smooth_data() {
        let (y, w, blocks) = smooth_system(2000);
        let (y2, _, _) = parallel_decimate(&y, &w, &blocks, 200.0, &DecimationSpec::new(1)).unwrap();
        let rel = (&y2 - &y).norm() / y.norm();
        assert!(rel < 1e-5, "{rel}");
    }

    #[test]
    fn parallel_decimation_preserves_linear_relation() {
        let (y, w, blocks) = smooth_system(3000);
        let chi = DVector::from_vec(vec![1.5, -0.3, 0.7]);
        let (y2, w2, _) = parallel_decimate(&y, &w, &blocks, 200.0, &DecimationSpec::new(20)).unwrap();
        let rel = (&y2 - &w2 * chi).norm() / y2.norm();
        assert!(rel < 1e-10, "{rel}");
    }

    proptest! {
        #[test]
        fn zero_phase_scheme_is_palindromic(x in prop::collection::vec(-10.0f64..10.0, 20..200), fc in 1.0f64..90.0) {
            let spec = FilterSpec::new(fc);
            let fwd = zero_phase_lowpass(&x, 200.0, &spec).unwrap();
            let mut rev = x.clone();
            rev.reverse();
            let mut back = zero_phase_lowpass(&rev, 200.0, &spec).unwrap();
            back.reverse();
            let scale = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (a, b) in fwd.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9 * scale, "{} vs {}", a, b);
            }
        }

        #[test]
        fn decimation_commutes_with_fixed_parameters(
            seed_cols in prop::collection::vec(-1.0f64..1.0, 8),
            nd in 1usize..25,
        ) {
            let n = 600;
            let w = DMatrix::from_fn(2 * n, 8, |r, c| (seed_cols[c] * r as f64 * 0.01 + c as f64).cos());
            let chi = DVector::from_fn(8, |i, _| seed_cols[i] * 3.0);
            let y = &w * &chi;
            let (y2, w2, _) = parallel_decimate(&y, &w, &[0..n, n..2 * n], 200.0, &DecimationSpec::new(nd)).unwrap();
            let err = (&y2 - &w2 * &chi).norm();
            prop_assert!(err <= 1e-10 * y2.norm().max(1.0));
        }
    }
}
