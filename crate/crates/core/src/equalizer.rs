//! Equalizer derivation: a regularized spectral inverse of the measured
//! chamber response, `H^X = H* / (|H|^2 + eps)`, so that `h^X (x) h ~ delta`.
//!
//! The taps are the raw inverse FFT, with the unit-impulse target at index 0.
//! Indices at or above `fft_len / 2` hold negative delays: an inverse of a
//! non-minimum-phase channel is two-sided, and [`EqualizerFilter::linear_taps`]
//! returns the causal-by-offset arrangement used for linear filtering.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::metrics::{residual_metrics, ResidualMetrics};
use crate::rc_model::Cir;
use crate::signal::{convolve_slices, fft_in_place, ifft_in_place, padded_spectrum, ComplexSignal};

pub const DEFAULT_EPSILON_REL: f64 = 1e-4;

/// Bins with `|H|^2` below this fraction of the maximum make an
/// unregularized inverse unsafe.
const ILL_CONDITIONED_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct EqualizerFilter {
    pub taps: ComplexSignal,
    pub epsilon_rel: f64,
    pub source_snapshot: u64,
}

impl EqualizerFilter {
    pub fn fft_len(&self) -> usize {
        self.taps.len()
    }

    pub fn sample_rate(&self) -> f64 {
        self.taps.sample_rate()
    }

    /// Taps rotated so that delay 0 sits at the returned offset.
    pub fn linear_taps(&self) -> (Vec<Complex64>, usize) {
        let n = self.taps.len();
        let half = n / 2;
        let mut v = self.taps.samples().to_vec();
        v.rotate_right(n - half);
        (v, half)
    }

    /// Signed delay in samples of raw tap `i`.
    pub fn tap_delay(&self, i: usize) -> isize {
        let n = self.taps.len();
        if i < n / 2 {
            i as isize
        } else {
            i as isize - n as isize
        }
    }

    /// Taps folded onto a circular grid of `period` samples, honouring
    /// negative delays.
    pub fn fold_periodic(&self, period: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); period];
        let p = period as isize;
        for (i, &v) in self.taps.samples().iter().enumerate() {
            let idx = self.tap_delay(i).rem_euclid(p) as usize;
            out[idx] += v;
        }
        out
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut s = self.taps.samples().to_vec();
        fft_in_place(&mut s);
        s
    }
}

/// FFT length used when none is given: the inverse of a Rayleigh channel
/// rings for many times the channel length, so the default leaves 32x room
/// before the circular inverse aliases onto itself.
pub fn default_fft_len(cir_len: usize) -> usize {
    (32 * cir_len.max(1)).next_power_of_two()
}

/// `conj(H) / (|H|^2 + eps)` per bin with `eps = epsilon_rel * max |H|^2`.
pub fn regularized_inverse(spectrum: &[Complex64], epsilon_rel: f64) -> Result<Vec<Complex64>> {
    if !(epsilon_rel >= 0.0 && epsilon_rel.is_finite()) {
        return Err(Error::invalid(format!("epsilon_rel must be >= 0, got {epsilon_rel}")));
    }
    let max = spectrum.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::IllConditioned("channel spectrum is identically zero".into()));
    }
    if epsilon_rel == 0.0 {
        if let Some((k, v)) = spectrum
            .iter()
            .enumerate()
            .find(|(_, v)| v.norm_sqr() < ILL_CONDITIONED_RATIO * max)
        {
            return Err(Error::IllConditioned(format!(
                "bin {k} has |H|^2 = {:.3e}, below 1e-12 of the peak; use epsilon_rel > 0",
                v.norm_sqr()
            )));
        }
    }
    let eps = epsilon_rel * max;
    Ok(spectrum.iter().map(|h| h.conj() / (h.norm_sqr() + eps)).collect())
}

pub fn derive_equalizer(h: &Cir, epsilon_rel: f64, fft_len: usize) -> Result<EqualizerFilter> {
    if h.is_empty() {
        return Err(Error::invalid("cannot derive an equalizer from an empty CIR"));
    }
    if fft_len < 2 * h.len() {
        return Err(Error::invalid(format!(
            "fft_len {fft_len} is shorter than twice the CIR length {}",
            h.len()
        )));
    }
    let spectrum = padded_spectrum(h.samples(), fft_len);
    let mut x = regularized_inverse(&spectrum, epsilon_rel)?;
    ifft_in_place(&mut x);
    Ok(EqualizerFilter {
        taps: ComplexSignal::new(x, h.sample_rate())?,
        epsilon_rel,
        source_snapshot: h.snapshot_id,
    })
}

/// Physical cascade `eq (x) h` as a linear convolution with the two-sided
/// equalizer. Returns the samples and the index of delay 0.
pub fn linear_cascade(h: &Cir, eq: &EqualizerFilter) -> (Vec<Complex64>, usize) {
    let (taps, offset) = eq.linear_taps();
    (convolve_slices(&taps, h.samples()), offset)
}

/// Cancellation quality of the linear cascade `eq (x) h`.
pub fn cancellation_report(h: &Cir, eq: &EqualizerFilter) -> Result<ResidualMetrics> {
    crate::signal::check_same_rate(h.sample_rate(), eq.sample_rate())?;
    let (c, offset) = linear_cascade(h, eq);
    residual_metrics(&c, offset, h.sample_rate())
}

/// Cancellation quality of the cascade computed circularly over the
/// equalizer's FFT length, i.e. exactly the product `H^X H` the filter was
/// designed for.
pub fn circular_cancellation_report(h: &Cir, eq: &EqualizerFilter) -> Result<ResidualMetrics> {
    crate::signal::check_same_rate(h.sample_rate(), eq.sample_rate())?;
    let n = eq.fft_len();
    let mut c = padded_spectrum(h.samples(), n);
    for (x, y) in c.iter_mut().zip(eq.spectrum()) {
        *x *= y;
    }
    ifft_in_place(&mut c);
    c.rotate_right(n - n / 2);
    residual_metrics(&c, n / 2, h.sample_rate())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonSweep {
    /// `(epsilon_rel, peak_to_residual_db)` in sweep order.
    pub points: Vec<(f64, f64)>,
    pub optimum_epsilon: f64,
    pub optimum_peak_to_residual_db: f64,
}

/// Derives an equalizer from `measured` at each epsilon and scores it with
/// `score(eq)`; reports the best.
pub fn epsilon_sweep(
    measured: &Cir,
    epsilons: &[f64],
    fft_len: usize,
    score: impl Fn(&EqualizerFilter) -> Result<ResidualMetrics>,
) -> Result<EpsilonSweep> {
    if epsilons.is_empty() {
        return Err(Error::invalid("epsilon sweep needs at least one value"));
    }
    let mut points = Vec::with_capacity(epsilons.len());
    for &e in epsilons {
        let eq = derive_equalizer(measured, e, fft_len)?;
        points.push((e, score(&eq)?.peak_to_residual_db));
    }
    let best = points
        .iter()
        .copied()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty sweep");
    Ok(EpsilonSweep { points, optimum_epsilon: best.0, optimum_peak_to_residual_db: best.1 })
}
