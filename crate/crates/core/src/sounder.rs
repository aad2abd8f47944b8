//! Sliding-correlation channel sounder.
//!
//! A shaped PN waveform is sent periodically through the channel, receiver
//! noise is added to each captured period, the periods are averaged
//! coherently and one period is correlated against the reference. The
//! estimate is the channel seen through the raised-cosine pulse
//! `q = rrc (x) rrc`, sampled at the waveform rate.

use num_complex::Complex64;

use crate::equalizer::regularized_inverse;
use crate::error::{Error, Result};
use crate::rc_model::Cir;
use crate::seed::{complex_normal, rng_from_seed};
use crate::signal::{
    check_same_rate, convolve_slices, default_polynomial, fft_in_place, generate_pn, ifft_in_place, rrc_taps,
    slide_correlate, upsample_and_shape, ComplexSignal, PnSequence, RrcFilter,
};
use crate::stats::percentile;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    Auto,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSpec {
    pub mode: WindowMode,
    /// Fixed mode: first delay kept, seconds.
    pub start_delay: f64,
    /// Fixed mode: window length, seconds.
    pub length: f64,
    /// Auto mode: threshold above the estimated noise floor, dB.
    pub noise_margin_db: f64,
    /// Auto mode: longest run of sub-threshold bins bridged inside the
    /// response, seconds. Deep fades in the decaying tail dip below the
    /// threshold for a few bins; isolated noise spikes further out do not
    /// extend the window.
    pub max_gap: f64,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { mode: WindowMode::Auto, start_delay: 0.0, length: 0.0, noise_margin_db: 6.0, max_gap: 50e-9 }
    }
}

impl WindowSpec {
    pub fn fixed(start_delay: f64, length: f64) -> Self {
        Self { mode: WindowMode::Fixed, start_delay, length, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            WindowMode::Fixed => {
                if !(self.start_delay >= 0.0 && self.length > 0.0 && self.start_delay.is_finite() && self.length.is_finite()) {
                    return Err(Error::invalid("fixed window needs start_delay >= 0 and length > 0"));
                }
            }
            WindowMode::Auto => {
                if !(self.noise_margin_db > 0.0 && self.noise_margin_db.is_finite()) {
                    return Err(Error::invalid("auto window needs noise_margin_db > 0"));
                }
                if !(self.max_gap >= 0.0 && self.max_gap.is_finite()) {
                    return Err(Error::invalid("auto window needs max_gap >= 0"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SounderConfig {
    pub pn_order: u32,
    /// Feedback polynomial; `None` uses the built-in primitive polynomial.
    pub polynomial: Option<u32>,
    pub sps: usize,
    pub symbol_rate: f64,
    pub rolloff: f64,
    pub rrc_span: usize,
    /// Receiver SNR relative to the mean received signal power per sample.
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub n_periods: usize,
    pub window: WindowSpec,
    /// Regularization of the calibration deconvolution, relative to the
    /// peak of the measured system spectrum.
    pub calibration_epsilon: f64,
}

impl Default for SounderConfig {
    fn default() -> Self {
        Self {
            pn_order: 12,
            polynomial: None,
            sps: 2,
            symbol_rate: 100e6,
            rolloff: 0.25,
            rrc_span: 13,
            snr_db: 30.0,
            n_periods: 10,
            window: WindowSpec::default(),
            calibration_epsilon: 1e-6,
        }
    }
}

impl SounderConfig {
    pub fn sample_rate(&self) -> f64 {
        self.symbol_rate * self.sps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_rate > 0.0 && self.symbol_rate.is_finite()) {
            return Err(Error::invalid("symbol_rate must be positive"));
        }
        if self.sps == 0 {
            return Err(Error::invalid("sps must be >= 1"));
        }
        if self.n_periods == 0 {
            return Err(Error::invalid("n_periods must be >= 1"));
        }
        if self.snr_db.is_nan() {
            return Err(Error::invalid("snr_db must be a number"));
        }
        if !(self.calibration_epsilon >= 0.0) {
            return Err(Error::invalid("calibration_epsilon must be >= 0"));
        }
        self.window.validate()
    }
}

/// Combined transmitter and receiver chain response.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemResponse {
    pub taps: ComplexSignal,
}

impl SystemResponse {
    pub fn new(taps: ComplexSignal) -> Result<Self> {
        if taps.is_empty() || taps.energy() == 0.0 {
            return Err(Error::invalid("system response must have nonzero energy"));
        }
        Ok(Self { taps })
    }
}

/// Prepared sounder: reference waveform and its spectrum.
#[derive(Debug, Clone)]
pub struct Sounder {
    cfg: SounderConfig,
    pn: PnSequence,
    filter: RrcFilter,
    reference: ComplexSignal,
    reference_spectrum: Vec<Complex64>,
    reference_energy: f64,
}

impl Sounder {
    pub fn new(cfg: &SounderConfig) -> Result<Self> {
        cfg.validate()?;
        let poly = match cfg.polynomial {
            Some(p) => p,
            None => default_polynomial(cfg.pn_order)
                .ok_or_else(|| Error::invalid(format!("no default polynomial for order {}", cfg.pn_order)))?,
        };
        let pn = generate_pn(cfg.pn_order, poly)?;
        let filter = rrc_taps(cfg.rolloff, cfg.rrc_span, cfg.sps)?;
        let reference = upsample_and_shape(&pn, &filter, cfg.symbol_rate)?;
        let mut reference_spectrum = reference.samples().to_vec();
        fft_in_place(&mut reference_spectrum);
        let reference_energy = reference.energy();
        Ok(Self { cfg: cfg.clone(), pn, filter, reference, reference_spectrum, reference_energy })
    }

    pub fn config(&self) -> &SounderConfig {
        &self.cfg
    }

    pub fn pn(&self) -> &PnSequence {
        &self.pn
    }

    pub fn filter(&self) -> &RrcFilter {
        &self.filter
    }

    pub fn reference(&self) -> &ComplexSignal {
        &self.reference
    }

    /// Samples in one PN period.
    pub fn period(&self) -> usize {
        self.reference.len()
    }

    pub fn sample_rate(&self) -> f64 {
        self.reference.sample_rate()
    }

    /// Spectrum of a noise-free loopback estimate, `|R|^2 / E_ref`.
    pub fn loopback_spectrum(&self) -> Vec<Complex64> {
        self.reference_spectrum
            .iter()
            .map(|r| Complex64::new(r.norm_sqr() / self.reference_energy, 0.0))
            .collect()
    }

    /// Per-sample noise variance for a received period of power `signal_power`.
    pub fn noise_variance(&self, signal_power: f64) -> f64 {
        if self.cfg.snr_db.is_infinite() && self.cfg.snr_db > 0.0 {
            0.0
        } else {
            signal_power / 10f64.powf(self.cfg.snr_db / 10.0)
        }
    }

    /// Sounds a channel given as its response folded onto one period.
    pub fn sound_periodic(&self, response: &[Complex64], seed: u64) -> Result<ComplexSignal> {
        let p = self.period();
        if response.len() != p {
            return Err(Error::invalid(format!("periodic response has {} samples, period is {p}", response.len())));
        }
        let mut rx = response.to_vec();
        fft_in_place(&mut rx);
        for (x, r) in rx.iter_mut().zip(&self.reference_spectrum) {
            *x *= r;
        }
        ifft_in_place(&mut rx);

        let signal_power = rx.iter().map(|v| v.norm_sqr()).sum::<f64>() / p as f64;
        let sigma2 = self.noise_variance(signal_power);
        if sigma2 > 0.0 {
            // Each captured period carries its own noise; coherent averaging
            // keeps the signal and divides the noise power by n_periods.
            let mut rng = rng_from_seed(seed);
            let mut acc = vec![Complex64::new(0.0, 0.0); p];
            for _ in 0..self.cfg.n_periods {
                for a in acc.iter_mut() {
                    *a += complex_normal(&mut rng, sigma2);
                }
            }
            let inv = 1.0 / self.cfg.n_periods as f64;
            for (x, a) in rx.iter_mut().zip(&acc) {
                *x += a * inv;
            }
        }
        slide_correlate(&ComplexSignal::new(rx, self.sample_rate())?, &self.reference)
    }

    /// Raw CIR estimate of `channel` seen through `sys` (identity if `None`).
    pub fn sound_channel(&self, channel: &Cir, sys: Option<&SystemResponse>, seed: u64) -> Result<Cir> {
        check_same_rate(channel.sample_rate(), self.sample_rate())?;
        let p = self.period();
        let effective = match sys {
            Some(s) => {
                check_same_rate(s.taps.sample_rate(), self.sample_rate())?;
                convolve_slices(channel.samples(), s.taps.samples())
            }
            None => channel.samples().to_vec(),
        };
        if channel.len() > p || effective.len() > p {
            return Err(Error::invalid(format!(
                "channel spans {} samples, longer than one PN period of {p}",
                effective.len()
            )));
        }
        let mut periodic = effective;
        periodic.resize(p, Complex64::new(0.0, 0.0));
        let est = self.sound_periodic(&periodic, seed)?;
        Ok(Cir::new(est, channel.snapshot_id))
    }

    /// Back-to-back measurement of the system response.
    pub fn calibrate(&self, sys: &SystemResponse, seed: u64) -> Result<SystemResponse> {
        let delta = Cir::new(ComplexSignal::impulse(1, self.sample_rate())?, 0);
        let est = self.sound_channel(&delta, Some(sys), seed)?;
        let floor = noise_floor(est.samples());
        let peak = est.samples().iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
        if peak == 0.0 || peak < 10.0 * floor {
            return Err(Error::NoSignal(format!(
                "calibration peak {:.1} dB is less than 10 dB above the noise floor",
                10.0 * (peak / floor).log10()
            )));
        }
        SystemResponse::new(est.taps)
    }

    /// Removes a calibrated system response from a raw estimate, leaving the
    /// estimate an identity system would have produced.
    pub fn compensate(&self, raw: &Cir, calibration: &SystemResponse) -> Result<Cir> {
        let p = self.period();
        if raw.len() != p || calibration.taps.len() != p {
            return Err(Error::invalid("compensation needs full-period estimates"));
        }
        check_same_rate(raw.sample_rate(), calibration.taps.sample_rate())?;
        let mut c = calibration.taps.samples().to_vec();
        fft_in_place(&mut c);
        let inv = regularized_inverse(&c, self.cfg.calibration_epsilon)?;
        let mut h = raw.samples().to_vec();
        fft_in_place(&mut h);
        for ((x, q), i) in h.iter_mut().zip(self.loopback_spectrum()).zip(&inv) {
            *x *= q * i;
        }
        ifft_in_place(&mut h);
        Ok(Cir::new(ComplexSignal::new(h, raw.sample_rate())?, raw.snapshot_id))
    }
}

/// Convenience wrapper building a [`Sounder`] for a single call.
pub fn sound_channel(cfg: &SounderConfig, channel: &Cir, sys: Option<&SystemResponse>, seed: u64) -> Result<Cir> {
    Sounder::new(cfg)?.sound_channel(channel, sys, seed)
}

pub fn calibrate(cfg: &SounderConfig, sys: &SystemResponse, seed: u64) -> Result<SystemResponse> {
    Sounder::new(cfg)?.calibrate(sys, seed)
}

/// Noise power estimate: 75th percentile of `|c|^2` over the trailing
/// quarter of the estimate, where a sounded channel has decayed.
pub fn noise_floor(c: &[Complex64]) -> f64 {
    let n = c.len();
    let tail: Vec<f64> = c[n - n.div_ceil(4)..].iter().map(|v| v.norm_sqr()).collect();
    percentile(&tail, 75.0)
}

/// Kept bins `[start, end)`; `start` may be negative, meaning the window
/// wraps to the end of the circular estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRange {
    pub start: isize,
    pub end: isize,
}

impl WindowRange {
    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

pub fn window_range(cir: &Cir, w: &WindowSpec) -> Result<WindowRange> {
    w.validate()?;
    let n = cir.len();
    if n == 0 {
        return Err(Error::invalid("cannot window an empty CIR"));
    }
    let fs = cir.sample_rate();
    match w.mode {
        WindowMode::Fixed => {
            let start = (w.start_delay * fs).round() as usize;
            if start >= n {
                return Err(Error::invalid(format!(
                    "window start {} ns is beyond the CIR end {} ns",
                    w.start_delay * 1e9,
                    n as f64 / fs * 1e9
                )));
            }
            let len = ((w.length * fs).round() as usize).max(1);
            Ok(WindowRange { start: start as isize, end: (start + len).min(n) as isize })
        }
        WindowMode::Auto => {
            let power: Vec<f64> = cir.samples().iter().map(|v| v.norm_sqr()).collect();
            let threshold = noise_floor(cir.samples()) * 10f64.powf(w.noise_margin_db / 10.0);
            let peak_bin = (0..n).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap_or(0);
            if !(power[peak_bin] > threshold) {
                return Err(Error::NoSignal("no CIR bin exceeds the noise floor plus margin".into()));
            }
            let gap = (w.max_gap * fs).round() as usize;
            let extend = |dir: isize| -> usize {
                let mut last = 0usize;
                let mut step = 1usize;
                while step < n && step - last <= gap + 1 {
                    let i = (peak_bin as isize + dir * step as isize).rem_euclid(n as isize) as usize;
                    if power[i] > threshold {
                        last = step;
                    }
                    step += 1;
                }
                last
            };
            let fwd = extend(1);
            let back = extend(-1);
            if fwd + back + 1 >= n {
                return Ok(WindowRange { start: 0, end: n as isize });
            }
            let mut start = peak_bin as isize - back as isize;
            let mut end = peak_bin as isize + fwd as isize + 1;
            if start >= n as isize {
                start -= n as isize;
                end -= n as isize;
            }
            if end > n as isize {
                start -= n as isize;
                end -= n as isize;
            }
            Ok(WindowRange { start, end })
        }
    }
}

/// Square window: samples inside are copied unchanged, samples outside are
/// exactly zero.
pub fn apply_window(cir: &Cir, w: &WindowSpec) -> Result<Cir> {
    let range = window_range(cir, w)?;
    Ok(apply_range(cir, range))
}

pub fn apply_range(cir: &Cir, range: WindowRange) -> Cir {
    let n = cir.len() as isize;
    let src = cir.samples();
    let mut out = vec![Complex64::new(0.0, 0.0); cir.len()];
    for i in range.start..range.end {
        let k = i.rem_euclid(n) as usize;
        out[k] = src[k];
    }
    Cir::new(
        ComplexSignal::new(out, cir.sample_rate()).expect("rate already validated"),
        cir.snapshot_id,
    )
}
