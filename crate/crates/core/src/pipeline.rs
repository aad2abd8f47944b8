//! The measure-then-synthesize loop. A chamber snapshot is sounded and
//! windowed, an equalizer is derived at the emulator's chip rate, and the
//! chain probe -> equalizer -> emulator -> chamber is then sounded again,
//! realization by realization, to measure the synthesized profile.
//!
//! All sounding is periodic over one PN period, so every filter in the chain
//! acts on the probe as a circular convolution over that period. The
//! equalizer and the emulator run at the chip rate; their taps are
//! zero-stuffed onto the sounder's sample grid before the chamber.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::emulator::{generate_fading, model_to_cir, DopplerConfig, TapModel};
use crate::equalizer::{cancellation_report, default_fft_len, derive_equalizer, EqualizerFilter};
use crate::error::{Error, Result};
use crate::metrics::{
    detect_grid_taps, detect_taps, match_taps, residual_metrics_from_power, DetectedTap, PdpEstimate, ResidualMetrics,
    TapMatchReport, DEFAULT_FLOOR_DB,
};
use crate::rc_model::{synthesize_rc_cir, Cir, RcConfig};
use crate::seed::{derive_seed, stream};
use crate::signal::{decimate, fft_in_place, ifft_in_place, ComplexSignal};
use crate::sounder::{apply_range, window_range, Sounder, SounderConfig, WindowRange};

/// Fading series shorter than this are lengthened so the Doppler spectrum
/// still has enough bins; only the first `n_realizations` samples are used.
const MIN_FADING_LEN: usize = 64;

/// Grid-tap detection: bins must stand this far above the median bin.
pub const GRID_TAP_EXCESS_DB: f64 = 6.0;
/// Prominence above which an unmatched peak counts as spurious.
pub const SPURIOUS_PROMINENCE_DB: f64 = 6.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub rc: RcConfig,
    pub sounder: SounderConfig,
    pub epsilon_rel: f64,
    /// Equalizer FFT length; `None` uses [`default_fft_len`].
    pub fft_len: Option<usize>,
    pub doppler: DopplerConfig,
    pub n_realizations: usize,
    /// Every random stream in a run derives from this seed.
    pub master_seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            rc: RcConfig::default(),
            sounder: SounderConfig::default(),
            epsilon_rel: crate::equalizer::DEFAULT_EPSILON_REL,
            fft_len: None,
            doppler: DopplerConfig::default(),
            n_realizations: 200,
            master_seed: 1,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.rc.validate()?;
        self.sounder.validate()?;
        self.doppler.validate()?;
        let fs = self.sounder.sample_rate();
        if (self.rc.sample_rate - fs).abs() > 1e-9 * fs {
            return Err(Error::SampleRateMismatch { left: self.rc.sample_rate, right: fs });
        }
        if !(self.epsilon_rel >= 0.0 && self.epsilon_rel.is_finite()) {
            return Err(Error::invalid(format!("epsilon_rel must be >= 0, got {}", self.epsilon_rel)));
        }
        if self.n_realizations == 0 {
            return Err(Error::invalid("n_realizations must be >= 1"));
        }
        Ok(())
    }

    /// Chamber configuration with its seed derived from the master seed.
    pub fn chamber(&self) -> RcConfig {
        RcConfig { master_seed: derive_seed(self.master_seed, stream::RC_MASTER, 0), ..self.rc.clone() }
    }

    pub fn chip_rate(&self) -> f64 {
        self.sounder.symbol_rate
    }

    pub fn sounding_seed(&self, snapshot: u64) -> u64 {
        derive_seed(self.master_seed, stream::SOUNDER_NOISE, snapshot)
    }

    pub fn fading_seed(&self) -> u64 {
        derive_seed(self.master_seed, stream::FADING_MASTER, 0)
    }

    pub fn eval_noise_seed(&self, realization: usize) -> u64 {
        derive_seed(self.master_seed, stream::EVAL_NOISE, realization as u64)
    }

    /// Every derived seed a run over `snapshots` consumes, by name.
    pub fn derived_seeds(&self, snapshots: &[u64], with_realizations: bool) -> Vec<(String, u64)> {
        let rc = self.chamber();
        let mut out = vec![("rc_master".to_string(), rc.master_seed)];
        for &s in snapshots {
            out.push((format!("rc_snapshot_{s}"), derive_seed(rc.master_seed, stream::RC_SNAPSHOT, s)));
            out.push((format!("sounding_noise_{s}"), self.sounding_seed(s)));
        }
        if with_realizations {
            out.push(("fading_master".to_string(), self.fading_seed()));
            for r in 0..self.n_realizations {
                out.push((format!("eval_noise_{r}"), self.eval_noise_seed(r)));
            }
        }
        out
    }
}

/// Everything produced by sounding one snapshot.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub truth: Cir,
    pub raw: Cir,
    pub window: WindowRange,
    pub windowed: Cir,
    /// Windowed estimate on the chip grid, delays `0..` the window end.
    pub chip_cir: Cir,
    pub equalizer: EqualizerFilter,
}

/// Even-phase chips of a windowed estimate, from delay 0 up to the window
/// end. Wrapped precursor bins (negative delays) are not kept.
pub fn chip_rate_cir(windowed: &Cir, range: WindowRange, sps: usize) -> Result<Cir> {
    let chips = decimate(&windowed.taps, sps, 0)?;
    let end = range.end.max(1) as usize;
    let keep = end.div_ceil(sps).clamp(1, chips.len());
    Ok(Cir::new(ComplexSignal::new(chips.samples()[..keep].to_vec(), chips.sample_rate())?, windowed.snapshot_id))
}

/// What a noise-free sounder reports for `h` on the chip grid, over the
/// chips the channel and pulse can reach. The equalizer can at best cancel
/// this band-limited response.
pub fn chip_truth(sounder: &Sounder, h: &Cir) -> Result<Cir> {
    let p = sounder.period();
    let sps = sounder.config().sps;
    if h.len() > p {
        return Err(Error::invalid("channel longer than one PN period"));
    }
    let mut x = h.samples().to_vec();
    x.resize(p, Complex64::new(0.0, 0.0));
    fft_in_place(&mut x);
    for (v, q) in x.iter_mut().zip(sounder.loopback_spectrum()) {
        *v *= q;
    }
    ifft_in_place(&mut x);
    let full = ComplexSignal::new(x, sounder.sample_rate())?;
    let chips = decimate(&full, sps, 0)?;
    let keep = (h.len() + sounder.filter().taps().len() / 2).div_ceil(sps).min(chips.len());
    Ok(Cir::new(ComplexSignal::new(chips.samples()[..keep].to_vec(), chips.sample_rate())?, h.snapshot_id))
}

/// Sounds chamber `snapshot`, windows the estimate and derives the
/// equalizer from it.
pub fn measure(cfg: &LoopConfig, sounder: &Sounder, snapshot: u64) -> Result<Measurement> {
    let truth = synthesize_rc_cir(&cfg.chamber(), snapshot)?;
    let raw = sounder.sound_channel(&truth, None, cfg.sounding_seed(snapshot))?;
    let window = window_range(&raw, &cfg.sounder.window)?;
    let windowed = apply_range(&raw, window);
    let chip_cir = chip_rate_cir(&windowed, window, cfg.sounder.sps)?;
    let fft_len = cfg.fft_len.unwrap_or_else(|| default_fft_len(chip_cir.len()));
    let equalizer = derive_equalizer(&chip_cir, cfg.epsilon_rel, fft_len)?;
    Ok(Measurement { truth, raw, window, windowed, chip_cir, equalizer })
}

/// Cascade of the equalizer measured on `eq_snapshot` with the chip-grid
/// response of chamber `eval_snapshot`.
pub fn cancellation(cfg: &LoopConfig, sounder: &Sounder, eq_snapshot: u64, eval_snapshot: u64) -> Result<ResidualMetrics> {
    let m = measure(cfg, sounder, eq_snapshot)?;
    let h = synthesize_rc_cir(&cfg.chamber(), eval_snapshot)?;
    cancellation_report(&chip_truth(sounder, &h)?, &m.equalizer)
}

/// Averaged profile of the closed loop on the chip grid. Delay 0 sits at
/// `zero_index`; bins before it are negative delays.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopResult {
    pub pdp: PdpEstimate,
    pub power: Vec<f64>,
    pub zero_index: usize,
    pub eval_snapshot: u64,
}

impl ClosedLoopResult {
    pub fn residual(&self) -> Result<ResidualMetrics> {
        residual_metrics_from_power(&self.power, self.zero_index, 1.0 / self.grid())
    }

    fn grid(&self) -> f64 {
        if self.pdp.len() > 1 {
            self.pdp.delays[1] - self.pdp.delays[0]
        } else {
            1.0
        }
    }
}

fn zero_stuff(chips: &[Complex64], sps: usize, len: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); len];
    for (j, &c) in chips.iter().enumerate() {
        out[j * sps] = c;
    }
    out
}

/// Runs `n_realizations` independent fading states of `model` through
/// equalizer, emulator and chamber snapshot `eval_snapshot`, sounding each.
pub fn closed_loop(
    cfg: &LoopConfig,
    sounder: &Sounder,
    equalizer: &EqualizerFilter,
    model: &TapModel,
    eval_snapshot: u64,
) -> Result<ClosedLoopResult> {
    cfg.validate()?;
    let chip_rate = cfg.chip_rate();
    let sps = cfg.sounder.sps;
    let fs = sounder.sample_rate();
    let p = sounder.period();
    let n_chips = p / sps;
    crate::signal::check_same_rate(equalizer.sample_rate(), chip_rate)?;
    match model.grid {
        Some(g) if (g * chip_rate - 1.0).abs() < 1e-9 => {}
        _ => {
            return Err(Error::invalid(format!(
                "model '{}' must be coerced to the {} ns chip grid",
                model.name,
                1e9 / chip_rate
            )))
        }
    }
    if model.max_delay() * fs >= p as f64 {
        return Err(Error::invalid("model delays exceed one PN period"));
    }

    let h = synthesize_rc_cir(&cfg.chamber(), eval_snapshot)?;
    if h.len() > p {
        return Err(Error::invalid("chamber response longer than one PN period"));
    }
    let mut fixed = zero_stuff(&equalizer.fold_periodic(n_chips), sps, p);
    fft_in_place(&mut fixed);
    let mut hp = h.samples().to_vec();
    hp.resize(p, Complex64::new(0.0, 0.0));
    fft_in_place(&mut hp);
    fixed.iter_mut().zip(&hp).for_each(|(a, b)| *a *= b);

    let n = cfg.n_realizations;
    let fading = generate_fading(model, &cfg.doppler, n.max(MIN_FADING_LEN), cfg.fading_seed())?;

    let per_realization: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let ce = model_to_cir(model, &fading.gains_at(r), fs)?;
            let mut t = ce.samples().to_vec();
            t.resize(p, Complex64::new(0.0, 0.0));
            fft_in_place(&mut t);
            t.iter_mut().zip(&fixed).for_each(|(a, b)| *a *= b);
            ifft_in_place(&mut t);
            let est = sounder.sound_periodic(&t, cfg.eval_noise_seed(r))?;
            Ok(est.samples().iter().step_by(sps).map(|v| v.norm_sqr()).collect())
        })
        .collect::<Result<_>>()?;

    let mut acc = vec![0.0; n_chips];
    for pw in &per_realization {
        acc.iter_mut().zip(pw).for_each(|(a, b)| *a += b);
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);

    // Re-centre so negative delays (equalizer precursors) precede delay 0.
    let neg = (n_chips - 1) / 2;
    let mut power = Vec::with_capacity(n_chips);
    let mut delays = Vec::with_capacity(n_chips);
    for d in -(neg as isize)..=(n_chips - 1 - neg) as isize {
        power.push(acc[d.rem_euclid(n_chips as isize) as usize]);
        delays.push(d as f64 / chip_rate);
    }
    let pdp = PdpEstimate::from_power(delays, &power, n)?;
    Ok(ClosedLoopResult { pdp, power, zero_index: neg, eval_snapshot })
}

/// Grid-tap detection of a closed-loop profile matched against the target,
/// with a tolerance of one grid step.
pub fn tap_report(pdp: &PdpEstimate, target: &TapModel) -> Result<TapMatchReport> {
    let grid = target.grid.ok_or_else(|| Error::invalid("target model is not on a grid"))?;
    let detected = detect_grid_taps(pdp, DEFAULT_FLOOR_DB, GRID_TAP_EXCESS_DB);
    Ok(match_taps(&detected, target, grid))
}

/// Peaks of prominence at least [`SPURIOUS_PROMINENCE_DB`] lying more than
/// one grid step from every target tap.
pub fn spurious_peaks(pdp: &PdpEstimate, target: &TapModel) -> Result<Vec<DetectedTap>> {
    let grid = target.grid.ok_or_else(|| Error::invalid("target model is not on a grid"))?;
    Ok(detect_taps(pdp, SPURIOUS_PROMINENCE_DB, DEFAULT_FLOOR_DB)
        .into_iter()
        .filter(|d| target.taps.iter().all(|t| (d.delay - t.delay).abs() > grid * (1.0 + 1e-9)))
        .collect())
}
