//! Tapped-delay-line channel emulator: standard tap models, delay-spread
//! scaling, coercion onto the emulator's sampling grid, Jakes-shaped
//! Rayleigh fading and the time-varying filter itself.

use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::rc_model::Cir;
use crate::seed::{complex_normal, derive_seed, rng_from_seed, stream};
use crate::signal::{ifft_in_place, ComplexSignal};
use crate::stats::{db_to_linear, power_db};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fading {
    Rayleigh,
    Static,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayKind {
    /// Delays in seconds.
    Absolute,
    /// Dimensionless `r_n`, to be multiplied by a target delay spread.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub delay: f64,
    /// Relative to the strongest tap as tabulated.
    pub power_db: f64,
    pub fading: Fading,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TapModel {
    pub name: String,
    pub reference: String,
    pub delay_kind: DelayKind,
    pub taps: Vec<Tap>,
    /// Delay grid after [`coerce_to_grid`], seconds.
    pub grid: Option<f64>,
    /// Longest delay the target emulator can realize, seconds (absolute).
    pub realizable_limit: Option<f64>,
}

impl TapModel {
    /// A single static 0 dB tap at delay 0: the emulator as a through path.
    pub fn unit_tap(grid: f64) -> Self {
        Self {
            name: "unit_tap".into(),
            reference: String::new(),
            delay_kind: DelayKind::Absolute,
            taps: vec![Tap { delay: 0.0, power_db: 0.0, fading: Fading::Static }],
            grid: Some(grid),
            realizable_limit: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.taps.iter().enumerate() {
            if !(t.delay.is_finite() && t.delay >= 0.0) {
                return Err(Error::invalid(format!("tap {}: delay must be finite and >= 0", i + 1)));
            }
            if !t.power_db.is_finite() {
                return Err(Error::invalid(format!("tap {}: power must be finite", i + 1)));
            }
        }
        Ok(())
    }

    /// Copy with taps sorted by delay (stable).
    pub fn sorted(&self) -> Self {
        let mut m = self.clone();
        m.taps.sort_by(|a, b| a.delay.total_cmp(&b.delay));
        m
    }

    pub fn linear_powers(&self) -> Vec<f64> {
        self.taps.iter().map(|t| db_to_linear(t.power_db)).collect()
    }

    /// Copy whose linear powers sum to one.
    pub fn normalized_total_power(&self) -> Self {
        let total: f64 = self.linear_powers().iter().sum();
        let offset = power_db(total);
        let mut m = self.clone();
        m.taps.iter_mut().for_each(|t| t.power_db -= offset);
        m
    }

    pub fn max_delay(&self) -> f64 {
        self.taps.iter().map(|t| t.delay).fold(0.0, f64::max)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    name: String,
    #[serde(default)]
    reference: String,
    delays: String,
    #[serde(default)]
    realizable_limit_ns: Option<f64>,
    taps: Vec<TapEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TapEntry {
    delay: f64,
    power_db: f64,
    #[serde(default = "default_fading")]
    fading: String,
}

fn default_fading() -> String {
    "rayleigh".into()
}

/// Parses a model file. Absolute delays are given in nanoseconds.
pub fn parse_model(text: &str) -> Result<TapModel> {
    let f: ModelFile = toml::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))?;
    let (delay_kind, scale) = match f.delays.as_str() {
        "absolute_ns" => (DelayKind::Absolute, 1e-9),
        "normalized" => (DelayKind::Normalized, 1.0),
        other => return Err(Error::Parse(format!("unknown delay kind '{other}', expected absolute_ns or normalized"))),
    };
    let taps = f
        .taps
        .into_iter()
        .map(|t| {
            let fading = match t.fading.to_ascii_lowercase().as_str() {
                "rayleigh" => Fading::Rayleigh,
                "static" => Fading::Static,
                other => return Err(Error::Parse(format!("unknown fading '{other}'"))),
            };
            Ok(Tap { delay: t.delay * scale, power_db: t.power_db, fading })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(l) = f.realizable_limit_ns {
        if !(l.is_finite() && l >= 0.0) {
            return Err(Error::Parse(format!("realizable_limit_ns must be >= 0, got {l}")));
        }
    }
    let model = TapModel {
        name: f.name,
        reference: f.reference,
        delay_kind,
        taps,
        grid: None,
        realizable_limit: f.realizable_limit_ns.map(|l| l / 1e9),
    };
    model.validate()?;
    let max = model.taps.iter().map(|t| t.power_db).fold(f64::NEG_INFINITY, f64::max);
    if !model.taps.is_empty() && max != 0.0 {
        return Err(Error::Parse(format!("strongest tap must be 0 dB, found {max} dB")));
    }
    Ok(model)
}

pub fn load_model(path: &Path) -> Result<TapModel> {
    parse_model(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinModel {
    PedestrianB,
    TdlB,
}

impl BuiltinModel {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "pedestrian_b" => Some(Self::PedestrianB),
            "tdl_b" => Some(Self::TdlB),
            _ => None,
        }
    }

    pub fn source(self) -> &'static str {
        match self {
            Self::PedestrianB => include_str!("../data/pedestrian_b.toml"),
            Self::TdlB => include_str!("../data/tdl_b.toml"),
        }
    }
}

pub fn builtin_model(which: BuiltinModel) -> TapModel {
    parse_model(which.source()).expect("bundled model files parse")
}

/// Multiplies normalized delays by `ds_target` seconds.
pub fn scale_delay_spread(model: &TapModel, ds_target: f64) -> Result<TapModel> {
    if model.delay_kind != DelayKind::Normalized {
        return Err(Error::invalid(format!("model '{}' does not have normalized delays", model.name)));
    }
    if !(ds_target >= 0.0 && ds_target.is_finite()) {
        return Err(Error::invalid(format!("delay spread must be >= 0, got {ds_target}")));
    }
    let mut m = model.clone();
    m.delay_kind = DelayKind::Absolute;
    m.taps.iter_mut().for_each(|t| t.delay *= ds_target);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedBin {
    pub delay: f64,
    /// 1-based indices of the source taps.
    pub source_taps: Vec<usize>,
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedTap {
    /// 1-based index in the source model.
    pub tap: usize,
    pub delay: f64,
    pub coerced_delay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoercionReport {
    pub model: TapModel,
    pub merged: Vec<MergedBin>,
    pub dropped: Vec<DroppedTap>,
}

/// Rounds delays to the nearest grid multiple, merges taps sharing a bin by
/// linear power sum and drops taps beyond `max_realizable_delay`.
pub fn coerce_to_grid(model: &TapModel, grid: f64, max_realizable_delay: Option<f64>) -> Result<CoercionReport> {
    if !(grid > 0.0 && grid.is_finite()) {
        return Err(Error::invalid(format!("grid must be positive, got {grid}")));
    }
    if model.delay_kind != DelayKind::Absolute {
        return Err(Error::invalid("scale normalized delays before coercion"));
    }
    model.validate()?;
    let mut bins: Vec<(i64, Vec<usize>)> = Vec::new();
    let mut dropped = Vec::new();
    for (i, t) in model.taps.iter().enumerate() {
        let k = (t.delay / grid).round() as i64;
        let coerced = k as f64 * grid;
        if let Some(limit) = max_realizable_delay {
            if coerced > limit * (1.0 + 1e-12) {
                dropped.push(DroppedTap { tap: i + 1, delay: t.delay, coerced_delay: coerced });
                continue;
            }
        }
        match bins.iter_mut().find(|b| b.0 == k) {
            Some(b) => b.1.push(i),
            None => bins.push((k, vec![i])),
        }
    }
    bins.sort_by_key(|b| b.0);

    let mut taps = Vec::with_capacity(bins.len());
    let mut merged = Vec::new();
    for (k, members) in bins {
        let delay = k as f64 * grid;
        let p: f64 = members.iter().map(|&i| db_to_linear(model.taps[i].power_db)).sum();
        let fading = if members.iter().any(|&i| model.taps[i].fading == Fading::Rayleigh) {
            Fading::Rayleigh
        } else {
            Fading::Static
        };
        let power = if members.len() == 1 { model.taps[members[0]].power_db } else { 10.0 * p.log10() };
        if members.len() > 1 {
            merged.push(MergedBin { delay, source_taps: members.iter().map(|i| i + 1).collect(), power_db: power });
        }
        taps.push(Tap { delay, power_db: power, fading });
    }
    let out = TapModel { taps, grid: Some(grid), ..model.clone() };
    Ok(CoercionReport { model: out, merged, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DopplerSpectrum {
    Jakes,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DopplerConfig {
    pub max_doppler_hz: f64,
    pub spectrum: DopplerSpectrum,
    /// Rate of the fading process, Hz.
    pub sample_rate: f64,
    /// Signal samples per fading sample when filtering.
    pub block_len: usize,
}

impl Default for DopplerConfig {
    fn default() -> Self {
        Self { max_doppler_hz: 10.0, spectrum: DopplerSpectrum::Jakes, sample_rate: 25.0, block_len: 1 }
    }
}

impl DopplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::invalid("fading sample_rate must be positive"));
        }
        if !(self.max_doppler_hz >= 0.0 && self.max_doppler_hz < self.sample_rate / 2.0) {
            return Err(Error::invalid(format!(
                "max Doppler {} Hz must be in [0, {}) Hz",
                self.max_doppler_hz,
                self.sample_rate / 2.0
            )));
        }
        if self.block_len == 0 {
            return Err(Error::invalid("block_len must be >= 1"));
        }
        Ok(())
    }
}

/// Per-tap complex gain series.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingProcess {
    pub gains: Vec<Vec<Complex64>>,
    pub sample_rate: f64,
    pub block_len: usize,
}

impl FadingProcess {
    pub fn len(&self) -> usize {
        self.gains.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gains of all taps at fading sample `n`.
    pub fn gains_at(&self, n: usize) -> Vec<Complex64> {
        self.gains.iter().map(|g| g[n]).collect()
    }

    /// All-constant process, e.g. for frozen-channel analysis.
    pub fn frozen(gains: &[Complex64], n_samples: usize, block_len: usize) -> Self {
        Self {
            gains: gains.iter().map(|&g| vec![g; n_samples]).collect(),
            sample_rate: 1.0,
            block_len,
        }
    }
}

const MIN_DOPPLER_BINS: usize = 8;

/// Jakes shaping weights `S(f)` on the FFT bins of an `n`-point series.
fn jakes_weights(n: usize, fd: f64, fs: f64) -> Result<Vec<f64>> {
    let df = fs / n as f64;
    let freq = |k: usize| if k <= n / 2 { k as f64 * df } else { (k as f64 - n as f64) * df };
    let mut s = vec![0.0; n];
    let mut in_band = 0;
    for (k, w) in s.iter_mut().enumerate() {
        let x = freq(k).abs() / fd;
        if x < 1.0 {
            *w = 1.0 / (1.0 - x * x).sqrt();
            in_band += 1;
        }
    }
    // A bin exactly on +-fd takes the value of its inner neighbour.
    for k in 0..n {
        let f = freq(k).abs();
        if (f - fd).abs() <= 1e-9 * fd {
            let x = (f - df) / fd;
            s[k] = 1.0 / (1.0 - x * x).sqrt();
            in_band += 1;
        }
    }
    if in_band < MIN_DOPPLER_BINS {
        return Err(Error::invalid(format!(
            "only {in_band} spectral bins inside +-{fd} Hz; need {MIN_DOPPLER_BINS} (lengthen the series or raise the Doppler)"
        )));
    }
    Ok(s)
}

fn tap_series(tap: &Tap, index: usize, dop: &DopplerConfig, weights: Option<&[f64]>, n: usize, seed: u64) -> Vec<Complex64> {
    let amp = db_to_linear(tap.power_db).sqrt();
    let mut rng = rng_from_seed(derive_seed(seed, stream::FADING_TAP, index as u64));
    match (tap.fading, dop.spectrum, weights) {
        (Fading::Static, _, _) => vec![Complex64::new(amp, 0.0); n],
        (Fading::Rayleigh, DopplerSpectrum::Jakes, Some(s)) => {
            let total: f64 = s.iter().sum();
            let c = amp * n as f64 / total.sqrt();
            let mut g: Vec<Complex64> = s.iter().map(|&w| complex_normal(&mut rng, 1.0) * w.sqrt()).collect();
            ifft_in_place(&mut g);
            g.iter_mut().for_each(|v| *v *= c);
            g
        }
        _ => {
            let phase = complex_normal(&mut rng, 1.0);
            let unit = if phase.norm() > 0.0 { phase / phase.norm() } else { Complex64::new(1.0, 0.0) };
            vec![unit * amp; n]
        }
    }
}

/// Independent fading series per tap, each scaled to its tap's linear power.
pub fn generate_fading(model: &TapModel, dop: &DopplerConfig, n_samples: usize, seed: u64) -> Result<FadingProcess> {
    dop.validate()?;
    if n_samples == 0 {
        return Err(Error::invalid("n_samples must be >= 1"));
    }
    let needs_shaping = dop.spectrum == DopplerSpectrum::Jakes && model.taps.iter().any(|t| t.fading == Fading::Rayleigh);
    let weights = if needs_shaping {
        Some(jakes_weights(n_samples, dop.max_doppler_hz, dop.sample_rate)?)
    } else {
        None
    };
    let gains = model
        .taps
        .par_iter()
        .enumerate()
        .map(|(i, t)| tap_series(t, i, dop, weights.as_deref(), n_samples, seed))
        .collect();
    Ok(FadingProcess { gains, sample_rate: dop.sample_rate, block_len: dop.block_len })
}

fn delay_samples(model: &TapModel, sample_rate: f64) -> Result<Vec<usize>> {
    model
        .taps
        .iter()
        .map(|t| {
            let x = t.delay * sample_rate;
            let k = x.round();
            if (x - k).abs() > 1e-6 {
                Err(Error::invalid(format!(
                    "tap delay {} ns is not a whole number of {} ns samples",
                    t.delay * 1e9,
                    1e9 / sample_rate
                )))
            } else {
                Ok(k as usize)
            }
        })
        .collect()
}

fn check_grid_rate(model: &TapModel, sample_rate: f64) -> Result<()> {
    if let Some(grid) = model.grid {
        let ratio = grid * sample_rate;
        if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
            return Err(Error::SampleRateMismatch { left: 1.0 / grid, right: sample_rate });
        }
    }
    Ok(())
}

/// Time-varying tapped delay line `y[n] = sum_k g_k[n / block_len] x[n - d_k]`.
/// The output has the input's length. The input rate must be a whole
/// multiple of the model grid rate so every tap lands on a sample.
pub fn emulate(model: &TapModel, fading: &FadingProcess, input: &ComplexSignal) -> Result<ComplexSignal> {
    check_grid_rate(model, input.sample_rate())?;
    let delays = delay_samples(model, input.sample_rate())?;
    if fading.gains.len() != model.taps.len() {
        return Err(Error::invalid(format!(
            "fading has {} taps, model has {}",
            fading.gains.len(),
            model.taps.len()
        )));
    }
    let n = input.len();
    if n > 0 && !model.taps.is_empty() && (n - 1) / fading.block_len >= fading.len() {
        return Err(Error::invalid(format!(
            "fading series of {} samples covers {} input samples, input has {n}",
            fading.len(),
            fading.len() * fading.block_len
        )));
    }
    let x = input.samples();
    let mut y = vec![Complex64::new(0.0, 0.0); n];
    for (k, &d) in delays.iter().enumerate() {
        let g = &fading.gains[k];
        for i in d..n {
            y[i] += g[i / fading.block_len] * x[i - d];
        }
    }
    ComplexSignal::new(y, input.sample_rate())
}

/// Static impulse response of the model for one set of tap gains.
pub fn model_to_cir(model: &TapModel, gains: &[Complex64], sample_rate: f64) -> Result<Cir> {
    if gains.len() != model.taps.len() {
        return Err(Error::invalid(format!("{} gains for {} taps", gains.len(), model.taps.len())));
    }
    check_grid_rate(model, sample_rate)?;
    let delays = delay_samples(model, sample_rate)?;
    let len = delays.iter().copied().max().map_or(1, |m| m + 1);
    let mut taps = vec![Complex64::new(0.0, 0.0); len];
    for (&d, &g) in delays.iter().zip(gains) {
        taps[d] += g;
    }
    Ok(Cir::new(ComplexSignal::new(taps, sample_rate)?, 0))
}

/// Frequency bins of the fading process, for spectral checks.
pub fn fading_frequencies(n: usize, sample_rate: f64) -> Vec<f64> {
    let df = sample_rate / n as f64;
    (0..n).map(|k| if k <= n / 2 { k as f64 * df } else { (k as f64 - n as f64) * df }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{convolve, fft_in_place, ConvMode};
    use crate::stats::{ks_test, rayleigh_cdf};

    fn ped_b() -> TapModel {
        builtin_model(BuiltinModel::PedestrianB)
    }

    fn tdl_b_300() -> TapModel {
        scale_delay_spread(&builtin_model(BuiltinModel::TdlB), 300e-9).unwrap()
    }

    fn one_tap(delay: f64, fading: Fading) -> TapModel {
        TapModel {
            name: "one".into(),
            reference: String::new(),
            delay_kind: DelayKind::Absolute,
            taps: vec![Tap { delay, power_db: 0.0, fading }],
            grid: Some(10e-9),
            realizable_limit: None,
        }
    }

    #[test]
    fn builtin_models_parse() {
        assert_eq!(ped_b().taps.len(), 6);
        assert_eq!(builtin_model(BuiltinModel::TdlB).taps.len(), 23);
        assert!(parse_model("name='x'\ndelays='weird'\ntaps=[]").is_err());
        assert!(parse_model("name='x'\ndelays='absolute_ns'\n[[taps]]\ndelay=0\npower_db=-1").is_err());
    }

    #[test]
    fn tdl_b_scaling_examples() {
        let m = tdl_b_300();
        assert!((m.taps[1].delay - 32.16e-9).abs() < 1e-15);
        assert!((m.taps[22].delay - 1435.02e-9).abs() < 1e-15);
        let zero = scale_delay_spread(&builtin_model(BuiltinModel::TdlB), 0.0).unwrap();
        assert!(zero.taps.iter().all(|t| t.delay == 0.0));
        assert!(scale_delay_spread(&ped_b(), 300e-9).is_err());
    }

    #[test]
    fn tdl_b_coercion_merges_rows_3_and_4() {
        let r = coerce_to_grid(&tdl_b_300(), 10e-9, Some(1000e-9)).unwrap();
        let bin = r.merged.iter().find(|m| (m.delay - 60e-9).abs() < 1e-15).unwrap();
        assert_eq!(bin.source_taps, vec![3, 4]);
        let oracle = 10.0 * (10f64.powf(-0.4) + 10f64.powf(-0.32)).log10();
        assert!((bin.power_db - oracle).abs() < 1e-12);
        assert_eq!(r.dropped.iter().map(|d| d.tap).collect::<Vec<_>>(), vec![20, 21, 22, 23]);
        assert_eq!(r.model.taps.len(), 15);
    }

    #[test]
    fn pedestrian_b_coercion() {
        let r = coerce_to_grid(&ped_b(), 10e-9, None).unwrap();
        assert_eq!(r.model.taps.len(), 6);
        for (a, b) in r.model.taps.iter().zip(&ped_b().taps) {
            assert!((a.delay - b.delay).abs() < 1e-15);
        }
        let limited = coerce_to_grid(&ped_b(), 10e-9, Some(2500e-9)).unwrap();
        assert_eq!(limited.model.taps.len(), 5);
        assert_eq!(limited.dropped.len(), 1);
        assert_eq!(limited.dropped[0].tap, 6);
    }

    #[test]
    fn builtin_realizable_limits_drop_unsettable_rows() {
        let p = ped_b();
        let r = coerce_to_grid(&p, 10e-9, p.realizable_limit).unwrap();
        assert_eq!(r.dropped.iter().map(|d| d.tap).collect::<Vec<_>>(), vec![6]);
        let t = tdl_b_300();
        assert_eq!(t.realizable_limit, Some(1000e-9));
        let r = coerce_to_grid(&t, 10e-9, t.realizable_limit).unwrap();
        assert_eq!(r.dropped.iter().map(|d| d.tap).collect::<Vec<_>>(), vec![20, 21, 22, 23]);
        assert!(parse_model("name='x'\ndelays='absolute_ns'\nrealizable_limit_ns=-1\ntaps=[]").is_err());
    }

    #[test]
    fn tiny_grid_leaves_model_unchanged() {
        let m = tdl_b_300();
        let r = coerce_to_grid(&m, 1e-15, None).unwrap();
        assert_eq!(r.model.taps.len(), m.taps.len());
        for (a, b) in r.model.taps.iter().zip(&m.taps) {
            assert!((a.delay - b.delay).abs() <= 1e-15);
            assert_eq!(a.power_db, b.power_db);
        }
    }

    #[test]
    fn model_to_cir_pedestrian_b() {
        let m = coerce_to_grid(&ped_b(), 10e-9, Some(2500e-9)).unwrap().model;
        let gains = vec![Complex64::new(1.0, 0.0); 5];
        let c = model_to_cir(&m, &gains, 100e6).unwrap();
        let nz: Vec<usize> = c.samples().iter().enumerate().filter(|(_, v)| v.norm() > 0.0).map(|(i, _)| i).collect();
        assert_eq!(nz, vec![0, 20, 80, 120, 230]);
        assert_eq!(c.energy(), 5.0);

        let empty = TapModel { taps: vec![], ..m.clone() };
        let z = model_to_cir(&empty, &[], 100e6).unwrap();
        assert_eq!(z.energy(), 0.0);
    }

    #[test]
    fn emulate_passthrough_and_delay() {
        let x = ComplexSignal::from_real(&[1.0, 2.0, 3.0, 4.0, 5.0], 100e6).unwrap();
        let m = one_tap(0.0, Fading::Static);
        let f = FadingProcess::frozen(&[Complex64::new(1.0, 0.0)], 5, 1);
        assert_eq!(emulate(&m, &f, &x).unwrap(), x);
        let m3 = one_tap(30e-9, Fading::Static);
        let y = emulate(&m3, &f, &x).unwrap();
        let re: Vec<f64> = y.samples().iter().map(|v| v.re).collect();
        assert_eq!(re, vec![0.0, 0.0, 0.0, 1.0, 2.0]);
        let wrong = ComplexSignal::from_real(&[1.0], 30e6).unwrap();
        assert!(emulate(&m, &f, &wrong).is_err());
    }

    #[test]
    fn frozen_fading_equals_convolution() {
        let m = coerce_to_grid(&tdl_b_300(), 10e-9, None).unwrap().model;
        let g = generate_fading(&m, &DopplerConfig { spectrum: DopplerSpectrum::None, ..Default::default() }, 1, 5).unwrap();
        let gains = g.gains_at(0);
        let x = ComplexSignal::new(
            (0..400).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos())).collect(),
            100e6,
        )
        .unwrap();
        let frozen = FadingProcess::frozen(&gains, 400, 1);
        let y = emulate(&m, &frozen, &x).unwrap();
        let cir = model_to_cir(&m, &gains, 100e6).unwrap();
        let full = convolve(&x, &cir.taps, ConvMode::Full).unwrap();
        for (a, b) in y.samples().iter().zip(full.samples()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn impulse_response_only_at_coerced_delays() {
        let m = coerce_to_grid(&ped_b(), 10e-9, None).unwrap().model;
        let n = 400;
        let f = FadingProcess::frozen(&vec![Complex64::new(1.0, 0.0); m.taps.len()], n, 1);
        let y = emulate(&m, &f, &ComplexSignal::impulse(n, 100e6).unwrap()).unwrap();
        let nz: Vec<usize> = y.samples().iter().enumerate().filter(|(_, v)| v.norm() > 0.0).map(|(i, _)| i).collect();
        assert_eq!(nz, vec![0, 20, 80, 120, 230, 370]);
    }

    #[test]
    fn emulate_at_twice_the_grid_rate() {
        let m = one_tap(30e-9, Fading::Static);
        let f = FadingProcess::frozen(&[Complex64::new(1.0, 0.0)], 10, 1);
        let y = emulate(&m, &f, &ComplexSignal::impulse(10, 200e6).unwrap()).unwrap();
        assert_eq!(y.samples()[6], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn fading_none_has_constant_magnitude() {
        let m = one_tap(0.0, Fading::Rayleigh);
        let dop = DopplerConfig { spectrum: DopplerSpectrum::None, ..Default::default() };
        let f = generate_fading(&m, &dop, 100, 3).unwrap();
        let m0 = f.gains[0][0].norm();
        assert!(f.gains[0].iter().all(|g| (g.norm() - m0).abs() < 1e-15));
        assert!((m0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_doppler_bins_is_an_error() {
        let m = one_tap(0.0, Fading::Rayleigh);
        let dop = DopplerConfig { max_doppler_hz: 1.0, sample_rate: 1000.0, ..Default::default() };
        assert!(generate_fading(&m, &dop, 1000, 1).is_err());
        let bad = DopplerConfig { max_doppler_hz: 600.0, sample_rate: 1000.0, ..Default::default() };
        assert!(generate_fading(&m, &bad, 1000, 1).is_err());
    }

    fn jakes_dop() -> DopplerConfig {
        DopplerConfig { max_doppler_hz: 100.0, spectrum: DopplerSpectrum::Jakes, sample_rate: 1000.0, block_len: 1 }
    }

    #[test]
    fn fading_power_and_independence() {
        let m = coerce_to_grid(&ped_b(), 10e-9, None).unwrap().model;
        let n = 1 << 17;
        let f = generate_fading(&m, &jakes_dop(), n, 11).unwrap();
        for (t, g) in m.taps.iter().zip(&f.gains) {
            let p = g.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
            let err_db = 10.0 * p.log10() - t.power_db;
            assert!(err_db.abs() < 0.2, "tap at {} ns: {err_db} dB", t.delay * 1e9);
        }
        for a in 0..f.gains.len() {
            for b in a + 1..f.gains.len() {
                let (ga, gb) = (&f.gains[a], &f.gains[b]);
                let dot: Complex64 = ga.iter().zip(gb).map(|(x, y)| x * y.conj()).sum();
                let ea: f64 = ga.iter().map(|v| v.norm_sqr()).sum();
                let eb: f64 = gb.iter().map(|v| v.norm_sqr()).sum();
                assert!(dot.norm() / (ea * eb).sqrt() < 0.05);
            }
        }
        assert_eq!(f, generate_fading(&m, &jakes_dop(), n, 11).unwrap());
    }

    #[test]
    fn fading_psd_is_band_limited_and_u_shaped() {
        let m = one_tap(0.0, Fading::Rayleigh);
        let n = 1 << 16;
        let f = generate_fading(&m, &jakes_dop(), n, 2).unwrap();
        let mut spec = f.gains[0].clone();
        fft_in_place(&mut spec);
        let freqs = fading_frequencies(n, 1000.0);
        let fd = 100.0;
        let total: f64 = spec.iter().map(|v| v.norm_sqr()).sum();
        let band: f64 = spec.iter().zip(&freqs).filter(|(_, f)| f.abs() <= fd).map(|(v, _)| v.norm_sqr()).sum();
        assert!(band / total >= 0.99);
        let edge: f64 = spec.iter().zip(&freqs).filter(|(_, f)| f.abs() >= 0.9 * fd && f.abs() <= fd).map(|(v, _)| v.norm_sqr()).sum();
        let center: f64 = spec.iter().zip(&freqs).filter(|(_, f)| f.abs() < 0.1 * fd).map(|(v, _)| v.norm_sqr()).sum();
        assert!(edge > center, "edge {edge} center {center}");
    }

    #[test]
    fn fading_envelope_is_rayleigh_across_realizations() {
        // One sample from each of many independent series: successive samples
        // of a single Doppler-limited series are correlated, which the KS
        // test does not allow for.
        let m = one_tap(0.0, Fading::Rayleigh);
        let env: Vec<f64> = (0..20_000u64)
            .into_par_iter()
            .map(|s| generate_fading(&m, &jakes_dop(), 128, s).unwrap().gains[0][0].norm())
            .collect();
        let r = ks_test(&env, |x| rayleigh_cdf(x, 1.0));
        assert!(r.p_value > 0.01, "{r:?}");
    }
}
