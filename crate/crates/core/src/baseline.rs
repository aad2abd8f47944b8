//! Artificial-path cancellation baseline: every model tap gets an inverted
//! companion `dt` later, scaled by the chamber's decay over `dt`, in the hope
//! that the companion's chamber response cancels the original's tail.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::emulator::TapModel;
use crate::error::{Error, Result};
use crate::metrics::{residual_metrics, ResidualMetrics};
use crate::rc_model::{synthesize_rc_cir, Cir, RcConfig};
use crate::signal::ComplexSignal;
use crate::stats::{db_to_linear, power_db};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArtificialPathKernel {
    pub dt: f64,
    pub tau_rms: f64,
    /// `exp(-dt / tau_rms)`.
    pub coefficient: f64,
}

impl ArtificialPathKernel {
    pub fn new(dt: f64, tau_rms: f64) -> Result<Self> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be >= 0, got {dt}")));
        }
        if !(tau_rms > 0.0 && tau_rms.is_finite()) {
            return Err(Error::invalid(format!("tau_rms must be positive, got {tau_rms}")));
        }
        Ok(Self { dt, tau_rms, coefficient: (-dt / tau_rms).exp() })
    }
}

/// A tap with a signed complex amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexTap {
    pub delay: f64,
    pub gain: Complex64,
}

fn grid_steps(x: f64, grid: f64, what: &str) -> Result<usize> {
    let k = x / grid;
    if (k - k.round()).abs() > 1e-6 || k < -1e-9 {
        return Err(Error::invalid(format!("{what} {} ns is not a multiple of the {} ns grid", x * 1e9, grid * 1e9)));
    }
    Ok(k.round() as usize)
}

/// Original taps (amplitude `sqrt(P)`) plus companions
/// `(tau + dt, -a * exp(-dt / tau_rms))`, combined by complex addition on
/// the grid. Bins that cancel to exactly zero are removed.
pub fn apply_artificial_paths(model: &TapModel, k: &ArtificialPathKernel, grid: f64) -> Result<Vec<ComplexTap>> {
    if !(grid > 0.0) {
        return Err(Error::invalid("grid must be positive"));
    }
    let shift = grid_steps(k.dt, grid, "dt")?;
    let mut bins: Vec<(usize, Complex64)> = Vec::new();
    let mut add = |bin: usize, g: Complex64| match bins.iter_mut().find(|b| b.0 == bin) {
        Some(b) => b.1 += g,
        None => bins.push((bin, g)),
    };
    for t in &model.taps {
        let bin = grid_steps(t.delay, grid, "tap delay")?;
        let a = db_to_linear(t.power_db).sqrt();
        add(bin, Complex64::new(a, 0.0));
        add(bin + shift, Complex64::new(-a * k.coefficient, 0.0));
    }
    bins.retain(|b| b.1 != Complex64::new(0.0, 0.0));
    bins.sort_by_key(|b| b.0);
    Ok(bins.into_iter().map(|(b, gain)| ComplexTap { delay: b as f64 * grid, gain }).collect())
}

/// Sparse taps on the grid of `sample_rate`, as a dense vector.
pub fn taps_to_signal(taps: &[ComplexTap], sample_rate: f64) -> Result<ComplexSignal> {
    let grid = 1.0 / sample_rate;
    let bins: Vec<usize> = taps.iter().map(|t| grid_steps(t.delay, grid, "tap delay")).collect::<Result<_>>()?;
    let len = bins.iter().copied().max().map_or(1, |m| m + 1);
    let mut v = vec![Complex64::new(0.0, 0.0); len];
    for (b, t) in bins.iter().zip(taps) {
        v[*b] += t.gain;
    }
    ComplexSignal::new(v, sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfCorrelation {
    /// Real part of the normalized inner product.
    pub real: f64,
    pub complex: Complex64,
}

/// `<h[n], h[n - d]> / (|h[d..]| |h[..N-d]|)` over the overlap of the CIR
/// with itself delayed by `dt`.
pub fn self_correlation(cir: &Cir, dt: f64) -> Result<SelfCorrelation> {
    let d = grid_steps(dt, 1.0 / cir.sample_rate(), "dt")?;
    let h = cir.samples();
    if cir.energy() == 0.0 {
        return Err(Error::invalid("self-correlation of a zero-energy CIR"));
    }
    if d >= h.len() {
        return Err(Error::invalid(format!("shift of {d} bins leaves no overlap with a {}-bin CIR", h.len())));
    }
    let mut dot = Complex64::new(0.0, 0.0);
    let mut ea = 0.0;
    let mut eb = 0.0;
    for n in d..h.len() {
        dot += h[n] * h[n - d].conj();
        ea += h[n].norm_sqr();
        eb += h[n - d].norm_sqr();
    }
    if ea == 0.0 || eb == 0.0 {
        return Err(Error::invalid("overlap has zero energy"));
    }
    let rho = dot / (ea * eb).sqrt();
    Ok(SelfCorrelation { real: rho.re.clamp(-1.0, 1.0), complex: rho })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResidual {
    /// Energy of the cascade outside the model's own tap bins, relative to
    /// the total energy of the model through the chamber without companions.
    pub residual_ratio: f64,
    /// `residual_ratio` in dB, floored at the -120 dB sentinel.
    pub residual_db: f64,
    pub metrics: ResidualMetrics,
    pub output: ComplexSignal,
}

fn sparse_convolve(taps: &[(usize, Complex64)], h: &[Complex64]) -> Vec<Complex64> {
    let max = taps.iter().map(|t| t.0).max().unwrap_or(0);
    let mut y = vec![Complex64::new(0.0, 0.0); max + h.len()];
    for &(d, g) in taps {
        for (i, &v) in h.iter().enumerate() {
            y[d + i] += g * v;
        }
    }
    y
}

/// Model with artificial paths, convolved with the chamber response.
pub fn baseline_residual(rc: &Cir, model: &TapModel, k: &ArtificialPathKernel) -> Result<BaselineResidual> {
    let fs = rc.sample_rate();
    let grid = 1.0 / fs;
    let with_paths = apply_artificial_paths(model, k, grid)?;
    let sparse: Vec<(usize, Complex64)> = with_paths
        .iter()
        .map(|t| Ok((grid_steps(t.delay, grid, "tap delay")?, t.gain)))
        .collect::<Result<_>>()?;
    let original: Vec<(usize, Complex64)> = model
        .taps
        .iter()
        .map(|t| Ok((grid_steps(t.delay, grid, "tap delay")?, Complex64::new(db_to_linear(t.power_db).sqrt(), 0.0))))
        .collect::<Result<_>>()?;

    let y = if sparse.is_empty() {
        vec![Complex64::new(0.0, 0.0); rc.len()]
    } else {
        sparse_convolve(&sparse, rc.samples())
    };
    let uncancelled: f64 = sparse_convolve(&original, rc.samples()).iter().map(|v| v.norm_sqr()).sum();
    let outside: f64 = y
        .iter()
        .enumerate()
        .filter(|(i, _)| !original.iter().any(|o| o.0 == *i))
        .map(|(_, v)| v.norm_sqr())
        .sum();
    let residual_ratio = if uncancelled > 0.0 { outside / uncancelled } else { 0.0 };
    let metrics = residual_metrics(&y, 0, fs)?;
    Ok(BaselineResidual {
        residual_ratio,
        residual_db: power_db(residual_ratio),
        metrics,
        output: ComplexSignal::new(y, fs)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub dt: f64,
    pub sample_rate: f64,
    /// dB of the ensemble-mean linear residual.
    pub mean_residual_db: f64,
    /// Ensemble mean of the real self-correlation.
    pub mean_selfcorr: f64,
    pub mean_selfcorr_magnitude: f64,
}

/// Residual and self-correlation versus `dt`, averaged over snapshots.
/// Each `dt` runs on the chamber's own grid when it fits, otherwise on
/// `fine_sample_rate`.
pub fn baseline_sweep(
    rc: &RcConfig,
    model: &TapModel,
    dts: &[f64],
    n_snapshots: usize,
    fine_sample_rate: f64,
) -> Result<Vec<SweepPoint>> {
    if n_snapshots == 0 {
        return Err(Error::invalid("baseline sweep needs at least one snapshot"));
    }
    dts.iter()
        .map(|&dt| {
            let on_grid = grid_steps(dt, 1.0 / rc.sample_rate, "dt").is_ok();
            let cfg = if on_grid { rc.clone() } else { RcConfig { sample_rate: fine_sample_rate, ..rc.clone() } };
            let k = ArtificialPathKernel::new(dt, rc.tau_rms)?;
            let per: Vec<(f64, f64, f64)> = (0..n_snapshots as u64)
                .into_par_iter()
                .map(|s| {
                    let h = synthesize_rc_cir(&cfg, s)?;
                    let r = baseline_residual(&h, model, &k)?;
                    let sc = self_correlation(&h, dt)?;
                    Ok((r.residual_ratio, sc.real, sc.complex.norm()))
                })
                .collect::<Result<_>>()?;
            let m = n_snapshots as f64;
            Ok(SweepPoint {
                dt,
                sample_rate: cfg.sample_rate,
                mean_residual_db: power_db(per.iter().map(|p| p.0).sum::<f64>() / m),
                mean_selfcorr: per.iter().map(|p| p.1).sum::<f64>() / m,
                mean_selfcorr_magnitude: per.iter().map(|p| p.2).sum::<f64>() / m,
            })
        })
        .collect()
}
