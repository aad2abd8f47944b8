//! Synthetic reverberation-chamber channel.
//!
//! Every delay bin carries a circular complex Gaussian tap whose variance
//! follows an exponential envelope. Adjacent bins are correlated through a
//! first-order Gauss-Markov process along delay, standing in for the
//! finite bandwidth of a real chamber response (filtered complex Gaussian
//! noise). `correlation_time = 0` gives independent bins.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::{complex_normal, derive_seed, rng_from_seed, stream};
use crate::signal::ComplexSignal;

#[derive(Debug, Clone, PartialEq)]
pub struct RcConfig {
    /// Exponential decay constant of the power envelope, seconds.
    pub tau_rms: f64,
    /// Truncation point of the response, seconds.
    pub max_delay: f64,
    pub sample_rate: f64,
    /// Power of a deterministic line-of-sight tap at delay 0 relative to the
    /// diffuse part. 0 for a pure NLoS chamber.
    pub los_power_linear: f64,
    /// Delay-domain correlation time of the diffuse taps, seconds.
    pub correlation_time: f64,
    pub master_seed: u64,
}

impl Default for RcConfig {
    fn default() -> Self {
        Self {
            tau_rms: 250e-9,
            max_delay: 2500e-9,
            sample_rate: 200e6,
            los_power_linear: 0.0,
            correlation_time: 10e-9,
            master_seed: 1,
        }
    }
}

impl RcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::invalid("rc sample_rate must be positive"));
        }
        if !(self.tau_rms > 0.0 && self.tau_rms < self.max_delay && self.max_delay.is_finite()) {
            return Err(Error::invalid(format!(
                "need 0 < tau_rms ({}) < max_delay ({})",
                self.tau_rms, self.max_delay
            )));
        }
        if self.sample_rate * self.max_delay < 10.0 {
            return Err(Error::invalid("rc max_delay spans fewer than 10 bins"));
        }
        if !(self.los_power_linear >= 0.0 && self.los_power_linear.is_finite()) {
            return Err(Error::invalid("los_power_linear must be >= 0"));
        }
        if !(self.correlation_time >= 0.0 && self.correlation_time.is_finite()) {
            return Err(Error::invalid("correlation_time must be >= 0"));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        (self.max_delay * self.sample_rate).round() as usize
    }

    /// Diffuse-part power per bin, normalized to sum 1.
    fn diffuse_envelope(&self) -> Vec<f64> {
        let ts = 1.0 / self.sample_rate;
        let mut w: Vec<f64> = (0..self.n_bins()).map(|k| (-(k as f64) * ts / self.tau_rms).exp()).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }

    /// Expected power per bin; sums to 1.
    pub fn expected_pdp(&self) -> Vec<f64> {
        let mut w = self.diffuse_envelope();
        let los = self.los_power_linear;
        if los > 0.0 {
            w.iter_mut().for_each(|v| *v /= 1.0 + los);
            w[0] += los / (1.0 + los);
        }
        w
    }

    /// RMS delay spread of the truncated, discretized envelope (seconds).
    pub fn expected_rms_delay_spread(&self) -> f64 {
        let p = self.expected_pdp();
        let ts = 1.0 / self.sample_rate;
        let (m1, m2) = p.iter().enumerate().fold((0.0, 0.0), |(a, b), (k, &w)| {
            let t = k as f64 * ts;
            (a + w * t, b + w * t * t)
        });
        (m2 - m1 * m1).max(0.0).sqrt()
    }
}

/// Channel impulse response on a uniform delay grid starting at delay 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Cir {
    pub taps: ComplexSignal,
    pub snapshot_id: u64,
}

impl Cir {
    pub fn new(taps: ComplexSignal, snapshot_id: u64) -> Self {
        Self { taps, snapshot_id }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.taps.sample_rate()
    }

    pub fn samples(&self) -> &[Complex64] {
        self.taps.samples()
    }

    pub fn delay_of(&self, bin: usize) -> f64 {
        bin as f64 / self.taps.sample_rate()
    }

    pub fn energy(&self) -> f64 {
        self.taps.energy()
    }
}

/// One stirrer position. Bit-identical for equal `(cfg, snapshot)`.
pub fn synthesize_rc_cir(cfg: &RcConfig, snapshot: u64) -> Result<Cir> {
    cfg.validate()?;
    let envelope = cfg.diffuse_envelope();
    let los = cfg.los_power_linear;
    let diffuse_scale = 1.0 / (1.0 + los);
    let mut rng = rng_from_seed(derive_seed(cfg.master_seed, stream::RC_SNAPSHOT, snapshot));
    let r = if cfg.correlation_time > 0.0 {
        (-1.0 / (cfg.sample_rate * cfg.correlation_time)).exp()
    } else {
        0.0
    };
    let innovation = (1.0 - r * r).sqrt();

    let mut z = complex_normal(&mut rng, 1.0);
    let mut taps = Vec::with_capacity(envelope.len());
    for (k, &w) in envelope.iter().enumerate() {
        if k > 0 {
            z = z * r + complex_normal(&mut rng, 1.0) * innovation;
        }
        taps.push(z * (w * diffuse_scale).sqrt());
    }
    if los > 0.0 {
        taps[0] += Complex64::new((los / (1.0 + los)).sqrt(), 0.0);
    }
    Ok(Cir::new(ComplexSignal::new(taps, cfg.sample_rate)?, snapshot))
}

/// Snapshots `0..n_snapshots`, generated in parallel.
pub fn rc_ensemble(cfg: &RcConfig, n_snapshots: usize) -> Result<Vec<Cir>> {
    if n_snapshots == 0 {
        return Err(Error::invalid("n_snapshots must be >= 1"));
    }
    cfg.validate()?;
    (0..n_snapshots as u64)
        .into_par_iter()
        .map(|s| synthesize_rc_cir(cfg, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_test, rayleigh_cdf};

    fn cfg() -> RcConfig {
        RcConfig::default()
    }

    #[test]
    fn default_has_500_bins() {
        let h = synthesize_rc_cir(&cfg(), 0).unwrap();
        assert_eq!(h.len(), 500);
        assert_eq!(h.sample_rate(), 200e6);
    }

    #[test]
    fn ensemble_pdp_follows_exponential() {
        let c = cfg();
        let hs = rc_ensemble(&c, 4000).unwrap();
        let expected = c.expected_pdp();
        let bins = (4.0 * c.tau_rms * c.sample_rate) as usize;
        for k in 0..bins {
            let p = hs.iter().map(|h| h.samples()[k].norm_sqr()).sum::<f64>() / hs.len() as f64;
            let dev_db = 10.0 * (p / expected[k]).log10();
            assert!(dev_db.abs() < 0.5, "bin {k}: {dev_db:.3} dB");
        }
        let mean_energy = hs.iter().map(Cir::energy).sum::<f64>() / hs.len() as f64;
        assert!((mean_energy - 1.0).abs() < 0.02, "{mean_energy}");
    }

    #[test]
    fn tiny_decay_puts_energy_in_first_bin() {
        // Bin 0 holds 1 - exp(-Ts/tau) of the envelope; tau = Ts/5 gives 99.3%.
        let c = RcConfig { tau_rms: 1.0e-9, max_delay: 100e-9, ..cfg() };
        assert!(c.expected_pdp()[0] >= 0.99);
        let hs = rc_ensemble(&c, 2000).unwrap();
        let first: f64 = hs.iter().map(|h| h.samples()[0].norm_sqr()).sum();
        let all: f64 = hs.iter().map(Cir::energy).sum();
        assert!(first / all >= 0.99);
    }

    fn pair_rho_sq(batch: &[Cir]) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..batch.len() {
            for j in i + 1..batch.len() {
                let dot: Complex64 = batch[i].samples().iter().zip(batch[j].samples()).map(|(x, y)| x * y.conj()).sum();
                out.push(dot.norm_sqr() / (batch[i].energy() * batch[j].energy()));
            }
        }
        out
    }

    #[test]
    fn deterministic_and_snapshots_independent() {
        let c = cfg();
        assert_eq!(synthesize_rc_cir(&c, 5).unwrap(), synthesize_rc_cir(&c, 5).unwrap());
        let batch = rc_ensemble(&c, 60).unwrap();
        assert_eq!(batch[0], synthesize_rc_cir(&c, 0).unwrap());
        assert_eq!(batch[17], synthesize_rc_cir(&c, 17).unwrap());
        let other = RcConfig { master_seed: 99, ..c.clone() };
        assert_ne!(rc_ensemble(&other, 2).unwrap(), rc_ensemble(&c, 2).unwrap());

        // Independent snapshots: E|rho|^2 = sum_kl w_k w_l r^(2|k-l|) / (sum w)^2.
        let w = c.diffuse_envelope();
        let r = (-1.0 / (c.sample_rate * c.correlation_time)).exp();
        let mut expected = 0.0;
        for (k, wk) in w.iter().enumerate() {
            for (l, wl) in w.iter().enumerate() {
                expected += wk * wl * r.powi(2 * (k as i32 - l as i32).abs());
            }
        }
        let rho = pair_rho_sq(&batch);
        let mean = rho.iter().sum::<f64>() / rho.len() as f64;
        assert!((mean / expected - 1.0).abs() < 0.2, "{mean} vs {expected}");
    }

    #[test]
    fn long_white_chamber_snapshots_below_point_one() {
        let c = RcConfig { tau_rms: 1e-6, max_delay: 6e-6, correlation_time: 0.0, ..cfg() };
        let rho = pair_rho_sq(&rc_ensemble(&c, 40).unwrap());
        let small = rho.iter().filter(|&&p| p.sqrt() < 0.1).count();
        assert!(small as f64 / rho.len() as f64 > 0.9, "{small}/{}", rho.len());
    }

    #[test]
    fn single_snapshot_ensemble() {
        let c = cfg();
        assert_eq!(rc_ensemble(&c, 1).unwrap(), vec![synthesize_rc_cir(&c, 0).unwrap()]);
        assert!(rc_ensemble(&c, 0).is_err());
    }

    #[test]
    fn per_bin_envelope_is_rayleigh() {
        let c = cfg();
        let hs = rc_ensemble(&c, 2000).unwrap();
        let expected = c.expected_pdp();
        for k in [0usize, 20, 50, 99] {
            let sigma2 = expected[k];
            let env: Vec<f64> = hs.iter().map(|h| h.samples()[k].norm()).collect();
            let r = ks_test(&env, |x| rayleigh_cdf(x, sigma2));
            assert!(r.p_value > 0.01, "bin {k}: D={} p={}", r.statistic, r.p_value);
        }
    }

    #[test]
    fn los_adds_deterministic_first_tap() {
        let c = RcConfig { los_power_linear: 3.0, ..cfg() };
        let p = c.expected_pdp();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > 0.75);
    }

    #[test]
    fn white_and_correlated_have_equal_envelope() {
        let a = RcConfig { correlation_time: 0.0, ..cfg() };
        assert_eq!(a.expected_pdp(), cfg().expected_pdp());
        assert!(synthesize_rc_cir(&a, 0).is_ok());
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(RcConfig { tau_rms: 3000e-9, ..cfg() }.validate().is_err());
        assert!(RcConfig { max_delay: 20e-9, ..cfg() }.validate().is_err());
        assert!(RcConfig { sample_rate: 0.0, ..cfg() }.validate().is_err());
    }
}
