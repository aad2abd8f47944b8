//! Power delay profiles, delay spread, tap detection and matching, and
//! residual statistics of a cancellation cascade.

use num_complex::Complex64;

use crate::emulator::TapModel;
use crate::error::{Error, Result};
use crate::signal::{check_same_rate, ComplexSignal};
use crate::stats::{db_to_linear, percentile, power_db, FLOOR_DB};

/// Default floor for delay spread and detection, dB below the peak.
pub const DEFAULT_FLOOR_DB: f64 = -30.0;

/// Average power per delay bin, normalized so the peak is exactly 0 dB.
#[derive(Debug, Clone, PartialEq)]
pub struct PdpEstimate {
    /// Bin delays, seconds.
    pub delays: Vec<f64>,
    pub power_db: Vec<f64>,
    pub n_realizations: usize,
}

impl PdpEstimate {
    /// Builds a normalized profile from linear powers.
    pub fn from_power(delays: Vec<f64>, power: &[f64], n_realizations: usize) -> Result<Self> {
        if delays.len() != power.len() {
            return Err(Error::invalid("delay and power vectors differ in length"));
        }
        if power.is_empty() {
            return Err(Error::invalid("empty power delay profile"));
        }
        let max = power.iter().copied().fold(0.0, f64::max);
        let power_db = if max > 0.0 {
            power.iter().map(|&p| power_db(p / max)).collect()
        } else {
            vec![FLOOR_DB; power.len()]
        };
        Ok(Self { delays, power_db, n_realizations })
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }

    pub fn linear(&self) -> Vec<f64> {
        self.power_db
            .iter()
            .map(|&d| if d <= FLOOR_DB { 0.0 } else { db_to_linear(d) })
            .collect()
    }

    pub fn peak_index(&self) -> usize {
        argmax(&self.power_db)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `|<a, b>| / (|a| |b|)` over the common length; 0 if either is all zero.
pub fn normalized_correlation(a: &[Complex64], b: &[Complex64]) -> f64 {
    let dot: Complex64 = a.iter().zip(b).map(|(x, y)| x * y.conj()).sum();
    let ea: f64 = a.iter().map(|v| v.norm_sqr()).sum();
    let eb: f64 = b.iter().map(|v| v.norm_sqr()).sum();
    if ea == 0.0 || eb == 0.0 {
        0.0
    } else {
        dot.norm() / (ea * eb).sqrt()
    }
}

/// Per-bin mean of `|h|^2` over realizations, delays `k / sample_rate`.
pub fn compute_pdp(cirs: &[ComplexSignal]) -> Result<PdpEstimate> {
    let first = cirs.first().ok_or_else(|| Error::invalid("compute_pdp needs at least one realization"))?;
    let n = first.len();
    let mut acc = vec![0.0; n];
    for c in cirs {
        check_same_rate(first.sample_rate(), c.sample_rate())?;
        if c.len() != n {
            return Err(Error::invalid("realizations differ in length"));
        }
        for (a, s) in acc.iter_mut().zip(c.samples()) {
            *a += s.norm_sqr();
        }
    }
    let m = cirs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= m);
    let delays = (0..n).map(|k| k as f64 / first.sample_rate()).collect();
    PdpEstimate::from_power(delays, &acc, cirs.len())
}

/// Power-weighted standard deviation of delay over bins at or above
/// `floor_db` (relative to the 0 dB peak).
pub fn rms_delay_spread(pdp: &PdpEstimate, floor_db: f64) -> Result<f64> {
    let sel: Vec<(f64, f64)> = pdp
        .delays
        .iter()
        .zip(&pdp.power_db)
        .filter(|(_, &p)| p >= floor_db && p > FLOOR_DB)
        .map(|(&t, &p)| (t, db_to_linear(p)))
        .collect();
    if sel.is_empty() {
        return Err(Error::NoSignal(format!("no PDP bin at or above {floor_db} dB")));
    }
    let total: f64 = sel.iter().map(|s| s.1).sum();
    let mean = sel.iter().map(|(t, p)| t * p).sum::<f64>() / total;
    let var = sel.iter().map(|(t, p)| p * (t - mean) * (t - mean)).sum::<f64>() / total;
    Ok(var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectedTap {
    pub delay: f64,
    pub power_db: f64,
}

/// Topographic prominence of local maximum `i` (dB). A side with no bins
/// (peak on the edge) does not constrain it.
fn prominence(p: &[f64], i: usize) -> f64 {
    let mut left_min = f64::INFINITY;
    let mut left_any = false;
    for j in (0..i).rev() {
        if p[j] > p[i] {
            break;
        }
        left_min = left_min.min(p[j]);
        left_any = true;
    }
    let mut right_min = f64::INFINITY;
    let mut right_any = false;
    for &v in &p[i + 1..] {
        if v > p[i] {
            break;
        }
        right_min = right_min.min(v);
        right_any = true;
    }
    let base = match (left_any, right_any) {
        (true, true) => left_min.max(right_min),
        (true, false) => left_min,
        (false, true) => right_min,
        (false, false) => return f64::INFINITY,
    };
    p[i] - base
}

/// Strict local maxima at or above `floor_db` with prominence at least
/// `min_prominence_db`, sorted by delay.
pub fn detect_taps(pdp: &PdpEstimate, min_prominence_db: f64, floor_db: f64) -> Vec<DetectedTap> {
    let p = &pdp.power_db;
    let n = p.len();
    let mut out = Vec::new();
    for i in 0..n {
        let left_ok = i == 0 || p[i] > p[i - 1];
        let right_ok = i + 1 == n || p[i] > p[i + 1];
        if n > 1 && left_ok && right_ok && p[i] >= floor_db && p[i] > FLOOR_DB && prominence(p, i) >= min_prominence_db {
            out.push(DetectedTap { delay: pdp.delays[i], power_db: p[i] });
        }
        if n == 1 && p[0] >= floor_db {
            out.push(DetectedTap { delay: pdp.delays[0], power_db: p[0] });
        }
    }
    out
}

/// Taps of a profile sampled on the emulator's own delay grid: every bin at
/// or above `floor_db` that also stands `min_excess_db` above the median bin
/// power. Unlike [`detect_taps`] this finds taps in adjacent bins, which no
/// local-maximum rule can separate.
pub fn detect_grid_taps(pdp: &PdpEstimate, floor_db: f64, min_excess_db: f64) -> Vec<DetectedTap> {
    let median = percentile(&pdp.power_db, 50.0);
    let threshold = floor_db.max(median + min_excess_db);
    pdp.delays
        .iter()
        .zip(&pdp.power_db)
        .filter(|(_, &p)| p >= threshold && p > FLOOR_DB)
        .map(|(&delay, &power_db)| DetectedTap { delay, power_db })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TapMatch {
    pub target_delay: f64,
    pub detected_delay: f64,
    pub delay_error: f64,
    pub target_power_db: f64,
    pub detected_power_db: f64,
    pub power_error_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetTap {
    pub delay: f64,
    pub power_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TapMatchReport {
    /// Matched target taps, in target order.
    pub matches: Vec<TapMatch>,
    pub missed_taps: Vec<TargetTap>,
    pub spurious_taps: Vec<DetectedTap>,
}

impl TapMatchReport {
    pub fn all_matched(&self) -> bool {
        self.missed_taps.is_empty()
    }

    pub fn max_abs_delay_error(&self) -> f64 {
        self.matches.iter().map(|m| m.delay_error.abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_power_error_db(&self) -> f64 {
        self.matches.iter().map(|m| m.power_error_db.abs()).fold(0.0, f64::max)
    }
}

/// Greedy nearest-delay matching within `delay_tol`. Powers on both sides
/// are taken relative to their own strongest tap before comparison.
pub fn match_taps(detected: &[DetectedTap], target: &TapModel, delay_tol: f64) -> TapMatchReport {
    let t_max = target.taps.iter().map(|t| t.power_db).fold(f64::NEG_INFINITY, f64::max);
    let d_max = detected.iter().map(|d| d.power_db).fold(f64::NEG_INFINITY, f64::max);

    let mut pairs = Vec::new();
    for (ti, t) in target.taps.iter().enumerate() {
        for (di, d) in detected.iter().enumerate() {
            let err = (d.delay - t.delay).abs();
            if err <= delay_tol * (1.0 + 1e-9) {
                pairs.push((err, ti, di));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut t_used: Vec<Option<usize>> = vec![None; target.taps.len()];
    let mut d_used = vec![false; detected.len()];
    for (_, ti, di) in pairs {
        if t_used[ti].is_none() && !d_used[di] {
            t_used[ti] = Some(di);
            d_used[di] = true;
        }
    }

    let mut report = TapMatchReport { matches: Vec::new(), missed_taps: Vec::new(), spurious_taps: Vec::new() };
    for (t, used) in target.taps.iter().zip(&t_used) {
        let target_power_db = t.power_db - t_max;
        match used {
            Some(di) => {
                let d = detected[*di];
                let detected_power_db = d.power_db - d_max;
                report.matches.push(TapMatch {
                    target_delay: t.delay,
                    detected_delay: d.delay,
                    delay_error: d.delay - t.delay,
                    target_power_db,
                    detected_power_db,
                    power_error_db: detected_power_db - target_power_db,
                });
            }
            None => report.missed_taps.push(TargetTap { delay: t.delay, power_db: target_power_db }),
        }
    }
    report.spurious_taps = detected
        .iter()
        .zip(&d_used)
        .filter(|(_, &u)| !u)
        .map(|(d, _)| *d)
        .collect();
    report
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMetrics {
    /// Peak-bin energy over the energy of every other bin, dB. Capped at
    /// `-FLOOR_DB` when nothing is left. Negative when the response has no
    /// dominant bin.
    pub peak_to_residual_db: f64,
    /// Peak-bin energy over the strongest other bin, dB; never negative.
    pub peak_to_max_sidelobe_db: f64,
    /// Delay spread of the residual alone (peak bin removed), seconds.
    pub residual_rms_delay_spread: f64,
    /// Whole response normalized to its peak, delays relative to `zero_index`.
    pub residual_pdp: PdpEstimate,
}

/// Residual statistics of a response whose ideal form is a single impulse.
/// `zero_index` is the sample holding delay 0.
pub fn residual_metrics(c: &[Complex64], zero_index: usize, sample_rate: f64) -> Result<ResidualMetrics> {
    let power: Vec<f64> = c.iter().map(|v| v.norm_sqr()).collect();
    residual_metrics_from_power(&power, zero_index, sample_rate)
}

/// As [`residual_metrics`], from per-bin powers (e.g. an averaged profile).
pub fn residual_metrics_from_power(power: &[f64], zero_index: usize, sample_rate: f64) -> Result<ResidualMetrics> {
    if power.is_empty() {
        return Err(Error::invalid("empty response"));
    }
    let k = argmax(&power);
    let peak = power[k];
    let residual: f64 = power.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, p)| p).sum();
    let sidelobe = power.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, &p)| p).fold(0.0, f64::max);
    let (p2r, p2s) = if peak > 0.0 {
        (-power_db(residual / peak), -power_db(sidelobe / peak))
    } else {
        (0.0, 0.0)
    };
    let delays: Vec<f64> = (0..power.len()).map(|i| (i as f64 - zero_index as f64) / sample_rate).collect();
    let residual_pdp = PdpEstimate::from_power(delays.clone(), power, 1)?;

    let mut resid_only = power.to_vec();
    resid_only[k] = 0.0;
    let spread = match PdpEstimate::from_power(delays, &resid_only, 1) {
        Ok(p) if resid_only.iter().any(|&v| v > 0.0) => rms_delay_spread(&p, DEFAULT_FLOOR_DB).unwrap_or(0.0),
        _ => 0.0,
    };
    Ok(ResidualMetrics {
        peak_to_residual_db: p2r,
        peak_to_max_sidelobe_db: p2s,
        residual_rms_delay_spread: spread,
        residual_pdp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::{builtin_model, coerce_to_grid, model_to_cir, BuiltinModel};
    use crate::rc_model::{rc_ensemble, RcConfig};

    fn pdp(delays_ns: &[f64], power_db: &[f64]) -> PdpEstimate {
        PdpEstimate {
            delays: delays_ns.iter().map(|d| d * 1e-9).collect(),
            power_db: power_db.to_vec(),
            n_realizations: 1,
        }
    }

    fn sparse_pdp(taps: &[(f64, f64)], grid_ns: f64, n: usize) -> PdpEstimate {
        let mut p = vec![0.0; n];
        for &(d, db) in taps {
            p[(d / grid_ns).round() as usize] += db_to_linear(db);
        }
        PdpEstimate::from_power((0..n).map(|k| k as f64 * grid_ns * 1e-9).collect(), &p, 1).unwrap()
    }

    #[test]
    fn single_impulse_pdp() {
        let mut v = vec![Complex64::new(0.0, 0.0); 8];
        v[0] = Complex64::new(1.0, 0.0);
        let p = compute_pdp(&[ComplexSignal::new(v, 1.0).unwrap()]).unwrap();
        assert_eq!(p.power_db[0], 0.0);
        assert!(p.power_db[1..].iter().all(|&d| d == FLOOR_DB));
        assert!(compute_pdp(&[]).is_err());
    }

    #[test]
    fn pdp_normalization_invariance() {
        let d = ComplexSignal::from_real(&[1.0, 0.5, 0.0], 1.0).unwrap();
        let d2 = d.scaled(Complex64::new(0.0, 2.0));
        let one = compute_pdp(&[d.clone()]).unwrap();
        let two = compute_pdp(&[d, d2]).unwrap();
        for (a, b) in one.power_db.iter().zip(&two.power_db) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_pdp_slope_matches_decay() {
        let cfg = RcConfig::default();
        let hs: Vec<ComplexSignal> = rc_ensemble(&cfg, 1000).unwrap().into_iter().map(|c| c.taps).collect();
        let p = compute_pdp(&hs).unwrap();
        let slope = fitted_slope_db_per_s(&p, 4.0 * cfg.tau_rms);
        let expected = -10.0 * std::f64::consts::E.log10() / cfg.tau_rms;
        assert!((slope / expected - 1.0).abs() < 0.1, "{slope} vs {expected}");
    }

    pub(crate) fn fitted_slope_db_per_s(p: &PdpEstimate, span: f64) -> f64 {
        let pts: Vec<(f64, f64)> = p.delays.iter().zip(&p.power_db).filter(|(t, _)| **t <= span).map(|(&t, &d)| (t, d)).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    }

    #[test]
    fn rms_delay_spread_cases() {
        assert_eq!(rms_delay_spread(&pdp(&[0.0, 10.0], &[0.0, FLOOR_DB]), -30.0).unwrap(), 0.0);
        let t = 100e-9;
        let two = PdpEstimate { delays: vec![0.0, t], power_db: vec![0.0, 0.0], n_realizations: 1 };
        assert_eq!(rms_delay_spread(&two, -30.0).unwrap(), t / 2.0);
        assert!(rms_delay_spread(&pdp(&[0.0], &[-50.0]), -30.0).is_err());
    }

    #[test]
    fn exponential_profile_spread() {
        // 100 bins per decay constant, 20 constants long.
        let tau = 1e-6;
        let n = 2000;
        let delays: Vec<f64> = (0..n).map(|k| k as f64 * tau / 100.0).collect();
        let power: Vec<f64> = delays.iter().map(|t| (-t / tau).exp()).collect();
        let p = PdpEstimate::from_power(delays, &power, 1).unwrap();
        let s = rms_delay_spread(&p, -200.0).unwrap();
        assert!((s / tau - 1.0).abs() < 0.02, "{}", s / tau);
    }

    #[test]
    fn rms_delay_spread_invariances() {
        let base = pdp(&[0.0, 10.0, 30.0, 70.0], &[0.0, -3.0, -7.0, -12.0]);
        let s = rms_delay_spread(&base, -30.0).unwrap();
        let shifted = PdpEstimate { delays: base.delays.iter().map(|d| d + 1e-6).collect(), ..base.clone() };
        assert!((rms_delay_spread(&shifted, -30.0).unwrap() - s).abs() < 1e-15);
        // Re-normalize after a global offset; the peak returns to 0 dB.
        let lin: Vec<f64> = base.linear().iter().map(|p| p * 7.3).collect();
        let scaled = PdpEstimate::from_power(base.delays.clone(), &lin, 1).unwrap();
        assert!((rms_delay_spread(&scaled, -30.0).unwrap() - s).abs() < 1e-15);
    }

    #[test]
    fn detects_pedestrian_b_taps() {
        let model = coerce_to_grid(&builtin_model(BuiltinModel::PedestrianB), 10e-9, Some(2500e-9)).unwrap().model;
        let gains: Vec<Complex64> = model.linear_powers().iter().map(|p| Complex64::new(p.sqrt(), 0.0)).collect();
        let cir = model_to_cir(&model, &gains, 100e6).unwrap();
        let p = compute_pdp(&[cir.taps.resized(300)]).unwrap();
        let found = detect_taps(&p, 3.0, DEFAULT_FLOOR_DB);
        let ns: Vec<i64> = found.iter().map(|t| (t.delay * 1e9).round() as i64).collect();
        assert_eq!(ns, vec![0, 200, 800, 1200, 2300]);
        let report = match_taps(&found, &model, 5e-9);
        assert!(report.all_matched() && report.spurious_taps.is_empty());
        assert!(report.max_abs_power_error_db() < 1e-9);
    }

    #[test]
    fn flat_floor_has_no_taps() {
        let p = pdp(&[0.0, 10.0, 20.0, 30.0], &[0.0; 4]);
        assert!(detect_taps(&p, 3.0, -30.0).is_empty());
        assert!(detect_grid_taps(&p, -30.0, 6.0).is_empty());
    }

    #[test]
    fn detects_tdl_b_coerced_delays_at_half_grid() {
        // The ideal TDL-B profile on a 5 ns grid: adjacent 10 ns taps are
        // separated by an empty bin and resolve as local maxima.
        let model = coerce_to_grid(
            &crate::emulator::scale_delay_spread(&builtin_model(BuiltinModel::TdlB), 300e-9).unwrap(),
            10e-9,
            Some(1000e-9),
        )
        .unwrap()
        .model;
        let taps: Vec<(f64, f64)> = model.taps.iter().map(|t| (t.delay * 1e9, t.power_db)).collect();
        let p = sparse_pdp(&taps, 5.0, 400);
        let found: Vec<i64> = detect_taps(&p, 3.0, DEFAULT_FLOOR_DB).iter().map(|t| (t.delay * 1e9).round() as i64).collect();
        let expected: Vec<i64> = model.taps.iter().map(|t| (t.delay * 1e9).round() as i64).collect();
        assert_eq!(found, expected);
        assert_eq!(found, vec![0, 30, 60, 90, 110, 150, 160, 170, 330, 380, 460, 540, 610, 850, 910]);
    }

    #[test]
    fn grid_detection_resolves_adjacent_bins() {
        let p = sparse_pdp(&[(0.0, 0.0), (150.0, -3.0), (160.0, -8.9), (170.0, -9.0)], 10.0, 100);
        let found: Vec<i64> = detect_grid_taps(&p, -30.0, 6.0).iter().map(|t| (t.delay * 1e9).round() as i64).collect();
        assert_eq!(found, vec![0, 150, 160, 170]);
        // A local-maximum rule sees one peak for the three-bin run.
        assert_eq!(detect_taps(&p, 3.0, -30.0).len(), 2);
    }

    #[test]
    fn matching_reports_missed_and_spurious() {
        let model = coerce_to_grid(&builtin_model(BuiltinModel::PedestrianB), 10e-9, Some(2500e-9)).unwrap().model;
        let mut det: Vec<DetectedTap> = model
            .taps
            .iter()
            .map(|t| DetectedTap { delay: t.delay, power_db: t.power_db })
            .collect();
        let exact = match_taps(&det, &model, 5e-9);
        assert_eq!(exact.matches.len(), 5);
        assert!(exact.matches.iter().all(|m| m.delay_error == 0.0 && m.power_error_db == 0.0));
        det.retain(|t| (t.delay - 2300e-9).abs() > 1e-12);
        det.push(DetectedTap { delay: 1700e-9, power_db: -10.0 });
        let r = match_taps(&det, &model, 5e-9);
        assert_eq!(r.missed_taps.len(), 1);
        assert!((r.missed_taps[0].delay - 2300e-9).abs() < 1e-15);
        assert_eq!(r.spurious_taps.len(), 1);
        assert_eq!(r.matches.len() + r.missed_taps.len(), model.taps.len());
    }

    #[test]
    fn residual_of_pure_impulse_is_sentinel() {
        let c = vec![Complex64::new(0.0, 0.0), Complex64::new(2.0, 0.0), Complex64::new(0.0, 0.0)];
        let r = residual_metrics(&c, 1, 1.0).unwrap();
        assert_eq!(r.peak_to_residual_db, -FLOOR_DB);
        assert_eq!(r.residual_rms_delay_spread, 0.0);
        assert_eq!(r.residual_pdp.power_db[1], 0.0);
        assert_eq!(r.residual_pdp.delays[0], -1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn profile() -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(0.0f64..1.0, 3..60)
        }

        proptest! {
            #[test]
            fn detection_is_mirror_symmetric(p in profile(), prom in 0.5f64..10.0) {
                let n = p.len();
                let delays: Vec<f64> = (0..n).map(|k| k as f64).collect();
                let fwd = PdpEstimate::from_power(delays.clone(), &p, 1).unwrap();
                let rev_p: Vec<f64> = p.iter().rev().copied().collect();
                let rev = PdpEstimate::from_power(delays, &rev_p, 1).unwrap();
                let a: Vec<f64> = detect_taps(&fwd, prom, -40.0).iter().map(|t| t.delay).collect();
                let mut b: Vec<f64> = detect_taps(&rev, prom, -40.0).iter().map(|t| (n - 1) as f64 - t.delay).collect();
                b.reverse();
                prop_assert_eq!(a, b);
            }

            #[test]
            fn pdp_invariant_to_complex_scaling(
                v in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2..40),
                re in 0.1f64..5.0, im in -5.0f64..5.0,
            ) {
                let s = ComplexSignal::new(v.iter().map(|&(a, b)| Complex64::new(a, b)).collect(), 1.0).unwrap();
                prop_assume!(s.energy() > 1e-6);
                let a = compute_pdp(&[s.clone()]).unwrap();
                let b = compute_pdp(&[s.scaled(Complex64::new(re, im))]).unwrap();
                for (x, y) in a.power_db.iter().zip(&b.power_db) {
                    prop_assert!((x - y).abs() < 1e-9 || (*x <= -119.0 && *y <= -119.0));
                }
            }

            #[test]
            fn spread_translation_and_offset_invariant(p in profile(), shift in -1e-6f64..1e-6, gain in 0.01f64..100.0) {
                let n = p.len();
                let delays: Vec<f64> = (0..n).map(|k| k as f64 * 1e-8).collect();
                let a = PdpEstimate::from_power(delays.clone(), &p, 1).unwrap();
                prop_assume!(a.power_db.iter().any(|&d| d > FLOOR_DB));
                let b = PdpEstimate::from_power(delays.iter().map(|d| d + shift).collect(), &p.iter().map(|x| x * gain).collect::<Vec<_>>(), 1).unwrap();
                let sa = rms_delay_spread(&a, -30.0).unwrap();
                let sb = rms_delay_spread(&b, -30.0).unwrap();
                prop_assert!((sa - sb).abs() <= 1e-6 * sa.max(1e-9));
            }

            #[test]
            fn peak_to_sidelobe_is_non_negative(v in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..50)) {
                let c: Vec<Complex64> = v.into_iter().map(|(a, b)| Complex64::new(a, b)).collect();
                let r = residual_metrics(&c, 0, 1.0).unwrap();
                prop_assert!(r.peak_to_max_sidelobe_db >= 0.0);
            }
        }
    }
}
