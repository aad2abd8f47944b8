//! CSV and text renderings of the artifacts. Writers return strings so a
//! caller can assemble every output before touching the filesystem.
//!
//! Complex samples use Rust's shortest round-trip float formatting, so a
//! written file reloads bit-exactly.

use std::fmt::Write as _;

use crate::baseline::SweepPoint;
use crate::emulator::CoercionReport;
use crate::equalizer::EqualizerFilter;
use crate::error::{Error, Result};
use crate::metrics::{PdpEstimate, ResidualMetrics, TapMatchReport};
use crate::rc_model::Cir;
use crate::signal::ComplexSignal;
use crate::Complex64;

/// `x` with six significant digits in fixed notation.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0.00000".into() } else { format!("{x}") };
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new leading digit (9.999996 -> 10.00000).
    let rounded: f64 = s.parse().unwrap_or(x);
    if rounded != 0.0 && rounded.abs().log10().floor() as i32 > mag && decimals > 0 {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

fn parse_f64(field: Option<&str>, what: &str, line: usize) -> Result<f64> {
    field
        .ok_or_else(|| Error::Parse(format!("line {line}: missing {what}")))?
        .trim()
        .parse()
        .map_err(|e| Error::Parse(format!("line {line}: bad {what}: {e}")))
}

/// `delay_ns,re,im`, one row per bin.
pub fn cir_to_csv(cir: &Cir) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["delay_ns", "re", "im"])?;
    for (k, v) in cir.samples().iter().enumerate() {
        w.write_record([format!("{}", cir.delay_of(k) * 1e9), format!("{}", v.re), format!("{}", v.im)])?;
    }
    finish(w)
}

/// Reads a CIR written by [`cir_to_csv`] (or any uniform `delay_ns,re,im`
/// table starting at delay 0). The sample rate comes from the delay step.
pub fn cir_from_csv(text: &str, snapshot_id: u64) -> Result<Cir> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut delays = Vec::new();
    let mut taps = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        delays.push(parse_f64(rec.get(0), "delay_ns", i + 2)?);
        taps.push(Complex64::new(parse_f64(rec.get(1), "re", i + 2)?, parse_f64(rec.get(2), "im", i + 2)?));
    }
    if delays.len() < 2 {
        return Err(Error::Parse("a CIR file needs at least two rows to fix its sample rate".into()));
    }
    if delays[0] != 0.0 {
        return Err(Error::Parse("CIR must start at delay 0".into()));
    }
    let step = delays[1] - delays[0];
    for (k, d) in delays.iter().enumerate() {
        if (d - k as f64 * step).abs() > 1e-6 * step.max(1.0) {
            return Err(Error::Parse(format!("row {}: delays are not uniformly spaced", k + 2)));
        }
    }
    let sample_rate = 1e9 / step;
    Ok(Cir::new(ComplexSignal::new(taps, sample_rate)?, snapshot_id))
}

/// Header line with the derivation parameters, then `tap_index,re,im` in
/// raw FFT order (indices at or above `fft_len/2` are negative delays).
pub fn equalizer_to_csv(eq: &EqualizerFilter) -> Result<String> {
    let mut out = format!(
        "# fft_len={} epsilon_rel={} source_snapshot={} sample_rate={}\n",
        eq.fft_len(),
        eq.epsilon_rel,
        eq.source_snapshot,
        eq.sample_rate()
    );
    let mut w = csv_writer();
    w.write_record(["tap_index", "re", "im"])?;
    for (i, v) in eq.taps.samples().iter().enumerate() {
        w.write_record([i.to_string(), format!("{}", v.re), format!("{}", v.im)])?;
    }
    out.push_str(&finish(w)?);
    Ok(out)
}

pub fn equalizer_from_csv(text: &str) -> Result<EqualizerFilter> {
    let header = text.lines().next().ok_or_else(|| Error::Parse("empty equalizer file".into()))?;
    let body = header
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse("equalizer file must start with a '# key=value' header".into()))?;
    let mut epsilon_rel = None;
    let mut source_snapshot = None;
    let mut sample_rate = None;
    let mut fft_len = None;
    for kv in body.split_whitespace() {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse(format!("bad header item '{kv}'")))?;
        let bad = |e: &dyn std::fmt::Display| Error::Parse(format!("header {k}: {e}"));
        match k {
            "fft_len" => fft_len = Some(v.parse::<usize>().map_err(|e| bad(&e))?),
            "epsilon_rel" => epsilon_rel = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
            "source_snapshot" => source_snapshot = Some(v.parse::<u64>().map_err(|e| bad(&e))?),
            "sample_rate" => sample_rate = Some(v.parse::<f64>().map_err(|e| bad(&e))?),
            _ => {}
        }
    }
    let missing = |k: &str| Error::Parse(format!("equalizer header lacks {k}"));
    let rest = &text[header.len()..];
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(rest.trim_start().as_bytes());
    let mut taps = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let idx = parse_f64(rec.get(0), "tap_index", i + 3)?;
        if idx != i as f64 {
            return Err(Error::Parse(format!("line {}: tap_index {idx} out of order", i + 3)));
        }
        taps.push(Complex64::new(parse_f64(rec.get(1), "re", i + 3)?, parse_f64(rec.get(2), "im", i + 3)?));
    }
    let n = fft_len.ok_or_else(|| missing("fft_len"))?;
    if taps.len() != n {
        return Err(Error::Parse(format!("header says {n} taps, file has {}", taps.len())));
    }
    Ok(EqualizerFilter {
        taps: ComplexSignal::new(taps, sample_rate.ok_or_else(|| missing("sample_rate"))?)?,
        epsilon_rel: epsilon_rel.ok_or_else(|| missing("epsilon_rel"))?,
        source_snapshot: source_snapshot.ok_or_else(|| missing("source_snapshot"))?,
    })
}

/// `delay_ns,power_db`, six significant digits.
pub fn pdp_to_csv(pdp: &PdpEstimate) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["delay_ns", "power_db"])?;
    for (d, p) in pdp.delays.iter().zip(&pdp.power_db) {
        w.write_record([sig6(d * 1e9), sig6(*p)])?;
    }
    finish(w)
}

pub fn match_report_to_csv(r: &TapMatchReport) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["status", "target_delay_ns", "detected_delay_ns", "target_power_db", "detected_power_db", "power_error_db"])?;
    for m in &r.matches {
        w.write_record([
            "matched".to_string(),
            sig6(m.target_delay * 1e9),
            sig6(m.detected_delay * 1e9),
            sig6(m.target_power_db),
            sig6(m.detected_power_db),
            sig6(m.power_error_db),
        ])?;
    }
    for t in &r.missed_taps {
        w.write_record(["missed".to_string(), sig6(t.delay * 1e9), String::new(), sig6(t.power_db), String::new(), String::new()])?;
    }
    for d in &r.spurious_taps {
        w.write_record(["spurious".to_string(), String::new(), sig6(d.delay * 1e9), String::new(), sig6(d.power_db), String::new()])?;
    }
    finish(w)
}

pub fn match_report_to_text(r: &TapMatchReport, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(
        s,
        "matched {}  missed {}  spurious {}  max |delay error| {:.1} ns  max |power error| {:.2} dB",
        r.matches.len(),
        r.missed_taps.len(),
        r.spurious_taps.len(),
        r.max_abs_delay_error() * 1e9,
        r.max_abs_power_error_db()
    );
    let _ = writeln!(s, "{:>12} {:>12} {:>10} {:>10} {:>8}", "target ns", "found ns", "target dB", "found dB", "err dB");
    for m in &r.matches {
        let _ = writeln!(
            s,
            "{:>12.1} {:>12.1} {:>10.2} {:>10.2} {:>8.2}",
            m.target_delay * 1e9,
            m.detected_delay * 1e9,
            m.target_power_db,
            m.detected_power_db,
            m.power_error_db
        );
    }
    for t in &r.missed_taps {
        let _ = writeln!(s, "{:>12.1} {:>12} {:>10.2} {:>10} {:>8}", t.delay * 1e9, "missed", t.power_db, "-", "-");
    }
    for d in &r.spurious_taps {
        let _ = writeln!(s, "{:>12} {:>12.1} {:>10} {:>10.2} {:>8}", "spurious", d.delay * 1e9, "-", d.power_db, "-");
    }
    s
}

/// Coerced model as `tap,delay_ns,power_db,source_taps`, followed by the
/// dropped taps.
pub fn coercion_to_csv(r: &CoercionReport) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["status", "delay_ns", "power_db", "source_taps"])?;
    for t in &r.model.taps {
        let sources = r
            .merged
            .iter()
            .find(|m| m.delay == t.delay)
            .map(|m| m.source_taps.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        w.write_record(["kept".to_string(), sig6(t.delay * 1e9), sig6(t.power_db), sources])?;
    }
    for d in &r.dropped {
        w.write_record(["dropped".to_string(), sig6(d.coerced_delay * 1e9), String::new(), d.tap.to_string()])?;
    }
    finish(w)
}

/// Residual versus artificial-path spacing:
/// `dt_ns,sample_rate_hz,mean_residual_db`.
pub fn sweep_residual_csv(points: &[SweepPoint]) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["dt_ns", "sample_rate_hz", "mean_residual_db"])?;
    for p in points {
        w.write_record([sig6(p.dt * 1e9), format!("{}", p.sample_rate), sig6(p.mean_residual_db)])?;
    }
    finish(w)
}

/// Self-correlation versus delay interval:
/// `dt_ns,mean_selfcorr,mean_selfcorr_magnitude`.
pub fn sweep_selfcorr_csv(points: &[SweepPoint]) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["dt_ns", "mean_selfcorr", "mean_selfcorr_magnitude"])?;
    for p in points {
        w.write_record([sig6(p.dt * 1e9), sig6(p.mean_selfcorr), sig6(p.mean_selfcorr_magnitude)])?;
    }
    finish(w)
}

/// Reads `delay_ns,power_db` rows back into a profile.
pub fn pdp_from_csv(text: &str) -> Result<PdpEstimate> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut delays = Vec::new();
    let mut power = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        delays.push(parse_f64(rec.get(0), "delay_ns", i + 2)? * 1e-9);
        power.push(crate::stats::db_to_linear(parse_f64(rec.get(1), "power_db", i + 2)?));
    }
    PdpEstimate::from_power(delays, &power, 1)
}

/// `re,im` rows, one per sample.
pub fn iq_to_csv(x: &ComplexSignal) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["re", "im"])?;
    for v in x.samples() {
        w.write_record([format!("{}", v.re), format!("{}", v.im)])?;
    }
    finish(w)
}

pub fn iq_from_csv(text: &str, sample_rate: f64) -> Result<ComplexSignal> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        out.push(Complex64::new(parse_f64(rec.get(0), "re", i + 2)?, parse_f64(rec.get(1), "im", i + 2)?));
    }
    ComplexSignal::new(out, sample_rate)
}

/// One-row table of cascade residual statistics.
pub fn residual_to_csv(m: &ResidualMetrics) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["peak_to_residual_db", "peak_to_max_sidelobe_db", "residual_rms_delay_spread_ns"])?;
    w.write_record([
        sig6(m.peak_to_residual_db),
        sig6(m.peak_to_max_sidelobe_db),
        sig6(m.residual_rms_delay_spread * 1e9),
    ])?;
    finish(w)
}
