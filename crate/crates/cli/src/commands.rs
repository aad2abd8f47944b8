//! The five subcommands. Each returns its files and a stdout summary; the
//! caller writes them only if the whole command succeeded.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use rcsynth_core::emulator::{emulate as run_emulator, generate_fading, model_to_cir, TapModel};
use rcsynth_core::io::{
    cir_to_csv, coercion_to_csv, equalizer_to_csv, iq_from_csv, iq_to_csv, match_report_to_csv,
    match_report_to_text, pdp_from_csv, pdp_to_csv, residual_to_csv, sig6, sweep_residual_csv, sweep_selfcorr_csv,
};
use rcsynth_core::metrics::{
    compute_pdp, normalized_correlation, rms_delay_spread, DetectedTap, PdpEstimate, ResidualMetrics,
    DEFAULT_FLOOR_DB,
};
use rcsynth_core::pipeline::{self, chip_truth, measure, spurious_peaks, tap_report};
use rcsynth_core::rc_model::synthesize_rc_cir;
use rcsynth_core::sounder::{Sounder, SounderConfig};
use rcsynth_core::stats::power_db;
use rcsynth_core::{Cir, ComplexSignal};

use crate::config::RunConfig;
use crate::output::OutputSet;
use crate::plot::{line_plot, Series, Style};
use crate::CliError;

/// Fading samples generated at minimum, so Jakes shaping has enough bins.
const MIN_FADING_LEN: usize = 64;
const PLOT_FLOOR_DB: f64 = -60.0;

pub struct Run {
    pub files: OutputSet,
    pub seeds: Vec<(String, u64)>,
    pub summary: String,
}

fn db_series(delays: &[f64], power_db: &[f64]) -> Vec<(f64, f64)> {
    delays.iter().zip(power_db).map(|(&d, &p)| (d * 1e9, p)).collect()
}

fn cir_db(c: &Cir, peak: f64) -> Vec<(f64, f64)> {
    c.samples().iter().enumerate().map(|(i, v)| (c.delay_of(i) * 1e9, power_db(v.norm_sqr() / peak))).collect()
}

fn target_stems(model: &TapModel) -> Vec<(f64, f64)> {
    let max = model.taps.iter().map(|t| t.power_db).fold(f64::NEG_INFINITY, f64::max);
    model.taps.iter().map(|t| (t.delay * 1e9, t.power_db - max)).collect()
}

fn residual_line(name: &str, m: &ResidualMetrics) -> String {
    format!(
        "{name}: peak-to-residual {} dB, peak-to-max-sidelobe {} dB, residual rms delay spread {} ns\n",
        sig6(m.peak_to_residual_db),
        sig6(m.peak_to_max_sidelobe_db),
        sig6(m.residual_rms_delay_spread * 1e9)
    )
}

fn spurious_text(peaks: &[DetectedTap]) -> String {
    let mut s = format!("spurious peaks (prominence >= {} dB, off-grid): {}\n", pipeline::SPURIOUS_PROMINENCE_DB, peaks.len());
    for p in peaks {
        let _ = writeln!(s, "  {} ns  {} dB", sig6(p.delay * 1e9), sig6(p.power_db));
    }
    s
}

fn noise_free(cfg: &SounderConfig) -> Result<Sounder, CliError> {
    Ok(Sounder::new(&SounderConfig { snr_db: f64::INFINITY, ..cfg.clone() })?)
}

pub fn sound(cfg: &RunConfig) -> Result<Run, CliError> {
    let lc = cfg.loop_config()?;
    if cfg.snapshots == 0 {
        return Err(CliError::Config("snapshots must be >= 1".into()));
    }
    let sounder = Sounder::new(&lc.sounder)?;
    let quiet = noise_free(&lc.sounder)?;
    let snaps: Vec<u64> = (0..cfg.snapshots as u64).map(|i| cfg.first_snapshot + i).collect();
    let results = snaps
        .par_iter()
        .map(|&s| {
            let m = measure(&lc, &sounder, s)?;
            let clean = quiet.sound_channel(&m.truth, None, 0)?;
            let rho = normalized_correlation(m.windowed.samples(), clean.samples());
            let self_cancel = rcsynth_core::equalizer::cancellation_report(&chip_truth(&sounder, &m.truth)?, &m.equalizer)?;
            Ok((s, m, rho, self_cancel))
        })
        .collect::<rcsynth_core::Result<Vec<_>>>()?;

    let mut files = OutputSet::default();
    let mut table = String::from(
        "snapshot,window_start_ns,window_end_ns,chip_taps,fft_len,truth_correlation,peak_to_residual_db\n",
    );
    let mut summary = String::new();
    let ts = 1e9 / sounder.sample_rate();
    for (s, m, rho, cancel) in &results {
        files.add(format!("cir_raw_{s:03}.csv"), cir_to_csv(&m.raw)?);
        files.add(format!("cir_windowed_{s:03}.csv"), cir_to_csv(&m.windowed)?);
        files.add(format!("equalizer_{s:03}.csv"), equalizer_to_csv(&m.equalizer)?);
        let _ = writeln!(
            table,
            "{s},{},{},{},{},{},{}",
            sig6(m.window.start as f64 * ts),
            sig6(m.window.end as f64 * ts),
            m.chip_cir.len(),
            m.equalizer.fft_len(),
            sig6(*rho),
            sig6(cancel.peak_to_residual_db)
        );
        let _ = writeln!(
            summary,
            "snapshot {s}: window {}..{} ns, correlation with noise-free estimate {}, equalized peak-to-residual {} dB",
            sig6(m.window.start as f64 * ts),
            sig6(m.window.end as f64 * ts),
            sig6(*rho),
            sig6(cancel.peak_to_residual_db)
        );
        if cfg.plots {
            let peak = m.raw.samples().iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
            files.add(
                format!("cir_{s:03}.svg"),
                line_plot(
                    &format!("Chamber CIR, snapshot {s}"),
                    "delay (ns)",
                    "power (dB re peak)",
                    &[
                        Series { name: "raw", points: cir_db(&m.raw, peak), style: Style::Line },
                        Series { name: "windowed", points: cir_db(&m.windowed, peak), style: Style::Line },
                    ],
                    Some(PLOT_FLOOR_DB),
                ),
            );
        }
    }
    files.add("sound_summary.csv", table);
    Ok(Run { files, seeds: lc.derived_seeds(&snaps, false), summary })
}

pub fn closed_loop(cfg: &RunConfig) -> Result<Run, CliError> {
    let lc = cfg.loop_config()?;
    let sounder = Sounder::new(&lc.sounder)?;
    let s = cfg.first_snapshot;
    let eval = if cfg.stir_between { s + 1 } else { s };
    let m = measure(&lc, &sounder, s)?;
    let (target, coercion) = if cfg.bypass_ce {
        (TapModel::unit_tap(1.0 / lc.chip_rate()), None)
    } else {
        let r = cfg.coerced_model()?;
        (r.model.clone(), Some(r))
    };
    let run = pipeline::closed_loop(&lc, &sounder, &m.equalizer, &target, eval)?;
    let h_eval = synthesize_rc_cir(&lc.chamber(), eval)?;
    let cancel = rcsynth_core::equalizer::cancellation_report(&chip_truth(&sounder, &h_eval)?, &m.equalizer)?;

    let mut files = OutputSet::default();
    files.add("equalizer.csv", equalizer_to_csv(&m.equalizer)?);
    files.add("cir_windowed.csv", cir_to_csv(&m.windowed)?);
    files.add("pdp.csv", pdp_to_csv(&run.pdp)?);
    files.add("cancellation.csv", residual_to_csv(&cancel)?);

    let mut summary = format!(
        "closed loop: equalizer from snapshot {s}, evaluated on snapshot {eval}, {} realizations\n",
        lc.n_realizations
    );
    summary.push_str(&residual_line("equalizer x chamber", &cancel));
    if let Some(coercion) = coercion {
        let report = tap_report(&run.pdp, &target)?;
        let spurious = spurious_peaks(&run.pdp, &target)?;
        files.add("target_model.csv", coercion_to_csv(&coercion)?);
        files.add("tap_match.csv", match_report_to_csv(&report)?);
        let mut text = match_report_to_text(&report, &format!("Closed-loop PDP vs {}", target.name));
        text.push_str(&spurious_text(&spurious));
        files.add("tap_match.txt", text.clone());
        summary.push_str(&text);
    } else {
        let residual = run.residual()?;
        files.add("residual.csv", residual_to_csv(&residual)?);
        summary.push_str(&residual_line("closed loop, emulator bypassed", &residual));
    }
    files.add("closed_loop_summary.txt", summary.clone());
    if cfg.plots {
        files.add(
            "pdp.svg",
            line_plot(
                &format!("Closed-loop PDP, {}", target.name),
                "delay (ns)",
                "power (dB re peak)",
                &[
                    Series { name: "measured", points: db_series(&run.pdp.delays, &run.pdp.power_db), style: Style::Line },
                    Series { name: "target", points: target_stems(&target), style: Style::Stems },
                ],
                Some(PLOT_FLOOR_DB),
            ),
        );
    }
    let mut snaps = vec![s];
    if eval != s {
        snaps.push(eval);
    }
    Ok(Run { files, seeds: lc.derived_seeds(&snaps, true), summary })
}

pub fn baseline(cfg: &RunConfig) -> Result<Run, CliError> {
    let lc = cfg.loop_config()?;
    let model = cfg.coerced_model()?.model;
    let dts: Vec<f64> = cfg.baseline_dt_ns.iter().chain(&cfg.baseline_fine_dt_ns).map(|d| d * 1e-9).collect();
    if dts.is_empty() {
        return Err(CliError::Config("baseline needs at least one spacing".into()));
    }
    let rc = lc.chamber();
    let sweep = rcsynth_core::baseline::baseline_sweep(&rc, &model, &dts, cfg.baseline_snapshots, cfg.baseline_fine_rate_hz)?;

    let mut files = OutputSet::default();
    files.add("baseline_residual.csv", sweep_residual_csv(&sweep)?);
    files.add("baseline_selfcorr.csv", sweep_selfcorr_csv(&sweep)?);
    let mut summary = format!("artificial-path baseline, {} snapshots, model {}\n", cfg.baseline_snapshots, model.name);
    for p in &sweep {
        let _ = writeln!(
            summary,
            "  dt {} ns @ {} Hz: residual {} dB, self-correlation {}",
            sig6(p.dt * 1e9),
            p.sample_rate,
            sig6(p.mean_residual_db),
            sig6(p.mean_selfcorr)
        );
    }
    if cfg.plots {
        let pts = |f: fn(&rcsynth_core::baseline::SweepPoint) -> f64| sweep.iter().map(|p| (p.dt * 1e9, f(p))).collect();
        files.add(
            "baseline_residual.svg",
            line_plot(
                "Artificial-path residual",
                "dt (ns)",
                "mean residual (dB)",
                &[Series { name: "residual", points: pts(|p| p.mean_residual_db), style: Style::Line }],
                Some(PLOT_FLOOR_DB),
            ),
        );
        files.add(
            "baseline_selfcorr.svg",
            line_plot(
                "Chamber self-correlation",
                "dt (ns)",
                "mean self-correlation",
                &[Series { name: "real part", points: pts(|p| p.mean_selfcorr), style: Style::Line }],
                None,
            ),
        );
    }
    let mut seeds = vec![("rc_master".to_string(), rc.master_seed)];
    seeds.extend(
        lc.derived_seeds(&(0..cfg.baseline_snapshots as u64).collect::<Vec<_>>(), false)
            .into_iter()
            .filter(|(k, _)| k.starts_with("rc_snapshot_")),
    );
    Ok(Run { files, seeds, summary })
}

fn fading_table(model: &TapModel, gains: &[Vec<rcsynth_core::Complex64>], n: usize, rate: f64) -> String {
    let mut s = String::from("t_s");
    for (i, t) in model.taps.iter().enumerate() {
        let _ = write!(s, ",tap{}_{}ns_db", i + 1, sig6(t.delay * 1e9));
    }
    s.push('\n');
    for k in 0..n {
        s.push_str(&sig6(k as f64 / rate));
        for g in gains {
            let _ = write!(s, ",{}", sig6(power_db(g[k].norm_sqr())));
        }
        s.push('\n');
    }
    s
}

pub fn emulate(cfg: &RunConfig, input: Option<&Path>) -> Result<Run, CliError> {
    let lc = cfg.loop_config()?;
    let coercion = cfg.coerced_model()?;
    let model = &coercion.model;
    let n = lc.n_realizations.max(1);
    let mut files = OutputSet::default();
    files.add("target_model.csv", coercion_to_csv(&coercion)?);

    let fading = generate_fading(model, &lc.doppler, n.max(MIN_FADING_LEN), lc.fading_seed())?;
    files.add("fading_power.csv", fading_table(model, &fading.gains, n, lc.doppler.sample_rate));
    let cirs = (0..n)
        .map(|r| Ok(model_to_cir(model, &fading.gains_at(r), lc.chip_rate())?.taps))
        .collect::<Result<Vec<ComplexSignal>, CliError>>()?;
    let pdp = compute_pdp(&cirs)?;
    files.add("emulator_pdp.csv", pdp_to_csv(&pdp)?);
    let mut summary = format!(
        "emulator: {} taps on the {} ns grid ({} merged bins, {} dropped), {} fading samples at {} Hz\n",
        model.taps.len(),
        sig6(1e9 / lc.chip_rate()),
        coercion.merged.len(),
        coercion.dropped.len(),
        n,
        lc.doppler.sample_rate
    );
    let _ = writeln!(summary, "emulator PDP rms delay spread {} ns", sig6(rms_delay_spread(&pdp, DEFAULT_FLOOR_DB)? * 1e9));

    if let Some(path) = input {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        let x = iq_from_csv(&text, cfg.input_sample_rate_hz)?;
        let block = lc.doppler.block_len;
        let len = x.len().div_ceil(block).max(MIN_FADING_LEN);
        let f = generate_fading(model, &lc.doppler, len, lc.fading_seed())?;
        let y = run_emulator(model, &f, &x)?;
        files.add("emulated.csv", iq_to_csv(&y)?);
        let _ = writeln!(summary, "emulated {} input samples, {} per fading sample", x.len(), block);
    }
    if cfg.plots {
        files.add(
            "emulator_pdp.svg",
            line_plot(
                &format!("Emulator PDP, {}", model.name),
                "delay (ns)",
                "power (dB re peak)",
                &[
                    Series { name: "emulated", points: db_series(&pdp.delays, &pdp.power_db), style: Style::Line },
                    Series { name: "target", points: target_stems(model), style: Style::Stems },
                ],
                Some(PLOT_FLOOR_DB),
            ),
        );
    }
    Ok(Run { files, seeds: vec![("fading_master".to_string(), lc.fading_seed())], summary })
}

pub fn report(cfg: &RunConfig, input: Option<&Path>) -> Result<Run, CliError> {
    let path = input.ok_or_else(|| CliError::Config("report needs --input <pdp.csv>".into()))?;
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let pdp: PdpEstimate = pdp_from_csv(&text)?;
    let coercion = cfg.coerced_model()?;
    let target = &coercion.model;
    let report = tap_report(&pdp, target)?;
    let spurious = spurious_peaks(&pdp, target)?;

    let target_cir = model_to_cir(target, &target.linear_powers().iter().map(|p| p.sqrt().into()).collect::<Vec<_>>(), 1.0 / target.grid.unwrap_or(1e-8))?;
    let target_pdp = compute_pdp(&[target_cir.taps])?;
    let measured_ds = rms_delay_spread(&pdp, DEFAULT_FLOOR_DB)?;
    let target_ds = rms_delay_spread(&target_pdp, DEFAULT_FLOOR_DB)?;

    let mut text = match_report_to_text(&report, &format!("{} vs {}", path.display(), target.name));
    text.push_str(&spurious_text(&spurious));
    let _ = writeln!(
        text,
        "rms delay spread ({} dB floor): measured {} ns, target {} ns",
        DEFAULT_FLOOR_DB,
        sig6(measured_ds * 1e9),
        sig6(target_ds * 1e9)
    );
    let mut files = OutputSet::default();
    files.add("tap_match.csv", match_report_to_csv(&report)?);
    files.add("report.txt", text.clone());
    Ok(Run { files, seeds: Vec::new(), summary: text })
}
