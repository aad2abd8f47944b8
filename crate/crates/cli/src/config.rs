//! Flat `key = value` run configuration, command-line overrides, and the
//! manifest written next to every run's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rcsynth_core::emulator::{
    builtin_model, coerce_to_grid, load_model, scale_delay_spread, BuiltinModel, CoercionReport, DelayKind,
    DopplerConfig, DopplerSpectrum, TapModel,
};
use rcsynth_core::pipeline::LoopConfig;
use rcsynth_core::rc_model::RcConfig;
use rcsynth_core::sounder::{SounderConfig, WindowMode, WindowSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// The documented default configuration, shipped with the binary.
pub const DEFAULT_CONFIG: &str = include_str!("../default_config.toml");

/// Keys a manifest adds on top of a configuration; ignored when a manifest
/// is loaded back as a configuration.
const MANIFEST_KEYS: [&str; 4] = ["command", "tool_version", "input", "derived_seeds"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub rc_tau_rms_ns: f64,
    pub rc_max_delay_ns: f64,
    pub rc_sample_rate_hz: f64,
    pub rc_los_power: f64,
    pub rc_correlation_time_ns: f64,

    pub pn_order: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pn_polynomial: Option<u32>,
    pub samples_per_chip: usize,
    pub chip_rate_hz: f64,
    pub rrc_rolloff: f64,
    pub rrc_span: usize,
    pub snr_db: f64,
    pub n_periods: usize,
    pub window: String,
    pub window_start_ns: f64,
    pub window_length_ns: f64,
    pub window_margin_db: f64,
    pub window_max_gap_ns: f64,

    pub epsilon_rel: f64,
    pub fft_len: usize,

    pub model: String,
    pub ds_ns: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub realizable_limit_ns: Option<f64>,
    pub max_doppler_hz: f64,
    pub doppler_spectrum: String,
    pub fading_rate_hz: f64,
    pub block_len: usize,
    pub input_sample_rate_hz: f64,

    pub snapshots: usize,
    pub first_snapshot: u64,
    pub realizations: usize,
    pub bypass_ce: bool,
    pub stir_between: bool,

    pub baseline_dt_ns: Vec<f64>,
    pub baseline_fine_dt_ns: Vec<f64>,
    pub baseline_fine_rate_hz: f64,
    pub baseline_snapshots: usize,

    pub plots: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let rc = RcConfig::default();
        let s = SounderConfig::default();
        let d = DopplerConfig::default();
        Self {
            seed: 1,
            rc_tau_rms_ns: rc.tau_rms * 1e9,
            rc_max_delay_ns: rc.max_delay * 1e9,
            rc_sample_rate_hz: rc.sample_rate,
            rc_los_power: rc.los_power_linear,
            rc_correlation_time_ns: rc.correlation_time * 1e9,
            pn_order: s.pn_order,
            pn_polynomial: None,
            samples_per_chip: s.sps,
            chip_rate_hz: s.symbol_rate,
            rrc_rolloff: s.rolloff,
            rrc_span: s.rrc_span,
            snr_db: s.snr_db,
            n_periods: s.n_periods,
            window: "auto".into(),
            window_start_ns: 0.0,
            window_length_ns: 2500.0,
            window_margin_db: s.window.noise_margin_db,
            window_max_gap_ns: s.window.max_gap * 1e9,
            epsilon_rel: rcsynth_core::equalizer::DEFAULT_EPSILON_REL,
            fft_len: 0,
            model: "pedestrian_b".into(),
            ds_ns: 300.0,
            realizable_limit_ns: None,
            max_doppler_hz: d.max_doppler_hz,
            doppler_spectrum: "jakes".into(),
            fading_rate_hz: d.sample_rate,
            block_len: 0,
            input_sample_rate_hz: s.symbol_rate,
            snapshots: 1,
            first_snapshot: 0,
            realizations: 200,
            bypass_ce: false,
            stir_between: false,
            baseline_dt_ns: vec![0.0, 10.0, 20.0, 40.0],
            baseline_fine_dt_ns: vec![0.1],
            baseline_fine_rate_hz: 10e9,
            baseline_snapshots: 50,
            plots: false,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub model: Option<String>,
    pub ds_ns: Option<f64>,
    pub epsilon: Option<f64>,
    pub snapshots: Option<usize>,
    pub realizations: Option<usize>,
    pub bypass_ce: bool,
    pub stir_between: bool,
    pub plots: bool,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("config: {e}")))?;
        for k in MANIFEST_KEYS {
            table.remove(k);
        }
        let cfg: RunConfig = table.try_into().map_err(|e| CliError::Config(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::parse(&text)
            }
            None => Ok(Self::default()),
        }
    }

    /// Applies overrides; `baseline` selects which snapshot count
    /// `--snapshots` sets.
    pub fn apply(&mut self, o: &Overrides, baseline: bool) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = &o.model {
            self.model = v.clone();
        }
        if let Some(v) = o.ds_ns {
            self.ds_ns = v;
        }
        if let Some(v) = o.epsilon {
            self.epsilon_rel = v;
        }
        if let Some(v) = o.snapshots {
            if baseline {
                self.baseline_snapshots = v;
            } else {
                self.snapshots = v;
            }
        }
        if let Some(v) = o.realizations {
            self.realizations = v;
        }
        self.bypass_ce |= o.bypass_ce;
        self.stir_between |= o.stir_between;
        self.plots |= o.plots;
    }

    pub fn loop_config(&self) -> Result<LoopConfig, CliError> {
        if self.seed > i64::MAX as u64 {
            return Err(CliError::Config(format!("seed must be below 2^63, got {}", self.seed)));
        }
        let mode = match self.window.as_str() {
            "auto" => WindowMode::Auto,
            "fixed" => WindowMode::Fixed,
            other => return Err(CliError::Config(format!("window must be 'auto' or 'fixed', got '{other}'"))),
        };
        let spectrum = match self.doppler_spectrum.as_str() {
            "jakes" => DopplerSpectrum::Jakes,
            "none" => DopplerSpectrum::None,
            other => return Err(CliError::Config(format!("doppler_spectrum must be 'jakes' or 'none', got '{other}'"))),
        };
        let cfg = LoopConfig {
            rc: RcConfig {
                tau_rms: self.rc_tau_rms_ns * 1e-9,
                max_delay: self.rc_max_delay_ns * 1e-9,
                sample_rate: self.rc_sample_rate_hz,
                los_power_linear: self.rc_los_power,
                correlation_time: self.rc_correlation_time_ns * 1e-9,
                master_seed: 0,
            },
            sounder: SounderConfig {
                pn_order: self.pn_order,
                polynomial: self.pn_polynomial,
                sps: self.samples_per_chip,
                symbol_rate: self.chip_rate_hz,
                rolloff: self.rrc_rolloff,
                rrc_span: self.rrc_span,
                snr_db: self.snr_db,
                n_periods: self.n_periods,
                window: WindowSpec {
                    mode,
                    start_delay: self.window_start_ns * 1e-9,
                    length: self.window_length_ns * 1e-9,
                    noise_margin_db: self.window_margin_db,
                    max_gap: self.window_max_gap_ns * 1e-9,
                },
                ..SounderConfig::default()
            },
            epsilon_rel: self.epsilon_rel,
            fft_len: (self.fft_len > 0).then_some(self.fft_len),
            doppler: DopplerConfig {
                max_doppler_hz: self.max_doppler_hz,
                spectrum,
                sample_rate: self.fading_rate_hz,
                block_len: self.block_len()?,
            },
            n_realizations: self.realizations,
            master_seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Input samples per fading sample; 0 in the file derives it from the
    /// input and fading rates.
    pub fn block_len(&self) -> Result<usize, CliError> {
        if self.block_len > 0 {
            return Ok(self.block_len);
        }
        let ratio = self.input_sample_rate_hz / self.fading_rate_hz;
        if !(ratio.is_finite() && ratio >= 0.5) {
            return Err(CliError::Config(format!(
                "cannot derive block_len from input rate {} Hz and fading rate {} Hz",
                self.input_sample_rate_hz, self.fading_rate_hz
            )));
        }
        Ok(ratio.round() as usize)
    }

    /// The target model, delay-scaled if normalized, before coercion.
    pub fn model(&self) -> Result<TapModel, CliError> {
        let raw = match BuiltinModel::from_name(&self.model) {
            Some(b) => builtin_model(b),
            None => load_model(&PathBuf::from(&self.model)).map_err(|e| match e {
                rcsynth_core::Error::Io(io) => CliError::Config(format!("cannot read model '{}': {io}", self.model)),
                other => other.into(),
            })?,
        };
        let mut m = match raw.delay_kind {
            DelayKind::Normalized => scale_delay_spread(&raw, self.ds_ns * 1e-9)?,
            DelayKind::Absolute => raw,
        };
        if self.realizable_limit_ns.is_some() {
            m.realizable_limit = self.realizable_limit_ns.map(|l| l / 1e9);
        }
        Ok(m)
    }

    /// Model coerced onto the emulator's chip grid.
    pub fn coerced_model(&self) -> Result<CoercionReport, CliError> {
        let m = self.model()?;
        Ok(coerce_to_grid(&m, 1.0 / self.chip_rate_hz, m.realizable_limit)?)
    }
}

/// Resolved configuration plus everything needed to replay the run.
pub fn manifest(cfg: &RunConfig, command: &str, input: Option<&Path>, seeds: &[(String, u64)]) -> Result<String, CliError> {
    let mut table = toml::Table::try_from(cfg).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
    table.insert("command".into(), command.into());
    table.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
    if let Some(p) = input {
        table.insert("input".into(), p.display().to_string().into());
    }
    // TOML integers are signed 64-bit, so derived seeds are stored as hex.
    let derived: BTreeMap<String, String> = seeds.iter().map(|(k, v)| (k.clone(), format!("{v:#018x}"))).collect();
    table.insert(
        "derived_seeds".into(),
        toml::Value::try_from(derived).map_err(|e| CliError::Config(format!("manifest: {e}")))?,
    );
    let body = toml::to_string(&table).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
    let input_arg = if input.is_some() { " --input <input>" } else { "" };
    Ok(format!("# Replay with: rcsynth {command} --config <this file> --out <dir>{input_arg}\n{body}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_defaults_match_code() {
        assert_eq!(RunConfig::parse(DEFAULT_CONFIG).unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::parse("snr = 3"), Err(CliError::Config(_))));
        assert!(RunConfig::parse("snr_db = 'loud'").is_err());
    }

    #[test]
    fn manifest_reloads_as_config() {
        let mut cfg = RunConfig { seed: 42, snr_db: 50.0, ..Default::default() };
        cfg.realizable_limit_ns = Some(900.0);
        let text = manifest(&cfg, "sound", Some(Path::new("in.csv")), &[("x".into(), u64::MAX)]).unwrap();
        assert!(text.contains("x = \"0xffffffffffffffff\""));
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn infinite_snr_round_trips() {
        let cfg = RunConfig { snr_db: f64::INFINITY, ..Default::default() };
        let text = manifest(&cfg, "sound", None, &[]).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap().snr_db, f64::INFINITY);
    }

    #[test]
    fn overrides_take_precedence() {
        let mut cfg = RunConfig::default();
        let o = Overrides { seed: Some(9), snapshots: Some(7), bypass_ce: true, ..Default::default() };
        cfg.apply(&o, true);
        assert_eq!((cfg.seed, cfg.baseline_snapshots, cfg.snapshots, cfg.bypass_ce), (9, 7, 1, true));
    }

    #[test]
    fn builtin_models_resolve() {
        let cfg = RunConfig { model: "tdl_b".into(), ..Default::default() };
        let r = cfg.coerced_model().unwrap();
        assert_eq!(r.model.taps.len(), 15);
        assert_eq!(r.dropped.len(), 4);
        let cfg = RunConfig { model: "/no/such/file.toml".into(), ..Default::default() };
        assert!(matches!(cfg.model(), Err(CliError::Config(_))));
    }
}
