//! Configuration parsing and the `simulate`, `separate` and `evaluate` workflows.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgmnmf::harness::{self, MixtureBundle, RoomSpec, SceneSpec, DEFAULT_SAMPLE_RATE};
use sgmnmf::model::DEFAULT_FLOOR;
use sgmnmf::{eval, optimizer, separate, signal, Algorithm, Hyperparams, SeparationState, StftConfig};

/// Environment variable that overrides `--workers`.
pub const WORKERS_ENV: &str = "SGMNMF_WORKERS";

#[derive(Debug, thiserror::Error)]
#[error("config field `{path}`: {message}")]
pub struct ConfigError {
    /// Dotted path of the offending field, `.` for the document root.
    pub path: String,
    pub message: String,
}

impl ConfigError {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{context}: {source}")]
    Core { context: String, source: sgmnmf::Error },

    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
}

type Result<T, E = CliError> = std::result::Result<T, E>;

trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for sgmnmf::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| CliError::Core { context: what(), source })
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(doc: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(doc);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::new(path, e.into_inner().to_string())
    })
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| CliError::Io { path: path.into(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftSection {
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for StftSection {
    fn default() -> Self {
        Self { window_ms: 64.0, hop_ms: 16.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Shape parameter; defaults to 4 for `subgaussian` and 2 for `gaussian`.
    pub beta: Option<f64>,
    pub n_sources: usize,
    pub n_bases: usize,
    pub iterations: usize,
    pub seed: u64,
    pub stft: StftSection,
    pub floor_eps: f64,
    /// Multichannel mixture WAV.
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Write `trace.csv` with one cost per iteration.
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        Self {
            algorithm: h.algorithm,
            beta: None,
            n_sources: h.n_sources,
            n_bases: h.n_bases,
            iterations: h.iterations,
            seed: h.seed,
            stft: StftSection::default(),
            floor_eps: DEFAULT_FLOOR,
            input: None,
            output_dir: None,
            trace: true,
        }
    }
}

impl RunConfig {
    pub fn hyperparams(&self) -> Hyperparams {
        let beta = self.beta.unwrap_or(match self.algorithm {
            Algorithm::Subgaussian => 4.0,
            Algorithm::Gaussian => 2.0,
        });
        Hyperparams {
            beta,
            n_sources: self.n_sources,
            n_bases: self.n_bases,
            iterations: self.iterations,
            floor_eps: self.floor_eps,
            seed: self.seed,
            algorithm: self.algorithm,
        }
    }

    pub fn stft_config(&self, sample_rate: u32) -> Result<StftConfig, ConfigError> {
        StftConfig::from_millis(sample_rate, self.stft.window_ms, self.stft.hop_ms)
            .map_err(|e| ConfigError::new("stft", e.to_string()))
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if let Err(e) = self.hyperparams().validated() {
            let field = match &e {
                sgmnmf::Error::InvalidParameter { field, .. } => *field,
                _ => ".",
            };
            return Err(ConfigError::new(field, e.to_string()));
        }
        for (name, v) in [("stft.window_ms", self.stft.window_ms), ("stft.hop_ms", self.stft.hop_ms)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::new(name, "must be a positive number of milliseconds"));
            }
        }
        // Checked at the standard rate; the actual rate comes from the input file.
        self.stft_config(DEFAULT_SAMPLE_RATE)?;
        Ok(())
    }
}

/// Parses and validates a `separate` configuration. Missing keys take defaults.
pub fn parse_config(doc: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = parse_json(doc)?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub estimates: Vec<PathBuf>,
    pub references: Vec<PathBuf>,
    pub mixture: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ref_channel: usize,
}

pub fn parse_eval_config(doc: &str) -> Result<EvalConfig, ConfigError> {
    let cfg: EvalConfig = parse_json(doc)?;
    if cfg.estimates.len() != cfg.references.len() {
        return Err(ConfigError::new(
            "estimates",
            format!("{} estimates for {} references", cfg.estimates.len(), cfg.references.len()),
        ));
    }
    if cfg.references.is_empty() {
        return Err(ConfigError::new("references", "at least one reference is required"));
    }
    Ok(cfg)
}

/// Written next to the audio by `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRecord {
    pub spec: SceneSpec,
    pub source_seeds: Vec<u64>,
    pub room: RoomSpec,
}

pub fn parse_scene_spec(doc: &str) -> Result<SceneSpec, ConfigError> {
    parse_json(doc)
}

fn write_wav(path: PathBuf, w: &sgmnmf::Waveform) -> Result<()> {
    signal::write_wav(&path, w).context(|| format!("writing {}", path.display()))
}

/// Generates a scene and writes `mixture.wav`, `image_{n}.wav`, `dry_{n}.wav`
/// and `scene.json` into `out`.
pub fn cmd_simulate(spec: &SceneSpec, out: &Path) -> Result<MixtureBundle> {
    let bundle = harness::simulate_scene(spec).context(|| "simulating scene".into())?;
    create_dir(out)?;
    write_wav(out.join("mixture.wav"), &bundle.mixture)?;
    for (n, (img, dry)) in bundle.images.iter().zip(&bundle.dries).enumerate() {
        write_wav(out.join(format!("image_{n}.wav")), img)?;
        write_wav(out.join(format!("dry_{n}.wav")), dry)?;
    }
    let record = SceneRecord {
        spec: spec.clone(),
        source_seeds: (0..spec.n_sources).map(|n| harness::source_seed(spec.seed, n)).collect(),
        room: RoomSpec::random(spec.n_sources, spec.n_mics, spec.rt60, DEFAULT_SAMPLE_RATE, spec.seed),
    };
    let path = out.join("scene.json");
    let json = serde_json::to_string_pretty(&record).expect("scene record is serializable");
    std::fs::write(&path, json).map_err(|source| CliError::Io { path, source })?;
    Ok(bundle)
}

fn required<'a>(field: &'static str, v: &'a Option<PathBuf>) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| ConfigError::new(field, "required for separation").into())
}

/// STFT, model fit, Wiener filtering and resynthesis. Writes `source_{n}.wav`,
/// `state.json` and, when enabled, `trace.csv`.
pub fn cmd_separate(cfg: &RunConfig) -> Result<()> {
    let input = required("input", &cfg.input)?;
    let out = required("output_dir", &cfg.output_dir)?;
    let mix = signal::read_wav(input).context(|| format!("reading {}", input.display()))?;
    if mix.n_channels() < 2 {
        return Err(CliError::Input {
            path: input.into(),
            message: format!("separation needs at least 2 channels, found {}", mix.n_channels()),
        });
    }
    let stft_cfg = cfg.stft_config(mix.sample_rate())?;
    let x = signal::stft(&mix, &stft_cfg).context(|| format!("analysing {}", input.display()))?;
    let init = SeparationState::init(x.n_freqs(), x.n_frames(), x.n_channels(), cfg.hyperparams())
        .context(|| "initializing model".into())?;
    let (state, trace) = optimizer::run(init, &x).context(|| "fitting model".into())?;
    let sources = separate::wiener_separate(&state, &x)
        .and_then(|s| s.to_waveforms(&stft_cfg, mix.len()))
        .context(|| "separating sources".into())?;

    create_dir(out)?;
    for (n, w) in sources.iter().enumerate() {
        write_wav(out.join(format!("source_{n}.wav")), w)?;
    }
    let state_path = out.join("state.json");
    state.save(&state_path).context(|| format!("writing {}", state_path.display()))?;
    if cfg.trace {
        let path = out.join("trace.csv");
        trace.write_csv(&path).context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// Scores estimates against references and writes `metrics.json`.
pub fn cmd_evaluate(cfg: &EvalConfig) -> Result<eval::MetricsReport> {
    let read = |p: &PathBuf| signal::read_wav(p).context(|| format!("reading {}", p.display()));
    let estimates = cfg.estimates.iter().map(read).collect::<Result<Vec<_>>>()?;
    let references = cfg.references.iter().map(read).collect::<Result<Vec<_>>>()?;
    let mixture = read(&cfg.mixture)?;
    let report = eval::sdr_improvement(&estimates, &references, &mixture, cfg.ref_channel)
        .context(|| "scoring estimates".into())?;
    create_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("metrics.json");
    std::fs::write(&path, report.to_json()).map_err(|source| CliError::Io { path, source })?;
    Ok(report)
}

/// `SGMNMF_WORKERS` wins over the flag; `None` leaves rayon's default.
pub fn resolve_workers(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>, ConfigError> {
    match env {
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(ConfigError::new(WORKERS_ENV, format!("expected a positive integer, got {v:?}"))),
        },
        None => match flag {
            Some(0) => Err(ConfigError::new("--workers", "must be positive")),
            other => Ok(other),
        },
    }
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    Ok(parse_config(&read_to_string(path)?)?)
}

pub fn load_eval_config(path: &Path) -> Result<EvalConfig> {
    Ok(parse_eval_config(&read_to_string(path)?)?)
}

pub fn load_scene_spec(path: &Path) -> Result<SceneSpec> {
    Ok(parse_scene_spec(&read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let h = cfg.hyperparams();
        assert_eq!((h.beta, h.n_bases, h.iterations), (4.0, 20, 200));
        assert_eq!(cfg.stft, StftSection { window_ms: 64.0, hop_ms: 16.0 });
        assert_eq!(cfg.floor_eps, 1e-12);
        let s = cfg.stft_config(16_000).unwrap();
        assert_eq!((s.window_length(), s.hop()), (1024, 256));
    }

    #[test]
    fn beta_validation_names_field() {
        assert!(parse_config(r#"{"beta": 4, "algorithm": "subgaussian"}"#).is_ok());
        for bad in [1.5, 5.0] {
            let e = parse_config(&format!(r#"{{"beta": {bad}, "algorithm": "subgaussian"}}"#)).unwrap_err();
            assert_eq!(e.path, "beta", "{e}");
        }
        let e = parse_config(r#"{"beta": 3, "algorithm": "gaussian"}"#).unwrap_err();
        assert_eq!(e.path, "beta");
        assert_eq!(parse_config(r#"{"algorithm": "gaussian"}"#).unwrap().hyperparams().beta, 2.0);
    }

    #[test]
    fn unknown_and_mistyped_keys_are_located() {
        let e = parse_config(r#"{"stft": {"window_ms": 64, "hops": 3}}"#).unwrap_err();
        assert!(e.path.starts_with("stft"), "{e}");
        assert!(e.message.contains("hops"));
        let e = parse_config(r#"{"n_bases": "twenty"}"#).unwrap_err();
        assert_eq!(e.path, "n_bases");
        let e = parse_config(r#"{"n_sources": 0}"#).unwrap_err();
        assert_eq!(e.path, "n_sources");
        let e = parse_config(r#"{"stft": {"hop_ms": 100}}"#).unwrap_err();
        assert_eq!(e.path, "stft");
        let e = parse_config(r#"{"stft": {"window_ms": -1}}"#).unwrap_err();
        assert_eq!(e.path, "stft.window_ms");
    }

    #[test]
    fn eval_config_checks_counts() {
        let ok = r#"{"estimates": ["a.wav"], "references": ["b.wav"], "mixture": "m.wav", "output_dir": "o"}"#;
        assert_eq!(parse_eval_config(ok).unwrap().ref_channel, 0);
        let bad = r#"{"estimates": ["a.wav"], "references": [], "mixture": "m.wav", "output_dir": "o"}"#;
        assert_eq!(parse_eval_config(bad).unwrap_err().path, "estimates");
        let e = parse_eval_config(r#"{"estimates": [], "references": []}"#).unwrap_err();
        assert!(e.message.contains("mixture"), "{e}");
    }

    #[test]
    fn worker_resolution() {
        assert_eq!(resolve_workers(None, None).unwrap(), None);
        assert_eq!(resolve_workers(Some(3), None).unwrap(), Some(3));
        assert_eq!(resolve_workers(Some(3), Some("1")).unwrap(), Some(1));
        assert_eq!(resolve_workers(None, Some("x")).unwrap_err().path, WORKERS_ENV);
        assert!(resolve_workers(Some(0), None).is_err());
    }

    #[test]
    fn separate_requires_paths() {
        let e = cmd_separate(&RunConfig::default()).unwrap_err();
        assert!(e.to_string().contains("input"), "{e}");
    }
}
