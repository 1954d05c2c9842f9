//! Server configuration: defaults, a TOML file, `MORPHCANVAS_*` environment
//! variables, and command-line flags, merged in that order.
//!
//! Every layer speaks the same key names (`delta-t-ms`, `n-frames`, ...).
//! In the file and environment, underscores stand in for dashes.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use clap::{CommandFactory, FromArgMatches, Parser};
use thiserror::Error;

use crate::gaze_mask::WidthLaw;
use crate::session::SessionConfig;
use crate::synthesis::{BackendKind, SeedPolicy};

pub const ENV_PREFIX: &str = "MORPHCANVAS_";
pub const ENV_CONFIG_FILE: &str = "MORPHCANVAS_CONFIG";
pub const DEFAULT_REMOTE_URL: &str = "http://127.0.0.1:7860/inpaint";

pub const DELTA_T_RANGE_MS: (u64, u64) = (500, 3000);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown configuration key `{key}` ({origin})")]
    UnknownKey { key: String, origin: &'static str },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue { key: String, value: String, reason: String },
    #[error("config file {path}: {reason}")]
    File { path: String, reason: String },
    #[error("{0}")]
    Usage(String),
    /// `--help` or `--version`; the text goes to stdout and the exit status is 0.
    #[error("{0}")]
    Help(String),
}

impl ConfigError {
    /// Offending key, when the error concerns one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key, .. } | ConfigError::InvalidValue { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub canvas_path: PathBuf,
    pub session: SessionConfig,
    pub remote_url: String,
    pub remote_timeout: Duration,
    pub gaze_listen: String,
    pub view_listen: String,
    pub archive_dir: PathBuf,
    pub prompts_path: Option<PathBuf>,
    pub replay: Option<PathBuf>,
    pub dump_masks: Option<PathBuf>,
    pub keyframe_interval_ms: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            canvas_path: PathBuf::from("canvas.png"),
            session: SessionConfig::default(),
            remote_url: DEFAULT_REMOTE_URL.into(),
            remote_timeout: Duration::from_secs(30),
            gaze_listen: "127.0.0.1:7700".into(),
            view_listen: "127.0.0.1:7701".into(),
            archive_dir: PathBuf::from("archive"),
            prompts_path: None,
            replay: None,
            dump_masks: None,
            keyframe_interval_ms: 5000,
        }
    }
}

/// Every recognised key, in flag spelling.
pub const KEYS: &[&str] = &[
    "canvas",
    "delta-t-ms",
    "n-frames",
    "backend",
    "remote-url",
    "remote-timeout-ms",
    "sim-inpaint-ms",
    "sim-interp-ms",
    "gaze-listen",
    "view-listen",
    "archive-dir",
    "prompts",
    "replay",
    "dump-masks",
    "stroke-w-min",
    "stroke-w-max",
    "stroke-alpha",
    "stroke-law",
    "mask-threshold",
    "crop-min-side",
    "crop-max-side",
    "seed",
    "schedule-margin-ms",
    "keyframe-interval-ms",
];

#[derive(Debug, Parser)]
#[command(name = "morphcanvas", version, about = "Gaze-driven generative morphing server")]
struct Flags {
    /// TOML file with key = value settings.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Pristine canvas PNG.
    #[arg(long, value_name = "PNG")]
    canvas: Option<String>,
    /// Gaze window length and cycle period, 500 to 3000.
    #[arg(long)]
    delta_t_ms: Option<String>,
    /// Intermediate frames per morph.
    #[arg(long)]
    n_frames: Option<String>,
    /// Inpainting backend.
    #[arg(long, value_name = "mock|remote")]
    backend: Option<String>,
    /// Remote inpainting endpoint.
    #[arg(long, value_name = "URL")]
    remote_url: Option<String>,
    #[arg(long)]
    remote_timeout_ms: Option<String>,
    /// Simulated inpainting latency of the mock backend.
    #[arg(long)]
    sim_inpaint_ms: Option<String>,
    /// Simulated interpolation time; 0 uses the measured time.
    #[arg(long)]
    sim_interp_ms: Option<String>,
    /// Address for gaze and control input.
    #[arg(long, value_name = "ADDR")]
    gaze_listen: Option<String>,
    /// Address for frame viewers and GET /metrics.
    #[arg(long, value_name = "ADDR")]
    view_listen: Option<String>,
    #[arg(long, value_name = "DIR")]
    archive_dir: Option<String>,
    /// Prompt file, one sentence per line.
    #[arg(long, value_name = "FILE")]
    prompts: Option<String>,
    /// Replay a recorded gaze trace and exit after archiving.
    #[arg(long, value_name = "TRACE")]
    replay: Option<String>,
    /// Write each cycle's heatmap as mask_<k>.png into DIR.
    #[arg(long, value_name = "DIR")]
    dump_masks: Option<String>,
    #[arg(long)]
    stroke_w_min: Option<String>,
    #[arg(long)]
    stroke_w_max: Option<String>,
    #[arg(long)]
    stroke_alpha: Option<String>,
    #[arg(long, value_name = "direct|inverse")]
    stroke_law: Option<String>,
    #[arg(long)]
    mask_threshold: Option<String>,
    #[arg(long)]
    crop_min_side: Option<String>,
    #[arg(long)]
    crop_max_side: Option<String>,
    /// Fixed inpainting seed, or `counter` for the cycle index.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    schedule_margin_ms: Option<String>,
    #[arg(long)]
    keyframe_interval_ms: Option<String>,
}

impl Flags {
    fn pairs(self) -> Vec<(&'static str, String)> {
        let all = [
            ("canvas", self.canvas),
            ("delta-t-ms", self.delta_t_ms),
            ("n-frames", self.n_frames),
            ("backend", self.backend),
            ("remote-url", self.remote_url),
            ("remote-timeout-ms", self.remote_timeout_ms),
            ("sim-inpaint-ms", self.sim_inpaint_ms),
            ("sim-interp-ms", self.sim_interp_ms),
            ("gaze-listen", self.gaze_listen),
            ("view-listen", self.view_listen),
            ("archive-dir", self.archive_dir),
            ("prompts", self.prompts),
            ("replay", self.replay),
            ("dump-masks", self.dump_masks),
            ("stroke-w-min", self.stroke_w_min),
            ("stroke-w-max", self.stroke_w_max),
            ("stroke-alpha", self.stroke_alpha),
            ("stroke-law", self.stroke_law),
            ("mask-threshold", self.mask_threshold),
            ("crop-min-side", self.crop_min_side),
            ("crop-max-side", self.crop_max_side),
            ("seed", self.seed),
            ("schedule-margin-ms", self.schedule_margin_ms),
            ("keyframe-interval-ms", self.keyframe_interval_ms),
        ];
        all.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect()
    }
}

pub fn usage() -> String {
    Flags::command().render_help().to_string()
}

fn parse_flags<I, S>(args: I) -> Result<Flags, ConfigError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let matches = Flags::command().try_get_matches_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ConfigError::Help(e.to_string()),
        _ => ConfigError::Usage(e.to_string()),
    })?;
    Flags::from_arg_matches(&matches).map_err(|e| ConfigError::Usage(e.to_string()))
}

/// Merges `file` (TOML text), `env`, and `args` (including the program name)
/// over the defaults.
pub fn parse_config<I, S, E, K, V>(args: I, env: E, file: Option<&str>) -> Result<Config, ConfigError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
    E: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let flags = parse_flags(args)?;
    let mut config = Config::default();
    if let Some(text) = file {
        for (key, value) in file_pairs(text, "<config>")? {
            apply(&mut config, &key, &value, "file")?;
        }
    }
    for (key, value) in env_pairs(env)? {
        apply(&mut config, &key, &value, "environment")?;
    }
    for (key, value) in flags.pairs() {
        apply(&mut config, key, &value, "flag")?;
    }
    if let BackendKind::Remote { url } = &mut config.session.synthesis.backend {
        *url = config.remote_url.clone();
    }
    validate(&config)?;
    Ok(config)
}

/// Like [`parse_config`], reading the file named by `--config` or
/// `MORPHCANVAS_CONFIG` when either is present.
pub fn load_config<I, S, E, K, V>(args: I, env: E) -> Result<Config, ConfigError>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
    E: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let args: Vec<S> = args.into_iter().collect();
    let env: Vec<(String, String)> = env.into_iter().map(|(k, v)| (k.as_ref().to_owned(), v.as_ref().to_owned())).collect();
    let flags = parse_flags(args.iter().cloned())?;
    let path = flags
        .config
        .or_else(|| env.iter().find(|(k, _)| k == ENV_CONFIG_FILE).map(|(_, v)| PathBuf::from(v)));
    let text = match &path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| ConfigError::File {
            path: p.display().to_string(),
            reason: e.to_string(),
        })?),
        None => None,
    };
    parse_config(args, env, text.as_deref()).map_err(|e| match (e, &path) {
        (ConfigError::File { reason, .. }, Some(p)) => ConfigError::File { path: p.display().to_string(), reason },
        (e, _) => e,
    })
}

fn normalize_key(raw: &str) -> String {
    raw.trim().to_ascii_lowercase().replace('_', "-")
}

fn file_pairs(text: &str, path: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::File {
        path: path.into(),
        reason: e.message().to_owned(),
    })?;
    let mut out = Vec::new();
    for (key, value) in table {
        let value = match value {
            toml::Value::String(s) => s,
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => {
                return Err(ConfigError::InvalidValue {
                    key,
                    value: other.to_string(),
                    reason: "expected a string or number".into(),
                })
            }
        };
        out.push((normalize_key(&key), value));
    }
    Ok(out)
}

fn env_pairs<E, K, V>(env: E) -> Result<Vec<(String, String)>, ConfigError>
where
    E: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut out = BTreeMap::new();
    for (key, value) in env {
        let key = key.as_ref();
        if key == ENV_CONFIG_FILE {
            continue;
        }
        if let Some(rest) = key.strip_prefix(ENV_PREFIX) {
            out.insert(normalize_key(rest), value.as_ref().to_owned());
        }
    }
    Ok(out.into_iter().collect())
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::InvalidValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn apply(config: &mut Config, key: &str, value: &str, origin: &'static str) -> Result<(), ConfigError> {
    let s = &mut config.session;
    match key {
        "canvas" => config.canvas_path = value.into(),
        "delta-t-ms" => s.delta_t_ms = parse_num(key, value)?,
        "n-frames" => s.n_frames = parse_num(key, value)?,
        "backend" => {
            s.synthesis.backend = match value {
                "mock" => BackendKind::Mock,
                "remote" => BackendKind::Remote { url: String::new() },
                _ => {
                    return Err(ConfigError::InvalidValue {
                        key: key.into(),
                        value: value.into(),
                        reason: "expected `mock` or `remote`".into(),
                    })
                }
            }
        }
        "remote-url" => config.remote_url = value.into(),
        "remote-timeout-ms" => config.remote_timeout = Duration::from_millis(parse_num(key, value)?),
        "sim-inpaint-ms" => s.synthesis.simulated_latency_ms = parse_num(key, value)?,
        "sim-interp-ms" => s.sim_interp_ms = parse_num(key, value)?,
        "gaze-listen" => config.gaze_listen = value.into(),
        "view-listen" => config.view_listen = value.into(),
        "archive-dir" => config.archive_dir = value.into(),
        "prompts" => config.prompts_path = Some(value.into()),
        "replay" => config.replay = Some(value.into()),
        "dump-masks" => config.dump_masks = Some(value.into()),
        "stroke-w-min" => s.stroke.w_min = parse_num(key, value)?,
        "stroke-w-max" => s.stroke.w_max = parse_num(key, value)?,
        "stroke-alpha" => s.stroke.alpha = parse_num(key, value)?,
        "stroke-law" => {
            s.stroke.law = match value {
                "direct" => WidthLaw::Direct,
                "inverse" => WidthLaw::Inverse,
                _ => {
                    return Err(ConfigError::InvalidValue {
                        key: key.into(),
                        value: value.into(),
                        reason: "expected `direct` or `inverse`".into(),
                    })
                }
            }
        }
        "mask-threshold" => s.stroke.threshold = parse_num(key, value)?,
        "crop-min-side" => s.crop.min_side = parse_num(key, value)?,
        "crop-max-side" => s.crop.max_side = parse_num(key, value)?,
        "seed" => {
            s.synthesis.seed_policy = match value {
                "counter" => SeedPolicy::PerCycleCounter,
                v => SeedPolicy::Fixed(parse_num(key, v)?),
            }
        }
        "schedule-margin-ms" => s.schedule_margin_ms = parse_num(key, value)?,
        "keyframe-interval-ms" => config.keyframe_interval_ms = parse_num(key, value)?,
        _ => return Err(ConfigError::UnknownKey { key: key.into(), origin }),
    }
    Ok(())
}

fn invalid(key: &str, value: impl ToString, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue { key: key.into(), value: value.to_string(), reason: reason.into() }
}

fn validate(config: &Config) -> Result<(), ConfigError> {
    let s = &config.session;
    let (lo, hi) = DELTA_T_RANGE_MS;
    if !(lo..=hi).contains(&s.delta_t_ms) {
        return Err(invalid("delta-t-ms", s.delta_t_ms, format!("must lie in {lo}..={hi}")));
    }
    if s.n_frames == 0 {
        return Err(invalid("n-frames", 0, "must be at least 1"));
    }
    if let Err(reason) = s.stroke.validate() {
        let key = if reason.contains("threshold") {
            "mask-threshold"
        } else if reason.contains("alpha") {
            "stroke-alpha"
        } else {
            "stroke-w-min"
        };
        return Err(invalid(key, "", reason));
    }
    if s.crop.min_side == 0 || s.crop.min_side > s.crop.max_side {
        return Err(invalid("crop-min-side", s.crop.min_side, "must be positive and not exceed crop-max-side"));
    }
    if s.crop.max_side > crate::synthesis::MAX_BACKEND_SIDE {
        return Err(invalid(
            "crop-max-side",
            s.crop.max_side,
            format!("backend crops are limited to {}", crate::synthesis::MAX_BACKEND_SIDE),
        ));
    }
    if let BackendKind::Remote { url } = &s.synthesis.backend {
        if !(url.starts_with("http://") || url.starts_with("https://")) {
            return Err(invalid("remote-url", url, "expected an http:// or https:// URL"));
        }
    }
    Ok(())
}
