//! Flat `key=value` run configuration for the `pipeline` subcommand.
//!
//! Values come from defaults, then the config file, then command-line flags.
//! The resolved settings print back in the same format, so a printed config
//! can be fed to another run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use setree_core::{PipelineConfig, Provider, ThetaSchedule};

use crate::CliError;

pub const KEYS: &[&str] = &[
    "graph",
    "attrs",
    "output_dir",
    "iterations",
    "height",
    "theta",
    "theta_depth",
    "seed",
    "provider",
    "provider_timeout",
    "retain",
    "drop_frac",
    "k_max",
    "plateau_tol",
    "window",
    "reset_features",
    "max_nodes",
];

/// Raw values by key, each tagged with where it came from.
#[derive(Debug, Default)]
pub struct RawConfig {
    values: BTreeMap<&'static str, (String, String)>,
}

impl RawConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let mut raw = RawConfig::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let origin = format!("{}:{}", path.display(), idx + 1);
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Input(format!("{origin}: expected key=value")));
            };
            let key = key.trim();
            let Some(&known) = KEYS.iter().find(|&&k| k == key) else {
                return Err(CliError::Input(format!("{origin}: unknown key '{key}'")));
            };
            if raw.values.contains_key(known) {
                return Err(CliError::Input(format!("{origin}: '{key}' given twice")));
            }
            raw.values.insert(known, (value.trim().to_string(), origin));
        }
        Ok(raw)
    }

    /// Reads a config file. Relative paths in it are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let mut raw = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for key in ["graph", "attrs", "output_dir"] {
            if let Some((value, _)) = raw.values.get_mut(key) {
                if Path::new(value.as_str()).is_relative() {
                    *value = base.join(&*value).display().to_string();
                }
            }
        }
        Ok(raw)
    }

    /// Sets `key` from a command-line flag, replacing any file value.
    pub fn set(&mut self, key: &'static str, value: impl ToString) {
        debug_assert!(KEYS.contains(&key));
        self.values
            .insert(key, (value.to_string(), format!("--{}", key.replace('_', "-"))));
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.values.get(key) {
            None => Ok(None),
            Some((value, origin)) => value
                .parse()
                .map(Some)
                .map_err(|_| CliError::Input(format!("{origin}: bad value '{value}' for {key}"))),
        }
    }

    fn origin(&self, key: &str) -> String {
        self.values.get(key).map_or_else(|| key.to_string(), |(_, o)| o.clone())
    }
}

/// Everything a pipeline run needs.
#[derive(Debug, Clone)]
pub struct PipelineSettings {
    pub graph: PathBuf,
    pub attrs: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub config: PipelineConfig,
}

pub fn parse_provider(s: &str) -> Option<Provider> {
    match s.split_once(':') {
        None if s == "identity" => Some(Provider::Identity),
        Some(("smoothing", rounds)) => rounds.trim().parse().ok().map(|rounds| Provider::Smoothing { rounds }),
        Some(("external", command)) if !command.trim().is_empty() => Some(Provider::External {
            command: command.trim().to_string(),
        }),
        _ => None,
    }
}

fn provider_text(p: &Provider) -> String {
    match p {
        Provider::Identity => "identity".into(),
        Provider::Smoothing { rounds } => format!("smoothing:{rounds}"),
        Provider::External { command } => format!("external:{command}"),
    }
}

/// `depth:theta` pairs separated by commas, e.g. `0:0.5,1:3`.
pub fn parse_theta_depth(s: &str) -> Option<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
        let (d, t) = item.split_once(':')?;
        if out.insert(d.trim().parse().ok()?, t.trim().parse().ok()?).is_some() {
            return None;
        }
    }
    Some(out)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

impl RawConfig {
    pub fn resolve(&self) -> Result<PipelineSettings, CliError> {
        let usage = |key: &str| CliError::Usage(format!("{key} is required (config key or --{})", key.replace('_', "-")));
        let seed: u64 = self.get("seed")?.ok_or_else(|| usage("seed"))?;
        let graph: PathBuf = self.get("graph")?.ok_or_else(|| usage("graph"))?;
        let output_dir: PathBuf = self.get("output_dir")?.ok_or_else(|| usage("output_dir"))?;
        let attrs: Option<PathBuf> = self.get("attrs")?;

        let mut cfg = PipelineConfig {
            seed,
            ..PipelineConfig::default()
        };
        if let Some(v) = self.get("iterations")? {
            cfg.iterations = v;
        }
        if let Some(v) = self.get("height")? {
            cfg.height = v;
        }
        if let Some(v) = self.get("theta")? {
            cfg.theta.theta = v;
        }
        if let Some((text, origin)) = self.values.get("theta_depth") {
            cfg.theta.by_depth = parse_theta_depth(text).ok_or_else(|| {
                CliError::Input(format!("{origin}: theta_depth needs depth:theta pairs, got '{text}'"))
            })?;
        }
        if let Some((text, origin)) = self.values.get("provider") {
            cfg.provider = parse_provider(text).ok_or_else(|| {
                CliError::Input(format!(
                    "{origin}: provider must be identity, smoothing:<rounds> or external:<command>, got '{text}'"
                ))
            })?;
        }
        if let Some(secs) = self.get::<f64>("provider_timeout")? {
            if !(secs.is_finite() && secs > 0.0) {
                return Err(CliError::Input(format!(
                    "{}: provider_timeout must be positive seconds",
                    self.origin("provider_timeout")
                )));
            }
            cfg.provider_timeout = Duration::from_secs_f64(secs);
        }
        for (key, slot) in [("retain", &mut cfg.retain), ("reset_features", &mut cfg.reset_features)] {
            if let Some((text, origin)) = self.values.get(key) {
                *slot = parse_bool(text)
                    .ok_or_else(|| CliError::Input(format!("{origin}: {key} must be true or false")))?;
            }
        }
        if let Some(v) = self.get("drop_frac")? {
            cfg.drop_frac = Some(v);
        }
        if self.values.get("k_max").is_some_and(|(v, _)| v != "auto") {
            cfg.k_max = self.get("k_max")?;
        }
        if let Some(v) = self.get("plateau_tol")? {
            cfg.plateau_tol = v;
        }
        if let Some(v) = self.get("window")? {
            cfg.window = v;
        }
        if let Some(v) = self.get("max_nodes")? {
            cfg.max_nodes = v;
        }
        cfg.output_dir = Some(output_dir.clone());
        Ok(PipelineSettings {
            graph,
            attrs,
            output_dir,
            config: cfg,
        })
    }
}

impl PipelineSettings {
    /// The resolved settings as a config file, defaults included.
    pub fn to_config_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        line("graph", self.graph.display().to_string());
        if let Some(a) = &self.attrs {
            line("attrs", a.display().to_string());
        }
        line("output_dir", self.output_dir.display().to_string());
        line("iterations", c.iterations.to_string());
        line("height", c.height.to_string());
        line("theta", c.theta.theta.to_string());
        if !c.theta.by_depth.is_empty() {
            line("theta_depth", theta_depth_text(&c.theta));
        }
        line("seed", c.seed.to_string());
        line("provider", provider_text(&c.provider));
        line("provider_timeout", c.provider_timeout.as_secs_f64().to_string());
        line("retain", c.retain.to_string());
        if let Some(f) = c.drop_frac {
            line("drop_frac", f.to_string());
        }
        match c.k_max {
            Some(k) => line("k_max", k.to_string()),
            None => line("k_max", "auto".into()),
        }
        line("plateau_tol", c.plateau_tol.to_string());
        line("window", c.window.to_string());
        line("reset_features", c.reset_features.to_string());
        line("max_nodes", c.max_nodes.to_string());
        out
    }
}

fn theta_depth_text(t: &ThetaSchedule) -> String {
    let items: Vec<String> = t.by_depth.iter().map(|(d, v)| format!("{d}:{v}")).collect();
    items.join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RawConfig, CliError> {
        RawConfig::parse(text, Path::new("c.cfg"))
    }

    #[test]
    fn flags_override_file_values() {
        let mut raw = parse("graph=g.tsv\noutput_dir=out\nseed=3\ntheta=0.5\n").unwrap();
        raw.set("theta", 2.0);
        let s = raw.resolve().unwrap();
        assert_eq!(s.config.theta.theta, 2.0);
        assert_eq!(s.config.seed, 3);
    }

    #[test]
    fn missing_seed_is_a_usage_error() {
        let raw = parse("graph=g.tsv\noutput_dir=out\n").unwrap();
        assert!(matches!(raw.resolve(), Err(CliError::Usage(_))));
    }

    #[test]
    fn errors_name_file_and_line() {
        let err = parse("# comment\nseed=1\nbogus=2\n").unwrap_err();
        assert!(err.to_string().contains("c.cfg:3"), "{err}");
        let raw = parse("graph=g\noutput_dir=o\nseed=1\n\nheight=two\n").unwrap();
        assert!(raw.resolve().unwrap_err().to_string().contains("c.cfg:5"));
    }

    #[test]
    fn printed_config_parses_to_the_same_settings() {
        let raw = parse(
            "graph=g.tsv\nattrs=x.tsv\noutput_dir=out\nseed=9\ntheta_depth=0:0.5,2:4\n\
             provider=external:python3 drive.py --fast\nretain=yes\ndrop_frac=0.25\n",
        )
        .unwrap();
        let first = raw.resolve().unwrap();
        let text = first.to_config_text();
        let second = parse(&text).unwrap().resolve().unwrap();
        assert_eq!(first.config, second.config);
        assert_eq!(text, second.to_config_text());
    }

    #[test]
    fn file_paths_are_relative_to_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "graph=g.tsv\noutput_dir=/abs/out\nseed=1\n").unwrap();
        let s = RawConfig::load(&cfg).unwrap().resolve().unwrap();
        assert_eq!(s.graph, dir.path().join("g.tsv"));
        assert_eq!(s.output_dir, PathBuf::from("/abs/out"));
    }

    #[test]
    fn provider_syntax() {
        assert_eq!(parse_provider("identity"), Some(Provider::Identity));
        assert_eq!(parse_provider("smoothing:2"), Some(Provider::Smoothing { rounds: 2 }));
        assert_eq!(parse_provider("smoothing:x"), None);
        assert_eq!(parse_provider("external:"), None);
        assert_eq!(parse_provider("gcn"), None);
    }
}
