//! Experiment configuration from flags and `key=value` files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use gtf_core::fit::geometric_grid;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    File { path: String, line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: gtf_core::Error,
    },
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Both,
}

/// Options shared by every subcommand. Unset flags fall back to `--config`,
/// then to defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Manifold definition file.
    #[arg(long)]
    pub manifold: Option<PathBuf>,
    /// Distribution definition file.
    #[arg(long)]
    pub dist: Option<PathBuf>,
    /// Distribution to use: a name in `--dist`, a file, or `<name>.df` beside the manifold.
    #[arg(long)]
    pub field: Option<String>,
    /// Vector field, e.g. `X=d/dx`, `X=y*d/dx + d/dy` or `X=[y, x]`.
    #[arg(long)]
    pub vector: Option<String>,
    /// Kernel order q.
    #[arg(long)]
    pub order: Option<usize>,
    /// Dimension when no manifold is given.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub eps_start: Option<f64>,
    #[arg(long)]
    pub eps_stop: Option<f64>,
    #[arg(long)]
    pub eps_factor: Option<f64>,
    /// Number of grid points around the patch centre.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Patch centre, comma separated.
    #[arg(long)]
    pub center: Option<String>,
    /// Patch radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Second manifold for the connection-mismatch check.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Diffeomorphism for the homothety check: `fwd1, fwd2 | inv1, inv2`.
    #[arg(long)]
    pub homothety: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// `key=value` file; keys are flag names without dashes.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub const DEFAULT_SEED: u64 = 7;

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub name: String,
    pub manifold: Option<PathBuf>,
    pub dist: Option<PathBuf>,
    pub field: Option<String>,
    pub vector: Option<String>,
    pub order: usize,
    pub dim: Option<usize>,
    pub eps: Vec<f64>,
    pub grid: usize,
    pub seed: u64,
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub compare: Option<PathBuf>,
    pub homothety: Option<String>,
    pub out: PathBuf,
    pub format: Format,
}

/// Reads `key=value` lines; `#` starts a comment.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::File {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("expected key=value, found '{line}'"),
        })?;
        out.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    Ok(out)
}

fn parse_list(s: &str) -> Result<Vec<f64>, ConfigError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| invalid(format!("bad number '{}' in '{s}'", t.trim()))))
        .collect()
}

struct Layer {
    map: BTreeMap<String, String>,
    base: PathBuf,
}

impl Layer {
    fn take<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| invalid(format!("config key '{key}': cannot parse '{v}'"))),
        }
    }

    fn path(&mut self, key: &str) -> Option<PathBuf> {
        self.map.remove(key).map(|v| self.base.join(v))
    }
}

impl ExperimentConfig {
    pub fn resolve(name: &str, opts: &Options) -> Result<Self, ConfigError> {
        let mut file = match &opts.config {
            Some(p) => Layer {
                map: read_config_file(p)?,
                base: p.parent().map(Path::to_path_buf).unwrap_or_default(),
            },
            None => Layer {
                map: BTreeMap::new(),
                base: PathBuf::new(),
            },
        };
        let center = match opts.center.clone().or(file.take("center")?) {
            Some(s) => Some(parse_list(&s)?),
            None => None,
        };
        let format = match file.map.remove("format") {
            Some(v) => Some(Format::from_str(&v, true).map_err(|_| invalid(format!("config key 'format': '{v}'")))?),
            None => None,
        };
        let start = opts.eps_start.or(file.take("eps-start")?).unwrap_or(0.125);
        let stop = opts.eps_stop.or(file.take("eps-stop")?).unwrap_or(0.125 / 8.0);
        let factor = opts.eps_factor.or(file.take("eps-factor")?).unwrap_or(0.5);
        let cfg = ExperimentConfig {
            name: name.to_string(),
            manifold: opts.manifold.clone().or_else(|| file.path("manifold")),
            dist: opts.dist.clone().or_else(|| file.path("dist")),
            field: opts.field.clone().or(file.take("field")?),
            vector: opts.vector.clone().or(file.take("vector")?),
            order: opts.order.or(file.take("order")?).unwrap_or(1),
            dim: opts.dim.or(file.take("dim")?),
            eps: epsilon_grid(start, stop, factor)?,
            grid: opts.grid.or(file.take("grid")?).unwrap_or(1),
            seed: opts.seed.or(file.take("seed")?).unwrap_or(DEFAULT_SEED),
            center,
            radius: opts.radius.or(file.take("radius")?),
            compare: opts.compare.clone().or_else(|| file.path("compare")),
            homothety: opts.homothety.clone().or(file.take("homothety")?),
            out: opts.out.clone().or_else(|| file.path("out")).unwrap_or_else(|| PathBuf::from(".")),
            format: opts.format.or(format).unwrap_or(Format::Both),
        };
        if let Some(k) = file.map.keys().next() {
            return Err(invalid(format!("unknown config key '{k}'")));
        }
        if cfg.grid == 0 {
            return Err(invalid("grid must be at least 1"));
        }
        if let Some(r) = cfg.radius {
            if !(r > 0.0) {
                return Err(invalid("radius must be positive"));
            }
        }
        Ok(cfg)
    }
}

/// Strictly decreasing `start, start·factor, …, ≥ stop`.
pub fn epsilon_grid(start: f64, stop: f64, factor: f64) -> Result<Vec<f64>, ConfigError> {
    if !(start > 0.0 && stop > 0.0 && stop <= start) {
        return Err(invalid(format!("need 0 < eps-stop ≤ eps-start, got {start} and {stop}")));
    }
    if !(factor > 0.0 && factor < 1.0) {
        return Err(invalid(format!("eps-factor must lie in (0, 1), got {factor}")));
    }
    let g = geometric_grid(start, stop, factor);
    if g.len() < 2 {
        return Err(invalid("epsilon grid needs at least two values"));
    }
    Ok(g)
}
