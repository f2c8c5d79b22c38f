//! Run configuration: a flat `key = value` text file, overridable by flags.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sdie::expsolver::{BMethod, Scheme};
use sdie::graph::LaplacianKind;
use sdie::imgpipe::PixelScale;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub eps: f64,
    pub tau: f64,
    pub delta: f64,
    pub max_iter: usize,
    pub mu_hat: f64,
    pub sigma: f64,
    /// Interpolation set size; at least the vertex count means exact factors.
    pub rank: usize,
    pub normalization: LaplacianKind,
    pub scheme: Scheme,
    pub k: usize,
    pub k_b: usize,
    pub b_method: BMethod,
    pub quad_scheme: Scheme,
    pub pixel_scale: PixelScale,
    pub seed: u64,
    /// Rejected interpolation sets are redrawn at most this many times.
    pub redraws: usize,
    pub reference: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Side of the builtin pair, used when no image paths are given.
    pub synthetic_side: usize,
    pub synthetic_noise: f64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            eps: 0.003,
            tau: 0.003,
            delta: 1e-10,
            max_iter: 500,
            mu_hat: 30.0,
            sigma: 35.0,
            rank: 70,
            normalization: LaplacianKind::Symmetric,
            scheme: Scheme::Strang,
            k: 1,
            k_b: 1,
            b_method: BMethod::OdeEuler,
            quad_scheme: Scheme::Strang,
            pixel_scale: PixelScale::Byte,
            seed: 0,
            redraws: 3,
            reference: None,
            labels: None,
            target: None,
            truth: None,
            synthetic_side: 40,
            synthetic_noise: 0.05,
            out: PathBuf::from("out"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "eps",
    "tau",
    "delta",
    "max_iter",
    "mu_hat",
    "sigma",
    "rank",
    "normalization",
    "scheme",
    "k",
    "k_b",
    "b_method",
    "quad_scheme",
    "pixel_scale",
    "seed",
    "redraws",
    "reference",
    "labels",
    "target",
    "truth",
    "synthetic_side",
    "synthetic_noise",
    "out",
];

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("config key '{key}': invalid value '{value}' ({why})"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| bad(key, value, e))
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "eps" => self.eps = num(key, v)?,
            "tau" => self.tau = num(key, v)?,
            "delta" => self.delta = num(key, v)?,
            "max_iter" => self.max_iter = num(key, v)?,
            "mu_hat" => self.mu_hat = num(key, v)?,
            "sigma" => self.sigma = num(key, v)?,
            "rank" => self.rank = num(key, v)?,
            "normalization" => self.normalization = v.parse().map_err(|e| bad(key, v, e))?,
            "scheme" => self.scheme = v.parse().map_err(|e| bad(key, v, e))?,
            "k" => self.k = num(key, v)?,
            "k_b" => self.k_b = num(key, v)?,
            "b_method" => self.b_method = v.parse().map_err(|e| bad(key, v, e))?,
            "quad_scheme" => self.quad_scheme = v.parse().map_err(|e| bad(key, v, e))?,
            "pixel_scale" => self.pixel_scale = v.parse().map_err(|e| bad(key, v, e))?,
            "seed" => self.seed = num(key, v)?,
            "redraws" => self.redraws = num(key, v)?,
            "reference" => self.reference = opt_path(v),
            "labels" => self.labels = opt_path(v),
            "target" => self.target = opt_path(v),
            "truth" => self.truth = opt_path(v),
            "synthetic_side" => self.synthetic_side = num(key, v)?,
            "synthetic_noise" => self.synthetic_noise = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(CliError::Input(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines. Blank lines, `#` comments and `result.*`
    /// keys (written by runs as metadata) are skipped.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Input(format!("config line {}: expected 'key = value'", no + 1)));
            };
            let k = k.trim();
            if k.starts_with("result.") {
                continue;
            }
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        match key {
            "eps" => format!("{:?}", self.eps),
            "tau" => format!("{:?}", self.tau),
            "delta" => format!("{:?}", self.delta),
            "max_iter" => self.max_iter.to_string(),
            "mu_hat" => format!("{:?}", self.mu_hat),
            "sigma" => format!("{:?}", self.sigma),
            "rank" => self.rank.to_string(),
            "normalization" => self.normalization.name().to_string(),
            "scheme" => self.scheme.name().to_string(),
            "k" => self.k.to_string(),
            "k_b" => self.k_b.to_string(),
            "b_method" => self.b_method.name(),
            "quad_scheme" => self.quad_scheme.name().to_string(),
            "pixel_scale" => self.pixel_scale.name().to_string(),
            "seed" => self.seed.to_string(),
            "redraws" => self.redraws.to_string(),
            "reference" => p(&self.reference),
            "labels" => p(&self.labels),
            "target" => p(&self.target),
            "truth" => p(&self.truth),
            "synthetic_side" => self.synthetic_side.to_string(),
            "synthetic_noise" => format!("{:?}", self.synthetic_noise),
            "out" => self.out.display().to_string(),
            _ => String::new(),
        }
    }

    /// All keys in file form; floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k));
        }
        s
    }

    /// Basic range checks that do not need the images.
    pub fn validate(&self) -> Result<(), CliError> {
        let req = |ok: bool, key: &str| if ok { Ok(()) } else { Err(bad(key, &self.get(key), "out of range")) };
        req(self.eps > 0.0 && self.eps.is_finite(), "eps")?;
        req(self.tau > 0.0 && self.tau <= self.eps, "tau")?;
        req(self.delta > 0.0, "delta")?;
        req(self.max_iter >= 1, "max_iter")?;
        req(self.mu_hat > 0.0 && self.mu_hat.is_finite(), "mu_hat")?;
        req(self.sigma > 0.0 && self.sigma.is_finite(), "sigma")?;
        req(self.rank >= 2, "rank")?;
        req(self.normalization != LaplacianKind::Unnormalized, "normalization")?;
        req(self.k >= 1, "k")?;
        req(self.k_b >= 1, "k_b")?;
        req(self.quad_scheme != Scheme::Euler, "quad_scheme")?;
        req((0.0..1.0).contains(&self.synthetic_noise), "synthetic_noise")?;
        let paths = [&self.reference, &self.labels, &self.target];
        let given = paths.iter().filter(|p| p.is_some()).count();
        if given != 0 && given != 3 {
            return Err(CliError::Input("reference, labels and target must be given together".into()));
        }
        if given == 0 {
            req(self.synthetic_side >= 4, "synthetic_side")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn overrides_and_metadata() {
        let text = "# run\neps = 0.01\ntau=0.005\nb_method = composite_simpson(20)\nresult.iterations = 7\nreference = a.png\nlabels = b.png\ntarget = c.png\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.eps, 0.01);
        assert_eq!(c.b_method, BMethod::CompositeSimpson(20));
        assert_eq!(c.reference.as_deref(), Some(Path::new("a.png")));
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn errors_name_the_key() {
        let e = RunConfig::parse("sigma = abc").unwrap_err().to_string();
        assert!(e.contains("sigma"), "{e}");
        assert!(RunConfig::parse("colour = red").unwrap_err().to_string().contains("colour"));
        let mut c = RunConfig::default();
        c.tau = 0.1;
        assert!(c.validate().unwrap_err().to_string().contains("tau"));
        c = RunConfig::default();
        c.reference = Some("x.png".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn awkward_floats_round_trip() {
        let mut c = RunConfig::default();
        c.eps = 0.1 + 0.2;
        c.tau = 1.0 / 3.0 * c.eps;
        c.delta = 1e-300;
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }
}
