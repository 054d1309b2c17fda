//! Experiment configuration: an INI file plus `--set section.key=value`
//! overrides. See `docs/config.md` for the schema.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use feat_core::interpolant::{Schedule, TrainConfig};
use feat_core::numcore::Activation;
use feat_core::sampling::MalaConfig;
use feat_core::systems::{EnergySystem, GmmParams};
use feat_core::transport::ode::DivergenceMethod;
use ini::Ini;

use crate::error::CliError;

const KNOWN: &[(&str, &[&str])] = &[
    ("run", &["seed", "out"]),
    (
        "system.a",
        &[
            "kind", "dim", "mean", "std", "components", "seed", "preset", "height", "particles", "epsilon",
            "sigma", "side", "m2", "lambda", "umbrella_k", "umbrella_center", "scale",
        ],
    ),
    ("sampler", &["samples", "chains", "steps", "thin", "step_size", "burn_in", "target_accept", "start"]),
    (
        "train",
        &[
            "iterations", "batch_size", "lr", "clip", "ot", "ot_batch", "canonicalize", "particles", "warmup", "tsm",
            "hidden", "activation", "noise",
        ],
    ),
    ("transport", &["field", "sigma", "steps", "paths", "divergence", "chunk"]),
    ("estimator", &["bootstrap"]),
    ("reweight", &["lo", "hi", "bins", "estimator"]),
];

fn known_keys(section: &str) -> Option<&'static [&'static str]> {
    let section = if section == "system.b" { "system.a" } else { section };
    KNOWN.iter().find(|(s, _)| *s == section).map(|(_, k)| *k)
}

pub struct Config {
    ini: Ini,
    pub path: PathBuf,
}

impl Config {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::MissingArtifact(format!("{}: {e}", path.display())))?;
        let mut ini =
            Ini::load_from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            let (lhs, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{o}` is not section.key=value")))?;
            let (section, key) = lhs
                .trim()
                .rsplit_once('.')
                .ok_or_else(|| CliError::Config(format!("override `{o}` has no section")))?;
            ini.with_section(Some(section)).set(key.trim(), value.trim());
        }
        let cfg = Config {
            ini,
            path: path.to_path_buf(),
        };
        cfg.check_keys()?;
        Ok(cfg)
    }

    fn check_keys(&self) -> Result<(), CliError> {
        for (section, props) in self.ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(CliError::Config(format!("key `{k}` appears before any section")));
                }
                continue;
            };
            let keys = known_keys(section).ok_or_else(|| CliError::Config(format!("unknown section [{section}]")))?;
            for (k, _) in props.iter() {
                if !keys.contains(&k) {
                    return Err(CliError::Config(format!("unknown key `{k}` in [{section}]")));
                }
            }
        }
        Ok(())
    }

    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.section(Some(section)).and_then(|p| p.get(key)).map(str::trim)
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("[{section}] {key} = `{v}` is not valid"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, section: &str, key: &str) -> Result<T, CliError> {
        self.get(section, key)?
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}` in [{section}]")))
    }

    pub fn flag(&self, section: &str, key: &str, default: bool) -> Result<bool, CliError> {
        match self.raw(section, key) {
            None => Ok(default),
            Some("true" | "1" | "yes" | "on") => Ok(true),
            Some("false" | "0" | "no" | "off") => Ok(false),
            Some(v) => Err(CliError::Config(format!("[{section}] {key} = `{v}` is not a boolean"))),
        }
    }

    pub fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<Vec<T>, _>>()
                .map(Some)
                .map_err(|_| CliError::Config(format!("[{section}] {key} = `{v}` is not a list of numbers"))),
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.require("run", "seed")
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> Result<PathBuf, CliError> {
        if let Some(p) = flag {
            return Ok(p.to_path_buf());
        }
        let out: String = self.get_or("run", "out", "out".to_string())?;
        let p = PathBuf::from(out);
        if p.is_absolute() {
            return Ok(p);
        }
        Ok(self.path.parent().unwrap_or(Path::new(".")).join(p))
    }

    /// Builds `[system.a]` or `[system.b]`.
    pub fn system(&self, which: &str) -> Result<EnergySystem, CliError> {
        let sec = format!("system.{which}");
        let s = sec.as_str();
        let kind: String = self.require(s, "kind")?;
        let sys = match kind.as_str() {
            "gaussian" => {
                let mean = match self.list(s, "mean")? {
                    Some(m) => m,
                    None => vec![0.0; self.require(s, "dim")?],
                };
                let std = self.list::<f64>(s, "std")?.unwrap_or_else(|| vec![1.0]);
                let std = if std.len() == 1 { vec![std[0]; mean.len()] } else { std };
                EnergySystem::gaussian(mean, std)?
            }
            "gmm" => {
                let dim = self.require(s, "dim")?;
                match self.get::<String>(s, "preset")?.as_deref() {
                    Some("sixteen") => EnergySystem::Gmm(GmmParams::sixteen(dim)),
                    Some("forty") => EnergySystem::Gmm(GmmParams::forty(dim)),
                    Some(p) => return Err(CliError::Config(format!("[{s}] unknown gmm preset `{p}`"))),
                    None => EnergySystem::Gmm(GmmParams::random(
                        dim,
                        self.require(s, "components")?,
                        self.require(s, "std")?,
                        self.require(s, "seed")?,
                    )?),
                }
            }
            "double_well" => EnergySystem::double_well(self.get_or(s, "dim", 1)?, self.get_or(s, "height", 1.0)?)?,
            "lj" => EnergySystem::lj_cluster(
                self.require(s, "particles")?,
                self.get_or(s, "epsilon", 1.0)?,
                self.get_or(s, "sigma", 1.0)?,
            )?,
            "phi4" => EnergySystem::phi4(self.require(s, "side")?, self.require(s, "m2")?, self.require(s, "lambda")?)?,
            other => return Err(CliError::Config(format!("[{s}] unknown system kind `{other}`"))),
        };
        let sys = match self.get::<f64>(s, "scale")? {
            Some(scale) => sys.scaled(scale)?,
            None => sys,
        };
        Ok(match (self.get::<f64>(s, "umbrella_k")?, self.get::<f64>(s, "umbrella_center")?) {
            (Some(k), Some(c)) => sys.with_umbrella(k, c),
            (None, None) => sys,
            _ => {
                return Err(CliError::Config(format!(
                    "[{s}] umbrella_k and umbrella_center must be set together"
                )))
            }
        })
    }

    pub fn mala(&self, seed: u64) -> Result<MalaConfig, CliError> {
        let d = MalaConfig::default();
        let cfg = MalaConfig {
            steps: 0,
            burn_in: self.get_or("sampler", "burn_in", d.burn_in)?,
            step_size: self.get_or("sampler", "step_size", 0.1)?,
            target_accept: self.get_or("sampler", "target_accept", d.target_accept)?,
            thin: self.get_or("sampler", "thin", 10)?,
            seed,
            ..d
        };
        Ok(cfg)
    }

    pub fn train(&self, seed: u64) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let activation = match self.get::<String>("train", "activation")? {
            None => d.activation,
            Some(name) => Activation::from_name(&name)
                .ok_or_else(|| CliError::Config(format!("[train] unknown activation `{name}`")))?,
        };
        let cfg = TrainConfig {
            iterations: self.get_or("train", "iterations", d.iterations)?,
            batch_size: self.get_or("train", "batch_size", d.batch_size)?,
            lr: self.get_or("train", "lr", d.lr)?,
            clip: self.get_or("train", "clip", d.clip)?,
            ot: self.flag("train", "ot", d.ot)?,
            ot_batch: self.get_or("train", "ot_batch", d.ot_batch)?,
            canonicalize: self.flag("train", "canonicalize", d.canonicalize)?,
            particles: self.flag("train", "particles", d.particles)?,
            warmup: self.get_or("train", "warmup", d.warmup)?,
            tsm: self.flag("train", "tsm", d.tsm)?,
            hidden: self.list("train", "hidden")?.unwrap_or(d.hidden),
            activation,
            schedule: self.schedule()?,
            sigma: self.get_or("transport", "sigma", d.sigma)?,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> Result<Schedule, CliError> {
        match self.get::<f64>("train", "noise")? {
            Some(a) => Ok(Schedule::new(a)?),
            None => Ok(Schedule::default()),
        }
    }

    pub fn divergence(&self) -> Result<DivergenceMethod, CliError> {
        let raw: String = self.get_or("transport", "divergence", "auto".to_string())?;
        let probes = |s: &str| -> Result<usize, CliError> {
            s.parse()
                .map_err(|_| CliError::Config(format!("[transport] divergence `{raw}`: bad probe count")))
        };
        match raw.split_once(':') {
            None if raw == "exact" => Ok(DivergenceMethod::Exact),
            None if raw == "auto" => Ok(DivergenceMethod::Auto { probes: 8 }),
            Some(("auto", n)) => Ok(DivergenceMethod::Auto { probes: probes(n)? }),
            Some(("hutchinson", n)) => Ok(DivergenceMethod::Hutchinson { probes: probes(n)? }),
            _ => Err(CliError::Config(format!(
                "[transport] divergence `{raw}` is not exact, auto[:n] or hutchinson:n"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use feat_core::systems::Energy;

    fn load(text: &str, sets: &[&str]) -> Result<Config, CliError> {
        let dir = std::env::temp_dir().join(format!("feat-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(format!("c{}.ini", text.len() + sets.len()));
        std::fs::write(&path, text).unwrap();
        let sets: Vec<String> = sets.iter().map(|s| s.to_string()).collect();
        Config::load(&path, &sets)
    }

    #[test]
    fn overrides_replace_file_values() {
        let cfg = load("[run]\nseed = 1\n[system.a]\nkind = gaussian\nmean = 0,0\n", &["system.a.std=2", "run.seed=7"])
            .unwrap();
        assert_eq!(cfg.seed().unwrap(), 7);
        let sys = cfg.system("a").unwrap();
        assert_eq!(sys.dim(), 2);
        assert!((sys.value(&[2.0, 0.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn typos_are_rejected() {
        assert!(matches!(load("[run]\nsed = 1\n", &[]), Err(CliError::Config(_))));
        assert!(matches!(load("[runn]\nseed = 1\n", &[]), Err(CliError::Config(_))));
        assert!(matches!(load("[run]\nseed = 1\n", &["noequals"]), Err(CliError::Config(_))));
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(matches!(load("[run]\nout = x\n", &[]).unwrap().seed(), Err(CliError::Config(_))));
    }
}
