//! Flat `key = value` configs with `[section]` headers.
//!
//! ```text
//! [problem]
//! kind = td0
//! chain = data/td_chain.txt
//! costs = data/td_costs.txt
//! features = data/td_features.txt
//! gamma = 0.5
//!
//! [schedule]
//! rule = harmonic
//! b = 1
//!
//! [run]
//! T = 2000
//! n_trajectories = 200
//! seed = 7
//! deltas = 0.05, 0.1
//! out = runs/td
//!
//! [bound]
//! D = calibrate
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::markov::FiniteChain;
use crate::rl::{BehaviorPolicy, Mdp, QLearningInstance, TdInstance};
use crate::synthetic::SyntheticSpec;
use crate::textio::{parse_matrix, parse_vector};
use crate::{Error, Norm, Result, StepSchedule, Tagged};

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
}

/// Raw parsed config; every lookup remembers its line for diagnostics.
#[derive(Debug, Clone, Default)]
pub struct Ini {
    entries: Vec<Entry>,
    sections: Vec<(String, usize)>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut ini = Ini::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(rest) = body.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(line, "", "section header must end with `]`"))?
                    .trim();
                if ini.sections.iter().any(|(s, _)| s == name) {
                    return Err(Error::config(line, name, "section repeated"));
                }
                section = name.to_string();
                ini.sections.push((section.clone(), line));
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| Error::config(line, body, "expected `key = value`"))?;
            if section.is_empty() {
                return Err(Error::config(line, k.trim(), "key outside any section"));
            }
            let key = k.trim().to_string();
            if ini.entries.iter().any(|e| e.section == section && e.key == key) {
                return Err(Error::config(line, format!("{section}.{key}"), "key repeated"));
            }
            ini.entries.push(Entry {
                section: section.clone(),
                key,
                value: v.trim().to_string(),
                line,
            });
        }
        Ok(ini)
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.iter().any(|(s, _)| s == section)
    }

    fn entry(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.section == section && e.key == key)
    }

    fn section_line(&self, section: &str) -> usize {
        self.sections.iter().find(|(s, _)| s == section).map_or(0, |(_, l)| *l)
    }

    fn keys(&self, section: &str) -> impl Iterator<Item = &Entry> {
        let section = section.to_string();
        self.entries.iter().filter(move |e| e.section == section)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entry(section, key).map(|e| e.value.as_str())
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key).ok_or_else(|| {
            Error::config(self.section_line(section), format!("{section}.{key}"), "missing required key")
        })
    }

    fn parsed<T: std::str::FromStr>(&self, section: &str, key: &str, what: &str) -> Result<Option<T>> {
        match self.entry(section, key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| {
                Error::config(e.line, format!("{section}.{key}"), format!("`{}` is not {what}", e.value))
            }),
        }
    }

    pub fn f64(&self, section: &str, key: &str) -> Result<Option<f64>> {
        self.parsed(section, key, "a number")
    }

    pub fn usize(&self, section: &str, key: &str) -> Result<Option<usize>> {
        self.parsed(section, key, "a nonnegative integer")
    }

    pub fn u64(&self, section: &str, key: &str) -> Result<Option<u64>> {
        self.parsed(section, key, "a nonnegative integer")
    }

    pub fn bool(&self, section: &str, key: &str) -> Result<Option<bool>> {
        self.parsed(section, key, "`true` or `false`")
    }

    pub fn list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(e) = self.entry(section, key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|_| {
                    Error::config(e.line, format!("{section}.{key}"), format!("`{}` is not a number", t.trim()))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Error pinned to the line of `section.key`.
    pub fn error(&self, section: &str, key: &str, message: impl Into<String>) -> Error {
        let line = self.entry(section, key).map_or(self.section_line(section), |e| e.line);
        Error::config(line, format!("{section}.{key}"), message)
    }

    fn reject_unknown(&self, section: &str, allowed: &[&str]) -> Result<()> {
        match self.keys(section).find(|e| !allowed.contains(&e.key.as_str())) {
            Some(e) => Err(Error::config(
                e.line,
                format!("{section}.{}", e.key),
                format!("unknown key; expected one of {}", allowed.join(", ")),
            )),
            None => Ok(()),
        }
    }
}

/// Which family the experiment runs on.
#[derive(Debug, Clone)]
pub enum ProblemSpec {
    Synthetic(SyntheticSpec),
    QLearning {
        mdp: Mdp,
        policy: BehaviorPolicy,
        pi_min: Option<f64>,
        pi_min_samples: usize,
    },
    Td0 {
        chain: FiniteChain,
        costs: Vec<f64>,
        features: DMatrix<f64>,
        gamma: f64,
        rescale: bool,
    },
}

/// Where `D` comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DSource {
    Value(f64),
    Calibrate,
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StitchConfig {
    /// `upsilon(n) = c / n^exponent`.
    pub c: f64,
    pub exponent: f64,
    pub k_breve: f64,
    pub nu: f64,
    pub eps: f64,
    pub delta: f64,
    pub max_n0: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub schedule: StepSchedule,
    pub schedule_desc: String,
    pub n0: Option<usize>,
    pub horizon: usize,
    pub n_trajectories: usize,
    pub seed: u64,
    pub x0: Option<Vec<f64>>,
    pub y0: usize,
    pub deltas: Vec<f64>,
    pub out: PathBuf,
    pub trajectory_csv: bool,
    pub d: DSource,
    pub calibration_trajectories: usize,
    pub samples: usize,
    pub x_n_norm: Option<f64>,
    pub poisson_lipschitz: Option<f64>,
    pub curve_points: usize,
    pub stitch: Option<StitchConfig>,
    pub check_samples: usize,
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

fn read_file(ini: &Ini, base: &Path, section: &str, key: &str) -> Result<String> {
    let path = resolve(base, ini.require(section, key)?);
    std::fs::read_to_string(&path)
        .map_err(|e| ini.error(section, key, format!("cannot read {}: {e}", path.display())))
}

/// Re-labels a parse failure of a referenced file as a config error on the key.
fn in_key<T>(ini: &Ini, section: &str, key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => ini.error(section, key, other.to_string()),
    })
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(0, "", format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let ini = Ini::parse(text)?;
        for s in ["problem", "schedule", "run"] {
            if !ini.has_section(s) {
                return Err(Error::config(0, s, "missing section"));
            }
        }
        if let Some((name, line)) = ini
            .sections
            .iter()
            .find(|(s, _)| !["problem", "schedule", "run", "bound", "stitch", "verify"].contains(&s.as_str()))
        {
            return Err(Error::config(*line, name, "unknown section"));
        }
        let problem = Self::problem(&ini, base)?;

        ini.reject_unknown("schedule", &["rule", "b", "d1", "d2", "d3", "file", "values"])?;
        let schedule_desc = ini
            .keys("schedule")
            .map(|e| format!("{}={}", e.key, e.value.replace(' ', "")))
            .collect::<Vec<_>>()
            .join(" ");
        let schedule = StepSchedule::from_descriptor(&schedule_desc, Some(base))
            .map_err(|e| ini.error("schedule", "rule", e.to_string()))?;

        ini.reject_unknown(
            "run",
            &["n0", "T", "n_trajectories", "seed", "x0", "y0", "deltas", "out", "trajectory_csv"],
        )?;
        let horizon = ini
            .usize("run", "T")?
            .ok_or_else(|| ini.error("run", "T", "missing required key"))?;
        if horizon == 0 {
            return Err(ini.error("run", "T", "horizon must be positive"));
        }
        let n_trajectories = ini
            .usize("run", "n_trajectories")?
            .ok_or_else(|| ini.error("run", "n_trajectories", "missing required key"))?;
        if n_trajectories == 0 {
            return Err(ini.error("run", "n_trajectories", "must be positive"));
        }
        let deltas = ini.list("run", "deltas")?.unwrap_or_else(|| vec![0.1]);
        if deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(ini.error("run", "deltas", "delta values must be positive"));
        }
        let n0 = ini.usize("run", "n0")?;
        if n0 == Some(0) {
            return Err(ini.error("run", "n0", "n0 must be at least 1"));
        }

        ini.reject_unknown(
            "bound",
            &["D", "calibration_trajectories", "samples", "x_n_norm", "poisson_lipschitz", "curve_points"],
        )?;
        let d = match ini.get("bound", "D") {
            None => DSource::Missing,
            Some("calibrate") => DSource::Calibrate,
            Some(_) => match ini.f64("bound", "D")? {
                Some(v) if v > 0.0 => DSource::Value(v),
                _ => return Err(ini.error("bound", "D", "D must be positive or `calibrate`")),
            },
        };
        let stitch = if ini.has_section("stitch") {
            ini.reject_unknown("stitch", &["c", "exponent", "k_breve", "nu", "eps", "delta", "max_n0"])?;
            let need = |k: &str| -> Result<f64> {
                let v = ini.f64("stitch", k)?.ok_or_else(|| ini.error("stitch", k, "missing required key"))?;
                if !(v > 0.0) {
                    return Err(ini.error("stitch", k, "must be positive"));
                }
                Ok(v)
            };
            Some(StitchConfig {
                c: need("c")?,
                exponent: need("exponent")?,
                k_breve: need("k_breve")?,
                nu: need("nu")?,
                eps: need("eps")?,
                delta: need("delta")?,
                max_n0: ini.usize("stitch", "max_n0")?.unwrap_or(1 << 40),
            })
        } else {
            None
        };
        ini.reject_unknown("verify", &["check_samples"])?;

        Ok(ExperimentConfig {
            problem,
            schedule,
            schedule_desc,
            n0,
            horizon,
            n_trajectories,
            seed: ini.u64("run", "seed")?.unwrap_or(0),
            x0: ini.list("run", "x0")?,
            y0: ini.usize("run", "y0")?.unwrap_or(0),
            deltas,
            out: resolve(base, ini.get("run", "out").unwrap_or("out")),
            trajectory_csv: ini.bool("run", "trajectory_csv")?.unwrap_or(false),
            d,
            calibration_trajectories: ini.usize("bound", "calibration_trajectories")?.unwrap_or(n_trajectories.max(100)),
            samples: ini.usize("bound", "samples")?.unwrap_or(2000),
            x_n_norm: ini.f64("bound", "x_n_norm")?,
            poisson_lipschitz: ini.f64("bound", "poisson_lipschitz")?,
            curve_points: ini.usize("bound", "curve_points")?.unwrap_or(50).max(2),
            stitch,
            check_samples: ini.usize("verify", "check_samples")?.unwrap_or(2000),
        })
    }

    fn problem(ini: &Ini, base: &Path) -> Result<ProblemSpec> {
        let kind = ini.require("problem", "kind")?;
        match kind {
            "synthetic" => {
                ini.reject_unknown("problem", &["kind", "alpha", "x_star", "sigma", "coupling", "norm"])?;
                let def = SyntheticSpec::default();
                let norm = match ini.get("problem", "norm") {
                    None => def.norm,
                    Some(v) => v.parse::<Norm>().map_err(|e| ini.error("problem", "norm", e.to_string()))?,
                };
                Ok(ProblemSpec::Synthetic(SyntheticSpec {
                    alpha: ini.f64("problem", "alpha")?.unwrap_or(def.alpha),
                    x_star: ini.list("problem", "x_star")?.unwrap_or(def.x_star),
                    sigma: ini.f64("problem", "sigma")?.unwrap_or(def.sigma),
                    coupling: ini.f64("problem", "coupling")?.unwrap_or(def.coupling),
                    norm,
                }))
            }
            "qlearning" => {
                ini.reject_unknown("problem", &["kind", "mdp", "tau", "policy", "pi_min", "pi_min_samples"])?;
                let text = read_file(ini, base, "problem", "mdp")?;
                let mdp = in_key(ini, "problem", "mdp", Mdp::from_text(&text))?;
                let policy = match ini.get("problem", "policy").unwrap_or("softmax") {
                    "softmax" => {
                        let tau = ini.f64("problem", "tau")?.unwrap_or(1.0);
                        if !(tau > 0.0) {
                            return Err(ini.error("problem", "tau", "temperature must be positive"));
                        }
                        BehaviorPolicy::Softmax { tau }
                    }
                    "uniform" => BehaviorPolicy::uniform(&mdp),
                    other => {
                        return Err(ini.error("problem", "policy", format!("unknown policy `{other}`; use softmax or uniform")))
                    }
                };
                Ok(ProblemSpec::QLearning {
                    mdp,
                    policy,
                    pi_min: ini.f64("problem", "pi_min")?,
                    pi_min_samples: ini.usize("problem", "pi_min_samples")?.unwrap_or(2000),
                })
            }
            "td0" => {
                ini.reject_unknown("problem", &["kind", "chain", "costs", "features", "gamma", "rescale"])?;
                let chain = in_key(ini, "problem", "chain", FiniteChain::from_text(&read_file(ini, base, "problem", "chain")?))?;
                let costs = in_key(ini, "problem", "costs", parse_vector(&read_file(ini, base, "problem", "costs")?))?;
                let features = in_key(ini, "problem", "features", parse_matrix(&read_file(ini, base, "problem", "features")?))?;
                let gamma = ini
                    .f64("problem", "gamma")?
                    .ok_or_else(|| ini.error("problem", "gamma", "missing required key"))?;
                Ok(ProblemSpec::Td0 {
                    chain,
                    costs,
                    features,
                    gamma,
                    rescale: ini.bool("problem", "rescale")?.unwrap_or(false),
                })
            }
            other => Err(ini.error(
                "problem",
                "kind",
                format!("unknown problem kind `{other}`; use synthetic, qlearning or td0"),
            )),
        }
    }

    /// Discount of the RL families; `None` for synthetic problems.
    pub fn gamma(&self) -> Option<f64> {
        match &self.problem {
            ProblemSpec::Synthetic(_) => None,
            ProblemSpec::QLearning { mdp, .. } => Some(mdp.gamma()),
            ProblemSpec::Td0 { gamma, .. } => Some(*gamma),
        }
    }
}

/// A built problem plus the family-specific pieces the commands report.
pub enum Built {
    Synthetic(crate::engine::SaProblem),
    QLearning(crate::engine::SaProblem, Box<QLearningInstance>),
    Td0(crate::engine::SaProblem, Box<TdInstance>),
}

impl Built {
    pub fn problem(&self) -> &crate::engine::SaProblem {
        match self {
            Built::Synthetic(p) | Built::QLearning(p, _) | Built::Td0(p, _) => p,
        }
    }
}

impl ProblemSpec {
    pub fn build(&self, seed: u64) -> Result<Built> {
        Ok(match self {
            ProblemSpec::Synthetic(spec) => Built::Synthetic(spec.build()?),
            ProblemSpec::QLearning { mdp, policy, pi_min, pi_min_samples } => {
                let inst = match pi_min {
                    Some(v) => QLearningInstance::with_pi_min(mdp.clone(), policy.clone(), Tagged::declared(*v))?,
                    None => QLearningInstance::new(mdp.clone(), policy.clone(), *pi_min_samples, seed)?,
                };
                Built::QLearning(crate::rl::q_as_sa_problem(&inst)?, Box::new(inst))
            }
            ProblemSpec::Td0 { chain, costs, features, gamma, rescale } => {
                let inst = if *rescale {
                    TdInstance::new_rescaled(chain.clone(), costs.clone(), *gamma, features.clone())?
                } else {
                    TdInstance::new(chain.clone(), costs.clone(), *gamma, features.clone())?
                };
                Built::Td0(crate::rl::td_as_sa_problem(&inst)?, Box::new(inst))
            }
        })
    }
}
