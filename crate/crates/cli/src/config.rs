//! Run configuration: a flat, human-editable key-value file with sections.
//!
//! ```text
//! [paths]
//! pixels = data/pixels.csv
//! landslides = data/landslides.csv
//! adjacency = data/adjacency.csv
//!
//! [model]
//! family = gamma_gamma
//! submodel = M1
//!
//! [sampler]
//! n_iter = 100000
//! burn_in = 75000
//! ```
//!
//! Lines starting with `#` are comments. Unknown keys are rejected so typos
//! fail loudly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use slidemark::error::{Error, Result};
use slidemark::marks::MarkFamily;
use slidemark::model::Submodel;

#[derive(Debug, Clone)]
pub struct Paths {
    pub pixels: Option<PathBuf>,
    pub landslides: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub landslide_covariates: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ModelSection {
    pub family: MarkFamily,
    pub submodel: Submodel,
    pub count_covariates: Option<Vec<String>>,
    pub size_covariates: Option<Vec<String>>,
    pub theta_init: Option<Vec<f64>>,
    pub areal: bool,
    pub standardize: bool,
    pub fixed_precision: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerSection {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    WithinSample,
    Units,
    Thinning,
}

impl EvalMode {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::WithinSample => "ws",
            EvalMode::Units => "units",
            EvalMode::Thinning => "thinning",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalSection {
    pub fold_mode: EvalMode,
    pub k: usize,
    pub count_threshold: f64,
    pub size_threshold: Option<f64>,
    pub quantiles: Vec<f64>,
    pub subset: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SimulateSection {
    pub n_pixels: usize,
    pub n_units: usize,
    pub extra_edges: usize,
    pub p1: usize,
    pub p2: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub beta: f64,
    pub kappa_eta: f64,
    pub kappa_mu: f64,
    pub kappa_w1: f64,
    pub kappa_w2: f64,
    pub family: MarkFamily,
    pub theta: Vec<f64>,
    pub exposure: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub paths: Paths,
    pub model: ModelSection,
    pub sampler: SamplerSection,
    pub eval: EvalSection,
    pub simulate: Option<SimulateSection>,
}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

fn parse_sections(text: &str) -> Result<Sections> {
    let mut sections: Sections = BTreeMap::new();
    let mut current = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got {line:?}", lineno + 1))
        })?;
        if current.is_empty() {
            return Err(Error::Config(format!("line {}: key outside any [section]", lineno + 1)));
        }
        sections
            .get_mut(&current)
            .unwrap()
            .insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(sections)
}

struct Section<'a> {
    name: &'a str,
    map: BTreeMap<String, String>,
    used: std::cell::RefCell<std::collections::BTreeSet<String>>,
}

impl<'a> Section<'a> {
    fn new(name: &'a str, map: Option<&BTreeMap<String, String>>) -> Section<'a> {
        Section {
            name,
            map: map.cloned().unwrap_or_default(),
            used: std::cell::RefCell::new(Default::default()),
        }
    }

    fn get(&self, key: &str) -> Option<&String> {
        self.used.borrow_mut().insert(key.to_string());
        self.map.get(key).filter(|v| !v.is_empty())
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("[{}] {key} = {v:?} cannot be parsed", self.name))
            }),
        }
    }

    fn parse_or<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn list_f64(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!("[{}] {key}: bad number {s:?}", self.name))
                    })
                })
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    fn list_string(&self, key: &str) -> Option<Vec<String>> {
        self.get(key)
            .map(|v| v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        for key in self.map.keys() {
            if !used.contains(key) {
                return Err(Error::Config(format!("[{}] unknown key `{key}`", self.name)));
            }
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        RunConfig::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<RunConfig> {
        let sections = parse_sections(text)?;
        for name in sections.keys() {
            if !["paths", "model", "sampler", "eval", "simulate"].contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown section [{name}]")));
            }
        }

        let s = Section::new("paths", sections.get("paths"));
        let paths = Paths {
            pixels: s.path("pixels"),
            landslides: s.path("landslides"),
            adjacency: s.path("adjacency"),
            landslide_covariates: s.path("landslide_covariates"),
        };
        s.finish()?;

        let s = Section::new("model", sections.get("model"));
        let family_name = s.get("family").cloned().unwrap_or_else(|| "log_normal".into());
        let family = MarkFamily::from_name(&family_name)
            .ok_or_else(|| Error::Config(format!("unknown mark family {family_name:?}")))?;
        let submodel_name = s.get("submodel").cloned().unwrap_or_else(|| "M1".into());
        let submodel = Submodel::from_name(&submodel_name)
            .ok_or_else(|| Error::Config(format!("unknown submodel {submodel_name:?}")))?;
        let model = ModelSection {
            family,
            submodel,
            count_covariates: s.list_string("count_covariates"),
            size_covariates: s.list_string("size_covariates"),
            theta_init: s.list_f64("theta_init")?,
            areal: s.parse_or("areal", false)?,
            standardize: s.parse_or("standardize", true)?,
            fixed_precision: s.parse_or("fixed_precision", 1000.0)?,
        };
        s.finish()?;

        let s = Section::new("sampler", sections.get("sampler"));
        let preset = s.get("preset").cloned().unwrap_or_else(|| "application".into());
        let (d_iter, d_burn, d_thin) = match preset.as_str() {
            "application" => (100_000usize, 75_000usize, 25usize),
            "simulation" => (250_000, 187_500, 100),
            other => return Err(Error::Config(format!("unknown sampler preset {other:?}"))),
        };
        let sampler = SamplerSection {
            n_iter: s.parse_or("n_iter", d_iter)?,
            burn_in: s.parse_or("burn_in", d_burn)?,
            thin: s.parse_or("thin", d_thin)?,
            seed: s.parse_or("seed", 1u64)?,
        };
        s.finish()?;

        let s = Section::new("eval", sections.get("eval"));
        let mode_name = s.get("fold_mode").cloned().unwrap_or_else(|| "units".into());
        let fold_mode = match mode_name.as_str() {
            "ws" | "within_sample" => EvalMode::WithinSample,
            "units" | "slope_units" => EvalMode::Units,
            "thinning" => EvalMode::Thinning,
            other => return Err(Error::Config(format!("unknown fold_mode {other:?}"))),
        };
        let eval = EvalSection {
            fold_mode,
            k: s.parse_or("k", 10usize)?,
            count_threshold: s.parse_or("count_threshold", 1.0)?,
            size_threshold: s.parse("size_threshold")?,
            quantiles: s
                .list_f64("quantiles")?
                .unwrap_or_else(|| slidemark::eval::HAZARD_QUANTILES.to_vec()),
            subset: s.path("subset"),
        };
        s.finish()?;

        let simulate = match sections.get("simulate") {
            None => None,
            Some(map) => {
                let s = Section::new("simulate", Some(map));
                let family_name = s.get("family").cloned().unwrap_or_else(|| "log_normal".into());
                let family = MarkFamily::from_name(&family_name)
                    .ok_or_else(|| Error::Config(format!("unknown mark family {family_name:?}")))?;
                let sim = SimulateSection {
                    n_pixels: s.parse_or("n_pixels", 3000usize)?,
                    n_units: s.parse_or("n_units", 80usize)?,
                    extra_edges: s.parse_or("extra_edges", 20usize)?,
                    p1: s.parse_or("p1", 9usize)?,
                    p2: s.parse_or("p2", 9usize)?,
                    gamma1: s.parse_or("gamma1", -0.5)?,
                    gamma2: s.parse_or("gamma2", 0.5)?,
                    beta1: s.list_f64("beta1")?.unwrap_or_default(),
                    beta2: s.list_f64("beta2")?.unwrap_or_default(),
                    beta: s.parse_or("beta", 1.0)?,
                    kappa_eta: s.parse_or("kappa_eta", 3.0)?,
                    kappa_mu: s.parse_or("kappa_mu", 3.0)?,
                    kappa_w1: s.parse_or("kappa_w1", 2.0)?,
                    kappa_w2: s.parse_or("kappa_w2", 2.0)?,
                    family,
                    theta: s.list_f64("theta")?.unwrap_or_else(|| vec![5.0]),
                    exposure: s.parse_or("exposure", 1.0)?,
                };
                s.finish()?;
                Some(sim)
            }
        };

        let config = RunConfig { paths, model, sampler, eval, simulate };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let s = &self.sampler;
        if s.burn_in >= s.n_iter {
            return Err(Error::Config(format!(
                "[sampler] burn_in {} must be below n_iter {}",
                s.burn_in, s.n_iter
            )));
        }
        if let Some(sim) = &self.simulate {
            if sim.beta1.len() != sim.p1 && !sim.beta1.is_empty() {
                return Err(Error::Config("[simulate] beta1 length must equal p1".into()));
            }
            if sim.beta2.len() != sim.p2 && !sim.beta2.is_empty() {
                return Err(Error::Config("[simulate] beta2 length must equal p2".into()));
            }
        }
        Ok(())
    }

    /// Canonical rendering of the fully resolved configuration; embedded in
    /// every artifact so a run can be reproduced exactly.
    pub fn echo(&self, seed_override: Option<u64>) -> String {
        let mut out = String::new();
        let push = |out: &mut String, s: String| {
            out.push_str(&s);
            out.push('\n');
        };
        push(&mut out, "[paths]".into());
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        push(&mut out, format!("pixels = {}", p(&self.paths.pixels)));
        push(&mut out, format!("landslides = {}", p(&self.paths.landslides)));
        push(&mut out, format!("adjacency = {}", p(&self.paths.adjacency)));
        push(&mut out, format!("landslide_covariates = {}", p(&self.paths.landslide_covariates)));
        push(&mut out, "[model]".into());
        push(&mut out, format!("family = {}", self.model.family.name()));
        push(&mut out, format!("submodel = {}", self.model.submodel.name()));
        let join = |v: &Option<Vec<String>>| v.as_ref().map(|x| x.join(",")).unwrap_or_default();
        push(&mut out, format!("count_covariates = {}", join(&self.model.count_covariates)));
        push(&mut out, format!("size_covariates = {}", join(&self.model.size_covariates)));
        let joinf = |v: &Option<Vec<f64>>| {
            v.as_ref()
                .map(|x| x.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","))
                .unwrap_or_default()
        };
        push(&mut out, format!("theta_init = {}", joinf(&self.model.theta_init)));
        push(&mut out, format!("areal = {}", self.model.areal));
        push(&mut out, format!("standardize = {}", self.model.standardize));
        push(&mut out, format!("fixed_precision = {}", self.model.fixed_precision));
        push(&mut out, "[sampler]".into());
        push(&mut out, format!("n_iter = {}", self.sampler.n_iter));
        push(&mut out, format!("burn_in = {}", self.sampler.burn_in));
        push(&mut out, format!("thin = {}", self.sampler.thin));
        push(&mut out, format!("seed = {}", seed_override.unwrap_or(self.sampler.seed)));
        push(&mut out, "[eval]".into());
        push(&mut out, format!("fold_mode = {}", self.eval.fold_mode.name()));
        push(&mut out, format!("k = {}", self.eval.k));
        push(&mut out, format!("count_threshold = {}", self.eval.count_threshold));
        push(
            &mut out,
            format!(
                "size_threshold = {}",
                self.eval.size_threshold.map(|v| v.to_string()).unwrap_or_default()
            ),
        );
        push(
            &mut out,
            format!(
                "quantiles = {}",
                self.eval.quantiles.iter().map(|q| q.to_string()).collect::<Vec<_>>().join(",")
            ),
        );
        push(&mut out, format!("subset = {}", p(&self.eval.subset)));
        out
    }

    /// The core-model configuration implied by this run configuration.
    pub fn model_config(&self) -> slidemark::model::ModelConfig {
        let mut mc = slidemark::model::ModelConfig::new(self.model.family, self.model.submodel);
        mc.theta_init = self.model.theta_init.clone();
        mc.fixed_precision = self.model.fixed_precision;
        mc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let c = RunConfig::from_str(
            "[model]\nfamily = burr\nsubmodel = M2_0\n\n[sampler]\nseed = 7\n",
        )
        .unwrap();
        assert_eq!(c.model.family, MarkFamily::Burr);
        assert_eq!(c.model.submodel, Submodel::M2Base);
        assert_eq!(c.sampler.n_iter, 100_000);
        assert_eq!(c.sampler.burn_in, 75_000);
        assert_eq!(c.sampler.seed, 7);
        assert!(c.model.standardize);
        assert_eq!(c.eval.k, 10);
    }

    #[test]
    fn simulation_preset_mirrors_simulation_run_lengths() {
        let c = RunConfig::from_str("[sampler]\npreset = simulation\n").unwrap();
        assert_eq!(c.sampler.n_iter, 250_000);
        assert_eq!(c.sampler.burn_in, 187_500);
        assert_eq!(c.sampler.thin, 100);
    }

    #[test]
    fn rejects_unknown_keys_and_sections() {
        assert!(RunConfig::from_str("[model]\nfamly = burr\n").is_err());
        assert!(RunConfig::from_str("[mdoel]\nfamily = burr\n").is_err());
        assert!(RunConfig::from_str("[sampler]\nn_iter = ten\n").is_err());
        assert!(RunConfig::from_str("[sampler]\nn_iter = 10\nburn_in = 20\n").is_err());
    }

    #[test]
    fn echo_round_trips_through_parser() {
        let c = RunConfig::from_str(
            "[model]\nfamily = gpd\ntheta_init = 0.25\n[sampler]\nn_iter = 2000\nburn_in = 1000\nthin = 10\nseed = 3\n",
        )
        .unwrap();
        let echo = c.echo(None);
        let c2 = RunConfig::from_str(&echo).unwrap();
        assert_eq!(c2.model.family, MarkFamily::Gpd);
        assert_eq!(c2.sampler.n_iter, 2000);
        assert_eq!(c2.echo(None), echo);
    }

    #[test]
    fn comma_lists_parse() {
        let c = RunConfig::from_str(
            "[model]\ncount_covariates = slope, twi\ntheta_init = 1.5, 2\n",
        )
        .unwrap();
        assert_eq!(c.model.count_covariates.as_deref(), Some(&["slope".to_string(), "twi".to_string()][..]));
        assert_eq!(c.model.theta_init.as_deref(), Some(&[1.5, 2.0][..]));
    }
}
