//! Run configuration: flat INI sections with `key = value` pairs.
//!
//! Every key has a default, so an empty file (or no file) describes the
//! flagship run on the unit torus. Unknown sections or keys are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;
use serde::Serialize;
use sha2::{Digest, Sha256};

use torusflow::flow::{FlowConfig, Scheme};
use torusflow::initial::{InitialData, Noise};
use torusflow::linops::{OperatorKind, SpectrumOptions};
use torusflow::manifold::ChartOptions;
use torusflow::stationary::NewtonOptions;
use torusflow::{Dealias, TorusGrid};

use crate::error::CliError;

/// `(section, key) → value` before typing.
#[derive(Clone, Debug, Default)]
pub struct RawConfig {
    entries: BTreeMap<(String, String), String>,
}

impl RawConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let ini = Ini::load_from_file(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Ok(Self::from_ini(&ini))
    }

    #[cfg(test)]
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))?;
        Ok(Self::from_ini(&ini))
    }

    fn from_ini(ini: &Ini) -> Self {
        let mut entries = BTreeMap::new();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("").to_owned();
            for (k, v) in props.iter() {
                entries.insert((section.clone(), k.to_owned()), v.trim().to_owned());
            }
        }
        Self { entries }
    }

    /// Sets `section.key`; `lambda` and `seed` are accepted as shorthands.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let (section, key) = match key {
            "lambda" => ("model", "lambda"),
            "seed" => ("run", "seed"),
            other => other.split_once('.').ok_or_else(|| {
                CliError::Config(format!(
                    "override key '{other}' must be 'lambda', 'seed' or 'section.key'"
                ))
            })?,
        };
        self.entries
            .insert((section.to_owned(), key.to_owned()), value.trim().to_owned());
        Ok(())
    }
}

/// Typed reader that remembers which entries were consumed.
struct Reader<'a> {
    raw: &'a RawConfig,
    used: BTreeSet<(String, String)>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, section: &str, key: &str) -> Option<&'a str> {
        let id = (section.to_owned(), key.to_owned());
        let v = self.raw.entries.get(&id).map(String::as_str);
        self.used.insert(id);
        v
    }

    fn get<V: FromStr>(&mut self, section: &str, key: &str, default: V) -> Result<V, CliError>
    where
        V::Err: std::fmt::Display,
    {
        match self.raw(section, key) {
            None => Ok(default),
            Some(text) => text
                .parse()
                .map_err(|e| CliError::Config(format!("[{section}] {key} = '{text}': {e}"))),
        }
    }

    fn string(&mut self, section: &str, key: &str, default: &str) -> String {
        self.raw(section, key).unwrap_or(default).to_owned()
    }

    fn optional(&mut self, section: &str, key: &str) -> Option<String> {
        self.raw(section, key).filter(|s| !s.is_empty()).map(str::to_owned)
    }

    fn finish(self) -> Result<(), CliError> {
        let unknown: Vec<String> = self
            .raw
            .entries
            .keys()
            .filter(|id| !self.used.contains(*id))
            .map(|(s, k)| if s.is_empty() { k.clone() } else { format!("[{s}] {k}") })
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StateSource {
    /// Newton solve from the initial data.
    Stationary,
    /// The constant state `log(λ/|Ω|)`.
    Trivial,
    /// A checkpoint written by an earlier command.
    Checkpoint,
    None,
}

impl FromStr for StateSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "stationary" => Ok(Self::Stationary),
            "trivial" => Ok(Self::Trivial),
            "checkpoint" => Ok(Self::Checkpoint),
            "none" => Ok(Self::None),
            _ => Err("expected stationary, trivial, checkpoint or none".into()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Geometry {
    pub a: f64,
    pub b: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct InitialSpec {
    pub preset: String,
    pub modes: String,
    pub noise_amplitude: f64,
    pub noise_cutoff: i64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowSection {
    pub scheme: String,
    pub dt_initial: f64,
    pub t_end: f64,
    pub dt_safety: f64,
    pub renormalize_mass: bool,
    pub record_every: usize,
    pub stop_tol: f64,
    pub energy_slack: f64,
    pub max_retries: usize,
    pub implicit_tol: f64,
    pub dealias: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct StateSection {
    pub source: StateSource,
    pub checkpoint: Option<String>,
    /// Exponent used for the `H(t)` diagnostic.
    pub theta: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarySection {
    pub tol: f64,
    pub max_iters: usize,
    pub max_halvings: usize,
    pub max_linear_iters: usize,
    pub continuation_to: Option<f64>,
    pub continuation_steps: usize,
    pub uniqueness_starts: usize,
    pub uniqueness_amplitude: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSection {
    pub operator: String,
    pub k: usize,
    pub dense_max_nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub coercivity_samples: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ManifoldSection {
    pub residual_tol: f64,
    pub max_newton: usize,
    pub spectrum_k: usize,
    pub initial_radius: f64,
    pub min_radius: f64,
    pub lemma_radius: f64,
    pub lemma_samples: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RatesSection {
    /// Directory holding `trajectory.csv` and `diagnostics.csv` from `simulate`.
    pub trajectory: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub geometry: Geometry,
    pub lambda: f64,
    pub seed: u64,
    pub initial: InitialSpec,
    pub flow: FlowSection,
    pub state: StateSection,
    pub stationary: StationarySection,
    pub spectrum: SpectrumSection,
    pub manifold: ManifoldSection,
    pub rates: RatesSection,
}

fn field_error(section: &str, key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("[{section}] {key}: {msg}"))
}

fn positive(section: &str, key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field_error(
            section,
            key,
            format!("must be finite and positive, got {v}"),
        ))
    }
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        let mut r = Reader {
            raw,
            used: BTreeSet::new(),
        };
        let cfg = Self {
            geometry: Geometry {
                a: r.get("geometry", "a", 1.0)?,
                b: r.get("geometry", "b", 1.0)?,
                nx: r.get("geometry", "nx", 64)?,
                ny: r.get("geometry", "ny", 64)?,
            },
            lambda: r.get("model", "lambda", 8.0 * PI)?,
            seed: r.get("run", "seed", 0)?,
            initial: InitialSpec {
                preset: r.string("initial", "preset", "flagship"),
                modes: r.string("initial", "modes", ""),
                noise_amplitude: r.get("initial", "noise_amplitude", 0.0)?,
                noise_cutoff: r.get("initial", "noise_cutoff", 3)?,
            },
            flow: FlowSection {
                scheme: r.string("flow", "scheme", "explicit_rk4"),
                dt_initial: r.get("flow", "dt_initial", 1e-3)?,
                t_end: r.get("flow", "t_end", 50.0)?,
                dt_safety: r.get("flow", "dt_safety", 0.5)?,
                renormalize_mass: r.get("flow", "renormalize_mass", true)?,
                record_every: r.get("flow", "record_every", 100)?,
                stop_tol: r.get("flow", "stop_tol", 1e-11)?,
                energy_slack: r.get("flow", "energy_slack", 1e-12)?,
                max_retries: r.get("flow", "max_retries", 30)?,
                implicit_tol: r.get("flow", "implicit_tol", 1e-13)?,
                dealias: r.string("flow", "dealias", "off"),
            },
            state: StateSection {
                source: r.get("state", "source", StateSource::Stationary)?,
                checkpoint: r.optional("state", "checkpoint"),
                theta: r.get("state", "theta", 0.5)?,
            },
            stationary: StationarySection {
                tol: r.get("stationary", "tol", 1e-11)?,
                max_iters: r.get("stationary", "max_iters", 60)?,
                max_halvings: r.get("stationary", "max_halvings", 20)?,
                max_linear_iters: r.get("stationary", "max_linear_iters", 500)?,
                continuation_to: match r.optional("stationary", "continuation_to") {
                    None => None,
                    Some(s) => Some(
                        s.parse()
                            .map_err(|e| field_error("stationary", "continuation_to", format!("'{s}': {e}")))?,
                    ),
                },
                continuation_steps: r.get("stationary", "continuation_steps", 20)?,
                uniqueness_starts: r.get("stationary", "uniqueness_starts", 0)?,
                uniqueness_amplitude: r.get("stationary", "uniqueness_amplitude", 0.5)?,
            },
            spectrum: SpectrumSection {
                operator: r.string("spectrum", "operator", "B"),
                k: r.get("spectrum", "k", 8)?,
                dense_max_nodes: r.get("spectrum", "dense_max_nodes", 1024)?,
                tol: r.get("spectrum", "tol", 1e-10)?,
                max_iter: r.get("spectrum", "max_iter", 400)?,
                coercivity_samples: r.get("spectrum", "coercivity_samples", 20)?,
            },
            manifold: ManifoldSection {
                residual_tol: r.get("manifold", "residual_tol", 1e-11)?,
                max_newton: r.get("manifold", "max_newton", 30)?,
                spectrum_k: r.get("manifold", "spectrum_k", 8)?,
                initial_radius: r.get("manifold", "initial_radius", 0.1)?,
                min_radius: r.get("manifold", "min_radius", 1e-6)?,
                lemma_radius: r.get("manifold", "lemma_radius", 1e-2)?,
                lemma_samples: r.get("manifold", "lemma_samples", 100)?,
            },
            rates: RatesSection {
                trajectory: r.optional("rates", "trajectory"),
            },
        };
        r.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every numeric range; nothing is computed before this passes.
    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.geometry;
        TorusGrid::<f64>::new(g.a, g.b, g.nx, g.ny).map_err(|e| {
            CliError::Config(format!(
                "[geometry] {e} (the spectral grid needs an even number of nodes per axis)"
            ))
        })?;
        positive("model", "lambda", self.lambda)?;
        self.initial_data()?;
        if !(self.initial.noise_amplitude >= 0.0 && self.initial.noise_amplitude.is_finite()) {
            return Err(field_error(
                "initial",
                "noise_amplitude",
                "must be finite and non-negative",
            ));
        }
        if self.initial.noise_cutoff < 1 {
            return Err(field_error("initial", "noise_cutoff", "must be at least 1"));
        }
        self.flow_config()?
            .validate()
            .map_err(|e| CliError::Config(format!("[flow] {e}")))?;
        positive("flow", "stop_tol", self.flow.stop_tol)?;
        positive("flow", "implicit_tol", self.flow.implicit_tol)?;
        if !(self.flow.energy_slack >= 0.0) {
            return Err(field_error("flow", "energy_slack", "must be non-negative"));
        }
        if self.state.source == StateSource::Checkpoint && self.state.checkpoint.is_none() {
            return Err(field_error(
                "state",
                "checkpoint",
                "source = checkpoint needs a checkpoint path",
            ));
        }
        if !(self.state.theta > 0.0 && self.state.theta <= 0.5) {
            return Err(field_error(
                "state",
                "theta",
                format!("must lie in (0, 1/2], got {}", self.state.theta),
            ));
        }
        let st = &self.stationary;
        positive("stationary", "tol", st.tol)?;
        if st.max_iters == 0 || st.max_linear_iters == 0 {
            return Err(field_error(
                "stationary",
                "max_iters",
                "iteration limits must be at least 1",
            ));
        }
        if let Some(end) = st.continuation_to {
            positive("stationary", "continuation_to", end)?;
            if st.continuation_steps == 0 {
                return Err(field_error("stationary", "continuation_steps", "must be at least 1"));
            }
        }
        positive("stationary", "uniqueness_amplitude", st.uniqueness_amplitude)?;
        self.operator()?;
        let sp = &self.spectrum;
        if sp.k == 0 {
            return Err(field_error("spectrum", "k", "must be at least 1"));
        }
        positive("spectrum", "tol", sp.tol)?;
        let m = &self.manifold;
        positive("manifold", "residual_tol", m.residual_tol)?;
        positive("manifold", "initial_radius", m.initial_radius)?;
        positive("manifold", "min_radius", m.min_radius)?;
        positive("manifold", "lemma_radius", m.lemma_radius)?;
        if m.min_radius > m.initial_radius {
            return Err(field_error("manifold", "min_radius", "exceeds initial_radius"));
        }
        if m.lemma_samples == 0 || m.spectrum_k == 0 {
            return Err(field_error(
                "manifold",
                "lemma_samples",
                "sample and eigenpair counts must be at least 1",
            ));
        }
        Ok(())
    }

    /// Printed before any run with λ above the critical mass.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.lambda > 8.0 * PI {
            out.push(format!(
                "lambda = {} exceeds 8π; global existence of the flow is only guaranteed for 0 < λ ≤ 8π",
                self.lambda
            ));
        }
        out
    }

    pub fn grid(&self) -> std::sync::Arc<TorusGrid<f64>> {
        let g = &self.geometry;
        TorusGrid::new(g.a, g.b, g.nx, g.ny).expect("validated geometry")
    }

    pub fn initial_data(&self) -> Result<InitialData, CliError> {
        let bad = |e: torusflow::Error| CliError::Config(format!("[initial] {e}"));
        let mut data = InitialData::parse_preset(&self.initial.preset).map_err(bad)?;
        data.modes
            .extend(InitialData::parse_modes(&self.initial.modes).map_err(bad)?);
        if self.initial.noise_amplitude > 0.0 {
            if data.noise.is_some() {
                return Err(CliError::Config(
                    "[initial] noise_amplitude conflicts with a 'noise' preset term".into(),
                ));
            }
            data.noise = Some(Noise {
                seed: 0,
                amplitude: self.initial.noise_amplitude,
                cutoff: self.initial.noise_cutoff,
            });
        }
        Ok(data.with_seed(self.seed))
    }

    pub fn flow_config(&self) -> Result<FlowConfig<f64>, CliError> {
        let f = &self.flow;
        let scheme: Scheme = f
            .scheme
            .parse()
            .map_err(|e| CliError::Config(format!("[flow] scheme: {e}")))?;
        let dealias = match f.dealias.as_str() {
            "off" => Dealias::Off,
            "three_halves" | "3/2" => Dealias::ThreeHalves,
            other => {
                return Err(field_error(
                    "flow",
                    "dealias",
                    format!("'{other}', expected off or three_halves"),
                ))
            }
        };
        Ok(FlowConfig {
            dt_initial: f.dt_initial,
            t_end: f.t_end,
            scheme,
            dt_safety: f.dt_safety,
            renormalize_mass: f.renormalize_mass,
            record_every: f.record_every,
            stop_tol: f.stop_tol,
            energy_slack: f.energy_slack,
            max_retries: f.max_retries,
            implicit_tol: f.implicit_tol,
            dealias,
        })
    }

    pub fn newton_options(&self) -> NewtonOptions<f64> {
        let s = &self.stationary;
        NewtonOptions {
            tol: s.tol,
            max_iters: s.max_iters,
            max_halvings: s.max_halvings,
            max_linear_iters: s.max_linear_iters,
        }
    }

    pub fn operator(&self) -> Result<OperatorKind, CliError> {
        self.spectrum
            .operator
            .parse()
            .map_err(|e| CliError::Config(format!("[spectrum] operator: {e}")))
    }

    pub fn spectrum_options(&self) -> SpectrumOptions<f64> {
        let s = &self.spectrum;
        SpectrumOptions {
            dense_max_nodes: s.dense_max_nodes,
            tol: s.tol,
            max_iter: s.max_iter,
            seed: self.seed ^ 0x5eed,
        }
    }

    pub fn chart_options(&self) -> ChartOptions<f64> {
        let m = &self.manifold;
        ChartOptions {
            residual_tol: m.residual_tol,
            max_newton: m.max_newton,
            spectrum_k: m.spectrum_k,
            initial_radius: m.initial_radius,
            min_radius: m.min_radius,
        }
    }

    /// SHA-256 of the canonical JSON rendering of the typed config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
