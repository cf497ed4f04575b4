//! Initial data without an expression language: a constant level, a list of
//! Fourier modes, and optional seeded low-pass noise.
//!
//! Preset strings read `term+term+... amp amp ...`, e.g. `constant+cos_x 0.1`.
//! `constant` fixes the level at `log(λ/|Ω|)`; every other term takes the
//! next amplitude in order (default 0.1).

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::torus::{Field, TorusGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    Cos,
    Sin,
}

/// `amplitude · cos|sin(2π(m x/a + n y/b))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub kind: ModeKind,
    pub m: i64,
    pub n: i64,
    pub amplitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    pub seed: u64,
    /// Sup norm of the generated perturbation.
    pub amplitude: f64,
    /// Largest `|m|`, `|n|` carried by the noise.
    pub cutoff: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Level {
    /// `log(λ/|Ω|)`, the trivial stationary value.
    Equilibrium,
    Value(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub level: Level,
    pub modes: Vec<Mode>,
    pub noise: Option<Noise>,
}

impl Default for InitialData {
    fn default() -> Self {
        Self {
            level: Level::Equilibrium,
            modes: Vec::new(),
            noise: None,
        }
    }
}

fn named_mode(name: &str) -> Option<(ModeKind, i64, i64)> {
    let (kind, dir) = name.split_once('_')?;
    let kind = match kind {
        "cos" => ModeKind::Cos,
        "sin" => ModeKind::Sin,
        _ => return None,
    };
    let (m, n) = match dir {
        "x" => (1, 0),
        "y" => (0, 1),
        "xy" => (1, 1),
        _ => return None,
    };
    Some((kind, m, n))
}

impl InitialData {
    /// Parses a preset string. `flagship` expands to
    /// `constant+cos_x+sin_y 0.1 0.05`.
    pub fn parse_preset(text: &str) -> Result<Self> {
        let text = text.trim();
        let text = if text == "flagship" {
            "constant+cos_x+sin_y 0.1 0.05"
        } else {
            text
        };
        let mut parts = text.split_whitespace();
        let terms = parts
            .next()
            .ok_or_else(|| Error::InvalidArgument("empty initial-data preset".into()))?;
        let mut amps = Vec::new();
        for p in parts {
            let v: f64 = p
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("preset amplitude '{p}' is not a number")))?;
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("preset amplitude '{p}' is not finite")));
            }
            amps.push(v);
        }
        let mut amps = amps.into_iter();
        let mut data = Self {
            level: Level::Value(0.0),
            ..Self::default()
        };
        for term in terms.split('+') {
            match term {
                "constant" => data.level = Level::Equilibrium,
                "noise" => {
                    data.noise = Some(Noise {
                        seed: 0,
                        amplitude: amps.next().unwrap_or(0.1),
                        cutoff: 3,
                    })
                }
                other => {
                    let (kind, m, n) = named_mode(other).ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "unknown preset term '{other}' (expected constant, noise, cos_x, sin_x, cos_y, sin_y, cos_xy, sin_xy)"
                        ))
                    })?;
                    data.modes.push(Mode {
                        kind,
                        m,
                        n,
                        amplitude: amps.next().unwrap_or(0.1),
                    });
                }
            }
        }
        if amps.next().is_some() {
            return Err(Error::InvalidArgument("more amplitudes than preset terms".into()));
        }
        Ok(data)
    }

    /// Parses a mode list `cos 1 0 0.1; sin 0 1 0.05`.
    pub fn parse_modes(text: &str) -> Result<Vec<Mode>> {
        let mut out = Vec::new();
        for entry in text.split(';').map(str::trim).filter(|e| !e.is_empty()) {
            let f: Vec<&str> = entry.split_whitespace().collect();
            let bad = || Error::InvalidArgument(format!("malformed mode '{entry}' (expected 'cos|sin m n amplitude')"));
            if f.len() != 4 {
                return Err(bad());
            }
            let kind = match f[0] {
                "cos" => ModeKind::Cos,
                "sin" => ModeKind::Sin,
                _ => return Err(bad()),
            };
            out.push(Mode {
                kind,
                m: f[1].parse().map_err(|_| bad())?,
                n: f[2].parse().map_err(|_| bad())?,
                amplitude: f[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(out)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        if let Some(noise) = &mut self.noise {
            noise.seed = seed;
        }
        self
    }

    pub fn build<T: Real>(&self, grid: &Arc<TorusGrid<T>>, lambda: T) -> Field<T> {
        let level = match self.level {
            Level::Equilibrium => (lambda / grid.area()).ln(),
            Level::Value(c) => T::lit(c),
        };
        let mut w = Field::constant(grid, level);
        for mode in &self.modes {
            let f = match mode.kind {
                ModeKind::Cos => Field::cos_mode(grid, mode.m, mode.n),
                ModeKind::Sin => Field::sin_mode(grid, mode.m, mode.n),
            };
            w.axpy(T::lit(mode.amplitude), &f);
        }
        if let Some(noise) = &self.noise {
            w += &low_pass_noise(grid, noise.seed, noise.cutoff, T::lit(noise.amplitude));
        }
        w
    }
}

/// Zero-mean random trigonometric polynomial with `|m|, |n| ≤ cutoff`,
/// scaled to sup norm `amplitude`. Deterministic in `seed`.
pub fn low_pass_noise<T: Real>(grid: &Arc<TorusGrid<T>>, seed: u64, cutoff: i64, amplitude: T) -> Field<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cutoff = cutoff.max(1).min((grid.nx().min(grid.ny()) / 2 - 1) as i64);
    let mut f = Field::zeros(grid);
    for m in 0..=cutoff {
        for n in -cutoff..=cutoff {
            if m == 0 && n <= 0 {
                continue;
            }
            let c: f64 = rng.random_range(-1.0..1.0);
            let s: f64 = rng.random_range(-1.0..1.0);
            f.axpy(T::lit(c), &Field::cos_mode(grid, m, n));
            f.axpy(T::lit(s), &Field::sin_mode(grid, m, n));
        }
    }
    let top = f.max_abs();
    if top > T::zero() {
        f = f.scaled(amplitude / top);
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn preset_constant_plus_cosine() {
        let g = TorusGrid::<f64>::new(1.0, 1.0, 16, 16).unwrap();
        let lam = 8.0 * PI;
        let d = InitialData::parse_preset("constant+cos_x 0.1").unwrap();
        let w = d.build(&g, lam);
        let expect = Field::cos_mode(&g, 1, 0).scaled(0.1).shifted(lam.ln());
        assert!((&w - &expect).max_abs() < 1e-15);
    }

    #[test]
    fn flagship_alias() {
        let a = InitialData::parse_preset("flagship").unwrap();
        let b = InitialData::parse_preset("constant+cos_x+sin_y 0.1 0.05").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.modes[1].amplitude, 0.05);
    }

    #[test]
    fn preset_errors() {
        assert!(InitialData::parse_preset("").is_err());
        assert!(InitialData::parse_preset("constant+tan_x 0.1").is_err());
        assert!(InitialData::parse_preset("cos_x 0.1 0.2").is_err());
        assert!(InitialData::parse_preset("cos_x abc").is_err());
    }

    #[test]
    fn mode_list() {
        let m = InitialData::parse_modes("cos 1 0 0.1; sin 0 2 -0.05;").unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!((m[1].kind, m[1].n, m[1].amplitude), (ModeKind::Sin, 2, -0.05));
        assert!(InitialData::parse_modes("cos 1 0").is_err());
    }

    #[test]
    fn noise_is_deterministic_zero_mean_and_scaled() {
        let g = TorusGrid::<f64>::new(1.0, 2.0, 16, 32).unwrap();
        let a = low_pass_noise(&g, 7, 3, 0.2);
        let b = low_pass_noise(&g, 7, 3, 0.2);
        let c = low_pass_noise(&g, 8, 3, 0.2);
        assert_eq!(a.values(), b.values());
        assert!((&a - &c).max_abs() > 1e-3);
        assert!(a.mean().abs() < 1e-14);
        assert!((a.max_abs() - 0.2).abs() < 1e-14);
    }
}
