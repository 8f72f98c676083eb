//! Run configuration: a TOML file (or a shipped preset) describing the grid,
//! kernel, exponents, inputs, trial counts and seeds of an experiment.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{conjugate, Error, Result};
use crate::grid::{GridFunction, IBox};
use crate::inputs;
use crate::kernels::{dini_kernel, KernelFamily, SphericalFunction};
use crate::sparsifier::SparsifyOptions;

pub const PRESETS: [&str; 3] = ["dini-hilbert", "rough-l2", "br-critical"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelType {
    /// `1/x` in one dimension, `x₀/|x|³` in two.
    Dini,
    Rough,
    Br,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OmegaSpec {
    /// `sign` on `S⁰`.
    Hilbert,
    /// Seeded lacunary sample on the circle.
    Lacunary {
        samples: usize,
        levels: u32,
        a: f64,
    },
    /// Explicit samples.
    Samples {
        values: Vec<f64>,
    },
    File {
        path: PathBuf,
        auto_correct: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    #[serde(rename = "type")]
    pub kind: KernelType,
    #[serde(default)]
    pub omega: Option<OmegaSpec>,
    /// Integrability exponent of `Ω`; `inf` for bounded `Ω`.
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "one_i32")]
    pub s_lo: i32,
    /// Defaults to `m − 1`.
    #[serde(default)]
    pub s_hi: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Exponents {
    #[serde(default = "one")]
    pub p1: f64,
    #[serde(default = "two")]
    pub p2: f64,
    /// Weighted-norm exponent.
    #[serde(default = "two")]
    pub t: f64,
    /// Exponent of the uniform truncation bound.
    #[serde(default = "two")]
    pub r: f64,
    /// Exponent of the smoothness norm.
    #[serde(default = "two")]
    pub beta: f64,
}

impl Default for Exponents {
    fn default() -> Self {
        Exponents {
            p1: 1.0,
            p2: 2.0,
            t: 2.0,
            r: 2.0,
            beta: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InputSpec {
    Zero,
    Spike {
        at: [i64; 2],
        amp: f64,
    },
    /// Unit coordinates for the center and radius.
    Bump {
        center: [f64; 2],
        radius: f64,
    },
    Random {
        lo: [i64; 2],
        hi: [i64; 2],
        spike_rate: f64,
        spike_height: f64,
    },
    /// Seeded macroscopic profile, refinement-consistent.
    Profile {
        index: u64,
    },
    /// CSV or binary grid function.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub f1: InputSpec,
    pub f2: InputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trials {
    #[serde(default = "d_pairs")]
    pub domination_pairs: usize,
    #[serde(default = "d_lemmas")]
    pub lemmas: usize,
    #[serde(default = "d_adjoint")]
    pub adjoint: usize,
    #[serde(default = "d_spikes")]
    pub weak11_spikes: usize,
}

impl Default for Trials {
    fn default() -> Self {
        Trials {
            domination_pairs: d_pairs(),
            lemmas: d_lemmas(),
            adjoint: d_adjoint(),
            weak11_spikes: d_spikes(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    /// Exponents `a` of the power weights `(1 + |x − x₀|)^a`.
    #[serde(default = "d_weight_exponents")]
    pub exponents: Vec<f64>,
    /// Grid exponent of the one-dimensional sweep.
    #[serde(default = "d_weight_m")]
    pub m: u32,
}

impl Default for WeightSpec {
    fn default() -> Self {
        WeightSpec {
            exponents: d_weight_exponents(),
            m: d_weight_m(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub dim: usize,
    pub m: u32,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub exponents: Exponents,
    /// Sparsifier threshold; defaults to `2^{d+3}`.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "two_u32")]
    pub max_retries: u32,
    pub inputs: Inputs,
    #[serde(default)]
    pub trials: Trials,
    #[serde(default)]
    pub weights: WeightSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_out")]
    pub out: PathBuf,
}

fn default_q() -> f64 {
    f64::INFINITY
}
fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn one_i32() -> i32 {
    1
}
fn two_u32() -> u32 {
    2
}
fn d_pairs() -> usize {
    20
}
fn d_lemmas() -> usize {
    200
}
fn d_adjoint() -> usize {
    100
}
fn d_spikes() -> usize {
    8
}
fn d_weight_exponents() -> Vec<f64> {
    (-9..=9).map(|i| i as f64 / 10.0).collect()
}
fn d_weight_m() -> u32 {
    9
}
fn d_out() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    /// A shipped preset by name.
    pub fn preset(name: &str) -> Result<Self> {
        let c = match name {
            "dini-hilbert" => RunConfig {
                name: name.into(),
                dim: 1,
                m: 10,
                kernel: KernelSpec {
                    kind: KernelType::Dini,
                    omega: None,
                    q: f64::INFINITY,
                    s_lo: 1,
                    s_hi: None,
                },
                exponents: Exponents::default(),
                lambda: None,
                max_retries: 2,
                inputs: Inputs {
                    f1: InputSpec::Profile { index: 0 },
                    f2: InputSpec::Profile { index: 1 },
                },
                trials: Trials::default(),
                weights: WeightSpec::default(),
                seed: 1,
                out: d_out(),
            },
            "rough-l2" => RunConfig {
                name: name.into(),
                dim: 2,
                m: 6,
                kernel: KernelSpec {
                    kind: KernelType::Rough,
                    omega: Some(OmegaSpec::Lacunary {
                        samples: 256,
                        levels: 4,
                        a: 1.0,
                    }),
                    q: 2.0,
                    s_lo: 1,
                    s_hi: None,
                },
                exponents: Exponents::default(),
                lambda: None,
                max_retries: 2,
                inputs: Inputs {
                    f1: InputSpec::Profile { index: 0 },
                    f2: InputSpec::Profile { index: 1 },
                },
                trials: Trials {
                    lemmas: 100,
                    adjoint: 50,
                    ..Trials::default()
                },
                weights: WeightSpec::default(),
                seed: 2,
                out: d_out(),
            },
            "br-critical" => RunConfig {
                name: name.into(),
                dim: 2,
                m: 6,
                kernel: KernelSpec {
                    kind: KernelType::Br,
                    omega: None,
                    q: f64::INFINITY,
                    s_lo: 1,
                    s_hi: None,
                },
                exponents: Exponents::default(),
                lambda: None,
                max_retries: 2,
                inputs: Inputs {
                    f1: InputSpec::Profile { index: 0 },
                    f2: InputSpec::Profile { index: 1 },
                },
                trials: Trials {
                    lemmas: 100,
                    adjoint: 50,
                    ..Trials::default()
                },
                weights: WeightSpec::default(),
                seed: 3,
                out: d_out(),
            },
            other => {
                return Err(Error::Invalid(format!(
                    "unknown preset '{other}' (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is serializable")
    }

    /// The same experiment on a grid of side `2^m`.
    pub fn with_m(&self, m: u32) -> Result<Self> {
        let mut c = self.clone();
        c.m = m;
        c.kernel.s_hi = None;
        c.validate()?;
        Ok(c)
    }

    pub fn s_hi(&self) -> i32 {
        self.kernel.s_hi.unwrap_or(self.m as i32 - 1)
    }

    pub fn sparsify_options(&self) -> SparsifyOptions {
        SparsifyOptions {
            lambda: self.lambda,
            max_retries: self.max_retries,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if self.dim != 1 && self.dim != 2 {
            return Err(Error::Dimension(self.dim));
        }
        if !(3..=14).contains(&self.m) {
            return bad(format!("m = {} outside 3..=14", self.m));
        }
        let s_hi = self.s_hi();
        if self.kernel.s_lo < 1 || s_hi < self.kernel.s_lo || s_hi > self.m as i32 {
            return bad(format!(
                "kernel scales {}..={s_hi} must satisfy 1 <= s_lo <= s_hi <= m = {}",
                self.kernel.s_lo, self.m
            ));
        }
        let e = &self.exponents;
        for (name, p) in [("p1", e.p1), ("p2", e.p2)] {
            if !(p >= 1.0) || p.is_infinite() {
                return bad(format!("{name} = {p} must lie in [1, ∞)"));
            }
        }
        for (name, p) in [("t", e.t), ("r", e.r), ("beta", e.beta)] {
            if !(p > 1.0) {
                return bad(format!("{name} = {p} must exceed 1"));
            }
        }
        if !(self.kernel.q > 1.0) {
            return bad(format!("q = {} must exceed 1", self.kernel.q));
        }
        if self.kernel.kind == KernelType::Rough && self.kernel.q.is_finite() {
            let qp = conjugate(self.kernel.q);
            if e.p2 < qp {
                return bad(format!(
                    "rough kernels with q = {} need p₂ ≥ q′ = {qp}, got p₂ = {}",
                    self.kernel.q, e.p2
                ));
            }
        }
        if self.kernel.kind == KernelType::Rough && self.kernel.omega.is_none() {
            return bad("rough kernels need an omega specification".into());
        }
        if let Some(l) = self.lambda {
            if !(l > 1.0) {
                return bad(format!("lambda = {l} must exceed 1"));
            }
        }
        if self.weights.m < 3 || self.weights.m > 14 {
            return bad(format!("weights.m = {} outside 3..=14", self.weights.m));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config is serializable");
        v.as_object_mut().expect("struct").remove("out");
        let text = v.to_string();
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Deterministic generator for one named stream of the run.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }

    pub fn omega(&self) -> Result<Option<SphericalFunction>> {
        let Some(spec) = &self.kernel.omega else {
            return Ok(None);
        };
        let q = self.kernel.q;
        let om = match spec {
            OmegaSpec::Hilbert => {
                if self.dim != 1 {
                    return Err(Error::Invalid(
                        "the sign function lives on S⁰ (dim = 1)".into(),
                    ));
                }
                SphericalFunction::line(1.0, -1.0, q)?
            }
            OmegaSpec::Lacunary { samples, levels, a } => {
                if self.dim != 2 {
                    return Err(Error::Invalid(
                        "lacunary samples live on the circle (dim = 2)".into(),
                    ));
                }
                SphericalFunction::lacunary(*samples, *levels, *a, q, &mut self.rng(OMEGA_STREAM))?
            }
            OmegaSpec::Samples { values } => SphericalFunction::new(self.dim, values.clone(), q)?,
            OmegaSpec::File { path, auto_correct } => {
                let f = std::fs::File::open(path)
                    .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                SphericalFunction::read_csv(std::io::BufReader::new(f), self.dim, q, *auto_correct)?
            }
        };
        Ok(Some(om))
    }

    pub fn kernel(&self) -> Result<KernelFamily> {
        let (lo, hi) = (self.kernel.s_lo, self.s_hi());
        let k = match self.kernel.kind {
            KernelType::Dini => {
                if self.dim == 1 {
                    dini_kernel(1, lo, hi, |x| 1.0 / x[0] as f64)?
                } else {
                    dini_kernel(2, lo, hi, |x| {
                        let r = (x[0] as f64).hypot(x[1] as f64);
                        x[0] as f64 / (r * r * r)
                    })?
                }
            }
            KernelType::Rough => {
                let om = self.omega()?.expect("validated");
                KernelFamily::rough(&om, lo, hi)?
            }
            KernelType::Br => KernelFamily::bochner_riesz(self.dim, lo, hi)?,
        };
        Ok(k.with_id(&self.name))
    }

    /// One-dimensional counterpart used by the weighted sweep, on `2^{weights.m}`
    /// points: `1/x`, the rough kernel of `Ω = (1, −1)`, or Bochner–Riesz.
    pub fn weight_kernel(&self) -> Result<KernelFamily> {
        let hi = self.weights.m as i32 - 1;
        let lo = self.kernel.s_lo.min(hi);
        let k = match self.kernel.kind {
            KernelType::Dini => dini_kernel(1, lo, hi, |x| 1.0 / x[0] as f64)?,
            KernelType::Rough => {
                KernelFamily::rough(&SphericalFunction::line(1.0, -1.0, self.kernel.q)?, lo, hi)?
            }
            KernelType::Br => KernelFamily::bochner_riesz(1, lo, hi)?,
        };
        Ok(k.with_id(&format!("{}-1d", self.name)))
    }

    pub fn input(&self, spec: &InputSpec, stream: u64) -> Result<GridFunction> {
        let n = (1u64 << self.m) as f64;
        match spec {
            InputSpec::Zero => GridFunction::zeros(self.dim, self.m),
            InputSpec::Spike { at, amp } => inputs::spike(self.dim, self.m, *at, *amp),
            InputSpec::Bump { center, radius } => {
                inputs::bump(self.dim, self.m, [center[0] * n, center[1] * n], radius * n)
            }
            InputSpec::Random {
                lo,
                hi,
                spike_rate,
                spike_height,
            } => inputs::random(
                self.dim,
                self.m,
                IBox::new(*lo, *hi),
                *spike_rate,
                *spike_height,
                &mut self.rng(INPUT_STREAM + stream),
            ),
            InputSpec::Profile { index } => {
                profile(self.dim, self.seed, *index).sample(self.dim, self.m)
            }
            InputSpec::File { path } => read_grid(path, self.dim, self.m),
        }
    }

    pub fn inputs(&self) -> Result<(GridFunction, GridFunction)> {
        Ok((
            self.input(&self.inputs.f1, 1)?,
            self.input(&self.inputs.f2, 2)?,
        ))
    }
}

pub const OMEGA_STREAM: u64 = 1;
pub const INPUT_STREAM: u64 = 16;
pub const TRIAL_STREAM: u64 = 1 << 20;

/// The `index`-th seeded macroscopic profile.
pub fn profile(dim: usize, seed: u64, index: u64) -> inputs::Profile {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(1 << 32 | index);
    inputs::Profile::random(dim, &mut r)
}

fn read_grid(path: &Path, dim: usize, m: u32) -> Result<GridFunction> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let r = std::io::BufReader::new(file);
    let f = if path.extension().is_some_and(|e| e == "csv") {
        GridFunction::read_csv(r)?
    } else {
        GridFunction::read_binary(r)?
    };
    if f.dim() != dim {
        return Err(Error::DimensionMismatch(dim, f.dim()));
    }
    if f.m() != m {
        return Err(Error::ExtentMismatch(m, f.m()));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let c = RunConfig::preset(name).unwrap();
            let back = RunConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
            let k = c.kernel().unwrap();
            assert_eq!(k.dim(), c.dim);
            assert_eq!(k.scales(), (1, c.m as i32 - 1));
            let (f1, f2) = c.inputs().unwrap();
            assert!(!f1.is_zero() && !f2.is_zero());
        }
        assert!(RunConfig::preset("nope").is_err());
    }

    #[test]
    fn rough_exponent_constraint_is_enforced() {
        let mut c = RunConfig::preset("rough-l2").unwrap();
        c.exponents.p2 = 1.5;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("q′"), "{err}");
        c.kernel.q = 4.0;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn minimal_toml() {
        let text = r#"
            name = "tiny"
            dim = 1
            m = 6
            seed = 4
            [kernel]
            type = "rough"
            omega = { type = "hilbert" }
            q = 2.0
            [inputs]
            f1 = { kind = "spike", at = [10, 0], amp = 1.0 }
            f2 = { kind = "random", lo = [0, 0], hi = [40, 1], spike_rate = 0.0, spike_height = 1.0 }
        "#;
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.exponents, Exponents::default());
        assert_eq!(c.inputs().unwrap(), c.inputs().unwrap());
        assert!(RunConfig::from_toml("name = 1").is_err());
        assert!(RunConfig::from_toml(&text.replace("m = 6", "m = 6\nbogus = 1")).is_err());
    }

    #[test]
    fn streams_differ_and_repeat() {
        use rand::Rng;
        let c = RunConfig::preset("dini-hilbert").unwrap();
        let a: u64 = c.rng(5).gen();
        let b: u64 = c.rng(6).gen();
        assert_ne!(a, b);
        assert_eq!(a, c.rng(5).gen::<u64>());
    }
}
