//! Single-scale kernel families: smooth truncations of a given kernel,
//! rough homogeneous kernels `Ω(x')/|x|^d`, and the critical Bochner–Riesz
//! model, with their size and smoothness norms.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_exponent, conjugate, Error, Result};
use crate::grid::{check_dim, lp_of, IBox, Patch, Point};

// ---------------------------------------------------------------------------
// radial partition of unity

fn bump(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth cutoff: 1 on `[0, 1/2]`, 0 on `[1, ∞)`.
pub fn cutoff(t: f64) -> f64 {
    let a = bump(1.0 - t);
    let b = bump(t - 0.5);
    if a + b == 0.0 {
        // unreachable for finite t, kept for NaN safety
        return 0.0;
    }
    a / (a + b)
}

/// `ψ(r) = χ(r) − χ(2r)`, supported in `[1/4, 1]`.
pub fn annular_profile(r: f64) -> f64 {
    cutoff(r) - cutoff(2.0 * r)
}

/// Dyadic partition `Σ_s ψ(2^{−s} r)` over a finite range of scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionOfUnity {
    pub s_min: i32,
    pub s_max: i32,
}

/// Builds the partition over `s_min..=s_max`.
pub fn partition_of_unity(s_min: i32, s_max: i32) -> Result<PartitionOfUnity> {
    if s_min < 1 {
        return Err(Error::Invalid(format!(
            "partition needs s_min >= 1, got {s_min}"
        )));
    }
    if s_max < s_min {
        return Err(Error::Invalid(format!(
            "empty scale range {s_min}..={s_max}"
        )));
    }
    Ok(PartitionOfUnity { s_min, s_max })
}

impl PartitionOfUnity {
    /// The profile `ψ` itself.
    pub fn profile(&self, r: f64) -> f64 {
        annular_profile(r)
    }

    pub fn sum(&self, r: f64) -> f64 {
        (self.s_min..=self.s_max)
            .map(|s| annular_profile(r * 2f64.powi(-s)))
            .sum()
    }

    /// Radii on which the sum is identically 1.
    pub fn guaranteed_range(&self) -> (f64, f64) {
        (2f64.powi(self.s_min - 1), 2f64.powi(self.s_max - 1))
    }
}

fn norm2(x: Point) -> f64 {
    ((x[0] * x[0] + x[1] * x[1]) as f64).sqrt()
}

// ---------------------------------------------------------------------------
// functions on the sphere

/// Samples of `Ω` on `S^{d−1}`: the two values `[Ω(+1), Ω(−1)]` when
/// `d = 1`, or `M` values at angles `2πk/M` when `d = 2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalFunction {
    dim: usize,
    samples: Vec<f64>,
    q: f64,
    mean_zero: bool,
    /// Set when a nonzero sample mean was subtracted at load.
    pub corrected: bool,
}

impl SphericalFunction {
    pub fn new(dim: usize, samples: Vec<f64>, q: f64) -> Result<Self> {
        check_dim(dim)?;
        check_exponent(q)?;
        if dim == 1 && samples.len() != 2 {
            return Err(Error::Length {
                expected: 2,
                got: samples.len(),
            });
        }
        if dim == 2 && samples.len() < 4 {
            return Err(Error::Invalid("need at least 4 angular samples".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let s: f64 = samples.iter().sum();
        let l1: f64 = samples.iter().map(|v| v.abs()).sum();
        let mean_zero = s.abs() <= 1e-12 * l1;
        Ok(SphericalFunction {
            dim,
            samples,
            q,
            mean_zero,
            corrected: false,
        })
    }

    /// `d = 2` samples; with `require_mean_zero` a nonzero mean is an error.
    pub fn circle(samples: Vec<f64>, q: f64, require_mean_zero: bool) -> Result<Self> {
        let om = SphericalFunction::new(2, samples, q)?;
        om.check_mean(require_mean_zero)
    }

    /// `d = 1`: values at `+1` and `−1`.
    pub fn line(plus: f64, minus: f64, q: f64) -> Result<Self> {
        SphericalFunction::new(1, vec![plus, minus], q)
    }

    /// The Hilbert symbol `Ω(±1) = ±1`.
    pub fn hilbert() -> Self {
        SphericalFunction::line(1.0, -1.0, f64::INFINITY).expect("valid samples")
    }

    fn check_mean(self, require: bool) -> Result<Self> {
        if require && !self.mean_zero {
            return Err(Error::NotMeanZero(self.mean()));
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn is_mean_zero(&self) -> bool {
        self.mean_zero
    }

    /// Surface measure carried by one sample.
    pub fn sample_measure(&self) -> f64 {
        if self.dim == 1 {
            1.0
        } else {
            2.0 * PI / self.samples.len() as f64
        }
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Subtracts the sample mean, flagging the correction.
    pub fn centered(&self) -> SphericalFunction {
        let mu = self.mean();
        let samples: Vec<f64> = self.samples.iter().map(|v| v - mu).collect();
        let mut out = SphericalFunction::new(self.dim, samples, self.q).expect("finite samples");
        out.corrected = self.corrected || mu != 0.0;
        out.mean_zero = true;
        out
    }

    /// `‖Ω‖_{L^q(S^{d−1})}`.
    pub fn lq_norm(&self, q: f64) -> f64 {
        let w = self.sample_measure();
        if q.is_infinite() {
            lp_of(self.samples.iter().copied(), q)
        } else {
            (self.samples.iter().map(|v| v.abs().powf(q)).sum::<f64>() * w).powf(1.0 / q)
        }
    }

    /// Nearest-sample value at direction `x/|x|`; 0 at the origin.
    pub fn eval(&self, x: Point) -> f64 {
        if x == [0, 0] {
            return 0.0;
        }
        if self.dim == 1 {
            return if x[0] > 0 {
                self.samples[0]
            } else {
                self.samples[1]
            };
        }
        let m = self.samples.len();
        let theta = (x[1] as f64).atan2(x[0] as f64).rem_euclid(2.0 * PI);
        let k = (theta / (2.0 * PI / m as f64)).round() as usize % m;
        self.samples[k]
    }

    /// Zero-mean lacunary profile: arcs of relative size `2^{−a k}` carrying
    /// values `±2^k`, `k = 1..=levels`, on a background compensating the mean.
    pub fn lacunary<R: Rng>(m: usize, levels: u32, a: f64, q: f64, rng: &mut R) -> Result<Self> {
        let mut samples = vec![0.0; m];
        let mut start = 0usize;
        for k in 1..=levels {
            let len = ((m as f64) * 2f64.powf(-a * k as f64)).floor().max(1.0) as usize;
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let offset = rng.gen_range(0..m);
            for i in 0..len {
                let idx = (offset + start + i) % m;
                samples[idx] += sign * 2f64.powi(k as i32);
            }
            start += len;
        }
        for v in &mut samples {
            *v += rng.gen_range(-0.5..0.5);
        }
        Ok(SphericalFunction::new(2, samples, q)?.centered_silent())
    }

    fn centered_silent(self) -> Self {
        let mut out = self.centered();
        out.corrected = false;
        out
    }

    /// Rows of `angle,value` (`d = 2`, uniform angles) or `direction,value`
    /// with direction `±1` (`d = 1`).
    pub fn read_csv<R: BufRead>(r: R, dim: usize, q: f64, auto_correct: bool) -> Result<Self> {
        check_dim(dim)?;
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut rows: Vec<(f64, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.len() < 2 {
                return Err(Error::Parse("expected two columns".into()));
            }
            let a: f64 = rec[0].parse().map_err(|e| Error::Parse(format!("{e}")))?;
            let v: f64 = rec[1].parse().map_err(|e| Error::Parse(format!("{e}")))?;
            rows.push((a, v));
        }
        let om = if dim == 1 {
            let plus = rows
                .iter()
                .find(|r| r.0 > 0.0)
                .ok_or_else(|| Error::Parse("missing +1 row".into()))?
                .1;
            let minus = rows
                .iter()
                .find(|r| r.0 < 0.0)
                .ok_or_else(|| Error::Parse("missing -1 row".into()))?
                .1;
            SphericalFunction::line(plus, minus, q)?
        } else {
            rows.sort_by(|a, b| {
                a.0.rem_euclid(2.0 * PI)
                    .total_cmp(&b.0.rem_euclid(2.0 * PI))
            });
            let m = rows.len();
            for (k, (a, _)) in rows.iter().enumerate() {
                let expect = 2.0 * PI * k as f64 / m as f64;
                if (a.rem_euclid(2.0 * PI) - expect).abs() > 1e-6 {
                    return Err(Error::Parse(format!(
                        "angles must be 2πk/M; row {k} has {a}"
                    )));
                }
            }
            SphericalFunction::new(2, rows.into_iter().map(|r| r.1).collect(), q)?
        };
        if om.mean_zero {
            Ok(om)
        } else if auto_correct {
            Ok(om.centered())
        } else {
            Err(Error::NotMeanZero(om.mean()))
        }
    }
}

/// `(Ω_j, Δ_j)`: the samples at most / above the threshold `2^{δ j}`.
pub fn omega_split(
    omega: &SphericalFunction,
    delta: f64,
    j: i32,
) -> Result<(SphericalFunction, SphericalFunction)> {
    if !(delta > 0.0) || j < 1 {
        return Err(Error::Invalid(format!(
            "omega_split needs delta > 0 and j >= 1 (got {delta}, {j})"
        )));
    }
    let thr = 2f64.powf(delta * j as f64);
    let (mut lo, mut hi) = (omega.samples.clone(), omega.samples.clone());
    for (l, h) in lo.iter_mut().zip(hi.iter_mut()) {
        if l.abs() > thr {
            *l = 0.0;
        } else {
            *h = 0.0;
        }
    }
    let mk = |s| SphericalFunction {
        dim: omega.dim,
        samples: s,
        q: omega.q,
        mean_zero: false,
        corrected: false,
    };
    let (mut a, mut b) = (mk(lo), mk(hi));
    a.mean_zero = SphericalFunction::new(omega.dim, a.samples.clone(), omega.q)?.mean_zero;
    b.mean_zero = SphericalFunction::new(omega.dim, b.samples.clone(), omega.q)?.mean_zero;
    Ok((a, b))
}

// ---------------------------------------------------------------------------
// stencils

/// Offsets `[−r, r]^d` of a scale-`s` stencil, `r = 2^s − 1`.
pub fn stencil_region(dim: usize, s: i32) -> IBox {
    let r = (1i64 << s) - 1;
    if dim == 1 {
        IBox::new([-r, 0], [r + 1, 1])
    } else {
        IBox::new([-r, -r], [r + 1, r + 1])
    }
}

fn stencil(dim: usize, s: i32, f: impl Fn(Point, f64) -> f64) -> Patch {
    let region = stencil_region(dim, s);
    let scale = 2f64.powi(-s);
    let mut p = Patch::zeros(region);
    for x in region.points() {
        let r = norm2(x);
        if r == 0.0 {
            continue;
        }
        let w = annular_profile(r * scale);
        if w != 0.0 {
            let i = region.offset(x);
            p.data[i] = f(x, r) * w;
        }
    }
    p
}

/// `K_s(x) = Ω(x') ψ(2^{−s}x) / |x|^d`, i.e. `Ω(x') 2^{−sd} φ(2^{−s}x)` with
/// `φ(y) = ψ(y)/|y|^d`.
pub fn rough_kernel(omega: &SphericalFunction, s: i32) -> Result<Patch> {
    if !omega.mean_zero {
        return Err(Error::NotMeanZero(omega.mean()));
    }
    rough_kernel_unchecked(omega, s)
}

/// As [`rough_kernel`] without the mean-zero requirement.
pub fn rough_kernel_unchecked(omega: &SphericalFunction, s: i32) -> Result<Patch> {
    check_scale(s)?;
    let d = omega.dim as i32;
    Ok(stencil(omega.dim, s, |x, r| omega.eval(x) / r.powi(d)))
}

/// `2^{−sd} φ(2^{−s}x) cos(2π(|x| − δ/4))`, `δ = (d − 1)/2`.
pub fn br_kernel(s: i32, dim: usize) -> Result<Patch> {
    check_dim(dim)?;
    check_scale(s)?;
    let delta = (dim as f64 - 1.0) / 2.0;
    let d = dim as i32;
    Ok(stencil(dim, s, |_, r| {
        (2.0 * PI * (r - delta / 4.0)).cos() / r.powi(d)
    }))
}

/// Tail model `(1 + |x|)^{−(d+1)}`, truncated to `|x|_∞ ≤ radius`.
pub fn br_tail(dim: usize, radius: i64) -> Result<Patch> {
    check_dim(dim)?;
    let region = if dim == 1 {
        IBox::new([-radius, 0], [radius + 1, 1])
    } else {
        IBox::new([-radius, -radius], [radius + 1, radius + 1])
    };
    let mut p = Patch::zeros(region);
    for x in region.points() {
        let i = region.offset(x);
        p.data[i] = (1.0 + norm2(x)).powi(-(dim as i32 + 1));
    }
    Ok(p)
}

fn check_scale(s: i32) -> Result<()> {
    if !(1..=20).contains(&s) {
        return Err(Error::Invalid(format!("kernel scale {s} outside 1..=20")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// families

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Zero,
    Dini,
    Rough,
    BochnerRiesz,
}

/// `s ↦ K_s` for `s_lo ≤ s ≤ s_hi` (the range `(μ_min, ν_max]`).
#[derive(Debug)]
pub struct KernelFamily {
    id: String,
    kind: KernelKind,
    dim: usize,
    s_lo: i32,
    s_hi: i32,
    stencils: Vec<Patch>,
    signs: Vec<i8>,
    /// `sup |x|^d |K(x)|` measured on the stencils (Dini families).
    pub size_normalization: Option<f64>,
    cache: Mutex<BTreeMap<String, f64>>,
}

impl Clone for KernelFamily {
    fn clone(&self) -> Self {
        KernelFamily {
            id: self.id.clone(),
            kind: self.kind.clone(),
            dim: self.dim,
            s_lo: self.s_lo,
            s_hi: self.s_hi,
            stencils: self.stencils.clone(),
            signs: self.signs.clone(),
            size_normalization: self.size_normalization,
            cache: Mutex::new(self.cache.lock().map(|c| c.clone()).unwrap_or_default()),
        }
    }
}

fn check_range(s_lo: i32, s_hi: i32) -> Result<()> {
    if s_lo < 1 || s_hi < s_lo {
        return Err(Error::Invalid(format!(
            "scale range {s_lo}..={s_hi} must satisfy 1 <= lo <= hi"
        )));
    }
    check_scale(s_hi)
}

impl KernelFamily {
    /// Family from explicit stencils, one per scale starting at `s_lo`.
    pub fn from_stencils(
        id: &str,
        kind: KernelKind,
        dim: usize,
        s_lo: i32,
        stencils: Vec<Patch>,
    ) -> Result<Self> {
        check_dim(dim)?;
        if stencils.is_empty() {
            return Err(Error::Invalid("family needs at least one scale".into()));
        }
        let s_hi = s_lo + stencils.len() as i32 - 1;
        check_range(s_lo, s_hi)?;
        for (i, st) in stencils.iter().enumerate() {
            let s = s_lo + i as i32;
            let region = stencil_region(dim, s);
            for x in st.region.points() {
                let v = st.get(x);
                if v != 0.0 {
                    let r = norm2(x);
                    let lo = 2f64.powi(s - 2);
                    if !region.contains(x) || r <= lo || r >= 2f64.powi(s) {
                        return Err(Error::Support(format!(
                            "stencil at scale {s} is nonzero at {x:?}"
                        )));
                    }
                }
            }
        }
        let stencils = stencils
            .iter()
            .enumerate()
            .map(|(i, st)| st.window(stencil_region(dim, s_lo + i as i32)))
            .collect();
        Ok(KernelFamily {
            id: id.to_string(),
            kind,
            dim,
            s_lo,
            s_hi,
            signs: vec![1; (s_hi - s_lo + 1) as usize],
            stencils,
            size_normalization: None,
            cache: Mutex::new(BTreeMap::new()),
        })
    }

    fn map_stencils(&self, id: &str, f: impl Fn(Point, f64) -> (Point, f64)) -> KernelFamily {
        let stencils = (self.s_lo..=self.s_hi)
            .map(|s| {
                let st = self.stencil(s).expect("in range");
                let mut out = Patch::zeros(st.region);
                for x in st.region.points() {
                    let (y, v) = f(x, st.get(x));
                    out.add(y, v);
                }
                out
            })
            .collect();
        let mut k =
            KernelFamily::from_stencils(id, self.kind.clone(), self.dim, self.s_lo, stencils)
                .expect("annulus and region are symmetric");
        k.size_normalization = self.size_normalization;
        k
    }

    /// `K_s(−x)`, signs folded in.
    pub fn transposed(&self) -> KernelFamily {
        self.map_stencils(&format!("{}^T", self.id), |x, v| ([-x[0], -x[1]], v))
    }

    /// `|K_s(x)|`, signs folded in.
    pub fn absolute(&self) -> KernelFamily {
        self.map_stencils(&format!("|{}|", self.id), |x, v| (x, v.abs()))
    }

    pub fn zero(dim: usize, s_lo: i32, s_hi: i32) -> Result<Self> {
        check_range(s_lo, s_hi)?;
        let stencils = (s_lo..=s_hi)
            .map(|s| Patch::zeros(stencil_region(dim, s)))
            .collect();
        KernelFamily::from_stencils("zero", KernelKind::Zero, dim, s_lo, stencils)
    }

    /// `K_s = Ω(x') ψ(2^{−s}x)/|x|^d` for `s_lo..=s_hi`.
    pub fn rough(omega: &SphericalFunction, s_lo: i32, s_hi: i32) -> Result<Self> {
        check_range(s_lo, s_hi)?;
        let stencils = (s_lo..=s_hi)
            .map(|s| rough_kernel(omega, s))
            .collect::<Result<Vec<_>>>()?;
        KernelFamily::from_stencils("rough", KernelKind::Rough, omega.dim, s_lo, stencils)
    }

    /// Rough family without the mean-zero requirement (pieces of a split `Ω`).
    pub fn rough_unchecked(omega: &SphericalFunction, s_lo: i32, s_hi: i32) -> Result<Self> {
        check_range(s_lo, s_hi)?;
        let stencils = (s_lo..=s_hi)
            .map(|s| rough_kernel_unchecked(omega, s))
            .collect::<Result<Vec<_>>>()?;
        KernelFamily::from_stencils("rough", KernelKind::Rough, omega.dim, s_lo, stencils)
    }

    pub fn bochner_riesz(dim: usize, s_lo: i32, s_hi: i32) -> Result<Self> {
        check_range(s_lo, s_hi)?;
        let stencils = (s_lo..=s_hi)
            .map(|s| br_kernel(s, dim))
            .collect::<Result<Vec<_>>>()?;
        KernelFamily::from_stencils(
            "bochner-riesz",
            KernelKind::BochnerRiesz,
            dim,
            s_lo,
            stencils,
        )
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn with_id(mut self, id: &str) -> Self {
        self.id = id.to_string();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Smallest and largest scale.
    pub fn scales(&self) -> (i32, i32) {
        (self.s_lo, self.s_hi)
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn with_signs(mut self, signs: Vec<i8>) -> Result<Self> {
        if signs.len() != self.signs.len() || signs.iter().any(|e| !(-1..=1).contains(e)) {
            return Err(Error::Invalid(
                "signs must be one of -1, 0, 1 per scale".into(),
            ));
        }
        self.signs = signs;
        self.cache.lock().expect("cache lock").clear();
        Ok(self)
    }

    /// `ε_s K_s`, or `None` outside the range.
    pub fn stencil(&self, s: i32) -> Option<Patch> {
        if s < self.s_lo || s > self.s_hi {
            return None;
        }
        let i = (s - self.s_lo) as usize;
        let e = self.signs[i] as f64;
        let st = &self.stencils[i];
        Some(if e == 1.0 {
            st.clone()
        } else {
            Patch {
                region: st.region,
                data: st.data.iter().map(|v| v * e).collect(),
            }
        })
    }

    /// `K_s` without its sign.
    pub fn raw_stencil(&self, s: i32) -> Option<&Patch> {
        (s >= self.s_lo && s <= self.s_hi).then(|| &self.stencils[(s - self.s_lo) as usize])
    }

    /// Scales `s` with `μ < s ≤ ν` inside the family range.
    pub fn active_scales(&self, mu: i32, nu: i32) -> std::ops::RangeInclusive<i32> {
        (mu + 1).max(self.s_lo)..=nu.min(self.s_hi)
    }

    /// `Σ_{μ<s≤ν} ε_s K_s` on the widest active stencil region.
    pub fn summed_stencil(&self, mu: i32, nu: i32) -> Patch {
        let scales = self.active_scales(mu, nu);
        let top = *scales.end();
        if scales.is_empty() {
            return Patch::zeros(IBox::empty());
        }
        let mut acc = Patch::zeros(stencil_region(self.dim, top));
        for s in scales {
            let st = self.stencil(s).expect("active scale");
            for x in st.region.points() {
                let v = st.get(x);
                if v != 0.0 {
                    acc.add(x, v);
                }
            }
        }
        acc
    }

    pub fn is_zero(&self) -> bool {
        (self.s_lo..=self.s_hi).all(|s| {
            self.stencil(s)
                .expect("in range")
                .data
                .iter()
                .all(|&v| v == 0.0)
        })
    }

    fn cached(&self, key: String, f: impl FnOnce() -> f64) -> f64 {
        if let Some(&v) = self.cache.lock().expect("cache lock").get(&key) {
            return v;
        }
        let v = f();
        self.cache.lock().expect("cache lock").insert(key, v);
        v
    }

    /// `2^{sd/q'} ‖K_s‖_q` for one scale.
    pub fn scale_norm_0(&self, s: i32, q: f64) -> Result<f64> {
        let st = self
            .stencil(s)
            .ok_or_else(|| Error::Invalid(format!("scale {s} outside family")))?;
        let qp = conjugate(q);
        Ok(2f64.powf(s as f64 * self.dim as f64 / qp) * lp_of(st.data.iter().copied(), q))
    }

    /// Per-`j` Dini moduli `ϖ_{j,β}`, `j = 1..=j_max`.
    pub fn dini_moduli(&self, beta: f64, j_max: u32) -> Result<Vec<f64>> {
        if !(beta > 1.0) {
            return Err(Error::Exponent {
                value: beta,
                reason: "the smoothness norm needs beta > 1",
            });
        }
        let bp = conjugate(beta);
        let mut w = vec![0.0f64; j_max as usize];
        for s in self.s_lo..=self.s_hi {
            let st = self.stencil(s).expect("in range");
            if st.data.iter().all(|&v| v == 0.0) {
                continue;
            }
            let factor = 2f64.powf(s as f64 * self.dim as f64 / bp);
            // shifts with |h|_∞ < 2^{s−j−1}; the j = 1 set contains all others
            let reach = (1i64 << (s - 2).max(0)) - 1;
            if s < 2 || reach < 1 {
                continue;
            }
            let hr = if self.dim == 2 { reach } else { 0 };
            // best value per sup-norm radius of h
            let mut by_radius = vec![0.0f64; reach as usize + 1];
            let big = st.region.grow(reach, self.dim);
            for h0 in -reach..=reach {
                for h1 in -hr..=hr {
                    let rad = h0.abs().max(h1.abs()) as usize;
                    if rad == 0 {
                        continue;
                    }
                    let diffs = big
                        .points()
                        .map(|x| st.get(x) - st.get([x[0] + h0, x[1] + h1]));
                    let v = factor * lp_of(diffs, beta);
                    if v > by_radius[rad] {
                        by_radius[rad] = v;
                    }
                }
            }
            for (jm1, wj) in w.iter_mut().enumerate() {
                let j = jm1 as i32 + 1;
                if s - j - 1 < 0 {
                    continue;
                }
                let lim = (1i64 << (s - j - 1)) - 1;
                let best = by_radius
                    .iter()
                    .take(lim as usize + 1)
                    .fold(0.0f64, |a, &b| a.max(b));
                *wj = wj.max(best);
            }
        }
        Ok(w)
    }

    /// All `(sign·stencil)` pairs flattened, for export.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["s", "x0", "x1", "value"])
            .map_err(|e| Error::Io(e.to_string()))?;
        for s in self.s_lo..=self.s_hi {
            let st = self.stencil(s).expect("in range");
            for x in st.region.points() {
                let v = st.get(x);
                if v != 0.0 {
                    wr.write_record([
                        s.to_string(),
                        x[0].to_string(),
                        x[1].to_string(),
                        format!("{v:e}"),
                    ])
                    .map_err(|e| Error::Io(e.to_string()))?;
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn manifest(&self, q: f64, beta: f64, j_max: u32) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "id": self.id,
            "kind": self.kind,
            "dim": self.dim,
            "scales": [self.s_lo, self.s_hi],
            "signs": self.signs,
            "size_norm": { "q": q, "value": kernel_norm_0(self, q)? },
            "smoothness_norm": { "beta": beta, "j_max": j_max, "value": kernel_norm_1(self, beta, j_max)? },
            "size_normalization": self.size_normalization,
        }))
    }
}

/// Smooth truncations `K_s(x) = K(x) ψ(2^{−s}x)` of a convolution kernel.
pub fn dini_kernel(
    dim: usize,
    s_lo: i32,
    s_hi: i32,
    k: impl Fn(Point) -> f64,
) -> Result<KernelFamily> {
    check_dim(dim)?;
    check_range(s_lo, s_hi)?;
    let d = dim as i32;
    let stencils: Vec<Patch> = (s_lo..=s_hi)
        .map(|s| stencil(dim, s, |x, _| k(x)))
        .collect();
    let mut size = 0.0f64;
    for s in s_lo..=s_hi {
        for x in stencil_region(dim, s).points() {
            if x != [0, 0] {
                size = size.max(norm2(x).powi(d) * k(x).abs());
            }
        }
    }
    let mut fam = KernelFamily::from_stencils("dini", KernelKind::Dini, dim, s_lo, stencils)?;
    fam.size_normalization = Some(size);
    Ok(fam)
}

/// `[K]_{0,q} = sup_s 2^{sd/q'} ‖K_s‖_q`, `q ∈ (1, ∞]`.
pub fn kernel_norm_0(k: &KernelFamily, q: f64) -> Result<f64> {
    if !(q > 1.0) {
        return Err(Error::Exponent {
            value: q,
            reason: "the size norm needs q > 1",
        });
    }
    let (lo, hi) = k.scales();
    let mut best = 0.0f64;
    for s in lo..=hi {
        best = best.max(k.scale_norm_0(s, q)?);
    }
    Ok(k.cached(format!("0:{q}"), || best))
}

/// `[K]_{1,β} = Σ_{j=1}^{j_max} ϖ_{j,β}` over integer shifts.
pub fn kernel_norm_1(k: &KernelFamily, beta: f64, j_max: u32) -> Result<f64> {
    let key = format!("1:{beta}:{j_max}");
    if let Some(&v) = k.cache.lock().expect("cache lock").get(&key) {
        return Ok(v);
    }
    let v = k.dini_moduli(beta, j_max)?.iter().sum();
    Ok(k.cached(key, || v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn partition_sums_to_one() {
        let pu = partition_of_unity(1, 12).unwrap();
        let (a, b) = pu.guaranteed_range();
        let mut worst = 0.0f64;
        for k in 0..10_000 {
            let r = a * (b / a).powf(k as f64 / 9_999.0);
            worst = worst.max((pu.sum(r) - 1.0).abs());
        }
        assert!(worst <= 1e-10, "{worst}");
        assert!((pu.sum(1.0) - 1.0).abs() < 1e-15);
        assert!(partition_of_unity(0, 3).is_err());
    }

    #[test]
    fn profile_support() {
        for k in 0..=1000 {
            let r = 0.249 * k as f64 / 1000.0;
            assert_eq!(annular_profile(r), 0.0);
            assert_eq!(annular_profile(1.001 + k as f64), 0.0);
        }
        assert!(annular_profile(0.5) > 0.0);
        assert_eq!(cutoff(0.5), 1.0);
        assert_eq!(cutoff(1.0), 0.0);
    }

    #[test]
    fn rough_kernel_by_hand_in_one_dimension() {
        let om = SphericalFunction::hilbert();
        let k = rough_kernel(&om, 3).unwrap();
        for x in -8i64..8 {
            let r = x.abs() as f64;
            let expect = if x == 0 {
                0.0
            } else {
                x.signum() as f64 / r * annular_profile(r / 8.0)
            };
            // the same value written as 2^{-3} φ(2^{-3} x) sign(x), φ(y) = ψ(y)/|y|
            let alt = if x == 0 {
                0.0
            } else {
                x.signum() as f64 * 0.125 * annular_profile(r / 8.0) / (r / 8.0)
            };
            let got = k.get([x, 0]);
            assert!((got - expect).abs() < 1e-15);
            assert!((got - alt).abs() < 1e-15);
            assert_eq!(got, -k.get([-x, 0]));
            if x.abs() <= 2 {
                assert_eq!(got, 0.0);
            }
        }
    }

    #[test]
    fn zero_omega_and_mean_check() {
        let z = SphericalFunction::line(0.0, 0.0, 2.0).unwrap();
        assert!(rough_kernel(&z, 4).unwrap().data.iter().all(|&v| v == 0.0));
        let biased = SphericalFunction::line(1.0, 0.5, 2.0).unwrap();
        assert!(matches!(
            rough_kernel(&biased, 4),
            Err(Error::NotMeanZero(_))
        ));
        assert!(rough_kernel_unchecked(&biased, 4).is_ok());
    }

    #[test]
    fn rough_scales_sum_to_homogeneous_kernel() {
        let om = SphericalFunction::hilbert();
        let fam = KernelFamily::rough(&om, 1, 10).unwrap();
        let total = fam.summed_stencil(0, 10);
        for x in 1i64..512 {
            // 2^0 ≤ |x| ≤ 2^9 is fully covered
            assert!(
                (total.get([x, 0]) - 1.0 / x as f64).abs() <= 1e-15 / x as f64 * 4.0,
                "x = {x}"
            );
        }
    }

    #[test]
    fn homogeneity_at_even_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let om = SphericalFunction::lacunary(256, 4, 1.5, 2.0, &mut rng).unwrap();
        for s in 1..5 {
            let a = rough_kernel(&om, s).unwrap();
            let b = rough_kernel(&om, s + 1).unwrap();
            for x in a.region.points() {
                let y = [2 * x[0], 2 * x[1]];
                assert!((b.get(y) - 0.25 * a.get(x)).abs() <= 1e-15 * a.get(x).abs().max(1e-300));
            }
        }
    }

    #[test]
    fn br_kernel_by_hand() {
        let k = br_kernel(4, 1).unwrap();
        for x in [-15i64, -9, -5, 5, 6, 7, 11, 14] {
            let r = x.abs() as f64;
            let expect = (2.0 * PI * r).cos() * annular_profile(r / 16.0) / r;
            assert!((k.get([x, 0]) - expect).abs() < 1e-15);
        }
        assert_eq!(k.get([0, 0]), 0.0);
        for s in 1..6 {
            let st = br_kernel(s, 2).unwrap();
            for x in st.region.points() {
                if st.get(x) != 0.0 {
                    let r = norm2(x);
                    assert!(r > 2f64.powi(s - 2) && r < 2f64.powi(s));
                }
            }
        }
        let tail = br_tail(2, 5).unwrap();
        assert_eq!(tail.get([0, 0]), 1.0);
        assert!((tail.get([3, 4]) - 6f64.powi(-3)).abs() < 1e-15);
    }

    #[test]
    fn dini_family_reconstructs_kernel() {
        let z = dini_kernel(1, 1, 8, |_| 0.0).unwrap();
        assert!(z.is_zero());
        let fam =
            dini_kernel(1, 1, 8, |x| if x[0] == 0 { 0.0 } else { 1.0 / x[0] as f64 }).unwrap();
        assert!(fam.size_normalization.unwrap() <= 1.0 + 1e-15);
        let sum = fam.summed_stencil(0, 8);
        for x in 1i64..=128 {
            let k = 1.0 / x as f64;
            assert!((sum.get([x, 0]) - k).abs() <= 1e-12 * k);
            assert!((sum.get([-x, 0]) + k).abs() <= 1e-12 * k);
        }
        let max_phi = (0..100_000).map(|i| {
            let y = 0.25 + 0.75 * i as f64 / 100_000.0;
            annular_profile(y) / y
        });
        let max_phi = max_phi.fold(0.0f64, f64::max);
        let n0 = kernel_norm_0(&fam, f64::INFINITY).unwrap();
        assert!(n0 <= max_phi * 4.0 + 1e-12);
    }

    #[test]
    fn size_norm_is_scale_invariant_for_hilbert() {
        let fam = KernelFamily::rough(&SphericalFunction::hilbert(), 3, 12).unwrap();
        let per: Vec<f64> = (3..=12)
            .map(|s| fam.scale_norm_0(s, f64::INFINITY).unwrap())
            .collect();
        // sup_y ψ(y)/|y| is approached as the grid refines
        let max_phi = (0..100_000).map(|i| {
            let y = 0.25 + 0.75 * i as f64 / 100_000.0;
            annular_profile(y) / y
        });
        let max_phi = max_phi.fold(0.0f64, f64::max);
        for v in &per[4..] {
            assert!((v / max_phi - 1.0).abs() < 1e-3, "{v} vs {max_phi}");
        }
        assert_eq!(
            kernel_norm_0(&KernelFamily::zero(1, 1, 5).unwrap(), 2.0).unwrap(),
            0.0
        );
    }

    #[test]
    fn size_norm_of_rough_kernel_with_unit_lq() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let om = SphericalFunction::lacunary(1024, 4, 1.2, 2.0, &mut rng).unwrap();
        let c = om.lq_norm(2.0);
        let om = SphericalFunction::circle(om.samples().iter().map(|v| v / c).collect(), 2.0, true)
            .unwrap();
        let fam = KernelFamily::rough(&om, 3, 7).unwrap();
        // ‖φ‖_∞ for φ(y) = ψ(y)/|y|^2
        let phi_max = (0..100_000)
            .map(|i| {
                let y = 0.25 + 0.75 * i as f64 / 100_000.0;
                annular_profile(y) / (y * y)
            })
            .fold(0.0f64, f64::max);
        for s in 3..=7 {
            let v = fam.scale_norm_0(s, 2.0).unwrap();
            assert!(
                v > 2f64.powi(-4) * phi_max && v < 2f64.powi(4) * phi_max,
                "s = {s}: {v}"
            );
        }
    }

    #[test]
    fn dini_moduli_decay_geometrically() {
        let fam = dini_kernel(
            1,
            1,
            12,
            |x| if x[0] == 0 { 0.0 } else { 1.0 / x[0] as f64 },
        )
        .unwrap();
        let w = fam.dini_moduli(f64::INFINITY, 8).unwrap();
        // w[k] holds ϖ_{k+1}; the shifts saturate the annulus width up to j = 3
        for j in 3..8 {
            assert!(w[j] <= 0.75 * w[j - 1], "j = {j}: {w:?}");
        }
        assert!(kernel_norm_1(&fam, f64::INFINITY, 8).unwrap() > 0.0);
        assert_eq!(
            kernel_norm_1(&KernelFamily::zero(1, 1, 8).unwrap(), 2.0, 5).unwrap(),
            0.0
        );
    }

    #[test]
    fn split_examples() {
        let om = SphericalFunction::circle(vec![1.0, -1.0, 100.0, -100.0], 2.0, true).unwrap();
        let (a, b) = omega_split(&om, 1.0, 1).unwrap();
        assert_eq!(a.samples(), &[1.0, -1.0, 0.0, 0.0]);
        assert_eq!(b.samples(), &[0.0, 0.0, 100.0, -100.0]);
        let (a, b) = omega_split(&om, 1.0, 7).unwrap();
        assert_eq!(a.samples(), om.samples());
        assert!(b.samples().iter().all(|&v| v == 0.0));
        assert!(omega_split(&om, 0.0, 1).is_err());
    }

    #[test]
    fn nearest_sample_lookup() {
        let om = SphericalFunction::circle(vec![1.0, 2.0, 3.0, 4.0], 2.0, false).unwrap();
        assert_eq!(om.eval([5, 0]), 1.0);
        assert_eq!(om.eval([0, 5]), 2.0);
        assert_eq!(om.eval([-5, 1]), 3.0);
        assert_eq!(om.eval([1, -5]), 4.0);
        assert_eq!(om.eval([5, -1]), 1.0);
    }

    #[test]
    fn csv_loading_and_correction() {
        let txt = "0,1\n1.5707963267948966,2\n3.141592653589793,3\n4.71238898038469,4\n";
        assert!(matches!(
            SphericalFunction::read_csv(txt.as_bytes(), 2, 2.0, false),
            Err(Error::NotMeanZero(_))
        ));
        let om = SphericalFunction::read_csv(txt.as_bytes(), 2, 2.0, true).unwrap();
        assert!(om.corrected && om.is_mean_zero());
        assert_eq!(om.samples(), &[-1.5, -0.5, 0.5, 1.5]);
        let one = SphericalFunction::read_csv("-1,-2\n1,2\n".as_bytes(), 1, 2.0, false).unwrap();
        assert_eq!(one.samples(), &[2.0, -2.0]);
    }

    #[test]
    fn signs_flip_stencils() {
        let fam = KernelFamily::rough(&SphericalFunction::hilbert(), 1, 3)
            .unwrap()
            .with_signs(vec![1, -1, 0])
            .unwrap();
        assert_eq!(
            fam.stencil(2).unwrap().get([3, 0]),
            -fam.raw_stencil(2).unwrap().get([3, 0])
        );
        assert!(fam.stencil(3).unwrap().data.iter().all(|&v| v == 0.0));
        assert!(fam.stencil(4).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn stencils_live_in_their_annulus(vals in proptest::collection::vec(-5.0f64..5.0, 16), s in 1i32..7) {
                let om = SphericalFunction::circle(vals, 2.0, false).unwrap().centered();
                let st = rough_kernel(&om, s).unwrap();
                for x in st.region.points() {
                    if st.get(x) != 0.0 {
                        let r = norm2(x);
                        prop_assert!(r > 2f64.powi(s - 2) && r < 2f64.powi(s));
                    }
                }
            }
        }
    }
}
