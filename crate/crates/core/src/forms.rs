//! Bilinear forms `Λ_μ^ν`, their localizations to a cube and to a stopping
//! collection, the truncated operator, the sparse form and a spectral
//! Bochner–Riesz reference operator.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conv::{convolve, correlate, fft2};
use crate::dyadic::{Cube, StoppingCollection};
use crate::error::{check_exponent, Error, Result};
use crate::grid::{box_average, GridFunction, IBox, Patch};
use crate::kernels::{stencil_region, KernelFamily};
use crate::localnorms::BadFunction;

/// A form value with its per-key contributions (scale `s`, or `j = s − s_L`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FormValue {
    pub value: f64,
    pub breakdown: BTreeMap<i32, f64>,
}

impl FormValue {
    fn from_breakdown(breakdown: BTreeMap<i32, f64>) -> Self {
        FormValue {
            value: breakdown.values().sum(),
            breakdown,
        }
    }

    pub fn zero() -> Self {
        FormValue::default()
    }

    fn sub(&self, other: &FormValue) -> FormValue {
        let mut b = self.breakdown.clone();
        for (k, v) in &other.breakdown {
            *b.entry(*k).or_insert(0.0) -= v;
        }
        FormValue::from_breakdown(b)
    }

    fn add_assign(&mut self, other: &FormValue) {
        for (k, v) in &other.breakdown {
            *self.breakdown.entry(*k).or_insert(0.0) += v;
        }
        self.value = self.breakdown.values().sum();
    }
}

fn check_pair(k: &KernelFamily, f1: &GridFunction, f2: &GridFunction) -> Result<()> {
    f1.same_grid(f2)?;
    if k.dim() != f1.dim() {
        return Err(Error::DimensionMismatch(k.dim(), f1.dim()));
    }
    Ok(())
}

/// `Σ_{s∈scales} Σ_z K_s(z) C(z)` with `C(z) = Σ_y a(y) b(y + z)`.
fn scale_sums(
    k: &KernelFamily,
    a: &Patch,
    b: &Patch,
    scales: std::ops::RangeInclusive<i32>,
) -> BTreeMap<i32, f64> {
    let mut out = BTreeMap::new();
    let Some(&top) = scales.clone().last().as_ref() else {
        return out;
    };
    let lags = stencil_region(k.dim(), top);
    let c = correlate(a, b, lags);
    for s in scales {
        let st = k.stencil(s).expect("active scale");
        let v: f64 = st
            .region
            .points()
            .zip(&st.data)
            .map(|(z, &w)| if w == 0.0 { 0.0 } else { w * c.get(z) })
            .sum();
        out.insert(s, v);
    }
    out
}

/// `Λ_μ^ν(f₁, f₂) = Σ_{μ<s≤ν} Σ_x Σ_y K_s(x − y) f₁(y) f₂(x)`.
pub fn lambda_trunc(
    k: &KernelFamily,
    f1: &GridFunction,
    f2: &GridFunction,
    mu: i32,
    nu: i32,
) -> Result<FormValue> {
    check_pair(k, f1, f2)?;
    let scales = k.active_scales(mu, nu);
    Ok(FormValue::from_breakdown(scale_sums(
        k,
        &f1.to_patch(),
        &f2.to_patch(),
        scales,
    )))
}

/// `Λ_μ^{min(s_Q, ν)}(f₁ 1_Q, f₂)`.
pub fn lambda_q(
    k: &KernelFamily,
    f1: &GridFunction,
    f2: &GridFunction,
    q: &Cube,
    mu: i32,
    nu: i32,
) -> Result<FormValue> {
    check_pair(k, f1, f2)?;
    let scales = k.active_scales(mu, nu.min(q.s()));
    let a = f1.to_patch().window(q.cells().intersect(&f1.domain()));
    Ok(FormValue::from_breakdown(scale_sums(
        k,
        &a,
        &f2.to_patch(),
        scales,
    )))
}

/// `|Λ_Q(f₁, f₂) − Λ_Q(f₁, f₂ 1_{3Q})|`, zero by the support of `K_s`.
pub fn lambda_q_locality_gap(
    k: &KernelFamily,
    f1: &GridFunction,
    f2: &GridFunction,
    q: &Cube,
    mu: i32,
    nu: i32,
) -> Result<f64> {
    let full = lambda_q(k, f1, f2, q, mu, nu)?;
    let local = lambda_q(k, f1, &f2.restrict(&q.dilate_cells(3.0)), q, mu, nu)?;
    Ok((full.value - local.value).abs())
}

/// `Λ_{Q,μ,ν} − Σ_{L∈𝒬, L⊂Q} Λ_{L,μ,ν}`, keyed by scale.
pub fn lambda_stop(
    k: &KernelFamily,
    f1: &GridFunction,
    f2: &GridFunction,
    coll: &StoppingCollection,
    mu: i32,
    nu: i32,
) -> Result<FormValue> {
    let top = coll.top();
    let mut total = lambda_q(k, f1, f2, top, mu, nu)?;
    let mut inner = FormValue::zero();
    for l in coll.members().iter().filter(|l| top.contains_cube(l)) {
        if k.active_scales(mu, nu.min(l.s())).is_empty() {
            continue;
        }
        inner.add_assign(&lambda_q(k, f1, f2, l, mu, nu)?);
    }
    total = total.sub(&inner);
    Ok(total)
}

/// The same difference form for a bad function written as
/// `Σ_{j≥1} Σ_s ⟨K_s b_{s−j}, h⟩`, keyed by `j`. Pieces on cubes not inside
/// the top cube are outside `Q` and drop out.
pub fn lambda_stop_bad(
    k: &KernelFamily,
    b: &BadFunction,
    h: &GridFunction,
    coll: &StoppingCollection,
    mu: i32,
    nu: i32,
) -> Result<FormValue> {
    let top = *coll.top();
    lambda_bad(
        k,
        &b.filter(|l| top.contains_cube(l)),
        h,
        mu,
        nu.min(top.s()),
    )
}

/// `Σ_t Σ_{max(μ,t) < s ≤ upper} ⟨K_s b_t, h⟩` over all pieces, keyed by `j = s − t`.
pub fn lambda_bad(
    k: &KernelFamily,
    b: &BadFunction,
    h: &GridFunction,
    mu: i32,
    upper: i32,
) -> Result<FormValue> {
    if b.dim() != h.dim() || b.m() != h.m() {
        return Err(Error::Invalid(
            "bad function and h live on different grids".into(),
        ));
    }
    if k.dim() != h.dim() {
        return Err(Error::DimensionMismatch(k.dim(), h.dim()));
    }
    let hp = h.to_patch();
    let mut by_j: BTreeMap<i32, f64> = BTreeMap::new();
    for (t, bt) in b.by_scale() {
        let scales = k.active_scales(mu.max(t), upper);
        for (s, v) in scale_sums(k, &bt.to_patch(), &hp, scales) {
            *by_j.entry(s - t).or_insert(0.0) += v;
        }
    }
    Ok(FormValue::from_breakdown(by_j))
}

/// `T f = Σ_{μ<s≤ν} K_s * f` on the grid.
pub fn apply_truncated(
    k: &KernelFamily,
    f: &GridFunction,
    mu: i32,
    nu: i32,
) -> Result<GridFunction> {
    if k.dim() != f.dim() {
        return Err(Error::DimensionMismatch(k.dim(), f.dim()));
    }
    let st = k.summed_stencil(mu, nu);
    let out = convolve(&st, &f.to_patch(), f.domain());
    GridFunction::new(f.dim(), f.m(), out.data)
}

/// Box with its measure, for sparse forms over dilated cubes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredBox {
    pub cells: IBox,
    pub measure: f64,
}

impl MeasuredBox {
    pub fn dilate(q: &Cube, lambda: f64) -> MeasuredBox {
        MeasuredBox {
            cells: q.dilate_cells(lambda),
            measure: q.measure() * lambda.powi(q.dim() as i32),
        }
    }
}

/// `Σ_Q |Q| ⟨f₁⟩_{p₁,Q} ⟨f₂⟩_{p₂,Q}`.
pub fn psf_boxes(
    boxes: &[MeasuredBox],
    f1: &GridFunction,
    f2: &GridFunction,
    p1: f64,
    p2: f64,
) -> Result<f64> {
    f1.same_grid(f2)?;
    check_exponent(p1)?;
    check_exponent(p2)?;
    if p1.is_infinite() || p2.is_infinite() {
        return Err(Error::Exponent {
            value: f64::INFINITY,
            reason: "sparse forms need finite exponents",
        });
    }
    Ok(boxes
        .iter()
        .map(|b| {
            let a2 = box_average(f2, p2, &b.cells, b.measure);
            if a2 == 0.0 {
                0.0
            } else {
                b.measure * box_average(f1, p1, &b.cells, b.measure) * a2
            }
        })
        .sum())
}

/// `(1 − |ξ|²/B²)_+^δ` applied on the discrete torus, `ξ ∈ [−1/2, 1/2)^d`.
pub fn br_spectral(f: &GridFunction, delta: f64, bandwidth: f64) -> Result<GridFunction> {
    if !(delta >= 0.0) || !(bandwidth > 0.0) {
        return Err(Error::Invalid(
            "br_spectral needs delta >= 0 and bandwidth > 0".into(),
        ));
    }
    let n0 = f.side() as usize;
    let n1 = if f.dim() == 2 { n0 } else { 1 };
    let mut buf: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    fft2(&mut buf, n0, n1, &mut planner, false);
    let freq = |k: usize, n: usize| {
        let k = k as f64;
        let n = n as f64;
        if k >= n / 2.0 {
            (k - n) / n
        } else {
            k / n
        }
    };
    for i in 0..n0 {
        for j in 0..n1 {
            let xi2 = freq(i, n0).powi(2) + if n1 > 1 { freq(j, n1).powi(2) } else { 0.0 };
            let base = 1.0 - xi2 / (bandwidth * bandwidth);
            let m = if base <= 0.0 {
                0.0
            } else if delta == 0.0 {
                1.0
            } else {
                base.powf(delta)
            };
            buf[i * n1 + j] *= m;
        }
    }
    fft2(&mut buf, n0, n1, &mut planner, true);
    let scale = 1.0 / (n0 * n1) as f64;
    GridFunction::new(f.dim(), f.m(), buf.iter().map(|c| c.re * scale).collect())
}

/// `sup_ξ |Σ_{μ<s≤ν} K̂_s(ξ)|`, the `ℓ²(ℤ^d)` norm of the truncated operator.
pub fn truncation_l2_norm(k: &KernelFamily, mu: i32, nu: i32) -> f64 {
    let st = k.summed_stencil(mu, nu);
    if st.region.is_empty() {
        return 0.0;
    }
    let [r0, r1] = st.region.shape();
    let n0 = (4 * r0).next_power_of_two();
    let n1 = if k.dim() == 2 {
        (4 * r1).next_power_of_two()
    } else {
        1
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); n0 * n1];
    for i in 0..r0 {
        for j in 0..r1 {
            buf[i * n1 + j].re = st.data[i * r1 + j];
        }
    }
    let mut planner = FftPlanner::new();
    fft2(&mut buf, n0, n1, &mut planner, false);
    buf.iter().fold(0.0f64, |a, c| a.max(c.norm()))
}

/// `C_T = sup_{μ<ν}` of the truncated `L² × L²` norms over the family range.
pub fn truncation_constant(k: &KernelFamily) -> f64 {
    let (lo, hi) = k.scales();
    let mut best = 0.0f64;
    for mu in lo - 1..hi {
        for nu in mu + 1..=hi {
            best = best.max(truncation_l2_norm(k, mu, nu));
        }
    }
    best
}

/// Hex SHA-256 of the little-endian bytes of the values.
pub fn values_hash(vals: &[&[f64]]) -> String {
    let mut h = Sha256::new();
    for v in vals {
        for x in *v {
            h.update(x.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Log record of one form evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FormRecord {
    pub inputs_hash: String,
    pub mu: i32,
    pub nu: i32,
    pub value: f64,
    pub breakdown: BTreeMap<i32, f64>,
}

impl FormRecord {
    pub fn new(f1: &GridFunction, f2: &GridFunction, mu: i32, nu: i32, v: &FormValue) -> Self {
        FormRecord {
            inputs_hash: values_hash(&[f1.values(), f2.values()]),
            mu,
            nu,
            value: v.value,
            breakdown: v.breakdown.clone(),
        }
    }
}
