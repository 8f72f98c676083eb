//! Experiment harness: domination reports, localized lemma checks, the
//! adjoint remainder, decay profiles and the weak-(1,1) diagnostic. Every
//! report keeps the raw numbers behind its headline value.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{validate_stopping, whitney_cover, Cube, StoppingCollection, StoppingOptions};
use crate::error::{conjugate, Error, Result};
use crate::forms::{
    apply_truncated, lambda_bad, lambda_stop, lambda_stop_bad, lambda_trunc, psf_boxes,
    truncation_constant,
};
use crate::grid::{lp_norm, CellMask, GridFunction, IBox, Patch};
use crate::kernels::{kernel_norm_0, kernel_norm_1, omega_split, KernelFamily, SphericalFunction};
use crate::localnorms::{cz_decompose, orlicz_lorentz_norm, BadFunction, StoppedFunction};
use crate::sparsifier::{sparsify, SparsifyOptions};

// ---------------------------------------------------------------------------
// domination

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationCell {
    pub mu: i32,
    pub nu: i32,
    pub value: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PSweepRow {
    pub p: f64,
    pub psf: f64,
    /// `max_{μ,ν} |Λ_μ^ν| / PSF_{𝒮;p₁,p}` on the same `𝒮`.
    pub ratio: f64,
    /// `ratio / (p/(p−1))`.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub kernel: String,
    pub p1: f64,
    pub p2: f64,
    pub dim: usize,
    pub m: u32,
    pub lambda: f64,
    pub retries: u32,
    pub eta: f64,
    pub eta_dilated: f64,
    pub cubes: usize,
    pub psf: f64,
    pub cells: Vec<DominationCell>,
    pub max_ratio: f64,
    pub p_sweep: Vec<PSweepRow>,
}

impl DominationReport {
    /// Recomputes every ratio and the maximum from the stored values.
    pub fn audit(&self) -> bool {
        let mut best = 0.0f64;
        for c in &self.cells {
            let r = ratio(c.value.abs(), self.psf);
            if (r - c.ratio).abs() > 1e-12 * r.max(1.0) {
                return false;
            }
            best = best.max(r);
        }
        (best - self.max_ratio).abs() <= 1e-12 * best.max(1.0)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DominationOptions {
    pub sparsify: SparsifyOptions,
    /// Exponents `p` for the `PSF_{𝒮;1,p}` profile; empty to skip.
    pub p_sweep: Vec<f64>,
}

pub const DEFAULT_P_SWEEP: [f64; 4] = [4.0, 2.0, 1.5, 1.25];

/// `|Λ_μ^ν(f₁,f₂)|` for all pairs in the family range, all scales per pair.
pub fn truncation_sweep(
    k: &KernelFamily,
    f1: &GridFunction,
    f2: &GridFunction,
) -> Result<Vec<(i32, i32, f64)>> {
    let (lo, hi) = k.scales();
    let full = lambda_trunc(k, f1, f2, lo - 1, hi)?;
    let mut out = Vec::new();
    for mu in lo - 1..hi {
        let mut acc = 0.0;
        for nu in mu + 1..=hi {
            acc += full.breakdown.get(&nu).copied().unwrap_or(0.0);
            out.push((mu, nu, acc));
        }
    }
    Ok(out)
}

fn sparse_psf(
    k: &KernelFamily,
    f1: &GridFunction,
    f2: &GridFunction,
    p1: f64,
    p2: f64,
    opts: SparsifyOptions,
) -> Result<(
    f64,
    crate::sparsifier::SparseCollection,
    crate::sparsifier::IterationCertificate,
)> {
    let (sc, cert) = sparsify(k, f1, f2, p1, p2, opts)?.map_err(|f| {
        Error::Aborted(
            f.attempts
                .iter()
                .map(|(l, a)| format!("λ = {l}: {a}"))
                .collect::<Vec<_>>()
                .join("; "),
        )
    })?;
    Ok((psf_boxes(&sc.boxes(), f1, f2, p1, p2)?, sc, cert))
}

/// Sparsifies once and compares every truncation against the sparse form.
pub fn domination_report(
    k: &KernelFamily,
    f1: &GridFunction,
    f2: &GridFunction,
    p1: f64,
    p2: f64,
    opts: &DominationOptions,
) -> Result<DominationReport> {
    let (psf, sc, cert) = sparse_psf(k, f1, f2, p1, p2, opts.sparsify)?;
    let sweep = truncation_sweep(k, f1, f2)?;
    let cells: Vec<DominationCell> = sweep
        .iter()
        .map(|&(mu, nu, value)| DominationCell {
            mu,
            nu,
            value,
            ratio: ratio(value.abs(), psf),
        })
        .collect();
    let max_abs = sweep.iter().fold(0.0f64, |a, c| a.max(c.2.abs()));
    let max_ratio = cells.iter().fold(0.0f64, |a, c| a.max(c.ratio));
    // the profile reuses the one sparse collection
    let boxes = sc.boxes();
    let mut p_sweep = Vec::with_capacity(opts.p_sweep.len());
    for &p in &opts.p_sweep {
        if !(p > 1.0) {
            return Err(Error::Exponent {
                value: p,
                reason: "the profile needs p > 1",
            });
        }
        let psf_p = psf_boxes(&boxes, f1, f2, p1, p)?;
        let r = ratio(max_abs, psf_p);
        p_sweep.push(PSweepRow {
            p,
            psf: psf_p,
            ratio: r,
            normalized: r * (p - 1.0) / p,
        });
    }
    Ok(DominationReport {
        kernel: k.id().to_string(),
        p1,
        p2,
        dim: f1.dim(),
        m: f1.m(),
        lambda: cert.lambda,
        retries: cert.retries,
        eta: sc.eta,
        eta_dilated: sc.eta_dilated,
        cubes: sc.len(),
        psf,
        cells,
        max_ratio,
        p_sweep,
    })
}

// ---------------------------------------------------------------------------
// localized lemmas

/// A stopping collection below a random top cube of scale `m − 2` or `m − 1`:
/// the Whitney cover of a few random boxes in `3Q`. `coarse` boxes span one
/// to three sidelengths so the cover reaches well above unit scale.
pub fn random_stopping_collection<R: Rng>(
    dim: usize,
    m: u32,
    coarse: bool,
    rng: &mut R,
) -> Result<StoppingCollection> {
    if m < 2 {
        return Err(Error::Invalid(format!(
            "random collections need m ≥ 2, got {m}"
        )));
    }
    let n = 1i64 << m;
    for _ in 0..1000 {
        let s = rng.gen_range(m as i32 - 2..m as i32);
        let side = 1i64 << s;
        let corner = [
            rng.gen_range(0..n / side) * side,
            if dim == 2 {
                rng.gen_range(0..n / side) * side
            } else {
                0
            },
        ];
        let top = Cube::new(dim, s, corner)?;
        let three = top.dilate_cells(3.0);
        let mut e = CellMask::empty(dim, m)?;
        for _ in 0..rng.gen_range(1..4) {
            let w = if coarse {
                rng.gen_range(side..=3 * side)
            } else {
                rng.gen_range(1..=side)
            };
            let c = [
                rng.gen_range(three.lo[0]..three.hi[0]),
                rng.gen_range(three.lo[1]..three.hi[1]),
            ];
            let hi1 = if dim == 2 { c[1] + w } else { 1 };
            e.insert_box(&IBox::new(c, [c[0] + w, hi1]).intersect(&three));
        }
        let members: Vec<Cube> = whitney_cover(&e)
            .into_iter()
            .filter(|l| three.contains_box(&l.cells()))
            .collect();
        if let Ok(c) = validate_stopping(&top, &members, m, StoppingOptions { shadow_floor: 1 })? {
            return Ok(c);
        }
    }
    Err(Error::Invalid(
        "no valid random stopping collection in 1000 draws".into(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaTrial {
    pub mu: i32,
    pub nu: i32,
    pub uniform_lhs: f64,
    pub uniform_rhs: f64,
    pub trivial_lhs: f64,
    pub trivial_rhs: f64,
    pub trivial_j: i32,
    pub cancellation_lhs: f64,
    pub cancellation_rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub kernel: String,
    pub beta: f64,
    pub truncation_constant: f64,
    pub size_beta: f64,
    pub size_inf: f64,
    pub smoothness_beta: f64,
    pub trials: Vec<LemmaTrial>,
    /// Largest `LHS / RHS` for the uniform, trivial and cancellation bounds.
    pub uniform_constant: f64,
    pub trivial_constant: f64,
    pub cancellation_constant: f64,
    pub ceiling: f64,
    /// Trials with some empirical constant above the ceiling.
    pub flagged: Vec<usize>,
}

fn random_on<R: Rng>(coll: &StoppingCollection, rng: &mut R) -> Result<GridFunction> {
    let three = coll.top().dilate_cells(3.0);
    let amp = 10f64.powf(rng.gen_range(-1.0..1.0));
    GridFunction::from_fn(coll.dim(), coll.m(), |p| {
        if three.contains(p) {
            amp * rng.gen_range(-1.0..1.0)
        } else {
            0.0
        }
    })
}

fn random_pieces<R: Rng>(coll: &StoppingCollection, rng: &mut R) -> Result<BadFunction> {
    let dom = crate::grid::domain_box(coll.dim(), coll.m());
    let pieces = coll
        .members()
        .iter()
        .map(|l| {
            let mut p = Patch::zeros(l.cells().intersect(&dom));
            for v in &mut p.data {
                *v = rng.gen_range(-1.0..1.0);
            }
            (*l, p)
        })
        .collect();
    BadFunction::new(coll.dim(), coll.m(), pieces, false)
}

fn abs_bad(b: &BadFunction) -> Result<BadFunction> {
    let pieces = b
        .pieces()
        .iter()
        .map(|(l, p)| {
            let mut a = p.clone();
            a.data.iter_mut().for_each(|v| *v = v.abs());
            (*l, a)
        })
        .collect();
    BadFunction::new(b.dim(), b.m(), pieces, false)
}

fn y_norm(h: &GridFunction, coll: &StoppingCollection, p: f64) -> Result<f64> {
    StoppedFunction::new(h.clone(), coll.clone())?.y_norm(p)
}

/// Random trials of the uniform `Y_2 × Y_2` bound, the single-scale trivial
/// estimate and the cancellation estimate, with empirical constants.
pub fn lemma_checks<R: Rng>(
    k: &KernelFamily,
    coll: &StoppingCollection,
    trials: usize,
    beta: f64,
    rng: &mut R,
) -> Result<LemmaReport> {
    if coll.dim() != k.dim() {
        return Err(Error::DimensionMismatch(k.dim(), coll.dim()));
    }
    let (lo, hi) = k.scales();
    let alpha = conjugate(beta);
    let c_t = truncation_constant(k);
    let size_beta = kernel_norm_0(k, beta)?;
    let size_inf = kernel_norm_0(k, f64::INFINITY)?;
    let smooth = kernel_norm_1(k, beta, hi.max(1) as u32)?;
    let abs_k = k.absolute();
    let q_measure = coll.top().measure();
    let ceiling = 2f64.powi(8 * k.dim() as i32);
    let mut out = Vec::with_capacity(trials);
    let mut flagged = Vec::new();
    let (mut c1, mut c2, mut c3) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..trials {
        let mu = rng.gen_range(lo - 1..hi);
        let nu = rng.gen_range(mu + 1..=hi);

        let h1 = random_on(coll, rng)?;
        let h2 = random_on(coll, rng)?;
        let uniform_lhs = lambda_stop(k, &h1, &h2, coll, mu, nu)?.value.abs();
        let uniform_rhs = c_t * q_measure * y_norm(&h1, coll, 2.0)? * y_norm(&h2, coll, 2.0)?;

        let h = random_on(coll, rng)?;
        let h_abs = h.map(f64::abs)?;
        let h_y = y_norm(&h, coll, alpha)?;
        let b = random_pieces(coll, rng)?;
        let triv = lambda_bad(&abs_k, &abs_bad(&b)?, &h_abs, lo - 1, hi)?;
        let (trivial_j, trivial_lhs) =
            triv.breakdown
                .iter()
                .fold((0, 0.0f64), |a, (&j, &v)| if v > a.1 { (j, v) } else { a });
        let trivial_rhs = size_beta * q_measure * b.x_norm(coll, 1.0)? * h_y;

        let cz = cz_decompose(
            &StoppedFunction::new(random_on(coll, rng)?, coll.clone())?,
            1.0,
        )?;
        let bg = cz.b.to_grid();
        let cancellation_lhs = lambda_stop(k, &bg, &h, coll, mu, nu)?.value.abs()
            + lambda_stop(k, &h, &bg, coll, mu, nu)?.value.abs();
        let cancellation_rhs = (size_inf + smooth) * q_measure * cz.b.x_norm(coll, 1.0)? * h_y;

        let e = [
            ratio(uniform_lhs, uniform_rhs),
            ratio(trivial_lhs, trivial_rhs),
            ratio(cancellation_lhs, cancellation_rhs),
        ];
        c1 = c1.max(e[0]);
        c2 = c2.max(e[1]);
        c3 = c3.max(e[2]);
        if e.iter().any(|&v| v > ceiling) {
            flagged.push(i);
        }
        out.push(LemmaTrial {
            mu,
            nu,
            uniform_lhs,
            uniform_rhs,
            trivial_lhs,
            trivial_rhs,
            trivial_j,
            cancellation_lhs,
            cancellation_rhs,
        });
    }
    Ok(LemmaReport {
        kernel: k.id().to_string(),
        beta,
        truncation_constant: c_t,
        size_beta,
        size_inf,
        smoothness_beta: smooth,
        trials: out,
        uniform_constant: c1,
        trivial_constant: c2,
        cancellation_constant: c3,
        ceiling,
        flagged,
    })
}

// ---------------------------------------------------------------------------
// adjoint remainder

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointReport {
    /// `Λ_{𝒬,μ,ν}(h 1_Q, b)`.
    pub form: f64,
    /// Transposed main sum over `b^in`.
    pub main: f64,
    pub remainder: f64,
    /// `Λ_{𝒬,μ,ν}(h 1_Q, b^out)`.
    pub out_part: f64,
    /// `[K]_{0,q} |Q| ‖h‖_{Y_{q'}} ‖b‖_{X_{q'}}`.
    pub scale: f64,
    pub constant: f64,
}

/// `V = Λ_𝒬(h, b) − Σ_j Σ_s ⟨K_s(−·) b^in_{s−j}, h⟩` and its size against the
/// single-scale bound.
pub fn adjoint_remainder_check(
    k: &KernelFamily,
    coll: &StoppingCollection,
    h: &GridFunction,
    b: &BadFunction,
    mu: i32,
    nu: i32,
    q: f64,
) -> Result<AdjointReport> {
    let top = *coll.top();
    let hq = h.restrict(&top.cells());
    let two = top.dilate_cells(2.0);
    let b_in = b.filter(|l| !l.dilate_cells(3.0).intersect(&two).is_empty());
    let b_out = b.filter(|l| l.dilate_cells(3.0).intersect(&two).is_empty());
    let form = lambda_stop(k, &hq, &b.to_grid(), coll, mu, nu)?.value;
    let main = lambda_bad(&k.transposed(), &b_in, &hq, mu, nu.min(top.s()))?.value;
    let out_part = lambda_stop(k, &hq, &b_out.to_grid(), coll, mu, nu)?.value;
    let qp = conjugate(q);
    let scale =
        kernel_norm_0(k, q)? * top.measure() * y_norm(&hq, coll, qp)? * b.x_norm(coll, qp)?;
    let remainder = form - main;
    Ok(AdjointReport {
        form,
        main,
        remainder,
        out_part,
        scale,
        constant: ratio(remainder.abs(), scale),
    })
}

// ---------------------------------------------------------------------------
// decay

/// Least-squares slope of `log₂|v_j|` against `j` over the nonzero entries.
pub fn fitted_slope(profile: &BTreeMap<i32, f64>) -> Option<f64> {
    let pts: Vec<(f64, f64)> = profile
        .iter()
        .filter(|(_, v)| v.abs() > 0.0)
        .map(|(&j, v)| (j as f64, v.abs().log2()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

#[derive(Debug, Clone)]
pub enum DecayMode {
    /// Rough kernel built from `omega`, split at thresholds `2^{δj}`.
    Rough {
        omega: SphericalFunction,
        deltas: Vec<f64>,
    },
    /// The `j`-profile alone.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoughSplit {
    pub delta: f64,
    /// `H^j` and `V^j` contributions per `j`.
    pub h_profile: BTreeMap<i32, f64>,
    pub v_profile: BTreeMap<i32, f64>,
    /// `max_j |H^j + V^j − 𝖪^j|`.
    pub split_error: f64,
    /// `‖Δ_j‖_q` for every `j` with `Δ_j ≠ 0`.
    pub tail_norms: Vec<f64>,
    pub tail_sum: f64,
    /// `‖Ω‖_{L^{q,1} log L}`.
    pub orlicz: f64,
    /// `δ Σ_j ‖Δ_j‖_q / ‖Ω‖_{L^{q,1} log L}`.
    pub fitted_constant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub kernel: String,
    /// `𝖪^j(b, h)` per `j`.
    pub profile: BTreeMap<i32, f64>,
    pub total: f64,
    /// `Λ_𝒬(b, h)` evaluated as a difference of localized forms.
    pub direct: f64,
    pub consistent: bool,
    pub slope: Option<f64>,
    pub rough: Vec<RoughSplit>,
}

/// The `j`-profile of `Λ_𝒬(b, h)` with its fitted decay rate; in rough mode
/// also the `H^j / V^j` split per `δ` and the tail sums `Σ_j ‖Δ_j‖_q`.
pub fn decay_diagnostics(
    k: &KernelFamily,
    coll: &StoppingCollection,
    b: &BadFunction,
    h: &GridFunction,
    mu: i32,
    nu: i32,
    mode: &DecayMode,
) -> Result<DecayReport> {
    let fv = lambda_stop_bad(k, b, h, coll, mu, nu)?;
    let direct = lambda_stop(k, &b.to_grid(), h, coll, mu, nu)?.value;
    let consistent =
        (fv.value - direct).abs() <= 1e-10 * fv.value.abs().max(direct.abs()).max(1e-300);
    let mut rough = Vec::new();
    if let DecayMode::Rough { omega, deltas } = mode {
        let (lo, hi) = k.scales();
        let orlicz = orlicz_lorentz_norm(omega, omega.q())?;
        let peak = omega.samples().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for &delta in deltas {
            let mut h_profile = BTreeMap::new();
            let mut v_profile = BTreeMap::new();
            let mut split_error = 0.0f64;
            for (&j, &kj) in &fv.breakdown {
                let (om_j, d_j) = omega_split(omega, delta, j)?;
                let hj = lambda_stop_bad(
                    &KernelFamily::rough_unchecked(&om_j, lo, hi)?,
                    b,
                    h,
                    coll,
                    mu,
                    nu,
                )?;
                let vj = lambda_stop_bad(
                    &KernelFamily::rough_unchecked(&d_j, lo, hi)?,
                    b,
                    h,
                    coll,
                    mu,
                    nu,
                )?;
                let (hv, vv) = (
                    hj.breakdown.get(&j).copied().unwrap_or(0.0),
                    vj.breakdown.get(&j).copied().unwrap_or(0.0),
                );
                split_error = split_error.max((hv + vv - kj).abs());
                h_profile.insert(j, hv);
                v_profile.insert(j, vv);
            }
            let mut tail_norms = Vec::new();
            let mut j = 1;
            while 2f64.powf(delta * j as f64) < peak {
                tail_norms.push(omega_split(omega, delta, j)?.1.lq_norm(omega.q()));
                j += 1;
            }
            let tail_sum: f64 = tail_norms.iter().sum();
            rough.push(RoughSplit {
                delta,
                h_profile,
                v_profile,
                split_error,
                tail_norms,
                tail_sum,
                orlicz,
                fitted_constant: ratio(delta * tail_sum, orlicz),
            });
        }
    }
    Ok(DecayReport {
        kernel: k.id().to_string(),
        slope: fitted_slope(&fv.breakdown),
        total: fv.value,
        profile: fv.breakdown,
        direct,
        consistent,
        rough,
    })
}

// ---------------------------------------------------------------------------
// weak (1,1)

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weak11Report {
    pub value: f64,
    pub l1: f64,
    /// `(λ, |{|Tf| > λ}|, λ |{…}| / ‖f‖₁)` per threshold.
    pub thresholds: Vec<(f64, usize, f64)>,
}

/// `sup_λ λ |{|Tf| > λ}| / ‖f‖₁` over `λ = 2^k ‖f‖₁ / N`, `k = 0..=2m`.
pub fn weak11_of(tf: &GridFunction, f: &GridFunction) -> Result<Weak11Report> {
    tf.same_grid(f)?;
    let l1 = lp_norm(f, 1.0)?;
    if l1 == 0.0 {
        return Err(Error::Invalid(
            "weak-type diagnostic of the zero function".into(),
        ));
    }
    let n = f.len() as f64;
    let mut mags: Vec<f64> = tf.values().iter().map(|v| v.abs()).collect();
    mags.sort_by(|a, b| a.total_cmp(b));
    let mut thresholds = Vec::new();
    let mut value = 0.0f64;
    for k in 0..=2 * f.m() {
        let lam = 2f64.powi(k as i32) * l1 / n;
        let count = mags.len() - mags.partition_point(|&v| v <= lam);
        let prod = lam * count as f64 / l1;
        value = value.max(prod);
        thresholds.push((lam, count, prod));
    }
    Ok(Weak11Report {
        value,
        l1,
        thresholds,
    })
}

pub fn weak11_diagnostic(
    k: &KernelFamily,
    f: &GridFunction,
    mu: i32,
    nu: i32,
) -> Result<Weak11Report> {
    weak11_of(&apply_truncated(k, f, mu, nu)?, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::convolve;
    use crate::dyadic::{validate_stopping, whitney_cover, Cube, StoppingOptions};
    use crate::grid::IBox;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hilbert(s_hi: i32) -> KernelFamily {
        KernelFamily::rough(&SphericalFunction::hilbert(), 1, s_hi).unwrap()
    }

    fn spike(m: u32, at: i64) -> GridFunction {
        GridFunction::from_fn(1, m, |p| if p[0] == at { 1.0 } else { 0.0 }).unwrap()
    }

    fn collection_1d() -> StoppingCollection {
        let top = Cube::new(1, 6, [64, 0]).unwrap();
        let e = crate::grid::CellMask::from_fn(1, 8, |p| (84..140).contains(&p[0])).unwrap();
        let members: Vec<Cube> = whitney_cover(&e)
            .into_iter()
            .filter(|l| top.dilate_cells(3.0).contains_box(&l.cells()))
            .collect();
        validate_stopping(&top, &members, 8, StoppingOptions { shadow_floor: 1 })
            .unwrap()
            .unwrap()
    }

    #[test]
    fn zero_kernel_has_zero_ratios() {
        let k = KernelFamily::zero(1, 1, 6).unwrap();
        let f = spike(7, 40);
        let r = domination_report(&k, &f, &f, 1.0, 2.0, &DominationOptions::default()).unwrap();
        assert_eq!(r.max_ratio, 0.0);
        assert!(r.audit());
    }

    #[test]
    fn sweep_matches_direct_truncations_and_is_homogeneous() {
        let k = hilbert(7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f1 = GridFunction::from_fn(1, 8, |p| {
            if (60..120).contains(&p[0]) {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .unwrap();
        let f2 = GridFunction::from_fn(1, 8, |p| {
            if (40..150).contains(&p[0]) {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .unwrap();
        for (mu, nu, v) in truncation_sweep(&k, &f1, &f2).unwrap() {
            let d = lambda_trunc(&k, &f1, &f2, mu, nu).unwrap().value;
            assert!((v - d).abs() < 1e-12 * d.abs().max(1.0));
        }
        let opts = DominationOptions {
            p_sweep: DEFAULT_P_SWEEP.to_vec(),
            ..Default::default()
        };
        let r = domination_report(&k, &f1, &f2, 1.0, 2.0, &opts).unwrap();
        assert!(r.audit() && r.max_ratio.is_finite() && r.max_ratio > 0.0);
        assert_eq!(r.p_sweep.len(), 4);
        let r2 = domination_report(
            &k,
            &f1.scaled(7.5),
            &f2,
            1.0,
            2.0,
            &DominationOptions::default(),
        )
        .unwrap();
        assert!((r2.max_ratio - r.max_ratio).abs() < 1e-9 * r.max_ratio);
    }

    #[test]
    fn lemma_checks_zero_and_finite() {
        let coll = collection_1d();
        let k = hilbert(6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rep = lemma_checks(&k, &coll, 25, 2.0, &mut rng).unwrap();
        assert!(rep.flagged.is_empty(), "{rep:?}");
        assert!(
            rep.uniform_constant.is_finite()
                && rep.trivial_constant.is_finite()
                && rep.cancellation_constant.is_finite()
        );
        let zero = BadFunction::zero(1, 8);
        let h = random_on(&coll, &mut rng).unwrap();
        assert_eq!(
            lambda_bad(&k.absolute(), &zero, &h.map(f64::abs).unwrap(), 0, 6)
                .unwrap()
                .value,
            0.0
        );
    }

    #[test]
    fn trivial_estimate_vanishes_for_separated_support() {
        let coll = collection_1d();
        let k = hilbert(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_pieces(&coll, &mut rng).unwrap();
        // members lie in 84..140 and the kernel reach at scale ≤ 3 is < 8
        let far = IBox::new([0, 0], [70, 1]);
        let h = GridFunction::from_fn(1, 8, |p| if far.contains(p) { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(
            lambda_bad(&k.absolute(), &abs_bad(&b).unwrap(), &h, 0, 3)
                .unwrap()
                .value,
            0.0
        );
    }

    #[test]
    fn adjoint_remainder_pieces() {
        let coll = collection_1d();
        let k = hilbert(6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_on(&coll, &mut rng).unwrap();
        let zero =
            adjoint_remainder_check(&k, &coll, &h, &BadFunction::zero(1, 8), 0, 6, 2.0).unwrap();
        assert_eq!((zero.form, zero.main, zero.remainder), (0.0, 0.0, 0.0));
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let cz = cz_decompose(
                &StoppedFunction::new(random_on(&coll, &mut rng).unwrap(), coll.clone()).unwrap(),
                2.0,
            )
            .unwrap();
            let h = random_on(&coll, &mut rng).unwrap();
            let r = adjoint_remainder_check(&k, &coll, &h, &cz.b, 0, 6, 2.0).unwrap();
            assert!((r.form - r.main - r.remainder).abs() < 1e-12 * r.form.abs().max(1.0));
            worst = worst.max(r.constant);
        }
        assert!(worst.is_finite() && worst < 2f64.powi(8));
    }

    #[test]
    fn decay_profile_sums_to_direct_form() {
        let coll = collection_1d();
        let k = hilbert(6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cz = cz_decompose(
            &StoppedFunction::new(random_on(&coll, &mut rng).unwrap(), coll.clone()).unwrap(),
            1.0,
        )
        .unwrap();
        let h = random_on(&coll, &mut rng).unwrap();
        let omega = SphericalFunction::line(1.0, -1.0, 2.0).unwrap();
        let mode = DecayMode::Rough {
            omega,
            deltas: vec![0.5],
        };
        let rep = decay_diagnostics(&k, &coll, &cz.b, &h, 0, 6, &mode).unwrap();
        assert!(rep.consistent, "{} vs {}", rep.total, rep.direct);
        // |Ω| = 1 never exceeds 2^{δj}: the tail vanishes
        let split = &rep.rough[0];
        assert!(split.v_profile.values().all(|&v| v == 0.0));
        assert!(split.tail_norms.is_empty());
        assert!(split.split_error < 1e-12);
        let zero = decay_diagnostics(
            &k,
            &coll,
            &BadFunction::zero(1, 8),
            &h,
            0,
            6,
            &DecayMode::Plain,
        )
        .unwrap();
        assert!(zero.profile.values().all(|&v| v == 0.0) && zero.total == 0.0);
    }

    #[test]
    fn slope_fit_recovers_geometric_profile() {
        let p: BTreeMap<i32, f64> = (1..8)
            .map(|j| (j, 3.0 * 2f64.powf(-0.7 * j as f64)))
            .collect();
        assert!((fitted_slope(&p).unwrap() + 0.7).abs() < 1e-12);
    }

    #[test]
    fn averaging_operator_obeys_markov() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut k = Patch::zeros(IBox::new([-3, 0], [4, 1]));
        k.data.iter_mut().for_each(|v| *v = 1.0 / 7.0);
        for _ in 0..5 {
            let f = GridFunction::from_fn(1, 8, |_| {
                if rng.gen_bool(0.05) {
                    rng.gen_range(-3.0..3.0)
                } else {
                    0.0
                }
            })
            .unwrap();
            if f.is_zero() {
                continue;
            }
            let tf = GridFunction::new(1, 8, convolve(&k, &f.to_patch(), f.domain()).data).unwrap();
            assert!(weak11_of(&tf, &f).unwrap().value <= 1.0);
        }
    }

    #[test]
    fn hilbert_spike_weak_type_is_stable() {
        let vals: Vec<f64> = [8u32, 10, 12]
            .iter()
            .map(|&m| {
                weak11_diagnostic(
                    &hilbert(m as i32 - 1),
                    &spike(m, 1 << (m - 1)),
                    0,
                    m as i32 - 1,
                )
                .unwrap()
                .value
            })
            .collect();
        let (lo, hi) = vals
            .iter()
            .fold((f64::INFINITY, 0.0f64), |a, &v| (a.0.min(v), a.1.max(v)));
        assert!(hi <= 2.0 * lo, "{vals:?}");
    }
}
