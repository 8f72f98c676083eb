//! Iterative construction of a sparse collection dominating the truncated
//! forms: exceptional sets, Whitney cubes, stopping collections per cube,
//! descent into the cubes, and a per-level certificate.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dyadic::{validate_stopping, whitney_cover, Cube, StoppingOptions, Violation};
use crate::error::{check_exponent, Error, Result};
use crate::forms::MeasuredBox;
use crate::grid::{box_average, maximal_power_local, CellMask, GridFunction, IBox};
use crate::kernels::KernelFamily;

/// `E_Q = {x ∈ 3Q : max_j M_{p_j}(f_j 1_{3Q})(x) / ⟨f_j⟩_{p_j,3Q} > λ}`.
pub fn exceptional_set(
    q: &Cube,
    f1: &GridFunction,
    f2: &GridFunction,
    p1: f64,
    p2: f64,
    lambda: f64,
) -> Result<CellMask> {
    f1.same_grid(f2)?;
    check_exponent(p1)?;
    check_exponent(p2)?;
    if p1.is_infinite() || p2.is_infinite() {
        return Err(Error::Exponent {
            value: f64::INFINITY,
            reason: "exceptional sets need finite exponents",
        });
    }
    let mut out = CellMask::empty(f1.dim(), f1.m())?;
    let dom = f1.domain();
    let three = q.dilate_cells(3.0);
    let region = three.intersect(&dom);
    if region.is_empty() {
        return Ok(out);
    }
    let measure = q.measure() * 3f64.powi(f1.dim() as i32);
    let s_max = (q.s() + 2).min(f1.m() as i32) as u32;
    let mut ratio = vec![0.0f64; region.volume() as usize];
    for (f, p) in [(f1, p1), (f2, p2)] {
        let avg = box_average(f, p, &region, measure);
        if avg == 0.0 {
            continue;
        }
        let pow = f.power_patch(p, region);
        let mp = maximal_power_local(&pow, region, s_max, f.dim());
        for (r, v) in ratio.iter_mut().zip(&mp.data) {
            let m = if p == 1.0 { *v } else { v.powf(1.0 / p) };
            *r = r.max(m / avg);
        }
    }
    for (x, r) in region.points().zip(&ratio) {
        if *r > lambda {
            out.insert(x);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsifyOptions {
    /// Threshold; `None` means `2^{d+3}`.
    pub lambda: Option<f64>,
    /// Number of λ doublings allowed after a failed attempt.
    pub max_retries: u32,
}

impl Default for SparsifyOptions {
    fn default() -> Self {
        SparsifyOptions {
            lambda: None,
            max_retries: 2,
        }
    }
}

pub fn default_lambda(dim: usize) -> f64 {
    2f64.powi(dim as i32 + 3)
}

/// Cubes `Q ∈ 𝒯` with disjoint `F_Q ⊂ Q`; the sparse family is `{3Q}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCollection {
    pub dim: usize,
    pub m: u32,
    /// The undilated cubes `Q`.
    pub cubes: Vec<Cube>,
    /// Generation of each cube.
    pub levels: Vec<usize>,
    /// `F_Q` as flat grid indices.
    #[serde(skip)]
    pub f_sets: Vec<Vec<u32>>,
    /// `min |F_Q| / |Q|`.
    pub eta: f64,
    /// The same sets against `|3Q|`: `η 3^{−d}` at worst.
    pub eta_dilated: f64,
    /// Cubes per generation.
    pub generation_sizes: Vec<usize>,
}

impl SparseCollection {
    /// Hand-assembled collection; `η` is computed from the sets.
    pub fn from_parts(dim: usize, m: u32, cubes: Vec<Cube>, f_sets: Vec<Vec<u32>>) -> Result<Self> {
        if cubes.len() != f_sets.len() {
            return Err(Error::Invalid("one F set per cube is required".into()));
        }
        let levels = vec![0; cubes.len()];
        let mut s = SparseCollection {
            dim,
            m,
            generation_sizes: vec![cubes.len()],
            cubes,
            levels,
            f_sets,
            eta: 0.0,
            eta_dilated: 0.0,
        };
        s.eta = s.measured_eta();
        s.eta_dilated = s.measured_eta_dilated();
        Ok(s)
    }

    /// `{3Q₀}` with `F = Q₀`.
    pub fn single(q0: &Cube, m: u32) -> Result<Self> {
        let dom = crate::grid::domain_box(q0.dim(), m);
        let f: Vec<u32> = q0
            .cells()
            .intersect(&dom)
            .points()
            .map(|p| dom.offset(p) as u32)
            .collect();
        SparseCollection::from_parts(q0.dim(), m, vec![*q0], vec![f])
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// The dilates `3Q` with measure `3^d |Q|`.
    pub fn boxes(&self) -> Vec<MeasuredBox> {
        self.cubes
            .iter()
            .map(|q| MeasuredBox::dilate(q, 3.0))
            .collect()
    }

    fn measured_eta(&self) -> f64 {
        self.cubes
            .iter()
            .zip(&self.f_sets)
            .map(|(q, f)| f.len() as f64 / q.measure())
            .fold(1.0f64, f64::min)
    }

    fn measured_eta_dilated(&self) -> f64 {
        let c = 3f64.powi(self.dim as i32);
        self.cubes
            .iter()
            .zip(&self.f_sets)
            .map(|(q, f)| f.len() as f64 / (c * q.measure()))
            .fold(1.0f64, f64::min)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let f_sizes: Vec<usize> = self.f_sets.iter().map(Vec::len).collect();
        let mut v = serde_json::to_value(self).expect("serializable");
        v["f_sizes"] = serde_json::json!(f_sizes);
        v
    }
}

/// Outcome of re-checking a sparse collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub disjoint: bool,
    /// Two cubes whose `F` sets meet.
    pub overlap: Option<(Cube, Cube)>,
    pub inside: bool,
    /// Cube whose `F` set leaves it.
    pub escape: Option<Cube>,
    pub eta: f64,
    pub eta_dilated: f64,
    pub eta_certified: bool,
}

impl SparsityReport {
    pub fn passed(&self) -> bool {
        self.disjoint && self.inside && self.eta_certified
    }
}

/// Re-checks disjointness and containment of the `F_Q` and recomputes `η`.
pub fn verify_sparsity(s: &SparseCollection) -> SparsityReport {
    let dom = crate::grid::domain_box(s.dim, s.m);
    let mut owner = vec![u32::MAX; dom.volume() as usize];
    let mut overlap = None;
    let mut escape = None;
    for (i, (q, f)) in s.cubes.iter().zip(&s.f_sets).enumerate() {
        let cells = q.cells();
        for &k in f {
            let k = k as usize;
            if k >= owner.len() {
                escape.get_or_insert(*q);
                continue;
            }
            let p = [k as i64 / dom.len(1), k as i64 % dom.len(1)];
            if !cells.contains(p) {
                escape.get_or_insert(*q);
            }
            if owner[k] != u32::MAX && overlap.is_none() {
                overlap = Some((s.cubes[owner[k] as usize], *q));
            }
            owner[k] = i as u32;
        }
    }
    let eta = s.measured_eta();
    SparsityReport {
        disjoint: overlap.is_none(),
        overlap,
        inside: escape.is_none(),
        escape,
        eta,
        eta_dilated: s.measured_eta_dilated(),
        eta_certified: eta >= s.eta * (1.0 - 1e-15),
    }
}

/// Per-level audit data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelCertificate {
    pub level: usize,
    /// Active cubes of this generation.
    pub cubes: Vec<Cube>,
    /// `|E_{k+1}|`.
    pub exceptional_measure: usize,
    /// `|Q ∩ E_{k+1}| / |Q|` per active cube.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// `−log₂(max ratio)/d`, infinite when `E_{k+1} ∩ Q = ∅` for all `Q`.
    pub theta_effective: f64,
    /// `E_{k+1} ⊂ E_k`.
    pub nested: bool,
    /// Whitney cubes of `E_{k+1}` (with unit completions).
    pub whitney_count: usize,
    /// Whitney cubes inside no active cube (never descended into).
    pub orphans: usize,
    /// `7L ∩ 7L' ≠ ∅ ⇒ L ∼ L'` over all pairs of the next generation.
    pub neighbor_property: bool,
    /// `{L ⊂ 3Q} = {L ∩ 3Q ≠ ∅}` for every active `Q`.
    pub membership_equal: bool,
    /// Every per-cube stopping collection validated.
    pub stopping_valid: bool,
    /// Whether some 9L of the next generation reaches the grid edge.
    pub touches_boundary: bool,
    pub sigma: i32,
    pub wall_ms: f64,
    #[serde(skip)]
    pub exceptional: Option<CellMask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationCertificate {
    pub lambda: f64,
    pub retries: u32,
    pub degenerate: bool,
    pub levels: Vec<LevelCertificate>,
}

impl IterationCertificate {
    /// Every hard per-level invariant held.
    pub fn all_valid(&self) -> bool {
        self.levels
            .iter()
            .all(|l| l.nested && l.neighbor_property && l.membership_equal && l.stopping_valid)
    }

    /// `σ_k` strictly decreasing.
    pub fn scales_decrease(&self) -> bool {
        self.levels.windows(2).all(|w| w[1].sigma < w[0].sigma)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }

    /// Writes `E_ℓ` masks as `level_<ℓ>.pbm` into `dir`, with `comment` as a
    /// PBM comment line when given.
    pub fn write_trace(
        &self,
        dir: &Path,
        comment: Option<&str>,
    ) -> Result<Vec<std::path::PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for l in &self.levels {
            if let Some(e) = &l.exceptional {
                let p = dir.join(format!("level_{}.pbm", l.level + 1));
                let mut buf = Vec::new();
                e.write_pbm(&mut buf)?;
                if let Some(c) = comment {
                    // the magic number line is "P1\n"
                    buf.splice(3..3, format!("# {c}\n").into_bytes());
                }
                std::fs::write(&p, buf)?;
                paths.push(p);
            }
        }
        Ok(paths)
    }
}

/// Why an attempt was abandoned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Abort {
    /// `|Q ∩ E_{k+1}| > |Q|/2`.
    LargeExceptionalSet {
        level: usize,
        cube: Cube,
        ratio: f64,
    },
    /// A per-cube stopping collection failed an axiom.
    Stopping {
        level: usize,
        top: Cube,
        violation: Violation,
    },
    /// A structural invariant of the recursion failed.
    Invariant { level: usize, what: String },
}

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Abort::LargeExceptionalSet { level, cube, ratio } => {
                write!(f, "level {level}: |Q ∩ E|/|Q| = {ratio:.3} > 1/2 at {cube}")
            }
            Abort::Stopping {
                level,
                top,
                violation,
            } => write!(f, "level {level}: collection under {top}: {violation}"),
            Abort::Invariant { level, what } => write!(f, "level {level}: {what}"),
        }
    }
}

/// Failure after all retries, with each attempt's λ and reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsifyFailure {
    pub attempts: Vec<(f64, Abort)>,
}

pub type SparsifyOutcome =
    std::result::Result<(SparseCollection, IterationCertificate), SparsifyFailure>;

/// Builds the sparse collection for `(f₁, f₂)`, doubling λ on failure.
pub fn sparsify(
    k: &KernelFamily,
    f1: &GridFunction,
    f2: &GridFunction,
    p1: f64,
    p2: f64,
    opts: SparsifyOptions,
) -> Result<SparsifyOutcome> {
    f1.same_grid(f2)?;
    if k.dim() != f1.dim() {
        return Err(Error::DimensionMismatch(k.dim(), f1.dim()));
    }
    let (s_lo, s_hi) = k.scales();
    if s_hi > f1.m() as i32 {
        return Err(Error::Invalid(format!(
            "kernel scale {s_hi} exceeds the grid exponent {}",
            f1.m()
        )));
    }
    let mut lambda = opts.lambda.unwrap_or_else(|| default_lambda(f1.dim()));
    if !(lambda > 1.0) {
        return Err(Error::Invalid(format!(
            "threshold λ = {lambda} must exceed 1"
        )));
    }
    let q0 = Cube::domain(f1.dim(), f1.m())?;
    if f1.is_zero() || f2.is_zero() {
        let cert = IterationCertificate {
            lambda,
            retries: 0,
            degenerate: true,
            levels: Vec::new(),
        };
        return Ok(Ok((SparseCollection::single(&q0, f1.m())?, cert)));
    }
    let mut attempts = Vec::new();
    for retry in 0..=opts.max_retries {
        match attempt(&q0, s_lo, f1, f2, p1, p2, lambda)? {
            Ok((sc, mut cert)) => {
                cert.retries = retry;
                return Ok(Ok((sc, cert)));
            }
            Err(a) => attempts.push((lambda, a)),
        }
        lambda *= 2.0;
    }
    Ok(Err(SparsifyFailure { attempts }))
}

type Attempt = std::result::Result<(SparseCollection, IterationCertificate), Abort>;

fn attempt(
    q0: &Cube,
    s_lo: i32,
    f1: &GridFunction,
    f2: &GridFunction,
    p1: f64,
    p2: f64,
    lambda: f64,
) -> Result<Attempt> {
    let dim = f1.dim();
    let m = f1.m();
    let dom = f1.domain();
    let mut current: Vec<Cube> = vec![*q0];
    let mut prev_e = CellMask::from_bits(dim, m, vec![true; dom.volume() as usize])?;
    let mut tree: Vec<(Cube, usize, Vec<u32>)> = Vec::new();
    let mut levels = Vec::new();
    let mut level = 0usize;
    loop {
        let active: Vec<Cube> = current.iter().copied().filter(|q| q.s() >= s_lo).collect();
        if active.is_empty() {
            break;
        }
        let t0 = Instant::now();
        let mut e = CellMask::empty(dim, m)?;
        for q in &active {
            e.union_with(&exceptional_set(q, f1, f2, p1, p2, lambda)?);
        }
        let nested = e.is_subset_of(&prev_e);
        if !nested {
            return Ok(Err(Abort::Invariant {
                level,
                what: "E_{k+1} is not contained in E_k".into(),
            }));
        }
        let count = e.prefix();
        let mut ratios = Vec::with_capacity(active.len());
        for q in &active {
            let r = count.sum(&q.cells()) / q.measure();
            if r > 0.5 {
                return Ok(Err(Abort::LargeExceptionalSet {
                    level,
                    cube: *q,
                    ratio: r,
                }));
            }
            ratios.push(r);
        }

        let whitney = whitney_cover(&e);
        let neighbor_property = separation_holds(&whitney);
        if !neighbor_property {
            return Ok(Err(Abort::Invariant {
                level,
                what: "7L ∩ 7L' ≠ ∅ for non-neighbors".into(),
            }));
        }
        let mut membership_equal = true;
        for q in &active {
            let three = q.dilate_cells(3.0);
            let inside: Vec<Cube> = whitney
                .iter()
                .copied()
                .filter(|l| three.contains_box(&l.cells()))
                .collect();
            let meets = whitney
                .iter()
                .filter(|l| !three.intersect(&l.cells()).is_empty())
                .count();
            membership_equal &= meets == inside.len();
            match validate_stopping(q, &inside, m, StoppingOptions { shadow_floor: 1 })? {
                Ok(_) => {}
                Err(violation) => {
                    return Ok(Err(Abort::Stopping {
                        level,
                        top: *q,
                        violation,
                    }))
                }
            }
        }
        if !membership_equal {
            return Ok(Err(Abort::Invariant {
                level,
                what: "{L ⊂ 3Q} differs from {L ∩ 3Q ≠ ∅}".into(),
            }));
        }

        for q in &active {
            let f: Vec<u32> = q
                .cells()
                .intersect(&dom)
                .points()
                .filter(|&p| !e.contains(p))
                .map(|p| dom.offset(p) as u32)
                .collect();
            tree.push((*q, level, f));
        }
        let next: Vec<Cube> = whitney
            .iter()
            .copied()
            .filter(|l| active.iter().any(|q| q.contains_cube(l)))
            .collect();
        let orphans = whitney.len() - next.len();
        let sigma = active.iter().map(Cube::s).max().expect("non-empty");
        let max_ratio = ratios.iter().copied().fold(0.0f64, f64::max);
        levels.push(LevelCertificate {
            level,
            cubes: active.clone(),
            exceptional_measure: e.count(),
            ratios,
            max_ratio,
            theta_effective: if max_ratio > 0.0 {
                -max_ratio.log2() / dim as f64
            } else {
                f64::INFINITY
            },
            nested,
            whitney_count: whitney.len(),
            orphans,
            neighbor_property,
            membership_equal,
            stopping_valid: true,
            touches_boundary: crate::dyadic::touches_boundary(&whitney, dim, m),
            sigma,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            exceptional: Some(e.clone()),
        });
        if let Some(w) = levels.windows(2).last() {
            if w[1].sigma >= w[0].sigma {
                return Ok(Err(Abort::Invariant {
                    level,
                    what: "maximal scale did not decrease".into(),
                }));
            }
        }
        current = next;
        prev_e = e;
        level += 1;
    }

    let generation_sizes = levels.iter().map(|l| l.cubes.len()).collect();
    let (cubes, rest): (Vec<Cube>, Vec<(usize, Vec<u32>)>) =
        tree.into_iter().map(|(q, l, f)| (q, (l, f))).unzip();
    let (lvls, f_sets): (Vec<usize>, Vec<Vec<u32>>) = rest.into_iter().unzip();
    let mut sc = SparseCollection {
        dim,
        m,
        cubes,
        levels: lvls,
        f_sets,
        eta: 0.0,
        eta_dilated: 0.0,
        generation_sizes,
    };
    sc.eta = sc.measured_eta();
    sc.eta_dilated = sc.measured_eta_dilated();
    let cert = IterationCertificate {
        lambda,
        retries: 0,
        degenerate: false,
        levels,
    };
    Ok(Ok((sc, cert)))
}

/// `|s_L − s_L'| ≥ 8 ⇒ 7L ∩ 7L' = ∅` over all pairs.
fn separation_holds(cubes: &[Cube]) -> bool {
    cubes.iter().filter(|c| c.s() >= 8).all(|big| {
        let seven = big.dilate_cells(7.0);
        cubes
            .iter()
            .filter(|c| c.s() <= big.s() - 8)
            .all(|small| seven.intersect(&small.dilate_cells(7.0)).is_empty())
    })
}

/// Exceptional-set measure bound `|E_Q| / |3Q|` for a single cube.
pub fn exceptional_fraction(q: &Cube, e: &CellMask) -> f64 {
    let three: IBox = q.dilate_cells(3.0);
    e.count_in(&three) as f64 / (q.measure() * 3f64.powi(q.dim() as i32))
}
