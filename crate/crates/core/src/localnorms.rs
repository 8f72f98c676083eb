//! Norms localized to a stopping collection, the associated
//! Calderón–Zygmund decomposition, and the `L^{q,1} log L` norm on the sphere.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::Serialize;

use crate::dyadic::{Cube, StoppingCollection};
use crate::error::{check_exponent, Error, Result};
use crate::grid::{maximal_function, GridFunction, Patch};
use crate::kernels::SphericalFunction;

/// A grid function paired with a stopping collection, `supp h ⊂ 3Q`.
#[derive(Debug)]
pub struct StoppedFunction {
    h: GridFunction,
    collection: StoppingCollection,
    cache: Mutex<Vec<(u64, f64)>>,
}

impl Clone for StoppedFunction {
    fn clone(&self) -> Self {
        StoppedFunction {
            h: self.h.clone(),
            collection: self.collection.clone(),
            cache: Mutex::new(self.cache.lock().map(|c| c.clone()).unwrap_or_default()),
        }
    }
}

/// `‖h‖_{Y_p}` with the terms that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct YNorm {
    pub value: f64,
    /// `‖h 1_{(sh 𝒬)^c}‖_∞`.
    pub off_shadow: f64,
    /// `max_L min_{L̂} M_p h`.
    pub cube_term: f64,
    /// Members whose `L̂` misses the grid; their terms are dropped.
    pub dropped: Vec<Cube>,
}

impl StoppedFunction {
    pub fn new(h: GridFunction, collection: StoppingCollection) -> Result<Self> {
        if h.dim() != collection.dim() {
            return Err(Error::DimensionMismatch(h.dim(), collection.dim()));
        }
        if h.m() != collection.m() {
            return Err(Error::ExtentMismatch(h.m(), collection.m()));
        }
        let three = collection.top().dilate_cells(3.0);
        let supp = h.support_box();
        if !three.contains_box(&supp) {
            return Err(Error::Support(format!(
                "supp h is not inside 3Q for Q = {}",
                collection.top()
            )));
        }
        Ok(StoppedFunction {
            h,
            collection,
            cache: Mutex::new(Vec::new()),
        })
    }

    pub fn h(&self) -> &GridFunction {
        &self.h
    }

    pub fn collection(&self) -> &StoppingCollection {
        &self.collection
    }

    pub fn y_norm(&self, p: f64) -> Result<f64> {
        let key = p.to_bits();
        if let Some(&(_, v)) = self
            .cache
            .lock()
            .expect("cache lock")
            .iter()
            .find(|(k, _)| *k == key)
        {
            return Ok(v);
        }
        let v = self.y_norm_report(p)?.value;
        self.cache.lock().expect("cache lock").push((key, v));
        Ok(v)
    }

    pub fn y_norm_report(&self, p: f64) -> Result<YNorm> {
        check_exponent(p)?;
        if p.is_infinite() {
            let v = self.h.max_abs();
            return Ok(YNorm {
                value: v,
                off_shadow: v,
                cube_term: 0.0,
                dropped: Vec::new(),
            });
        }
        let sh = self.collection.shadow();
        let off_shadow = self
            .h
            .values()
            .iter()
            .zip(sh.bits())
            .filter(|(_, &b)| !b)
            .fold(0.0f64, |a, (v, _)| a.max(v.abs()));
        let mut cube_term = 0.0f64;
        let mut dropped = Vec::new();
        if !self.collection.is_empty() {
            let mh = maximal_function(&self.h, p)?;
            let dom = self.h.domain();
            for l in self.collection.members() {
                let hat = l.dilate_cells(32.0).intersect(&dom);
                if hat.is_empty() {
                    dropped.push(*l);
                    continue;
                }
                let mn = hat
                    .points()
                    .map(|x| mh.values()[dom.offset(x)])
                    .fold(f64::INFINITY, f64::min);
                cube_term = cube_term.max(mn);
            }
        }
        Ok(YNorm {
            value: off_shadow.max(cube_term),
            off_shadow,
            cube_term,
            dropped,
        })
    }
}

/// `b = Σ_L b_L` with `supp b_L ⊂ L`.
#[derive(Debug, Clone, PartialEq)]
pub struct BadFunction {
    dim: usize,
    m: u32,
    pieces: Vec<(Cube, Patch)>,
    mean_zero: bool,
}

impl BadFunction {
    /// Pieces are clipped to their cubes; `mean_zero` is verified, not assumed.
    pub fn new(dim: usize, m: u32, pieces: Vec<(Cube, Patch)>, mean_zero: bool) -> Result<Self> {
        let mut clipped = Vec::with_capacity(pieces.len());
        for (l, p) in pieces {
            if l.dim() != dim {
                return Err(Error::DimensionMismatch(dim, l.dim()));
            }
            let cells = l.cells();
            let supp = p.support();
            if !cells.contains_box(&supp) {
                return Err(Error::Support(format!("piece escapes its cube {l}")));
            }
            clipped.push((l, p.window(cells)));
        }
        let b = BadFunction {
            dim,
            m,
            pieces: clipped,
            mean_zero,
        };
        if mean_zero {
            if let Some((l, s)) = b.worst_mean() {
                return Err(Error::Support(format!(
                    "piece on {l} has mean residue {s:e}"
                )));
            }
        }
        Ok(b)
    }

    pub fn zero(dim: usize, m: u32) -> Self {
        BadFunction {
            dim,
            m,
            pieces: Vec::new(),
            mean_zero: true,
        }
    }

    /// First piece whose sum exceeds `1e-12 ‖b_L‖_1`.
    fn worst_mean(&self) -> Option<(Cube, f64)> {
        self.pieces.iter().find_map(|(l, p)| {
            let s: f64 = p.data.iter().sum();
            let l1: f64 = p.data.iter().map(|v| v.abs()).sum();
            (s.abs() > 1e-12 * l1).then_some((*l, s))
        })
    }

    pub fn pieces(&self) -> &[(Cube, Patch)] {
        &self.pieces
    }

    pub fn is_mean_zero(&self) -> bool {
        self.mean_zero
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn to_grid(&self) -> GridFunction {
        let mut acc = Patch::zeros(crate::grid::domain_box(self.dim, self.m));
        for (_, p) in &self.pieces {
            for x in p.region.intersect(&acc.region).points() {
                acc.add(x, p.get(x));
            }
        }
        GridFunction::from_patch(self.dim, self.m, &acc).expect("pieces are finite")
    }

    /// `b_s = Σ_{s_L = s} b_L`.
    pub fn by_scale(&self) -> BTreeMap<i32, GridFunction> {
        let mut out: BTreeMap<i32, Vec<(Cube, Patch)>> = BTreeMap::new();
        for (l, p) in &self.pieces {
            out.entry(l.s()).or_default().push((*l, p.clone()));
        }
        out.into_iter()
            .map(|(s, pieces)| {
                let b = BadFunction {
                    dim: self.dim,
                    m: self.m,
                    pieces,
                    mean_zero: self.mean_zero,
                };
                (s, b.to_grid())
            })
            .collect()
    }

    /// Keeps the pieces whose cube satisfies `keep`.
    pub fn filter(&self, keep: impl Fn(&Cube) -> bool) -> BadFunction {
        BadFunction {
            dim: self.dim,
            m: self.m,
            pieces: self
                .pieces
                .iter()
                .filter(|(l, _)| keep(l))
                .cloned()
                .collect(),
            mean_zero: self.mean_zero,
        }
    }

    pub fn scaled(&self, c: f64) -> BadFunction {
        let pieces = self
            .pieces
            .iter()
            .map(|(l, p)| {
                (
                    *l,
                    Patch {
                        region: p.region,
                        data: p.data.iter().map(|v| v * c).collect(),
                    },
                )
            })
            .collect();
        BadFunction {
            dim: self.dim,
            m: self.m,
            pieces,
            mean_zero: self.mean_zero,
        }
    }

    /// `‖b‖_{X_p}`, read as the `Y_p` norm of `b` over the same collection.
    pub fn x_norm(&self, collection: &StoppingCollection, p: f64) -> Result<f64> {
        StoppedFunction::new(self.to_grid(), collection.clone())?.y_norm(p)
    }
}

/// `h = g + b` with its verified bounds.
#[derive(Debug, Clone)]
pub struct CzDecomposition {
    pub g: GridFunction,
    pub b: BadFunction,
    pub p: f64,
    pub h_y: f64,
    /// `‖g‖_{Y_∞} = ‖g‖_∞`.
    pub g_y_inf: f64,
    /// `‖b‖_{Ẋ_p}`.
    pub b_x: f64,
    /// `max_L ⟨h⟩_{p,L}`.
    pub max_avg: f64,
    /// `max |h − g − b|`.
    pub reconstruction_error: f64,
    pub g_bound_holds: bool,
    pub b_bound_holds: bool,
    pub avg_bound_holds: bool,
}

impl CzDecomposition {
    pub fn all_bounds_hold(&self) -> bool {
        self.g_bound_holds && self.b_bound_holds && self.avg_bound_holds
    }
}

/// `g = ⟨h⟩_L` on each member `L`, `h` off the shadow; `b_L = (h − ⟨h⟩_L) 1_L`.
pub fn cz_decompose(h: &StoppedFunction, p: f64) -> Result<CzDecomposition> {
    check_exponent(p)?;
    let f = h.h();
    let dim = f.dim();
    let dom = f.domain();
    let mut g = f.clone();
    let mut pieces = Vec::with_capacity(h.collection().members().len());
    let mut max_avg = 0.0f64;
    for l in h.collection().members() {
        let cells = l.cells();
        let vals: Vec<f64> = cells.points().map(|x| f.values()[dom.offset(x)]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let mut piece = Patch::zeros(cells);
        for (d, v) in piece.data.iter_mut().zip(&vals) {
            *d = v - mean;
        }
        // pin the residue to the last cell so the sum is as close to 0 as rounding allows
        let resid: f64 = piece.data.iter().sum();
        if let Some(last) = piece.data.last_mut() {
            *last -= resid;
        }
        for x in cells.points() {
            g.values_mut()[dom.offset(x)] = mean;
        }
        max_avg = max_avg.max(crate::grid::average(f, p, l)?);
        pieces.push((*l, piece));
    }
    let b = BadFunction::new(dim, f.m(), pieces, true)?;
    let bg = b.to_grid();
    let reconstruction_error = f
        .values()
        .iter()
        .zip(g.values())
        .zip(bg.values())
        .fold(0.0f64, |a, ((h, g), b)| a.max((h - g - b).abs()));

    let h_y = h.y_norm(p)?;
    let g_y_inf = g.max_abs();
    let b_x = b.x_norm(h.collection(), p)?;
    let c = 2f64.powi(5 * dim as i32);
    let slack = 1.0 + 1e-12;
    Ok(CzDecomposition {
        g,
        b,
        p,
        h_y,
        g_y_inf,
        b_x,
        max_avg,
        reconstruction_error,
        g_bound_holds: g_y_inf <= c * h_y * slack,
        b_bound_holds: b_x <= 2.0 * c * h_y * slack,
        avg_bound_holds: max_avg <= c * h_y * slack,
    })
}

/// `q ∫_0^∞ log(e + t) |{|Ω| > t}|^{1/q} dt`, exact for sampled `Ω`.
pub fn orlicz_lorentz_norm(omega: &SphericalFunction, q: f64) -> Result<f64> {
    check_exponent(q)?;
    if q.is_infinite() {
        return Err(Error::Exponent {
            value: q,
            reason: "the Orlicz-Lorentz norm needs q < inf",
        });
    }
    let w = omega.sample_measure();
    let mut v: Vec<f64> = omega.samples().iter().map(|x| x.abs()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    // antiderivative of log(e + t)
    let big_g = |t: f64| {
        let u = std::f64::consts::E + t;
        u * u.ln() - u
    };
    let mut acc = 0.0;
    for k in 0..v.len() {
        let upper = v[k];
        let lower = v.get(k + 1).copied().unwrap_or(0.0);
        if upper > lower {
            acc += ((k + 1) as f64 * w).powf(1.0 / q) * (big_g(upper) - big_g(lower));
        }
    }
    Ok(q * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dyadic::{validate_stopping, whitney_cover, StoppingOptions};
    use crate::grid::{CellMask, IBox};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn collection_from(e: &CellMask) -> StoppingCollection {
        let top = Cube::domain(e.dim(), e.m()).unwrap();
        validate_stopping(
            &top,
            &whitney_cover(e),
            e.m(),
            StoppingOptions { shadow_floor: 1 },
        )
        .unwrap()
        .unwrap()
    }

    fn random_collection(rng: &mut ChaCha8Rng, dim: usize, m: u32) -> StoppingCollection {
        let n = 1i64 << m;
        let mut e = CellMask::empty(dim, m).unwrap();
        for _ in 0..rng.gen_range(0..4) {
            let a = [
                rng.gen_range(0..n),
                if dim == 2 { rng.gen_range(0..n) } else { 0 },
            ];
            let len = rng.gen_range(1..n / 2);
            let hi1 = if dim == 2 { a[1] + len } else { 1 };
            e.insert_box(&IBox::new(a, [a[0] + len, hi1]));
        }
        collection_from(&e)
    }

    fn random_h(rng: &mut ChaCha8Rng, dim: usize, m: u32) -> GridFunction {
        GridFunction::from_fn(dim, m, |_| {
            if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(-3.0..3.0)
            }
        })
        .unwrap()
    }

    #[test]
    fn empty_collection_gives_sup_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_h(&mut rng, 1, 6);
        let sc = collection_from(&CellMask::empty(1, 6).unwrap());
        let sf = StoppedFunction::new(h.clone(), sc).unwrap();
        for p in [1.0, 2.0, 5.0, f64::INFINITY] {
            assert_eq!(sf.y_norm(p).unwrap(), h.max_abs());
        }
        let cz = cz_decompose(&sf, 2.0).unwrap();
        assert_eq!(cz.g, h);
        assert!(cz.b.to_grid().is_zero());
    }

    #[test]
    fn constant_on_domain_has_unit_norm() {
        let mut e = CellMask::empty(1, 8).unwrap();
        e.insert_box(&IBox::new([40, 0], [200, 1]));
        let sc = collection_from(&e);
        let h = GridFunction::from_fn(1, 8, |_| 1.0).unwrap();
        let sf = StoppedFunction::new(h, sc).unwrap();
        for p in [1.0, 2.0, 3.0] {
            assert!((sf.y_norm(p).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn support_must_sit_in_triple_top() {
        let top = Cube::new(1, 2, [16, 0]).unwrap();
        let sc = validate_stopping(&top, &[], 6, StoppingOptions::default())
            .unwrap()
            .unwrap();
        let h = GridFunction::from_fn(1, 6, |p| if p[0] == 40 { 1.0 } else { 0.0 }).unwrap();
        assert!(StoppedFunction::new(h, sc).is_err());
    }

    #[test]
    fn y_norm_matches_compositional_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let sc = random_collection(&mut rng, 2, 5);
            let h = random_h(&mut rng, 2, 5);
            let mh = maximal_function(&h, 2.0).unwrap();
            let mut oracle = 0.0f64;
            for x in h.domain().points() {
                if !sc.shadow().contains(x) {
                    oracle = oracle.max(h.get(x).abs());
                }
            }
            for l in sc.members() {
                let d = l.dilate(32.0);
                let mut mn = f64::INFINITY;
                for x in h.domain().points() {
                    if d.contains_cell(x) {
                        mn = mn.min(mh.get(x));
                    }
                }
                oracle = oracle.max(mn);
            }
            let sf = StoppedFunction::new(h, sc).unwrap();
            assert_eq!(sf.y_norm(2.0).unwrap(), oracle);
        }
    }

    #[test]
    fn locally_constant_has_no_bad_part() {
        let mut e = CellMask::empty(1, 9).unwrap();
        e.insert_box(&IBox::new([100, 0], [400, 1]));
        let sc = collection_from(&e);
        let members = sc.members().to_vec();
        let h = GridFunction::from_fn(1, 9, |p| {
            members
                .iter()
                .position(|l| l.cells().contains(p))
                .map_or(0.5, |i| i as f64)
        })
        .unwrap();
        let cz = cz_decompose(&StoppedFunction::new(h.clone(), sc).unwrap(), 2.0).unwrap();
        assert!(cz.b.to_grid().is_zero());
        assert_eq!(cz.g, h);
    }

    #[test]
    fn decomposition_reconstructs_and_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..30 {
            let (dim, m) = if trial % 2 == 0 { (1, 8) } else { (2, 5) };
            let sc = random_collection(&mut rng, dim, m);
            let h = random_h(&mut rng, dim, m);
            let sf = StoppedFunction::new(h, sc.clone()).unwrap();
            let cz = cz_decompose(&sf, 1.5).unwrap();
            assert!(cz.reconstruction_error <= 1e-12);
            assert!(cz.all_bounds_hold(), "{cz:?}");
            for (_, piece) in cz.b.pieces() {
                let l1: f64 = piece.data.iter().map(|v| v.abs()).sum();
                assert!(piece.data.iter().sum::<f64>().abs() <= 1e-12 * l1.max(f64::MIN_POSITIVE));
            }
            // idempotent on the good part
            let again =
                cz_decompose(&StoppedFunction::new(cz.g.clone(), sc).unwrap(), 1.5).unwrap();
            assert!(again.b.to_grid().max_abs() <= 1e-12 * cz.g.max_abs().max(1.0));
        }
    }

    #[test]
    fn orlicz_lorentz_constant_circle() {
        let om = SphericalFunction::circle(vec![1.0; 1024], 2.0, false).unwrap();
        // closed form of ∫_0^1 log(e+t) dt
        let e = std::f64::consts::E;
        let int = (e + 1.0) * (e + 1.0).ln() - (e + 1.0) - (e * e.ln() - e);
        for q in [1.0, 2.0, 3.5] {
            let expect = q * (2.0 * std::f64::consts::PI).powf(1.0 / q) * int;
            let got = orlicz_lorentz_norm(&om, q).unwrap();
            assert!((got - expect).abs() <= 1e-12 * expect);
        }
        // oracle by composite Simpson on the closed-form integrand
        let simpson = {
            let n = 20_000;
            let h = 1.0 / n as f64;
            let f = |t: f64| (e + t).ln();
            let mut s = f(0.0) + f(1.0);
            for k in 1..n {
                s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
            }
            s * h / 3.0
        };
        assert!((simpson - int).abs() < 1e-12);
        assert!(orlicz_lorentz_norm(&om, f64::INFINITY).is_err());
        assert!(orlicz_lorentz_norm(&om, 0.5).is_err());
    }

    #[test]
    fn orlicz_lorentz_two_point_sphere() {
        let om = SphericalFunction::line(1.0, -1.0, 2.0).unwrap();
        let e = std::f64::consts::E;
        let int = (e + 1.0) * (e + 1.0).ln() - (e + 1.0) - (e * e.ln() - e);
        let q = 2.0;
        assert!((orlicz_lorentz_norm(&om, q).unwrap() - q * 2f64.sqrt() * int).abs() < 1e-13);
        let zero = SphericalFunction::line(0.0, 0.0, 2.0).unwrap();
        assert_eq!(orlicz_lorentz_norm(&zero, 2.0).unwrap(), 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lq_embeds_in_orlicz_lorentz(vals in proptest::collection::vec(-50.0f64..50.0, 64), q in 1.0f64..6.0) {
                let om = SphericalFunction::circle(vals, q, false).unwrap();
                let lq = om.lq_norm(q);
                prop_assert!(lq <= orlicz_lorentz_norm(&om, q).unwrap() + 1e-8);
            }
        }
    }
}
