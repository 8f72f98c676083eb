//! Grid functions on `[0, 2^m)^d ∩ ℤ^d`, their L^p norms, cube averages and
//! the Hardy–Littlewood maximal operator `M_p`.
//!
//! Every array in the crate is stored with two axes; in dimension one the
//! second axis is degenerate (extent 1, coordinate 0). Cells have unit
//! measure and functions are extended by zero off the domain.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::dyadic::Cube;
use crate::error::{check_exponent, Error, Result};

/// Integer lattice point; the second coordinate is 0 in dimension one.
pub type Point = [i64; 2];

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(Error::Dimension(dim))
    }
}

/// Half-open integer box of cells `[lo, hi)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IBox {
    pub lo: Point,
    pub hi: Point,
}

impl IBox {
    pub fn new(lo: Point, hi: Point) -> Self {
        IBox { lo, hi }
    }

    pub fn empty() -> Self {
        IBox {
            lo: [0, 0],
            hi: [0, 0],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.hi[0] <= self.lo[0] || self.hi[1] <= self.lo[1]
    }

    pub fn len(&self, axis: usize) -> i64 {
        (self.hi[axis] - self.lo[axis]).max(0)
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.len(0) as usize, self.len(1) as usize]
    }

    pub fn volume(&self) -> i64 {
        self.len(0) * self.len(1)
    }

    pub fn intersect(&self, other: &IBox) -> IBox {
        IBox {
            lo: [self.lo[0].max(other.lo[0]), self.lo[1].max(other.lo[1])],
            hi: [self.hi[0].min(other.hi[0]), self.hi[1].min(other.hi[1])],
        }
    }

    pub fn hull(&self, other: &IBox) -> IBox {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        IBox {
            lo: [self.lo[0].min(other.lo[0]), self.lo[1].min(other.lo[1])],
            hi: [self.hi[0].max(other.hi[0]), self.hi[1].max(other.hi[1])],
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.lo[0] && p[0] < self.hi[0] && p[1] >= self.lo[1] && p[1] < self.hi[1]
    }

    pub fn contains_box(&self, other: &IBox) -> bool {
        other.is_empty()
            || (other.lo[0] >= self.lo[0]
                && other.hi[0] <= self.hi[0]
                && other.lo[1] >= self.lo[1]
                && other.hi[1] <= self.hi[1])
    }

    /// Grow along the first `dim` axes by `r` cells on each side.
    pub fn grow(&self, r: i64, dim: usize) -> IBox {
        let mut b = *self;
        for k in 0..dim {
            b.lo[k] -= r;
            b.hi[k] += r;
        }
        b
    }

    /// Row-major index of `p` relative to this box.
    #[inline]
    pub fn offset(&self, p: Point) -> usize {
        ((p[0] - self.lo[0]) * self.len(1) + (p[1] - self.lo[1])) as usize
    }

    pub fn points(self) -> impl Iterator<Item = Point> {
        let b = self;
        (b.lo[0]..b.hi[0].max(b.lo[0]))
            .flat_map(move |x| (b.lo[1]..b.hi[1].max(b.lo[1])).map(move |y| [x, y]))
    }
}

/// Dense real array over an integer box; values off the box read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub region: IBox,
    pub data: Vec<f64>,
}

impl Patch {
    pub fn zeros(region: IBox) -> Self {
        let n = if region.is_empty() {
            0
        } else {
            region.volume() as usize
        };
        Patch {
            region,
            data: vec![0.0; n],
        }
    }

    #[inline]
    pub fn get(&self, p: Point) -> f64 {
        if self.region.contains(p) {
            self.data[self.region.offset(p)]
        } else {
            0.0
        }
    }

    #[inline]
    pub fn add(&mut self, p: Point, v: f64) {
        let i = self.region.offset(p);
        self.data[i] += v;
    }

    /// Copy of the patch restricted to `region` (cells off the original read 0).
    pub fn window(&self, region: IBox) -> Patch {
        let mut out = Patch::zeros(region);
        let common = region.intersect(&self.region);
        for p in common.points() {
            let i = region.offset(p);
            out.data[i] = self.data[self.region.offset(p)];
        }
        out
    }

    /// Smallest box containing every nonzero entry.
    pub fn support(&self) -> IBox {
        let mut b = IBox::empty();
        for p in self.region.points() {
            if self.data[self.region.offset(p)] != 0.0 {
                b = b.hull(&IBox::new(p, [p[0] + 1, p[1] + 1]));
            }
        }
        b
    }
}

/// Real values on the grid `[0, 2^m)^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    dim: usize,
    m: u32,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(dim: usize, m: u32, values: Vec<f64>) -> Result<Self> {
        check_dim(dim)?;
        if m > 24 {
            return Err(Error::Invalid(format!(
                "grid exponent m = {m} is too large"
            )));
        }
        let expected = 1usize << (m as usize * dim);
        if values.len() != expected {
            return Err(Error::Length {
                expected,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(GridFunction { dim, m, values })
    }

    pub fn zeros(dim: usize, m: u32) -> Result<Self> {
        check_dim(dim)?;
        GridFunction::new(dim, m, vec![0.0; 1usize << (m as usize * dim)])
    }

    pub fn from_fn(dim: usize, m: u32, f: impl FnMut(Point) -> f64) -> Result<Self> {
        check_dim(dim)?;
        let dom = domain_box(dim, m);
        let values = dom.points().map(f).collect();
        GridFunction::new(dim, m, values)
    }

    pub(crate) fn from_patch(dim: usize, m: u32, patch: &Patch) -> Result<Self> {
        let dom = domain_box(dim, m);
        let w = patch.window(dom);
        GridFunction::new(dim, m, w.data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    /// Points per axis, `2^m`.
    pub fn side(&self) -> i64 {
        1i64 << self.m
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn domain(&self) -> IBox {
        domain_box(self.dim, self.m)
    }

    #[inline]
    pub fn index(&self, p: Point) -> Option<usize> {
        let d = self.domain();
        d.contains(p).then(|| d.offset(p))
    }

    /// Value at `p`, zero off the domain.
    #[inline]
    pub fn get(&self, p: Point) -> f64 {
        self.index(p).map_or(0.0, |i| self.values[i])
    }

    pub fn set(&mut self, p: Point, v: f64) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::NonFinite(0));
        }
        let i = self.index(p).ok_or(Error::OutsideDomain)?;
        self.values[i] = v;
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GridFunction> {
        GridFunction::new(
            self.dim,
            self.m,
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scaled(&self, c: f64) -> GridFunction {
        GridFunction {
            dim: self.dim,
            m: self.m,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn same_grid(&self, other: &GridFunction) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        if self.m != other.m {
            return Err(Error::ExtentMismatch(self.m, other.m));
        }
        Ok(())
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        GridFunction::new(self.dim, self.m, values)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        GridFunction::new(self.dim, self.m, values)
    }

    pub fn dot(&self, other: &GridFunction) -> Result<f64> {
        self.same_grid(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// `f · 1_B`, with `B` an integer box.
    pub fn restrict(&self, b: &IBox) -> GridFunction {
        let dom = self.domain();
        let mut out = vec![0.0; self.values.len()];
        for p in b.intersect(&dom).points() {
            let i = dom.offset(p);
            out[i] = self.values[i];
        }
        GridFunction {
            dim: self.dim,
            m: self.m,
            values: out,
        }
    }

    /// `f · 1_{mask}`.
    pub fn restrict_mask(&self, mask: &CellMask) -> Result<GridFunction> {
        if mask.dim() != self.dim || mask.m() != self.m {
            return Err(Error::Invalid(
                "mask grid differs from function grid".into(),
            ));
        }
        let values = self
            .values
            .iter()
            .zip(mask.bits())
            .map(|(&v, &b)| if b { v } else { 0.0 })
            .collect();
        GridFunction::new(self.dim, self.m, values)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Smallest box containing the support, empty for the zero function.
    pub fn support_box(&self) -> IBox {
        self.to_patch().support()
    }

    pub fn to_patch(&self) -> Patch {
        Patch {
            region: self.domain(),
            data: self.values.clone(),
        }
    }

    /// Patch of `|f|^p` over `region ∩ domain` (zero elsewhere in `region`).
    pub(crate) fn power_patch(&self, p: f64, region: IBox) -> Patch {
        let mut out = Patch::zeros(region);
        let dom = self.domain();
        for q in region.intersect(&dom).points() {
            let v = self.values[dom.offset(q)].abs();
            out.data[region.offset(q)] = if p == 1.0 { v } else { v.powf(p) };
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    // --- serialization -------------------------------------------------

    /// Binary layout: little-endian `u32` dim, `u32` m, then row-major `f64` values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&self.m.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let dim = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4)?;
        let m = u32::from_le_bytes(b4);
        check_dim(dim)?;
        if m > 24 {
            return Err(Error::Parse(format!("implausible grid exponent {m}")));
        }
        let n = 1usize << (m as usize * dim);
        let mut values = Vec::with_capacity(n);
        let mut b8 = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        GridFunction::new(dim, m, values)
    }

    /// CSV layout: a `dim,m` header line, then one line per row of values
    /// (a single line in dimension one).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{},{}", self.dim, self.m)?;
        let row = if self.dim == 2 {
            self.side() as usize
        } else {
            self.values.len()
        };
        for chunk in self.values.chunks(row) {
            let line: Vec<String> = chunk.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty grid file".into()))??;
        let mut parts = header.split(',').map(str::trim);
        let parse_usize = |s: Option<&str>| -> Result<usize> {
            s.ok_or_else(|| Error::Parse("short header".into()))?
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("header: {e}")))
        };
        let dim = parse_usize(parts.next())?;
        let m = parse_usize(parts.next())? as u32;
        let mut values = Vec::new();
        for line in lines {
            let line = line?;
            for tok in line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
            {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("value {tok:?}: {e}")))?,
                );
            }
        }
        GridFunction::new(dim, m, values)
    }
}

pub(crate) fn domain_box(dim: usize, m: u32) -> IBox {
    let n = 1i64 << m;
    IBox::new([0, 0], [n, if dim == 2 { n } else { 1 }])
}

/// Boolean set of grid cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellMask {
    dim: usize,
    m: u32,
    bits: Vec<bool>,
}

impl CellMask {
    pub fn empty(dim: usize, m: u32) -> Result<Self> {
        check_dim(dim)?;
        Ok(CellMask {
            dim,
            m,
            bits: vec![false; 1usize << (m as usize * dim)],
        })
    }

    pub fn from_bits(dim: usize, m: u32, bits: Vec<bool>) -> Result<Self> {
        check_dim(dim)?;
        let expected = 1usize << (m as usize * dim);
        if bits.len() != expected {
            return Err(Error::Length {
                expected,
                got: bits.len(),
            });
        }
        Ok(CellMask { dim, m, bits })
    }

    pub fn from_fn(dim: usize, m: u32, f: impl FnMut(Point) -> bool) -> Result<Self> {
        check_dim(dim)?;
        let bits = domain_box(dim, m).points().map(f).collect();
        CellMask::from_bits(dim, m, bits)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn domain(&self) -> IBox {
        domain_box(self.dim, self.m)
    }

    pub fn contains(&self, p: Point) -> bool {
        let d = self.domain();
        d.contains(p) && self.bits[d.offset(p)]
    }

    pub fn insert(&mut self, p: Point) {
        let d = self.domain();
        if d.contains(p) {
            let i = d.offset(p);
            self.bits[i] = true;
        }
    }

    pub fn remove(&mut self, p: Point) {
        let d = self.domain();
        if d.contains(p) {
            let i = d.offset(p);
            self.bits[i] = false;
        }
    }

    pub fn insert_box(&mut self, b: &IBox) {
        let d = self.domain();
        for p in b.intersect(&d).points() {
            let i = d.offset(p);
            self.bits[i] = true;
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn union_with(&mut self, other: &CellMask) {
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
    }

    pub fn is_subset_of(&self, other: &CellMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Number of cells of `b` (clipped to the domain) that lie in the mask.
    pub fn count_in(&self, b: &IBox) -> usize {
        let d = self.domain();
        b.intersect(&d)
            .points()
            .filter(|&p| self.bits[d.offset(p)])
            .count()
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        let d = self.domain();
        d.points().filter(move |&p| self.bits[d.offset(p)])
    }

    /// Summed-area table of the indicator, for O(1) box counts.
    pub(crate) fn prefix(&self) -> Prefix2 {
        let data: Vec<f64> = self
            .bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        Prefix2::new(&Patch {
            region: self.domain(),
            data,
        })
    }

    /// Portable bitmap (P1) rendering, rows along the first axis.
    pub fn write_pbm<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.domain();
        writeln!(w, "P1\n{} {}", d.len(1), d.len(0))?;
        for x in d.lo[0]..d.hi[0] {
            let row: Vec<&str> = (d.lo[1]..d.hi[1])
                .map(|y| {
                    if self.bits[d.offset([x, y])] {
                        "1"
                    } else {
                        "0"
                    }
                })
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Two-axis summed-area table over a patch.
#[derive(Debug, Clone)]
pub(crate) struct Prefix2 {
    region: IBox,
    n1: usize,
    data: Vec<f64>,
}

impl Prefix2 {
    pub fn new(p: &Patch) -> Self {
        let [n0, n1] = p.region.shape();
        let mut data = vec![0.0; (n0 + 1) * (n1 + 1)];
        for i in 0..n0 {
            let mut row = 0.0;
            for j in 0..n1 {
                row += p.data[i * n1 + j];
                data[(i + 1) * (n1 + 1) + j + 1] = data[i * (n1 + 1) + j + 1] + row;
            }
        }
        Prefix2 {
            region: p.region,
            n1,
            data,
        }
    }

    /// Sum over `b ∩ region`.
    pub fn sum(&self, b: &IBox) -> f64 {
        let c = b.intersect(&self.region);
        if c.is_empty() {
            return 0.0;
        }
        let a0 = (c.lo[0] - self.region.lo[0]) as usize;
        let b0 = (c.hi[0] - self.region.lo[0]) as usize;
        let a1 = (c.lo[1] - self.region.lo[1]) as usize;
        let b1 = (c.hi[1] - self.region.lo[1]) as usize;
        let w = self.n1 + 1;
        let s = self.data[b0 * w + b1] - self.data[a0 * w + b1] - self.data[b0 * w + a1]
            + self.data[a0 * w + a1];
        s.max(0.0)
    }
}

/// `(Σ |f|^p)^{1/p}` with unit cell measure; `max |f|` for `p = ∞`.
pub fn lp_norm(f: &GridFunction, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(lp_of(f.values().iter().copied(), p))
}

pub(crate) fn lp_of(vals: impl Iterator<Item = f64>, p: f64) -> f64 {
    if p.is_infinite() {
        vals.fold(0.0f64, |a, v| a.max(v.abs()))
    } else if p == 1.0 {
        vals.map(f64::abs).sum()
    } else {
        vals.map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// `⟨f⟩_{p,Q} = |Q|^{-1/p} ‖f 1_Q‖_p`, with `|Q| = 2^{sd}` even when `Q`
/// overhangs the domain.
pub fn average(f: &GridFunction, p: f64, q: &Cube) -> Result<f64> {
    check_exponent(p)?;
    if q.dim() != f.dim() {
        return Err(Error::DimensionMismatch(q.dim(), f.dim()));
    }
    let cells = q.cells();
    let dom = f.domain();
    if cells.intersect(&dom).is_empty() {
        return Err(Error::OutsideDomain);
    }
    Ok(box_average(f, p, &cells, q.measure()))
}

/// Average of `|f|^p` over `cells` normalized by `measure`, rooted.
pub(crate) fn box_average(f: &GridFunction, p: f64, cells: &IBox, measure: f64) -> f64 {
    let dom = f.domain();
    let vals = cells
        .intersect(&dom)
        .points()
        .map(|q| f.values()[dom.offset(q)]);
    if p.is_infinite() {
        return vals.fold(0.0f64, |a, v| a.max(v.abs()));
    }
    let s: f64 = if p == 1.0 {
        vals.map(f64::abs).sum()
    } else {
        vals.map(|v| v.abs().powf(p)).sum()
    };
    if p == 1.0 {
        s / measure
    } else {
        (s / measure).powf(1.0 / p)
    }
}

/// Which cubes enter the supremum of the maximal operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaximalKind {
    /// Every integer-cornered cube of dyadic sidelength.
    #[default]
    AllCubes,
    /// Lattice-aligned dyadic cubes only (faster, smaller).
    Dyadic,
}

/// `M_p f(x) = sup ⟨f⟩_{p,Q}` over cubes `Q ∋ x` of sidelength `2^s`,
/// `s = 0..=m`, with arbitrary integer corner.
pub fn maximal_function(f: &GridFunction, p: f64) -> Result<GridFunction> {
    maximal_function_with(f, p, MaximalKind::AllCubes)
}

pub fn maximal_function_with(f: &GridFunction, p: f64, kind: MaximalKind) -> Result<GridFunction> {
    check_exponent(p)?;
    let dom = f.domain();
    if p.is_infinite() {
        // sup of ⟨f⟩_{∞,Q} over cubes containing x is attained by the largest cube.
        let mx = f.max_abs();
        return GridFunction::new(f.dim(), f.m(), vec![mx; f.len()]);
    }
    let pow = f.power_patch(p, dom);
    let raw = match kind {
        MaximalKind::AllCubes => maximal_power_local(&pow, dom, f.m(), f.dim()),
        MaximalKind::Dyadic => dyadic_maximal_power(&pow, f.m(), f.dim()),
    };
    let root = |v: f64| if p == 1.0 { v } else { v.powf(1.0 / p) };
    GridFunction::new(f.dim(), f.m(), raw.data.iter().map(|&v| root(v)).collect())
}

/// For each cell of `eval`, the largest mean of `pow` (zero off its region)
/// over integer-cornered cubes of side `2^s`, `s = 0..=s_max`, containing
/// the cell. Returned unrooted (as a mean of `|f|^p`).
pub(crate) fn maximal_power_local(pow: &Patch, eval: IBox, s_max: u32, dim: usize) -> Patch {
    let mut best = Patch::zeros(eval);
    if eval.is_empty() {
        return best;
    }
    let prefix = Prefix2::new(pow);
    for s in 0..=s_max {
        let w = 1i64 << s;
        let win = [w, if dim == 2 { w } else { 1 }];
        let vol = (win[0] * win[1]) as f64;
        let sums = window_max_sums(&prefix, eval, win);
        for (b, v) in best.data.iter_mut().zip(sums) {
            let avg = v / vol;
            if avg > *b {
                *b = avg;
            }
        }
    }
    best
}

/// For each cell `x` of `eval`: max over corners `c` with `x - w < c ≤ x` of
/// the window sum over `[c, c + w)`.
fn window_max_sums(prefix: &Prefix2, eval: IBox, win: [i64; 2]) -> Vec<f64> {
    let l0 = (eval.len(0) + win[0] - 1) as usize;
    let l1 = (eval.len(1) + win[1] - 1) as usize;
    let c0 = eval.lo[0] - win[0] + 1;
    let c1 = eval.lo[1] - win[1] + 1;
    let mut sums = vec![0.0; l0 * l1];
    for i in 0..l0 {
        let a0 = c0 + i as i64;
        for j in 0..l1 {
            let a1 = c1 + j as i64;
            sums[i * l1 + j] = prefix.sum(&IBox::new([a0, a1], [a0 + win[0], a1 + win[1]]));
        }
    }
    // sliding max along axis 1, then axis 0
    let e0 = eval.len(0) as usize;
    let e1 = eval.len(1) as usize;
    let mut stage = vec![0.0; l0 * e1];
    let mut buf = Vec::with_capacity(l1.max(l0));
    for i in 0..l0 {
        buf.clear();
        buf.extend_from_slice(&sums[i * l1..(i + 1) * l1]);
        let row = sliding_max(&buf, win[1] as usize);
        stage[i * e1..(i + 1) * e1].copy_from_slice(&row);
    }
    let mut out = vec![0.0; e0 * e1];
    for j in 0..e1 {
        buf.clear();
        buf.extend((0..l0).map(|i| stage[i * e1 + j]));
        let col = sliding_max(&buf, win[0] as usize);
        for (i, v) in col.into_iter().enumerate() {
            out[i * e1 + j] = v;
        }
    }
    out
}

/// `out[i] = max(xs[i..i + w])` via a monotone deque.
pub(crate) fn sliding_max(xs: &[f64], w: usize) -> Vec<f64> {
    if w <= 1 {
        return xs.to_vec();
    }
    let n = xs.len();
    let mut out = Vec::with_capacity(n + 1 - w);
    let mut dq: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    for i in 0..n {
        while let Some(&b) = dq.back() {
            if xs[b] <= xs[i] {
                dq.pop_back();
            } else {
                break;
            }
        }
        dq.push_back(i);
        if let Some(&f) = dq.front() {
            if f + w <= i {
                dq.pop_front();
            }
        }
        if i + 1 >= w {
            out.push(xs[*dq.front().expect("window non-empty")]);
        }
    }
    out
}

fn dyadic_maximal_power(pow: &Patch, m: u32, dim: usize) -> Patch {
    let region = pow.region;
    let prefix = Prefix2::new(pow);
    let mut best = Patch::zeros(region);
    for s in 0..=m {
        let w = 1i64 << s;
        let w1 = if dim == 2 { w } else { 1 };
        let vol = (w * w1) as f64;
        for p in region.points() {
            let c = [p[0].div_euclid(w) * w, p[1].div_euclid(w1) * w1];
            let avg = prefix.sum(&IBox::new(c, [c[0] + w, c[1] + w1])) / vol;
            let i = region.offset(p);
            if avg > best.data[i] {
                best.data[i] = avg;
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive oracle: every cube of dyadic side with integer corner.
    fn brute_maximal(f: &GridFunction, p: f64) -> Vec<f64> {
        let n = f.side();
        let dim = f.dim();
        f.domain()
            .points()
            .map(|x| {
                let mut best = 0.0f64;
                for s in 0..=f.m() {
                    let w = 1i64 << s;
                    let r1 = if dim == 2 { x[1] - w + 1..=x[1] } else { 0..=0 };
                    for c0 in x[0] - w + 1..=x[0] {
                        for c1 in r1.clone() {
                            let w1 = if dim == 2 { w } else { 1 };
                            let mut acc = 0.0;
                            for a in c0..c0 + w {
                                for b in c1..c1 + w1 {
                                    if a >= 0 && a < n && b >= 0 && (dim == 1 || b < n) {
                                        acc += f.get([a, b]).abs().powf(p);
                                    }
                                }
                            }
                            best = best.max((acc / (w * w1) as f64).powf(1.0 / p));
                        }
                    }
                }
                best
            })
            .collect()
    }

    fn random_fn(dim: usize, m: u32, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridFunction::from_fn(dim, m, |_| rng_sample(&mut rng)).unwrap()
    }

    fn rng_sample(rng: &mut ChaCha8Rng) -> f64 {
        if rng.gen_bool(0.3) {
            0.0
        } else {
            rng.gen_range(-2.0..2.0)
        }
    }

    #[test]
    fn lp_norm_basics() {
        let z = GridFunction::zeros(2, 3).unwrap();
        assert_eq!(lp_norm(&z, 2.0).unwrap(), 0.0);
        let ind = GridFunction::from_fn(1, 4, |p| if p[0] % 3 == 0 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(lp_norm(&ind, 1.0).unwrap(), 6.0);
        assert!(lp_norm(&ind, 0.5).is_err());
        assert_eq!(lp_norm(&ind, f64::INFINITY).unwrap(), 1.0);
    }

    #[test]
    fn lp_norm_matches_direct_summation() {
        let f = random_fn(2, 2, 11);
        let direct: f64 = f
            .values()
            .iter()
            .map(|v| v.abs().powi(3))
            .sum::<f64>()
            .cbrt();
        let got = lp_norm(&f, 3.0).unwrap();
        assert!((got - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn average_examples() {
        let q = Cube::new(1, 2, [4, 0]).unwrap();
        let one = GridFunction::from_fn(1, 4, |_| 1.0).unwrap();
        for p in [1.0, 1.5, 2.0, 7.0] {
            assert!((average(&one, p, &q).unwrap() - 1.0).abs() < 1e-15);
        }
        // half of Q's cells
        let half = GridFunction::from_fn(1, 4, |p| if p[0] < 6 { 1.0 } else { 0.0 }).unwrap();
        assert!((average(&half, 1.0, &q).unwrap() - 0.5).abs() < 1e-15);
        assert!((average(&half, 2.0, &q).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(Cube::new(1, -1, [0, 0]).is_err());
        let far = Cube::new(1, 2, [64, 0]).unwrap();
        assert_eq!(average(&one, 1.0, &far), Err(Error::OutsideDomain));
    }

    #[test]
    fn average_matches_direct_summation_with_overhang() {
        let f = random_fn(2, 4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let s = rng.gen_range(0..=4);
            let w = 1i64 << s;
            let c = [
                rng.gen_range(-1..=16 / w) * w,
                rng.gen_range(-1..=16 / w) * w,
            ];
            let q = Cube::new(2, s, c).unwrap();
            let mut acc = 0.0;
            for a in c[0]..c[0] + w {
                for b in c[1]..c[1] + w {
                    acc += f.get([a, b]).abs().powf(1.5);
                }
            }
            let oracle = (acc / (w * w) as f64).powf(1.0 / 1.5);
            match average(&f, 1.5, &q) {
                Ok(v) => assert!((v - oracle).abs() <= 1e-12 * oracle.max(1e-300)),
                Err(Error::OutsideDomain) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn maximal_of_constant_is_constant() {
        let f = GridFunction::from_fn(2, 4, |_| 3.0).unwrap();
        let mf = maximal_function(&f, 2.0).unwrap();
        assert!(mf.values().iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn maximal_of_spike_in_one_dimension() {
        let f = GridFunction::from_fn(1, 6, |p| if p[0] == 0 { 1.0 } else { 0.0 }).unwrap();
        let mf = maximal_function(&f, 1.0).unwrap();
        let brute = brute_maximal(&f, 1.0);
        for x in 0..64i64 {
            let expect = 2f64.powi(-((x + 1) as f64).log2().ceil() as i32);
            assert_eq!(mf.get([x, 0]), expect, "x = {x}");
            assert!((brute[x as usize] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn maximal_matches_exhaustive_enumeration() {
        let f = random_fn(1, 6, 1);
        let got = maximal_function(&f, 1.0).unwrap();
        for (a, b) in got.values().iter().zip(brute_maximal(&f, 1.0)) {
            assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
        let g = random_fn(2, 3, 2);
        let got = maximal_function(&g, 2.0).unwrap();
        for (a, b) in got.values().iter().zip(brute_maximal(&g, 2.0)) {
            assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn dyadic_variant_is_dominated() {
        let f = random_fn(2, 4, 3);
        let all = maximal_function(&f, 1.0).unwrap();
        let dy = maximal_function_with(&f, 1.0, MaximalKind::Dyadic).unwrap();
        for (a, b) in all.values().iter().zip(dy.values()) {
            assert!(b <= &(a + 1e-12));
        }
    }

    #[test]
    fn sliding_max_small() {
        assert_eq!(
            sliding_max(&[1.0, 3.0, 2.0, 0.0, 5.0], 2),
            vec![3.0, 3.0, 2.0, 5.0]
        );
        assert_eq!(sliding_max(&[1.0, 3.0, 2.0], 3), vec![3.0]);
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let f = random_fn(2, 3, 4);
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(GridFunction::read_binary(&buf[..]).unwrap(), f);
        let mut txt = Vec::new();
        f.write_csv(&mut txt).unwrap();
        let back = GridFunction::read_csv(&txt[..]).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() <= 1e-15 * b.abs());
        }
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        assert!(GridFunction::new(1, 2, vec![0.0, 1.0, f64::NAN, 0.0]).is_err());
        assert!(GridFunction::new(3, 2, vec![0.0; 64]).is_err());
        assert!(GridFunction::new(2, 2, vec![0.0; 15]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn grid1() -> impl Strategy<Value = GridFunction> {
            proptest::collection::vec(-3.0f64..3.0, 32)
                .prop_map(|v| GridFunction::new(1, 5, v).unwrap())
        }

        proptest! {
            #[test]
            fn maximal_dominates_pointwise(f in grid1()) {
                let mf = maximal_function(&f, 1.0).unwrap();
                for (m, v) in mf.values().iter().zip(f.values()) {
                    prop_assert!(*m >= v.abs() - 1e-12);
                }
            }

            #[test]
            fn maximal_is_monotone_in_p(f in grid1()) {
                let m1 = maximal_function(&f, 1.5).unwrap();
                let m2 = maximal_function(&f, 3.0).unwrap();
                for (a, b) in m1.values().iter().zip(m2.values()) {
                    prop_assert!(*a <= b + 1e-10);
                }
            }

            #[test]
            fn average_is_monotone(f in grid1(), extra in proptest::collection::vec(0.0f64..1.0, 32), s in 0i32..5) {
                let g = GridFunction::new(1, 5, f.values().iter().zip(&extra).map(|(a, e)| a.abs() + e).collect()).unwrap();
                let fa = f.map(f64::abs).unwrap();
                let q = Cube::new(1, s, [0, 0]).unwrap();
                prop_assert!(average(&fa, 2.0, &q).unwrap() <= average(&g, 2.0, &q).unwrap() + 1e-12);
            }
        }
    }
}
