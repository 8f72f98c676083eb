//! Dyadic cubes, dilates, the neighbor relation, Whitney decompositions of
//! cell sets and stopping-collection validation.

use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_dim, domain_box, CellMask, IBox, Point};

/// Dyadic cube of sidelength `2^s` with corner in `2^s ℤ^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cube {
    dim: usize,
    s: i32,
    corner: Point,
}

impl Cube {
    pub fn new(dim: usize, s: i32, corner: Point) -> Result<Self> {
        check_dim(dim)?;
        if s < 0 {
            return Err(Error::DegenerateCube(s));
        }
        if s > 40 {
            return Err(Error::Invalid(format!("scale {s} is out of range")));
        }
        let w = 1i64 << s;
        let aligned = corner[0].rem_euclid(w) == 0 && (dim == 1 || corner[1].rem_euclid(w) == 0);
        if !aligned || (dim == 1 && corner[1] != 0) {
            return Err(Error::Misaligned { s, corner });
        }
        Ok(Cube { dim, s, corner })
    }

    /// The cube `[0, 2^m)^d` covering the whole grid.
    pub fn domain(dim: usize, m: u32) -> Result<Self> {
        Cube::new(dim, m as i32, [0, 0])
    }

    /// Lattice cube of scale `s` containing the cell `p`.
    pub fn containing(dim: usize, s: i32, p: Point) -> Result<Self> {
        if s < 0 {
            return Err(Error::DegenerateCube(s));
        }
        let w = 1i64 << s;
        let c1 = if dim == 2 { p[1].div_euclid(w) * w } else { 0 };
        Cube::new(dim, s, [p[0].div_euclid(w) * w, c1])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn s(&self) -> i32 {
        self.s
    }

    pub fn corner(&self) -> Point {
        self.corner
    }

    pub fn side(&self) -> i64 {
        1i64 << self.s
    }

    /// `|Q| = 2^{sd}`.
    pub fn measure(&self) -> f64 {
        (self.side() as f64).powi(self.dim as i32)
    }

    pub fn center(&self) -> [f64; 2] {
        let h = self.side() as f64 / 2.0;
        let c1 = if self.dim == 2 {
            self.corner[1] as f64 + h
        } else {
            0.5
        };
        [self.corner[0] as f64 + h, c1]
    }

    /// Cells of the cube.
    pub fn cells(&self) -> IBox {
        let w = self.side();
        let w1 = if self.dim == 2 { w } else { 1 };
        IBox::new(self.corner, [self.corner[0] + w, self.corner[1] + w1])
    }

    pub fn parent(&self) -> Cube {
        let s = self.s + 1;
        let w = 1i64 << s;
        let c1 = if self.dim == 2 {
            self.corner[1].div_euclid(w) * w
        } else {
            0
        };
        Cube {
            dim: self.dim,
            s,
            corner: [self.corner[0].div_euclid(w) * w, c1],
        }
    }

    pub fn children(&self) -> Vec<Cube> {
        if self.s == 0 {
            return Vec::new();
        }
        let h = self.side() / 2;
        let s = self.s - 1;
        let [a, b] = self.corner;
        if self.dim == 1 {
            vec![
                Cube {
                    dim: 1,
                    s,
                    corner: [a, 0],
                },
                Cube {
                    dim: 1,
                    s,
                    corner: [a + h, 0],
                },
            ]
        } else {
            vec![
                Cube {
                    dim: 2,
                    s,
                    corner: [a, b],
                },
                Cube {
                    dim: 2,
                    s,
                    corner: [a, b + h],
                },
                Cube {
                    dim: 2,
                    s,
                    corner: [a + h, b],
                },
                Cube {
                    dim: 2,
                    s,
                    corner: [a + h, b + h],
                },
            ]
        }
    }

    /// Whether `other ⊂ self` as dyadic cubes.
    pub fn contains_cube(&self, other: &Cube) -> bool {
        self.cells().contains_box(&other.cells())
    }

    pub fn intersects(&self, other: &Cube) -> bool {
        !self.cells().intersect(&other.cells()).is_empty()
    }

    /// `λQ`: same center, sidelength `λ 2^s`.
    pub fn dilate(&self, lambda: f64) -> DBox {
        let c = self.center();
        let r = lambda * self.side() as f64 / 2.0;
        DBox {
            dim: self.dim,
            lo: [c[0] - r, c[1] - r],
            hi: [c[0] + r, c[1] + r],
        }
    }

    /// Cells of `λQ` (cell-center membership).
    pub fn dilate_cells(&self, lambda: f64) -> IBox {
        self.dilate(lambda).cells()
    }
}

impl fmt::Display for Cube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.dim == 1 {
            write!(f, "(s={}, {})", self.s, self.corner[0])
        } else {
            write!(f, "(s={}, {}, {})", self.s, self.corner[0], self.corner[1])
        }
    }
}

// JSON form: `[s, c0]` in dimension one, `[s, c0, c1]` in dimension two.
impl Serialize for Cube {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = ser.serialize_seq(Some(self.dim + 1))?;
        seq.serialize_element(&(self.s as i64))?;
        for k in 0..self.dim {
            seq.serialize_element(&self.corner[k])?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for Cube {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Cube;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an integer tuple [s, corner...]")
            }
            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<Cube, A::Error> {
                let mut xs: Vec<i64> = Vec::new();
                while let Some(x) = seq.next_element()? {
                    xs.push(x);
                }
                let (dim, corner) = match xs.len() {
                    2 => (1, [xs[1], 0]),
                    3 => (2, [xs[1], xs[2]]),
                    n => return Err(de::Error::invalid_length(n, &self)),
                };
                Cube::new(dim, xs[0] as i32, corner).map_err(de::Error::custom)
            }
        }
        de.deserialize_seq(V)
    }
}

/// Axis-aligned real box `[lo, hi)`; a cell belongs to it when its center does.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DBox {
    pub dim: usize,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl DBox {
    pub fn contains_cell(&self, p: Point) -> bool {
        (0..self.dim).all(|k| {
            let x = p[k] as f64 + 0.5;
            self.lo[k] <= x && x < self.hi[k]
        }) && (self.dim == 2 || p[1] == 0)
    }

    pub fn cells(&self) -> IBox {
        let lo0 = (self.lo[0] - 0.5).ceil() as i64;
        let hi0 = (self.hi[0] - 0.5).ceil() as i64;
        if self.dim == 1 {
            IBox::new([lo0, 0], [hi0, 1])
        } else {
            let lo1 = (self.lo[1] - 0.5).ceil() as i64;
            let hi1 = (self.hi[1] - 0.5).ceil() as i64;
            IBox::new([lo0, lo1], [hi0, hi1])
        }
    }

    pub fn side(&self) -> f64 {
        self.hi[0] - self.lo[0]
    }
}

/// `L ∼ L'`: `7L ∩ 7L' ≠ ∅` and `|s_L − s_L'| < 8`.
pub fn neighbors(a: &Cube, b: &Cube) -> bool {
    (a.s - b.s).abs() < 8
        && !a
            .dilate_cells(7.0)
            .intersect(&b.dilate_cells(7.0))
            .is_empty()
}

/// `9L ⊂ E` with no overhang past the domain.
fn nine_inside(l: &Cube, dom: &IBox, count: &crate::grid::Prefix2) -> bool {
    let nine = l.dilate_cells(9.0);
    dom.contains_box(&nine) && count.sum(&nine) as i64 == nine.volume()
}

/// Maximal dyadic cubes `L` with `9L ⊂ E`, in lattice order.
pub fn whitney_maximal(e: &CellMask) -> Vec<Cube> {
    let dim = e.dim();
    let dom = e.domain();
    let count = e.prefix();
    let mut out = Vec::new();
    let mut stack = vec![Cube::domain(dim, e.m()).expect("valid domain cube")];
    while let Some(l) = stack.pop() {
        if count.sum(&l.cells()) == 0.0 {
            continue;
        }
        if nine_inside(&l, &dom, &count) {
            out.push(l);
        } else {
            stack.extend(l.children());
        }
    }
    out.sort();
    out
}

/// Whitney cubes of `E` completed by unit cubes at the cells of `E` they
/// leave uncovered, so the union is exactly `E`.
pub fn whitney_cover(e: &CellMask) -> Vec<Cube> {
    let mut cubes = whitney_maximal(e);
    let mut covered = CellMask::empty(e.dim(), e.m()).expect("valid grid");
    for c in &cubes {
        covered.insert_box(&c.cells());
    }
    for p in e.points() {
        if !covered.contains(p) {
            cubes.push(Cube::new(e.dim(), 0, p).expect("unit cube"));
        }
    }
    cubes.sort();
    cubes
}

/// Whether any cube's 9-fold dilate reaches the domain edge.
pub fn touches_boundary(cubes: &[Cube], dim: usize, m: u32) -> bool {
    let dom = domain_box(dim, m);
    let inner = IBox::new(
        [1, if dim == 2 { 1 } else { 0 }],
        [dom.hi[0] - 1, if dim == 2 { dom.hi[1] - 1 } else { 1 }],
    );
    cubes
        .iter()
        .any(|c| !inner.contains_box(&c.dilate_cells(9.0)))
}

/// Which stopping-collection axiom failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    /// A member lies outside the grid domain.
    OutsideDomain,
    /// Two members overlap (or coincide).
    Disjointness,
    /// A member is not contained in `3Q`.
    InsideTripleTop,
    /// Scales differ by at least 8 but the 7-fold dilates meet.
    Separation,
    /// `9L ⊄ sh 𝒬` for a member with `3L ∩ 2Q ≠ ∅`.
    Shadow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub axiom: Axiom,
    pub witnesses: Vec<Cube>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ws: Vec<String> = self.witnesses.iter().map(|c| c.to_string()).collect();
        write!(f, "{:?} violated by {}", self.axiom, ws.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StoppingOptions {
    /// Members with scale below this are exempt from the shadow axiom.
    pub shadow_floor: i32,
}

/// A validated stopping collection with its cached shadow.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingCollection {
    top: Cube,
    members: Vec<Cube>,
    shadow: CellMask,
    m: u32,
}

impl StoppingCollection {
    pub fn top(&self) -> &Cube {
        &self.top
    }

    pub fn members(&self) -> &[Cube] {
        &self.members
    }

    /// `sh 𝒬`, the union of the members.
    pub fn shadow(&self) -> &CellMask {
        &self.shadow
    }

    pub fn dim(&self) -> usize {
        self.top.dim
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `[top, members...]` as JSON integer tuples.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = vec![serde_json::to_value(self.top).expect("cube serializes")];
        v.extend(
            self.members
                .iter()
                .map(|c| serde_json::to_value(c).expect("cube serializes")),
        );
        serde_json::Value::Array(v)
    }

    pub fn from_json(
        v: &serde_json::Value,
        m: u32,
    ) -> Result<std::result::Result<Self, Violation>> {
        let cubes: Vec<Cube> =
            serde_json::from_value(v.clone()).map_err(|e| Error::Parse(e.to_string()))?;
        let (top, members) = cubes
            .split_first()
            .ok_or_else(|| Error::Parse("empty collection".into()))?;
        validate_stopping(top, members, m, StoppingOptions::default())
    }
}

/// Checks the stopping-collection axioms for `members` with top cube `top`
/// on the grid `[0, 2^m)^d`. The outer error signals malformed input (mixed
/// dimensions); axiom failures come back as the inner `Err(Violation)`.
pub fn validate_stopping(
    top: &Cube,
    members: &[Cube],
    m: u32,
    opts: StoppingOptions,
) -> Result<std::result::Result<StoppingCollection, Violation>> {
    let dim = top.dim;
    if let Some(c) = members.iter().find(|c| c.dim != dim) {
        return Err(Error::DimensionMismatch(dim, c.dim));
    }
    let dom = domain_box(dim, m);
    let fail = |axiom, witnesses: Vec<Cube>| Ok(Err(Violation { axiom, witnesses }));

    if let Some(c) = members.iter().find(|c| !dom.contains_box(&c.cells())) {
        return fail(Axiom::OutsideDomain, vec![*c]);
    }

    // Disjointness: paint the cells and look for a second owner.
    let mut owner: Vec<u32> = vec![u32::MAX; dom.volume() as usize];
    for (i, c) in members.iter().enumerate() {
        for p in c.cells().points() {
            let k = dom.offset(p);
            if owner[k] != u32::MAX {
                return fail(Axiom::Disjointness, vec![members[owner[k] as usize], *c]);
            }
            owner[k] = i as u32;
        }
    }

    let three = top.dilate_cells(3.0);
    if let Some(c) = members.iter().find(|c| !three.contains_box(&c.cells())) {
        return fail(Axiom::InsideTripleTop, vec![*top, *c]);
    }

    for big in members.iter().filter(|c| c.s >= 8) {
        let seven = big.dilate_cells(7.0);
        for small in members.iter().filter(|c| c.s <= big.s - 8) {
            if !seven.intersect(&small.dilate_cells(7.0)).is_empty() {
                return fail(Axiom::Separation, vec![*big, *small]);
            }
        }
    }

    let bits = owner.iter().map(|&o| o != u32::MAX).collect();
    let shadow = CellMask::from_bits(dim, m, bits)?;
    let count = shadow.prefix();
    let two = top.dilate_cells(2.0);
    for c in members.iter().filter(|c| c.s >= opts.shadow_floor) {
        if c.dilate_cells(3.0).intersect(&two).is_empty() {
            continue;
        }
        let nine = c.dilate_cells(9.0);
        if !dom.contains_box(&nine) || count.sum(&nine) as i64 != nine.volume() {
            return fail(Axiom::Shadow, vec![*c]);
        }
    }

    let mut sorted = members.to_vec();
    sorted.sort();
    Ok(Ok(StoppingCollection {
        top: *top,
        members: sorted,
        shadow,
        m,
    }))
}
