//! Muckenhoupt weights, their `A_t` constants, the exponents of the weighted
//! corollaries, and measured weighted operator ratios.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{conjugate, Error, Result};
use crate::forms::apply_truncated;
use crate::grid::{GridFunction, Point};
use crate::kernels::KernelFamily;

#[derive(Debug)]
pub struct Weight {
    w: GridFunction,
    cache: Mutex<BTreeMap<u64, f64>>,
}

impl Clone for Weight {
    fn clone(&self) -> Self {
        Weight {
            w: self.w.clone(),
            cache: Mutex::new(self.cache.lock().expect("poisoned").clone()),
        }
    }
}

impl Weight {
    pub fn new(w: GridFunction) -> Result<Self> {
        if let Some(i) = w.values().iter().position(|&v| !(v > 0.0)) {
            return Err(Error::Invalid(format!(
                "weight must be positive, found {} at index {i}",
                w.values()[i]
            )));
        }
        Ok(Weight {
            w,
            cache: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn constant(dim: usize, m: u32, c: f64) -> Result<Self> {
        Weight::new(GridFunction::from_fn(dim, m, |_| c)?)
    }

    /// `(1 + |x − x₀|)^a`.
    pub fn power(dim: usize, m: u32, x0: Point, a: f64) -> Result<Self> {
        Weight::new(GridFunction::from_fn(dim, m, |p| {
            let r = ((p[0] - x0[0]) as f64).hypot((p[1] - x0[1]) as f64);
            (1.0 + r).powf(a)
        })?)
    }

    /// `values[i]` on the slab `breaks[i−1] ≤ x₀ < breaks[i]` of the first coordinate.
    pub fn piecewise(dim: usize, m: u32, breaks: &[i64], values: &[f64]) -> Result<Self> {
        if values.len() != breaks.len() + 1 {
            return Err(Error::Invalid(
                "piecewise weight needs one more value than breakpoints".into(),
            ));
        }
        if breaks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("breakpoints must increase".into()));
        }
        Weight::new(GridFunction::from_fn(dim, m, |p| {
            values[breaks.iter().filter(|&&b| b <= p[0]).count()]
        })?)
    }

    pub fn function(&self) -> &GridFunction {
        &self.w
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Weight::new(self.w.scaled(c))
    }

    /// `Σ |g|^t w`, raised to `1/t`.
    pub fn norm(&self, g: &GridFunction, t: f64) -> Result<f64> {
        self.w.same_grid(g)?;
        let s: f64 = g
            .values()
            .iter()
            .zip(self.w.values())
            .map(|(x, w)| x.abs().powf(t) * w)
            .sum();
        Ok(s.powf(1.0 / t))
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(t > 1.0) || t.is_infinite() {
        return Err(Error::Exponent {
            value: t,
            reason: "A_t needs 1 < t < ∞",
        });
    }
    Ok(())
}

/// `sup_Q ⟨w⟩_Q ⟨w^{1/(1−t)}⟩_Q^{t−1}` over dyadic-sidelength cubes with
/// integer corners inside the grid.
pub fn ap_constant(w: &Weight, t: f64) -> Result<f64> {
    check_t(t)?;
    if let Some(v) = w.cache.lock().expect("poisoned").get(&t.to_bits()) {
        return Ok(*v);
    }
    let f = &w.w;
    let dual: Vec<f64> = f.values().iter().map(|v| v.powf(1.0 / (1.0 - t))).collect();
    let n = f.side() as usize;
    let n1 = if f.dim() == 2 { n } else { 1 };
    let mut a = f.values().to_vec();
    let mut b = dual;
    let (mut r0, mut r1) = (n, n1);
    let mut best = 1.0f64;
    for s in 0..=f.m() {
        if s > 0 {
            let h = 1usize << (s - 1);
            let (na, nr0, nr1) = double(&a, r0, r1, h, f.dim());
            let (nb, _, _) = double(&b, r0, r1, h, f.dim());
            a = na;
            b = nb;
            r0 = nr0;
            r1 = nr1;
        }
        let vol = ((1u64 << s) as f64).powi(f.dim() as i32);
        for (x, y) in a.iter().zip(&b) {
            best = best.max((x / vol) * (y / vol).powf(t - 1.0));
        }
    }
    w.cache.lock().expect("poisoned").insert(t.to_bits(), best);
    Ok(best)
}

/// Window sums of width `2h` from those of width `h`; positive terms only.
fn double(v: &[f64], r0: usize, r1: usize, h: usize, dim: usize) -> (Vec<f64>, usize, usize) {
    let n0 = r0 - h;
    let mut tmp = vec![0.0; n0 * r1];
    for i in 0..n0 {
        for j in 0..r1 {
            tmp[i * r1 + j] = v[i * r1 + j] + v[(i + h) * r1 + j];
        }
    }
    if dim == 1 {
        return (tmp, n0, r1);
    }
    let n1 = r1 - h;
    let mut out = vec![0.0; n0 * n1];
    for i in 0..n0 {
        for j in 0..n1 {
            out[i * n1 + j] = tmp[i * r1 + j] + tmp[i * r1 + j + h];
        }
    }
    (out, n0, n1)
}

/// Power of the `A`-constant in a weighted corollary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorollaryBound {
    pub exponent: f64,
    /// Index `t/q′` (or `t` for `q = ∞`) of the weight class whose constant enters.
    pub weight_class: f64,
    /// `ap^exponent`; the multiplicative constant is left out.
    pub value: f64,
}

/// `q < ∞`: `[w]_{A_{t/q′}}^{max{1, 1/(t−q′)}}`;
/// `q = ∞`: `[w]_{A_t}^{max{t,2}/(t−1)}`.
pub fn corollary_bound(t: f64, q: f64, ap: f64) -> Result<CorollaryBound> {
    if !(ap >= 1.0) {
        return Err(Error::Invalid(format!(
            "A constants are at least 1, got {ap}"
        )));
    }
    if q.is_infinite() {
        check_t(t)?;
        let exponent = t.max(2.0) / (t - 1.0);
        return Ok(CorollaryBound {
            exponent,
            weight_class: t,
            value: ap.powf(exponent),
        });
    }
    if !(q > 1.0) {
        return Err(Error::Exponent {
            value: q,
            reason: "the kernel exponent q must exceed 1",
        });
    }
    let qp = conjugate(q);
    if !(t > qp) || t.is_infinite() {
        return Err(Error::Exponent {
            value: t,
            reason: "weighted bound needs q′ < t < ∞",
        });
    }
    // 1/(t − q′) written without q′ so rational inputs stay exact
    let exponent = 1f64.max((q - 1.0) / (t * (q - 1.0) - q));
    Ok(CorollaryBound {
        exponent,
        weight_class: t * (q - 1.0) / q,
        value: ap.powf(exponent),
    })
}

/// `‖T_μ^ν f‖_{L^t(w)} / ‖f‖_{L^t(w)}`.
pub fn weighted_norm_ratio(
    k: &KernelFamily,
    w: &Weight,
    t: f64,
    f: &GridFunction,
    mu: i32,
    nu: i32,
) -> Result<f64> {
    check_t(t)?;
    if f.is_zero() {
        return Err(Error::Invalid("weighted ratio of the zero function".into()));
    }
    let tf = apply_truncated(k, f, mu, nu)?;
    Ok(w.norm(&tf, t)? / w.norm(f, t)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub a: f64,
    pub ap: f64,
    pub ratio: f64,
    pub exponent: f64,
    /// `ap^exponent`.
    pub bound: f64,
    /// `ap^{max{1, 1/(t−1)}}`, the lower-bound power for comparison only.
    pub sharp_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSweep {
    pub kernel: String,
    pub t: f64,
    pub rows: Vec<SweepRow>,
    /// `C` fitted on the unweighted row with a factor 2 of headroom.
    pub constant: f64,
    /// Values of `a` with `ratio > C·bound`.
    pub violations: Vec<f64>,
}

/// Power weights `(1+|x−x₀|)^a` against the `q = ∞` corollary at exponent `t`.
pub fn power_weight_sweep(
    k: &KernelFamily,
    f: &GridFunction,
    t: f64,
    x0: Point,
    exponents: &[f64],
    mu: i32,
    nu: i32,
) -> Result<WeightSweep> {
    let mut rows = Vec::with_capacity(exponents.len());
    for &a in exponents {
        let w = Weight::power(f.dim(), f.m(), x0, a)?;
        let ap = ap_constant(&w, t)?;
        let cb = corollary_bound(t, f64::INFINITY, ap)?;
        rows.push(SweepRow {
            a,
            ap,
            ratio: weighted_norm_ratio(k, &w, t, f, mu, nu)?,
            exponent: cb.exponent,
            bound: cb.value,
            sharp_power: ap.powf(1f64.max(1.0 / (t - 1.0))),
        });
    }
    let base = rows
        .iter()
        .find(|r| r.a == 0.0)
        .map(|r| r.ratio / r.bound)
        .unwrap_or_else(|| rows.iter().map(|r| r.ratio / r.bound).fold(0.0, f64::max));
    let constant = 2.0 * base;
    let violations = rows
        .iter()
        .filter(|r| r.ratio > constant * r.bound)
        .map(|r| r.a)
        .collect();
    Ok(WeightSweep {
        kernel: k.id().to_string(),
        t,
        rows,
        constant,
        violations,
    })
}

impl WeightSweep {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["a", "ap", "ratio", "exponent", "bound", "sharp_power"])
            .map_err(csv_err)?;
        for r in &self.rows {
            wr.write_record(&[
                format!("{}", r.a),
                format!("{:.12e}", r.ap),
                format!("{:.12e}", r.ratio),
                format!("{}", r.exponent),
                format!("{:.12e}", r.bound),
                format!("{:.12e}", r.sharp_power),
            ])
            .map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::SphericalFunction;
    use proptest::prelude::*;

    fn brute_ap(w: &GridFunction, t: f64) -> f64 {
        let n = w.side();
        let mut best = 1.0f64;
        for s in 0..=w.m() {
            let l = 1i64 << s;
            for x in 0..=n - l {
                let vals: Vec<f64> = (x..x + l).map(|i| w.get([i, 0])).collect();
                let a = vals.iter().sum::<f64>() / l as f64;
                let b = vals.iter().map(|v| v.powf(1.0 / (1.0 - t))).sum::<f64>() / l as f64;
                best = best.max(a * b.powf(t - 1.0));
            }
        }
        best
    }

    #[test]
    fn lebesgue_and_constant_weights() {
        assert_eq!(
            ap_constant(&Weight::constant(1, 6, 1.0).unwrap(), 2.0).unwrap(),
            1.0
        );
        let c = ap_constant(&Weight::constant(2, 4, 7.5).unwrap(), 3.0).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        assert!(ap_constant(&Weight::constant(1, 3, 1.0).unwrap(), 1.0).is_err());
        assert!(Weight::constant(1, 3, 0.0).is_err());
    }

    #[test]
    fn power_weights_match_exhaustive_enumeration() {
        let mut prev = 1.0;
        for a in [0.0, 0.2, 0.4, 0.6, 0.8, 0.95] {
            let w = Weight::power(1, 7, [40, 0], a).unwrap();
            let got = ap_constant(&w, 2.0).unwrap();
            let want = brute_ap(w.function(), 2.0);
            assert!((got - want).abs() <= 1e-12 * want, "{a}: {got} vs {want}");
            assert!(got >= prev);
            prev = got;
            let neg = ap_constant(&Weight::power(1, 7, [40, 0], -a).unwrap(), 2.0).unwrap();
            assert!(
                (neg - brute_ap(Weight::power(1, 7, [40, 0], -a).unwrap().function(), 2.0)).abs()
                    < 1e-12 * neg
            );
        }
    }

    #[test]
    fn two_dimensional_matches_box_oracle() {
        let w = Weight::power(2, 4, [5, 9], 0.7).unwrap();
        let f = w.function();
        let mut best = 1.0f64;
        for s in 0..=4 {
            let l = 1i64 << s;
            for x in 0..=16 - l {
                for y in 0..=16 - l {
                    let (mut a, mut b) = (0.0, 0.0);
                    for i in x..x + l {
                        for j in y..y + l {
                            a += f.get([i, j]);
                            b += 1.0 / f.get([i, j]);
                        }
                    }
                    let v = (l * l) as f64;
                    best = best.max(a / v * b / v);
                }
            }
        }
        assert!((ap_constant(&w, 2.0).unwrap() - best).abs() < 1e-12 * best);
    }

    #[test]
    fn corollary_exponents() {
        assert_eq!(corollary_bound(4.0, 2.0, 3.0).unwrap().exponent, 1.0);
        assert_eq!(
            corollary_bound(1.5, f64::INFINITY, 1.0).unwrap().exponent,
            4.0
        );
        assert_eq!(
            corollary_bound(2.0, f64::INFINITY, 1.0).unwrap().exponent,
            2.0
        );
        let c = corollary_bound(2.5, 2.0, 2.0).unwrap();
        assert_eq!(c.exponent, 2.0);
        assert_eq!(c.weight_class, 1.25);
        assert_eq!(c.value, 4.0);
        assert!(corollary_bound(2.0, 2.0, 1.0).is_err());
        assert!(corollary_bound(1.0, f64::INFINITY, 1.0).is_err());
        assert!(corollary_bound(3.0, 2.0, 0.5).is_err());
    }

    #[test]
    fn weighted_ratio_reductions() {
        let f = GridFunction::from_fn(1, 7, |p| if p[0] == 60 { 1.0 } else { 0.0 }).unwrap();
        let zero = KernelFamily::zero(1, 1, 6).unwrap();
        let w = Weight::power(1, 7, [64, 0], 0.5).unwrap();
        assert_eq!(weighted_norm_ratio(&zero, &w, 2.0, &f, 0, 6).unwrap(), 0.0);
        let k = KernelFamily::rough(&SphericalFunction::hilbert(), 1, 6).unwrap();
        let one = Weight::constant(1, 7, 1.0).unwrap();
        let tf = apply_truncated(&k, &f, 0, 6).unwrap();
        let plain =
            crate::grid::lp_norm(&tf, 2.0).unwrap() / crate::grid::lp_norm(&f, 2.0).unwrap();
        assert!((weighted_norm_ratio(&k, &one, 2.0, &f, 0, 6).unwrap() - plain).abs() < 1e-13);
        assert!(
            weighted_norm_ratio(&k, &one, 2.0, &GridFunction::zeros(1, 7).unwrap(), 0, 6).is_err()
        );
    }

    #[test]
    fn sweep_has_no_violations_for_hilbert() {
        let k = KernelFamily::rough(&SphericalFunction::hilbert(), 1, 7).unwrap();
        let f = GridFunction::from_fn(1, 8, |p| if p[0] == 128 { 1.0 } else { 0.0 }).unwrap();
        let a: Vec<f64> = (-9..=9).map(|i| i as f64 / 10.0).collect();
        let sw = power_weight_sweep(&k, &f, 2.0, [128, 0], &a, 0, 7).unwrap();
        assert!(sw.violations.is_empty(), "{sw:?}");
        let mut buf = Vec::new();
        sw.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 20);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ap_is_at_least_one_scale_invariant_and_nested(
            vals in proptest::collection::vec(0.05f64..20.0, 32),
            c in 0.01f64..100.0,
        ) {
            let w = Weight::new(GridFunction::new(1, 5, vals).unwrap()).unwrap();
            let base = ap_constant(&w, 2.0).unwrap();
            prop_assert!(base >= 1.0);
            let sc = ap_constant(&w.scaled(c).unwrap(), 2.0).unwrap();
            prop_assert!((sc - base).abs() <= 1e-10 * base);
            let mut prev = f64::INFINITY;
            for t in [1.25, 1.5, 2.0, 3.0, 5.0] {
                let v = ap_constant(&w, t).unwrap();
                prop_assert!(v <= prev * (1.0 + 1e-12));
                prev = v;
            }
        }
    }
}
