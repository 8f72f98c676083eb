//! Input generators: spikes, seeded random data, smooth bumps, and
//! macroscopic profiles that can be sampled on grids of any size.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridFunction, IBox, Point};

pub fn spike(dim: usize, m: u32, at: Point, amp: f64) -> Result<GridFunction> {
    let mut f = GridFunction::zeros(dim, m)?;
    f.set(at, amp)?;
    Ok(f)
}

/// `exp(1 − 1/(1 − r²))` for `r = |x − c| / radius < 1`, peak 1.
pub fn bump(dim: usize, m: u32, center: [f64; 2], radius: f64) -> Result<GridFunction> {
    if !(radius > 0.0) {
        return Err(Error::Invalid(format!(
            "bump radius {radius} must be positive"
        )));
    }
    GridFunction::from_fn(dim, m, |p| {
        let r = ((p[0] as f64 + 0.5 - center[0]).hypot(if dim == 2 {
            p[1] as f64 + 0.5 - center[1]
        } else {
            0.0
        })) / radius;
        if r < 1.0 {
            (1.0 - 1.0 / (1.0 - r * r)).exp()
        } else {
            0.0
        }
    })
}

/// Uniform values in `[−1, 1]` on `support`, with a fraction of cells
/// replaced by spikes of height up to `spike_height`.
pub fn random<R: Rng>(
    dim: usize,
    m: u32,
    support: IBox,
    spike_rate: f64,
    spike_height: f64,
    rng: &mut R,
) -> Result<GridFunction> {
    GridFunction::from_fn(dim, m, |p| {
        if !support.contains(p) {
            return 0.0;
        }
        let v = rng.gen_range(-1.0..1.0);
        if rng.gen_bool(spike_rate.clamp(0.0, 1.0)) {
            v * spike_height
        } else {
            v
        }
    })
}

fn random_box<R: Rng>(dim: usize, m: u32, rng: &mut R) -> IBox {
    let n = 1i64 << m;
    let mut lo = [0i64; 2];
    let mut hi = [1i64; 2];
    for a in 0..dim {
        let len = rng.gen_range(n / 8..=n / 2).max(1);
        lo[a] = rng.gen_range(0..=n - len);
        hi[a] = lo[a] + len;
    }
    IBox::new(lo, hi)
}

/// A random compactly supported pair: rough data with sparse spikes on random
/// boxes, sometimes replaced by a lone spike or a bump.
pub fn random_pair<R: Rng>(
    dim: usize,
    m: u32,
    rng: &mut R,
) -> Result<(GridFunction, GridFunction)> {
    let one = |rng: &mut R| -> Result<GridFunction> {
        let n = 1i64 << m;
        match rng.gen_range(0..6) {
            0 => {
                let at = [
                    rng.gen_range(0..n),
                    if dim == 2 { rng.gen_range(0..n) } else { 0 },
                ];
                spike(dim, m, at, rng.gen_range(0.5..4.0))
            }
            1 => {
                let c = [rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64)];
                bump(dim, m, c, rng.gen_range(2.0..n as f64 / 4.0))
            }
            _ => {
                let b = random_box(dim, m, rng);
                let rate = rng.gen_range(0.0..0.05);
                let height = 10f64.powf(rng.gen_range(0.0..2.0));
                random(dim, m, b, rate, height, rng)
            }
        }
    };
    let f1 = one(rng)?;
    let f2 = one(rng)?;
    Ok((f1, f2))
}

/// A function on `[0, 1)^d` made of boxes and bumps, sampled at cell centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    /// `(lo, hi, amplitude)` boxes in unit coordinates.
    pub boxes: Vec<([f64; 2], [f64; 2], f64)>,
    /// `(center, radius, amplitude)` bumps in unit coordinates.
    pub bumps: Vec<([f64; 2], f64, f64)>,
}

impl Profile {
    pub fn random<R: Rng>(dim: usize, rng: &mut R) -> Self {
        let coord = |rng: &mut R, a: usize| -> f64 {
            if a < dim {
                rng.gen_range(0.05..0.95)
            } else {
                0.0
            }
        };
        let boxes = (0..rng.gen_range(1..4))
            .map(|_| {
                let mut lo = [0.0; 2];
                let mut hi = [1.0; 2];
                for a in 0..dim {
                    let c = coord(rng, a);
                    let w = rng.gen_range(0.02..0.25);
                    lo[a] = (c - w).max(0.0);
                    hi[a] = (c + w).min(1.0);
                }
                (lo, hi, rng.gen_range(-2.0..2.0))
            })
            .collect();
        let bumps = (0..rng.gen_range(0..4))
            .map(|_| {
                (
                    [coord(rng, 0), coord(rng, 1)],
                    rng.gen_range(0.01..0.2),
                    rng.gen_range(-3.0..3.0),
                )
            })
            .collect();
        Profile { boxes, bumps }
    }

    pub fn eval(&self, dim: usize, x: [f64; 2]) -> f64 {
        let mut v = 0.0;
        for (lo, hi, a) in &self.boxes {
            if (0..dim).all(|i| lo[i] <= x[i] && x[i] < hi[i]) {
                v += a;
            }
        }
        for (c, r, a) in &self.bumps {
            let d = if dim == 2 {
                (x[0] - c[0]).hypot(x[1] - c[1])
            } else {
                (x[0] - c[0]).abs()
            } / r;
            if d < 1.0 {
                v += a * (1.0 - 1.0 / (1.0 - d * d)).exp();
            }
        }
        v
    }

    pub fn sample(&self, dim: usize, m: u32) -> Result<GridFunction> {
        let n = (1u64 << m) as f64;
        GridFunction::from_fn(dim, m, |p| {
            self.eval(dim, [(p[0] as f64 + 0.5) / n, (p[1] as f64 + 0.5) / n])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generators_respect_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = IBox::new([3, 4], [9, 7]);
        let f = random(2, 4, b, 0.1, 50.0, &mut rng).unwrap();
        assert!(b.contains_box(&f.support_box()));
        let s = spike(1, 5, [7, 0], 2.0).unwrap();
        assert_eq!(s.values().iter().filter(|&&v| v != 0.0).count(), 1);
        let g = bump(1, 6, [32.0, 0.0], 8.0).unwrap();
        assert!((g.get([31, 0]) - g.get([32, 0])).abs() < 1e-15);
        assert!(g.get([23, 0]) == 0.0 && g.get([40, 0]) == 0.0 && g.get([24, 0]) > 0.0);
    }

    #[test]
    fn profiles_refine_consistently() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Profile::random(1, &mut rng);
        let a = p.sample(1, 6).unwrap();
        let b = p.sample(1, 8).unwrap();
        // averages over matching macroscopic cells agree up to discretization
        let ma: f64 = a.values().iter().sum::<f64>() / 64.0;
        let mb: f64 = b.values().iter().sum::<f64>() / 256.0;
        assert!((ma - mb).abs() < 0.1 * ma.abs().max(0.1));
    }
}
