//! Linear (zero-padded) convolution and cross-correlation of patches, by
//! direct summation when cheap and by FFT otherwise.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::grid::{IBox, Patch};

/// Work (multiply-adds) above which the FFT path is taken.
const DIRECT_LIMIT: f64 = (1u64 << 24) as f64;

/// `C(z) = Σ_y a(y) b(y + z)` for every `z` in `lags`.
pub fn correlate(a: &Patch, b: &Patch, lags: IBox) -> Patch {
    let sa = a.support();
    let sb = b.support();
    if sa.is_empty() || sb.is_empty() || lags.is_empty() {
        return Patch::zeros(lags);
    }
    let a = a.window(sa);
    let b = b.window(sb);
    let work = sa.volume() as f64 * lags.volume() as f64;
    if work <= DIRECT_LIMIT {
        correlate_direct(&a, &b, lags)
    } else {
        // C = ã * b with ã(y) = a(−y)
        let rev = reverse(&a);
        fft_convolve(&rev, &b).window(lags)
    }
}

fn correlate_direct(a: &Patch, b: &Patch, lags: IBox) -> Patch {
    let mut out = Patch::zeros(lags);
    let nz: Vec<([i64; 2], f64)> = a
        .region
        .points()
        .zip(&a.data)
        .filter(|(_, &v)| v != 0.0)
        .map(|(p, &v)| (p, v))
        .collect();
    for z in lags.points() {
        // only y with y + z inside b's region contribute
        let mut acc = 0.0;
        for &(y, v) in &nz {
            acc += v * b.get([y[0] + z[0], y[1] + z[1]]);
        }
        let i = lags.offset(z);
        out.data[i] = acc;
    }
    out
}

/// `(k * f)(x) = Σ_z k(z) f(x − z)` evaluated on `out`.
pub fn convolve(k: &Patch, f: &Patch, out: IBox) -> Patch {
    let sk = k.support();
    let sf = f.support();
    if sk.is_empty() || sf.is_empty() || out.is_empty() {
        return Patch::zeros(out);
    }
    let k = k.window(sk);
    let f = f.window(sf);
    let work = sk.volume() as f64 * out.volume().min(sf.volume() + sk.volume()) as f64;
    if work <= DIRECT_LIMIT {
        let mut res = Patch::zeros(out);
        let kz: Vec<([i64; 2], f64)> = k
            .region
            .points()
            .zip(&k.data)
            .filter(|(_, &v)| v != 0.0)
            .map(|(p, &v)| (p, v))
            .collect();
        for x in out.intersect(&full_region(&k.region, &f.region)).points() {
            let mut acc = 0.0;
            for &(z, v) in &kz {
                acc += v * f.get([x[0] - z[0], x[1] - z[1]]);
            }
            let i = out.offset(x);
            res.data[i] = acc;
        }
        res
    } else {
        fft_convolve(&k, &f).window(out)
    }
}

fn full_region(a: &IBox, b: &IBox) -> IBox {
    IBox::new(
        [a.lo[0] + b.lo[0], a.lo[1] + b.lo[1]],
        [a.hi[0] + b.hi[0] - 1, a.hi[1] + b.hi[1] - 1],
    )
}

fn reverse(a: &Patch) -> Patch {
    let r = IBox::new(
        [1 - a.region.hi[0], 1 - a.region.hi[1]],
        [1 - a.region.lo[0], 1 - a.region.lo[1]],
    );
    let mut out = Patch::zeros(r);
    for p in a.region.points() {
        let i = r.offset([-p[0], -p[1]]);
        out.data[i] = a.data[a.region.offset(p)];
    }
    out
}

/// Full linear convolution over the Minkowski sum of the two regions.
pub fn fft_convolve(a: &Patch, b: &Patch) -> Patch {
    let region = full_region(&a.region, &b.region);
    if region.is_empty() || a.region.is_empty() || b.region.is_empty() {
        return Patch::zeros(region);
    }
    let [r0, r1] = region.shape();
    let n0 = r0.next_power_of_two();
    let n1 = r1.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let spec = |p: &Patch, planner: &mut FftPlanner<f64>| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n0 * n1];
        let [s0, s1] = p.region.shape();
        for i in 0..s0 {
            for j in 0..s1 {
                buf[i * n1 + j].re = p.data[i * s1 + j];
            }
        }
        fft2(&mut buf, n0, n1, planner, false);
        buf
    };
    let mut fa = spec(a, &mut planner);
    let fb = spec(b, &mut planner);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    fft2(&mut fa, n0, n1, &mut planner, true);
    let scale = 1.0 / (n0 * n1) as f64;
    let mut out = Patch::zeros(region);
    for i in 0..r0 {
        for j in 0..r1 {
            out.data[i * r1 + j] = fa[i * n1 + j].re * scale;
        }
    }
    out
}

/// In-place unnormalized 2-D transform of a row-major `n0 × n1` buffer.
pub(crate) fn fft2(
    buf: &mut [Complex64],
    n0: usize,
    n1: usize,
    planner: &mut FftPlanner<f64>,
    inverse: bool,
) {
    if n1 > 1 {
        let f = if inverse {
            planner.plan_fft_inverse(n1)
        } else {
            planner.plan_fft_forward(n1)
        };
        f.process(buf);
    }
    if n0 > 1 {
        let f = if inverse {
            planner.plan_fft_inverse(n0)
        } else {
            planner.plan_fft_forward(n0)
        };
        let mut col = vec![Complex64::new(0.0, 0.0); n0];
        for j in 0..n1 {
            for i in 0..n0 {
                col[i] = buf[i * n1 + j];
            }
            f.process(&mut col);
            for i in 0..n0 {
                buf[i * n1 + j] = col[i];
            }
        }
    }
}
