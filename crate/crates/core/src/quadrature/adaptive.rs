//! Globally adaptive Gauss–Kronrod quadrature on `u* +- 10h`.
//!
//! Each box is integrated with the K15 x K15 tensor rule. Replacing the
//! Kronrod rule by the embedded G7 rule along one axis gives a directional
//! error indicator from the same 225 values; the box error is the sum of the
//! two indicators and boxes are bisected along the worse axis. The box with
//! the largest error is always refined next.

// Published Kronrod nodes and weights, kept at full listed precision.
#![allow(clippy::excessive_precision)]

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{check_finite, Integral, LineIntegrand, PointFn, TensorIntegrand};
use crate::dataset::{Arm, PrincipalPoint};
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::quadrature::ScalarFn;
use crate::stats::pairwise_sum;

/// Half-width of the integration window in bandwidths. The kernel mass
/// outside is below `1e-22`.
pub const HALF_WIDTH: f64 = 10.0;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// 15 nodes on `[-1, 1]` with Kronrod weights and the embedded Gauss
/// weights (zero at Kronrod-only nodes).
struct Rule {
    x: [f64; 15],
    wk: [f64; 15],
    wg: [f64; 15],
}

const fn rule() -> Rule {
    let mut x = [0.0; 15];
    let mut wk = [0.0; 15];
    let mut wg = [0.0; 15];
    let mut i = 0;
    while i < 8 {
        x[i] = -XGK[i];
        x[14 - i] = XGK[i];
        wk[i] = WGK[i];
        wk[14 - i] = WGK[i];
        if i % 2 == 1 {
            wg[i] = WG[i / 2];
            wg[14 - i] = WG[i / 2];
        }
        i += 1;
    }
    Rule { x, wk, wg }
}

const RULE: Rule = rule();

#[derive(Clone, Copy)]
struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    fn nodes(&self) -> [f64; 15] {
        let c = 0.5 * (self.lo + self.hi);
        let r = 0.5 * (self.hi - self.lo);
        RULE.x.map(|t| c + r * t)
    }

    fn halves(&self) -> (Interval, Interval) {
        let mid = 0.5 * (self.lo + self.hi);
        (
            Interval { lo: self.lo, hi: mid },
            Interval { lo: mid, hi: self.hi },
        )
    }

    fn splittable(&self) -> bool {
        let mid = 0.5 * (self.lo + self.hi);
        mid > self.lo && mid < self.hi
    }
}

/// A region with its estimate and error; ordered by error for the heap.
struct Region<const K: usize, S> {
    shape: S,
    value: [f64; K],
    error: [f64; K],
    priority: f64,
    split_first: bool,
}

impl<const K: usize, S> PartialEq for Region<K, S> {
    fn eq(&self, other: &Self) -> bool {
        self.priority.total_cmp(&other.priority) == Ordering::Equal
    }
}
impl<const K: usize, S> Eq for Region<K, S> {}
impl<const K: usize, S> PartialOrd for Region<K, S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const K: usize, S> Ord for Region<K, S> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority.total_cmp(&other.priority)
    }
}

fn max_of<const K: usize>(v: &[f64; K]) -> f64 {
    v.iter().fold(0.0, |a, &b| a.max(b))
}

/// Drives the refinement loop shared by the 1-D and 2-D engines.
fn refine<const K: usize, S: Copy>(
    first: Region<K, S>,
    tol: f64,
    budget: usize,
    evals_per_region: usize,
    mut eval: impl FnMut(S) -> Result<Region<K, S>>,
    split: impl Fn(&S, bool) -> Option<(S, S)>,
) -> Result<Integral<K>> {
    let mut total_err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let mut subdivisions = 0;
    let mut evaluations = evals_per_region;
    loop {
        if total_err.iter().all(|&e| e <= tol) {
            break;
        }
        if subdivisions >= budget {
            let (value, error) = summarize(&heap);
            return Err(Error::QuadratureBudget {
                estimate: value.to_vec(),
                error: max_of(&error),
                subdivisions,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let Some((a, b)) = split(&worst.shape, worst.split_first) else {
            // Resolution exhausted: keep the region as is.
            heap.push(worst);
            let (value, error) = summarize(&heap);
            return Err(Error::QuadratureBudget {
                estimate: value.to_vec(),
                error: max_of(&error),
                subdivisions,
            });
        };
        let ra = eval(a)?;
        let rb = eval(b)?;
        evaluations += 2 * evals_per_region;
        for (c, t) in total_err.iter_mut().enumerate() {
            *t += ra.error[c] + rb.error[c] - worst.error[c];
        }
        heap.push(ra);
        heap.push(rb);
        subdivisions += 1;
        // Incremental updates drift; resync occasionally.
        if subdivisions % 256 == 0 {
            total_err = summarize(&heap).1;
        }
    }
    let (value, bound) = summarize(&heap);
    Ok(Integral {
        value,
        bound,
        evaluations,
    })
}

fn summarize<const K: usize, S>(heap: &BinaryHeap<Region<K, S>>) -> ([f64; K], [f64; K]) {
    let mut regions: Vec<&Region<K, S>> = heap.iter().collect();
    // Heap iteration order depends on insertion history only, so this is
    // already deterministic; sorting makes the sum independent of it.
    regions.sort_by(|a, b| b.priority.total_cmp(&a.priority));
    let mut value = [0.0; K];
    let mut error = [0.0; K];
    let mut col = Vec::with_capacity(regions.len());
    for c in 0..K {
        col.clear();
        col.extend(regions.iter().map(|r| r.value[c]));
        value[c] = pairwise_sum(&col);
        col.clear();
        col.extend(regions.iter().map(|r| r.error[c]));
        error[c] = pairwise_sum(&col);
    }
    (value, error)
}

#[derive(Clone, Copy)]
struct Square {
    x: Interval,
    y: Interval,
}

pub(crate) fn adaptive2d<const K: usize, G: TensorIntegrand<K>>(
    kernel: &KernelConfig,
    u_star: PrincipalPoint,
    g: &G,
    tol: f64,
    budget: usize,
) -> Result<Integral<K>> {
    let hw = HALF_WIDTH * kernel.h();
    let mut buf = vec![[0.0; K]; 225];
    let mut eval = |s: Square| -> Result<Region<K, Square>> {
        let xs = s.x.nodes();
        let ys = s.y.nodes();
        g.eval_tensor(&xs, &ys, &mut buf);
        let kx = xs.map(|m| kernel.axis_weight(u_star.m1, m));
        let ky = ys.map(|m| kernel.axis_weight(u_star.m0, m));
        let mut kk = [0.0; K];
        let mut gk = [0.0; K];
        let mut kg = [0.0; K];
        for i in 0..15 {
            let mut row_k = [0.0; K];
            let mut row_g = [0.0; K];
            for j in 0..15 {
                let v = buf[i * 15 + j];
                check_finite(&v, xs[i], ys[j])?;
                let w = kx[i] * ky[j];
                for c in 0..K {
                    let f = v[c] * w;
                    row_k[c] += RULE.wk[j] * f;
                    row_g[c] += RULE.wg[j] * f;
                }
            }
            for c in 0..K {
                kk[c] += RULE.wk[i] * row_k[c];
                gk[c] += RULE.wg[i] * row_k[c];
                kg[c] += RULE.wk[i] * row_g[c];
            }
        }
        let scale = 0.25 * (s.x.hi - s.x.lo) * (s.y.hi - s.y.lo);
        let mut value = [0.0; K];
        let mut error = [0.0; K];
        let (mut ex, mut ey) = (0.0f64, 0.0f64);
        for c in 0..K {
            value[c] = kk[c] * scale;
            let dx = ((kk[c] - gk[c]) * scale).abs();
            let dy = ((kk[c] - kg[c]) * scale).abs();
            error[c] = dx + dy;
            ex = ex.max(dx);
            ey = ey.max(dy);
        }
        Ok(Region {
            shape: s,
            value,
            priority: max_of(&error),
            error,
            split_first: ex >= ey,
        })
    };
    let first = eval(Square {
        x: Interval {
            lo: u_star.m1 - hw,
            hi: u_star.m1 + hw,
        },
        y: Interval {
            lo: u_star.m0 - hw,
            hi: u_star.m0 + hw,
        },
    })?;
    let split = |s: &Square, along_x: bool| -> Option<(Square, Square)> {
        if along_x && s.x.splittable() {
            let (a, b) = s.x.halves();
            Some((Square { x: a, y: s.y }, Square { x: b, y: s.y }))
        } else if s.y.splittable() {
            let (a, b) = s.y.halves();
            Some((Square { x: s.x, y: a }, Square { x: s.x, y: b }))
        } else {
            None
        }
    };
    refine(first, tol, budget, 225, eval, split)
}

pub(crate) fn adaptive1d<const K: usize, G: LineIntegrand<K>>(
    kernel: &KernelConfig,
    u_star: PrincipalPoint,
    fixed_axis: Arm,
    m_fixed: f64,
    g: &G,
    tol: f64,
    budget: usize,
) -> Result<Integral<K>> {
    let center = u_star.coord(fixed_axis.other());
    let k_fixed = kernel.axis_weight(u_star.coord(fixed_axis), m_fixed);
    let hw = HALF_WIDTH * kernel.h();
    let mut buf = [[0.0; K]; 15];
    let mut eval = |iv: Interval| -> Result<Region<K, Interval>> {
        let xs = iv.nodes();
        g.eval_line(&xs, &mut buf);
        let mut qk = [0.0; K];
        let mut qg = [0.0; K];
        for i in 0..15 {
            let (m1, m0) = match fixed_axis {
                Arm::Treated => (m_fixed, xs[i]),
                Arm::Control => (xs[i], m_fixed),
            };
            check_finite(&buf[i], m1, m0)?;
            let w = k_fixed * kernel.axis_weight(center, xs[i]);
            for c in 0..K {
                qk[c] += RULE.wk[i] * buf[i][c] * w;
                qg[c] += RULE.wg[i] * buf[i][c] * w;
            }
        }
        let r = 0.5 * (iv.hi - iv.lo);
        let value = qk.map(|v| v * r);
        let mut error = [0.0; K];
        for c in 0..K {
            error[c] = ((qk[c] - qg[c]) * r).abs();
        }
        Ok(Region {
            shape: iv,
            value,
            priority: max_of(&error),
            error,
            split_first: true,
        })
    };
    let first = eval(Interval {
        lo: center - hw,
        hi: center + hw,
    })?;
    let split = |iv: &Interval, _: bool| iv.splittable().then(|| iv.halves());
    refine(first, tol, budget, 15, eval, split)
}

/// Adaptive `int g(u) k(u) du` to absolute tolerance `tol`.
pub fn adaptive_oracle_2d<F>(u_star: PrincipalPoint, kernel: &KernelConfig, g: F, tol: f64) -> Result<Integral<1>>
where
    F: Fn(PrincipalPoint) -> f64 + Sync,
{
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    adaptive2d(kernel, u_star, &PointFn(g), tol, 200_000)
}

/// Adaptive 1-D counterpart of [`adaptive_oracle_2d`].
pub fn adaptive_oracle_1d<F>(
    u_star: PrincipalPoint,
    kernel: &KernelConfig,
    fixed_axis: Arm,
    m_fixed: f64,
    g: F,
    tol: f64,
) -> Result<Integral<1>>
where
    F: Fn(f64) -> f64 + Sync,
{
    if !(tol > 0.0) {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    adaptive1d(kernel, u_star, fixed_axis, m_fixed, &ScalarFn(g), tol, 200_000)
}
