//! Truncated uniform-grid midpoint rule.
//!
//! Kernel weights are normalized on each axis so the discrete kernel has
//! unit mass; constants and linear functions are then reproduced exactly
//! on the symmetric grid.
//!
//! The reported bound is `truncation + grid + normalization`. Truncation is
//! `sup|g|` times the kernel mass outside the window, the grid term is the
//! discrete Hardy-Krause variation `V` of `g k` on the node array scaled by
//! `2 L^2 / N` (or `L V / N` in one dimension), and the last term is
//! `sup|g|` times the mass the normalization moved.

use super::{check_finite, Integral, LineIntegrand, PointFn, QuadratureConfig, ScalarFn, TensorIntegrand};
use crate::dataset::{Arm, PrincipalPoint};
use crate::error::Result;
use crate::kernel::KernelConfig;
use crate::normal;
use crate::stats::pairwise_sum;

/// Values per integrand call.
const BLOCK: usize = 1 << 14;

fn axis_nodes(center: f64, width: f64, count: usize) -> Vec<f64> {
    let cell = width / count as f64;
    let lo = center - 0.5 * width;
    (0..count).map(|i| lo + (i as f64 + 0.5) * cell).collect()
}

/// Scales midpoint weights to unit mass; returns them with the original mass.
fn unit_mass(mut w: Vec<f64>, cell: f64) -> (Vec<f64>, f64) {
    let mass = pairwise_sum(&w) * cell;
    for v in &mut w {
        *v /= mass;
    }
    (w, mass)
}

fn column_sums<const K: usize>(rows: &[[f64; K]]) -> [f64; K] {
    let mut out = [0.0; K];
    let mut col = vec![0.0; rows.len()];
    for (k, o) in out.iter_mut().enumerate() {
        for (c, r) in col.iter_mut().zip(rows) {
            *c = r[k];
        }
        *o = pairwise_sum(&col);
    }
    out
}

pub(crate) fn grid2d<const K: usize, G: TensorIntegrand<K>>(
    cfg: &QuadratureConfig,
    kernel: &KernelConfig,
    u_star: PrincipalPoint,
    n: usize,
    g: &G,
) -> Result<Integral<K>> {
    let nodes = cfg.nodes_2d(n);
    let width = cfg.window(kernel.h(), n);
    let cell = width / nodes as f64;
    let a = axis_nodes(u_star.m1, width, nodes);
    let b = axis_nodes(u_star.m0, width, nodes);
    let (ka, sa) = unit_mass(a.iter().map(|&m| kernel.axis_weight(u_star.m1, m)).collect(), cell);
    let (kb, sb) = unit_mass(b.iter().map(|&m| kernel.axis_weight(u_star.m0, m)).collect(), cell);

    let rows_per_block = (BLOCK / nodes).max(1);
    let mut buf = vec![[0.0; K]; rows_per_block * nodes];
    let mut prev = vec![[0.0; K]; nodes];
    let mut cur = vec![[0.0; K]; nodes];
    let mut row_sums = Vec::with_capacity(nodes);
    let mut variation = [0.0; K];
    let mut sup = [0.0f64; K];

    for start in (0..nodes).step_by(rows_per_block) {
        let end = (start + rows_per_block).min(nodes);
        let len = end - start;
        g.eval_tensor(&a[start..end], &b, &mut buf[..len * nodes]);
        for r in 0..len {
            let j = start + r;
            let mut sum = [0.0; K];
            for k in 0..nodes {
                let gv = buf[r * nodes + k];
                check_finite(&gv, a[j], b[k])?;
                let w = ka[j] * kb[k];
                let mut f = [0.0; K];
                for c in 0..K {
                    f[c] = gv[c] * w;
                    sum[c] += f[c];
                    sup[c] = sup[c].max(gv[c].abs());
                    if j > 0 && k > 0 {
                        variation[c] += (f[c] - cur[k - 1][c] - prev[k][c] + prev[k - 1][c]).abs();
                    }
                    if j == nodes - 1 && k > 0 {
                        variation[c] += (f[c] - cur[k - 1][c]).abs();
                    }
                    if k == nodes - 1 && j > 0 {
                        variation[c] += (f[c] - prev[k][c]).abs();
                    }
                }
                cur[k] = f;
            }
            row_sums.push(sum);
            std::mem::swap(&mut prev, &mut cur);
        }
    }

    let total = column_sums(&row_sums);
    let outside = 2.0 * normal::sf(0.5 * width / kernel.h());
    let lost_mass = 2.0 * outside - outside * outside;
    let mut value = [0.0; K];
    let mut bound = [0.0; K];
    for c in 0..K {
        value[c] = total[c] * cell * cell;
        bound[c] = sup[c] * (lost_mass + (1.0 - sa * sb).abs()) + 2.0 * width * width * variation[c] / nodes as f64;
    }
    Ok(Integral {
        value,
        bound,
        evaluations: nodes * nodes,
    })
}

pub(crate) fn grid1d<const K: usize, G: LineIntegrand<K>>(
    cfg: &QuadratureConfig,
    kernel: &KernelConfig,
    u_star: PrincipalPoint,
    n: usize,
    fixed_axis: Arm,
    m_fixed: f64,
    g: &G,
) -> Result<Integral<K>> {
    let nodes = cfg.nodes_1d(n);
    let width = cfg.window(kernel.h(), n);
    let cell = width / nodes as f64;
    let center = u_star.coord(fixed_axis.other());
    let k_fixed = kernel.axis_weight(u_star.coord(fixed_axis), m_fixed);
    let lo = center - 0.5 * width;
    let free: Vec<f64> = (0..nodes)
        .map(|i| kernel.axis_weight(center, lo + (i as f64 + 0.5) * cell))
        .collect();
    let (free, mass) = unit_mass(free, cell);

    let mut buf = vec![[0.0; K]; BLOCK.min(nodes)];
    let mut ms = vec![0.0; BLOCK.min(nodes)];
    let mut block_sums = Vec::with_capacity(nodes / BLOCK + 1);
    let mut last: Option<[f64; K]> = None;
    let mut variation = [0.0; K];
    let mut sup = [0.0f64; K];
    for start in (0..nodes).step_by(BLOCK) {
        let len = (nodes - start).min(BLOCK);
        for (i, m) in ms[..len].iter_mut().enumerate() {
            *m = lo + ((start + i) as f64 + 0.5) * cell;
        }
        g.eval_line(&ms[..len], &mut buf[..len]);
        let mut sum = [0.0; K];
        for i in 0..len {
            let gv = buf[i];
            let m = ms[i];
            let (m1, m0) = match fixed_axis {
                Arm::Treated => (m_fixed, m),
                Arm::Control => (m, m_fixed),
            };
            check_finite(&gv, m1, m0)?;
            let w = k_fixed * free[start + i];
            let mut f = [0.0; K];
            for c in 0..K {
                f[c] = gv[c] * w;
                sum[c] += f[c];
                sup[c] = sup[c].max(gv[c].abs());
                if let Some(prev) = last {
                    variation[c] += (f[c] - prev[c]).abs();
                }
            }
            last = Some(f);
        }
        block_sums.push(sum);
    }
    let total = column_sums(&block_sums);
    let outside = 2.0 * normal::sf(0.5 * width / kernel.h());
    let mut value = [0.0; K];
    let mut bound = [0.0; K];
    for c in 0..K {
        value[c] = total[c] * cell;
        bound[c] = sup[c] * k_fixed * (outside + (1.0 - mass).abs()) + cell * variation[c];
    }
    Ok(Integral {
        value,
        bound,
        evaluations: nodes,
    })
}

/// Grid smoother of a pointwise function: `int g(u) k(u) du`.
pub fn smooth2d<F>(
    cfg: &QuadratureConfig,
    kernel: &KernelConfig,
    u_star: PrincipalPoint,
    n: usize,
    g: F,
) -> Result<Integral<1>>
where
    F: Fn(PrincipalPoint) -> f64 + Sync,
{
    cfg.validate()?;
    grid2d(cfg, kernel, u_star, n, &PointFn(g))
}

/// Grid smoother along the free axis with `fixed_axis` pinned at `m_fixed`.
pub fn smooth1d<F>(
    cfg: &QuadratureConfig,
    kernel: &KernelConfig,
    u_star: PrincipalPoint,
    n: usize,
    fixed_axis: Arm,
    m_fixed: f64,
    g: F,
) -> Result<Integral<1>>
where
    F: Fn(f64) -> f64 + Sync,
{
    cfg.validate()?;
    grid1d(cfg, kernel, u_star, n, fixed_axis, m_fixed, &ScalarFn(g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::kernel::kernel_marginal;
    use std::f64::consts::PI;

    fn setup(h: f64) -> (QuadratureConfig, KernelConfig, PrincipalPoint) {
        (
            QuadratureConfig::default(),
            KernelConfig::new(h).unwrap(),
            PrincipalPoint::new(0.3, -0.2),
        )
    }

    #[test]
    fn constant_integrates_to_one() {
        for n in [50, 500, 2000] {
            let (c, k, u) = setup(0.2);
            let r = smooth2d(&c, &k, u, n, |_| 1.0).unwrap();
            assert!((r.value[0] - 1.0).abs() <= 1.0 / n as f64, "n={n} {}", r.value[0]);
            assert!(r.bound[0] >= (r.value[0] - 1.0).abs());
        }
    }

    #[test]
    fn gaussian_convolution_identity() {
        let (c, k, u) = setup(0.15);
        let s = 0.4;
        let r = smooth2d(&c, &k, u, 2000, |v| {
            normal::pdf_scaled(v.m1, u.m1, s) * normal::pdf_scaled(v.m0, u.m0, s)
        })
        .unwrap();
        let want = 1.0 / (2.0 * PI * (s * s + 0.15 * 0.15));
        assert!((r.value[0] - want).abs() < 1e-6, "{} vs {want}", r.value[0]);
    }

    #[test]
    fn linear_functions_are_exact() {
        let (c, k, u) = setup(0.3);
        let r = smooth2d(&c, &k, u, 500, |v| 2.0 * v.m1 - 0.7 * v.m0).unwrap();
        assert!((r.value[0] - (2.0 * u.m1 - 0.7 * u.m0)).abs() < 1e-6);
    }

    #[test]
    fn one_dimensional_cases() {
        let (c, k, u) = setup(0.25);
        let n = 2000;
        let m_fixed = 0.5;
        let one = smooth1d(&c, &k, u, n, Arm::Treated, m_fixed, |_| 1.0).unwrap();
        let km = kernel_marginal(&k, u, Arm::Treated, m_fixed);
        assert!((one.value[0] - km).abs() < 1e-6);
        let three = smooth1d(&c, &k, u, n, Arm::Control, m_fixed, |_| 3.0).unwrap();
        assert!((three.value[0] - 3.0 * kernel_marginal(&k, u, Arm::Control, m_fixed)).abs() < 1e-6);
        // Gaussian in the free variable: product of normal densities integrates
        // to a normal density of the difference of centers.
        let (mu, s) = (0.1, 0.5);
        let r = smooth1d(&c, &k, u, n, Arm::Treated, m_fixed, |m| normal::pdf_scaled(m, mu, s)).unwrap();
        let want = km * normal::pdf_scaled(u.m0, mu, (s * s + 0.0625f64).sqrt());
        assert!((r.value[0] - want).abs() < 1e-6);
    }

    #[test]
    fn bound_shrinks_when_nodes_double() {
        let (c, k, u) = setup(0.2);
        let g = |v: PrincipalPoint| (v.m1 * 3.0).sin() * (1.0 + v.m0 * v.m0);
        let mut last = f64::INFINITY;
        for nodes in [16, 32, 64, 128, 256] {
            let cfg = QuadratureConfig {
                n_override: Some(nodes),
                ..c
            };
            let r = smooth2d(&cfg, &k, u, 1000, g).unwrap();
            assert!(r.bound[0] <= last);
            last = r.bound[0];
        }
    }

    #[test]
    fn non_finite_values_name_the_node() {
        let (c, k, u) = setup(0.2);
        let r = smooth2d(&c, &k, u, 100, |v| if v.m1 > u.m1 { f64::NAN } else { 1.0 });
        match r {
            Err(Error::NonFiniteIntegrand { m1, .. }) => assert!(m1 > u.m1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
