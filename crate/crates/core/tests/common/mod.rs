// Brute-force reference implementations and random fixtures shared by the
// integration tests. Everything here is written straight from the defining
// formulas, with no reuse of library internals.
#![allow(dead_code)]

use deformreg_core::{
    CostVolume, DisplacementField, Dims, FeatureVolume, LabelVolume, SearchSpace, Spacing, Volume3D,
};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_volume(rng: &mut ChaCha8Rng, dims: Dims, lo: f32, hi: f32) -> Volume3D {
    Volume3D::from_fn(dims, Spacing::UNIT, |_, _, _| rng.random_range(lo..hi)).unwrap()
}

pub fn random_features(rng: &mut ChaCha8Rng, dims: Dims, channels: usize) -> FeatureVolume {
    let data = (0..channels * dims.len()).map(|_| rng.random_range(0.0f32..1.0)).collect();
    FeatureVolume::new(dims, Spacing::UNIT, channels, data).unwrap()
}

/// Smooth random field: a sum of two low-frequency sinusoids per component,
/// with `max |u_a| <= amplitude`.
pub fn smooth_field(rng: &mut ChaCha8Rng, dims: Dims, stride: usize, amplitude: f64) -> DisplacementField {
    let n = dims.to_array().map(|v| v.max(2) as f64);
    let waves: Vec<[(f64, [f64; 3]); 2]> = (0..3)
        .map(|_| {
            [0, 1].map(|_| {
                let phase = rng.random_range(0.0..core::f64::consts::TAU);
                let freq = [0, 1, 2].map(|_| rng.random_range(0.3..1.0));
                (phase, freq)
            })
        })
        .collect();
    DisplacementField::from_fn(dims, stride, |x, y, z| {
        let p = [x as f64, y as f64, z as f64];
        [0, 1, 2].map(|a| {
            let v: f64 = waves[a]
                .iter()
                .map(|(phase, f)| {
                    let arg: f64 = (0..3).map(|k| core::f64::consts::PI * f[k] * p[k] / n[k]).sum();
                    (arg + phase).sin()
                })
                .sum();
            (0.5 * amplitude * v) as f32
        })
    })
    .unwrap()
}

pub fn clampi(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Value at integer position with replicate padding.
pub fn at_clamped(data: &[f32], dims: Dims, p: [isize; 3]) -> f64 {
    data[dims.index(clampi(p[0], dims.nx), clampi(p[1], dims.ny), clampi(p[2], dims.nz))] as f64
}

/// Windowed mean over `(2r+1)^3` with replicate padding, voxel by voxel.
pub fn brute_box(data: &[f64], dims: Dims, r: usize) -> Vec<f64> {
    let r = r as isize;
    let mut out = vec![0.0; dims.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let [x, y, z] = dims.coords(i).map(|v| v as isize);
        let mut acc = 0.0;
        let mut n = 0.0;
        for wz in -r..=r {
            for wy in -r..=r {
                for wx in -r..=r {
                    acc += data[dims.index(clampi(x + wx, dims.nx), clampi(y + wy, dims.ny), clampi(z + wz, dims.nz))];
                    n += 1.0;
                }
            }
        }
        *o = acc / n;
    }
    out
}

/// Plain trilinear interpolation with per-axis clamping.
pub fn brute_trilinear(data: &[f64], dims: Dims, p: [f64; 3]) -> f64 {
    let n = dims.to_array();
    let mut lo = [0usize; 3];
    let mut f = [0.0; 3];
    for a in 0..3 {
        let c = p[a].clamp(0.0, (n[a] - 1) as f64);
        lo[a] = (c.floor() as usize).min(n[a].saturating_sub(2));
        f[a] = c - lo[a] as f64;
    }
    let mut v = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = [dx, dy, dz]
                    .iter()
                    .zip(&f)
                    .map(|(&d, &fr)| if d == 1 { fr } else { 1.0 - fr })
                    .product::<f64>();
                let q = [lo[0] + dx, lo[1] + dy, lo[2] + dz];
                if w != 0.0 {
                    v += w * data[dims.index(q[0].min(n[0] - 1), q[1].min(n[1] - 1), q[2].min(n[2] - 1))];
                }
            }
        }
    }
    v
}

/// Triple-loop SSD cost volume, node-major.
pub fn brute_cost(fixed: &FeatureVolume, moving: &FeatureVolume, stride: usize, search: &SearchSpace, p: usize) -> Vec<f64> {
    let dims = fixed.dims();
    let grid = dims.node_grid(stride).unwrap();
    let p = p as isize;
    let c_n = fixed.channels();
    let mut out = Vec::new();
    for node in 0..grid.len() {
        let g = grid.coords(node);
        let xg = g.map(|v| (v * stride + stride / 2) as isize);
        for k in 0..search.count() {
            let d = search.displacement(k).map(|v| v as isize);
            let mut acc = 0.0;
            let mut n = 0.0;
            for c in 0..c_n {
                for wz in -p..=p {
                    for wy in -p..=p {
                        for wx in -p..=p {
                            let q = [xg[0] + wx, xg[1] + wy, xg[2] + wz];
                            let a = at_clamped(fixed.channel(c), dims, q);
                            let b = at_clamped(moving.channel(c), dims, [q[0] + d[0], q[1] + d[1], q[2] + d[2]]);
                            acc += (a - b) * (a - b);
                            n += 1.0;
                        }
                    }
                }
            }
            out.push(acc / n);
        }
    }
    out
}

/// MIND-SSC straight from its five-step definition.
pub fn brute_mind(vol: &Volume3D, d: usize, r: usize) -> Vec<Vec<f64>> {
    let dims = vol.dims();
    let di = d as isize;
    let nbr: Vec<[isize; 3]> = vec![[-di, 0, 0], [di, 0, 0], [0, -di, 0], [0, di, 0], [0, 0, -di], [0, 0, di]];
    let mut pairs = Vec::new();
    for i in 0..6 {
        for j in i + 1..6 {
            let opposite = (0..3).all(|a| nbr[i][a] == -nbr[j][a]);
            if !opposite {
                pairs.push((nbr[i], nbr[j]));
            }
        }
    }
    assert_eq!(pairs.len(), 12);
    let data = vol.data();
    let clamp3 = |p: [isize; 3]| [clampi(p[0], dims.nx), clampi(p[1], dims.ny), clampi(p[2], dims.nz)].map(|v| v as isize);
    let ri = r as isize;
    let n = dims.len();
    let mut dist = vec![vec![0.0; n]; 12];
    for (c, (ni, nj)) in pairs.iter().enumerate() {
        for (i, out) in dist[c].iter_mut().enumerate() {
            let x = dims.coords(i).map(|v| v as isize);
            let mut acc = 0.0;
            let mut cnt = 0.0;
            for wz in -ri..=ri {
                for wy in -ri..=ri {
                    for wx in -ri..=ri {
                        let y = clamp3([x[0] + wx, x[1] + wy, x[2] + wz]);
                        let a = at_clamped(data, dims, [y[0] + ni[0], y[1] + ni[1], y[2] + ni[2]]);
                        let b = at_clamped(data, dims, [y[0] + nj[0], y[1] + nj[1], y[2] + nj[2]]);
                        acc += (a - b) * (a - b);
                        cnt += 1.0;
                    }
                }
            }
            *out = acc / cnt;
        }
    }
    let mut var = vec![0.0; n];
    for i in 0..n {
        let lo = (0..12).map(|c| dist[c][i]).fold(f64::INFINITY, f64::min);
        for ch in dist.iter_mut() {
            ch[i] -= lo;
        }
        var[i] = (0..12).map(|c| dist[c][i]).sum::<f64>() / 12.0;
    }
    let vbar = var.iter().sum::<f64>() / n as f64;
    for v in var.iter_mut() {
        *v = if vbar == 0.0 { 1.0 } else { v.clamp(1e-3 * vbar, 1e3 * vbar) };
    }
    (0..12).map(|c| (0..n).map(|i| (-dist[c][i] / var[i]).exp()).collect()).collect()
}

/// One 3x3x3 mean pass on an f32 grid: nested per-axis window sums in f64
/// (x innermost), rounded to f32.
pub fn mean3_f32(data: &[f32], dims: Dims) -> Vec<f32> {
    let mut out = vec![0.0f32; dims.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let [x, y, z] = dims.coords(i).map(|v| v as isize);
        let mut sz = 0.0f64;
        for wz in -1..=1 {
            let mut sy = 0.0f64;
            for wy in -1..=1 {
                let mut sx = 0.0f64;
                for wx in -1..=1 {
                    sx += data[dims.index(clampi(x + wx, dims.nx), clampi(y + wy, dims.ny), clampi(z + wz, dims.nz))] as f64;
                }
                // The y pass reads x-pass results, one per row.
                sy += sx / 3.0;
            }
            sz += sy / 3.0;
        }
        *o = (sz / 3.0) as f32;
    }
    out
}

pub fn smooth_components(field: [Vec<f32>; 3], dims: Dims, passes: usize) -> [Vec<f32>; 3] {
    field.map(|mut c| {
        for _ in 0..passes {
            c = mean3_f32(&c, dims);
        }
        c
    })
}

/// Direct implementation of the coupled convex recurrence.
pub fn convex_reference(cv: &CostVolume, schedule: &[f32], passes: usize) -> [Vec<f32>; 3] {
    let grid = cv.grid();
    let search = cv.search();
    let disp: Vec<[f32; 3]> = (0..search.count()).map(|k| search.displacement(k).map(|v| v as f32)).collect();
    let pick = |score: &dyn Fn(usize, usize) -> f32| {
        let mut out = [vec![0.0f32; grid.len()], vec![0.0f32; grid.len()], vec![0.0f32; grid.len()]];
        for node in 0..grid.len() {
            let mut best = 0;
            for k in 1..search.count() {
                if score(node, k) < score(node, best) {
                    best = k;
                }
            }
            for a in 0..3 {
                out[a][node] = disp[best][a];
            }
        }
        out
    };
    let mut h = smooth_components(pick(&|n, k| cv.cost(n, k)), grid, passes);
    for &theta in schedule {
        let hh = h.clone();
        let hard = pick(&|n, k| {
            let dx = disp[k][0] - hh[0][n];
            let dy = disp[k][1] - hh[1][n];
            let dz = disp[k][2] - hh[2][n];
            cv.cost(n, k) + theta * (dx * dx + dy * dy + dz * dz)
        });
        h = smooth_components(hard, grid, passes);
    }
    h
}

/// Scalar Adam recurrence.
pub fn adam_reference(p0: f64, grad: impl Fn(f64) -> f64, alpha: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    let mut traj = vec![p];
    for t in 1..=steps {
        let g = grad(p);
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        p -= alpha * mh / (vh.sqrt() + eps);
        traj.push(p);
    }
    traj
}

/// det(I + grad u) with central differences, one-sided at borders.
pub fn brute_jacobian(u: &DisplacementField) -> Vec<f64> {
    let dims = u.dims();
    let n = dims.to_array();
    (0..dims.len())
        .map(|i| {
            let c = dims.coords(i);
            let mut m = [[0.0; 3]; 3];
            for r in 0..3 {
                let comp = u.component(r);
                for a in 0..3 {
                    let at = |k: usize| {
                        let mut q = c;
                        q[a] = k;
                        comp[dims.index(q[0], q[1], q[2])] as f64
                    };
                    let k = c[a];
                    let g = if k == 0 {
                        at(1) - at(0)
                    } else if k == n[a] - 1 {
                        at(k) - at(k - 1)
                    } else {
                        0.5 * (at(k + 1) - at(k - 1))
                    };
                    m[r][a] = g + if r == a { 1.0 } else { 0.0 };
                }
            }
            m[0][0] * m[1][1] * m[2][2] + m[0][1] * m[1][2] * m[2][0] + m[0][2] * m[1][0] * m[2][1]
                - m[0][2] * m[1][1] * m[2][0]
                - m[0][1] * m[1][0] * m[2][2]
                - m[0][0] * m[1][2] * m[2][1]
        })
        .collect()
}

pub fn brute_sdlogj(u: &DisplacementField) -> f64 {
    let dims = u.dims();
    let j = brute_jacobian(u);
    let mut logs = Vec::new();
    for i in 0..dims.len() {
        let [x, y, z] = dims.coords(i);
        if x > 0 && y > 0 && z > 0 && x + 1 < dims.nx && y + 1 < dims.ny && z + 1 < dims.nz {
            logs.push(j[i].clamp(1e-6, 1e6).ln());
        }
    }
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    (logs.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / logs.len() as f64).sqrt()
}

pub fn brute_dice(a: &LabelVolume, b: &LabelVolume, k: u32) -> Option<f64> {
    let na = a.data().iter().filter(|&&l| l == k).count();
    let nb = b.data().iter().filter(|&&l| l == k).count();
    let both = a.data().iter().zip(b.data()).filter(|(&x, &y)| x == k && y == k).count();
    if na + nb == 0 {
        None
    } else {
        Some(2.0 * both as f64 / (na + nb) as f64)
    }
}

fn brute_surface(l: &LabelVolume, k: u32) -> Vec<[usize; 3]> {
    let dims = l.dims();
    let n = dims.to_array();
    (0..dims.len())
        .map(|i| dims.coords(i))
        .filter(|c| {
            if l.at(c[0], c[1], c[2]) != k {
                return false;
            }
            for a in 0..3 {
                for s in [-1isize, 1] {
                    let v = c[a] as isize + s;
                    if v < 0 || v >= n[a] as isize {
                        return true;
                    }
                    let mut q = *c;
                    q[a] = v as usize;
                    if l.at(q[0], q[1], q[2]) != k {
                        return true;
                    }
                }
            }
            false
        })
        .collect()
}

/// All-pairs surface distances, nearest-rank 95th percentile, max of both ways.
pub fn brute_hd95(a: &LabelVolume, b: &LabelVolume, k: u32, sp: Spacing) -> f64 {
    let sa = brute_surface(a, k);
    let sb = brute_surface(b, k);
    let directed = |from: &[[usize; 3]], to: &[[usize; 3]]| {
        let mut d: Vec<f64> = from
            .iter()
            .map(|p| {
                to.iter()
                    .map(|q| {
                        (0..3)
                            .map(|ax| ((p[ax] as f64 - q[ax] as f64) * sp.0[ax]).powi(2))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        d.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let rank = (0.95 * d.len() as f64 - 1e-9).ceil() as usize;
        d[rank.max(1) - 1]
    };
    directed(&sa, &sb).max(directed(&sb, &sa))
}

pub fn brute_tre(pf: &[[f64; 3]], pm: &[[f64; 3]], u: &DisplacementField, sp: Spacing) -> Vec<f64> {
    let dims = u.dims();
    pf.iter()
        .zip(pm)
        .map(|(f, m)| {
            (0..3)
                .map(|a| {
                    let comp: Vec<f64> = u.component(a).iter().map(|&v| v as f64).collect();
                    let w = f[a] + brute_trilinear(&comp, dims, *f);
                    ((w - m[a]) * sp.0[a]).powi(2)
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Random blobby label map with classes `0..k`.
pub fn random_labels(rng: &mut ChaCha8Rng, dims: Dims, k: u32) -> LabelVolume {
    let centres: Vec<([f64; 3], f64, u32)> = (0..6)
        .map(|_| {
            let c = dims.to_array().map(|n| rng.random_range(0.0..n as f64));
            (c, rng.random_range(1.5..4.0), rng.random_range(1..k))
        })
        .collect();
    let data = (0..dims.len())
        .map(|i| {
            let p = dims.coords(i).map(|v| v as f64);
            centres
                .iter()
                .find(|(c, r, _)| (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>() <= r * r)
                .map_or(0, |(_, _, l)| *l)
        })
        .collect();
    LabelVolume::new(dims, Spacing::UNIT, data, k).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
