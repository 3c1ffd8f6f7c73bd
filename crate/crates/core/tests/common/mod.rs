//! Reference implementations used as test oracles. Nothing here calls into
//! the code under test except to read plain data (graphs, matrices).

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zofo_core::Graph;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Standard normal draw by the polar method.
pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        let s = a * a + b * b;
        if s > 0.0 && s < 1.0 {
            return a * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

pub fn normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| normal(rng)).collect()
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// All-pairs hop distances by Floyd-Warshall over the adjacency relation.
pub fn floyd_warshall(graph: &Graph) -> Vec<Vec<usize>> {
    let n = graph.len();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if i != j && graph.has_edge(i, j) {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// The 30-graph suite: paths, rings, stars, complete graphs and random
/// connected graphs, all with at most 12 nodes.
pub fn graph_suite(seed: u64) -> Vec<(String, Graph)> {
    let mut out = Vec::new();
    for n in 2..=7 {
        out.push((format!("path{n}"), Graph::path(n).unwrap()));
    }
    for n in 3..=8 {
        out.push((format!("ring{n}"), Graph::ring(n).unwrap()));
    }
    for n in 3..=8 {
        out.push((format!("star{n}"), Graph::star(n).unwrap()));
    }
    for n in 2..=5 {
        out.push((format!("complete{n}"), Graph::complete(n).unwrap()));
    }
    for n in 5..=12 {
        out.push((format!("random{n}"), Graph::erdos_renyi(n, 0.35, seed + n as u64).unwrap()));
    }
    out
}

/// A boundary piece of a 2-D set, parametrized over `[0, 1]`.
pub type Boundary<'a> = &'a dyn Fn(f64) -> [f64; 2];

/// Minimizes a strongly convex `f` over a closed 2-D set given by its
/// membership test, bounding box, and boundary pieces. Candidates come from
/// a refined Cartesian grid over the interior and a refined 1-D grid along
/// each boundary piece; the best feasible value wins.
pub fn grid_argmin_2d<F, C>(f: F, feasible: C, lo: [f64; 2], hi: [f64; 2], boundary: &[Boundary]) -> [f64; 2]
where
    F: Fn([f64; 2]) -> f64,
    C: Fn([f64; 2]) -> bool,
{
    const K: usize = 100;
    const LEVELS: usize = 40;
    let mut best: Option<([f64; 2], f64)> = None;
    let offer = |p: [f64; 2], best: &mut Option<([f64; 2], f64)>| {
        let v = f(p);
        if best.is_none_or(|(_, bv)| v < bv) {
            *best = Some((p, v));
        }
    };

    let (mut lo_k, mut hi_k) = (lo, hi);
    let mut interior: Option<([f64; 2], f64)> = None;
    for _ in 0..LEVELS {
        let h = [(hi_k[0] - lo_k[0]) / K as f64, (hi_k[1] - lo_k[1]) / K as f64];
        for a in 0..=K {
            for b in 0..=K {
                let p = [lo_k[0] + a as f64 * h[0], lo_k[1] + b as f64 * h[1]];
                if feasible(p) {
                    offer(p, &mut interior);
                }
            }
        }
        let Some((p, _)) = interior else { break };
        lo_k = [(p[0] - 4.0 * h[0]).max(lo[0]), (p[1] - 4.0 * h[1]).max(lo[1])];
        hi_k = [(p[0] + 4.0 * h[0]).min(hi[0]), (p[1] + 4.0 * h[1]).min(hi[1])];
    }
    if let Some((p, _)) = interior {
        offer(p, &mut best);
    }

    for piece in boundary {
        let (mut a, mut b) = (0.0f64, 1.0f64);
        let mut along: Option<([f64; 2], f64)> = None;
        let mut arg = 0.0;
        for level in 0..LEVELS {
            let k = if level == 0 { 20 * K } else { K };
            let h = (b - a) / k as f64;
            for i in 0..=k {
                let s = a + i as f64 * h;
                let p = piece(s);
                let before = along.map(|(_, v)| v);
                offer(p, &mut along);
                if along.map(|(_, v)| v) != before {
                    arg = s;
                }
            }
            a = (arg - 2.0 * h).max(0.0);
            b = (arg + 2.0 * h).min(1.0);
        }
        if let Some((p, _)) = along {
            offer(p, &mut best);
        }
    }
    best.expect("set has a feasible point").0
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let k = values.len();
    if k % 2 == 1 {
        values[k / 2]
    } else {
        0.5 * (values[k / 2 - 1] + values[k / 2])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Percentile-bootstrap interval `(q_lo, q_hi)` of the mean of `samples`.
pub fn bootstrap_mean_interval(samples: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let n = samples.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let idx = |q: f64| ((q * (resamples - 1) as f64).round() as usize).min(resamples - 1);
    let tail = (1.0 - level) / 2.0;
    (means[idx(tail)], means[idx(1.0 - tail)])
}

/// Splits `trajectory` into `windows` consecutive chunks and returns the
/// maximum of each: the upper envelope.
pub fn window_maxima(trajectory: &[f64], windows: usize) -> Vec<f64> {
    let len = trajectory.len();
    (0..windows)
        .map(|k| {
            let a = k * len / windows;
            let b = ((k + 1) * len / windows).max(a + 1);
            trajectory[a..b].iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Largest increase between consecutive envelope values (0 if nonincreasing).
pub fn largest_envelope_rise(envelope: &[f64]) -> f64 {
    envelope.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// `||W - (1/n) 1 1^T||_2` from the singular values.
pub fn spectral_rho(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let centered = w - DMatrix::from_element(n, n, 1.0 / n as f64);
    centered.singular_values().max()
}

/// Root-mean-square distance of per-agent vectors from their mean.
pub fn rms_spread(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let m = rows[0].len();
    let mut avg = vec![0.0; m];
    for r in rows {
        for (a, v) in avg.iter_mut().zip(r) {
            *a += v / n as f64;
        }
    }
    let total: f64 = rows.iter().map(|r| l2_dist(r, &avg).powi(2)).sum();
    (total / n as f64).sqrt()
}

/// Largest violation among row sums, column sums, symmetry, sign, and
/// sparsity of `w` relative to `graph`.
pub fn doubly_stochastic_defect(graph: &Graph, w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        worst = worst.max((w.row(i).sum() - 1.0).abs());
        worst = worst.max((w.column(i).sum() - 1.0).abs());
        for j in 0..n {
            worst = worst.max((w[(i, j)] - w[(j, i)]).abs());
            worst = worst.max(-w[(i, j)]);
            if i != j && !graph.has_edge(i, j) {
                worst = worst.max(w[(i, j)].abs());
            }
        }
    }
    worst
}

/// Theorem constants written out term by term.
pub struct HandTheorem {
    pub xi: f64,
    pub zeta: f64,
    pub eta: f64,
    pub mu: f64,
    pub u: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn hand_theorem(
    m0: f64,
    l0: f64,
    m_g: f64,
    l_g: f64,
    z: f64,
    r_bar: f64,
    d: f64,
    n: f64,
    b_bar: f64,
    b_frak: f64,
    rho: f64,
    c: f64,
    t: f64,
) -> HandTheorem {
    let first = m0 * b_frak * d.sqrt();
    let second = l0 * b_bar * d * r_bar;
    let third = 2.0 * 3f64.sqrt() * b_frak * d * m0;
    let root = (24.0 * m0 * m0 + 27.0 * m_g * m_g * c * c).sqrt();
    let xi = (first + second + third) * root + 104.0 * m0 * m0 * d + 124.0 * m_g * m_g * d * c * c;
    let zeta = 403.0 * d * m_g * m_g * r_bar
        + (6.0 * d * z * z + 3.0 * m_g * m_g * r_bar + 243.0 * r_bar * d * m_g * m_g) / (1.0 - rho);
    let u = (m_g / ((d + 6.0) * l_g)).min(1.0 / (d * t.sqrt() * l0.max(l_g)).sqrt());
    HandTheorem {
        xi,
        zeta,
        eta: r_bar / (t * xi).sqrt(),
        mu: c * (2.0 * n).sqrt() / (t * zeta).sqrt(),
        u,
    }
}
