//! Quadratic test instances: `f_i(x) = x^T A_i x + b_i^T x + c_i` and
//! `g_ij(x^i) = x^iT P_ij x^i + q_ij^T x^i + r_ij`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{Evaluator, FeasibleSet, Layout, ProblemConstants, ProblemError, ProblemInstance};
use crate::linalg::{axpy, dot, mat_vec, norm, quad_form, quad_form_pair};
use crate::zeroth_order::{derive_seed, fill_gaussian};

pub const INSTANCE_FORMAT: &str = "zofo-quadratic/1";

const GENERATOR_DOMAIN: u64 = 0x7175_6164_6765_6e31;
const SLATER_SAMPLES: usize = 1000;
const SLATER_ATTEMPTS: usize = 20;

#[derive(Debug, Clone)]
pub struct QuadraticSpec {
    pub seed: Option<u64>,
    pub eig_range: (f64, f64),
    pub layout: Layout,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    /// `p[i][j]` is `P_ij`.
    pub p: Vec<Vec<DMatrix<f64>>>,
    pub q: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
    /// Strictly feasible point found by the generator.
    pub slater_point: Option<Vec<f64>>,
    a_avg: DMatrix<f64>,
    b_avg: Vec<f64>,
    c_avg: f64,
}

impl QuadraticSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        seed: Option<u64>,
        eig_range: (f64, f64),
        layout: Layout,
        a: Vec<DMatrix<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<f64>,
        p: Vec<Vec<DMatrix<f64>>>,
        q: Vec<Vec<Vec<f64>>>,
        r: Vec<Vec<f64>>,
    ) -> Result<Self, ProblemError> {
        let n = layout.n();
        let d = layout.total();
        let m = r.first().map_or(0, Vec::len);
        let bad = |what: &str| ProblemError::Format(format!("inconsistent {what}"));
        if a.len() != n || b.len() != n || c.len() != n || p.len() != n || q.len() != n || r.len() != n {
            return Err(bad("agent count"));
        }
        if a.iter().any(|ai| ai.shape() != (d, d)) || b.iter().any(|bi| bi.len() != d) {
            return Err(bad("objective dimensions"));
        }
        for i in 0..n {
            let di = layout.dims()[i];
            if p[i].len() != m || q[i].len() != m || r[i].len() != m {
                return Err(bad("constraint count"));
            }
            if p[i].iter().any(|pij| pij.shape() != (di, di)) || q[i].iter().any(|v| v.len() != di) {
                return Err(bad("constraint dimensions"));
            }
        }
        let nf = n as f64;
        let mut a_avg = DMatrix::zeros(d, d);
        for ai in &a {
            a_avg += ai;
        }
        a_avg /= nf;
        let mut b_avg = vec![0.0; d];
        for bi in &b {
            axpy(1.0, bi, &mut b_avg);
        }
        b_avg.iter_mut().for_each(|v| *v /= nf);
        let c_avg = c.iter().sum::<f64>() / nf;
        Ok(Self {
            seed,
            eig_range,
            layout,
            a,
            b,
            c,
            p,
            q,
            r,
            slater_point: None,
            a_avg,
            b_avg,
            c_avg,
        })
    }

    /// `-max_j sum_i g_ij` at the stored Slater point.
    pub fn slater_margin(&self) -> Option<f64> {
        let point = self.slater_point.as_ref()?;
        let mut g = vec![0.0; self.m()];
        let mut total = vec![0.0; self.m()];
        for i in 0..self.n() {
            self.local_constraints(i, &point[self.layout.block(i)], &mut g);
            axpy(1.0, &g, &mut total);
        }
        Some(-total.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn n(&self) -> usize {
        self.layout.n()
    }

    pub fn m(&self) -> usize {
        self.r.first().map_or(0, Vec::len)
    }

    /// `A = (1/n) sum_i A_i`.
    pub fn average_matrix(&self) -> &DMatrix<f64> {
        &self.a_avg
    }

    pub fn average_linear(&self) -> &[f64] {
        &self.b_avg
    }

    pub fn average_constant(&self) -> f64 {
        self.c_avg
    }

    /// Closed-form constants over the given local sets.
    pub fn constants(&self, sets: &[FeasibleSet]) -> ProblemConstants {
        let radii: Vec<f64> = sets.iter().map(FeasibleSet::norm_bound).collect();
        let r_bar = norm(&radii);
        let mut m0 = 0.0f64;
        let mut l0 = 0.0f64;
        for (ai, bi) in self.a.iter().zip(&self.b) {
            let lam = lambda_max(ai);
            l0 = l0.max(2.0 * lam);
            m0 = m0.max(2.0 * lam * r_bar + norm(bi));
        }
        let n = self.n();
        let mut m_pairs = vec![Vec::new(); n];
        let mut l_pairs = vec![Vec::new(); n];
        let mut z = 0.0f64;
        for i in 0..n {
            let ri = radii[i];
            let mut sup_sq = 0.0;
            for j in 0..self.m() {
                let lam = lambda_max(&self.p[i][j]);
                let qn = norm(&self.q[i][j]);
                l_pairs[i].push(2.0 * lam);
                m_pairs[i].push(2.0 * lam * ri + qn);
                sup_sq += (lam * ri * ri + qn * ri + self.r[i][j].abs()).powi(2);
            }
            z = z.max(sup_sq.sqrt());
        }
        ProblemConstants::from_pairs(m0, l0, &m_pairs, &l_pairs, z, radii, self.layout.total())
    }

    pub fn into_instance(self, sets: Vec<FeasibleSet>) -> Result<ProblemInstance, ProblemError> {
        let constants = self.constants(&sets);
        let spec = Arc::new(self);
        Ok(ProblemInstance::new(spec.layout.clone(), sets, spec.clone(), constants)?.with_quadratic(spec))
    }
}

impl Evaluator for QuadraticSpec {
    fn n_agents(&self) -> usize {
        self.n()
    }

    fn n_constraints(&self) -> usize {
        self.m()
    }

    fn local_cost(&self, agent: usize, x: &[f64]) -> f64 {
        quad_form(&self.a[agent], x) + dot(&self.b[agent], x) + self.c[agent]
    }

    fn local_cost_pair(&self, agent: usize, plus: &[f64], minus: &[f64]) -> (f64, f64) {
        let (qp, qm) = quad_form_pair(&self.a[agent], plus, minus);
        let (b, c) = (&self.b[agent], self.c[agent]);
        (qp + dot(b, plus) + c, qm + dot(b, minus) + c)
    }

    fn local_constraints(&self, agent: usize, xi: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = quad_form(&self.p[agent][j], xi) + dot(&self.q[agent][j], xi) + self.r[agent][j];
        }
    }

    fn global_cost(&self, x: &[f64]) -> f64 {
        quad_form(&self.a_avg, x) + dot(&self.b_avg, x) + self.c_avg
    }

    fn global_gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        mat_vec(&self.a_avg, x, out);
        for (o, b) in out.iter_mut().zip(&self.b_avg) {
            *o = 2.0 * *o + b;
        }
        true
    }

    fn constraint_gradient(&self, agent: usize, j: usize, xi: &[f64], out: &mut [f64]) -> bool {
        mat_vec(&self.p[agent][j], xi, out);
        for (o, q) in out.iter_mut().zip(&self.q[agent][j]) {
            *o = 2.0 * *o + q;
        }
        true
    }
}

pub(crate) fn lambda_max(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Parameters of the random quadratic generator. The defaults give the
/// 15-agent, 40-dimensional, two-constraint configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n: usize,
    /// Total dimension, split evenly unless `dims` is given.
    pub d: usize,
    pub dims: Option<Vec<usize>>,
    pub m: usize,
    pub eig_range: (f64, f64),
    /// Radius of the origin-centered ball each agent acts in.
    pub radius: f64,
    /// Radius of the strictly feasible ball around the Slater point.
    pub slater_radius: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 15,
            d: 40,
            dims: None,
            m: 2,
            eig_range: (0.1, 1.6),
            radius: 2.0,
            slater_radius: 0.1,
        }
    }
}

impl GeneratorConfig {
    pub fn layout(&self) -> Result<Layout, ProblemError> {
        match &self.dims {
            Some(dims) => {
                if dims.len() != self.n || dims.contains(&0) {
                    return Err(ProblemError::InvalidConfig(format!(
                        "dims must list {} positive entries",
                        self.n
                    )));
                }
                Ok(Layout::new(dims.clone()))
            }
            None => {
                if self.d < self.n {
                    return Err(ProblemError::InvalidConfig(format!(
                        "total dimension {} smaller than agent count {}",
                        self.d, self.n
                    )));
                }
                Ok(Layout::even(self.d, self.n))
            }
        }
    }
}

fn gaussian_vec(rng: &mut ChaCha12Rng, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    fill_gaussian(rng, &mut v);
    v
}

/// Haar-distributed orthogonal matrix via sign-corrected QR.
fn random_orthogonal(rng: &mut ChaCha12Rng, d: usize) -> DMatrix<f64> {
    let g = DMatrix::from_vec(d, d, gaussian_vec(rng, d * d));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for k in 0..d {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

fn symmetrize(mut a: DMatrix<f64>) -> DMatrix<f64> {
    let d = a.nrows();
    for i in 0..d {
        for j in i + 1..d {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

fn with_spectrum(q: &DMatrix<f64>, eigenvalues: &[f64]) -> DMatrix<f64> {
    let d = eigenvalues.len();
    let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(eigenvalues));
    let _ = d;
    symmetrize(q * lam * q.transpose())
}

fn uniform_spectrum(rng: &mut ChaCha12Rng, d: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    (0..d).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}

/// Random PD matrix with every eigenvalue in `range`.
fn random_pd(rng: &mut ChaCha12Rng, d: usize, range: (f64, f64)) -> DMatrix<f64> {
    let q = random_orthogonal(rng, d);
    let spec = uniform_spectrum(rng, d, range);
    with_spectrum(&q, &spec)
}

/// Draws a random quadratic instance.
///
/// The average objective matrix `A` is built with its extreme eigenvalues at
/// the ends of `eig_range`; each `A_i` adds a zero-sum heterogeneous part
/// scaled so every `A_i` stays positive definite. Constraint offsets `r_ij`
/// are shifted so a ball of radius `slater_radius` around a random interior
/// point is strictly feasible, which is then confirmed by sampling.
pub fn generate_quadratic(
    config: &GeneratorConfig,
) -> Result<(ProblemInstance, Arc<QuadraticSpec>), ProblemError> {
    let (lo, hi) = config.eig_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(ProblemError::InvalidEigRange(lo, hi));
    }
    if config.n == 0 {
        return Err(ProblemError::InvalidConfig("need at least one agent".into()));
    }
    if !(config.radius > 0.0) || !(config.slater_radius > 0.0) {
        return Err(ProblemError::InvalidConfig("radii must be positive".into()));
    }
    let layout = config.layout()?;
    let n = layout.n();
    let d = layout.total();
    let m = config.m;
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(&[config.seed, GENERATOR_DOMAIN]));

    // Average objective with spectrum spanning the configured range.
    let q_avg = random_orthogonal(&mut rng, d);
    let mut spectrum = uniform_spectrum(&mut rng, d, (lo, hi));
    spectrum[0] = lo;
    if d > 1 {
        spectrum[d - 1] = hi;
    }
    let a_target = with_spectrum(&q_avg, &spectrum);

    let noise: Vec<DMatrix<f64>> = (0..n).map(|_| random_pd(&mut rng, d, (lo, hi))).collect();
    let mut noise_mean = DMatrix::zeros(d, d);
    for s in &noise {
        noise_mean += s;
    }
    noise_mean /= n as f64;
    let deviations: Vec<DMatrix<f64>> = noise.iter().map(|s| symmetrize(s - &noise_mean)).collect();
    let spread = deviations
        .iter()
        .map(|e| SymmetricEigen::new(e.clone()).eigenvalues.amax())
        .fold(0.0f64, f64::max);
    let alpha = if spread > 0.0 { (0.5 * lo / spread).min(1.0) } else { 0.0 };
    let a: Vec<DMatrix<f64>> = deviations
        .iter()
        .map(|e| symmetrize(&a_target + e * alpha))
        .collect();

    let b_common = gaussian_vec(&mut rng, d);
    let b_noise: Vec<Vec<f64>> = (0..n).map(|_| gaussian_vec(&mut rng, d)).collect();
    let mut b_noise_mean = vec![0.0; d];
    for e in &b_noise {
        axpy(1.0 / n as f64, e, &mut b_noise_mean);
    }
    let b: Vec<Vec<f64>> = b_noise
        .iter()
        .map(|e| {
            (0..d)
                .map(|k| b_common[k] + e[k] - b_noise_mean[k])
                .collect()
        })
        .collect();
    let c_noise: Vec<f64> = (0..n).map(|_| gaussian_vec(&mut rng, 1)[0]).collect();
    let c_mean = c_noise.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = c_noise.iter().map(|v| v - c_mean).collect();

    let p: Vec<Vec<DMatrix<f64>>> = layout
        .dims()
        .iter()
        .map(|&di| (0..m).map(|_| random_pd(&mut rng, di, (lo, hi))).collect())
        .collect();
    let q: Vec<Vec<Vec<f64>>> = layout
        .dims()
        .iter()
        .map(|&di| (0..m).map(|_| gaussian_vec(&mut rng, di)).collect())
        .collect();
    let sets: Vec<FeasibleSet> = layout
        .dims()
        .iter()
        .map(|&di| FeasibleSet::origin_ball(di, config.radius))
        .collect();
    let curvature: Vec<f64> = (0..m)
        .map(|j| (0..n).map(|i| lambda_max(&p[i][j])).fold(0.0, f64::max))
        .collect();

    for _ in 0..SLATER_ATTEMPTS {
        // Interior point well inside every ball.
        let interior: Vec<f64> = sets
            .iter()
            .flat_map(|s| s.sample(&mut rng).into_iter().map(|v| 0.25 * v))
            .collect();
        let rho = config.slater_radius;
        let mut r = vec![vec![0.0; m]; n];
        for j in 0..m {
            let mut grad_sq = 0.0;
            let mut grad = Vec::new();
            for i in 0..n {
                let xi = &interior[layout.block(i)];
                grad.resize(xi.len(), 0.0);
                mat_vec(&p[i][j], xi, &mut grad);
                for (g, qv) in grad.iter_mut().zip(&q[i][j]) {
                    *g = 2.0 * *g + qv;
                }
                grad_sq += dot(&grad, &grad);
            }
            let margin = rho * grad_sq.sqrt() + rho * rho * curvature[j] + 0.05;
            for i in 0..n {
                let xi = &interior[layout.block(i)];
                r[i][j] = -(quad_form(&p[i][j], xi) + dot(&q[i][j], xi)) - margin / n as f64;
            }
        }
        let mut spec = QuadraticSpec::new(
            Some(config.seed),
            config.eig_range,
            layout.clone(),
            a.clone(),
            b.clone(),
            c.clone(),
            p.clone(),
            q.clone(),
            r,
        )?;
        if slater_holds(&spec, &sets, &interior, rho, &mut rng) {
            spec.slater_point = Some(interior);
            let spec = Arc::new(spec);
            let instance = ProblemInstance::new(
                layout.clone(),
                sets.clone(),
                spec.clone(),
                spec.constants(&sets),
            )?
            .with_quadratic(spec.clone());
            return Ok((instance, spec));
        }
    }
    Err(ProblemError::InfeasibleInstance(SLATER_ATTEMPTS))
}

fn slater_holds(
    spec: &QuadraticSpec,
    sets: &[FeasibleSet],
    center: &[f64],
    radius: f64,
    rng: &mut ChaCha12Rng,
) -> bool {
    let d = center.len();
    let m = spec.m();
    let mut g = vec![0.0; m];
    let mut total = vec![0.0; m];
    (0..SLATER_SAMPLES).all(|k| {
        let point: Vec<f64> = if k == 0 {
            center.to_vec()
        } else {
            let dir = gaussian_vec(rng, d);
            let scale = radius * rng.random::<f64>().powf(1.0 / d as f64) / norm(&dir);
            center.iter().zip(&dir).map(|(c, v)| c + v * scale).collect()
        };
        total.iter_mut().for_each(|t| *t = 0.0);
        for i in 0..spec.n() {
            let xi = &point[spec.layout.block(i)];
            if !sets[i].contains(xi, 0.0) {
                return false;
            }
            spec.local_constraints(i, xi, &mut g);
            axpy(1.0, &g, &mut total);
        }
        total.iter().all(|v| *v < 0.0)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBlock {
    /// Row-major `d x d`.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBlock {
    /// Row-major `d_i x d_i`.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub r: f64,
}

/// On-disk form of a quadratic instance (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub format: String,
    pub seed: Option<u64>,
    pub eig_range: (f64, f64),
    pub dims: Vec<usize>,
    pub m: usize,
    pub sets: Vec<FeasibleSet>,
    pub objectives: Vec<ObjectiveBlock>,
    /// `constraints[i][j]` holds `g_ij`.
    pub constraints: Vec<Vec<ConstraintBlock>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slater_point: Option<Vec<f64>>,
}

fn row_major(a: &DMatrix<f64>) -> Vec<f64> {
    a.transpose().as_slice().to_vec()
}

fn from_row_major(d: usize, data: &[f64]) -> Result<DMatrix<f64>, ProblemError> {
    if data.len() != d * d {
        return Err(ProblemError::Format(format!(
            "matrix has {} entries, expected {}",
            data.len(),
            d * d
        )));
    }
    Ok(DMatrix::from_row_slice(d, d, data))
}

impl InstanceFile {
    pub fn from_instance(instance: &ProblemInstance) -> Result<Self, ProblemError> {
        let spec = instance
            .quadratic()
            .ok_or_else(|| ProblemError::Format("only quadratic instances are serializable".into()))?;
        Ok(Self {
            format: INSTANCE_FORMAT.into(),
            seed: spec.seed,
            eig_range: spec.eig_range,
            dims: spec.layout.dims().to_vec(),
            m: spec.m(),
            sets: instance.sets().to_vec(),
            objectives: (0..spec.n())
                .map(|i| ObjectiveBlock {
                    a: row_major(&spec.a[i]),
                    b: spec.b[i].clone(),
                    c: spec.c[i],
                })
                .collect(),
            constraints: (0..spec.n())
                .map(|i| {
                    (0..spec.m())
                        .map(|j| ConstraintBlock {
                            p: row_major(&spec.p[i][j]),
                            q: spec.q[i][j].clone(),
                            r: spec.r[i][j],
                        })
                        .collect()
                })
                .collect(),
            slater_point: spec.slater_point.clone(),
        })
    }

    pub fn into_instance(self) -> Result<ProblemInstance, ProblemError> {
        if self.format != INSTANCE_FORMAT {
            return Err(ProblemError::Format(format!("unknown format `{}`", self.format)));
        }
        let layout = Layout::new(self.dims.clone());
        let d = layout.total();
        let n = layout.n();
        if self.objectives.len() != n || self.constraints.len() != n {
            return Err(ProblemError::Format("agent count mismatch".into()));
        }
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut c = Vec::with_capacity(n);
        for o in &self.objectives {
            a.push(from_row_major(d, &o.a)?);
            b.push(o.b.clone());
            c.push(o.c);
        }
        let mut p = Vec::with_capacity(n);
        let mut q = Vec::with_capacity(n);
        let mut r = Vec::with_capacity(n);
        for (i, blocks) in self.constraints.iter().enumerate() {
            if blocks.len() != self.m {
                return Err(ProblemError::Format(format!("agent {i}: constraint count mismatch")));
            }
            let di = self.dims[i];
            p.push(blocks.iter().map(|k| from_row_major(di, &k.p)).collect::<Result<Vec<_>, _>>()?);
            q.push(blocks.iter().map(|k| k.q.clone()).collect());
            r.push(blocks.iter().map(|k| k.r).collect());
        }
        if self.m == 0 {
            r = vec![Vec::new(); n];
        }
        if let Some(point) = &self.slater_point {
            if point.len() != d {
                return Err(ProblemError::Format("slater point has the wrong dimension".into()));
            }
        }
        let mut spec = QuadraticSpec::new(self.seed, self.eig_range, layout, a, b, c, p, q, r)?;
        spec.slater_point = self.slater_point;
        spec.into_instance(self.sets)
    }
}

pub fn save_instance(instance: &ProblemInstance, path: &Path) -> Result<(), ProblemError> {
    let file = InstanceFile::from_instance(instance)?;
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_instance(path: &Path) -> Result<ProblemInstance, ProblemError> {
    let text = std::fs::read_to_string(path)?;
    let file: InstanceFile = serde_json::from_str(&text)?;
    file.into_instance()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GeneratorConfig {
        GeneratorConfig {
            seed: 11,
            n: 4,
            d: 9,
            m: 2,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn default_config_is_the_reference_shape() {
        let c = GeneratorConfig::default();
        assert_eq!((c.n, c.d, c.m), (15, 40, 2));
        assert_eq!(c.eig_range, (0.1, 1.6));
    }

    #[test]
    fn generated_matrices_are_symmetric_with_spectrum_in_range() {
        let (_, spec) = generate_quadratic(&small()).unwrap();
        let a = spec.average_matrix();
        assert_eq!((a - a.transpose()).norm(), 0.0);
        let eig = SymmetricEigen::new(a.clone()).eigenvalues;
        for v in eig.iter() {
            assert!(*v >= 0.1 - 1e-10 && *v <= 1.6 + 1e-10, "{v}");
        }
        for ai in &spec.a {
            assert_eq!((ai - ai.transpose()).norm(), 0.0);
            assert!(SymmetricEigen::new(ai.clone()).eigenvalues.min() > 0.0);
        }
        for row in &spec.p {
            for pij in row {
                let e = SymmetricEigen::new(pij.clone()).eigenvalues;
                assert!(e.min() >= 0.1 - 1e-10 && e.max() <= 1.6 + 1e-10);
            }
        }
    }

    #[test]
    fn invalid_eig_range_is_rejected() {
        let cfg = GeneratorConfig {
            eig_range: (0.0, 1.0),
            ..small()
        };
        assert!(matches!(generate_quadratic(&cfg), Err(ProblemError::InvalidEigRange(..))));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (inst, spec) = generate_quadratic(&small()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let h = 1e-4;
        for _ in 0..20 {
            let x = inst.sample_point(&mut rng);
            for i in 0..spec.n() {
                let mut analytic = vec![0.0; x.len()];
                mat_vec(&spec.a[i], &x, &mut analytic);
                for (g, b) in analytic.iter_mut().zip(&spec.b[i]) {
                    *g = 2.0 * *g + b;
                }
                for k in 0..x.len() {
                    let mut up = x.clone();
                    let mut down = x.clone();
                    up[k] += h;
                    down[k] -= h;
                    let fd = (spec.local_cost(i, &up) - spec.local_cost(i, &down)) / (2.0 * h);
                    assert!((fd - analytic[k]).abs() <= 1e-5 * analytic[k].abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn sampled_lipschitz_ratios_respect_m0() {
        let (inst, spec) = generate_quadratic(&small()).unwrap();
        let m0 = inst.constants().m0;
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..10_000 {
            let x = inst.sample_point(&mut rng);
            let y = inst.sample_point(&mut rng);
            let r = crate::linalg::dist(&x, &y);
            for i in 0..spec.n() {
                assert!((spec.local_cost(i, &x) - spec.local_cost(i, &y)).abs() / r <= m0);
            }
        }
    }

    #[test]
    fn constraint_norm_bounded_by_z() {
        let (inst, spec) = generate_quadratic(&small()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut g = vec![0.0; spec.m()];
        for _ in 0..2000 {
            let x = inst.sample_point(&mut rng);
            for i in 0..spec.n() {
                spec.local_constraints(i, &x[spec.layout.block(i)], &mut g);
                assert!(norm(&g) <= inst.constants().z);
            }
        }
    }

    #[test]
    fn paired_cost_matches_single_evaluations_bitwise() {
        let (inst, spec) = generate_quadratic(&small()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..50 {
            let p = inst.sample_point(&mut rng);
            let q = inst.sample_point(&mut rng);
            for i in 0..spec.n() {
                let (fp, fq) = spec.local_cost_pair(i, &p, &q);
                assert_eq!(fp.to_bits(), spec.local_cost(i, &p).to_bits());
                assert_eq!(fq.to_bits(), spec.local_cost(i, &q).to_bits());
            }
        }
    }

    #[test]
    fn objective_at_origin_is_mean_constant() {
        let (inst, spec) = generate_quadratic(&small()).unwrap();
        let f = inst.global_objective(&[0.0; 9]).unwrap();
        let expected = spec.c.iter().sum::<f64>() / 4.0;
        assert!((f - expected).abs() < 1e-15);
    }

    #[test]
    fn same_seed_same_instance_file() {
        let dir = tempfile::tempdir().unwrap();
        let (a, _) = generate_quadratic(&small()).unwrap();
        let (b, _) = generate_quadratic(&small()).unwrap();
        save_instance(&a, &dir.path().join("a.json")).unwrap();
        save_instance(&b, &dir.path().join("b.json")).unwrap();
        let ta = std::fs::read(dir.path().join("a.json")).unwrap();
        let tb = std::fs::read(dir.path().join("b.json")).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn reload_reproduces_evaluations_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        let (inst, _) = generate_quadratic(&small()).unwrap();
        save_instance(&inst, &path).unwrap();
        let back = load_instance(&path).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..50 {
            let x = inst.sample_point(&mut rng);
            assert_eq!(
                inst.global_objective(&x).unwrap().to_bits(),
                back.global_objective(&x).unwrap().to_bits()
            );
            for i in 0..inst.n() {
                assert_eq!(
                    inst.evaluator().local_cost(i, &x).to_bits(),
                    back.evaluator().local_cost(i, &x).to_bits()
                );
            }
            let (s1, s2) = (inst.constraint_sums(&x).unwrap(), back.constraint_sums(&x).unwrap());
            assert!(s1.iter().zip(&s2).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        assert_eq!(inst.constants(), back.constants());
        let margin = inst.quadratic().unwrap().slater_margin().unwrap();
        assert!(margin > 0.0);
        assert_eq!(back.quadratic().unwrap().slater_margin(), Some(margin));
    }
}
