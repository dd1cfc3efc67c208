//! Synthetic finite-sum objectives `f = (1/n) Σ f_i` with known constants.
//!
//! Two families are provided:
//!
//! * heterogeneous quadratics `f_i(x) = ½ xᵀA_i x − b_iᵀx` with SPD `A_i`
//!   (constant Hessian, so `L_h = 0`), and
//! * ridge-regularized logistic regression on Gaussian blobs, partitioned
//!   across clients by class label.
//!
//! Stochastic oracles add isotropic Gaussian noise to the exact quantities.
//! The noise for a call is a pure function of the `ξ` stream handed in, so
//! two oracle calls sharing `ξ` see the same sample.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::rng::{derive_stream, Label, RngStream};
use crate::vector::Vector;

/// Dense row-major square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::Dimension { expected: n, found: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(DenseMatrix { n, data })
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut data = vec![0.0; n * n];
        for (i, &x) in diag.iter().enumerate() {
            data[i * n + i] = x;
        }
        DenseMatrix { n, data }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// `y = M x`, accumulated column by column. Only valid for symmetric
    /// matrices, which is all this module stores.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the required CPU feature was detected at runtime.
            unsafe { matvec_avx2(&self.data, x, &mut y) };
            return y;
        }
        matvec_into(&self.data, x, &mut y);
        y
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }

    fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                // symmetrize against round-off from the products that built m
                data.push(0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
        DenseMatrix { n, data }
    }

    fn lambda_max(&self) -> f64 {
        self.to_nalgebra().symmetric_eigenvalues().iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `y += A x` for symmetric row-major `A`, as a sum of columns. Each `y_i`
/// accumulates in column order, so every code path gives identical bits.
#[inline(always)]
fn matvec_into(data: &[f64], x: &[f64], y: &mut [f64]) {
    let n = y.len();
    let mut cols = data.chunks_exact(n).zip(x);
    while cols.len() >= 4 {
        let (c0, &x0) = cols.next().unwrap();
        let (c1, &x1) = cols.next().unwrap();
        let (c2, &x2) = cols.next().unwrap();
        let (c3, &x3) = cols.next().unwrap();
        for i in 0..n {
            y[i] = y[i] + c0[i] * x0 + c1[i] * x1 + c2[i] * x2 + c3[i] * x3;
        }
    }
    for (col, &xj) in cols {
        for (yi, &a) in y.iter_mut().zip(col) {
            *yi += a * xj;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matvec_avx2(data: &[f64], x: &[f64], y: &mut [f64]) {
    matvec_into(data, x, y)
}

/// Isotropic Gaussian noise levels of the stochastic oracles.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseModel {
    /// `E‖∇f_i(x;ξ) − ∇f_i(x)‖² = sigma_g²`
    pub sigma_g: f64,
    /// `E‖∇²f_i(x;ξ)u − ∇²f_i(x)u‖² = sigma_h² ‖u‖²`
    pub sigma_h: f64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma_g == 0.0 && self.sigma_h == 0.0
    }
}

/// Smoothness and lower-bound constants reported with a problem instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Constants {
    /// Per-client gradient Lipschitz constants `L_i`.
    pub l_i: Vec<f64>,
    /// Gradient Lipschitz constant of the average `f`.
    pub l: f64,
    /// Per-client Hessian Lipschitz constants `L_{h,i}`.
    pub l_h_i: Vec<f64>,
    pub l_h: f64,
    /// Mean-squared smoothness `L_{ms,i}` of the stochastic gradients. The
    /// additive noise does not depend on `x`, so this equals `L_i`.
    pub l_ms_i: Vec<f64>,
    pub f_inf: f64,
    /// `false` when `f_inf` comes from a numerical minimization.
    pub f_inf_exact: bool,
}

impl Constants {
    pub fn l_bar(&self) -> f64 {
        mean(&self.l_i)
    }

    pub fn l_h_bar(&self) -> f64 {
        mean(&self.l_h_i)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Constant Hessian of a quadratic.
#[derive(Clone, Debug)]
enum Hessian {
    Dense(DenseMatrix),
    /// `scale · A_0 + diag(diag)`, with `A_0` shared between clients.
    SharedPlusDiagonal {
        shared: Arc<DenseMatrix>,
        scale: f64,
        diag: Vec<f64>,
    },
}

impl Hessian {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Hessian::Dense(a) => a.matvec(x),
            Hessian::SharedPlusDiagonal { shared, scale, diag } => {
                let mut y = shared.matvec(x);
                for ((yj, &dj), &xj) in y.iter_mut().zip(diag).zip(x) {
                    *yj = *scale * *yj + dj * xj;
                }
                y
            }
        }
    }

    fn to_dense(&self) -> DenseMatrix {
        match self {
            Hessian::Dense(a) => a.clone(),
            Hessian::SharedPlusDiagonal { shared, scale, diag } => {
                let n = diag.len();
                let mut data: Vec<f64> = shared.data.iter().map(|a| scale * a).collect();
                for (j, dj) in diag.iter().enumerate() {
                    data[j * n + j] += dj;
                }
                DenseMatrix { n, data }
            }
        }
    }

    /// `(1/n) Σ A_i`, kept in structured form when all share one `A_0`.
    fn mean(parts: &[&Hessian]) -> Hessian {
        let inv_n = 1.0 / parts.len() as f64;
        if let Hessian::SharedPlusDiagonal { shared, scale, diag } = parts[0] {
            let same = parts.iter().all(|h| {
                matches!(h, Hessian::SharedPlusDiagonal { shared: s, scale: c, .. }
                    if Arc::ptr_eq(s, shared) && c == scale)
            });
            if same {
                let mut mean = vec![0.0; diag.len()];
                for h in parts {
                    if let Hessian::SharedPlusDiagonal { diag, .. } = h {
                        mean.iter_mut().zip(diag).for_each(|(m, x)| *m += x);
                    }
                }
                mean.iter_mut().for_each(|m| *m *= inv_n);
                return Hessian::SharedPlusDiagonal { shared: shared.clone(), scale: *scale, diag: mean };
            }
        }
        let d = parts[0].to_dense();
        let mut data = vec![0.0; d.data.len()];
        for h in parts {
            for (acc, x) in data.iter_mut().zip(&h.to_dense().data) {
                *acc += x;
            }
        }
        data.iter_mut().for_each(|x| *x *= inv_n);
        Hessian::Dense(DenseMatrix { n: d.n, data })
    }
}

#[derive(Clone, Debug)]
enum Objective {
    Quadratic {
        a: Hessian,
        b: Vector,
    },
    Logistic {
        /// `m × d`, row-major
        features: Vec<f64>,
        labels: Vec<f64>,
        ridge: f64,
    },
}

#[derive(Clone, Debug)]
enum Aggregate {
    Quadratic { a: Hessian, b: Vector },
    None,
}

/// An n-client objective with exact and stochastic oracles.
#[derive(Clone, Debug)]
pub struct Problem {
    n: usize,
    d: usize,
    clients: Vec<Objective>,
    aggregate: Aggregate,
    noise: NoiseModel,
    constants: Constants,
    /// Class label of every sample, per client (logistic problems only).
    class_labels: Vec<Vec<usize>>,
}

impl Problem {
    /// Builds a quadratic problem from explicit `(A_i, b_i)` pairs.
    ///
    /// Each `A_i` must be symmetric positive semidefinite. Constants are
    /// computed from eigendecompositions.
    pub fn quadratic(parts: Vec<(DenseMatrix, Vector)>, noise: NoiseModel) -> Result<Self> {
        Self::quadratic_from(parts.into_iter().map(|(a, b)| (Hessian::Dense(a), b)).collect(), noise)
    }

    fn quadratic_from(parts: Vec<(Hessian, Vector)>, noise: NoiseModel) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::config("clients", "need at least one client"));
        }
        let dense: Vec<DenseMatrix> = parts.iter().map(|(a, _)| a.to_dense()).collect();
        let d = dense[0].dim();
        for (a, (_, b)) in dense.iter().zip(&parts) {
            if a.dim() != d {
                return Err(Error::Dimension { expected: d, found: a.dim() });
            }
            b.check_len(d)?;
        }
        let n = parts.len();
        let l_i: Vec<f64> = dense.iter().map(DenseMatrix::lambda_max).collect();

        let mut b_bar = Vector::zeros(d);
        for (_, b) in &parts {
            b_bar.add_assign(b);
        }
        let b_bar = b_bar.scale(1.0 / n as f64);
        let a_bar = Hessian::mean(&parts.iter().map(|(a, _)| a).collect::<Vec<_>>());

        let eig = SymmetricEigen::new(a_bar.to_dense().to_nalgebra());
        let l = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        // f_inf = −½ b̄ᵀ Ā⁺ b̄, or −∞ if b̄ leaves the range of Ā.
        let tol = 1e-12 * l.max(1.0);
        let mut f_inf = 0.0;
        for (k, &lam) in eig.eigenvalues.iter().enumerate() {
            let proj: f64 = (0..d).map(|j| eig.eigenvectors[(j, k)] * b_bar[j]).sum();
            if lam > tol {
                f_inf -= 0.5 * proj * proj / lam;
            } else if proj.abs() > 1e-12 {
                f_inf = f64::NEG_INFINITY;
                break;
            }
        }

        let constants = Constants {
            l_ms_i: l_i.clone(),
            l_i,
            l,
            l_h_i: vec![0.0; n],
            l_h: 0.0,
            f_inf,
            f_inf_exact: true,
        };
        let clients = parts.into_iter().map(|(a, b)| Objective::Quadratic { a, b }).collect();
        Ok(Problem {
            n,
            d,
            clients,
            aggregate: Aggregate::Quadratic { a: a_bar, b: b_bar },
            noise,
            constants,
            class_labels: Vec::new(),
        })
    }

    /// Builds a logistic-regression problem from per-client `(rows, labels)`
    /// with labels in `{−1, +1}` and a shared ridge penalty.
    ///
    /// `L_i = λ + ¼ λ_max(XᵢᵀXᵢ)/mᵢ`, `L_{h,i} = mean‖a‖³ / (6√3)`, and
    /// `f_inf` is estimated by a long gradient descent.
    pub fn logistic(datasets: Vec<(Vec<Vec<f64>>, Vec<f64>)>, ridge: f64, noise: NoiseModel) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::config("clients", "need at least one client"));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::config("ridge", "must be finite and nonnegative"));
        }
        let d = datasets
            .iter()
            .find_map(|(rows, _)| rows.first().map(Vec::len))
            .ok_or_else(|| Error::config("samples-per-client", "no samples"))?;
        let n = datasets.len();
        let total: usize = datasets.iter().map(|(rows, _)| rows.len()).sum();
        let mut clients = Vec::with_capacity(n);
        let mut l_i = Vec::with_capacity(n);
        let mut l_h_i = Vec::with_capacity(n);
        let mut all_rows = DMatrix::<f64>::zeros(total, d);
        let mut row_cursor = 0;
        let l_h_coeff = 1.0 / (6.0 * 3f64.sqrt());
        for (i, (rows, labels)) in datasets.into_iter().enumerate() {
            if rows.is_empty() {
                return Err(Error::config("samples-per-client", format!("client {i} has no samples")));
            }
            if rows.len() != labels.len() {
                return Err(Error::Dimension { expected: rows.len(), found: labels.len() });
            }
            if let Some(y) = labels.iter().find(|y| y.abs() != 1.0) {
                return Err(Error::config("labels", format!("expected ±1, got {y}")));
            }
            let m = rows.len();
            let mut features = Vec::with_capacity(m * d);
            let mut cubes = 0.0;
            for row in &rows {
                if row.len() != d {
                    return Err(Error::Dimension { expected: d, found: row.len() });
                }
                features.extend_from_slice(row);
                cubes += dot(row, row).sqrt().powi(3);
                for (k, &x) in row.iter().enumerate() {
                    all_rows[(row_cursor, k)] = x;
                }
                row_cursor += 1;
            }
            let x_mat = DMatrix::from_row_slice(m, d, &features);
            let gram_max =
                (x_mat.transpose() * &x_mat).symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max);
            let mf = m as f64;
            l_i.push(ridge + 0.25 * gram_max / mf);
            l_h_i.push(l_h_coeff * cubes / mf);
            clients.push(Objective::Logistic { features, labels, ridge });
        }
        // f averages per-client means, so weight every row by 1/(n mᵢ).
        let mut weighted = all_rows.clone();
        let mut cursor = 0;
        for obj in &clients {
            if let Objective::Logistic { labels, .. } = obj {
                let w = (1.0 / (n as f64 * labels.len() as f64)).sqrt();
                for r in cursor..cursor + labels.len() {
                    weighted.row_mut(r).scale_mut(w);
                }
                cursor += labels.len();
            }
        }
        let gram_all_max =
            (weighted.transpose() * &weighted).symmetric_eigenvalues().iter().cloned().fold(0.0, f64::max);
        let l = ridge + 0.25 * gram_all_max;
        let l_h = mean(&l_h_i);

        let mut problem = Problem {
            n,
            d,
            clients,
            aggregate: Aggregate::None,
            noise,
            constants: Constants {
                l_ms_i: l_i.clone(),
                l_i,
                l,
                l_h_i,
                l_h,
                f_inf: f64::NEG_INFINITY,
                f_inf_exact: false,
            },
            class_labels: Vec::new(),
        };
        problem.constants.f_inf = estimate_f_inf(&problem)?;
        Ok(problem)
    }

    pub fn n_clients(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self.aggregate, Aggregate::Quadratic { .. })
    }

    /// Class label of every sample held by `client` (logistic problems).
    pub fn class_labels(&self, client: usize) -> Option<&[usize]> {
        self.class_labels.get(client).map(|v| v.as_slice())
    }

    fn client(&self, client: usize, x: &Vector) -> Result<&Objective> {
        let obj = self.clients.get(client).ok_or(Error::ClientOutOfRange { index: client, n: self.n })?;
        x.check_len(self.d)?;
        Ok(obj)
    }

    /// `f_i(x)`
    pub fn value(&self, client: usize, x: &Vector) -> Result<f64> {
        Ok(match self.client(client, x)? {
            Objective::Quadratic { a, b } => quad_value(a, b, x),
            Objective::Logistic { features, labels, ridge } => {
                let m = labels.len();
                let loss: f64 = features
                    .chunks_exact(self.d)
                    .zip(labels)
                    .map(|(row, &y)| softplus(-y * dot(row, x.as_slice())))
                    .sum();
                loss / m as f64 + 0.5 * ridge * x.norm_squared()
            }
        })
    }

    /// Exact `∇f_i(x)`.
    pub fn grad(&self, client: usize, x: &Vector) -> Result<Vector> {
        Ok(match self.client(client, x)? {
            Objective::Quadratic { a, b } => quad_grad(a, b, x),
            Objective::Logistic { features, labels, ridge } => {
                let m = labels.len() as f64;
                let mut g = x.scale(*ridge);
                let gs = g.as_mut_slice();
                for (row, &y) in features.chunks_exact(self.d).zip(labels) {
                    // d/dz softplus(−y z) = −y σ(−y z)
                    let w = -y * sigmoid(-y * dot(row, x.as_slice())) / m;
                    for (gj, &aj) in gs.iter_mut().zip(row) {
                        *gj += w * aj;
                    }
                }
                g
            }
        })
    }

    /// Exact `∇²f_i(x) u` without forming the Hessian.
    pub fn hvp(&self, client: usize, x: &Vector, u: &Vector) -> Result<Vector> {
        let obj = self.client(client, x)?;
        u.check_len(self.d)?;
        Ok(match obj {
            Objective::Quadratic { a, .. } => Vector::from_raw(a.apply(u.as_slice())),
            Objective::Logistic { features, labels, ridge } => {
                let m = labels.len() as f64;
                let mut h = u.scale(*ridge);
                let hs = h.as_mut_slice();
                for row in features.chunks_exact(self.d) {
                    // label-free: σ(z)(1 − σ(z)) is even in the sign of z
                    let s = sigmoid(dot(row, x.as_slice()));
                    let w = s * (1.0 - s) * dot(row, u.as_slice()) / m;
                    for (hj, &aj) in hs.iter_mut().zip(row) {
                        *hj += w * aj;
                    }
                }
                h
            }
        })
    }

    /// `∇f_i(x; ξ)`: exact gradient plus isotropic noise of total variance `σ_g²`.
    pub fn stoch_grad(&self, client: usize, x: &Vector, xi: &RngStream) -> Result<Vector> {
        let mut g = self.grad(client, x)?;
        if self.noise.sigma_g > 0.0 {
            let mut rng = xi.child(Label::Tag("grad-noise"));
            add_isotropic_noise(&mut g, self.noise.sigma_g, &mut rng);
        }
        Ok(g)
    }

    /// `∇²f_i(x; ξ) u`: exact HVP plus isotropic noise of total variance `σ_h²‖u‖²`.
    pub fn stoch_hvp(&self, client: usize, x: &Vector, u: &Vector, xi: &RngStream) -> Result<Vector> {
        let mut h = self.hvp(client, x, u)?;
        let scale = self.noise.sigma_h * u.norm();
        if scale > 0.0 {
            let mut rng = xi.child(Label::Tag("hvp-noise"));
            add_isotropic_noise(&mut h, scale, &mut rng);
        }
        Ok(h)
    }

    /// `f(x)`
    pub fn full_value(&self, x: &Vector) -> Result<f64> {
        x.check_len(self.d)?;
        match &self.aggregate {
            Aggregate::Quadratic { a, b } => Ok(quad_value(a, b, x)),
            Aggregate::None => {
                let mut acc = 0.0;
                for i in 0..self.n {
                    acc += self.value(i, x)?;
                }
                Ok(acc / self.n as f64)
            }
        }
    }

    /// `∇f(x)`
    pub fn full_grad(&self, x: &Vector) -> Result<Vector> {
        x.check_len(self.d)?;
        match &self.aggregate {
            Aggregate::Quadratic { a, b } => Ok(quad_grad(a, b, x)),
            Aggregate::None => {
                let grads = (0..self.n).map(|i| self.grad(i, x)).collect::<Result<Vec<_>>>()?;
                Ok(Vector::mean(&grads, self.d))
            }
        }
    }
}

fn quad_value(a: &Hessian, b: &Vector, x: &Vector) -> f64 {
    let ax = a.apply(x.as_slice());
    0.5 * dot(&ax, x.as_slice()) - b.dot(x)
}

fn quad_grad(a: &Hessian, b: &Vector, x: &Vector) -> Vector {
    let mut g = a.apply(x.as_slice());
    for (gj, bj) in g.iter_mut().zip(b.as_slice()) {
        *gj -= bj;
    }
    Vector::from_raw(g)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn add_isotropic_noise(v: &mut Vector, total_std: f64, rng: &mut RngStream) {
    let per_coord = total_std / (v.len() as f64).sqrt();
    for x in v.as_mut_slice() {
        *x += per_coord * rng.standard_normal();
    }
}

fn random_rotation(d: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.standard_normal());
    g.qr().q()
}

/// `Q diag(λ) Qᵀ` with `λ_max = 1` and the rest log-uniform in `[1/condition, 1]`.
fn random_spd(d: usize, condition: f64, rng: &mut RngStream) -> DenseMatrix {
    if condition == 1.0 {
        return DenseMatrix::identity(d);
    }
    let log_min = -condition.ln();
    let mut spectrum = vec![1.0; d];
    for lam in spectrum.iter_mut().skip(1) {
        *lam = (log_min * rng.uniform()).exp();
    }
    let q = random_rotation(d, rng);
    let m = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(spectrum)) * q.transpose();
    DenseMatrix::from_nalgebra(&m)
}

fn random_direction(d: usize, rng: &mut RngStream) -> Vector {
    loop {
        let v = Vector::from_raw((0..d).map(|_| rng.standard_normal()).collect());
        let n = v.norm();
        if n > 0.0 {
            return v.scale(1.0 / n);
        }
    }
}

/// Heterogeneous SPD quadratics.
///
/// Every `A_i` has its spectrum in `[1/condition, 1]`. With weight
/// `w = h/(1+h)` for `h = heterogeneity`, `A_i = (1−w) A_0 + w D_i` mixes a
/// shared dense matrix with a client-specific diagonal one, and `b_i = b̄ + h (δ_i − δ̄)` for
/// unit directions `δ_i`. At `h = 0` all clients coincide.
pub fn make_hetero_quadratics(
    n: usize,
    d: usize,
    heterogeneity: f64,
    condition: f64,
    seed: u64,
) -> Result<Problem> {
    if n == 0 {
        return Err(Error::config("clients", "must be at least 1"));
    }
    if d == 0 {
        return Err(Error::config("dim", "must be at least 1"));
    }
    if !(heterogeneity >= 0.0 && heterogeneity.is_finite()) {
        return Err(Error::config("heterogeneity", "must be finite and nonnegative"));
    }
    if !(condition >= 1.0 && condition.is_finite()) {
        return Err(Error::config("condition", "must be finite and at least 1"));
    }
    let root = derive_stream(seed, &[Label::Tag("hetero-quadratic")]);
    let base = Arc::new(random_spd(d, condition, &mut root.child(Label::Tag("shared"))));
    let w = heterogeneity / (1.0 + heterogeneity);

    let mut b_rng = root.child(Label::Tag("b-bar"));
    let b_bar = Vector::from_raw((0..d).map(|_| b_rng.standard_normal() / (d as f64).sqrt()).collect());
    let deltas: Vec<Vector> = (0..n)
        .map(|i| random_direction(d, &mut root.child(Label::Client(i)).child(Label::Tag("b"))))
        .collect();
    let delta_bar = Vector::mean(&deltas, d);

    let mut parts = Vec::with_capacity(n);
    for (i, delta) in deltas.iter().enumerate() {
        let a = if w == 0.0 || condition == 1.0 {
            Hessian::Dense((*base).clone())
        } else {
            let mut rng = root.child(Label::Client(i)).child(Label::Tag("a"));
            let log_min = -condition.ln();
            let diag = (0..d).map(|_| w * (log_min * rng.uniform()).exp()).collect();
            Hessian::SharedPlusDiagonal { shared: base.clone(), scale: 1.0 - w, diag }
        };
        let b = if heterogeneity == 0.0 {
            b_bar.clone()
        } else {
            b_bar.add(&delta.sub(&delta_bar).scale(heterogeneity))
        };
        parts.push((a, b));
    }
    Problem::quadratic_from(parts, NoiseModel::noiseless())
}

/// Gaussian-blob binary logistic regression, split across clients by class.
///
/// There are `max(n, 2)` blob classes with binary label `+1` for even and
/// `−1` for odd classes. For each class `c < n`, a `sorted_fraction` share
/// of its samples goes to client `c`; every other sample is shuffled and
/// dealt round-robin.
pub fn make_label_sorted_logreg(
    n: usize,
    d: usize,
    samples_per_client: usize,
    sorted_fraction: f64,
    ridge: f64,
    seed: u64,
) -> Result<Problem> {
    if n == 0 || d == 0 || samples_per_client == 0 {
        return Err(Error::config("clients", "clients, dim and samples-per-client must be positive"));
    }
    if !(0.0..=1.0).contains(&sorted_fraction) {
        return Err(Error::config("sorted-fraction", "must lie in [0, 1]"));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::config("ridge", "must be finite and nonnegative"));
    }
    let classes = n.max(2);
    let total = n * samples_per_client;
    let root = derive_stream(seed, &[Label::Tag("label-sorted-logreg")]);
    let scale = 1.0 / (d as f64).sqrt();

    let mut center_rng = root.child(Label::Tag("centers"));
    let centers: Vec<Vec<f64>> =
        (0..classes).map(|_| (0..d).map(|_| 2.0 * scale * center_rng.standard_normal()).collect()).collect();
    let mut sample_rng = root.child(Label::Tag("samples"));
    let samples: Vec<(usize, Vec<f64>)> = (0..total)
        .map(|j| {
            let c = j % classes;
            let row = centers[c].iter().map(|mu| mu + scale * sample_rng.standard_normal()).collect();
            (c, row)
        })
        .collect();

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (j, (c, _)) in samples.iter().enumerate() {
        by_class[*c].push(j);
    }
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pool = Vec::new();
    for (c, members) in by_class.iter().enumerate() {
        let keep = if c < n { (sorted_fraction * members.len() as f64).floor() as usize } else { 0 };
        if let Some(s) = shards.get_mut(c) {
            s.extend_from_slice(&members[..keep]);
        }
        pool.extend_from_slice(&members[keep..]);
    }
    let mut shuffle_rng = root.child(Label::Tag("shuffle"));
    // Fisher-Yates
    for i in (1..pool.len()).rev() {
        let j = shuffle_rng.below(i + 1);
        pool.swap(i, j);
    }
    for (k, j) in pool.into_iter().enumerate() {
        shards[k % n].push(j);
    }

    let label_of = |c: usize| if c.is_multiple_of(2) { 1.0 } else { -1.0 };
    let mut datasets = Vec::with_capacity(n);
    let mut class_labels = Vec::with_capacity(n);
    for shard in &shards {
        let rows = shard.iter().map(|&j| samples[j].1.clone()).collect();
        let labels = shard.iter().map(|&j| label_of(samples[j].0)).collect();
        datasets.push((rows, labels));
        class_labels.push(shard.iter().map(|&j| samples[j].0).collect());
    }
    let mut problem = Problem::logistic(datasets, ridge, NoiseModel::noiseless())?;
    problem.class_labels = class_labels;
    Ok(problem)
}

/// Long deterministic gradient descent with step `1/L`; the final value is
/// an upper estimate of `f_inf`.
fn estimate_f_inf(problem: &Problem) -> Result<f64> {
    let step = 1.0 / problem.constants.l.max(f64::MIN_POSITIVE);
    let mut x = Vector::zeros(problem.d);
    let mut best = problem.full_value(&x)?;
    for _ in 0..20_000 {
        let g = problem.full_grad(&x)?;
        if g.norm() < 1e-10 {
            break;
        }
        x.axpy_assign(-step, &g);
        best = best.min(problem.full_value(&x)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    fn single(a: DenseMatrix, b: Vector) -> Problem {
        Problem::quadratic(vec![(a, b)], NoiseModel::noiseless()).unwrap()
    }

    #[test]
    fn identity_quadratic_gradient_is_x() {
        let p = single(DenseMatrix::identity(2), Vector::zeros(2));
        assert_eq!(p.grad(0, &v(&[2.0, -1.0])).unwrap(), v(&[2.0, -1.0]));
    }

    #[test]
    fn diagonal_hvp() {
        let p = single(DenseMatrix::diagonal(&[1.0, 2.0]), Vector::zeros(2));
        let x = v(&[0.3, -7.0]);
        assert_eq!(p.hvp(0, &x, &v(&[1.0, 1.0])).unwrap(), v(&[1.0, 2.0]));
        assert_eq!(p.hvp(0, &x, &Vector::zeros(2)).unwrap(), Vector::zeros(2));
    }

    #[test]
    fn logistic_single_sample_gradient() {
        let p = Problem {
            n: 1,
            d: 2,
            clients: vec![Objective::Logistic { features: vec![1.0, 0.0], labels: vec![1.0], ridge: 0.0 }],
            aggregate: Aggregate::None,
            noise: NoiseModel::noiseless(),
            constants: Constants {
                l_i: vec![0.25],
                l: 0.25,
                l_h_i: vec![0.0],
                l_h: 0.0,
                l_ms_i: vec![0.25],
                f_inf: 0.0,
                f_inf_exact: false,
            },
            class_labels: vec![vec![0]],
        };
        // σ(0) = ½, gradient −(1 − σ(0)) · y · a
        assert_eq!(p.grad(0, &Vector::zeros(2)).unwrap(), v(&[-0.5, 0.0]));
    }

    #[test]
    fn client_out_of_range() {
        let p = single(DenseMatrix::identity(2), Vector::zeros(2));
        assert!(matches!(p.grad(3, &Vector::zeros(2)), Err(Error::ClientOutOfRange { index: 3, n: 1 })));
    }

    #[test]
    fn dimension_checked() {
        let p = single(DenseMatrix::identity(2), Vector::zeros(2));
        assert!(p.grad(0, &Vector::zeros(3)).is_err());
        assert!(p.hvp(0, &Vector::zeros(2), &Vector::zeros(3)).is_err());
    }

    #[test]
    fn scalar_quadratic_constants() {
        let p = single(DenseMatrix::identity(1), Vector::zeros(1));
        assert_eq!(p.constants().f_inf, 0.0);
        assert_eq!(p.full_value(&v(&[3.0])).unwrap(), 4.5);
    }

    #[test]
    fn zero_heterogeneity_clients_coincide() {
        let p = make_hetero_quadratics(4, 6, 0.0, 10.0, 3).unwrap();
        let x = v(&[0.1, -0.2, 0.3, 0.5, -1.0, 2.0]);
        let g0 = p.grad(0, &x).unwrap();
        for i in 1..4 {
            assert_eq!(p.grad(i, &x).unwrap(), g0);
        }
    }

    #[test]
    fn unit_condition_gives_unit_smoothness() {
        let p = make_hetero_quadratics(3, 5, 2.0, 1.0, 1).unwrap();
        assert!(p.constants().l_i.iter().all(|&l| l == 1.0));
    }

    #[test]
    fn spectrum_in_range() {
        let p = make_hetero_quadratics(3, 8, 1.5, 50.0, 11).unwrap();
        for l in &p.constants().l_i {
            assert!(*l <= 1.0 + 1e-12 && *l >= 1.0 / 50.0);
        }
        assert!(p.constants().l <= p.constants().l_bar() + 1e-12);
    }

    #[test]
    fn sorted_fraction_one_two_clients() {
        let p = make_label_sorted_logreg(2, 3, 20, 1.0, 0.01, 5).unwrap();
        assert!(p.class_labels(0).unwrap().iter().all(|&c| c == 0));
        assert!(p.class_labels(1).unwrap().iter().all(|&c| c == 1));
    }

    #[test]
    fn half_sorted_makes_own_class_modal() {
        let n = 10;
        let p = make_label_sorted_logreg(n, 4, 100, 0.5, 0.01, 8).unwrap();
        for i in 0..n {
            let mut hist = vec![0usize; n];
            for &c in p.class_labels(i).unwrap() {
                hist[c] += 1;
            }
            let modal = (0..n).max_by_key(|&c| (hist[c], std::cmp::Reverse(c))).unwrap();
            assert_eq!(modal, i, "client {i} histogram {hist:?}");
        }
    }

    #[test]
    fn logreg_f_inf_below_values() {
        let p = make_label_sorted_logreg(3, 4, 30, 0.5, 0.1, 2).unwrap();
        assert!(!p.constants().f_inf_exact);
        let x = v(&[0.5, -0.5, 1.0, 0.0]);
        assert!(p.full_value(&x).unwrap() >= p.constants().f_inf);
        assert!(p.constants().f_inf.is_finite());
    }

    #[test]
    fn noiseless_stochastic_oracles_are_exact() {
        let p = make_hetero_quadratics(2, 4, 1.0, 5.0, 0).unwrap();
        let xi = derive_stream(1, &[Label::Step(0)]);
        let x = v(&[1.0, 2.0, 3.0, 4.0]);
        let u = v(&[0.0, 1.0, 0.0, -1.0]);
        assert_eq!(p.stoch_grad(1, &x, &xi).unwrap(), p.grad(1, &x).unwrap());
        assert_eq!(p.stoch_hvp(1, &x, &u, &xi).unwrap(), p.hvp(1, &x, &u).unwrap());
    }

    #[test]
    fn shared_xi_gives_shared_noise() {
        let p = make_hetero_quadratics(1, 4, 0.0, 3.0, 0)
            .unwrap()
            .with_noise(NoiseModel { sigma_g: 1.0, sigma_h: 0.5 });
        let xi = derive_stream(9, &[Label::Client(0), Label::Step(4)]);
        let x = v(&[1.0, 0.0, 0.0, 0.0]);
        let y = v(&[0.0, 2.0, 0.0, 1.0]);
        let dx = p.stoch_grad(0, &x, &xi).unwrap().sub(&p.grad(0, &x).unwrap());
        let dy = p.stoch_grad(0, &y, &xi).unwrap().sub(&p.grad(0, &y).unwrap());
        for j in 0..4 {
            assert!((dx[j] - dy[j]).abs() < 1e-14);
        }
        let zero = Vector::zeros(4);
        assert_eq!(p.stoch_hvp(0, &x, &zero, &xi).unwrap(), zero);
    }
}
