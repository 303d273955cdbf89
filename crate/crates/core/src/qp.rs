//! Small dense convex QP solver, `min ½ xᵀPx + qᵀx` subject to `lo ≤ Ax ≤ hi`.
//!
//! Operator-splitting ADMM in the style of OSQP with adaptive step size,
//! primal-infeasibility detection and a final active-set polish that solves
//! the equality-constrained KKT system exactly.

use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpSettings {
    pub max_iter: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub rho: f64,
    pub sigma: f64,
    pub relaxation: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iter: 100_000,
            eps_abs: 1e-11,
            eps_rel: 1e-11,
            eps_infeasible: 1e-9,
            rho: 0.1,
            sigma: 1e-8,
            relaxation: 1.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpStatus {
    Solved,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub polished: bool,
}

pub struct BoxQp<'a> {
    pub p: &'a DMatrix<f64>,
    pub q: &'a DVector<f64>,
    pub a: &'a DMatrix<f64>,
    pub lo: &'a DVector<f64>,
    pub hi: &'a DVector<f64>,
}

impl BoxQp<'_> {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(self.p * x)) + self.q.dot(x)
    }

    fn violation(&self, x: &DVector<f64>) -> f64 {
        let ax = self.a * x;
        ax.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .map(|(v, (l, h))| (l - v).max(v - h).max(0.0))
            .fold(0.0, f64::max)
    }

    pub fn solve(&self, settings: &QpSettings) -> QpSolution {
        let n = self.p.nrows();
        let m = self.a.nrows();
        let at = self.a.transpose();
        let ata = &at * self.a;
        let mut rho = settings.rho;
        let factor = |rho: f64| -> Option<Cholesky<f64, nalgebra::Dyn>> {
            let mut k = self.p + &ata * rho;
            for i in 0..n {
                k[(i, i)] += settings.sigma;
            }
            Cholesky::new(k)
        };
        let mut chol = match factor(rho) {
            Some(c) => c,
            None => {
                return QpSolution {
                    x: DVector::zeros(n),
                    status: QpStatus::MaxIterations,
                    iterations: 0,
                    polished: false,
                }
            }
        };

        let mut x = DVector::zeros(n);
        let mut z = DVector::from_fn(m, |i, _| 0.0f64.clamp(self.lo[i], self.hi[i]));
        let mut y = DVector::zeros(m);
        let alpha = settings.relaxation;
        let mut status = QpStatus::MaxIterations;
        let mut iterations = settings.max_iter;

        for it in 1..=settings.max_iter {
            let rhs = &x * settings.sigma - self.q + &at * (&z * rho - &y);
            let x_tilde = chol.solve(&rhs);
            let z_tilde = self.a * &x_tilde;
            x = &x_tilde * alpha + &x * (1.0 - alpha);
            let z_relaxed = &z_tilde * alpha + &z * (1.0 - alpha);
            let z_new = DVector::from_fn(m, |i, _| (z_relaxed[i] + y[i] / rho).clamp(self.lo[i], self.hi[i]));
            let y_prev = y.clone();
            y += (&z_relaxed - &z_new) * rho;
            z = z_new;

            if it % 10 != 0 {
                continue;
            }
            let ax = self.a * &x;
            let px = self.p * &x;
            let aty = &at * &y;
            let r_prim = (&ax - &z).amax();
            let r_dual = (&px + self.q + &aty).amax();
            let prim_scale = ax.amax().max(z.amax());
            let dual_scale = px.amax().max(aty.amax()).max(self.q.amax());
            if r_prim <= settings.eps_abs + settings.eps_rel * prim_scale
                && r_dual <= settings.eps_abs + settings.eps_rel * dual_scale
            {
                status = QpStatus::Solved;
                iterations = it;
                break;
            }

            let dy = &y - &y_prev;
            let dy_norm = dy.amax();
            if dy_norm > 0.0 {
                let atdy = (&at * &dy).amax();
                let support: f64 = (0..m)
                    .map(|i| self.hi[i] * dy[i].max(0.0) + self.lo[i] * dy[i].min(0.0))
                    .sum();
                if atdy <= settings.eps_infeasible * dy_norm && support < -settings.eps_infeasible * dy_norm {
                    status = QpStatus::Infeasible;
                    iterations = it;
                    break;
                }
            }

            if it % 50 == 0 {
                let ratio = ((r_prim / prim_scale.max(1e-30)) / (r_dual / dual_scale.max(1e-30)).max(1e-30)).sqrt();
                let new_rho = (rho * ratio).clamp(1e-6, 1e6);
                if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                    if let Some(c) = factor(new_rho) {
                        rho = new_rho;
                        chol = c;
                    }
                }
            }
        }

        if status == QpStatus::Infeasible {
            return QpSolution {
                x,
                status,
                iterations,
                polished: false,
            };
        }
        let mut polished = false;
        if let Some(xp) = self.polish(&x, &y) {
            let tol = 1e-10 * (1.0 + self.hi.amax().max(self.lo.amax()));
            if self.violation(&xp) <= tol && self.objective(&xp) <= self.objective(&x) + 1e-9 * (1.0 + self.objective(&x).abs()) {
                x = xp;
                polished = true;
                status = QpStatus::Solved;
            }
        }
        QpSolution {
            x,
            status,
            iterations,
            polished,
        }
    }

    /// Solves the KKT system with the constraints flagged active by the duals.
    fn polish(&self, x: &DVector<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.p.nrows();
        let ax = self.a * x;
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for i in 0..self.a.nrows() {
            let tol = 1e-7 * (1.0 + self.hi[i].abs().max(self.lo[i].abs()));
            if y[i] < 0.0 && (ax[i] - self.lo[i]).abs() <= tol {
                rows.push(i);
                targets.push(self.lo[i]);
            } else if y[i] > 0.0 && (ax[i] - self.hi[i]).abs() <= tol {
                rows.push(i);
                targets.push(self.hi[i]);
            }
        }
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(self.p);
        for (r, &i) in rows.iter().enumerate() {
            for c in 0..n {
                kkt[(n + r, c)] = self.a[(i, c)];
                kkt[(c, n + r)] = self.a[(i, c)];
            }
        }
        let mut rhs = DVector::zeros(n + k);
        for c in 0..n {
            rhs[c] = -self.q[c];
        }
        for (r, t) in targets.iter().enumerate() {
            rhs[n + r] = *t;
        }
        let sol = kkt.svd(true, true).solve(&rhs, 1e-13).ok()?;
        let xp = sol.rows(0, n).into_owned();
        if xp.iter().all(|v| v.is_finite()) {
            Some(xp)
        } else {
            None
        }
    }
}
