//! Mehrotra predictor-corrector interior-point method for dense convex QPs of the form
//!
//! ```text
//! minimize    ½ xᵀ diag(h) x + qᵀ x
//! subject to  E x = e
//!             row_lo ≤ R x ≤ row_hi
//!             x_lo   ≤ x   ≤ x_hi
//! ```
//!
//! Infinite bounds are allowed. Stationarity is written as
//! `h∘x + q − Eᵀy − z_lo + z_hi + Rᵀ(v_hi − v_lo) = 0`, with all `z`, `v` nonnegative.

use nalgebra::{DMatrix, DVector};

use crate::linalg::inf_norm;

#[derive(Debug, Clone)]
pub(crate) struct DenseQp {
    pub hess: Vec<f64>,
    pub cost: Vec<f64>,
    pub eq: DMatrix<f64>,
    pub eq_rhs: Vec<f64>,
    pub rows: DMatrix<f64>,
    pub row_lo: Vec<f64>,
    pub row_hi: Vec<f64>,
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    /// Optional factorization `rows[(k, j)] = sign_j · base[(k, col_j)]`. When many variables
    /// share a column of `base`, `RᵀΣR` is assembled from the smaller `baseᵀΣ base`.
    pub row_factor: Option<RowFactor>,
}

#[derive(Debug, Clone)]
pub(crate) struct RowFactor {
    pub base: DMatrix<f64>,
    /// `(column of base, sign)` per variable.
    pub cols: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Converged,
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmResult {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z_lo: Vec<f64>,
    pub z_hi: Vec<f64>,
    pub v_lo: Vec<f64>,
    pub v_hi: Vec<f64>,
    pub iterations: usize,
    pub status: IpmStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for IpmSettings {
    fn default() -> Self {
        IpmSettings {
            tol: 1e-9,
            max_iter: 100,
        }
    }
}

/// Slack/multiplier pairs for one family of one-sided inequalities.
#[derive(Debug, Clone)]
struct Pairs {
    active: Vec<bool>,
    slack: Vec<f64>,
    dual: Vec<f64>,
}

impl Pairs {
    fn new(bounds: &[f64]) -> Self {
        let active: Vec<bool> = bounds.iter().map(|b| b.is_finite()).collect();
        let n = bounds.len();
        Pairs {
            active,
            slack: vec![1.0; n],
            dual: vec![0.0; n],
        }
    }

    fn count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    fn complementarity(&self) -> f64 {
        self.active
            .iter()
            .zip(self.slack.iter().zip(&self.dual))
            .filter(|(a, _)| **a)
            .map(|(_, (s, d))| s * d)
            .sum()
    }

    /// `Σ = dual/slack` on active entries, zero elsewhere.
    fn sigma(&self) -> Vec<f64> {
        self.active
            .iter()
            .zip(self.slack.iter().zip(&self.dual))
            .map(|(&a, (s, d))| if a { d / s } else { 0.0 })
            .collect()
    }

    fn max_step(&self, ds: &[f64], dd: &[f64]) -> (f64, f64) {
        let mut ap = 1.0f64;
        let mut ad = 1.0f64;
        for j in 0..self.active.len() {
            if !self.active[j] {
                continue;
            }
            if ds[j] < 0.0 {
                ap = ap.min(-self.slack[j] / ds[j]);
            }
            if dd[j] < 0.0 {
                ad = ad.min(-self.dual[j] / dd[j]);
            }
        }
        (ap, ad)
    }
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    // (slack, dual) increments for x_lo, x_hi, row_lo, row_hi.
    d: [(Vec<f64>, Vec<f64>); 4],
}

pub(crate) fn solve_qp(qp: &DenseQp, settings: IpmSettings) -> IpmResult {
    let n = qp.hess.len();
    let m = qp.rows.nrows();
    let me = qp.eq.nrows();

    // Normalize the objective so multipliers start at O(1).
    let scale = qp
        .cost
        .iter()
        .chain(&qp.hess)
        .fold(1.0f64, |a, v| a.max(v.abs()));
    let hess: Vec<f64> = qp.hess.iter().map(|v| v / scale).collect();
    let cost: Vec<f64> = qp.cost.iter().map(|v| v / scale).collect();

    // Starting point: centered inside finite boxes, one unit off one-sided bounds.
    let mut x: Vec<f64> = (0..n)
        .map(|j| {
            let (lo, hi) = (qp.x_lo[j], qp.x_hi[j]);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 1.0,
                (false, true) => hi - 1.0,
                (false, false) => 0.0,
            }
        })
        .collect();
    let mut y = vec![0.0; me];
    let mut pl = Pairs::new(&qp.x_lo);
    let mut pu = Pairs::new(&qp.x_hi);
    let mut rl = Pairs::new(&qp.row_lo);
    let mut ru = Pairs::new(&qp.row_hi);
    let rx0 = mat_vec(&qp.rows, &x);
    for j in 0..n {
        pl.slack[j] = (x[j] - qp.x_lo[j]).max(1.0);
        pu.slack[j] = (qp.x_hi[j] - x[j]).max(1.0);
        pl.dual[j] = if pl.active[j] { 1.0 } else { 0.0 };
        pu.dual[j] = if pu.active[j] { 1.0 } else { 0.0 };
    }
    for k in 0..m {
        rl.slack[k] = (rx0[k] - qp.row_lo[k]).max(1.0);
        ru.slack[k] = (qp.row_hi[k] - rx0[k]).max(1.0);
        rl.dual[k] = if rl.active[k] { 1.0 } else { 0.0 };
        ru.dual[k] = if ru.active[k] { 1.0 } else { 0.0 };
    }
    let ncomp = (pl.count() + pu.count() + rl.count() + ru.count()).max(1) as f64;

    let bnorm = 1.0
        + inf_norm(&qp.eq_rhs)
            .max(finite_norm(&qp.row_lo))
            .max(finite_norm(&qp.row_hi))
            .max(finite_norm(&qp.x_lo))
            .max(finite_norm(&qp.x_hi));
    let qnorm = 1.0 + inf_norm(&cost);

    let mut status = IpmStatus::MaxIterations;
    let mut iterations = 0;
    let (mut pres, mut dres, mut gap) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut tiny_steps = 0;

    for it in 0..settings.max_iter {
        iterations = it;
        let rx = mat_vec(&qp.rows, &x);
        // Dual residual.
        let mut vdiff = vec![0.0; m];
        for k in 0..m {
            vdiff[k] = ru.dual[k] - rl.dual[k];
        }
        let rt_v = mat_tr_vec(&qp.rows, &vdiff);
        let et_y = mat_tr_vec(&qp.eq, &y);
        let r_d: Vec<f64> = (0..n)
            .map(|j| hess[j] * x[j] + cost[j] - et_y[j] - pl.dual[j] + pu.dual[j] + rt_v[j])
            .collect();
        let ex = mat_vec(&qp.eq, &x);
        let r_e: Vec<f64> = (0..me).map(|i| ex[i] - qp.eq_rhs[i]).collect();
        let r_tl: Vec<f64> = (0..n)
            .map(|j| {
                if pl.active[j] {
                    x[j] - qp.x_lo[j] - pl.slack[j]
                } else {
                    0.0
                }
            })
            .collect();
        let r_tu: Vec<f64> = (0..n)
            .map(|j| {
                if pu.active[j] {
                    x[j] + pu.slack[j] - qp.x_hi[j]
                } else {
                    0.0
                }
            })
            .collect();
        let r_wl: Vec<f64> = (0..m)
            .map(|k| {
                if rl.active[k] {
                    rx[k] - qp.row_lo[k] - rl.slack[k]
                } else {
                    0.0
                }
            })
            .collect();
        let r_wu: Vec<f64> = (0..m)
            .map(|k| {
                if ru.active[k] {
                    rx[k] + ru.slack[k] - qp.row_hi[k]
                } else {
                    0.0
                }
            })
            .collect();

        let comp = pl.complementarity()
            + pu.complementarity()
            + rl.complementarity()
            + ru.complementarity();
        let mu = comp / ncomp;
        let obj: f64 = (0..n)
            .map(|j| 0.5 * hess[j] * x[j] * x[j] + cost[j] * x[j])
            .sum();
        pres = inf_norm(&r_e)
            .max(inf_norm(&r_tl))
            .max(inf_norm(&r_tu))
            .max(inf_norm(&r_wl))
            .max(inf_norm(&r_wu))
            / bnorm;
        dres = inf_norm(&r_d) / qnorm;
        gap = comp / (1.0 + obj.abs());
        log::trace!("ipm {it}: primal {pres:.2e} dual {dres:.2e} gap {gap:.2e} mu {mu:.2e}");
        if pres <= settings.tol && dres <= settings.tol && gap <= settings.tol {
            status = IpmStatus::Converged;
            break;
        }

        // Reduced normal matrix M = diag(h + Σx) + Rᵀ diag(Σr) R.
        let sx_l = pl.sigma();
        let sx_u = pu.sigma();
        let sr_l = rl.sigma();
        let sr_u = ru.sigma();
        let sr: Vec<f64> = (0..m).map(|k| sr_l[k] + sr_u[k]).collect();
        let mut mat = weighted_gram(qp, &sr);
        for j in 0..n {
            mat[(j, j)] += hess[j] + sx_l[j] + sx_u[j];
        }
        // Regularize only as much as the factorization needs: a shift proportional to the
        // largest pivot would swamp the curvature of free variables near the optimum.
        let mut chol = None;
        let mut reg = 0.0;
        for _ in 0..8 {
            let mut shifted = mat.clone();
            for j in 0..n {
                shifted[(j, j)] += reg;
            }
            if let Some(c) = shifted.cholesky() {
                chol = Some(c);
                break;
            }
            reg = if reg == 0.0 { 1e-12 } else { reg * 100.0 };
        }
        let Some(chol) = chol else {
            status = IpmStatus::Stalled;
            break;
        };
        let et = qp.eq.transpose();
        let m_inv_et = chol.solve(&et);
        let schur = &qp.eq * &m_inv_et;
        let schur_lu = schur.lu();

        let solve_dir = |c: [&[f64]; 4]| -> Option<Direction> {
            let (c_l, c_u, c_vl, c_vu) = (c[0], c[1], c[2], c[3]);
            let mut h = vec![0.0; n];
            for j in 0..n {
                h[j] = -r_d[j];
                if pl.active[j] {
                    h[j] += (c_l[j] - pl.dual[j] * r_tl[j]) / pl.slack[j];
                }
                if pu.active[j] {
                    h[j] -= (c_u[j] + pu.dual[j] * r_tu[j]) / pu.slack[j];
                }
            }
            let mut g = vec![0.0; m];
            for k in 0..m {
                if rl.active[k] {
                    g[k] += (c_vl[k] - rl.dual[k] * r_wl[k]) / rl.slack[k];
                }
                if ru.active[k] {
                    g[k] -= (c_vu[k] + ru.dual[k] * r_wu[k]) / ru.slack[k];
                }
            }
            let rt_g = mat_tr_vec(&qp.rows, &g);
            for j in 0..n {
                h[j] += rt_g[j];
            }
            let hv = DVector::from_vec(h);
            let m_inv_h = chol.solve(&hv);
            let dy = if me > 0 {
                let rhs = -DVector::from_vec(r_e.clone()) - &qp.eq * &m_inv_h;
                schur_lu.solve(&rhs)?
            } else {
                DVector::zeros(0)
            };
            let dxv = m_inv_h + &m_inv_et * &dy;
            let dx: Vec<f64> = dxv.iter().cloned().collect();
            let rho = mat_vec(&qp.rows, &dx);
            let mut d: [(Vec<f64>, Vec<f64>); 4] = Default::default();
            d[0] = (vec![0.0; n], vec![0.0; n]);
            d[1] = (vec![0.0; n], vec![0.0; n]);
            d[2] = (vec![0.0; m], vec![0.0; m]);
            d[3] = (vec![0.0; m], vec![0.0; m]);
            for j in 0..n {
                if pl.active[j] {
                    let dt = dx[j] + r_tl[j];
                    d[0].0[j] = dt;
                    d[0].1[j] = (c_l[j] - pl.dual[j] * dt) / pl.slack[j];
                }
                if pu.active[j] {
                    let dt = -r_tu[j] - dx[j];
                    d[1].0[j] = dt;
                    d[1].1[j] = (c_u[j] - pu.dual[j] * dt) / pu.slack[j];
                }
            }
            for k in 0..m {
                if rl.active[k] {
                    let dw = rho[k] + r_wl[k];
                    d[2].0[k] = dw;
                    d[2].1[k] = (c_vl[k] - rl.dual[k] * dw) / rl.slack[k];
                }
                if ru.active[k] {
                    let dw = -r_wu[k] - rho[k];
                    d[3].0[k] = dw;
                    d[3].1[k] = (c_vu[k] - ru.dual[k] * dw) / ru.slack[k];
                }
            }
            Some(Direction {
                dx,
                dy: dy.iter().cloned().collect(),
                d,
            })
        };

        let families = [&pl, &pu, &rl, &ru];
        let neg_comp = |p: &Pairs| -> Vec<f64> {
            (0..p.active.len())
                .map(|j| {
                    if p.active[j] {
                        -p.slack[j] * p.dual[j]
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let c_aff: Vec<Vec<f64>> = families.iter().map(|p| neg_comp(p)).collect();
        let aff = match solve_dir([&c_aff[0], &c_aff[1], &c_aff[2], &c_aff[3]]) {
            Some(d) => d,
            None => {
                status = IpmStatus::Stalled;
                break;
            }
        };
        let (ap, ad) = step_lengths(&families, &aff);
        let a_aff = ap.min(ad);
        let mut comp_aff = 0.0;
        for (f, p) in families.iter().enumerate() {
            for j in 0..p.active.len() {
                if p.active[j] {
                    comp_aff +=
                        (p.slack[j] + a_aff * aff.d[f].0[j]) * (p.dual[j] + a_aff * aff.d[f].1[j]);
                }
            }
        }
        let mu_aff = comp_aff / ncomp;
        let sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).min(1.0)
        } else {
            0.0
        };

        let c_cor: Vec<Vec<f64>> = families
            .iter()
            .enumerate()
            .map(|(f, p)| {
                (0..p.active.len())
                    .map(|j| {
                        if p.active[j] {
                            -p.slack[j] * p.dual[j] + sigma * mu - aff.d[f].0[j] * aff.d[f].1[j]
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let dir = match solve_dir([&c_cor[0], &c_cor[1], &c_cor[2], &c_cor[3]]) {
            Some(d) => d,
            None => {
                status = IpmStatus::Stalled;
                break;
            }
        };
        let (ap, ad) = step_lengths(&families, &dir);
        let alpha = (0.995 * ap.min(ad)).min(1.0);
        if alpha < 1e-12 {
            tiny_steps += 1;
            if tiny_steps > 3 {
                status = IpmStatus::Stalled;
                break;
            }
        }

        for j in 0..n {
            x[j] += alpha * dir.dx[j];
        }
        for i in 0..me {
            y[i] += alpha * dir.dy[i];
        }
        for (f, p) in [&mut pl, &mut pu, &mut rl, &mut ru].into_iter().enumerate() {
            for j in 0..p.active.len() {
                if p.active[j] {
                    p.slack[j] += alpha * dir.d[f].0[j];
                    p.dual[j] += alpha * dir.d[f].1[j];
                }
            }
        }
    }

    let unscale = |v: &[f64]| v.iter().map(|d| d * scale).collect::<Vec<_>>();
    IpmResult {
        x,
        y: unscale(&y),
        z_lo: unscale(&pl.dual),
        z_hi: unscale(&pu.dual),
        v_lo: unscale(&rl.dual),
        v_hi: unscale(&ru.dual),
        iterations,
        status,
        primal_residual: pres,
        dual_residual: dres,
        gap,
    }
}

fn step_lengths(families: &[&Pairs; 4], dir: &Direction) -> (f64, f64) {
    let mut ap = 1.0f64;
    let mut ad = 1.0f64;
    for (f, p) in families.iter().enumerate() {
        let (a, b) = p.max_step(&dir.d[f].0, &dir.d[f].1);
        ap = ap.min(a);
        ad = ad.min(b);
    }
    (ap, ad)
}

/// Smallest total violation of the equality and row constraints that the bounds allow,
/// found by an elastic reformulation. `None` if that auxiliary problem fails as well.
pub(crate) fn min_violation(qp: &DenseQp) -> Option<f64> {
    let n = qp.hess.len();
    let m = qp.rows.nrows();
    let me = qp.eq.nrows();
    // Elastic pairs: 2 per equality, 2 per row.
    let ne = 2 * (me + m);
    let total = n + ne;
    let mut eq = DMatrix::zeros(me, total);
    eq.view_mut((0, 0), (me, n)).copy_from(&qp.eq);
    for i in 0..me {
        eq[(i, n + 2 * i)] = 1.0;
        eq[(i, n + 2 * i + 1)] = -1.0;
    }
    let mut rows = DMatrix::zeros(m, total);
    rows.view_mut((0, 0), (m, n)).copy_from(&qp.rows);
    for k in 0..m {
        rows[(k, n + 2 * me + 2 * k)] = 1.0;
        rows[(k, n + 2 * me + 2 * k + 1)] = -1.0;
    }
    let mut cost = vec![0.0; total];
    let mut hess = vec![1e-8; total];
    for j in n..total {
        cost[j] = 1.0;
        hess[j] = 0.0;
    }
    let mut x_lo = qp.x_lo.clone();
    x_lo.extend(std::iter::repeat_n(0.0, ne));
    let mut x_hi = qp.x_hi.clone();
    x_hi.extend(std::iter::repeat_n(f64::INFINITY, ne));
    let aux = DenseQp {
        hess,
        cost,
        eq,
        eq_rhs: qp.eq_rhs.clone(),
        rows,
        row_lo: qp.row_lo.clone(),
        row_hi: qp.row_hi.clone(),
        x_lo,
        x_hi,
        row_factor: None,
    };
    let r = solve_qp(&aux, IpmSettings::default());
    (r.status == IpmStatus::Converged).then(|| r.x[n..].iter().sum())
}

/// `Rᵀ diag(w) R`.
fn weighted_gram(qp: &DenseQp, w: &[f64]) -> DMatrix<f64> {
    let scaled = |a: &DMatrix<f64>| {
        let mut a = a.clone();
        for (k, wk) in w.iter().enumerate() {
            let mut row = a.row_mut(k);
            row *= wk.sqrt();
        }
        a
    };
    match &qp.row_factor {
        None => {
            let rs = scaled(&qp.rows);
            rs.transpose() * &rs
        }
        Some(f) => {
            let bs = scaled(&f.base);
            let small = bs.transpose() * &bs;
            let n = f.cols.len();
            DMatrix::from_fn(n, n, |i, j| {
                let (ci, si) = f.cols[i];
                let (cj, sj) = f.cols[j];
                si * sj * small[(ci, cj)]
            })
        }
    }
}

fn finite_norm(v: &[f64]) -> f64 {
    v.iter()
        .filter(|x| x.is_finite())
        .fold(0.0, |m, x| m.max(x.abs()))
}

fn mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let xv = DVector::from_column_slice(x);
    (a * xv).iter().cloned().collect()
}

fn mat_tr_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let xv = DVector::from_column_slice(x);
    a.tr_mul(&xv).iter().cloned().collect()
}
