//! k-order constrained nonlinear least squares over a discrete trajectory
//! `x_0..x_T`.
//!
//! Features are vector-valued functions of `x_{t-k..=t}` acting as costs,
//! equalities or inequalities. Constraints are handled with an augmented
//! Lagrangian written in least-squares form, so a single damped
//! Gauss-Newton kernel minimizes every subproblem. Because each feature only
//! touches `k + 1` consecutive states, the normal equations are banded.

mod band;
mod trajectory;

pub use band::{BandCholesky, BandMatrix};
pub use trajectory::{solve_trajectory, Trajectory, TrajectoryProblem};

use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    /// Minimized in the sum of squares.
    Cost,
    /// Driven to zero.
    Eq,
    /// Kept `≤ 0`.
    Ineq,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn add(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] += v;
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = T::zero());
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().fold(T::zero(), |a, &v| a + v * v).sqrt()
    }
}

/// One term of the problem, evaluated on the window `x_{t-k..=t}`.
pub trait Feature<T: Real>: Send + Sync {
    fn name(&self) -> &str;
    fn kind(&self) -> FeatureKind;
    /// Number of previous states the feature looks at.
    fn order(&self) -> usize;
    fn time_index(&self) -> usize;
    fn dim(&self) -> usize;
    /// Writes the residual for `states = [x_{t-k}, .., x_t]` into `out`.
    fn eval(&self, states: &[&[T]], out: &mut [T]);

    /// State coordinates the feature depends on (within each state). `None`
    /// means all of them.
    fn support(&self) -> Option<&[usize]> {
        None
    }

    /// Analytic residual and Jacobian. The Jacobian has `dim` rows and
    /// `(order + 1) · n` columns, state `x_{t-k}` first. Returns `false` to
    /// fall back to finite differences.
    fn eval_jacobian(&self, _states: &[&[T]], _out: &mut [T], _jac: &mut Matrix<T>) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimizerError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("non-finite value in feature `{feature}` at time {time}")]
    NonFinite { feature: String, time: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub eps_eq: f64,
    pub eps_ineq: f64,
    pub step_tol: f64,
    pub mu0: f64,
    pub mu_growth: f64,
    pub mu_max: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub damping0: f64,
    pub fd_step: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eps_eq: 1e-3,
            eps_ineq: 1e-3,
            step_tol: 1e-4,
            mu0: 1.0,
            mu_growth: 10.0,
            mu_max: 1e6,
            max_outer: 8,
            max_inner: 100,
            damping0: 1e-2,
            fd_step: 1e-6,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let positive = [
            self.eps_eq,
            self.eps_ineq,
            self.step_tol,
            self.mu0,
            self.mu_max,
            self.damping0,
            self.fd_step,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.max_outer == 0 || self.max_inner == 0 {
            return Err(OptimizerError::InvalidProblem("solver settings must be positive".into()));
        }
        if !(self.mu_growth > 1.0) {
            return Err(OptimizerError::InvalidProblem("mu_growth must exceed 1".into()));
        }
        Ok(())
    }
}

/// Decision variables and features of one solve.
pub struct Problem<T: Real> {
    pub state_dim: usize,
    /// Initial guess, one vector per time step (`T + 1` entries).
    pub init: Vec<Vec<T>>,
    /// `frozen[t * state_dim + d]` keeps that coordinate at its initial value.
    pub frozen: Vec<bool>,
    pub features: Vec<Box<dyn Feature<T>>>,
}

impl<T: Real> Problem<T> {
    pub fn new(state_dim: usize, init: Vec<Vec<T>>) -> Self {
        let n = init.len() * state_dim;
        Self {
            state_dim,
            init,
            frozen: vec![false; n],
            features: Vec::new(),
        }
    }

    /// Problem whose `T + 1` states all start at `x0`.
    pub fn constant_init(x0: Vec<T>, horizon: usize) -> Self {
        let n = x0.len();
        Self::new(n, vec![x0; horizon + 1])
    }

    pub fn horizon(&self) -> usize {
        self.init.len().saturating_sub(1)
    }

    pub fn freeze(&mut self, t: usize, d: usize) {
        self.frozen[t * self.state_dim + d] = true;
    }

    pub fn add(&mut self, f: impl Feature<T> + 'static) {
        self.features.push(Box::new(f));
    }

    fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: String| Err(OptimizerError::InvalidProblem(m));
        if self.init.is_empty() {
            return bad("no states".into());
        }
        if self.init.iter().any(|s| s.len() != self.state_dim) {
            return bad("initial states have inconsistent dimension".into());
        }
        if self.frozen.len() != self.init.len() * self.state_dim {
            return bad("frozen mask has wrong length".into());
        }
        for f in &self.features {
            if f.order() > f.time_index() {
                return bad(format!("feature `{}`: order exceeds time index", f.name()));
            }
            if f.time_index() > self.horizon() {
                return bad(format!("feature `{}`: time index beyond horizon", f.name()));
            }
            if let Some(s) = f.support() {
                if s.iter().any(|&d| d >= self.state_dim) {
                    return bad(format!("feature `{}`: support out of range", f.name()));
                }
            }
        }
        Ok(())
    }
}

/// Per-outer-iteration record, for debugging output.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub outer: usize,
    pub gn_steps: usize,
    pub mu: f64,
    pub cost: f64,
    pub max_eq: f64,
    pub max_ineq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub feature: String,
    pub time: usize,
    pub violation: f64,
}

#[derive(Debug, Clone)]
pub struct Solution<T> {
    pub states: Vec<Vec<T>>,
    pub cost: f64,
    pub max_eq: f64,
    pub max_ineq: f64,
    pub feasible: bool,
    /// Accepted Gauss-Newton steps over all outer iterations.
    pub gn_steps: usize,
    pub history: Vec<IterationRecord>,
    /// `(outer iteration, merit)` at the start of each outer iteration and
    /// after every accepted step.
    pub merit_trace: Vec<(usize, f64)>,
    /// Max violation per constraint feature, in feature order.
    pub violations: Vec<Violation>,
}

/// Constraint violations above `eps`, largest first.
pub fn feasibility_report(violations: &[Violation], eps: f64) -> Vec<Violation> {
    let mut v: Vec<Violation> = violations.iter().filter(|v| v.violation > eps).cloned().collect();
    v.sort_by(|a, b| {
        b.violation
            .total_cmp(&a.violation)
            .then_with(|| a.time.cmp(&b.time))
            .then_with(|| a.feature.cmp(&b.feature))
    });
    v
}

fn window<'a, T>(x: &'a [T], n: usize, t: usize, k: usize) -> Vec<&'a [T]> {
    (t - k..=t).map(|s| &x[s * n..(s + 1) * n]).collect()
}

/// Central finite-difference Jacobian with step `h`, restricted to the
/// feature's support.
pub fn fd_jacobian<T: Real>(f: &dyn Feature<T>, states: &[&[T]], h: T) -> Matrix<T> {
    let n = states.first().map_or(0, |s| s.len());
    let k1 = states.len();
    let mut jac = Matrix::zeros(f.dim(), k1 * n);
    let all: Vec<usize> = (0..n).collect();
    let dofs = f.support().unwrap_or(&all);
    let mut buf: Vec<Vec<T>> = states.iter().map(|s| s.to_vec()).collect();
    let mut plus = vec![T::zero(); f.dim()];
    let mut minus = vec![T::zero(); f.dim()];
    let two_h = h + h;
    for s in 0..k1 {
        for &d in dofs {
            let orig = buf[s][d];
            buf[s][d] = orig + h;
            f.eval(&buf.iter().map(|v| v.as_slice()).collect::<Vec<_>>(), &mut plus);
            buf[s][d] = orig - h;
            f.eval(&buf.iter().map(|v| v.as_slice()).collect::<Vec<_>>(), &mut minus);
            buf[s][d] = orig;
            for r in 0..f.dim() {
                jac.set(r, s * n + d, (plus[r] - minus[r]) / two_h);
            }
        }
    }
    jac
}

/// Jacobian of a feature: the analytic override when provided, central
/// finite differences otherwise.
pub fn jacobian<T: Real>(f: &dyn Feature<T>, states: &[&[T]], fd_step: T) -> Result<Matrix<T>, OptimizerError> {
    let n = states.first().map_or(0, |s| s.len());
    let mut jac = Matrix::zeros(f.dim(), states.len() * n);
    let mut out = vec![T::zero(); f.dim()];
    if !f.eval_jacobian(states, &mut out, &mut jac) {
        jac = fd_jacobian(f, states, fd_step);
    }
    if jac.data.iter().any(|v| !v.is_finite()) {
        return Err(OptimizerError::NonFinite {
            feature: f.name().to_string(),
            time: f.time_index(),
        });
    }
    Ok(jac)
}

struct Evaluation<T> {
    residuals: Vec<Vec<T>>,
    jacobians: Vec<Matrix<T>>,
}

struct Multipliers<T> {
    /// One vector per feature (empty for costs).
    lambda: Vec<Vec<T>>,
    mu: T,
}

struct Solver<'a, T: Real> {
    p: &'a Problem<T>,
    s: &'a SolverSettings,
    n: usize,
    nvars: usize,
    bandwidth: usize,
    fd: T,
}

impl<'a, T: Real> Solver<'a, T> {
    fn residuals(&self, x: &[T]) -> Option<Vec<Vec<T>>> {
        let mut all = Vec::with_capacity(self.p.features.len());
        for f in &self.p.features {
            let mut out = vec![T::zero(); f.dim()];
            f.eval(&window(x, self.n, f.time_index(), f.order()), &mut out);
            if out.iter().any(|v| !v.is_finite()) {
                return None;
            }
            all.push(out);
        }
        Some(all)
    }

    fn first_non_finite(&self, x: &[T]) -> OptimizerError {
        for f in &self.p.features {
            let mut out = vec![T::zero(); f.dim()];
            f.eval(&window(x, self.n, f.time_index(), f.order()), &mut out);
            if out.iter().any(|v| !v.is_finite()) {
                return OptimizerError::NonFinite {
                    feature: f.name().to_string(),
                    time: f.time_index(),
                };
            }
        }
        OptimizerError::InvalidProblem("non-finite state".into())
    }

    fn evaluate(&self, x: &[T], residuals: Vec<Vec<T>>) -> Result<Evaluation<T>, OptimizerError> {
        let mut jacobians = Vec::with_capacity(self.p.features.len());
        for f in &self.p.features {
            let states = window(x, self.n, f.time_index(), f.order());
            jacobians.push(jacobian(f.as_ref(), &states, self.fd)?);
        }
        Ok(Evaluation { residuals, jacobians })
    }

    /// Least-squares residual entry for feature row `r` under the current
    /// multipliers, with the factor that scales its Jacobian row. `None`
    /// marks an inactive hinge.
    #[inline]
    fn weighted(&self, kind: FeatureKind, v: T, lambda: T, mu: T) -> Option<(T, T)> {
        let sq = mu.sqrt();
        let two = T::lit(2.0);
        match kind {
            FeatureKind::Cost => Some((v, T::one())),
            FeatureKind::Eq => Some((sq * (v + lambda / (two * mu)), sq)),
            FeatureKind::Ineq => {
                let a = v + lambda / (two * mu);
                if a > T::zero() {
                    Some((sq * a, sq))
                } else {
                    None
                }
            }
        }
    }

    fn merit(&self, res: &[Vec<T>], m: &Multipliers<T>) -> T {
        let mut total = T::zero();
        for (fi, f) in self.p.features.iter().enumerate() {
            let kind = f.kind();
            for (r, &v) in res[fi].iter().enumerate() {
                let l = if kind == FeatureKind::Cost { T::zero() } else { m.lambda[fi][r] };
                if let Some((w, _)) = self.weighted(kind, v, l, m.mu) {
                    total += w * w;
                }
            }
        }
        total
    }

    fn support_columns(&self, f: &dyn Feature<T>) -> Vec<usize> {
        let k1 = f.order() + 1;
        match f.support() {
            Some(s) => (0..k1).flat_map(|b| s.iter().map(move |&d| b * self.n + d)).collect(),
            None => (0..k1 * self.n).collect(),
        }
    }

    fn normal_equations(&self, ev: &Evaluation<T>, m: &Multipliers<T>) -> (BandMatrix<T>, Vec<T>) {
        let mut a = BandMatrix::zeros(self.nvars, self.bandwidth);
        let mut g = vec![T::zero(); self.nvars];
        for (fi, f) in self.p.features.iter().enumerate() {
            let kind = f.kind();
            let base = (f.time_index() - f.order()) * self.n;
            let cols = self.support_columns(f.as_ref());
            let jac = &ev.jacobians[fi];
            for (r, &v) in ev.residuals[fi].iter().enumerate() {
                let l = if kind == FeatureKind::Cost { T::zero() } else { m.lambda[fi][r] };
                let Some((w, scale)) = self.weighted(kind, v, l, m.mu) else {
                    continue;
                };
                let row: Vec<T> = cols.iter().map(|&c| jac.get(r, c) * scale).collect();
                for (ci, &c) in cols.iter().enumerate() {
                    let jc = row[ci];
                    if jc == T::zero() {
                        continue;
                    }
                    g[base + c] += jc * w;
                    for (di, &d) in cols.iter().enumerate().take(ci + 1) {
                        let jd = row[di];
                        if jd != T::zero() {
                            a.add(base + c, base + d, jc * jd);
                        }
                    }
                }
            }
        }
        for (i, &fz) in self.p.frozen.iter().enumerate() {
            if fz {
                a.pin(i);
                g[i] = T::zero();
            }
        }
        (a, g)
    }

    /// Damped Gauss-Newton on the current augmented merit. Returns the
    /// number of accepted steps.
    fn inner(
        &self,
        x: &mut Vec<T>,
        res: &mut Vec<Vec<T>>,
        m: &Multipliers<T>,
        trace: &mut Vec<f64>,
    ) -> Result<usize, OptimizerError> {
        let step_tol = T::lit(self.s.step_tol);
        let damping0 = T::lit(self.s.damping0);
        let max_damping = T::lit(1e12);
        let ten = T::lit(10.0);
        let mut merit = self.merit(res, m);
        trace.push(merit.to_f64_lossy());
        let mut damping = T::zero();
        let mut steps = 0;
        for _ in 0..self.s.max_inner {
            let ev = self.evaluate(x, std::mem::take(res))?;
            let (a, g) = self.normal_equations(&ev, m);
            *res = ev.residuals;
            let mut accepted = false;
            loop {
                let mut ad = a.clone();
                if damping > T::zero() {
                    for i in 0..self.nvars {
                        if !self.p.frozen[i] {
                            let d = ad.diagonal(i);
                            ad.add_diagonal(i, damping * (d + T::one()));
                        }
                    }
                }
                let Some(chol) = ad.cholesky() else {
                    damping = if damping == T::zero() { damping0 } else { damping * ten };
                    if damping > max_damping {
                        return Ok(steps);
                    }
                    continue;
                };
                let rhs: Vec<T> = g.iter().map(|&v| -v).collect();
                let delta = chol.solve(&rhs);
                let step = delta.iter().fold(T::zero(), |a, &v| a.max(v.abs()));
                if !(step >= step_tol) {
                    // Converged, or the step is no longer finite.
                    return Ok(steps);
                }
                let trial: Vec<T> = x.iter().zip(&delta).map(|(&a, &b)| a + b).collect();
                if let Some(trial_res) = self.residuals(&trial) {
                    let trial_merit = self.merit(&trial_res, m);
                    if trial_merit < merit {
                        *x = trial;
                        *res = trial_res;
                        let decrease = merit - trial_merit;
                        merit = trial_merit;
                        trace.push(merit.to_f64_lossy());
                        steps += 1;
                        damping = if damping <= damping0 { T::zero() } else { damping / ten };
                        accepted = true;
                        if decrease <= T::epsilon() * T::lit(16.0) * merit {
                            return Ok(steps);
                        }
                        break;
                    }
                }
                damping = if damping == T::zero() { damping0 } else { damping * ten };
                if damping > max_damping {
                    break;
                }
            }
            if !accepted {
                return Ok(steps);
            }
        }
        Ok(steps)
    }

    fn measure(&self, res: &[Vec<T>]) -> (f64, f64, f64, Vec<Violation>) {
        let mut cost = 0.0;
        let mut max_eq = 0.0f64;
        let mut max_ineq = 0.0f64;
        let mut violations = Vec::new();
        for (fi, f) in self.p.features.iter().enumerate() {
            let vals = res[fi].iter().map(|v| v.to_f64_lossy());
            match f.kind() {
                FeatureKind::Cost => cost += vals.map(|v| v * v).sum::<f64>(),
                FeatureKind::Eq => {
                    let v = vals.fold(0.0f64, |a, v| a.max(v.abs()));
                    max_eq = max_eq.max(v);
                    violations.push(Violation {
                        feature: f.name().to_string(),
                        time: f.time_index(),
                        violation: v,
                    });
                }
                FeatureKind::Ineq => {
                    let v = vals.fold(0.0f64, |a, v| a.max(v.max(0.0)));
                    max_ineq = max_ineq.max(v);
                    violations.push(Violation {
                        feature: f.name().to_string(),
                        time: f.time_index(),
                        violation: v,
                    });
                }
            }
        }
        (cost, max_eq, max_ineq, violations)
    }
}

/// Minimizes the problem with the augmented Lagrangian outer loop.
///
/// The returned solution is the iterate with the smallest constraint
/// violation seen (ties broken by cost). The call is deterministic.
pub fn solve<T: Real>(problem: &Problem<T>, settings: &SolverSettings) -> Result<Solution<T>, OptimizerError> {
    settings.validate()?;
    problem.validate()?;
    let n = problem.state_dim;
    let nvars = problem.init.len() * n;
    let bandwidth = problem
        .features
        .iter()
        .map(|f| (f.order() + 1) * n)
        .max()
        .unwrap_or(1)
        .saturating_sub(1);
    let solver = Solver {
        p: problem,
        s: settings,
        n,
        nvars,
        bandwidth,
        fd: T::lit(settings.fd_step),
    };
    let mut x: Vec<T> = problem.init.iter().flatten().copied().collect();
    let mut res = solver.residuals(&x).ok_or_else(|| solver.first_non_finite(&x))?;
    let mut m = Multipliers {
        lambda: problem
            .features
            .iter()
            .map(|f| match f.kind() {
                FeatureKind::Cost => Vec::new(),
                _ => vec![T::zero(); f.dim()],
            })
            .collect(),
        mu: T::lit(settings.mu0),
    };
    let mut history = Vec::new();
    let mut merit_trace = Vec::new();
    let mut gn_steps = 0;
    let mut prev_violation = f64::INFINITY;
    let mut best: Option<(f64, f64, Vec<T>, Vec<Violation>, f64, f64)> = None;
    for outer in 0..settings.max_outer {
        let mut trace = Vec::new();
        gn_steps += solver.inner(&mut x, &mut res, &m, &mut trace)?;
        merit_trace.extend(trace.into_iter().map(|v| (outer, v)));
        let (cost, max_eq, max_ineq, violations) = solver.measure(&res);
        history.push(IterationRecord {
            outer,
            gn_steps,
            mu: m.mu.to_f64_lossy(),
            cost,
            max_eq,
            max_ineq,
        });
        log::debug!(
            "outer {outer}: steps {gn_steps} mu {:.1e} cost {cost:.6e} eq {max_eq:.3e} ineq {max_ineq:.3e}",
            m.mu.to_f64_lossy()
        );
        let violation = max_eq.max(max_ineq);
        let better = match &best {
            None => true,
            Some((bv, bc, ..)) => violation < *bv || (violation == *bv && cost < *bc),
        };
        if better {
            best = Some((violation, cost, x.clone(), violations, max_eq, max_ineq));
        }
        if max_eq <= settings.eps_eq && max_ineq <= settings.eps_ineq {
            break;
        }
        let two_mu = T::lit(2.0) * m.mu;
        for (fi, f) in problem.features.iter().enumerate() {
            match f.kind() {
                FeatureKind::Cost => {}
                FeatureKind::Eq => {
                    for (l, &h) in m.lambda[fi].iter_mut().zip(&res[fi]) {
                        *l += two_mu * h;
                    }
                }
                FeatureKind::Ineq => {
                    for (l, &g) in m.lambda[fi].iter_mut().zip(&res[fi]) {
                        *l = (*l + two_mu * g).max(T::zero());
                    }
                }
            }
        }
        // Grow the penalty unless the violation clearly halved.
        if !(violation < 0.5 * prev_violation * (1.0 - 1e-6)) {
            m.mu = (m.mu * T::lit(settings.mu_growth)).min(T::lit(settings.mu_max));
        }
        prev_violation = violation;
    }
    let (_, cost, xb, violations, max_eq, max_ineq) = best.expect("at least one outer iteration");
    Ok(Solution {
        states: xb.chunks(n.max(1)).map(|c| c.to_vec()).take(problem.init.len()).collect(),
        cost,
        max_eq,
        max_ineq,
        feasible: max_eq <= settings.eps_eq && max_ineq <= settings.eps_ineq,
        gn_steps,
        history,
        merit_trace,
        violations,
    })
}

/// Closure-backed feature, convenient for tests and small problems.
pub struct FnFeature<T, F> {
    pub name: String,
    pub kind: FeatureKind,
    pub order: usize,
    pub time: usize,
    pub dim: usize,
    pub f: F,
    _t: std::marker::PhantomData<T>,
}

impl<T, F> FnFeature<T, F>
where
    T: Real,
    F: Fn(&[&[T]], &mut [T]) + Send + Sync,
{
    pub fn new(name: impl Into<String>, kind: FeatureKind, order: usize, time: usize, dim: usize, f: F) -> Self {
        Self {
            name: name.into(),
            kind,
            order,
            time,
            dim,
            f,
            _t: std::marker::PhantomData,
        }
    }
}

impl<T, F> Feature<T> for FnFeature<T, F>
where
    T: Real,
    F: Fn(&[&[T]], &mut [T]) + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }
    fn kind(&self) -> FeatureKind {
        self.kind
    }
    fn order(&self) -> usize {
        self.order
    }
    fn time_index(&self) -> usize {
        self.time
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, states: &[&[T]], out: &mut [T]) {
        (self.f)(states, out)
    }
}
