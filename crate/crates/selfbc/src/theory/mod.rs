//! Exact tabular machinery for the conservative-policy-iteration analysis:
//! policy evaluation, discounted visitations, the performance-difference
//! identity, total-variation tooling, the mixture-policy improvement bound,
//! and the weighted-behavior-cloning gradient equivalence.
//!
//! Expectation convention: the improvement bound mixes unnormalized
//! visitation sums (`rho`, totalling 1/(1-gamma)) with expectation notation.
//! Every expectation here is evaluated with the normalized distribution
//! `d = (1-gamma) rho` and each bound term carries an explicit extra
//! `1/(1-gamma)`, which is identical to summing against the unnormalized
//! `rho` directly. That is the reading under which both the visitation-shift
//! lemma and the improvement bound are provable; the verification report
//! re-checks it numerically on every instance.

pub mod verify;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::envs::FiniteMdp;
use crate::rng::Stream;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("linear system is numerically singular (pivot {pivot:.3e})")]
    SingularSystem { pivot: f64 },
    #[error("improvement bound violated: lhs {lhs:.6e} < rhs {rhs:.6e} - 1e-9")]
    BoundViolated { lhs: f64, rhs: f64 },
    #[error("visitation-shift bound violated: lhs {lhs:.6e} > rhs {rhs:.6e} + 1e-9")]
    ShiftBoundViolated { lhs: f64, rhs: f64 },
}

/// Row-stochastic policy over a finite MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub probs: Array2<f64>,
}

impl TabularPolicy {
    pub fn from_probs(probs: Array2<f64>) -> Result<Self, TheoryError> {
        let p = TabularPolicy { probs };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        for (s, row) in self.probs.rows().into_iter().enumerate() {
            if row.iter().any(|&x| x < 0.0) {
                return Err(TheoryError::InvalidInput(format!(
                    "negative probability in policy row {s}"
                )));
            }
            let total: f64 = row.sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(TheoryError::InvalidInput(format!(
                    "policy row {s} sums to {total}"
                )));
            }
        }
        Ok(())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    /// Dirichlet(1,..,1) rows.
    pub fn random(n_states: usize, n_actions: usize, stream: &mut Stream) -> Self {
        let mut probs = Array2::zeros((n_states, n_actions));
        for s in 0..n_states {
            let row = stream.dirichlet_flat(n_actions);
            for (a, &v) in row.iter().enumerate() {
                probs[[s, a]] = v;
            }
        }
        TabularPolicy { probs }
    }

    /// Rows concentrated on one action with mass `1 - slack` (the remainder
    /// spread uniformly); used to build near-deterministic behaviors.
    pub fn near_deterministic(
        choices: &[usize],
        n_actions: usize,
        slack: f64,
    ) -> Result<Self, TheoryError> {
        if !(0.0..1.0).contains(&slack) {
            return Err(TheoryError::InvalidInput(format!("slack = {slack}")));
        }
        let n_states = choices.len();
        let mut probs = Array2::from_elem((n_states, n_actions), slack / n_actions as f64);
        for (s, &a) in choices.iter().enumerate() {
            if a >= n_actions {
                return Err(TheoryError::InvalidInput(format!(
                    "action {a} out of range in near_deterministic"
                )));
            }
            probs[[s, a]] += 1.0 - slack;
        }
        Ok(TabularPolicy { probs })
    }
}

/// Exact evaluation products for one policy.
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub q: Array2<f64>,
    pub v: Array1<f64>,
    pub a: Array2<f64>,
    pub j: f64,
}

/// Discounted state-visitation frequencies of a policy.
#[derive(Debug, Clone)]
pub struct Visitation {
    /// Unnormalized: sums to 1/(1-gamma).
    pub rho: Array1<f64>,
    /// Normalized distribution d = (1-gamma) rho.
    pub d: Array1<f64>,
}

/// Solve `a x = b` by LU with partial pivoting (dense, in place on copies).
fn solve_dense(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>, TheoryError> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    assert_eq!(b.len(), n);
    let mut m = a.clone();
    let mut x = b.clone();
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = m[[col, col]].abs();
        for r in col + 1..n {
            if m[[r, col]].abs() > pivot_val {
                pivot_val = m[[r, col]].abs();
                pivot_row = r;
            }
        }
        if pivot_val < 1e-300 {
            return Err(TheoryError::SingularSystem { pivot: pivot_val });
        }
        if pivot_row != col {
            for c in 0..n {
                m.swap([col, c], [pivot_row, c]);
            }
            x.swap(col, pivot_row);
        }
        for r in col + 1..n {
            let f = m[[r, col]] / m[[col, col]];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                m[[r, c]] -= f * m[[col, c]];
            }
            x[r] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = x[col];
        for c in col + 1..n {
            acc -= m[[col, c]] * x[c];
        }
        x[col] = acc / m[[col, col]];
    }
    Ok(x)
}

fn check_policy_shape(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<(), TheoryError> {
    if policy.probs.dim() != (mdp.n_states, mdp.n_actions) {
        return Err(TheoryError::InvalidInput(format!(
            "policy shape {:?} does not match MDP ({}, {})",
            policy.probs.dim(),
            mdp.n_states,
            mdp.n_actions
        )));
    }
    Ok(())
}

/// State-to-state transition matrix and state reward under a policy.
fn induced_dynamics(mdp: &FiniteMdp, policy: &TabularPolicy) -> (Array2<f64>, Array1<f64>) {
    let n = mdp.n_states;
    let mut p_pi = Array2::zeros((n, n));
    let mut r_pi = Array1::zeros(n);
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let w = policy.probs[[s, a]];
            if w == 0.0 {
                continue;
            }
            r_pi[s] += w * mdp.r[[s, a]];
            for sp in 0..n {
                p_pi[[s, sp]] += w * mdp.p[[s, a, sp]];
            }
        }
    }
    (p_pi, r_pi)
}

/// Exact policy evaluation: V solves `(I - gamma P_pi) V = r_pi`,
/// `Q(s,a) = r(s,a) + gamma sum_s' P(s,a,s') V(s')`, `A = Q - V`,
/// `J = rho0 . V`.
pub fn exact_eval(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<EvalResult, TheoryError> {
    check_policy_shape(mdp, policy)?;
    let n = mdp.n_states;
    let (p_pi, r_pi) = induced_dynamics(mdp, policy);
    let mut system = Array2::eye(n);
    system.scaled_add(-mdp.gamma, &p_pi);
    let v = solve_dense(&system, &r_pi)?;
    let mut q = Array2::zeros((n, mdp.n_actions));
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let mut acc = mdp.r[[s, a]];
            for sp in 0..n {
                acc += mdp.gamma * mdp.p[[s, a, sp]] * v[sp];
            }
            q[[s, a]] = acc;
        }
    }
    let a = &q - &v.view().insert_axis(ndarray::Axis(1));
    let j = mdp.rho0.dot(&v);
    Ok(EvalResult { q, v, a, j })
}

/// Discounted visitation: `rho = (I - gamma P_pi^T)^{-1} rho0`.
pub fn visitation(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<Visitation, TheoryError> {
    check_policy_shape(mdp, policy)?;
    let (p_pi, _) = induced_dynamics(mdp, policy);
    let mut system = Array2::eye(mdp.n_states);
    system.scaled_add(-mdp.gamma, &p_pi.t().to_owned());
    let rho = solve_dense(&system, &mdp.rho0)?;
    let d = rho.mapv(|x| x * (1.0 - mdp.gamma));
    Ok(Visitation { rho, d })
}

/// Both sides of the performance-difference identity:
/// `J(pi') - J(pi) = sum_s rho_pi'(s) sum_a pi'(a|s) A_pi(s,a)`.
pub fn perf_diff_identity(
    mdp: &FiniteMdp,
    pi_prime: &TabularPolicy,
    pi: &TabularPolicy,
) -> Result<(f64, f64), TheoryError> {
    let ev_prime = exact_eval(mdp, pi_prime)?;
    let ev = exact_eval(mdp, pi)?;
    let lhs = ev_prime.j - ev.j;
    let rho_prime = visitation(mdp, pi_prime)?.rho;
    let mut rhs = 0.0;
    for s in 0..mdp.n_states {
        let mut adv = 0.0;
        for a in 0..mdp.n_actions {
            adv += pi_prime.probs[[s, a]] * ev.a[[s, a]];
        }
        rhs += rho_prime[s] * adv;
    }
    Ok((lhs, rhs))
}

/// Total variation `1/2 |p - q|_1` between two finite distributions.
pub fn tv_divergence(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "tv_divergence length mismatch");
    0.5 * p.iter().zip(q).map(|(&a, &b)| (a - b).abs()).sum::<f64>()
}

/// Per-state total variation between two policies.
pub fn tv_per_state(pi: &TabularPolicy, pi_k: &TabularPolicy) -> Array1<f64> {
    assert_eq!(pi.probs.dim(), pi_k.probs.dim());
    Array1::from_shape_fn(pi.probs.nrows(), |s| {
        tv_divergence(
            pi.probs.row(s).as_slice().unwrap(),
            pi_k.probs.row(s).as_slice().unwrap(),
        )
    })
}

/// Conservative mixture `(1-kappa) pi_k + kappa pi'`.
pub fn cpi_mixture(
    pi_k: &TabularPolicy,
    pi_prime: &TabularPolicy,
    kappa: f64,
) -> Result<TabularPolicy, TheoryError> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(TheoryError::InvalidInput(format!("kappa = {kappa}")));
    }
    if pi_k.probs.dim() != pi_prime.probs.dim() {
        return Err(TheoryError::InvalidInput(
            "mixture policies have different shapes".to_string(),
        ));
    }
    let probs = pi_k.probs.mapv(|x| (1.0 - kappa) * x) + pi_prime.probs.mapv(|x| kappa * x);
    Ok(TabularPolicy { probs })
}

/// Dataset-side surrogate for the performance difference:
/// `sum_s rho_D(s) sum_a pi(a|s) A_{pi_k}(s,a)` with `rho_D` a normalized
/// state distribution.
pub fn j_delta_hat(
    mdp: &FiniteMdp,
    rho_d: &Array1<f64>,
    pi: &TabularPolicy,
    pi_k: &TabularPolicy,
) -> Result<f64, TheoryError> {
    if rho_d.len() != mdp.n_states {
        return Err(TheoryError::InvalidInput(
            "rho_D length does not match MDP".to_string(),
        ));
    }
    let total: f64 = rho_d.sum();
    if (total - 1.0).abs() > 1e-9 || rho_d.iter().any(|&x| x < 0.0) {
        return Err(TheoryError::InvalidInput(format!(
            "rho_D is not a distribution (sum {total})"
        )));
    }
    let ev_k = exact_eval(mdp, pi_k)?;
    let mut acc = 0.0;
    for s in 0..mdp.n_states {
        let mut adv = 0.0;
        for a in 0..mdp.n_actions {
            adv += pi.probs[[s, a]] * ev_k.a[[s, a]];
        }
        acc += rho_d[s] * adv;
    }
    Ok(acc)
}

/// Every quantity entering the mixture improvement bound.
///
/// `j_delta_hat` and the three subtracted terms are stored at the
/// unnormalized-visitation scale actually used in the inequality, so
/// `rhs = j_delta_hat - term_prime_ref - term_ref_behavior - term_behavior_approx`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BoundTerms {
    /// Exact `J(pi) - J(pi_k)` for the kappa-mixture `pi`.
    pub j_delta: f64,
    /// Surrogate estimate at bound scale: `sum_s rho_D(s)/(1-gamma) * <pi, A_{pi_k}>(s)`.
    pub j_delta_hat: f64,
    /// `(2 gamma kappa^2/(1-gamma)) * A_sup * sum_s rho_{pi_k}(s) D_TV(pi'||pi_k)[s]`.
    pub term_prime_ref: f64,
    /// `(2 gamma kappa /(1-gamma)) * A_sup * sum_s rho_{pi_b}(s) D_TV(pi_k||pi_b)[s]`.
    pub term_ref_behavior: f64,
    /// `(gamma kappa/(1-gamma)) * A_sup * sum_s rho_D(s)/(1-gamma) sum_a pi_b(a|s)(1-pi_b(a|s))`.
    pub term_behavior_approx: f64,
    /// `2 max_{s,a} |A_{pi_k}| * max_s D_TV(pi'||pi_k)[s]`.
    pub a_sup: f64,
    pub kappa: f64,
}

impl BoundTerms {
    pub fn rhs(&self) -> f64 {
        self.j_delta_hat - self.term_prime_ref - self.term_ref_behavior - self.term_behavior_approx
    }

    pub fn margin(&self) -> f64 {
        self.j_delta - self.rhs()
    }
}

/// Evaluate both sides of the improvement bound for the mixture
/// `pi = (1-kappa) pi_k + kappa pi'`. Returns an error if the inequality
/// `j_delta >= rhs - 1e-9` fails.
pub fn theorem1_check(
    mdp: &FiniteMdp,
    pi_b: &TabularPolicy,
    pi_k: &TabularPolicy,
    pi_prime: &TabularPolicy,
    kappa: f64,
    rho_d: &Array1<f64>,
) -> Result<BoundTerms, TheoryError> {
    for p in [pi_b, pi_k, pi_prime] {
        check_policy_shape(mdp, p)?;
    }
    let pi = cpi_mixture(pi_k, pi_prime, kappa)?;
    let gamma = mdp.gamma;
    let horizon = 1.0 / (1.0 - gamma);

    let ev_k = exact_eval(mdp, pi_k)?;
    let ev_mix = exact_eval(mdp, &pi)?;
    let j_delta = ev_mix.j - ev_k.j;

    let tv_prime_k = tv_per_state(pi_prime, pi_k);
    let max_abs_a = ev_k.a.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let a_sup = 2.0 * max_abs_a * tv_prime_k.iter().fold(0.0f64, |m, &x| m.max(x));

    // Surrogate at unnormalized scale.
    let jdh = j_delta_hat(mdp, rho_d, &pi, pi_k)? * horizon;

    let rho_k = visitation(mdp, pi_k)?.rho;
    let rho_b = visitation(mdp, pi_b)?.rho;
    let tv_k_b = tv_per_state(pi_k, pi_b);

    let term_prime_ref = (2.0 * gamma * kappa * kappa * horizon)
        * a_sup
        * rho_k.dot(&tv_prime_k);
    let term_ref_behavior = (2.0 * gamma * kappa * horizon) * a_sup * rho_b.dot(&tv_k_b);
    let mut approx = 0.0;
    for s in 0..mdp.n_states {
        let mut inner = 0.0;
        for a in 0..mdp.n_actions {
            inner += pi_b.probs[[s, a]] * (1.0 - pi_b.probs[[s, a]]);
        }
        approx += rho_d[s] * horizon * inner;
    }
    let term_behavior_approx = gamma * kappa * horizon * a_sup * approx;

    let terms = BoundTerms {
        j_delta,
        j_delta_hat: jdh,
        term_prime_ref,
        term_ref_behavior,
        term_behavior_approx,
        a_sup,
        kappa,
    };
    if terms.margin() < -1e-9 {
        return Err(TheoryError::BoundViolated {
            lhs: terms.j_delta,
            rhs: terms.rhs(),
        });
    }
    Ok(terms)
}

/// Both sides of the visitation-shift bound
/// `|rho_pi - rho_{pi_k}|_1 <= (2 gamma/(1-gamma)) sum_s rho_{pi_k}(s) D_TV(pi||pi_k)[s]`.
/// Returns an error if the inequality fails beyond 1e-9.
pub fn lemma4_check(
    mdp: &FiniteMdp,
    pi: &TabularPolicy,
    pi_k: &TabularPolicy,
) -> Result<(f64, f64), TheoryError> {
    let rho_pi = visitation(mdp, pi)?.rho;
    let rho_k = visitation(mdp, pi_k)?.rho;
    let lhs: f64 = rho_pi
        .iter()
        .zip(rho_k.iter())
        .map(|(&a, &b)| (a - b).abs())
        .sum();
    let tv = tv_per_state(pi, pi_k);
    let rhs = (2.0 * mdp.gamma / (1.0 - mdp.gamma)) * rho_k.dot(&tv);
    if lhs > rhs + 1e-9 {
        return Err(TheoryError::ShiftBoundViolated { lhs, rhs });
    }
    Ok((lhs, rhs))
}

/// Weighted behavior-cloning setup: per-state action weights over a known
/// dataset policy.
#[derive(Debug, Clone)]
pub struct WeightedBehaviorSpec {
    /// Nonnegative weights w[s, a].
    pub w: Array2<f64>,
    /// Dataset policy pi_b_D.
    pub pi_b_d: TabularPolicy,
}

impl WeightedBehaviorSpec {
    /// Per-state normalizer `C(s) = sum_a pi_b_D(a|s) w(s,a)`.
    pub fn normalizers(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.w.nrows(), |s| {
            (0..self.w.ncols())
                .map(|a| self.pi_b_d.probs[[s, a]] * self.w[[s, a]])
                .sum()
        })
    }
}

/// Per-state gradients of the weighted-BC objective and of BC toward the
/// weighted action expectation, for scalar actions `action_values[a]`:
///
/// ```text
/// grad_wbc(s)  = (1/C(s)) sum_a pi_b_D(a|s) w(s,a) 2 (theta(s) - a)
/// grad_ewbc(s) = 2 (theta(s) - E_{q_w}[a]),  q_w(a|s) = pi_b_D(a|s) w(s,a)/C(s)
/// ```
///
/// The two are algebraically identical; the returned pair lets callers verify
/// that to 1e-12 per state.
pub fn wbc_equivalence_check(
    spec: &WeightedBehaviorSpec,
    action_values: &Array1<f64>,
    policy_out: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>), TheoryError> {
    let (n_states, n_actions) = spec.w.dim();
    if spec.pi_b_d.probs.dim() != (n_states, n_actions) {
        return Err(TheoryError::InvalidInput(
            "weights and dataset policy have different shapes".to_string(),
        ));
    }
    if action_values.len() != n_actions || policy_out.len() != n_states {
        return Err(TheoryError::InvalidInput(
            "action_values/policy_out length mismatch".to_string(),
        ));
    }
    if spec.w.iter().any(|&x| x < 0.0) {
        return Err(TheoryError::InvalidInput("negative weight".to_string()));
    }
    let c = spec.normalizers();
    let mut grad_wbc = Array1::zeros(n_states);
    let mut grad_ewbc = Array1::zeros(n_states);
    for s in 0..n_states {
        if c[s] <= 0.0 {
            return Err(TheoryError::InvalidInput(format!(
                "normalizer C({s}) = {} is not positive",
                c[s]
            )));
        }
        let mut wbc = 0.0;
        let mut mean_action = 0.0;
        for a in 0..n_actions {
            let q_w = spec.pi_b_d.probs[[s, a]] * spec.w[[s, a]] / c[s];
            wbc += q_w * 2.0 * (policy_out[s] - action_values[a]);
            mean_action += q_w * action_values[a];
        }
        grad_wbc[s] = wbc;
        grad_ewbc[s] = 2.0 * (policy_out[s] - mean_action);
    }
    Ok((grad_wbc, grad_ewbc))
}
