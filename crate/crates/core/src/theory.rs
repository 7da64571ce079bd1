//! Contraction constants, the concave particlewise metric and the parameter
//! conditions under which the coupling provably contracts.
//!
//! Every quantity here depends only on `K, L, L̃, R, ε, T` (and `h₁`), never
//! on the number of particles or their dimension.

use crate::error::{invalid, Error, Result};
use crate::model::PositionState;
use crate::scalar::{distance, Scalar};

/// Regularity of the mean-field potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityParams<S> {
    /// Strong convexity of `V` outside the ball of radius `R`.
    pub k: S,
    /// Lipschitz constant of `∇V`.
    pub l: S,
    /// Lipschitz constant of `∇W`.
    pub l_tilde: S,
    pub r: S,
    pub epsilon: S,
    /// Bound on `∇³V`, if known.
    pub l_h: Option<S>,
    /// Bound on `∇³W`, if known.
    pub l_h_tilde: Option<S>,
}

impl<S: Scalar> RegularityParams<S> {
    pub fn new(k: S, l: S, l_tilde: S, r: S, epsilon: S) -> Result<Self> {
        let p = Self { k, l, l_tilde, r, epsilon, l_h: None, l_h_tilde: None };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.k, self.l, self.l_tilde, self.r, self.epsilon].iter().all(|v| v.is_finite());
        if !finite {
            return Err(invalid("regularity", "all constants must be finite"));
        }
        if !(self.k > S::zero()) {
            return Err(invalid("K", "strong convexity constant must be positive"));
        }
        if self.k > self.l {
            return Err(invalid("L", "need K ≤ L"));
        }
        if self.l_tilde < S::zero() {
            return Err(invalid("L_tilde", "must be non-negative"));
        }
        if self.r < S::zero() {
            return Err(invalid("R", "must be non-negative"));
        }
        if self.epsilon < S::zero() {
            return Err(invalid("epsilon", "must be non-negative"));
        }
        if self.l_h.is_some_and(|v| v < S::zero()) || self.l_h_tilde.is_some_and(|v| v < S::zero()) {
            return Err(invalid("L_H", "third-derivative bounds must be non-negative"));
        }
        Ok(())
    }

    /// Effective Lipschitz constant `L + 4εL̃` of `∇U`.
    pub fn effective_lipschitz(&self) -> S {
        self.l + S::of(4.0) * self.epsilon * self.l_tilde
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants<S> {
    pub r_tilde: S,
    pub gamma: S,
    pub r1: S,
    pub kappa: S,
    /// Contraction rate.
    pub c: S,
    /// `ℓ¹ ≤ M·ρ`.
    pub m: S,
    pub c_hat: S,
    /// `κ > 0`, i.e. `εL̃ < K/3`. When false the contraction theory does
    /// not apply.
    pub kappa_positive: bool,
}

pub fn derive_constants<S: Scalar>(params: &RegularityParams<S>, duration: S) -> Result<DerivedConstants<S>> {
    params.validate()?;
    if !(duration > S::zero()) || !duration.is_finite() {
        return Err(invalid("T", "duration must be positive"));
    }
    let (k, l, t) = (params.k, params.l, duration);
    let r_tilde = S::of(8.0) * params.r * ((l + k) / k).sqrt();
    let gamma = if r_tilde == S::zero() {
        t.recip()
    } else {
        t.recip().min((S::of(4.0) * r_tilde).recip())
    };
    let r1 = S::of(1.25) * (r_tilde + S::of(2.0) * t);
    let kappa = k - S::of(3.0) * params.epsilon * params.l_tilde;
    let c = k * t * t / S::of(156.0) * (-S::of(5.0) * r_tilde / (S::of(4.0) * t)).exp();
    let m = (S::of(1.25) * (r_tilde / t + S::of(2.0))).exp();
    let c_hat = params.r * params.r * (l + k);
    Ok(DerivedConstants { r_tilde, gamma, r1, kappa, c, m, c_hat, kappa_positive: kappa > S::zero() })
}

/// One inequality `lhs ≤ rhs` (or `lhs < rhs` when `strict`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEntry<S> {
    pub name: &'static str,
    pub lhs: S,
    pub rhs: S,
    pub strict: bool,
    pub pass: bool,
}

impl<S: Scalar> ConditionEntry<S> {
    fn new(name: &'static str, lhs: S, rhs: S, strict: bool) -> Self {
        let pass = if strict { lhs < rhs } else { lhs <= rhs };
        Self { name, lhs, rhs, strict, pass }
    }

    /// The relation that holds, e.g. `≤` on pass or `>` on failure.
    pub fn relation(&self) -> &'static str {
        match (self.pass, self.strict) {
            (true, true) => "<",
            (true, false) => "<=",
            (false, true) => ">=",
            (false, false) => ">",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport<S> {
    pub entries: Vec<ConditionEntry<S>>,
}

impl<S: Scalar> ConditionReport<S> {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn failing(&self) -> Vec<&'static str> {
        self.entries.iter().filter(|e| !e.pass).map(|e| e.name).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ConditionEntry<S>> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Upper bound on `εL̃` for contraction.
pub fn epsilon_threshold<S: Scalar>(params: &RegularityParams<S>, duration: S) -> Result<S> {
    Ok(log_epsilon_threshold(params, duration)?.exp())
}

/// Logarithm of [`epsilon_threshold`]; stays finite when the bound itself
/// underflows for large `R̃/T`.
pub fn log_epsilon_threshold<S: Scalar>(params: &RegularityParams<S>, duration: S) -> Result<S> {
    let dc = derive_constants(params, duration)?;
    let k = params.k;
    let inner = k * (dc.r_tilde + duration) / S::of(36.0 * 149.0);
    let log_second = S::of(0.5).ln() + S::of(2.0) * inner.ln() - S::of(5.0) * dc.r_tilde / duration;
    Ok((k / S::of(6.0)).ln().min(log_second))
}

/// Evaluates the duration, step-size and interaction-strength conditions of
/// the contraction theorem, plus the a-priori trajectory conditions with
/// `t = T`, `h = h₁`.
pub fn check_conditions<S: Scalar>(params: &RegularityParams<S>, duration: S, h1: S) -> Result<ConditionReport<S>> {
    if !(h1 >= S::zero()) {
        return Err(invalid("h1", "must be non-negative"));
    }
    let dc = derive_constants(params, duration)?;
    let (k, l, t) = (params.k, params.l, duration);

    let curvature_term = if dc.r_tilde == S::zero() {
        S::infinity()
    } else {
        S::of(3.0) / (S::of(256.0 * 5.0) * l * dc.r_tilde * dc.r_tilde)
    };
    let cond_t_rhs = S::of(0.6)
        * S::of(0.25)
            .min(S::of(3.0) * k / (S::of(10.0) * l))
            .min(curvature_term);
    let step_rhs = k * t / (S::of(525.0) * l + S::of(235.0) * k);
    let log_eps_rhs = log_epsilon_threshold(params, duration)?;
    let eps_lhs = params.epsilon * params.l_tilde;
    let mut cond_eps = ConditionEntry::new("cond_epsilon", eps_lhs, log_eps_rhs.exp(), true);
    cond_eps.pass = eps_lhs == S::zero() || eps_lhs.ln() < log_eps_rhs;
    let l_eff = params.effective_lipschitz();
    let span = l_eff * (t * t + t * h1);

    let entries = vec![
        ConditionEntry::new("cond_T", l * (t + h1) * (t + h1), cond_t_rhs, false),
        ConditionEntry::new("cond_h_T", h1, step_rhs, false),
        cond_eps,
        ConditionEntry::new("basic_t", span, S::one(), false),
        ConditionEntry::new("conv_t", span, (dc.kappa / l_eff).min(S::of(0.25)), false),
        ConditionEntry::new("conv_h", h1, step_rhs, false),
    ];
    Ok(ConditionReport { entries })
}

/// The concave distance profile
/// `f(r) = ∫₀ʳ exp(−min(R₁, s)/T) ds`, in closed form.
pub fn f_eval<S: Scalar>(r: S, duration: S, r1: S) -> S {
    let t = duration;
    if r <= r1 {
        t * (-(-r / t).exp_m1())
    } else {
        let tail = (-r1 / t).exp();
        t * (-(-r1 / t).exp_m1()) + (r - r1) * tail
    }
}

/// `f′(r) = exp(−min(R₁, r)/T)`.
pub fn f_derivative<S: Scalar>(r: S, duration: S, r1: S) -> S {
    (-r.min(r1) / duration).exp()
}

fn check_pair<S: Scalar>(x: &PositionState<S>, y: &PositionState<S>) -> Result<()> {
    if x.d() != y.d() || x.n() != y.n() {
        return Err(Error::DimensionMismatch { expected: x.as_slice().len(), actual: y.as_slice().len() });
    }
    Ok(())
}

/// `ρ(x, y) = Σᵢ f(|xⁱ − yⁱ|)`.
pub fn rho_distance<S: Scalar>(x: &PositionState<S>, y: &PositionState<S>, duration: S, r1: S) -> Result<S> {
    check_pair(x, y)?;
    Ok(x.particles().zip(y.particles()).fold(S::zero(), |acc, (a, b)| acc + f_eval(distance(a, b), duration, r1)))
}

/// `ℓ¹(x, y) = Σᵢ |xⁱ − yⁱ|` with the Euclidean norm on each particle.
pub fn ell1_distance<S: Scalar>(x: &PositionState<S>, y: &PositionState<S>) -> Result<S> {
    check_pair(x, y)?;
    Ok(x.particles().zip(y.particles()).fold(S::zero(), |acc, (a, b)| acc + distance(a, b)))
}

/// `ℓ¹(x, y)/n`.
pub fn mean_ell1_distance<S: Scalar>(x: &PositionState<S>, y: &PositionState<S>) -> Result<S> {
    Ok(ell1_distance(x, y)? / S::from_usize(x.n()).expect("particle count fits in a float"))
}

/// Smallest `m` with `m ≥ (1/c)(5/2 + 5R̃/(4T) + log⁺(Δ₀/ε̃))`.
pub fn step_bound(c: f64, r_tilde: f64, duration: f64, delta0: f64, eps_tilde: f64) -> Result<u64> {
    if !(c > 0.0) {
        return Err(invalid("c", "contraction rate must be positive"));
    }
    if !(duration > 0.0) || !(delta0 > 0.0) || !(eps_tilde > 0.0) || !(r_tilde >= 0.0) {
        return Err(invalid("step_bound", "T, Δ₀ and ε̃ must be positive, R̃ non-negative"));
    }
    let log_term = (delta0 / eps_tilde).ln().max(0.0);
    let m = (2.5 + 1.25 * r_tilde / duration + log_term) / c;
    Ok(m.ceil() as u64)
}
