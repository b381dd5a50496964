//! Formal expressions over noncommutative system symbols and the
//! Hudson–Parthasarathy increments dA_j, dA*_j, dΛ_ij, dt.
//!
//! A term is (exact complex-rational coefficient) × (word of factors) ×
//! (at most one increment). Canonical form: increment products fully
//! reduced by the Itô table, commuting factors (phases, scalar functions,
//! observed elements, conditional expectations) sorted to the front,
//! system words kept in written order, like terms merged.

use crate::algebra::{c, C64, CMatrix, DensityMatrix};
use num_complex::Complex;
use num_rational::Ratio;
use num_traits::{One, Zero};
use std::collections::HashMap;
use std::fmt;

pub type Rat = Ratio<i64>;
pub type Coeff = Complex<Rat>;

pub fn rat(n: i64, d: i64) -> Rat {
    Ratio::new(n, d)
}

pub fn coeff_real(n: i64, d: i64) -> Coeff {
    Complex::new(rat(n, d), Rat::zero())
}

pub fn coeff_imag(n: i64, d: i64) -> Coeff {
    Complex::new(Rat::zero(), rat(n, d))
}

pub fn coeff_one() -> Coeff {
    Complex::one()
}

pub fn coeff_to_c64(z: &Coeff) -> C64 {
    c(
        *z.re.numer() as f64 / *z.re.denom() as f64,
        *z.im.numer() as f64 / *z.im.denom() as f64,
    )
}

// ---------------------------------------------------------------------------
// Increments and the quantum Itô table
// ---------------------------------------------------------------------------

/// Fundamental noise increments; channels are numeric indices
/// (presets use 0 = forward, 1 = side).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Increment {
    /// dA_j
    Annihilation(usize),
    /// dA*_j
    Creation(usize),
    /// dΛ_ij
    Gauge(usize, usize),
    /// dt
    Time,
}

/// The quantum Itô table. Every product is either zero (`None`) or a
/// single increment:
///   dA_k·dA*_i = δ_ki dt, dA_k·dΛ_ij = δ_ki dA_j,
///   dΛ_kl·dA*_i = δ_li dA*_k, dΛ_kl·dΛ_ij = δ_li dΛ_kj,
/// all other products and anything involving dt vanish.
pub fn ito_table(m1: Increment, m2: Increment) -> Option<Increment> {
    use Increment::*;
    match (m1, m2) {
        (Annihilation(k), Creation(i)) if k == i => Some(Time),
        (Annihilation(k), Gauge(i, j)) if k == i => Some(Annihilation(j)),
        (Gauge(k, l), Creation(i)) if l == i => Some(Creation(k)),
        (Gauge(k, l), Gauge(i, j)) if l == i => Some(Gauge(k, j)),
        _ => None,
    }
}

/// [`ito_table`] packaged as an expression-level product of two monomials.
pub fn ito_product(m1: Increment, m2: Increment) -> Expr {
    match ito_table(m1, m2) {
        Some(inc) => Expr::from_term(Term {
            coeff: coeff_one(),
            word: vec![],
            inc: Some(inc),
        }),
        None => Expr::zero(),
    }
}

// ordering puts dt last so innovations render observation-first
fn increment_rank(inc: &Option<Increment>) -> (u8, usize, usize) {
    match inc {
        None => (0, 0, 0),
        Some(Increment::Creation(j)) => (1, *j, 0),
        Some(Increment::Annihilation(j)) => (2, *j, 0),
        Some(Increment::Gauge(i, j)) => (3, *i, *j),
        Some(Increment::Time) => (4, 0, 0),
    }
}

// ---------------------------------------------------------------------------
// Symbols and factors
// ---------------------------------------------------------------------------

/// How a symbol commutes and passes through conditional expectations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SymbolKind {
    /// Operator on the system⊗field algebra; noncommutative.
    System,
    /// Element of the commutative observed algebra C_t (center of A_t):
    /// commutes with everything and passes through E^t.
    Observed,
    /// Complex-valued function of time; commutes with everything.
    Scalar,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Symbol {
    pub name: String,
    pub dag: bool,
    pub kind: SymbolKind,
    pub selfadjoint: bool,
}

impl Symbol {
    pub fn system(name: &str) -> Self {
        Self {
            name: name.into(),
            dag: false,
            kind: SymbolKind::System,
            selfadjoint: false,
        }
    }

    /// A system symbol fixed by the adjoint (like a Hamiltonian).
    pub fn system_selfadjoint(name: &str) -> Self {
        Self {
            selfadjoint: true,
            ..Self::system(name)
        }
    }

    pub fn observed(name: &str) -> Self {
        Self {
            name: name.into(),
            dag: false,
            kind: SymbolKind::Observed,
            selfadjoint: false,
        }
    }

    pub fn scalar(name: &str) -> Self {
        Self {
            name: name.into(),
            dag: false,
            kind: SymbolKind::Scalar,
            selfadjoint: false,
        }
    }

    pub fn dagger(&self) -> Self {
        if self.selfadjoint {
            return self.clone();
        }
        Self {
            dag: !self.dag,
            ..self.clone()
        }
    }
}

/// One word factor.
#[derive(Clone, Debug, PartialEq)]
pub enum Factor {
    Sym(Symbol),
    /// e^{i k φ_t}; unit-modulus scalar, adjoint flips the exponent.
    Phase(i64),
    /// Conditional expectation E^t[w] of a single pure-system word
    /// (the constructor enforces this shape); observed-valued.
    Cond(Expr),
    /// Formal inverse of an observed expression, with the side condition
    /// that it does not vanish.
    Inv(Expr),
}

impl Factor {
    pub fn sym(s: Symbol) -> Self {
        Factor::Sym(s)
    }

    /// True for factors that commute with every other factor.
    fn is_commuting(&self) -> bool {
        match self {
            Factor::Sym(s) => s.kind != SymbolKind::System,
            Factor::Phase(_) | Factor::Cond(_) | Factor::Inv(_) => true,
        }
    }

    fn adjoint(&self) -> Self {
        match self {
            Factor::Sym(s) => Factor::Sym(s.dagger()),
            Factor::Phase(k) => Factor::Phase(-k),
            Factor::Cond(e) => Factor::Cond(e.adjoint()),
            Factor::Inv(e) => Factor::Inv(e.adjoint()),
        }
    }

    /// Stable encoding used for canonical ordering and merging.
    fn encode(&self, out: &mut String) {
        match self {
            Factor::Sym(s) => {
                out.push_str(match s.kind {
                    SymbolKind::Scalar => "s:",
                    SymbolKind::Observed => "o:",
                    SymbolKind::System => "y:",
                });
                out.push_str(&s.name);
                if s.dag {
                    out.push('*');
                }
            }
            Factor::Phase(k) => {
                // sign-first encoding so e^{+ikφ} sorts before e^{-ikφ}
                out.push_str(&format!("p{:+05}", k));
            }
            Factor::Cond(e) => {
                out.push_str("E(");
                out.push_str(&e.encode());
                out.push(')');
            }
            Factor::Inv(e) => {
                out.push_str("I(");
                out.push_str(&e.encode());
                out.push(')');
            }
        }
    }

    fn sort_rank(&self) -> u8 {
        match self {
            Factor::Phase(_) => 0,
            Factor::Sym(s) if s.kind == SymbolKind::Scalar => 1,
            Factor::Sym(_) => 2,
            Factor::Cond(_) => 3,
            Factor::Inv(_) => 4,
        }
    }
}

// ---------------------------------------------------------------------------
// Terms and expressions
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coeff: Coeff,
    pub word: Vec<Factor>,
    pub inc: Option<Increment>,
}

impl Term {
    fn key(&self) -> String {
        let mut s = String::new();
        for f in &self.word {
            f.encode(&mut s);
            s.push('.');
        }
        s
    }

    /// Sort commuting factors to the front (phases merged into one),
    /// keep the system word in written order, cancel Inv against a
    /// matching Cond factor.
    fn normalize(&mut self) {
        let mut phase_exp: i64 = 0;
        let mut commuting: Vec<Factor> = Vec::new();
        let mut system: Vec<Factor> = Vec::new();
        for f in self.word.drain(..) {
            match f {
                Factor::Phase(k) => phase_exp += k,
                f if f.is_commuting() => commuting.push(f),
                f => system.push(f),
            }
        }
        // formal cancellation Cond(q)·Inv(Cond(q)) -> 1, valid under the
        // recorded side condition Cond(q) != 0
        loop {
            let mut cancelled = false;
            'outer: for i in 0..commuting.len() {
                if let Factor::Inv(e) = &commuting[i] {
                    for j in 0..commuting.len() {
                        if i != j && e.is_single_factor(&commuting[j]) {
                            let (a, b) = (i.max(j), i.min(j));
                            commuting.remove(a);
                            commuting.remove(b);
                            cancelled = true;
                            break 'outer;
                        }
                    }
                }
            }
            if !cancelled {
                break;
            }
        }
        commuting.sort_by(|a, b| {
            let (mut ka, mut kb) = (String::new(), String::new());
            a.encode(&mut ka);
            b.encode(&mut kb);
            (a.sort_rank(), ka).cmp(&(b.sort_rank(), kb))
        });
        let mut word = Vec::with_capacity(commuting.len() + system.len() + 1);
        if phase_exp != 0 {
            word.push(Factor::Phase(phase_exp));
        }
        word.extend(commuting);
        word.extend(system);
        self.word = word;
    }
}

/// Canonical formal sum of terms.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Expr {
    terms: Vec<Term>,
}

impl Expr {
    pub fn zero() -> Self {
        Self { terms: vec![] }
    }

    pub fn one() -> Self {
        Self::from_term(Term {
            coeff: coeff_one(),
            word: vec![],
            inc: None,
        })
    }

    pub fn from_term(t: Term) -> Self {
        let mut e = Self { terms: vec![t] };
        e.normalize();
        e
    }

    pub fn from_factor(f: Factor) -> Self {
        Self::from_term(Term {
            coeff: coeff_one(),
            word: vec![f],
            inc: None,
        })
    }

    pub fn from_symbol(s: Symbol) -> Self {
        Self::from_factor(Factor::Sym(s))
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1
            && self.terms[0].word.is_empty()
            && self.terms[0].inc.is_none()
            && self.terms[0].coeff == coeff_one()
    }

    /// True if this is a single coeff-one increment-free term whose word
    /// is exactly `[f]`.
    fn is_single_factor(&self, f: &Factor) -> bool {
        self.terms.len() == 1
            && self.terms[0].coeff == coeff_one()
            && self.terms[0].inc.is_none()
            && self.terms[0].word.len() == 1
            && &self.terms[0].word[0] == f
    }

    fn normalize(&mut self) {
        for t in &mut self.terms {
            t.normalize();
        }
        // merge like terms
        let mut merged: HashMap<(String, (u8, usize, usize)), Term> = HashMap::new();
        for t in self.terms.drain(..) {
            let key = (t.key(), increment_rank(&t.inc));
            match merged.get_mut(&key) {
                Some(existing) => existing.coeff = existing.coeff + t.coeff,
                None => {
                    merged.insert(key, t);
                }
            }
        }
        let mut terms: Vec<Term> = merged.into_values().filter(|t| !t.coeff.is_zero()).collect();
        terms.sort_by(|a, b| {
            (increment_rank(&a.inc), a.key()).cmp(&(increment_rank(&b.inc), b.key()))
        });
        self.terms = terms;
    }

    pub fn scale(&self, s: Coeff) -> Self {
        let mut e = self.clone();
        for t in &mut e.terms {
            t.coeff = t.coeff * s;
        }
        e.normalize();
        e
    }

    pub fn neg(&self) -> Self {
        self.scale(coeff_real(-1, 1))
    }

    pub fn add(&self, rhs: &Self) -> Self {
        let mut e = self.clone();
        e.terms.extend(rhs.terms.iter().cloned());
        e.normalize();
        e
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.add(&rhs.neg())
    }

    /// Noncommutative product. Words concatenate in order; increments
    /// multiply through the Itô table (increments commute with the
    /// time-t adapted factors, so they are collected and reduced).
    pub fn mul(&self, rhs: &Self) -> Self {
        let mut terms = Vec::new();
        for t1 in &self.terms {
            for t2 in &rhs.terms {
                let inc = match (t1.inc, t2.inc) {
                    (None, i) | (i, None) => i,
                    (Some(a), Some(b)) => match ito_table(a, b) {
                        Some(i) => Some(i),
                        None => continue,
                    },
                };
                let mut word = t1.word.clone();
                word.extend(t2.word.iter().cloned());
                terms.push(Term {
                    coeff: t1.coeff * t2.coeff,
                    word,
                    inc,
                });
            }
        }
        let mut e = Self { terms };
        e.normalize();
        e
    }

    /// Attach an increment to every (currently increment-free) term.
    pub fn with_increment(&self, inc: Increment) -> Self {
        let mut e = self.clone();
        for t in &mut e.terms {
            assert!(t.inc.is_none(), "term already carries an increment");
            t.inc = Some(inc);
        }
        e.normalize();
        e
    }

    /// Adjoint: reverse words, dagger factors, conjugate coefficients,
    /// dA ↔ dA*, dΛ_ij ↦ dΛ_ji.
    pub fn adjoint(&self) -> Self {
        let mut terms = Vec::new();
        for t in &self.terms {
            let word: Vec<Factor> = t.word.iter().rev().map(Factor::adjoint).collect();
            let inc = t.inc.map(|i| match i {
                Increment::Annihilation(j) => Increment::Creation(j),
                Increment::Creation(j) => Increment::Annihilation(j),
                Increment::Gauge(i1, j1) => Increment::Gauge(j1, i1),
                Increment::Time => Increment::Time,
            });
            terms.push(Term {
                coeff: t.coeff.conj(),
                word,
                inc,
            });
        }
        let mut e = Self { terms };
        e.normalize();
        e
    }

    /// Keep only the dt part and strip the increment: the vacuum
    /// expectation kills dA, dA* and dΛ terms.
    pub fn vacuum_dt_part(&self) -> Self {
        let mut terms = Vec::new();
        for t in &self.terms {
            if t.inc == Some(Increment::Time) {
                terms.push(Term {
                    coeff: t.coeff,
                    word: t.word.clone(),
                    inc: None,
                });
            }
        }
        let mut e = Self { terms };
        e.normalize();
        e
    }

    /// Deterministic structural fingerprint (canonical form serialized).
    pub fn encode(&self) -> String {
        let mut s = String::new();
        for t in &self.terms {
            s.push_str(&format!("{:?}{:?}|", t.coeff, increment_rank(&t.inc)));
            s.push_str(&t.key());
            s.push(';');
        }
        s
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", crate::ito::render::render_expr(self))
    }
}

// ---------------------------------------------------------------------------
// Conditional expectation
// ---------------------------------------------------------------------------

/// Wrap a pure-system word; the only way a `Factor::Cond` is built.
pub fn cond_word(word: Vec<Factor>) -> Factor {
    assert!(
        word.iter()
            .all(|f| matches!(f, Factor::Sym(s) if s.kind == SymbolKind::System)),
        "conditional expectation payload must be a pure system word"
    );
    assert!(!word.is_empty(), "empty payload is E[1] = 1, not a factor");
    Factor::Cond(Expr {
        terms: vec![Term {
            coeff: coeff_one(),
            word,
            inc: None,
        }],
    })
}

/// The map E^t applied to an increment-free expression. Implements
/// linearity, E[1] = 1, the module property (observed and scalar factors
/// pass through), and idempotence (inner E[·] factors are observed).
pub fn expectation(e: &Expr) -> Expr {
    let mut out = Expr::zero();
    for t in &e.terms {
        assert!(t.inc.is_none(), "expectation of an increment-bearing term");
        let (commuting, system): (Vec<Factor>, Vec<Factor>) =
            t.word.iter().cloned().partition(Factor::is_commuting);
        let mut word = commuting;
        if !system.is_empty() {
            word.push(cond_word(system));
        }
        out.terms.push(Term {
            coeff: t.coeff,
            word,
            inc: None,
        });
    }
    out.normalize();
    out
}

// ---------------------------------------------------------------------------
// Numeric evaluation (the symbolic–numeric bridge)
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no matrix assigned to symbol {0:?}")]
    MissingSymbol(String),
    #[error("no scalar assigned to symbol {0:?}")]
    MissingScalar(String),
    #[error("cannot evaluate E^t[...] without a state")]
    MissingState,
    #[error("cannot numerically evaluate an increment-bearing term")]
    IncrementPresent,
    #[error("division by near-zero expectation ({0:.3e})")]
    NearZeroInverse(f64),
}

/// Numeric assignment: matrices for system symbols, complex values for
/// scalar symbols, a phase angle φ, and optionally a state for E^t[·].
pub struct Assignment<'a> {
    pub matrices: &'a HashMap<String, CMatrix>,
    pub scalars: &'a HashMap<String, C64>,
    pub phi: f64,
    pub state: Option<&'a DensityMatrix>,
    pub dim: usize,
}

/// Evaluate an increment-free expression to a matrix. Observed symbols
/// are not evaluable here; expressions reaching numeric tests contain
/// only system symbols, scalars, phases, Cond and Inv factors.
pub fn eval_expr(e: &Expr, a: &Assignment) -> Result<CMatrix, EvalError> {
    let mut acc = CMatrix::zeros(a.dim);
    for t in &e.terms {
        if t.inc.is_some() {
            return Err(EvalError::IncrementPresent);
        }
        let mut m = CMatrix::identity(a.dim).scale(coeff_to_c64(&t.coeff));
        for f in &t.word {
            match f {
                Factor::Sym(s) => match s.kind {
                    SymbolKind::System => {
                        let base = a
                            .matrices
                            .get(&s.name)
                            .ok_or_else(|| EvalError::MissingSymbol(s.name.clone()))?;
                        let mat = if s.dag { base.adjoint() } else { base.clone() };
                        m = m * mat;
                    }
                    SymbolKind::Scalar | SymbolKind::Observed => {
                        let base = a
                            .scalars
                            .get(&s.name)
                            .ok_or_else(|| EvalError::MissingScalar(s.name.clone()))?;
                        let v = if s.dag { base.conj() } else { *base };
                        m = m.scale(v);
                    }
                },
                Factor::Phase(k) => {
                    m = m.scale(C64::from_polar(1.0, *k as f64 * a.phi));
                }
                Factor::Cond(inner) => {
                    let state = a.state.ok_or(EvalError::MissingState)?;
                    let val = state.expect(&eval_expr(inner, a)?);
                    m = m.scale(val);
                }
                Factor::Inv(inner) => {
                    let state = a.state.ok_or(EvalError::MissingState)?;
                    let val = state.expect(&eval_expr(inner, a)?);
                    if val.norm() < 1e-300 {
                        return Err(EvalError::NearZeroInverse(val.norm()));
                    }
                    m = m.scale(c(1.0, 0.0) / val);
                }
            }
        }
        acc = acc + m;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Increment::*;

    const S: usize = 1;

    #[test]
    fn ito_table_matches_paper_cells() {
        assert_eq!(ito_table(Annihilation(S), Creation(S)), Some(Time));
        assert_eq!(ito_table(Creation(S), Annihilation(S)), None);
        assert_eq!(ito_table(Gauge(S, S), Gauge(S, S)), Some(Gauge(S, S)));
        assert_eq!(ito_table(Annihilation(S), Gauge(S, S)), Some(Annihilation(S)));
        assert_eq!(ito_table(Gauge(S, S), Creation(S)), Some(Creation(S)));
        // cross-channel deltas vanish
        assert_eq!(ito_table(Annihilation(0), Creation(1)), None);
        assert_eq!(ito_table(Gauge(0, 1), Gauge(0, 1)), None);
        assert_eq!(ito_table(Gauge(0, 1), Gauge(1, 0)), Some(Gauge(0, 0)));
        // dt annihilates everything
        for m in [Annihilation(S), Creation(S), Gauge(S, S), Time] {
            assert_eq!(ito_table(Time, m), None);
            assert_eq!(ito_table(m, Time), None);
        }
    }

    #[test]
    fn ito_products_are_associative_over_all_64_triples() {
        let incs = [Annihilation(S), Creation(S), Gauge(S, S), Time];
        for &a in &incs {
            for &b in &incs {
                for &x in &incs {
                    let left = match ito_table(a, b) {
                        Some(ab) => ito_product(ab, x),
                        None => Expr::zero(),
                    };
                    let right = match ito_table(b, x) {
                        Some(bx) => ito_product(a, bx),
                        None => Expr::zero(),
                    };
                    assert_eq!(left, right, "({a:?}·{b:?})·{x:?} != {a:?}·({b:?}·{x:?})");
                }
            }
        }
    }

    #[test]
    fn closure_no_length_two_monomials_survive() {
        let incs = [Annihilation(S), Creation(S), Gauge(S, S), Time];
        for &a in &incs {
            for &b in &incs {
                let e1 = Expr::one().with_increment(a);
                let e2 = Expr::one().with_increment(b);
                let prod = e1.mul(&e2);
                for t in prod.terms() {
                    assert!(t.inc.is_some());
                }
                assert!(prod.terms().len() <= 1);
            }
        }
    }

    #[test]
    fn commuting_factors_sort_in_front_and_phases_merge() {
        let x = Symbol::system("X");
        let v = Symbol::system("V");
        let b = Symbol::observed("b");
        let t = Term {
            coeff: coeff_one(),
            word: vec![
                Factor::Sym(x.clone()),
                Factor::Phase(2),
                Factor::Sym(b.clone()),
                Factor::Sym(v.clone()),
                Factor::Phase(-1),
            ],
            inc: None,
        };
        let e = Expr::from_term(t);
        let w = &e.terms()[0].word;
        assert_eq!(w.len(), 4);
        assert_eq!(w[0], Factor::Phase(1));
        assert_eq!(w[1], Factor::Sym(b));
        assert_eq!(w[2], Factor::Sym(x));
        assert_eq!(w[3], Factor::Sym(v));
    }

    #[test]
    fn system_word_order_is_preserved() {
        let x = Expr::from_symbol(Symbol::system("X"));
        let v = Expr::from_symbol(Symbol::system("V"));
        assert_ne!(x.mul(&v), v.mul(&x));
    }

    #[test]
    fn like_terms_merge_and_cancel() {
        let x = Expr::from_symbol(Symbol::system("X"));
        assert!(x.sub(&x).is_zero());
        assert_eq!(x.add(&x), x.scale(coeff_real(2, 1)));
    }

    #[test]
    fn adjoint_is_involution_and_reverses_words() {
        let v = Expr::from_symbol(Symbol::system("V"));
        let x = Expr::from_symbol(Symbol::system("X"));
        let prod = v.mul(&x).scale(coeff_imag(1, 2));
        assert_eq!(prod.adjoint().adjoint(), prod);
        // (i/2 V X)† = -i/2 X† V†
        let expected = Expr::from_symbol(Symbol::system("X").dagger())
            .mul(&Expr::from_symbol(Symbol::system("V").dagger()))
            .scale(coeff_imag(-1, 2));
        assert_eq!(prod.adjoint(), expected);
        // increments map under adjoint
        let da = Expr::one().with_increment(Annihilation(S));
        assert_eq!(
            da.adjoint(),
            Expr::one().with_increment(Creation(S))
        );
    }

    #[test]
    fn expectation_axioms() {
        let x = Expr::from_symbol(Symbol::system("X"));
        let v = Expr::from_symbol(Symbol::system("V"));
        let b = Expr::from_symbol(Symbol::observed("b"));

        // E[1] = 1 and linearity
        assert!(expectation(&Expr::one()).is_one());
        let lin = expectation(&x.scale(coeff_real(2, 1)).add(&v.scale(coeff_imag(1, 1))));
        assert_eq!(
            lin,
            expectation(&x)
                .scale(coeff_real(2, 1))
                .add(&expectation(&v).scale(coeff_imag(1, 1)))
        );

        // module property: E[b X b] = b² E[X]
        let module = expectation(&b.mul(&x).mul(&b));
        assert_eq!(module, b.mul(&b).mul(&expectation(&x)));

        // idempotence: E[E[X]] = E[X]
        let ex = expectation(&x);
        assert_eq!(expectation(&ex), ex);

        // nested: E[V E[X] V] = E[X] E[V V]
        let nested = expectation(&v.mul(&ex).mul(&v));
        assert_eq!(nested, ex.mul(&expectation(&v.mul(&v))));
    }

    #[test]
    fn canonicalization_is_deterministic_and_idempotent() {
        let x = Symbol::system("X");
        let b = Symbol::observed("b");
        let mess = Expr::from_term(Term {
            coeff: coeff_imag(3, 4),
            word: vec![
                Factor::Phase(-2),
                Factor::Sym(b.clone()),
                Factor::Sym(x.clone()),
            ],
            inc: Some(Time),
        })
        .add(&Expr::from_term(Term {
            coeff: coeff_real(1, 3),
            word: vec![Factor::Sym(x.clone()), Factor::Sym(b.clone())],
            inc: None,
        }));
        let once = mess.encode();
        let mut again = mess.clone();
        again.normalize();
        assert_eq!(again.encode(), once);
    }

    #[test]
    fn inv_cancels_matching_cond() {
        let v = Symbol::system("V");
        let q = cond_word(vec![Factor::Sym(v.dagger()), Factor::Sym(v.clone())]);
        let t = Term {
            coeff: coeff_one(),
            word: vec![
                q.clone(),
                Factor::Inv(Expr::from_factor(q.clone())),
            ],
            inc: None,
        };
        assert!(Expr::from_term(t).is_one());
    }

    #[test]
    fn eval_bridges_to_matrices() {
        use crate::lindblad::{excited, lowering};
        let mut mats = HashMap::new();
        mats.insert("V".to_string(), lowering());
        let scalars = HashMap::new();
        let rho = excited();
        let a = Assignment {
            matrices: &mats,
            scalars: &scalars,
            phi: 0.3,
            state: Some(&rho),
            dim: 2,
        };
        let v = Symbol::system("V");
        // V† V evaluates to the excited projector
        let e = Expr::from_symbol(v.dagger()).mul(&Expr::from_symbol(v.clone()));
        let m = eval_expr(&e, &a).unwrap();
        assert!(m.max_abs_diff(&CMatrix::projector(2, 0)) < 1e-14);
        // E[V†V] on the excited state is 1
        let ec = expectation(&e);
        let val = eval_expr(&ec, &a).unwrap();
        assert!(val.max_abs_diff(&CMatrix::identity(2)) < 1e-14);
        // phases evaluate to e^{ikφ}
        let ph = Expr::from_factor(Factor::Phase(2));
        let pm = eval_expr(&ph, &a).unwrap();
        assert!((pm.at(0, 0) - C64::from_polar(1.0, 0.6)).norm() < 1e-14);
    }
}
