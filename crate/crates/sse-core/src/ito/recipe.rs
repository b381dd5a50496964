//! The filtering recipe: cocycle differentials, subset expansion of
//! product differentials, vacuum dt-extraction of the Lindblad generator,
//! and the linear solve for the filter gain η_t.
//!
//! The observed process dY = α_j dA*_j + β_ij dΛ_ij + α*_j dA_j + δ dt is
//! centered into the innovation
//!   dỸ = α_j dA*_j − E[V_j†α_j]dt + β_ij dΛ_ij − E[V_i†β_ij V_j]dt
//!        + α*_j dA_j − E[α_j†V_j]dt,
//! and η is fixed by expanding d(U† B (E[X]−X) U) over the subset terms
//! that differentiate B, taking the vacuum dt part, and demanding zero
//! expectation for every observed B.

use super::expr::{
    coeff_imag, coeff_one, coeff_real, expectation, Expr, Factor, Increment, Symbol, SymbolKind,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DeriveError {
    #[error("input differential is not a cocycle sandwich: {0}")]
    NonCocycle(String),
    #[error("gain is not uniquely solvable under the linear ansatz; residual: {0}")]
    NotSolvable(String),
    #[error("term without the test process b survived reduction: {0}")]
    StrayTerm(String),
}

pub const FORWARD_CH: usize = 0;
pub const SIDE_CH: usize = 1;

// ---------------------------------------------------------------------------
// Adapted processes and the subset differential
// ---------------------------------------------------------------------------

/// An adapted process given by its value and declared differential.
#[derive(Clone, Debug)]
pub struct Process {
    pub value: Expr,
    pub diff: Expr,
}

impl Process {
    pub fn constant(value: Expr) -> Self {
        Self {
            value,
            diff: Expr::zero(),
        }
    }
}

/// d(Z_1 ... Z_p) = Σ_ν [ν] over the 2^p − 1 non-empty subsets ν, where
/// [ν] differentiates exactly the factors in ν, preserving order.
/// Returns the subset terms (mask, contribution), already Itô-reduced.
pub fn expand_product_differential(factors: &[Process]) -> Vec<(u32, Expr)> {
    let p = factors.len();
    assert!(p >= 1, "need at least one factor");
    assert!(p <= 16, "subset expansion limited to small products");
    let mut out = Vec::with_capacity((1usize << p) - 1);
    for mask in 1u32..(1 << p) {
        let mut prod = Expr::one();
        for (i, z) in factors.iter().enumerate() {
            let piece = if mask & (1 << i) != 0 {
                &z.diff
            } else {
                &z.value
            };
            prod = prod.mul(piece);
            if prod.is_zero() {
                break;
            }
        }
        out.push((mask, prod));
    }
    out
}

/// Sum of all subset contributions: the full differential.
pub fn product_differential(factors: &[Process]) -> Expr {
    expand_product_differential(factors)
        .into_iter()
        .fold(Expr::zero(), |acc, (_, e)| acc.add(&e))
}

// ---------------------------------------------------------------------------
// Cocycles
// ---------------------------------------------------------------------------

/// Interaction-picture unitary cocycle
///   dU = { Σ_j L_j dA*_j − L_j† dA_j − (iH + ½ Σ_j L_j†L_j) dt } U
/// (the scattering matrix is the identity).
#[derive(Clone, Debug)]
pub struct Cocycle {
    pub hamiltonian: Expr,
    /// (channel index, coefficient L_j); coefficients are increment-free.
    pub channels: Vec<(usize, Expr)>,
}

pub fn u_symbol() -> Symbol {
    Symbol::system("U")
}

impl Cocycle {
    pub fn new(hamiltonian: Expr, channels: Vec<(usize, Expr)>) -> Self {
        Self {
            hamiltonian,
            channels,
        }
    }

    /// Spontaneous decay of the two-level atom: channels V_f, V_s.
    pub fn spontaneous_decay() -> Self {
        Self::new(
            Expr::from_symbol(Symbol::system_selfadjoint("H")),
            vec![
                (FORWARD_CH, Expr::from_symbol(Symbol::system("Vf"))),
                (SIDE_CH, Expr::from_symbol(Symbol::system("Vs"))),
            ],
        )
    }

    /// Laser on the forward channel: Ṽ_f = V_f + h(t)·1 and
    /// H̃ = H + (i/2)(h̄ V_f − h V_f†), with h a formal scalar.
    pub fn laser_displaced() -> Self {
        let h_sym = Symbol::scalar("h");
        let h = Expr::from_symbol(h_sym.clone());
        let h_bar = Expr::from_symbol(h_sym.dagger());
        let v_f = Expr::from_symbol(Symbol::system("Vf"));
        let v_f_dag = v_f.adjoint();
        let h_eff = Expr::from_symbol(Symbol::system_selfadjoint("H"))
            .add(&h_bar.mul(&v_f).sub(&h.mul(&v_f_dag)).scale(coeff_imag(1, 2)));
        Self::new(
            h_eff,
            vec![
                (FORWARD_CH, v_f.add(&h)),
                (SIDE_CH, Expr::from_symbol(Symbol::system("Vs"))),
            ],
        )
    }

    pub fn du(&self) -> Expr {
        let u = Expr::from_symbol(u_symbol());
        let mut e = Expr::zero();
        let mut drift = self.hamiltonian.scale(coeff_imag(1, 1));
        for (ch, l) in &self.channels {
            e = e.add(&l.with_increment(Increment::Creation(*ch)));
            e = e.sub(&l.adjoint().with_increment(Increment::Annihilation(*ch)));
            drift = drift.add(&l.adjoint().mul(l).scale(coeff_real(1, 2)));
        }
        e = e.sub(&drift.with_increment(Increment::Time));
        e.mul(&u)
    }

    pub fn du_dagger(&self) -> Expr {
        self.du().adjoint()
    }

    pub fn process(&self) -> Process {
        Process {
            value: Expr::from_symbol(u_symbol()),
            diff: self.du(),
        }
    }

    pub fn process_dagger(&self) -> Process {
        Process {
            value: Expr::from_symbol(u_symbol().dagger()),
            diff: self.du_dagger(),
        }
    }

    /// The Heisenberg Lindblad generator by vacuum dt-extraction:
    /// expand d(U† X U), keep the dt terms (everything else has zero
    /// vacuum expectation), and strip the U†···U sandwich. Canonically
    /// equals i[H,X] + Σ_j L_j†XL_j − ½{L_j†L_j, X}.
    pub fn vacuum_dt_generator(&self, x: &Expr) -> Result<Expr, DeriveError> {
        let factors = [
            self.process_dagger(),
            Process::constant(x.clone()),
            self.process(),
        ];
        let total = product_differential(&factors);
        strip_sandwich(&total.vacuum_dt_part())
    }
}

/// Standalone form of the generator extraction for explicit (H, {V_j}).
pub fn vacuum_dt_generator(
    hamiltonian: &Expr,
    channels: &[(usize, Expr)],
    x: &Expr,
) -> Result<Expr, DeriveError> {
    Cocycle::new(hamiltonian.clone(), channels.to_vec()).vacuum_dt_generator(x)
}

/// Remove the leading U† and trailing U from the system part of every
/// term. Errors if some term is not of sandwich shape.
fn strip_sandwich(e: &Expr) -> Result<Expr, DeriveError> {
    let u = u_symbol();
    let u_dag = u.dagger();
    let mut out = Expr::zero();
    for t in e.terms() {
        let mut word = t.word.clone();
        let first_sys = word.iter().position(
            |f| matches!(f, Factor::Sym(s) if s.kind == SymbolKind::System),
        );
        let ok = match first_sys {
            Some(i) if word[i] == Factor::Sym(u_dag.clone()) => {
                match word.last() {
                    Some(f) if *f == Factor::Sym(u.clone()) => {
                        word.pop();
                        word.remove(i);
                        true
                    }
                    _ => false,
                }
            }
            _ => false,
        };
        if !ok {
            return Err(DeriveError::NonCocycle(super::render::render_expr(
                &Expr::from_term(t.clone()),
            )));
        }
        out = out.add(&Expr::from_term(super::expr::Term {
            coeff: t.coeff,
            word,
            inc: t.inc,
        }));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Measurements and innovations
// ---------------------------------------------------------------------------

/// The two monitored processes of the side channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Measurement {
    /// Y_t = Λ_ss(t): photon counting in the side channel.
    Counting,
    /// Y_t = X_φ(t): the field quadrature e^{iφ}dA*_s + e^{−iφ}dA_s.
    Quadrature,
}

impl Measurement {
    pub fn name(&self) -> &'static str {
        match self {
            Measurement::Counting => "count",
            Measurement::Quadrature => "homodyne",
        }
    }

    /// dY_t in terms of the fundamental increments.
    pub fn dy(&self) -> Expr {
        match self {
            Measurement::Counting => Expr::one().with_increment(Increment::Gauge(SIDE_CH, SIDE_CH)),
            Measurement::Quadrature => {
                let phase = Expr::from_factor(Factor::Phase(1));
                phase
                    .with_increment(Increment::Creation(SIDE_CH))
                    .add(&phase.adjoint().with_increment(Increment::Annihilation(SIDE_CH)))
            }
        }
    }

    /// The innovation dỸ, centering dY with its conditional compensator.
    /// The cocycle supplies the channel coefficient entering the
    /// compensators (L_s = V_s for the side channel).
    pub fn dy_tilde(&self, cocycle: &Cocycle) -> Expr {
        let l_s = cocycle
            .channels
            .iter()
            .find(|(ch, _)| *ch == SIDE_CH)
            .map(|(_, l)| l.clone())
            .expect("cocycle must have a side channel");
        match self {
            Measurement::Counting => {
                // β_ss = 1: compensator E[V_s† V_s]
                let comp = expectation(&l_s.adjoint().mul(&l_s));
                self.dy().sub(&comp.with_increment(Increment::Time))
            }
            Measurement::Quadrature => {
                // α_s = e^{iφ}: compensator E[e^{iφ}V_s† + e^{−iφ}V_s]
                let phase = Expr::from_factor(Factor::Phase(1));
                let comp = expectation(
                    &phase
                        .mul(&l_s.adjoint())
                        .add(&phase.adjoint().mul(&l_s)),
                );
                self.dy().sub(&comp.with_increment(Increment::Time))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Gain derivation
// ---------------------------------------------------------------------------

/// Result of the recipe: the gain η, the innovation dỸ it multiplies,
/// and side conditions attached to formal inverses.
#[derive(Clone, Debug)]
pub struct FilterGain {
    pub eta: Expr,
    pub dy_tilde: Expr,
    pub side_conditions: Vec<String>,
}

/// Subset masks over (Z1, Z2, Z3, Z4) = (U†, B, E[X]−X, U) that
/// differentiate Z2; the remaining subsets have zero expectation.
pub const SURVIVING_SUBSETS: [u32; 7] = [
    0b0011, 0b0110, 0b1010, 0b0111, 0b1011, 0b1110, 0b1111,
];

/// Derive η_t for the given measurement and observable X following the
/// recipe: build d(U† B (E[X]−X) U) with dB = b dỸ + c dt, reduce the
/// subset terms that differentiate B under the vacuum and the
/// conditional-expectation axioms, and solve the resulting equation,
/// linear in η, that must hold for every b.
pub fn derive_filter_gain(
    cocycle: &Cocycle,
    measurement: Measurement,
    x: &Expr,
) -> Result<FilterGain, DeriveError> {
    let dy_tilde = measurement.dy_tilde(cocycle);
    let b = Expr::from_symbol(Symbol::observed("b"));
    let c_proc = Expr::from_symbol(Symbol::observed("c"));
    let eta_sym = Symbol::observed("eta");
    let eta = Expr::from_symbol(eta_sym.clone());

    // dB = b dỸ + c dt
    let db = b.mul(&dy_tilde).add(&c_proc.with_increment(Increment::Time));
    // d(E[X] − X) = E[L(X)] dt + η dỸ
    let generator = cocycle.vacuum_dt_generator(x)?;
    let dz3 = expectation(&generator)
        .with_increment(Increment::Time)
        .add(&eta.mul(&dy_tilde));
    let z3_value = expectation(x).sub(x);

    let factors = [
        cocycle.process_dagger(),
        Process {
            value: Expr::from_symbol(Symbol::observed("B")),
            diff: db,
        },
        Process {
            value: z3_value,
            diff: dz3,
        },
        cocycle.process(),
    ];

    let subsets = expand_product_differential(&factors);

    // the Lemma: subsets not differentiating B have zero expectation.
    // [2] alone also reduces to zero; the seven remaining subsets carry
    // the content.
    let mut total = Expr::zero();
    for (mask, contribution) in &subsets {
        if SURVIVING_SUBSETS.contains(mask) {
            total = total.add(contribution);
        }
    }

    let reduced = conditional_reduction(&total.vacuum_dt_part())?;

    // every term must be proportional to b; strip it
    let stripped = strip_required_symbol(&reduced, "b")?;

    // split into η-linear part and the rest:  A + η · D = 0
    let mut a_part = Expr::zero();
    let mut d_part = Expr::zero();
    for t in stripped.terms() {
        let mut word = t.word.clone();
        let eta_positions: Vec<usize> = word
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f, Factor::Sym(s) if s.name == "eta"))
            .map(|(i, _)| i)
            .collect();
        match eta_positions.len() {
            0 => a_part = a_part.add(&Expr::from_term(t.clone())),
            1 => {
                word.remove(eta_positions[0]);
                d_part = d_part.add(&Expr::from_term(super::expr::Term {
                    coeff: t.coeff,
                    word,
                    inc: t.inc,
                }));
            }
            _ => {
                return Err(DeriveError::NotSolvable(format!(
                    "term quadratic in eta: {}",
                    super::render::render_expr(&Expr::from_term(t.clone()))
                )))
            }
        }
    }

    if d_part.is_zero() {
        return Err(DeriveError::NotSolvable(format!(
            "eta does not appear; residual: {}",
            super::render::render_expr(&a_part)
        )));
    }

    // η = −A · D⁻¹
    let mut side_conditions = Vec::new();
    let eta_solution = if d_part.is_one() {
        a_part.neg()
    } else if d_part.terms().len() == 1
        && d_part.terms()[0].coeff == coeff_one()
        && d_part.terms()[0].word.len() == 1
        && matches!(d_part.terms()[0].word[0], Factor::Cond(_))
    {
        let denom = d_part.terms()[0].word[0].clone();
        side_conditions.push(format!(
            "{} != 0",
            super::render::render_expr(&Expr::from_factor(denom.clone()))
        ));
        a_part.neg().mul(&Expr::from_factor(Factor::Inv(
            Expr::from_factor(denom),
        )))
    } else {
        return Err(DeriveError::NotSolvable(format!(
            "eta multiplies a non-invertible cofactor {}; residual {}",
            super::render::render_expr(&d_part),
            super::render::render_expr(&a_part)
        )));
    };

    Ok(FilterGain {
        eta: eta_solution,
        dy_tilde,
        side_conditions,
    })
}

/// Reduce ρ⁰(U† w U) terms: strip the sandwich and push the word through
/// E^t, using that E^t leaves ρ^t invariant.
pub fn conditional_reduction(e: &Expr) -> Result<Expr, DeriveError> {
    let sandwich_free = strip_sandwich(e)?;
    let mut out = Expr::zero();
    for t in sandwich_free.terms() {
        out = out.add(&expectation(&Expr::from_term(t.clone())));
    }
    Ok(out)
}

/// Every term must contain the named observed symbol exactly once;
/// remove it. Implements the "for all b" step.
fn strip_required_symbol(e: &Expr, name: &str) -> Result<Expr, DeriveError> {
    let mut out = Expr::zero();
    for t in e.terms() {
        let mut word = t.word.clone();
        let hits: Vec<usize> = word
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f, Factor::Sym(s) if s.name == name))
            .map(|(i, _)| i)
            .collect();
        if hits.len() != 1 {
            return Err(DeriveError::StrayTerm(super::render::render_expr(
                &Expr::from_term(t.clone()),
            )));
        }
        word.remove(hits[0]);
        out = out.add(&Expr::from_term(super::expr::Term {
            coeff: t.coeff,
            word,
            inc: t.inc,
        }));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// The assembled Belavkin equation
// ---------------------------------------------------------------------------

/// dE[X] = E[L(X)] dt + η dỸ, with the expanded generator kept for the
/// symbolic–numeric bridge.
#[derive(Clone, Debug)]
pub struct BelavkinEquation {
    pub measurement: Measurement,
    pub gain: FilterGain,
    pub generator: Expr,
}

/// Run the recipe for one of the presets on the laser-displaced cocycle.
pub fn assemble_belavkin_equation(measurement: Measurement) -> Result<BelavkinEquation, DeriveError> {
    let cocycle = Cocycle::laser_displaced();
    let x = Expr::from_symbol(Symbol::system("X"));
    let gain = derive_filter_gain(&cocycle, measurement, &x)?;
    let generator = cocycle.vacuum_dt_generator(&x)?;
    Ok(BelavkinEquation {
        measurement,
        gain,
        generator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ito::expr::cond_word;

    fn sym(e: &str) -> Expr {
        Expr::from_symbol(Symbol::system(e))
    }

    fn ham() -> Expr {
        Expr::from_symbol(Symbol::system_selfadjoint("H"))
    }

    #[test]
    fn subset_expansion_counts_and_low_order_formulas() {
        let z: Vec<Process> = (0..4)
            .map(|i| Process {
                value: sym(&format!("Z{i}")),
                diff: sym(&format!("G{i}")).with_increment(Increment::Time),
            })
            .collect();
        for p in 1..=4 {
            assert_eq!(expand_product_differential(&z[..p]).len(), (1 << p) - 1);
        }

        // p = 1 returns the declared differential
        assert_eq!(
            product_differential(&z[..1]),
            sym("G0").with_increment(Increment::Time)
        );

        // p = 2: (dZ1)Z2 + Z1(dZ2) + (dZ1)(dZ2), the cross term dying on dt·dt
        let expected = sym("G0")
            .mul(&sym("Z1"))
            .add(&sym("Z0").mul(&sym("G1")))
            .with_increment(Increment::Time);
        assert_eq!(product_differential(&z[..2]), expected);
    }

    #[test]
    fn subset_13_keeps_order() {
        // with dZ = G dA* the term [13] = (dZ1)Z2(dZ3) reduces on
        // dA*·dA* = 0 but [13] with mixed increments survives:
        let z1 = Process {
            value: sym("Z1"),
            diff: sym("G1").with_increment(Increment::Annihilation(0)),
        };
        let z2 = Process::constant(sym("Z2"));
        let z3 = Process {
            value: sym("Z3"),
            diff: sym("G3").with_increment(Increment::Creation(0)),
        };
        let subsets = expand_product_differential(&[z1, z2, z3]);
        let mask_13 = 0b101;
        let term_13 = subsets
            .iter()
            .find(|(m, _)| *m == mask_13)
            .map(|(_, e)| e.clone())
            .unwrap();
        let expected = sym("G1")
            .mul(&sym("Z2"))
            .mul(&sym("G3"))
            .with_increment(Increment::Time);
        assert_eq!(term_13, expected);
    }

    #[test]
    fn vacuum_generator_unitary_case() {
        // no channels: d(U†XU) keeps only i[H,X]
        let cocycle = Cocycle::new(ham(), vec![]);
        let x = sym("X");
        let l = cocycle.vacuum_dt_generator(&x).unwrap();
        let expected = ham()
            .mul(&x)
            .sub(&x.mul(&ham()))
            .scale(coeff_imag(1, 1));
        assert_eq!(l, expected);
    }

    #[test]
    fn vacuum_generator_single_channel_no_hamiltonian() {
        let cocycle = Cocycle::new(Expr::zero(), vec![(0, sym("V"))]);
        let x = sym("X");
        let l = cocycle.vacuum_dt_generator(&x).unwrap();
        let v = sym("V");
        let vdv = v.adjoint().mul(&v);
        let expected = v
            .adjoint()
            .mul(&x)
            .mul(&v)
            .sub(&vdv.mul(&x).add(&x.mul(&vdv)).scale(coeff_real(1, 2)));
        assert_eq!(l, expected);
    }

    #[test]
    fn vacuum_generator_two_channels_matches_lindblad_form() {
        let cocycle = Cocycle::spontaneous_decay();
        let x = sym("X");
        let l = cocycle.vacuum_dt_generator(&x).unwrap();
        let mut expected = ham()
            .mul(&x)
            .sub(&x.mul(&ham()))
            .scale(coeff_imag(1, 1));
        for v in [sym("Vf"), sym("Vs")] {
            let vdv = v.adjoint().mul(&v);
            expected = expected
                .add(&v.adjoint().mul(&x).mul(&v))
                .sub(&vdv.mul(&x).add(&x.mul(&vdv)).scale(coeff_real(1, 2)));
        }
        assert_eq!(l, expected);
    }

    #[test]
    fn counting_gain_matches_closed_form() {
        let cocycle = Cocycle::laser_displaced();
        let x = sym("X");
        let gain = derive_filter_gain(&cocycle, Measurement::Counting, &x).unwrap();

        let vs = Symbol::system("Vs");
        let num = cond_word(vec![
            Factor::Sym(vs.dagger()),
            Factor::Sym(Symbol::system("X")),
            Factor::Sym(vs.clone()),
        ]);
        let den = cond_word(vec![Factor::Sym(vs.dagger()), Factor::Sym(vs.clone())]);
        let expected = Expr::from_factor(num)
            .mul(&Expr::from_factor(Factor::Inv(Expr::from_factor(den.clone()))))
            .sub(&expectation(&x));
        assert_eq!(gain.eta, expected);

        // innovation dỸ = dΛ_ss − E[Vs†Vs] dt
        let expected_dy = Expr::one()
            .with_increment(Increment::Gauge(SIDE_CH, SIDE_CH))
            .sub(&Expr::from_factor(den).with_increment(Increment::Time));
        assert_eq!(gain.dy_tilde, expected_dy);
        assert_eq!(gain.side_conditions.len(), 1);
    }

    #[test]
    fn counting_gain_for_identity_observable_is_zero() {
        let cocycle = Cocycle::laser_displaced();
        let gain = derive_filter_gain(&cocycle, Measurement::Counting, &Expr::one()).unwrap();
        assert!(gain.eta.is_zero(), "eta = {}", gain.eta);
    }

    #[test]
    fn quadrature_gain_matches_closed_form() {
        let cocycle = Cocycle::laser_displaced();
        let x = sym("X");
        let gain = derive_filter_gain(&cocycle, Measurement::Quadrature, &x).unwrap();

        let vs = sym("Vs");
        let phase = Expr::from_factor(Factor::Phase(1));
        let inner = phase
            .mul(&vs.adjoint())
            .mul(&x)
            .add(&phase.adjoint().mul(&x).mul(&vs));
        let outer = phase
            .mul(&vs.adjoint())
            .add(&phase.adjoint().mul(&vs));
        let expected = expectation(&inner).sub(&expectation(&outer).mul(&expectation(&x)));
        assert_eq!(gain.eta, expected);
        assert!(gain.side_conditions.is_empty());
    }

    #[test]
    fn quadrature_gain_for_identity_observable_is_zero() {
        let cocycle = Cocycle::laser_displaced();
        let gain = derive_filter_gain(&cocycle, Measurement::Quadrature, &Expr::one()).unwrap();
        assert!(gain.eta.is_zero(), "eta = {}", gain.eta);
    }

    #[test]
    fn excluded_subsets_reduce_to_zero() {
        // the [2] term alone (dB undisturbed by the cocycle) dies under
        // the conditional-expectation axioms
        let cocycle = Cocycle::laser_displaced();
        let x = sym("X");
        let dy_tilde = Measurement::Counting.dy_tilde(&cocycle);
        let b = Expr::from_symbol(Symbol::observed("b"));
        let c_proc = Expr::from_symbol(Symbol::observed("c"));
        let db = b.mul(&dy_tilde).add(&c_proc.with_increment(Increment::Time));
        let factors = [
            cocycle.process_dagger(),
            Process {
                value: Expr::from_symbol(Symbol::observed("B")),
                diff: db,
            },
            Process {
                value: expectation(&x).sub(&x),
                diff: Expr::zero(),
            },
            cocycle.process(),
        ];
        let subsets = expand_product_differential(&factors);
        let term_2 = subsets
            .iter()
            .find(|(m, _)| *m == 0b0010)
            .map(|(_, e)| e.clone())
            .unwrap();
        let reduced = conditional_reduction(&term_2.vacuum_dt_part()).unwrap();
        assert!(reduced.is_zero(), "[2] reduced to {reduced}");
    }

    #[test]
    fn gain_without_side_channel_in_dy_fails_cleanly() {
        // a cocycle with no side channel cannot center the observation
        let cocycle = Cocycle::new(ham(), vec![(SIDE_CH, Expr::zero())]);
        let res = derive_filter_gain(&cocycle, Measurement::Counting, &sym("X"));
        assert!(res.is_err());
    }
}
