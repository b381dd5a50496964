//! Stable plain-text rendering of symbolic expressions and equations,
//! used for golden-file tests and the `derive` subcommand.
//!
//! Grammar (EBNF):
//! ```text
//! expr       = term , { " + " term | " - " term } | "0" ;
//! term       = [ coeff , " " ] , factors , [ "/" , cond ] , [ " " , increment ] ;
//! factors    = factor , { " " , factor } | "1" ;
//! factor     = symbol | phase | cond ;
//! symbol     = name , [ "*" ] ;                        (* "*" marks the adjoint *)
//! phase      = "e^{i phi}" | "e^{-i phi}" | "e^{" , integer , "i phi}" ;
//! cond       = "E[" , expr , "]" ;                     (* conditional expectation *)
//! increment  = "dt" | "dA_" ch | "dA*_" ch | "dL_" ch ch ;
//! ch         = "f" | "s" | integer ;
//! coeff      = rational | [ rational ] , "i" | "(" rational " + " rational "i" ")" ;
//! ```
//! Terms appear in the engine's canonical order; the rendering of a
//! canonical expression is therefore unique.

use super::expr::{Coeff, Expr, Factor, Increment, Rat, Term};
use super::recipe::{BelavkinEquation, Measurement};
use num_traits::{Signed, Zero};

fn channel_name(ch: usize) -> String {
    match ch {
        0 => "f".into(),
        1 => "s".into(),
        n => n.to_string(),
    }
}

fn render_rat(r: &Rat) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Sign-split coefficient rendering: returns (negative?, body) where the
/// body omits "1" and renders "i" for the imaginary unit.
fn render_coeff(z: &Coeff) -> (bool, Option<String>) {
    let one = Rat::from_integer(1);
    if z.im.is_zero() {
        let neg = z.re.is_negative();
        let mag = z.re.abs();
        let body = if mag == one {
            None
        } else {
            Some(render_rat(&mag))
        };
        return (neg, body);
    }
    if z.re.is_zero() {
        let neg = z.im.is_negative();
        let mag = z.im.abs();
        let body = if mag == one {
            Some("i".to_string())
        } else {
            Some(format!("{} i", render_rat(&mag)))
        };
        return (neg, body);
    }
    (
        false,
        Some(format!("({} + {} i)", render_rat(&z.re), render_rat(&z.im))),
    )
}

fn render_phase(k: i64) -> String {
    match k {
        1 => "e^{i phi}".into(),
        -1 => "e^{-i phi}".into(),
        k => format!("e^{{{k}i phi}}"),
    }
}

fn render_increment(inc: &Increment) -> String {
    match inc {
        Increment::Time => "dt".into(),
        Increment::Annihilation(j) => format!("dA_{}", channel_name(*j)),
        Increment::Creation(j) => format!("dA*_{}", channel_name(*j)),
        Increment::Gauge(i, j) => format!("dL_{}{}", channel_name(*i), channel_name(*j)),
    }
}

fn render_factor(f: &Factor, cond_head: &str) -> String {
    match f {
        Factor::Sym(s) => {
            if s.dag {
                format!("{}*", s.name)
            } else {
                s.name.clone()
            }
        }
        Factor::Phase(k) => render_phase(*k),
        Factor::Cond(e) => format!("{}[{}]", cond_head, render_expr_with(e, cond_head)),
        Factor::Inv(e) => format!("1/({})", render_expr_with(e, cond_head)),
    }
}

fn render_term(t: &Term, cond_head: &str) -> (bool, String) {
    let (neg, coeff_body) = render_coeff(&t.coeff);
    let mut numerator: Vec<String> = Vec::new();
    let mut denominators: Vec<String> = Vec::new();
    if let Some(cb) = coeff_body {
        numerator.push(cb);
    }
    for f in &t.word {
        match f {
            Factor::Inv(e) => {
                let inner = render_expr_with(e, cond_head);
                // a single conditional-expectation factor needs no parens
                if e.terms().len() == 1 && e.terms()[0].word.len() == 1 {
                    denominators.push(inner);
                } else {
                    denominators.push(format!("({inner})"));
                }
            }
            f => numerator.push(render_factor(f, cond_head)),
        }
    }
    let mut body = if numerator.is_empty() && (t.inc.is_none() || !denominators.is_empty()) {
        "1".to_string()
    } else {
        numerator.join(" ")
    };
    for d in denominators {
        body.push('/');
        body.push_str(&d);
    }
    if let Some(inc) = &t.inc {
        if !body.is_empty() {
            body.push(' ');
        }
        body.push_str(&render_increment(inc));
    }
    (neg, body)
}

fn render_expr_with(e: &Expr, cond_head: &str) -> String {
    if e.is_zero() {
        return "0".into();
    }
    let mut out = String::new();
    for (i, t) in e.terms().iter().enumerate() {
        let (neg, body) = render_term(t, cond_head);
        if i == 0 {
            if neg {
                out.push_str("- ");
            }
        } else if neg {
            out.push_str(" - ");
        } else {
            out.push_str(" + ");
        }
        out.push_str(&body);
    }
    out
}

/// Canonical rendering with E[...] for conditional expectations.
pub fn render_expr(e: &Expr) -> String {
    render_expr_with(e, "E")
}

/// State-form rendering: E[...] becomes rho[...], read as rho_t applied
/// to the bracketed observable.
pub fn render_expr_state(e: &Expr) -> String {
    render_expr_with(e, "rho")
}

fn parenthesized(s: &str) -> String {
    format!("({s})")
}

/// The innovation rendered in state form: the field observation becomes
/// the classical record increment (dN_t for counting, dW_t for homodyne)
/// and the compensator keeps its rho[...] form.
fn render_innovation_state(eq: &BelavkinEquation) -> String {
    let obs = match eq.measurement {
        Measurement::Counting => "dN_t",
        Measurement::Quadrature => "dW_t",
    };
    let dt_terms: Vec<String> = eq
        .gain
        .dy_tilde
        .terms()
        .iter()
        .filter(|t| t.inc == Some(Increment::Time))
        .map(|t| {
            let (neg, body) = render_term(t, "rho");
            format!("{}{}", if neg { " - " } else { " + " }, body)
        })
        .collect();
    format!("{obs}{}", dt_terms.join(""))
}

/// Full multi-line output of `derive`: the Belavkin equation in both
/// pictures, the expanded generator, and any side conditions.
pub fn render_equation(eq: &BelavkinEquation) -> String {
    let mut out = String::new();
    out.push_str(&format!("scheme: {}\n", eq.measurement.name()));
    out.push_str(&format!(
        "equation: dE[X] = E[L[X]] dt + {} {}\n",
        parenthesized(&render_expr(&eq.gain.eta)),
        parenthesized(&render_expr(&eq.gain.dy_tilde)),
    ));
    out.push_str(&format!(
        "state form: drho[X] = rho[L[X]] dt + {} {}\n",
        parenthesized(&render_expr_state(&eq.gain.eta)),
        parenthesized(&render_innovation_state(eq)),
    ));
    out.push_str(&format!(
        "generator: L[X] = {}\n",
        render_expr(&eq.generator)
    ));
    if eq.gain.side_conditions.is_empty() {
        out.push_str("side conditions: none\n");
    } else {
        out.push_str(&format!(
            "side conditions: {}\n",
            eq.gain.side_conditions.join("; ")
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ito::expr::{coeff_imag, coeff_real, Symbol};

    #[test]
    fn coefficients_render_exactly() {
        let x = Expr::from_symbol(Symbol::system("X"));
        assert_eq!(render_expr(&x), "X");
        assert_eq!(render_expr(&x.neg()), "- X");
        assert_eq!(render_expr(&x.scale(coeff_imag(1, 1))), "i X");
        assert_eq!(render_expr(&x.scale(coeff_imag(-1, 2))), "- 1/2 i X");
        assert_eq!(render_expr(&x.scale(coeff_real(3, 4))), "3/4 X");
        assert_eq!(render_expr(&Expr::zero()), "0");
        assert_eq!(render_expr(&Expr::one()), "1");
    }

    #[test]
    fn adjoints_and_increments_render() {
        let v = Symbol::system("Vs");
        let e = Expr::from_symbol(v.dagger())
            .mul(&Expr::from_symbol(v))
            .with_increment(Increment::Time);
        assert_eq!(render_expr(&e), "Vs* Vs dt");
        let da = Expr::one().with_increment(Increment::Creation(1));
        assert_eq!(render_expr(&da), "dA*_s");
        let dl = Expr::one().with_increment(Increment::Gauge(1, 1));
        assert_eq!(render_expr(&dl), "dL_ss");
    }
}
