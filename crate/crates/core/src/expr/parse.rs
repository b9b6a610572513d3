//! Text front end.
//!
//! Grammar (tokens are bit-exact):
//!
//! ```text
//! expr     := term (("+"|"-") term)* ;
//! term     := factor (("*"|"/") factor)* ;
//! factor   := ("-")? base ("^" exponent)? ;
//! base     := NUMBER | "i" | IDENT | call | "(" expr ")" ;
//! call     := IDENT "(" expr ("," expr)* (";" IDENT ("," IDENT)*)? ")" ;
//! exponent := rational | "(" expr ")" ;
//! rational := ("-")? INTEGER ("/" INTEGER)? ;
//! ```
//!
//! `D(e; v1, v2, …)` is the derivative form: iterated total derivatives of
//! `e` along the named variables (independent variables, or dependent ones
//! for fiber directions). `exp`, `sin`, `cos`, `conj` are built-in calls;
//! `sin`/`cos` are lowered to complex exponentials at construction.
//! Registered function symbols are applied to comma-separated arguments and
//! accept derivative markers: primes (`A''(t)`) for single-argument symbols
//! or an order vector in brackets (`F2[0,1,0,2](…)`) in general.
//! A parenthesized exponent may be any expression that canonicalizes to a
//! rational linear combination of opaque constants (`m^(k/2)`).
//!
//! Jet coordinates are written with underscores (`psi_tx1x1`, `W_psi`); in
//! one spatial dimension `x` is accepted for `x1`. Numbers are integers;
//! rationals are formed by division. The parser returns canonicalized
//! expressions, and `parse(print(e))` reproduces every canonical `e`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;

use crate::number::GaussRat;
use crate::space::{BaseSlot, JetSpace};
use crate::{Error, Result};

use super::{conj, diff, Expr, Node, QExp};

#[derive(Clone, PartialEq, Eq, Debug)]
enum Tok {
    Num(BigInt),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Semi,
    Comma,
    At,
    Prime,
    Eof,
}

struct Lexer<'a> {
    src: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

type Spanned = (Tok, usize, usize);

fn lex(text: &str) -> Result<Vec<Spanned>> {
    let mut lx = Lexer { src: text.chars().peekable(), line: 1, col: 1 };
    let mut out = Vec::new();
    loop {
        while let Some(c) = lx.src.peek().copied() {
            if c == '\n' {
                lx.src.next();
                lx.line += 1;
                lx.col = 1;
            } else if c.is_whitespace() {
                lx.src.next();
                lx.col += 1;
            } else {
                break;
            }
        }
        let (line, col) = (lx.line, lx.col);
        let c = match lx.src.peek().copied() {
            None => {
                out.push((Tok::Eof, line, col));
                return Ok(out);
            }
            Some(c) => c,
        };
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ';' => Tok::Semi,
            ',' => Tok::Comma,
            '@' => Tok::At,
            '\'' => Tok::Prime,
            d if d.is_ascii_digit() => {
                let mut s = String::new();
                while let Some(d) = lx.src.peek().copied() {
                    if d.is_ascii_digit() {
                        s.push(d);
                        lx.src.next();
                        lx.col += 1;
                    } else {
                        break;
                    }
                }
                out.push((Tok::Num(s.parse().expect("digit string")), line, col));
                continue;
            }
            a if a.is_ascii_alphabetic() => {
                let mut s = String::new();
                while let Some(a) = lx.src.peek().copied() {
                    if a.is_ascii_alphanumeric() || a == '_' {
                        s.push(a);
                        lx.src.next();
                        lx.col += 1;
                    } else {
                        break;
                    }
                }
                out.push((Tok::Ident(s), line, col));
                continue;
            }
            other => {
                return Err(Error::Syntax {
                    line,
                    col,
                    msg: format!("unexpected character `{}`", other),
                })
            }
        };
        lx.src.next();
        lx.col += 1;
        out.push((tok, line, col));
    }
}

struct Parser<'a> {
    sp: &'a JetSpace,
    toks: Vec<Spanned>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn here(&self) -> (usize, usize) {
        (self.toks[self.pos].1, self.toks[self.pos].2)
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        let (line, col) = self.here();
        Err(Error::Syntax { line, col, msg: msg.into() })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected {}", what))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    acc = Expr::add(acc, self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    acc = Expr::sub(acc, self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut acc = self.factor()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    acc = Expr::mul(acc, self.factor()?);
                }
                Tok::Slash => {
                    self.bump();
                    acc = Expr::div(acc, self.factor()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let f = self.factor()?;
            return Ok(Expr::neg(f));
        }
        let b = self.base()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let q = self.exponent()?;
            return Ok(Expr::powq(b, q));
        }
        Ok(b)
    }

    fn exponent(&mut self) -> Result<QExp> {
        match self.peek().clone() {
            Tok::Num(_) | Tok::Minus => self.rational().map(QExp::from_rational),
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)` closing the exponent")?;
                let c = e.canonicalize()?;
                qexp_of_expr(&c)
            }
            _ => self.err("expected an exponent (rational or parenthesized expression)"),
        }
    }

    fn rational(&mut self) -> Result<BigRational> {
        let neg = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        let p = match self.bump() {
            Tok::Num(p) => p,
            _ => return self.err("expected an integer"),
        };
        let q = if *self.peek() == Tok::Slash {
            self.bump();
            match self.bump() {
                Tok::Num(q) if !q.is_zero() => q,
                Tok::Num(_) => return self.err("zero denominator in exponent"),
                _ => return self.err("expected an integer denominator"),
            }
        } else {
            BigInt::from(1)
        };
        let r = BigRational::new(p, q);
        Ok(if neg { -r } else { r })
    }

    fn base(&mut self) -> Result<Expr> {
        match self.peek().clone() {
            Tok::Num(_) => {
                if let Tok::Num(n) = self.bump() {
                    Ok(Expr::num(GaussRat::from_rational(BigRational::from_integer(n))))
                } else {
                    unreachable!()
                }
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                self.ident_expr(name)
            }
            _ => self.err("expected a number, identifier, or `(`"),
        }
    }

    /// Identifier just consumed: plain symbol, call, or derivative form.
    fn ident_expr(&mut self, name: String) -> Result<Expr> {
        // Derivative-order markers on function symbols.
        let mut primes = 0u32;
        while *self.peek() == Tok::Prime {
            self.bump();
            primes += 1;
        }
        let mut bracket_orders: Option<Vec<u32>> = None;
        if *self.peek() == Tok::LBracket {
            self.bump();
            let mut orders = Vec::new();
            loop {
                match self.bump() {
                    Tok::Num(n) => {
                        orders.push(n.try_into().map_err(|_| Error::Syntax {
                            line: self.here().0,
                            col: self.here().1,
                            msg: "derivative order too large".into(),
                        })?);
                    }
                    _ => return self.err("expected a derivative order"),
                }
                match self.bump() {
                    Tok::Comma => continue,
                    Tok::RBracket => break,
                    _ => return self.err("expected `,` or `]` in derivative orders"),
                }
            }
            bracket_orders = Some(orders);
        }
        let has_orders = primes > 0 || bracket_orders.is_some();

        if *self.peek() == Tok::LParen {
            self.bump();
            return self.call(name, primes, bracket_orders);
        }
        if has_orders {
            return self.err(format!(
                "derivative marker on `{}` requires an argument list",
                name
            ));
        }

        // Plain identifier.
        if name == "i" {
            return Ok(Expr::i());
        }
        if let Some(c) = self.sp.indep_id(&name) {
            return Ok(Expr::indep(c));
        }
        if let Some(d) = self.sp.dep_id(&name) {
            return Ok(Expr::jet(self.sp.jet0(d)));
        }
        if let Some(j) = self.sp.resolve_jet_ident(&name) {
            self.sp.check_jet(&j)?;
            return Ok(Expr::jet(j));
        }
        if let Some(c) = self.sp.const_id(&name) {
            return Ok(Expr::cnst(c));
        }
        if self.sp.func_id(&name).is_some() {
            return self.err(format!("function symbol `{}` requires arguments", name));
        }
        Err(Error::UnknownIdent(name))
    }

    /// Call with the opening parenthesis consumed.
    fn call(&mut self, name: String, primes: u32, brackets: Option<Vec<u32>>) -> Result<Expr> {
        let builtin = matches!(name.as_str(), "exp" | "sin" | "cos" | "conj" | "D");
        if builtin && (primes > 0 || brackets.is_some()) {
            return self.err(format!("`{}` takes no derivative markers", name));
        }
        let first = self.expr()?;
        if name == "D" {
            self.expect(Tok::Semi, "`;` before the derivative variables")?;
            if matches!(first.node(), Node::Indep(_)) {
                return Err(Error::DerivativeOfIndependent(
                    "the derivative subject is an independent variable".into(),
                ));
            }
            let mut out = first;
            loop {
                let vname = match self.bump() {
                    Tok::Ident(v) => v,
                    _ => return self.err("expected a variable name"),
                };
                let slot = if let Some(c) = self.sp.indep_id(&vname) {
                    BaseSlot::Indep(c)
                } else if let Some(d) = self.sp.dep_id(&vname) {
                    BaseSlot::Dep(d)
                } else {
                    return Err(Error::UnknownIdent(vname));
                };
                out = diff::total_derivative(self.sp, &out, slot)?;
                match self.bump() {
                    Tok::Comma => continue,
                    Tok::RParen => return Ok(out),
                    _ => return self.err("expected `,` or `)` in derivative form"),
                }
            }
        }
        let mut args = vec![first];
        loop {
            match self.bump() {
                Tok::Comma => args.push(self.expr()?),
                Tok::RParen => break,
                _ => return self.err("expected `,` or `)` in argument list"),
            }
        }
        match name.as_str() {
            "exp" | "sin" | "cos" | "conj" => {
                if args.len() != 1 {
                    return self.err(format!("`{}` takes exactly one argument", name));
                }
                let a = args.pop().expect("one argument");
                Ok(match name.as_str() {
                    "exp" => Expr::exp(a),
                    "sin" => Expr::sin(a),
                    "cos" => Expr::cos(a),
                    _ => conj::conj(self.sp, &a),
                })
            }
            _ => {
                let f = match self.sp.func_id(&name) {
                    Some(f) => f,
                    None => return Err(Error::UnknownIdent(name)),
                };
                let arity = self.sp.funcs[f].arity;
                if args.len() != arity {
                    return self.err(format!(
                        "`{}` takes {} argument(s), got {}",
                        name,
                        arity,
                        args.len()
                    ));
                }
                let orders = match brackets {
                    Some(o) => {
                        if o.len() != arity {
                            return self.err(format!(
                                "derivative orders for `{}` need {} entries",
                                name, arity
                            ));
                        }
                        o
                    }
                    None => {
                        let mut o = vec![0; arity];
                        if primes > 0 {
                            if arity != 1 {
                                return self.err(
                                    "prime derivative markers need a single-argument symbol",
                                );
                            }
                            o[0] = primes;
                        }
                        o
                    }
                };
                Ok(Expr::func(f, orders, args))
            }
        }
    }
}

/// Convert a canonicalized expression into an exponent: a rational plus a
/// rational linear combination of opaque constants.
fn qexp_of_expr(e: &Expr) -> Result<QExp> {
    fn linear_term(e: &Expr, out: &mut QExp) -> Result<()> {
        match e.node() {
            Node::Num(c) => match c.as_rational() {
                Some(r) => {
                    out.rat += r;
                    Ok(())
                }
                None => Err(Error::BadExponent(
                    "exponents must be real rational combinations".into(),
                )),
            },
            Node::Const { id, conj } => {
                *out = out.add(&QExp::sym(*id, *conj));
                Ok(())
            }
            Node::Prod(xs) if xs.len() == 2 => {
                match (xs[0].node(), xs[1].node()) {
                    (Node::Num(c), Node::Const { id, conj }) => match c.as_rational() {
                        Some(r) => {
                            *out = out.add(&QExp::sym(*id, *conj).scale(r));
                            Ok(())
                        }
                        None => Err(Error::BadExponent(
                            "exponents must be real rational combinations".into(),
                        )),
                    },
                    _ => Err(Error::BadExponent(format!(
                        "unsupported exponent term: {:?}",
                        e
                    ))),
                }
            }
            _ => Err(Error::BadExponent(format!("unsupported exponent: {:?}", e))),
        }
    }
    let mut out = QExp::zero();
    match e.node() {
        Node::Sum(xs) => {
            for x in xs {
                linear_term(x, &mut out)?;
            }
        }
        _ => linear_term(e, &mut out)?,
    }
    Ok(out)
}

/// Parse a scalar expression; the result is canonicalized.
pub fn parse(sp: &JetSpace, text: &str) -> Result<Expr> {
    let toks = lex(text)?;
    let mut p = Parser { sp, toks, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return p.err("unexpected trailing input");
    }
    e.canonicalize()
}

/// Parse a vector field: a sum of `coefficient * @direction` terms. Returns
/// (direction name, canonicalized coefficient) pairs in source order.
pub(crate) fn parse_vector_field(sp: &JetSpace, text: &str) -> Result<Vec<(String, Expr)>> {
    let toks = lex(text)?;
    let mut p = Parser { sp, toks, pos: 0 };
    let mut out: Vec<(String, Expr)> = Vec::new();
    let mut negate = false;
    if *p.peek() == Tok::Minus {
        p.bump();
        negate = true;
    }
    loop {
        // One term: factors and at most one @direction, joined by * or /.
        let mut coef: Vec<Expr> = Vec::new();
        let mut dir: Option<String> = None;
        let mut invert_next = false;
        loop {
            if *p.peek() == Tok::At {
                p.bump();
                if invert_next {
                    return p.err("a direction cannot appear under division");
                }
                if dir.is_some() {
                    return p.err("a term may contain only one direction");
                }
                match p.bump() {
                    Tok::Ident(d) => dir = Some(d),
                    _ => return p.err("expected a direction name after `@`"),
                }
            } else {
                let f = p.factor()?;
                coef.push(if invert_next { Expr::div(Expr::one(), f) } else { f });
                invert_next = false;
            }
            match p.peek() {
                Tok::Star => {
                    p.bump();
                }
                Tok::Slash => {
                    p.bump();
                    invert_next = true;
                }
                _ => break,
            }
        }
        let dir = match dir {
            Some(d) => d,
            None => return p.err("every term needs a `@direction`"),
        };
        let mut c = Expr::prod(coef);
        if negate {
            c = Expr::neg(c);
        }
        out.push((dir, c.canonicalize()?));
        match p.bump() {
            Tok::Plus => negate = false,
            Tok::Minus => negate = true,
            Tok::Eof => return Ok(out),
            _ => return p.err("expected `+`, `-`, or end of field"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp() -> JetSpace {
        let mut sp = JetSpace::schrodinger(2);
        sp.add_const("k", true);
        sp.add_const("gamma", true);
        sp.add_func("U1", 1);
        sp.add_func("F2", 4);
        sp
    }

    #[test]
    fn schrodinger_residual_parses() {
        let s = JetSpace::schrodinger(1);
        let got = parse(&s, "i*D(psi;t) + D(psi;x1,x1) + W*psi").unwrap();
        let by_name = parse(&s, "i*psi_t + psi_x1x1 + W*psi").unwrap();
        assert_eq!(got, by_name);
        assert!(parse(&s, "0").unwrap().is_zero());
    }

    #[test]
    fn example_potential_and_rational_powers() {
        let s = sp();
        let e = parse(&s, "1/(x1^2 + x2^2)").unwrap();
        let num = parse(&s, "(x1^2 + x2^2)^(-1)").unwrap();
        assert_eq!(e, num);
        // x^1/2 reads as x^(1/2), not (x^1)/2
        let r = parse(&s, "x1^1/2 * x1^3/2").unwrap();
        assert_eq!(r, parse(&s, "x1^2").unwrap());
    }

    #[test]
    fn symbolic_exponents_parse() {
        let s = sp();
        let e = parse(&s, "psi^(k/2) * cpsi^(k/2)").unwrap();
        let f = parse(&s, "(psi*cpsi)^((1/2)*k)").unwrap();
        assert_eq!(e, f);
    }

    #[test]
    fn function_symbols_and_derivative_markers() {
        let s = sp();
        let a = parse(&s, "U1''(t)").unwrap();
        let b = parse(&s, "U1[2](t)").unwrap();
        assert_eq!(a, b);
        let c = parse(&s, "F2[0,1,0,0](t, x1, psi, psi_x1)").unwrap();
        let d = parse(&s, "D(F2(t, x1, psi, psi_x1); x1) - psi_x1*F2[0,0,1,0](t,x1,psi,psi_x1) - psi_x1x1*F2[0,0,0,1](t,x1,psi,psi_x1)").unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn error_positions_and_kinds() {
        let s = sp();
        match parse(&s, "x1 + @") {
            Err(Error::Syntax { line: 1, col: 6, .. }) => {}
            other => panic!("expected a syntax error at 1:6, got {:?}", other),
        }
        assert!(matches!(parse(&s, "nosuch"), Err(Error::UnknownIdent(_))));
        assert!(matches!(
            parse(&s, "D(x1; t)"),
            Err(Error::DerivativeOfIndependent(_))
        ));
        assert!(matches!(
            parse(&s, "psi_tttttttttt"),
            Err(Error::OrderExceeded(_))
        ));
    }

    #[test]
    fn conj_and_trig_sugar() {
        let s = sp();
        let e = parse(&s, "conj(i*psi)").unwrap();
        let f = parse(&s, "-i*cpsi").unwrap();
        assert_eq!(e, f);
        let g = parse(&s, "sin(gamma*t)^2 + cos(gamma*t)^2").unwrap();
        assert!(g.is_one());
    }

    #[test]
    fn vector_field_terms() {
        let s = sp();
        let vf = parse_vector_field(
            &s,
            "t*@x1 + (i/2)*x1*psi*@psi - (i/2)*x1*cpsi*@cpsi",
        )
        .unwrap();
        assert_eq!(vf.len(), 3);
        assert_eq!(vf[0].0, "x1");
        assert_eq!(vf[0].1, parse(&s, "t").unwrap());
        assert_eq!(vf[2].0, "cpsi");
        assert_eq!(vf[2].1, parse(&s, "-i/2*x1*cpsi").unwrap());
    }
}
