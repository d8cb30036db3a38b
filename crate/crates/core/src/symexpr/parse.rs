use num_bigint::BigInt;
use num_traits::{One, Zero};

use super::{Atom, Expr, FlatArg, Q};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(Q),
    Ident(String),
    Op(char),
}

fn lex(s: &str) -> Result<Vec<(usize, Tok)>> {
    let b = s.as_bytes();
    let mut i = 0;
    let mut out = vec![];
    while i < b.len() {
        let c = b[i] as char;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && i + 1 < b.len() && (b[i + 1] as char).is_ascii_digit()) {
            let start = i;
            while i < b.len() && (b[i] as char).is_ascii_digit() {
                i += 1;
            }
            let int_part = &s[start..i];
            let mut frac = "";
            if i < b.len() && b[i] == b'.' {
                i += 1;
                let fs = i;
                while i < b.len() && (b[i] as char).is_ascii_digit() {
                    i += 1;
                }
                frac = &s[fs..i];
            }
            let digits = format!("{int_part}{frac}");
            let n: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().unwrap() };
            let d = BigInt::from(10).pow(frac.len() as u32);
            out.push((start, Tok::Num(Q::new(n, d))));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(s[start..i].to_string())));
        } else if "+-*/^();>".contains(c) {
            out.push((i, Tok::Op(c)));
            i += 1;
        } else {
            return Err(Error::Parse { pos: i, msg: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    names: &'a [String],
    len: usize,
}

impl<'a> Parser<'a> {
    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len, |t| t.0)
    }
    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { pos: self.here(), msg: msg.into() })
    }
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }
    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }
    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected `{c}`"))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut acc = self.term()?;
        loop {
            if self.eat('+') {
                acc = &acc + &self.term()?;
            } else if self.eat('-') {
                acc = &acc - &self.term()?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut acc = self.unary()?;
        loop {
            if self.eat('*') {
                acc = &acc * &self.unary()?;
            } else if self.eat('/') {
                let at = self.here();
                let d = self.unary()?;
                acc = acc.div(&d).map_err(|_| Error::Parse { pos: at, msg: "division by zero".into() })?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(-self.unary()?);
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn int_exponent(&mut self) -> Result<i64> {
        let paren = self.eat('(');
        let neg = self.eat('-');
        let v = match self.peek() {
            Some(Tok::Num(n)) if n.is_integer() => {
                let v: i64 = n.numer().try_into().map_err(|_| Error::Parse { pos: self.here(), msg: "exponent too large".into() })?;
                self.pos += 1;
                v
            }
            _ => return self.err("expected an integer exponent"),
        };
        if paren {
            self.expect(')')?;
        }
        Ok(if neg { -v } else { v })
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat('^') {
            let at = self.here();
            let k = self.int_exponent()?;
            return base.pow(k).map_err(|_| Error::Parse { pos: at, msg: "negative power of zero".into() });
        }
        Ok(base)
    }

    fn signed_rational(&mut self) -> Result<Q> {
        let neg = self.eat('-');
        let mut v = match self.peek() {
            Some(Tok::Num(n)) => {
                let n = n.clone();
                self.pos += 1;
                n
            }
            _ => return self.err("expected a number"),
        };
        if self.eat('/') {
            match self.peek() {
                Some(Tok::Num(d)) if !d.is_zero() => {
                    v /= d.clone();
                    self.pos += 1;
                }
                _ => return self.err("expected a nonzero denominator"),
            }
        }
        Ok(if neg { -v } else { v })
    }

    fn coord_name(&mut self) -> Result<usize> {
        match self.peek() {
            Some(Tok::Ident(s)) => match self.names.iter().position(|n| n == s) {
                Some(i) => {
                    self.pos += 1;
                    Ok(i)
                }
                None => self.err(format!("unknown coordinate `{s}`")),
            },
            _ => self.err("expected a coordinate name"),
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(n)) => {
                self.pos += 1;
                Ok(Expr::constant(n))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(id)) => {
                let start = self.here();
                self.pos += 1;
                match id.as_str() {
                    "pi" => Ok(Expr::pi()),
                    "exp" | "sin" | "cos" | "recip" | "flatplus" => {
                        self.expect('(')?;
                        let arg = self.expr()?;
                        self.expect(')')?;
                        match id.as_str() {
                            "exp" => Ok(Expr::exp(arg)),
                            "sin" => Ok(Expr::sin(arg)),
                            "cos" => Ok(Expr::cos(arg)),
                            "recip" => arg.recip().map_err(|_| Error::Parse { pos: start, msg: "recip of zero".into() }),
                            _ => flat_from_arg(&arg)
                                .map(Expr::flat)
                                .ok_or_else(|| Error::Parse { pos: start, msg: "flatplus argument must be ±coordinate + constant".into() }),
                        }
                    }
                    "piecewise" => {
                        self.expect('(')?;
                        let var = self.coord_name()?;
                        self.expect('>')?;
                        let thr = self.signed_rational()?;
                        self.expect(';')?;
                        let above = self.expr()?;
                        self.expect(';')?;
                        let below = self.expr()?;
                        self.expect(')')?;
                        Ok(Expr::piecewise(var, thr, above, below))
                    }
                    _ => match self.names.iter().position(|n| *n == id) {
                        Some(i) => Ok(Expr::coord(i)),
                        None => Err(Error::Parse { pos: start, msg: format!("unknown identifier `{id}`") }),
                    },
                }
            }
            Some(Tok::Op(c)) => self.err(format!("unexpected `{c}`")),
            None => self.err("unexpected end of input"),
        }
    }
}

/// Recognize `±x_i + c` as a flat-function argument.
pub(crate) fn flat_from_arg(arg: &Expr) -> Option<FlatArg> {
    let mut var = None;
    let mut slope = Q::zero();
    let mut constant = Q::zero();
    for (m, c) in arg.terms() {
        if m.is_one() {
            constant = c.clone();
            continue;
        }
        let mut it = m.atoms();
        match (it.next(), it.next()) {
            (Some((Atom::Coord(i), 1)), None) if var.is_none() => {
                var = Some(*i);
                slope = c.clone();
            }
            _ => return None,
        }
    }
    let var = var?;
    let neg = if slope.is_one() {
        false
    } else if slope == -Q::one() {
        true
    } else {
        return None;
    };
    // u = a x + b = a (x - c) with c = -b / a = -b a
    let shift = if neg { constant } else { -constant };
    Some(FlatArg { var, neg, shift })
}

pub(crate) fn parse(s: &str, names: &[String]) -> Result<Expr> {
    let toks = lex(s)?;
    let mut p = Parser { toks, pos: 0, names, len: s.len() };
    if p.toks.is_empty() {
        return Err(Error::Parse { pos: 0, msg: "empty expression".into() });
    }
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::Chart;

    fn c2() -> Chart {
        Chart::new(&["x", "y"], None).unwrap()
    }

    #[test]
    fn parse_basic() {
        let c = c2();
        let e = Expr::parse("x*y + y*x", &c).unwrap();
        assert_eq!(e, Expr::parse("2*x*y", &c).unwrap());
        assert_eq!(Expr::parse("x^-2", &c).unwrap(), Expr::coord_power(&[-2]));
        assert_eq!(Expr::parse("0.5*x", &c).unwrap(), Expr::parse("1/2*x", &c).unwrap());
        assert_eq!(Expr::parse("-x^2", &c).unwrap(), -(Expr::coord(0) * Expr::coord(0)));
        assert!(Expr::parse("x +", &c).is_err());
        assert!(Expr::parse("t", &c).is_err());
        assert!(Expr::parse("1/0", &c).is_err());
        assert!(Expr::parse("flatplus(2*x)", &c).is_err());
    }

    #[test]
    fn roundtrip_samples() {
        let c = c2();
        for s in [
            "x^2 + y^2",
            "-1/2*y",
            "flatplus(x)",
            "flatplus(x)^2*x^-2",
            "flatplus(-x + 1)*flatplus(x + 1)",
            "exp(3/4*x^-1)*flatplus(x)",
            "recip(x^2 + 1)",
            "piecewise(x > -1/2; x*y; 0)",
            "sin(pi*x)*cos(y) + 3",
            "x*recip(x + y)^2 - 7/3",
        ] {
            let e = Expr::parse(s, &c).unwrap();
            let t = e.render(&c);
            let back = Expr::parse(&t, &c).unwrap();
            assert_eq!(e, back, "{s} -> {t}");
        }
    }
}
