//! Label-mapping expressions for `--map`, e.g. `g->floor((g-1)/2)+1`.
//!
//! Grammar: `[var "->"] expr` where expr uses numbers, the variable,
//! `+ - * / %`, unary minus, parentheses and the functions `floor`, `ceil`,
//! `round`, `abs`, `min`, `max`.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub struct MapError(String);

impl fmt::Display for MapError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bad --map expression: {}", self.0)
    }
}

impl std::error::Error for MapError {}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Num(f64),
    Var,
    Neg(Box<Expr>),
    Bin(char, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    expr: Expr,
}

impl LabelMap {
    pub fn parse(src: &str) -> Result<Self, MapError> {
        let (var, body) = match src.split_once("->") {
            Some((v, b)) => (v.trim(), b),
            None => ("g", src),
        };
        if var.is_empty() || !var.chars().all(|c| c.is_ascii_alphabetic() || c == '_') {
            return Err(MapError(format!("invalid variable name {var:?}")));
        }
        let mut p = Parser {
            src: body.as_bytes(),
            pos: 0,
            var,
        };
        let expr = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(MapError(format!("unexpected input at {:?}", &body[p.pos..])));
        }
        Ok(Self { expr })
    }

    /// Image of `g`; `None` if the result is not a finite integer.
    pub fn apply(&self, g: i64) -> Option<i64> {
        let v = eval(&self.expr, g as f64)?;
        (v.is_finite() && v.fract() == 0.0 && v.abs() < 9.0e15).then_some(v as i64)
    }
}

fn eval(e: &Expr, g: f64) -> Option<f64> {
    Some(match e {
        Expr::Num(x) => *x,
        Expr::Var => g,
        Expr::Neg(a) => -eval(a, g)?,
        Expr::Bin(op, a, b) => {
            let (x, y) = (eval(a, g)?, eval(b, g)?);
            match op {
                '+' => x + y,
                '-' => x - y,
                '*' => x * y,
                '/' if y == 0.0 => return None,
                '/' => x / y,
                '%' if y == 0.0 => return None,
                '%' => x.rem_euclid(y),
                _ => unreachable!("parser only produces known operators"),
            }
        }
        Expr::Call(name, args) => {
            let v: Option<Vec<f64>> = args.iter().map(|a| eval(a, g)).collect();
            let v = v?;
            match name.as_str() {
                "floor" => v[0].floor(),
                "ceil" => v[0].ceil(),
                "round" => v[0].round(),
                "abs" => v[0].abs(),
                "min" => v[0].min(v[1]),
                "max" => v[0].max(v[1]),
                _ => unreachable!("parser only produces known functions"),
            }
        }
    })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    var: &'a str,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), MapError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(MapError(format!("expected '{}'", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, MapError> {
        let mut lhs = self.term()?;
        while let Some(c @ (b'+' | b'-')) = self.peek() {
            self.pos += 1;
            lhs = Expr::Bin(c as char, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, MapError> {
        let mut lhs = self.unary()?;
        while let Some(c @ (b'*' | b'/' | b'%')) = self.peek() {
            self.pos += 1;
            lhs = Expr::Bin(c as char, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, MapError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, MapError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let start = self.pos;
                while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
                    self.pos += 1;
                }
                let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
                text.parse()
                    .map(Expr::Num)
                    .map_err(|_| MapError(format!("bad number {text:?}")))
            }
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii identifier");
                if name == self.var {
                    return Ok(Expr::Var);
                }
                let arity = match name {
                    "floor" | "ceil" | "round" | "abs" => 1,
                    "min" | "max" => 2,
                    _ => return Err(MapError(format!("unknown name {name:?}"))),
                };
                self.expect(b'(')?;
                let mut args = vec![self.expr()?];
                while self.peek() == Some(b',') {
                    self.pos += 1;
                    args.push(self.expr()?);
                }
                self.expect(b')')?;
                if args.len() != arity {
                    return Err(MapError(format!("{name} takes {arity} argument(s)")));
                }
                Ok(Expr::Call(name.to_owned(), args))
            }
            Some(c) => Err(MapError(format!("unexpected '{}'", c as char))),
            None => Err(MapError("unexpected end of expression".into())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_of_grades() {
        let m = LabelMap::parse("g->floor((g-1)/2)+1").unwrap();
        let out: Vec<_> = (1..=6).map(|g| m.apply(g).unwrap()).collect();
        assert_eq!(out, [1, 1, 2, 2, 3, 3]);
    }

    #[test]
    fn threshold_and_precedence() {
        let m = LabelMap::parse("x -> min(floor(x / 6), 1) + 1").unwrap();
        assert_eq!(m.apply(5), Some(1));
        assert_eq!(m.apply(11), Some(2));
        assert_eq!(LabelMap::parse("2+3*g").unwrap().apply(2), Some(8));
        assert_eq!(LabelMap::parse("-(g-4)%3").unwrap().apply(2), Some(2));
        assert_eq!(LabelMap::parse("g % 3").unwrap().apply(-1), Some(2));
    }

    #[test]
    fn non_integer_or_undefined_results() {
        assert_eq!(LabelMap::parse("g/2").unwrap().apply(3), None);
        assert_eq!(LabelMap::parse("g/(g-1)").unwrap().apply(1), None);
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["g->", "g->h+1", "g->floor(g", "g->max(g)", "g->g+", "1g->g", "g->g)"] {
            assert!(LabelMap::parse(bad).is_err(), "{bad}");
        }
    }
}
