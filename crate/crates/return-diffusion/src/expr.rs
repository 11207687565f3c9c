//! Tiny closed-form expression language for coefficient fields.
//!
//! Supports polynomials and powers in the coordinates `x`, `y` and the radius
//! `r` (also written `|x|`), e.g. `"-x"`, `"r^-1"`, `"2 + 0.5*|x|^2"`. This is
//! all the harness needs to express the shipped operators and small variants.

use crate::error::ExprError;
use crate::grid::Point;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    X,
    Y,
    Radius,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
}

impl Node {
    fn eval(&self, p: Point) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::X => p.x,
            Node::Y => p.y,
            Node::Radius => p.norm(),
            Node::Neg(a) => -a.eval(p),
            Node::Add(a, b) => a.eval(p) + b.eval(p),
            Node::Sub(a, b) => a.eval(p) - b.eval(p),
            Node::Mul(a, b) => a.eval(p) * b.eval(p),
            Node::Div(a, b) => a.eval(p) / b.eval(p),
            Node::Pow(a, b) => a.eval(p).powf(b.eval(p)),
        }
    }
}

/// A parsed expression; keeps its source text so configs round-trip verbatim.
#[derive(Debug, Clone)]
pub struct Expr {
    src: String,
    node: Node,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.src == other.src
    }
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ExprError> {
        let mut p = Parser { bytes: src.as_bytes(), pos: 0 };
        p.skip_ws();
        let node = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(p.err("trailing input"));
        }
        Ok(Expr { src: src.to_string(), node })
    }

    pub fn eval(&self, p: Point) -> f64 {
        self.node.eval(p)
    }

    pub fn source(&self) -> &str {
        &self.src
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.src)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let src = String::deserialize(d)?;
        Expr::parse(&src).map_err(D::Error::custom)
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> ExprError {
        ExprError { position: self.pos, message: message.to_string() }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ') | Some(b'\t')) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            if self.eat(b'+') {
                let rhs = self.term()?;
                lhs = Node::Add(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                lhs = Node::Sub(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            self.skip_ws();
            if self.eat(b'*') {
                let rhs = self.unary()?;
                lhs = Node::Mul(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'/') {
                let rhs = self.unary()?;
                lhs = Node::Div(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        self.skip_ws();
        if self.eat(b'-') {
            Ok(Node::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        self.skip_ws();
        if self.eat(b'^') {
            let exp = self.unary()?;
            Ok(Node::Pow(Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(self.err("expected `)`"));
                }
                Ok(inner)
            }
            Some(b'|') => {
                // `|x|` is the radius
                let rest = &self.bytes[self.pos..];
                if rest.starts_with(b"|x|") {
                    self.pos += 3;
                    Ok(Node::Radius)
                } else {
                    Err(self.err("expected `|x|`"))
                }
            }
            Some(b'x') => {
                self.pos += 1;
                Ok(Node::X)
            }
            Some(b'y') => {
                self.pos += 1;
                Ok(Node::Y)
            }
            Some(b'r') => {
                self.pos += 1;
                Ok(Node::Radius)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            _ => Err(self.err("expected number, coordinate, `r`, `|x|` or `(`")),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E') && self.pos > start {
                self.pos += 1;
                if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Node::Num)
            .map_err(|_| ExprError { position: start, message: format!("bad number `{text}`") })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Point;

    fn at(src: &str, x: f64, y: f64) -> f64 {
        Expr::parse(src).unwrap().eval(Point::new(x, y))
    }

    #[test]
    fn arithmetic_and_precedence() {
        assert_eq!(at("1 + 2*3", 0.0, 0.0), 7.0);
        assert_eq!(at("(1 + 2)*3", 0.0, 0.0), 9.0);
        assert_eq!(at("2^3", 0.0, 0.0), 8.0);
        assert_eq!(at("-x^2", 3.0, 0.0), -9.0); // unary minus binds looser than ^
        assert_eq!(at("1/2/2", 0.0, 0.0), 0.25);
    }

    #[test]
    fn coordinates_and_radius() {
        assert_eq!(at("x", 2.0, 5.0), 2.0);
        assert_eq!(at("y", 2.0, 5.0), 5.0);
        assert_eq!(at("r", 3.0, 4.0), 5.0);
        assert_eq!(at("|x|", 3.0, 4.0), 5.0);
        assert!((at("|x|^-1", 2.0, 0.0) - 0.5).abs() < 1e-15);
        assert_eq!(at("-x", 2.0, 0.0), -2.0);
    }

    #[test]
    fn rejects_junk() {
        assert!(Expr::parse("x +").is_err());
        assert!(Expr::parse("foo").is_err());
        assert!(Expr::parse("1 2").is_err());
        assert!(Expr::parse("|y|").is_err());
    }

    #[test]
    fn source_round_trip() {
        let e = Expr::parse(" 2 + 0.5*|x|^2 ").unwrap();
        assert_eq!(e.source(), " 2 + 0.5*|x|^2 ");
        let back = Expr::parse(e.source()).unwrap();
        assert_eq!(e, back);
    }
}
