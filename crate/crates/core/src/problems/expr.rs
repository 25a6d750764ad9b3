//! Infix polynomial expressions: `+ - * / ^`, parentheses, numeric literals
//! and declared variable names. Division is only by constants and exponents
//! are non-negative integer literals.

use crate::fieldalg::Polynomial;

#[derive(Debug, Clone, PartialEq)]
pub struct ExprError {
    /// Zero-based character offset into the expression.
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
}

fn lex(src: &str) -> Result<Lexer, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| ExprError {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            toks.push((Tok::Num(v), start));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            toks.push((Tok::Ident(chars[start..i].iter().collect()), start));
        } else if "+-*/^()".contains(c) {
            toks.push((Tok::Op(c), i));
            i += 1;
        } else {
            return Err(ExprError {
                offset: i,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    toks.push((Tok::End, chars.len()));
    Ok(Lexer { toks })
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    vars: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Polynomial, ExprError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Tok::Op('+') => {
                    self.pos += 1;
                    acc = &acc + &self.term()?;
                }
                Tok::Op('-') => {
                    self.pos += 1;
                    acc = &acc - &self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial, ExprError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Tok::Op('*') => {
                    self.pos += 1;
                    acc = &acc * &self.unary()?;
                }
                Tok::Op('/') => {
                    self.pos += 1;
                    let at = self.offset();
                    let d = self.unary()?;
                    match d.as_constant() {
                        Some(c) if c != 0.0 => acc = acc.scale(1.0 / c),
                        Some(_) => {
                            return Err(ExprError {
                                offset: at,
                                message: "division by zero".into(),
                            })
                        }
                        None => {
                            return Err(ExprError {
                                offset: at,
                                message: "division is only allowed by a constant".into(),
                            })
                        }
                    }
                }
                _ => return Ok(acc),
            }
        }
    }

    fn unary(&mut self) -> Result<Polynomial, ExprError> {
        match self.peek() {
            Tok::Op('-') => {
                self.pos += 1;
                Ok(-self.unary()?)
            }
            Tok::Op('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Polynomial, ExprError> {
        let base = self.primary()?;
        if *self.peek() != Tok::Op('^') {
            return Ok(base);
        }
        self.pos += 1;
        match *self.peek() {
            Tok::Num(v) if v >= 0.0 && v.fract() == 0.0 && v <= 64.0 => {
                self.pos += 1;
                Ok(base.pow(v as u32))
            }
            _ => self.err("exponent must be a non-negative integer literal"),
        }
    }

    fn primary(&mut self) -> Result<Polynomial, ExprError> {
        let n = self.vars.len();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Polynomial::constant(n, v))
            }
            Tok::Ident(name) => match self.vars.iter().position(|v| *v == name) {
                Some(i) => {
                    self.pos += 1;
                    Ok(Polynomial::variable(n, i))
                }
                None => self.err(format!("unknown identifier `{name}`")),
            },
            Tok::Op('(') => {
                self.pos += 1;
                let e = self.expr()?;
                if *self.peek() != Tok::Op(')') {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                Ok(e)
            }
            Tok::End => self.err("unexpected end of expression"),
            Tok::Op(c) => self.err(format!("unexpected `{c}`")),
        }
    }
}

/// Parses `src` as a polynomial in the variables `vars` (in order).
pub fn parse_polynomial(src: &str, vars: &[String]) -> Result<Polynomial, ExprError> {
    let lexer = lex(src)?;
    let mut p = Parser {
        toks: lexer.toks,
        pos: 0,
        vars,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return p.err("unexpected trailing input");
    }
    Ok(e)
}

/// `x1, ..., xn`.
pub fn default_variables(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("x{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars() -> Vec<String> {
        default_variables(3)
    }

    #[test]
    fn precedence_and_powers() {
        let p = parse_polynomial("-x1 + x2*(1 - x1^2) + 1", &vars()).unwrap();
        let x = [0.5, -2.0, 9.0];
        assert_eq!(p.eval(&x), -0.5 + -2.0 * (1.0 - 0.25) + 1.0);
        let q = parse_polynomial("(x1^2 + x2^2)/2", &vars()).unwrap();
        assert_eq!(q.eval(&x), (0.25 + 4.0) / 2.0);
        let r = parse_polynomial("-x1^2", &vars()).unwrap();
        assert_eq!(r.eval(&x), -0.25);
        let s = parse_polynomial("2.5e-1*x3 - .5", &vars()).unwrap();
        assert_eq!(s.eval(&x), 0.25 * 9.0 - 0.5);
    }

    #[test]
    fn display_round_trips() {
        let p = parse_polynomial("0.1*x1^3*x2 - x3/3 + 7e-12", &vars()).unwrap();
        let back = parse_polynomial(&p.to_string(), &vars()).unwrap();
        assert_eq!(p, back);
    }

    #[test]
    fn errors_carry_offsets() {
        let e = parse_polynomial("x1 + y", &vars()).unwrap_err();
        assert_eq!(e.offset, 5);
        assert!(e.message.contains("unknown identifier"));
        let e = parse_polynomial("x1 / x2", &vars()).unwrap_err();
        assert_eq!(e.offset, 5);
        let e = parse_polynomial("x1^x2", &vars()).unwrap_err();
        assert_eq!(e.offset, 3);
        let e = parse_polynomial("(x1 + 1", &vars()).unwrap_err();
        assert_eq!(e.offset, 7);
        assert!(parse_polynomial("x1 $", &vars()).is_err());
        assert!(parse_polynomial("", &vars()).is_err());
    }

    #[test]
    fn custom_names() {
        let v: Vec<String> = ["q", "v"].iter().map(|s| s.to_string()).collect();
        let p = parse_polynomial("q*v - v", &v).unwrap();
        assert_eq!(p.eval(&[2.0, 3.0]), 3.0);
    }
}
