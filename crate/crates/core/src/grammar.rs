//! Textual function specifiers.
//!
//! ```text
//! fourier:p=1            iexp:u=0.5,1.0          const:1      const:0,1 (complex)
//! prod(f;g)  sum(f;g)    re(f)  im(f)            scale[c](f)
//! poly[c0,c1,..](f)      sin(f) cos(f) exp(f)    affine[w1,..;b](f1;..)   mul(f1;..)
//! intexp:f=pw[0:0.5=1;0.5:1=-1]   intexp:f=1   intexp:f=poly[0,1]+sin[1,6.28,0]
//! margexp:t=0.25,0.5,u=1,-2       pexp(f)
//! ```
//! Arguments may be separated by `;` or `,`. A Unicode minus sign is accepted.

use crate::algebra::{CylindricalFunction, Integrand, Observable, OuterFn, Piece, TestFunction};
use crate::types::{ComplexValue, Error, Result};

pub fn parse_observable(input: &str) -> Result<Observable> {
    let mut p = Parser::new(input);
    let o = p.observable()?;
    p.finish()?;
    o.validate().map_err(|e| p.error_at(0, &e.to_string()))?;
    Ok(o)
}

pub fn parse_test_function(input: &str) -> Result<TestFunction> {
    match parse_observable(input)? {
        Observable::Point(f) => Ok(f),
        other => Err(Error::Parse {
            input: input.to_string(),
            position: 0,
            message: format!("`{other}` is not a pointwise test function"),
        }),
    }
}

pub fn parse_integrand(input: &str) -> Result<Integrand> {
    let mut p = Parser::new(input);
    let f = p.integrand()?;
    p.finish()?;
    Ok(f)
}

struct Parser {
    original: String,
    chars: Vec<char>,
    pos: usize,
}

impl Parser {
    fn new(input: &str) -> Self {
        let chars = input.chars().filter(|c| !c.is_whitespace()).map(|c| if c == '−' { '-' } else { c }).collect();
        Parser { original: input.to_string(), chars, pos: 0 }
    }

    fn error_at(&self, position: usize, message: &str) -> Error {
        Error::Parse { input: self.original.clone(), position, message: message.to_string() }
    }

    fn error(&self, message: &str) -> Error {
        self.error_at(self.pos, message)
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.chars.len() {
            Ok(())
        } else {
            Err(self.error("unexpected trailing input"))
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn eat(&mut self, token: &str) -> bool {
        let t: Vec<char> = token.chars().collect();
        if self.chars[self.pos..].starts_with(&t) {
            self.pos += t.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<()> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.error(&format!("expected `{token}`")))
        }
    }

    fn number_starts(&self) -> bool {
        matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.')
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        if matches!(self.peek(), Some('-') | Some('+')) {
            self.pos += 1;
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '.') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some('e') | Some('E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('-') | Some('+')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>().map_err(|_| self.error_at(start, &format!("invalid number `{text}`")))
    }

    fn integer(&mut self) -> Result<i64> {
        let start = self.pos;
        let x = self.number()?;
        if x.fract() != 0.0 || x.abs() > 1e15 {
            return Err(self.error_at(start, "expected an integer"));
        }
        Ok(x as i64)
    }

    /// Comma separated numbers, stopping before a comma that does not start a number.
    fn numbers(&mut self) -> Result<Vec<f64>> {
        let mut out = vec![self.number()?];
        loop {
            let save = self.pos;
            if self.eat(",") && self.number_starts() {
                out.push(self.number()?);
            } else {
                self.pos = save;
                return Ok(out);
            }
        }
    }

    fn complex(&mut self) -> Result<ComplexValue> {
        let v = self.numbers()?;
        match v.as_slice() {
            [re] => Ok(ComplexValue::new(*re, 0.0)),
            [re, im] => Ok(ComplexValue::new(*re, *im)),
            _ => Err(self.error("expected a real number or a `re,im` pair")),
        }
    }

    fn arguments(&mut self) -> Result<Vec<Observable>> {
        let mut out = vec![self.observable()?];
        while self.eat(";") || self.eat(",") {
            out.push(self.observable()?);
        }
        self.expect(")")?;
        Ok(out)
    }

    fn point_arguments(&mut self) -> Result<Vec<TestFunction>> {
        let start = self.pos;
        self.arguments()?
            .into_iter()
            .map(|o| match o {
                Observable::Point(f) => Ok(f),
                _ => Err(self.error_at(start, "outer functions apply to pointwise test functions only")),
            })
            .collect()
    }

    fn composite(&mut self, outer: OuterFn) -> Result<Observable> {
        let args = self.point_arguments()?;
        if args.len() != outer.arity() {
            return Err(self.error(&format!("`{outer}` takes {} argument(s), got {}", outer.arity(), args.len())));
        }
        Ok(Observable::Point(TestFunction::Composite { outer, args }))
    }

    fn observable(&mut self) -> Result<Observable> {
        let start = self.pos;
        if self.eat("fourier:") {
            self.expect("p=")?;
            return Ok(Observable::Point(TestFunction::Fourier(self.integer()?)));
        }
        if self.eat("iexp:") {
            self.expect("u=")?;
            return Ok(Observable::Point(TestFunction::ImaginaryExp(self.numbers()?)));
        }
        if self.eat("const:") {
            return Ok(Observable::Point(TestFunction::Constant(self.complex()?)));
        }
        if self.eat("intexp:") {
            self.expect("f=")?;
            return Ok(Observable::Cylinder(CylindricalFunction::IntegralExp(self.integrand()?)));
        }
        if self.eat("margexp:") {
            self.expect("t=")?;
            let times = self.numbers()?;
            self.expect(",u=")?;
            let weights = self.numbers()?;
            return Ok(Observable::Cylinder(CylindricalFunction::MarginalExp { times, weights }));
        }
        if self.eat("pexp(") {
            let mut args = self.point_arguments()?;
            if args.len() != 1 {
                return Err(self.error_at(start, "pexp takes one mark function"));
            }
            return Ok(Observable::Cylinder(CylindricalFunction::PointExp(args.remove(0))));
        }
        if self.eat("prod(") {
            let args = self.arguments()?;
            return Ok(if args.iter().all(|a| matches!(a, Observable::Point(_))) {
                Observable::Point(TestFunction::Product(args.into_iter().map(into_point).collect()))
            } else {
                Observable::Product(args)
            });
        }
        if self.eat("sum(") {
            let args = self.arguments()?;
            return Ok(if args.iter().all(|a| matches!(a, Observable::Point(_))) {
                Observable::Point(TestFunction::Sum(args.into_iter().map(into_point).collect()))
            } else {
                Observable::Sum(args)
            });
        }
        if self.eat("re(") {
            let f = self.single_point()?;
            return Ok(Observable::Point(f.re()));
        }
        if self.eat("im(") {
            let f = self.single_point()?;
            return Ok(Observable::Point(f.im()));
        }
        if self.eat("scale[") {
            let c = self.complex()?;
            self.expect("](")?;
            let mut args = self.arguments()?;
            if args.len() != 1 {
                return Err(self.error_at(start, "scale takes one argument"));
            }
            return Ok(args.remove(0).scaled(c));
        }
        if self.eat("poly[") {
            let c = self.numbers()?;
            self.expect("](")?;
            return self.composite(OuterFn::Polynomial(c));
        }
        if self.eat("sin(") {
            return self.composite(OuterFn::Sin);
        }
        if self.eat("cos(") {
            return self.composite(OuterFn::Cos);
        }
        if self.eat("exp(") {
            return self.composite(OuterFn::Exp);
        }
        if self.eat("affine[") {
            let weights = self.numbers()?;
            self.expect(";")?;
            let offset = self.number()?;
            self.expect("](")?;
            return self.composite(OuterFn::Affine { weights, offset });
        }
        if self.eat("mul(") {
            let save = self.pos;
            let args = self.point_arguments()?;
            let k = args.len();
            self.pos = save;
            return self.composite(OuterFn::Product(k));
        }
        Err(self.error("unknown function specifier"))
    }

    fn single_point(&mut self) -> Result<TestFunction> {
        let start = self.pos;
        let mut args = self.point_arguments()?;
        if args.len() != 1 {
            return Err(self.error_at(start, "expected exactly one argument"));
        }
        Ok(args.remove(0))
    }

    fn integrand(&mut self) -> Result<Integrand> {
        let mut terms = vec![self.integrand_term()?];
        while self.eat("+") {
            terms.push(self.integrand_term()?);
        }
        Ok(if terms.len() == 1 { terms.remove(0) } else { Integrand::Sum(terms) })
    }

    fn integrand_term(&mut self) -> Result<Integrand> {
        if self.eat("pw[") {
            let mut pieces = Vec::new();
            loop {
                let from = self.number()?;
                self.expect(":")?;
                let to = self.number()?;
                self.expect("=")?;
                let value = self.number()?;
                pieces.push(Piece { from, to, value });
                if !self.eat(";") {
                    break;
                }
            }
            self.expect("]")?;
            return Ok(Integrand::Piecewise(pieces));
        }
        if self.eat("poly[") {
            let c = self.numbers()?;
            self.expect("]")?;
            return Ok(Integrand::Polynomial(c));
        }
        for (tag, sine) in [("sin[", true), ("cos[", false)] {
            if self.eat(tag) {
                let v = self.numbers()?;
                self.expect("]")?;
                let [amp, freq, phase] = v[..] else {
                    return Err(self.error("trigonometric integrand takes amp,freq,phase"));
                };
                return Ok(if sine {
                    Integrand::Sine { amp, freq, phase }
                } else {
                    Integrand::Cosine { amp, freq, phase }
                });
            }
        }
        if self.number_starts() {
            return Ok(Integrand::constant(self.number()?));
        }
        Err(self.error("unknown integrand"))
    }
}

fn into_point(o: Observable) -> TestFunction {
    match o {
        Observable::Point(f) => f,
        _ => unreachable!("checked by caller"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_forms_parse() {
        assert_eq!(parse_observable("fourier:p=1").unwrap(), Observable::fourier(1));
        assert_eq!(parse_observable("iexp:u=0.5,1.0").unwrap(), Observable::iexp(&[0.5, 1.0]));
        assert_eq!(parse_observable("const:1").unwrap(), Observable::constant(1.0));
        let pw = parse_observable("intexp:f=pw[0:0.5=1;0.5:1=−1]").unwrap();
        assert_eq!(
            pw,
            Observable::integral_exp(Integrand::Piecewise(vec![
                Piece { from: 0.0, to: 0.5, value: 1.0 },
                Piece { from: 0.5, to: 1.0, value: -1.0 },
            ]))
        );
        assert_eq!(parse_observable("margexp:t=0.5,u=2").unwrap(), Observable::marginal_exp(&[0.5], &[2.0]));
    }

    #[test]
    fn nested_forms_parse() {
        let f = parse_observable("prod(fourier:p=1,iexp:u=2,fourier:p=-1)").unwrap();
        assert_eq!(
            f,
            Observable::Point(TestFunction::Product(vec![
                TestFunction::Fourier(1),
                TestFunction::ImaginaryExp(vec![2.0]),
                TestFunction::Fourier(-1),
            ]))
        );
        let g = parse_test_function("poly[0,0,1](re(fourier:p=1))").unwrap();
        assert!((g.eval1(0.0).re - 1.0).abs() < 1e-15);
        let h = parse_observable("prod(intexp:f=1;margexp:t=0.25,0.5,u=1,2)").unwrap();
        assert!(matches!(h, Observable::Product(_)));
        let k = parse_observable("intexp:f=poly[0,1]+sin[1,6.2,0]+0.5").unwrap();
        assert!(matches!(k, Observable::Cylinder(CylindricalFunction::IntegralExp(Integrand::Sum(_)))));
        let a = parse_test_function("affine[1,2;0.5](fourier:p=1;re(fourier:p=2))").unwrap();
        assert_eq!(a.dim(), Some(1));
        let c = parse_test_function("const:0,1").unwrap();
        assert_eq!(c, TestFunction::Constant(ComplexValue::new(0.0, 1.0)));
    }

    #[test]
    fn display_round_trips() {
        for s in [
            "fourier:p=-2",
            "iexp:u=0.5,1",
            "prod(fourier:p=1;fourier:p=-1)",
            "sin(re(fourier:p=1))",
            "intexp:f=pw[0:0.5=1;0.5:1=-1]",
            "margexp:t=0.25,0.5,u=1,-2",
            "pexp(cos(iexp:u=0))",
            "scale[2](fourier:p=1)",
            "intexp:f=poly[0,1]+cos[1,3,0.5]",
        ] {
            let o = parse_observable(s).unwrap();
            assert_eq!(parse_observable(&o.to_string()).unwrap(), o, "{s}");
        }
    }

    #[test]
    fn errors_carry_positions() {
        match parse_observable("prod(fourier:p=1;bogus)") {
            Err(Error::Parse { position, .. }) => assert_eq!(position, 17),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_observable("fourier:p=1.5").is_err());
        assert!(parse_observable("sin(fourier:p=1;fourier:p=2)").is_err());
        assert!(parse_observable("fourier:p=1)").is_err());
    }
}
