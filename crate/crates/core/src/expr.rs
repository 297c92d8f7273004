//! Small closed expression language for Lagrangians and obstacles.
//!
//! Grammar: numbers, `+ - * / ^`, parentheses, the variables `x`, `u`, `v`
//! and the functions `sin cos exp log sqrt abs pow min max`. `^` is right
//! associative and binds tighter than unary minus, so `-v^2` is `-(v^2)`.
//!
//! Expressions can be differentiated symbolically with respect to any of the
//! three variables; the result is again an [`Expr`].

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown identifier `{name}` at column {column}")]
    UnknownIdentifier { name: String, column: usize },
}

impl ExprError {
    /// Shift the reported position, used when the expression sits inside a larger file.
    pub fn at_line(self, line: usize, column_offset: usize) -> Self {
        match self {
            ExprError::Parse {
                column, message, ..
            } => ExprError::Parse {
                line,
                column: column + column_offset,
                message,
            },
            ExprError::UnknownIdentifier { name, column } => ExprError::Parse {
                line,
                column: column + column_offset,
                message: format!("unknown identifier `{name}`"),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    U,
    V,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::X => "x",
            Var::U => "u",
            Var::V => "v",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    Pow,
    Min,
    Max,
    // Internal, produced by differentiation only.
    Sign,
    Step,
}

impl Func {
    fn lookup(name: &str) -> Option<(Func, usize)> {
        Some(match name {
            "sin" => (Func::Sin, 1),
            "cos" => (Func::Cos, 1),
            "exp" => (Func::Exp, 1),
            "log" => (Func::Log, 1),
            "sqrt" => (Func::Sqrt, 1),
            "abs" => (Func::Abs, 1),
            "pow" => (Func::Pow, 2),
            "min" => (Func::Min, 2),
            "max" => (Func::Max, 2),
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Pow => "pow",
            Func::Min => "min",
            Func::Max => "max",
            Func::Sign => "sign",
            Func::Step => "step",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Var),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A parsed expression together with its source text.
#[derive(Debug, Clone)]
pub struct Expr {
    root: Arc<Node>,
    source: String,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Expr {
    /// Parse `src`, accepting only the variables listed in `allowed`.
    pub fn parse(src: &str, allowed: &[Var]) -> Result<Self, ExprError> {
        let tokens = tokenize(src)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            allowed,
        };
        let node = p.expr()?;
        if let Some(tok) = p.tokens.get(p.pos) {
            return Err(parse_err(tok.column, "unexpected trailing input"));
        }
        Ok(Expr {
            root: Arc::new(simplify(node)),
            source: src.trim().to_string(),
        })
    }

    pub fn constant(c: f64) -> Self {
        Expr {
            root: Arc::new(Node::Num(c)),
            source: format!("{c}"),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn node(&self) -> &Node {
        &self.root
    }

    pub fn uses(&self, var: Var) -> bool {
        uses(&self.root, var)
    }

    pub fn eval(&self, x: f64, u: f64, v: f64) -> f64 {
        eval(&self.root, [x, u, v])
    }

    /// Symbolic partial derivative with respect to `var`.
    pub fn derivative(&self, var: Var) -> Expr {
        let d = simplify(diff(&self.root, var));
        let source = format!("d/d{}[{}]", var.name(), self.source);
        Expr {
            root: Arc::new(d),
            source,
        }
    }
}

fn uses(n: &Node, var: Var) -> bool {
    match n {
        Node::Num(_) => false,
        Node::Var(w) => *w == var,
        Node::Neg(a) => uses(a, var),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
            uses(a, var) || uses(b, var)
        }
        Node::Call(_, args) => args.iter().any(|a| uses(a, var)),
    }
}

fn eval(n: &Node, vars: [f64; 3]) -> f64 {
    match n {
        Node::Num(c) => *c,
        Node::Var(Var::X) => vars[0],
        Node::Var(Var::U) => vars[1],
        Node::Var(Var::V) => vars[2],
        Node::Neg(a) => -eval(a, vars),
        Node::Add(a, b) => eval(a, vars) + eval(b, vars),
        Node::Sub(a, b) => eval(a, vars) - eval(b, vars),
        Node::Mul(a, b) => eval(a, vars) * eval(b, vars),
        Node::Div(a, b) => eval(a, vars) / eval(b, vars),
        Node::Pow(a, b) => pow(eval(a, vars), eval(b, vars)),
        Node::Call(f, args) => {
            let a = eval(&args[0], vars);
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Exp => a.exp(),
                Func::Log => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Abs => a.abs(),
                Func::Pow => pow(a, eval(&args[1], vars)),
                Func::Min => a.min(eval(&args[1], vars)),
                Func::Max => a.max(eval(&args[1], vars)),
                Func::Sign => {
                    if a > 0.0 {
                        1.0
                    } else if a < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                Func::Step => {
                    if a > 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        }
    }
}

fn pow(a: f64, b: f64) -> f64 {
    if b == 2.0 {
        a * a
    } else if b.fract() == 0.0 && b.abs() <= 16.0 {
        a.powi(b as i32)
    } else {
        a.powf(b)
    }
}

fn num(c: f64) -> Node {
    Node::Num(c)
}

fn bx(n: Node) -> Box<Node> {
    Box::new(n)
}

fn mul(a: Node, b: Node) -> Node {
    Node::Mul(bx(a), bx(b))
}

fn call1(f: Func, a: Node) -> Node {
    Node::Call(f, vec![a])
}

fn diff(n: &Node, var: Var) -> Node {
    match n {
        Node::Num(_) => num(0.0),
        Node::Var(w) => num(if *w == var { 1.0 } else { 0.0 }),
        Node::Neg(a) => Node::Neg(bx(diff(a, var))),
        Node::Add(a, b) => Node::Add(bx(diff(a, var)), bx(diff(b, var))),
        Node::Sub(a, b) => Node::Sub(bx(diff(a, var)), bx(diff(b, var))),
        Node::Mul(a, b) => Node::Add(
            bx(mul(diff(a, var), (**b).clone())),
            bx(mul((**a).clone(), diff(b, var))),
        ),
        Node::Div(a, b) => Node::Div(
            bx(Node::Sub(
                bx(mul(diff(a, var), (**b).clone())),
                bx(mul((**a).clone(), diff(b, var))),
            )),
            bx(Node::Pow(b.clone(), bx(num(2.0)))),
        ),
        Node::Pow(a, b) => diff_pow(a, b, var),
        Node::Call(f, args) => {
            let a = &args[0];
            let da = diff(a, var);
            match f {
                Func::Sin => mul(call1(Func::Cos, a.clone()), da),
                Func::Cos => mul(Node::Neg(bx(call1(Func::Sin, a.clone()))), da),
                Func::Exp => mul(call1(Func::Exp, a.clone()), da),
                Func::Log => Node::Div(bx(da), bx(a.clone())),
                Func::Sqrt => Node::Div(bx(da), bx(mul(num(2.0), call1(Func::Sqrt, a.clone())))),
                Func::Abs => mul(call1(Func::Sign, a.clone()), da),
                Func::Pow => diff_pow(a, &args[1], var),
                Func::Min | Func::Max => {
                    let b = &args[1];
                    let db = diff(b, var);
                    // step(b - a) selects `a` for min, step(a - b) for max
                    let sel = match f {
                        Func::Min => call1(Func::Step, Node::Sub(bx(b.clone()), bx(a.clone()))),
                        _ => call1(Func::Step, Node::Sub(bx(a.clone()), bx(b.clone()))),
                    };
                    Node::Add(
                        bx(mul(sel.clone(), da)),
                        bx(mul(Node::Sub(bx(num(1.0)), bx(sel)), db)),
                    )
                }
                Func::Sign | Func::Step => num(0.0),
            }
        }
    }
}

fn diff_pow(a: &Node, b: &Node, var: Var) -> Node {
    let da = diff(a, var);
    if !uses(b, var) {
        // b * a^(b-1) * a'
        mul(
            mul(
                b.clone(),
                Node::Pow(bx(a.clone()), bx(Node::Sub(bx(b.clone()), bx(num(1.0))))),
            ),
            da,
        )
    } else {
        // a^b * (b' ln a + b a' / a)
        let db = diff(b, var);
        mul(
            Node::Pow(bx(a.clone()), bx(b.clone())),
            Node::Add(
                bx(mul(db, call1(Func::Log, a.clone()))),
                bx(Node::Div(bx(mul(b.clone(), da)), bx(a.clone()))),
            ),
        )
    }
}

fn simplify(n: Node) -> Node {
    use Node::*;
    match n {
        Num(_) | Var(_) => n,
        Neg(a) => match simplify(*a) {
            Num(c) => Num(-c),
            Neg(inner) => *inner,
            s => Neg(bx(s)),
        },
        Add(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x + y),
            (Num(z), s) | (s, Num(z)) if z == 0.0 => s,
            (s, t) => Add(bx(s), bx(t)),
        },
        Sub(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x - y),
            (s, Num(z)) if z == 0.0 => s,
            (Num(z), s) if z == 0.0 => simplify(Neg(bx(s))),
            (s, t) => Sub(bx(s), bx(t)),
        },
        Mul(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(x * y),
            (Num(z), _) | (_, Num(z)) if z == 0.0 => Num(0.0),
            (Num(o), s) | (s, Num(o)) if o == 1.0 => s,
            (s, t) => Mul(bx(s), bx(t)),
        },
        Div(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) if y != 0.0 => Num(x / y),
            (Num(z), _) if z == 0.0 => Num(0.0),
            (s, Num(o)) if o == 1.0 => s,
            (s, t) => Div(bx(s), bx(t)),
        },
        Pow(a, b) => match (simplify(*a), simplify(*b)) {
            (Num(x), Num(y)) => Num(pow(x, y)),
            (_, Num(z)) if z == 0.0 => Num(1.0),
            (s, Num(o)) if o == 1.0 => s,
            (s, t) => Pow(bx(s), bx(t)),
        },
        Call(f, args) => {
            let args: Vec<Node> = args.into_iter().map(simplify).collect();
            if args.iter().all(|a| matches!(a, Num(_))) {
                Num(eval(&Call(f, args), [0.0; 3]))
            } else {
                Call(f, args)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    column: usize,
}

fn parse_err(column: usize, message: impl Into<String>) -> ExprError {
    ExprError::Parse {
        line: 1,
        column,
        message: message.into(),
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
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
            let value = text
                .parse::<f64>()
                .map_err(|_| parse_err(column, format!("malformed number `{text}`")))?;
            out.push(Token {
                tok: Tok::Num(value),
                column,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                column,
            });
        } else if "+-*/^(),".contains(c) {
            out.push(Token {
                tok: Tok::Op(c),
                column,
            });
            i += 1;
        } else {
            return Err(parse_err(column, format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    allowed: &'a [Var],
}

impl Parser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Token {
                tok: Tok::Op(c), ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn end_column(&self) -> usize {
        self.tokens.last().map_or(1, |t| t.column + 1)
    }

    fn expect(&mut self, op: char) -> Result<(), ExprError> {
        match self.tokens.get(self.pos) {
            Some(Token {
                tok: Tok::Op(c), ..
            }) if *c == op => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(parse_err(t.column, format!("expected `{op}`"))),
            None => Err(parse_err(self.end_column(), format!("expected `{op}`"))),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(bx(lhs), bx(rhs))
            } else {
                Node::Sub(bx(lhs), bx(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(bx(lhs), bx(rhs))
            } else {
                Node::Div(bx(lhs), bx(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(bx(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Node::Pow(bx(base), bx(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let Some(tok) = self.tokens.get(self.pos).cloned() else {
            return Err(parse_err(self.end_column(), "unexpected end of expression"));
        };
        self.pos += 1;
        match tok.tok {
            Tok::Num(c) => Ok(Node::Num(c)),
            Tok::Op('(') => {
                let inner = self.expr()?;
                self.expect(')')?;
                Ok(inner)
            }
            Tok::Op(c) => Err(parse_err(tok.column, format!("unexpected `{c}`"))),
            Tok::Ident(name) => {
                if let Some((func, arity)) = Func::lookup(&name) {
                    self.expect('(')?;
                    let mut args = vec![self.expr()?];
                    while self.peek_op() == Some(',') {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    if args.len() != arity {
                        return Err(parse_err(
                            tok.column,
                            format!("`{name}` takes {arity} argument(s), got {}", args.len()),
                        ));
                    }
                    return Ok(Node::Call(func, args));
                }
                let var = match name.as_str() {
                    "x" => Some(Var::X),
                    "u" => Some(Var::U),
                    "v" => Some(Var::V),
                    "pi" => return Ok(Node::Num(std::f64::consts::PI)),
                    "e" => return Ok(Node::Num(std::f64::consts::E)),
                    _ => None,
                };
                match var {
                    Some(v) if self.allowed.contains(&v) => Ok(Node::Var(v)),
                    _ => Err(ExprError::UnknownIdentifier {
                        name,
                        column: tok.column,
                    }),
                }
            }
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Num(c) => write!(f, "{c}"),
            Node::Var(v) => f.write_str(v.name()),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Pow(a, b) => write!(f, "({a}^{b})"),
            Node::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
