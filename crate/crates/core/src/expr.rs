//! Closed-form scalar expressions over `x1..xn` and named constants.
//!
//! Every derivative used by the toolkit comes from [`Expression::differentiate`],
//! so positivity margins are never polluted by finite-difference truncation.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term (('+'|'-') term)* ;
//! term   := factor (('*'|'/') factor)* ;
//! factor := unary ('^' unary)? ;
//! unary  := '-' unary | atom ;
//! atom   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')' ;
//! ```
//!
//! Note that unary minus binds tighter than `^`: `-x1^2` is `(-x1)^2`.
//! Integer-literal exponents are kept as powers; any other exponent `b^e` is
//! rewritten at parse time to `exp(e*log(b))`.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        match name {
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
        }
    }
}

/// Expression tree node. Variables are stored 0-based (`x1` is `Var(0)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(usize),
    Const(String),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Powi(Box<Node>, i32),
    Call(Func, Box<Node>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("variable `x{index}` at byte {offset} is outside dimension {dim}")]
    VariableOutOfRange { index: usize, dim: usize, offset: usize },
    #[error("dimension must be positive")]
    ZeroDimension,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{func} of non-positive value {arg}")]
    Domain { func: &'static str, arg: f64 },
    #[error("division by zero")]
    DivisionByZero,
    #[error("unbound constant `{0}`")]
    UnboundConstant(String),
    #[error("non-finite intermediate value")]
    NonFinite,
    #[error("point has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

/// Values for the named constants of an expression.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstantTable(BTreeMap<String, f64>);

impl ConstantTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: &str, value: f64) {
        self.0.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

impl FromIterator<(String, f64)> for ConstantTable {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        ConstantTable(iter.into_iter().collect())
    }
}

/// A scalar expression in `dim` variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Expression {
    root: Node,
    dim: usize,
}

impl Expression {
    pub fn parse(text: &str, dim: usize) -> Result<Expression, ParseError> {
        if dim == 0 {
            return Err(ParseError::ZeroDimension);
        }
        let mut parser = Parser {
            src: text.as_bytes(),
            pos: 0,
            dim,
        };
        let root = parser.expr()?;
        parser.skip_ws();
        if parser.pos < parser.src.len() {
            return Err(parser.syntax("unexpected trailing input"));
        }
        Ok(Expression { root, dim })
    }

    /// Wraps a node. Panics if the node references a variable beyond `dim`.
    pub fn from_node(root: Node, dim: usize) -> Expression {
        assert!(dim > 0, "dimension must be positive");
        assert!(
            max_var(&root).is_none_or(|k| k < dim),
            "variable index out of range for dimension {dim}"
        );
        Expression { root, dim }
    }

    pub fn constant(value: f64, dim: usize) -> Expression {
        Expression::from_node(Node::Num(value), dim)
    }

    /// The variable `x_{axis+1}`.
    pub fn var(axis: usize, dim: usize) -> Expression {
        Expression::from_node(Node::Var(axis), dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.root, Node::Num(v) if v == 0.0)
    }

    /// Names of all constants referenced, sorted and deduplicated.
    pub fn constants(&self) -> Vec<String> {
        let mut out = Vec::new();
        collect_consts(&self.root, &mut out);
        out.sort();
        out.dedup();
        out
    }

    pub fn evaluate(&self, point: &[f64], consts: &ConstantTable) -> Result<f64, EvalError> {
        if point.len() != self.dim {
            return Err(EvalError::Dimension {
                expected: self.dim,
                got: point.len(),
            });
        }
        eval(&self.root, point, Some(consts))
    }

    /// Evaluates an expression that has no named constants.
    pub fn eval(&self, point: &[f64]) -> Result<f64, EvalError> {
        if point.len() != self.dim {
            return Err(EvalError::Dimension {
                expected: self.dim,
                got: point.len(),
            });
        }
        eval(&self.root, point, None)
    }

    /// Exact symbolic partial derivative with respect to `x_{axis+1}`.
    pub fn differentiate(&self, axis: usize) -> Expression {
        assert!(axis < self.dim, "axis {axis} out of range");
        Expression {
            root: diff(&self.root, axis),
            dim: self.dim,
        }
    }

    /// Replaces every named constant present in `consts` by its value and folds.
    pub fn bind(&self, consts: &ConstantTable) -> Expression {
        Expression {
            root: bind(&self.root, consts),
            dim: self.dim,
        }
    }

    /// Collapses literal-only subtrees.
    pub fn fold(&self) -> Expression {
        Expression {
            root: fold(&self.root),
            dim: self.dim,
        }
    }

    /// Substitutes `x_k -> -x_k` for every axis with `flip[k] == true`.
    pub fn reflect(&self, flip: &[bool]) -> Expression {
        assert_eq!(flip.len(), self.dim);
        Expression {
            root: reflect(&self.root, flip),
            dim: self.dim,
        }
    }

    pub fn exp(self) -> Expression {
        Expression {
            root: Node::Call(Func::Exp, Box::new(self.root)),
            dim: self.dim,
        }
    }

    pub fn sqrt(self) -> Expression {
        Expression {
            root: Node::Call(Func::Sqrt, Box::new(self.root)),
            dim: self.dim,
        }
    }

    pub fn powi(self, k: i32) -> Expression {
        Expression {
            root: Node::Powi(Box::new(self.root), k),
            dim: self.dim,
        }
    }

    fn binary(self, rhs: Expression, op: fn(Box<Node>, Box<Node>) -> Node) -> Expression {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        Expression {
            root: op(Box::new(self.root), Box::new(rhs.root)),
            dim: self.dim,
        }
    }
}

impl std::ops::Add for Expression {
    type Output = Expression;
    fn add(self, rhs: Expression) -> Expression {
        self.binary(rhs, Node::Add)
    }
}

impl std::ops::Sub for Expression {
    type Output = Expression;
    fn sub(self, rhs: Expression) -> Expression {
        self.binary(rhs, Node::Sub)
    }
}

impl std::ops::Mul for Expression {
    type Output = Expression;
    fn mul(self, rhs: Expression) -> Expression {
        self.binary(rhs, Node::Mul)
    }
}

impl std::ops::Div for Expression {
    type Output = Expression;
    fn div(self, rhs: Expression) -> Expression {
        self.binary(rhs, Node::Div)
    }
}

impl std::ops::Neg for Expression {
    type Output = Expression;
    fn neg(self) -> Expression {
        Expression {
            root: Node::Neg(Box::new(self.root)),
            dim: self.dim,
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.root, 0)
    }
}

fn max_var(node: &Node) -> Option<usize> {
    match node {
        Node::Var(k) => Some(*k),
        Node::Num(_) | Node::Const(_) => None,
        Node::Neg(a) | Node::Powi(a, _) | Node::Call(_, a) => max_var(a),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => match (max_var(a), max_var(b)) {
            (Some(x), Some(y)) => Some(x.max(y)),
            (x, y) => x.or(y),
        },
    }
}

fn collect_consts(node: &Node, out: &mut Vec<String>) {
    match node {
        Node::Const(name) => out.push(name.clone()),
        Node::Num(_) | Node::Var(_) => {}
        Node::Neg(a) | Node::Powi(a, _) | Node::Call(_, a) => collect_consts(a, out),
        Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
            collect_consts(a, out);
            collect_consts(b, out);
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Node, ParseError> {
        let base = self.unary()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        let exponent = self.unary()?;
        Ok(match integer_exponent(&exponent) {
            Some(k) => Node::Powi(Box::new(base), k),
            None => Node::Call(
                Func::Exp,
                Box::new(Node::Mul(
                    Box::new(exponent),
                    Box::new(Node::Call(Func::Log, Box::new(base))),
                )),
            ),
        })
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.syntax("expected `)`"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        let src = self.src;
        let digits = |mut p: usize| {
            while p < src.len() && src[p].is_ascii_digit() {
                p += 1;
            }
            p
        };
        let mut end = digits(start);
        if end < src.len() && src[end] == b'.' {
            end = digits(end + 1);
        }
        if end < src.len() && (src[end] == b'e' || src[end] == b'E') {
            let mut q = end + 1;
            if q < src.len() && (src[q] == b'+' || src[q] == b'-') {
                q += 1;
            }
            if q < src.len() && src[q].is_ascii_digit() {
                end = digits(q);
            }
        }
        let text = std::str::from_utf8(&src[start..end]).expect("ascii digits");
        self.pos = end;
        text.parse::<f64>().map(Node::Num).map_err(|_| ParseError::Syntax {
            offset: start,
            message: format!("invalid number `{text}`"),
        })
    }

    fn ident(&mut self) -> Result<Node, ParseError> {
        let start = self.pos;
        while self.pos < self.src.len() && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii ident");
        if self.peek() == Some(b'(') {
            let func = Func::from_name(name).ok_or_else(|| ParseError::UnknownFunction {
                name: name.to_string(),
                offset: start,
            })?;
            self.pos += 1;
            let arg = self.expr()?;
            if self.peek() != Some(b')') {
                return Err(self.syntax("expected `)` after function argument"));
            }
            self.pos += 1;
            return Ok(Node::Call(func, Box::new(arg)));
        }
        let bytes = name.as_bytes();
        if bytes.len() > 1 && bytes[0] == b'x' && bytes[1..].iter().all(u8::is_ascii_digit) {
            let index: usize = name[1..].parse().unwrap_or(usize::MAX);
            if index == 0 || index > self.dim {
                return Err(ParseError::VariableOutOfRange {
                    index,
                    dim: self.dim,
                    offset: start,
                });
            }
            return Ok(Node::Var(index - 1));
        }
        Ok(Node::Const(name.to_string()))
    }
}

fn integer_exponent(node: &Node) -> Option<i32> {
    let as_int = |v: f64| (v.fract() == 0.0 && v.abs() <= i32::MAX as f64).then_some(v as i32);
    match node {
        Node::Num(v) => as_int(*v),
        Node::Neg(inner) => match **inner {
            Node::Num(v) => as_int(v).map(|k| -k),
            _ => None,
        },
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Rendering

// Grammar levels: 0 expr, 1 term, 2 factor, 3 unary, 4 atom.
fn level(node: &Node) -> u8 {
    match node {
        Node::Add(..) | Node::Sub(..) => 0,
        Node::Mul(..) | Node::Div(..) => 1,
        Node::Powi(..) => 2,
        Node::Neg(_) => 3,
        Node::Num(v) if v.is_sign_negative() => 3,
        Node::Num(_) | Node::Var(_) | Node::Const(_) | Node::Call(..) => 4,
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, node: &Node, min_level: u8) -> fmt::Result {
    if level(node) < min_level {
        f.write_str("(")?;
        write_node(f, node, 0)?;
        return f.write_str(")");
    }
    match node {
        Node::Num(v) => write!(f, "{v}"),
        Node::Var(k) => write!(f, "x{}", k + 1),
        Node::Const(name) => f.write_str(name),
        Node::Neg(a) => {
            f.write_str("-")?;
            write_node(f, a, 3)
        }
        Node::Add(a, b) => {
            write_node(f, a, 0)?;
            f.write_str(" + ")?;
            write_node(f, b, 1)
        }
        Node::Sub(a, b) => {
            write_node(f, a, 0)?;
            f.write_str(" - ")?;
            write_node(f, b, 1)
        }
        Node::Mul(a, b) => {
            write_node(f, a, 1)?;
            f.write_str("*")?;
            write_node(f, b, 2)
        }
        Node::Div(a, b) => {
            write_node(f, a, 1)?;
            f.write_str("/")?;
            write_node(f, b, 2)
        }
        Node::Powi(a, k) => {
            write_node(f, a, 3)?;
            write!(f, "^{k}")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(f, a, 0)?;
            f.write_str(")")
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation

fn finite(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

fn apply(func: Func, v: f64) -> Result<f64, EvalError> {
    match func {
        Func::Exp => finite(v.exp()),
        Func::Log if v <= 0.0 => Err(EvalError::Domain { func: "log", arg: v }),
        Func::Log => Ok(v.ln()),
        Func::Sqrt if v <= 0.0 => Err(EvalError::Domain { func: "sqrt", arg: v }),
        Func::Sqrt => Ok(v.sqrt()),
        Func::Sin => Ok(v.sin()),
        Func::Cos => Ok(v.cos()),
    }
}

fn powi(base: f64, k: i32) -> Result<f64, EvalError> {
    if k < 0 && base == 0.0 {
        return Err(EvalError::DivisionByZero);
    }
    finite(base.powi(k))
}

fn eval(node: &Node, x: &[f64], consts: Option<&ConstantTable>) -> Result<f64, EvalError> {
    match node {
        Node::Num(v) => Ok(*v),
        Node::Var(k) => Ok(x[*k]),
        Node::Const(name) => consts
            .and_then(|c| c.get(name))
            .ok_or_else(|| EvalError::UnboundConstant(name.clone())),
        Node::Neg(a) => Ok(-eval(a, x, consts)?),
        Node::Add(a, b) => finite(eval(a, x, consts)? + eval(b, x, consts)?),
        Node::Sub(a, b) => finite(eval(a, x, consts)? - eval(b, x, consts)?),
        Node::Mul(a, b) => finite(eval(a, x, consts)? * eval(b, x, consts)?),
        Node::Div(a, b) => {
            let num = eval(a, x, consts)?;
            let den = eval(b, x, consts)?;
            if den == 0.0 {
                return Err(EvalError::DivisionByZero);
            }
            finite(num / den)
        }
        Node::Powi(a, k) => powi(eval(a, x, consts)?, *k),
        Node::Call(func, a) => apply(*func, eval(a, x, consts)?),
    }
}

// ---------------------------------------------------------------------------
// Folding constructors

fn lit(node: &Node) -> Option<f64> {
    match node {
        Node::Num(v) => Some(*v),
        _ => None,
    }
}

fn folded(v: f64) -> Option<Node> {
    v.is_finite().then_some(Node::Num(v))
}

fn neg(a: Node) -> Node {
    match a {
        Node::Num(v) => Node::Num(-v),
        Node::Neg(inner) => *inner,
        a => Node::Neg(Box::new(a)),
    }
}

fn add(a: Node, b: Node) -> Node {
    match (lit(&a), lit(&b)) {
        (Some(x), Some(y)) => folded(x + y).unwrap_or_else(|| Node::Add(Box::new(a), Box::new(b))),
        (Some(0.0), _) => b,
        (_, Some(0.0)) => a,
        _ => Node::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (lit(&a), lit(&b)) {
        (Some(x), Some(y)) => folded(x - y).unwrap_or_else(|| Node::Sub(Box::new(a), Box::new(b))),
        (_, Some(0.0)) => a,
        (Some(0.0), _) => neg(b),
        _ => Node::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Node, b: Node) -> Node {
    match (lit(&a), lit(&b)) {
        (Some(x), Some(y)) => folded(x * y).unwrap_or_else(|| Node::Mul(Box::new(a), Box::new(b))),
        (Some(0.0), _) => Node::Num(0.0),
        (_, Some(0.0)) => Node::Num(0.0),
        (Some(1.0), _) => b,
        (_, Some(1.0)) => a,
        (Some(-1.0), _) => neg(b),
        (_, Some(-1.0)) => neg(a),
        _ => Node::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Node, b: Node) -> Node {
    match (lit(&a), lit(&b)) {
        (Some(x), Some(y)) if y != 0.0 => folded(x / y).unwrap_or_else(|| Node::Div(Box::new(a), Box::new(b))),
        (Some(0.0), _) => Node::Num(0.0),
        (_, Some(1.0)) => a,
        _ => Node::Div(Box::new(a), Box::new(b)),
    }
}

fn pow_int(a: Node, k: i32) -> Node {
    match k {
        0 => Node::Num(1.0),
        1 => a,
        _ => match lit(&a) {
            Some(x) => powi(x, k)
                .ok()
                .map(Node::Num)
                .unwrap_or_else(|| Node::Powi(Box::new(a), k)),
            None => Node::Powi(Box::new(a), k),
        },
    }
}

fn call(func: Func, a: Node) -> Node {
    match lit(&a).and_then(|x| apply(func, x).ok()) {
        Some(v) => Node::Num(v),
        None => Node::Call(func, Box::new(a)),
    }
}

fn fold(node: &Node) -> Node {
    match node {
        Node::Num(_) | Node::Var(_) | Node::Const(_) => node.clone(),
        Node::Neg(a) => neg(fold(a)),
        Node::Add(a, b) => add(fold(a), fold(b)),
        Node::Sub(a, b) => sub(fold(a), fold(b)),
        Node::Mul(a, b) => mul(fold(a), fold(b)),
        Node::Div(a, b) => div(fold(a), fold(b)),
        Node::Powi(a, k) => pow_int(fold(a), *k),
        Node::Call(func, a) => call(*func, fold(a)),
    }
}

fn bind(node: &Node, consts: &ConstantTable) -> Node {
    match node {
        Node::Const(name) => match consts.get(name) {
            Some(v) => Node::Num(v),
            None => node.clone(),
        },
        Node::Num(_) | Node::Var(_) => node.clone(),
        Node::Neg(a) => neg(bind(a, consts)),
        Node::Add(a, b) => add(bind(a, consts), bind(b, consts)),
        Node::Sub(a, b) => sub(bind(a, consts), bind(b, consts)),
        Node::Mul(a, b) => mul(bind(a, consts), bind(b, consts)),
        Node::Div(a, b) => div(bind(a, consts), bind(b, consts)),
        Node::Powi(a, k) => pow_int(bind(a, consts), *k),
        Node::Call(func, a) => call(*func, bind(a, consts)),
    }
}

fn reflect(node: &Node, flip: &[bool]) -> Node {
    let re = |a: &Node| Box::new(reflect(a, flip));
    match node {
        Node::Var(k) if flip[*k] => Node::Neg(Box::new(Node::Var(*k))),
        Node::Num(_) | Node::Var(_) | Node::Const(_) => node.clone(),
        Node::Neg(a) => Node::Neg(re(a)),
        Node::Add(a, b) => Node::Add(re(a), re(b)),
        Node::Sub(a, b) => Node::Sub(re(a), re(b)),
        Node::Mul(a, b) => Node::Mul(re(a), re(b)),
        Node::Div(a, b) => Node::Div(re(a), re(b)),
        Node::Powi(a, k) => Node::Powi(re(a), *k),
        Node::Call(func, a) => Node::Call(*func, re(a)),
    }
}

// ---------------------------------------------------------------------------
// Differentiation

fn diff(node: &Node, axis: usize) -> Node {
    match node {
        Node::Num(_) | Node::Const(_) => Node::Num(0.0),
        Node::Var(k) => Node::Num(if *k == axis { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(diff(a, axis)),
        Node::Add(a, b) => add(diff(a, axis), diff(b, axis)),
        Node::Sub(a, b) => sub(diff(a, axis), diff(b, axis)),
        Node::Mul(a, b) => add(mul(diff(a, axis), fold(b)), mul(fold(a), diff(b, axis))),
        Node::Div(a, b) => {
            let (fa, fb) = (fold(a), fold(b));
            div(
                sub(mul(diff(a, axis), fb.clone()), mul(fa, diff(b, axis))),
                pow_int(fb, 2),
            )
        }
        Node::Powi(a, k) => match *k {
            0 => Node::Num(0.0),
            k => mul(mul(Node::Num(k as f64), pow_int(fold(a), k - 1)), diff(a, axis)),
        },
        Node::Call(func, a) => {
            let inner = diff(a, axis);
            if lit(&inner) == Some(0.0) {
                return Node::Num(0.0);
            }
            let fa = fold(a);
            match func {
                Func::Exp => mul(inner, call(Func::Exp, fa)),
                Func::Log => div(inner, fa),
                Func::Sin => mul(inner, call(Func::Cos, fa)),
                Func::Cos => neg(mul(inner, call(Func::Sin, fa))),
                Func::Sqrt => div(inner, mul(Node::Num(2.0), call(Func::Sqrt, fa))),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{rngs::StdRng, Rng, SeedableRng};

    fn p(text: &str) -> Expression {
        Expression::parse(text, 2).unwrap()
    }

    #[test]
    fn parses_example_coefficient() {
        let e = p("1 + x1^2 + x2^2");
        let expected = Node::Add(
            Box::new(Node::Add(
                Box::new(Node::Num(1.0)),
                Box::new(Node::Powi(Box::new(Node::Var(0)), 2)),
            )),
            Box::new(Node::Powi(Box::new(Node::Var(1)), 2)),
        );
        assert_eq!(e.root(), &expected);
        assert_eq!(p("x1").root(), &Node::Var(0));
        let e = p("exp(mu1*x1)");
        assert_eq!(e.constants(), vec!["mu1".to_string()]);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        match Expression::parse("1 + * x1", 2) {
            Err(ParseError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Expression::parse("tan(x1)", 2),
            Err(ParseError::UnknownFunction { offset: 0, .. })
        ));
        assert!(matches!(
            Expression::parse("x1 + x3", 2),
            Err(ParseError::VariableOutOfRange {
                index: 3,
                dim: 2,
                offset: 5
            })
        ));
        assert!(matches!(
            Expression::parse("x0", 2),
            Err(ParseError::VariableOutOfRange { index: 0, .. })
        ));
        assert!(Expression::parse("(x1", 2).is_err());
        assert!(Expression::parse("x1 x2", 2).is_err());
        assert!(Expression::parse("x1^2^3", 2).is_err());
        assert!(Expression::parse("", 2).is_err());
    }

    #[test]
    fn numbers_with_fraction_and_exponent() {
        assert_eq!(p("1.5e-3").root(), &Node::Num(1.5e-3));
        assert_eq!(p("2.").root(), &Node::Num(2.0));
        assert_eq!(p("3E2").root(), &Node::Num(300.0));
    }

    #[test]
    fn unary_minus_binds_tighter_than_power() {
        let e = p("-x1^2");
        assert_eq!(e.eval(&[3.0, 0.0]).unwrap(), 9.0);
        let e = p("-(x1^2)");
        assert_eq!(e.eval(&[3.0, 0.0]).unwrap(), -9.0);
    }

    #[test]
    fn non_integer_exponent_rewritten() {
        let e = p("x1^0.5");
        assert_eq!(e.to_string(), "exp(0.5*log(x1))");
        assert!((e.eval(&[4.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(p("x1^-2").root(), Node::Powi(_, -2)));
    }

    #[test]
    fn evaluates_examples() {
        assert_eq!(p("1 + x1^2 + x2^2").eval(&[1.0, 1.0]).unwrap(), 3.0);
        let consts = ConstantTable::new().with("mu1", 0.5);
        assert_eq!(p("exp(mu1*x1)").evaluate(&[0.0, 0.0], &consts).unwrap(), 1.0);
        assert_eq!(p("x1/x2").eval(&[1.0, 0.0]), Err(EvalError::DivisionByZero));
        assert!(matches!(
            p("log(x1)").eval(&[0.0, 1.0]),
            Err(EvalError::Domain { func: "log", .. })
        ));
        assert!(matches!(
            p("sqrt(x1)").eval(&[-1.0, 1.0]),
            Err(EvalError::Domain { func: "sqrt", .. })
        ));
        assert_eq!(
            p("exp(mu1*x1)").eval(&[0.0, 0.0]),
            Err(EvalError::UnboundConstant("mu1".into()))
        );
        assert_eq!(p("exp(x1)").eval(&[1000.0, 0.0]), Err(EvalError::NonFinite));
    }

    #[test]
    fn derivative_examples_render() {
        assert_eq!(p("1 + x1^2 + x2^2").differentiate(0).to_string(), "2*x1");
        assert_eq!(p("exp(mu1*x1)").differentiate(0).to_string(), "mu1*exp(mu1*x1)");
        assert!(p("2").differentiate(0).is_zero());
        assert!(p("exp(x2)").differentiate(0).is_zero());
    }

    fn central_fd(e: &Expression, x: &[f64], axis: usize, consts: &ConstantTable) -> f64 {
        let h = 1e-6;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[axis] += h;
        xm[axis] -= h;
        (e.evaluate(&xp, consts).unwrap() - e.evaluate(&xm, consts).unwrap()) / (2.0 * h)
    }

    #[test]
    fn gaussian_bump_derivative_matches_finite_differences() {
        let consts = ConstantTable::new().with("mu2", 0.1);
        let e = p("exp(-mu2*x1^2)");
        let d = e.differentiate(0);
        let closed = |x: f64| -2.0 * 0.1 * x * (-0.1 * x * x).exp();
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..10 {
            let x = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let sym = d.evaluate(&x, &consts).unwrap();
            let fd = central_fd(&e, &x, 0, &consts);
            assert!((sym - closed(x[0])).abs() <= 1e-14);
            assert!((sym - fd).abs() <= 1e-6 * sym.abs().max(fd.abs()).max(1.0));
        }
    }

    #[test]
    fn derivative_of_every_construct_matches_finite_differences() {
        let corpus = [
            "x1*x2 - x2/x1",
            "sin(x1)*cos(x2) + sqrt(x1 + x2)",
            "log(x1) + x2^-2 + x1^3",
            "x1^x2",
            "exp(x1^3 + x2^3)/(1 + x1^2)",
            "-(x1 - 2)^2 + 3*x2",
        ];
        let consts = ConstantTable::new();
        let mut rng = StdRng::seed_from_u64(11);
        for text in corpus {
            let e = p(text);
            for axis in 0..2 {
                let d = e.differentiate(axis);
                for _ in 0..100 {
                    let x = [rng.gen_range(0.5..1.5), rng.gen_range(0.5..1.5)];
                    let sym = d.eval(&x).unwrap();
                    let fd = central_fd(&e, &x, axis, &consts);
                    let scale = sym.abs().max(fd.abs()).max(1.0);
                    assert!(
                        (sym - fd).abs() <= 1e-6 * scale,
                        "{text} d/dx{}: {sym} vs {fd}",
                        axis + 1
                    );
                }
            }
        }
    }

    #[test]
    fn mixed_partials_commute() {
        let mut rng = StdRng::seed_from_u64(3);
        for text in ["exp(x1*x2)*sin(x1)", "x1^3*x2^2/(1 + x2^2)", "sqrt(x1^2 + x2^2 + 1)"] {
            let e = p(text);
            let d12 = e.differentiate(0).differentiate(1);
            let d21 = e.differentiate(1).differentiate(0);
            for _ in 0..50 {
                let x = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                let (a, b) = (d12.eval(&x).unwrap(), d21.eval(&x).unwrap());
                assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0), "{text}");
            }
        }
    }

    #[test]
    fn bind_and_reflect() {
        let consts = ConstantTable::new().with("mu1", 2.0);
        let e = p("exp(mu1*x1) + x2").bind(&consts);
        assert!(e.constants().is_empty());
        assert_eq!(e.to_string(), "exp(2*x1) + x2");
        let r = p("x1 + 2*x2").reflect(&[true, false]);
        assert_eq!(r.eval(&[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn folding_collapses_literals() {
        assert_eq!(p("2*3 + x1*(4 - 4)").fold().to_string(), "6");
        // 1/0 stays unfolded so the domain error survives to evaluation.
        assert_eq!(p("1/0").fold().to_string(), "1/0");
        assert_eq!(p("log(0 - 1)").fold().to_string(), "log(-1)");
    }

    fn arb_node() -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (0u32..1000).prop_map(|v| Node::Num(v as f64 / 8.0)),
            (0usize..3).prop_map(Node::Var),
            prop_oneof![Just("mu"), Just("c_2"), Just("lam")].prop_map(|s| Node::Const(s.into())),
        ];
        leaf.prop_recursive(5, 40, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Mul(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Div(Box::new(a), Box::new(b))),
                (inner.clone(), -3i32..4).prop_map(|(a, k)| Node::Powi(Box::new(a), k)),
                (inner, 0usize..5).prop_map(|(a, f)| {
                    let func = [Func::Exp, Func::Log, Func::Sin, Func::Cos, Func::Sqrt][f];
                    Node::Call(func, Box::new(a))
                }),
            ]
        })
    }

    proptest! {
        #[test]
        fn render_parse_is_structurally_stable(node in arb_node()) {
            let e = Expression::from_node(node, 3);
            let text = e.to_string();
            let reparsed = Expression::parse(&text, 3).unwrap();
            prop_assert_eq!(&reparsed, &e, "{}", text);
        }

        #[test]
        fn rendering_is_a_fixed_point_after_folding(node in arb_node()) {
            // Folding introduces negative literals that reparse as negations;
            // the rendered text must still be stable.
            let e = Expression::from_node(node, 3).fold();
            let once = e.to_string();
            let twice = Expression::parse(&once, 3).unwrap().to_string();
            prop_assert_eq!(once, twice);
        }
    }
}
