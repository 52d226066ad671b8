use std::fmt;

use crate::{Error, Result};

/// Denominators smaller than this in magnitude make a sample invalid.
pub const DIV_GUARD: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub const ALL: [BinOp; 4] = [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div];

    /// Applies the operator; guarded division yields NaN.
    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => {
                if b.abs() < DIV_GUARD {
                    f64::NAN
                } else {
                    a / b
                }
            }
        }
    }

    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

/// An algebraic expression over indexed input variables.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// Number of operator, constant and variable occurrences.
    pub fn complexity(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Bin(_, a, b) => 1 + a.complexity() + b.complexity(),
        }
    }

    /// Leaves have depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Bin(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Bin(_, a, b) => a.max_var().max(b.max_var()),
        }
    }

    pub fn has_constants(&self) -> bool {
        match self {
            Expr::Const(_) => true,
            Expr::Var(_) => false,
            Expr::Bin(_, a, b) => a.has_constants() || b.has_constants(),
        }
    }

    /// Evaluates on one row of variable values. Invalid samples (guarded
    /// division) evaluate to NaN.
    pub fn eval(&self, row: &[f64]) -> Result<f64> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => *row
                .get(*i)
                .ok_or_else(|| Error::UnboundVariable(format!("x{i} (row has {})", row.len())))?,
            Expr::Bin(op, a, b) => op.apply(a.eval(row)?, b.eval(row)?),
        })
    }

    /// Evaluates on column-major data; every column must have `n` entries and
    /// every variable must index a column.
    pub fn eval_columns(&self, columns: &[Vec<f64>], n: usize) -> Vec<f64> {
        match self {
            Expr::Const(c) => vec![*c; n],
            Expr::Var(i) => columns[*i].clone(),
            Expr::Bin(op, a, b) => {
                let mut left = a.eval_columns(columns, n);
                match b.as_ref() {
                    Expr::Const(c) => left.iter_mut().for_each(|x| *x = op.apply(*x, *c)),
                    Expr::Var(i) => left
                        .iter_mut()
                        .zip(&columns[*i])
                        .for_each(|(x, y)| *x = op.apply(*x, *y)),
                    _ => {
                        let right = b.eval_columns(columns, n);
                        left.iter_mut()
                            .zip(&right)
                            .for_each(|(x, y)| *x = op.apply(*x, *y));
                    }
                }
                left
            }
        }
    }

    /// Subtree at preorder position `index`.
    pub fn node(&self, index: usize) -> Option<&Expr> {
        fn walk<'a>(e: &'a Expr, index: &mut usize) -> Option<&'a Expr> {
            if *index == 0 {
                return Some(e);
            }
            *index -= 1;
            match e {
                Expr::Bin(_, a, b) => walk(a, index).or_else(|| walk(b, index)),
                _ => None,
            }
        }
        let mut i = index;
        walk(self, &mut i)
    }

    pub fn node_mut(&mut self, index: usize) -> Option<&mut Expr> {
        fn walk<'a>(e: &'a mut Expr, index: &mut usize) -> Option<&'a mut Expr> {
            if *index == 0 {
                return Some(e);
            }
            *index -= 1;
            match e {
                Expr::Bin(_, a, b) => match walk(a, index) {
                    Some(found) => Some(found),
                    None => walk(b, index),
                },
                _ => None,
            }
        }
        let mut i = index;
        walk(self, &mut i)
    }

    /// Mutable references to every constant, in preorder.
    pub fn constants_mut(&mut self) -> Vec<&mut f64> {
        fn walk<'a>(e: &'a mut Expr, out: &mut Vec<&'a mut f64>) {
            match e {
                Expr::Const(c) => out.push(c),
                Expr::Var(_) => {}
                Expr::Bin(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    pub fn constants(&self) -> Vec<f64> {
        let mut copy = self.clone();
        copy.constants_mut().into_iter().map(|c| *c).collect()
    }

    pub fn set_constants(&mut self, values: &[f64]) {
        for (slot, v) in self.constants_mut().into_iter().zip(values) {
            *slot = *v;
        }
    }

    /// Leftmost leaf of the tree.
    pub fn first_leaf(&self) -> &Expr {
        match self {
            Expr::Bin(_, a, _) => a.first_leaf(),
            leaf => leaf,
        }
    }

    /// Replaces subtrees that reach below `max_depth` by their leftmost leaf.
    pub fn truncate(&mut self, max_depth: usize) {
        if max_depth <= 1 {
            if let Expr::Bin(..) = self {
                *self = self.first_leaf().clone();
            }
            return;
        }
        if let Expr::Bin(_, a, b) = self {
            a.truncate(max_depth - 1);
            b.truncate(max_depth - 1);
        }
    }

    /// Collapses operators whose operands are both constants.
    pub fn fold_constants(self) -> Expr {
        match self {
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.fold_constants(), b.fold_constants());
                if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
                    let v = op.apply(*x, *y);
                    if v.is_finite() {
                        return Expr::Const(v);
                    }
                }
                Expr::bin(op, a, b)
            }
            leaf => leaf,
        }
    }

    /// Parenthesized infix rendering with the given variable names.
    pub fn display<'a>(&'a self, names: &'a [String]) -> DisplayExpr<'a> {
        DisplayExpr { expr: self, names }
    }

    /// Parses infix text; identifiers must be in `names`.
    pub fn parse(text: &str, names: &[String]) -> Result<Expr> {
        let tokens = tokenize(text)?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            names,
        };
        let expr = parser.sum()?;
        if parser.pos != tokens.len() {
            return Err(Error::Parse(format!(
                "unexpected {:?} after expression",
                tokens[parser.pos]
            )));
        }
        Ok(expr)
    }
}

pub struct DisplayExpr<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl fmt::Display for DisplayExpr<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expr {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(i) => match self.names.get(*i) {
                Some(name) => f.write_str(name),
                None => write!(f, "x{i}"),
            },
            Expr::Bin(op, a, b) => write!(
                f,
                "({} {} {})",
                a.display(self.names),
                op.symbol(),
                b.display(self.names)
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(BinOp),
    Open,
    Close,
}

fn tokenize(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let operand_expected = matches!(tokens.last(), None | Some(Token::Op(_)) | Some(Token::Open));
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit()
            || c == '.'
            || (c == '-'
                && operand_expected
                && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit() || *n == '.'))
        {
            let start = i;
            i += 1;
            while i < chars.len() {
                let d = chars[i];
                let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    i += 1;
                } else {
                    break;
                }
            }
            let lit: String = chars[start..i].iter().collect();
            let v = lit
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number {lit:?}: {e}")))?;
            tokens.push(Token::Num(v));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(Token::Ident(chars[start..i].iter().collect()));
        } else {
            tokens.push(match c {
                '+' => Token::Op(BinOp::Add),
                '-' => Token::Op(BinOp::Sub),
                '*' => Token::Op(BinOp::Mul),
                '/' => Token::Op(BinOp::Div),
                '(' => Token::Open,
                ')' => Token::Close,
                other => return Err(Error::Parse(format!("unexpected character {other:?}"))),
            });
            i += 1;
        }
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    names: &'a [String],
}

impl Parser<'_> {
    fn peek_op(&self, ops: [BinOp; 2]) -> Option<BinOp> {
        match self.tokens.get(self.pos) {
            Some(Token::Op(op)) if ops.contains(op) => Some(*op),
            _ => None,
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut lhs = self.product()?;
        while let Some(op) = self.peek_op([BinOp::Add, BinOp::Sub]) {
            self.pos += 1;
            lhs = Expr::bin(op, lhs, self.product()?);
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Expr> {
        let mut lhs = self.atom()?;
        while let Some(op) = self.peek_op([BinOp::Mul, BinOp::Div]) {
            self.pos += 1;
            lhs = Expr::bin(op, lhs, self.atom()?);
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self
            .tokens
            .get(self.pos)
            .ok_or_else(|| Error::Parse("unexpected end of expression".into()))?;
        self.pos += 1;
        match tok {
            Token::Num(v) => Ok(Expr::Const(*v)),
            Token::Ident(name) => self
                .names
                .iter()
                .position(|n| n == name)
                .map(Expr::Var)
                .ok_or_else(|| Error::UnboundVariable(name.clone())),
            Token::Open => {
                let inner = self.sum()?;
                match self.tokens.get(self.pos) {
                    Some(Token::Close) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(Error::Parse("missing closing parenthesis".into())),
                }
            }
            Token::Op(BinOp::Sub) => Ok(Expr::bin(BinOp::Mul, Expr::Const(-1.0), self.atom()?)),
            other => Err(Error::Parse(format!("unexpected {other:?}"))),
        }
    }
}
