//! Subject-language (Python) literal values.
//!
//! Parses literal text such as `[1, 'a', (2.5,)]`, `{'k': None}` or canonical
//! constructor text `Point(x=1, y=2)`, renders it back in canonical form, and
//! compares values with the subject language's `==` semantics.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigInt;
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("not a literal at offset {offset}: {message}")]
pub struct LiteralError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub enum LiteralValue {
    None,
    Bool(bool),
    Int(BigInt),
    Float(f64),
    Str(String),
    Bytes(Vec<u8>),
    List(Vec<LiteralValue>),
    Tuple(Vec<LiteralValue>),
    Set(Vec<LiteralValue>),
    FrozenSet(Vec<LiteralValue>),
    Dict(Vec<(LiteralValue, LiteralValue)>),
    /// `Name(arg, ..., key=value, ...)`, used for objects without a literal form.
    Constructor {
        name: String,
        args: Vec<LiteralValue>,
        kwargs: Vec<(String, LiteralValue)>,
    },
}

impl LiteralValue {
    pub fn parse(text: &str) -> Result<Self, LiteralError> {
        let mut p = Parser {
            src: text.as_bytes(),
            text,
            pos: 0,
        };
        p.skip_ws();
        let v = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("trailing input"));
        }
        Ok(v)
    }

    fn numeric(&self) -> Option<Num> {
        match self {
            LiteralValue::Bool(b) => Some(Num::Int(BigInt::from(*b as u8))),
            LiteralValue::Int(i) => Some(Num::Int(i.clone())),
            LiteralValue::Float(f) => Some(Num::Float(*f)),
            _ => None,
        }
    }

    /// Equality as the subject language's `==` would decide it.
    /// True when no part of the value is an object constructor, i.e. it is
    /// a plain constant expression.
    pub fn is_constant(&self) -> bool {
        match self {
            LiteralValue::List(xs) | LiteralValue::Tuple(xs) | LiteralValue::Set(xs) | LiteralValue::FrozenSet(xs) => {
                xs.iter().all(LiteralValue::is_constant)
            }
            LiteralValue::Dict(kv) => kv.iter().all(|(k, v)| k.is_constant() && v.is_constant()),
            LiteralValue::Constructor { .. } => false,
            _ => true,
        }
    }

    pub fn py_eq(&self, other: &LiteralValue) -> bool {
        use LiteralValue::*;
        if let (Some(a), Some(b)) = (self.numeric(), other.numeric()) {
            return a.eq(&b);
        }
        match (self, other) {
            (None, None) => true,
            (Str(a), Str(b)) => a == b,
            (Bytes(a), Bytes(b)) => a == b,
            (List(a), List(b)) | (Tuple(a), Tuple(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.py_eq(y)),
            (Set(a) | FrozenSet(a), Set(b) | FrozenSet(b)) => {
                a.iter().all(|x| b.iter().any(|y| x.py_eq(y))) && b.iter().all(|y| a.iter().any(|x| x.py_eq(y)))
            }
            (Dict(a), Dict(b)) => {
                let a = dedup_keys(a);
                let b = dedup_keys(b);
                a.len() == b.len()
                    && a.iter()
                        .all(|(k, v)| b.iter().find(|(k2, _)| k.py_eq(k2)).is_some_and(|(_, v2)| v.py_eq(v2)))
            }
            (
                Constructor {
                    name: n1,
                    args: a1,
                    kwargs: k1,
                },
                Constructor {
                    name: n2,
                    args: a2,
                    kwargs: k2,
                },
            ) => {
                n1 == n2
                    && a1.len() == a2.len()
                    && a1.iter().zip(a2).all(|(x, y)| x.py_eq(y))
                    && k1.len() == k2.len()
                    && k1.iter().all(|(k, v)| k2.iter().any(|(kk, vv)| k == kk && v.py_eq(vv)))
            }
            _ => false,
        }
    }

    /// Subject-language type name of the value.
    pub fn type_name(&self) -> &str {
        match self {
            LiteralValue::None => "NoneType",
            LiteralValue::Bool(_) => "bool",
            LiteralValue::Int(_) => "int",
            LiteralValue::Float(_) => "float",
            LiteralValue::Str(_) => "str",
            LiteralValue::Bytes(_) => "bytes",
            LiteralValue::List(_) => "list",
            LiteralValue::Tuple(_) => "tuple",
            LiteralValue::Set(_) => "set",
            LiteralValue::FrozenSet(_) => "frozenset",
            LiteralValue::Dict(_) => "dict",
            LiteralValue::Constructor { name, .. } => name.rsplit('.').next().unwrap_or(name),
        }
    }
}

fn dedup_keys(items: &[(LiteralValue, LiteralValue)]) -> Vec<&(LiteralValue, LiteralValue)> {
    // later duplicates win, as in a dict display
    let mut out: Vec<&(LiteralValue, LiteralValue)> = Vec::new();
    for item in items {
        if let Some(slot) = out.iter_mut().find(|(k, _)| k.py_eq(&item.0)) {
            *slot = item;
        } else {
            out.push(item);
        }
    }
    out
}

enum Num {
    Int(BigInt),
    Float(f64),
}

impl Num {
    fn eq(&self, other: &Num) -> bool {
        match (self, other) {
            (Num::Int(a), Num::Int(b)) => a == b,
            (Num::Float(a), Num::Float(b)) => a == b,
            (Num::Int(i), Num::Float(f)) | (Num::Float(f), Num::Int(i)) => {
                f.is_finite() && f.fract() == 0.0 && BigInt::from_f64(*f).is_some_and(|g| &g == i)
            }
        }
    }
}

/// Structural equality (same constructors, bit-identical floats). Use
/// [`LiteralValue::py_eq`] for subject-language semantics.
impl PartialEq for LiteralValue {
    fn eq(&self, other: &Self) -> bool {
        use LiteralValue::*;
        match (self, other) {
            (None, None) => true,
            (Bool(a), Bool(b)) => a == b,
            (Int(a), Int(b)) => a == b,
            (Float(a), Float(b)) => a.to_bits() == b.to_bits(),
            (Str(a), Str(b)) => a == b,
            (Bytes(a), Bytes(b)) => a == b,
            (List(a), List(b)) | (Tuple(a), Tuple(b)) | (Set(a), Set(b)) | (FrozenSet(a), FrozenSet(b)) => a == b,
            (Dict(a), Dict(b)) => a == b,
            (
                Constructor {
                    name: n1,
                    args: a1,
                    kwargs: k1,
                },
                Constructor {
                    name: n2,
                    args: a2,
                    kwargs: k2,
                },
            ) => n1 == n2 && a1 == a2 && k1 == k2,
            _ => false,
        }
    }
}

impl FromStr for LiteralValue {
    type Err = LiteralError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LiteralValue::parse(s)
    }
}

impl Serialize for LiteralValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LiteralValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        LiteralValue::parse(&text).map_err(serde::de::Error::custom)
    }
}

// ------------------------------------------------------------------ display

/// Renders a float the way the subject runtime's `repr` does.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0.0".into()
        } else {
            "0.0".into()
        };
    }
    let sci = format!("{:e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("LowerExp has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let sign = if negative { "-" } else { "" };
    if (-4..16).contains(&exp) {
        let point = exp + 1;
        let body = if point <= 0 {
            format!("0.{}{}", "0".repeat((-point) as usize), digits)
        } else if (point as usize) >= digits.len() {
            format!("{}{}.0", digits, "0".repeat(point as usize - digits.len()))
        } else {
            let (a, b) = digits.split_at(point as usize);
            format!("{a}.{b}")
        };
        format!("{sign}{body}")
    } else {
        let (first, rest) = digits.split_at(1);
        let mant = if rest.is_empty() {
            first.to_string()
        } else {
            format!("{first}.{rest}")
        };
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{sign}{mant}e{esign}{:02}", exp.abs())
    }
}

/// Renders a string with the subject runtime's `repr` quoting rules.
pub fn quote_str(s: &str) -> String {
    let quote = if s.contains('\'') && !s.contains('"') {
        '"'
    } else {
        '\''
    };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(quote);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                out.push_str(&format!("\\x{:02x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push(quote);
    out
}

fn quote_bytes(b: &[u8]) -> String {
    let quote = if b.contains(&b'\'') && !b.contains(&b'"') {
        b'"'
    } else {
        b'\''
    };
    let mut out = String::from("b");
    out.push(quote as char);
    for &c in b {
        match c {
            b'\\' => out.push_str("\\\\"),
            b'\n' => out.push_str("\\n"),
            b'\r' => out.push_str("\\r"),
            b'\t' => out.push_str("\\t"),
            c if c == quote => {
                out.push('\\');
                out.push(c as char);
            }
            0x20..=0x7e => out.push(c as char),
            c => out.push_str(&format!("\\x{c:02x}")),
        }
    }
    out.push(quote as char);
    out
}

fn join(f: &mut fmt::Formatter<'_>, items: &[LiteralValue]) -> fmt::Result {
    for (i, item) in items.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{item}")?;
    }
    Ok(())
}

impl fmt::Display for LiteralValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LiteralValue::None => f.write_str("None"),
            LiteralValue::Bool(true) => f.write_str("True"),
            LiteralValue::Bool(false) => f.write_str("False"),
            LiteralValue::Int(i) => write!(f, "{i}"),
            LiteralValue::Float(x) => f.write_str(&format_float(*x)),
            LiteralValue::Str(s) => f.write_str(&quote_str(s)),
            LiteralValue::Bytes(b) => f.write_str(&quote_bytes(b)),
            LiteralValue::List(items) => {
                f.write_str("[")?;
                join(f, items)?;
                f.write_str("]")
            }
            LiteralValue::Tuple(items) => {
                f.write_str("(")?;
                join(f, items)?;
                if items.len() == 1 {
                    f.write_str(",")?;
                }
                f.write_str(")")
            }
            LiteralValue::Set(items) if items.is_empty() => f.write_str("set()"),
            LiteralValue::Set(items) => {
                f.write_str("{")?;
                join(f, items)?;
                f.write_str("}")
            }
            LiteralValue::FrozenSet(items) if items.is_empty() => f.write_str("frozenset()"),
            LiteralValue::FrozenSet(items) => {
                f.write_str("frozenset({")?;
                join(f, items)?;
                f.write_str("})")
            }
            LiteralValue::Dict(items) => {
                f.write_str("{")?;
                for (i, (k, v)) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                f.write_str("}")
            }
            LiteralValue::Constructor { name, args, kwargs } => {
                write!(f, "{name}(")?;
                join(f, args)?;
                for (i, (k, v)) in kwargs.iter().enumerate() {
                    if i > 0 || !args.is_empty() {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}={v}")?;
                }
                f.write_str(")")
            }
        }
    }
}

// ------------------------------------------------------------------ parsing

struct Parser<'a> {
    src: &'a [u8],
    text: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> LiteralError {
        LiteralError {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c == b' ' || c == b'\t' || c == b'\n' || c == b'\r' {
                self.pos += 1;
            } else if c == b'\\' && matches!(self.src.get(self.pos + 1), Some(b'\n')) {
                self.pos += 2;
            } else {
                break;
            }
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), LiteralError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<LiteralValue, LiteralError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.err("unexpected end")),
            Some(b'-') | Some(b'+') => {
                let neg = self.peek() == Some(b'-');
                self.pos += 1;
                let v = self.expr()?;
                if !neg {
                    return match v {
                        LiteralValue::Int(_) | LiteralValue::Float(_) => Ok(v),
                        LiteralValue::Bool(b) => Ok(LiteralValue::Int(BigInt::from(b as u8))),
                        _ => Err(self.err("unary + on non-number")),
                    };
                }
                match v {
                    LiteralValue::Int(i) => Ok(LiteralValue::Int(-i)),
                    LiteralValue::Float(x) => Ok(LiteralValue::Float(-x)),
                    LiteralValue::Bool(b) => Ok(LiteralValue::Int(-BigInt::from(b as u8))),
                    _ => Err(self.err("unary - on non-number")),
                }
            }
            Some(b'[') => {
                self.pos += 1;
                let (items, _) = self.seq(b']')?;
                Ok(LiteralValue::List(items))
            }
            Some(b'(') => {
                self.pos += 1;
                let (items, trailing_comma) = self.seq(b')')?;
                if items.len() == 1 && !trailing_comma {
                    Ok(items.into_iter().next().expect("one item"))
                } else {
                    Ok(LiteralValue::Tuple(items))
                }
            }
            Some(b'{') => {
                self.pos += 1;
                self.brace()
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c == b'\'' || c == b'"' => self.strings(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' || c >= 0x80 => {
                if let Some(v) = self.prefixed_string()? {
                    return Ok(v);
                }
                self.name_or_call()
            }
            Some(_) => Err(self.err("unexpected character")),
        }
    }

    fn seq(&mut self, close: u8) -> Result<(Vec<LiteralValue>, bool), LiteralError> {
        let mut items = Vec::new();
        let mut trailing = false;
        loop {
            if self.eat(close) {
                return Ok((items, trailing));
            }
            items.push(self.expr()?);
            trailing = false;
            if self.eat(b',') {
                trailing = true;
                continue;
            }
            self.expect(close)?;
            return Ok((items, trailing));
        }
    }

    fn brace(&mut self) -> Result<LiteralValue, LiteralError> {
        if self.eat(b'}') {
            return Ok(LiteralValue::Dict(Vec::new()));
        }
        let first = self.expr()?;
        if self.eat(b':') {
            let v = self.expr()?;
            let mut items = vec![(first, v)];
            loop {
                if self.eat(b'}') {
                    return Ok(LiteralValue::Dict(items));
                }
                self.expect(b',')?;
                if self.eat(b'}') {
                    return Ok(LiteralValue::Dict(items));
                }
                let k = self.expr()?;
                self.expect(b':')?;
                let v = self.expr()?;
                items.push((k, v));
            }
        }
        let mut items = vec![first];
        loop {
            if self.eat(b'}') {
                return Ok(LiteralValue::Set(items));
            }
            self.expect(b',')?;
            if self.eat(b'}') {
                return Ok(LiteralValue::Set(items));
            }
            items.push(self.expr()?);
        }
    }

    fn number(&mut self) -> Result<LiteralValue, LiteralError> {
        let start = self.pos;
        let rest = &self.text[start..];
        let lower = rest.to_ascii_lowercase();
        for (prefix, radix) in [("0x", 16), ("0o", 8), ("0b", 2)] {
            if lower.starts_with(prefix) {
                let digits: String = rest[2..]
                    .chars()
                    .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
                    .collect();
                self.pos += 2 + digits.len();
                let clean: String = digits.chars().filter(|c| *c != '_').collect();
                return BigInt::parse_bytes(clean.as_bytes(), radix)
                    .map(LiteralValue::Int)
                    .ok_or_else(|| self.err("bad integer"));
            }
        }
        let mut end = start;
        let mut is_float = false;
        let bytes = self.src;
        while end < bytes.len() {
            let c = bytes[end];
            if c.is_ascii_digit() || c == b'_' {
                end += 1;
            } else if c == b'.' {
                is_float = true;
                end += 1;
            } else if (c == b'e' || c == b'E')
                && end + 1 < bytes.len()
                && (bytes[end + 1].is_ascii_digit()
                    || ((bytes[end + 1] == b'+' || bytes[end + 1] == b'-')
                        && end + 2 < bytes.len()
                        && bytes[end + 2].is_ascii_digit()))
            {
                is_float = true;
                end += 2;
            } else {
                break;
            }
        }
        if end < bytes.len() && (bytes[end] == b'j' || bytes[end] == b'J') {
            return Err(self.err("complex literals are not supported"));
        }
        let clean: String = self.text[start..end].chars().filter(|c| *c != '_').collect();
        self.pos = end;
        if is_float {
            clean
                .parse::<f64>()
                .map(LiteralValue::Float)
                .map_err(|_| self.err("bad float"))
        } else {
            BigInt::from_str(&clean)
                .map(LiteralValue::Int)
                .map_err(|_| self.err("bad integer"))
        }
    }

    fn prefixed_string(&mut self) -> Result<Option<LiteralValue>, LiteralError> {
        let mut i = self.pos;
        while i < self.src.len() && i - self.pos < 2 && self.src[i].is_ascii_alphabetic() {
            i += 1;
        }
        if i < self.src.len() && (self.src[i] == b'\'' || self.src[i] == b'"') {
            let prefix = self.text[self.pos..i].to_ascii_lowercase();
            if ["r", "u", "b", "br", "rb"].contains(&prefix.as_str()) {
                return self.strings().map(Some);
            }
        }
        Ok(None)
    }

    /// One or more adjacent string literals, implicitly concatenated.
    fn strings(&mut self) -> Result<LiteralValue, LiteralError> {
        let mut text = String::new();
        let mut bytes: Option<Vec<u8>> = None;
        let mut any = false;
        loop {
            self.skip_ws();
            let start = self.pos;
            let mut raw = false;
            let mut is_bytes = false;
            while let Some(c) = self.peek() {
                match c.to_ascii_lowercase() {
                    b'r' => raw = true,
                    b'b' => is_bytes = true,
                    b'u' => {}
                    _ => break,
                }
                self.pos += 1;
            }
            let Some(q) = self.peek().filter(|c| *c == b'\'' || *c == b'"') else {
                self.pos = start;
                break;
            };
            if self.pos - start > 2 {
                self.pos = start;
                break;
            }
            let triple = self.src[self.pos..].starts_with(&[q, q, q]);
            self.pos += if triple { 3 } else { 1 };
            let body = self.string_body(q, triple, raw)?;
            any = true;
            if is_bytes {
                let b = bytes.get_or_insert_with(Vec::new);
                for ch in body.chars() {
                    let v = ch as u32;
                    if v > 0xff {
                        return Err(self.err("non-byte in bytes literal"));
                    }
                    b.push(v as u8);
                }
            } else {
                text.push_str(&body);
            }
        }
        if !any {
            return Err(self.err("expected string"));
        }
        match bytes {
            Some(b) if text.is_empty() => Ok(LiteralValue::Bytes(b)),
            Some(_) => Err(self.err("cannot mix bytes and str")),
            None => Ok(LiteralValue::Str(text)),
        }
    }

    fn string_body(&mut self, q: u8, triple: bool, raw: bool) -> Result<String, LiteralError> {
        let mut out = String::new();
        loop {
            let Some(c) = self.text[self.pos..].chars().next() else {
                return Err(self.err("unterminated string"));
            };
            if c as u32 == q as u32 {
                if !triple {
                    self.pos += 1;
                    return Ok(out);
                }
                if self.src[self.pos..].starts_with(&[q, q, q]) {
                    self.pos += 3;
                    return Ok(out);
                }
            }
            if c == '\n' && !triple {
                return Err(self.err("newline in string"));
            }
            if c == '\\' {
                let Some(next) = self.text[self.pos + 1..].chars().next() else {
                    return Err(self.err("dangling escape"));
                };
                if raw {
                    out.push('\\');
                    out.push(next);
                    self.pos += 1 + next.len_utf8();
                    continue;
                }
                self.pos += 1 + next.len_utf8();
                match next {
                    '\n' => {}
                    '\\' => out.push('\\'),
                    '\'' => out.push('\''),
                    '"' => out.push('"'),
                    'n' => out.push('\n'),
                    'r' => out.push('\r'),
                    't' => out.push('\t'),
                    'a' => out.push('\x07'),
                    'b' => out.push('\x08'),
                    'f' => out.push('\x0c'),
                    'v' => out.push('\x0b'),
                    '0'..='7' => {
                        let mut v = next.to_digit(8).expect("octal digit");
                        for _ in 0..2 {
                            match self.peek() {
                                Some(d @ b'0'..=b'7') => {
                                    v = v * 8 + (d - b'0') as u32;
                                    self.pos += 1;
                                }
                                _ => break,
                            }
                        }
                        out.push(char::from_u32(v).ok_or_else(|| self.err("bad escape"))?);
                    }
                    'x' | 'u' | 'U' => {
                        let n = match next {
                            'x' => 2,
                            'u' => 4,
                            _ => 8,
                        };
                        let hex = self
                            .text
                            .get(self.pos..self.pos + n)
                            .ok_or_else(|| self.err("short escape"))?;
                        let v = u32::from_str_radix(hex, 16).map_err(|_| self.err("bad escape"))?;
                        out.push(char::from_u32(v).ok_or_else(|| self.err("bad escape"))?);
                        self.pos += n;
                    }
                    other => {
                        out.push('\\');
                        out.push(other);
                    }
                }
                continue;
            }
            out.push(c);
            self.pos += c.len_utf8();
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while let Some(c) = self.text[self.pos..].chars().next() {
            if c.is_alphanumeric() || c == '_' || (c == '.' && self.pos > start) {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        self.text[start..self.pos].to_string()
    }

    fn name_or_call(&mut self) -> Result<LiteralValue, LiteralError> {
        let name = self.ident();
        self.skip_ws();
        if self.peek() != Some(b'(') {
            return match name.as_str() {
                "None" => Ok(LiteralValue::None),
                "True" => Ok(LiteralValue::Bool(true)),
                "False" => Ok(LiteralValue::Bool(false)),
                "inf" => Ok(LiteralValue::Float(f64::INFINITY)),
                "nan" => Ok(LiteralValue::Float(f64::NAN)),
                _ => Err(self.err(&format!("bare name `{name}`"))),
            };
        }
        self.pos += 1;
        let mut args = Vec::new();
        let mut kwargs = Vec::new();
        loop {
            if self.eat(b')') {
                break;
            }
            self.skip_ws();
            let save = self.pos;
            let key = self.ident();
            self.skip_ws();
            let is_kw = !key.is_empty()
                && !key.contains('.')
                && self.peek() == Some(b'=')
                && self.src.get(self.pos + 1) != Some(&b'=');
            if is_kw {
                self.pos += 1;
                kwargs.push((key, self.expr()?));
            } else {
                self.pos = save;
                if !kwargs.is_empty() {
                    return Err(self.err("positional argument after keyword"));
                }
                args.push(self.expr()?);
            }
            if self.eat(b',') {
                continue;
            }
            self.expect(b')')?;
            break;
        }
        Ok(match (name.as_str(), args.len(), kwargs.is_empty()) {
            ("float", 1, true) => match &args[0] {
                LiteralValue::Str(s) => match s.trim().to_ascii_lowercase().as_str() {
                    "inf" | "+inf" | "infinity" => LiteralValue::Float(f64::INFINITY),
                    "-inf" | "-infinity" => LiteralValue::Float(f64::NEG_INFINITY),
                    "nan" => LiteralValue::Float(f64::NAN),
                    _ => return Err(self.err("unsupported float() argument")),
                },
                LiteralValue::Int(i) => LiteralValue::Float(i.to_f64().unwrap_or(f64::NAN)),
                LiteralValue::Float(x) => LiteralValue::Float(*x),
                _ => return Err(self.err("unsupported float() argument")),
            },
            ("set", 0, true) => LiteralValue::Set(Vec::new()),
            ("frozenset", 0, true) => LiteralValue::FrozenSet(Vec::new()),
            ("frozenset", 1, true) => match &args[0] {
                LiteralValue::Set(items) | LiteralValue::List(items) | LiteralValue::Tuple(items) => {
                    LiteralValue::FrozenSet(items.clone())
                }
                _ => return Err(self.err("unsupported frozenset() argument")),
            },
            _ => LiteralValue::Constructor { name, args, kwargs },
        })
    }
}

/// `true` when `text` is a literal whose value is zero or an empty collection.
pub fn is_zero_or_empty(text: &str) -> bool {
    match LiteralValue::parse(text) {
        Ok(LiteralValue::Int(i)) => i.is_zero(),
        Ok(LiteralValue::Float(x)) => x == 0.0,
        Ok(LiteralValue::Str(s)) => s.is_empty(),
        Ok(LiteralValue::List(v) | LiteralValue::Tuple(v) | LiteralValue::Set(v)) => v.is_empty(),
        Ok(LiteralValue::Dict(v)) => v.is_empty(),
        _ => false,
    }
}
