//! Type descriptors and function types.
//!
//! Grammar: `I` int, `D` float, `Z` bool, `S` string, `A` any, `V` void
//! (return position only), `[<desc>` array of, `L<ClassName>;` instance of.
//! A function type is written `(<params>)<ret>`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad descriptor `{text}`: {reason}")]
pub struct DescriptorError {
    pub text: String,
    pub reason: &'static str,
}

impl DescriptorError {
    fn new(text: &str, reason: &'static str) -> Self {
        DescriptorError {
            text: text.to_string(),
            reason,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TypeDesc {
    Int,
    Flt,
    Bool,
    Str,
    Any,
    Void,
    Array(Box<TypeDesc>),
    Class(String),
}

impl TypeDesc {
    pub fn array_of(elem: TypeDesc) -> TypeDesc {
        TypeDesc::Array(Box::new(elem))
    }

    pub fn class(name: impl Into<String>) -> TypeDesc {
        TypeDesc::Class(name.into())
    }

    /// `[A`, the generic argument array used by aspect advice.
    pub fn any_array() -> TypeDesc {
        TypeDesc::array_of(TypeDesc::Any)
    }

    pub fn is_void(&self) -> bool {
        matches!(self, TypeDesc::Void)
    }

    pub fn is_array(&self) -> bool {
        matches!(self, TypeDesc::Array(_))
    }

    pub fn element(&self) -> Option<&TypeDesc> {
        match self {
            TypeDesc::Array(e) => Some(e),
            _ => None,
        }
    }

    /// Class names referenced anywhere in this descriptor.
    pub fn class_names(&self) -> Vec<&str> {
        match self {
            TypeDesc::Class(n) => vec![n.as_str()],
            TypeDesc::Array(e) => e.class_names(),
            _ => Vec::new(),
        }
    }

    /// Parses one descriptor starting at `pos`, returning it and the next position.
    fn parse_at(text: &str, pos: usize) -> Result<(TypeDesc, usize), DescriptorError> {
        let bytes = text.as_bytes();
        let Some(&c) = bytes.get(pos) else {
            return Err(DescriptorError::new(text, "unexpected end"));
        };
        let simple = |d| Ok((d, pos + 1));
        match c {
            b'I' => simple(TypeDesc::Int),
            b'D' => simple(TypeDesc::Flt),
            b'Z' => simple(TypeDesc::Bool),
            b'S' => simple(TypeDesc::Str),
            b'A' => simple(TypeDesc::Any),
            b'V' => simple(TypeDesc::Void),
            b'[' => {
                let (elem, next) = Self::parse_at(text, pos + 1)?;
                if elem.is_void() {
                    return Err(DescriptorError::new(text, "array of void"));
                }
                Ok((TypeDesc::array_of(elem), next))
            }
            b'L' => {
                let rest = &text[pos + 1..];
                let end = rest
                    .find(';')
                    .ok_or_else(|| DescriptorError::new(text, "unterminated class descriptor"))?;
                let name = &rest[..end];
                if name.is_empty()
                    || name.contains(|c: char| "()[;:".contains(c) || c.is_whitespace())
                {
                    return Err(DescriptorError::new(text, "bad class name"));
                }
                Ok((TypeDesc::Class(name.to_string()), pos + 1 + end + 1))
            }
            _ => Err(DescriptorError::new(text, "unknown descriptor character")),
        }
    }
}

impl FromStr for TypeDesc {
    type Err = DescriptorError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (desc, next) = TypeDesc::parse_at(text, 0)?;
        if next != text.len() {
            return Err(DescriptorError::new(text, "trailing characters"));
        }
        Ok(desc)
    }
}

impl fmt::Display for TypeDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TypeDesc::Int => f.write_str("I"),
            TypeDesc::Flt => f.write_str("D"),
            TypeDesc::Bool => f.write_str("Z"),
            TypeDesc::Str => f.write_str("S"),
            TypeDesc::Any => f.write_str("A"),
            TypeDesc::Void => f.write_str("V"),
            TypeDesc::Array(e) => write!(f, "[{e}"),
            TypeDesc::Class(n) => write!(f, "L{n};"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunctionType {
    pub params: Vec<TypeDesc>,
    pub ret: TypeDesc,
}

impl FunctionType {
    pub fn new(params: Vec<TypeDesc>, ret: TypeDesc) -> Self {
        FunctionType { params, ret }
    }

    pub fn arity(&self) -> usize {
        self.params.len()
    }

    /// Same type with `receiver` inserted as parameter 0.
    pub fn with_receiver(&self, receiver: TypeDesc) -> FunctionType {
        let mut params = Vec::with_capacity(self.params.len() + 1);
        params.push(receiver);
        params.extend(self.params.iter().cloned());
        FunctionType::new(params, self.ret.clone())
    }

    /// Same type with parameter 0 removed. `None` when there are no parameters.
    pub fn without_receiver(&self) -> Option<FunctionType> {
        if self.params.is_empty() {
            return None;
        }
        Some(FunctionType::new(
            self.params[1..].to_vec(),
            self.ret.clone(),
        ))
    }

    /// Every parameter and the return replaced by `A` (void stays void).
    pub fn erased(&self) -> FunctionType {
        let ret = if self.ret.is_void() {
            TypeDesc::Void
        } else {
            TypeDesc::Any
        };
        FunctionType::new(vec![TypeDesc::Any; self.params.len()], ret)
    }
}

impl FromStr for FunctionType {
    type Err = DescriptorError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        if !text.starts_with('(') {
            return Err(DescriptorError::new(
                text,
                "function type must start with `(`",
            ));
        }
        let mut pos = 1;
        let mut params = Vec::new();
        loop {
            match text.as_bytes().get(pos) {
                None => return Err(DescriptorError::new(text, "missing `)`")),
                Some(b')') => {
                    pos += 1;
                    break;
                }
                Some(_) => {
                    let (d, next) = TypeDesc::parse_at(text, pos)?;
                    if d.is_void() {
                        return Err(DescriptorError::new(text, "void parameter"));
                    }
                    params.push(d);
                    pos = next;
                }
            }
        }
        let (ret, next) = TypeDesc::parse_at(text, pos)?;
        if next != text.len() {
            return Err(DescriptorError::new(text, "trailing characters"));
        }
        Ok(FunctionType { params, ret })
    }
}

impl fmt::Display for FunctionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for p in &self.params {
            write!(f, "{p}")?;
        }
        write!(f, "){}", self.ret)
    }
}
