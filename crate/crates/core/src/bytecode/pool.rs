//! Deduplicated constant pool. Index 0 is reserved and never holds an entry.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use super::descriptor::{DescriptorError, FunctionType, TypeDesc};

/// `Owner.name:(params)ret`
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MethodRef {
    pub owner: String,
    pub name: String,
    pub ty: FunctionType,
}

/// `Owner.name:Desc`
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldRef {
    pub owner: String,
    pub name: String,
    pub desc: TypeDesc,
}

fn split_member(text: &str) -> Result<(&str, &str, &str), DescriptorError> {
    let bad = |reason| DescriptorError {
        text: text.to_string(),
        reason,
    };
    let dot = text
        .find('.')
        .ok_or_else(|| bad("missing `.` between owner and member"))?;
    let (owner, rest) = (&text[..dot], &text[dot + 1..]);
    let colon = rest
        .find(':')
        .ok_or_else(|| bad("missing `:` before type"))?;
    let (name, ty) = (&rest[..colon], &rest[colon + 1..]);
    if owner.is_empty() || name.is_empty() {
        return Err(bad("empty owner or member name"));
    }
    Ok((owner, name, ty))
}

impl FromStr for MethodRef {
    type Err = DescriptorError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (owner, name, ty) = split_member(text)?;
        Ok(MethodRef {
            owner: owner.to_string(),
            name: name.to_string(),
            ty: ty.parse()?,
        })
    }
}

impl fmt::Display for MethodRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}:{}", self.owner, self.name, self.ty)
    }
}

impl FromStr for FieldRef {
    type Err = DescriptorError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (owner, name, desc) = split_member(text)?;
        let desc: TypeDesc = desc.parse()?;
        if desc.is_void() {
            return Err(DescriptorError {
                text: text.to_string(),
                reason: "void field",
            });
        }
        Ok(FieldRef {
            owner: owner.to_string(),
            name: name.to_string(),
            desc,
        })
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}:{}", self.owner, self.name, self.desc)
    }
}

#[derive(Debug, Clone)]
pub enum PoolEntry {
    Str(String),
    Int(i64),
    Flt(f64),
    Bool(bool),
    Null,
    Type(FunctionType),
    Class(String),
    Field(FieldRef),
    Method(MethodRef),
}

impl PoolEntry {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PoolEntry::Str(_) => "string",
            PoolEntry::Int(_) => "int",
            PoolEntry::Flt(_) => "float",
            PoolEntry::Bool(_) => "bool",
            PoolEntry::Null => "null",
            PoolEntry::Type(_) => "function type",
            PoolEntry::Class(_) => "class",
            PoolEntry::Field(_) => "field ref",
            PoolEntry::Method(_) => "method ref",
        }
    }

    pub fn is_loadable_constant(&self) -> bool {
        matches!(
            self,
            PoolEntry::Str(_)
                | PoolEntry::Int(_)
                | PoolEntry::Flt(_)
                | PoolEntry::Bool(_)
                | PoolEntry::Null
        )
    }

    fn key(&self) -> PoolKey {
        match self {
            PoolEntry::Str(s) => PoolKey::Str(s.clone()),
            PoolEntry::Int(i) => PoolKey::Int(*i),
            PoolEntry::Flt(x) => PoolKey::Flt(x.to_bits()),
            PoolEntry::Bool(b) => PoolKey::Bool(*b),
            PoolEntry::Null => PoolKey::Null,
            PoolEntry::Type(t) => PoolKey::Type(t.clone()),
            PoolEntry::Class(c) => PoolKey::Class(c.clone()),
            PoolEntry::Field(r) => PoolKey::Field(r.clone()),
            PoolEntry::Method(r) => PoolKey::Method(r.clone()),
        }
    }
}

// Floats compare by bit pattern so that -0.0 and NaN payloads stay distinct entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum PoolKey {
    Str(String),
    Int(i64),
    Flt(u64),
    Bool(bool),
    Null,
    Type(FunctionType),
    Class(String),
    Field(FieldRef),
    Method(MethodRef),
}

impl PartialEq for PoolEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConstantPool {
    entries: Vec<PoolEntry>,
    index: HashMap<PoolKey, u32>,
}

impl PartialEq for ConstantPool {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl ConstantPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of entries (the reserved slot 0 is not counted).
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn intern(&mut self, entry: PoolEntry) -> u32 {
        let key = entry.key();
        if let Some(&idx) = self.index.get(&key) {
            return idx;
        }
        self.entries.push(entry);
        let idx = self.entries.len() as u32;
        self.index.insert(key, idx);
        idx
    }

    /// Appends without deduplication. Used by the decoder so a foreign pool keeps its layout.
    pub(crate) fn push_raw(&mut self, entry: PoolEntry) -> u32 {
        let key = entry.key();
        self.entries.push(entry);
        let idx = self.entries.len() as u32;
        self.index.entry(key).or_insert(idx);
        idx
    }

    pub fn str_idx(&mut self, s: &str) -> u32 {
        self.intern(PoolEntry::Str(s.to_string()))
    }

    pub fn get(&self, idx: u32) -> Option<&PoolEntry> {
        if idx == 0 {
            return None;
        }
        self.entries.get(idx as usize - 1)
    }

    pub fn contains_index(&self, idx: u32) -> bool {
        idx >= 1 && (idx as usize) <= self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &PoolEntry)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i as u32 + 1, e))
    }

    pub fn str(&self, idx: u32) -> Option<&str> {
        match self.get(idx) {
            Some(PoolEntry::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn class(&self, idx: u32) -> Option<&str> {
        match self.get(idx) {
            Some(PoolEntry::Class(s)) => Some(s),
            _ => None,
        }
    }

    pub fn fn_type(&self, idx: u32) -> Option<&FunctionType> {
        match self.get(idx) {
            Some(PoolEntry::Type(t)) => Some(t),
            _ => None,
        }
    }

    pub fn method(&self, idx: u32) -> Option<&MethodRef> {
        match self.get(idx) {
            Some(PoolEntry::Method(m)) => Some(m),
            _ => None,
        }
    }

    pub fn field(&self, idx: u32) -> Option<&FieldRef> {
        match self.get(idx) {
            Some(PoolEntry::Field(r)) => Some(r),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_deduplicates() {
        let mut pool = ConstantPool::new();
        let a = pool.str_idx("main");
        let b = pool.intern(PoolEntry::Int(3));
        let c = pool.str_idx("main");
        assert_eq!(a, 1);
        assert_eq!(b, 2);
        assert_eq!(a, c);
        assert_eq!(pool.len(), 2);
        assert!(pool.get(0).is_none());
    }

    #[test]
    fn floats_dedup_by_bits() {
        let mut pool = ConstantPool::new();
        let a = pool.intern(PoolEntry::Flt(0.0));
        let b = pool.intern(PoolEntry::Flt(-0.0));
        assert_ne!(a, b);
        assert_eq!(pool.intern(PoolEntry::Flt(0.0)), a);
    }

    #[test]
    fn method_ref_text() {
        let m: MethodRef = "MyActionListener.counterIncrement:(LMyActionListener;)V"
            .parse()
            .unwrap();
        assert_eq!(m.owner, "MyActionListener");
        assert_eq!(m.name, "counterIncrement");
        assert_eq!(m.ty.params.len(), 1);
        assert_eq!(
            m.to_string(),
            "MyActionListener.counterIncrement:(LMyActionListener;)V"
        );
        assert!("nodot:(I)I".parse::<MethodRef>().is_err());
        assert!("A.b".parse::<MethodRef>().is_err());
        let f: FieldRef = "Point.x:I".parse().unwrap();
        assert_eq!(f.desc, TypeDesc::Int);
        assert!("Point.x:V".parse::<FieldRef>().is_err());
    }
}
