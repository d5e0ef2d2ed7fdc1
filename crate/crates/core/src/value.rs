//! Runtime values.

use std::fmt;
use std::sync::Arc;

use parking_lot::RwLock;

use crate::builtins::STR_CLASS;
use crate::bytecode::{PoolEntry, TypeDesc};
use crate::vm::RuntimeClass;

#[derive(Clone)]
pub enum Value {
    Int(i64),
    Flt(f64),
    Bool(bool),
    Str(Arc<str>),
    Arr(ArrayRef),
    Obj(ObjRef),
    Null,
}

/// Shared, mutable, heterogeneous array.
#[derive(Clone)]
pub struct ArrayRef(pub Arc<RwLock<Vec<Value>>>);

#[derive(Clone)]
pub struct ObjRef(pub Arc<Object>);

pub struct Object {
    pub class: Arc<RuntimeClass>,
    pub fields: RwLock<Vec<Value>>,
}

impl ArrayRef {
    pub fn new(items: Vec<Value>) -> Self {
        ArrayRef(Arc::new(RwLock::new(items)))
    }

    pub fn len(&self) -> usize {
        self.0.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<Value> {
        self.0.read_recursive().clone()
    }
}

impl Value {
    pub fn str(s: &str) -> Value {
        Value::Str(Arc::from(s))
    }

    pub fn array(items: Vec<Value>) -> Value {
        Value::Arr(ArrayRef::new(items))
    }

    pub fn tag_name(&self) -> &'static str {
        match self {
            Value::Int(_) => "Int",
            Value::Flt(_) => "Flt",
            Value::Bool(_) => "Bool",
            Value::Str(_) => "Str",
            Value::Arr(_) => "Arr",
            Value::Obj(_) => "Obj",
            Value::Null => "Null",
        }
    }

    pub fn from_constant(e: &PoolEntry) -> Option<Value> {
        Some(match e {
            PoolEntry::Str(s) => Value::str(s),
            PoolEntry::Int(i) => Value::Int(*i),
            PoolEntry::Flt(x) => Value::Flt(*x),
            PoolEntry::Bool(b) => Value::Bool(*b),
            PoolEntry::Null => Value::Null,
            _ => return None,
        })
    }

    /// Runtime check of a value against a descriptor. `A` accepts everything;
    /// `Null` is accepted wherever a reference (string, array, object) is.
    /// Array element types are not tracked at runtime.
    pub fn is_assignable_to(&self, desc: &TypeDesc) -> bool {
        match (desc, self) {
            (TypeDesc::Any, _) => true,
            (TypeDesc::Void, _) => false,
            (TypeDesc::Int, Value::Int(_)) => true,
            (TypeDesc::Flt, Value::Flt(_)) => true,
            (TypeDesc::Bool, Value::Bool(_)) => true,
            (TypeDesc::Str | TypeDesc::Array(_) | TypeDesc::Class(_), Value::Null) => true,
            (TypeDesc::Str, Value::Str(_)) => true,
            (TypeDesc::Array(_), Value::Arr(_)) => true,
            (TypeDesc::Class(c), Value::Str(_)) => c == STR_CLASS,
            (TypeDesc::Class(c), Value::Obj(o)) => o.0.class.is_subtype_of(c),
            _ => false,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    /// Equality used by `EQ`/`NE`: by value for scalars and strings, by identity for arrays and objects.
    pub fn same(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Flt(a), Value::Flt(b)) => a == b,
            (Value::Int(a), Value::Flt(b)) | (Value::Flt(b), Value::Int(a)) => (*a as f64) == *b,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::Arr(a), Value::Arr(b)) => Arc::ptr_eq(&a.0, &b.0),
            (Value::Obj(a), Value::Obj(b)) => Arc::ptr_eq(&a.0, &b.0),
            (Value::Null, Value::Null) => true,
            _ => false,
        }
    }

    fn render(&self, f: &mut fmt::Formatter<'_>, depth: usize) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Flt(x) => write!(f, "{x:?}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Str(s) => f.write_str(s),
            Value::Null => f.write_str("null"),
            Value::Arr(a) => {
                if depth > 8 {
                    return f.write_str("[...]");
                }
                let items = a.0.read_recursive();
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    v.render(f, depth + 1)?;
                }
                f.write_str("]")
            }
            Value::Obj(o) => {
                if depth > 8 {
                    return write!(f, "{}{{...}}", o.0.class.name);
                }
                let fields = o.0.fields.read_recursive();
                write!(f, "{}{{", o.0.class.name)?;
                for (i, ((name, _), v)) in o.0.class.fields.iter().zip(fields.iter()).enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{name}=")?;
                    v.render(f, depth + 1)?;
                }
                f.write_str("}")
            }
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.render(f, 0)
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => write!(f, "Str({s:?})"),
            other => write!(f, "{}({other})", other.tag_name()),
        }
    }
}

/// Structural equality for tests and result comparison; arrays and objects compare by contents.
impl PartialEq for Value {
    fn eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Arr(a), Value::Arr(b)) => Arc::ptr_eq(&a.0, &b.0) || a.to_vec() == b.to_vec(),
            (Value::Obj(a), Value::Obj(b)) => {
                Arc::ptr_eq(&a.0, &b.0)
                    || (a.0.class.name == b.0.class.name
                        && *a.0.fields.read_recursive() == *b.0.fields.read_recursive())
            }
            (Value::Int(_), Value::Flt(_)) | (Value::Flt(_), Value::Int(_)) => false,
            _ => self.same(other),
        }
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Flt(x)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_matches_array_listing_style() {
        assert_eq!(Value::array(vec![Value::Int(10)]).to_string(), "[10]");
        assert_eq!(
            Value::array(vec![1.into(), "a".into(), Value::Null]).to_string(),
            "[1, a, null]"
        );
        assert_eq!(Value::Flt(2.0).to_string(), "2.0");
    }

    #[test]
    fn self_containing_array_renders_without_deadlock() {
        let a = ArrayRef::new(vec![]);
        a.0.write().push(Value::Arr(a.clone()));
        let text = Value::Arr(a).to_string();
        assert!(text.contains("[...]"));
    }

    #[test]
    fn assignability() {
        assert!(Value::Int(1).is_assignable_to(&TypeDesc::Any));
        assert!(!Value::Int(1).is_assignable_to(&TypeDesc::Str));
        assert!(Value::Null.is_assignable_to(&TypeDesc::Str));
        assert!(!Value::Null.is_assignable_to(&TypeDesc::Int));
        assert!(Value::str("x").is_assignable_to(&TypeDesc::class("Str")));
        assert!(Value::array(vec![]).is_assignable_to(&TypeDesc::any_array()));
    }
}
