use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use crate::bytecode::{FnFlags, FunctionType, TypeDesc};

use super::{ExecContext, VmError};
use crate::value::Value;

pub type NativeFn = fn(&mut ExecContext<'_>, Vec<Value>) -> Result<Value, VmError>;

/// Index into the image's function table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FuncId(pub u32);

#[derive(Clone, Copy)]
pub enum Callable {
    Bytecode(FuncId),
    Native(NativeFn),
}

impl fmt::Debug for Callable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Callable::Bytecode(id) => write!(f, "Bytecode({})", id.0),
            Callable::Native(_) => f.write_str("Native"),
        }
    }
}

/// A method visible in a class, declared there or inherited.
#[derive(Clone, Debug)]
pub struct MethodEntry {
    pub name: Arc<str>,
    /// Declared type, receiver excluded.
    pub ty: FunctionType,
    pub flags: FnFlags,
    pub declaring: Arc<str>,
    /// `None` for abstract methods.
    pub callable: Option<Callable>,
}

impl MethodEntry {
    pub fn slot_key(&self) -> String {
        method_key(&self.name, &self.ty)
    }
}

pub fn method_key(name: &str, ty: &FunctionType) -> String {
    format!("{name}:{ty}")
}

#[derive(Debug)]
pub struct RuntimeClass {
    pub name: Arc<str>,
    pub is_interface: bool,
    pub super_class: Option<Arc<RuntimeClass>>,
    /// This class, its superclasses and every implemented interface.
    pub ancestors: HashSet<Arc<str>>,
    /// Flattened layout, superclass fields first.
    pub fields: Vec<(String, TypeDesc)>,
    pub methods: Vec<MethodEntry>,
    /// Dispatch table for virtual and interface calls, keyed by `name:(params)ret`.
    pub vtable: HashMap<String, Callable>,
}

impl RuntimeClass {
    pub fn build(
        name: &str,
        is_interface: bool,
        super_class: Option<Arc<RuntimeClass>>,
        interfaces: &[Arc<RuntimeClass>],
        own_fields: Vec<(String, TypeDesc)>,
        own_methods: Vec<MethodEntry>,
    ) -> RuntimeClass {
        let name: Arc<str> = Arc::from(name);
        let mut ancestors = HashSet::new();
        ancestors.insert(name.clone());
        let mut fields = Vec::new();
        let mut methods: Vec<MethodEntry> = Vec::new();
        if let Some(s) = &super_class {
            ancestors.extend(s.ancestors.iter().cloned());
            fields.extend(s.fields.iter().cloned());
            methods.extend(s.methods.iter().cloned());
        }
        for i in interfaces {
            ancestors.extend(i.ancestors.iter().cloned());
        }
        fields.extend(own_fields);
        for m in own_methods {
            let key = m.slot_key();
            match methods.iter_mut().find(|e| e.slot_key() == key) {
                Some(slot) => *slot = m,
                None => methods.push(m),
            }
        }
        // Interface methods fill in whatever the class chain does not provide.
        for i in interfaces {
            for m in &i.methods {
                let key = m.slot_key();
                match methods.iter_mut().find(|e| e.slot_key() == key) {
                    Some(slot) if slot.callable.is_none() && m.callable.is_some() => {
                        *slot = m.clone()
                    }
                    Some(_) => {}
                    None => methods.push(m.clone()),
                }
            }
        }
        let vtable = methods
            .iter()
            .filter(|m| m.flags.is_virtual())
            .filter_map(|m| m.callable.map(|c| (m.slot_key(), c)))
            .collect();
        RuntimeClass {
            name,
            is_interface,
            super_class,
            ancestors,
            fields,
            methods,
            vtable,
        }
    }

    pub fn is_subtype_of(&self, name: &str) -> bool {
        self.ancestors.contains(name)
    }

    pub fn field_slot(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|(n, _)| n == name)
    }

    pub fn find_method(&self, name: &str, ty: &FunctionType) -> Option<&MethodEntry> {
        self.methods
            .iter()
            .find(|m| &*m.name == name && &m.ty == ty)
    }

    pub fn has_method_named(&self, name: &str) -> bool {
        self.methods.iter().any(|m| &*m.name == name)
    }

    pub fn new_instance_fields(&self) -> Vec<Value> {
        self.fields.iter().map(|(_, d)| default_value(d)).collect()
    }
}

pub fn default_value(d: &TypeDesc) -> Value {
    match d {
        TypeDesc::Int => Value::Int(0),
        TypeDesc::Flt => Value::Flt(0.0),
        TypeDesc::Bool => Value::Bool(false),
        _ => Value::Null,
    }
}
