//! Signatures of host-provided owners. `Str` is the class of string values;
//! `Sys` is a module of static host functions. Implementations live in
//! `vm::natives`.

use crate::bytecode::InvocationKind;

pub const STR_CLASS: &str = "Str";
pub const SYS_MODULE: &str = "Sys";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinSig {
    pub owner: &'static str,
    pub name: &'static str,
    /// Declared type, receiver excluded for `Str` methods.
    pub ty: &'static str,
    pub kind: InvocationKind,
}

pub const BUILTINS: &[BuiltinSig] = &[
    BuiltinSig {
        owner: STR_CLASS,
        name: "length",
        ty: "()I",
        kind: InvocationKind::Virtual,
    },
    BuiltinSig {
        owner: STR_CLASS,
        name: "replace_all",
        ty: "(SS)S",
        kind: InvocationKind::Virtual,
    },
    BuiltinSig {
        owner: STR_CLASS,
        name: "concat",
        ty: "(S)S",
        kind: InvocationKind::Virtual,
    },
    BuiltinSig {
        owner: STR_CLASS,
        name: "substring",
        ty: "(II)S",
        kind: InvocationKind::Virtual,
    },
    BuiltinSig {
        owner: STR_CLASS,
        name: "index_of",
        ty: "(S)I",
        kind: InvocationKind::Virtual,
    },
    BuiltinSig {
        owner: STR_CLASS,
        name: "to_upper",
        ty: "()S",
        kind: InvocationKind::Virtual,
    },
    BuiltinSig {
        owner: SYS_MODULE,
        name: "read_line",
        ty: "()S",
        kind: InvocationKind::Static,
    },
    BuiltinSig {
        owner: SYS_MODULE,
        name: "sleep_ms",
        ty: "(I)V",
        kind: InvocationKind::Static,
    },
    BuiltinSig {
        owner: SYS_MODULE,
        name: "to_str",
        ty: "(A)S",
        kind: InvocationKind::Static,
    },
];

pub fn is_builtin_owner(name: &str) -> bool {
    name == STR_CLASS || name == SYS_MODULE
}

pub fn is_builtin_class(name: &str) -> bool {
    name == STR_CLASS
}

pub fn find<'a>(owner: &'a str, name: &'a str) -> impl Iterator<Item = &'static BuiltinSig> + 'a {
    BUILTINS
        .iter()
        .filter(move |b| b.owner == owner && b.name == name)
}
