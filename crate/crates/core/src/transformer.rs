//! Load-time rewrite of classic invocations into dynamically linked call sites.
//!
//! Each `INVOKE_STATIC/VIRTUAL/SPECIAL/INTERFACE Owner.m:(P)R` becomes
//! `INVOKE_DYNAMIC "kind:Owner.m:(P')R" (P')R` where `P'` is `P` with the
//! receiver `LOwner;` prepended for every kind but static. Nothing else in
//! the module changes: new pool entries are appended, and invoke forms share
//! one width so code offsets are stable.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::bytecode::{
    validate, Diagnostic, FunctionType, Instr, InvocationKind, MethodRef, ModuleFile, PoolEntry,
    TypeDesc, BOOTSTRAP_BUILTIN,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransformError {
    #[error("not a classic invoke instruction: {0:?}")]
    WrongOpcode(Instr),
    #[error("bad method reference #{0}")]
    BadRef(u32),
    #[error("invalid module: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad site key `{0}`")]
pub struct SiteKeyError(pub String);

/// Uniform symbolic name of a call site: `kind:Owner.method:(params)ret`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteKey {
    pub kind: InvocationKind,
    pub owner: String,
    pub method: String,
    /// Call-site type; includes the receiver as parameter 0 for non-static kinds.
    pub ty: FunctionType,
}

impl SiteKey {
    pub fn for_method(kind: InvocationKind, r: &MethodRef) -> SiteKey {
        let ty = if kind.has_receiver() {
            r.ty.with_receiver(TypeDesc::class(r.owner.clone()))
        } else {
            r.ty.clone()
        };
        SiteKey {
            kind,
            owner: r.owner.clone(),
            method: r.name.clone(),
            ty,
        }
    }

    /// The original method's declared type (receiver removed for non-static kinds).
    pub fn declared_type(&self) -> FunctionType {
        if self.kind.has_receiver() {
            self.ty
                .without_receiver()
                .unwrap_or_else(|| self.ty.clone())
        } else {
            self.ty.clone()
        }
    }

    /// Key text without the `kind:` prefix.
    pub fn target_text(&self) -> String {
        format!("{}.{}:{}", self.owner, self.method, self.ty)
    }
}

impl fmt::Display for SiteKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}.{}:{}",
            self.kind, self.owner, self.method, self.ty
        )
    }
}

impl FromStr for SiteKey {
    type Err = SiteKeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SiteKeyError(s.to_string());
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        let kind = InvocationKind::parse(kind).ok_or_else(bad)?;
        let r: MethodRef = rest.parse().map_err(|_| bad())?;
        if kind.has_receiver() && r.ty.params.is_empty() {
            return Err(bad());
        }
        Ok(SiteKey {
            kind,
            owner: r.owner,
            method: r.name,
            ty: r.ty,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TransformStats {
    /// Classes with at least one rewritten method.
    pub classes_transformed: usize,
    /// Functions (class methods and module functions) with at least one rewritten site.
    pub methods_transformed: usize,
    pub sites_rewritten: usize,
    pub elapsed_ms: f64,
}

impl TransformStats {
    pub fn merge(&mut self, other: &TransformStats) {
        self.classes_transformed += other.classes_transformed;
        self.methods_transformed += other.methods_transformed;
        self.sites_rewritten += other.sites_rewritten;
        self.elapsed_ms += other.elapsed_ms;
    }
}

impl fmt::Display for TransformStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} classes transformed, {} methods transformed, {} call sites rewritten in {:.3} ms",
            self.classes_transformed,
            self.methods_transformed,
            self.sites_rewritten,
            self.elapsed_ms
        )
    }
}

pub fn site_key_of(instr: &Instr, m: &ModuleFile) -> Result<SiteKey, TransformError> {
    match *instr {
        Instr::Invoke(kind, idx) => {
            let r = m.pool.method(idx).ok_or(TransformError::BadRef(idx))?;
            Ok(SiteKey::for_method(kind, r))
        }
        other => Err(TransformError::WrongOpcode(other)),
    }
}

pub fn transform_module(m: &ModuleFile) -> Result<(ModuleFile, TransformStats), TransformError> {
    let start = Instant::now();
    validate(m).map_err(TransformError::Invalid)?;
    let mut out = m.clone();
    let mut stats = TransformStats::default();
    let pool = &mut out.pool;
    let mut rewrite = |code: &mut Vec<Instr>| -> Result<usize, TransformError> {
        let mut n = 0;
        for instr in code.iter_mut() {
            if let Instr::Invoke(kind, idx) = *instr {
                let r = pool.method(idx).ok_or(TransformError::BadRef(idx))?;
                let key = SiteKey::for_method(kind, r);
                let name = pool.intern(PoolEntry::Str(key.to_string()));
                let ty = pool.intern(PoolEntry::Type(key.ty));
                *instr = Instr::InvokeDynamic {
                    name,
                    ty,
                    bootstrap: BOOTSTRAP_BUILTIN,
                };
                n += 1;
            }
        }
        Ok(n)
    };
    for c in &mut out.classes {
        let mut touched = false;
        for f in &mut c.methods {
            let n = rewrite(&mut f.code)?;
            if n > 0 {
                stats.methods_transformed += 1;
                stats.sites_rewritten += n;
                touched = true;
            }
        }
        stats.classes_transformed += usize::from(touched);
    }
    for f in &mut out.functions {
        let n = rewrite(&mut f.code)?;
        if n > 0 {
            stats.methods_transformed += 1;
            stats.sites_rewritten += n;
        }
    }
    stats.elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::{assemble, disassemble, encode_code};

    #[test]
    fn static_key() {
        let m = assemble(
            "module Fib\nfn classicfibo:(I)I {\n LOAD 0\n RET\n}\nfn main:()I {\n CONST 3\n INVOKE_STATIC Fib.classicfibo:(I)I\n RET\n}\n",
        )
        .unwrap();
        let call = m.functions[1].code[1];
        assert_eq!(
            site_key_of(&call, &m).unwrap().to_string(),
            "static:Fib.classicfibo:(I)I"
        );
        let (t, stats) = transform_module(&m).unwrap();
        assert_eq!(stats.sites_rewritten, 1);
        assert_eq!(stats.methods_transformed, 1);
        let text = disassemble(&t);
        assert!(
            text.contains("INVOKE_DYNAMIC \"static:Fib.classicfibo:(I)I\" (I)I"),
            "{text}"
        );
        assert!(!text.contains("INVOKE_STATIC"));
    }

    #[test]
    fn special_key_prepends_receiver() {
        let m = assemble(
            "module M\nclass Point {\n field x:I\n field y:I\n method <init>:(II)V {\n RET\n }\n}\n\
             fn main:()V {\n NEW Point\n CONST 1\n CONST 2\n INVOKE_SPECIAL Point.<init>:(II)V\n RET\n}\n",
        )
        .unwrap();
        let key = site_key_of(&m.functions[0].code[3], &m).unwrap();
        assert_eq!(key.to_string(), "special:Point.<init>:(LPoint;II)V");
        assert_eq!(key.declared_type().to_string(), "(II)V");
    }

    #[test]
    fn wrong_opcode() {
        let m = assemble("fn main:()I {\n CONST 3\n RET\n}\n").unwrap();
        assert!(matches!(
            site_key_of(&m.functions[0].code[0], &m),
            Err(TransformError::WrongOpcode(Instr::Const(_)))
        ));
    }

    #[test]
    fn zero_invokes_is_identity() {
        let m = assemble("fn main:()I {\n CONST 3\n RET\n}\n").unwrap();
        let (t, stats) = transform_module(&m).unwrap();
        assert_eq!(t, m);
        assert_eq!(stats.sites_rewritten, 0);
        assert_eq!(stats.classes_transformed, 0);
    }

    #[test]
    fn non_invoke_instructions_are_byte_identical() {
        let src = "module M\nfn f:(I)I {\n LOAD 0\n RET\n}\n\
            fn main:()I {\n L:\n CONST 1\n INVOKE_STATIC M.f:(I)I\n CONST 0\n LT\n JMP_IF_FALSE done\n JMP L\n done:\n CONST 7\n RET\n}\n";
        let m = assemble(src).unwrap_or_else(|e| panic!("{e}"));
        let (t, _) = transform_module(&m).unwrap();
        for (a, b) in m.functions[1].code.iter().zip(&t.functions[1].code) {
            if !a.is_classic_invoke() {
                assert_eq!(encode_code(&[*a]), encode_code(&[*b]));
            }
        }
        assert_eq!(
            encode_code(&m.functions[1].code).len(),
            encode_code(&t.functions[1].code).len()
        );
    }

    #[test]
    fn site_key_text_round_trips() {
        for text in [
            "static:Fib.classicfibo:(I)I",
            "virtual:Listener.counterIncrement:(LListener;)V",
            "interface:Shape.area:(LShape;)D",
        ] {
            assert_eq!(text.parse::<SiteKey>().unwrap().to_string(), text);
        }
        assert!("virtual:Listener.f:()V".parse::<SiteKey>().is_err());
        assert!("bogus:A.b:()V".parse::<SiteKey>().is_err());
    }
}
