//! Structural and stack-depth verification of a module.
//!
//! Every diagnostic names the function and, for code problems, the byte
//! offset of the offending instruction. Validation never panics on
//! corrupted input; it only reports.

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::descriptor::{FunctionType, TypeDesc};
use super::instr::{offsets, Instr, InvocationKind, BOOTSTRAP_BUILTIN};
use super::module::{ClassDef, FunctionDef, ModuleFile};
use crate::builtins;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    /// Unknown class, method, field or malformed pool reference.
    Reference,
    /// Signature disagreement: overrides, field descriptors, flags.
    Type,
    /// Operand stack, locals or control flow.
    Stack,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    /// `Owner.name` of the function, or `module`/the class name for declarations.
    pub location: String,
    pub pc: Option<u32>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pc {
            Some(pc) => write!(f, "{}: {} at pc={}", self.location, self.message, pc),
            None => write!(f, "{}: {}", self.location, self.message),
        }
    }
}

pub fn validate(m: &ModuleFile) -> Result<(), Vec<Diagnostic>> {
    let mut v = Validator::new(m);
    v.run();
    if v.diags.is_empty() {
        Ok(())
    } else {
        Err(v.diags)
    }
}

/// Maximum operand-stack depth reached on any explored path. Best effort:
/// problems along the way are left for `validate` to report.
pub fn max_stack_depth(m: &ModuleFile, owner: &str, f: &FunctionDef) -> u16 {
    let mut v = Validator::new(m);
    let loc = format!("{owner}.{}", m.fn_name(f).unwrap_or("?"));
    v.stack_analysis(&loc, f, None)
}

struct Validator<'m> {
    m: &'m ModuleFile,
    classes: HashMap<&'m str, &'m ClassDef>,
    diags: Vec<Diagnostic>,
}

impl<'m> Validator<'m> {
    fn new(m: &'m ModuleFile) -> Self {
        let classes = m
            .classes
            .iter()
            .filter_map(|c| m.class_name(c).ok().map(|n| (n, c)))
            .collect();
        Validator {
            m,
            classes,
            diags: Vec::new(),
        }
    }

    fn diag(&mut self, kind: DiagnosticKind, location: &str, pc: Option<u32>, message: String) {
        self.diags.push(Diagnostic {
            kind,
            location: location.to_string(),
            pc,
            message,
        });
    }

    fn class_known(&self, name: &str) -> bool {
        self.classes.contains_key(name) || self.m.imported(name) || builtins::is_builtin_class(name)
    }

    fn check_desc_classes(&mut self, loc: &str, desc: &TypeDesc) {
        for name in desc.class_names() {
            if !self.class_known(name) {
                self.diag(
                    DiagnosticKind::Reference,
                    loc,
                    None,
                    format!("descriptor names unknown class `{name}`"),
                );
            }
        }
    }

    fn check_type_classes(&mut self, loc: &str, ty: &FunctionType) {
        for p in &ty.params {
            self.check_desc_classes(loc, p);
        }
        self.check_desc_classes(loc, &ty.ret);
    }

    fn run(&mut self) {
        let m = self.m;
        let module_name = match m.module_name() {
            Ok(n) => n.to_string(),
            Err(e) => {
                self.diag(
                    DiagnosticKind::Reference,
                    "module",
                    None,
                    format!("module name: {e}"),
                );
                "?".to_string()
            }
        };
        for &i in &m.imports {
            if m.pool.class(i).is_none() {
                self.diag(
                    DiagnosticKind::Reference,
                    "module",
                    None,
                    format!("import #{i} is not a class entry"),
                );
            }
        }
        let mut seen = HashSet::new();
        for c in &m.classes {
            match m.class_name(c) {
                Ok(n) => {
                    if !seen.insert(n) {
                        self.diag(
                            DiagnosticKind::Reference,
                            n,
                            None,
                            "duplicate class definition".into(),
                        );
                    }
                    if n == module_name || builtins::is_builtin_owner(n) {
                        self.diag(
                            DiagnosticKind::Reference,
                            n,
                            None,
                            "class name clashes with a module or builtin owner".into(),
                        );
                    }
                }
                Err(e) => self.diag(
                    DiagnosticKind::Reference,
                    "module",
                    None,
                    format!("class name: {e}"),
                ),
            }
        }
        for c in &m.classes {
            self.check_class(c);
        }
        let mut fn_seen = HashSet::new();
        for f in &m.functions {
            let name = m.fn_name(f).unwrap_or("?");
            let loc = format!("{module_name}.{name}");
            if !f.flags.is_static() || !f.flags.is_well_formed() {
                self.diag(
                    DiagnosticKind::Type,
                    &loc,
                    None,
                    "module-level functions must be static".into(),
                );
            }
            if let Ok(ty) = m.fn_type(f) {
                if !fn_seen.insert((name, ty.clone())) {
                    self.diag(
                        DiagnosticKind::Reference,
                        &loc,
                        None,
                        "duplicate function definition".into(),
                    );
                }
            }
            self.check_function(&loc, f, None);
        }
        match m.entry_name() {
            Ok(None) => {}
            Ok(Some(name)) => {
                if m.find_function(name).is_none() {
                    self.diag(
                        DiagnosticKind::Reference,
                        "module",
                        None,
                        format!("entry `{name}` is not a module function"),
                    );
                }
            }
            Err(e) => self.diag(
                DiagnosticKind::Reference,
                "module",
                None,
                format!("entry: {e}"),
            ),
        }
    }

    fn check_class(&mut self, c: &'m ClassDef) {
        let m = self.m;
        let Ok(name) = m.class_name(c) else { return };
        match m.super_name(c) {
            Ok(Some(sup)) => {
                if !self.class_known(sup) || builtins::is_builtin_class(sup) {
                    self.diag(
                        DiagnosticKind::Reference,
                        name,
                        None,
                        format!("unknown superclass `{sup}`"),
                    );
                } else if self.classes.get(sup).is_some_and(|s| s.is_interface) {
                    self.diag(
                        DiagnosticKind::Type,
                        name,
                        None,
                        format!("cannot extend interface `{sup}`"),
                    );
                }
                if c.is_interface {
                    self.diag(
                        DiagnosticKind::Type,
                        name,
                        None,
                        "interfaces cannot extend classes".into(),
                    );
                }
            }
            Ok(None) => {}
            Err(e) => self.diag(
                DiagnosticKind::Reference,
                name,
                None,
                format!("superclass: {e}"),
            ),
        }
        for &i in &c.interfaces {
            match m.class_at(i) {
                Ok(iname) => {
                    if !self.class_known(iname) {
                        self.diag(
                            DiagnosticKind::Reference,
                            name,
                            None,
                            format!("unknown interface `{iname}`"),
                        );
                    } else if self.classes.get(iname).is_some_and(|d| !d.is_interface) {
                        self.diag(
                            DiagnosticKind::Type,
                            name,
                            None,
                            format!("`{iname}` is not an interface"),
                        );
                    }
                }
                Err(e) => self.diag(
                    DiagnosticKind::Reference,
                    name,
                    None,
                    format!("interface: {e}"),
                ),
            }
        }
        // Acyclic inheritance among local classes.
        let mut cur = Some(name);
        let mut chain = HashSet::new();
        while let Some(n) = cur {
            if !chain.insert(n) {
                self.diag(
                    DiagnosticKind::Type,
                    name,
                    None,
                    "cyclic inheritance".into(),
                );
                break;
            }
            cur = self
                .classes
                .get(n)
                .and_then(|d| m.super_name(d).ok().flatten());
        }
        for f in &c.fields {
            match (m.str_at(f.name), m.field_desc(f)) {
                (Ok(_), Ok(d)) if !d.is_void() => self.check_desc_classes(name, &d),
                (Ok(fname), Ok(_)) => self.diag(
                    DiagnosticKind::Type,
                    name,
                    None,
                    format!("field `{fname}` is void"),
                ),
                (Err(e), _) | (_, Err(e)) => {
                    self.diag(DiagnosticKind::Reference, name, None, format!("field: {e}"))
                }
            }
        }
        for f in &c.methods {
            let mname = m.fn_name(f).unwrap_or("?");
            let loc = format!("{name}.{mname}");
            if c.is_interface && !f.flags.is_abstract() && !f.flags.is_static() {
                self.diag(
                    DiagnosticKind::Type,
                    &loc,
                    None,
                    "interface methods must be abstract".into(),
                );
            }
            self.check_function(&loc, f, Some(name));
            self.check_override(name, c, f);
        }
    }

    fn check_override(&mut self, class: &str, c: &'m ClassDef, f: &FunctionDef) {
        let m = self.m;
        if !f.flags.is_virtual() {
            return;
        }
        let (Ok(mname), Ok(ty)) = (m.fn_name(f), m.fn_type(f)) else {
            return;
        };
        let mut cur = m.super_name(c).ok().flatten();
        let mut hops = 0;
        while let Some(sup) = cur {
            let Some(sdef) = self.classes.get(sup).copied() else {
                break;
            };
            for sm in &sdef.methods {
                if m.fn_name(sm).ok() == Some(mname) && sm.flags.is_virtual() {
                    if let Ok(sty) = m.fn_type(sm) {
                        if sty != ty {
                            self.diag(
                                DiagnosticKind::Type,
                                &format!("{class}.{mname}"),
                                None,
                                format!("override {class}.{mname}:{ty} does not match {sup}.{mname}:{sty}"),
                            );
                        }
                    }
                }
            }
            hops += 1;
            if hops > self.classes.len() {
                break;
            }
            cur = m.super_name(sdef).ok().flatten();
        }
    }

    fn check_function(&mut self, loc: &str, f: &FunctionDef, owner_class: Option<&str>) {
        let m = self.m;
        if !f.flags.is_well_formed() {
            self.diag(
                DiagnosticKind::Type,
                loc,
                None,
                format!("malformed flags {:#04x}", f.flags.0),
            );
        }
        if m.fn_name(f).is_err() {
            self.diag(
                DiagnosticKind::Reference,
                loc,
                None,
                "function name is not a string entry".into(),
            );
        }
        let ty = match m.fn_type(f) {
            Ok(t) => t.clone(),
            Err(e) => {
                self.diag(
                    DiagnosticKind::Reference,
                    loc,
                    None,
                    format!("function type: {e}"),
                );
                return;
            }
        };
        self.check_type_classes(loc, &ty);
        let receiver = usize::from(!f.flags.is_static());
        if ty.params.len() + receiver > f.max_locals as usize {
            self.diag(
                DiagnosticKind::Stack,
                loc,
                None,
                format!(
                    "max_locals {} cannot hold {} parameter slots",
                    f.max_locals,
                    ty.params.len() + receiver
                ),
            );
        }
        if f.flags.is_abstract() {
            if !f.code.is_empty() {
                self.diag(
                    DiagnosticKind::Type,
                    loc,
                    None,
                    "abstract method has code".into(),
                );
            }
            return;
        }
        if f.code.is_empty() {
            self.diag(DiagnosticKind::Stack, loc, None, "empty code".into());
            return;
        }
        for (pc, instr) in offsets(&f.code).into_iter().zip(&f.code) {
            self.check_operands(loc, pc, instr, f, owner_class);
        }
        self.stack_analysis(loc, f, Some(&ty));
    }

    fn check_operands(
        &mut self,
        loc: &str,
        pc: u32,
        instr: &Instr,
        f: &FunctionDef,
        _owner: Option<&str>,
    ) {
        let m = self.m;
        let at = Some(pc);
        match *instr {
            Instr::Const(i) => match m.pool.get(i) {
                Some(e) if e.is_loadable_constant() => {}
                Some(e) => self.diag(
                    DiagnosticKind::Reference,
                    loc,
                    at,
                    format!("CONST #{i} is a {} entry", e.kind_name()),
                ),
                None => self.diag(
                    DiagnosticKind::Reference,
                    loc,
                    at,
                    format!("CONST #{i} out of range"),
                ),
            },
            Instr::Load(n) | Instr::Store(n) => {
                if n >= f.max_locals {
                    self.diag(
                        DiagnosticKind::Stack,
                        loc,
                        at,
                        format!("local {n} exceeds max_locals {}", f.max_locals),
                    );
                }
            }
            Instr::New(i) => match m.class_at(i) {
                Ok(c) => {
                    if builtins::is_builtin_class(c) || !self.class_known(c) {
                        self.diag(
                            DiagnosticKind::Reference,
                            loc,
                            at,
                            format!("NEW of unknown class `{c}`"),
                        );
                    } else if self.classes.get(c).is_some_and(|d| d.is_interface) {
                        self.diag(
                            DiagnosticKind::Type,
                            loc,
                            at,
                            format!("NEW of interface `{c}`"),
                        );
                    }
                }
                Err(e) => self.diag(DiagnosticKind::Reference, loc, at, format!("NEW: {e}")),
            },
            Instr::GetField(i) | Instr::PutField(i) => match m.field_at(i) {
                Ok(r) => {
                    let r = r.clone();
                    if !self.class_known(&r.owner) || builtins::is_builtin_class(&r.owner) {
                        self.diag(
                            DiagnosticKind::Reference,
                            loc,
                            at,
                            format!("field owner `{}` unknown", r.owner),
                        );
                    } else if self.classes.contains_key(r.owner.as_str()) {
                        match self.local_field(&r.owner, &r.name) {
                            Some(d) if d == r.desc => {}
                            Some(d) => self.diag(
                                DiagnosticKind::Type,
                                loc,
                                at,
                                format!("field {r} declared as {d}"),
                            ),
                            None => self.diag(
                                DiagnosticKind::Reference,
                                loc,
                                at,
                                format!("no field {r}"),
                            ),
                        }
                    }
                }
                Err(e) => self.diag(
                    DiagnosticKind::Reference,
                    loc,
                    at,
                    format!("field access: {e}"),
                ),
            },
            Instr::Invoke(kind, i) => match m.method_at(i) {
                Ok(r) => {
                    let r = r.clone();
                    if let Err(msg) = self.resolve_invoke(kind, &r.owner, &r.name, &r.ty) {
                        let k = if msg.contains("type") || msg.contains("kind") {
                            DiagnosticKind::Type
                        } else {
                            DiagnosticKind::Reference
                        };
                        self.diag(k, loc, at, msg);
                    }
                }
                Err(e) => self.diag(DiagnosticKind::Reference, loc, at, format!("invoke: {e}")),
            },
            Instr::InvokeDynamic {
                name,
                ty,
                bootstrap,
            } => {
                if m.pool.str(name).is_none() {
                    self.diag(
                        DiagnosticKind::Reference,
                        loc,
                        at,
                        format!("INVOKE_DYNAMIC name #{name} is not a string"),
                    );
                }
                if m.pool.fn_type(ty).is_none() {
                    self.diag(
                        DiagnosticKind::Reference,
                        loc,
                        at,
                        format!("INVOKE_DYNAMIC type #{ty} is not a function type"),
                    );
                }
                if bootstrap != BOOTSTRAP_BUILTIN {
                    self.diag(
                        DiagnosticKind::Reference,
                        loc,
                        at,
                        format!("unknown bootstrap tag {bootstrap}"),
                    );
                }
            }
            _ => {}
        }
    }

    fn local_field(&self, class: &str, field: &str) -> Option<TypeDesc> {
        let mut cur = Some(class);
        let mut hops = 0;
        while let Some(c) = cur {
            let def = self.classes.get(c)?;
            for f in &def.fields {
                if self.m.str_at(f.name).ok() == Some(field) {
                    return self.m.field_desc(f).ok();
                }
            }
            hops += 1;
            if hops > self.classes.len() {
                return None;
            }
            cur = self.m.super_name(def).ok().flatten();
        }
        None
    }

    /// Finds `name` in the local class chain; returns every candidate definition found.
    fn local_methods(&self, class: &str, name: &str) -> Vec<&'m FunctionDef> {
        let mut out = Vec::new();
        let mut cur = Some(class);
        let mut hops = 0;
        while let Some(c) = cur {
            let Some(def) = self.classes.get(c).copied() else {
                break;
            };
            for f in &def.methods {
                if self.m.fn_name(f).ok() == Some(name) {
                    out.push(f);
                }
            }
            hops += 1;
            if hops > self.classes.len() {
                break;
            }
            cur = self.m.super_name(def).ok().flatten();
        }
        out
    }

    fn resolve_invoke(
        &self,
        kind: InvocationKind,
        owner: &str,
        name: &str,
        ty: &FunctionType,
    ) -> Result<(), String> {
        let m = self.m;
        let sig = format!("{owner}.{name}:{ty}");
        if builtins::is_builtin_owner(owner) {
            let mut found = false;
            for b in builtins::find(owner, name) {
                found = true;
                if b.ty == ty.to_string() {
                    let ok = match kind {
                        InvocationKind::Static => b.kind == InvocationKind::Static,
                        InvocationKind::Interface => false,
                        _ => b.kind == InvocationKind::Virtual,
                    };
                    return if ok {
                        Ok(())
                    } else {
                        Err(format!("{kind} invoke of {sig}: kind mismatch"))
                    };
                }
            }
            return Err(if found {
                format!("builtin {sig}: type mismatch")
            } else {
                format!("no such method {sig}")
            });
        }
        if m.module_name().ok() == Some(owner) {
            if kind != InvocationKind::Static {
                return Err(format!(
                    "{kind} invoke of module function {sig}: kind mismatch"
                ));
            }
            let cands: Vec<_> = m
                .functions
                .iter()
                .filter(|f| m.fn_name(f).ok() == Some(name))
                .collect();
            if cands.is_empty() {
                return Err(format!("no such function {sig}"));
            }
            if cands.iter().any(|f| m.fn_type(f).ok() == Some(ty)) {
                return Ok(());
            }
            return Err(format!("function {sig}: type mismatch"));
        }
        if let Some(def) = self.classes.get(owner) {
            match kind {
                InvocationKind::Interface if !def.is_interface => {
                    return Err(format!("interface invoke on class {sig}: kind mismatch"))
                }
                InvocationKind::Virtual if def.is_interface => {
                    return Err(format!("virtual invoke on interface {sig}: kind mismatch"))
                }
                _ => {}
            }
            let cands = self.local_methods(owner, name);
            if cands.is_empty() {
                // Methods inherited from imported classes cannot be checked until load.
                if self.has_foreign_ancestor(owner) {
                    return Ok(());
                }
                return Err(format!("no such method {sig}"));
            }
            let Some(f) = cands.iter().find(|f| m.fn_type(f).ok() == Some(ty)) else {
                return Err(format!("method {sig}: type mismatch"));
            };
            let ok = match kind {
                InvocationKind::Static => f.flags.is_static(),
                InvocationKind::Virtual | InvocationKind::Interface => f.flags.is_virtual(),
                InvocationKind::Special => !f.flags.is_static() && !f.flags.is_abstract(),
            };
            return if ok {
                Ok(())
            } else {
                Err(format!("{kind} invoke of {sig}: kind mismatch"))
            };
        }
        if m.imported(owner) {
            return Ok(());
        }
        Err(format!("unknown owner `{owner}` in {sig}"))
    }

    fn has_foreign_ancestor(&self, class: &str) -> bool {
        let mut cur = Some(class);
        let mut hops = 0;
        while let Some(c) = cur {
            let Some(def) = self.classes.get(c) else {
                return true;
            };
            hops += 1;
            if hops > self.classes.len() {
                return false;
            }
            cur = self.m.super_name(def).ok().flatten();
        }
        false
    }

    /// (pops, pushes) for an instruction, or `None` if its operands cannot be resolved.
    fn effect(&self, instr: &Instr, fn_ret_void: bool) -> Option<(usize, usize)> {
        let m = self.m;
        Some(match *instr {
            Instr::Const(_) | Instr::Load(_) | Instr::New(_) => (0, 1),
            Instr::Store(_) | Instr::Pop | Instr::Print | Instr::JmpIfFalse(_) => (1, 0),
            Instr::Dup => (1, 2),
            Instr::Add | Instr::Sub | Instr::Mul | Instr::Div | Instr::Mod => (2, 1),
            Instr::Lt | Instr::Le | Instr::Eq | Instr::Ne => (2, 1),
            Instr::Neg | Instr::GetField(_) | Instr::NewArr | Instr::ArrLen => (1, 1),
            Instr::PutField(_) => (2, 0),
            Instr::ALoad => (2, 1),
            Instr::AStore => (3, 0),
            Instr::Jmp(_) => (0, 0),
            Instr::Ret => (usize::from(!fn_ret_void), 0),
            Instr::Invoke(kind, i) => {
                let r = m.pool.method(i)?;
                let pops = r.ty.params.len() + usize::from(kind.has_receiver());
                (pops, usize::from(!r.ty.ret.is_void()))
            }
            Instr::InvokeDynamic { ty, .. } => {
                let t = m.pool.fn_type(ty)?;
                (t.params.len(), usize::from(!t.ret.is_void()))
            }
        })
    }

    /// Abstract interpretation of stack depth. With `ty` set, also checks `max_stack`.
    fn stack_analysis(&mut self, loc: &str, f: &FunctionDef, ty: Option<&FunctionType>) -> u16 {
        let m = self.m;
        let ret_void = match ty.cloned().or_else(|| m.fn_type(f).ok().cloned()) {
            Some(t) => t.ret.is_void(),
            None => return 0,
        };
        let offs = offsets(&f.code);
        let code_len = *offs.last().unwrap();
        let index_of: HashMap<u32, usize> = offs[..f.code.len()]
            .iter()
            .enumerate()
            .map(|(i, &o)| (o, i))
            .collect();
        let mut depth_at: Vec<Option<usize>> = vec![None; f.code.len()];
        let mut work = vec![(0usize, 0usize)];
        let mut max_depth = 0usize;
        let mut reported: HashSet<(usize, &'static str)> = HashSet::new();
        while let Some((idx, depth)) = work.pop() {
            if idx >= f.code.len() {
                if reported.insert((idx, "end")) {
                    self.diag(
                        DiagnosticKind::Stack,
                        loc,
                        Some(code_len),
                        "control falls off the end of code".into(),
                    );
                }
                continue;
            }
            match depth_at[idx] {
                Some(d) if d == depth => continue,
                Some(d) => {
                    if reported.insert((idx, "merge")) {
                        self.diag(
                            DiagnosticKind::Stack,
                            loc,
                            Some(offs[idx]),
                            format!("inconsistent stack depth ({d} vs {depth})"),
                        );
                    }
                    continue;
                }
                None => depth_at[idx] = Some(depth),
            }
            let instr = &f.code[idx];
            let Some((pops, pushes)) = self.effect(instr, ret_void) else {
                continue;
            };
            if depth < pops {
                if reported.insert((idx, "underflow")) {
                    self.diag(
                        DiagnosticKind::Stack,
                        loc,
                        Some(offs[idx]),
                        "stack underflow".into(),
                    );
                }
                continue;
            }
            let after = depth - pops + pushes;
            max_depth = max_depth.max(after).max(depth);
            if ty.is_some() && after > f.max_stack as usize && reported.insert((idx, "overflow")) {
                self.diag(
                    DiagnosticKind::Stack,
                    loc,
                    Some(offs[idx]),
                    format!("stack depth {after} exceeds max_stack {}", f.max_stack),
                );
            }
            let mut targets = Vec::new();
            if let Some(t) = instr.jump_target() {
                match index_of.get(&t) {
                    Some(&ti) => targets.push(ti),
                    None => {
                        if reported.insert((idx, "jump")) {
                            self.diag(
                                DiagnosticKind::Stack,
                                loc,
                                Some(offs[idx]),
                                format!("jump target {t} is not an instruction boundary"),
                            );
                        }
                    }
                }
            }
            match instr {
                Instr::Ret | Instr::Jmp(_) => {}
                _ => targets.push(idx + 1),
            }
            for t in targets {
                work.push((t, after));
            }
        }
        max_depth.min(u16::MAX as usize) as u16
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::{assemble_unchecked, AsmError};

    fn diags(src: &str) -> Vec<Diagnostic> {
        let m = assemble_unchecked(src).unwrap();
        validate(&m).unwrap_err()
    }

    #[test]
    fn minimal_program_is_ok() {
        let m =
            assemble_unchecked("module M\nentry main\nfn main:()I {\n CONST 0\n RET\n}\n").unwrap();
        assert_eq!(validate(&m), Ok(()));
    }

    #[test]
    fn pop_from_empty_stack() {
        let d = diags("module M\nfn f:()V stack 1 locals 0 {\n POP\n RET\n}\n");
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].to_string(), "M.f: stack underflow at pc=0");
    }

    #[test]
    fn jump_into_middle_of_instruction() {
        let d = diags("module M\nfn f:()I stack 1 locals 0 {\n CONST 1\n JMP 2\n RET\n}\n");
        assert!(
            d.iter()
                .any(|x| x.message.contains("not an instruction boundary")),
            "{d:?}"
        );
    }

    #[test]
    fn override_with_changed_return_type_names_both_signatures() {
        let src = "module M\n\
            class Base {\n method get:()I stack 1 locals 1 {\n CONST 1\n RET\n }\n}\n\
            class Derived extends Base {\n method get:()S stack 1 locals 1 {\n CONST \"x\"\n RET\n }\n}\n";
        let d = diags(src);
        assert_eq!(d.len(), 1, "{d:?}");
        // Independent comparison: the two declared signatures differ and both appear in the message.
        let base: FunctionType = "()I".parse().unwrap();
        let derived: FunctionType = "()S".parse().unwrap();
        assert_ne!(base, derived);
        assert!(d[0].message.contains(&format!("Derived.get:{derived}")));
        assert!(d[0].message.contains(&format!("Base.get:{base}")));
        assert_eq!(d[0].kind, DiagnosticKind::Type);
    }

    #[test]
    fn inconsistent_merge_and_fall_off() {
        let src = "module M\nfn f:(Z)I stack 2 locals 1 {\n LOAD 0\n JMP_IF_FALSE L1\n CONST 1\n L1:\n CONST 2\n RET\n}\n";
        let d = diags(src);
        assert!(
            d.iter().any(|x| x.message.contains("inconsistent")),
            "{d:?}"
        );
        let d = diags("module M\nfn f:()V stack 1 locals 0 {\n CONST 1\n POP\n}\n");
        assert!(d.iter().any(|x| x.message.contains("falls off")));
    }

    #[test]
    fn unknown_references() {
        let d =
            diags("module M\nfn f:()V stack 1 locals 0 {\n INVOKE_STATIC M.nope:()V\n RET\n}\n");
        assert!(d[0].message.contains("no such function"));
        let d = diags("module M\nfn f:()V stack 1 locals 0 {\n NEW Ghost\n POP\n RET\n}\n");
        assert!(d[0].message.contains("Ghost"));
        let d = diags("module M\nfn f:(LGhost;)V stack 1 locals 1 {\n RET\n}\n");
        assert!(d[0].message.contains("Ghost"));
    }

    #[test]
    fn static_invoke_of_virtual_is_kind_mismatch() {
        let src = "module M\nclass C {\n method m:()I stack 1 locals 1 {\n CONST 1\n RET\n }\n}\n\
            fn f:()I stack 1 locals 0 {\n INVOKE_STATIC C.m:()I\n RET\n}\n";
        let d = diags(src);
        assert!(d[0].message.contains("kind mismatch"), "{d:?}");
    }

    #[test]
    fn max_stack_exceeded() {
        let d = diags("module M\nfn f:()I stack 1 locals 0 {\n CONST 1\n CONST 2\n ADD\n RET\n}\n");
        assert!(d.iter().any(|x| x.message.contains("exceeds max_stack")));
    }

    #[test]
    fn assembler_reports_stack_errors_as_validation() {
        let err =
            crate::bytecode::assemble("module M\nfn f:()V stack 1 locals 0 {\n POP\n RET\n}\n")
                .unwrap_err();
        assert!(matches!(err, AsmError::Validation(_)), "{err}");
    }
}
