//! The runtime image and interpreter.
//!
//! An [`Image`] is built by loading modules (optionally through the
//! transformer) and is then shared read-only between interpreter threads and
//! the management agent. The only state that changes after loading is the
//! per-instruction link slots, the call-site targets and the registry.

mod class;
mod interp;
pub mod io;
mod natives;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Barrier, OnceLock};

use parking_lot::Mutex;
use thiserror::Error;

use crate::builtins::{self, STR_CLASS, SYS_MODULE};
use crate::bytecode::{
    validate, Diagnostic, FnFlags, FunctionType, Instr, InvocationKind, ModuleError, ModuleFile,
    TypeDesc,
};
use crate::callsite::{CallSiteError, DynamicCallSite, Semantics, SiteRegistry};
use crate::handles::{self, DirectTarget, FunctionHandle, HandleError};
use crate::transformer::{transform_module, SiteKey, TransformError, TransformStats};
use crate::value::Value;

pub use class::{default_value, method_key, Callable, FuncId, MethodEntry, NativeFn, RuntimeClass};
pub use interp::ExecContext;
use interp::{ClassicLink, DynLink, LoadedFunction, Op};
use io::{InputSource, OutputSink};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VmError {
    #[error("stack overflow: more than {limit} frames")]
    StackOverflow { limit: usize },
    #[error("arithmetic fault: {0}")]
    Arithmetic(String),
    #[error("null receiver: {0}")]
    NullReceiver(String),
    #[error("link error: {0}")]
    Link(String),
    #[error("cast error: expected {expected}, found {found}")]
    Cast {
        expected: TypeDesc,
        found: &'static str,
    },
    #[error("spread mismatch: expected {expected} elements, found {found}")]
    SpreadMismatch { expected: usize, found: usize },
    #[error("arity mismatch: expected {expected} arguments, found {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("type fault: {0}")]
    Type(String),
    #[error("index {index} out of bounds for length {len}")]
    IndexOutOfBounds { index: i64, len: usize },
    #[error("{0}")]
    Precondition(String),
    #[error("interpreter thread failed: {0}")]
    Thread(String),
}

impl VmError {
    /// Process exit code: 1 program fault, 2 link error, 3 usage error.
    pub fn exit_code(&self) -> i32 {
        match self {
            VmError::Link(_) => 2,
            VmError::Precondition(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadError {
    #[error("invalid module: {}", join(.0))]
    Invalid(Vec<Diagnostic>),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Module(#[from] ModuleError),
    #[error("duplicate class {0}")]
    DuplicateClass(String),
    #[error("duplicate module {0}")]
    DuplicateModule(String),
    #[error("class {class}: unresolved {missing}")]
    Unresolved { class: String, missing: String },
    #[error("{0}")]
    Operand(String),
}

fn missing(c: &RuntimeClass, method: &str, sig: String) -> HandleError {
    if c.has_method_named(method) {
        HandleError::TypeMismatch(sig)
    } else {
        HandleError::NoSuchMethod(sig)
    }
}

fn join(d: &[Diagnostic]) -> String {
    d.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone)]
pub struct ImageConfig {
    /// Publication semantics of sites created at bootstrap.
    pub semantics: Semantics,
    pub frame_limit: usize,
    /// Native stack size for interpreter threads; handle chains recurse natively.
    pub thread_stack: usize,
}

impl Default for ImageConfig {
    fn default() -> Self {
        ImageConfig {
            semantics: Semantics::Volatile,
            frame_limit: 100_000,
            thread_stack: 512 << 20,
        }
    }
}

enum Owner {
    Module(HashMap<String, Vec<(FunctionType, Callable)>>),
    Class(Arc<RuntimeClass>),
}

pub struct LoadedModule {
    pub name: String,
    /// The module as installed, after transformation when requested.
    pub module: ModuleFile,
    pub stats: Option<TransformStats>,
}

pub struct Image {
    config: ImageConfig,
    functions: Vec<LoadedFunction>,
    owners: HashMap<String, Owner>,
    modules: Vec<LoadedModule>,
    str_class: Arc<RuntimeClass>,
    registry: SiteRegistry,
    output: Arc<dyn OutputSink>,
    input: Arc<dyn InputSource>,
    lookups: AtomicU64,
    bootstraps: AtomicU64,
    link_lock: Mutex<()>,
}

impl Image {
    pub fn new(config: ImageConfig) -> Image {
        let mut owners = HashMap::new();
        let mut sys = HashMap::new();
        let mut str_methods = Vec::new();
        for b in builtins::BUILTINS {
            let ty: FunctionType = b.ty.parse().expect("builtin signatures parse");
            let f = natives::lookup(b.owner, b.name).expect("every builtin has a native");
            if b.owner == SYS_MODULE {
                sys.entry(b.name.to_string())
                    .or_insert_with(Vec::new)
                    .push((ty, Callable::Native(f)));
            } else {
                str_methods.push(MethodEntry {
                    name: Arc::from(b.name),
                    ty,
                    flags: FnFlags::virtual_(),
                    declaring: Arc::from(STR_CLASS),
                    callable: Some(Callable::Native(f)),
                });
            }
        }
        let str_class = Arc::new(RuntimeClass::build(
            STR_CLASS,
            false,
            None,
            &[],
            Vec::new(),
            str_methods,
        ));
        owners.insert(SYS_MODULE.to_string(), Owner::Module(sys));
        owners.insert(STR_CLASS.to_string(), Owner::Class(str_class.clone()));
        Image {
            config,
            functions: Vec::new(),
            owners,
            modules: Vec::new(),
            str_class,
            registry: SiteRegistry::new(),
            output: Arc::new(io::Stdout),
            input: Arc::new(io::Stdin),
            lookups: AtomicU64::new(0),
            bootstraps: AtomicU64::new(0),
            link_lock: Mutex::new(()),
        }
    }

    pub fn config(&self) -> &ImageConfig {
        &self.config
    }

    pub fn set_output(&mut self, sink: Arc<dyn OutputSink>) {
        self.output = sink;
    }

    pub fn set_input(&mut self, source: Arc<dyn InputSource>) {
        self.input = source;
    }

    pub fn output(&self) -> &dyn OutputSink {
        &*self.output
    }

    pub fn input(&self) -> &dyn InputSource {
        &*self.input
    }

    pub fn registry(&self) -> &SiteRegistry {
        &self.registry
    }

    pub fn modules(&self) -> &[LoadedModule] {
        &self.modules
    }

    /// Method lookups performed so far (bootstrap, classic linking, management).
    pub fn lookup_count(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    /// Bootstrap procedures run so far, across all sites.
    pub fn bootstrap_count(&self) -> u64 {
        self.bootstraps.load(Ordering::Relaxed)
    }

    pub fn class(&self, name: &str) -> Option<&Arc<RuntimeClass>> {
        match self.owners.get(name) {
            Some(Owner::Class(c)) => Some(c),
            _ => None,
        }
    }

    pub(crate) fn function(&self, id: FuncId) -> &LoadedFunction {
        &self.functions[id.0 as usize]
    }

    /// Installs `m`, rewriting its invokes first when `transform` is set.
    pub fn load(
        &mut self,
        m: ModuleFile,
        transform: bool,
    ) -> Result<Option<TransformStats>, LoadError> {
        let (m, stats) = if transform {
            let (t, s) = transform_module(&m)?;
            (t, Some(s))
        } else {
            validate(&m).map_err(LoadError::Invalid)?;
            (m, None)
        };
        let module_name = m.module_name()?.to_string();
        if self.owners.contains_key(&module_name) {
            return Err(LoadError::DuplicateModule(module_name));
        }
        let mut class_names = Vec::new();
        for c in &m.classes {
            let n = m.class_name(c)?.to_string();
            if self.owners.contains_key(&n) || class_names.contains(&n) || n == module_name {
                return Err(LoadError::DuplicateClass(n));
            }
            class_names.push(n);
        }

        // Function ids follow `all_functions` order: class methods, then module functions.
        let first = self.functions.len() as u32;
        let mut next = first;
        let mut method_ids = Vec::new();
        for c in &m.classes {
            let ids: Vec<FuncId> = c
                .methods
                .iter()
                .map(|_| {
                    next += 1;
                    FuncId(next - 1)
                })
                .collect();
            method_ids.push(ids);
        }

        let mut built: HashMap<String, Arc<RuntimeClass>> = HashMap::new();
        let mut pending: Vec<usize> = (0..m.classes.len()).collect();
        while !pending.is_empty() {
            let before = pending.len();
            let mut i = 0;
            while i < pending.len() {
                let ci = pending[i];
                let c = &m.classes[ci];
                let name = &class_names[ci];
                let lookup = |n: &str| -> Option<Arc<RuntimeClass>> {
                    built.get(n).cloned().or_else(|| self.class(n).cloned())
                };
                let deps: Vec<&str> = m
                    .super_name(c)?
                    .into_iter()
                    .chain(c.interfaces.iter().filter_map(|&i| m.pool.class(i)))
                    .collect();
                if deps.iter().any(|d| lookup(d).is_none()) {
                    let local_pending = deps
                        .iter()
                        .any(|d| pending.iter().any(|&p| &class_names[p] == d));
                    if !local_pending {
                        let missing = deps.iter().find(|d| lookup(d).is_none()).unwrap();
                        return Err(LoadError::Unresolved {
                            class: name.clone(),
                            missing: missing.to_string(),
                        });
                    }
                    i += 1;
                    continue;
                }
                let sup = m.super_name(c)?.and_then(lookup);
                let ifaces: Vec<_> = c
                    .interfaces
                    .iter()
                    .filter_map(|&i| m.pool.class(i).and_then(lookup))
                    .collect();
                let mut fields = Vec::new();
                for fd in &c.fields {
                    fields.push((m.str_at(fd.name)?.to_string(), m.field_desc(fd)?));
                }
                let mut methods = Vec::new();
                for (f, id) in c.methods.iter().zip(&method_ids[ci]) {
                    methods.push(MethodEntry {
                        name: Arc::from(m.fn_name(f)?),
                        ty: m.fn_type(f)?.clone(),
                        flags: f.flags,
                        declaring: Arc::from(name.as_str()),
                        callable: (!f.flags.is_abstract()).then_some(Callable::Bytecode(*id)),
                    });
                }
                let rc = RuntimeClass::build(name, c.is_interface, sup, &ifaces, fields, methods);
                built.insert(name.clone(), Arc::new(rc));
                pending.remove(i);
            }
            if pending.len() == before {
                let ci = pending[0];
                return Err(LoadError::Unresolved {
                    class: class_names[ci].clone(),
                    missing: "superclass or interface (cycle)".into(),
                });
            }
        }

        let mut module_fns: HashMap<String, Vec<(FunctionType, Callable)>> = HashMap::new();
        for f in &m.functions {
            module_fns
                .entry(m.fn_name(f)?.to_string())
                .or_default()
                .push((m.fn_type(f)?.clone(), Callable::Bytecode(FuncId(next))));
            next += 1;
        }

        // Compile bodies; field and class operands resolve against the classes just built.
        let mut compiled = Vec::new();
        for (ci, c) in m.classes.iter().enumerate() {
            for f in &c.methods {
                compiled.push(self.compile(&m, &class_names[ci], f, &built)?);
            }
        }
        for f in &m.functions {
            compiled.push(self.compile(&m, &module_name, f, &built)?);
        }
        debug_assert_eq!(compiled.len() as u32, next - first);

        self.functions.extend(compiled);
        for (name, rc) in built {
            self.owners.insert(name, Owner::Class(rc));
        }
        self.owners
            .insert(module_name.clone(), Owner::Module(module_fns));
        self.modules.push(LoadedModule {
            name: module_name,
            module: m,
            stats: stats.clone(),
        });
        Ok(stats)
    }

    fn compile(
        &self,
        m: &ModuleFile,
        owner: &str,
        f: &crate::bytecode::FunctionDef,
        built: &HashMap<String, Arc<RuntimeClass>>,
    ) -> Result<LoadedFunction, LoadError> {
        let name = m.fn_name(f)?;
        let ty = m.fn_type(f)?.clone();
        let offs = crate::bytecode::offsets(&f.code);
        let index_of = |target: u32| -> Result<usize, LoadError> {
            offs[..f.code.len()].binary_search(&target).map_err(|_| {
                LoadError::Operand(format!(
                    "{owner}.{name}: jump to {target} is not an instruction"
                ))
            })
        };
        let class = |n: &str| -> Result<Arc<RuntimeClass>, LoadError> {
            built
                .get(n)
                .or_else(|| self.class(n))
                .cloned()
                .ok_or_else(|| LoadError::Operand(format!("{owner}.{name}: unknown class {n}")))
        };
        let mut ops = Vec::with_capacity(f.code.len());
        let mut classic = Vec::new();
        let mut dynamic = Vec::new();
        for instr in &f.code {
            ops.push(match *instr {
                Instr::Const(i) => Op::Const(
                    m.pool
                        .get(i)
                        .and_then(Value::from_constant)
                        .ok_or_else(|| {
                            LoadError::Operand(format!("{owner}.{name}: bad constant #{i}"))
                        })?,
                ),
                Instr::Load(n) => Op::Load(n as usize),
                Instr::Store(n) => Op::Store(n as usize),
                Instr::Pop => Op::Pop,
                Instr::Dup => Op::Dup,
                Instr::Add => Op::Add,
                Instr::Sub => Op::Sub,
                Instr::Mul => Op::Mul,
                Instr::Div => Op::Div,
                Instr::Mod => Op::Mod,
                Instr::Neg => Op::Neg,
                Instr::Lt => Op::Lt,
                Instr::Le => Op::Le,
                Instr::Eq => Op::Eq,
                Instr::Ne => Op::Ne,
                Instr::Jmp(t) => Op::Jmp(index_of(t)?),
                Instr::JmpIfFalse(t) => Op::JmpIfFalse(index_of(t)?),
                Instr::Ret => Op::Ret,
                Instr::New(i) => Op::New(class(m.class_at(i)?)?),
                Instr::GetField(i) | Instr::PutField(i) => {
                    let r = m.field_at(i)?;
                    let c = class(&r.owner)?;
                    let slot = c.field_slot(&r.name).ok_or_else(|| {
                        LoadError::Operand(format!("{owner}.{name}: no field {r}"))
                    })?;
                    let owner: Arc<str> = Arc::from(r.owner.as_str());
                    if matches!(instr, Instr::GetField(_)) {
                        Op::GetField { owner, slot }
                    } else {
                        Op::PutField { owner, slot }
                    }
                }
                Instr::NewArr => Op::NewArr,
                Instr::ALoad => Op::ALoad,
                Instr::AStore => Op::AStore,
                Instr::ArrLen => Op::ArrLen,
                Instr::Print => Op::Print,
                Instr::Invoke(kind, i) => {
                    let key = SiteKey::for_method(kind, m.method_at(i)?);
                    classic.push(ClassicLink {
                        kind,
                        owner: Arc::from(key.owner.as_str()),
                        name: Arc::from(key.method.as_str()),
                        argc: key.ty.arity(),
                        returns: !key.ty.ret.is_void(),
                        site_ty: key.ty,
                        target: OnceLock::new(),
                    });
                    Op::Invoke(classic.len() - 1)
                }
                Instr::InvokeDynamic { name: n, ty: t, .. } => {
                    let ty = m.type_at(t)?.clone();
                    dynamic.push(DynLink {
                        name: Arc::from(m.str_at(n)?),
                        argc: ty.arity(),
                        returns: !ty.ret.is_void(),
                        ty,
                        site: OnceLock::new(),
                    });
                    Op::InvokeDynamic(dynamic.len() - 1)
                }
            });
        }
        let receiver = usize::from(!f.flags.is_static());
        Ok(LoadedFunction {
            returns: !ty.ret.is_void(),
            max_locals: (f.max_locals as usize).max(ty.arity() + receiver),
            ops,
            classic,
            dynamic,
        })
    }

    /// Resolves a method for a direct handle. `ty` carries the receiver for non-static kinds.
    pub fn resolve(
        &self,
        kind: InvocationKind,
        owner: &str,
        method: &str,
        ty: &FunctionType,
    ) -> Result<DirectTarget, HandleError> {
        self.lookups.fetch_add(1, Ordering::Relaxed);
        let sig = format!("{owner}.{method}:{ty}");
        match self.owners.get(owner) {
            None => Err(HandleError::NoSuchMethod(sig)),
            Some(Owner::Module(fns)) => {
                if kind != InvocationKind::Static {
                    return Err(HandleError::KindMismatch(format!(
                        "{kind} lookup of module function {sig}"
                    )));
                }
                let cands = fns
                    .get(method)
                    .ok_or_else(|| HandleError::NoSuchMethod(sig.clone()))?;
                cands
                    .iter()
                    .find(|(t, _)| t == ty)
                    .map(|(_, c)| DirectTarget::Fixed(*c))
                    .ok_or(HandleError::TypeMismatch(sig))
            }
            Some(Owner::Class(c)) => {
                let receiver_form = match ty.params.first() {
                    Some(TypeDesc::Class(r)) if r == owner => ty.without_receiver(),
                    _ => None,
                };
                if kind == InvocationKind::Static {
                    if let Some(e) = c.find_method(method, ty) {
                        if e.flags.is_static() {
                            if let Some(call) = e.callable {
                                return Ok(DirectTarget::Fixed(call));
                            }
                        }
                        return Err(HandleError::KindMismatch(format!(
                            "static lookup of instance method {sig}"
                        )));
                    }
                    if receiver_form
                        .as_ref()
                        .and_then(|t| c.find_method(method, t))
                        .is_some()
                    {
                        return Err(HandleError::KindMismatch(format!(
                            "static lookup of instance method {sig}"
                        )));
                    }
                    return Err(missing(c, method, sig));
                }
                let Some(declared) = receiver_form else {
                    if c.find_method(method, ty).is_some() {
                        return Err(HandleError::KindMismatch(format!(
                            "{kind} lookup of static method {sig}"
                        )));
                    }
                    return Err(HandleError::TypeMismatch(format!(
                        "{sig}: parameter 0 must be the receiver L{owner};"
                    )));
                };
                let Some(e) = c.find_method(method, &declared) else {
                    if c.find_method(method, ty).is_some() {
                        return Err(HandleError::KindMismatch(format!(
                            "{kind} lookup of static method {sig}"
                        )));
                    }
                    return Err(missing(c, method, sig));
                };
                if e.flags.is_static() {
                    return Err(HandleError::KindMismatch(format!(
                        "{kind} lookup of static method {sig}"
                    )));
                }
                match kind {
                    InvocationKind::Special => {
                        e.callable.map(DirectTarget::Fixed).ok_or_else(|| {
                            HandleError::KindMismatch(format!(
                                "special lookup of abstract method {sig}"
                            ))
                        })
                    }
                    InvocationKind::Virtual if c.is_interface => Err(HandleError::KindMismatch(
                        format!("virtual lookup on interface {sig}"),
                    )),
                    InvocationKind::Interface if !c.is_interface => Err(HandleError::KindMismatch(
                        format!("interface lookup on class {sig}"),
                    )),
                    _ if !e.flags.is_virtual() => Err(HandleError::KindMismatch(format!(
                        "{kind} lookup of special-only method {sig}"
                    ))),
                    _ => Ok(DirectTarget::Virtual(Arc::from(method_key(
                        method, &declared,
                    )))),
                }
            }
        }
    }

    /// Finds the implementation of `vkey` for `receiver`'s class.
    pub fn dispatch(
        &self,
        receiver: &Value,
        vkey: &str,
        method: &str,
    ) -> Result<Callable, VmError> {
        let class = match receiver {
            Value::Obj(o) => &o.0.class,
            Value::Str(_) => &self.str_class,
            Value::Null => return Err(VmError::NullReceiver(format!("call of {method}"))),
            other => {
                return Err(VmError::Type(format!(
                    "call of {method} on {}",
                    other.tag_name()
                )))
            }
        };
        class
            .vtable
            .get(vkey)
            .copied()
            .ok_or_else(|| VmError::Link(format!("{} has no implementation of {vkey}", class.name)))
    }

    fn link_classic<'a>(&self, l: &'a ClassicLink) -> Result<&'a DirectTarget, VmError> {
        let t = self
            .resolve(l.kind, &l.owner, &l.name, &l.site_ty)
            .map_err(|e| VmError::Link(e.to_string()))?;
        let _ = l.target.set(t);
        Ok(l.target.get().expect("just set"))
    }

    /// First execution of an `INVOKE_DYNAMIC` slot: resolve, create, register, link.
    fn bootstrap<'a>(&self, l: &'a DynLink) -> Result<&'a Arc<DynamicCallSite>, VmError> {
        let _guard = self.link_lock.lock();
        if let Some(s) = l.site.get() {
            return Ok(s);
        }
        let key: SiteKey = l
            .name
            .parse()
            .map_err(|e: crate::transformer::SiteKeyError| VmError::Link(e.to_string()))?;
        if key.ty != l.ty {
            return Err(VmError::Link(format!("site {key} declares type {}", l.ty)));
        }
        let initial = match key.kind {
            InvocationKind::Static => self.bootstrap_static(&key),
            InvocationKind::Virtual => self.bootstrap_virtual(&key),
            InvocationKind::Special => self.bootstrap_special(&key),
            InvocationKind::Interface => self.bootstrap_interface(&key),
        }
        .map_err(|e| VmError::Link(format!("{key}: {e}")))?;
        let site = DynamicCallSite::new(key, l.ty.clone(), self.config.semantics, initial)
            .map_err(|e| VmError::Link(e.to_string()))?;
        site.record_bootstrap();
        self.bootstraps.fetch_add(1, Ordering::Relaxed);
        let site = Arc::new(site);
        self.registry
            .register(site.clone())
            .map_err(|e: CallSiteError| VmError::Link(e.to_string()))?;
        let _ = l.site.set(site);
        Ok(l.site.get().expect("just linked"))
    }

    fn bootstrap_static(&self, key: &SiteKey) -> Result<FunctionHandle, HandleError> {
        handles::lookup_direct(
            InvocationKind::Static,
            &key.owner,
            &key.method,
            &key.ty,
            self,
        )
    }

    fn bootstrap_virtual(&self, key: &SiteKey) -> Result<FunctionHandle, HandleError> {
        handles::lookup_direct(
            InvocationKind::Virtual,
            &key.owner,
            &key.method,
            &key.ty,
            self,
        )
    }

    fn bootstrap_special(&self, key: &SiteKey) -> Result<FunctionHandle, HandleError> {
        handles::lookup_direct(
            InvocationKind::Special,
            &key.owner,
            &key.method,
            &key.ty,
            self,
        )
    }

    fn bootstrap_interface(&self, key: &SiteKey) -> Result<FunctionHandle, HandleError> {
        handles::lookup_direct(
            InvocationKind::Interface,
            &key.owner,
            &key.method,
            &key.ty,
            self,
        )
    }

    /// Resolves an entry point: `Owner.name`, a bare name in the first loaded
    /// module, or that module's declared entry (falling back to `main`).
    pub fn entry(&self, name: Option<&str>) -> Result<(FuncId, FunctionType), VmError> {
        let first = self
            .modules
            .first()
            .ok_or_else(|| VmError::Precondition("no module loaded".into()))?;
        let (owner, fname) = match name {
            Some(n) => match n.rsplit_once('.') {
                Some((o, f)) => (o.to_string(), f.to_string()),
                None => (first.name.clone(), n.to_string()),
            },
            None => {
                let e = first.module.entry_name().ok().flatten().unwrap_or("main");
                (first.name.clone(), e.to_string())
            }
        };
        match self.owners.get(&owner) {
            Some(Owner::Module(fns)) => fns
                .get(&fname)
                .and_then(|v| v.first())
                .and_then(|(t, c)| match c {
                    Callable::Bytecode(id) => Some((*id, t.clone())),
                    Callable::Native(_) => None,
                })
                .ok_or_else(|| VmError::Precondition(format!("no entry function {owner}.{fname}"))),
            _ => Err(VmError::Precondition(format!("no module {owner}"))),
        }
    }

    fn check_args(ty: &FunctionType, args: &[Value]) -> Result<(), VmError> {
        if args.len() != ty.arity() {
            return Err(VmError::Precondition(format!(
                "entry expects {} arguments of {ty}, got {}",
                ty.arity(),
                args.len()
            )));
        }
        for (i, (a, p)) in args.iter().zip(&ty.params).enumerate() {
            if !a.is_assignable_to(p) {
                return Err(VmError::Precondition(format!(
                    "argument {i} ({a:?}) is not assignable to {p}"
                )));
            }
        }
        Ok(())
    }

    fn on_big_stack<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, VmError> {
        std::thread::scope(|s| {
            std::thread::Builder::new()
                .name("fluxvm".into())
                .stack_size(self.config.thread_stack)
                .spawn_scoped(s, f)
                .map_err(|e| VmError::Thread(e.to_string()))?
                .join()
                .map_err(|_| VmError::Thread("interpreter thread panicked".into()))
        })
    }

    /// Runs an entry function to completion on a fresh interpreter thread.
    pub fn run(&self, entry: Option<&str>, args: Vec<Value>) -> Result<Value, VmError> {
        let (id, ty) = self.entry(entry)?;
        Self::check_args(&ty, &args)?;
        self.on_big_stack(|| ExecContext::new(self).run_function(id, args))?
    }

    /// Runs `entry` `iterations` times on each of `threads` threads that start together.
    pub fn run_concurrent(
        &self,
        entry: Option<&str>,
        args: Vec<Value>,
        threads: usize,
        iterations: usize,
    ) -> Result<Vec<Result<Vec<Value>, VmError>>, VmError> {
        let (id, ty) = self.entry(entry)?;
        Self::check_args(&ty, &args)?;
        let barrier = Barrier::new(threads);
        std::thread::scope(|s| {
            let mut joins = Vec::with_capacity(threads);
            for t in 0..threads {
                let args = args.clone();
                let barrier = &barrier;
                let h = std::thread::Builder::new()
                    .name(format!("fluxvm-{t}"))
                    .stack_size(self.config.thread_stack)
                    .spawn_scoped(s, move || {
                        let mut ctx = ExecContext::new(self);
                        barrier.wait();
                        (0..iterations)
                            .map(|_| ctx.run_function(id, args.clone()))
                            .collect::<Result<Vec<_>, _>>()
                    })
                    .map_err(|e| VmError::Thread(e.to_string()))?;
                joins.push(h);
            }
            Ok(joins
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|_| {
                        Err(VmError::Thread("interpreter thread panicked".into()))
                    })
                })
                .collect())
        })
    }

    /// Invokes a handle outside any running program.
    pub fn invoke_handle(&self, h: &FunctionHandle, args: Vec<Value>) -> Result<Value, VmError> {
        self.on_big_stack(|| handles::invoke(h, args, &mut ExecContext::new(self)))?
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::assemble;

    const FIB: &str = "module Fib\n\
        fn classicfibo:(I)I {\n LOAD 0\n CONST 2\n LT\n JMP_IF_FALSE rec\n LOAD 0\n RET\n rec:\n \
        LOAD 0\n CONST 1\n SUB\n INVOKE_STATIC Fib.classicfibo:(I)I\n LOAD 0\n CONST 2\n SUB\n \
        INVOKE_STATIC Fib.classicfibo:(I)I\n ADD\n RET\n}\n\
        fn main:(I)I {\n LOAD 0\n INVOKE_STATIC Fib.classicfibo:(I)I\n DUP\n PRINT\n RET\n}\n";

    fn fib_iter(n: i64) -> i64 {
        let (mut a, mut b) = (0i64, 1i64);
        for _ in 0..n {
            (a, b) = (b, a + b);
        }
        a
    }

    fn image(transform: bool) -> (Image, io::Capture) {
        let mut img = Image::new(ImageConfig::default());
        let cap = io::Capture::new();
        img.set_output(Arc::new(cap.clone()));
        img.load(assemble(FIB).unwrap(), transform).unwrap();
        (img, cap)
    }

    #[test]
    fn fib_both_ways() {
        for transform in [false, true] {
            let (img, cap) = image(transform);
            assert_eq!(
                img.run(None, vec![Value::Int(10)]).unwrap(),
                Value::Int(fib_iter(10))
            );
            assert_eq!(cap.text(), "55\n");
        }
    }

    #[test]
    fn transformed_image_has_only_dynamic_invokes() {
        let (img, _) = image(true);
        let text = crate::bytecode::disassemble(&img.modules()[0].module);
        assert!(text.contains("INVOKE_DYNAMIC"));
        assert!(!text.contains("INVOKE_STATIC"));
        let (plain, _) = image(false);
        assert!(crate::bytecode::disassemble(&plain.modules()[0].module).contains("INVOKE_STATIC"));
    }

    #[test]
    fn bootstrap_counts() {
        let (img, _) = image(true);
        assert_eq!(img.registry().metrics(None).site_count, 0);
        img.run(None, vec![Value::Int(10)]).unwrap();
        let sites = img.registry().sites_matching("static:Fib.classicfibo:(I)I");
        assert_eq!(sites.len(), 3);
        assert!(sites.iter().all(|s| s.bootstrap_count() == 1));
        let calls: u64 = sites.iter().map(|s| s.invocation_count()).sum();
        // fib(10) makes 177 calls including the outermost one.
        assert_eq!(calls, 177);
        img.run(None, vec![Value::Int(10)]).unwrap();
        assert!(sites.iter().all(|s| s.bootstrap_count() == 1));
        assert_eq!(img.bootstrap_count(), 3);
    }

    #[test]
    fn duplicate_load() {
        let (mut img, _) = image(false);
        assert!(matches!(
            img.load(assemble(FIB).unwrap(), false),
            Err(LoadError::DuplicateModule(_))
        ));
        let cls = "module A\nclass P {\n}\n";
        img.load(assemble(cls).unwrap(), false).unwrap();
        let again = "module B\nclass P {\n}\n";
        assert!(matches!(
            img.load(assemble(again).unwrap(), false),
            Err(LoadError::DuplicateClass(_))
        ));
    }

    #[test]
    fn errors() {
        let (img, _) = image(true);
        assert!(matches!(
            img.run(None, vec![]),
            Err(VmError::Precondition(_))
        ));
        let mut img = Image::new(ImageConfig::default());
        img.set_output(Arc::new(io::Discard));
        img.load(
            assemble("module D\nfn main:()I {\n CONST 1\n CONST 0\n DIV\n RET\n}\nfn deep:(I)I {\n LOAD 0\n INVOKE_STATIC D.deep:(I)I\n RET\n}\n").unwrap(),
            true,
        )
        .unwrap();
        assert!(matches!(img.run(None, vec![]), Err(VmError::Arithmetic(_))));
        assert!(matches!(
            img.run(Some("deep"), vec![Value::Int(0)]),
            Err(VmError::StackOverflow { limit: 100_000 })
        ));
    }

    #[test]
    fn concurrent_runs() {
        let (img, _) = image(true);
        let out = img
            .run_concurrent(Some("classicfibo"), vec![Value::Int(12)], 4, 5)
            .unwrap();
        assert_eq!(out.len(), 4);
        for r in out {
            assert_eq!(r.unwrap(), vec![Value::Int(144); 5]);
        }
        assert!(img
            .run_concurrent(None, vec![Value::Int(1)], 0, 3)
            .unwrap()
            .is_empty());
    }
}
