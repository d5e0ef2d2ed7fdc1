use std::sync::{Arc, OnceLock};

use crate::bytecode::{FunctionType, InvocationKind};
use crate::callsite::DynamicCallSite;
use crate::handles::{self, DirectTarget};
use crate::value::{ArrayRef, ObjRef, Object, Value};

use super::class::{Callable, FuncId, RuntimeClass};
use super::{Image, VmError};

/// Decoded instruction with jumps resolved to instruction indices and
/// pool operands resolved to values, classes and link slots.
pub(crate) enum Op {
    Const(Value),
    Load(usize),
    Store(usize),
    Pop,
    Dup,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Neg,
    Lt,
    Le,
    Eq,
    Ne,
    Jmp(usize),
    JmpIfFalse(usize),
    Ret,
    New(Arc<RuntimeClass>),
    GetField { owner: Arc<str>, slot: usize },
    PutField { owner: Arc<str>, slot: usize },
    NewArr,
    ALoad,
    AStore,
    ArrLen,
    Print,
    Invoke(usize),
    InvokeDynamic(usize),
}

/// A classic invoke, resolved on first execution.
pub(crate) struct ClassicLink {
    pub kind: InvocationKind,
    pub owner: Arc<str>,
    pub name: Arc<str>,
    /// Type with the receiver prepended for non-static kinds.
    pub site_ty: FunctionType,
    pub argc: usize,
    pub returns: bool,
    pub target: OnceLock<DirectTarget>,
}

/// An `INVOKE_DYNAMIC` slot: unlinked until first execution, then fixed.
pub(crate) struct DynLink {
    pub name: Arc<str>,
    pub ty: FunctionType,
    pub argc: usize,
    pub returns: bool,
    pub site: OnceLock<Arc<DynamicCallSite>>,
}

pub(crate) struct LoadedFunction {
    pub max_locals: usize,
    pub returns: bool,
    pub ops: Vec<Op>,
    pub classic: Vec<ClassicLink>,
    pub dynamic: Vec<DynLink>,
}

#[derive(Clone, Copy)]
struct Frame {
    func: FuncId,
    pc: usize,
    /// Stack index of local 0; operands sit above the locals.
    base: usize,
}

/// Per-thread interpreter state: one value stack shared by all frames.
pub struct ExecContext<'i> {
    image: &'i Image,
    stack: Vec<Value>,
    frames: Vec<Frame>,
}

impl<'i> ExecContext<'i> {
    pub fn new(image: &'i Image) -> Self {
        ExecContext {
            image,
            stack: Vec::with_capacity(1024),
            frames: Vec::with_capacity(64),
        }
    }

    pub fn image(&self) -> &'i Image {
        self.image
    }

    pub fn depth(&self) -> usize {
        self.frames.len()
    }

    pub fn call(&mut self, c: &Callable, args: Vec<Value>) -> Result<Value, VmError> {
        match c {
            Callable::Bytecode(id) => self.run_function(*id, args),
            Callable::Native(f) => f(self, args),
        }
    }

    pub fn invoke(
        &mut self,
        h: &handles::FunctionHandle,
        args: Vec<Value>,
    ) -> Result<Value, VmError> {
        handles::invoke(h, args, self)
    }

    pub(crate) fn run_function(&mut self, id: FuncId, args: Vec<Value>) -> Result<Value, VmError> {
        let depth = self.frames.len();
        let sp = self.stack.len();
        self.stack.extend(args);
        let r = self.enter(id, sp).and_then(|_| self.execute(depth));
        if r.is_err() {
            self.frames.truncate(depth);
            self.stack.truncate(sp);
        }
        r
    }

    fn enter(&mut self, id: FuncId, base: usize) -> Result<(), VmError> {
        let limit = self.image.config().frame_limit;
        if self.frames.len() >= limit {
            return Err(VmError::StackOverflow { limit });
        }
        let f = self.image.function(id);
        self.stack.resize(base + f.max_locals, Value::Null);
        self.frames.push(Frame {
            func: id,
            pc: 0,
            base,
        });
        Ok(())
    }

    #[inline]
    fn pop(&mut self) -> Value {
        self.stack.pop().expect("verified code does not underflow")
    }

    fn execute(&mut self, stop: usize) -> Result<Value, VmError> {
        let image = self.image;
        let mut fr = *self.frames.last().expect("a frame was entered");
        let mut f = image.function(fr.func);
        let mut pc = fr.pc;

        macro_rules! call {
            ($c:expr, $argc:expr, $returns:expr) => {
                match $c {
                    Callable::Bytecode(id) => {
                        self.frames.last_mut().unwrap().pc = pc;
                        let base = self.stack.len() - $argc;
                        self.enter(id, base)?;
                        fr = *self.frames.last().unwrap();
                        f = image.function(id);
                        pc = 0;
                    }
                    Callable::Native(nf) => {
                        let args = self.stack.split_off(self.stack.len() - $argc);
                        let v = nf(self, args)?;
                        if $returns {
                            self.stack.push(v);
                        }
                    }
                }
            };
        }

        loop {
            let op = &f.ops[pc];
            pc += 1;
            match op {
                Op::Const(v) => self.stack.push(v.clone()),
                Op::Load(n) => {
                    let v = self.stack[fr.base + n].clone();
                    self.stack.push(v);
                }
                Op::Store(n) => {
                    let v = self.pop();
                    self.stack[fr.base + n] = v;
                }
                Op::Pop => {
                    self.pop();
                }
                Op::Dup => {
                    let v = self.stack.last().expect("verified").clone();
                    self.stack.push(v);
                }
                Op::Neg => {
                    let v = match self.pop() {
                        Value::Int(i) => Value::Int(i.wrapping_neg()),
                        Value::Flt(x) => Value::Flt(-x),
                        other => return Err(VmError::Type(format!("NEG on {}", other.tag_name()))),
                    };
                    self.stack.push(v);
                }
                Op::Add
                | Op::Sub
                | Op::Mul
                | Op::Div
                | Op::Mod
                | Op::Lt
                | Op::Le
                | Op::Eq
                | Op::Ne => {
                    let b = self.pop();
                    let a = self.pop();
                    self.stack.push(binary(op, a, b)?);
                }
                Op::Jmp(t) => pc = *t,
                Op::JmpIfFalse(t) => match self.pop() {
                    Value::Bool(false) => pc = *t,
                    Value::Bool(true) => {}
                    other => {
                        return Err(VmError::Type(format!(
                            "JMP_IF_FALSE on {}",
                            other.tag_name()
                        )))
                    }
                },
                Op::Ret => {
                    let returns = f.returns;
                    let v = if returns { self.pop() } else { Value::Null };
                    self.stack.truncate(fr.base);
                    self.frames.pop();
                    if self.frames.len() == stop {
                        return Ok(v);
                    }
                    fr = *self.frames.last().unwrap();
                    f = image.function(fr.func);
                    pc = fr.pc;
                    if returns {
                        self.stack.push(v);
                    }
                }
                Op::New(class) => {
                    let obj = Object {
                        class: class.clone(),
                        fields: parking_lot::RwLock::new(class.new_instance_fields()),
                    };
                    self.stack.push(Value::Obj(ObjRef(Arc::new(obj))));
                }
                Op::GetField { owner, slot } => {
                    let o = self.pop();
                    let o = object(&o, owner)?;
                    let v = o.fields.read()[*slot].clone();
                    self.stack.push(v);
                }
                Op::PutField { owner, slot } => {
                    let v = self.pop();
                    let o = self.pop();
                    object(&o, owner)?.fields.write()[*slot] = v;
                }
                Op::NewArr => {
                    let n = match self.pop() {
                        Value::Int(n) if n >= 0 => n as usize,
                        Value::Int(n) => {
                            return Err(VmError::IndexOutOfBounds { index: n, len: 0 })
                        }
                        other => {
                            return Err(VmError::Type(format!(
                                "NEWARR length is {}",
                                other.tag_name()
                            )))
                        }
                    };
                    self.stack
                        .push(Value::Arr(ArrayRef::new(vec![Value::Null; n])));
                }
                Op::ALoad => {
                    let i = self.pop();
                    let a = self.pop();
                    let a = array(&a)?;
                    let items = a.0.read();
                    let v = items[index(&i, items.len())?].clone();
                    drop(items);
                    self.stack.push(v);
                }
                Op::AStore => {
                    let v = self.pop();
                    let i = self.pop();
                    let a = self.pop();
                    let a = array(&a)?;
                    let mut items = a.0.write();
                    let k = index(&i, items.len())?;
                    items[k] = v;
                }
                Op::ArrLen => {
                    let a = self.pop();
                    let n = array(&a)?.len();
                    self.stack.push(Value::Int(n as i64));
                }
                Op::Print => {
                    let v = self.pop();
                    image.output().write_line(&v.to_string());
                }
                Op::Invoke(i) => {
                    let l = &f.classic[*i];
                    let target = match l.target.get() {
                        Some(t) => t,
                        None => image.link_classic(l)?,
                    };
                    let c = match target {
                        DirectTarget::Fixed(c) => *c,
                        DirectTarget::Virtual(k) => {
                            image.dispatch(&self.stack[self.stack.len() - l.argc], k, &l.name)?
                        }
                    };
                    call!(c, l.argc, l.returns);
                }
                Op::InvokeDynamic(i) => {
                    let l = &f.dynamic[*i];
                    let site = match l.site.get() {
                        Some(s) => s,
                        None => image.bootstrap(l)?,
                    };
                    site.record_invocation();
                    let target = site.target();
                    match target.as_direct() {
                        Some(d) => {
                            let c = match &d.target {
                                DirectTarget::Fixed(c) => *c,
                                DirectTarget::Virtual(k) => image.dispatch(
                                    &self.stack[self.stack.len() - l.argc],
                                    k,
                                    &d.method,
                                )?,
                            };
                            call!(c, l.argc, l.returns);
                        }
                        None => {
                            let args = self.stack.split_off(self.stack.len() - l.argc);
                            let target = target.clone();
                            let v = handles::invoke_unchecked(&target, args, self)?;
                            if l.returns {
                                self.stack.push(v);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn object<'v>(v: &'v Value, owner: &str) -> Result<&'v Object, VmError> {
    match v {
        Value::Obj(o) if o.0.class.is_subtype_of(owner) => Ok(&o.0),
        Value::Obj(o) => Err(VmError::Type(format!(
            "field of {owner} accessed on {}",
            o.0.class.name
        ))),
        Value::Null => Err(VmError::NullReceiver(format!("field access on {owner}"))),
        other => Err(VmError::Type(format!(
            "field access on {}",
            other.tag_name()
        ))),
    }
}

fn array(v: &Value) -> Result<&ArrayRef, VmError> {
    match v {
        Value::Arr(a) => Ok(a),
        Value::Null => Err(VmError::NullReceiver("array access".into())),
        other => Err(VmError::Type(format!(
            "array access on {}",
            other.tag_name()
        ))),
    }
}

fn index(i: &Value, len: usize) -> Result<usize, VmError> {
    match i {
        Value::Int(k) if *k >= 0 && (*k as usize) < len => Ok(*k as usize),
        Value::Int(k) => Err(VmError::IndexOutOfBounds { index: *k, len }),
        other => Err(VmError::Type(format!(
            "array index is {}",
            other.tag_name()
        ))),
    }
}

fn binary(op: &Op, a: Value, b: Value) -> Result<Value, VmError> {
    use Value::*;
    match op {
        Op::Eq => return Ok(Bool(a.same(&b))),
        Op::Ne => return Ok(Bool(!a.same(&b))),
        Op::Add if matches!(a, Str(_)) || matches!(b, Str(_)) => {
            return Ok(Value::str(&format!("{a}{b}")));
        }
        _ => {}
    }
    match (&a, &b) {
        (Int(x), Int(y)) => {
            let (x, y) = (*x, *y);
            Ok(match op {
                Op::Add => Int(x.wrapping_add(y)),
                Op::Sub => Int(x.wrapping_sub(y)),
                Op::Mul => Int(x.wrapping_mul(y)),
                Op::Div | Op::Mod if y == 0 => {
                    return Err(VmError::Arithmetic("integer division by zero".into()))
                }
                Op::Div => Int(x.wrapping_div(y)),
                Op::Mod => Int(x.wrapping_rem(y)),
                Op::Lt => Bool(x < y),
                Op::Le => Bool(x <= y),
                _ => unreachable!(),
            })
        }
        (Int(_) | Flt(_), Int(_) | Flt(_)) => {
            let x = num(&a);
            let y = num(&b);
            Ok(match op {
                Op::Add => Flt(x + y),
                Op::Sub => Flt(x - y),
                Op::Mul => Flt(x * y),
                Op::Div => Flt(x / y),
                Op::Mod => Flt(x % y),
                Op::Lt => Bool(x < y),
                Op::Le => Bool(x <= y),
                _ => unreachable!(),
            })
        }
        (Str(x), Str(y)) if matches!(op, Op::Lt | Op::Le) => {
            Ok(Bool(if matches!(op, Op::Lt) { x < y } else { x <= y }))
        }
        _ => Err(VmError::Type(format!(
            "{} on {} and {}",
            op_name(op),
            a.tag_name(),
            b.tag_name()
        ))),
    }
}

fn num(v: &Value) -> f64 {
    match v {
        Value::Int(i) => *i as f64,
        Value::Flt(x) => *x,
        _ => f64::NAN,
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Add => "ADD",
        Op::Sub => "SUB",
        Op::Mul => "MUL",
        Op::Div => "DIV",
        Op::Mod => "MOD",
        Op::Lt => "LT",
        Op::Le => "LE",
        _ => "operation",
    }
}
