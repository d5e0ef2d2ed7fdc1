//! Function handles: direct method references and the combinators that
//! adapt them. All type checking happens when a handle is built; invoking
//! can only fail on checked `A` narrowing, null receivers, spread length
//! and whatever the callee itself raises.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::bytecode::{FunctionType, InvocationKind, TypeDesc};
use crate::value::{ArrayRef, Value};
use crate::vm::{Callable, ExecContext, Image, VmError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HandleError {
    #[error("no such method {0}")]
    NoSuchMethod(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("kind mismatch: {0}")]
    KindMismatch(String),
    #[error("position {pos} with {count} values is out of range for arity {arity}")]
    IndexOutOfRange {
        pos: usize,
        count: usize,
        arity: usize,
    },
    #[error("value {value} is not assignable to parameter {index} of type {desc}")]
    Unassignable {
        index: usize,
        value: String,
        desc: TypeDesc,
    },
    #[error("filter {0} is not unary")]
    NotUnary(String),
    #[error("target returns void; there is no value to filter")]
    VoidReturn,
    #[error("last parameter of {0} is not an array")]
    NotAnArray(String),
    #[error("cannot convert {from} to {to}")]
    Inconvertible { from: TypeDesc, to: TypeDesc },
}

/// Where a direct handle lands.
#[derive(Clone)]
pub enum DirectTarget {
    /// Static and special: the exact function.
    Fixed(Callable),
    /// Virtual and interface: resolved through the receiver's method table
    /// under this `name:(params)ret` key (receiver excluded).
    Virtual(Arc<str>),
}

#[derive(Clone)]
pub struct Direct {
    pub kind: InvocationKind,
    pub owner: Arc<str>,
    pub method: Arc<str>,
    pub target: DirectTarget,
}

#[derive(Clone, Debug, PartialEq)]
enum Conv {
    Keep,
    Check(TypeDesc),
}

enum Node {
    Direct(Direct),
    Constant(Value),
    InsertArgs {
        target: FunctionHandle,
        pos: usize,
        values: Vec<Value>,
    },
    FilterArgs {
        target: FunctionHandle,
        pos: usize,
        filters: Vec<FunctionHandle>,
    },
    FilterReturn {
        target: FunctionHandle,
        filter: FunctionHandle,
    },
    Spreader {
        target: FunctionHandle,
        count: usize,
    },
    Collector {
        target: FunctionHandle,
        count: usize,
    },
    AsType {
        target: FunctionHandle,
        params: Vec<Conv>,
        ret: Conv,
    },
}

struct Inner {
    ty: FunctionType,
    node: Node,
}

/// Immutable, cheaply clonable invocable.
#[derive(Clone)]
pub struct FunctionHandle(Arc<Inner>);

impl FunctionHandle {
    fn make(ty: FunctionType, node: Node) -> Self {
        FunctionHandle(Arc::new(Inner { ty, node }))
    }

    pub fn ty(&self) -> &FunctionType {
        &self.0.ty
    }

    pub fn arity(&self) -> usize {
        self.0.ty.arity()
    }

    /// `Some` when this handle is a bare method reference.
    pub fn as_direct(&self) -> Option<&Direct> {
        match &self.0.node {
            Node::Direct(d) => Some(d),
            _ => None,
        }
    }

    pub fn ptr_eq(&self, other: &FunctionHandle) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

fn quoted(v: &Value) -> String {
    match v {
        Value::Str(s) => format!("{s:?}"),
        other => other.to_string(),
    }
}

impl fmt::Display for FunctionHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0.node {
            Node::Direct(d) => write!(f, "{} {}.{}:{}", d.kind, d.owner, d.method, self.0.ty),
            Node::Constant(v) => write!(f, "constant({}):{}", quoted(v), self.0.ty),
            Node::InsertArgs {
                target,
                pos,
                values,
            } => {
                let vs: Vec<String> = values.iter().map(quoted).collect();
                write!(f, "insert_arguments({target}, {pos}, [{}])", vs.join(", "))
            }
            Node::FilterArgs {
                target,
                pos,
                filters,
            } => {
                write!(f, "filter_arguments({target}, {pos}, [")?;
                for (i, h) in filters.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{h}")?;
                }
                f.write_str("])")
            }
            Node::FilterReturn { target, filter } => {
                write!(f, "filter_return_value({target}, {filter})")
            }
            Node::Spreader { target, count } => write!(f, "as_spreader({target}, {count})"),
            Node::Collector { target, count } => write!(f, "as_collector({target}, {count})"),
            Node::AsType { target, .. } => write!(f, "as_type({target}, {})", self.0.ty),
        }
    }
}

impl fmt::Debug for FunctionHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FunctionHandle({self})")
    }
}

/// Resolves `owner.method` for `kind`. `ty` is the call-site type: for every
/// kind but static it starts with the receiver `LOwner;`.
pub fn lookup_direct(
    kind: InvocationKind,
    owner: &str,
    method: &str,
    ty: &FunctionType,
    image: &Image,
) -> Result<FunctionHandle, HandleError> {
    let target = image.resolve(kind, owner, method, ty)?;
    Ok(FunctionHandle::make(
        ty.clone(),
        Node::Direct(Direct {
            kind,
            owner: Arc::from(owner),
            method: Arc::from(method),
            target,
        }),
    ))
}

/// A handle of type `ty` that ignores its arguments and returns `value`.
pub fn constant(ty: FunctionType, value: Value) -> Result<FunctionHandle, HandleError> {
    if !ty.ret.is_void() && !value.is_assignable_to(&ty.ret) {
        return Err(HandleError::Unassignable {
            index: 0,
            value: value.to_string(),
            desc: ty.ret.clone(),
        });
    }
    Ok(FunctionHandle::make(ty, Node::Constant(value)))
}

pub fn insert_arguments(
    h: &FunctionHandle,
    pos: usize,
    values: Vec<Value>,
) -> Result<FunctionHandle, HandleError> {
    let params = &h.ty().params;
    if pos + values.len() > params.len() {
        return Err(HandleError::IndexOutOfRange {
            pos,
            count: values.len(),
            arity: params.len(),
        });
    }
    for (i, v) in values.iter().enumerate() {
        if !v.is_assignable_to(&params[pos + i]) {
            return Err(HandleError::Unassignable {
                index: pos + i,
                value: v.to_string(),
                desc: params[pos + i].clone(),
            });
        }
    }
    if values.is_empty() {
        return Ok(h.clone());
    }
    let mut rest = params[..pos].to_vec();
    rest.extend_from_slice(&params[pos + values.len()..]);
    let ty = FunctionType::new(rest, h.ty().ret.clone());
    Ok(FunctionHandle::make(
        ty,
        Node::InsertArgs {
            target: h.clone(),
            pos,
            values,
        },
    ))
}

pub fn filter_arguments(
    h: &FunctionHandle,
    pos: usize,
    filters: Vec<FunctionHandle>,
) -> Result<FunctionHandle, HandleError> {
    let params = &h.ty().params;
    if pos + filters.len() > params.len() {
        return Err(HandleError::IndexOutOfRange {
            pos,
            count: filters.len(),
            arity: params.len(),
        });
    }
    if filters.is_empty() {
        return Ok(h.clone());
    }
    let mut new_params = params.clone();
    for (i, flt) in filters.iter().enumerate() {
        if flt.arity() != 1 {
            return Err(HandleError::NotUnary(flt.to_string()));
        }
        if flt.ty().ret != params[pos + i] {
            return Err(HandleError::TypeMismatch(format!(
                "filter {} returns {} but parameter {} is {}",
                flt,
                flt.ty().ret,
                pos + i,
                params[pos + i]
            )));
        }
        new_params[pos + i] = flt.ty().params[0].clone();
    }
    let ty = FunctionType::new(new_params, h.ty().ret.clone());
    Ok(FunctionHandle::make(
        ty,
        Node::FilterArgs {
            target: h.clone(),
            pos,
            filters,
        },
    ))
}

pub fn filter_return_value(
    h: &FunctionHandle,
    filter: &FunctionHandle,
) -> Result<FunctionHandle, HandleError> {
    if h.ty().ret.is_void() {
        return Err(HandleError::VoidReturn);
    }
    if filter.arity() != 1 {
        return Err(HandleError::NotUnary(filter.to_string()));
    }
    if filter.ty().params[0] != h.ty().ret {
        return Err(HandleError::TypeMismatch(format!(
            "filter {} takes {} but target returns {}",
            filter,
            filter.ty().params[0],
            h.ty().ret
        )));
    }
    let ty = FunctionType::new(h.ty().params.clone(), filter.ty().ret.clone());
    Ok(FunctionHandle::make(
        ty,
        Node::FilterReturn {
            target: h.clone(),
            filter: filter.clone(),
        },
    ))
}

/// Replaces the trailing `count` parameters (each `A`) by one `[A` parameter.
pub fn as_spreader(h: &FunctionHandle, count: usize) -> Result<FunctionHandle, HandleError> {
    let params = &h.ty().params;
    if count > params.len() {
        return Err(HandleError::IndexOutOfRange {
            pos: params.len(),
            count,
            arity: params.len(),
        });
    }
    let keep = params.len() - count;
    for p in &params[keep..] {
        if *p != TypeDesc::Any {
            return Err(HandleError::TypeMismatch(format!(
                "spread parameter {p} of {h} is not assignable from A"
            )));
        }
    }
    let mut new_params = params[..keep].to_vec();
    new_params.push(TypeDesc::any_array());
    let ty = FunctionType::new(new_params, h.ty().ret.clone());
    Ok(FunctionHandle::make(
        ty,
        Node::Spreader {
            target: h.clone(),
            count,
        },
    ))
}

/// Replaces the trailing array parameter by `count` parameters of its element type.
pub fn as_collector(h: &FunctionHandle, count: usize) -> Result<FunctionHandle, HandleError> {
    let params = &h.ty().params;
    let Some(elem) = params.last().and_then(TypeDesc::element) else {
        return Err(HandleError::NotAnArray(h.to_string()));
    };
    let mut new_params = params[..params.len() - 1].to_vec();
    new_params.extend(std::iter::repeat_n(elem.clone(), count));
    let ty = FunctionType::new(new_params, h.ty().ret.clone());
    Ok(FunctionHandle::make(
        ty,
        Node::Collector {
            target: h.clone(),
            count,
        },
    ))
}

fn convert(from: &TypeDesc, to: &TypeDesc) -> Result<Conv, HandleError> {
    if from == to || (*to == TypeDesc::Any && !from.is_void()) {
        Ok(Conv::Keep)
    } else if *from == TypeDesc::Any && !to.is_void() {
        Ok(Conv::Check(to.clone()))
    } else {
        Err(HandleError::Inconvertible {
            from: from.clone(),
            to: to.clone(),
        })
    }
}

/// Views `h` at type `t`. Each position must be identical, an erasure to
/// `A`, or a narrowing from `A` that is checked when invoked.
pub fn as_type(h: &FunctionHandle, t: &FunctionType) -> Result<FunctionHandle, HandleError> {
    if h.ty() == t {
        return Ok(h.clone());
    }
    if h.arity() != t.arity() {
        return Err(HandleError::TypeMismatch(format!(
            "cannot view {} as {t}: arity differs",
            h.ty()
        )));
    }
    let params = t
        .params
        .iter()
        .zip(&h.ty().params)
        .map(|(outer, inner)| convert(outer, inner))
        .collect::<Result<Vec<_>, _>>()?;
    let ret = convert(&h.ty().ret, &t.ret)?;
    Ok(FunctionHandle::make(
        t.clone(),
        Node::AsType {
            target: h.clone(),
            params,
            ret,
        },
    ))
}

/// Invokes `h` after checking argument count and assignability.
pub fn invoke(
    h: &FunctionHandle,
    args: Vec<Value>,
    ctx: &mut ExecContext<'_>,
) -> Result<Value, VmError> {
    let ty = h.ty();
    if args.len() != ty.arity() {
        return Err(VmError::ArityMismatch {
            expected: ty.arity(),
            found: args.len(),
        });
    }
    for (i, (a, p)) in args.iter().zip(&ty.params).enumerate() {
        if !a.is_assignable_to(p) {
            return Err(VmError::Precondition(format!(
                "argument {i} ({}) is not assignable to {p}",
                a.tag_name()
            )));
        }
    }
    invoke_unchecked(h, args, ctx)
}

/// Invokes `h` trusting that `args` already fit its type.
pub(crate) fn invoke_unchecked(
    h: &FunctionHandle,
    mut args: Vec<Value>,
    ctx: &mut ExecContext<'_>,
) -> Result<Value, VmError> {
    match &h.0.node {
        Node::Direct(d) => match &d.target {
            DirectTarget::Fixed(c) => ctx.call(c, args),
            DirectTarget::Virtual(vkey) => {
                let c = ctx.image().dispatch(&args[0], vkey, &d.method)?;
                ctx.call(&c, args)
            }
        },
        Node::Constant(v) => Ok(v.clone()),
        Node::InsertArgs {
            target,
            pos,
            values,
        } => {
            let tail = args.split_off(*pos);
            args.extend(values.iter().cloned());
            args.extend(tail);
            invoke_unchecked(target, args, ctx)
        }
        Node::FilterArgs {
            target,
            pos,
            filters,
        } => {
            for (i, flt) in filters.iter().enumerate() {
                let a = std::mem::replace(&mut args[pos + i], Value::Null);
                args[pos + i] = invoke_unchecked(flt, vec![a], ctx)?;
            }
            invoke_unchecked(target, args, ctx)
        }
        Node::FilterReturn { target, filter } => {
            let v = invoke_unchecked(target, args, ctx)?;
            invoke_unchecked(filter, vec![v], ctx)
        }
        Node::Spreader { target, count } => {
            let arr = args.pop().unwrap_or(Value::Null);
            let items = match arr {
                Value::Arr(a) => a.to_vec(),
                Value::Null if *count == 0 => Vec::new(),
                Value::Null => {
                    return Err(VmError::SpreadMismatch {
                        expected: *count,
                        found: 0,
                    })
                }
                other => {
                    return Err(VmError::Cast {
                        expected: TypeDesc::any_array(),
                        found: other.tag_name(),
                    })
                }
            };
            if items.len() != *count {
                return Err(VmError::SpreadMismatch {
                    expected: *count,
                    found: items.len(),
                });
            }
            args.extend(items);
            invoke_unchecked(target, args, ctx)
        }
        Node::Collector { target, count } => {
            let collected = args.split_off(args.len() - count);
            args.push(Value::Arr(ArrayRef::new(collected)));
            invoke_unchecked(target, args, ctx)
        }
        Node::AsType {
            target,
            params,
            ret,
        } => {
            for (a, c) in args.iter().zip(params) {
                if let Conv::Check(d) = c {
                    check(a, d)?;
                }
            }
            let v = invoke_unchecked(target, args, ctx)?;
            if let Conv::Check(d) = ret {
                check(&v, d)?;
            }
            Ok(v)
        }
    }
}

fn check(v: &Value, d: &TypeDesc) -> Result<(), VmError> {
    if v.is_assignable_to(d) {
        Ok(())
    } else {
        Err(VmError::Cast {
            expected: d.clone(),
            found: v.tag_name(),
        })
    }
}
