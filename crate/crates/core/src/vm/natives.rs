//! Host implementations of the `Str` and `Sys` builtins.

use std::sync::Arc;
use std::time::Duration;

use super::class::NativeFn;
use super::{ExecContext, VmError};
use crate::value::Value;

pub fn lookup(owner: &str, name: &str) -> Option<NativeFn> {
    Some(match (owner, name) {
        ("Str", "length") => length,
        ("Str", "replace_all") => replace_all,
        ("Str", "concat") => concat,
        ("Str", "substring") => substring,
        ("Str", "index_of") => index_of,
        ("Str", "to_upper") => to_upper,
        ("Sys", "read_line") => read_line,
        ("Sys", "sleep_ms") => sleep_ms,
        ("Sys", "to_str") => to_str,
        _ => return None,
    })
}

fn text(v: &Value, what: &str) -> Result<Arc<str>, VmError> {
    match v {
        Value::Str(s) => Ok(s.clone()),
        Value::Null => Err(VmError::NullReceiver(what.to_string())),
        other => Err(VmError::Type(format!(
            "{what}: expected Str, found {}",
            other.tag_name()
        ))),
    }
}

fn int(v: &Value, what: &str) -> Result<i64, VmError> {
    v.as_int()
        .ok_or_else(|| VmError::Type(format!("{what}: expected Int, found {}", v.tag_name())))
}

fn length(_: &mut ExecContext<'_>, a: Vec<Value>) -> Result<Value, VmError> {
    Ok(Value::Int(text(&a[0], "Str.length")?.chars().count() as i64))
}

fn replace_all(_: &mut ExecContext<'_>, a: Vec<Value>) -> Result<Value, VmError> {
    let s = text(&a[0], "Str.replace_all")?;
    let from = text(&a[1], "Str.replace_all")?;
    let to = text(&a[2], "Str.replace_all")?;
    if from.is_empty() {
        return Ok(Value::Str(s));
    }
    Ok(Value::str(&s.replace(&*from, &to)))
}

fn concat(_: &mut ExecContext<'_>, a: Vec<Value>) -> Result<Value, VmError> {
    let s = text(&a[0], "Str.concat")?;
    let t = text(&a[1], "Str.concat")?;
    Ok(Value::str(&format!("{s}{t}")))
}

fn substring(_: &mut ExecContext<'_>, a: Vec<Value>) -> Result<Value, VmError> {
    let s = text(&a[0], "Str.substring")?;
    let (b, e) = (int(&a[1], "Str.substring")?, int(&a[2], "Str.substring")?);
    let n = s.chars().count() as i64;
    if b < 0 || e < b || e > n {
        return Err(VmError::IndexOutOfBounds {
            index: if b < 0 || b > n { b } else { e },
            len: n as usize,
        });
    }
    let out: String = s.chars().skip(b as usize).take((e - b) as usize).collect();
    Ok(Value::str(&out))
}

fn index_of(_: &mut ExecContext<'_>, a: Vec<Value>) -> Result<Value, VmError> {
    let s = text(&a[0], "Str.index_of")?;
    let needle = text(&a[1], "Str.index_of")?;
    Ok(Value::Int(match s.find(&*needle) {
        Some(byte) => s[..byte].chars().count() as i64,
        None => -1,
    }))
}

fn to_upper(_: &mut ExecContext<'_>, a: Vec<Value>) -> Result<Value, VmError> {
    Ok(Value::str(&text(&a[0], "Str.to_upper")?.to_uppercase()))
}

fn read_line(ctx: &mut ExecContext<'_>, _: Vec<Value>) -> Result<Value, VmError> {
    Ok(match ctx.image().input().read_line() {
        Some(l) => Value::str(&l),
        None => Value::Null,
    })
}

fn sleep_ms(_: &mut ExecContext<'_>, a: Vec<Value>) -> Result<Value, VmError> {
    let ms = int(&a[0], "Sys.sleep_ms")?.max(0) as u64;
    std::thread::sleep(Duration::from_millis(ms));
    Ok(Value::Null)
}

fn to_str(_: &mut ExecContext<'_>, a: Vec<Value>) -> Result<Value, VmError> {
    Ok(Value::str(&a[0].to_string()))
}
