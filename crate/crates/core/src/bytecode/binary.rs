//! Binary `.fxb` encoding. All integers little-endian.
//!
//! ```text
//! module   := "FLUX" version:u16 pool_count:u32 entry* name:u32
//!             import_count:u32 class:u32*
//!             class_count:u32 classdef* fn_count:u32 fndef* entry_name:u32
//! entry    := tag:u8 payload
//!             1 Str  len:u32 utf8      2 Int i64       3 Flt f64-bits
//!             4 Bool u8                5 Null          6 Type len:u32 utf8
//!             7 Class len:u32 utf8     8 Field len:u32 utf8 ("Owner.name:Desc")
//!             9 Method len:u32 utf8 ("Owner.name:(..)..")
//! classdef := name:u32 flags:u8 (bit0 = interface) super:u32
//!             iface_count:u32 u32* field_count:u32 (name:u32 desc:u32)*
//!             method_count:u32 fndef*
//! fndef    := name:u32 type:u32 flags:u8 max_stack:u16 max_locals:u16
//!             code_len:u32 code-bytes
//! ```
//! Pool indices start at 1; 0 means "none" where a field is optional.

use super::instr::{decode_code, encode_code};
use super::module::{ClassDef, FieldDef, FnFlags, FunctionDef, ModuleFile, MAGIC, VERSION};
use super::pool::{ConstantPool, PoolEntry};
use super::ModuleError;

const TAG_STR: u8 = 1;
const TAG_INT: u8 = 2;
const TAG_FLT: u8 = 3;
const TAG_BOOL: u8 = 4;
const TAG_NULL: u8 = 5;
const TAG_TYPE: u8 = 6;
const TAG_CLASS: u8 = 7;
const TAG_FIELD: u8 = 8;
const TAG_METHOD: u8 = 9;

struct Writer {
    out: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.out.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.out.extend_from_slice(&v.to_le_bytes());
    }
    fn len(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("section too large for u32 length"));
    }
    fn text(&mut self, s: &str) {
        self.len(s.len());
        self.out.extend_from_slice(s.as_bytes());
    }
}

pub fn encode(m: &ModuleFile) -> Vec<u8> {
    let mut w = Writer { out: Vec::new() };
    w.out.extend_from_slice(&MAGIC);
    w.u16(m.version);
    w.len(m.pool.len());
    for (_, e) in m.pool.iter() {
        match e {
            PoolEntry::Str(s) => {
                w.u8(TAG_STR);
                w.text(s);
            }
            PoolEntry::Int(i) => {
                w.u8(TAG_INT);
                w.out.extend_from_slice(&i.to_le_bytes());
            }
            PoolEntry::Flt(x) => {
                w.u8(TAG_FLT);
                w.out.extend_from_slice(&x.to_bits().to_le_bytes());
            }
            PoolEntry::Bool(b) => {
                w.u8(TAG_BOOL);
                w.u8(*b as u8);
            }
            PoolEntry::Null => w.u8(TAG_NULL),
            PoolEntry::Type(t) => {
                w.u8(TAG_TYPE);
                w.text(&t.to_string());
            }
            PoolEntry::Class(c) => {
                w.u8(TAG_CLASS);
                w.text(c);
            }
            PoolEntry::Field(r) => {
                w.u8(TAG_FIELD);
                w.text(&r.to_string());
            }
            PoolEntry::Method(r) => {
                w.u8(TAG_METHOD);
                w.text(&r.to_string());
            }
        }
    }
    w.u32(m.name);
    w.len(m.imports.len());
    for &i in &m.imports {
        w.u32(i);
    }
    w.len(m.classes.len());
    for c in &m.classes {
        w.u32(c.name);
        w.u8(c.is_interface as u8);
        w.u32(c.super_class);
        w.len(c.interfaces.len());
        for &i in &c.interfaces {
            w.u32(i);
        }
        w.len(c.fields.len());
        for f in &c.fields {
            w.u32(f.name);
            w.u32(f.desc);
        }
        w.len(c.methods.len());
        for f in &c.methods {
            write_fn(&mut w, f);
        }
    }
    w.len(m.functions.len());
    for f in &m.functions {
        write_fn(&mut w, f);
    }
    w.u32(m.entry);
    w.out
}

fn write_fn(w: &mut Writer, f: &FunctionDef) {
    w.u32(f.name);
    w.u32(f.ty);
    w.u8(f.flags.0);
    w.u16(f.max_stack);
    w.u16(f.max_locals);
    let code = encode_code(&f.code);
    w.len(code.len());
    w.out.extend_from_slice(&code);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    /// What a short read is reported as.
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModuleError> {
        if self.bytes.len() - self.pos < n {
            return Err(if self.section == "pool" {
                ModuleError::TruncatedPool
            } else {
                ModuleError::Truncated(self.section)
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ModuleError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ModuleError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self) -> Result<u32, ModuleError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self) -> Result<u64, ModuleError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn text(&mut self) -> Result<&'a str, ModuleError> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        std::str::from_utf8(b).map_err(|_| ModuleError::BadUtf8)
    }
    /// A count whose elements each take at least `min_size` bytes; rejects counts the
    /// remaining input cannot possibly hold before anything is allocated.
    fn count(&mut self, min_size: usize) -> Result<usize, ModuleError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_size) > self.bytes.len() - self.pos {
            return Err(if self.section == "pool" {
                ModuleError::TruncatedPool
            } else {
                ModuleError::Truncated(self.section)
            });
        }
        Ok(n)
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModuleFile, ModuleError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(ModuleError::BadMagic);
    }
    let mut r = Reader {
        bytes,
        pos: 4,
        section: "header",
    };
    let version = r.u16()?;
    if version != VERSION {
        return Err(ModuleError::UnsupportedVersion(version));
    }
    r.section = "pool";
    let pool_count = r.count(1)?;
    let mut pool = ConstantPool::new();
    for _ in 0..pool_count {
        let tag = r.u8()?;
        let entry = match tag {
            TAG_STR => PoolEntry::Str(r.text()?.to_string()),
            TAG_INT => PoolEntry::Int(r.u64()? as i64),
            TAG_FLT => PoolEntry::Flt(f64::from_bits(r.u64()?)),
            TAG_BOOL => PoolEntry::Bool(r.u8()? != 0),
            TAG_NULL => PoolEntry::Null,
            TAG_TYPE => PoolEntry::Type(r.text()?.parse().map_err(ModuleError::Descriptor)?),
            TAG_CLASS => PoolEntry::Class(r.text()?.to_string()),
            TAG_FIELD => PoolEntry::Field(r.text()?.parse().map_err(ModuleError::Descriptor)?),
            TAG_METHOD => PoolEntry::Method(r.text()?.parse().map_err(ModuleError::Descriptor)?),
            other => return Err(ModuleError::BadTag(other)),
        };
        pool.push_raw(entry);
    }
    let limit = pool.len() as u32;
    let check = |idx: u32, optional: bool| -> Result<u32, ModuleError> {
        if (idx == 0 && optional) || (idx >= 1 && idx <= limit) {
            Ok(idx)
        } else {
            Err(ModuleError::IndexOutOfRange { index: idx })
        }
    };

    r.section = "module header";
    let name = check(r.u32()?, false)?;
    let n = r.count(4)?;
    let mut imports = Vec::with_capacity(n);
    for _ in 0..n {
        imports.push(check(r.u32()?, false)?);
    }

    r.section = "classes";
    let n = r.count(18)?;
    let mut classes = Vec::with_capacity(n);
    for _ in 0..n {
        let name = check(r.u32()?, false)?;
        let flags = r.u8()?;
        if flags > 1 {
            return Err(ModuleError::BadFlags(flags));
        }
        let super_class = check(r.u32()?, true)?;
        let k = r.count(4)?;
        let mut interfaces = Vec::with_capacity(k);
        for _ in 0..k {
            interfaces.push(check(r.u32()?, false)?);
        }
        let k = r.count(8)?;
        let mut fields = Vec::with_capacity(k);
        for _ in 0..k {
            fields.push(FieldDef {
                name: check(r.u32()?, false)?,
                desc: check(r.u32()?, false)?,
            });
        }
        let k = r.count(17)?;
        let mut methods = Vec::with_capacity(k);
        for _ in 0..k {
            methods.push(read_fn(&mut r, &check)?);
        }
        classes.push(ClassDef {
            name,
            is_interface: flags == 1,
            super_class,
            interfaces,
            fields,
            methods,
        });
    }

    r.section = "functions";
    let n = r.count(17)?;
    let mut functions = Vec::with_capacity(n);
    for _ in 0..n {
        functions.push(read_fn(&mut r, &check)?);
    }
    r.section = "entry";
    let entry = check(r.u32()?, true)?;
    if r.pos != bytes.len() {
        return Err(ModuleError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(ModuleFile {
        version,
        pool,
        name,
        imports,
        classes,
        functions,
        entry,
    })
}

fn read_fn(
    r: &mut Reader<'_>,
    check: &dyn Fn(u32, bool) -> Result<u32, ModuleError>,
) -> Result<FunctionDef, ModuleError> {
    let name = check(r.u32()?, false)?;
    let ty = check(r.u32()?, false)?;
    let flags = FnFlags(r.u8()?);
    let max_stack = r.u16()?;
    let max_locals = r.u16()?;
    let len = r.u32()? as usize;
    let code = decode_code(r.take(len)?)?;
    for instr in &code {
        for idx in instr.pool_refs() {
            check(idx, false)?;
        }
    }
    Ok(FunctionDef {
        name,
        ty,
        flags,
        max_stack,
        max_locals,
        code,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::assemble;

    const MINIMAL: &str = "module M\nentry main\nfn main:()I {\n  CONST 0\n  RET\n}\n";

    #[test]
    fn starts_with_magic() {
        let m = assemble(MINIMAL).unwrap();
        let bytes = encode(&m);
        assert_eq!(&bytes[..4], &[0x46, 0x4C, 0x55, 0x58]);
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), VERSION);
        assert_eq!(decode(&bytes).unwrap(), m);
    }

    #[test]
    fn corrupted_pool_length_is_truncated_pool() {
        let m = assemble(MINIMAL).unwrap();
        let mut bytes = encode(&m);
        bytes[6..10].copy_from_slice(&1000u32.to_le_bytes());
        assert_eq!(decode(&bytes), Err(ModuleError::TruncatedPool));
        let mut bytes = encode(&m);
        bytes[6..10].copy_from_slice(&(m.pool.len() as u32 + 1).to_le_bytes());
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn bad_magic_and_version() {
        assert_eq!(decode(b"FLUQ\x01\x00"), Err(ModuleError::BadMagic));
        assert_eq!(decode(b"FL"), Err(ModuleError::BadMagic));
        assert_eq!(
            decode(b"FLUX\x09\x00"),
            Err(ModuleError::UnsupportedVersion(9))
        );
    }

    #[test]
    fn out_of_range_operand() {
        let mut m = assemble(MINIMAL).unwrap();
        m.functions[0].code[0] = crate::bytecode::Instr::Const(99);
        let bytes = encode(&m);
        assert_eq!(
            decode(&bytes),
            Err(ModuleError::IndexOutOfRange { index: 99 })
        );
    }
}
