//! Instruction set, value descriptors, module formats and verification.

mod asm;
mod binary;
mod descriptor;
mod disasm;
mod instr;
mod module;
mod pool;
mod validate;

use thiserror::Error;

pub use asm::{assemble, assemble_unchecked, AsmError};
pub use binary::{decode, encode};
pub use descriptor::{DescriptorError, FunctionType, TypeDesc};
pub use disasm::disassemble;
pub use instr::{
    decode_code, encode_code, offsets, Instr, InvocationKind, Opcode, BOOTSTRAP_BUILTIN,
};
pub use module::{ClassDef, FieldDef, FnFlags, FunctionDef, ModuleFile, MAGIC, VERSION};
pub use pool::{ConstantPool, FieldRef, MethodRef, PoolEntry};
pub use validate::{max_stack_depth, validate, Diagnostic, DiagnosticKind};

/// Errors from decoding binary modules or resolving pool references.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModuleError {
    #[error("bad magic (expected \"FLUX\")")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated constant pool")]
    TruncatedPool,
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("pool index {index} out of range")]
    IndexOutOfRange { index: u32 },
    #[error("pool entry #{index} is not a {expected}")]
    BadPoolRef { index: u32, expected: &'static str },
    #[error("unknown pool tag {0}")]
    BadTag(u8),
    #[error("invalid UTF-8 in pool text")]
    BadUtf8,
    #[error("unknown opcode {byte:#04x} at offset {offset}")]
    BadOpcode { offset: usize, byte: u8 },
    #[error("non-zero reserved bytes in invoke at offset {offset}")]
    ReservedBytes { offset: usize },
    #[error("bad class flags {0:#04x}")]
    BadFlags(u8),
    #[error("{0} trailing bytes after module")]
    TrailingBytes(usize),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}
