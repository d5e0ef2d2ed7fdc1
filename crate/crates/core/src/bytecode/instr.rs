//! Instruction set and code-byte layout.
//!
//! Every instruction is an opcode byte followed by fixed-width little-endian
//! operands. Jump operands are absolute byte offsets from the start of the
//! function's code. All five invoke forms are 10 bytes wide: the classic
//! forms carry a method-ref index followed by 5 reserved zero bytes, so the
//! load-time rewrite to `INVOKE_DYNAMIC` never moves any other instruction.

use std::fmt;

use super::ModuleError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Const = 0x01,
    Load = 0x02,
    Store = 0x03,
    Pop = 0x04,
    Dup = 0x05,
    Add = 0x10,
    Sub = 0x11,
    Mul = 0x12,
    Div = 0x13,
    Mod = 0x14,
    Neg = 0x15,
    Lt = 0x16,
    Le = 0x17,
    Eq = 0x18,
    Ne = 0x19,
    Jmp = 0x20,
    JmpIfFalse = 0x21,
    Ret = 0x22,
    New = 0x30,
    GetField = 0x31,
    PutField = 0x32,
    NewArr = 0x38,
    ALoad = 0x39,
    AStore = 0x3A,
    ArrLen = 0x3B,
    Print = 0x40,
    InvokeStatic = 0x50,
    InvokeVirtual = 0x51,
    InvokeSpecial = 0x52,
    InvokeInterface = 0x53,
    InvokeDynamic = 0x54,
}

const ALL_OPCODES: [Opcode; 31] = [
    Opcode::Const,
    Opcode::Load,
    Opcode::Store,
    Opcode::Pop,
    Opcode::Dup,
    Opcode::Add,
    Opcode::Sub,
    Opcode::Mul,
    Opcode::Div,
    Opcode::Mod,
    Opcode::Neg,
    Opcode::Lt,
    Opcode::Le,
    Opcode::Eq,
    Opcode::Ne,
    Opcode::Jmp,
    Opcode::JmpIfFalse,
    Opcode::Ret,
    Opcode::New,
    Opcode::GetField,
    Opcode::PutField,
    Opcode::NewArr,
    Opcode::ALoad,
    Opcode::AStore,
    Opcode::ArrLen,
    Opcode::Print,
    Opcode::InvokeStatic,
    Opcode::InvokeVirtual,
    Opcode::InvokeSpecial,
    Opcode::InvokeInterface,
    Opcode::InvokeDynamic,
];

impl Opcode {
    pub fn from_byte(b: u8) -> Option<Opcode> {
        ALL_OPCODES.iter().copied().find(|op| *op as u8 == b)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Const => "CONST",
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Pop => "POP",
            Opcode::Dup => "DUP",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Mul => "MUL",
            Opcode::Div => "DIV",
            Opcode::Mod => "MOD",
            Opcode::Neg => "NEG",
            Opcode::Lt => "LT",
            Opcode::Le => "LE",
            Opcode::Eq => "EQ",
            Opcode::Ne => "NE",
            Opcode::Jmp => "JMP",
            Opcode::JmpIfFalse => "JMP_IF_FALSE",
            Opcode::Ret => "RET",
            Opcode::New => "NEW",
            Opcode::GetField => "GETFIELD",
            Opcode::PutField => "PUTFIELD",
            Opcode::NewArr => "NEWARR",
            Opcode::ALoad => "ALOAD",
            Opcode::AStore => "ASTORE",
            Opcode::ArrLen => "ARRLEN",
            Opcode::Print => "PRINT",
            Opcode::InvokeStatic => "INVOKE_STATIC",
            Opcode::InvokeVirtual => "INVOKE_VIRTUAL",
            Opcode::InvokeSpecial => "INVOKE_SPECIAL",
            Opcode::InvokeInterface => "INVOKE_INTERFACE",
            Opcode::InvokeDynamic => "INVOKE_DYNAMIC",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        ALL_OPCODES.iter().copied().find(|op| op.mnemonic() == s)
    }

    /// Encoded size in bytes, opcode included.
    pub fn width(self) -> usize {
        match self {
            Opcode::Const | Opcode::Jmp | Opcode::JmpIfFalse => 5,
            Opcode::New | Opcode::GetField | Opcode::PutField => 5,
            Opcode::Load | Opcode::Store => 3,
            Opcode::InvokeStatic
            | Opcode::InvokeVirtual
            | Opcode::InvokeSpecial
            | Opcode::InvokeInterface
            | Opcode::InvokeDynamic => 10,
            _ => 1,
        }
    }
}

/// The four classic invocation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InvocationKind {
    Static,
    Virtual,
    Special,
    Interface,
}

impl InvocationKind {
    pub const ALL: [InvocationKind; 4] = [
        InvocationKind::Static,
        InvocationKind::Virtual,
        InvocationKind::Special,
        InvocationKind::Interface,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InvocationKind::Static => "static",
            InvocationKind::Virtual => "virtual",
            InvocationKind::Special => "special",
            InvocationKind::Interface => "interface",
        }
    }

    pub fn parse(s: &str) -> Option<InvocationKind> {
        InvocationKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn has_receiver(self) -> bool {
        self != InvocationKind::Static
    }

    pub fn opcode(self) -> Opcode {
        match self {
            InvocationKind::Static => Opcode::InvokeStatic,
            InvocationKind::Virtual => Opcode::InvokeVirtual,
            InvocationKind::Special => Opcode::InvokeSpecial,
            InvocationKind::Interface => Opcode::InvokeInterface,
        }
    }
}

impl fmt::Display for InvocationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bootstrap tag for the host-provided linker; the only one defined.
pub const BOOTSTRAP_BUILTIN: u8 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instr {
    Const(u32),
    Load(u16),
    Store(u16),
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
    Jmp(u32),
    JmpIfFalse(u32),
    Ret,
    New(u32),
    GetField(u32),
    PutField(u32),
    NewArr,
    ALoad,
    AStore,
    ArrLen,
    Print,
    Invoke(InvocationKind, u32),
    InvokeDynamic { name: u32, ty: u32, bootstrap: u8 },
}

impl Instr {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instr::Const(_) => Opcode::Const,
            Instr::Load(_) => Opcode::Load,
            Instr::Store(_) => Opcode::Store,
            Instr::Pop => Opcode::Pop,
            Instr::Dup => Opcode::Dup,
            Instr::Add => Opcode::Add,
            Instr::Sub => Opcode::Sub,
            Instr::Mul => Opcode::Mul,
            Instr::Div => Opcode::Div,
            Instr::Mod => Opcode::Mod,
            Instr::Neg => Opcode::Neg,
            Instr::Lt => Opcode::Lt,
            Instr::Le => Opcode::Le,
            Instr::Eq => Opcode::Eq,
            Instr::Ne => Opcode::Ne,
            Instr::Jmp(_) => Opcode::Jmp,
            Instr::JmpIfFalse(_) => Opcode::JmpIfFalse,
            Instr::Ret => Opcode::Ret,
            Instr::New(_) => Opcode::New,
            Instr::GetField(_) => Opcode::GetField,
            Instr::PutField(_) => Opcode::PutField,
            Instr::NewArr => Opcode::NewArr,
            Instr::ALoad => Opcode::ALoad,
            Instr::AStore => Opcode::AStore,
            Instr::ArrLen => Opcode::ArrLen,
            Instr::Print => Opcode::Print,
            Instr::Invoke(kind, _) => kind.opcode(),
            Instr::InvokeDynamic { .. } => Opcode::InvokeDynamic,
        }
    }

    pub fn width(&self) -> usize {
        self.opcode().width()
    }

    pub fn is_classic_invoke(&self) -> bool {
        matches!(self, Instr::Invoke(..))
    }

    pub fn jump_target(&self) -> Option<u32> {
        match self {
            Instr::Jmp(t) | Instr::JmpIfFalse(t) => Some(*t),
            _ => None,
        }
    }

    /// Operand bytes that are constant-pool indices, for integrity checks.
    pub fn pool_refs(&self) -> Vec<u32> {
        match *self {
            Instr::Const(i) | Instr::New(i) | Instr::GetField(i) | Instr::PutField(i) => vec![i],
            Instr::Invoke(_, i) => vec![i],
            Instr::InvokeDynamic { name, ty, .. } => vec![name, ty],
            _ => Vec::new(),
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.opcode() as u8);
        match *self {
            Instr::Const(i) | Instr::New(i) | Instr::GetField(i) | Instr::PutField(i) => {
                out.extend_from_slice(&i.to_le_bytes())
            }
            Instr::Jmp(t) | Instr::JmpIfFalse(t) => out.extend_from_slice(&t.to_le_bytes()),
            Instr::Load(n) | Instr::Store(n) => out.extend_from_slice(&n.to_le_bytes()),
            Instr::Invoke(_, r) => {
                out.extend_from_slice(&r.to_le_bytes());
                out.extend_from_slice(&[0; 5]);
            }
            Instr::InvokeDynamic {
                name,
                ty,
                bootstrap,
            } => {
                out.extend_from_slice(&name.to_le_bytes());
                out.extend_from_slice(&ty.to_le_bytes());
                out.push(bootstrap);
            }
            _ => {}
        }
    }
}

pub fn encode_code(code: &[Instr]) -> Vec<u8> {
    let mut out = Vec::with_capacity(code.iter().map(Instr::width).sum());
    for i in code {
        i.encode_into(&mut out);
    }
    out
}

pub fn decode_code(bytes: &[u8]) -> Result<Vec<Instr>, ModuleError> {
    let mut code = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let op = Opcode::from_byte(bytes[pos]).ok_or(ModuleError::BadOpcode {
            offset: pos,
            byte: bytes[pos],
        })?;
        let w = op.width();
        if pos + w > bytes.len() {
            return Err(ModuleError::Truncated("instruction operands"));
        }
        let b = &bytes[pos + 1..pos + w];
        let u32_at = |o: usize| u32::from_le_bytes([b[o], b[o + 1], b[o + 2], b[o + 3]]);
        let instr = match op {
            Opcode::Const => Instr::Const(u32_at(0)),
            Opcode::Load => Instr::Load(u16::from_le_bytes([b[0], b[1]])),
            Opcode::Store => Instr::Store(u16::from_le_bytes([b[0], b[1]])),
            Opcode::Pop => Instr::Pop,
            Opcode::Dup => Instr::Dup,
            Opcode::Add => Instr::Add,
            Opcode::Sub => Instr::Sub,
            Opcode::Mul => Instr::Mul,
            Opcode::Div => Instr::Div,
            Opcode::Mod => Instr::Mod,
            Opcode::Neg => Instr::Neg,
            Opcode::Lt => Instr::Lt,
            Opcode::Le => Instr::Le,
            Opcode::Eq => Instr::Eq,
            Opcode::Ne => Instr::Ne,
            Opcode::Jmp => Instr::Jmp(u32_at(0)),
            Opcode::JmpIfFalse => Instr::JmpIfFalse(u32_at(0)),
            Opcode::Ret => Instr::Ret,
            Opcode::New => Instr::New(u32_at(0)),
            Opcode::GetField => Instr::GetField(u32_at(0)),
            Opcode::PutField => Instr::PutField(u32_at(0)),
            Opcode::NewArr => Instr::NewArr,
            Opcode::ALoad => Instr::ALoad,
            Opcode::AStore => Instr::AStore,
            Opcode::ArrLen => Instr::ArrLen,
            Opcode::Print => Instr::Print,
            Opcode::InvokeStatic
            | Opcode::InvokeVirtual
            | Opcode::InvokeSpecial
            | Opcode::InvokeInterface => {
                if b[4..9].iter().any(|&x| x != 0) {
                    return Err(ModuleError::ReservedBytes { offset: pos });
                }
                let kind = match op {
                    Opcode::InvokeStatic => InvocationKind::Static,
                    Opcode::InvokeVirtual => InvocationKind::Virtual,
                    Opcode::InvokeSpecial => InvocationKind::Special,
                    _ => InvocationKind::Interface,
                };
                Instr::Invoke(kind, u32_at(0))
            }
            Opcode::InvokeDynamic => Instr::InvokeDynamic {
                name: u32_at(0),
                ty: u32_at(4),
                bootstrap: b[8],
            },
        };
        code.push(instr);
        pos += w;
    }
    Ok(code)
}

/// Byte offset of every instruction, plus the total length as a final element.
pub fn offsets(code: &[Instr]) -> Vec<u32> {
    let mut out = Vec::with_capacity(code.len() + 1);
    let mut pos = 0u32;
    for i in code {
        out.push(pos);
        pos += i.width() as u32;
    }
    out.push(pos);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn opcode_bytes_are_unique_and_round_trip() {
        for op in ALL_OPCODES {
            assert_eq!(Opcode::from_byte(op as u8), Some(op));
            assert_eq!(Opcode::from_mnemonic(op.mnemonic()), Some(op));
        }
    }

    #[test]
    fn invoke_forms_share_width() {
        let classic = Instr::Invoke(InvocationKind::Virtual, 7);
        let dynamic = Instr::InvokeDynamic {
            name: 1,
            ty: 2,
            bootstrap: BOOTSTRAP_BUILTIN,
        };
        assert_eq!(classic.width(), dynamic.width());
    }

    #[test]
    fn code_bytes_round_trip() {
        let code = vec![
            Instr::Load(0),
            Instr::Const(3),
            Instr::Lt,
            Instr::JmpIfFalse(12),
            Instr::Invoke(InvocationKind::Static, 9),
            Instr::Ret,
        ];
        let bytes = encode_code(&code);
        assert_eq!(bytes.len(), 3 + 5 + 1 + 5 + 10 + 1);
        assert_eq!(decode_code(&bytes).unwrap(), code);
    }

    #[test]
    fn nonzero_reserved_bytes_rejected() {
        let mut bytes = encode_code(&[Instr::Invoke(InvocationKind::Static, 1)]);
        bytes[7] = 1;
        assert!(matches!(
            decode_code(&bytes),
            Err(ModuleError::ReservedBytes { .. })
        ));
    }

    #[test]
    fn truncated_operand_rejected() {
        assert!(decode_code(&[Opcode::Const as u8, 1, 0]).is_err());
        assert!(decode_code(&[0xEE]).is_err());
    }
}
