//! Text assembler for `.fxa` sources.
//!
//! ```text
//! ; comment (a `;` that starts a token; `;` inside `LName;` is part of the descriptor)
//! module Fib
//! import Base
//! entry main
//! fn classicfibo:(I)I [stack N] [locals N] {
//!   LOAD 0
//!   CONST 2
//!   LT
//!   JMP_IF_FALSE recurse
//!   ...
//! recurse:
//!   ...
//! }
//! class Point extends Base implements Shape, Named {
//!   field x:I
//!   special method <init>:(II)V { ... }
//!   method area:()I { ... }
//!   static method origin:()LPoint; { ... }
//!   abstract method name:()S
//! }
//! interface Shape {
//!   method area:()I
//! }
//! ```
//!
//! Pool indices are assigned in a fixed structural order (module name,
//! imports, classes, functions, entry), independent of the textual order of
//! directives, so `assemble(disassemble(m))` reproduces `m` bit for bit.

use std::collections::HashMap;
use std::fmt;

use super::descriptor::{FunctionType, TypeDesc};
use super::instr::{Instr, InvocationKind, Opcode, BOOTSTRAP_BUILTIN};
use super::module::{ClassDef, FieldDef, FnFlags, FunctionDef, ModuleFile, VERSION};
use super::pool::{ConstantPool, FieldRef, MethodRef, PoolEntry};
use super::validate::{self, Diagnostic, DiagnosticKind};

#[derive(Debug, Clone, PartialEq)]
pub enum AsmError {
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    Semantic(Vec<Diagnostic>),
    Validation(Vec<Diagnostic>),
}

impl fmt::Display for AsmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AsmError::Syntax { line, col, message } => {
                write!(f, "syntax error at {line}:{col}: {message}")
            }
            AsmError::Semantic(d) | AsmError::Validation(d) => {
                let what = if matches!(self, AsmError::Semantic(_)) {
                    "semantic"
                } else {
                    "validation"
                };
                write!(f, "{what} error:")?;
                for x in d {
                    write!(f, "\n  {x}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for AsmError {}

/// Assembles and validates.
pub fn assemble(source: &str) -> Result<ModuleFile, AsmError> {
    let m = assemble_unchecked(source)?;
    match validate::validate(&m) {
        Ok(()) => Ok(m),
        Err(diags) => {
            if diags.iter().any(|d| d.kind != DiagnosticKind::Stack) {
                Err(AsmError::Semantic(diags))
            } else {
                Err(AsmError::Validation(diags))
            }
        }
    }
}

/// Assembles without running the validator. Label and syntax errors are still reported.
pub fn assemble_unchecked(source: &str) -> Result<ModuleFile, AsmError> {
    let tokens = tokenize(source)?;
    let ast = Parser { tokens, pos: 0 }.module()?;
    lower(ast)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Str(String),
    Open,
    Close,
    Newline,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> AsmError {
    AsmError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn tokenize(src: &str) -> Result<Vec<Token>, AsmError> {
    let mut out = Vec::new();
    for (li, line) in src.lines().enumerate() {
        let lineno = li + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c.is_whitespace() || c == ',' {
                i += 1;
            } else if c == ';' {
                break;
            } else if c == '{' || c == '}' {
                out.push(Token {
                    tok: if c == '{' { Tok::Open } else { Tok::Close },
                    line: lineno,
                    col,
                });
                i += 1;
            } else if c == '"' {
                let mut s = String::new();
                i += 1;
                loop {
                    let Some(&ch) = chars.get(i) else {
                        return Err(syntax(lineno, col, "unterminated string literal"));
                    };
                    i += 1;
                    match ch {
                        '"' => break,
                        '\\' => {
                            let esc = chars
                                .get(i)
                                .copied()
                                .ok_or_else(|| syntax(lineno, i + 1, "dangling escape"))?;
                            i += 1;
                            s.push(match esc {
                                'n' => '\n',
                                't' => '\t',
                                '\\' => '\\',
                                '"' => '"',
                                other => {
                                    return Err(syntax(
                                        lineno,
                                        i,
                                        format!("unknown escape `\\{other}`"),
                                    ))
                                }
                            });
                        }
                        other => s.push(other),
                    }
                }
                out.push(Token {
                    tok: Tok::Str(s),
                    line: lineno,
                    col,
                });
            } else {
                let start = i;
                while i < chars.len()
                    && !chars[i].is_whitespace()
                    && !matches!(chars[i], ',' | '{' | '}' | '"')
                {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Word(chars[start..i].iter().collect()),
                    line: lineno,
                    col,
                });
            }
        }
        out.push(Token {
            tok: Tok::Newline,
            line: lineno,
            col: chars.len() + 1,
        });
    }
    Ok(out)
}

#[derive(Debug)]
enum Operand {
    None,
    Const(PoolEntry),
    Local(u16),
    Label(String, usize),
    Offset(u32),
    Class(String),
    Field(FieldRef),
    Method(MethodRef),
    Dynamic(String, FunctionType, u8),
}

#[derive(Debug)]
enum BodyItem {
    Label(String, usize),
    Instr(Opcode, Operand),
}

#[derive(Debug)]
struct AstFn {
    name: String,
    ty: FunctionType,
    flags: FnFlags,
    max_stack: Option<u16>,
    max_locals: Option<u16>,
    body: Vec<BodyItem>,
}

#[derive(Debug)]
struct AstClass {
    name: String,
    is_interface: bool,
    super_class: Option<String>,
    interfaces: Vec<String>,
    fields: Vec<(String, TypeDesc)>,
    methods: Vec<AstFn>,
}

#[derive(Debug, Default)]
struct AstModule {
    name: Option<String>,
    imports: Vec<String>,
    entry: Option<String>,
    classes: Vec<AstClass>,
    functions: Vec<AstFn>,
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn here(&self) -> (usize, usize) {
        match self.peek().or_else(|| self.tokens.last()) {
            Some(t) => (t.line, t.col),
            None => (1, 1),
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, AsmError> {
        let (l, c) = self.here();
        Err(syntax(l, c, msg))
    }

    fn skip_newlines(&mut self) {
        while matches!(
            self.peek(),
            Some(Token {
                tok: Tok::Newline,
                ..
            })
        ) {
            self.pos += 1;
        }
    }

    fn word(&mut self, what: &str) -> Result<String, AsmError> {
        match self.peek() {
            Some(Token {
                tok: Tok::Word(w), ..
            }) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn peek_word(&self) -> Option<&str> {
        match self.peek() {
            Some(Token {
                tok: Tok::Word(w), ..
            }) => Some(w),
            _ => None,
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), AsmError> {
        match self.peek() {
            Some(t) if t.tok == tok => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn end_of_line(&mut self) -> Result<(), AsmError> {
        match self.peek() {
            None => Ok(()),
            Some(Token {
                tok: Tok::Newline, ..
            }) => {
                self.pos += 1;
                Ok(())
            }
            _ => self.err("unexpected token at end of line"),
        }
    }

    fn module(mut self) -> Result<AstModule, AsmError> {
        let mut m = AstModule::default();
        loop {
            self.skip_newlines();
            let Some(kw) = self.peek_word().map(str::to_string) else {
                if self.peek().is_none() {
                    return Ok(m);
                }
                return self.err("expected a directive");
            };
            self.pos += 1;
            match kw.as_str() {
                "module" => {
                    if m.name.is_some() {
                        return self.err("duplicate `module` directive");
                    }
                    m.name = Some(self.word("module name")?);
                    self.end_of_line()?;
                }
                "import" => {
                    m.imports.push(self.word("class name")?);
                    self.end_of_line()?;
                }
                "entry" => {
                    m.entry = Some(self.word("entry function name")?);
                    self.end_of_line()?;
                }
                "fn" => {
                    let f = self.function(FnFlags::statik(), true)?;
                    m.functions.push(f);
                }
                "class" | "interface" => {
                    let c = self.class(kw == "interface")?;
                    m.classes.push(c);
                }
                other => return self.err(format!("unknown directive `{other}`")),
            }
        }
    }

    fn signature(&mut self) -> Result<(String, FunctionType), AsmError> {
        let (line, col) = self.here();
        let sig = self.word("function signature")?;
        let paren = sig
            .find('(')
            .ok_or_else(|| syntax(line, col, "signature must look like `name:(params)ret`"))?;
        let name = sig[..paren].strip_suffix(':').unwrap_or(&sig[..paren]);
        if name.is_empty() {
            return Err(syntax(line, col, "missing function name"));
        }
        let ty = sig[paren..]
            .parse()
            .map_err(|e| syntax(line, col + paren, format!("{e}")))?;
        Ok((name.to_string(), ty))
    }

    fn small_int(&mut self, what: &str) -> Result<u16, AsmError> {
        let (line, col) = self.here();
        let w = self.word(what)?;
        w.parse()
            .map_err(|_| syntax(line, col, format!("bad {what} `{w}`")))
    }

    fn function(&mut self, flags: FnFlags, needs_body: bool) -> Result<AstFn, AsmError> {
        let (name, ty) = self.signature()?;
        let mut f = AstFn {
            name,
            ty,
            flags,
            max_stack: None,
            max_locals: None,
            body: Vec::new(),
        };
        while let Some(w) = self.peek_word() {
            match w {
                "stack" => {
                    self.pos += 1;
                    f.max_stack = Some(self.small_int("stack size")?);
                }
                "locals" => {
                    self.pos += 1;
                    f.max_locals = Some(self.small_int("locals count")?);
                }
                other => return self.err(format!("unexpected `{other}` after signature")),
            }
        }
        if !needs_body {
            if matches!(self.peek(), Some(Token { tok: Tok::Open, .. })) {
                return self.err("abstract method cannot have a body");
            }
            self.end_of_line()?;
            return Ok(f);
        }
        self.expect(Tok::Open, "`{`")?;
        self.end_of_line()?;
        loop {
            self.skip_newlines();
            match self.peek() {
                None => return self.err("unterminated function body"),
                Some(Token {
                    tok: Tok::Close, ..
                }) => {
                    self.pos += 1;
                    self.end_of_line()?;
                    return Ok(f);
                }
                _ => {}
            }
            let (line, col) = self.here();
            let head = self.word("instruction or label")?;
            if let Some(label) = head.strip_suffix(':') {
                if label.is_empty()
                    || !label
                        .chars()
                        .all(|c| c.is_alphanumeric() || c == '_' || c == '.')
                {
                    return Err(syntax(line, col, format!("bad label `{head}`")));
                }
                f.body.push(BodyItem::Label(label.to_string(), line));
                if matches!(
                    self.peek(),
                    Some(Token {
                        tok: Tok::Newline,
                        ..
                    }) | None
                ) {
                    continue;
                }
                let (line, col) = self.here();
                let head = self.word("instruction")?;
                let item = self.instruction(&head, line, col)?;
                f.body.push(item);
            } else {
                let item = self.instruction(&head, line, col)?;
                f.body.push(item);
            }
            self.end_of_line()?;
        }
    }

    fn instruction(
        &mut self,
        mnemonic: &str,
        line: usize,
        col: usize,
    ) -> Result<BodyItem, AsmError> {
        let op = Opcode::from_mnemonic(mnemonic)
            .ok_or_else(|| syntax(line, col, format!("unknown instruction `{mnemonic}`")))?;
        let (ol, oc) = self.here();
        let operand = match op {
            Opcode::Const => match self.next().map(|t| t.tok) {
                Some(Tok::Str(s)) => Operand::Const(PoolEntry::Str(s)),
                Some(Tok::Word(w)) => Operand::Const(
                    parse_literal(&w)
                        .ok_or_else(|| syntax(ol, oc, format!("bad literal `{w}`")))?,
                ),
                _ => return Err(syntax(ol, oc, "CONST needs a literal")),
            },
            Opcode::Load | Opcode::Store => Operand::Local(self.small_int("local index")?),
            Opcode::Jmp | Opcode::JmpIfFalse => {
                let w = self.word("jump target")?;
                match w.parse::<u32>() {
                    Ok(n) => Operand::Offset(n),
                    Err(_) => Operand::Label(w, ol),
                }
            }
            Opcode::New => Operand::Class(self.word("class name")?),
            Opcode::GetField | Opcode::PutField => {
                let w = self.word("field reference")?;
                Operand::Field(w.parse().map_err(|e| syntax(ol, oc, format!("{e}")))?)
            }
            Opcode::InvokeStatic
            | Opcode::InvokeVirtual
            | Opcode::InvokeSpecial
            | Opcode::InvokeInterface => {
                let w = self.word("method reference")?;
                Operand::Method(w.parse().map_err(|e| syntax(ol, oc, format!("{e}")))?)
            }
            Opcode::InvokeDynamic => {
                let name = match self.next().map(|t| t.tok) {
                    Some(Tok::Str(s)) | Some(Tok::Word(s)) => s,
                    _ => return Err(syntax(ol, oc, "INVOKE_DYNAMIC needs a site name")),
                };
                let (tl, tc) = self.here();
                let ty = self.word("call-site type")?;
                let ty = ty.parse().map_err(|e| syntax(tl, tc, format!("{e}")))?;
                let bootstrap = match self.peek_word() {
                    Some(w) => {
                        let w = w.trim_start_matches('#').to_string();
                        self.pos += 1;
                        w.parse().map_err(|_| syntax(tl, tc, "bad bootstrap tag"))?
                    }
                    None => BOOTSTRAP_BUILTIN,
                };
                Operand::Dynamic(name, ty, bootstrap)
            }
            _ => Operand::None,
        };
        Ok(BodyItem::Instr(op, operand))
    }

    fn class(&mut self, is_interface: bool) -> Result<AstClass, AsmError> {
        let name = self.word("class name")?;
        let mut c = AstClass {
            name,
            is_interface,
            super_class: None,
            interfaces: Vec::new(),
            fields: Vec::new(),
            methods: Vec::new(),
        };
        while let Some(w) = self.peek_word() {
            match w {
                "extends" if !is_interface => {
                    self.pos += 1;
                    c.super_class = Some(self.word("superclass name")?);
                }
                "implements" | "extends" => {
                    self.pos += 1;
                    c.interfaces.push(self.word("interface name")?);
                    while let Some(w) = self.peek_word() {
                        if w == "extends" || w == "implements" {
                            break;
                        }
                        let w = w.to_string();
                        self.pos += 1;
                        c.interfaces.push(w);
                    }
                }
                other => return self.err(format!("unexpected `{other}` in class header")),
            }
        }
        self.expect(Tok::Open, "`{`")?;
        self.end_of_line()?;
        loop {
            self.skip_newlines();
            match self.peek() {
                None => return self.err("unterminated class body"),
                Some(Token {
                    tok: Tok::Close, ..
                }) => {
                    self.pos += 1;
                    self.end_of_line()?;
                    return Ok(c);
                }
                _ => {}
            }
            let (line, col) = self.here();
            let kw = self.word("`field` or `method`")?;
            match kw.as_str() {
                "field" => {
                    let w = self.word("field name:Desc")?;
                    let (fname, desc) = w
                        .split_once(':')
                        .ok_or_else(|| syntax(line, col, "field must look like `name:Desc`"))?;
                    let desc: TypeDesc = desc
                        .parse()
                        .map_err(|e| syntax(line, col, format!("{e}")))?;
                    c.fields.push((fname.to_string(), desc));
                    self.end_of_line()?;
                }
                "method" | "static" | "special" | "abstract" => {
                    let mut modifier = None;
                    let mut kw = kw;
                    if kw != "method" {
                        modifier = Some(kw);
                        kw = self.word("`method`")?;
                        if kw != "method" {
                            return Err(syntax(line, col, "expected `method` after modifier"));
                        }
                    }
                    let save = self.pos;
                    let (mname, _) = self.signature()?;
                    self.pos = save;
                    let flags = match modifier.as_deref() {
                        Some("static") => FnFlags::statik(),
                        Some("special") => FnFlags::special(),
                        Some("abstract") => FnFlags::abstract_(),
                        _ if is_interface => FnFlags::abstract_(),
                        _ if mname == "<init>" => FnFlags::special(),
                        _ => FnFlags::virtual_(),
                    };
                    let f = self.function(flags, !flags.is_abstract())?;
                    c.methods.push(f);
                }
                other => {
                    return Err(syntax(
                        line,
                        col,
                        format!("unexpected `{other}` in class body"),
                    ))
                }
            }
        }
    }
}

fn parse_literal(w: &str) -> Option<PoolEntry> {
    match w {
        "true" => return Some(PoolEntry::Bool(true)),
        "false" => return Some(PoolEntry::Bool(false)),
        "null" => return Some(PoolEntry::Null),
        _ => {}
    }
    if let Ok(i) = w.parse::<i64>() {
        return Some(PoolEntry::Int(i));
    }
    let looks_float = w.contains(['.', 'e', 'E']) || matches!(w, "inf" | "-inf" | "NaN");
    if looks_float {
        return w.parse::<f64>().ok().map(PoolEntry::Flt);
    }
    None
}

fn semantic(location: &str, message: String) -> AsmError {
    AsmError::Semantic(vec![Diagnostic {
        kind: DiagnosticKind::Reference,
        location: location.to_string(),
        pc: None,
        message,
    }])
}

fn lower(ast: AstModule) -> Result<ModuleFile, AsmError> {
    let mut pool = ConstantPool::new();
    let module_name = ast.name.clone().unwrap_or_else(|| "Main".to_string());
    let name = pool.str_idx(&module_name);
    let imports = ast
        .imports
        .iter()
        .map(|i| pool.intern(PoolEntry::Class(i.clone())))
        .collect();
    let mut classes = Vec::new();
    for c in &ast.classes {
        let name_idx = pool.intern(PoolEntry::Class(c.name.clone()));
        let super_class = match &c.super_class {
            Some(s) => pool.intern(PoolEntry::Class(s.clone())),
            None => 0,
        };
        let interfaces = c
            .interfaces
            .iter()
            .map(|i| pool.intern(PoolEntry::Class(i.clone())))
            .collect();
        let fields = c
            .fields
            .iter()
            .map(|(n, d)| FieldDef {
                name: pool.str_idx(n),
                desc: pool.str_idx(&d.to_string()),
            })
            .collect();
        let mut methods = Vec::new();
        for f in &c.methods {
            methods.push(lower_fn(&mut pool, &c.name, f)?);
        }
        classes.push(ClassDef {
            name: name_idx,
            is_interface: c.is_interface,
            super_class,
            interfaces,
            fields,
            methods,
        });
    }
    let mut functions = Vec::new();
    for f in &ast.functions {
        functions.push(lower_fn(&mut pool, &module_name, f)?);
    }
    let entry_name = ast.entry.clone().or_else(|| {
        ast.functions
            .iter()
            .any(|f| f.name == "main")
            .then(|| "main".to_string())
    });
    let entry = match entry_name {
        Some(e) => pool.str_idx(&e),
        None => 0,
    };
    let mut m = ModuleFile {
        version: VERSION,
        pool,
        name,
        imports,
        classes,
        functions,
        entry,
    };
    fill_frame_sizes(&mut m, &ast);
    Ok(m)
}

fn lower_fn(pool: &mut ConstantPool, owner: &str, f: &AstFn) -> Result<FunctionDef, AsmError> {
    let name = pool.str_idx(&f.name);
    let ty = pool.intern(PoolEntry::Type(f.ty.clone()));
    let loc = format!("{owner}.{}", f.name);
    // Labels resolve to byte offsets; widths are fixed per opcode.
    let mut labels = HashMap::new();
    let mut pos = 0u32;
    for item in &f.body {
        match item {
            BodyItem::Label(l, line) => {
                if labels.insert(l.clone(), pos).is_some() {
                    return Err(semantic(
                        &loc,
                        format!("duplicate label `{l}` (line {line})"),
                    ));
                }
            }
            BodyItem::Instr(op, _) => pos += op.width() as u32,
        }
    }
    let mut code = Vec::new();
    for item in &f.body {
        let BodyItem::Instr(op, operand) = item else {
            continue;
        };
        let target = |operand: &Operand| -> Result<u32, AsmError> {
            match operand {
                Operand::Offset(n) => Ok(*n),
                Operand::Label(l, line) => labels
                    .get(l)
                    .copied()
                    .ok_or_else(|| semantic(&loc, format!("unknown label `{l}` (line {line})"))),
                _ => unreachable!("jump operand"),
            }
        };
        let instr = match (op, operand) {
            (Opcode::Const, Operand::Const(e)) => Instr::Const(pool.intern(e.clone())),
            (Opcode::Load, Operand::Local(n)) => Instr::Load(*n),
            (Opcode::Store, Operand::Local(n)) => Instr::Store(*n),
            (Opcode::Jmp, o) => Instr::Jmp(target(o)?),
            (Opcode::JmpIfFalse, o) => Instr::JmpIfFalse(target(o)?),
            (Opcode::New, Operand::Class(c)) => {
                Instr::New(pool.intern(PoolEntry::Class(c.clone())))
            }
            (Opcode::GetField, Operand::Field(r)) => {
                Instr::GetField(pool.intern(PoolEntry::Field(r.clone())))
            }
            (Opcode::PutField, Operand::Field(r)) => {
                Instr::PutField(pool.intern(PoolEntry::Field(r.clone())))
            }
            (Opcode::InvokeDynamic, Operand::Dynamic(n, t, b)) => Instr::InvokeDynamic {
                name: pool.str_idx(n),
                ty: pool.intern(PoolEntry::Type(t.clone())),
                bootstrap: *b,
            },
            (op, Operand::Method(r)) => {
                let kind = match op {
                    Opcode::InvokeStatic => InvocationKind::Static,
                    Opcode::InvokeVirtual => InvocationKind::Virtual,
                    Opcode::InvokeSpecial => InvocationKind::Special,
                    _ => InvocationKind::Interface,
                };
                Instr::Invoke(kind, pool.intern(PoolEntry::Method(r.clone())))
            }
            (Opcode::Pop, _) => Instr::Pop,
            (Opcode::Dup, _) => Instr::Dup,
            (Opcode::Add, _) => Instr::Add,
            (Opcode::Sub, _) => Instr::Sub,
            (Opcode::Mul, _) => Instr::Mul,
            (Opcode::Div, _) => Instr::Div,
            (Opcode::Mod, _) => Instr::Mod,
            (Opcode::Neg, _) => Instr::Neg,
            (Opcode::Lt, _) => Instr::Lt,
            (Opcode::Le, _) => Instr::Le,
            (Opcode::Eq, _) => Instr::Eq,
            (Opcode::Ne, _) => Instr::Ne,
            (Opcode::Ret, _) => Instr::Ret,
            (Opcode::NewArr, _) => Instr::NewArr,
            (Opcode::ALoad, _) => Instr::ALoad,
            (Opcode::AStore, _) => Instr::AStore,
            (Opcode::ArrLen, _) => Instr::ArrLen,
            (Opcode::Print, _) => Instr::Print,
            (op, o) => unreachable!("parser produced {o:?} for {op:?}"),
        };
        code.push(instr);
    }
    let receiver = u16::from(!f.flags.is_static());
    let param_slots = f.ty.params.len() as u16 + receiver;
    let used_locals = code
        .iter()
        .filter_map(|i| match i {
            Instr::Load(n) | Instr::Store(n) => Some(n + 1),
            _ => None,
        })
        .max()
        .unwrap_or(0);
    Ok(FunctionDef {
        name,
        ty,
        flags: f.flags,
        // Placeholder; computed by `fill_frame_sizes` when not given.
        max_stack: f.max_stack.unwrap_or(0),
        max_locals: f.max_locals.unwrap_or(param_slots.max(used_locals)),
        code,
    })
}

fn fill_frame_sizes(m: &mut ModuleFile, ast: &AstModule) {
    let mut explicit = Vec::new();
    for c in &ast.classes {
        explicit.extend(c.methods.iter().map(|f| f.max_stack.is_some()));
    }
    explicit.extend(ast.functions.iter().map(|f| f.max_stack.is_some()));
    let mut computed = Vec::new();
    for (i, (owner, f)) in m.all_functions().into_iter().enumerate() {
        if explicit[i] {
            computed.push(None);
        } else {
            computed.push(Some(validate::max_stack_depth(m, owner, f)));
        }
    }
    for (f, depth) in m.all_functions_mut().zip(computed) {
        if let Some(d) = depth {
            f.max_stack = d;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let m = assemble("fn main:()I {\n  CONST 0\n  RET\n}\n").unwrap();
        assert_eq!(m.functions.len(), 1);
        assert_eq!(m.entry_name().unwrap(), Some("main"));
        assert_eq!(m.functions[0].max_stack, 1);
        assert_eq!(m.functions[0].max_locals, 0);
    }

    #[test]
    fn signature_without_colon_is_accepted() {
        let m = assemble("fn main()I {\n  CONST 0\n  RET\n}\n").unwrap();
        assert_eq!(m.fn_type(&m.functions[0]).unwrap().to_string(), "()I");
    }

    #[test]
    fn jump_into_middle_of_instruction_is_validation_error() {
        let err = assemble("fn main:()I {\n  CONST 7\n  JMP 1\n  RET\n}\n").unwrap_err();
        assert!(
            matches!(&err, AsmError::Validation(d) if d[0].message.contains("instruction boundary")),
            "{err}"
        );
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = assemble("fn main:()I {\n  CONST\n  RET\n}\n").unwrap_err();
        assert!(matches!(err, AsmError::Syntax { line: 2, .. }), "{err}");
        let err = assemble("fn main:()I {\n  FROB 1\n}\n").unwrap_err();
        assert_eq!(
            err,
            AsmError::Syntax {
                line: 2,
                col: 3,
                message: "unknown instruction `FROB`".into()
            }
        );
        let err = assemble("fn main:()I {\n  CONST \"abc\n}\n").unwrap_err();
        assert!(matches!(err, AsmError::Syntax { line: 2, .. }));
    }

    #[test]
    fn unknown_label_and_unknown_function_are_semantic() {
        let err = assemble("fn main:()I {\n  JMP nowhere\n}\n").unwrap_err();
        assert!(matches!(err, AsmError::Semantic(_)));
        let err =
            assemble("fn main:()I {\n  INVOKE_STATIC Main.ghost:()I\n  RET\n}\n").unwrap_err();
        assert!(matches!(err, AsmError::Semantic(_)), "{err}");
    }

    #[test]
    fn comments_and_descriptor_semicolons_coexist() {
        let src = "module M ; trailing comment\n\
            class P {\n  field next:LP; ; a field\n}\n\
            fn f:(LP;)LP; {\n  LOAD 0 ; push\n  RET\n}\n";
        let m = assemble(src).unwrap();
        assert_eq!(m.fn_type(&m.functions[0]).unwrap().to_string(), "(LP;)LP;");
    }

    #[test]
    fn label_on_same_line_as_instruction() {
        let m =
            assemble("fn f:()I {\n  JMP end\n  CONST 1\n  RET\nend: CONST 2\n  RET\n}\n").unwrap();
        // JMP(5) + CONST(5) + RET(1)
        assert_eq!(m.functions[0].code[0], Instr::Jmp(11));
    }

    #[test]
    fn structural_pool_order_ignores_directive_order() {
        let a = assemble("entry main\nmodule M\nfn main:()I {\n CONST 5\n RET\n}\n").unwrap();
        let b = assemble("module M\nentry main\nfn main:()I {\n CONST 5\n RET\n}\n").unwrap();
        assert_eq!(crate::bytecode::encode(&a), crate::bytecode::encode(&b));
    }
}
