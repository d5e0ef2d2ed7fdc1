use std::collections::BTreeSet;
use std::fmt::Write;

use super::instr::{offsets, Instr, BOOTSTRAP_BUILTIN};
use super::module::{FunctionDef, ModuleFile};
use super::pool::PoolEntry;

/// Renders a module as `.fxa` text that re-assembles to the same module.
pub fn disassemble(m: &ModuleFile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "module {}", m.module_name().unwrap_or("<bad-name>"));
    for &i in &m.imports {
        let _ = writeln!(out, "import {}", m.pool.class(i).unwrap_or("<bad-import>"));
    }
    if let Ok(Some(e)) = m.entry_name() {
        let _ = writeln!(out, "entry {e}");
    }
    for c in &m.classes {
        out.push('\n');
        let kw = if c.is_interface { "interface" } else { "class" };
        let _ = write!(out, "{kw} {}", m.class_name(c).unwrap_or("<bad-class>"));
        if let Ok(Some(s)) = m.super_name(c) {
            let _ = write!(out, " extends {s}");
        }
        if !c.interfaces.is_empty() {
            let names: Vec<&str> = c
                .interfaces
                .iter()
                .map(|&i| m.pool.class(i).unwrap_or("<bad-interface>"))
                .collect();
            let _ = write!(
                out,
                " {} {}",
                if c.is_interface {
                    "extends"
                } else {
                    "implements"
                },
                names.join(", ")
            );
        }
        out.push_str(" {\n");
        for f in &c.fields {
            let _ = writeln!(
                out,
                "  field {}:{}",
                m.str_at(f.name).unwrap_or("<bad-field>"),
                m.str_at(f.desc).unwrap_or("A")
            );
        }
        for f in &c.methods {
            let modifier = if f.flags.is_abstract() {
                "abstract "
            } else if f.flags.is_static() {
                "static "
            } else if f.flags.is_special() {
                "special "
            } else {
                ""
            };
            let _ = write!(out, "  {modifier}method ");
            function(&mut out, m, f, "  ");
        }
        out.push_str("}\n");
    }
    for f in &m.functions {
        out.push_str("\nfn ");
        function(&mut out, m, f, "");
    }
    out
}

fn function(out: &mut String, m: &ModuleFile, f: &FunctionDef, indent: &str) {
    let ty = m
        .fn_type(f)
        .map(|t| t.to_string())
        .unwrap_or_else(|_| "<bad-type>".into());
    let _ = write!(
        out,
        "{}:{} stack {} locals {}",
        m.fn_name(f).unwrap_or("<bad-name>"),
        ty,
        f.max_stack,
        f.max_locals
    );
    if f.flags.is_abstract() {
        out.push('\n');
        return;
    }
    out.push_str(" {\n");
    let offs = offsets(&f.code);
    let boundaries: BTreeSet<u32> = offs[..f.code.len()].iter().copied().collect();
    let targets: BTreeSet<u32> = f
        .code
        .iter()
        .filter_map(Instr::jump_target)
        .filter(|t| boundaries.contains(t))
        .collect();
    for (instr, &pc) in f.code.iter().zip(&offs) {
        if targets.contains(&pc) {
            let _ = writeln!(out, "{indent}L{pc}:");
        }
        let _ = writeln!(out, "{indent}  {}", render_instr(m, instr, &targets));
    }
    let _ = writeln!(out, "{indent}}}");
}

fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        match c {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            '\t' => q.push_str("\\t"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}

fn render_instr(m: &ModuleFile, instr: &Instr, targets: &BTreeSet<u32>) -> String {
    let mn = instr.opcode().mnemonic();
    let bad = |i: u32| format!("<bad #{i}>");
    match *instr {
        Instr::Const(i) => {
            let lit = match m.pool.get(i) {
                Some(PoolEntry::Str(s)) => quote(s),
                Some(PoolEntry::Int(v)) => v.to_string(),
                Some(PoolEntry::Flt(x)) => format!("{x:?}"),
                Some(PoolEntry::Bool(b)) => b.to_string(),
                Some(PoolEntry::Null) => "null".to_string(),
                _ => bad(i),
            };
            format!("{mn} {lit}")
        }
        Instr::Load(n) | Instr::Store(n) => format!("{mn} {n}"),
        Instr::Jmp(t) | Instr::JmpIfFalse(t) => {
            if targets.contains(&t) {
                format!("{mn} L{t}")
            } else {
                format!("{mn} {t}")
            }
        }
        Instr::New(i) => format!(
            "{mn} {}",
            m.pool
                .class(i)
                .map(str::to_string)
                .unwrap_or_else(|| bad(i))
        ),
        Instr::GetField(i) | Instr::PutField(i) => {
            format!(
                "{mn} {}",
                m.pool
                    .field(i)
                    .map(|r| r.to_string())
                    .unwrap_or_else(|| bad(i))
            )
        }
        Instr::Invoke(_, i) => format!(
            "{mn} {}",
            m.pool
                .method(i)
                .map(|r| r.to_string())
                .unwrap_or_else(|| bad(i))
        ),
        Instr::InvokeDynamic {
            name,
            ty,
            bootstrap,
        } => {
            let n = m.pool.str(name).map(quote).unwrap_or_else(|| bad(name));
            let t = m
                .pool
                .fn_type(ty)
                .map(|t| t.to_string())
                .unwrap_or_else(|| bad(ty));
            if bootstrap == BOOTSTRAP_BUILTIN {
                format!("{mn} {n} {t}")
            } else {
                format!("{mn} {n} {t} #{bootstrap}")
            }
        }
        _ => mn.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bytecode::{assemble, encode};

    #[test]
    fn minimal_program_text() {
        let m = assemble("fn main:()I {\n  CONST 0\n  RET\n}\n").unwrap();
        let text = disassemble(&m);
        assert!(text.contains("CONST 0"));
        assert!(text.contains("RET"));
        assert_eq!(encode(&assemble(&text).unwrap()), encode(&m));
    }

    #[test]
    fn string_escapes_and_floats_survive() {
        let src = "fn main:()V {\n CONST \"a \\\"q\\\"\\n\\\\\"\n PRINT\n CONST 1.0\n PRINT\n CONST -0.0\n PRINT\n CONST 1e300\n PRINT\n RET\n}\n";
        let m = assemble(src).unwrap();
        let again = assemble(&disassemble(&m)).unwrap();
        assert_eq!(encode(&again), encode(&m));
    }
}
