//! Sample programs and advice modules shipped with the VM, in assembly form.

use crate::bytecode::{assemble, ModuleFile};
use crate::value::Value;

pub struct Program {
    pub name: &'static str,
    pub source: &'static str,
    /// Integer arguments passed to `main`.
    pub args: &'static [i64],
    /// Lines served to `Sys.read_line`.
    pub input: &'static [&'static str],
}

impl Program {
    pub fn module(&self) -> ModuleFile {
        assemble(self.source).expect("corpus programs assemble")
    }

    pub fn arg_values(&self) -> Vec<Value> {
        self.args.iter().map(|&n| Value::Int(n)).collect()
    }
}

macro_rules! program {
    ($name:literal, $args:expr, $input:expr) => {
        Program {
            name: $name,
            source: include_str!(concat!("../corpus/", $name, ".fxa")),
            args: $args,
            input: $input,
        }
    };
}

pub const PROGRAMS: &[Program] = &[
    program!("classicfibo", &[15], &[]),
    program!("arith", &[], &[]),
    program!("strings", &[], &[]),
    program!("arrays", &[], &[]),
    program!("dispatch", &[], &[]),
    program!("shapes", &[], &[]),
    program!("points", &[], &[]),
    program!("switcher", &[], &["click", "click", "click"]),
    program!("mutual", &[], &[]),
    program!("sieve", &[30], &[]),
    program!("lists", &[], &[]),
];

/// Advice modules, keyed by module name. They are loaded untransformed.
pub const ADVICE: &[(&str, &str)] = &[
    ("Dumpers", include_str!("../corpus/dumpers.fxa")),
    ("Empty", include_str!("../corpus/empty.fxa")),
    ("Tags", include_str!("../corpus/tags.fxa")),
];

pub fn program(name: &str) -> Option<&'static Program> {
    PROGRAMS.iter().find(|p| p.name == name)
}

pub fn advice(name: &str) -> Option<ModuleFile> {
    ADVICE
        .iter()
        .find(|(n, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, src)| assemble(src).expect("advice modules assemble"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn everything_assembles() {
        for p in PROGRAMS {
            p.module();
        }
        for (n, _) in ADVICE {
            let m = advice(n).unwrap();
            assert_eq!(m.module_name().unwrap(), *n);
        }
    }
}
