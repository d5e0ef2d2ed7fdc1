use super::descriptor::{FunctionType, TypeDesc};
use super::instr::Instr;
use super::pool::{ConstantPool, FieldRef, MethodRef};
use super::ModuleError;

pub const MAGIC: [u8; 4] = *b"FLUX";
pub const VERSION: u16 = 1;

/// Dispatch and shape flags of a function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FnFlags(pub u8);

impl FnFlags {
    pub const STATIC: u8 = 0x01;
    pub const VIRTUAL: u8 = 0x02;
    pub const SPECIAL: u8 = 0x04;
    pub const ABSTRACT: u8 = 0x08;

    pub fn statik() -> Self {
        FnFlags(Self::STATIC)
    }

    pub fn virtual_() -> Self {
        FnFlags(Self::VIRTUAL)
    }

    pub fn special() -> Self {
        FnFlags(Self::SPECIAL)
    }

    pub fn abstract_() -> Self {
        FnFlags(Self::VIRTUAL | Self::ABSTRACT)
    }

    pub fn is_static(self) -> bool {
        self.0 & Self::STATIC != 0
    }

    pub fn is_virtual(self) -> bool {
        self.0 & Self::VIRTUAL != 0
    }

    pub fn is_special(self) -> bool {
        self.0 & Self::SPECIAL != 0
    }

    pub fn is_abstract(self) -> bool {
        self.0 & Self::ABSTRACT != 0
    }

    /// Exactly one dispatch bit, abstract only with virtual, no unknown bits.
    pub fn is_well_formed(self) -> bool {
        let dispatch = self.0 & (Self::STATIC | Self::VIRTUAL | Self::SPECIAL);
        dispatch.count_ones() == 1
            && self.0 & !0x0F == 0
            && (!self.is_abstract() || self.is_virtual())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDef {
    /// Str entry.
    pub name: u32,
    /// Type entry. Excludes the receiver for instance methods.
    pub ty: u32,
    pub flags: FnFlags,
    pub max_stack: u16,
    pub max_locals: u16,
    pub code: Vec<Instr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDef {
    /// Str entry.
    pub name: u32,
    /// Str entry holding the descriptor text.
    pub desc: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDef {
    /// Class entry.
    pub name: u32,
    pub is_interface: bool,
    /// Class entry, 0 when there is no superclass.
    pub super_class: u32,
    /// Class entries.
    pub interfaces: Vec<u32>,
    pub fields: Vec<FieldDef>,
    pub methods: Vec<FunctionDef>,
}

/// A compiled program unit. Names and operands are constant-pool indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleFile {
    pub version: u16,
    pub pool: ConstantPool,
    /// Str entry. Module-level functions are owned by this name.
    pub name: u32,
    /// Class entries for classes defined by previously loaded modules.
    pub imports: Vec<u32>,
    pub classes: Vec<ClassDef>,
    pub functions: Vec<FunctionDef>,
    /// Str entry, 0 when there is no entry point.
    pub entry: u32,
}

fn bad_ref(idx: u32, expected: &'static str) -> ModuleError {
    ModuleError::BadPoolRef {
        index: idx,
        expected,
    }
}

impl ModuleFile {
    pub fn str_at(&self, idx: u32) -> Result<&str, ModuleError> {
        self.pool.str(idx).ok_or_else(|| bad_ref(idx, "string"))
    }

    pub fn class_at(&self, idx: u32) -> Result<&str, ModuleError> {
        self.pool.class(idx).ok_or_else(|| bad_ref(idx, "class"))
    }

    pub fn type_at(&self, idx: u32) -> Result<&FunctionType, ModuleError> {
        self.pool
            .fn_type(idx)
            .ok_or_else(|| bad_ref(idx, "function type"))
    }

    pub fn method_at(&self, idx: u32) -> Result<&MethodRef, ModuleError> {
        self.pool
            .method(idx)
            .ok_or_else(|| bad_ref(idx, "method ref"))
    }

    pub fn field_at(&self, idx: u32) -> Result<&FieldRef, ModuleError> {
        self.pool
            .field(idx)
            .ok_or_else(|| bad_ref(idx, "field ref"))
    }

    pub fn module_name(&self) -> Result<&str, ModuleError> {
        self.str_at(self.name)
    }

    pub fn entry_name(&self) -> Result<Option<&str>, ModuleError> {
        if self.entry == 0 {
            Ok(None)
        } else {
            self.str_at(self.entry).map(Some)
        }
    }

    pub fn class_name(&self, c: &ClassDef) -> Result<&str, ModuleError> {
        self.class_at(c.name)
    }

    pub fn super_name(&self, c: &ClassDef) -> Result<Option<&str>, ModuleError> {
        if c.super_class == 0 {
            Ok(None)
        } else {
            self.class_at(c.super_class).map(Some)
        }
    }

    pub fn field_desc(&self, f: &FieldDef) -> Result<TypeDesc, ModuleError> {
        let text = self.str_at(f.desc)?;
        text.parse().map_err(ModuleError::Descriptor)
    }

    pub fn fn_name(&self, f: &FunctionDef) -> Result<&str, ModuleError> {
        self.str_at(f.name)
    }

    pub fn fn_type(&self, f: &FunctionDef) -> Result<&FunctionType, ModuleError> {
        self.type_at(f.ty)
    }

    pub fn find_class(&self, name: &str) -> Option<&ClassDef> {
        self.classes
            .iter()
            .find(|c| self.class_name(c).ok() == Some(name))
    }

    pub fn find_function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions
            .iter()
            .find(|f| self.fn_name(f).ok() == Some(name))
    }

    pub fn imported(&self, name: &str) -> bool {
        self.imports
            .iter()
            .any(|&i| self.pool.class(i) == Some(name))
    }

    /// Every function in the module with its owner name: class methods first, then module functions.
    pub fn all_functions(&self) -> Vec<(&str, &FunctionDef)> {
        let mut out = Vec::new();
        for c in &self.classes {
            let owner = self.class_name(c).unwrap_or("?");
            for m in &c.methods {
                out.push((owner, m));
            }
        }
        let owner = self.module_name().unwrap_or("?");
        for f in &self.functions {
            out.push((owner, f));
        }
        out
    }

    pub fn all_functions_mut(&mut self) -> impl Iterator<Item = &mut FunctionDef> {
        self.classes
            .iter_mut()
            .flat_map(|c| c.methods.iter_mut())
            .chain(self.functions.iter_mut())
    }
}
