//! Symbol table: interned names with value, function, property and flag cells.
//!
//! Interning is idempotent and names are case-sensitive. Symbol table index
//! order doubles as the canonical variable order of the algebra layer and as
//! the serialization order of the image writer, so it must stay stable for
//! the life of a session.

use crate::value::Value;
use std::collections::HashMap;

#[derive(Clone, Debug)]
pub enum FunCell {
    None,
    /// Index into the builtin dispatch table.
    Builtin(u16),
    /// Interpreted definition: a `(lambda (params) body...)` form.
    Lambda(Value),
    /// Compiled definition plus its retained source lambda. The tree-walking
    /// engine applies the source so differential runs compare real work.
    Chunk { chunk: Value, source: Value },
}

#[derive(Clone, Debug)]
pub struct SymbolData {
    pub name: String,
    /// Value cell; `Value::UNBOUND` until assigned.
    pub value: Value,
    pub fun: FunCell,
    /// At most one entry per key symbol.
    pub plist: Vec<(Value, Value)>,
    /// Marker symbols set by `flag`.
    pub flags: Vec<Value>,
}

#[derive(Clone, Default)]
pub struct SymbolTable {
    syms: Vec<SymbolData>,
    index: HashMap<String, usize>,
}

impl SymbolTable {
    pub fn new() -> SymbolTable {
        SymbolTable::default()
    }

    pub fn intern(&mut self, name: &str) -> Value {
        assert!(!name.is_empty(), "symbol names are nonempty");
        if let Some(&i) = self.index.get(name) {
            return Value::symbol(i);
        }
        let i = self.syms.len();
        self.syms.push(SymbolData {
            name: name.to_string(),
            value: Value::UNBOUND,
            fun: FunCell::None,
            plist: Vec::new(),
            flags: Vec::new(),
        });
        self.index.insert(name.to_string(), i);
        Value::symbol(i)
    }

    pub fn lookup(&self, name: &str) -> Option<Value> {
        self.index.get(name).map(|&i| Value::symbol(i))
    }

    pub fn get(&self, sym: Value) -> &SymbolData {
        &self.syms[sym.symbol_index()]
    }

    pub fn get_mut(&mut self, sym: Value) -> &mut SymbolData {
        &mut self.syms[sym.symbol_index()]
    }

    pub fn name(&self, sym: Value) -> &str {
        &self.get(sym).name
    }

    pub fn len(&self) -> usize {
        self.syms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.syms.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SymbolData> {
        self.syms.iter()
    }
}
