//! Concrete values: fixed-width words and total memories.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Word widths the language admits.
pub const WIDTHS: [u32; 5] = [1, 8, 16, 32, 64];

pub fn is_valid_width(w: u32) -> bool {
    WIDTHS.contains(&w)
}

/// All-ones mask for a width in `1..=64`.
#[inline]
pub fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Type of a value, variable or symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Type {
    Word(u32),
    Mem { addr: u32, val: u32 },
}

impl Type {
    pub const BOOL: Type = Type::Word(1);

    pub fn is_well_formed(&self) -> bool {
        match *self {
            Type::Word(w) => is_valid_width(w),
            Type::Mem { addr, val } => is_valid_width(addr) && is_valid_width(val),
        }
    }

    pub fn word_width(&self) -> Option<u32> {
        match *self {
            Type::Word(w) => Some(w),
            Type::Mem { .. } => None,
        }
    }

    pub fn is_mem(&self) -> bool {
        matches!(self, Type::Mem { .. })
    }

    /// Number of bits needed to enumerate a value of this type exhaustively.
    /// Memories only count their default cell here.
    pub fn bits(&self) -> u32 {
        match *self {
            Type::Word(w) => w,
            Type::Mem { val, .. } => val,
        }
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Word(w) => write!(f, "w{w}"),
            Type::Mem { addr, val } => write!(f, "mem{addr}x{val}"),
        }
    }
}

/// A word of a fixed bit width; the value is always reduced modulo `2^width`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Word {
    width: u32,
    value: u64,
}

impl Word {
    pub fn new(width: u32, value: u64) -> Self {
        debug_assert!((1..=64).contains(&width));
        Word {
            width,
            value: value & mask(width),
        }
    }

    pub fn bool(b: bool) -> Self {
        Word::new(1, b as u64)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn value(&self) -> u64 {
        self.value
    }

    pub fn is_true(&self) -> bool {
        self.value != 0
    }

    /// Two's complement reading of the word.
    pub fn signed(&self) -> i64 {
        if self.width >= 64 {
            self.value as i64
        } else {
            let shift = 64 - self.width;
            ((self.value << shift) as i64) >> shift
        }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}w{}", self.value, self.width)
    }
}

/// A total memory: a default cell value plus explicitly written cells.
///
/// Cells equal to the default are never stored, so derived equality is
/// extensional over the whole address space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemoryValue {
    addr_width: u32,
    val_width: u32,
    default: u64,
    cells: BTreeMap<u64, u64>,
}

impl MemoryValue {
    pub fn new(addr_width: u32, val_width: u32, default: u64) -> Self {
        MemoryValue {
            addr_width,
            val_width,
            default: default & mask(val_width),
            cells: BTreeMap::new(),
        }
    }

    pub fn zeroed(addr_width: u32, val_width: u32) -> Self {
        Self::new(addr_width, val_width, 0)
    }

    pub fn ty(&self) -> Type {
        Type::Mem {
            addr: self.addr_width,
            val: self.val_width,
        }
    }

    pub fn addr_width(&self) -> u32 {
        self.addr_width
    }

    pub fn val_width(&self) -> u32 {
        self.val_width
    }

    pub fn default_value(&self) -> u64 {
        self.default
    }

    /// Explicit cells (address, value), ascending by address.
    pub fn cells(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.cells.iter().map(|(a, v)| (*a, *v))
    }

    pub fn load(&self, addr: u64) -> u64 {
        let addr = addr & mask(self.addr_width);
        self.cells.get(&addr).copied().unwrap_or(self.default)
    }

    pub fn store(&self, addr: u64, value: u64) -> MemoryValue {
        let mut out = self.clone();
        out.store_in_place(addr, value);
        out
    }

    pub fn store_in_place(&mut self, addr: u64, value: u64) {
        let addr = addr & mask(self.addr_width);
        let value = value & mask(self.val_width);
        if value == self.default {
            self.cells.remove(&addr);
        } else {
            self.cells.insert(addr, value);
        }
    }
}

impl fmt::Display for MemoryValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mem{}x{}{{{}",
            self.addr_width, self.val_width, self.default
        )?;
        for (a, v) in &self.cells {
            write!(f, "; {a}: {v}")?;
        }
        write!(f, "}}")
    }
}

/// A value is either a word or a whole memory.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Value {
    Word(Word),
    Mem(MemoryValue),
}

impl Value {
    pub fn word(width: u32, value: u64) -> Value {
        Value::Word(Word::new(width, value))
    }

    pub fn bool(b: bool) -> Value {
        Value::Word(Word::bool(b))
    }

    pub fn ty(&self) -> Type {
        match self {
            Value::Word(w) => Type::Word(w.width()),
            Value::Mem(m) => m.ty(),
        }
    }

    pub fn as_word(&self) -> Option<Word> {
        match self {
            Value::Word(w) => Some(*w),
            Value::Mem(_) => None,
        }
    }

    pub fn as_mem(&self) -> Option<&MemoryValue> {
        match self {
            Value::Mem(m) => Some(m),
            Value::Word(_) => None,
        }
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Value::Word(w) if w.width() == 1 && w.is_true())
    }

    /// The all-zero value of a type.
    pub fn zero(ty: Type) -> Value {
        match ty {
            Type::Word(w) => Value::word(w, 0),
            Type::Mem { addr, val } => Value::Mem(MemoryValue::zeroed(addr, val)),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Word(w) => w.fmt(f),
            Value::Mem(m) => m.fmt(f),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_wrap() {
        assert_eq!(Word::new(8, 0x1ff).value(), 0xff);
        assert_eq!(Word::new(64, u64::MAX).value(), u64::MAX);
        assert_eq!(Word::new(8, 0x80).signed(), -128);
        assert_eq!(Word::new(1, 1).signed(), -1);
    }

    #[test]
    fn memory_is_extensional() {
        let m = MemoryValue::zeroed(32, 32);
        let a = m.store(4, 7).store(4, 0);
        assert_eq!(a, m);
        let b = m.store(8, 1).store(4, 2);
        let c = m.store(4, 2).store(8, 1);
        assert_eq!(b, c);
        assert_eq!(b.load(4), 2);
        assert_eq!(b.load(12), 0);
    }
}
