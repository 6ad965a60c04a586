//! Tagged one-word values.
//!
//! Every datum in the kernel is a single 64-bit word. The low 3 bits name
//! the representation and the upper 61 bits carry the payload: a signed
//! integer for fixnums, a table index for symbols, an arena slot index for
//! cons cells and heap objects, and a small tagged payload for immediates.
//! The tag numbering is frozen: the image format depends on it.

use std::fmt;

pub const TAG_BITS: u32 = 3;
pub const TAG_MASK: u64 = 0b111;

/// Smallest integer representable without heap allocation.
pub const FIXNUM_MIN: i64 = -(1i64 << 60);
/// Largest integer representable without heap allocation.
pub const FIXNUM_MAX: i64 = (1i64 << 60) - 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum TypeTag {
    Fixnum = 0,
    Cons = 1,
    Symbol = 2,
    Immediate = 3,
    HeapObj = 4,
}

// Immediate subtags occupy bits 3..8 of an IMMEDIATE word; the payload
// starts at bit 8.
const IMM_CHAR: u64 = 0;
const IMM_MARKER: u64 = 1;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Value(u64);

impl Value {
    /// The distinguished symbol `nil`: table index 0 in every session.
    pub const NIL: Value = Value(TypeTag::Symbol as u64);

    /// Marker stored in unbound value cells; reading one is an evaluation error.
    pub const UNBOUND: Value =
        Value((IMM_MARKER << TAG_BITS) | TypeTag::Immediate as u64);

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Reconstructs a value from a raw arena word. Only the heap and the
    /// image loader deal in raw words.
    pub fn from_raw(word: u64) -> Value {
        debug_assert!(word & TAG_MASK < 5, "corrupt value word {word:#x}");
        Value(word)
    }

    pub fn tag(self) -> TypeTag {
        match self.0 & TAG_MASK {
            0 => TypeTag::Fixnum,
            1 => TypeTag::Cons,
            2 => TypeTag::Symbol,
            3 => TypeTag::Immediate,
            4 => TypeTag::HeapObj,
            // Tags 5..7 are never constructed.
            _ => unreachable!("corrupt value word {:#x}", self.0),
        }
    }

    /// Encodes `i` as a fixnum. Callers promote to a bignum when out of range.
    pub fn fixnum(i: i64) -> Value {
        debug_assert!((FIXNUM_MIN..=FIXNUM_MAX).contains(&i));
        Value((i << TAG_BITS) as u64)
    }

    pub const fn fixnum_const(i: i64) -> Value {
        assert!(i >= FIXNUM_MIN && i <= FIXNUM_MAX);
        Value((i << TAG_BITS) as u64)
    }

    pub fn checked_fixnum(i: i64) -> Option<Value> {
        if (FIXNUM_MIN..=FIXNUM_MAX).contains(&i) {
            Some(Value::fixnum(i))
        } else {
            None
        }
    }

    pub fn as_fixnum(self) -> i64 {
        debug_assert!(self.is_fixnum());
        (self.0 as i64) >> TAG_BITS
    }

    pub fn symbol(index: usize) -> Value {
        Value(((index as u64) << TAG_BITS) | TypeTag::Symbol as u64)
    }

    pub fn symbol_index(self) -> usize {
        debug_assert!(self.is_symbol());
        (self.0 >> TAG_BITS) as usize
    }

    /// Handle for a cons cell whose header lives at arena slot `slot`.
    pub fn cons_at(slot: usize) -> Value {
        Value(((slot as u64) << TAG_BITS) | TypeTag::Cons as u64)
    }

    /// Handle for a non-cons heap object whose header lives at `slot`.
    pub fn heapobj_at(slot: usize) -> Value {
        Value(((slot as u64) << TAG_BITS) | TypeTag::HeapObj as u64)
    }

    /// Arena slot of the header word; valid for CONS and HEAPOBJ values.
    pub fn handle(self) -> usize {
        debug_assert!(self.is_cons() || self.is_heapobj());
        (self.0 >> TAG_BITS) as usize
    }

    pub fn char_value(byte: u8) -> Value {
        Value(
            ((byte as u64) << 8)
                | (IMM_CHAR << TAG_BITS)
                | TypeTag::Immediate as u64,
        )
    }

    pub fn as_char(self) -> Option<u8> {
        if self.is_immediate() && (self.0 >> TAG_BITS) & 0b11111 == IMM_CHAR {
            Some((self.0 >> 8) as u8)
        } else {
            None
        }
    }

    pub fn is_fixnum(self) -> bool {
        self.0 & TAG_MASK == TypeTag::Fixnum as u64
    }

    pub fn is_cons(self) -> bool {
        self.0 & TAG_MASK == TypeTag::Cons as u64
    }

    pub fn is_symbol(self) -> bool {
        self.0 & TAG_MASK == TypeTag::Symbol as u64
    }

    pub fn is_immediate(self) -> bool {
        self.0 & TAG_MASK == TypeTag::Immediate as u64
    }

    pub fn is_heapobj(self) -> bool {
        self.0 & TAG_MASK == TypeTag::HeapObj as u64
    }

    pub fn is_nil(self) -> bool {
        self == Value::NIL
    }

    /// Everything except a cons cell counts as an atom; nil is an atom.
    pub fn is_atom(self) -> bool {
        !self.is_cons()
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tag() {
            TypeTag::Fixnum => write!(f, "Value(fixnum {})", self.as_fixnum()),
            TypeTag::Cons => write!(f, "Value(cons @{})", self.handle()),
            TypeTag::Symbol => write!(f, "Value(symbol #{})", self.symbol_index()),
            TypeTag::Immediate => write!(f, "Value(immediate {:#x})", self.0),
            TypeTag::HeapObj => write!(f, "Value(heapobj @{})", self.handle()),
        }
    }
}
