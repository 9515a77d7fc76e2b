use std::fmt;

use ethnum::U256;
use sha2::{Digest, Sha256};

use super::ChordError;

/// Width of the identifier circle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct IdSpace {
    bits: u32,
}

impl IdSpace {
    pub const MAX_BITS: u32 = 160;

    pub fn new(bits: u32) -> Result<IdSpace, ChordError> {
        if bits == 0 || bits > Self::MAX_BITS {
            return Err(ChordError::BadM(bits));
        }
        Ok(IdSpace { bits })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    fn mask(&self) -> U256 {
        (U256::ONE << self.bits) - U256::ONE
    }

    /// `id + 2^i` on the circle.
    pub fn offset(&self, id: RingId, i: u32) -> RingId {
        RingId(id.0.wrapping_add(U256::ONE << i) & self.mask())
    }

    pub fn id(&self, value: u128) -> RingId {
        RingId(U256::from(value) & self.mask())
    }

    pub fn hex_width(&self) -> usize {
        self.bits.div_ceil(4) as usize
    }
}

impl Default for IdSpace {
    fn default() -> Self {
        IdSpace { bits: 64 }
    }
}

/// A point on the identifier circle.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct RingId(pub U256);

impl RingId {
    pub fn from_u128(value: u128) -> RingId {
        RingId(U256::from(value))
    }

    pub fn as_u128(&self) -> u128 {
        self.0.as_u128()
    }

    pub fn to_hex(&self, space: IdSpace) -> String {
        format!("{:0width$x}", self.0, width = space.hex_width())
    }
}

impl fmt::Debug for RingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RingId({:#x})", self.0)
    }
}

impl fmt::Display for RingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// The top `bits` bits of SHA-256(`bytes`).
pub fn ring_id(bytes: &[u8], bits: u32) -> Result<RingId, ChordError> {
    let space = IdSpace::new(bits)?;
    Ok(space_id(space, bytes))
}

pub(crate) fn space_id(space: IdSpace, bytes: &[u8]) -> RingId {
    let digest: [u8; 32] = Sha256::digest(bytes).into();
    RingId(U256::from_be_bytes(digest) >> (256 - space.bits))
}

/// `x ∈ (from, to]` walking clockwise. When `from == to` the interval is
/// the whole circle.
pub fn in_half_open(x: RingId, from: RingId, to: RingId) -> bool {
    if from < to {
        from < x && x <= to
    } else {
        x > from || x <= to
    }
}

/// `x ∈ (from, to)` walking clockwise. When `from == to` this is every
/// point except `from`.
pub fn in_open(x: RingId, from: RingId, to: RingId) -> bool {
    if from < to {
        from < x && x < to
    } else {
        x > from || x < to
    }
}
