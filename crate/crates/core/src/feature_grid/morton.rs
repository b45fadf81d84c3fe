//! 2D Morton (Z-order) keys for quadtree lattice vertices.

/// Interleaved `(ix, iy)` lattice index: x bits on even positions, y bits on
/// odd positions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexKey(pub u64);

impl VertexKey {
    #[inline]
    pub fn encode(ix: u32, iy: u32) -> Self {
        VertexKey(spread(ix) | (spread(iy) << 1))
    }

    #[inline]
    pub fn decode(self) -> (u32, u32) {
        (compact(self.0), compact(self.0 >> 1))
    }
}

pub fn morton_encode(ix: u32, iy: u32) -> VertexKey {
    VertexKey::encode(ix, iy)
}

pub fn morton_decode(key: VertexKey) -> (u32, u32) {
    key.decode()
}

/// Moves bit `i` of `v` to bit `2i`.
#[inline]
fn spread(v: u32) -> u64 {
    let mut n = v as u64;
    n = (n | (n << 16)) & 0x0000_ffff_0000_ffff;
    n = (n | (n << 8)) & 0x00ff_00ff_00ff_00ff;
    n = (n | (n << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    n = (n | (n << 2)) & 0x3333_3333_3333_3333;
    (n | (n << 1)) & 0x5555_5555_5555_5555
}

#[inline]
fn compact(v: u64) -> u32 {
    let mut n = v & 0x5555_5555_5555_5555;
    n = (n | (n >> 1)) & 0x3333_3333_3333_3333;
    n = (n | (n >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
    n = (n | (n >> 4)) & 0x00ff_00ff_00ff_00ff;
    n = (n | (n >> 8)) & 0x0000_ffff_0000_ffff;
    ((n | (n >> 16)) & 0x0000_0000_ffff_ffff) as u32
}
