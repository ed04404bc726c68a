/// Spreads the low 32 bits of `v` so that bit `i` lands on bit `2i`.
#[inline]
pub(crate) fn spread_bits(v: u32) -> u64 {
    let mut n = v as u64;
    n = (n | (n << 16)) & 0x0000_ffff_0000_ffff;
    n = (n | (n << 8)) & 0x00ff_00ff_00ff_00ff;
    n = (n | (n << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    n = (n | (n << 2)) & 0x3333_3333_3333_3333;
    (n | (n << 1)) & 0x5555_5555_5555_5555
}

#[inline]
pub(crate) fn compact_bits(v: u64) -> u32 {
    let mut n = v & 0x5555_5555_5555_5555;
    n = (n | (n >> 1)) & 0x3333_3333_3333_3333;
    n = (n | (n >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
    n = (n | (n >> 4)) & 0x00ff_00ff_00ff_00ff;
    n = (n | (n >> 8)) & 0x0000_ffff_0000_ffff;
    ((n | (n >> 16)) & 0x0000_0000_ffff_ffff) as u32
}

/// Morton code with `x` on the even bits and `y` on the odd bits.
#[inline]
pub fn morton2(x: u32, y: u32) -> u64 {
    spread_bits(x) | (spread_bits(y) << 1)
}

#[inline]
pub fn morton2_decode(code: u64) -> (u32, u32) {
    (compact_bits(code), compact_bits(code >> 1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn interleave_oracle(x: u32, y: u32) -> u64 {
        let mut out = 0u64;
        for bit in 0..32 {
            out |= (((x >> bit) & 1) as u64) << (2 * bit);
            out |= (((y >> bit) & 1) as u64) << (2 * bit + 1);
        }
        out
    }

    #[test]
    fn small_grid_order() {
        assert_eq!(morton2(0, 0), 0);
        assert_eq!(morton2(1, 0), 1);
        assert_eq!(morton2(0, 1), 2);
        assert_eq!(morton2(1, 1), 3);
        assert_eq!(morton2(2, 0), 4);
    }

    proptest! {
        #[test]
        fn matches_bit_loop(x in any::<u32>(), y in any::<u32>()) {
            let code = morton2(x, y);
            prop_assert_eq!(code, interleave_oracle(x, y));
            prop_assert_eq!(morton2_decode(code), (x, y));
        }
    }
}
