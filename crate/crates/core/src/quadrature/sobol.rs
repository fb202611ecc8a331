//! Owen-scrambled Sobol' points on the unit hypercube.
//!
//! Direction numbers come from the Joe–Kuo `new-joe-kuo-6` table
//! (<https://web.maths.unsw.edu.au/~fkuo/sobol/>), truncated to the
//! dimensions this crate supports. Scrambling is nested uniform digit
//! scrambling to 32 fractional bits, driven by a counter-based hash keyed on
//! `(seed, dimension)`, so points are bit-identical across runs.

/// Highest supported dimension.
pub const MAX_DIMENSION: usize = 20;

const BITS: usize = 32;

/// `(s, a, m)` rows for Sobol' dimensions 2..=20 (dimension 1 is the van der
/// Corput sequence and needs no row).
const JOE_KUO: [(u32, u32, &[u32]); 19] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
    (6, 1, &[1, 3, 3, 9, 7, 49]),
    (6, 13, &[1, 1, 1, 15, 21, 21]),
    (6, 16, &[1, 3, 1, 13, 27, 49]),
    (6, 19, &[1, 1, 1, 15, 7, 5]),
    (6, 22, &[1, 3, 1, 15, 13, 25]),
    (6, 25, &[1, 1, 5, 5, 19, 61]),
    (7, 1, &[1, 3, 7, 11, 23, 15, 103]),
];

/// Direction vectors for one dimension, most significant bit first.
fn direction_vectors(dim: usize) -> [u32; BITS] {
    assert!(dim >= 1 && dim <= MAX_DIMENSION);
    let mut v = [0u32; BITS];
    if dim == 1 {
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (s, a, m) = JOE_KUO[dim - 2];
    let s = s as usize;
    for k in 0..BITS {
        if k < s {
            v[k] = m[k] << (BITS - 1 - k);
        } else {
            let mut x = v[k - s] ^ (v[k - s] >> s);
            for i in 1..s {
                if (a >> (s - 1 - i)) & 1 == 1 {
                    x ^= v[k - i];
                }
            }
            v[k] = x;
        }
    }
    v
}

/// Unscrambled Sobol' integer for `(index, dim)`, 32 fractional bits.
fn sobol_u32(index: u32, v: &[u32; BITS]) -> u32 {
    let mut x = 0u32;
    let mut i = index;
    let mut k = 0;
    while i != 0 {
        if i & 1 == 1 {
            x ^= v[k];
        }
        i >>= 1;
        k += 1;
    }
    x
}

/// SplitMix64 finalizer; the counter-based generator behind the scramble.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Nested uniform digit scramble of a 32-bit fraction.
///
/// The flip applied to digit `k` is a pseudo-random function of the key and
/// the digits above `k`, which is exactly Owen's nested scramble in base 2.
fn owen_scramble(x: u32, key: u64) -> u32 {
    let mut out = 0u32;
    for k in 0..BITS {
        let prefix = if k == 0 { 0 } else { (x >> (BITS - k)) as u64 };
        // (1 << k) | prefix injectively encodes (level, prefix).
        let node = (1u64 << k) | prefix;
        let flip = (mix(key ^ mix(node)) & 1) as u32;
        let bit = (x >> (BITS - 1 - k)) & 1;
        out = (out << 1) | (bit ^ flip);
    }
    out
}

/// Per-dimension scramble key derived from the rule seed.
fn dimension_key(seed: u64, dim: usize) -> u64 {
    mix(seed ^ mix(0x51ab_0000 + dim as u64))
}

/// Generator for a `d`-dimensional Owen-scrambled Sobol' sequence.
pub struct ScrambledSobol {
    vectors: Vec<[u32; BITS]>,
    keys: Vec<u64>,
}

impl ScrambledSobol {
    pub fn new(d: usize, seed: u64) -> Self {
        assert!(d >= 1 && d <= MAX_DIMENSION);
        ScrambledSobol {
            vectors: (1..=d).map(direction_vectors).collect(),
            keys: (1..=d).map(|dim| dimension_key(seed, dim)).collect(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.vectors.len()
    }

    /// Writes point `index` into `out`, one coordinate per dimension.
    pub fn point_into(&self, index: u32, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dimension());
        for (j, slot) in out.iter_mut().enumerate() {
            let raw = sobol_u32(index, &self.vectors[j]);
            let scrambled = owen_scramble(raw, self.keys[j]);
            // Offset by half an ulp of the 32-bit grid so coordinates stay
            // strictly inside (0, 1).
            *slot = (scrambled as f64 + 0.5) * (1.0 / 4294967296.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn van_der_corput_first_points() {
        let v = direction_vectors(1);
        let vals: Vec<f64> = (0..4)
            .map(|i| sobol_u32(i, &v) as f64 / 4294967296.0)
            .collect();
        assert_eq!(vals, vec![0.0, 0.5, 0.25, 0.75]);
    }

    #[test]
    fn unscrambled_projections_are_stratified() {
        // Every 1D projection of the first 2^m Sobol points hits each dyadic
        // interval of width 2^-m exactly once.
        for dim in 1..=MAX_DIMENSION {
            let v = direction_vectors(dim);
            for m in [3u32, 5] {
                let n = 1u32 << m;
                let mut seen = vec![false; n as usize];
                for i in 0..n {
                    let cell = (sobol_u32(i, &v) >> (BITS as u32 - m)) as usize;
                    assert!(!seen[cell], "dim {dim}: cell {cell} hit twice");
                    seen[cell] = true;
                }
            }
        }
    }

    #[test]
    fn scramble_preserves_stratification() {
        // Nested scrambling is an automorphism of every dyadic partition.
        for dim in 1..=4 {
            let v = direction_vectors(dim);
            let key = dimension_key(99, dim);
            let m = 5u32;
            let n = 1u32 << m;
            let mut seen = vec![false; n as usize];
            for i in 0..n {
                let x = owen_scramble(sobol_u32(i, &v), key);
                let cell = (x >> (BITS as u32 - m)) as usize;
                assert!(!seen[cell]);
                seen[cell] = true;
            }
        }
    }

    #[test]
    fn scramble_depends_on_seed_and_dimension() {
        let a = ScrambledSobol::new(3, 1);
        let b = ScrambledSobol::new(3, 2);
        let mut pa = [0.0; 3];
        let mut pb = [0.0; 3];
        a.point_into(7, &mut pa);
        b.point_into(7, &mut pb);
        assert_ne!(pa, pb);
        // Distinct dimensions of one rule are scrambled independently.
        assert_ne!(pa[0], pa[1]);
    }
}
