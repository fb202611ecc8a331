//! Total-order multi-index sets with an active last coordinate.

use crate::error::{Error, Result};

/// All multi-indices `a` in `N_0^dim` with `|a|_1 <= order` and `a[dim-1] >= 1`.
///
/// The last coordinate must be active because the basis enters through its
/// derivative in the final input; indices with `a[dim-1] = 0` would vanish.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultiIndexSet {
    dim: usize,
    order: usize,
    indices: Vec<Vec<usize>>,
}

impl MultiIndexSet {
    pub fn total_order(dim: usize, order: usize) -> Result<MultiIndexSet> {
        if dim == 0 {
            return Err(Error::contract("multi-index dimension must be >= 1"));
        }
        if order == 0 {
            return Err(Error::contract(
                "total order must be >= 1 for a nontrivial component",
            ));
        }
        let mut indices = Vec::new();
        let mut current = vec![0usize; dim];
        enumerate(&mut current, 0, order, &mut indices);
        debug_assert_eq!(indices.len(), cardinality(dim, order));
        Ok(MultiIndexSet {
            dim,
            order,
            indices,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.indices.iter().map(|v| v.as_slice())
    }
}

/// Lexicographic enumeration with the last-coordinate-active constraint.
fn enumerate(current: &mut Vec<usize>, pos: usize, budget: usize, out: &mut Vec<Vec<usize>>) {
    let dim = current.len();
    if pos == dim - 1 {
        for last in 1..=budget {
            current[pos] = last;
            out.push(current.clone());
        }
        current[pos] = 0;
        return;
    }
    // Reserve one unit for the mandatory last coordinate.
    for v in 0..budget {
        current[pos] = v;
        enumerate(current, pos + 1, budget - v, out);
    }
    current[pos] = 0;
}

/// `C(order+dim, dim) - C(order+dim-1, dim-1)`.
fn cardinality(dim: usize, order: usize) -> usize {
    binomial(order + dim, dim) - binomial(order + dim - 1, dim - 1)
}

fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}
