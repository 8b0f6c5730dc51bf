//! Flat tables of rankings and their inverse position maps.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::Result;
use crate::perm::{enumerate_sn, factorial, Permutation};

#[derive(Debug)]
pub struct PermTable {
    n: usize,
    rankings: Vec<u16>,
    positions: Vec<u16>,
}

impl PermTable {
    pub fn from_rankings<'a>(n: usize, perms: impl IntoIterator<Item = &'a [u16]>) -> Self {
        let mut rankings = Vec::new();
        let mut positions = Vec::new();
        for r in perms {
            debug_assert_eq!(r.len(), n);
            rankings.extend_from_slice(r);
            let base = positions.len();
            positions.resize(base + n, 0);
            for (i, &e) in r.iter().enumerate() {
                positions[base + e as usize - 1] = i as u16;
            }
        }
        Self {
            n,
            rankings,
            positions,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.rankings.len() / self.n
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in rank order.
    pub fn ranking(&self, i: usize) -> &[u16] {
        &self.rankings[i * self.n..(i + 1) * self.n]
    }

    /// 0-based position of element `e` at index `e - 1`.
    pub fn positions(&self, i: usize) -> &[u16] {
        &self.positions[i * self.n..(i + 1) * self.n]
    }

    pub fn permutation(&self, i: usize) -> Permutation {
        Permutation::from_vec_unchecked(self.ranking(i).to_vec())
    }
}

/// Shared lexicographic enumeration of `S_n`, built once per `n`.
pub fn perm_table(n: usize) -> Result<Arc<PermTable>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<PermTable>>>> = OnceLock::new();
    let perms = enumerate_sn(n)?;
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().expect("table cache").get(&n) {
        return Ok(Arc::clone(t));
    }
    let mut flat = Vec::with_capacity(factorial(n) * n);
    for p in perms {
        flat.extend_from_slice(p.as_slice());
    }
    let table = Arc::new(PermTable::from_rankings(n, flat.chunks(n)));
    cache
        .lock()
        .expect("table cache")
        .entry(n)
        .or_insert_with(|| Arc::clone(&table));
    Ok(table)
}
