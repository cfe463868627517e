//! Magnitude pruning and linearized index sets.
//!
//! Pruning itself is a black box as far as the compressed store is
//! concerned: all it consumes is, per parameter tensor, the sorted 1-D
//! indices of the coordinates that survive. Magnitude pruning is provided
//! as a deterministic producer of those sets.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparsity::Sparsity;
use crate::tensor::{DType, Tensor};

/// Sorted, unique 32-bit indices of the unpruned coordinates of one
/// parameter tensor, in its row-major 1-D view.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawIndexSet", deny_unknown_fields)]
pub struct PrunedIndexSet {
    layer_id: String,
    dense_len: usize,
    indices: Vec<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIndexSet {
    layer_id: String,
    dense_len: usize,
    indices: Vec<u32>,
}

impl TryFrom<RawIndexSet> for PrunedIndexSet {
    type Error = Error;

    fn try_from(raw: RawIndexSet) -> Result<Self> {
        PrunedIndexSet::new(raw.layer_id, raw.dense_len, raw.indices)
    }
}

impl PrunedIndexSet {
    pub fn new(layer_id: impl Into<String>, dense_len: usize, indices: Vec<u32>) -> Result<Self> {
        let layer_id = layer_id.into();
        if dense_len as u64 > u32::MAX as u64 {
            return Err(Error::Index(format!(
                "layer {layer_id}: {dense_len} elements do not fit 32-bit indices"
            )));
        }
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Index(format!(
                "layer {layer_id}: indices not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        if let Some(&last) = indices.last() {
            if last as usize >= dense_len {
                return Err(Error::Index(format!(
                    "layer {layer_id}: index {last} >= dense length {dense_len}"
                )));
            }
        }
        Ok(Self {
            layer_id,
            dense_len,
            indices,
        })
    }

    /// Every coordinate kept.
    pub fn full(layer_id: impl Into<String>, dense_len: usize) -> Result<Self> {
        let n = u32::try_from(dense_len)
            .map_err(|_| Error::Index(format!("{dense_len} elements do not fit 32-bit indices")))?;
        Self::new(layer_id, dense_len, (0..n).collect())
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn dense_len(&self) -> usize {
        self.dense_len
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Dense keep-mask, `true` at unpruned coordinates.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.dense_len];
        for &i in &self.indices {
            m[i as usize] = true;
        }
        m
    }
}

/// Row-major linear index of each coordinate, returned in ascending order.
pub fn linearize(coords: &[Vec<usize>], shape: &[usize]) -> Result<Vec<u32>> {
    let total: usize = shape.iter().product();
    if total as u64 > u32::MAX as u64 {
        return Err(Error::Index(format!(
            "shape {shape:?} exceeds 32-bit indexing"
        )));
    }
    let mut out = Vec::with_capacity(coords.len());
    for c in coords {
        if c.len() != shape.len() {
            return Err(Error::Index(format!(
                "coordinate {c:?} has rank {}, shape {shape:?}",
                c.len()
            )));
        }
        let mut lin = 0usize;
        for (&x, &extent) in c.iter().zip(shape) {
            if x >= extent {
                return Err(Error::Index(format!(
                    "coordinate {c:?} outside shape {shape:?}"
                )));
            }
            lin = lin * extent + x;
        }
        out.push(lin as u32);
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneScope {
    #[default]
    PerLayer,
    Global,
}

/// One parameter tensor offered to the pruner.
#[derive(Clone, Debug)]
pub struct PruneInput<'a> {
    pub layer_id: &'a str,
    pub values: &'a Tensor,
    pub prunable: bool,
}

struct Candidate {
    magnitude: f32,
    layer: usize,
    index: u32,
}

fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.magnitude
        .total_cmp(&a.magnitude)
        .then(a.layer.cmp(&b.layer))
        .then(a.index.cmp(&b.index))
}

/// Keeps the `(1 - p)` fraction of largest-magnitude parameters.
///
/// Ties at the threshold go to the lower linear index (and, for global
/// scope, the earlier layer). Non-prunable inputs keep every index.
pub fn magnitude_prune(
    inputs: &[PruneInput<'_>],
    p: Sparsity,
    scope: PruneScope,
) -> Result<Vec<PrunedIndexSet>> {
    if p.ratio() >= num_rational::Ratio::from_integer(1) {
        return Err(Error::Parameter(format!("sparsity {p} must be below 1")));
    }
    let mut candidates: Vec<Vec<Candidate>> = Vec::with_capacity(inputs.len());
    for (layer, input) in inputs.iter().enumerate() {
        if input.values.dtype() != DType::Single {
            return Err(Error::Parameter(format!(
                "layer {}: pruning expects single-precision parameters",
                input.layer_id
            )));
        }
        if input.values.len() as u64 > u32::MAX as u64 {
            return Err(Error::Index(format!(
                "layer {} exceeds 32-bit indexing",
                input.layer_id
            )));
        }
        let values = input.values.as_f32().unwrap_or_default();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!(
                "layer {} has non-finite values",
                input.layer_id
            )));
        }
        candidates.push(
            values
                .iter()
                .enumerate()
                .map(|(i, v)| Candidate {
                    magnitude: v.abs(),
                    layer,
                    index: i as u32,
                })
                .collect(),
        );
    }

    let mut kept: Vec<Vec<u32>> = vec![Vec::new(); inputs.len()];
    match scope {
        PruneScope::PerLayer => {
            for (layer, mut cands) in candidates.into_iter().enumerate() {
                let k = if inputs[layer].prunable {
                    p.kept_count(cands.len())
                } else {
                    cands.len()
                };
                cands.sort_by(rank);
                kept[layer] = cands.into_iter().take(k).map(|c| c.index).collect();
            }
        }
        PruneScope::Global => {
            let mut pool = Vec::new();
            for (layer, cands) in candidates.into_iter().enumerate() {
                if inputs[layer].prunable {
                    pool.extend(cands);
                } else {
                    kept[layer] = cands.into_iter().map(|c| c.index).collect();
                }
            }
            let k = p.kept_count(pool.len());
            pool.sort_by(rank);
            for c in pool.into_iter().take(k) {
                kept[c.layer].push(c.index);
            }
        }
    }

    inputs
        .iter()
        .zip(kept)
        .map(|(input, mut idx)| {
            idx.sort_unstable();
            PrunedIndexSet::new(input.layer_id, input.values.len(), idx)
        })
        .collect()
}

pub fn write_index_sets(sets: &[PrunedIndexSet]) -> Result<String> {
    Ok(serde_json::to_string_pretty(sets)?)
}

pub fn read_index_sets(json: &str) -> Result<Vec<PrunedIndexSet>> {
    Ok(serde_json::from_str(json)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(v: &[f32]) -> Tensor {
        Tensor::from_f32(&[v.len()], v.to_vec()).unwrap()
    }

    fn sp(s: &str) -> Sparsity {
        s.parse().unwrap()
    }

    fn prune_one(v: &[f32], p: &str) -> Vec<u32> {
        let t = single(v);
        let sets = magnitude_prune(
            &[PruneInput {
                layer_id: "w",
                values: &t,
                prunable: true,
            }],
            sp(p),
            PruneScope::PerLayer,
        )
        .unwrap();
        sets[0].indices().to_vec()
    }

    /// Sorts positions by |value| (descending, stable on index) and keeps
    /// the first k.
    fn sort_oracle(v: &[f32], k: usize) -> Vec<u32> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        for i in 1..order.len() {
            let mut j = i;
            while j > 0 && v[order[j]].abs() > v[order[j - 1]].abs() {
                order.swap(j, j - 1);
                j -= 1;
            }
        }
        let mut out: Vec<u32> = order[..k].iter().map(|&i| i as u32).collect();
        out.sort();
        out
    }

    #[test]
    fn linearize_examples() {
        assert_eq!(
            linearize(&[vec![0, 0], vec![1, 1]], &[2, 2]).unwrap(),
            vec![0, 3]
        );
        assert_eq!(linearize(&[vec![0]], &[4]).unwrap(), vec![0]);
        assert_eq!(
            linearize(&[vec![1, 2, 3]], &[2, 3, 4]).unwrap(),
            vec![12 + 2 * 4 + 3]
        );
        assert!(matches!(
            linearize(&[vec![2, 0]], &[2, 2]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn prune_examples() {
        assert_eq!(
            prune_one(&[3.0, -1.0, 0.5, -4.0], "0.5"),
            sort_oracle(&[3.0, -1.0, 0.5, -4.0], 2)
        );
        assert_eq!(prune_one(&[3.0, -1.0, 0.5, -4.0], "0.5"), vec![0, 3]);
        assert_eq!(prune_one(&[0.1, 5.0, -2.0], "0"), vec![0, 1, 2]);
        assert_eq!(prune_one(&[1.0, 1.0, 1.0, 1.0], "0.5"), vec![0, 1]);
    }

    #[test]
    fn prune_rejects_bad_sparsity() {
        let t = single(&[1.0]);
        let inp = [PruneInput {
            layer_id: "w",
            values: &t,
            prunable: true,
        }];
        assert!(matches!(
            magnitude_prune(&inp, sp("1"), PruneScope::PerLayer),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn non_prunable_layers_keep_everything() {
        let w = single(&[1.0, 2.0, 3.0, 4.0]);
        let b = single(&[0.0, 0.0]);
        let sets = magnitude_prune(
            &[
                PruneInput {
                    layer_id: "w",
                    values: &w,
                    prunable: true,
                },
                PruneInput {
                    layer_id: "b",
                    values: &b,
                    prunable: false,
                },
            ],
            sp("0.75"),
            PruneScope::PerLayer,
        )
        .unwrap();
        assert_eq!(sets[0].indices(), &[3]);
        assert_eq!(sets[1].indices(), &[0, 1]);
    }

    #[test]
    fn global_scope_shares_threshold() {
        let a = single(&[1.0, 9.0, 2.0, 3.0]);
        let b = single(&[8.0, 7.0, 0.5, 0.1]);
        let sets = magnitude_prune(
            &[
                PruneInput {
                    layer_id: "a",
                    values: &a,
                    prunable: true,
                },
                PruneInput {
                    layer_id: "b",
                    values: &b,
                    prunable: true,
                },
            ],
            sp("0.5"),
            PruneScope::Global,
        )
        .unwrap();
        assert_eq!(sets[0].indices(), &[1, 3]);
        assert_eq!(sets[1].indices(), &[0, 1]);
    }

    #[test]
    fn index_set_validation() {
        assert!(PrunedIndexSet::new("x", 4, vec![0, 0]).is_err());
        assert!(PrunedIndexSet::new("x", 4, vec![3, 1]).is_err());
        assert!(PrunedIndexSet::new("x", 4, vec![4]).is_err());
        assert!(PrunedIndexSet::new("x", 1usize << 32, vec![]).is_err());
        let bad = r#"[{"layer_id":"x","dense_len":2,"indices":[1,0]}]"#;
        assert!(read_index_sets(bad).is_err());
        let ok = r#"[{"layer_id":"x","dense_len":4,"indices":[0,3]}]"#;
        let sets = read_index_sets(ok).unwrap();
        assert_eq!(
            read_index_sets(&write_index_sets(&sets).unwrap()).unwrap(),
            sets
        );
    }

    fn delinearize_oracle(mut i: usize, shape: &[usize]) -> Vec<usize> {
        let mut c = vec![0; shape.len()];
        for d in (0..shape.len()).rev() {
            c[d] = i % shape[d];
            i /= shape[d];
        }
        c
    }

    proptest! {
        #[test]
        fn kept_count_sorted_unique(
            v in prop::collection::vec(-10.0f32..10.0, 1..64),
            pct in 0u32..100,
        ) {
            let p = format!("0.{pct:02}");
            let idx = prune_one(&v, &p);
            prop_assert_eq!(idx.len(), sp(&p).kept_count(v.len()));
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(idx, sort_oracle(&v, sp(&p).kept_count(v.len())));
        }

        #[test]
        fn positive_scaling_preserves_selection(
            v in prop::collection::vec(-10.0f32..10.0, 1..64),
            pct in 0u32..100,
            k in 1u32..8,
        ) {
            // powers of two scale exactly, so magnitudes keep their order and ties
            let factor = 2f32.powi(k as i32 - 4);
            let scaled: Vec<f32> = v.iter().map(|x| x * factor).collect();
            let p = format!("0.{pct:02}");
            prop_assert_eq!(prune_one(&v, &p), prune_one(&scaled, &p));
        }

        #[test]
        fn linearize_is_bijective(shape in prop::collection::vec(1usize..5, 1..4)) {
            let total: usize = shape.iter().product();
            for i in 0..total {
                let c = delinearize_oracle(i, &shape);
                prop_assert_eq!(linearize(&[c], &shape).unwrap(), vec![i as u32]);
            }
        }
    }
}
