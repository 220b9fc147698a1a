//! Cosine k-nearest-neighbour search over datastore keys.
//!
//! [`ExactIndex`] scans every key and serves as the reference backend.
//! [`IvfIndex`] partitions keys with seeded k-means and scans only the
//! `n_probe` cells whose centroids lie closest to the query.
//!
//! Keys are held L2-normalized in single precision; similarities are
//! accumulated in double precision. Results are ordered by similarity
//! descending, then by `(seq_id, position)` ascending.

use std::cmp::Ordering;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::{Datastore, EntryRef};
use crate::error::{Error, Result};
use crate::tensor::{read_tensors, write_tensors, Matrix, Tensor};

pub const DEFAULT_K: usize = 128;
pub const IVF_FILE: &str = "ivf.bin";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    /// Row in the datastore's entry table.
    pub entry: usize,
    pub seq_id: u32,
    pub position: u32,
    pub similarity: f64,
}

/// Normalized query in f64. A zero query stays zero, which makes every
/// similarity 0.
pub fn normalize_query(query: &[f32]) -> Vec<f64> {
    let norm = query
        .iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        vec![0.0; query.len()]
    } else {
        query.iter().map(|&x| x as f64 / norm).collect()
    }
}

#[inline]
fn dot(q: &[f64], key: &[f32]) -> f64 {
    q.iter()
        .zip(key)
        .map(|(a, &b)| a * b as f64)
        .sum::<f64>()
        .clamp(-1.0, 1.0)
}

/// Cosine similarity of two raw vectors; 0 when either has zero norm.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        (ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
    }
}

fn by_rank(a: &(f64, u32), b: &(f64, u32)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Keeps the `k` best `(similarity, entry)` pairs, sorted.
///
/// Entry indices follow `(seq_id, position)` order, so the index tie-break
/// equals the back-reference tie-break.
fn top_k(mut scored: Vec<(f64, u32)>, k: usize) -> Vec<(f64, u32)> {
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, by_rank);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_rank);
    scored
}

fn check_query(dim: usize, query: &[f32], k: usize) -> Result<()> {
    if query.len() != dim {
        return Err(Error::DimensionMismatch(format!(
            "query has dim {}, index has {dim}",
            query.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidParams("k must be at least 1".into()));
    }
    Ok(())
}

pub trait NeighborSearch: Send + Sync {
    fn dim(&self) -> usize;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>>;
}

#[derive(Debug, Clone)]
struct KeyTable {
    keys: Matrix,
    refs: Vec<EntryRef>,
}

impl KeyTable {
    fn from_datastore(ds: &Datastore) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDatastore);
        }
        Ok(Self {
            keys: ds.normalized_keys().clone(),
            refs: ds.entry_refs().to_vec(),
        })
    }

    fn neighbors(&self, ranked: Vec<(f64, u32)>) -> Vec<Neighbor> {
        ranked
            .into_iter()
            .map(|(similarity, entry)| {
                let r = self.refs[entry as usize];
                Neighbor {
                    entry: entry as usize,
                    seq_id: r.seq_id,
                    position: r.position,
                    similarity,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExactIndex {
    table: KeyTable,
}

impl ExactIndex {
    pub fn build(ds: &Datastore) -> Result<Self> {
        Ok(Self {
            table: KeyTable::from_datastore(ds)?,
        })
    }
}

impl NeighborSearch for ExactIndex {
    fn dim(&self) -> usize {
        self.table.keys.cols()
    }

    fn len(&self) -> usize {
        self.table.refs.len()
    }

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        check_query(self.dim(), query, k)?;
        let q = normalize_query(query);
        let scored = self
            .table
            .keys
            .iter_rows()
            .enumerate()
            .map(|(i, key)| (dot(&q, key), i as u32))
            .collect();
        Ok(self.table.neighbors(top_k(scored, k)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IvfParams {
    pub n_clusters: usize,
    pub n_probe: usize,
    pub kmeans_seed: u64,
    pub kmeans_iters: usize,
}

impl IvfParams {
    /// `sqrt(E)` cells, an eighth of them probed, 25 k-means iterations.
    pub fn for_entry_count(entry_count: usize, seed: u64) -> Self {
        let n_clusters = ((entry_count as f64).sqrt().floor() as usize).max(1);
        Self {
            n_clusters,
            n_probe: n_clusters.div_ceil(8).max(1),
            kmeans_seed: seed,
            kmeans_iters: 25,
        }
    }

    pub fn validate(&self, entry_count: usize) -> Result<()> {
        if !(1 <= self.n_probe && self.n_probe <= self.n_clusters && self.n_clusters <= entry_count)
        {
            return Err(Error::InvalidParams(format!(
                "need 1 <= n_probe ({}) <= n_clusters ({}) <= entry_count ({entry_count})",
                self.n_probe, self.n_clusters
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IvfIndex {
    table: KeyTable,
    params: IvfParams,
    centroids: Matrix,
    assignments: Vec<u32>,
    lists: Vec<Vec<u32>>,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

fn nearest(centroids: &Matrix, point: &[f32]) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for (c, centroid) in centroids.iter_rows().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c as u32, d);
        }
    }
    best
}

fn assign_all(centroids: &Matrix, keys: &Matrix) -> Vec<(u32, f64)> {
    (0..keys.rows())
        .into_par_iter()
        .map(|i| nearest(centroids, keys.row(i)))
        .collect()
}

/// k-means++ seeding with a seeded ChaCha stream.
fn seed_centroids(keys: &Matrix, n_clusters: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = keys.rows();
    let mut centroids = Matrix::zeros(n_clusters, keys.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(keys.row(first));
    let mut d2: Vec<f64> = keys
        .iter_rows()
        .map(|k| sq_dist(k, keys.row(first)))
        .collect();
    for c in 1..n_clusters {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(keys.row(pick));
        for (i, k) in keys.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(k, keys.row(pick)));
        }
    }
    centroids
}

fn kmeans(keys: &Matrix, params: &IvfParams) -> (Matrix, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.kmeans_seed);
    let (n, dim, c) = (keys.rows(), keys.cols(), params.n_clusters);
    let mut centroids = seed_centroids(keys, c, &mut rng);
    let mut previous: Option<Vec<u32>> = None;

    for _ in 0..params.kmeans_iters {
        let assigned = assign_all(&centroids, keys);
        let mut labels: Vec<u32> = assigned.iter().map(|a| a.0).collect();
        if previous.as_ref() == Some(&labels) {
            break;
        }

        // empty cells take the farthest member of the currently largest cell
        let mut sizes = vec![0usize; c];
        labels.iter().for_each(|&l| sizes[l as usize] += 1);
        let mut distances: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        for empty in 0..c {
            if sizes[empty] != 0 {
                continue;
            }
            let largest = (0..c)
                .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
                .unwrap();
            if sizes[largest] <= 1 {
                break;
            }
            let far = (0..n)
                .filter(|&i| labels[i] as usize == largest)
                .max_by(|&a, &b| {
                    distances[a]
                        .partial_cmp(&distances[b])
                        .unwrap_or(Ordering::Equal)
                        .then(b.cmp(&a))
                })
                .unwrap();
            labels[far] = empty as u32;
            distances[far] = 0.0;
            sizes[largest] -= 1;
            sizes[empty] = 1;
        }

        let mut sums = vec![0.0f64; c * dim];
        for (i, &l) in labels.iter().enumerate() {
            let acc = &mut sums[l as usize * dim..(l as usize + 1) * dim];
            for (a, &v) in acc.iter_mut().zip(keys.row(i)) {
                *a += v as f64;
            }
        }
        for cell in 0..c {
            if sizes[cell] == 0 {
                continue;
            }
            let inv = 1.0 / sizes[cell] as f64;
            for (dst, &s) in centroids
                .row_mut(cell)
                .iter_mut()
                .zip(&sums[cell * dim..(cell + 1) * dim])
            {
                *dst = (s * inv) as f32;
            }
        }
        previous = Some(labels);
    }

    let assignments = assign_all(&centroids, keys)
        .into_iter()
        .map(|a| a.0)
        .collect();
    (centroids, assignments)
}

fn inverted_lists(assignments: &[u32], n_clusters: usize) -> Vec<Vec<u32>> {
    let mut lists = vec![Vec::new(); n_clusters];
    for (i, &c) in assignments.iter().enumerate() {
        lists[c as usize].push(i as u32);
    }
    lists
}

impl IvfIndex {
    pub fn build(ds: &Datastore, params: IvfParams) -> Result<Self> {
        let table = KeyTable::from_datastore(ds)?;
        params.validate(table.refs.len())?;
        let (centroids, assignments) = kmeans(&table.keys, &params);
        let lists = inverted_lists(&assignments, params.n_clusters);
        Ok(Self {
            table,
            params,
            centroids,
            assignments,
            lists,
        })
    }

    pub fn params(&self) -> &IvfParams {
        &self.params
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn assignments(&self) -> &[u32] {
        &self.assignments
    }

    pub fn set_n_probe(&mut self, n_probe: usize) -> Result<()> {
        let params = IvfParams {
            n_probe,
            ..self.params
        };
        params.validate(self.table.refs.len())?;
        self.params = params;
        Ok(())
    }

    /// Searches the `n_probe` nearest cells (overriding the stored value).
    pub fn search_probed(&self, query: &[f32], k: usize, n_probe: usize) -> Result<Vec<Neighbor>> {
        check_query(self.dim(), query, k)?;
        if n_probe == 0 || n_probe > self.params.n_clusters {
            return Err(Error::InvalidParams(format!(
                "n_probe {n_probe} outside 1..={}",
                self.params.n_clusters
            )));
        }
        let q = normalize_query(query);
        let q32: Vec<f32> = q.iter().map(|&x| x as f32).collect();
        let mut cells: Vec<(f64, usize)> = self
            .centroids
            .iter_rows()
            .enumerate()
            .map(|(c, centroid)| (sq_dist(&q32, centroid), c))
            .collect();
        cells.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });

        let mut scored = Vec::new();
        for &(_, c) in cells.iter().take(n_probe) {
            for &entry in &self.lists[c] {
                scored.push((dot(&q, self.table.keys.row(entry as usize)), entry));
            }
        }
        Ok(self.table.neighbors(top_k(scored, k)))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let seed = self.params.kmeans_seed;
        let header = vec![
            self.params.n_clusters as u32,
            self.params.n_probe as u32,
            self.params.kmeans_iters as u32,
            seed as u32,
            (seed >> 32) as u32,
        ];
        write_tensors(
            dir.as_ref().join(IVF_FILE),
            &[
                Tensor::u32(vec![header.len()], header),
                self.centroids.to_tensor(),
                Tensor::u32(vec![self.assignments.len()], self.assignments.clone()),
            ],
        )
    }

    /// Loads `ivf.bin` from a datastore directory; keys come from `ds`.
    pub fn load(dir: impl AsRef<Path>, ds: &Datastore) -> Result<Self> {
        let path = dir.as_ref().join(IVF_FILE);
        let mut tensors = read_tensors(&path)?.into_iter();
        let (Some(header), Some(centroids), Some(assignments), None) = (
            tensors.next(),
            tensors.next(),
            tensors.next(),
            tensors.next(),
        ) else {
            return Err(Error::corrupt(
                &path,
                "expected header, centroids and assignments",
            ));
        };
        let h = header.into_u32()?;
        if h.len() != 5 {
            return Err(Error::corrupt(&path, "bad header"));
        }
        let params = IvfParams {
            n_clusters: h[0] as usize,
            n_probe: h[1] as usize,
            kmeans_iters: h[2] as usize,
            kmeans_seed: h[3] as u64 | ((h[4] as u64) << 32),
        };
        let centroids = centroids.into_matrix()?;
        let assignments = assignments.into_u32()?;
        let table = KeyTable::from_datastore(ds)?;
        if assignments.len() != table.refs.len()
            || centroids.rows() != params.n_clusters
            || centroids.cols() != table.keys.cols()
            || assignments.iter().any(|&a| a as usize >= params.n_clusters)
        {
            return Err(Error::corrupt(&path, "index does not match the datastore"));
        }
        params.validate(table.refs.len())?;
        let lists = inverted_lists(&assignments, params.n_clusters);
        Ok(Self {
            table,
            params,
            centroids,
            assignments,
            lists,
        })
    }
}

impl NeighborSearch for IvfIndex {
    fn dim(&self) -> usize {
        self.table.keys.cols()
    }

    fn len(&self) -> usize {
        self.table.refs.len()
    }

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        self.search_probed(query, k, self.params.n_probe)
    }
}

/// Either backend behind one type, for callers that pick at runtime.
#[derive(Debug, Clone)]
pub enum Index {
    Exact(ExactIndex),
    Ivf(IvfIndex),
}

impl Index {
    pub fn build_exact(ds: &Datastore) -> Result<Self> {
        ExactIndex::build(ds).map(Index::Exact)
    }

    pub fn build_ivf(ds: &Datastore, params: IvfParams) -> Result<Self> {
        IvfIndex::build(ds, params).map(Index::Ivf)
    }
}

impl NeighborSearch for Index {
    fn dim(&self) -> usize {
        match self {
            Index::Exact(i) => i.dim(),
            Index::Ivf(i) => i.dim(),
        }
    }

    fn len(&self) -> usize {
        match self {
            Index::Exact(i) => i.len(),
            Index::Ivf(i) => i.len(),
        }
    }

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>> {
        match self {
            Index::Exact(i) => i.search(query, k),
            Index::Ivf(i) => i.search(query, k),
        }
    }
}
