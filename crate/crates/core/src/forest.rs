//! CART decision trees bagged into a random forest.
//!
//! Trees are grown on bootstrap samples with Gini splits over a random subset
//! of candidate features per node. Split quality is compared with exact
//! integer arithmetic, so split choice and tie-breaking (lowest feature index,
//! then lowest threshold) never depend on rounding.

use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub features_per_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 30,
            min_leaf: 5,
            features_per_split: 6,
            seed: 0,
        }
    }
}

impl ForestConfig {
    /// `ceil(sqrt(width))`, the usual candidate count for classification.
    pub fn sqrt_features(width: usize) -> usize {
        (width as f64).sqrt().ceil() as usize
    }

    fn validate(&self, width: usize) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 || self.min_leaf == 0 {
            return Err(Error::Invalid("n_trees, max_depth and min_leaf must be positive".into()));
        }
        if self.features_per_split == 0 || self.features_per_split > width {
            return Err(Error::Invalid(format!(
                "features_per_split {} must be in 1..={width}",
                self.features_per_split
            )));
        }
        Ok(())
    }
}

/// Dense row-major matrix of feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if n_cols == 0 || data.len() % n_cols != 0 {
            return Err(Error::Invalid(format!(
                "{} values do not form rows of width {n_cols}",
                data.len()
            )));
        }
        Ok(FeatureMatrix {
            n_rows: data.len() / n_cols,
            n_cols,
            data,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != n_cols {
                return Err(Error::WidthMismatch {
                    expected: n_cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(n_cols, data)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.n_cols + col] = v;
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, col)).collect()
    }

    /// New matrix holding the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            data,
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFinite {
                row: i / self.n_cols,
                col: i % self.n_cols,
            }),
            None => Ok(()),
        }
    }
}

/// Anything that maps a feature row to a probability-like score.
pub trait Scorer: Sync {
    fn width(&self) -> usize;
    /// Score of a row whose width has already been checked.
    fn score_row(&self, x: &[f64]) -> f64;

    fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.width() {
            return Err(Error::WidthMismatch {
                expected: self.width(),
                got: x.len(),
            });
        }
        Ok(self.score_row(x))
    }

    fn score_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.width() {
            return Err(Error::WidthMismatch {
                expected: self.width(),
                got: x.n_cols(),
            });
        }
        let mut out = vec![0.0; x.n_rows()];
        out.par_chunks_mut(SCORE_BLOCK).enumerate().for_each(|(b, chunk)| {
            let start = b * SCORE_BLOCK;
            self.score_block(x, start..start + chunk.len(), chunk);
        });
        Ok(out)
    }

    /// Scores `rows` of `x` into `out`; must agree bit for bit with
    /// [`Scorer::score_row`]. Implementations may reorder work across rows
    /// for cache locality but not the arithmetic within a row.
    fn score_block(&self, x: &FeatureMatrix, rows: Range<usize>, out: &mut [f64]) {
        for (o, i) in out.iter_mut().zip(rows) {
            *o = self.score_row(x.row(i));
        }
    }
}

/// Rows scored together so that one tree stays in cache across the block.
const SCORE_BLOCK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        positive_fraction: f64,
        sample_count: usize,
    },
}

/// A fitted tree; node 0 is the root. Rows with `value <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf(positive_fraction: f64, sample_count: usize) -> Tree {
        Tree {
            nodes: vec![TreeNode::Leaf {
                positive_fraction,
                sample_count,
            }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
                TreeNode::Leaf { positive_fraction, .. } => return positive_fraction,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Internal { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
                TreeNode::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub config: ForestConfig,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// Assembles a forest from already-built trees.
    pub fn from_trees(config: ForestConfig, feature_names: Vec<String>, trees: Vec<Tree>) -> Result<Forest> {
        if trees.is_empty() {
            return Err(Error::Empty("trees"));
        }
        Ok(Forest {
            config,
            feature_names,
            trees,
        })
    }

    /// Mean leaf positive fraction across trees.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.score(x)
    }
}

impl Scorer for Forest {
    fn width(&self) -> usize {
        self.feature_names.len()
    }

    fn score_row(&self, x: &[f64]) -> f64 {
        self.trees.iter().fold(0.0, |acc, t| acc + t.predict(x)) / self.trees.len() as f64
    }

    fn score_block(&self, x: &FeatureMatrix, rows: Range<usize>, out: &mut [f64]) {
        out.fill(0.0);
        for t in &self.trees {
            for (o, i) in out.iter_mut().zip(rows.clone()) {
                *o += t.predict(x.row(i));
            }
        }
        let n = self.trees.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
    }
}

fn default_names(width: usize) -> Vec<String> {
    (0..width).map(|i| format!("x{i}")).collect()
}

/// Fits a forest on all rows of `x`. Feature names default to `x0, x1, ...`.
pub fn fit_forest(x: &FeatureMatrix, y: &[bool], cfg: &ForestConfig) -> Result<Forest> {
    if y.len() != x.n_rows() {
        return Err(Error::Invalid(format!("{} labels for {} rows", y.len(), x.n_rows())));
    }
    x.check_finite()?;
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    fit_forest_rows(x, &rows, y, cfg)
}

/// Fits a forest on the listed rows of `x`, with `labels[i]` for `rows[i]`.
/// Row order is part of the determinism contract: bootstrap draws index into
/// `rows` as given.
pub fn fit_forest_rows(x: &FeatureMatrix, rows: &[usize], labels: &[bool], cfg: &ForestConfig) -> Result<Forest> {
    cfg.validate(x.n_cols())?;
    if rows.len() != labels.len() {
        return Err(Error::Invalid(format!("{} labels for {} rows", labels.len(), rows.len())));
    }
    let needed = 2 * cfg.min_leaf;
    if rows.len() < needed {
        return Err(Error::TooFewRows {
            needed,
            got: rows.len(),
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::SingleClass);
    }
    for &r in rows {
        if let Some(c) = x.row(r).iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: r, col: c });
        }
    }
    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::derived_rng(cfg.seed, "tree", t as u64);
            grow_tree(x, rows, labels, cfg, &mut rng)
        })
        .collect();
    Ok(Forest {
        config: *cfg,
        feature_names: default_names(x.n_cols()),
        trees,
    })
}

/// Sum of squared class counts over node size, as an exact fraction. Larger
/// means purer; a split improves Gini impurity iff the children's summed
/// score exceeds the parent's.
#[derive(Clone, Copy)]
struct Purity {
    num: u128,
    den: u128,
}

impl Purity {
    fn node(pos: u64, n: u64) -> Purity {
        let neg = n - pos;
        Purity {
            num: u128::from(pos * pos + neg * neg),
            den: u128::from(n),
        }
    }

    fn split(lp: u64, ln: u64, rp: u64, rn: u64) -> Purity {
        let (nl, nr) = (u128::from(lp + ln), u128::from(rp + rn));
        let a = u128::from(lp * lp + ln * ln);
        let b = u128::from(rp * rp + rn * rn);
        Purity {
            num: a * nr + b * nl,
            den: nl * nr,
        }
    }

    fn gt(self, other: Purity) -> bool {
        self.num * other.den > other.num * self.den
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    purity: Purity,
}

fn grow_tree(x: &FeatureMatrix, rows: &[usize], labels: &[bool], cfg: &ForestConfig, rng: &mut ChaCha8Rng) -> Tree {
    let n = rows.len();
    let width = x.n_cols();
    let mut sample_rows = Vec::with_capacity(n);
    let mut sample_y = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.random_range(0..n);
        sample_rows.push(rows[i]);
        sample_y.push(labels[i]);
    }
    // Bootstrap may draw a single class even when the input has both; the
    // root then becomes a leaf.
    let mut nodes = vec![TreeNode::Leaf {
        positive_fraction: 0.0,
        sample_count: 0,
    }];
    let mut stack = vec![(0usize, 0usize, n, 0usize)];
    let mut buf: Vec<(f64, bool)> = Vec::with_capacity(n);
    let min_leaf = cfg.min_leaf as u64;

    while let Some((id, start, end, depth)) = stack.pop() {
        let size = (end - start) as u64;
        let pos = sample_y[start..end].iter().filter(|&&y| y).count() as u64;
        let leaf = TreeNode::Leaf {
            positive_fraction: pos as f64 / size as f64,
            sample_count: size as usize,
        };
        if depth >= cfg.max_depth || size < 2 * min_leaf || pos == 0 || pos == size {
            nodes[id] = leaf;
            continue;
        }
        let mut candidates = index::sample(rng, width, cfg.features_per_split).into_vec();
        candidates.sort_unstable();

        let parent = Purity::node(pos, size);
        let mut best: Option<Split> = None;
        for &f in &candidates {
            buf.clear();
            buf.extend((start..end).map(|s| (x.get(sample_rows[s], f), sample_y[s])));
            buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
            let (mut lp, mut ln) = (0u64, 0u64);
            for i in 0..buf.len() - 1 {
                if buf[i].1 {
                    lp += 1;
                } else {
                    ln += 1;
                }
                let nl = lp + ln;
                if nl < min_leaf {
                    continue;
                }
                if size - nl < min_leaf {
                    break;
                }
                let (lo, hi) = (buf[i].0, buf[i + 1].0);
                if lo == hi {
                    continue;
                }
                let purity = Purity::split(lp, ln, pos - lp, size - pos - ln);
                if best.as_ref().is_none_or(|b| purity.gt(b.purity)) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(Split {
                        feature: f,
                        threshold,
                        purity,
                    });
                }
            }
        }
        let Some(split) = best.filter(|b| b.purity.gt(parent)) else {
            nodes[id] = leaf;
            continue;
        };

        // Partition [start, end) so rows going left come first.
        let mut mid = start;
        for s in start..end {
            if x.get(sample_rows[s], split.feature) <= split.threshold {
                sample_rows.swap(mid, s);
                sample_y.swap(mid, s);
                mid += 1;
            }
        }
        let left = nodes.len();
        let right = left + 1;
        nodes.push(leaf);
        nodes.push(leaf);
        nodes[id] = TreeNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        stack.push((right, mid, end, depth + 1));
        stack.push((left, start, mid, depth + 1));
    }
    Tree { nodes }
}

// ---------------------------------------------------------------------------
// Binary encoding
//
// Layout (little endian): magic, u32 format version, u32 header length,
// header JSON, then the tree arrays. Each tree is a u32 node count followed
// by nodes: tag 0 = internal (u32 feature, f64 threshold, u32 left,
// u32 right), tag 1 = leaf (f64 positive fraction, u64 sample count).

pub(crate) mod codec {
    use crate::error::{Error, Result};

    pub fn put_u32(out: &mut Vec<u8>, v: u32) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(out: &mut Vec<u8>, v: u64) {
        out.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64(out: &mut Vec<u8>, v: f64) {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    pub struct Reader<'a> {
        buf: &'a [u8],
    }

    impl<'a> Reader<'a> {
        pub fn new(buf: &'a [u8]) -> Self {
            Reader { buf }
        }

        pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
            if self.buf.len() < n {
                return Err(Error::ModelFormat("truncated file".into()));
            }
            let (head, tail) = self.buf.split_at(n);
            self.buf = tail;
            Ok(head)
        }

        pub fn u8(&mut self) -> Result<u8> {
            Ok(self.take(1)?[0])
        }

        pub fn u32(&mut self) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
        }

        pub fn u64(&mut self) -> Result<u64> {
            Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
        }

        pub fn f64(&mut self) -> Result<f64> {
            Ok(f64::from_bits(self.u64()?))
        }

        pub fn finish(&self) -> Result<()> {
            if self.buf.is_empty() {
                Ok(())
            } else {
                Err(Error::ModelFormat(format!("{} trailing bytes", self.buf.len())))
            }
        }
    }

    /// Writes magic, version and a JSON header.
    pub fn put_header<T: serde::Serialize>(out: &mut Vec<u8>, magic: &[u8; 8], version: u32, header: &T) -> Result<()> {
        out.extend_from_slice(magic);
        put_u32(out, version);
        let json = serde_json::to_vec(header)?;
        put_u32(out, json.len() as u32);
        out.extend_from_slice(&json);
        Ok(())
    }

    pub fn get_header<T: serde::de::DeserializeOwned>(r: &mut Reader<'_>, magic: &[u8; 8], version: u32) -> Result<T> {
        if r.take(8)? != magic {
            return Err(Error::ModelFormat("bad magic".into()));
        }
        let v = r.u32()?;
        if v != version {
            return Err(Error::ModelFormat(format!("unsupported format version {v}")));
        }
        let len = r.u32()? as usize;
        Ok(serde_json::from_slice(r.take(len)?)?)
    }
}

pub(crate) fn encode_trees(out: &mut Vec<u8>, trees: &[Tree]) {
    codec::put_u32(out, trees.len() as u32);
    for t in trees {
        codec::put_u32(out, t.nodes.len() as u32);
        for node in &t.nodes {
            match *node {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(0);
                    codec::put_u32(out, feature as u32);
                    codec::put_f64(out, threshold);
                    codec::put_u32(out, left as u32);
                    codec::put_u32(out, right as u32);
                }
                TreeNode::Leaf {
                    positive_fraction,
                    sample_count,
                } => {
                    out.push(1);
                    codec::put_f64(out, positive_fraction);
                    codec::put_u64(out, sample_count as u64);
                }
            }
        }
    }
}

pub(crate) fn decode_trees(r: &mut codec::Reader<'_>, width: usize) -> Result<Vec<Tree>> {
    let n_trees = r.u32()? as usize;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let node = match r.u8()? {
                0 => TreeNode::Internal {
                    feature: r.u32()? as usize,
                    threshold: r.f64()?,
                    left: r.u32()? as usize,
                    right: r.u32()? as usize,
                },
                1 => TreeNode::Leaf {
                    positive_fraction: r.f64()?,
                    sample_count: r.u64()? as usize,
                },
                tag => return Err(Error::ModelFormat(format!("unknown node tag {tag}"))),
            };
            nodes.push(node);
        }
        for node in &nodes {
            if let TreeNode::Internal {
                feature, left, right, ..
            } = *node
            {
                if feature >= width || left >= n_nodes || right >= n_nodes {
                    return Err(Error::ModelFormat("node reference out of range".into()));
                }
            }
        }
        if nodes.is_empty() {
            return Err(Error::ModelFormat("empty tree".into()));
        }
        trees.push(Tree { nodes });
    }
    Ok(trees)
}

const FOREST_MAGIC: &[u8; 8] = b"PUSCRFOR";
const FOREST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ForestHeader {
    config: ForestConfig,
    feature_names: Vec<String>,
}

impl Forest {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        let header = ForestHeader {
            config: self.config,
            feature_names: self.feature_names.clone(),
        };
        codec::put_header(&mut out, FOREST_MAGIC, FOREST_VERSION, &header)?;
        encode_trees(&mut out, &self.trees);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Forest> {
        let mut r = codec::Reader::new(bytes);
        let header: ForestHeader = codec::get_header(&mut r, FOREST_MAGIC, FOREST_VERSION)?;
        let trees = decode_trees(&mut r, header.feature_names.len())?;
        r.finish()?;
        Forest::from_trees(header.config, header.feature_names, trees)
    }
}
