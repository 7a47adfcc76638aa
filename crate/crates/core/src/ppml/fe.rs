//! Fixed-effect dimensions, group indexing and within transformations.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::panel::{Observation, TradePanel};

/// How an observation maps to a group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeKind {
    ExporterYear,
    ImporterYear,
    Pair,
    Custom(String),
}

impl FeKind {
    pub fn name(&self) -> &str {
        match self {
            FeKind::ExporterYear => "exporter_year",
            FeKind::ImporterYear => "importer_year",
            FeKind::Pair => "pair",
            FeKind::Custom(name) => name,
        }
    }

    /// Group key of an observation; `None` for custom dimensions, whose keys
    /// are supplied explicitly.
    pub fn key(&self, obs: &Observation) -> Option<String> {
        match self {
            FeKind::ExporterYear => Some(format!("{}|{}", obs.exporter, obs.year)),
            FeKind::ImporterYear => Some(format!("{}|{}", obs.importer, obs.year)),
            FeKind::Pair => Some(format!("{}|{}", obs.exporter, obs.importer)),
            FeKind::Custom(_) => None,
        }
    }
}

/// One fixed-effect dimension with its per-observation group keys.
#[derive(Debug, Clone, PartialEq)]
pub struct FeDimension {
    pub name: String,
    pub kind: FeKind,
    keys: Vec<String>,
}

impl FeDimension {
    pub fn from_panel(kind: FeKind, panel: &TradePanel) -> Self {
        let keys = panel
            .observations()
            .iter()
            .map(|o| kind.key(o).expect("custom dimensions need explicit keys"))
            .collect();
        Self {
            name: kind.name().to_string(),
            kind,
            keys,
        }
    }

    pub fn custom(name: impl Into<String>, keys: Vec<String>) -> Self {
        let name = name.into();
        Self {
            kind: FeKind::Custom(name.clone()),
            name,
            keys,
        }
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Dense group ids over a subset of rows (positions within that subset).
#[derive(Debug, Clone)]
pub(crate) struct GroupIndex {
    pub ids: Vec<u32>,
    pub keys: Vec<String>,
}

impl GroupIndex {
    pub fn build(dim: &FeDimension, rows: &[usize]) -> Self {
        let mut lookup: HashMap<&str, u32> = HashMap::new();
        let mut keys = Vec::new();
        let ids = rows
            .iter()
            .map(|&r| {
                let key = dim.keys[r].as_str();
                *lookup.entry(key).or_insert_with(|| {
                    keys.push(key.to_string());
                    (keys.len() - 1) as u32
                })
            })
            .collect();
        Self { ids, keys }
    }

    pub fn n_groups(&self) -> usize {
        self.keys.len()
    }
}

/// Subtracts weighted group means dimension by dimension (Gauss-Seidel)
/// until the largest mean removed in a sweep is below `tol`.
///
/// Returns the number of sweeps used by the slowest column and the largest
/// remaining mean across columns.
pub(crate) fn demean(
    cols: &mut [Vec<f64>],
    weights: &[f64],
    groups: &[GroupIndex],
    tol: f64,
    max_sweeps: usize,
) -> (usize, f64) {
    if groups.is_empty() || cols.is_empty() {
        return (0, 0.0);
    }
    let inv_w: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let mut s = vec![0.0; g.n_groups()];
            for (&id, &w) in g.ids.iter().zip(weights) {
                s[id as usize] += w;
            }
            s.into_iter().map(|v| if v > 0.0 { 1.0 / v } else { 0.0 }).collect()
        })
        .collect();

    let results: Vec<(usize, f64)> = cols
        .par_iter_mut()
        .map(|col| demean_one(col, weights, groups, &inv_w, tol, max_sweeps))
        .collect();
    results
        .into_iter()
        .fold((0, 0.0), |(s, m), (s1, m1)| (s.max(s1), m.max(m1)))
}

fn demean_one(
    v: &mut [f64],
    weights: &[f64],
    groups: &[GroupIndex],
    inv_w: &[Vec<f64>],
    tol: f64,
    max_sweeps: usize,
) -> (usize, f64) {
    let mut sums: Vec<Vec<f64>> = groups.iter().map(|g| vec![0.0; g.n_groups()]).collect();
    let mut largest = f64::INFINITY;
    let mut sweep = 0;
    while sweep < max_sweeps {
        sweep += 1;
        largest = 0.0;
        for ((g, iw), s) in groups.iter().zip(inv_w).zip(sums.iter_mut()) {
            s.iter_mut().for_each(|x| *x = 0.0);
            for ((&id, &w), &x) in g.ids.iter().zip(weights).zip(v.iter()) {
                s[id as usize] += w * x;
            }
            for (m, &iw) in s.iter_mut().zip(iw) {
                *m *= iw;
                largest = f64::max(largest, m.abs());
            }
            for (&id, x) in g.ids.iter().zip(v.iter_mut()) {
                *x -= s[id as usize];
            }
        }
        // A single dimension is exact after one pass.
        if largest < tol || groups.len() == 1 {
            if groups.len() == 1 {
                largest = 0.0;
            }
            break;
        }
    }
    (sweep, largest)
}

/// Union-find over the groups of all dimensions, linked through shared
/// observations. Returns the component label of every group of every
/// dimension and the number of components.
pub(crate) fn connected_components(groups: &[GroupIndex]) -> (Vec<Vec<usize>>, usize) {
    let offsets: Vec<usize> = groups
        .iter()
        .scan(0, |acc, g| {
            let o = *acc;
            *acc += g.n_groups();
            Some(o)
        })
        .collect();
    let total: usize = groups.iter().map(|g| g.n_groups()).sum();
    let mut parent: Vec<usize> = (0..total).collect();

    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    if let Some(first) = groups.first() {
        for (d, g) in groups.iter().enumerate().skip(1) {
            for (&a, &b) in first.ids.iter().zip(&g.ids) {
                let ra = find(&mut parent, a as usize);
                let rb = find(&mut parent, offsets[d] + b as usize);
                if ra != rb {
                    parent[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }

    let mut label_of_root = HashMap::new();
    let mut labels = Vec::with_capacity(groups.len());
    for (d, g) in groups.iter().enumerate() {
        let mut l = Vec::with_capacity(g.n_groups());
        for k in 0..g.n_groups() {
            let root = find(&mut parent, offsets[d] + k);
            let next = label_of_root.len();
            l.push(*label_of_root.entry(root).or_insert(next));
        }
        labels.push(l);
    }
    let n = label_of_root.len();
    (labels, n)
}
