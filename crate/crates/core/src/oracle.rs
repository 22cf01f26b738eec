//! Population-level ground truth: extreme rows of a matrix, and the novel
//! words they reveal in the limiting co-occurrence statistic.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::conditions::{dist_to_hull, is_simplicial, SIMPLICIAL_TOL};
use crate::error::{Error, Result};
use crate::model::{population_cooc, NovelWordSets, PriorModel, TopicMatrix};

/// Duplicate and hull tolerance used on population matrices.
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremeRowReport {
    /// Sorted indices of extreme rows.
    pub extreme: Vec<usize>,
    /// Rows partitioned into near-equality classes, each sorted, ordered by
    /// smallest member.
    pub duplicate_groups: Vec<Vec<usize>>,
    /// Per row, the distance of its class representative to the hull of all
    /// rows outside the class. Infinite when there is only one class.
    pub margins: Vec<f64>,
}

impl ExtremeRowReport {
    /// Duplicate classes whose members are extreme.
    pub fn extreme_groups(&self) -> Vec<Vec<usize>> {
        self.duplicate_groups
            .iter()
            .filter(|g| self.extreme.binary_search(&g[0]).is_ok())
            .cloned()
            .collect()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Partition of rows whose pairwise distance is at most `tol`, closed
/// transitively.
pub fn duplicate_classes(rows: &[Vec<f64>], tol: f64) -> Vec<Vec<usize>> {
    let n = rows.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2.sqrt() <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// Rows of `a` that are extreme points of the convex hull of all rows,
/// treating near-duplicate rows as one point.
pub fn extreme_rows(a: &DMatrix<f64>, tol: f64) -> Result<ExtremeRowReport> {
    if a.nrows() == 0 {
        return Err(Error::InvalidInput("matrix has no rows".into()));
    }
    let rows: Vec<Vec<f64>> = a.row_iter().map(|r| r.iter().copied().collect()).collect();
    let groups = duplicate_classes(&rows, tol);
    let mut class_of = vec![0; rows.len()];
    for (g, members) in groups.iter().enumerate() {
        for &i in members {
            class_of[i] = g;
        }
    }
    let class_margin: Vec<f64> = groups
        .par_iter()
        .enumerate()
        .map(|(g, members)| {
            let others: Vec<&[f64]> = (0..rows.len())
                .filter(|&j| class_of[j] != g)
                .map(|j| rows[j].as_slice())
                .collect();
            if others.is_empty() {
                return Ok(f64::INFINITY);
            }
            dist_to_hull(&rows[members[0]], &others).map(|h| h.distance)
        })
        .collect::<Result<_>>()?;

    let margins: Vec<f64> = class_of.iter().map(|&g| class_margin[g]).collect();
    let extreme = (0..rows.len()).filter(|&i| margins[i] > tol).collect();
    Ok(ExtremeRowReport {
        extreme,
        duplicate_groups: groups,
        margins,
    })
}

/// Novel word groups recovered from the extreme rows of the population
/// co-occurrence matrix. Groups are returned in order of smallest member,
/// so they match the true groups only up to topic permutation.
pub fn oracle_novel_words(beta: &TopicMatrix, prior: &PriorModel, tol: f64) -> Result<NovelWordSets> {
    let rp = prior.normalized_correlation();
    let report = is_simplicial(&rp, SIMPLICIAL_TOL)?;
    if !report.is_simplicial {
        return Err(Error::NotSimplicial {
            gamma: report.gamma_hat,
            row: report.violating_row.unwrap_or(0),
        });
    }
    let c = population_cooc(beta, prior)?;
    let ext = extreme_rows(&c, tol)?;
    Ok(NovelWordSets {
        groups: ext.extreme_groups(),
    })
}
