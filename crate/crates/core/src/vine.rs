//! Regular vine copulas: structures, structure selection, densities,
//! simulation and the Rosenblatt transform.
//!
//! A structure on `d` variables is stored as a lower-triangular matrix in
//! column form. Column `c` (for `c < d - 1`) starts with its diagonal
//! variable `a`; the entry `t` rows from the bottom is the partner of `a` in
//! tree `t`, and the entries below it are the conditioning set of that edge.
//! The pair copula of an edge is oriented so that its first argument is the
//! conditional distribution of the diagonal variable.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::marginals::{MarginalModel, PreparedMargin};
use crate::numeric::{effective_size, weighted_kendall_tau};
use crate::paircop::{self, CopulaFamily, CopulaFitOptions, PairCopula, UCLIP};
use crate::{Error, Result};

fn clip(u: f64) -> f64 {
    u.clamp(UCLIP, 1.0 - UCLIP)
}

/// Where the second argument of an edge in tree `t >= 1` comes from: an
/// h-function output of an edge in tree `t - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    /// distribution of the diagonal variable of that column
    Direct(usize),
    /// distribution of the partner variable of that column
    Indirect(usize),
}

/// Kind of vine produced by structure selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VineKind {
    Rvine,
    Cvine,
}

impl std::fmt::Display for VineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VineKind::Rvine => "rvine",
            VineKind::Cvine => "cvine",
        })
    }
}

impl std::str::FromStr for VineKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rvine" | "r" => Ok(VineKind::Rvine),
            "cvine" | "c" => Ok(VineKind::Cvine),
            other => Err(Error::InvalidParameter(format!("unknown vine kind `{other}`"))),
        }
    }
}

/// One edge of a vine, by variable index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub tree: usize,
    pub conditioned: [usize; 2],
    pub conditioning: Vec<usize>,
}

/// A validated R-vine structure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RVineStructure {
    d: usize,
    cols: Vec<Vec<usize>>,
    sources: Vec<Vec<Source>>,
    needs_indirect: Vec<Vec<bool>>,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

impl RVineStructure {
    /// Builds a structure from matrix columns: `cols[c]` lists column `c`
    /// from the diagonal down, so it has `d - c` entries.
    pub fn from_columns(cols: Vec<Vec<usize>>) -> Result<Self> {
        let d = cols.len();
        let bad = |m: String| Err(Error::Document(format!("invalid vine structure: {m}")));
        if d == 0 {
            return bad("no variables".into());
        }
        for (c, col) in cols.iter().enumerate() {
            if col.len() != d - c {
                return bad(format!("column {c} has {} entries, expected {}", col.len(), d - c));
            }
            if col.iter().any(|&v| v >= d) {
                return bad(format!("column {c} refers to a variable outside 0..{d}"));
            }
        }
        let diag: Vec<usize> = cols.iter().map(|c| c[0]).collect();
        if diag.iter().collect::<BTreeSet<_>>().len() != d {
            return bad("diagonal is not a permutation".into());
        }
        for (c, col) in cols.iter().enumerate() {
            let later: BTreeSet<usize> = diag[c + 1..].iter().copied().collect();
            let rest: BTreeSet<usize> = col[1..].iter().copied().collect();
            if rest.len() != col.len() - 1 || rest != later {
                return bad(format!("column {c} must list every later diagonal variable once"));
            }
        }
        let mut s = RVineStructure { d, cols, sources: Vec::new(), needs_indirect: Vec::new() };
        s.sources = vec![Vec::new(); d.saturating_sub(1)];
        s.needs_indirect = (0..d.saturating_sub(1)).map(|t| vec![false; d - 1 - t]).collect();

        // tree 1 must be a spanning tree on the variables
        let mut uf = UnionFind::new(d);
        for c in 0..d.saturating_sub(1) {
            if !uf.union(s.diag(c), s.partner(0, c)) {
                return bad("first tree contains a cycle".into());
            }
        }
        for t in 1..d.saturating_sub(1) {
            let mut uf = UnionFind::new(d - t);
            for c in 0..d - 1 - t {
                let p = s.partner(t, c);
                let mut target: BTreeSet<usize> = s.conditioning(t, c).iter().copied().collect();
                target.insert(p);
                let mut found = None;
                for c2 in c + 1..d - t {
                    let (a2, p2) = (s.diag(c2), s.partner(t - 1, c2));
                    let mut set: BTreeSet<usize> = s.conditioning(t - 1, c2).iter().copied().collect();
                    set.insert(a2);
                    set.insert(p2);
                    if set == target {
                        found = Some(if a2 == p { Source::Direct(c2) } else { Source::Indirect(c2) });
                        break;
                    }
                }
                let Some(src) = found else {
                    return bad(format!("edge in tree {} column {c} violates the proximity condition", t + 1));
                };
                let c2 = match src {
                    Source::Direct(c2) => c2,
                    Source::Indirect(c2) => {
                        s.needs_indirect[t - 1][c2] = true;
                        c2
                    }
                };
                if !uf.union(c, c2) {
                    return bad(format!("tree {} contains a cycle", t + 1));
                }
                s.sources[t].push(src);
            }
        }
        Ok(s)
    }

    /// Canonical vine with the given root order: tree `t` is a star centred
    /// on `order[t]`.
    pub fn cvine(order: &[usize]) -> Result<Self> {
        let d = order.len();
        Self::from_columns((0..d).map(|c| (0..d - c).map(|k| order[d - 1 - c - k]).collect()).collect())
    }

    /// Drawable vine (path in the first tree) along `order`.
    pub fn dvine(order: &[usize]) -> Result<Self> {
        let d = order.len();
        Self::from_columns(
            (0..d)
                .map(|c| std::iter::once(order[c]).chain((c + 1..d).rev().map(|i| order[i])).collect())
                .collect(),
        )
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    /// Diagonal variable of column `c`.
    pub fn diag(&self, c: usize) -> usize {
        self.cols[c][0]
    }

    /// Partner of the diagonal variable of column `c` in tree `t` (0-based).
    pub fn partner(&self, t: usize, c: usize) -> usize {
        self.cols[c][self.d - 1 - t - c]
    }

    /// Conditioning set of the edge in tree `t`, column `c`.
    pub fn conditioning(&self, t: usize, c: usize) -> &[usize] {
        &self.cols[c][self.d - t - c..]
    }

    pub fn columns(&self) -> &[Vec<usize>] {
        &self.cols
    }

    /// Lower-triangular matrix by rows: row `r` holds columns `0..=r`.
    pub fn matrix_rows(&self) -> Vec<Vec<usize>> {
        (0..self.d).map(|r| (0..=r).map(|c| self.cols[c][r - c]).collect()).collect()
    }

    pub fn from_matrix_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let d = rows.len();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != r + 1 {
                return Err(Error::Document(format!("structure row {r} has {} entries, expected {}", row.len(), r + 1)));
            }
        }
        Self::from_columns((0..d).map(|c| (c..d).map(|r| rows[r][c]).collect()).collect())
    }

    pub fn edge_count(&self) -> usize {
        self.d * self.d.saturating_sub(1) / 2
    }

    pub fn edge(&self, t: usize, c: usize) -> Edge {
        let mut conditioning = self.conditioning(t, c).to_vec();
        conditioning.sort_unstable();
        Edge { tree: t, conditioned: [self.diag(c), self.partner(t, c)], conditioning }
    }

    /// All edges, tree by tree.
    pub fn edges(&self) -> Vec<Edge> {
        (0..self.d.saturating_sub(1)).flat_map(|t| (0..self.d - 1 - t).map(move |c| self.edge(t, c))).collect()
    }

    fn second_arg<'a>(&self, t: usize, c: usize, prev: &'a [(Vec<f64>, Vec<f64>)], u: &'a [Vec<f64>]) -> &'a [f64] {
        if t == 0 {
            &u[self.partner(0, c)]
        } else {
            match self.sources[t][c] {
                Source::Direct(c2) => &prev[c2].0,
                Source::Indirect(c2) => &prev[c2].1,
            }
        }
    }
}

/// A vine copula: structure plus one pair copula per edge, indexed
/// `[tree][column]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VineCopula {
    structure: RVineStructure,
    pcs: Vec<Vec<PairCopula>>,
}

/// Per-tree callback of [`VineCopula::walk`]: receives the tree index, the
/// argument pairs of every edge of that tree and the (mutable) pair copulas.
type TreeVisitor<'v> = dyn FnMut(usize, &[(&[f64], &[f64])], &mut [PairCopula]) -> Result<()> + 'v;

impl VineCopula {
    pub fn new(structure: RVineStructure, pcs: Vec<Vec<PairCopula>>) -> Result<Self> {
        let d = structure.dimension();
        if pcs.len() != d.saturating_sub(1) {
            return Err(Error::DimensionMismatch { expected: d.saturating_sub(1), got: pcs.len() });
        }
        for (t, tree) in pcs.iter().enumerate() {
            if tree.len() != d - 1 - t {
                return Err(Error::DimensionMismatch { expected: d - 1 - t, got: tree.len() });
            }
            for pc in tree {
                pc.validate()?;
            }
        }
        Ok(VineCopula { structure, pcs })
    }

    pub fn independence(d: usize) -> Self {
        let order: Vec<usize> = (0..d).collect();
        let structure = RVineStructure::cvine(&order).expect("canonical order is valid");
        let pcs = (0..d.saturating_sub(1)).map(|t| vec![PairCopula::independence(); d - 1 - t]).collect();
        VineCopula { structure, pcs }
    }

    /// Assembles a vine from edge lists. Each entry of `trees[t]` is
    /// `(a, b, conditioning, copula)` where the copula's first argument is
    /// the distribution of `a`.
    pub fn from_edges(d: usize, trees: Vec<Vec<(usize, usize, Vec<usize>, PairCopula)>>) -> Result<Self> {
        if d == 1 {
            return Ok(VineCopula::independence(1));
        }
        if trees.len() != d - 1 || trees.iter().enumerate().any(|(t, e)| e.len() != d - 1 - t) {
            return Err(Error::Document(format!("a vine on {d} variables needs trees of sizes {}..1", d - 1)));
        }
        let mut used: Vec<Vec<bool>> = trees.iter().map(|t| vec![false; t.len()]).collect();
        let mut cols: Vec<Vec<usize>> = Vec::with_capacity(d);
        let mut pcs: Vec<Vec<PairCopula>> = (0..d - 1).map(|t| Vec::with_capacity(d - 1 - t)).collect();
        for c in 0..d - 1 {
            let top = d - 2 - c;
            let idx = (0..trees[top].len()).find(|&i| !used[top][i]).expect("one edge left in the top tree");
            let a = trees[top][idx].0;
            let mut col = vec![0usize; d - c];
            col[0] = a;
            for t in (0..=top).rev() {
                let hits: Vec<usize> = (0..trees[t].len())
                    .filter(|&i| !used[t][i] && (trees[t][i].0 == a || trees[t][i].1 == a))
                    .collect();
                if hits.len() != 1 {
                    return Err(Error::Document(format!("edge lists do not form a regular vine (tree {})", t + 1)));
                }
                let (ea, eb, _, pc) = &trees[t][hits[0]];
                used[t][hits[0]] = true;
                let (partner, pc) = if *ea == a { (*eb, *pc) } else { (*ea, pc.transposed()) };
                col[d - 1 - t - c] = partner;
                pcs[t].push(pc);
            }
            cols.push(col);
        }
        let last = (0..d).find(|v| !cols.iter().any(|c| c[0] == *v)).expect("one variable left");
        cols.push(vec![last]);
        let structure = RVineStructure::from_columns(cols)?;
        for (t, tree) in trees.iter().enumerate() {
            for (a, b, cond, _) in tree {
                let mut cond = cond.clone();
                cond.sort_unstable();
                let found = (0..d - 1 - t).any(|c| {
                    let e = structure.edge(t, c);
                    e.conditioning == cond && (e.conditioned == [*a, *b] || e.conditioned == [*b, *a])
                });
                if !found {
                    return Err(Error::Document(format!(
                        "edge {a},{b}|{cond:?} is inconsistent with the other edges"
                    )));
                }
            }
        }
        VineCopula::new(structure, pcs)
    }

    pub fn structure(&self) -> &RVineStructure {
        &self.structure
    }

    pub fn dimension(&self) -> usize {
        self.structure.dimension()
    }

    pub fn pair_copula(&self, t: usize, c: usize) -> &PairCopula {
        &self.pcs[t][c]
    }

    pub fn pair_copulas(&self) -> &[Vec<PairCopula>] {
        &self.pcs
    }

    /// Edges with their pair copulas, tree by tree.
    pub fn edges(&self) -> Vec<(Edge, PairCopula)> {
        let d = self.dimension();
        (0..d.saturating_sub(1))
            .flat_map(|t| (0..d - 1 - t).map(move |c| (t, c)))
            .map(|(t, c)| (self.structure.edge(t, c), self.pcs[t][c]))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.pcs.iter().flatten().map(|p| p.parameter_count()).sum()
    }

    /// Visits the trees in order with the pseudo-observations of each edge.
    /// The visitor may change the pair copulas of the current tree before
    /// the arguments of the next tree are computed.
    fn walk(&mut self, u: &[Vec<f64>], visit: &mut TreeVisitor<'_>) -> Result<()> {
        let d = self.dimension();
        if u.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: u.len() });
        }
        let s = &self.structure;
        let mut prev: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
        for t in 0..d.saturating_sub(1) {
            let args: Vec<(&[f64], &[f64])> = (0..d - 1 - t)
                .map(|c| {
                    let first: &[f64] = if t == 0 { &u[s.diag(c)] } else { &prev[c].0 };
                    (first, s.second_arg(t, c, &prev, u))
                })
                .collect();
            visit(t, &args, &mut self.pcs[t])?;
            if t + 2 < d {
                let pcs = &self.pcs[t];
                let needs = &s.needs_indirect[t];
                let next: Vec<(Vec<f64>, Vec<f64>)> = args
                    .par_iter()
                    .enumerate()
                    .map(|(c, (a, b))| {
                        let pc = &pcs[c];
                        let direct = a.iter().zip(b.iter()).map(|(&x, &y)| pc.h2(x, y)).collect();
                        let indirect = if needs[c] {
                            a.iter().zip(b.iter()).map(|(&x, &y)| pc.h1(x, y)).collect()
                        } else {
                            Vec::new()
                        };
                        (direct, indirect)
                    })
                    .collect();
                prev = next;
            }
        }
        Ok(())
    }

    /// Log copula density of every row of the column-major sample `u`.
    pub fn log_density_columns(&self, u: &[Vec<f64>]) -> Result<Vec<f64>> {
        let n = u.first().map_or(0, Vec::len);
        let clipped: Vec<Vec<f64>> = u.iter().map(|c| c.iter().map(|&x| clip(x)).collect()).collect();
        let mut out = vec![0.0; n];
        let mut me = self.clone();
        me.walk(&clipped, &mut |_, args, pcs| {
            let terms: Vec<Vec<f64>> = args
                .par_iter()
                .zip(pcs.par_iter())
                .map(|((a, b), pc)| a.iter().zip(b.iter()).map(|(&x, &y)| pc.ln_density(x, y)).collect())
                .collect();
            for term in terms {
                for (o, v) in out.iter_mut().zip(term) {
                    *o += v;
                }
            }
            Ok(())
        })?;
        Ok(out)
    }

    /// Log copula density at one point.
    pub fn log_density(&self, u: &[f64]) -> f64 {
        let cols: Vec<Vec<f64>> = u.iter().map(|&x| vec![x]).collect();
        self.log_density_columns(&cols).map_or(f64::NAN, |v| v[0])
    }

    /// Weighted copula log-likelihood of a column-major sample.
    pub fn weighted_loglik(&self, u: &[Vec<f64>], w: &[f64]) -> Result<f64> {
        let dens = self.log_density_columns(u)?;
        Ok(dens.iter().zip(w).map(|(l, wi)| if *wi == 0.0 { 0.0 } else { wi * l }).sum())
    }

    /// Re-estimates every pair-copula parameter by weighted maximum
    /// likelihood, tree by tree, keeping families and rotations fixed.
    pub fn fit_parameters(&mut self, u: &[Vec<f64>], w: &[f64], opts: CopulaFitOptions) -> Result<()> {
        let clipped: Vec<Vec<f64>> = u.iter().map(|c| c.iter().map(|&x| clip(x)).collect()).collect();
        self.walk(&clipped, &mut |t, args, pcs| {
            let fitted: Vec<Result<PairCopula>> = args
                .par_iter()
                .zip(pcs.par_iter())
                .map(|((a, b), pc)| {
                    paircop::fit_weighted_with(pc.family, pc.rotation, a, b, w, Some(pc), opts)
                })
                .collect();
            for (c, (slot, f)) in pcs.iter_mut().zip(fitted).enumerate() {
                *slot = f.map_err(|e| e.annotate(format!("tree {} edge {}", t + 1, c + 1)))?;
            }
            Ok(())
        })
    }

    fn forward_column(&self, c: usize, chain0: f64, u: &[f64], direct: &mut [f64], indirect: &mut [f64]) {
        let d = self.dimension();
        let s = &self.structure;
        let mut first = chain0;
        for t in 0..=d - 2 - c {
            let second = self.point_second_arg(t, c, u, direct, indirect);
            let pc = &self.pcs[t][c];
            direct[t * d + c] = pc.h2(first, second);
            if s.needs_indirect.get(t).is_some_and(|n| n[c]) {
                indirect[t * d + c] = pc.h1(first, second);
            }
            first = direct[t * d + c];
        }
    }

    fn point_second_arg(&self, t: usize, c: usize, u: &[f64], direct: &[f64], indirect: &[f64]) -> f64 {
        let d = self.dimension();
        if t == 0 {
            u[self.structure.partner(0, c)]
        } else {
            match self.structure.sources[t][c] {
                Source::Direct(c2) => direct[(t - 1) * d + c2],
                Source::Indirect(c2) => indirect[(t - 1) * d + c2],
            }
        }
    }

    /// Maps a point of the unit cube to independent uniforms, variable by
    /// variable along the structure's sampling order.
    pub fn rosenblatt(&self, u: &[f64]) -> Vec<f64> {
        let d = self.dimension();
        let u: Vec<f64> = u.iter().map(|&x| clip(x)).collect();
        let mut direct = vec![0.0; d * d];
        let mut indirect = vec![0.0; d * d];
        let mut out = vec![0.0; d];
        out[self.structure.diag(d - 1)] = u[self.structure.diag(d - 1)];
        for c in (0..d - 1).rev() {
            let a = self.structure.diag(c);
            self.forward_column(c, u[a], &u, &mut direct, &mut indirect);
            out[a] = direct[(d - 2 - c) * d + c];
        }
        out
    }

    /// Inverse of [`VineCopula::rosenblatt`].
    pub fn inverse_rosenblatt(&self, w: &[f64]) -> Vec<f64> {
        let d = self.dimension();
        let mut direct = vec![0.0; d * d];
        let mut indirect = vec![0.0; d * d];
        let mut u = vec![0.0; d];
        let last = self.structure.diag(d - 1);
        u[last] = clip(w[last]);
        for c in (0..d - 1).rev() {
            let a = self.structure.diag(c);
            let mut val = clip(w[a]);
            for t in (0..=d - 2 - c).rev() {
                let second = self.point_second_arg(t, c, &u, &direct, &indirect);
                val = clip(self.pcs[t][c].h2_inverse(val, second));
            }
            u[a] = val;
            self.forward_column(c, val, &u, &mut direct, &mut indirect);
        }
        u
    }

    /// Draws `n` points; row `i` uses its own stream of a ChaCha generator
    /// keyed by `seed`, so results do not depend on thread scheduling.
    /// Returned column-major.
    pub fn simulate(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let d = self.dimension();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let w: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                self.inverse_rosenblatt(&w)
            })
            .collect();
        transpose(&rows, d)
    }
}

pub(crate) fn transpose(rows: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    (0..d).map(|j| rows.iter().map(|r| r[j]).collect()).collect()
}

// ---------------------------------------------------------------------------
// Structure selection.

struct Node {
    /// conditioned variables of the edge this node stands for (one variable in tree 1)
    conditioned: Vec<usize>,
    /// conditioned plus conditioning variables, sorted
    all: Vec<usize>,
    /// distribution of each conditioned variable given the rest of `all`
    values: Vec<Vec<f64>>,
}

impl Node {
    fn value_of(&self, v: usize) -> &[f64] {
        let i = self.conditioned.iter().position(|&x| x == v).expect("conditioned variable");
        &self.values[i]
    }
}

struct Candidate {
    i: usize,
    j: usize,
    a: usize,
    b: usize,
    conditioning: Vec<usize>,
    tau: f64,
}

fn candidates(nodes: &[Node], w: &[f64]) -> Vec<Candidate> {
    let pairs: Vec<(usize, usize)> =
        (0..nodes.len()).flat_map(|i| (i + 1..nodes.len()).map(move |j| (i, j))).collect();
    pairs
        .par_iter()
        .filter_map(|&(i, j)| {
            let (ni, nj) = (&nodes[i], &nodes[j]);
            let common: Vec<usize> = ni.all.iter().copied().filter(|v| nj.all.contains(v)).collect();
            if common.len() + 1 != ni.all.len() {
                return None;
            }
            let a = *ni.all.iter().find(|v| !common.contains(v))?;
            let b = *nj.all.iter().find(|v| !common.contains(v))?;
            let tau = weighted_kendall_tau(ni.value_of(a), nj.value_of(b), w);
            Some(Candidate { i, j, a, b, conditioning: common, tau })
        })
        .collect()
}

fn maximum_spanning_tree(n: usize, mut cands: Vec<Candidate>) -> Vec<Candidate> {
    cands.sort_by(|x, y| y.tau.abs().total_cmp(&x.tau.abs()).then((x.i, x.j).cmp(&(y.i, y.j))));
    let mut uf = UnionFind::new(n);
    let mut out = Vec::with_capacity(n.saturating_sub(1));
    for c in cands {
        if uf.union(c.i, c.j) {
            out.push(c);
        }
    }
    out
}

fn star_tree(n: usize, cands: Vec<Candidate>) -> Vec<Candidate> {
    let mut score = vec![0.0; n];
    for c in &cands {
        score[c.i] += c.tau.abs();
        score[c.j] += c.tau.abs();
    }
    let root = (0..n).fold(0, |best, i| if score[i] > score[best] { i } else { best });
    cands.into_iter().filter(|c| c.i == root || c.j == root).collect()
}

/// Selects a vine structure and pair-copula families for the weighted
/// pseudo-observations `u` (column-major, values in (0,1)).
///
/// R-vines take maximum spanning trees under `|weighted tau|` subject to the
/// proximity condition; C-vines take at each level the star around the node
/// with the largest `Σ|tau|`. Every edge's family is chosen by
/// [`paircop::select_family`] on the h-transformed pseudo-observations.
pub fn select_structure(
    u: &[Vec<f64>],
    w: &[f64],
    kind: VineKind,
    families: &[CopulaFamily],
) -> Result<VineCopula> {
    let d = u.len();
    if d == 0 {
        return Err(Error::EmptyDataset);
    }
    let n = u[0].len();
    if u.iter().any(|c| c.len() != n) || w.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: w.len() });
    }
    for (j, col) in u.iter().enumerate() {
        let vals: Vec<f64> = col.iter().zip(w).filter(|(_, wi)| **wi > 0.0).map(|(x, _)| *x).collect();
        if vals.windows(2).all(|p| p[0] == p[1]) {
            return Err(Error::ZeroVariance(format!("pseudo-observation column {j}")));
        }
    }
    if effective_size(w) < 10.0 * d as f64 {
        log::warn!("vine selection on effective sample size {:.1} for {d} variables", effective_size(w));
    }
    let clipped: Vec<Vec<f64>> = u.iter().map(|c| c.iter().map(|&x| clip(x)).collect()).collect();
    let mut nodes: Vec<Node> =
        (0..d).map(|j| Node { conditioned: vec![j], all: vec![j], values: vec![clipped[j].clone()] }).collect();
    let mut trees = Vec::with_capacity(d.saturating_sub(1));
    for t in 0..d.saturating_sub(1) {
        let cands = candidates(&nodes, w);
        let chosen = match kind {
            VineKind::Rvine => maximum_spanning_tree(nodes.len(), cands),
            VineKind::Cvine => star_tree(nodes.len(), cands),
        };
        if chosen.len() + 1 != nodes.len() {
            return Err(Error::Numeric(format!("tree {} could not be completed", t + 1)));
        }
        let fitted: Vec<Result<(PairCopula, Vec<f64>, Vec<f64>)>> = chosen
            .par_iter()
            .map(|c| {
                let (x, y) = (nodes[c.i].value_of(c.a), nodes[c.j].value_of(c.b));
                let pc = paircop::select_family(x, y, w, families)
                    .map_err(|e| e.annotate(format!("tree {} edge {},{}", t + 1, c.a, c.b)))?;
                let ha = x.iter().zip(y).map(|(&p, &q)| pc.h2(p, q)).collect();
                let hb = x.iter().zip(y).map(|(&p, &q)| pc.h1(p, q)).collect();
                Ok((pc, ha, hb))
            })
            .collect();
        let mut tree = Vec::with_capacity(chosen.len());
        let mut next = Vec::with_capacity(chosen.len());
        for (c, f) in chosen.into_iter().zip(fitted) {
            let (pc, ha, hb) = f?;
            let mut all = c.conditioning.clone();
            all.push(c.a);
            all.push(c.b);
            all.sort_unstable();
            next.push(Node { conditioned: vec![c.a, c.b], all, values: vec![ha, hb] });
            tree.push((c.a, c.b, c.conditioning, pc));
        }
        trees.push(tree);
        nodes = next;
    }
    VineCopula::from_edges(d, trees)
}

// ---------------------------------------------------------------------------
// Vine distributions.

/// A vine copula with parametric margins.
#[derive(Debug, Clone, PartialEq)]
pub struct VineDistribution {
    pub copula: VineCopula,
    pub margins: Vec<MarginalModel>,
}

impl VineDistribution {
    pub fn new(copula: VineCopula, margins: Vec<MarginalModel>) -> Result<Self> {
        if margins.len() != copula.dimension() {
            return Err(Error::DimensionMismatch { expected: copula.dimension(), got: margins.len() });
        }
        Ok(VineDistribution { copula, margins })
    }

    pub fn dimension(&self) -> usize {
        self.margins.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.margins.iter().map(MarginalModel::parameter_count).sum::<usize>() + self.copula.parameter_count()
    }

    fn prepared(&self) -> Vec<PreparedMargin> {
        self.margins.iter().map(MarginalModel::prepare).collect()
    }

    /// Probability integral transform of the column-major sample `x`.
    pub fn pit_columns(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.prepared().iter().zip(x).map(|(m, col)| col.iter().map(|&v| clip(m.cdf(v))).collect()).collect()
    }

    /// Joint log density of every row of a column-major sample.
    pub fn log_density_columns(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        if x.len() != self.dimension() {
            return Err(Error::DimensionMismatch { expected: self.dimension(), got: x.len() });
        }
        let n = x.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (m, col) in self.prepared().iter().zip(x) {
            for (o, &v) in out.iter_mut().zip(col) {
                *o += m.ln_pdf(v);
            }
        }
        let cop = self.copula.log_density_columns(&self.pit_columns(x))?;
        for (o, c) in out.iter_mut().zip(cop) {
            if o.is_finite() {
                *o += c;
            }
        }
        Ok(out)
    }

    /// Joint log density at one point; `-inf` outside the margins' support.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let cols: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        self.log_density_columns(&cols).map_or(f64::NAN, |v| v[0])
    }

    pub fn rosenblatt(&self, x: &[f64]) -> Vec<f64> {
        let u: Vec<f64> = self.margins.iter().zip(x).map(|(m, &v)| m.cdf(v)).collect();
        self.copula.rosenblatt(&u)
    }

    pub fn inverse_rosenblatt(&self, w: &[f64]) -> Result<Vec<f64>> {
        let u = self.copula.inverse_rosenblatt(w);
        self.margins.iter().zip(u).map(|(m, p)| m.quantile(clip(p))).collect()
    }

    /// Simulates `n` points (column-major); deterministic given `seed`.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let u = self.copula.simulate(n, seed);
        self.prepared()
            .par_iter()
            .zip(u.par_iter())
            .map(|(m, col)| col.iter().map(|&p| m.quantile(clip(p))).collect())
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Documents.

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    tree: usize,
    conditioned: [usize; 2],
    conditioning: Vec<usize>,
    paircopula: PairCopula,
}

#[derive(Serialize, Deserialize)]
struct VineDoc {
    dimension: usize,
    structure: Vec<Vec<usize>>,
    edges: Vec<EdgeDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    margins: Option<Vec<MarginalModel>>,
}

impl VineCopula {
    fn to_doc(&self) -> VineDoc {
        let edges = self
            .edges()
            .into_iter()
            .map(|(e, pc)| EdgeDoc { tree: e.tree + 1, conditioned: e.conditioned, conditioning: e.conditioning, paircopula: pc })
            .collect();
        VineDoc { dimension: self.dimension(), structure: self.structure.matrix_rows(), edges, margins: None }
    }

    fn from_doc(doc: &VineDoc) -> Result<Self> {
        let structure = RVineStructure::from_matrix_rows(&doc.structure)?;
        let d = structure.dimension();
        if doc.dimension != d {
            return Err(Error::DimensionMismatch { expected: doc.dimension, got: d });
        }
        if doc.edges.len() != structure.edge_count() {
            return Err(Error::DimensionMismatch { expected: structure.edge_count(), got: doc.edges.len() });
        }
        let mut pcs = Vec::with_capacity(d.saturating_sub(1));
        for t in 0..d.saturating_sub(1) {
            let mut tree = Vec::with_capacity(d - 1 - t);
            for c in 0..d - 1 - t {
                let e = structure.edge(t, c);
                let found = doc.edges.iter().find_map(|ed| {
                    let mut cond = ed.conditioning.clone();
                    cond.sort_unstable();
                    if ed.tree != t + 1 || cond != e.conditioning {
                        None
                    } else if ed.conditioned == e.conditioned {
                        Some(ed.paircopula)
                    } else if ed.conditioned == [e.conditioned[1], e.conditioned[0]] {
                        Some(ed.paircopula.transposed())
                    } else {
                        None
                    }
                });
                let pc = found.ok_or_else(|| {
                    Error::Document(format!("no pair copula for edge {:?}|{:?}", e.conditioned, e.conditioning))
                })?;
                tree.push(pc);
            }
            pcs.push(tree);
        }
        VineCopula::new(structure, pcs)
    }
}

impl Serialize for VineCopula {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

impl<'de> Deserialize<'de> for VineCopula {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = VineDoc::deserialize(d)?;
        VineCopula::from_doc(&doc).map_err(serde::de::Error::custom)
    }
}

impl Serialize for VineDistribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut doc = self.copula.to_doc();
        doc.margins = Some(self.margins.clone());
        doc.serialize(s)
    }
}

impl<'de> Deserialize<'de> for VineDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = VineDoc::deserialize(d)?;
        let copula = VineCopula::from_doc(&doc).map_err(serde::de::Error::custom)?;
        let margins = doc.margins.ok_or_else(|| serde::de::Error::missing_field("margins"))?;
        for m in &margins {
            m.validate().map_err(serde::de::Error::custom)?;
        }
        VineDistribution::new(copula, margins).map_err(serde::de::Error::custom)
    }
}
