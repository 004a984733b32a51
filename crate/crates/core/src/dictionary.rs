//! Dictionary learning from partially observed sensor snapshots with
//! sparsity and graph-Laplacian smoothness, and reconstruction of missing
//! readings.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::formats::SnapshotRow;
use crate::linalg::{max_eigenvalue, soft_threshold};
use crate::simulator::{seeded_rng, standard_normals};

const CODE_TOL: f64 = 1e-8;
const CODE_MAX_ITER: usize = 100_000;
const MAX_SWEEPS: usize = 200;
const SWEEP_TOL: f64 = 1e-6;
const COLUMN_ITERS: usize = 100;

/// Undirected sensor graph with 0/1 adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorGraph {
    adjacency: DMatrix<f64>,
}

impl SensorGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = DMatrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return invalid("edge endpoint out of range");
            }
            if i == j {
                return invalid("self loops are not allowed");
            }
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        Ok(Self { adjacency: a })
    }

    /// Path `0 − 1 − … − (n−1)`.
    pub fn chain(n: usize) -> Self {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        Self::from_edges(n, &edges).expect("chain edges are valid")
    }

    /// No edges: the Laplacian is zero.
    pub fn isolated(n: usize) -> Self {
        Self { adjacency: DMatrix::zeros(n, n) }
    }

    pub fn len(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.adjacency[(i, j)] != 0.0)
            .collect()
    }

    /// `diag(A 1) − A`
    pub fn laplacian(&self) -> DMatrix<f64> {
        let degrees = self.adjacency.column_sum();
        DMatrix::from_diagonal(&degrees) - &self.adjacency
    }
}

/// Sensor readings at one time instant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl Snapshot {
    pub fn new(time: usize, indices: Vec<usize>, values: Vec<f64>, sensors: usize) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: indices.len(), found: values.len() });
        }
        let mut seen = BTreeSet::new();
        for &i in &indices {
            if i >= sensors {
                return invalid("sensor index out of range");
            }
            if !seen.insert(i) {
                return invalid("sensor indices in a snapshot must be unique");
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("snapshot values must be finite");
        }
        Ok(Self { time, indices, values })
    }

    /// Fully observed snapshot.
    pub fn full(time: usize, values: &[f64]) -> Self {
        Self { time, indices: (0..values.len()).collect(), values: values.to_vec() }
    }

    /// Groups CSV rows by time, in increasing time order.
    pub fn from_rows(rows: &[SnapshotRow], sensors: usize) -> Result<Vec<Self>> {
        let mut by_time: BTreeMap<usize, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
        for r in rows {
            let e = by_time.entry(r.time).or_default();
            e.0.push(r.sensor);
            e.1.push(r.value);
        }
        by_time.into_iter().map(|(t, (i, v))| Self::new(t, i, v, sensors)).collect()
    }

    pub fn to_rows(&self) -> Vec<SnapshotRow> {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&sensor, &value)| SnapshotRow { time: self.time, sensor, value })
            .collect()
    }
}

/// `N × Q` dictionary whose columns lie in the unit ball.
#[derive(Clone, Debug, PartialEq)]
pub struct Dictionary {
    d: DMatrix<f64>,
}

impl Dictionary {
    pub fn new(d: DMatrix<f64>) -> Result<Self> {
        if d.column_iter().any(|c| c.norm() > 1.0 + 1e-9) {
            return invalid("dictionary columns must have norm at most one");
        }
        Ok(Self { d })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn sensors(&self) -> usize {
        self.d.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.d.ncols()
    }
}

/// Hyperparameters of the per-snapshot objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodingParams {
    pub lambda_s: f64,
    pub lambda_l: f64,
}

impl CodingParams {
    fn validate(&self) -> Result<()> {
        if !(self.lambda_s >= 0.0) || !(self.lambda_l >= 0.0) {
            return invalid("regularization weights must be non-negative");
        }
        Ok(())
    }
}

/// `½‖m − O D s‖² + λ_s‖s‖₁ + (λ_L/2) sᵀDᵀLDs`
pub fn snapshot_objective(d: &DMatrix<f64>, snap: &Snapshot, s: &DVector<f64>, params: CodingParams, l: &DMatrix<f64>) -> f64 {
    let ds = d * s;
    fit_term(&ds, snap) + params.lambda_s * s.lp_norm(1) + 0.5 * params.lambda_l * ds.dot(&(l * &ds))
}

fn fit_term(ds: &DVector<f64>, snap: &Snapshot) -> f64 {
    0.5 * snap.indices.iter().zip(&snap.values).map(|(&i, v)| (v - ds[i]).powi(2)).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseCode {
    pub s: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

fn check_shapes(d: &DMatrix<f64>, l: &DMatrix<f64>, snap: &Snapshot) -> Result<()> {
    if l.shape() != (d.nrows(), d.nrows()) {
        return Err(Error::DimensionMismatch { expected: d.nrows(), found: l.nrows() });
    }
    if snap.indices.iter().any(|&i| i >= d.nrows()) {
        return invalid("snapshot sensor index exceeds dictionary rows");
    }
    Ok(())
}

/// Minimises the snapshot objective over `s` by monotone FISTA, starting from
/// `warm` when given.
pub fn sparse_code(
    d: &DMatrix<f64>,
    snap: &Snapshot,
    params: CodingParams,
    l: &DMatrix<f64>,
    warm: Option<&DVector<f64>>,
) -> Result<SparseCode> {
    params.validate()?;
    check_shapes(d, l, snap)?;
    let q = d.ncols();
    if snap.indices.is_empty() {
        return Ok(SparseCode { s: DVector::zeros(q), converged: true, iterations: 0 });
    }
    let h = d.select_rows(&snap.indices);
    let m = DVector::from_column_slice(&snap.values);
    let dld = d.tr_mul(&(l * d));
    let mut hess = h.tr_mul(&h) + &dld * params.lambda_l;
    crate::linalg::symmetrize(&mut hess);
    let lip = max_eigenvalue(&hess).max(0.0) * (1.0 + 1e-12);
    let htm = h.tr_mul(&m);
    let mut x = warm.cloned().unwrap_or_else(|| DVector::zeros(q));
    if x.len() != q {
        return Err(Error::DimensionMismatch { expected: q, found: x.len() });
    }
    if lip == 0.0 {
        // Flat smooth part: only the ℓ1 term remains.
        return Ok(SparseCode { s: DVector::zeros(q), converged: true, iterations: 0 });
    }
    let objective = |s: &DVector<f64>| snapshot_objective(d, snap, s, params, l);
    let grad = |s: &DVector<f64>| &hess * s - &htm;
    let prox = |v: DVector<f64>| v.map(|vi| soft_threshold(vi, params.lambda_s / lip));
    let scale = htm.amax().max(1.0);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut obj = objective(&x);
    for it in 1..=CODE_MAX_ITER {
        let z = prox(&y - grad(&y) / lip);
        let z_obj = objective(&z);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let prev = x.clone();
        if z_obj <= obj {
            x = z.clone();
            obj = z_obj;
        }
        y = &x + (&z - &x) * (t / t_next) + (&x - &prev) * ((t - 1.0) / t_next);
        t = t_next;
        let mapping = (&x - prox(&x - grad(&x) / lip)) * lip;
        if mapping.amax() <= CODE_TOL * scale {
            return Ok(SparseCode { s: x, converged: true, iterations: it });
        }
    }
    Ok(SparseCode { s: x, converged: false, iterations: CODE_MAX_ITER })
}

#[derive(Clone, Debug)]
pub struct LearnResult {
    pub dictionary: Dictionary,
    pub codes: Vec<DVector<f64>>,
    /// Total objective at the start and after each sweep.
    pub history: Vec<f64>,
    pub converged: bool,
}

pub fn total_objective(d: &DMatrix<f64>, snaps: &[Snapshot], codes: &[DVector<f64>], params: CodingParams, l: &DMatrix<f64>) -> f64 {
    snaps.iter().zip(codes).map(|(sn, s)| snapshot_objective(d, sn, s, params, l)).sum()
}

/// Block coordinate descent: sparse codes for every snapshot, then one
/// block per dictionary column (projected gradient on the unit ball).
pub fn learn(
    snapshots: &[Snapshot],
    atoms: usize,
    params: CodingParams,
    graph: &SensorGraph,
    seed: u64,
) -> Result<LearnResult> {
    params.validate()?;
    if snapshots.is_empty() || atoms == 0 {
        return invalid("need at least one snapshot and one atom");
    }
    let n = graph.len();
    let l = graph.laplacian();
    let lmax = max_eigenvalue(&l).max(0.0);
    for s in snapshots {
        if s.indices.iter().any(|&i| i >= n) {
            return invalid("snapshot sensor index exceeds graph size");
        }
    }
    let mut rng = seeded_rng(seed, 6);
    let mut d = DMatrix::from_vec(n, atoms, standard_normals(&mut rng, n * atoms));
    for mut c in d.column_iter_mut() {
        let norm = c.norm();
        if norm > 0.0 {
            c /= norm;
        }
    }
    let mut codes = vec![DVector::zeros(atoms); snapshots.len()];
    let mut history = vec![total_objective(&d, snapshots, &codes, params, &l)];
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        codes = snapshots
            .par_iter()
            .zip(codes.par_iter())
            .map(|(snap, warm)| {
                let c = sparse_code(&d, snap, params, &l, Some(warm))?;
                let keep = snapshot_objective(&d, snap, &c.s, params, &l) <= snapshot_objective(&d, snap, warm, params, &l);
                Ok(if keep { c.s } else { warm.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        update_columns(&mut d, snapshots, &codes, params.lambda_l, &l, lmax);
        let obj = total_objective(&d, snapshots, &codes, params, &l);
        let prev = *history.last().expect("history is never empty");
        history.push(obj);
        if (prev - obj).abs() <= SWEEP_TOL * prev.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    Ok(LearnResult { dictionary: Dictionary::new(d)?, codes, history, converged })
}

fn update_columns(d: &mut DMatrix<f64>, snaps: &[Snapshot], codes: &[DVector<f64>], lambda_l: f64, l: &DMatrix<f64>, lmax: f64) {
    let n = d.nrows();
    let mut ds: Vec<DVector<f64>> = codes.iter().map(|s| &*d * s).collect();
    let masks: Vec<DVector<f64>> = snaps
        .iter()
        .map(|sn| {
            let mut m = DVector::zeros(n);
            for &i in &sn.indices {
                m[i] = 1.0;
            }
            m
        })
        .collect();
    for q in 0..d.ncols() {
        let weights: Vec<f64> = codes.iter().map(|s| s[q]).collect();
        let w2: f64 = weights.iter().map(|w| w * w).sum();
        if w2 == 0.0 {
            continue;
        }
        let mut diag = DVector::zeros(n);
        for (w, m) in weights.iter().zip(&masks) {
            diag += m * (w * w);
        }
        let lip = (diag.amax() + lambda_l * w2 * lmax) * (1.0 + 1e-12);
        if lip == 0.0 {
            continue;
        }
        for _ in 0..COLUMN_ITERS {
            let mut grad = DVector::zeros(n);
            for ((w, sn), dst) in weights.iter().zip(snaps).zip(&ds) {
                if *w == 0.0 {
                    continue;
                }
                let mut g = l * dst * lambda_l;
                for (&i, v) in sn.indices.iter().zip(&sn.values) {
                    g[i] += dst[i] - v;
                }
                grad += g * *w;
            }
            let old = d.column(q).into_owned();
            let mut new = &old - grad / lip;
            let norm = new.norm();
            if norm > 1.0 {
                new /= norm;
            }
            let delta = &new - &old;
            let moved = delta.amax();
            for (w, dst) in weights.iter().zip(ds.iter_mut()) {
                if *w != 0.0 {
                    *dst += &delta * *w;
                }
            }
            d.set_column(q, &new);
            if moved <= 1e-12 * old.amax().max(1.0) {
                break;
            }
        }
    }
}

/// `m̂ = D s` with `s` the sparse code of the snapshot.
pub fn reconstruct(d: &Dictionary, snap: &Snapshot, params: CodingParams, graph: &SensorGraph) -> Result<DVector<f64>> {
    let s = sparse_code(d.matrix(), snap, params, &graph.laplacian(), None)?;
    Ok(d.matrix() * s.s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_dict(n: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let mut d = DMatrix::from_vec(n, q, standard_normals(&mut seeded_rng(seed, 1), n * q));
        for mut c in d.column_iter_mut() {
            let norm = c.norm();
            c /= norm;
        }
        d
    }

    #[test]
    fn laplacian_basics() {
        let g = SensorGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let l = g.laplacian();
        assert!((l * DVector::from_element(4, 1.0)).amax() < 1e-15);
        assert!(SensorGraph::from_edges(3, &[(0, 0)]).is_err());
        assert!(SensorGraph::from_edges(3, &[(0, 5)]).is_err());
        assert_eq!(SensorGraph::isolated(3).laplacian(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn huge_lambda_gives_zero_code() {
        let d = random_dict(6, 4, 1);
        let snap = Snapshot::full(0, &[1.0, -2.0, 0.5, 0.3, 1.1, -0.7]);
        let p = CodingParams { lambda_s: 1e6, lambda_l: 0.0 };
        let c = sparse_code(&d, &snap, p, &DMatrix::zeros(6, 6), None).unwrap();
        assert!(c.s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn orthonormal_dictionary_gives_projection() {
        let q = DMatrix::from_fn(5, 3, |i, j| ((i * 3 + j * 7) % 5) as f64 + if i == j { 2.0 } else { 0.0 });
        let d = q.qr().q();
        let m = [0.3, -1.2, 0.8, 2.0, -0.4];
        let snap = Snapshot::full(0, &m);
        let p = CodingParams { lambda_s: 0.0, lambda_l: 0.0 };
        let c = sparse_code(&d, &snap, p, &DMatrix::zeros(5, 5), None).unwrap();
        let expect = d.tr_mul(&DVector::from_column_slice(&m));
        assert!((c.s - expect).amax() < 1e-8);
    }

    #[test]
    fn coding_matches_coordinate_descent() {
        let d = random_dict(7, 4, 3);
        let g = SensorGraph::chain(7);
        let l = g.laplacian();
        let snap = Snapshot::new(0, vec![0, 2, 3, 5, 6], vec![1.0, -0.5, 0.7, 0.2, -1.3], 7).unwrap();
        let p = CodingParams { lambda_s: 0.05, lambda_l: 0.1 };
        let c = sparse_code(&d, &snap, p, &l, None).unwrap();
        assert!(c.converged);
        // Cyclic coordinate descent on the same objective.
        let h = d.select_rows(&snap.indices);
        let a = h.tr_mul(&h) + d.tr_mul(&(&l * &d)) * p.lambda_l;
        let b = h.tr_mul(&DVector::from_column_slice(&snap.values));
        let mut s = DVector::zeros(4);
        for _ in 0..20_000 {
            for k in 0..4 {
                let r = b[k] - (a.row(k) * &s)[0] + a[(k, k)] * s[k];
                s[k] = soft_threshold(r, p.lambda_s) / a[(k, k)];
            }
        }
        let o1 = snapshot_objective(&d, &snap, &c.s, p, &l);
        let o2 = snapshot_objective(&d, &snap, &s, p, &l);
        assert!((o1 - o2).abs() < 1e-6);
    }

    #[test]
    fn empty_snapshot_reconstructs_zero() {
        let d = Dictionary::new(random_dict(5, 3, 4)).unwrap();
        let snap = Snapshot::new(0, vec![], vec![], 5).unwrap();
        let p = CodingParams { lambda_s: 0.1, lambda_l: 0.1 };
        let m = reconstruct(&d, &snap, p, &SensorGraph::chain(5)).unwrap();
        assert_eq!(m, DVector::zeros(5));
    }

    #[test]
    fn single_entry_one_atom() {
        let col = DVector::from_vec(vec![0.6, 0.8]);
        let d = Dictionary::new(DMatrix::from_columns(&[col])).unwrap();
        let snap = Snapshot::new(0, vec![1], vec![2.4], 2).unwrap();
        let p = CodingParams { lambda_s: 0.0, lambda_l: 0.0 };
        let m = reconstruct(&d, &snap, p, &SensorGraph::isolated(2)).unwrap();
        assert!((m[1] - 2.4).abs() < 1e-8);
        assert!((m[0] - 1.8).abs() < 1e-8);
    }

    #[test]
    fn learning_is_monotone_and_feasible() {
        let n = 8;
        let snaps: Vec<Snapshot> = (0..12)
            .map(|t| {
                let idx: Vec<usize> = (0..n).filter(|i| (i + t) % 3 != 0).collect();
                let vals = idx.iter().map(|&i| ((i * t) as f64 * 0.37).sin() + 1.0).collect();
                Snapshot::new(t, idx, vals, n).unwrap()
            })
            .collect();
        let p = CodingParams { lambda_s: 0.05, lambda_l: 0.02 };
        let r = learn(&snaps, 4, p, &SensorGraph::chain(n), 7).unwrap();
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-10 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
        assert!(r.dictionary.matrix().column_iter().all(|c| c.norm() <= 1.0 + 1e-9));
        let again = learn(&snaps, 4, p, &SensorGraph::chain(n), 7).unwrap();
        assert_eq!(again.dictionary, r.dictionary);
    }

    #[test]
    fn identity_like_dictionary_absorbs_data() {
        let n = 4;
        let snaps: Vec<Snapshot> = (0..3).map(|t| Snapshot::full(t, &[0.3 * t as f64, 0.5, -0.2, 0.1])).collect();
        let p = CodingParams { lambda_s: 0.0, lambda_l: 0.0 };
        let r = learn(&snaps, n, p, &SensorGraph::isolated(n), 2).unwrap();
        assert!(*r.history.last().unwrap() < 1e-6 * r.history[0].max(1.0));
    }

    proptest! {
        #[test]
        fn laplacian_quadratic_form(edges in proptest::collection::vec((0usize..6, 0usize..6), 0..12), v in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let edges: Vec<(usize, usize)> = edges.into_iter().filter(|(a, b)| a != b).collect();
            let g = SensorGraph::from_edges(6, &edges).unwrap();
            let l = g.laplacian();
            let v = DVector::from_vec(v);
            let lhs = v.dot(&(&l * &v));
            let a = g.adjacency();
            let mut rhs = 0.0;
            for i in 0..6 {
                for j in 0..6 {
                    rhs += 0.5 * a[(i, j)] * (v[i] - v[j]).powi(2);
                }
            }
            prop_assert!((lhs - rhs).abs() < 1e-10);
            prop_assert!(lhs >= -1e-12);
        }
    }
}
