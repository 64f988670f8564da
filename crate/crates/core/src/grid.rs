//! Grid topology, admittance/impedance construction and the exact Gaussian
//! increment distributions a topology implies.
//!
//! The nodal admittance matrix is assembled as `Y = Aᵀ Y_E A + Y_s` from the
//! branch incidence matrix `A`, the diagonal of series admittances `Y_E` and
//! the diagonal shunt matrix `Y_s`. After eliminating the slack bus the
//! reduced matrix is invertible on a connected grid, giving the sensitivity
//! `Z = Y⁻¹` that maps current increments to voltage increments. With
//! independent Gaussian injections `ΔI_k ~ N(μ_k, σ_k²)` the voltage
//! increments are exactly Gaussian with mean `Zμ` and covariance
//! `Z diag(σ²) Zᵀ`.
//!
//! Generated test grids are purely resistive so the real sensitivity matrix
//! is exact rather than an approximation; complex admittances are accepted
//! in topologies and reduced to a real channel via [`SensitivityMode`].

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gaussian::{GaussError, IncrementDistribution};
use crate::matfun::SymMatrix;

pub type Admittance = Complex<f64>;

/// Condition-number limit above which the reduced admittance matrix is
/// declared numerically singular (disconnected or degenerate grid).
pub const SINGULARITY_COND: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub enum GridError {
    UnknownBus { bus: usize, bus_count: usize },
    UnknownBranch { branch: usize, branch_count: usize },
    SelfLoop { bus: usize },
    ZeroAdmittance { branch: usize },
    Disconnected,
    SingularReducedMatrix { condition: f64 },
    TooSmall { bus_count: usize },
    BadNoiseStd { std: f64 },
    Gauss(GaussError),
}

impl fmt::Display for GridError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownBus { bus, bus_count } => {
                write!(f, "bus {bus} out of range (grid has {bus_count} buses)")
            }
            Self::UnknownBranch { branch, branch_count } => {
                write!(f, "branch {branch} out of range (grid has {branch_count} branches)")
            }
            Self::SelfLoop { bus } => write!(f, "self-loop at bus {bus}"),
            Self::ZeroAdmittance { branch } => write!(f, "branch {branch} has zero admittance"),
            Self::Disconnected => write!(f, "grid is not connected"),
            Self::SingularReducedMatrix { condition } => {
                write!(f, "reduced admittance matrix is singular (condition number {condition:e})")
            }
            Self::TooSmall { bus_count } => {
                write!(f, "grid with {bus_count} buses is too small (need at least 3)")
            }
            Self::BadNoiseStd { std } => {
                write!(f, "islanded-bus noise std must be positive, got {std}")
            }
            Self::Gauss(e) => write!(f, "{e}"),
        }
    }
}

impl From<GaussError> for GridError {
    fn from(e: GaussError) -> Self {
        Self::Gauss(e)
    }
}

/// A branch between two buses with a complex series admittance (per-unit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub admittance: Admittance,
}

/// Distribution-grid topology. Buses are `0..bus_count`; branch ids are
/// indices into `branches`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTopology {
    pub bus_count: usize,
    pub branches: Vec<Branch>,
    /// Per-bus total shunt admittance.
    pub shunt: Vec<Admittance>,
    pub slack: usize,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra] = rb;
        }
    }

    fn components(&mut self, n: usize) -> usize {
        let mut count = 0;
        for i in 0..n {
            if self.find(i) == i {
                count += 1;
            }
        }
        count
    }
}

impl GridTopology {
    pub fn new(
        bus_count: usize,
        branches: Vec<Branch>,
        shunt: Vec<Admittance>,
        slack: usize,
    ) -> Result<Self, GridError> {
        let top = Self { bus_count, branches, shunt, slack };
        top.validate()?;
        Ok(top)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.slack >= self.bus_count {
            return Err(GridError::UnknownBus { bus: self.slack, bus_count: self.bus_count });
        }
        for (id, b) in self.branches.iter().enumerate() {
            for bus in [b.from, b.to] {
                if bus >= self.bus_count {
                    return Err(GridError::UnknownBus { bus, bus_count: self.bus_count });
                }
            }
            if b.from == b.to {
                return Err(GridError::SelfLoop { bus: b.from });
            }
            if b.admittance.norm() == 0.0 {
                return Err(GridError::ZeroAdmittance { branch: id });
            }
        }
        if !self.is_connected() {
            return Err(GridError::Disconnected);
        }
        Ok(())
    }

    /// Union-find connectivity over the branch list.
    pub fn is_connected(&self) -> bool {
        let mut uf = UnionFind::new(self.bus_count);
        for b in &self.branches {
            uf.union(b.from, b.to);
        }
        uf.components(self.bus_count) == 1
    }

    /// Bus ids excluding the slack, in ascending order; row/column order of
    /// the reduced matrices and increment distributions.
    pub fn non_slack_buses(&self) -> Vec<usize> {
        (0..self.bus_count).filter(|&b| b != self.slack).collect()
    }
}

/// Branch-bus incidence matrix: one row per branch with `+1` at the from-bus
/// and `-1` at the to-bus (orientation is arbitrary on an undirected grid).
pub fn build_incidence(top: &GridTopology) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(top.branches.len(), top.bus_count);
    for (row, b) in top.branches.iter().enumerate() {
        a[(row, b.from)] = 1.0;
        a[(row, b.to)] = -1.0;
    }
    a
}

/// Nodal admittance matrix `Y = Aᵀ Y_E A + Y_s`.
pub fn build_admittance(top: &GridTopology) -> DMatrix<Admittance> {
    let a = build_incidence(top).map(|v| Admittance::new(v, 0.0));
    let y_e = DMatrix::from_diagonal(&DVector::from_iterator(
        top.branches.len(),
        top.branches.iter().map(|b| b.admittance),
    ));
    let mut y = a.transpose() * y_e * a;
    for (bus, &s) in top.shunt.iter().enumerate() {
        y[(bus, bus)] += s;
    }
    y
}

/// Removes the slack-bus row and column.
pub fn eliminate_slack(
    y: &DMatrix<Admittance>,
    slack: usize,
) -> Result<DMatrix<Admittance>, GridError> {
    if slack >= y.nrows() {
        return Err(GridError::UnknownBus { bus: slack, bus_count: y.nrows() });
    }
    let reduced = y.clone().remove_row(slack).remove_column(slack);
    let svd = reduced.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if !(condition < SINGULARITY_COND) {
        return Err(GridError::SingularReducedMatrix { condition });
    }
    Ok(reduced)
}

/// `Z = Y⁻¹` of the reduced admittance matrix.
pub fn impedance(y_reduced: &DMatrix<Admittance>) -> Result<DMatrix<Admittance>, GridError> {
    y_reduced
        .clone()
        .try_inverse()
        .ok_or(GridError::SingularReducedMatrix { condition: f64::INFINITY })
}

/// How the complex impedance matrix is reduced to the real sensitivity
/// channel handed to [`derive_increment_distribution`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SensitivityMode {
    /// Entry-wise real part (exact for resistive networks).
    #[default]
    Real,
    /// Entry-wise magnitude.
    Magnitude,
}

/// Real sensitivity matrix of a topology: admittance assembly, slack
/// elimination, inversion and the configured real reduction.
pub fn sensitivity(top: &GridTopology, mode: SensitivityMode) -> Result<DMatrix<f64>, GridError> {
    let y = build_admittance(top);
    let reduced = eliminate_slack(&y, top.slack)?;
    let z = impedance(&reduced)?;
    Ok(match mode {
        SensitivityMode::Real => z.map(|c| c.re),
        SensitivityMode::Magnitude => z.map(|c| c.norm()),
    })
}

/// Result of removing branches from a topology.
#[derive(Debug, Clone)]
pub struct OutageResult {
    pub topology: GridTopology,
    pub connected: bool,
}

/// Removes the listed branch ids; reports whether the remainder is connected.
pub fn apply_outage(top: &GridTopology, out_branches: &[usize]) -> Result<OutageResult, GridError> {
    for &id in out_branches {
        if id >= top.branches.len() {
            return Err(GridError::UnknownBranch { branch: id, branch_count: top.branches.len() });
        }
    }
    let branches: Vec<Branch> = top
        .branches
        .iter()
        .enumerate()
        .filter(|(id, _)| !out_branches.contains(id))
        .map(|(_, b)| *b)
        .collect();
    let topology = GridTopology {
        bus_count: top.bus_count,
        branches,
        shunt: top.shunt.clone(),
        slack: top.slack,
    };
    let connected = topology.is_connected();
    Ok(OutageResult { topology, connected })
}

/// Bus ids still electrically connected to the slack.
pub fn slack_component(top: &GridTopology) -> Vec<usize> {
    let mut uf = UnionFind::new(top.bus_count);
    for b in &top.branches {
        uf.union(b.from, b.to);
    }
    let root = uf.find(top.slack);
    (0..top.bus_count).filter(|&b| uf.find(b) == root).collect()
}

/// Exact increment distribution of a (possibly islanding) post-outage
/// topology, over the original non-slack index set.
///
/// Buses cut off from the slack are de-energized: their voltage increments
/// carry no network signal and are modeled as independent meter noise with
/// standard deviation `islanded_std`. Buses still connected follow the usual
/// linear model restricted to the surviving component.
pub fn post_outage_distribution(
    top_post: &GridTopology,
    inj: &InjectionStats,
    mode: SensitivityMode,
    islanded_std: f64,
) -> Result<IncrementDistribution, GridError> {
    let full = top_post.non_slack_buses();
    if inj.mean.len() != full.len() {
        return Err(GridError::Gauss(GaussError::DimensionMismatch {
            expected: full.len(),
            got: inj.mean.len(),
        }));
    }
    let comp = slack_component(top_post);
    if comp.len() == top_post.bus_count {
        let z = sensitivity(top_post, mode)?;
        return derive_increment_distribution(&z, inj);
    }
    if islanded_std <= 0.0 {
        return Err(GridError::BadNoiseStd { std: islanded_std });
    }
    // reindex the surviving component into its own topology
    let mut new_id = alloc::vec![usize::MAX; top_post.bus_count];
    for (j, &bus) in comp.iter().enumerate() {
        new_id[bus] = j;
    }
    let sub = GridTopology {
        bus_count: comp.len(),
        branches: top_post
            .branches
            .iter()
            .filter(|b| new_id[b.from] != usize::MAX && new_id[b.to] != usize::MAX)
            .map(|b| Branch { from: new_id[b.from], to: new_id[b.to], admittance: b.admittance })
            .collect(),
        shunt: comp.iter().map(|&b| top_post.shunt[b]).collect(),
        slack: new_id[top_post.slack],
    };
    // injections of the surviving non-slack buses, in sub order
    let keep: Vec<usize> = full
        .iter()
        .enumerate()
        .filter(|(_, &bus)| new_id[bus] != usize::MAX)
        .map(|(row, _)| row)
        .collect();
    let sub_inj = InjectionStats::new(
        DVector::from_iterator(keep.len(), keep.iter().map(|&r| inj.mean[r])),
        DVector::from_iterator(keep.len(), keep.iter().map(|&r| inj.std[r])),
    )?;
    let z = sensitivity(&sub, mode)?;
    let d = derive_increment_distribution(&z, &sub_inj)?;

    // embed into the original index set; islanded rows are pure meter noise
    let m = full.len();
    let mut mean = DVector::zeros(m);
    let mut cov = DMatrix::from_diagonal_element(m, m, islanded_std * islanded_std);
    for (a, &ra) in keep.iter().enumerate() {
        mean[ra] = d.mean()[a];
        for (b, &rb) in keep.iter().enumerate() {
            cov[(ra, rb)] = d.cov().matrix()[(a, b)];
        }
    }
    Ok(IncrementDistribution::new(mean, SymMatrix::symmetrized(cov))?)
}

/// Per-non-slack-bus current-injection statistics `ΔI_k ~ N(μ_k, σ_k²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionStats {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
}

impl InjectionStats {
    pub fn new(mean: DVector<f64>, std: DVector<f64>) -> Result<Self, GridError> {
        if mean.len() != std.len() {
            return Err(GridError::Gauss(GaussError::DimensionMismatch {
                expected: mean.len(),
                got: std.len(),
            }));
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(GridError::Gauss(GaussError::NotPositiveDefinite { min_eigenvalue: 0.0 }));
        }
        Ok(Self { mean, std })
    }

    /// Default synthetic statistics: μ_k ~ Unif(−0.01, 0.01) and
    /// σ_k ~ Unif(0.009, 0.011) per-unit, seeded. The σ spread is kept
    /// narrow on purpose: strongly heterogeneous injection noise pushes
    /// two-hop conditional correlations past the localization threshold
    /// δ_max = 0.5, which sits exactly at the homogeneous-noise boundary
    /// for leaf-sibling pairs.
    pub fn generate(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = DVector::from_fn(dim, |_, _| rng.gen_range(-0.01..0.01));
        let std = DVector::from_fn(dim, |_, _| rng.gen_range(0.009..0.011));
        Self { mean, std }
    }
}

/// Exact increment distribution for a real sensitivity matrix and injection
/// statistics: mean `Zμ`, covariance `Z diag(σ²) Zᵀ`.
pub fn derive_increment_distribution(
    z: &DMatrix<f64>,
    inj: &InjectionStats,
) -> Result<IncrementDistribution, GridError> {
    if z.ncols() != inj.mean.len() {
        return Err(GridError::Gauss(GaussError::DimensionMismatch {
            expected: z.ncols(),
            got: inj.mean.len(),
        }));
    }
    let mean = z * &inj.mean;
    let var = DVector::from_iterator(inj.std.len(), inj.std.iter().map(|&s| s * s));
    let cov = SymMatrix::symmetrized(z * DMatrix::from_diagonal(&var) * z.transpose());
    Ok(IncrementDistribution::new(mean, cov)?)
}

/// Kind of synthetic topology produced by [`generate_test_grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Radial,
    /// Spanning tree plus `ceil(M/8)` chords.
    Loopy,
}

/// Deterministic-from-seed synthetic grid: a random spanning tree over `m`
/// buses, plus chords for the loopy variant. Branch admittances are purely
/// resistive with conductance Unif(5, 15) per-unit; bus 0 is the slack.
pub fn generate_test_grid(kind: GridKind, m: usize, seed: u64) -> Result<GridTopology, GridError> {
    if m < 3 {
        return Err(GridError::TooSmall { bus_count: m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut branches = Vec::new();
    // random recursive tree: each bus attaches to a uniformly random earlier bus
    for bus in 1..m {
        let attach = rng.gen_range(0..bus);
        branches.push(Branch {
            from: attach,
            to: bus,
            admittance: Admittance::new(rng.gen_range(5.0..15.0), 0.0),
        });
    }
    if kind == GridKind::Loopy {
        let chords = m.div_ceil(8);
        let mut added = 0;
        while added < chords {
            let a = rng.gen_range(0..m);
            let b = rng.gen_range(0..m);
            if a == b {
                continue;
            }
            let (lo, hi) = (a.min(b), a.max(b));
            if branches.iter().any(|br| {
                (br.from.min(br.to), br.from.max(br.to)) == (lo, hi)
            }) {
                continue;
            }
            branches.push(Branch {
                from: lo,
                to: hi,
                admittance: Admittance::new(rng.gen_range(5.0..15.0), 0.0),
            });
            added += 1;
        }
    }
    GridTopology::new(m, branches, vec![Admittance::new(0.0, 0.0); m], 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;

    fn chain3() -> GridTopology {
        GridTopology::new(
            3,
            vec![
                Branch { from: 0, to: 1, admittance: Admittance::new(1.0, 0.0) },
                Branch { from: 1, to: 2, admittance: Admittance::new(1.0, 0.0) },
            ],
            vec![Admittance::new(0.0, 0.0); 3],
            0,
        )
        .unwrap()
    }

    fn numerical_rank(m: &DMatrix<f64>) -> usize {
        let svd = m.clone().svd(false, false);
        let tol = 1e-9 * svd.singular_values.max();
        svd.singular_values.iter().filter(|&&s| s > tol).count()
    }

    #[test]
    fn incidence_of_chain() {
        let a = build_incidence(&chain3());
        assert_eq!(a, DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 0.0, 1.0, -1.0]));
    }

    #[test]
    fn incidence_rank_is_m_minus_one_when_connected() {
        let top = generate_test_grid(GridKind::Loopy, 8, 42).unwrap();
        let a = build_incidence(&top);
        assert_eq!(numerical_rank(&a), 7);
    }

    #[test]
    fn incidence_rank_drops_per_component() {
        // two disjoint 2-bus components (constructed without validation)
        let top = GridTopology {
            bus_count: 4,
            branches: vec![
                Branch { from: 0, to: 1, admittance: Admittance::new(1.0, 0.0) },
                Branch { from: 2, to: 3, admittance: Admittance::new(1.0, 0.0) },
            ],
            shunt: vec![Admittance::new(0.0, 0.0); 4],
            slack: 0,
        };
        assert_eq!(numerical_rank(&build_incidence(&top)), 2);
    }

    #[test]
    fn two_bus_admittance() {
        let y = Admittance::new(3.0, -1.0);
        let top = GridTopology::new(
            2,
            vec![Branch { from: 0, to: 1, admittance: y }],
            vec![Admittance::new(0.0, 0.0); 2],
            0,
        )
        .unwrap();
        let a = build_admittance(&top);
        assert_eq!(a[(0, 0)], y);
        assert_eq!(a[(0, 1)], -y);
        assert_eq!(a[(1, 1)], y);
    }

    #[test]
    fn zero_shunt_rows_sum_to_zero() {
        let top = generate_test_grid(GridKind::Loopy, 10, 5).unwrap();
        let y = build_admittance(&top);
        for r in 0..10 {
            let sum: Admittance = y.row(r).iter().sum();
            assert!(sum.norm() <= 1e-12);
        }
    }

    #[test]
    fn admittance_is_exactly_symmetric() {
        let top = generate_test_grid(GridKind::Loopy, 12, 9).unwrap();
        let y = build_admittance(&top);
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(y[(i, j)], y[(j, i)]);
            }
        }
    }

    #[test]
    fn admittance_matches_stamping_oracle() {
        let top = generate_test_grid(GridKind::Loopy, 8, 77).unwrap();
        let y = build_admittance(&top);
        // per-branch stamping oracle
        let mut oracle = DMatrix::<Admittance>::zeros(8, 8);
        for b in &top.branches {
            oracle[(b.from, b.from)] += b.admittance;
            oracle[(b.to, b.to)] += b.admittance;
            oracle[(b.from, b.to)] -= b.admittance;
            oracle[(b.to, b.from)] -= b.admittance;
        }
        assert!((y - oracle).map(|c| c.norm()).max() <= 1e-12);
    }

    #[test]
    fn eliminate_slack_two_bus() {
        let y_br = Admittance::new(2.0, 0.0);
        let top = GridTopology::new(
            2,
            vec![Branch { from: 0, to: 1, admittance: y_br }],
            vec![Admittance::new(0.0, 0.0); 2],
            0,
        )
        .unwrap();
        let reduced = eliminate_slack(&build_admittance(&top), 0).unwrap();
        assert_eq!(reduced.nrows(), 1);
        assert_eq!(reduced[(0, 0)], y_br);
        let z = impedance(&reduced).unwrap();
        assert!((z[(0, 0)] - Admittance::new(0.5, 0.0)).norm() <= 1e-12);
    }

    #[test]
    fn reduced_matrix_invertible_despite_rank_deficient_full_matrix() {
        let top = generate_test_grid(GridKind::Loopy, 8, 3).unwrap();
        let y = build_admittance(&top);
        // the full zero-shunt Y is rank M-1 ...
        assert_eq!(numerical_rank(&y.map(|c| c.re)), 7);
        // ... but the slack-eliminated matrix is invertible
        let reduced = eliminate_slack(&y, 0).unwrap();
        let z = impedance(&reduced).unwrap();
        let residual = (&reduced * &z - DMatrix::<Admittance>::identity(7, 7))
            .map(|c| c.norm())
            .max();
        assert!(residual <= 1e-9);
    }

    #[test]
    fn islanded_grid_is_singular_after_elimination() {
        // two islands, slack in the first: the other island's block sums to zero
        let top = GridTopology {
            bus_count: 4,
            branches: vec![
                Branch { from: 0, to: 1, admittance: Admittance::new(4.0, 0.0) },
                Branch { from: 2, to: 3, admittance: Admittance::new(5.0, 0.0) },
            ],
            shunt: vec![Admittance::new(0.0, 0.0); 4],
            slack: 0,
        };
        let y = build_admittance(&top);
        assert!(matches!(
            eliminate_slack(&y, 0),
            Err(GridError::SingularReducedMatrix { .. })
        ));
    }

    #[test]
    fn impedance_round_trip_on_larger_grid() {
        let top = generate_test_grid(GridKind::Radial, 123, 11).unwrap();
        let reduced = eliminate_slack(&build_admittance(&top), 0).unwrap();
        let z = impedance(&reduced).unwrap();
        let residual = (&reduced * &z - DMatrix::<Admittance>::identity(122, 122))
            .map(|c| c.norm())
            .max();
        assert!(residual <= 1e-8, "residual {residual}");
    }

    #[test]
    fn slack_elimination_invertibility_over_seeded_grids() {
        for seed in 0..100u64 {
            let kind = if seed % 2 == 0 { GridKind::Radial } else { GridKind::Loopy };
            let top = generate_test_grid(kind, 3 + (seed as usize % 20), seed).unwrap();
            let reduced = eliminate_slack(&build_admittance(&top), top.slack);
            assert!(reduced.is_ok(), "seed {seed} produced a singular reduced matrix");
        }
    }

    #[test]
    fn outage_keeps_loopy_grid_connected() {
        let top = generate_test_grid(GridKind::Loopy, 8, 42).unwrap();
        assert_eq!(top.branches.len(), 8); // 7 tree edges + 1 chord
        // removing any branch on a cycle keeps the grid connected
        let mut connected_removals = 0;
        for id in 0..top.branches.len() {
            let out = apply_outage(&top, &[id]).unwrap();
            assert_eq!(out.topology.branches.len(), 7);
            if out.connected {
                connected_removals += 1;
            }
        }
        assert!(connected_removals >= 2, "chord cycle should tolerate removals");
    }

    #[test]
    fn leaf_removal_disconnects_radial_tree() {
        let top = generate_test_grid(GridKind::Radial, 8, 4).unwrap();
        for id in 0..top.branches.len() {
            let out = apply_outage(&top, &[id]).unwrap();
            assert!(!out.connected, "tree branch removal must disconnect");
        }
    }

    #[test]
    fn outage_rejects_unknown_branch() {
        let top = chain3();
        assert!(matches!(
            apply_outage(&top, &[99]),
            Err(GridError::UnknownBranch { .. })
        ));
    }

    #[test]
    fn union_find_matches_bfs_connectivity() {
        let top = generate_test_grid(GridKind::Loopy, 123, 8).unwrap();
        // remove two chords
        let n_tree = 122;
        let out = apply_outage(&top, &[n_tree, n_tree + 1]).unwrap();
        // BFS oracle
        let mut adj = vec![Vec::new(); 123];
        for b in &out.topology.branches {
            adj[b.from].push(b.to);
            adj[b.to].push(b.from);
        }
        let mut seen = vec![false; 123];
        let mut queue = vec![0usize];
        seen[0] = true;
        while let Some(u) = queue.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push(v);
                }
            }
        }
        assert_eq!(out.connected, seen.iter().all(|&s| s));
    }

    #[test]
    fn derive_distribution_identity_sensitivity() {
        let inj = InjectionStats::new(
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![0.5, 1.5]),
        )
        .unwrap();
        let d = derive_increment_distribution(&DMatrix::identity(2, 2), &inj).unwrap();
        assert_eq!(d.mean(), &inj.mean);
        assert!((d.cov().matrix()[(0, 0)] - 0.25).abs() <= 1e-14);
        assert!((d.cov().matrix()[(1, 1)] - 2.25).abs() <= 1e-14);
    }

    #[test]
    fn derive_distribution_scalar_case() {
        let z = DMatrix::from_element(1, 1, 0.7);
        let inj =
            InjectionStats::new(DVector::from_vec(vec![2.0]), DVector::from_vec(vec![3.0])).unwrap();
        let d = derive_increment_distribution(&z, &inj).unwrap();
        assert!((d.mean()[0] - 1.4).abs() <= 1e-14);
        assert!((d.cov().matrix()[(0, 0)] - 9.0 * 0.49).abs() <= 1e-12);
    }

    #[test]
    fn derived_distribution_matches_monte_carlo() {
        use rand::SeedableRng as _;
        let top = generate_test_grid(GridKind::Loopy, 6, 13).unwrap();
        let z = sensitivity(&top, SensitivityMode::Real).unwrap();
        let inj = InjectionStats::generate(5, 21);
        let d = derive_increment_distribution(&z, &inj).unwrap();
        // simulate ΔV = Z ΔI directly
        let mut rng = StdRng::seed_from_u64(55);
        let n = 50_000;
        let mut mean = DVector::<f64>::zeros(5);
        let mut cov = DMatrix::<f64>::zeros(5, 5);
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let di = DVector::from_fn(5, |r, _| {
                inj.mean[r] + inj.std[r] * rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            let dv = &z * di;
            mean += &dv;
            draws.push(dv);
        }
        mean /= n as f64;
        for dv in &draws {
            let c = dv - &mean;
            cov += &c * c.transpose();
        }
        cov /= n as f64;
        let rel = (&cov - d.cov().matrix()).norm() / d.cov().matrix().norm();
        assert!(rel <= 0.05, "covariance mismatch {rel}");
        let mean_err = (&mean - d.mean()).norm();
        assert!(mean_err <= 5.0 * d.cov().matrix().trace().sqrt() / (n as f64).sqrt());
    }

    #[test]
    fn cycle_outage_changes_increment_distribution() {
        let top = generate_test_grid(GridKind::Loopy, 8, 42).unwrap();
        let inj = InjectionStats::generate(7, 1);
        let pre = derive_increment_distribution(
            &sensitivity(&top, SensitivityMode::Real).unwrap(),
            &inj,
        )
        .unwrap();
        for id in 0..top.branches.len() {
            let out = apply_outage(&top, &[id]).unwrap();
            if !out.connected {
                continue;
            }
            let post = derive_increment_distribution(
                &sensitivity(&out.topology, SensitivityMode::Real).unwrap(),
                &inj,
            )
            .unwrap();
            assert!(post.kl_divergence(&pre).unwrap() > 0.0);
        }
    }

    #[test]
    fn generated_grids_are_deterministic() {
        let a = generate_test_grid(GridKind::Loopy, 8, 42).unwrap();
        let b = generate_test_grid(GridKind::Loopy, 8, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.bus_count, 8);
        assert!(a.is_connected());
    }

    #[test]
    fn validation_rejects_bad_topologies() {
        let bad = GridTopology::new(
            3,
            vec![Branch { from: 0, to: 0, admittance: Admittance::new(1.0, 0.0) }],
            vec![Admittance::new(0.0, 0.0); 3],
            0,
        );
        assert!(matches!(bad, Err(GridError::SelfLoop { .. })));
        let zero = GridTopology::new(
            3,
            vec![
                Branch { from: 0, to: 1, admittance: Admittance::new(0.0, 0.0) },
                Branch { from: 1, to: 2, admittance: Admittance::new(1.0, 0.0) },
            ],
            vec![Admittance::new(0.0, 0.0); 3],
            0,
        );
        assert!(matches!(zero, Err(GridError::ZeroAdmittance { .. })));
    }
}
