//! Low-rank plus outlier saliency.
//!
//! At every window step `τ` the vectorized regional slices are stacked as the
//! columns of a snapshot matrix `M_τ`. The best rank-`r` approximation in the
//! Frobenius norm is the SVD truncated to its `r` largest singular values
//! (Eckart–Young); whatever it leaves behind, `Ĉ_τ = M_τ − L̂_τ`, is the
//! outlier part. A column of `Ĉ_τ` equals `v − U_r U_rᵀ v`, the component of
//! that region's slice outside the common subspace, so its squared norm
//! measures how atypical the region is at that instant.
//!
//! A region is salient at `τ` when its outlier energy exceeds a fixed
//! fraction of the largest outlier energy at the same `τ`. The saliency map
//! counts, per region, the fraction of window steps at which it was salient.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sampling::SamplingPlan;
use crate::windowing::{Partition, RegionIndex, RegionalWindowSet};

/// Default outlier-energy ratio for selecting salient columns.
pub const DEFAULT_ENERGY_RATIO: f64 = 0.25;
/// Default saliency fraction for flagging a region.
pub const DEFAULT_THETA: f64 = 0.5;

/// Regional slices at one window step, one column per active region.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: DMatrix<f64>,
    labels: Vec<RegionIndex>,
}

impl SnapshotMatrix {
    /// Builds a matrix from explicit columns. All columns must share a
    /// length and labels must be unique.
    pub fn from_columns(columns: &[Vec<f64>], labels: Vec<RegionIndex>) -> Result<Self> {
        if columns.is_empty() || columns.len() != labels.len() {
            return Err(Error::Shape {
                expected: format!("{} labelled columns", labels.len()),
                got: format!("{} columns", columns.len()),
            });
        }
        let rows = columns[0].len();
        if rows == 0 || columns.iter().any(|c| c.len() != rows) {
            return Err(Error::Shape {
                expected: format!("columns of length {rows}"),
                got: "ragged columns".into(),
            });
        }
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("column labels must be unique".into()));
        }
        let data = DMatrix::from_fn(rows, columns.len(), |i, j| columns[j][i]);
        Ok(Self { data, labels })
    }

    pub fn from_matrix(data: DMatrix<f64>, labels: Vec<RegionIndex>) -> Result<Self> {
        let columns: Vec<Vec<f64>> = data.column_iter().map(|c| c.iter().copied().collect()).collect();
        Self::from_columns(&columns, labels)
    }

    pub fn row_dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn column_count(&self) -> usize {
        self.data.ncols()
    }

    pub fn labels(&self) -> &[RegionIndex] {
        &self.labels
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }
}

/// Stacks the slices of all active regions at window step `tau`. With a
/// sampling plan only the retained node positions are kept.
pub fn assemble_snapshot_matrix(
    windows: &RegionalWindowSet,
    tau: usize,
    sampling: Option<&SamplingPlan>,
) -> Result<SnapshotMatrix> {
    if tau >= windows.window_len() {
        return Err(Error::Bounds {
            what: "tau",
            index: tau,
            limit: windows.window_len(),
        });
    }
    let partition = windows.partition();
    if let Some(plan) = sampling {
        plan.check_shape(partition)?;
    }
    let labels = windows.active_regions();
    let columns: Vec<Vec<f64>> = labels
        .iter()
        .map(|&r| {
            let slice = windows.slice(r, tau).expect("active region carries a block");
            match sampling {
                None => slice.to_vec(),
                Some(plan) => plan.positions(partition.flat(r)).iter().map(|&k| slice[k]).collect(),
            }
        })
        .collect();
    SnapshotMatrix::from_columns(&columns, labels)
}

/// `M = L̂ + Ĉ` with `L̂` the best rank-`r` approximation.
#[derive(Debug, Clone)]
pub struct LowRankSplit {
    pub low_rank: DMatrix<f64>,
    pub outliers: DMatrix<f64>,
    pub rank_used: usize,
    /// All singular values of the input, non-increasing.
    pub singular_values: Vec<f64>,
}

/// Singular values and left/right singular vectors sorted by decreasing
/// singular value.
pub(crate) fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&k| svd.singular_values[k].max(0.0)).collect();
    let u_sorted = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let vt_sorted = DMatrix::from_fn(order.len(), v_t.ncols(), |i, j| v_t[(order[i], j)]);
    (u_sorted, sigma, vt_sorted)
}

pub fn truncated_low_rank(m: &SnapshotMatrix, r: usize) -> Result<LowRankSplit> {
    let max = m.row_dim().min(m.column_count());
    if r < 1 || r > max {
        return Err(Error::Rank { rank: r, max });
    }
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("snapshot matrix has non-finite entries".into()));
    }
    let (u, sigma, v_t) = sorted_svd(&m.data);
    let mut low_rank = DMatrix::zeros(m.row_dim(), m.column_count());
    for (k, s) in sigma.iter().enumerate().take(r) {
        let uk = u.column(k) * *s;
        low_rank += uk * v_t.row(k);
    }
    let outliers = &m.data - &low_rank;
    Ok(LowRankSplit {
        low_rank,
        outliers,
        rank_used: r,
        singular_values: sigma,
    })
}

/// Rank at the knee of a singular-value curve.
///
/// Values are floored at `σ₁·10⁻¹²` and taken in `log10`. The corner is the
/// point farthest (perpendicular distance) from the chord joining the first
/// and last points. A corner below the chord is the first value of the slow
/// tail, so the values before it are kept; a corner above the chord is the
/// last value of the leading group and is kept itself.
pub fn knee_rank(singular_values: &[f64]) -> Result<usize> {
    let n = singular_values.len();
    if n < 3 {
        return Err(Error::DegenerateSpectrum(format!("need at least 3 values, got {n}")));
    }
    let first = singular_values[0];
    if !(first > 0.0 && first.is_finite()) {
        return Err(Error::DegenerateSpectrum(
            "leading singular value must be positive".into(),
        ));
    }
    let floor = first * 1e-12;
    let logs: Vec<f64> = singular_values.iter().map(|&s| s.max(floor).log10()).collect();
    let (x0, y0) = (1.0, logs[0]);
    let (x1, y1) = (n as f64, logs[n - 1]);
    let (ax, ay) = (x1 - x0, y1 - y0);
    let norm = ax.hypot(ay);
    let mut best = (0usize, 0.0f64, 0.0f64);
    for (k, &y) in logs.iter().enumerate() {
        let x = (k + 1) as f64;
        // cross product sign: positive above the chord
        let signed = (ax * (y - y0) - ay * (x - x0)) / norm;
        if signed.abs() > best.1 {
            best = (k + 1, signed.abs(), signed);
        }
    }
    let (index, distance, signed) = best;
    if index == 0 || distance == 0.0 {
        return Ok(1);
    }
    let rank = if signed < 0.0 { index - 1 } else { index };
    Ok(rank.clamp(1, n))
}

/// Squared column norms of the outlier matrix, in column order.
pub fn outlier_energies(split: &LowRankSplit) -> Vec<f64> {
    split.outliers.column_iter().map(|c| c.norm_squared()).collect()
}

/// Columns whose energy strictly exceeds `ratio · max`. Empty when every
/// energy is zero.
pub fn salient_columns(energies: &[f64], ratio: f64) -> Vec<usize> {
    let max = energies.iter().copied().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let threshold = ratio * max;
    energies
        .iter()
        .enumerate()
        .filter(|(_, &e)| e > threshold)
        .map(|(k, _)| k)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankPolicy {
    /// Knee of the `τ = 0` spectrum, applied to every window step.
    Auto,
    Fixed(usize),
}

/// Per-region salient fractions over one window.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    partition: Partition,
    /// Salient-step counts; `None` for inactive regions.
    counts: Vec<Option<usize>>,
    window_len: usize,
    ratio: f64,
    rank_used: usize,
    leading_spectrum: Vec<f64>,
}

impl SaliencyMap {
    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn energy_ratio(&self) -> f64 {
        self.ratio
    }

    pub fn rank_used(&self) -> usize {
        self.rank_used
    }

    /// Singular values of the `τ = 0` snapshot matrix (the knee plot).
    pub fn leading_spectrum(&self) -> &[f64] {
        &self.leading_spectrum
    }

    /// Salient fraction in `[0, 1]`, or `None` where there is no data.
    pub fn value(&self, r: RegionIndex) -> Option<f64> {
        self.counts[self.partition.flat(r)].map(|c| c as f64 / self.window_len as f64)
    }

    pub fn count(&self, r: RegionIndex) -> Option<usize> {
        self.counts[self.partition.flat(r)]
    }

    pub fn is_active(&self, r: RegionIndex) -> bool {
        self.counts[self.partition.flat(r)].is_some()
    }

    /// `regions_x` rows by `regions_y` columns, `NA` where inactive.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.partition.regions_x() {
            let row: Vec<String> = (0..self.partition.regions_y())
                .map(|j| match self.value(RegionIndex::new(i, j)) {
                    Some(v) => format!("{v}"),
                    None => "NA".to_string(),
                })
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    /// Binary 8-bit PGM in the CSV layout; inactive regions are 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (h, w) = (self.partition.regions_x(), self.partition.regions_y());
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for i in 0..h {
            for j in 0..w {
                out.push(match self.value(RegionIndex::new(i, j)) {
                    Some(v) => (255.0 * v).round() as u8,
                    None => 255,
                });
            }
        }
        out
    }

    /// Companion PGM for [`Self::to_pgm`]: 255 where the map has data, 0 elsewhere.
    pub fn mask_pgm(&self) -> Vec<u8> {
        let (h, w) = (self.partition.regions_x(), self.partition.regions_y());
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for i in 0..h {
            for j in 0..w {
                out.push(if self.is_active(RegionIndex::new(i, j)) { 255 } else { 0 });
            }
        }
        out
    }
}

/// Aggregates salient selections over every step of the window.
pub fn saliency_map(
    windows: &RegionalWindowSet,
    rank: RankPolicy,
    ratio: f64,
    sampling: Option<&SamplingPlan>,
) -> Result<SaliencyMap> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Parameter(format!(
            "energy ratio must lie in (0, 1], got {ratio}"
        )));
    }
    let first = assemble_snapshot_matrix(windows, 0, sampling)?;
    let (_, leading_spectrum, _) = sorted_svd(first.matrix());
    let r = match rank {
        RankPolicy::Fixed(r) => r,
        RankPolicy::Auto => knee_rank(&leading_spectrum)?,
    };

    let selections: Vec<Vec<RegionIndex>> = (0..windows.window_len())
        .into_par_iter()
        .map(|tau| {
            let m = if tau == 0 {
                first.clone()
            } else {
                assemble_snapshot_matrix(windows, tau, sampling)?
            };
            let split = truncated_low_rank(&m, r)?;
            let energies = outlier_energies(&split);
            Ok(salient_columns(&energies, ratio)
                .into_iter()
                .map(|k| m.labels()[k])
                .collect())
        })
        .collect::<Result<_>>()?;

    let partition = *windows.partition();
    let mut counts: Vec<Option<usize>> = partition.regions().map(|r| windows.is_active(r).then_some(0)).collect();
    for chosen in &selections {
        for &region in chosen {
            if let Some(c) = counts[partition.flat(region)].as_mut() {
                *c += 1;
            }
        }
    }
    Ok(SaliencyMap {
        partition,
        counts,
        window_len: windows.window_len(),
        ratio,
        rank_used: r,
        leading_spectrum,
    })
}

/// Active regions whose salient fraction reaches `theta`.
pub fn classify(map: &SaliencyMap, theta: f64) -> Vec<RegionIndex> {
    map.partition
        .regions()
        .filter(|&r| map.value(r).is_some_and(|v| v >= theta))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<RegionIndex> {
        (0..n).map(|k| RegionIndex::new(k, 0)).collect()
    }

    fn frob(m: &DMatrix<f64>) -> f64 {
        m.norm()
    }

    #[test]
    fn rank_one_is_recovered_exactly() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [2.0, 1.0, -1.0];
        let cols: Vec<Vec<f64>> = v.iter().map(|&b| u.iter().map(|&a| a * b).collect()).collect();
        let m = SnapshotMatrix::from_columns(&cols, labels(3)).unwrap();
        let split = truncated_low_rank(&m, 1).unwrap();
        assert!(frob(&split.outliers) <= 1e-10 * frob(m.matrix()));
    }

    #[test]
    fn diagonal_rank_two() {
        let m =
            SnapshotMatrix::from_matrix(DMatrix::from_diagonal(&nalgebra::dvector![3.0, 2.0, 1.0]), labels(3)).unwrap();
        let split = truncated_low_rank(&m, 2).unwrap();
        let expected = DMatrix::from_diagonal(&nalgebra::dvector![3.0, 2.0, 0.0]);
        assert!((&split.low_rank - expected).norm() < 1e-12);
        assert!((frob(&split.outliers) - 1.0).abs() < 1e-12);
        assert_eq!(split.singular_values.len(), 3);
        assert!((split.singular_values[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn full_rank_leaves_nothing() {
        let m = SnapshotMatrix::from_matrix(DMatrix::from_fn(5, 3, |i, j| ((i * 7 + j * 3) as f64).sin()), labels(3))
            .unwrap();
        let split = truncated_low_rank(&m, 3).unwrap();
        assert!(frob(&split.outliers) < 1e-12);
    }

    #[test]
    fn rank_bounds() {
        let m = SnapshotMatrix::from_matrix(DMatrix::from_element(4, 3, 1.0), labels(3)).unwrap();
        assert!(matches!(truncated_low_rank(&m, 0), Err(Error::Rank { .. })));
        assert!(matches!(
            truncated_low_rank(&m, 4),
            Err(Error::Rank { rank: 4, max: 3 })
        ));
    }

    #[test]
    fn non_finite_entries_rejected() {
        let m = SnapshotMatrix::from_matrix(DMatrix::from_element(4, 3, f64::NAN), labels(3)).unwrap();
        assert!(matches!(truncated_low_rank(&m, 1), Err(Error::Data(_))));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let cols = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let dup = vec![RegionIndex::new(0, 0), RegionIndex::new(0, 0)];
        assert!(SnapshotMatrix::from_columns(&cols, dup).is_err());
    }

    #[test]
    fn knee_of_step_spectrum() {
        assert_eq!(knee_rank(&[10.0, 9.0, 8.0, 0.1, 0.09, 0.08, 0.07]).unwrap(), 3);
    }

    #[test]
    fn knee_of_geometric_decay_is_in_range() {
        let s: Vec<f64> = (0..20).map(|k| 0.7_f64.powi(k)).collect();
        let r = knee_rank(&s).unwrap();
        assert!((1..=20).contains(&r));
    }

    #[test]
    fn knee_degenerate() {
        assert!(matches!(knee_rank(&[1.0, 0.5]), Err(Error::DegenerateSpectrum(_))));
        assert!(knee_rank(&[0.0, 0.0, 0.0]).is_err());
        // trailing zeros are floored instead of producing -inf
        assert!(knee_rank(&[5.0, 4.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn energies_of_simple_outliers() {
        let zero = LowRankSplit {
            low_rank: DMatrix::zeros(3, 2),
            outliers: DMatrix::zeros(3, 2),
            rank_used: 1,
            singular_values: vec![0.0, 0.0],
        };
        assert_eq!(outlier_energies(&zero), vec![0.0, 0.0]);
        let mut unit = zero.clone();
        unit.outliers[(1, 0)] = 1.0;
        assert_eq!(outlier_energies(&unit), vec![1.0, 0.0]);
    }

    #[test]
    fn salient_threshold_edges() {
        assert_eq!(salient_columns(&[10.0, 1.0, 1.0, 4.0], 0.25), vec![0, 3]);
        assert!(salient_columns(&[0.0, 0.0], 0.25).is_empty());
        assert!(salient_columns(&[3.0, 1.0, 2.0], 1.0).is_empty());
        assert!(salient_columns(&[2.0, 2.0, 2.0], 1.0).is_empty());
        assert_eq!(salient_columns(&[2.0, 2.0, 2.0], 0.99), vec![0, 1, 2]);
    }

    #[test]
    fn classify_threshold() {
        let partition = crate::windowing::make_partition(3, 2, 2, 1).unwrap();
        let map = SaliencyMap {
            partition,
            counts: vec![Some(9), Some(3)],
            window_len: 10,
            ratio: 0.25,
            rank_used: 1,
            leading_spectrum: vec![],
        };
        assert_eq!(classify(&map, 0.5), vec![RegionIndex::new(0, 0)]);
        assert!(classify(&map, 0.91).is_empty());
        assert_eq!(map.to_csv(), "0.9\n0.3\n");
    }

    #[test]
    fn counting_fraction() {
        let partition = crate::windowing::make_partition(3, 3, 2, 1).unwrap();
        let map = SaliencyMap {
            partition,
            counts: vec![Some(6), None],
            window_len: 11,
            ratio: 0.25,
            rank_used: 1,
            leading_spectrum: vec![],
        };
        assert_eq!(map.value(RegionIndex::new(0, 0)), Some(6.0 / 11.0));
        assert_eq!(map.value(RegionIndex::new(1, 0)), None);
        assert_eq!(map.to_csv(), format!("{}\nNA\n", 6.0 / 11.0));
        let pgm = map.to_pgm();
        assert_eq!(&pgm[pgm.len() - 2..], &[139, 255]);
        let mask = map.mask_pgm();
        assert_eq!(&mask[mask.len() - 2..], &[255, 0]);
    }
}
