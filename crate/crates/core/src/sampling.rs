//! Spatial subsampling masks, detection metrics and the Monte Carlo sweep.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::platesim::DefectSpec;
use crate::windowing::{Partition, RegionIndex};

/// Fewest retained node positions that still make a usable mask.
pub const MIN_RETAINED: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Full,
    Random { seed: u64 },
    DoubleCross { stride: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sharing {
    /// One pattern used for every region.
    #[default]
    SharedAcrossRegions,
    /// Each region draws its own pattern.
    PerRegion,
}

/// Retained node positions inside a `p1 × p2` region (x fastest).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    p1: usize,
    p2: usize,
    positions: Vec<usize>,
    provenance: Provenance,
    sharing: Sharing,
}

impl Mask {
    pub fn from_positions(p1: usize, p2: usize, mut positions: Vec<usize>, provenance: Provenance) -> Result<Self> {
        positions.sort_unstable();
        positions.dedup();
        if positions.len() < MIN_RETAINED {
            return Err(Error::Mask(format!(
                "{} retained positions, need at least {MIN_RETAINED}",
                positions.len()
            )));
        }
        if positions.last().is_some_and(|&k| k >= p1 * p2) {
            return Err(Error::Mask("position outside the region".into()));
        }
        Ok(Self {
            p1,
            p2,
            positions,
            provenance,
            sharing: Sharing::SharedAcrossRegions,
        })
    }

    pub fn full(p1: usize, p2: usize) -> Result<Self> {
        Self::from_positions(p1, p2, (0..p1 * p2).collect(), Provenance::Full)
    }

    pub fn p1(&self) -> usize {
        self.p1
    }

    pub fn p2(&self) -> usize {
        self.p2
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn retained(&self) -> usize {
        self.positions.len()
    }

    pub fn achieved_ratio(&self) -> f64 {
        self.positions.len() as f64 / (self.p1 * self.p2) as f64
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn sharing(&self) -> Sharing {
        self.sharing
    }

    pub fn contains(&self, l: usize, m: usize) -> bool {
        self.positions.binary_search(&(m * self.p1 + l)).is_ok()
    }
}

fn retained_count(p1: usize, p2: usize, target_ratio: f64) -> Result<usize> {
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::Mask(format!(
            "target ratio must lie in (0, 1], got {target_ratio}"
        )));
    }
    let count = (target_ratio * (p1 * p2) as f64).round() as usize;
    if count < MIN_RETAINED {
        return Err(Error::Mask(format!(
            "ratio {target_ratio} keeps {count} of {} nodes, need at least {MIN_RETAINED}",
            p1 * p2
        )));
    }
    Ok(count)
}

fn draw(p1: usize, p2: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    index::sample(rng, p1 * p2, count).into_vec()
}

/// Uniformly random subset of `round(target_ratio · p1 p2)` positions,
/// reproducible from `seed`.
pub fn random_mask(p1: usize, p2: usize, target_ratio: f64, seed: u64) -> Result<Mask> {
    let count = retained_count(p1, p2, target_ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mask::from_positions(p1, p2, draw(p1, p2, count, &mut rng), Provenance::Random { seed })
}

/// Middle row, middle column and both diagonals of a square region with an
/// odd side, keeping every `stride`-th node counted from the centre.
pub fn double_cross_mask(p1: usize, p2: usize, stride: usize) -> Result<Mask> {
    if p1 != p2 || p1.is_multiple_of(2) {
        return Err(Error::Geometry(format!(
            "double cross needs a square region with an odd side, got {p1}x{p2}"
        )));
    }
    if ![1, 2, 4].contains(&stride) {
        return Err(Error::Mask(format!("stride must be 1, 2 or 4, got {stride}")));
    }
    let p = p1 as isize;
    let c = (p - 1) / 2;
    let mut positions = Vec::new();
    for t in (-c..=c).filter(|t| t.rem_euclid(stride as isize) == 0) {
        for (l, m) in [(c + t, c), (c, c + t), (c + t, c + t), (c + t, c - t)] {
            positions.push((m * p + l) as usize);
        }
    }
    Mask::from_positions(p1, p2, positions, Provenance::DoubleCross { stride })
}

/// Node positions used for each region's column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SamplingPlan {
    Shared(Mask),
    /// One mask per region, indexed by flat region index.
    PerRegion(Vec<Mask>),
}

impl SamplingPlan {
    pub fn positions(&self, region_flat: usize) -> &[usize] {
        match self {
            SamplingPlan::Shared(m) => m.positions(),
            SamplingPlan::PerRegion(masks) => masks[region_flat].positions(),
        }
    }

    pub fn check_shape(&self, partition: &Partition) -> Result<()> {
        let masks: &[Mask] = match self {
            SamplingPlan::Shared(m) => std::slice::from_ref(m),
            SamplingPlan::PerRegion(ms) => {
                if ms.len() != partition.region_count() {
                    return Err(Error::Shape {
                        expected: format!("{} region masks", partition.region_count()),
                        got: format!("{}", ms.len()),
                    });
                }
                ms
            }
        };
        let retained = masks[0].retained();
        for m in masks {
            if (m.p1, m.p2) != (partition.p1(), partition.p2()) {
                return Err(Error::Shape {
                    expected: format!("{}x{} mask", partition.p1(), partition.p2()),
                    got: format!("{}x{} mask", m.p1, m.p2),
                });
            }
            if m.retained() != retained {
                return Err(Error::Shape {
                    expected: format!("{retained} retained positions in every region"),
                    got: format!("{}", m.retained()),
                });
            }
        }
        Ok(())
    }

    pub fn achieved_ratio(&self) -> f64 {
        match self {
            SamplingPlan::Shared(m) => m.achieved_ratio(),
            SamplingPlan::PerRegion(ms) => ms[0].achieved_ratio(),
        }
    }
}

/// Random sampling plan for one trial. Per-region masks draw from
/// independent ChaCha streams of the same seed, one stream per region.
pub fn random_plan(partition: &Partition, target_ratio: f64, seed: u64, sharing: Sharing) -> Result<SamplingPlan> {
    let (p1, p2) = (partition.p1(), partition.p2());
    match sharing {
        Sharing::SharedAcrossRegions => Ok(SamplingPlan::Shared(random_mask(p1, p2, target_ratio, seed)?)),
        Sharing::PerRegion => {
            let count = retained_count(p1, p2, target_ratio)?;
            let masks = (0..partition.region_count())
                .map(|k| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(k as u64);
                    let mut mask =
                        Mask::from_positions(p1, p2, draw(p1, p2, count, &mut rng), Provenance::Random { seed })?;
                    mask.sharing = Sharing::PerRegion;
                    Ok(mask)
                })
                .collect::<Result<_>>()?;
            Ok(SamplingPlan::PerRegion(masks))
        }
    }
}

/// Regions that truly contain an anomaly.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GroundTruth {
    regions: BTreeSet<RegionIndex>,
}

impl GroundTruth {
    pub fn new(regions: impl IntoIterator<Item = RegionIndex>) -> Self {
        Self {
            regions: regions.into_iter().collect(),
        }
    }

    /// Regions holding at least one altered cell of any defect.
    pub fn from_defects(defects: &[DefectSpec], partition: &Partition) -> Self {
        let cells_x = partition.n1() - 1;
        let cells_y = partition.n2() - 1;
        let (span_x, span_y) = (partition.p1() - 1, partition.p2() - 1);
        let regions = defects
            .iter()
            .flat_map(|d| d.cells(cells_x, cells_y))
            .map(|(i, j)| RegionIndex::new(i / span_x, j / span_y))
            .collect();
        Self { regions }
    }

    pub fn regions(&self) -> &BTreeSet<RegionIndex> {
        &self.regions
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn contains(&self, r: &RegionIndex) -> bool {
        self.regions.contains(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DetectionMetrics {
    /// Flagged regions that contain an anomaly.
    pub correct_discoveries: usize,
    /// Flagged regions that contain none.
    pub false_discoveries: usize,
    /// Anomalies with a flagged region within Chebyshev distance 1.
    pub regionally_discovered: usize,
    /// Flagged regions at Chebyshev distance ≥ 2 from every anomaly.
    pub regional_false: usize,
    /// False discoveries inside the 3×3 block at the source corner.
    pub origin_false: usize,
}

/// The 3×3 block of regions anchored at `corner`, shifted to stay inside
/// the partition.
pub fn origin_block(partition: &Partition, corner: RegionIndex) -> Vec<RegionIndex> {
    let span = |c: usize, n: usize| {
        let lo = c.saturating_sub(1).min(n.saturating_sub(3));
        lo..(lo + 3).min(n)
    };
    let mut out = Vec::new();
    for j in span(corner.j, partition.regions_y()) {
        for i in span(corner.i, partition.regions_x()) {
            out.push(RegionIndex::new(i, j));
        }
    }
    out
}

pub fn detection_metrics(
    flagged: &[RegionIndex],
    truth: &GroundTruth,
    partition: &Partition,
    source_corner: RegionIndex,
) -> DetectionMetrics {
    let flagged: BTreeSet<RegionIndex> = flagged.iter().copied().collect();
    let origin = origin_block(partition, source_corner);
    let mut m = DetectionMetrics::default();
    for r in &flagged {
        if truth.contains(r) {
            m.correct_discoveries += 1;
        } else {
            m.false_discoveries += 1;
            if origin.contains(r) {
                m.origin_false += 1;
            }
        }
        if truth.regions().iter().all(|t| t.chebyshev(r) >= 2) {
            m.regional_false += 1;
        }
    }
    m.regionally_discovered = truth
        .regions()
        .iter()
        .filter(|t| flagged.iter().any(|f| f.chebyshev(t) <= 1))
        .count();
    m
}

/// Averages of [`DetectionMetrics`] over the trials at one sampling ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub nz: f64,
    pub correct: f64,
    pub false_discoveries: f64,
    pub regional_correct: f64,
    pub regional_false: f64,
    pub origin_false: f64,
    /// Standard error of `regional_correct`.
    pub regional_correct_stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

impl SweepRow {
    pub fn from_trials(nz: f64, seed: u64, metrics: &[DetectionMetrics]) -> Self {
        let n = metrics.len() as f64;
        let mean = |f: fn(&DetectionMetrics) -> usize| metrics.iter().map(|m| f(m) as f64).sum::<f64>() / n;
        let regional_correct = mean(|m| m.regionally_discovered);
        let var = if metrics.len() > 1 {
            metrics
                .iter()
                .map(|m| (m.regionally_discovered as f64 - regional_correct).powi(2))
                .sum::<f64>()
                / (n - 1.0)
        } else {
            0.0
        };
        Self {
            nz,
            correct: mean(|m| m.correct_discoveries),
            false_discoveries: mean(|m| m.false_discoveries),
            regional_correct,
            regional_false: mean(|m| m.regional_false),
            origin_false: mean(|m| m.origin_false),
            regional_correct_stderr: (var / n).sqrt(),
            trials: metrics.len(),
            seed,
        }
    }
}

pub const SWEEP_CSV_HEADER: &str = "nz,correct,false,regional_correct,regional_false,origin_false,trials,seed";

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.nz,
            r.correct,
            r.false_discoveries,
            r.regional_correct,
            r.regional_false,
            r.origin_false,
            r.trials,
            r.seed
        ));
    }
    s
}
