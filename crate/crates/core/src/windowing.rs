//! Region partition and time-of-flight windowing.
//!
//! The node grid is tiled by `regions_x × regions_y` rectangles that share
//! their boundary rows and columns, so each region holds
//! `p = (n − 1)/regions + 1` nodes per side. For every region the expected
//! arrival of the wave-packet centroid at the region centroid is
//!
//! ```text
//! t_c = |r_c| / c_g + N_c / (2ν)
//! ```
//!
//! and the region keeps the `T_w` samples starting at that instant. Regions
//! the wave has not reached (or whose window overruns the record) are left
//! inactive.

use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};
use crate::platesim::ExcitationSpec;
use crate::wavecube::{DataCube, GridPoint};

/// Default window length in samples.
pub const DEFAULT_WINDOW_LEN: usize = 11;

/// Window RMS below this fraction of the cube peak counts as untouched.
pub const SILENT_REGION_RATIO: f64 = 1e-12;

/// Region address: `i` along x, `j` along y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionIndex {
    pub i: usize,
    pub j: usize,
}

impl RegionIndex {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    /// Chebyshev (8-neighbour) distance.
    pub fn chebyshev(&self, other: &RegionIndex) -> usize {
        self.i.abs_diff(other.i).max(self.j.abs_diff(other.j))
    }
}

/// Tiling of an `n1 × n2` grid into regions sharing their sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    n1: usize,
    n2: usize,
    regions_x: usize,
    regions_y: usize,
    p1: usize,
    p2: usize,
}

pub fn make_partition(n1: usize, n2: usize, regions_x: usize, regions_y: usize) -> Result<Partition> {
    if regions_x < 1 || regions_y < 1 {
        return Err(Error::Partition("region counts must be at least 1".into()));
    }
    if n1 < 2 || n2 < 2 {
        return Err(Error::Partition(format!("grid {n1}x{n2} is too small")));
    }
    for (n, r, axis) in [(n1, regions_x, "x"), (n2, regions_y, "y")] {
        if (n - 1) % r != 0 {
            return Err(Error::Partition(format!(
                "{} node intervals along {axis} are not divisible by {r} regions (p = (n-1)/regions + 1 must be integral)",
                n - 1
            )));
        }
    }
    Ok(Partition {
        n1,
        n2,
        regions_x,
        regions_y,
        p1: (n1 - 1) / regions_x + 1,
        p2: (n2 - 1) / regions_y + 1,
    })
}

impl Partition {
    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn regions_x(&self) -> usize {
        self.regions_x
    }

    pub fn regions_y(&self) -> usize {
        self.regions_y
    }

    pub fn p1(&self) -> usize {
        self.p1
    }

    pub fn p2(&self) -> usize {
        self.p2
    }

    /// Regions always share their boundary nodes with their neighbours.
    pub fn shares_boundaries(&self) -> bool {
        true
    }

    pub fn region_count(&self) -> usize {
        self.regions_x * self.regions_y
    }

    /// Flat index, x fastest.
    pub fn flat(&self, r: RegionIndex) -> usize {
        r.j * self.regions_x + r.i
    }

    pub fn unflat(&self, k: usize) -> RegionIndex {
        RegionIndex::new(k % self.regions_x, k / self.regions_x)
    }

    pub fn regions(&self) -> impl Iterator<Item = RegionIndex> + '_ {
        (0..self.region_count()).map(|k| self.unflat(k))
    }

    pub fn check(&self, r: RegionIndex) -> Result<()> {
        if r.i >= self.regions_x {
            return Err(Error::Bounds {
                what: "region i",
                index: r.i,
                limit: self.regions_x,
            });
        }
        if r.j >= self.regions_y {
            return Err(Error::Bounds {
                what: "region j",
                index: r.j,
                limit: self.regions_y,
            });
        }
        Ok(())
    }

    /// First node `(l, m)` of the region.
    pub fn origin(&self, r: RegionIndex) -> GridPoint {
        GridPoint::new(r.i * (self.p1 - 1), r.j * (self.p2 - 1))
    }

    /// Centroid of the region's nodal bounding box, in meters.
    pub fn region_centroid(&self, r: RegionIndex, dx: f64) -> Result<(f64, f64)> {
        self.check(r)?;
        let o = self.origin(r);
        let cx = (o.l as f64 + 0.5 * (self.p1 - 1) as f64) * dx;
        let cy = (o.m as f64 + 0.5 * (self.p2 - 1) as f64) * dx;
        Ok((cx, cy))
    }

    /// Region containing node `(l, m)`. Shared boundary nodes resolve to the
    /// lower-index region.
    pub fn region_of_node(&self, p: GridPoint) -> RegionIndex {
        let i = if p.l == 0 { 0 } else { (p.l - 1) / (self.p1 - 1) };
        let j = if p.m == 0 { 0 } else { (p.m - 1) / (self.p2 - 1) };
        RegionIndex::new(i.min(self.regions_x - 1), j.min(self.regions_y - 1))
    }

    /// Region containing a point given as fractions of the plate side.
    pub fn region_of_fraction(&self, x: f64, y: f64) -> RegionIndex {
        let i = ((x * self.regions_x as f64).floor().max(0.0) as usize).min(self.regions_x - 1);
        let j = ((y * self.regions_y as f64).floor().max(0.0) as usize).min(self.regions_y - 1);
        RegionIndex::new(i, j)
    }
}

/// Arrival of the packet centre: front time `|r|/c_g` plus half the burst.
pub fn arrival_time(centroid_distance: f64, group_speed: f64, excitation: &ExcitationSpec) -> f64 {
    centroid_distance / group_speed + f64::from(excitation.cycle_count) / (2.0 * excitation.carrier_frequency)
}

/// Two virtual sensors used for a time-of-flight speed estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePair {
    near: GridPoint,
    far: GridPoint,
    separation: f64,
}

impl ProbePair {
    pub fn new(near: GridPoint, far: GridPoint, dx: f64) -> Result<Self> {
        if near == far {
            return Err(Error::Parameter("probe points must be distinct".into()));
        }
        let dl = near.l as f64 - far.l as f64;
        let dm = near.m as f64 - far.m as f64;
        Ok(Self {
            near,
            far,
            separation: dx * dl.hypot(dm),
        })
    }

    /// Probes on the line `y = row` at the given x fractions of the plate.
    pub fn along_row(n1: usize, row: usize, near_fraction: f64, far_fraction: f64, dx: f64) -> Result<Self> {
        let at = |f: f64| ((f * (n1 - 1) as f64).round() as usize).min(n1 - 1);
        Self::new(
            GridPoint::new(at(near_fraction), row),
            GridPoint::new(at(far_fraction), row),
            dx,
        )
    }

    pub fn near(&self) -> GridPoint {
        self.near
    }

    pub fn far(&self) -> GridPoint {
        self.far
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }
}

/// Magnitude of the analytic signal (Hilbert envelope).
pub fn envelope(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    // Pad to suppress circular wrap-around of the record end onto its start.
    let len = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    fwd.process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        if k == 0 || k == len / 2 {
            continue;
        } else if k < len / 2 {
            *c *= 2.0;
        } else {
            *c = Complex::new(0.0, 0.0);
        }
    }
    inv.process(&mut buf);
    buf.iter().take(n).map(|c| c.norm() / len as f64).collect()
}

/// Envelope level, relative to the record maximum, that marks the first
/// arrival of a packet.
pub const ARRIVAL_LEVEL: f64 = 0.25;

/// Fractional sample index of the first envelope peak reaching
/// [`ARRIVAL_LEVEL`] of the maximum, refined by a parabola through the peak
/// and its neighbours. Later echoes from edges and scatterers may be louder
/// than the direct packet, so the global maximum alone is not used.
fn first_arrival_peak(values: &[f64]) -> f64 {
    let top = values.iter().fold(0.0_f64, |a, &v| a.max(v));
    let mut k = values.iter().position(|&v| v >= ARRIVAL_LEVEL * top).unwrap_or(0);
    while k + 1 < values.len() && values[k + 1] > values[k] {
        k += 1;
    }
    if k == 0 || k + 1 >= values.len() {
        return k as f64;
    }
    let (a, b, c) = (values[k - 1], values[k], values[k + 1]);
    let denom = a - 2.0 * b + c;
    if denom.abs() < f64::MIN_POSITIVE {
        return k as f64;
    }
    k as f64 + 0.5 * (a - c) / denom
}

/// Group speed from the first-arrival envelope-peak delay between two probes.
pub fn estimate_group_velocity(cube: &DataCube, probes: &ProbePair) -> Result<f64> {
    let near = cube.history(probes.near)?;
    let far = cube.history(probes.far)?;
    for (h, p) in [(&near, probes.near), (&far, probes.far)] {
        if h.iter().all(|&v| v == 0.0) {
            return Err(Error::NoSignal(format!("probe at ({}, {}) recorded nothing", p.l, p.m)));
        }
    }
    let delay = (first_arrival_peak(&envelope(&far)) - first_arrival_peak(&envelope(&near))) * cube.dt();
    if !(delay > 0.0) {
        return Err(Error::Velocity(format!(
            "far probe peak does not lag the near probe (delay {delay:e} s)"
        )));
    }
    Ok(probes.separation / delay)
}

/// Per-region time-aligned blocks of `p1 × p2 × T_w` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionalWindowSet {
    partition: Partition,
    window_len: usize,
    dx: f64,
    dt: f64,
    arrivals: Vec<usize>,
    blocks: Vec<Option<Vec<f64>>>,
}

impl RegionalWindowSet {
    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn arrival_index(&self, r: RegionIndex) -> usize {
        self.arrivals[self.partition.flat(r)]
    }

    pub fn is_active(&self, r: RegionIndex) -> bool {
        self.blocks[self.partition.flat(r)].is_some()
    }

    pub fn active_regions(&self) -> Vec<RegionIndex> {
        self.partition.regions().filter(|&r| self.is_active(r)).collect()
    }

    pub fn active_count(&self) -> usize {
        self.blocks.iter().filter(|b| b.is_some()).count()
    }

    /// Block samples ordered `τ`, then y, then x (x fastest).
    pub fn block(&self, r: RegionIndex) -> Option<&[f64]> {
        self.blocks[self.partition.flat(r)].as_deref()
    }

    /// Vectorized `p1 × p2` slice of region `r` at window step `tau`.
    pub fn slice(&self, r: RegionIndex, tau: usize) -> Option<&[f64]> {
        let n = self.partition.p1 * self.partition.p2;
        self.block(r).map(|b| &b[tau * n..(tau + 1) * n])
    }

    /// A region's block as a stand-alone cube, for debugging dumps.
    pub fn block_cube(&self, r: RegionIndex) -> Option<Result<DataCube>> {
        self.block(r).map(|b| {
            DataCube::new(
                self.partition.p1,
                self.partition.p2,
                self.window_len,
                self.dx,
                self.dt,
                b.to_vec(),
            )
        })
    }
}

/// Cuts the time-aligned regional windows out of `cube`.
pub fn extract_windows(
    cube: &DataCube,
    partition: &Partition,
    group_speed: f64,
    excitation: &ExcitationSpec,
    window_len: usize,
) -> Result<RegionalWindowSet> {
    if window_len < 1 {
        return Err(Error::Parameter("window_len must be at least 1".into()));
    }
    if !(group_speed.is_finite() && group_speed > 0.0) {
        return Err(Error::Parameter(format!(
            "group speed must be positive, got {group_speed}"
        )));
    }
    if partition.n1 != cube.n1() || partition.n2 != cube.n2() {
        return Err(Error::Shape {
            expected: format!("{}x{} grid", partition.n1, partition.n2),
            got: format!("{}x{} cube", cube.n1(), cube.n2()),
        });
    }
    let source = excitation.loaded_node(cube.n1(), cube.n2());
    let (sx, sy) = (source.l as f64 * cube.dx(), source.m as f64 * cube.dx());
    let silent = SILENT_REGION_RATIO * cube.max_abs();
    let (p1, p2) = (partition.p1, partition.p2);

    let regions: Vec<(usize, Option<Vec<f64>>)> = (0..partition.region_count())
        .into_par_iter()
        .map(|k| {
            let r = partition.unflat(k);
            let (cx, cy) = partition.region_centroid(r, cube.dx()).expect("region from partition");
            let t = arrival_time((cx - sx).hypot(cy - sy), group_speed, excitation);
            let start = (t / cube.dt()).round() as usize;
            if start + window_len > cube.t_len() {
                return (start, None);
            }
            let o = partition.origin(r);
            let mut block = Vec::with_capacity(p1 * p2 * window_len);
            for tau in 0..window_len {
                let slice = cube.slice_values(start + tau);
                for m in o.m..o.m + p2 {
                    block.extend_from_slice(&slice[m * cube.n1() + o.l..m * cube.n1() + o.l + p1]);
                }
            }
            let rms = (block.iter().map(|v| v * v).sum::<f64>() / block.len() as f64).sqrt();
            if !(rms > silent) {
                return (start, None);
            }
            (start, Some(block))
        })
        .collect();

    let (arrivals, blocks): (Vec<_>, Vec<_>) = regions.into_iter().unzip();
    if blocks.iter().all(Option::is_none) {
        return Err(Error::EmptyWindowing);
    }
    Ok(RegionalWindowSet {
        partition: *partition,
        window_len,
        dx: cube.dx(),
        dt: cube.dt(),
        arrivals,
        blocks,
    })
}
