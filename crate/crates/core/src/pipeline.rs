//! End-to-end runs driven by a [`ScenarioConfig`]: simulation, detection,
//! subsampling sweeps and the wavenumber occupancy report.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::platesim::{analytic_group_velocity, simulate};
use crate::saliency::{classify, saliency_map, RankPolicy, SaliencyMap};
use crate::sampling::{
    detection_metrics, double_cross_mask, random_plan, DetectionMetrics, GroundTruth, SamplingPlan, Sharing, SweepRow,
};
use crate::scenario::{rank_text, MaskConfig, ScenarioConfig};
use crate::spectrum::{dft2_magnitude, occupied_fraction, LandauEstimate, WavenumberSpectrum};
use crate::wavecube::{DataCube, Metadata};
use crate::windowing::{
    estimate_group_velocity, extract_windows, Partition, ProbePair, RegionIndex, RegionalWindowSet,
};

/// Simulates the scenario and returns the cube with its sidecar metadata.
pub fn simulate_scenario(config: &ScenarioConfig) -> Result<(DataCube, Metadata)> {
    let grid = config.grid.grid_spec(&config.material, &config.defects)?;
    let cube = simulate(&config.material, &config.defects, &config.excitation, &grid)?;
    let mut meta = config.to_metadata();
    meta.push("solver.steps", grid.steps);
    meta.push("solver.record_every", grid.record_every);
    meta.push("solver.refine", grid.refine);
    meta.push("cube.dx", format!("{:?}", cube.dx()));
    meta.push("cube.dt", format!("{:?}", cube.dt()));
    meta.push("cube.t_len", cube.t_len());
    Ok((cube, meta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedSource {
    Estimated,
    Analytic,
}

/// Windowed data and ground truth for one cube, reused across detections
/// with different sampling plans.
#[derive(Debug, Clone)]
pub struct Detector {
    config: ScenarioConfig,
    partition: Partition,
    probes: Option<ProbePair>,
    group_speed: f64,
    speed_source: SpeedSource,
    windows: RegionalWindowSet,
    truth: GroundTruth,
    source_corner: RegionIndex,
}

/// Outcome of one detection.
#[derive(Debug, Clone)]
pub struct Detection {
    pub map: SaliencyMap,
    pub flagged: Vec<RegionIndex>,
    pub metrics: DetectionMetrics,
    /// Fraction of each region's nodes that were used.
    pub achieved_ratio: f64,
}

impl Detector {
    pub fn new(cube: &DataCube, config: &ScenarioConfig) -> Result<Self> {
        if cube.max_abs() == 0.0 {
            return Err(Error::NoSignal("cube is identically zero".into()));
        }
        if (cube.n1(), cube.n2()) != (config.grid.n1, config.grid.n2) {
            return Err(Error::Shape {
                expected: format!("{}x{} grid from the scenario", config.grid.n1, config.grid.n2),
                got: format!("{}x{} cube", cube.n1(), cube.n2()),
            });
        }
        let partition = config.partition()?;
        let probes = config
            .probes
            .probe_pair(&config.excitation, cube.n1(), cube.n2(), cube.dx())?;
        let (group_speed, speed_source) = match &probes {
            Some(pair) => (estimate_group_velocity(cube, pair)?, SpeedSource::Estimated),
            None => (
                analytic_group_velocity(&config.material, config.excitation.carrier_frequency),
                SpeedSource::Analytic,
            ),
        };
        let windows = extract_windows(
            cube,
            &partition,
            group_speed,
            &config.excitation,
            config.detection.window_len,
        )?;
        let truth = GroundTruth::from_defects(&config.defects, &partition);
        let source_corner = partition.region_of_node(config.excitation.loaded_node(cube.n1(), cube.n2()));
        Ok(Self {
            config: config.clone(),
            partition,
            probes,
            group_speed,
            speed_source,
            windows,
            truth,
            source_corner,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn group_speed(&self) -> f64 {
        self.group_speed
    }

    pub fn speed_source(&self) -> SpeedSource {
        self.speed_source
    }

    pub fn windows(&self) -> &RegionalWindowSet {
        &self.windows
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn source_corner(&self) -> RegionIndex {
        self.source_corner
    }

    /// The plan described by a mask setting; `None` keeps every node.
    pub fn plan(&self, mask: MaskConfig, seed: u64) -> Result<Option<SamplingPlan>> {
        Ok(match mask {
            MaskConfig::Full => None,
            MaskConfig::Random { ratio, sharing } => Some(random_plan(&self.partition, ratio, seed, sharing)?),
            MaskConfig::Cross { stride } => Some(SamplingPlan::Shared(double_cross_mask(
                self.partition.p1(),
                self.partition.p2(),
                stride,
            )?)),
        })
    }

    /// Rank actually applied with `rows` retained nodes per region. A fixed
    /// rank is capped one below the smaller matrix dimension so that some
    /// residual is always left to rank.
    pub fn effective_rank(&self, rows: usize) -> RankPolicy {
        match self.config.detection.rank {
            RankPolicy::Auto => RankPolicy::Auto,
            RankPolicy::Fixed(r) => {
                let cap = rows.min(self.windows.active_count()).saturating_sub(1).max(1);
                RankPolicy::Fixed(r.min(cap))
            }
        }
    }

    pub fn run(&self, plan: Option<&SamplingPlan>) -> Result<Detection> {
        let full = self.partition.p1() * self.partition.p2();
        let rows = plan.map_or(full, |p| p.positions(0).len());
        let d = &self.config.detection;
        let map = saliency_map(&self.windows, self.effective_rank(rows), d.ratio, plan)?;
        let flagged = classify(&map, d.theta);
        let metrics = detection_metrics(&flagged, &self.truth, &self.partition, self.source_corner);
        Ok(Detection {
            map,
            flagged,
            metrics,
            achieved_ratio: plan.map_or(1.0, SamplingPlan::achieved_ratio),
        })
    }

    /// Detection with the scenario's own mask and seed.
    pub fn run_configured(&self) -> Result<Detection> {
        let plan = self.plan(self.config.detection.mask, self.config.seed)?;
        self.run(plan.as_ref())
    }

    /// Everything needed to reproduce and audit a detection.
    pub fn manifest(&self, detection: &Detection) -> Metadata {
        let mut m = Metadata::new();
        let c = &self.config;
        m.push("group_speed", format!("{:?}", self.group_speed));
        m.push(
            "group_speed_source",
            match self.speed_source {
                SpeedSource::Estimated => "estimated",
                SpeedSource::Analytic => "analytic",
            },
        );
        m.push(
            "analytic_group_speed",
            format!(
                "{:?}",
                analytic_group_velocity(&c.material, c.excitation.carrier_frequency)
            ),
        );
        if let Some(p) = &self.probes {
            m.push("probe_near", format!("{}, {}", p.near().l, p.near().m));
            m.push("probe_far", format!("{}, {}", p.far().l, p.far().m));
        }
        m.push(
            "regions",
            format!("{}, {}", self.partition.regions_x(), self.partition.regions_y()),
        );
        m.push(
            "region_nodes",
            format!("{}, {}", self.partition.p1(), self.partition.p2()),
        );
        m.push("window_len", c.detection.window_len);
        m.push("active_regions", self.windows.active_count());
        m.push("rank_policy", rank_text(c.detection.rank));
        m.push("rank_used", detection.map.rank_used());
        m.push("energy_ratio", format!("{:?}", c.detection.ratio));
        m.push("theta", format!("{:?}", c.detection.theta));
        m.push("achieved_ratio", format!("{:?}", detection.achieved_ratio));
        m.push("seed", c.seed);
        m.push(
            "source_region",
            format!("{}, {}", self.source_corner.i, self.source_corner.j),
        );
        m.push("truth", region_list(self.truth.regions().iter()));
        m.push("flagged", region_list(detection.flagged.iter()));
        let k = &detection.metrics;
        m.push("correct_discoveries", k.correct_discoveries);
        m.push("false_discoveries", k.false_discoveries);
        m.push("regionally_discovered", k.regionally_discovered);
        m.push("regional_false", k.regional_false);
        m.push("origin_false", k.origin_false);
        let sv: Vec<String> = detection
            .map
            .leading_spectrum()
            .iter()
            .map(|v| format!("{v:?}"))
            .collect();
        m.push("singular_values", sv.join(", "));
        for (key, value) in c.to_metadata().entries() {
            m.push(format!("scenario.{key}"), value);
        }
        m
    }
}

fn region_list<'a>(regions: impl Iterator<Item = &'a RegionIndex>) -> String {
    regions
        .map(|r| format!("{}:{}", r.i, r.j))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Flagged regions as `i,j,saliency` rows.
pub fn flagged_csv(detection: &Detection) -> String {
    let mut s = String::from("i,j,saliency\n");
    for r in &detection.flagged {
        let v = detection.map.value(*r).expect("flagged regions are active");
        s.push_str(&format!("{},{},{v}\n", r.i, r.j));
    }
    s
}

/// Averages `trials` detections per ratio, trial `t` drawing its mask from
/// seed `base_seed + t`.
pub fn monte_carlo_sweep(
    detector: &Detector,
    ratios: &[f64],
    trials: usize,
    base_seed: u64,
    sharing: Sharing,
) -> Result<Vec<SweepRow>> {
    if trials < 1 {
        return Err(Error::Parameter("a sweep needs at least one trial".into()));
    }
    ratios
        .iter()
        .map(|&nz| {
            let metrics = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let seed = base_seed.wrapping_add(t as u64);
                    let plan = random_plan(detector.partition(), nz, seed, sharing)?;
                    Ok(detector.run(Some(&plan))?.metrics)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow::from_trials(nz, base_seed, &metrics))
        })
        .collect()
}

/// One row per stride for the deterministic double-cross pattern; `nz` is
/// the achieved ratio.
pub fn cross_sweep(detector: &Detector, strides: &[usize], seed: u64) -> Result<Vec<SweepRow>> {
    strides
        .iter()
        .map(|&stride| {
            let plan = detector.plan(MaskConfig::Cross { stride }, seed)?.expect("cross plan");
            let detection = detector.run(Some(&plan))?;
            Ok(SweepRow::from_trials(
                detection.achieved_ratio,
                seed,
                &[detection.metrics],
            ))
        })
        .collect()
}

/// Spectrum of snapshot `snapshot` (the final one when `None`) and its
/// occupied fraction.
pub fn landau_report(
    cube: &DataCube,
    snapshot: Option<usize>,
    floor_db: f64,
) -> Result<(WavenumberSpectrum, LandauEstimate)> {
    let t = snapshot.unwrap_or(cube.t_len() - 1);
    let spectrum = dft2_magnitude(&cube.slice_at(t)?)?;
    let fraction = occupied_fraction(&spectrum, floor_db)?;
    Ok((
        spectrum,
        LandauEstimate {
            fraction,
            floor_db,
            snapshot: t,
        },
    ))
}
