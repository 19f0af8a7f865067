//! Scenario files: `[section]` headers followed by `key = value` lines.
//!
//! ```text
//! seed = 7
//!
//! [material]
//! youngs_modulus = 71e9
//!
//! [grid]
//! n = 257
//! duration = 50e-6
//! sample_interval = 0.2e-6
//!
//! [defect]
//! kind = point
//! at = 0.2, 0.42
//! modulus_scale = 100
//! density_scale = 100
//! ```
//!
//! `#` starts a comment. `[defect]` may repeat; every other section appears
//! at most once and every key has a default except the defect fields.
//! Errors carry the 1-based line and column of the offending token.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::platesim::{DefectKind, DefectSpec, ExcitationSpec, GridSpec, MaterialSpec, Stencil};
use crate::saliency::{RankPolicy, DEFAULT_ENERGY_RATIO, DEFAULT_THETA};
use crate::sampling::Sharing;
use crate::wavecube::{GridPoint, Metadata};
use crate::windowing::{make_partition, Partition, ProbePair, DEFAULT_WINDOW_LEN};

/// How the solver run length is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunLength {
    /// Samples exactly `sample_interval` apart covering `duration`.
    Duration { duration: f64, sample_interval: f64 },
    /// A raw step count at the stable step, recording every `record_every`.
    Steps { steps: usize, record_every: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub n1: usize,
    pub n2: usize,
    pub refine: usize,
    pub stencil: Stencil,
    pub safety: f64,
    pub run: RunLength,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n1: 257,
            n2: 257,
            refine: 1,
            stencil: Stencil::Wide,
            safety: 0.9,
            run: RunLength::Duration {
                duration: 50e-6,
                sample_interval: 0.2e-6,
            },
        }
    }
}

impl GridConfig {
    pub fn grid_spec(&self, material: &MaterialSpec, defects: &[DefectSpec]) -> Result<GridSpec> {
        match self.run {
            RunLength::Duration {
                duration,
                sample_interval,
            } => {
                if self.n1 != self.n2 {
                    return Err(Error::Parameter("square plate requires n1 == n2".into()));
                }
                GridSpec::for_duration(
                    material,
                    defects,
                    self.n1,
                    self.refine,
                    self.stencil,
                    self.safety,
                    duration,
                    sample_interval,
                )
            }
            RunLength::Steps { steps, record_every } => {
                let spec = GridSpec {
                    n1: self.n1,
                    n2: self.n2,
                    steps,
                    safety: self.safety,
                    record_every,
                    refine: self.refine,
                    stencil: self.stencil,
                    timestep: None,
                };
                spec.validate()?;
                Ok(spec)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskConfig {
    Full,
    Random { ratio: f64, sharing: Sharing },
    Cross { stride: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionConfig {
    pub regions_x: usize,
    pub regions_y: usize,
    pub window_len: usize,
    pub rank: RankPolicy,
    pub ratio: f64,
    pub theta: f64,
    pub mask: MaskConfig,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            regions_x: 16,
            regions_y: 16,
            window_len: DEFAULT_WINDOW_LEN,
            rank: RankPolicy::Auto,
            ratio: DEFAULT_ENERGY_RATIO,
            theta: DEFAULT_THETA,
            mask: MaskConfig::Full,
        }
    }
}

/// Where the group speed used for windowing comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeConfig {
    /// Two probes on a ray from the loaded node, `angle` degrees above the
    /// x axis, at fractions `near` and `far` of the side length.
    Ray {
        angle: f64,
        near: f64,
        far: f64,
    },
    /// Two probes on grid row `row` at x fractions `near` and `far`.
    Row {
        row: usize,
        near: f64,
        far: f64,
    },
    Points {
        near: GridPoint,
        far: GridPoint,
    },
    /// Skip estimation and use the thin-plate group speed.
    Analytic,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig::Ray {
            angle: 22.5,
            near: 0.3,
            far: 0.7,
        }
    }
}

impl ProbeConfig {
    /// Resolves the probes on an `n1 × n2` grid, or `None` for
    /// [`ProbeConfig::Analytic`].
    pub fn probe_pair(&self, excitation: &ExcitationSpec, n1: usize, n2: usize, dx: f64) -> Result<Option<ProbePair>> {
        let pair = match *self {
            ProbeConfig::Analytic => return Ok(None),
            ProbeConfig::Ray { angle, near, far } => {
                let s = excitation.loaded_node(n1, n2);
                let (c, sn) = (angle.to_radians().cos(), angle.to_radians().sin());
                let span = (n1.max(n2) - 1) as f64;
                let at = |f: f64| -> Result<GridPoint> {
                    let l = s.l as f64 + (f * span * c).round();
                    let m = s.m as f64 + (f * span * sn).round();
                    if l < 0.0 || m < 0.0 || l >= n1 as f64 || m >= n2 as f64 {
                        return Err(Error::Geometry(format!("probe at fraction {f} leaves the grid")));
                    }
                    Ok(GridPoint::new(l as usize, m as usize))
                };
                ProbePair::new(at(near)?, at(far)?, dx)?
            }
            ProbeConfig::Row { row, near, far } => {
                if row >= n2 {
                    return Err(Error::Bounds {
                        what: "probe row",
                        index: row,
                        limit: n2,
                    });
                }
                ProbePair::along_row(n1, row, near, far, dx)?
            }
            ProbeConfig::Points { near, far } => {
                near.check_bounds(n1, n2)?;
                far.check_bounds(n1, n2)?;
                ProbePair::new(near, far, dx)?
            }
        };
        Ok(Some(pair))
    }
}

/// A complete, validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub material: MaterialSpec,
    pub grid: GridConfig,
    pub excitation: ExcitationSpec,
    pub defects: Vec<DefectSpec>,
    pub detection: DetectionConfig,
    pub probes: ProbeConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            material: MaterialSpec::aluminum_plate(),
            grid: GridConfig::default(),
            excitation: ExcitationSpec {
                carrier_frequency: 500e3,
                cycle_count: 5,
                amplitude: 1.0,
                source: GridPoint::new(0, 0),
            },
            defects: Vec::new(),
            detection: DetectionConfig::default(),
            probes: ProbeConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn partition(&self) -> Result<Partition> {
        make_partition(
            self.grid.n1,
            self.grid.n2,
            self.detection.regions_x,
            self.detection.regions_y,
        )
    }

    /// Canonical text form. Parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let m = &self.material;
        let _ = writeln!(s, "\n[material]");
        let _ = writeln!(s, "youngs_modulus = {:?}", m.youngs_modulus);
        let _ = writeln!(s, "poisson_ratio = {:?}", m.poisson_ratio);
        let _ = writeln!(s, "density = {:?}", m.density);
        let _ = writeln!(s, "thickness = {:?}", m.thickness);
        let _ = writeln!(s, "side_length = {:?}", m.side_length);

        let g = &self.grid;
        let _ = writeln!(s, "\n[grid]");
        let _ = writeln!(s, "n1 = {}", g.n1);
        let _ = writeln!(s, "n2 = {}", g.n2);
        let _ = writeln!(s, "refine = {}", g.refine);
        let _ = writeln!(s, "stencil = {}", g.stencil.name());
        let _ = writeln!(s, "safety = {:?}", g.safety);
        match g.run {
            RunLength::Duration {
                duration,
                sample_interval,
            } => {
                let _ = writeln!(s, "duration = {duration:?}");
                let _ = writeln!(s, "sample_interval = {sample_interval:?}");
            }
            RunLength::Steps { steps, record_every } => {
                let _ = writeln!(s, "steps = {steps}");
                let _ = writeln!(s, "record_every = {record_every}");
            }
        }

        let e = &self.excitation;
        let _ = writeln!(s, "\n[excitation]");
        let _ = writeln!(s, "frequency = {:?}", e.carrier_frequency);
        let _ = writeln!(s, "cycles = {}", e.cycle_count);
        let _ = writeln!(s, "amplitude = {:?}", e.amplitude);
        let _ = writeln!(s, "source = {}, {}", e.source.l, e.source.m);

        for d in &self.defects {
            let _ = writeln!(s, "\n[defect]");
            match d.kind {
                DefectKind::PointInclusion { x, y } => {
                    let _ = writeln!(s, "kind = point");
                    let _ = writeln!(s, "at = {x:?}, {y:?}");
                }
                DefectKind::LineSegment { xa, ya, xb, yb } => {
                    let _ = writeln!(s, "kind = line");
                    let _ = writeln!(s, "from = {xa:?}, {ya:?}");
                    let _ = writeln!(s, "to = {xb:?}, {yb:?}");
                }
            }
            let _ = writeln!(s, "modulus_scale = {:?}", d.modulus_scale);
            let _ = writeln!(s, "density_scale = {:?}", d.density_scale);
        }

        let d = &self.detection;
        let _ = writeln!(s, "\n[detection]");
        let _ = writeln!(s, "regions = {}, {}", d.regions_x, d.regions_y);
        let _ = writeln!(s, "window_len = {}", d.window_len);
        let _ = writeln!(s, "rank = {}", rank_text(d.rank));
        let _ = writeln!(s, "ratio = {:?}", d.ratio);
        let _ = writeln!(s, "theta = {:?}", d.theta);
        match d.mask {
            MaskConfig::Full => {
                let _ = writeln!(s, "mask = full");
            }
            MaskConfig::Random { ratio, sharing } => {
                let _ = writeln!(s, "mask = random");
                let _ = writeln!(s, "mask_ratio = {ratio:?}");
                let _ = writeln!(s, "sharing = {}", sharing_text(sharing));
            }
            MaskConfig::Cross { stride } => {
                let _ = writeln!(s, "mask = cross");
                let _ = writeln!(s, "stride = {stride}");
            }
        }

        let _ = writeln!(s, "\n[probes]");
        match self.probes {
            ProbeConfig::Ray { angle, near, far } => {
                let _ = writeln!(s, "kind = ray");
                let _ = writeln!(s, "angle = {angle:?}");
                let _ = writeln!(s, "near = {near:?}");
                let _ = writeln!(s, "far = {far:?}");
            }
            ProbeConfig::Row { row, near, far } => {
                let _ = writeln!(s, "kind = row");
                let _ = writeln!(s, "row = {row}");
                let _ = writeln!(s, "near = {near:?}");
                let _ = writeln!(s, "far = {far:?}");
            }
            ProbeConfig::Points { near, far } => {
                let _ = writeln!(s, "kind = points");
                let _ = writeln!(s, "near = {}, {}", near.l, near.m);
                let _ = writeln!(s, "far = {}, {}", far.l, far.m);
            }
            ProbeConfig::Analytic => {
                let _ = writeln!(s, "kind = analytic");
            }
        }
        s
    }

    /// The scenario as flat `section.key` metadata, with defects numbered
    /// from zero.
    pub fn to_metadata(&self) -> Metadata {
        let mut meta = Metadata::new();
        let mut section = String::new();
        let mut defect = 0usize;
        for line in self.to_text().lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = if name == "defect" {
                    defect += 1;
                    format!("defect.{}", defect - 1)
                } else {
                    name.to_string()
                };
                continue;
            }
            let (k, v) = line.split_once('=').expect("canonical text has key = value lines");
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            meta.push(key, v.trim());
        }
        meta
    }
}

pub fn rank_text(rank: RankPolicy) -> String {
    match rank {
        RankPolicy::Auto => "auto".into(),
        RankPolicy::Fixed(r) => r.to_string(),
    }
}

fn sharing_text(sharing: Sharing) -> &'static str {
    match sharing {
        Sharing::SharedAcrossRegions => "shared",
        Sharing::PerRegion => "per_region",
    }
}

#[derive(Debug, Clone)]
struct Entry {
    key: String,
    value: String,
    line: usize,
    key_col: usize,
    value_col: usize,
}

impl Entry {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::config(self.line, self.value_col, message)
    }

    fn f64(&self) -> Result<f64> {
        match self.value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(format!("`{}` expects a finite number, got `{}`", self.key, self.value))),
        }
    }

    fn usize(&self) -> Result<usize> {
        self.value.parse::<usize>().map_err(|_| {
            self.error(format!(
                "`{}` expects a non-negative integer, got `{}`",
                self.key, self.value
            ))
        })
    }

    fn pair<T: std::str::FromStr>(&self) -> Result<(T, T)> {
        let bad = || {
            self.error(format!(
                "`{}` expects two comma-separated values, got `{}`",
                self.key, self.value
            ))
        };
        let (a, b) = self.value.split_once(',').ok_or_else(bad)?;
        Ok((
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        ))
    }

    fn f64_pair(&self) -> Result<(f64, f64)> {
        let (a, b) = self.pair::<f64>()?;
        if !(a.is_finite() && b.is_finite()) {
            return Err(self.error(format!("`{}` expects finite numbers", self.key)));
        }
        Ok((a, b))
    }
}

#[derive(Debug)]
struct Block {
    name: String,
    line: usize,
    entries: Vec<Entry>,
}

impl Block {
    fn take(&mut self, key: &str) -> Option<Entry> {
        let k = self.entries.iter().position(|e| e.key == key)?;
        Some(self.entries.remove(k))
    }

    /// Rejects any key that was not consumed.
    fn finish(self) -> Result<()> {
        match self.entries.first() {
            Some(e) => Err(Error::config(
                e.line,
                e.key_col,
                format!("unknown key `{}` in [{}]", e.key, self.name),
            )),
            None => Ok(()),
        }
    }
}

const SECTIONS: [&str; 6] = ["material", "grid", "excitation", "defect", "detection", "probes"];

fn split_blocks(text: &str) -> Result<Vec<Block>> {
    let mut blocks = vec![Block {
        name: String::new(),
        line: 0,
        entries: Vec::new(),
    }];
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (index, raw) in text.lines().enumerate() {
        let line = index + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        let indent = content.len() - content.trim_start().len();
        let col = |byte: usize| content[..byte].chars().count() + 1;
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::config(line, col(indent), "section header is missing `]`"))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(Error::config(line, col(indent), format!("unknown section [{name}]")));
            }
            if name != "defect" {
                if let Some(first) = seen.insert(name.to_string(), line) {
                    return Err(Error::config(
                        line,
                        col(indent),
                        format!("section [{name}] repeated (first at line {first})"),
                    ));
                }
            }
            blocks.push(Block {
                name: name.to_string(),
                line,
                entries: Vec::new(),
            });
            continue;
        }
        let eq = content
            .find('=')
            .ok_or_else(|| Error::config(line, col(indent), "expected `key = value`"))?;
        let key = content[..eq].trim();
        let value_raw = &content[eq + 1..];
        let value = value_raw.trim();
        if key.is_empty() {
            return Err(Error::config(line, col(indent), "missing key before `=`"));
        }
        let value_start = eq + 1 + (value_raw.len() - value_raw.trim_start().len());
        if value.is_empty() {
            return Err(Error::config(
                line,
                col(value_start),
                format!("missing value for `{key}`"),
            ));
        }
        let block = blocks.last_mut().expect("root block");
        if let Some(prev) = block.entries.iter().find(|e| e.key == key) {
            return Err(Error::config(
                line,
                col(indent),
                format!("key `{key}` repeated (first at line {})", prev.line),
            ));
        }
        block.entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
            key_col: col(indent),
            value_col: col(value_start),
        });
    }
    Ok(blocks)
}

/// Parses and validates a scenario.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let mut config = ScenarioConfig::default();
    let mut regions_entry: Option<Entry> = None;
    let mut grid_line = 0;

    for mut block in split_blocks(text)? {
        match block.name.as_str() {
            "" => {
                if let Some(e) = block.take("seed") {
                    config.seed = e
                        .value
                        .parse()
                        .map_err(|_| e.error(format!("`seed` expects an unsigned integer, got `{}`", e.value)))?;
                }
            }
            "material" => {
                let m = &mut config.material;
                for (key, slot) in [
                    ("youngs_modulus", &mut m.youngs_modulus),
                    ("poisson_ratio", &mut m.poisson_ratio),
                    ("density", &mut m.density),
                    ("thickness", &mut m.thickness),
                    ("side_length", &mut m.side_length),
                ] {
                    if let Some(e) = block.take(key) {
                        *slot = e.f64()?;
                    }
                }
                config
                    .material
                    .validate()
                    .map_err(|err| Error::config(block.line, 1, err.to_string()))?;
            }
            "grid" => {
                grid_line = block.line;
                parse_grid(&mut block, &mut config.grid)?;
            }
            "excitation" => parse_excitation(&mut block, &mut config.excitation)?,
            "defect" => config.defects.push(parse_defect(&mut block)?),
            "detection" => regions_entry = parse_detection(&mut block, &mut config.detection)?,
            "probes" => config.probes = parse_probes(&mut block)?,
            _ => unreachable!("section names are checked while splitting"),
        }
        block.finish()?;
    }

    config
        .excitation
        .validate(config.grid.n1, config.grid.n2)
        .map_err(|err| Error::config(grid_line, 1, err.to_string()))?;
    if let Err(err) = config.partition() {
        let (line, col) = regions_entry.map_or((grid_line, 1), |e| (e.line, e.value_col));
        return Err(Error::config(line, col, err.to_string()));
    }
    Ok(config)
}

fn parse_grid(block: &mut Block, grid: &mut GridConfig) -> Result<()> {
    if let Some(e) = block.take("n") {
        let n = e.usize()?;
        grid.n1 = n;
        grid.n2 = n;
    }
    if let Some(e) = block.take("n1") {
        grid.n1 = e.usize()?;
    }
    if let Some(e) = block.take("n2") {
        grid.n2 = e.usize()?;
    }
    if grid.n1 < 3 || grid.n2 < 3 || grid.n1 != grid.n2 {
        return Err(Error::config(
            block.line,
            1,
            format!(
                "grid must be square with at least 3 nodes per side, got {}x{}",
                grid.n1, grid.n2
            ),
        ));
    }
    if let Some(e) = block.take("refine") {
        grid.refine = e.usize()?;
        if grid.refine < 1 {
            return Err(e.error("`refine` must be at least 1"));
        }
    }
    if let Some(e) = block.take("stencil") {
        grid.stencil = Stencil::parse(&e.value)
            .ok_or_else(|| e.error(format!("unknown stencil `{}` (compact or wide)", e.value)))?;
    }
    if let Some(e) = block.take("safety") {
        grid.safety = e.f64()?;
        if !(grid.safety > 0.0 && grid.safety <= 1.0) {
            return Err(e.error("`safety` must lie in (0, 1]"));
        }
    }
    let duration = block.take("duration");
    let interval = block.take("sample_interval");
    let steps = block.take("steps");
    let record_every = block.take("record_every");
    if let Some(s) = steps {
        if let Some(e) = duration.as_ref().or(interval.as_ref()) {
            return Err(Error::config(
                e.line,
                e.key_col,
                "`steps` and `duration`/`sample_interval` are exclusive",
            ));
        }
        let steps = s.usize()?;
        let every = match record_every {
            Some(e) => e.usize()?,
            None => 1,
        };
        if steps < 1 || every < 1 {
            return Err(s.error("`steps` and `record_every` must be at least 1"));
        }
        grid.run = RunLength::Steps {
            steps,
            record_every: every,
        };
    } else {
        if let Some(e) = record_every {
            return Err(Error::config(e.line, e.key_col, "`record_every` needs `steps`"));
        }
        let (mut duration_s, mut interval_s) = match grid.run {
            RunLength::Duration {
                duration,
                sample_interval,
            } => (duration, sample_interval),
            RunLength::Steps { .. } => {
                let d = GridConfig::default();
                match d.run {
                    RunLength::Duration {
                        duration,
                        sample_interval,
                    } => (duration, sample_interval),
                    RunLength::Steps { .. } => unreachable!("default run length is a duration"),
                }
            }
        };
        for (entry, slot) in [(duration, &mut duration_s), (interval, &mut interval_s)] {
            if let Some(e) = entry {
                *slot = e.f64()?;
                if *slot <= 0.0 {
                    return Err(e.error(format!("`{}` must be positive", e.key)));
                }
            }
        }
        grid.run = RunLength::Duration {
            duration: duration_s,
            sample_interval: interval_s,
        };
    }
    Ok(())
}

fn parse_excitation(block: &mut Block, excitation: &mut ExcitationSpec) -> Result<()> {
    if let Some(e) = block.take("frequency") {
        excitation.carrier_frequency = e.f64()?;
        if excitation.carrier_frequency <= 0.0 {
            return Err(e.error("`frequency` must be positive"));
        }
    }
    if let Some(e) = block.take("cycles") {
        excitation.cycle_count = e
            .value
            .parse()
            .ok()
            .filter(|&c: &u32| c >= 1)
            .ok_or_else(|| e.error(format!("`cycles` expects a positive integer, got `{}`", e.value)))?;
    }
    if let Some(e) = block.take("amplitude") {
        excitation.amplitude = e.f64()?;
    }
    if let Some(e) = block.take("source") {
        let (l, m) = e.pair::<usize>()?;
        excitation.source = GridPoint::new(l, m);
    }
    Ok(())
}

fn required(block: &mut Block, key: &str) -> Result<Entry> {
    block
        .take(key)
        .ok_or_else(|| Error::config(block.line, 1, format!("[{}] requires `{key}`", block.name)))
}

fn parse_defect(block: &mut Block) -> Result<DefectSpec> {
    let kind = required(block, "kind")?;
    let geometry = match kind.value.as_str() {
        "point" => {
            let (x, y) = required(block, "at")?.f64_pair()?;
            DefectKind::PointInclusion { x, y }
        }
        "line" => {
            let (xa, ya) = required(block, "from")?.f64_pair()?;
            let (xb, yb) = required(block, "to")?.f64_pair()?;
            DefectKind::LineSegment { xa, ya, xb, yb }
        }
        other => return Err(kind.error(format!("unknown defect kind `{other}` (point or line)"))),
    };
    let modulus = required(block, "modulus_scale")?;
    let density = required(block, "density_scale")?;
    let spec = DefectSpec {
        kind: geometry,
        modulus_scale: modulus.f64()?,
        density_scale: density.f64()?,
    };
    spec.validate()
        .map_err(|err| Error::config(block.line, 1, err.to_string()))?;
    Ok(spec)
}

/// Returns the entry that set the region counts, for error positions.
fn parse_detection(block: &mut Block, detection: &mut DetectionConfig) -> Result<Option<Entry>> {
    let mut regions_entry = None;
    if let Some(e) = block.take("regions") {
        let (x, y) = e.pair::<usize>()?;
        detection.regions_x = x;
        detection.regions_y = y;
        regions_entry = Some(e);
    }
    for key in ["regions_x", "regions_y"] {
        if let Some(e) = block.take(key) {
            let v = e.usize()?;
            if key == "regions_x" {
                detection.regions_x = v;
            } else {
                detection.regions_y = v;
            }
            regions_entry = Some(e);
        }
    }
    if let Some(e) = block.take("window_len") {
        detection.window_len = e.usize()?;
        if detection.window_len < 1 {
            return Err(e.error("`window_len` must be at least 1"));
        }
    }
    if let Some(e) = block.take("rank") {
        detection.rank = parse_rank(&e.value).ok_or_else(|| {
            e.error(format!(
                "`rank` expects `auto` or a positive integer, got `{}`",
                e.value
            ))
        })?;
    }
    for key in ["ratio", "theta"] {
        if let Some(e) = block.take(key) {
            let v = e.f64()?;
            if !(v > 0.0 && v <= 1.0) {
                return Err(e.error(format!("`{key}` must lie in (0, 1]")));
            }
            if key == "ratio" {
                detection.ratio = v;
            } else {
                detection.theta = v;
            }
        }
    }
    let mask_ratio = block.take("mask_ratio");
    let sharing = block.take("sharing");
    let stride = block.take("stride");
    let kind = block.take("mask");
    let stray = |e: Option<Entry>, needs: &str| -> Result<()> {
        match e {
            Some(e) => Err(Error::config(
                e.line,
                e.key_col,
                format!("`{}` only applies to mask = {needs}", e.key),
            )),
            None => Ok(()),
        }
    };
    detection.mask = match kind.as_ref().map(|e| e.value.as_str()) {
        None | Some("full") => {
            stray(mask_ratio, "random")?;
            stray(sharing, "random")?;
            stray(stride, "cross")?;
            MaskConfig::Full
        }
        Some("random") => {
            stray(stride, "cross")?;
            let ratio_entry =
                mask_ratio.ok_or_else(|| Error::config(block.line, 1, "mask = random requires `mask_ratio`"))?;
            let ratio = ratio_entry.f64()?;
            if !(ratio > 0.0 && ratio <= 1.0) {
                return Err(ratio_entry.error("`mask_ratio` must lie in (0, 1]"));
            }
            let sharing = match sharing {
                None => Sharing::SharedAcrossRegions,
                Some(e) => match e.value.as_str() {
                    "shared" => Sharing::SharedAcrossRegions,
                    "per_region" => Sharing::PerRegion,
                    other => return Err(e.error(format!("unknown sharing `{other}` (shared or per_region)"))),
                },
            };
            MaskConfig::Random { ratio, sharing }
        }
        Some("cross") => {
            stray(mask_ratio, "random")?;
            stray(sharing, "random")?;
            let stride = match stride {
                None => 1,
                Some(e) => {
                    let s = e.usize()?;
                    if ![1, 2, 4].contains(&s) {
                        return Err(e.error("`stride` must be 1, 2 or 4"));
                    }
                    s
                }
            };
            MaskConfig::Cross { stride }
        }
        Some(other) => {
            let e = kind.as_ref().expect("matched a value");
            return Err(e.error(format!("unknown mask `{other}` (full, random or cross)")));
        }
    };
    Ok(regions_entry)
}

/// `auto` or a positive integer.
pub fn parse_rank(text: &str) -> Option<RankPolicy> {
    match text.trim() {
        "auto" => Some(RankPolicy::Auto),
        t => t.parse::<usize>().ok().filter(|&r| r >= 1).map(RankPolicy::Fixed),
    }
}

fn parse_probes(block: &mut Block) -> Result<ProbeConfig> {
    let kind = block.take("kind");
    let fraction = |block: &mut Block, key: &str, default: f64| -> Result<f64> {
        match block.take(key) {
            None => Ok(default),
            Some(e) => {
                let v = e.f64()?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(e.error(format!("`{key}` must be a fraction in [0, 1]")));
                }
                Ok(v)
            }
        }
    };
    match kind.as_ref().map(|e| e.value.as_str()) {
        None | Some("ray") => {
            let angle = match block.take("angle") {
                None => 22.5,
                Some(e) => e.f64()?,
            };
            Ok(ProbeConfig::Ray {
                angle,
                near: fraction(block, "near", 0.3)?,
                far: fraction(block, "far", 0.7)?,
            })
        }
        Some("row") => {
            let row = match block.take("row") {
                None => 3,
                Some(e) => e.usize()?,
            };
            Ok(ProbeConfig::Row {
                row,
                near: fraction(block, "near", 0.3)?,
                far: fraction(block, "far", 0.7)?,
            })
        }
        Some("points") => {
            let (a, b) = required(block, "near")?.pair::<usize>()?;
            let (c, d) = required(block, "far")?.pair::<usize>()?;
            Ok(ProbeConfig::Points {
                near: GridPoint::new(a, b),
                far: GridPoint::new(c, d),
            })
        }
        Some("analytic") => Ok(ProbeConfig::Analytic),
        Some(other) => {
            let e = kind.as_ref().expect("matched a value");
            Err(e.error(format!("unknown probe kind `{other}` (ray, row, points or analytic)")))
        }
    }
}
