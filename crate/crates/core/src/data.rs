//! Snapshot datasets, the plot domain and the space-time grid.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Positions within this distance of the plot (cm) are clamped onto it;
/// anything further out is rejected.
pub const DOMAIN_SLACK_CM: f64 = 1.0;

const TIME_MATCH_TOL: f64 = 1e-9;

/// Plot geometry and grid resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    /// Plot extent along x, cm.
    pub length_x: f64,
    /// Plot extent along y, cm.
    pub length_y: f64,
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub grid_nt: usize,
    /// Crop layout; descriptive only.
    pub resource_rows: usize,
    pub resource_cols: usize,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            length_x: 175.0,
            length_y: 175.0,
            grid_nx: 80,
            grid_ny: 80,
            grid_nt: 98,
            resource_rows: 5,
            resource_cols: 9,
        }
    }
}

impl DomainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_x > 0.0 && self.length_y > 0.0)
            || !self.length_x.is_finite()
            || !self.length_y.is_finite()
        {
            return Err(Error::Invalid(format!(
                "domain lengths must be positive, got {} x {}",
                self.length_x, self.length_y
            )));
        }
        if self.grid_nx < 4 || self.grid_ny < 4 || self.grid_nt < 4 {
            return Err(Error::Invalid(format!(
                "grid counts must be >= 4, got {}x{}x{}",
                self.grid_nx, self.grid_ny, self.grid_nt
            )));
        }
        Ok(())
    }

    /// The space-time grid spanning the plot over `[t0, t_final]`.
    pub fn grid(&self, t0: f64, t_final: f64) -> Result<Grid> {
        self.validate()?;
        if !(t_final > t0) {
            return Err(Error::Invalid(format!(
                "time span must be increasing, got [{t0}, {t_final}]"
            )));
        }
        Ok(Grid {
            x: Axis::spanning(0.0, self.length_x, self.grid_nx),
            y: Axis::spanning(0.0, self.length_y, self.grid_ny),
            t: Axis::spanning(t0, t_final, self.grid_nt),
        })
    }
}

/// Uniformly spaced coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl Axis {
    /// `len` nodes from `start` to `end` inclusive.
    pub fn spanning(start: f64, end: f64, len: usize) -> Self {
        Self {
            start,
            step: (end - start) / (len - 1) as f64,
            len,
        }
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.node(self.len - 1)
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.node(i)).collect()
    }

    /// Trapezoidal quadrature weight of node `i`.
    #[inline]
    pub fn trapezoid_weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.len {
            0.5 * self.step
        } else {
            self.step
        }
    }
}

/// Space-time grid `x ⊗ y ⊗ t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x: Axis,
    pub y: Axis,
    pub t: Axis,
}

impl Grid {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.x.len, self.y.len, self.t.len)
    }

    pub fn spacings(&self) -> (f64, f64, f64) {
        (self.x.step, self.y.step, self.t.step)
    }

    /// Same spatial axes, different time axis.
    pub fn with_time(&self, t: Axis) -> Self {
        Self { t, ..*self }
    }
}

/// Where a record came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Source {
    pub plot_id: String,
    pub replicate_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub x: f64,
    pub y: f64,
    /// Height above soil; carried as metadata only.
    pub z: Option<f64>,
    /// Index into [`SnapshotSet::sources`].
    pub source: u32,
}

impl Observation {
    #[inline]
    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub observations: Vec<Observation>,
}

/// Unlabeled particle positions at a sequence of observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    domain: DomainConfig,
    sources: Vec<Source>,
    snapshots: Vec<Snapshot>,
}

impl SnapshotSet {
    /// Build and validate a set. Frames must be non-empty, times strictly
    /// increasing from zero, and every position inside the plot.
    pub fn new(domain: DomainConfig, sources: Vec<Source>, snapshots: Vec<Snapshot>) -> Result<Self> {
        domain.validate()?;
        if snapshots.is_empty() {
            return Err(Error::NoRecords);
        }
        if snapshots[0].time != 0.0 {
            return Err(Error::Invalid(format!(
                "first snapshot must be at t = 0, got {}",
                snapshots[0].time
            )));
        }
        for pair in snapshots.windows(2) {
            if !(pair[1].time > pair[0].time) {
                return Err(Error::Invalid(format!(
                    "snapshot times must be strictly increasing ({} then {})",
                    pair[0].time, pair[1].time
                )));
            }
        }
        for s in &snapshots {
            if s.observations.is_empty() {
                return Err(Error::InsufficientData(format!("no observations at t = {}", s.time)));
            }
            for o in &s.observations {
                if !(0.0..=domain.length_x).contains(&o.x) || !(0.0..=domain.length_y).contains(&o.y) {
                    return Err(Error::Invalid(format!(
                        "position ({}, {}) at t = {} lies outside the plot",
                        o.x, o.y, s.time
                    )));
                }
                if o.source as usize >= sources.len() {
                    return Err(Error::Invalid(format!("unknown source index {}", o.source)));
                }
            }
        }
        Ok(Self {
            domain,
            sources,
            snapshots,
        })
    }

    /// Convenience constructor for a single source (`plot_id`, `replicate_id`).
    pub fn from_positions(
        domain: DomainConfig,
        source: Source,
        frames: Vec<(f64, Vec<[f64; 2]>)>,
    ) -> Result<Self> {
        let snapshots = frames
            .into_iter()
            .map(|(time, pts)| Snapshot {
                time,
                observations: pts
                    .into_iter()
                    .map(|[x, y]| Observation {
                        x,
                        y,
                        z: None,
                        source: 0,
                    })
                    .collect(),
            })
            .collect();
        Self::new(domain, vec![source], snapshots)
    }

    pub fn domain(&self) -> &DomainConfig {
        &self.domain
    }

    pub fn sources(&self) -> &[Source] {
        &self.sources
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    /// `N_t` per snapshot.
    pub fn counts(&self) -> Vec<usize> {
        self.snapshots.iter().map(|s| s.observations.len()).collect()
    }

    /// `N_{t_0} + ... + N_{t_F}`.
    pub fn total_count(&self) -> usize {
        self.snapshots.iter().map(|s| s.observations.len()).sum()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// `(x, y)` positions of snapshot `k`.
    pub fn positions(&self, k: usize) -> Vec<[f64; 2]> {
        self.snapshots[k].observations.iter().map(Observation::position).collect()
    }

    /// Keep only records whose source satisfies `keep`. Snapshots left empty
    /// are dropped.
    pub fn filter_sources<F: Fn(&Source) -> bool>(&self, keep: F) -> Result<Self> {
        let mut remap = vec![None; self.sources.len()];
        let mut sources = Vec::new();
        for (i, s) in self.sources.iter().enumerate() {
            if keep(s) {
                remap[i] = Some(sources.len() as u32);
                sources.push(s.clone());
            }
        }
        let snapshots: Vec<Snapshot> = self
            .snapshots
            .iter()
            .filter_map(|s| {
                let observations: Vec<Observation> = s
                    .observations
                    .iter()
                    .filter_map(|o| remap[o.source as usize].map(|source| Observation { source, ..*o }))
                    .collect();
                (!observations.is_empty()).then_some(Snapshot {
                    time: s.time,
                    observations,
                })
            })
            .collect();
        Self::new(self.domain, sources, snapshots)
    }

    /// Apply `f` to every position. Used by the invariance tests and by
    /// synthetic transforms; the result is re-validated.
    pub fn map_positions<F: Fn([f64; 2]) -> [f64; 2]>(&self, f: F) -> Result<Self> {
        let snapshots = self
            .snapshots
            .iter()
            .map(|s| Snapshot {
                time: s.time,
                observations: s
                    .observations
                    .iter()
                    .map(|o| {
                        let [x, y] = f(o.position());
                        Observation { x, y, ..*o }
                    })
                    .collect(),
            })
            .collect();
        Self::new(self.domain, self.sources.clone(), snapshots)
    }

    /// Replace the domain (e.g. to enlarge the plot before a transform).
    pub fn with_domain(&self, domain: DomainConfig) -> Result<Self> {
        Self::new(domain, self.sources.clone(), self.snapshots.clone())
    }
}

/// Superimpose several datasets: positions at each time are concatenated.
pub fn combine(sets: &[SnapshotSet]) -> Result<SnapshotSet> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Incompatible("nothing to combine".into()))?;
    if sets.len() == 1 {
        return Ok(first.clone());
    }
    let times = first.times();
    let mut sources: Vec<Source> = Vec::new();
    let mut index: HashMap<Source, u32> = HashMap::new();
    let mut snapshots: Vec<Snapshot> = times
        .iter()
        .map(|&time| Snapshot {
            time,
            observations: Vec::new(),
        })
        .collect();
    for (k, set) in sets.iter().enumerate() {
        if set.domain != first.domain {
            return Err(Error::Incompatible(format!("set {k} has a different domain")));
        }
        let other = set.times();
        if other.len() != times.len()
            || other.iter().zip(&times).any(|(a, b)| (a - b).abs() > TIME_MATCH_TOL)
        {
            return Err(Error::Incompatible(format!(
                "set {k} has times {other:?}, expected {times:?}"
            )));
        }
        let remap: Vec<u32> = set
            .sources
            .iter()
            .map(|s| {
                *index.entry(s.clone()).or_insert_with(|| {
                    sources.push(s.clone());
                    (sources.len() - 1) as u32
                })
            })
            .collect();
        for (dst, src) in snapshots.iter_mut().zip(&set.snapshots) {
            dst.observations.extend(src.observations.iter().map(|o| Observation {
                source: remap[o.source as usize],
                ..*o
            }));
        }
    }
    SnapshotSet::new(first.domain, sources, snapshots)
}

/// What happened while reading a CSV file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    /// Rows dropped because `x_cm` or `y_cm` was empty.
    pub dropped_missing: usize,
    /// Rows within the slack band that were clamped onto the plot.
    pub clamped: usize,
}

const COLUMNS: [&str; 6] = ["time_hr", "x_cm", "y_cm", "z_cm", "plot_id", "replicate_id"];

struct ColumnMap {
    time: usize,
    x: usize,
    y: usize,
    z: Option<usize>,
    plot: usize,
    replicate: usize,
}

impl ColumnMap {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let mut found: HashMap<&str, usize> = HashMap::new();
        for (i, name) in header.iter().enumerate() {
            let name = name.trim();
            if !COLUMNS.contains(&name) {
                return Err(Error::Schema(format!("unexpected column `{name}`")));
            }
            if found.insert(COLUMNS[COLUMNS.iter().position(|c| *c == name).unwrap()], i).is_some() {
                return Err(Error::Schema(format!("duplicate column `{name}`")));
            }
        }
        let need = |name: &str| {
            found
                .get(name)
                .copied()
                .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
        };
        Ok(Self {
            time: need("time_hr")?,
            x: need("x_cm")?,
            y: need("y_cm")?,
            z: found.get("z_cm").copied(),
            plot: need("plot_id")?,
            replicate: need("replicate_id")?,
        })
    }
}

fn parse_field(value: &str, column: &str, line: usize) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Schema(format!("line {line}: bad {column} value `{value}`")))
}

/// Parse the snapshot CSV schema from any reader.
pub fn read_snapshots<R: Read>(reader: R, domain: &DomainConfig) -> Result<(SnapshotSet, LoadReport)> {
    domain.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Schema(format!("unreadable header: {e}")))?
        .clone();
    if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
        return Err(Error::NoRecords);
    }
    let cols = ColumnMap::from_header(&header)?;

    let mut report = LoadReport::default();
    let mut sources: Vec<Source> = Vec::new();
    let mut source_index: HashMap<Source, u32> = HashMap::new();
    let mut snapshots: Vec<Snapshot> = Vec::new();
    let mut outside = Vec::new();
    let mut previous: Option<f64> = None;

    for (k, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Schema(e.to_string()))?;
        // header is line 1
        let line = k + 2;
        report.rows_read += 1;
        let time = parse_field(&record[cols.time], "time_hr", line)?;
        if let Some(prev) = previous {
            if time < prev {
                return Err(Error::Ordering {
                    row: line,
                    time,
                    previous: prev,
                });
            }
        }
        previous = Some(time);

        let plot_id = record[cols.plot].trim();
        let replicate_id = record[cols.replicate].trim();
        if plot_id.is_empty() || replicate_id.is_empty() {
            return Err(Error::Schema(format!("line {line}: empty plot_id or replicate_id")));
        }
        let (xs, ys) = (record[cols.x].trim(), record[cols.y].trim());
        if xs.is_empty() || ys.is_empty() {
            report.dropped_missing += 1;
            continue;
        }
        let mut x = parse_field(xs, "x_cm", line)?;
        let mut y = parse_field(ys, "y_cm", line)?;
        let z = match cols.z.map(|c| record[c].trim()) {
            None | Some("") => None,
            Some(v) => Some(parse_field(v, "z_cm", line)?),
        };

        let inside = |v: f64, len: f64| (-DOMAIN_SLACK_CM..=len + DOMAIN_SLACK_CM).contains(&v);
        if !inside(x, domain.length_x) || !inside(y, domain.length_y) {
            outside.push(line);
            continue;
        }
        let (cx, cy) = (x.clamp(0.0, domain.length_x), y.clamp(0.0, domain.length_y));
        if cx != x || cy != y {
            report.clamped += 1;
            x = cx;
            y = cy;
        }

        let key = Source {
            plot_id: plot_id.to_owned(),
            replicate_id: replicate_id.to_owned(),
        };
        let source = *source_index.entry(key.clone()).or_insert_with(|| {
            sources.push(key);
            (sources.len() - 1) as u32
        });
        let obs = Observation { x, y, z, source };
        match snapshots.last_mut() {
            Some(s) if s.time == time => s.observations.push(obs),
            _ => snapshots.push(Snapshot {
                time,
                observations: vec![obs],
            }),
        }
    }
    if !outside.is_empty() {
        return Err(Error::OutOfDomain {
            count: outside.len(),
            rows: outside,
        });
    }
    if snapshots.is_empty() {
        return Err(Error::NoRecords);
    }
    let set = SnapshotSet::new(*domain, sources, snapshots)?;
    Ok((set, report))
}

/// Load and validate a snapshot CSV file. Dropped or clamped rows are
/// reported through `log::warn!`.
pub fn load_snapshots<P: AsRef<Path>>(path: P, domain: &DomainConfig) -> Result<SnapshotSet> {
    let file = std::fs::File::open(path.as_ref())?;
    let (set, report) = read_snapshots(std::io::BufReader::new(file), domain)?;
    if report.dropped_missing > 0 || report.clamped > 0 {
        log::warn!(
            "{}: {} row(s) dropped for missing x/y, {} clamped onto the plot ({} rows read)",
            path.as_ref().display(),
            report.dropped_missing,
            report.clamped,
            report.rows_read
        );
    }
    Ok(set)
}

/// Write a set in the snapshot CSV schema. Floats use the shortest
/// round-trip representation, so `read(write(s)) == s` exactly.
pub fn write_snapshots<W: Write>(set: &SnapshotSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    for snap in &set.snapshots {
        let t = snap.time.to_string();
        for o in &snap.observations {
            let src = &set.sources[o.source as usize];
            let z = o.z.map(|z| z.to_string()).unwrap_or_default();
            w.write_record([
                t.as_str(),
                &o.x.to_string(),
                &o.y.to_string(),
                &z,
                &src.plot_id,
                &src.replicate_id,
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_snapshots<P: AsRef<Path>>(set: &SnapshotSet, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_snapshots(set, std::io::BufWriter::new(file))
}
