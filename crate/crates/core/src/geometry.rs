//! Dumbbell-like domains on a masked uniform grid.
//!
//! A domain is a union of pairwise separated core rectangles joined by thin
//! channel rectangles. Cells are cell-centered: a cell belongs to the domain
//! iff its center lies in one of the rectangles.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt::sig9;

/// Sentinel for "no neighbor" / "not an active cell".
pub const NONE: u32 = u32::MAX;

/// Axis-aligned rectangle `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn new(x: f64, y: f64, width: f64, height: f64) -> Self {
        Rect { x, y, width, height }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn perimeter(&self) -> f64 {
        2.0 * (self.width + self.height)
    }

    fn contains(&self, px: f64, py: f64, tol: f64) -> bool {
        px >= self.x - tol && px < self.x + self.width - tol && py >= self.y - tol && py < self.y + self.height - tol
    }

    /// Euclidean distance between the closures; 0 when they intersect.
    fn distance(&self, other: &Rect) -> f64 {
        let gx = (other.x - (self.x + self.width)).max(self.x - (other.x + other.width));
        let gy = (other.y - (self.y + self.height)).max(self.y - (other.y + other.height));
        match (gx > 0.0, gy > 0.0) {
            (true, true) => gx.hypot(gy),
            (true, false) => gx,
            (false, true) => gy,
            (false, false) => 0.0,
        }
    }

    fn thickness(&self) -> f64 {
        self.width.min(self.height)
    }
}

/// Rectangle description of `Ω_ε = Ω_0 ∪ R_ε` plus the grid spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub cores: Vec<Rect>,
    #[serde(default)]
    pub channels: Vec<Rect>,
    #[serde(default = "default_h")]
    pub h: f64,
}

pub(crate) fn default_h() -> f64 {
    0.025
}

impl DomainSpec {
    /// Two unit squares at `(0,0)` and `(2,0)` joined by the channel
    /// `[1,2] × [0.5 − w/2, 0.5 + w/2]`.
    pub fn dumbbell(channel_width: f64, h: f64) -> Self {
        DomainSpec {
            cores: vec![Rect::new(0.0, 0.0, 1.0, 1.0), Rect::new(2.0, 0.0, 1.0, 1.0)],
            channels: vec![Rect::new(1.0, 0.5 - channel_width / 2.0, 1.0, channel_width)],
            h,
        }
    }

    /// A single unit square, no channels.
    pub fn unit_square(h: f64) -> Self {
        DomainSpec { cores: vec![Rect::new(0.0, 0.0, 1.0, 1.0)], channels: Vec::new(), h }
    }

    /// Copy with every channel's short side replaced by `width`, keeping the
    /// channel centered on its axis.
    pub fn with_channel_width(&self, width: f64) -> Self {
        let mut out = self.clone();
        for ch in &mut out.channels {
            if ch.width >= ch.height {
                ch.y += (ch.height - width) / 2.0;
                ch.height = width;
            } else {
                ch.x += (ch.width - width) / 2.0;
                ch.width = width;
            }
        }
        out
    }

    pub fn num_species(&self) -> usize {
        self.cores.len()
    }

    fn all_rects(&self) -> impl Iterator<Item = &Rect> {
        self.cores.iter().chain(self.channels.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RectKind {
    Core,
    Channel,
}

impl fmt::Display for RectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RectKind::Core => write!(f, "core"),
            RectKind::Channel => write!(f, "channel"),
        }
    }
}

/// A failed domain invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Violation {
    NoCores,
    NonPositiveSpacing { h: f64 },
    NonPositiveSize { kind: RectKind, index: usize },
    CoresNotDisjoint { a: usize, b: usize, distance: f64 },
    ChannelTooThin { channel: usize, thickness: f64, min: f64 },
    ChannelNotBridging { channel: usize, touches: usize },
    EmptyCore { core: usize },
    NotConnected { components: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoCores => write!(f, "no cores"),
            Violation::NonPositiveSpacing { h } => write!(f, "grid spacing {h} not positive"),
            Violation::NonPositiveSize { kind, index } => {
                write!(f, "{kind} {} has non-positive width or height", index + 1)
            }
            Violation::CoresNotDisjoint { a, b, distance } => {
                write!(f, "cores not disjoint: core {} and core {} are {distance} apart", a + 1, b + 1)
            }
            Violation::ChannelTooThin { channel, thickness, min } => {
                write!(f, "channel {} too thin: thickness {thickness} < {min}", channel + 1)
            }
            Violation::ChannelNotBridging { channel, touches } => {
                write!(f, "channel {} touches {touches} other set(s), needs at least 2", channel + 1)
            }
            Violation::EmptyCore { core } => write!(f, "core {} contains no cell center", core + 1),
            Violation::NotConnected { components } => {
                write!(f, "not connected: mask has {components} components")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid domain: {}", join(.0))]
    InvalidSpec(Vec<Violation>),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// Per-cell tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Core(usize),
    Channel,
    Outside,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Core(i) => write!(f, "core_{}", i + 1),
            Label::Channel => write!(f, "channel"),
            Label::Outside => write!(f, "outside"),
        }
    }
}

/// Label selector for [`DomainGrid::measure`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Core(usize),
    /// `Ω_0`, the union of all cores.
    Cores,
    Channel,
    /// The whole of `Ω_ε`.
    Domain,
    Outside,
}

impl std::str::FromStr for Region {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "channel" => Ok(Region::Channel),
            "cores" => Ok(Region::Cores),
            "domain" => Ok(Region::Domain),
            "outside" => Ok(Region::Outside),
            _ => s
                .strip_prefix("core_")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(|n| Region::Core(n - 1))
                .ok_or_else(|| GeometryError::UnknownLabel(s.to_string())),
        }
    }
}

struct Raster {
    nx: usize,
    ny: usize,
    x0: f64,
    y0: f64,
}

impl Raster {
    fn new(spec: &DomainSpec) -> Self {
        let h = spec.h;
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for r in spec.all_rects() {
            x0 = x0.min(r.x);
            y0 = y0.min(r.y);
            x1 = x1.max(r.x + r.width);
            y1 = y1.max(r.y + r.height);
        }
        let cells = |ext: f64| ((ext / h) - 1e-6).ceil().max(1.0) as usize;
        Raster { nx: cells(x1 - x0), ny: cells(y1 - y0), x0, y0 }
    }

    fn center(&self, i: usize, j: usize, h: f64) -> (f64, f64) {
        (self.x0 + (i as f64 + 0.5) * h, self.y0 + (j as f64 + 0.5) * h)
    }

    fn cells_in<'a>(&'a self, r: &'a Rect, h: f64) -> impl Iterator<Item = usize> + 'a {
        let tol = 1e-9 * h;
        (0..self.ny).flat_map(move |j| {
            (0..self.nx).filter_map(move |i| {
                let (x, y) = self.center(i, j, h);
                r.contains(x, y, tol).then_some(j * self.nx + i)
            })
        })
    }
}

fn neighbors4(idx: usize, nx: usize, ny: usize) -> [Option<usize>; 4] {
    let (i, j) = (idx % nx, idx / nx);
    [(i + 1 < nx).then(|| idx + 1), (i > 0).then(|| idx - 1), (j + 1 < ny).then(|| idx + nx), (j > 0).then(|| idx - nx)]
}

fn count_components(mask: &[bool], nx: usize, ny: usize) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(c) = queue.pop_front() {
            for n in neighbors4(c, nx, ny).into_iter().flatten() {
                if mask[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    components
}

/// Checks every domain invariant; an empty list means the spec is valid.
pub fn validate_spec(spec: &DomainSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    if spec.cores.is_empty() {
        out.push(Violation::NoCores);
    }
    if !(spec.h > 0.0 && spec.h.is_finite()) {
        out.push(Violation::NonPositiveSpacing { h: spec.h });
        return out;
    }
    let bad_size = |r: &Rect| !(r.width > 0.0 && r.height > 0.0 && r.x.is_finite() && r.y.is_finite());
    for (index, r) in spec.cores.iter().enumerate() {
        if bad_size(r) {
            out.push(Violation::NonPositiveSize { kind: RectKind::Core, index });
        }
    }
    for (index, r) in spec.channels.iter().enumerate() {
        if bad_size(r) {
            out.push(Violation::NonPositiveSize { kind: RectKind::Channel, index });
        }
    }
    if !out.is_empty() {
        return out;
    }

    let h = spec.h;
    let tol = 1e-9 * h;
    for a in 0..spec.cores.len() {
        for b in a + 1..spec.cores.len() {
            let distance = spec.cores[a].distance(&spec.cores[b]);
            if distance < h - tol {
                out.push(Violation::CoresNotDisjoint { a, b, distance });
            }
        }
    }
    let min_thickness = MIN_CHANNEL_CELLS as f64 * h;
    for (channel, r) in spec.channels.iter().enumerate() {
        if r.thickness() < min_thickness - tol {
            out.push(Violation::ChannelTooThin { channel, thickness: r.thickness(), min: min_thickness });
        }
    }

    let raster = Raster::new(spec);
    let (nx, ny) = (raster.nx, raster.ny);
    let rects: Vec<&Rect> = spec.all_rects().collect();
    let members: Vec<Vec<usize>> = rects.iter().map(|r| raster.cells_in(r, h).collect()).collect();
    let mut owner: Vec<Vec<usize>> = vec![Vec::new(); nx * ny];
    for (ri, cells) in members.iter().enumerate() {
        for &c in cells {
            owner[c].push(ri);
        }
    }
    for (core, cells) in members.iter().take(spec.cores.len()).enumerate() {
        if cells.is_empty() {
            out.push(Violation::EmptyCore { core });
        }
    }
    let nc = spec.cores.len();
    for channel in 0..spec.channels.len() {
        let me = nc + channel;
        let mut touched = vec![false; rects.len()];
        for &c in &members[me] {
            let around = std::iter::once(Some(c)).chain(neighbors4(c, nx, ny));
            for n in around.flatten() {
                for &o in &owner[n] {
                    if o != me {
                        touched[o] = true;
                    }
                }
            }
        }
        let touches = touched.iter().filter(|&&t| t).count();
        if touches < 2 {
            out.push(Violation::ChannelNotBridging { channel, touches });
        }
    }
    let mask: Vec<bool> = owner.iter().map(|o| !o.is_empty()).collect();
    let components = count_components(&mask, nx, ny);
    if components != 1 {
        out.push(Violation::NotConnected { components });
    }
    out
}

/// Minimum channel thickness, in cells.
pub const MIN_CHANNEL_CELLS: usize = 2;

/// Masked uniform grid carrying per-cell labels and the active-cell
/// adjacency used by every stencil.
#[derive(Debug, Clone)]
pub struct DomainGrid {
    nx: usize,
    ny: usize,
    h: f64,
    origin: (f64, f64),
    k: usize,
    labels: Vec<Label>,
    active: Vec<usize>,
    index: Vec<u32>,
    /// East, west, north, south neighbor per active cell.
    nbrs: Vec<[u32; 4]>,
    channel_length: f64,
}

/// Builds the grid for a valid spec.
pub fn build_domain(spec: &DomainSpec) -> Result<DomainGrid, GeometryError> {
    let violations = validate_spec(spec);
    if !violations.is_empty() {
        return Err(GeometryError::InvalidSpec(violations));
    }
    let h = spec.h;
    let raster = Raster::new(spec);
    let (nx, ny) = (raster.nx, raster.ny);
    let mut labels = vec![Label::Outside; nx * ny];
    for r in &spec.channels {
        for c in raster.cells_in(r, h) {
            labels[c] = Label::Channel;
        }
    }
    // Cores take precedence over channels; lower index wins among cores.
    for (i, r) in spec.cores.iter().enumerate().rev() {
        for c in raster.cells_in(r, h) {
            labels[c] = Label::Core(i);
        }
    }
    let active: Vec<usize> = (0..nx * ny).filter(|&c| labels[c] != Label::Outside).collect();
    let mut index = vec![NONE; nx * ny];
    for (a, &c) in active.iter().enumerate() {
        index[c] = a as u32;
    }
    let nbrs = active
        .iter()
        .map(|&c| {
            let mut out = [NONE; 4];
            for (slot, n) in neighbors4(c, nx, ny).into_iter().enumerate() {
                if let Some(n) = n {
                    out[slot] = index[n];
                }
            }
            out
        })
        .collect();
    let channel_length = spec.channels.iter().map(|r| r.width.max(r.height)).fold(f64::INFINITY, f64::min);
    Ok(DomainGrid {
        nx,
        ny,
        h,
        origin: (raster.x0, raster.y0),
        k: spec.cores.len(),
        labels,
        active,
        index,
        nbrs,
        channel_length,
    })
}

impl DomainGrid {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn cell_area(&self) -> f64 {
        self.h * self.h
    }

    /// Number of cores, i.e. species.
    pub fn num_cores(&self) -> usize {
        self.k
    }

    /// Number of mask-true cells.
    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Label of active cell `a`.
    pub fn label(&self, a: usize) -> Label {
        self.labels[self.active[a]]
    }

    /// Label of raw raster cell `(i, j)`.
    pub fn raster_label(&self, i: usize, j: usize) -> Label {
        self.labels[j * self.nx + i]
    }

    /// Active index of raster cell `(i, j)`, if it is in the domain.
    pub fn active_index(&self, i: usize, j: usize) -> Option<usize> {
        let a = self.index[j * self.nx + i];
        (a != NONE).then_some(a as usize)
    }

    /// Raster coordinates `(i, j)` of active cell `a`.
    pub fn raster_coords(&self, a: usize) -> (usize, usize) {
        let c = self.active[a];
        (c % self.nx, c / self.nx)
    }

    pub fn center(&self, a: usize) -> (f64, f64) {
        let (i, j) = self.raster_coords(a);
        (self.origin.0 + (i as f64 + 0.5) * self.h, self.origin.1 + (j as f64 + 0.5) * self.h)
    }

    /// East, west, north, south neighbors of active cell `a` ([`NONE`] when
    /// absent).
    pub fn neighbors(&self, a: usize) -> &[u32; 4] {
        &self.nbrs[a]
    }

    pub fn is_core(&self, a: usize) -> bool {
        matches!(self.label(a), Label::Core(_))
    }

    /// Length of the shortest channel along its long axis; infinite without
    /// channels.
    pub fn channel_length(&self) -> f64 {
        self.channel_length
    }

    pub fn matches(&self, a: usize, region: Region) -> bool {
        match (region, self.label(a)) {
            (Region::Core(i), Label::Core(j)) => i == j,
            (Region::Cores, Label::Core(_)) => true,
            (Region::Channel, Label::Channel) => true,
            (Region::Domain, _) => true,
            _ => false,
        }
    }

    /// `h² × #cells` carrying the selected label; `Outside` measures 0.
    pub fn measure(&self, region: Region) -> Result<f64, GeometryError> {
        if let Region::Core(i) = region {
            if i >= self.k {
                return Err(GeometryError::UnknownLabel(format!("core_{}", i + 1)));
            }
        }
        if region == Region::Outside {
            return Ok(0.0);
        }
        let n = (0..self.len()).filter(|&a| self.matches(a, region)).count();
        Ok(n as f64 * self.cell_area())
    }

    /// Measure of core `i`; panics on an out-of-range index.
    pub fn core_measure(&self, i: usize) -> f64 {
        self.measure(Region::Core(i)).expect("core index in range")
    }

    pub fn domain_measure(&self) -> f64 {
        self.len() as f64 * self.cell_area()
    }

    pub fn channel_measure(&self) -> f64 {
        self.measure(Region::Channel).expect("channel is always a valid region")
    }

    /// Every raster cell as `x,y,label`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,label\n");
        for j in 0..self.ny {
            for i in 0..self.nx {
                let x = self.origin.0 + (i as f64 + 0.5) * self.h;
                let y = self.origin.1 + (j as f64 + 0.5) * self.h;
                out.push_str(&format!("{},{},{}\n", sig9(x), sig9(y), self.raster_label(i, j)));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_dumbbell_is_valid() {
        assert!(validate_spec(&DomainSpec::dumbbell(0.1, 0.025)).is_empty());
    }

    #[test]
    fn overlapping_cores_rejected() {
        let spec = DomainSpec {
            cores: vec![Rect::new(0.0, 0.0, 1.0, 1.0), Rect::new(0.5, 0.0, 1.0, 1.0)],
            channels: vec![],
            h: 0.025,
        };
        let v = validate_spec(&spec);
        assert!(v.iter().any(|v| matches!(v, Violation::CoresNotDisjoint { a: 0, b: 1, .. })));
        assert!(v.iter().any(|v| v.to_string().contains("cores not disjoint")));
    }

    #[test]
    fn missing_channel_is_disconnected() {
        let spec = DomainSpec {
            cores: vec![Rect::new(0.0, 0.0, 1.0, 1.0), Rect::new(2.0, 0.0, 1.0, 1.0)],
            channels: vec![],
            h: 0.025,
        };
        let v = validate_spec(&spec);
        assert_eq!(v, vec![Violation::NotConnected { components: 2 }]);
        assert!(v[0].to_string().contains("not connected"));
    }

    #[test]
    fn dangling_channel_rejected() {
        let mut spec = DomainSpec::unit_square(0.05);
        spec.channels.push(Rect::new(1.0, 0.4, 0.5, 0.2));
        let v = validate_spec(&spec);
        assert!(v.iter().any(|v| matches!(v, Violation::ChannelNotBridging { channel: 0, touches: 1 })));
    }

    #[test]
    fn thin_channel_rejected() {
        let v = validate_spec(&DomainSpec::dumbbell(0.03, 0.025));
        assert!(v.iter().any(|v| matches!(v, Violation::ChannelTooThin { .. })));
    }

    #[test]
    fn degenerate_rectangles_rejected() {
        let mut spec = DomainSpec::unit_square(0.1);
        spec.cores[0].width = 0.0;
        assert!(matches!(validate_spec(&spec)[..], [Violation::NonPositiveSize { kind: RectKind::Core, index: 0 }]));
        spec.cores.clear();
        assert!(validate_spec(&spec).contains(&Violation::NoCores));
    }

    #[test]
    fn unit_square_tiles_exactly() {
        let g = build_domain(&DomainSpec::unit_square(0.1)).unwrap();
        assert_eq!((g.nx(), g.ny()), (10, 10));
        assert_eq!(g.len(), 100);
        assert!((g.measure(Region::Core(0)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(g.measure(Region::Outside).unwrap(), 0.0);
    }

    #[test]
    fn dumbbell_measures() {
        // cell-count oracle against exact rectangle areas
        let g = build_domain(&DomainSpec::dumbbell(0.1, 0.05)).unwrap();
        assert!((g.core_measure(0) - 1.0).abs() <= 0.05);
        assert!((g.core_measure(1) - 1.0).abs() <= 0.05);
        assert!((g.channel_measure() - 0.1).abs() <= 0.02);

        let g = build_domain(&DomainSpec::dumbbell(0.1, 0.025)).unwrap();
        assert!((g.channel_measure() - 0.1).abs() <= 0.005);
        assert!((g.domain_measure() - 2.1).abs() < 1e-9);
    }

    #[test]
    fn shrinking_channels_shrink_measure() {
        let m: Vec<f64> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&w| build_domain(&DomainSpec::dumbbell(w, 0.025)).unwrap().channel_measure())
            .collect();
        assert!(m[0] > m[1] && m[1] > m[2] && m[2] > 0.0);
    }

    #[test]
    fn labels_and_unknown_regions() {
        let g = build_domain(&DomainSpec::dumbbell(0.1, 0.05)).unwrap();
        assert!(matches!(g.measure(Region::Core(2)), Err(GeometryError::UnknownLabel(_))));
        assert!("core_0".parse::<Region>().is_err());
        assert_eq!("core_2".parse::<Region>().unwrap(), Region::Core(1));
        assert_eq!("channel".parse::<Region>().unwrap(), Region::Channel);
        for a in 0..g.len() {
            let (x, _) = g.center(a);
            match g.label(a) {
                Label::Core(0) => assert!(x < 1.0),
                Label::Core(1) => assert!(x > 2.0),
                Label::Channel => assert!(x > 1.0 && x < 2.0),
                l => panic!("unexpected {l}"),
            }
        }
    }

    #[test]
    fn build_rejects_invalid() {
        let spec = DomainSpec { cores: vec![], channels: vec![], h: 0.1 };
        assert!(matches!(build_domain(&spec), Err(GeometryError::InvalidSpec(_))));
    }

    #[test]
    fn csv_dump_has_every_cell() {
        let g = build_domain(&DomainSpec::dumbbell(0.1, 0.05)).unwrap();
        let csv = g.to_csv();
        assert_eq!(csv.lines().count(), 1 + g.nx() * g.ny());
        assert!(csv.starts_with("x,y,label\n0.025,0.025,core_1\n"));
        assert!(csv.contains(",outside\n"));
    }

    #[test]
    fn sweep_width_recenters_channel() {
        let s = DomainSpec::dumbbell(0.1, 0.025).with_channel_width(0.2);
        let ch = s.channels[0];
        assert!((ch.y - 0.4).abs() < 1e-12 && ch.height == 0.2 && ch.width == 1.0);
    }
}
