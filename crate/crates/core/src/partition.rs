//! Finite-depth cone partition of the extended state space.
//!
//! At depth `s` the annulus `1/s ≤ ‖(x, y)‖ ≤ r − 1/s` is covered, strip by
//! strip, by ice-cream cones whose apexes sit on a polar grid. Cones that
//! meet a switching branch are split into their two side pieces. Inside a
//! strip a point belongs to the latest piece that contains it, where pieces
//! clear of the curve come before pieces touching it. Points of the strip
//! covered by no piece form the strip's remainder, which the next depth
//! partitions again. The time axis through the origin is the bad set and
//! comes last.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlSign, Trajectory};
use crate::geometry::{
    bouligand_estimate, distance_to_c1, distance_to_c2, extended_field, side_of, speed_bound,
    ExtendedPoint, IceCreamCone, Side, StatePoint,
};
use crate::report::{Bound, Check};

/// Largest number of cone pieces allowed to meet a probe ball in the local
/// finiteness check.
pub const LOCAL_FINITENESS_LIMIT: f64 = 10_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartitionError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("coverage error: {0}")]
    Coverage(String),
}

/// Switching branch met by a split cone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    C1,
    C2,
}

impl Branch {
    /// The side whose piece contains the branch itself.
    pub fn touching_side(self) -> Side {
        match self {
            Branch::C1 => Side::D2,
            Branch::C2 => Side::D1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConeKind {
    Whole(Side),
    Split(Branch),
    /// The closed cone meets both branches; never produced by a valid cover.
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PieceGroup {
    Whole,
    SplitClear,
    Touching,
}

/// A cone piece. The derived order is the order of cells inside a strip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PieceId {
    pub group: PieceGroup,
    pub layer: u64,
    pub ring: u32,
    pub spoke: u32,
    pub side: Side,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub depth: usize,
    pub strip: u64,
    pub piece: PieceId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Location {
    Green(CellId),
    /// Not covered up to the approximation depth; the strip index is taken
    /// at that depth.
    Remainder { depth: usize, strip: u64 },
    Bad,
    Outside,
}

impl Location {
    pub fn cell(&self) -> Option<&CellId> {
        match self {
            Location::Green(id) => Some(id),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripSchedule {
    pub cut_times: Vec<f64>,
}

/// Cone layout for one depth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeCover {
    pub depth: usize,
    pub r: f64,
    pub slope: f64,
    /// Upper bound on cone heights keeping each closed cone off one branch.
    pub max_height: f64,
    pub inner: f64,
    pub outer: f64,
    pub rings: u32,
    pub spokes: u32,
    pub ring_step: f64,
    pub spoke_step: f64,
    /// Largest distance from an annulus point to its nearest apex.
    pub mesh: f64,
    /// Strip length `2^{−strip_exp}`.
    pub strip_exp: i32,
    pub strip_len: f64,
    /// Apexes sit `lift` below the strip they cover.
    pub lift: f64,
    pub height: f64,
}

/// Ratio of the cone footprint to the apex norm below which a closed cone
/// cannot reach both branches inside the ball of radius `r`.
pub fn clearance_ratio(r: f64) -> f64 {
    1.0 / (1.0 + (1.0 + r * r / 4.0).sqrt())
}

impl ConeCover {
    pub fn new(depth: usize, r: f64) -> Result<Self, PartitionError> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(PartitionError::Domain(format!("radius {r} must be positive")));
        }
        if !(depth as f64 > 2.0 / r) {
            return Err(PartitionError::Domain(format!("depth {depth} must exceed 2/r = {}", 2.0 / r)));
        }
        let s = depth as f64;
        let slope = speed_bound(r);
        let max_height = clearance_ratio(r) / (2.0 * s * slope);
        let inner = 1.0 / s;
        let outer = r - 1.0 / s;
        let target = slope * max_height / 3.0;
        let rings = ((outer - inner) / (target * std::f64::consts::SQRT_2)).ceil().max(1.0) as u32;
        let spokes = (2.0 * std::f64::consts::PI * r / (target * std::f64::consts::SQRT_2))
            .ceil()
            .max(8.0) as u32;
        let ring_step = (outer - inner) / rings as f64;
        let spoke_step = 2.0 * std::f64::consts::PI / spokes as f64;
        let mesh = (0.5 * ring_step).hypot(0.5 * r * spoke_step);
        let bound = 2.0 * max_height / 3.0;
        let mut strip_exp = (-bound.log2()).ceil() as i32;
        while 2f64.powi(-strip_exp) > bound {
            strip_exp += 1;
        }
        let strip_len = 2f64.powi(-strip_exp);
        let lift = mesh / slope;
        Ok(ConeCover {
            depth,
            r,
            slope,
            max_height,
            inner,
            outer,
            rings,
            spokes,
            ring_step,
            spoke_step,
            mesh,
            strip_exp,
            strip_len,
            lift,
            height: strip_len + lift,
        })
    }

    pub fn strip_of(&self, t: f64) -> u64 {
        (t / self.strip_len).floor() as u64
    }

    pub fn apex_state(&self, ring: u32, spoke: u32) -> StatePoint {
        let rho = self.inner + (ring as f64 + 0.5) * self.ring_step;
        let theta = spoke as f64 * self.spoke_step;
        StatePoint::new(rho * theta.cos(), rho * theta.sin())
    }

    pub fn apex_time(&self, layer: u64) -> f64 {
        layer as f64 * self.strip_len - self.lift
    }

    pub fn cone(&self, layer: u64, ring: u32, spoke: u32) -> IceCreamCone {
        let p = self.apex_state(ring, spoke);
        IceCreamCone { apex: p.at(self.apex_time(layer)), slope: self.slope, height: self.height }
    }

    /// Which branches the closed cone meets; independent of the layer.
    pub fn kind(&self, ring: u32, spoke: u32) -> ConeKind {
        let p = self.apex_state(ring, spoke);
        let reach = self.slope * self.height;
        match (distance_to_c1(&p) <= reach, distance_to_c2(&p) <= reach) {
            (false, false) => match side_of(&p, 0.0) {
                Ok(Some(side)) => ConeKind::Whole(side),
                _ => ConeKind::Both,
            },
            (true, false) => ConeKind::Split(Branch::C1),
            (false, true) => ConeKind::Split(Branch::C2),
            (true, true) => ConeKind::Both,
        }
    }

    pub fn cone_count(&self) -> usize {
        self.rings as usize * self.spokes as usize
    }

    /// Cones of `layer` whose footprint at time `t`, widened by `pad`, reaches `p`.
    fn candidates(&self, layer: u64, p: &StatePoint, t: f64, pad: f64, out: &mut Vec<(u32, u32)>) {
        out.clear();
        let reach = self.slope * (t - self.apex_time(layer)) + pad;
        if reach < 0.0 {
            return;
        }
        let rho = p.norm();
        let lo = ((rho - reach - self.inner) / self.ring_step - 0.5).ceil().max(0.0);
        let hi = ((rho + reach - self.inner) / self.ring_step - 0.5).floor();
        if hi < lo || hi < 0.0 {
            return;
        }
        let hi = hi.min(self.rings as f64 - 1.0);
        let gap = rho - reach;
        let theta = p.y.atan2(p.x).rem_euclid(2.0 * std::f64::consts::PI);
        let window = if gap > 0.0 { 0.5 * std::f64::consts::PI * reach / gap } else { f64::INFINITY };
        let n = self.spokes as i64;
        let spokes: Vec<u32> = if window >= std::f64::consts::PI {
            (0..self.spokes).collect()
        } else {
            let a = ((theta - window) / self.spoke_step).floor() as i64;
            let b = ((theta + window) / self.spoke_step).ceil() as i64;
            if b - a + 1 >= n {
                (0..self.spokes).collect()
            } else {
                (a..=b).map(|j| j.rem_euclid(n) as u32).collect()
            }
        };
        for ring in lo as u32..=hi as u32 {
            for &spoke in &spokes {
                out.push((ring, spoke));
            }
        }
    }

    /// Layers whose cones can contain points at time `t`.
    fn layers_at(&self, t: f64) -> std::ops::RangeInclusive<u64> {
        let k = self.strip_of(t);
        let last = self.strip_of(t + self.lift);
        k..=last.max(k)
    }

    /// The latest piece of this depth containing `z`.
    pub fn best_piece(&self, z: &ExtendedPoint, side: Side) -> Option<PieceId> {
        let p = z.state();
        let mut buf = Vec::new();
        let mut best: Option<PieceId> = None;
        for layer in self.layers_at(z.t) {
            self.candidates(layer, &p, z.t, 0.0, &mut buf);
            for &(ring, spoke) in &buf {
                if !self.cone(layer, ring, spoke).contains(z) {
                    continue;
                }
                let group = match self.kind(ring, spoke) {
                    ConeKind::Whole(_) => PieceGroup::Whole,
                    ConeKind::Split(b) if b.touching_side() == side => PieceGroup::Touching,
                    ConeKind::Split(_) => PieceGroup::SplitClear,
                    ConeKind::Both => PieceGroup::Touching,
                };
                let piece = PieceId { group, layer, ring, spoke, side };
                if best.is_none_or(|b| piece > b) {
                    best = Some(piece);
                }
            }
        }
        best
    }

    /// Number of cone pieces whose closure comes within `pad` of `z`.
    pub fn pieces_near(&self, z: &ExtendedPoint, pad: f64) -> usize {
        let p = z.state();
        let mut buf = Vec::new();
        let mut count = 0;
        let first = self.strip_of((z.t - pad).max(0.0));
        let last = self.strip_of(z.t + pad + self.lift);
        for layer in first..=last {
            let t0 = self.apex_time(layer);
            if z.t + pad < t0 || z.t - pad > t0 + self.height {
                continue;
            }
            let t = (z.t + pad).min(t0 + self.height);
            self.candidates(layer, &p, t, pad, &mut buf);
            for &(ring, spoke) in &buf {
                let a = self.apex_state(ring, spoke);
                if a.dist(&p) <= self.slope * (t - t0) + pad {
                    count += match self.kind(ring, spoke) {
                        ConeKind::Whole(_) => 1,
                        _ => 2,
                    };
                }
            }
        }
        count
    }
}

/// A finite-depth invariant partial approximation of the extended Fuller field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialApproximation {
    pub r: f64,
    pub t_end: f64,
    pub eps: f64,
    pub base_depth: usize,
    pub depth: usize,
    /// `+1` for the genuine field; `−1` flips every cell's control.
    pub field_sign: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenCell {
    pub id: CellId,
    pub side: Side,
    pub field_u: ControlSign,
    pub apex: ExtendedPoint,
    pub slope: f64,
    pub height: f64,
    pub witness: ExtendedPoint,
}

/// Builds the cover of `M_s × [0, T)` at depth `s`.
pub fn build_ms_cover(s: usize, r: f64, t_end: f64) -> Result<PartialApproximation, PartitionError> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(PartitionError::Domain(format!("horizon {t_end} must be positive")));
    }
    ConeCover::new(s, r)?;
    Ok(PartialApproximation { r, t_end, eps: 0.0, base_depth: s, depth: s, field_sign: 1.0 })
}

/// Adds the next depth. Cells of earlier depths are unchanged.
pub fn refine(pa: &PartialApproximation) -> PartialApproximation {
    PartialApproximation { depth: pa.depth + 1, ..pa.clone() }
}

impl PartialApproximation {
    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    /// Negative control: every cell carries the opposite control.
    pub fn corrupt_field_sign(&self) -> Self {
        PartialApproximation { field_sign: -self.field_sign, ..self.clone() }
    }

    pub fn cover(&self, depth: usize) -> ConeCover {
        ConeCover::new(depth, self.r).expect("depth validated at construction")
    }

    pub fn strip_schedule(&self, depth: usize) -> StripSchedule {
        let h = self.cover(depth).strip_len;
        let cut_times = (1..).map(|k| k as f64 * h).take_while(|t| *t < self.t_end).collect();
        StripSchedule { cut_times }
    }

    pub fn in_domain(&self, z: &ExtendedPoint) -> bool {
        z.is_finite() && z.t >= 0.0 && z.t < self.t_end && z.state().norm() < self.r
    }

    /// Inclusive range of depths at which `p` can lie in a cone.
    fn depth_range(&self, p: &StatePoint) -> Option<(usize, usize)> {
        let rho = p.norm();
        let m = (1.0 / rho).max(1.0 / (self.r - rho));
        let lo = ((1.0 - 0.5 * clearance_ratio(self.r)) * m).floor().max(self.base_depth as f64);
        let hi = m.ceil().max(self.base_depth as f64).min(self.depth as f64);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }

    pub fn locate(&self, z: &ExtendedPoint) -> Location {
        if !self.in_domain(z) {
            return Location::Outside;
        }
        let p = z.state();
        let side = match side_of(&p, 0.0) {
            Ok(Some(side)) => side,
            _ => return Location::Bad,
        };
        if let Some((lo, hi)) = self.depth_range(&p) {
            for depth in lo..=hi {
                let cover = self.cover(depth);
                if let Some(piece) = cover.best_piece(z, side) {
                    return Location::Green(CellId { depth, strip: cover.strip_of(z.t), piece });
                }
            }
        }
        Location::Remainder { depth: self.depth, strip: self.cover(self.depth).strip_of(z.t) }
    }

    /// True when `z` lies in the closed annulus covered at the current depth.
    pub fn in_covered_band(&self, z: &ExtendedPoint) -> bool {
        let rho = z.state().norm();
        let s = self.depth as f64;
        self.in_domain(z) && rho >= 1.0 / s && rho <= self.r - 1.0 / s
    }

    pub fn control_of(&self, id: &CellId) -> f64 {
        self.field_sign * id.piece.side.control()
    }

    /// Velocity of the cell field at `z`.
    pub fn velocity(&self, id: &CellId, z: &ExtendedPoint) -> [f64; 3] {
        [z.y, self.control_of(id), 1.0]
    }

    pub fn green_cell(&self, id: &CellId, witness: ExtendedPoint) -> GreenCell {
        let cover = self.cover(id.depth);
        let cone = cover.cone(id.piece.layer, id.piece.ring, id.piece.spoke);
        let u = if self.control_of(id) > 0.0 { ControlSign::Plus } else { ControlSign::Minus };
        GreenCell {
            id: *id,
            side: id.piece.side,
            field_u: u,
            apex: cone.apex,
            slope: cone.slope,
            height: cone.height,
            witness,
        }
    }

    /// Some point whose location is the given cell, searched on a fixed
    /// pattern of times and offsets inside the cone. Points whose axis
    /// neighbours at `10⁻³` strip lengths share the cell are preferred.
    pub fn find_witness(&self, id: &CellId) -> Option<ExtendedPoint> {
        let cover = self.cover(id.depth);
        let cone = cover.cone(id.piece.layer, id.piece.ring, id.piece.spoke);
        let lo = (id.strip as f64 * cover.strip_len).max(cone.apex.t).max(0.0);
        let hi = ((id.strip + 1) as f64 * cover.strip_len).min(cone.top_time()).min(self.t_end);
        if !(hi > lo) {
            return None;
        }
        let margin = 1e-3 * cover.strip_len;
        let interior = |z: &ExtendedPoint| {
            (0..3).all(|axis| {
                [-margin, margin].iter().all(|&m| {
                    let mut v = [0.0; 3];
                    v[axis] = 1.0;
                    self.locate(&z.offset(&v, m)) == Location::Green(*id)
                })
            })
        };
        let mut fallback = None;
        for frac in [0.5, 0.25, 0.75, 0.1, 0.9, 0.02, 0.98] {
            let t = lo + frac * (hi - lo);
            let reach = cone.slope * (t - cone.apex.t);
            for f in [0.0, 0.5, 0.9] {
                let dirs = if f == 0.0 { 1 } else { 16 };
                for k in 0..dirs {
                    let a = 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / dirs as f64;
                    let z = ExtendedPoint::new(
                        cone.apex.x + f * reach * a.cos(),
                        cone.apex.y + f * reach * a.sin(),
                        t,
                    );
                    if self.locate(&z) == Location::Green(*id) {
                        if interior(&z) {
                            return Some(z);
                        }
                        fallback.get_or_insert(z);
                    }
                }
            }
        }
        fallback
    }

    /// Green cells of one strip at one depth that have a witness, in order.
    pub fn cells_in_strip(&self, depth: usize, strip: u64) -> Result<Vec<GreenCell>, PartitionError> {
        if depth < self.base_depth || depth > self.depth {
            return Err(PartitionError::Domain(format!(
                "depth {depth} outside [{}, {}]",
                self.base_depth, self.depth
            )));
        }
        let cover = self.cover(depth);
        let mut ids = Vec::new();
        for layer in [strip, strip + 1] {
            for ring in 0..cover.rings {
                for spoke in 0..cover.spokes {
                    let pieces: Vec<(PieceGroup, Side)> = match cover.kind(ring, spoke) {
                        ConeKind::Whole(side) => vec![(PieceGroup::Whole, side)],
                        ConeKind::Split(b) => {
                            let t = b.touching_side();
                            vec![(PieceGroup::SplitClear, t.opposite()), (PieceGroup::Touching, t)]
                        }
                        ConeKind::Both => vec![(PieceGroup::Touching, Side::D1), (PieceGroup::Touching, Side::D2)],
                    };
                    for (group, side) in pieces {
                        ids.push(CellId { depth, strip, piece: PieceId { group, layer, ring, spoke, side } });
                    }
                }
            }
        }
        ids.sort_by_key(|id| id.piece);
        Ok(ids
            .par_iter()
            .filter_map(|id| self.find_witness(id).map(|w| self.green_cell(id, w)))
            .collect())
    }

    fn strip_at(&self, depth: usize, strip: u64, level: usize) -> u64 {
        let shift = self.cover(depth).strip_exp - self.cover(level).strip_exp;
        strip >> shift.max(0)
    }

    /// Position comparison in the partition order. `None` when either point
    /// lies outside the domain.
    pub fn compare(&self, a: &Location, b: &Location) -> Option<Ordering> {
        use Location::*;
        // (strip depth, strip, effective depth, piece)
        let key = |l: &Location| match *l {
            Green(id) => Some((id.depth, id.strip, id.depth, Some(id.piece))),
            Remainder { depth, strip } => Some((depth, strip, depth + 1, None)),
            _ => None,
        };
        match (a, b) {
            (Outside, _) | (_, Outside) => None,
            (Bad, Bad) => Some(Ordering::Equal),
            (Bad, _) => Some(Ordering::Greater),
            (_, Bad) => Some(Ordering::Less),
            _ => {
                let (da, sa, ea, pa) = key(a)?;
                let (db, sb, eb, pb) = key(b)?;
                let level = da.min(db);
                let ka = self.strip_at(da, sa, level);
                let kb = self.strip_at(db, sb, level);
                Some(ka.cmp(&kb).then_with(|| eb.cmp(&ea)).then_with(|| pa.cmp(&pb)))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: f64,
    pub location: Location,
}

fn trace_points(traj: &Trajectory, sample_step: f64) -> Vec<ExtendedPoint> {
    let mut pts: Vec<ExtendedPoint> = traj.samples(Some(sample_step)).into_iter().map(|(z, _)| z).collect();
    pts.extend(traj.switch_points.iter().copied());
    pts.sort_by(|a, b| a.t.total_cmp(&b.t));
    pts
}

/// Cell of every sampled trajectory point. Points covered by no cell are a
/// coverage error.
pub fn cell_index_trace(
    traj: &Trajectory,
    pa: &PartialApproximation,
    sample_step: f64,
) -> Result<Vec<TraceEntry>, PartitionError> {
    if !(sample_step > 0.0) {
        return Err(PartitionError::Domain(format!("sample step {sample_step} must be positive")));
    }
    trace_points(traj, sample_step)
        .into_iter()
        .map(|z| match pa.locate(&z) {
            loc @ (Location::Green(_) | Location::Bad) => Ok(TraceEntry { t: z.t, location: loc }),
            other => Err(PartitionError::Coverage(format!("{z:?} is in no cell ({other:?})"))),
        })
        .collect()
}

/// As [`cell_index_trace`], dropping samples outside the domain or in an
/// uncovered remainder.
pub fn cell_index_trace_clipped(
    traj: &Trajectory,
    pa: &PartialApproximation,
    sample_step: f64,
) -> Result<Vec<TraceEntry>, PartitionError> {
    if !(sample_step > 0.0) {
        return Err(PartitionError::Domain(format!("sample step {sample_step} must be positive")));
    }
    Ok(trace_points(traj, sample_step)
        .into_iter()
        .filter_map(|z| match pa.locate(&z) {
            loc @ (Location::Green(_) | Location::Bad) => Some(TraceEntry { t: z.t, location: loc }),
            _ => None,
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub samples: usize,
    pub increases: usize,
    /// Indices `i` with entry `i + 1` before entry `i`.
    pub decreases: Vec<usize>,
}

impl TraceSummary {
    pub fn monotone(&self) -> bool {
        self.decreases.is_empty()
    }
}

pub fn summarize_trace(pa: &PartialApproximation, trace: &[TraceEntry]) -> TraceSummary {
    let mut out = TraceSummary { samples: trace.len(), ..Default::default() };
    for (i, w) in trace.windows(2).enumerate() {
        match pa.compare(&w[0].location, &w[1].location) {
            Some(Ordering::Less) => out.increases += 1,
            Some(Ordering::Greater) | None => out.decreases.push(i),
            Some(Ordering::Equal) => {}
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub depth: usize,
    pub r: f64,
    pub t_end: f64,
    pub samples: usize,
    pub checks: Vec<Check>,
}

impl PartitionReport {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Probe scales relative to the strip length of the cell's depth.
const TANGENCY_SCALES: [f64; 3] = [1e-4, 1e-5, 1e-6];

fn tangency_scales(pa: &PartialApproximation, depth: usize) -> Vec<f64> {
    let h = pa.cover(depth).strip_len;
    TANGENCY_SCALES.iter().map(|s| s * h).collect()
}

fn sample_band(pa: &PartialApproximation, n: usize, seed: u64) -> Vec<ExtendedPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = pa.depth as f64;
    let (lo, hi) = (1.0 / s, pa.r - 1.0 / s);
    (0..n)
        .map(|_| {
            let rho = (lo * lo + rng.gen::<f64>() * (hi * hi - lo * lo)).sqrt();
            let theta = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
            let t = rng.gen::<f64>() * pa.t_end;
            ExtendedPoint::new(rho * theta.cos(), rho * theta.sin(), t)
        })
        .collect()
}

struct SampleOutcome {
    uncovered: usize,
    side_mismatch: usize,
    pieces_near: usize,
    open_failures: usize,
    field_distance: f64,
}

fn inspect_sample(pa: &PartialApproximation, z: &ExtendedPoint) -> SampleOutcome {
    let mut out = SampleOutcome { uncovered: 0, side_mismatch: 0, pieces_near: 0, open_failures: 0, field_distance: 0.0 };
    let id = match pa.locate(z) {
        Location::Green(id) => id,
        _ => {
            out.uncovered = 1;
            return out;
        }
    };
    if side_of(&z.state(), 0.0).ok().flatten() != Some(id.piece.side) {
        out.side_mismatch = 1;
    }
    let cover = pa.cover(id.depth);
    let pad = 1e-3 * cover.strip_len;
    out.pieces_near = (id.depth..=pa.depth.min(id.depth + 2))
        .map(|d| pa.cover(d).pieces_near(z, pad))
        .sum();
    let s = pa.depth as f64;
    let rho = z.state().norm();
    let eta = 1e-3 / s;
    if rho >= 1.0 / s + eta && rho <= pa.r - 1.0 / s - eta && z.t + eta < pa.t_end && z.t >= eta {
        for k in 0..8 {
            let a = std::f64::consts::PI * k as f64 / 4.0;
            for dt in [-eta, 0.0, eta] {
                let q = ExtendedPoint::new(z.x + eta * a.cos(), z.y + eta * a.sin(), z.t + dt);
                if !matches!(pa.locate(&q), Location::Green(_)) {
                    out.open_failures += 1;
                }
            }
        }
    }
    let v = pa.velocity(&id, z);
    let pred = |q: &ExtendedPoint| pa.locate(q) == Location::Green(id);
    if let Ok(score) = bouligand_estimate(pred, z, &v, &tangency_scales(pa, id.depth)) {
        if score > 0.0 {
            if let Ok(f) = extended_field(z, 0.0) {
                out.field_distance = f.distance_to(&v);
            }
        }
    }
    out
}

/// Sampled checks of the approximation conditions on `grid_n²` random points
/// of the covered band, plus tangency at the witnesses of the first strip.
pub fn validate_approximation(pa: &PartialApproximation, grid_n: usize, seed: u64) -> PartitionReport {
    let n = grid_n * grid_n;
    let pts = sample_band(pa, n, seed);
    let outcomes: Vec<SampleOutcome> = pts.par_iter().map(|z| inspect_sample(pa, z)).collect();
    let sum = |f: fn(&SampleOutcome) -> usize| outcomes.iter().map(f).sum::<usize>() as f64;
    let mut checks = vec![
        Check::new("coverage", grid_n, sum(|o| o.uncovered), 0.0, Bound::AtMost, n),
        Check::new("side_consistency", grid_n, sum(|o| o.side_mismatch), 0.0, Bound::AtMost, n),
        Check::new(
            "local_finiteness",
            grid_n,
            outcomes.iter().map(|o| o.pieces_near).max().unwrap_or(0) as f64,
            LOCAL_FINITENESS_LIMIT,
            Bound::AtMost,
            n,
        ),
        Check::new("openness", grid_n, sum(|o| o.open_failures), 0.0, Bound::AtMost, n),
        Check::new(
            "field_distance",
            grid_n,
            outcomes.iter().map(|o| o.field_distance).fold(0.0, f64::max),
            pa.eps,
            Bound::AtMost,
            n,
        ),
    ];
    let cells = pa.cells_in_strip(pa.base_depth, 0).unwrap_or_default();
    let worst = cells
        .par_iter()
        .map(|c| {
            let v = pa.velocity(&c.id, &c.witness);
            let pred = |q: &ExtendedPoint| pa.locate(q) == Location::Green(c.id);
            bouligand_estimate(pred, &c.witness, &v, &tangency_scales(pa, c.id.depth)).unwrap_or(0.0)
        })
        .reduce(|| 1.0, f64::min);
    checks.push(Check::new("witness_tangency", grid_n, worst, 1.0, Bound::AtLeast, cells.len()));
    PartitionReport { depth: pa.depth, r: pa.r, t_end: pa.t_end, samples: n, checks }
}
