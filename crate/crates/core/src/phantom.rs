//! One-dimensional voxelized patient phantom.
//!
//! The phantom is a line of voxels with five regions of interest (CTV, PTV,
//! two organs at risk and the remaining external tissue) and a beamlet dose
//! operator built from Gaussian kernels. Dose is linear in fluence, and a
//! rigid patient shift is applied by evaluating the kernels at shifted
//! coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const GRID_TOL: f64 = 1e-9;

/// Voxel-center coordinates on a uniform grid (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    positions: Vec<f64>,
    spacing: f64,
}

impl VoxelGrid {
    /// Builds the grid `lo, lo + spacing, ..., hi`.
    pub fn uniform(lo: f64, hi: f64, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(invalid(format!("grid spacing must be positive, got {spacing}")));
        }
        if !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("grid bounds [{lo}, {hi}] are not ordered")));
        }
        let steps = ((hi - lo) / spacing).round();
        if ((steps * spacing) - (hi - lo)).abs() > GRID_TOL * spacing.max(1.0) {
            return Err(invalid(format!(
                "grid extent [{lo}, {hi}] is not a multiple of spacing {spacing}"
            )));
        }
        let count = steps as usize + 1;
        let positions = (0..count).map(|i| lo + i as f64 * spacing).collect();
        Ok(Self { positions, spacing })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// First and last voxel centers.
    pub fn extent(&self) -> (f64, f64) {
        (self.positions[0], self.positions[self.positions.len() - 1])
    }

    /// Cell of voxel `v`, clipped to the grid extent.
    pub fn cell(&self, v: usize) -> Interval {
        let (lo, hi) = self.extent();
        let half = 0.5 * self.spacing;
        let p = self.positions[v];
        Interval {
            lo: (p - half).max(lo),
            hi: (p + half).min(hi),
        }
    }
}

/// Closed coordinate interval in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(invalid(format!("interval [{lo}, {hi}] is empty or inverted")));
        }
        Ok(Self { lo, hi })
    }

    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn overlap(&self, other: &Interval) -> f64 {
        (self.hi.min(other.hi) - self.lo.max(other.lo)).max(0.0)
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiKind {
    Ctv,
    Ptv,
    LeftOar,
    RightOar,
    External,
}

impl RoiKind {
    pub const ALL: [RoiKind; 5] = [
        RoiKind::Ctv,
        RoiKind::Ptv,
        RoiKind::LeftOar,
        RoiKind::RightOar,
        RoiKind::External,
    ];

    fn index(self) -> usize {
        match self {
            RoiKind::Ctv => 0,
            RoiKind::Ptv => 1,
            RoiKind::LeftOar => 2,
            RoiKind::RightOar => 3,
            RoiKind::External => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RoiKind::Ctv => "ctv",
            RoiKind::Ptv => "ptv",
            RoiKind::LeftOar => "left_oar",
            RoiKind::RightOar => "right_oar",
            RoiKind::External => "external",
        }
    }
}

impl std::fmt::Display for RoiKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// A delineated structure. External tissue has no interval of its own.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub kind: RoiKind,
    pub interval: Interval,
}

/// Relative voxel volumes per structure. Each nonempty structure sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiWeights {
    per_roi: [Vec<f64>; 5],
}

impl RoiWeights {
    fn compute(grid: &VoxelGrid, rois: &[Roi]) -> Self {
        let n = grid.len();
        let mut per_roi: [Vec<f64>; 5] = Default::default();
        for w in per_roi.iter_mut() {
            *w = vec![0.0; n];
        }
        for roi in rois {
            let w = &mut per_roi[roi.kind.index()];
            for (v, slot) in w.iter_mut().enumerate() {
                *slot = grid.cell(v).overlap(&roi.interval);
            }
        }
        // External is whatever part of each cell no delineated structure covers.
        let ext = &mut per_roi[RoiKind::External.index()];
        for (v, slot) in ext.iter_mut().enumerate() {
            let cell = grid.cell(v);
            *slot = (cell.length() - covered_length(&cell, rois)).max(0.0);
        }
        for w in per_roi.iter_mut() {
            normalize(w);
        }
        Self { per_roi }
    }

    pub fn get(&self, kind: RoiKind) -> &[f64] {
        &self.per_roi[kind.index()]
    }

    pub fn is_empty(&self, kind: RoiKind) -> bool {
        self.get(kind).iter().all(|&w| w == 0.0)
    }
}

fn normalize(w: &mut [f64]) {
    // Tiny slivers from floating-point edge arithmetic are not volume.
    for x in w.iter_mut() {
        if *x < 1e-12 {
            *x = 0.0;
        }
    }
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        for x in w.iter_mut() {
            *x /= total;
        }
    }
}

/// Length of `cell` covered by the union of the ROI intervals.
fn covered_length(cell: &Interval, rois: &[Roi]) -> f64 {
    let mut pieces: Vec<(f64, f64)> = rois
        .iter()
        .map(|r| (r.interval.lo.max(cell.lo), r.interval.hi.min(cell.hi)))
        .filter(|(a, b)| b > a)
        .collect();
    pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut total = 0.0;
    let mut cur: Option<(f64, f64)> = None;
    for (a, b) in pieces {
        cur = match cur {
            Some((ca, cb)) if a <= cb => Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                Some((a, b))
            }
            None => Some((a, b)),
        };
    }
    if let Some((a, b)) = cur {
        total += b - a;
    }
    total
}

/// Gaussian beamlet dose operator. Entry `(v, b)` is the dose per unit
/// fluence of beamlet `b` at voxel `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseOperator {
    positions: Vec<f64>,
    beamlets: Vec<f64>,
    sigma: f64,
}

impl DoseOperator {
    pub fn new(positions: Vec<f64>, beamlets: Vec<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid(format!("kernel sigma must be positive, got {sigma}")));
        }
        if beamlets.is_empty() {
            return Err(invalid("at least one beamlet is required"));
        }
        Ok(Self {
            positions,
            beamlets,
            sigma,
        })
    }

    pub fn beamlets(&self) -> &[f64] {
        &self.beamlets
    }

    pub fn num_beamlets(&self) -> usize {
        self.beamlets.len()
    }

    pub fn num_voxels(&self) -> usize {
        self.positions.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Unnormalized Gaussian with unit peak.
    pub fn kernel(&self, r: f64) -> f64 {
        (-0.5 * (r / self.sigma).powi(2)).exp()
    }

    /// Operator for a patient displaced by `shift` mm.
    pub fn matrix(&self, shift: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.positions.len(), self.beamlets.len(), |v, b| {
            self.kernel(self.positions[v] - shift - self.beamlets[b])
        })
    }

    /// Dose received by a patient displaced by `shift` mm:
    /// `d_v = sum_b x_b G(pos_v - shift - c_b)`.
    pub fn dose(&self, fluence: &[f64], shift: f64) -> Vec<f64> {
        assert_eq!(fluence.len(), self.beamlets.len(), "fluence length mismatch");
        self.positions
            .iter()
            .map(|&p| {
                fluence
                    .iter()
                    .zip(&self.beamlets)
                    .map(|(&x, &c)| if x == 0.0 { 0.0 } else { x * self.kernel(p - shift - c) })
                    .sum()
            })
            .collect()
    }

    pub fn dose_vector(&self, fluence: &DVector<f64>, shift: f64) -> DVector<f64> {
        DVector::from_vec(self.dose(fluence.as_slice(), shift))
    }
}

/// Geometry configuration. Every length is in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub grid_min_mm: f64,
    pub grid_max_mm: f64,
    pub spacing_mm: f64,
    pub kernel_sigma_mm: f64,
    /// Beamlet centers; voxel centers when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beamlets_mm: Option<Vec<f64>>,
    pub ctv_mm: [f64; 2],
    pub ptv_mm: [f64; 2],
    pub left_oar_mm: [f64; 2],
    pub right_oar_mm: [f64; 2],
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            grid_min_mm: -50.0,
            grid_max_mm: 50.0,
            spacing_mm: 1.0,
            kernel_sigma_mm: 3.0,
            beamlets_mm: None,
            ctv_mm: [-15.0, 15.0],
            ptv_mm: [-23.4, 23.4],
            left_oar_mm: [-50.0, -25.0],
            right_oar_mm: [23.0, 50.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    grid: VoxelGrid,
    rois: Vec<Roi>,
    weights: RoiWeights,
    operator: DoseOperator,
}

impl Phantom {
    pub fn build(config: &PhantomConfig) -> Result<Self> {
        let grid = VoxelGrid::uniform(config.grid_min_mm, config.grid_max_mm, config.spacing_mm)?;
        let beamlets = config.beamlets_mm.clone().unwrap_or_else(|| grid.positions().to_vec());
        let operator = DoseOperator::new(grid.positions().to_vec(), beamlets, config.kernel_sigma_mm)?;
        let mk = |kind, [lo, hi]: [f64; 2]| -> Result<Roi> {
            let interval =
                Interval::new(lo, hi).map_err(|_| invalid(format!("{kind} interval [{lo}, {hi}] is inverted")))?;
            Ok(Roi { kind, interval })
        };
        let rois = vec![
            mk(RoiKind::Ctv, config.ctv_mm)?,
            mk(RoiKind::Ptv, config.ptv_mm)?,
            mk(RoiKind::LeftOar, config.left_oar_mm)?,
            mk(RoiKind::RightOar, config.right_oar_mm)?,
        ];
        let (lo, hi) = grid.extent();
        for roi in &rois {
            if roi.interval.lo < lo - GRID_TOL || roi.interval.hi > hi + GRID_TOL {
                return Err(invalid(format!(
                    "{} interval [{}, {}] leaves the grid extent [{lo}, {hi}]",
                    roi.kind, roi.interval.lo, roi.interval.hi
                )));
            }
        }
        Ok(Self::assemble(grid, rois, operator))
    }

    fn assemble(grid: VoxelGrid, rois: Vec<Roi>, operator: DoseOperator) -> Self {
        let weights = RoiWeights::compute(&grid, &rois);
        Self {
            grid,
            rois,
            weights,
            operator,
        }
    }

    /// Same anatomy with the PTV replaced; relative volumes are recomputed.
    pub fn with_ptv(&self, ptv: Interval) -> Self {
        let rois = self
            .rois
            .iter()
            .map(|r| {
                if r.kind == RoiKind::Ptv {
                    Roi {
                        kind: RoiKind::Ptv,
                        interval: ptv,
                    }
                } else {
                    *r
                }
            })
            .collect();
        Self::assemble(self.grid.clone(), rois, self.operator.clone())
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn weights(&self) -> &RoiWeights {
        &self.weights
    }

    pub fn operator(&self) -> &DoseOperator {
        &self.operator
    }

    pub fn rois(&self) -> &[Roi] {
        &self.rois
    }

    pub fn roi(&self, kind: RoiKind) -> Option<&Roi> {
        self.rois.iter().find(|r| r.kind == kind)
    }

    pub fn ctv(&self) -> &Roi {
        self.roi(RoiKind::Ctv).expect("phantom always has a CTV")
    }

    pub fn ptv(&self) -> &Roi {
        self.roi(RoiKind::Ptv).expect("phantom always has a PTV")
    }

    pub fn dose(&self, fluence: &[f64], shift: f64) -> Vec<f64> {
        self.operator.dose(fluence, shift)
    }
}

/// CTV-to-PTV margin `1.96 Σ + 0.7 σ` from the total systematic and random
/// standard deviations (mm).
pub fn margin(systematic_sd: f64, random_sd: f64) -> Result<f64> {
    if !(systematic_sd >= 0.0) || !(random_sd >= 0.0) {
        return Err(invalid(format!(
            "margin needs nonnegative deviations, got ({systematic_sd}, {random_sd})"
        )));
    }
    Ok(1.96 * systematic_sd + 0.7 * random_sd)
}

/// Expands the CTV by `m` mm on both sides, clipped to the grid.
pub fn ptv_from_margin(ctv: &Roi, m: f64, grid: &VoxelGrid) -> Result<Roi> {
    if !(m >= 0.0) {
        return Err(invalid(format!("margin must be nonnegative, got {m}")));
    }
    let (lo, hi) = grid.extent();
    Ok(Roi {
        kind: RoiKind::Ptv,
        interval: Interval {
            lo: (ctv.interval.lo - m).max(lo),
            hi: (ctv.interval.hi + m).min(hi),
        },
    })
}
