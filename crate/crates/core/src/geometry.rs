//! Spherical sector partition and direction-of-arrival encoding.
//!
//! The azimuth circle is divided into `M` equal wedges and the elevation
//! span `[-75, 75]` degrees into `N` equal bands, giving `M * N` fine
//! sectors. Localization targets are expressed per fine sector as a
//! detection flag plus azimuth/elevation angles normalized to `[0, 1]`
//! within the sector.
//!
//! Boundary convention: azimuth wedges are half-open `[lo, hi)` with 360
//! wrapping to 0; an elevation exactly on an interior band boundary
//! belongs to the lower band, so for `N = 3` the bands are
//! `[-75, -25]`, `(-25, 25]` and `(25, 75]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest elevation covered by the sector grid, in degrees.
pub const ELEVATION_MIN_DEG: f64 = -75.0;
/// Highest elevation covered by the sector grid, in degrees.
pub const ELEVATION_MAX_DEG: f64 = 75.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("elevation {0} deg outside [{ELEVATION_MIN_DEG}, {ELEVATION_MAX_DEG}]")]
    ElevationOutOfRange(f64),
    #[error("elevation {0} deg outside [-90, 90]")]
    ElevationInvalid(f64),
    #[error("direction ({azimuth_deg}, {elevation_deg}) deg not inside sector ({coarse}, {fine})")]
    SectorMismatch {
        azimuth_deg: f64,
        elevation_deg: f64,
        coarse: usize,
        fine: usize,
    },
    #[error("two sources fall in fine sector ({coarse}, {fine})")]
    SectorCollision { coarse: usize, fine: usize },
    #[error("sector index ({coarse}, {fine}) invalid for an {m}x{n} grid")]
    IndexOutOfRange {
        coarse: usize,
        fine: usize,
        m: usize,
        n: usize,
    },
    #[error("grid dimensions must be positive, got M={0}, N={1}")]
    EmptyGrid(usize, usize),
}

/// A direction on the unit sphere, azimuth in `[0, 360)` and elevation in
/// `[-90, 90]`, both in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doa {
    azimuth_deg: f64,
    elevation_deg: f64,
}

impl Doa {
    /// Builds a direction, canonicalizing azimuth modulo 360.
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Result<Self, GeometryError> {
        if !(-90.0..=90.0).contains(&elevation_deg) || !elevation_deg.is_finite() {
            return Err(GeometryError::ElevationInvalid(elevation_deg));
        }
        let mut az = azimuth_deg.rem_euclid(360.0);
        if az >= 360.0 {
            // rem_euclid of e.g. -1e-15 rounds up to 360.0 exactly
            az = 0.0;
        }
        Ok(Self {
            azimuth_deg: az,
            elevation_deg,
        })
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth_deg
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation_deg
    }

    /// Minimum circular distance between the azimuths of two directions.
    pub fn azimuth_separation_deg(&self, other: &Doa) -> f64 {
        let d = (self.azimuth_deg - other.azimuth_deg).abs();
        d.min(360.0 - d)
    }
}

/// The `M x N` spherical partition: `M` azimuth wedges of `360/M` degrees
/// and `N` elevation bands of `150/N` degrees spanning `[-75, 75]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectorGrid {
    m_azimuth: usize,
    n_elevation: usize,
}

impl SectorGrid {
    pub fn new(m_azimuth: usize, n_elevation: usize) -> Result<Self, GeometryError> {
        if m_azimuth == 0 || n_elevation == 0 {
            return Err(GeometryError::EmptyGrid(m_azimuth, n_elevation));
        }
        Ok(Self {
            m_azimuth,
            n_elevation,
        })
    }

    /// The 8x3 partition used throughout the reference configuration.
    pub fn default_8x3() -> Self {
        Self {
            m_azimuth: 8,
            n_elevation: 3,
        }
    }

    pub fn m_azimuth(&self) -> usize {
        self.m_azimuth
    }

    pub fn n_elevation(&self) -> usize {
        self.n_elevation
    }

    pub fn sector_count(&self) -> usize {
        self.m_azimuth * self.n_elevation
    }

    pub fn azimuth_width_deg(&self) -> f64 {
        360.0 / self.m_azimuth as f64
    }

    pub fn elevation_band_width_deg(&self) -> f64 {
        (ELEVATION_MAX_DEG - ELEVATION_MIN_DEG) / self.n_elevation as f64
    }

    fn check_index(&self, idx: SectorIndex) -> Result<(), GeometryError> {
        if idx.coarse >= self.m_azimuth || idx.fine >= self.n_elevation {
            return Err(GeometryError::IndexOutOfRange {
                coarse: idx.coarse,
                fine: idx.fine,
                m: self.m_azimuth,
                n: self.n_elevation,
            });
        }
        Ok(())
    }
}

/// Position of a fine sector: `coarse` selects the azimuth wedge, `fine`
/// the elevation band within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SectorIndex {
    pub coarse: usize,
    pub fine: usize,
}

impl SectorIndex {
    pub fn new(coarse: usize, fine: usize) -> Self {
        Self { coarse, fine }
    }

    /// Flat index `coarse * N + fine`, a bijection onto `[0, M*N)`.
    pub fn flat(&self, grid: &SectorGrid) -> usize {
        self.coarse * grid.n_elevation + self.fine
    }

    pub fn from_flat(grid: &SectorGrid, flat: usize) -> Self {
        Self {
            coarse: flat / grid.n_elevation,
            fine: flat % grid.n_elevation,
        }
    }
}

/// Maps a direction to its fine sector.
pub fn sector_of(grid: &SectorGrid, doa: &Doa) -> Result<SectorIndex, GeometryError> {
    let el = doa.elevation_deg();
    if !(ELEVATION_MIN_DEG..=ELEVATION_MAX_DEG).contains(&el) {
        return Err(GeometryError::ElevationOutOfRange(el));
    }
    let coarse = ((doa.azimuth_deg() / grid.azimuth_width_deg()) as usize).min(grid.m_azimuth - 1);
    // Interior boundaries belong to the lower band: band j covers
    // (lo_j, lo_j + w], except band 0 which is closed at -75.
    let w = grid.elevation_band_width_deg();
    let fine = (((el - ELEVATION_MIN_DEG) / w).ceil() as isize - 1)
        .max(0)
        .min(grid.n_elevation as isize - 1) as usize;
    Ok(SectorIndex::new(coarse, fine))
}

/// Returns `(azi_lo, azi_hi, ele_lo, ele_hi)` in degrees for a sector.
///
/// The azimuth interval is half-open `[azi_lo, azi_hi)`; the elevation
/// interval is `(ele_lo, ele_hi]` except for the bottom band, which is
/// closed at `ele_lo`.
pub fn sector_bounds(
    grid: &SectorGrid,
    idx: SectorIndex,
) -> Result<(f64, f64, f64, f64), GeometryError> {
    grid.check_index(idx)?;
    let wa = grid.azimuth_width_deg();
    let we = grid.elevation_band_width_deg();
    let azi_lo = idx.coarse as f64 * wa;
    let ele_lo = ELEVATION_MIN_DEG + idx.fine as f64 * we;
    Ok((azi_lo, azi_lo + wa, ele_lo, ele_lo + we))
}

/// Expresses a direction as `(u_azi, u_ele)` in `[0, 1]^2` relative to the
/// lower corner of its sector.
///
/// The direction must lie within the closed bounds of `idx`; shared
/// boundaries are accepted from either side, so a point exactly on a band
/// edge normalizes to 1 in the lower band and 0 in the upper one.
pub fn normalize_in_sector(
    grid: &SectorGrid,
    doa: &Doa,
    idx: SectorIndex,
) -> Result<(f64, f64), GeometryError> {
    grid.check_index(idx)?;
    let (azi_lo, azi_hi, ele_lo, ele_hi) = sector_bounds(grid, idx)?;
    let mut az = doa.azimuth_deg();
    if az < azi_lo {
        // the upper seam of the last wedge is azimuth 360 == 0
        az += 360.0;
    }
    let el = doa.elevation_deg();
    if az < azi_lo || az > azi_hi || el < ele_lo || el > ele_hi {
        return Err(GeometryError::SectorMismatch {
            azimuth_deg: doa.azimuth_deg(),
            elevation_deg: doa.elevation_deg(),
            coarse: idx.coarse,
            fine: idx.fine,
        });
    }
    Ok((
        (az - azi_lo) / (azi_hi - azi_lo),
        (el - ele_lo) / (ele_hi - ele_lo),
    ))
}

/// Inverse of [`normalize_in_sector`]: reconstructs the direction at
/// `(u_azi, u_ele)` inside the given sector.
pub fn denormalize_in_sector(
    grid: &SectorGrid,
    idx: SectorIndex,
    u_azi: f64,
    u_ele: f64,
) -> Result<Doa, GeometryError> {
    grid.check_index(idx)?;
    let (azi_lo, azi_hi, ele_lo, ele_hi) = sector_bounds(grid, idx)?;
    Doa::new(
        azi_lo + u_azi * (azi_hi - azi_lo),
        ele_lo + u_ele * (ele_hi - ele_lo),
    )
}

/// Per-sector training targets: detection flags plus normalized angles.
///
/// Angle slots of inactive sectors hold 0; the detection flag, not the
/// stored value, decides whether a slot is meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetGrid {
    m: usize,
    n: usize,
    coarse_det: Vec<f64>,
    fine_det: Vec<f64>,
    azi_norm: Vec<f64>,
    ele_norm: Vec<f64>,
}

impl TargetGrid {
    pub fn empty(grid: &SectorGrid) -> Self {
        let (m, n) = (grid.m_azimuth(), grid.n_elevation());
        Self {
            m,
            n,
            coarse_det: vec![0.0; m],
            fine_det: vec![0.0; m * n],
            azi_norm: vec![0.0; m * n],
            ele_norm: vec![0.0; m * n],
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn at(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.m && j < self.n);
        i * self.n + j
    }

    pub fn coarse_det(&self, i: usize) -> f64 {
        self.coarse_det[i]
    }

    pub fn fine_det(&self, i: usize, j: usize) -> f64 {
        self.fine_det[self.at(i, j)]
    }

    pub fn azi_norm(&self, i: usize, j: usize) -> f64 {
        self.azi_norm[self.at(i, j)]
    }

    pub fn ele_norm(&self, i: usize, j: usize) -> f64 {
        self.ele_norm[self.at(i, j)]
    }

    /// The valid mask equals the fine detection flags.
    pub fn valid_mask(&self, i: usize, j: usize) -> f64 {
        self.fine_det(i, j)
    }

    pub fn active_count(&self) -> usize {
        self.fine_det.iter().filter(|&&d| d != 0.0).count()
    }
}

/// Encodes a collision-free source list into a [`TargetGrid`].
pub fn encode_targets(grid: &SectorGrid, sources: &[Doa]) -> Result<TargetGrid, GeometryError> {
    let mut t = TargetGrid::empty(grid);
    for doa in sources {
        let idx = sector_of(grid, doa)?;
        let k = t.at(idx.coarse, idx.fine);
        if t.fine_det[k] != 0.0 {
            return Err(GeometryError::SectorCollision {
                coarse: idx.coarse,
                fine: idx.fine,
            });
        }
        let (u_azi, u_ele) = normalize_in_sector(grid, doa, idx)?;
        t.fine_det[k] = 1.0;
        t.azi_norm[k] = u_azi;
        t.ele_norm[k] = u_ele;
        t.coarse_det[idx.coarse] = 1.0;
    }
    Ok(t)
}

/// Raw network output: `M` rows of `[coarse_det, (det, azi, ele) * N]`,
/// i.e. `3N + 1` values per row, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    m: usize,
    n: usize,
    rows: Vec<f64>,
}

impl PredictionGrid {
    pub fn zeros(grid: &SectorGrid) -> Self {
        let (m, n) = (grid.m_azimuth(), grid.n_elevation());
        Self {
            m,
            n,
            rows: vec![0.0; m * (3 * n + 1)],
        }
    }

    /// Builds a grid from row-major `(M, 3N+1)` values.
    pub fn from_rows(grid: &SectorGrid, rows: Vec<f64>) -> Self {
        let (m, n) = (grid.m_azimuth(), grid.n_elevation());
        assert_eq!(
            rows.len(),
            m * (3 * n + 1),
            "prediction rows must be M*(3N+1)"
        );
        Self { m, n, rows }
    }

    /// Prediction that reproduces a target exactly; useful as an oracle.
    pub fn from_targets(target: &TargetGrid) -> Self {
        let (m, n) = (target.m(), target.n());
        let mut p = Self {
            m,
            n,
            rows: vec![0.0; m * (3 * n + 1)],
        };
        for i in 0..m {
            p.set_coarse_det(i, target.coarse_det(i));
            for j in 0..n {
                p.set_fine(
                    i,
                    j,
                    target.fine_det(i, j),
                    target.azi_norm(i, j),
                    target.ele_norm(i, j),
                );
            }
        }
        p
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row_width(&self) -> usize {
        3 * self.n + 1
    }

    fn row(&self, i: usize) -> usize {
        debug_assert!(i < self.m);
        i * self.row_width()
    }

    pub fn coarse_det(&self, i: usize) -> f64 {
        self.rows[self.row(i)]
    }

    pub fn fine_det(&self, i: usize, j: usize) -> f64 {
        self.rows[self.row(i) + 1 + 3 * j]
    }

    pub fn azi_norm(&self, i: usize, j: usize) -> f64 {
        self.rows[self.row(i) + 2 + 3 * j]
    }

    pub fn ele_norm(&self, i: usize, j: usize) -> f64 {
        self.rows[self.row(i) + 3 + 3 * j]
    }

    pub fn set_coarse_det(&mut self, i: usize, v: f64) {
        let r = self.row(i);
        self.rows[r] = v;
    }

    pub fn set_fine(&mut self, i: usize, j: usize, det: f64, azi: f64, ele: f64) {
        let r = self.row(i);
        self.rows[r + 1 + 3 * j] = det;
        self.rows[r + 2 + 3 * j] = azi;
        self.rows[r + 3 + 3 * j] = ele;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rows
    }
}

/// One decoded detection: where, which direction, and how confident.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub sector: SectorIndex,
    pub doa: Doa,
    pub probability: f64,
}

/// Emits one [`Detection`] per fine sector whose detection probability is
/// at least `threshold`, with denormalized angles.
pub fn decode_predictions(
    grid: &SectorGrid,
    pred: &PredictionGrid,
    threshold: f64,
) -> Vec<Detection> {
    let mut out = Vec::new();
    for i in 0..pred.m() {
        for j in 0..pred.n() {
            let p = pred.fine_det(i, j);
            if p >= threshold {
                let idx = SectorIndex::new(i, j);
                let u_azi = pred.azi_norm(i, j).clamp(0.0, 1.0);
                let u_ele = pred.ele_norm(i, j).clamp(0.0, 1.0);
                let doa = denormalize_in_sector(grid, idx, u_azi, u_ele)
                    .expect("index enumerated from grid");
                out.push(Detection {
                    sector: idx,
                    doa,
                    probability: p,
                });
            }
        }
    }
    out
}

/// Enumerates the dataset direction grid: azimuth `0..360` and elevation
/// `-65..=75`, both in 5-degree steps.
pub fn dataset_doa_grid() -> Vec<Doa> {
    let mut out = Vec::new();
    for az in (0..360).step_by(5) {
        for el in (-65..=75).step_by(5) {
            out.push(Doa::new(az as f64, el as f64).expect("grid elevations in range"));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SectorGrid {
        SectorGrid::default_8x3()
    }

    #[test]
    fn doa_canonicalizes_azimuth() {
        assert_eq!(Doa::new(360.0, 0.0).unwrap().azimuth_deg(), 0.0);
        assert_eq!(Doa::new(-45.0, 0.0).unwrap().azimuth_deg(), 315.0);
        assert_eq!(Doa::new(725.0, 0.0).unwrap().azimuth_deg(), 5.0);
        assert!(Doa::new(0.0, 91.0).is_err());
        assert!(Doa::new(0.0, f64::NAN).is_err());
    }

    #[test]
    fn sector_of_reference_cases() {
        let g = grid();
        let s = sector_of(&g, &Doa::new(0.0, 0.0).unwrap()).unwrap();
        assert_eq!(s, SectorIndex::new(0, 1));
        let s = sector_of(&g, &Doa::new(50.0, -65.0).unwrap()).unwrap();
        assert_eq!(s, SectorIndex::new(1, 0));
        let s = sector_of(&g, &Doa::new(359.0, 75.0).unwrap()).unwrap();
        assert_eq!(s, SectorIndex::new(7, 2));
    }

    #[test]
    fn sector_of_boundary_goes_to_lower_band() {
        let g = grid();
        // -25 and 25 are interior boundaries for N = 3
        assert_eq!(
            sector_of(&g, &Doa::new(0.0, -25.0).unwrap()).unwrap().fine,
            0
        );
        assert_eq!(
            sector_of(&g, &Doa::new(0.0, 25.0).unwrap()).unwrap().fine,
            1
        );
        assert_eq!(
            sector_of(&g, &Doa::new(0.0, -75.0).unwrap()).unwrap().fine,
            0
        );
        assert_eq!(
            sector_of(&g, &Doa::new(0.0, 75.0).unwrap()).unwrap().fine,
            2
        );
    }

    #[test]
    fn sector_of_rejects_out_of_range_elevation() {
        let g = grid();
        let doa = Doa::new(0.0, 80.0).unwrap();
        assert_eq!(
            sector_of(&g, &doa),
            Err(GeometryError::ElevationOutOfRange(80.0))
        );
    }

    #[test]
    fn sector_bounds_reference_cases() {
        let g = grid();
        assert_eq!(
            sector_bounds(&g, SectorIndex::new(0, 1)).unwrap(),
            (0.0, 45.0, -25.0, 25.0)
        );
        assert_eq!(
            sector_bounds(&g, SectorIndex::new(7, 0)).unwrap(),
            (315.0, 360.0, -75.0, -25.0)
        );
        assert_eq!(
            sector_bounds(&g, SectorIndex::new(4, 2)).unwrap(),
            (180.0, 225.0, 25.0, 75.0)
        );
        assert!(sector_bounds(&g, SectorIndex::new(8, 0)).is_err());
    }

    #[test]
    fn normalize_midpoint_and_corner() {
        let g = grid();
        let idx = SectorIndex::new(0, 1);
        let (ua, ue) =
            normalize_in_sector(&g, &Doa::new(22.5, 0.0).unwrap(), idx).unwrap();
        assert_eq!((ua, ue), (0.5, 0.5));
        let (ua, ue) =
            normalize_in_sector(&g, &Doa::new(0.0, -25.0).unwrap(), SectorIndex::new(0, 0))
                .unwrap();
        assert_eq!(ua, 0.0);
        assert_eq!(ue, 1.0); // -25 is the upper edge of the bottom band
        // ... and the lower corner of the central band
        let (ua, ue) =
            normalize_in_sector(&g, &Doa::new(0.0, -25.0).unwrap(), SectorIndex::new(0, 1))
                .unwrap();
        assert_eq!((ua, ue), (0.0, 0.0));

        let back = denormalize_in_sector(&g, idx, 0.5, 0.5).unwrap();
        assert!((back.azimuth_deg() - 22.5).abs() < 1e-12);
        assert!((back.elevation_deg() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_wrong_sector() {
        let g = grid();
        let err = normalize_in_sector(&g, &Doa::new(22.5, 0.0).unwrap(), SectorIndex::new(3, 0));
        assert!(matches!(err, Err(GeometryError::SectorMismatch { .. })));
    }

    #[test]
    fn encode_empty_scene() {
        let g = grid();
        let t = encode_targets(&g, &[]).unwrap();
        assert_eq!(t.active_count(), 0);
        for i in 0..8 {
            assert_eq!(t.coarse_det(i), 0.0);
            for j in 0..3 {
                assert_eq!(t.fine_det(i, j), 0.0);
                assert_eq!(t.azi_norm(i, j), 0.0);
                assert_eq!(t.ele_norm(i, j), 0.0);
            }
        }
    }

    #[test]
    fn encode_single_midpoint_source() {
        let g = grid();
        let t = encode_targets(&g, &[Doa::new(22.5, 0.0).unwrap()]).unwrap();
        assert_eq!(t.fine_det(0, 1), 1.0);
        assert_eq!(t.coarse_det(0), 1.0);
        assert_eq!(t.azi_norm(0, 1), 0.5);
        assert_eq!(t.ele_norm(0, 1), 0.5);
        assert_eq!(t.active_count(), 1);
    }

    #[test]
    fn encode_detects_collisions() {
        let g = grid();
        let err = encode_targets(
            &g,
            &[Doa::new(10.0, 0.0).unwrap(), Doa::new(20.0, 0.0).unwrap()],
        );
        assert_eq!(
            err,
            Err(GeometryError::SectorCollision { coarse: 0, fine: 1 })
        );
    }

    #[test]
    fn coarse_flag_follows_fine_flags() {
        let g = grid();
        let sources = [
            Doa::new(100.0, -40.0).unwrap(),
            Doa::new(100.0, 40.0).unwrap(),
            Doa::new(300.0, 0.0).unwrap(),
        ];
        let t = encode_targets(&g, &sources).unwrap();
        for i in 0..8 {
            let any_fine = (0..3).any(|j| t.fine_det(i, j) == 1.0);
            assert_eq!(t.coarse_det(i) == 1.0, any_fine, "coarse row {i}");
        }
    }

    #[test]
    fn decode_empty_and_threshold_edge() {
        let g = grid();
        let pred = PredictionGrid::zeros(&g);
        assert!(decode_predictions(&g, &pred, 0.5).is_empty());

        let mut pred = PredictionGrid::zeros(&g);
        pred.set_fine(0, 1, 0.9, 0.5, 0.5);
        let dets = decode_predictions(&g, &pred, 0.5);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].sector, SectorIndex::new(0, 1));
        assert!((dets[0].doa.azimuth_deg() - 22.5).abs() < 1e-12);
        assert!((dets[0].doa.elevation_deg() - 0.0).abs() < 1e-12);
        assert_eq!(dets[0].probability, 0.9);

        assert!(decode_predictions(&g, &pred, 1.0).is_empty());
    }

    #[test]
    fn encode_decode_round_trip() {
        let g = grid();
        let sources = [
            Doa::new(3.0, -60.0).unwrap(),
            Doa::new(137.0, 12.0).unwrap(),
            Doa::new(290.0, 71.0).unwrap(),
        ];
        let t = encode_targets(&g, &sources).unwrap();
        let pred = PredictionGrid::from_targets(&t);
        let dets = decode_predictions(&g, &pred, 0.5);
        assert_eq!(dets.len(), sources.len());
        for src in &sources {
            let hit = dets.iter().find(|d| {
                (d.doa.azimuth_deg() - src.azimuth_deg()).abs() < 1e-6
                    && (d.doa.elevation_deg() - src.elevation_deg()).abs() < 1e-6
            });
            assert!(hit.is_some(), "source {src:?} not round-tripped");
        }
    }

    #[test]
    fn dataset_grid_has_2088_directions() {
        assert_eq!(dataset_doa_grid().len(), 2088);
    }

    #[test]
    fn dataset_grid_band_counts_are_81_90_90() {
        let g = grid();
        let mut counts = vec![[0usize; 3]; 8];
        for doa in dataset_doa_grid() {
            let s = sector_of(&g, &doa).unwrap();
            counts[s.coarse][s.fine] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            assert_eq!(c, &[81, 90, 90], "coarse sector {i}");
        }
    }

    #[test]
    fn every_grid_point_lies_within_its_sector_bounds() {
        let g = grid();
        for doa in dataset_doa_grid() {
            let s = sector_of(&g, &doa).unwrap();
            let (alo, ahi, elo, ehi) = sector_bounds(&g, s).unwrap();
            let az = doa.azimuth_deg();
            let el = doa.elevation_deg();
            assert!(az >= alo && az < ahi, "azimuth {az} outside [{alo}, {ahi})");
            let in_band = if s.fine == 0 {
                el >= elo && el <= ehi
            } else {
                el > elo && el <= ehi
            };
            assert!(in_band, "elevation {el} outside band ({elo}, {ehi}]");
        }
    }

    #[test]
    fn flat_index_is_a_bijection() {
        let g = grid();
        let mut seen = vec![false; g.sector_count()];
        for i in 0..8 {
            for j in 0..3 {
                let f = SectorIndex::new(i, j).flat(&g);
                assert!(!seen[f]);
                seen[f] = true;
                assert_eq!(SectorIndex::from_flat(&g, f), SectorIndex::new(i, j));
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
