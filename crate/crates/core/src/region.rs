//! Viewport footprints on the equirectangular tile grid and the partition of
//! a segment's tiles into prioritised viewport regions plus a rest region.
//!
//! Tile `r * cols + c` covers latitudes `[90 - 180(r+1)/rows, 90 - 180r/rows]`
//! and longitudes `[-180 + 360c/cols, -180 + 360(c+1)/cols]`.

use crate::error::{Error, Result};
use crate::sphere::{PredictionSet, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub rows: usize,
    pub cols: usize,
}

impl TileGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn num_tiles(&self) -> usize {
        self.rows * self.cols
    }
}

/// Field of view in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fov {
    pub horizontal_deg: f64,
    pub vertical_deg: f64,
}

impl Fov {
    pub fn new(horizontal_deg: f64, vertical_deg: f64) -> Result<Self> {
        if !(horizontal_deg > 0.0 && horizontal_deg <= 360.0) {
            return Err(Error::invalid("fov", "horizontal FOV must be in (0, 360]"));
        }
        if !(vertical_deg > 0.0 && vertical_deg <= 180.0) {
            return Err(Error::invalid("fov", "vertical FOV must be in (0, 180]"));
        }
        Ok(Self {
            horizontal_deg,
            vertical_deg,
        })
    }
}

impl Default for Fov {
    fn default() -> Self {
        Self {
            horizontal_deg: 100.0,
            vertical_deg: 100.0,
        }
    }
}

/// Open intervals overlap with positive length.
fn overlaps(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Tiles whose lat/lon rectangle overlaps the FOV rectangle centred on the
/// viewpoint. Longitude wraps; a latitude window that would cross a pole is
/// shifted back inside `[-90, 90]` keeping its height.
pub fn viewport_tiles(viewpoint: Vec3, grid: TileGrid, fov: Fov) -> Result<Vec<usize>> {
    if !viewpoint.is_unit(1e-6) {
        return Err(Error::invalid("viewpoint", "non-unit viewpoint"));
    }
    let fov = Fov::new(fov.horizontal_deg, fov.vertical_deg)?;
    let (lat, lon) = viewpoint.lat_lon_deg();
    let half_v = fov.vertical_deg / 2.0;
    let (mut lat_lo, mut lat_hi) = (lat - half_v, lat + half_v);
    if lat_hi > 90.0 {
        (lat_lo, lat_hi) = (90.0 - fov.vertical_deg, 90.0);
    } else if lat_lo < -90.0 {
        (lat_lo, lat_hi) = (-90.0, -90.0 + fov.vertical_deg);
    }
    let lon_window = (lon - fov.horizontal_deg / 2.0, lon + fov.horizontal_deg / 2.0);
    let row_h = 180.0 / grid.rows as f64;
    let col_w = 360.0 / grid.cols as f64;

    let rows: Vec<usize> = (0..grid.rows)
        .filter(|&r| {
            let top = 90.0 - r as f64 * row_h;
            overlaps((top - row_h, top), (lat_lo, lat_hi))
        })
        .collect();
    let cols: Vec<usize> = (0..grid.cols)
        .filter(|&c| {
            if fov.horizontal_deg >= 360.0 {
                return true;
            }
            let left = -180.0 + c as f64 * col_w;
            [-360.0, 0.0, 360.0]
                .iter()
                .any(|shift| overlaps((left + shift, left + shift + col_w), lon_window))
        })
        .collect();

    let mut tiles: Vec<usize> = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| r * grid.cols + c))
        .collect();
    tiles.sort_unstable();
    Ok(tiles)
}

/// Per-segment tile partition: I viewport regions (most likely first) and the
/// rest region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAssignment {
    pub segment: usize,
    pub regions: Vec<Vec<usize>>,
    pub probabilities: Vec<f64>,
    pub rest: Vec<usize>,
}

impl RegionAssignment {
    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }

    /// Owner of every tile: `Some(i)` for viewport region i, `None` for rest.
    pub fn owners(&self, num_tiles: usize) -> Vec<Option<usize>> {
        let mut owner = vec![None; num_tiles];
        for (i, region) in self.regions.iter().enumerate() {
            for &t in region {
                owner[t] = Some(i);
            }
        }
        owner
    }

    /// Per-tile rung: region i tiles get `actions[i]`, rest tiles `rest_rung`.
    pub fn tile_rungs(&self, num_tiles: usize, actions: &[usize], rest_rung: usize) -> Vec<usize> {
        self.owners(num_tiles)
            .into_iter()
            .map(|o| o.map_or(rest_rung, |i| actions[i]))
            .collect()
    }

    /// Checks the partition and ordering invariants.
    pub fn validate(&self, num_tiles: usize) -> Result<()> {
        let mut seen = vec![false; num_tiles];
        for &t in self.regions.iter().flatten().chain(&self.rest) {
            if t >= num_tiles {
                return Err(Error::OutOfRange {
                    what: "tile",
                    index: t,
                    limit: num_tiles,
                });
            }
            if std::mem::replace(&mut seen[t], true) {
                return Err(Error::invalid("regions", format!("tile {t} assigned twice")));
            }
        }
        if let Some(t) = seen.iter().position(|s| !s) {
            return Err(Error::invalid("regions", format!("tile {t} unassigned")));
        }
        if self.probabilities.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("probabilities", "must be sorted descending"));
        }
        Ok(())
    }
}

/// Partitions tiles from the first predicted point of each trajectory.
/// Overlapping footprint tiles go to the most likely region (earlier input
/// order on ties); everything else is the rest region.
pub fn partition(
    predictions: &PredictionSet,
    grid: TileGrid,
    fov: Fov,
    segment: usize,
) -> Result<RegionAssignment> {
    partition_points(
        &predictions.first_points(),
        predictions.probabilities(),
        grid,
        fov,
        segment,
    )
}

/// [`partition`] over explicit (viewpoint, probability) pairs.
pub fn partition_points(
    points: &[Vec3],
    probabilities: &[f64],
    grid: TileGrid,
    fov: Fov,
    segment: usize,
) -> Result<RegionAssignment> {
    if points.len() != probabilities.len() || points.is_empty() {
        return Err(Error::Shape("one probability per viewpoint required".into()));
    }
    if probabilities.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("probabilities", "must be sorted descending"));
    }
    let mut claimed = vec![false; grid.num_tiles()];
    let mut regions = Vec::with_capacity(points.len());
    for &p in points {
        let region: Vec<usize> = viewport_tiles(p, grid, fov)?
            .into_iter()
            .filter(|&t| !std::mem::replace(&mut claimed[t], true))
            .collect();
        regions.push(region);
    }
    let rest = (0..grid.num_tiles()).filter(|&t| !claimed[t]).collect();
    Ok(RegionAssignment {
        segment,
        regions,
        probabilities: probabilities.to_vec(),
        rest,
    })
}
