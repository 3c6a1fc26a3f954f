//! Ground models: a flat plane and a piecewise-constant heightfield.

use nalgebra::Vector3;
use rand::Rng;

use crate::scalar::{rf, Real};

/// Terrain height query. The ground surface is z = height(x, y); the contact
/// normal is +Z everywhere (cells are treated as flat plateaus, which is
/// adequate for centimeter-scale steps under compliant contacts).
#[derive(Debug, Clone)]
pub enum Terrain<T: Real> {
    Flat,
    /// Square cells of `cell_size` holding one height each, tiled from the
    /// origin; coordinates outside the grid fall back to height zero.
    Heightfield {
        heights: Vec<Vec<T>>,
        cell_size: T,
        /// World x, y of cell (0, 0)'s corner.
        origin: (T, T),
    },
}

impl<T: Real> Terrain<T> {
    pub fn height_at(&self, x: T, y: T) -> T {
        match self {
            Terrain::Flat => T::zero(),
            Terrain::Heightfield { heights, cell_size, origin } => {
                let ix = ((x - origin.0) / *cell_size).floor();
                let iy = ((y - origin.1) / *cell_size).floor();
                let (ix, iy) = match (ix.to_isize(), iy.to_isize()) {
                    (Some(a), Some(b)) if a >= 0 && b >= 0 => (a as usize, b as usize),
                    _ => return T::zero(),
                };
                heights
                    .get(iy)
                    .and_then(|row| row.get(ix))
                    .copied()
                    .unwrap_or_else(T::zero)
            }
        }
    }

    /// Signed gap from a point to the ground below it (negative inside).
    pub fn clearance(&self, p: &Vector3<T>) -> T {
        p.z - self.height_at(p.x, p.y)
    }

    /// Random obstacle course: a grid of plateaus with heights drawn
    /// uniformly from [0, max_height].
    pub fn obstacles<R: Rng>(
        rng: &mut R,
        cells: usize,
        cell_size: T,
        max_height: T,
        extent: T,
    ) -> Self {
        let heights = (0..cells)
            .map(|_| {
                (0..cells)
                    .map(|_| max_height * rf::<T>(rng.gen::<f64>()))
                    .collect()
            })
            .collect();
        let half = extent / rf(2.0);
        Terrain::Heightfield { heights, cell_size, origin: (-half, -half) }
    }
}
