/// Screen dimensions and the square tile grid laid over them.
///
/// Tiles are indexed row-major: `index = ty * tiles_x + tx`. Tiles on the
/// right and bottom edges are clipped to the screen when the dimensions are
/// not multiples of the tile size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TileGrid {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
}

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }
}

impl TileGrid {
    pub fn new(width: u32, height: u32, tile_size: u32) -> Self {
        assert!(tile_size > 0, "tile size must be positive");
        TileGrid {
            width,
            height,
            tile_size,
            tiles_x: width.div_ceil(tile_size),
            tiles_y: height.div_ceil(tile_size),
        }
    }

    pub fn tile_count(&self) -> usize {
        self.tiles_x as usize * self.tiles_y as usize
    }

    pub fn index(&self, tx: u32, ty: u32) -> usize {
        ty as usize * self.tiles_x as usize + tx as usize
    }

    pub fn coords(&self, index: usize) -> (u32, u32) {
        let tx = (index % self.tiles_x as usize) as u32;
        let ty = (index / self.tiles_x as usize) as u32;
        (tx, ty)
    }

    /// On-screen pixels of a tile.
    pub fn tile_rect(&self, index: usize) -> PixelRect {
        let (tx, ty) = self.coords(index);
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        PixelRect {
            x0,
            y0,
            x1: (x0 + self.tile_size).min(self.width),
            y1: (y0 + self.tile_size).min(self.height),
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_edge_tiles() {
        let g = TileGrid::new(70, 33, 16);
        assert_eq!((g.tiles_x, g.tiles_y), (5, 3));
        let last = g.tile_rect(g.tile_count() - 1);
        assert_eq!(
            last,
            PixelRect {
                x0: 64,
                y0: 32,
                x1: 70,
                y1: 33
            }
        );
        assert_eq!(g.coords(g.index(3, 2)), (3, 2));
        let total: u64 = (0..g.tile_count()).map(|t| g.tile_rect(t).area()).sum();
        assert_eq!(total, 70 * 33);
    }
}
