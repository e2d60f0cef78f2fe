//! Row-major 2D grids and the multi-organ label map.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> Grid<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "{height}×{width} grid needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// The in-bounds 4-neighbours of `(y, x)`, and how many lie outside.
    pub fn neighbours4(&self, y: usize, x: usize) -> (impl Iterator<Item = (usize, usize)>, usize) {
        let candidates = [
            (y > 0).then(|| (y.wrapping_sub(1), x)),
            (y + 1 < self.height).then_some((y + 1, x)),
            (x > 0).then(|| (y, x.wrapping_sub(1))),
            (x + 1 < self.width).then_some((y, x + 1)),
        ];
        let outside = candidates.iter().filter(|c| c.is_none()).count();
        (candidates.into_iter().flatten(), outside)
    }
}

/// Class-id grid: 0 is background, `1..num_classes` are organs.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    grid: Grid<u8>,
    num_classes: usize,
}

impl LabelMap {
    pub fn new(grid: Grid<u8>, num_classes: usize) -> Result<Self> {
        if !(2..=256).contains(&num_classes) {
            return Err(Error::InvalidArgument(format!(
                "num_classes must lie in [2, 256], got {num_classes}"
            )));
        }
        if let Some(&bad) = grid.data().iter().find(|&&v| v as usize >= num_classes) {
            return Err(Error::InvalidInput(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self { grid, num_classes })
    }

    pub fn background(height: usize, width: usize, num_classes: usize) -> Result<Self> {
        Self::new(Grid::filled(height, width, 0), num_classes)
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.grid
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        *self.grid.get(y, x)
    }

    pub fn labels(&self) -> &[u8] {
        self.grid.data()
    }

    pub fn mask(&self, class: u8) -> Mask {
        self.grid.map(|&v| v == class)
    }

    pub fn foreground(&self) -> Mask {
        self.grid.map(|&v| v != 0)
    }

    pub fn count(&self, class: u8) -> usize {
        self.grid.data().iter().filter(|&&v| v == class).count()
    }
}
