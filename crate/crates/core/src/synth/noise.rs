use rand::Rng;

/// Bilinearly interpolated lattice noise in `[0, 1]`.
pub(crate) struct ValueNoise {
    cell: f64,
    cols: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    pub(crate) fn new<R: Rng>(width: usize, height: usize, cell: usize, rng: &mut R) -> Self {
        let cols = width / cell + 2;
        let rows = height / cell + 2;
        ValueNoise {
            cell: cell as f64,
            cols,
            lattice: (0..cols * rows).map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub(crate) fn sample(&self, x: f64, y: f64) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
        let at = |c: usize, r: usize| self.lattice[r * self.cols + c];
        let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
        let bottom = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}
