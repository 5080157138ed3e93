//! Smooth random fields: a coarse lattice of random values bilinearly
//! upsampled to full resolution. Used for slab deformation and illumination.

use crate::image::Image2D;
use crate::rng::Rng;

/// Lattice values of a smooth field, one `gw x gh` grid per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub grid: (usize, usize),
    pub channels: Vec<Vec<f64>>,
}

impl Lattice {
    /// Draw `channels` lattices, channel-major then row-major.
    pub fn sample(
        grid: (usize, usize),
        channels: usize,
        rng: &mut Rng,
        mut sampler: impl FnMut(&mut Rng) -> f64,
    ) -> Self {
        let (gw, gh) = grid;
        let channels = (0..channels)
            .map(|_| (0..gw * gh).map(|_| sampler(rng)).collect())
            .collect();
        Self { grid, channels }
    }

    pub fn constant(grid: (usize, usize), values: &[f64]) -> Self {
        Self {
            grid,
            channels: values.iter().map(|&v| vec![v; grid.0 * grid.1]).collect(),
        }
    }

    /// Bilinear upsampling to `(w, h)`. Lattice corners coincide with the
    /// corner pixel centers.
    pub fn upsample(&self, (w, h): (usize, usize)) -> Vec<Image2D> {
        let (gw, gh) = self.grid;
        let scale = |n: usize, g: usize| {
            if n > 1 {
                (g - 1) as f64 / (n - 1) as f64
            } else {
                0.0
            }
        };
        let sx = scale(w, gw);
        let sy = scale(h, gh);
        self.channels
            .iter()
            .map(|lat| {
                Image2D::from_fn(w, h, |i, j| {
                    let gx = i as f64 * sx;
                    let gy = j as f64 * sy;
                    let x0 = (gx.floor() as usize).min(gw - 2);
                    let y0 = (gy.floor() as usize).min(gh - 2);
                    let fx = gx - x0 as f64;
                    let fy = gy - y0 as f64;
                    let at = |x: usize, y: usize| lat[y * gw + x];
                    let top = lerp(at(x0, y0), at(x0 + 1, y0), fx);
                    let bottom = lerp(at(x0, y0 + 1), at(x0 + 1, y0 + 1), fx);
                    lerp(top, bottom, fy)
                })
            })
            .collect()
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Sample a `grid` lattice with `sampler` and upsample it to `dims`.
///
/// Panics if the lattice is smaller than 2x2 or larger than `dims`.
pub fn smooth_random_field(
    dims: (usize, usize),
    grid: (usize, usize),
    channels: usize,
    rng: &mut Rng,
    sampler: impl FnMut(&mut Rng) -> f64,
) -> (Lattice, Vec<Image2D>) {
    assert!(grid.0 >= 2 && grid.1 >= 2, "lattice must be at least 2x2");
    assert!(dims.0 >= grid.0 && dims.1 >= grid.1, "lattice larger than field");
    let lattice = Lattice::sample(grid, channels, rng, sampler);
    let fields = lattice.upsample(dims);
    (lattice, fields)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sampler_gives_constant_field() {
        let mut rng = Rng::new(3);
        let (_, f) = smooth_random_field((17, 11), (4, 3), 2, &mut rng, |_| 0.75);
        assert_eq!(f.len(), 2);
        assert!(f.iter().all(|c| c.data.iter().all(|&v| v == 0.75)));
        let (_, z) = smooth_random_field((9, 9), (3, 3), 1, &mut rng, |r| r.normal(0.0, 0.0));
        assert!(z[0].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_by_two_lattice_is_bilinear() {
        let lat = Lattice {
            grid: (2, 2),
            channels: vec![vec![0.0, 0.0, 1.0, 1.0]],
        };
        let f = &lat.upsample((5, 5))[0];
        assert_eq!(*f.get(0, 0), 0.0);
        assert_eq!(*f.get(4, 0), 0.0);
        assert_eq!(*f.get(0, 4), 1.0);
        assert_eq!(*f.get(4, 4), 1.0);
        assert_eq!(*f.get(2, 2), 0.5);
    }

    #[test]
    fn gaussian_field_is_reproducible() {
        let draw = |seed| {
            let mut rng = Rng::new(seed);
            smooth_random_field((64, 48), (8, 8), 2, &mut rng, |r| r.normal(0.0, 2.0)).1
        };
        let a = draw(11);
        let b = draw(11);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.data.iter().zip(&y.data).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
