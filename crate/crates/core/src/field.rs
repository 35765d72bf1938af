//! Space-time fields: scalar, vector, or matrix values on a [`UniformGrid`],
//! with multilinear spatial interpolation and left-constant time interpolation.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::UniformGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldRank {
    Scalar,
    Vector,
    Matrix,
}

impl FieldRank {
    pub fn components(self, dim: usize) -> usize {
        match self {
            FieldRank::Scalar => 1,
            FieldRank::Vector => dim,
            FieldRank::Matrix => dim * dim,
        }
    }

    fn code(self) -> u64 {
        match self {
            FieldRank::Scalar => 0,
            FieldRank::Vector => 1,
            FieldRank::Matrix => 2,
        }
    }

    fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(FieldRank::Scalar),
            1 => Ok(FieldRank::Vector),
            2 => Ok(FieldRank::Matrix),
            _ => Err(CoreError::InvalidField(format!("unknown rank code {code}"))),
        }
    }
}

/// Values indexed `[time][space (x slowest)][component]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    grid: UniformGrid,
    rank: FieldRank,
    data: Vec<f64>,
}

impl SpaceTimeField {
    pub fn zeros(grid: &UniformGrid, rank: FieldRank) -> Self {
        let len = grid.n_slices() * grid.n_points() * rank.components(grid.dim);
        Self {
            grid: grid.clone(),
            rank,
            data: vec![0.0; len],
        }
    }

    pub fn constant(grid: &UniformGrid, rank: FieldRank, value: f64) -> Self {
        let mut f = Self::zeros(grid, rank);
        f.data.fill(value);
        f
    }

    /// Sample an analytic function `f(t, x, component)` on the grid.
    pub fn from_fn(
        grid: &UniformGrid,
        rank: FieldRank,
        f: impl Fn(f64, &[f64], usize) -> f64,
    ) -> Self {
        let mut out = Self::zeros(grid, rank);
        let nc = out.n_components();
        for k in 0..grid.n_slices() {
            let t = grid.time(k);
            for p in 0..grid.n_points() {
                let x = grid.point(p);
                for c in 0..nc {
                    let v = f(t, &x[..grid.dim], c);
                    let i = out.index(k, p, c);
                    out.data[i] = v;
                }
            }
        }
        out
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    pub fn rank(&self) -> FieldRank {
        self.rank
    }

    pub fn n_components(&self) -> usize {
        self.rank.components(self.grid.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, k: usize, flat: usize, c: usize) -> usize {
        (k * self.grid.n_points() + flat) * self.n_components() + c
    }

    #[inline]
    pub fn at(&self, k: usize, flat: usize, c: usize) -> f64 {
        self.data[self.index(k, flat, c)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, flat: usize, c: usize, v: f64) {
        let i = self.index(k, flat, c);
        self.data[i] = v;
    }

    /// One time slice as a flat `[space][component]` block.
    pub fn slice(&self, k: usize) -> &[f64] {
        let w = self.grid.n_points() * self.n_components();
        &self.data[k * w..(k + 1) * w]
    }

    pub fn slice_mut(&mut self, k: usize) -> &mut [f64] {
        let w = self.grid.n_points() * self.n_components();
        &mut self.data[k * w..(k + 1) * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            rank: self.rank,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.grid != other.grid || self.rank != other.rank {
            return Err(CoreError::InvalidField(
                "field shapes do not match for addition".into(),
            ));
        }
        Ok(Self {
            grid: self.grid.clone(),
            rank: self.rank,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// Interpolation weights for a spatial point: cell base indices and
    /// per-axis fractions. Coordinates are clamped to the box, i.e. constant
    /// extension outside.
    #[inline]
    fn cell_weights(&self, x: &[f64]) -> ([usize; 2], [f64; 2]) {
        let g = &self.grid;
        let mut base = [0usize; 2];
        let mut w = [0.0f64; 2];
        for a in 0..g.dim {
            let s = (x[a] - g.lo()) / g.h();
            let i = (s.floor() as isize).clamp(0, g.n_space as isize - 2) as usize;
            base[a] = i;
            w[a] = (s - i as f64).clamp(0.0, 1.0);
        }
        (base, w)
    }

    /// Evaluate component `c` at `(t, x)`. Multilinear in space on the clamped
    /// box, left-constant in time on `[t_k, t_{k+1})`.
    pub fn eval(&self, t: f64, x: &[f64], c: usize) -> f64 {
        let k = self.grid.time_slice(t);
        self.eval_slice(k, x, c)
    }

    /// Evaluate component `c` at spatial point `x` on time slice `k`.
    #[inline]
    pub fn eval_slice(&self, k: usize, x: &[f64], c: usize) -> f64 {
        let g = &self.grid;
        let (base, w) = self.cell_weights(x);
        match g.dim {
            1 => {
                let i = base[0];
                let v0 = self.at(k, i, c);
                let v1 = self.at(k, i + 1, c);
                v0 + w[0] * (v1 - v0)
            }
            2 => {
                let (i, j) = (base[0], base[1]);
                let f00 = self.at(k, g.flat(&[i, j]), c);
                let f01 = self.at(k, g.flat(&[i, j + 1]), c);
                let f10 = self.at(k, g.flat(&[i + 1, j]), c);
                let f11 = self.at(k, g.flat(&[i + 1, j + 1]), c);
                let a = f00 + w[1] * (f01 - f00);
                let b = f10 + w[1] * (f11 - f10);
                a + w[0] * (b - a)
            }
            _ => unreachable!(),
        }
    }

    /// Evaluate all components at `(t, x)` into `out`.
    pub fn eval_all(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let k = self.grid.time_slice(t);
        for c in 0..self.n_components() {
            out[c] = self.eval_slice(k, x, c);
        }
    }

    /// Spatial gradient by central differences in the interior, one-sided at
    /// the box edges. A scalar field yields a vector field; a vector field
    /// yields its Jacobian as a matrix field (row `l`, column `a` holds
    /// `d u^l / d x^a`).
    pub fn gradient(&self) -> Result<SpaceTimeField> {
        let g = &self.grid;
        let out_rank = match self.rank {
            FieldRank::Scalar => FieldRank::Vector,
            FieldRank::Vector => FieldRank::Matrix,
            FieldRank::Matrix => {
                return Err(CoreError::InvalidField(
                    "gradient of a matrix field is not representable".into(),
                ))
            }
        };
        let nc_in = self.n_components();
        let mut out = SpaceTimeField::zeros(g, out_rank);
        for k in 0..g.n_slices() {
            for p in 0..g.n_points() {
                for c_in in 0..nc_in {
                    for axis in 0..g.dim {
                        let d = self.derivative_at(k, p, c_in, axis);
                        let c_out = c_in * g.dim + axis;
                        let i = out.index(k, p, c_out);
                        out.data[i] = d;
                    }
                }
            }
        }
        Ok(out)
    }

    /// One-axis first derivative at a grid point: central stencil inside,
    /// first-order one-sided at the edges.
    pub fn derivative_at(&self, k: usize, flat: usize, c: usize, axis: usize) -> f64 {
        let g = &self.grid;
        let h = g.h();
        let idx = g.unflat(flat);
        let i = idx[axis];
        let shift = |j: usize| -> usize {
            let mut m = idx;
            m[axis] = j;
            g.flat(&m[..g.dim])
        };
        if i == 0 {
            (self.at(k, shift(1), c) - self.at(k, flat, c)) / h
        } else if i == g.n_space - 1 {
            (self.at(k, flat, c) - self.at(k, shift(i - 1), c)) / h
        } else {
            (self.at(k, shift(i + 1), c) - self.at(k, shift(i - 1), c)) / (2.0 * h)
        }
    }

    /// One-axis second derivative (interior three-point stencil; edge values
    /// copy the adjacent interior stencil so the array stays defined).
    pub fn second_derivative_at(&self, k: usize, flat: usize, c: usize, axis: usize) -> f64 {
        let g = &self.grid;
        let h2 = g.h() * g.h();
        let idx = g.unflat(flat);
        let i = idx[axis].clamp(1, g.n_space - 2);
        let shift = |j: usize| -> usize {
            let mut m = idx;
            m[axis] = j;
            g.flat(&m[..g.dim])
        };
        (self.at(k, shift(i + 1), c) - 2.0 * self.at(k, shift(i), c) + self.at(k, shift(i - 1), c))
            / h2
    }

    /// Mixed second derivative `d^2 / dx dy` (2-d only), by nested central
    /// differences clamped at the edges.
    pub fn cross_derivative_at(&self, k: usize, flat: usize, c: usize) -> f64 {
        let g = &self.grid;
        debug_assert_eq!(g.dim, 2);
        let h = g.h();
        let idx = g.unflat(flat);
        let i = idx[0].clamp(1, g.n_space - 2);
        let j = idx[1].clamp(1, g.n_space - 2);
        let f = |a: usize, b: usize| self.at(k, g.flat(&[a, b]), c);
        (f(i + 1, j + 1) - f(i + 1, j - 1) - f(i - 1, j + 1) + f(i - 1, j - 1)) / (4.0 * h * h)
    }

    // ---- serialization ----

    const MAGIC: u64 = 0x5a56_464c_4431_0000; // "ZVFLD1" tag

    /// Write the flat binary container: a header of little-endian 64-bit
    /// values (magic, rank, dim, n_time, n_space, t_start, t_end, half_width,
    /// center) followed by the row-major f64 payload.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        for v in [
            Self::MAGIC,
            self.rank.code(),
            g.dim as u64,
            g.n_time as u64,
            g.n_space as u64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in [g.t_start, g.t_end, g.half_width, g.center] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut u = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut u)?;
            Ok(u64::from_le_bytes(u))
        };
        let magic = next_u64(&mut r)?;
        if magic != Self::MAGIC {
            return Err(CoreError::InvalidField("bad container magic".into()));
        }
        let rank = FieldRank::from_code(next_u64(&mut r)?)?;
        let dim = next_u64(&mut r)? as usize;
        let n_time = next_u64(&mut r)? as usize;
        let n_space = next_u64(&mut r)? as usize;
        let mut b = [0u8; 8];
        let mut next_f64 = |r: &mut R| -> Result<f64> {
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let t_start = next_f64(&mut r)?;
        let t_end = next_f64(&mut r)?;
        let half_width = next_f64(&mut r)?;
        let center = next_f64(&mut r)?;
        let grid =
            UniformGrid::with_center(dim, t_start, t_end, n_time, half_width, center, n_space)?;
        let mut out = Self::zeros(&grid, rank);
        let mut buf = vec![0u8; out.data.len() * 8];
        r.read_exact(&mut buf)?;
        for (i, chunk) in buf.chunks_exact(8).enumerate() {
            out.data[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(f))
    }

    /// CSV export for plotting: one row per (time, point), all components.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        let nc = self.n_components();
        write!(w, "t,x")?;
        if g.dim == 2 {
            write!(w, ",y")?;
        }
        for c in 0..nc {
            write!(w, ",c{c}")?;
        }
        writeln!(w)?;
        for k in 0..g.n_slices() {
            let t = g.time(k);
            for p in 0..g.n_points() {
                let x = g.point(p);
                write!(w, "{t}")?;
                for a in 0..g.dim {
                    write!(w, ",{}", x[a])?;
                }
                for c in 0..nc {
                    write!(w, ",{}", self.at(k, p, c))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1() -> UniformGrid {
        UniformGrid::new(1, 0.0, 1.0, 4, 1.0, 11).unwrap()
    }

    #[test]
    fn sampling_and_eval_roundtrip() {
        let g = grid1();
        let f = SpaceTimeField::from_fn(&g, FieldRank::Scalar, |t, x, _| t + 2.0 * x[0]);
        // On-node evaluation is exact.
        for k in 0..g.n_slices() {
            for i in 0..g.n_space {
                let want = g.time(k) + 2.0 * g.coord(i);
                assert!((f.at(k, i, 0) - want).abs() < 1e-14);
            }
        }
        // Linear functions are reproduced exactly by linear interpolation.
        assert!((f.eval(0.5, &[0.33], 0) - (0.5 + 0.66)).abs() < 1e-14);
        // Left-constant in time: t=0.6 lies in [0.5, 0.75) so slice t=0.5 is used.
        assert!((f.eval(0.6, &[0.0], 0) - 0.5).abs() < 1e-14);
        // Right endpoint uses the final slice.
        assert!((f.eval(1.0, &[0.0], 0) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn constant_interpolation_is_exact() {
        let g = grid1();
        let f = SpaceTimeField::constant(&g, FieldRank::Scalar, 3.25);
        for &x in &[-0.9993, -0.31, 0.0, 0.123456, 0.77, 2.5] {
            assert_eq!(f.eval(0.42, &[x], 0), 3.25);
        }
    }

    #[test]
    fn clamped_extension_outside_box() {
        let g = grid1();
        let f = SpaceTimeField::from_fn(&g, FieldRank::Scalar, |_, x, _| x[0]);
        assert!((f.eval(0.0, &[5.0], 0) - 1.0).abs() < 1e-14);
        assert!((f.eval(0.0, &[-5.0], 0) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn bilinear_eval_2d() {
        let g = UniformGrid::new(2, 0.0, 1.0, 1, 1.0, 5).unwrap();
        let f = SpaceTimeField::from_fn(&g, FieldRank::Scalar, |_, x, _| 1.0 + x[0] * x[1]);
        // Bilinear functions are exact under bilinear interpolation.
        assert!((f.eval(0.0, &[0.3, -0.45], 0) - (1.0 + 0.3 * -0.45)).abs() < 1e-14);
    }

    #[test]
    fn gradient_of_linear_field() {
        let g = grid1();
        let f = SpaceTimeField::from_fn(&g, FieldRank::Scalar, |_, x, _| 3.0 * x[0]);
        let df = f.gradient().unwrap();
        assert_eq!(df.rank(), FieldRank::Vector);
        for i in 0..g.n_space {
            assert!((df.at(0, i, 0) - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_layout_2d() {
        let g = UniformGrid::new(2, 0.0, 1.0, 1, 1.0, 9).unwrap();
        let u = SpaceTimeField::from_fn(&g, FieldRank::Vector, |_, x, c| match c {
            0 => 2.0 * x[0] + x[1],
            _ => -x[0] + 4.0 * x[1],
        });
        let j = u.gradient().unwrap();
        let p = g.flat(&[4, 4]);
        // row-major: (l, a) -> l*dim + a
        assert!((j.at(0, p, 0) - 2.0).abs() < 1e-12);
        assert!((j.at(0, p, 1) - 1.0).abs() < 1e-12);
        assert!((j.at(0, p, 2) + 1.0).abs() < 1e-12);
        assert!((j.at(0, p, 3) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn binary_roundtrip() {
        let g = UniformGrid::with_center(2, 0.5, 2.0, 3, 1.5, 0.25, 6).unwrap();
        let f = SpaceTimeField::from_fn(&g, FieldRank::Matrix, |t, x, c| {
            t * 0.1 + x[0] - x[1] + c as f64
        });
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let back = SpaceTimeField::read_binary(buf.as_slice()).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let g = UniformGrid::new(1, 0.0, 1.0, 1, 1.0, 3).unwrap();
        let f = SpaceTimeField::constant(&g, FieldRank::Scalar, 1.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "t,x,c0");
        assert_eq!(lines.count(), 6);
    }
}
