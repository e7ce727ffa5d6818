//! Conditional affine map followed by a monotone rational-quadratic spline
//! with identity tails.

use super::real::Real;

pub const BINS: usize = 8;
/// The spline acts on `[-BOUND, BOUND]`; outside it the map is the identity.
pub const BOUND: f64 = 4.0;
/// log-scale, shift, bin widths, bin heights, interior knot derivatives
pub const N_PARAMS: usize = 2 + BINS + BINS + (BINS - 1);

const MIN_BIN: f64 = 1e-3;
const MIN_DERIVATIVE: f64 = 1e-3;

const WIDTHS: usize = 2;
const HEIGHTS: usize = WIDTHS + BINS;
const DERIVS: usize = HEIGHTS + BINS;

#[derive(Debug, Clone, Copy)]
pub struct Spline<T> {
    pub xs: [T; BINS + 1],
    pub ys: [T; BINS + 1],
    pub ds: [T; BINS + 1],
}

#[derive(Debug, Clone, Copy)]
pub struct Transform<T> {
    pub log_scale: T,
    pub shift: T,
    pub spline: Option<Spline<T>>,
}

/// Raw conditioner outputs that make the whole transform the identity.
/// Equal logits give equal bins; a derivative raw of 0 gives slope 1.
pub fn identity_raw() -> [f64; N_PARAMS] {
    [0.0; N_PARAMS]
}

fn knots<T: Real>(logits: &[T]) -> [T; BINS + 1] {
    let max = logits.iter().map(|l| l.val()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - T::cst(max)).exp()).collect();
    let mut total = exps[0];
    for &e in &exps[1..] {
        total = total + e;
    }
    let scale = T::cst(2.0 * BOUND * (1.0 - BINS as f64 * MIN_BIN));
    let mut out = [T::cst(-BOUND); BINS + 1];
    for k in 0..BINS {
        let width = T::cst(2.0 * BOUND * MIN_BIN) + scale * exps[k] / total;
        out[k + 1] = out[k] + width;
    }
    out[BINS] = T::cst(BOUND);
    out
}

impl<T: Real> Transform<T> {
    pub fn from_raw(raw: &[T], affine_only: bool) -> Self {
        assert_eq!(raw.len(), N_PARAMS);
        let spline = (!affine_only).then(|| {
            let mut ds = [T::cst(1.0); BINS + 1];
            for k in 1..BINS {
                ds[k] = T::cst(MIN_DERIVATIVE) + T::cst(1.0 - MIN_DERIVATIVE) * raw[DERIVS + k - 1].exp();
            }
            Spline {
                xs: knots(&raw[WIDTHS..HEIGHTS]),
                ys: knots(&raw[HEIGHTS..DERIVS]),
                ds,
            }
        });
        Self {
            log_scale: raw[0],
            shift: raw[1],
            spline,
        }
    }

    /// Latent to standardized value, with log |dv/dz|.
    pub fn forward(&self, z: T) -> (T, T) {
        let u = self.log_scale.exp() * z + self.shift;
        let (v, ld) = match &self.spline {
            Some(s) => s.forward(u),
            None => (u, T::cst(0.0)),
        };
        (v, self.log_scale + ld)
    }

    /// Standardized value to latent, with log |dz/dv|.
    pub fn inverse(&self, v: T) -> (T, T) {
        let (u, ld) = match &self.spline {
            Some(s) => s.inverse(v),
            None => (v, T::cst(0.0)),
        };
        let z = (u - self.shift) * (-self.log_scale).exp();
        (z, -(self.log_scale + ld))
    }
}

fn bin_of<T: Real>(knots: &[T; BINS + 1], x: f64) -> usize {
    (1..BINS).take_while(|&k| knots[k].val() <= x).count()
}

impl<T: Real> Spline<T> {
    fn inside(x: f64) -> bool {
        (-BOUND..=BOUND).contains(&x)
    }

    /// `(y, log dy/dx)`.
    pub fn forward(&self, x: T) -> (T, T) {
        if !Self::inside(x.val()) {
            return (x, T::cst(0.0));
        }
        let k = bin_of(&self.xs, x.val());
        let w = self.xs[k + 1] - self.xs[k];
        let h = self.ys[k + 1] - self.ys[k];
        let s = h / w;
        let (d0, d1) = (self.ds[k], self.ds[k + 1]);
        let xi = (x - self.xs[k]) / w;
        let one = T::cst(1.0);
        let two = T::cst(2.0);
        let xi1 = xi * (one - xi);
        let denom = s + (d1 + d0 - two * s) * xi1;
        let y = self.ys[k] + h * (s * xi * xi + d0 * xi1) / denom;
        let num = s * s * (d1 * xi * xi + two * s * xi1 + d0 * (one - xi) * (one - xi));
        (y, num.ln() - two * denom.ln())
    }

    /// `(x, log dy/dx at x)`.
    pub fn inverse(&self, y: T) -> (T, T) {
        if !Self::inside(y.val()) {
            return (y, T::cst(0.0));
        }
        let k = bin_of(&self.ys, y.val());
        let w = self.xs[k + 1] - self.xs[k];
        let h = self.ys[k + 1] - self.ys[k];
        let s = h / w;
        let (d0, d1) = (self.ds[k], self.ds[k + 1]);
        let one = T::cst(1.0);
        let two = T::cst(2.0);
        let dy = y - self.ys[k];
        let sum = d1 + d0 - two * s;
        let a = h * (s - d0) + dy * sum;
        let b = h * d0 - dy * sum;
        let c = -(s * dy);
        let disc = b * b - T::cst(4.0) * a * c;
        let disc = if disc.val() < 0.0 { T::cst(0.0) } else { disc };
        let xi = two * c / (-b - disc.sqrt());
        let x = xi * w + self.xs[k];
        let xi1 = xi * (one - xi);
        let denom = s + sum * xi1;
        let num = s * s * (d1 * xi * xi + two * s * xi1 + d0 * (one - xi) * (one - xi));
        (x, num.ln() - two * denom.ln())
    }

    pub fn is_monotone(&self) -> bool {
        self.xs.windows(2).all(|w| w[0].val() < w[1].val())
            && self.ys.windows(2).all(|w| w[0].val() < w[1].val())
            && self.ds.iter().all(|d| d.val() > 0.0)
    }
}
