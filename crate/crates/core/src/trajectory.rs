//! Time-indexed warp knots with per-parameter cubic interpolation.
//!
//! Each of the eight warp parameters is interpolated independently as a
//! function of (fractional) frame index. Four or more knots give a natural
//! cubic spline; three knots give the interpolating quadratic and two knots a
//! straight line. Outside the knot range the curve continues linearly with the
//! boundary derivative.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::warp::{Homography, WarpParams};

/// Warp estimate at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Knot<T> {
    pub t: T,
    pub params: WarpParams<T>,
    /// Registration residual behind this knot; zero when not applicable.
    pub confidence: T,
}

impl<T: Real> Knot<T> {
    pub fn new(t: T, params: WarpParams<T>) -> Self {
        Self {
            t,
            params,
            confidence: T::zero(),
        }
    }

    pub fn homography(&self) -> Result<Homography<T>> {
        Homography::from_params(&self.params)
    }
}

/// Polynomial piece `a + b*dt + c*dt^2 + d*dt^3` on `[t_i, t_{i+1})`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Segment<T> {
    a: T,
    b: T,
    c: T,
    d: T,
}

impl<T: Real> Segment<T> {
    #[inline]
    fn eval(&self, dt: T) -> T {
        self.a + dt * (self.b + dt * (self.c + dt * self.d))
    }

    #[inline]
    fn slope(&self, dt: T) -> T {
        self.b + dt * (T::lit(2.0) * self.c + dt * T::lit(3.0) * self.d)
    }
}

/// Fitted warp trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    knots: Vec<Knot<T>>,
    // segments[param][interval]
    segments: Vec<Vec<Segment<T>>>,
    end_slopes: [T; 8],
}

impl<T: Real> Trajectory<T> {
    /// Fits the interpolant. Knots may come in any order; duplicate times are
    /// rejected.
    pub fn fit(knots: Vec<Knot<T>>) -> Result<Self> {
        let mut knots = knots;
        if knots.len() < 2 {
            return Err(Error::arg("trajectory needs at least two knots"));
        }
        if knots.iter().any(|k| !k.t.is_finite() || !k.params.is_finite()) {
            return Err(Error::arg("trajectory knot is not finite"));
        }
        knots.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
        if let Some(w) = knots.windows(2).find(|w| w[0].t == w[1].t) {
            return Err(Error::arg(format!("duplicate knot time {}", w[0].t)));
        }
        let ts: Vec<T> = knots.iter().map(|k| k.t).collect();
        let mut segments = Vec::with_capacity(8);
        let mut end_slopes = [T::zero(); 8];
        for p in 0..8 {
            let ys: Vec<T> = knots.iter().map(|k| k.params.0[p]).collect();
            let segs = fit_segments(&ts, &ys);
            let last = segs.last().unwrap();
            let h = ts[ts.len() - 1] - ts[ts.len() - 2];
            end_slopes[p] = last.slope(h);
            segments.push(segs);
        }
        Ok(Self {
            knots,
            segments,
            end_slopes,
        })
    }

    /// Constant identity over `[t0, t1]`.
    pub fn identity(t0: T, t1: T) -> Self {
        Self::fit(vec![
            Knot::new(t0, WarpParams::zero()),
            Knot::new(t1, WarpParams::zero()),
        ])
        .expect("identity trajectory needs t0 < t1")
    }

    pub fn knots(&self) -> &[Knot<T>] {
        &self.knots
    }

    pub fn first_time(&self) -> T {
        self.knots[0].t
    }

    pub fn last_time(&self) -> T {
        self.knots[self.knots.len() - 1].t
    }

    pub fn eval(&self, t: T) -> WarpParams<T> {
        let n = self.knots.len();
        let mut out = [T::zero(); 8];
        let t0 = self.knots[0].t;
        let tn = self.knots[n - 1].t;
        if t <= t0 {
            let dt = t - t0;
            for (p, o) in out.iter_mut().enumerate() {
                *o = self.knots[0].params.0[p] + self.segments[p][0].b * dt;
            }
        } else if t >= tn {
            let dt = t - tn;
            for (p, o) in out.iter_mut().enumerate() {
                *o = self.knots[n - 1].params.0[p] + self.end_slopes[p] * dt;
            }
        } else {
            // last knot with t_i <= t
            let i = self.knots.partition_point(|k| k.t <= t) - 1;
            let dt = t - self.knots[i].t;
            for (p, o) in out.iter_mut().enumerate() {
                *o = self.segments[p][i].eval(dt);
            }
        }
        WarpParams(out)
    }

    pub fn homography_at(&self, t: T) -> Result<Homography<T>> {
        Homography::from_params(&self.eval(t))
    }

    /// Warp taking frame-`t` pixel coordinates into frame-`t_ref` coordinates.
    pub fn relative_warp(&self, t_ref: T, t: T) -> Result<Homography<T>> {
        if t == t_ref {
            return Ok(Homography::identity());
        }
        let w_ref = self.homography_at(t_ref)?;
        let w_t = self.homography_at(t)?;
        w_ref.invert()?.compose(&w_t)
    }

    /// Refits after left-multiplying every knot by `W(t_anchor)^-1`, so the
    /// result is the identity at `t_anchor` whenever `t_anchor` is a knot.
    pub fn reanchored(&self, t_anchor: T) -> Result<Self> {
        let inv = self.homography_at(t_anchor)?.invert()?;
        let knots = self
            .knots
            .iter()
            .map(|k| {
                let h = inv.compose(&k.homography()?)?;
                Ok(Knot {
                    t: k.t,
                    params: h.to_params(),
                    confidence: k.confidence,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::fit(knots)
    }

    /// Refits after left-multiplying every knot by `g`.
    pub fn premultiplied(&self, g: &Homography<T>) -> Result<Self> {
        let knots = self
            .knots
            .iter()
            .map(|k| {
                Ok(Knot {
                    t: k.t,
                    params: g.compose(&k.homography()?)?.to_params(),
                    confidence: k.confidence,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::fit(knots)
    }

    pub fn cast<U: Real>(&self) -> Trajectory<U> {
        Trajectory::fit(
            self.knots
                .iter()
                .map(|k| Knot {
                    t: U::lit(k.t.as_f64()),
                    params: k.params.cast(),
                    confidence: U::lit(k.confidence.as_f64()),
                })
                .collect(),
        )
        .expect("casting preserves knot validity")
    }

    /// CSV with header `t,p1,...,p8`, one row per knot.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> Result<()> {
        writeln!(sink, "t,p1,p2,p3,p4,p5,p6,p7,p8")?;
        for k in &self.knots {
            let mut line = format!("{}", k.t.as_f64());
            for v in k.params.0 {
                line.push(',');
                line.push_str(&format!("{}", v.as_f64()));
            }
            writeln!(sink, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(source: R) -> Result<Self> {
        let mut lines = source.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => l?,
            None => return Err(Error::Format("empty trajectory CSV".into())),
        };
        let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
        if cols != ["t", "p1", "p2", "p3", "p4", "p5", "p6", "p7", "p8"] {
            return Err(Error::Format(format!("unexpected trajectory header '{}'", header.trim())));
        }
        let mut knots = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("trajectory line {}: {e}", i + 1)))?;
            if vals.len() != 9 {
                return Err(Error::Format(format!(
                    "trajectory line {}: expected 9 fields, found {}",
                    i + 1,
                    vals.len()
                )));
            }
            let mut p = [T::zero(); 8];
            for (d, v) in p.iter_mut().zip(&vals[1..]) {
                *d = T::lit(*v);
            }
            knots.push(Knot::new(T::lit(vals[0]), WarpParams(p)));
        }
        Self::fit(knots)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

fn fit_segments<T: Real>(ts: &[T], ys: &[T]) -> Vec<Segment<T>> {
    let n = ts.len();
    let zero = T::zero();
    match n {
        2 => {
            let h = ts[1] - ts[0];
            vec![Segment {
                a: ys[0],
                b: (ys[1] - ys[0]) / h,
                c: zero,
                d: zero,
            }]
        }
        3 => {
            // interpolating quadratic q(t) = y0 + s0 (t - t0) + c (t - t0)^2
            let h0 = ts[1] - ts[0];
            let h1 = ts[2] - ts[1];
            let d0 = (ys[1] - ys[0]) / h0;
            let d1 = (ys[2] - ys[1]) / h1;
            let c = (d1 - d0) / (h0 + h1);
            let s0 = d0 - c * h0;
            let s1 = s0 + T::lit(2.0) * c * h0;
            vec![
                Segment { a: ys[0], b: s0, c, d: zero },
                Segment { a: ys[1], b: s1, c, d: zero },
            ]
        }
        _ => natural_cubic(ts, ys),
    }
}

/// Natural cubic spline (zero second derivative at both ends).
fn natural_cubic<T: Real>(ts: &[T], ys: &[T]) -> Vec<Segment<T>> {
    let n = ts.len();
    let two = T::lit(2.0);
    let six = T::lit(6.0);
    let h: Vec<T> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    // Tridiagonal system for interior second derivatives m[1..n-1].
    let k = n - 2;
    let mut diag = vec![T::zero(); k];
    let mut upper = vec![T::zero(); k];
    let mut rhs = vec![T::zero(); k];
    for j in 0..k {
        let i = j + 1;
        diag[j] = two * (h[i - 1] + h[i]);
        upper[j] = h[i];
        rhs[j] = six * ((ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1]);
    }
    // Thomas algorithm; the sub-diagonal entry of row j is h[j].
    for j in 1..k {
        let w = h[j] / diag[j - 1];
        diag[j] = diag[j] - w * upper[j - 1];
        rhs[j] = rhs[j] - w * rhs[j - 1];
    }
    let mut m = vec![T::zero(); n];
    for j in (0..k).rev() {
        let next = if j + 1 < k { m[j + 2] } else { T::zero() };
        m[j + 1] = (rhs[j] - upper[j] * next) / diag[j];
    }
    (0..n - 1)
        .map(|i| Segment {
            a: ys[i],
            b: (ys[i + 1] - ys[i]) / h[i] - h[i] * (two * m[i] + m[i + 1]) / six,
            c: m[i] / two,
            d: (m[i + 1] - m[i]) / (six * h[i]),
        })
        .collect()
}
