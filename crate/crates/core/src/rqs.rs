//! Monotone rational-quadratic spline transforms with linear tails.
//!
//! A transform is parameterized by `3K - 1` unconstrained reals per scalar
//! (`K` raw widths, `K` raw heights, `K - 1` raw interior derivatives). After
//! constraining, the spline is a strictly increasing C1 bijection on
//! `[-B, B]` that matches the identity's value and slope at the boundary;
//! outside the interval it *is* the identity. All-zero raw parameters
//! constrain to the identity transform, which is what makes zero-initialized
//! flow layers start as identity maps.
//!
//! Raw parameter layout per scalar: `[widths | heights | derivatives]`.

/// Upper limit on the bin count. Keeps per-scalar scratch on the stack.
pub const MAX_BINS: usize = 32;

/// Minimum bin width/height as a fraction of the interval length `2B`.
pub const MIN_BIN_FRACTION: f64 = 1e-3;

/// Number of raw parameters per transformed scalar.
pub const fn params_per_dim(bins: usize) -> usize {
    3 * bins - 1
}

/// Shift that makes `softplus(0 + SHIFT) = 1`, so raw derivative 0 maps to
/// slope 1.
fn deriv_shift() -> f64 {
    (std::f64::consts::E - 1.0).ln()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Constrained spline parameters.
///
/// Knot abscissas `xk` and ordinates `yk` both run from `-B` to `B` over
/// `K + 1` points; `dk` holds the `K + 1` knot derivatives with the boundary
/// entries pinned to 1.
#[derive(Debug, Clone)]
pub struct SplineParams {
    pub bound: f64,
    pub xk: Vec<f64>,
    pub yk: Vec<f64>,
    pub dk: Vec<f64>,
}

/// Fixed-size constrain scratch, stack-allocated for hot loops.
struct Cache {
    k: usize,
    sw: [f64; MAX_BINS],
    sh: [f64; MAX_BINS],
    xk: [f64; MAX_BINS + 1],
    yk: [f64; MAX_BINS + 1],
    dk: [f64; MAX_BINS + 1],
}

fn softmax_into(raw: &[f64], out: &mut [f64]) {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &r) in out.iter_mut().zip(raw) {
        let e = (r - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn constrain_cache(raw: &[f64], bins: usize, bound: f64) -> Cache {
    assert!(bins >= 1 && bins <= MAX_BINS, "bins out of range");
    assert_eq!(raw.len(), params_per_dim(bins), "raw parameter length");
    let mut c = Cache {
        k: bins,
        sw: [0.0; MAX_BINS],
        sh: [0.0; MAX_BINS],
        xk: [0.0; MAX_BINS + 1],
        yk: [0.0; MAX_BINS + 1],
        dk: [0.0; MAX_BINS + 1],
    };
    softmax_into(&raw[..bins], &mut c.sw[..bins]);
    softmax_into(&raw[bins..2 * bins], &mut c.sh[..bins]);
    let span = 2.0 * bound;
    let scale = 1.0 - bins as f64 * MIN_BIN_FRACTION;
    c.xk[0] = -bound;
    c.yk[0] = -bound;
    for i in 0..bins {
        let w = span * (MIN_BIN_FRACTION + scale * c.sw[i]);
        let h = span * (MIN_BIN_FRACTION + scale * c.sh[i]);
        c.xk[i + 1] = c.xk[i] + w;
        c.yk[i + 1] = c.yk[i] + h;
    }
    c.dk[0] = 1.0;
    c.dk[bins] = 1.0;
    let shift = deriv_shift();
    for i in 1..bins {
        c.dk[i] = softplus(raw[2 * bins + i - 1] + shift);
    }
    c
}

/// Constrains raw parameters to a valid monotone spline.
pub fn constrain(raw: &[f64], bins: usize, bound: f64) -> SplineParams {
    let c = constrain_cache(raw, bins, bound);
    SplineParams {
        bound,
        xk: c.xk[..=bins].to_vec(),
        yk: c.yk[..=bins].to_vec(),
        dk: c.dk[..=bins].to_vec(),
    }
}

fn locate_bin(knots: &[f64], v: f64, bins: usize) -> usize {
    // Largest bin index whose left knot is <= v, clamped into range.
    let mut lo = 0usize;
    let mut hi = bins; // search over knots[1..=bins]
    while lo < hi {
        let mid = (lo + hi) / 2;
        if knots[mid + 1] <= v {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo.min(bins - 1)
}

/// Evaluates one bin's rational quadratic at parameter position `t`.
///
/// Returns `(y, log_deriv)`.
#[inline]
fn eval_bin(xlo: f64, xhi: f64, ylo: f64, yhi: f64, dlo: f64, dhi: f64, t: f64) -> (f64, f64) {
    let w = xhi - xlo;
    let h = yhi - ylo;
    let s = h / w;
    let tt = t * (1.0 - t);
    let p = dhi + dlo - 2.0 * s;
    let den = s + p * tt;
    let y = ylo + h * (s * t * t + dlo * tt) / den;
    let g = dhi * t * t + 2.0 * s * tt + dlo * (1.0 - t) * (1.0 - t);
    let ld = 2.0 * s.ln() + g.ln() - 2.0 * den.ln();
    (y, ld)
}

fn forward_in(c: &Cache, x: f64) -> (f64, f64) {
    let k = locate_bin(&c.xk, x, c.k);
    let t = (x - c.xk[k]) / (c.xk[k + 1] - c.xk[k]);
    eval_bin(c.xk[k], c.xk[k + 1], c.yk[k], c.yk[k + 1], c.dk[k], c.dk[k + 1], t)
}

fn inverse_in(c: &Cache, y: f64) -> (f64, f64) {
    let k = locate_bin(&c.yk, y, c.k);
    let (xlo, xhi) = (c.xk[k], c.xk[k + 1]);
    let (ylo, yhi) = (c.yk[k], c.yk[k + 1]);
    let (dlo, dhi) = (c.dk[k], c.dk[k + 1]);
    let w = xhi - xlo;
    let h = yhi - ylo;
    let s = h / w;
    let delta = y - ylo;
    let p = dhi + dlo - 2.0 * s;
    // Quadratic a t^2 + b t + c = 0 in the bin parameter, solved in the
    // cancellation-free form t = 2c / (-b - sqrt(b^2 - 4ac)).
    let a = h * (s - dlo) + delta * p;
    let b = h * dlo - delta * p;
    let cq = -s * delta;
    let disc = (b * b - 4.0 * a * cq).max(0.0);
    let t = (2.0 * cq / (-b - disc.sqrt())).clamp(0.0, 1.0);
    let x = xlo + t * w;
    let tt = t * (1.0 - t);
    let den = s + p * tt;
    let g = dhi * t * t + 2.0 * s * tt + dlo * (1.0 - t) * (1.0 - t);
    let ld = -(2.0 * s.ln() + g.ln() - 2.0 * den.ln());
    (x, ld)
}

/// Spline forward map. Returns `(y, log dy/dx)`; identity outside `[-B, B]`.
pub fn rqs_forward(x: f64, p: &SplineParams) -> (f64, f64) {
    if !(-p.bound..=p.bound).contains(&x) {
        return (x, 0.0);
    }
    let bins = p.xk.len() - 1;
    let k = locate_bin(&p.xk, x, bins);
    let t = (x - p.xk[k]) / (p.xk[k + 1] - p.xk[k]);
    eval_bin(p.xk[k], p.xk[k + 1], p.yk[k], p.yk[k + 1], p.dk[k], p.dk[k + 1], t)
}

/// Spline inverse map. Returns `(x, log dx/dy)`; identity outside `[-B, B]`.
pub fn rqs_inverse(y: f64, p: &SplineParams) -> (f64, f64) {
    if !(-p.bound..=p.bound).contains(&y) {
        return (y, 0.0);
    }
    let bins = p.xk.len() - 1;
    let mut c = Cache {
        k: bins,
        sw: [0.0; MAX_BINS],
        sh: [0.0; MAX_BINS],
        xk: [0.0; MAX_BINS + 1],
        yk: [0.0; MAX_BINS + 1],
        dk: [0.0; MAX_BINS + 1],
    };
    c.xk[..=bins].copy_from_slice(&p.xk);
    c.yk[..=bins].copy_from_slice(&p.yk);
    c.dk[..=bins].copy_from_slice(&p.dk);
    inverse_in(&c, y)
}

/// Forward transform straight from raw parameters (hot path for flow layers).
pub fn transform_forward(x: f64, raw: &[f64], bins: usize, bound: f64) -> (f64, f64) {
    if !(-bound..=bound).contains(&x) {
        return (x, 0.0);
    }
    let c = constrain_cache(raw, bins, bound);
    forward_in(&c, x)
}

/// Inverse transform straight from raw parameters.
pub fn transform_inverse(y: f64, raw: &[f64], bins: usize, bound: f64) -> (f64, f64) {
    if !(-bound..=bound).contains(&y) {
        return (y, 0.0);
    }
    let c = constrain_cache(raw, bins, bound);
    inverse_in(&c, y)
}

// ---------------------------------------------------------------------------
// Derivatives for the autodiff tape.
// ---------------------------------------------------------------------------

/// First-order dual number carrying partials with respect to the seven bin
/// quantities `(x, xlo, xhi, ylo, yhi, dlo, dhi)`.
#[derive(Clone, Copy)]
struct Dual7 {
    v: f64,
    g: [f64; 7],
}

impl Dual7 {
    fn con(v: f64) -> Self {
        Dual7 { v, g: [0.0; 7] }
    }

    fn var(v: f64, idx: usize) -> Self {
        let mut g = [0.0; 7];
        g[idx] = 1.0;
        Dual7 { v, g }
    }

    fn add(self, o: Dual7) -> Dual7 {
        let mut g = self.g;
        for (a, b) in g.iter_mut().zip(&o.g) {
            *a += b;
        }
        Dual7 { v: self.v + o.v, g }
    }

    fn sub(self, o: Dual7) -> Dual7 {
        let mut g = self.g;
        for (a, b) in g.iter_mut().zip(&o.g) {
            *a -= b;
        }
        Dual7 { v: self.v - o.v, g }
    }

    fn mul(self, o: Dual7) -> Dual7 {
        let mut g = [0.0; 7];
        for i in 0..7 {
            g[i] = self.g[i] * o.v + o.g[i] * self.v;
        }
        Dual7 { v: self.v * o.v, g }
    }

    fn div(self, o: Dual7) -> Dual7 {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let mut g = [0.0; 7];
        for i in 0..7 {
            g[i] = (self.g[i] - v * o.g[i]) * inv;
        }
        Dual7 { v, g }
    }

    fn scale(self, s: f64) -> Dual7 {
        let mut g = self.g;
        for a in g.iter_mut() {
            *a *= s;
        }
        Dual7 { v: self.v * s, g }
    }

    fn ln(self) -> Dual7 {
        let inv = 1.0 / self.v;
        let mut g = self.g;
        for a in g.iter_mut() {
            *a *= inv;
        }
        Dual7 { v: self.v.ln(), g }
    }
}

/// Full 7-way gradients of `(y, log dy/dx)` inside one bin.
struct BinJac {
    dy: [f64; 7],
    dld: [f64; 7],
}

fn bin_jacobian(x: f64, xlo: f64, xhi: f64, ylo: f64, yhi: f64, dlo: f64, dhi: f64) -> BinJac {
    let x = Dual7::var(x, 0);
    let xlo = Dual7::var(xlo, 1);
    let xhi = Dual7::var(xhi, 2);
    let ylo = Dual7::var(ylo, 3);
    let yhi = Dual7::var(yhi, 4);
    let dlo = Dual7::var(dlo, 5);
    let dhi = Dual7::var(dhi, 6);
    let one = Dual7::con(1.0);

    let w = xhi.sub(xlo);
    let h = yhi.sub(ylo);
    let s = h.div(w);
    let t = x.sub(xlo).div(w);
    let omt = one.sub(t);
    let tt = t.mul(omt);
    let p = dhi.add(dlo).sub(s.scale(2.0));
    let den = s.add(p.mul(tt));
    let num = h.mul(s.mul(t.mul(t)).add(dlo.mul(tt)));
    let y = ylo.add(num.div(den));
    let g = dhi.mul(t.mul(t)).add(s.mul(tt).scale(2.0)).add(dlo.mul(omt.mul(omt)));
    let ld = s.ln().scale(2.0).add(g.ln()).sub(den.ln().scale(2.0));

    BinJac {
        dy: y.g,
        dld: ld.g,
    }
}

/// Propagates cotangents of the six bin quantities back to the raw vector.
fn chain_bin_to_raw(
    cache: &Cache,
    bound: f64,
    bin: usize,
    bars: &[f64; 6], // xlo, xhi, ylo, yhi, dlo, dhi
    raw: &[f64],
    raw_bar: &mut [f64],
) {
    let bins = cache.k;
    let span = 2.0 * bound;
    let scale = 1.0 - bins as f64 * MIN_BIN_FRACTION;

    // Knot positions are cumulative sums of widths/heights; xlo = xk[bin]
    // collects widths 0..bin, xhi = xk[bin+1] collects widths 0..=bin.
    let mut wbar = [0.0; MAX_BINS];
    let mut hbar = [0.0; MAX_BINS];
    for j in 0..bin {
        wbar[j] += bars[0];
        hbar[j] += bars[2];
    }
    for j in 0..=bin {
        wbar[j] += bars[1];
        hbar[j] += bars[3];
    }

    // Through the affine map w_j = span * (m + scale * softmax_j).
    let mut swbar = [0.0; MAX_BINS];
    let mut shbar = [0.0; MAX_BINS];
    for j in 0..bins {
        swbar[j] = wbar[j] * span * scale;
        shbar[j] = hbar[j] * span * scale;
    }
    // Softmax backward: u_bar = s .* (s_bar - <s_bar, s>).
    let dot_w: f64 = (0..bins).map(|j| swbar[j] * cache.sw[j]).sum();
    let dot_h: f64 = (0..bins).map(|j| shbar[j] * cache.sh[j]).sum();
    for j in 0..bins {
        raw_bar[j] += cache.sw[j] * (swbar[j] - dot_w);
        raw_bar[bins + j] += cache.sh[j] * (shbar[j] - dot_h);
    }

    // Interior derivatives only; boundary slopes are pinned to 1.
    let shift = deriv_shift();
    if bin > 0 {
        let idx = 2 * bins + bin - 1;
        raw_bar[idx] += bars[4] * sigmoid(raw[idx] + shift);
    }
    if bin < bins - 1 {
        let idx = 2 * bins + bin;
        raw_bar[idx] += bars[5] * sigmoid(raw[idx] + shift);
    }
}

/// Reverse-mode step for the forward transform: accumulates
/// `d(y_bar*y + ld_bar*ld)/d(x, raw)` into the provided buffers.
pub(crate) fn forward_adjoint(
    x: f64,
    raw: &[f64],
    bins: usize,
    bound: f64,
    y_bar: f64,
    ld_bar: f64,
    x_bar: &mut f64,
    raw_bar: &mut [f64],
) {
    if !(-bound..=bound).contains(&x) {
        *x_bar += y_bar;
        return;
    }
    let c = constrain_cache(raw, bins, bound);
    let k = locate_bin(&c.xk, x, bins);
    let jac = bin_jacobian(x, c.xk[k], c.xk[k + 1], c.yk[k], c.yk[k + 1], c.dk[k], c.dk[k + 1]);
    *x_bar += y_bar * jac.dy[0] + ld_bar * jac.dld[0];
    let mut bars = [0.0; 6];
    for i in 0..6 {
        bars[i] = y_bar * jac.dy[i + 1] + ld_bar * jac.dld[i + 1];
    }
    chain_bin_to_raw(&c, bound, k, &bars, raw, raw_bar);
}

/// Reverse-mode step for the inverse transform.
///
/// The inverse is differentiated implicitly: with `y = F(x, p)` the partials
/// of `x = F^{-1}(y, p)` and of its log-derivative follow from the forward
/// Jacobian evaluated at the recovered `x`.
pub(crate) fn inverse_adjoint(
    y: f64,
    raw: &[f64],
    bins: usize,
    bound: f64,
    x_bar_in: f64,
    ld_bar_in: f64,
    y_bar: &mut f64,
    raw_bar: &mut [f64],
) {
    if !(-bound..=bound).contains(&y) {
        *y_bar += x_bar_in;
        return;
    }
    let c = constrain_cache(raw, bins, bound);
    let (x, _ld) = inverse_in(&c, y);
    let k = locate_bin(&c.xk, x, bins);
    let jac = bin_jacobian(x, c.xk[k], c.xk[k + 1], c.yk[k], c.yk[k + 1], c.dk[k], c.dk[k + 1]);
    let fprime = jac.dy[0];
    let lx = jac.dld[0];

    // x = F^{-1}(y, p):   dx/dy = 1/F',   dx/dp = -F_p / F'
    // ld = -L(x(y,p), p): dld/dy = -L_x/F',   dld/dp = L_x F_p / F' - L_p
    *y_bar += x_bar_in / fprime - ld_bar_in * lx / fprime;
    let mut bars = [0.0; 6];
    for i in 0..6 {
        let fp = jac.dy[i + 1];
        let lp = jac.dld[i + 1];
        bars[i] = x_bar_in * (-fp / fprime) + ld_bar_in * (lx * fp / fprime - lp);
    }
    chain_bin_to_raw(&c, bound, k, &bars, raw, raw_bar);
}

/// Reverse-mode step for the standalone constrain op, which exposes the
/// constrained `(widths..., heights..., interior derivs...)` vector.
pub(crate) fn constrain_adjoint(
    raw: &[f64],
    bins: usize,
    bound: f64,
    out_bar: &[f64],
    raw_bar: &mut [f64],
) {
    let c = constrain_cache(raw, bins, bound);
    let span = 2.0 * bound;
    let scale = 1.0 - bins as f64 * MIN_BIN_FRACTION;
    let wbar = &out_bar[..bins];
    let hbar = &out_bar[bins..2 * bins];
    let dot_w: f64 = (0..bins).map(|j| wbar[j] * span * scale * c.sw[j]).sum();
    let dot_h: f64 = (0..bins).map(|j| hbar[j] * span * scale * c.sh[j]).sum();
    for j in 0..bins {
        raw_bar[j] += c.sw[j] * (wbar[j] * span * scale - dot_w);
        raw_bar[bins + j] += c.sh[j] * (hbar[j] * span * scale - dot_h);
    }
    let shift = deriv_shift();
    for i in 1..bins {
        let idx = 2 * bins + i - 1;
        raw_bar[idx] += out_bar[idx] * sigmoid(raw[idx] + shift);
    }
}

/// Constrained parameter vector in the same `3K - 1` layout as the raw one:
/// widths, heights, interior derivatives.
pub fn constrained_vector(raw: &[f64], bins: usize, bound: f64, out: &mut [f64]) {
    let c = constrain_cache(raw, bins, bound);
    for i in 0..bins {
        out[i] = c.xk[i + 1] - c.xk[i];
        out[bins + i] = c.yk[i + 1] - c.yk[i];
    }
    for i in 1..bins {
        out[2 * bins + i - 1] = c.dk[i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_raw(rng: &mut rand_chacha::ChaCha12Rng, bins: usize, scale: f64) -> Vec<f64> {
        (0..params_per_dim(bins))
            .map(|_| rng::uniform(rng, -scale, scale))
            .collect()
    }

    #[test]
    fn zero_raw_gives_identity() {
        let bins = 8;
        let p = constrain(&vec![0.0; params_per_dim(bins)], bins, 3.0);
        // Equal bins of width 2B/K.
        for i in 0..bins {
            let w = p.xk[i + 1] - p.xk[i];
            assert!((w - 6.0 / bins as f64).abs() < 1e-12);
        }
        for d in &p.dk {
            assert!((d - 1.0).abs() < 1e-12);
        }
        let (y, ld) = rqs_forward(0.37, &p);
        assert!((y - 0.37).abs() < 1e-12);
        assert!(ld.abs() < 1e-12);
        let (x, ld) = rqs_inverse(0.37, &p);
        assert!((x - 0.37).abs() < 1e-12);
        assert!(ld.abs() < 1e-12);
    }

    #[test]
    fn tail_is_identity() {
        let bins = 8;
        let mut r = rng::stream(1, &[0]);
        let raw = random_raw(&mut r, bins, 2.0);
        let p = constrain(&raw, bins, 3.0);
        let (y, ld) = rqs_forward(4.0, &p);
        assert_eq!(y, 4.0);
        assert_eq!(ld, 0.0);
        let (x, ld) = rqs_inverse(-3.5, &p);
        assert_eq!(x, -3.5);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn widths_sum_to_interval() {
        let bins = 8;
        let bound = 3.0;
        let mut r = rng::stream(2, &[0]);
        for _ in 0..50 {
            let raw = random_raw(&mut r, bins, 5.0);
            let p = constrain(&raw, bins, bound);
            let total: f64 = (0..bins).map(|i| p.xk[i + 1] - p.xk[i]).sum();
            assert!((total - 2.0 * bound).abs() < 1e-12);
            assert!((p.xk[bins] - bound).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_constraint_monotone_in_raw() {
        let bins = 4;
        let mut prev = 0.0;
        for step in 0..20 {
            let v = -5.0 + step as f64 * 0.7;
            let mut raw = vec![0.0; params_per_dim(bins)];
            raw[2 * bins] = v; // first interior derivative
            let p = constrain(&raw, bins, 3.0);
            assert!(p.dk[1] > 0.0);
            if step > 0 {
                assert!(p.dk[1] > prev);
            }
            prev = p.dk[1];
        }
        // Large raw value produces derivative > 1.
        let mut raw = vec![0.0; params_per_dim(bins)];
        raw[2 * bins] = 4.0;
        assert!(constrain(&raw, bins, 3.0).dk[1] > 1.0);
    }

    #[test]
    fn round_trip_sweep() {
        let bins = 8;
        let bound = 3.0;
        let mut r = rng::stream(3, &[0]);
        let mut max_err: f64 = 0.0;
        for case in 0..2000 {
            let raw = random_raw(&mut r, bins, 3.0);
            let p = constrain(&raw, bins, bound);
            // Include near-knot points in the sweep.
            let x = if case % 5 == 0 {
                let k = case % (bins + 1);
                (p.xk[k] + 1e-9).min(bound)
            } else {
                rng::uniform(&mut r, -bound, bound)
            };
            let (y, ld_f) = rqs_forward(x, &p);
            let (x2, ld_i) = rqs_inverse(y, &p);
            max_err = max_err.max((x - x2).abs());
            assert!((ld_f + ld_i).abs() < 1e-10, "logdet mismatch {}", ld_f + ld_i);
        }
        assert!(max_err < 1e-8, "round trip error {max_err}");
    }

    #[test]
    fn forward_matches_finite_difference_slope() {
        let bins = 8;
        let bound = 3.0;
        let mut r = rng::stream(4, &[0]);
        let raw = random_raw(&mut r, bins, 2.0);
        let p = constrain(&raw, bins, bound);
        let h = 1e-6;
        for i in 0..10_000 {
            let x = -bound + (i as f64 + 0.5) / 10_000.0 * 2.0 * bound;
            let (_, ld) = rqs_forward(x, &p);
            let (yp, _) = rqs_forward(x + h, &p);
            let (ym, _) = rqs_forward(x - h, &p);
            let fd = (yp - ym) / (2.0 * h);
            let an = ld.exp();
            assert!(
                (fd - an).abs() / an.abs().max(1e-12) < 1e-5,
                "slope mismatch at {x}: fd {fd} vs {an}"
            );
        }
    }

    #[test]
    fn strict_monotonicity_and_knot_continuity() {
        let bins = 6;
        let bound = 3.0;
        let mut r = rng::stream(5, &[0]);
        for _ in 0..20 {
            let raw = random_raw(&mut r, bins, 4.0);
            let p = constrain(&raw, bins, bound);
            let mut last = f64::NEG_INFINITY;
            for i in 0..=600 {
                let x = -bound + i as f64 / 100.0;
                let (y, _) = rqs_forward(x, &p);
                assert!(y > last, "not strictly increasing at {x}");
                last = y;
            }
            // Continuity at interior knots: the left bin's limit at t=1 must
            // match the right bin's at t=0 in both value and derivative.
            for k in 1..bins {
                let (yl, ll) =
                    eval_bin(p.xk[k - 1], p.xk[k], p.yk[k - 1], p.yk[k], p.dk[k - 1], p.dk[k], 1.0);
                let (yr, lr) =
                    eval_bin(p.xk[k], p.xk[k + 1], p.yk[k], p.yk[k + 1], p.dk[k], p.dk[k + 1], 0.0);
                assert!((yl - yr).abs() < 1e-9, "value jump at knot {k}");
                assert!(
                    (ll.exp() - lr.exp()).abs() < 1e-9 * ll.exp().max(1.0),
                    "slope jump at knot {k}"
                );
            }
            // Boundary continuity with the linear tails: value and slope at
            // the outermost knots match the identity.
            let (y_lo, l_lo) =
                eval_bin(p.xk[0], p.xk[1], p.yk[0], p.yk[1], p.dk[0], p.dk[1], 0.0);
            assert!((y_lo - -bound).abs() < 1e-9);
            assert!((l_lo.exp() - 1.0).abs() < 1e-9);
            let (y_hi, l_hi) = eval_bin(
                p.xk[bins - 1],
                p.xk[bins],
                p.yk[bins - 1],
                p.yk[bins],
                p.dk[bins - 1],
                p.dk[bins],
                1.0,
            );
            assert!((y_hi - bound).abs() < 1e-9);
            assert!((l_hi.exp() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn adjoints_match_finite_differences() {
        let bins = 5;
        let bound = 2.5;
        let mut r = rng::stream(6, &[0]);
        let np = params_per_dim(bins);
        for case in 0..30 {
            let raw = random_raw(&mut r, bins, 2.0);
            let x = rng::uniform(&mut r, -bound, bound);
            let (wy, wl) = (rng::uniform(&mut r, -1.0, 1.0), rng::uniform(&mut r, -1.0, 1.0));
            let inverse = case % 2 == 1;
            let eval = |raw: &[f64], x: f64| -> f64 {
                let (v, ld) = if inverse {
                    transform_inverse(x, raw, bins, bound)
                } else {
                    transform_forward(x, raw, bins, bound)
                };
                wy * v + wl * ld
            };
            let mut x_bar = 0.0;
            let mut raw_bar = vec![0.0; np];
            if inverse {
                inverse_adjoint(x, &raw, bins, bound, wy, wl, &mut x_bar, &mut raw_bar);
            } else {
                forward_adjoint(x, &raw, bins, bound, wy, wl, &mut x_bar, &mut raw_bar);
            }
            let h = 1e-6;
            let fd_x = (eval(&raw, x + h) - eval(&raw, x - h)) / (2.0 * h);
            assert!(
                (fd_x - x_bar).abs() < 1e-4 * fd_x.abs().max(1.0),
                "case {case}: x grad {x_bar} vs fd {fd_x}"
            );
            for j in 0..np {
                let mut rp = raw.clone();
                rp[j] += h;
                let mut rm = raw.clone();
                rm[j] -= h;
                let fd = (eval(&rp, x) - eval(&rm, x)) / (2.0 * h);
                assert!(
                    (fd - raw_bar[j]).abs() < 1e-4 * fd.abs().max(1.0),
                    "case {case}: raw[{j}] grad {} vs fd {fd}",
                    raw_bar[j]
                );
            }
        }
    }
}
