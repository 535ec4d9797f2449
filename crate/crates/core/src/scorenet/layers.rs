//! Primitive layers with explicit backward passes. Activations are stored
//! channel-major: element `(c, i)` of a `C x L` map is at `c * L + i`.

use num_traits::{Float, FromPrimitive};

pub trait Scalar: Float + FromPrimitive + Default + Send + Sync + std::fmt::Debug + 'static {
    /// `C <- alpha A B + beta C` for strided row/column layouts, `A` of size
    /// `m x k`, `B` of size `k x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        beta: Self,
        c: &mut [Self],
        rsc: usize,
        csc: usize,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: usize,
                csa: usize,
                b: &[Self],
                rsb: usize,
                csb: usize,
                beta: Self,
                c: &mut [Self],
                rsc: usize,
                csc: usize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(a.len() > (m - 1) * rsa + k.saturating_sub(1) * csa || k == 0);
                assert!(b.len() > k.saturating_sub(1) * rsb + (n - 1) * csb || k == 0);
                assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
                // SAFETY: the asserts above keep every strided access in bounds.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa as isize,
                        csa as isize,
                        b.as_ptr(),
                        rsb as isize,
                        csb as isize,
                        beta,
                        c.as_mut_ptr(),
                        rsc as isize,
                        csc as isize,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

#[inline]
pub fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("finite cast")
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * xi;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Column matrix of the circular convolution: row `(c, kk)` of the
/// `(cin k) x l` result holds `x[c, i + kk - k / 2]` (indices wrapped).
pub fn im2col<T: Scalar>(x: &[T], cin: usize, l: usize, k: usize, out: &mut Vec<T>) {
    let p = k / 2;
    out.clear();
    out.resize(cin * k * l, T::zero());
    for c in 0..cin {
        let row = &x[c * l..(c + 1) * l];
        for kk in 0..k {
            let dst = &mut out[(c * k + kk) * l..(c * k + kk + 1) * l];
            let shift = (kk + l - p) % l;
            dst[..l - shift].copy_from_slice(&row[shift..]);
            dst[l - shift..].copy_from_slice(&row[..shift]);
        }
    }
}

/// Circular convolution; `w` is `cout x cin x k`, `col` from [`im2col`].
pub fn conv_forward<T: Scalar>(col: &[T], cin: usize, l: usize, w: &[T], b: &[T], cout: usize, k: usize, y: &mut [T]) {
    for o in 0..cout {
        y[o * l..(o + 1) * l].fill(b[o]);
    }
    let ck = cin * k;
    T::gemm(cout, ck, l, T::one(), w, ck, 1, col, l, 1, T::one(), y, l, 1);
}

/// Accumulates weight and bias gradients and writes the input gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Scalar>(
    col: &[T],
    cin: usize,
    l: usize,
    w: &[T],
    cout: usize,
    k: usize,
    dy: &[T],
    dw: &mut [T],
    db: &mut [T],
    dx: &mut [T],
    dcol: &mut Vec<T>,
) {
    let ck = cin * k;
    let p = k / 2;
    for o in 0..cout {
        db[o] = db[o] + dy[o * l..(o + 1) * l].iter().fold(T::zero(), |a, &v| a + v);
    }
    // dW += dY col^T
    T::gemm(cout, l, ck, T::one(), dy, l, 1, col, 1, l, T::one(), dw, ck, 1);
    // dcol = W^T dY
    dcol.clear();
    dcol.resize(ck * l, T::zero());
    T::gemm(ck, cout, l, T::one(), w, 1, ck, dy, l, 1, T::zero(), dcol, l, 1);
    dx[..cin * l].fill(T::zero());
    for c in 0..cin {
        let dst = &mut dx[c * l..(c + 1) * l];
        for kk in 0..k {
            let src = &dcol[(c * k + kk) * l..(c * k + kk + 1) * l];
            let shift = (kk + l - p) % l;
            axpy(&mut dst[shift..], T::one(), &src[..l - shift]);
            axpy(&mut dst[..shift], T::one(), &src[l - shift..]);
        }
    }
}

pub const GN_EPS: f64 = 1e-5;

/// Group normalization statistics kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct GnCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

pub fn group_norm_forward<T: Scalar>(x: &[T], c: usize, l: usize, groups: usize, gamma: &[T], beta: &[T], y: &mut [T], cache: &mut GnCache<T>) {
    let cg = c / groups;
    let n = cast::<T>((cg * l) as f64);
    cache.xhat.resize(c * l, T::zero());
    cache.rstd.resize(groups, T::zero());
    for g in 0..groups {
        let r = g * cg * l..(g + 1) * cg * l;
        let xs = &x[r.clone()];
        let mean = xs.iter().fold(T::zero(), |a, &v| a + v) / n;
        let var = xs.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
        let rstd = T::one() / (var + cast(GN_EPS)).sqrt();
        cache.rstd[g] = rstd;
        for (xh, &v) in cache.xhat[r].iter_mut().zip(xs) {
            *xh = (v - mean) * rstd;
        }
    }
    for ch in 0..c {
        for i in 0..l {
            y[ch * l + i] = gamma[ch] * cache.xhat[ch * l + i] + beta[ch];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<T: Scalar>(
    c: usize,
    l: usize,
    groups: usize,
    gamma: &[T],
    cache: &GnCache<T>,
    dy: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    dx: &mut [T],
) {
    let cg = c / groups;
    let n = cast::<T>((cg * l) as f64);
    for ch in 0..c {
        let r = ch * l..(ch + 1) * l;
        dgamma[ch] = dgamma[ch] + dot(&dy[r.clone()], &cache.xhat[r.clone()]);
        dbeta[ch] = dbeta[ch] + dy[r].iter().fold(T::zero(), |a, &v| a + v);
    }
    for g in 0..groups {
        let mut sum = T::zero();
        let mut sum_x = T::zero();
        for ch in g * cg..(g + 1) * cg {
            for i in 0..l {
                let d = dy[ch * l + i] * gamma[ch];
                sum = sum + d;
                sum_x = sum_x + d * cache.xhat[ch * l + i];
            }
        }
        let rstd = cache.rstd[g];
        for ch in g * cg..(g + 1) * cg {
            for i in 0..l {
                let idx = ch * l + i;
                let d = dy[idx] * gamma[ch];
                dx[idx] = rstd * (d - (sum + cache.xhat[idx] * sum_x) / n);
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(a: T) -> T {
    T::one() / (T::one() + (-a).exp())
}

#[inline]
pub fn silu<T: Scalar>(a: T) -> T {
    a * sigmoid(a)
}

#[inline]
pub fn silu_grad<T: Scalar>(a: T) -> T {
    let s = sigmoid(a);
    s * (T::one() + a * (T::one() - s))
}

/// `y = W x + b` with `W` of shape `out x inp`.
pub fn dense_forward<T: Scalar>(w: &[T], b: &[T], x: &[T], y: &mut [T]) {
    let inp = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        *yo = b[o] + dot(&w[o * inp..(o + 1) * inp], x);
    }
}

pub fn dense_backward<T: Scalar>(w: &[T], x: &[T], dy: &[T], dw: &mut [T], db: &mut [T], dx: &mut [T]) {
    let inp = x.len();
    for (o, &d) in dy.iter().enumerate() {
        db[o] = db[o] + d;
        axpy(&mut dw[o * inp..(o + 1) * inp], d, x);
        axpy(dx, d, &w[o * inp..(o + 1) * inp]);
    }
}

pub fn avg_pool2<T: Scalar>(x: &[T], c: usize, l: usize) -> Vec<T> {
    let h = l / 2;
    let half = cast::<T>(0.5);
    let mut y = vec![T::zero(); c * h];
    for ch in 0..c {
        for i in 0..h {
            y[ch * h + i] = (x[ch * l + 2 * i] + x[ch * l + 2 * i + 1]) * half;
        }
    }
    y
}

pub fn avg_pool2_backward<T: Scalar>(dy: &[T], c: usize, l: usize, dx: &mut [T]) {
    let h = l / 2;
    let half = cast::<T>(0.5);
    for ch in 0..c {
        for i in 0..h {
            let d = dy[ch * h + i] * half;
            dx[ch * l + 2 * i] = dx[ch * l + 2 * i] + d;
            dx[ch * l + 2 * i + 1] = dx[ch * l + 2 * i + 1] + d;
        }
    }
}

/// Nearest-neighbour upsampling of `x` (`c x l`) written into the first
/// `c` channels of `y` (length `2 l`).
pub fn upsample2_into<T: Scalar>(x: &[T], c: usize, l: usize, y: &mut [T]) {
    let l2 = 2 * l;
    for ch in 0..c {
        for i in 0..l {
            let v = x[ch * l + i];
            y[ch * l2 + 2 * i] = v;
            y[ch * l2 + 2 * i + 1] = v;
        }
    }
}

pub fn upsample2_backward<T: Scalar>(dy: &[T], c: usize, l: usize, dx: &mut [T]) {
    let l2 = 2 * l;
    for ch in 0..c {
        for i in 0..l {
            dx[ch * l + i] = dx[ch * l + i] + dy[ch * l2 + 2 * i] + dy[ch * l2 + 2 * i + 1];
        }
    }
}
