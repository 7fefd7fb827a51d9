//! Eigendecomposition of small dense real matrices.
//!
//! Symmetric inputs go through cyclic Jacobi rotations. Everything else is
//! reduced to Hessenberg form and driven to real Schur form with the
//! Francis double-shift QR iteration, then eigenvectors are recovered by
//! back-substitution. The nonsymmetric path follows the EISPACK
//! `orthes`/`hqr2` procedures as popularised by JAMA.

use super::{Matrix, NumericsError, SYMMETRY_TOL};

const MAX_JACOBI_SWEEPS: usize = 100;
const MAX_QR_ITERATIONS_PER_VALUE: usize = 200;

/// Result of [`eigendecompose`].
///
/// Column `j` of `vectors` is the eigenvector for `values[j]`. For a
/// complex conjugate pair the two adjacent columns hold the real and
/// imaginary parts of the eigenvector, as in the real Schur convention.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub vectors: Matrix,
    /// Real parts, sorted descending.
    pub values: Vec<f64>,
    pub imag: Vec<f64>,
    /// Largest |imaginary part| among the eigenvalues.
    pub max_imag: f64,
    pub symmetric: bool,
}

impl EigenDecomposition {
    /// `E · diag(D) · E⁻¹`; only meaningful when every eigenvalue is real.
    pub fn reconstruct(&self) -> Result<Matrix, NumericsError> {
        let e_inv = self.vectors.inverse()?;
        Ok(&(&self.vectors * &Matrix::from_diagonal(&self.values)) * &e_inv)
    }
}

pub fn is_symmetric(m: &Matrix) -> bool {
    m.is_square() && m.sub(&m.transpose()).norm_inf() <= SYMMETRY_TOL * m.norm_inf()
}

/// Eigenvalues and eigenvectors, sorted by descending real part with ties
/// broken by descending imaginary part.
pub fn eigendecompose(m: &Matrix) -> Result<EigenDecomposition, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(NumericsError::NonFinite);
    }
    let n = m.rows();
    if n == 0 {
        return Ok(EigenDecomposition {
            vectors: Matrix::zeros(0, 0),
            values: Vec::new(),
            imag: Vec::new(),
            max_imag: 0.0,
            symmetric: true,
        });
    }
    let symmetric = is_symmetric(m);
    let (vectors, values, imag) = if symmetric {
        let (v, d) = jacobi(&m.symmetrize())?;
        (v, d, vec![0.0; n])
    } else {
        let mut g = General::new(m);
        g.orthes();
        g.hqr2()?;
        (g.v, g.d, g.e)
    };
    Ok(sorted(vectors, values, imag, symmetric))
}

fn sorted(vectors: Matrix, values: Vec<f64>, imag: Vec<f64>, symmetric: bool) -> EigenDecomposition {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then(imag[b].total_cmp(&imag[a]))
    });
    let mut out = Matrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..n {
            out[(i, new_col)] = vectors[(i, old_col)];
        }
    }
    let imag: Vec<f64> = order.iter().map(|&i| imag[i]).collect();
    for col in 0..n {
        if imag[col] == 0.0 {
            normalize_column(&mut out, col);
        }
    }
    EigenDecomposition {
        vectors: out,
        values: order.iter().map(|&i| values[i]).collect(),
        max_imag: imag.iter().fold(0.0, |a, v| a.max(v.abs())),
        imag,
        symmetric,
    }
}

/// Unit Euclidean norm; the first entry of largest magnitude is made
/// positive so results are reproducible.
fn normalize_column(v: &mut Matrix, col: usize) {
    let n = v.rows();
    let norm = (0..n).map(|i| v[(i, col)].powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 {
        return;
    }
    let max = (0..n).map(|i| v[(i, col)].abs()).fold(0.0, f64::max);
    let lead = (0..n)
        .find(|&i| v[(i, col)].abs() >= max * (1.0 - 1e-12))
        .unwrap_or(0);
    let sign = if v[(lead, col)] < 0.0 { -1.0 } else { 1.0 };
    for i in 0..n {
        v[(i, col)] *= sign / norm;
    }
}

fn jacobi(m: &Matrix) -> Result<(Matrix, Vec<f64>), NumericsError> {
    let n = m.rows();
    let mut a = m.clone();
    let mut v = Matrix::identity(n);
    let scale = m.max_abs();
    if scale == 0.0 {
        return Ok((v, vec![0.0; n]));
    }
    for _ in 0..MAX_JACOBI_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            return Ok((v, a.diagonal()));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(NumericsError::NoConvergence)
}

/// Working storage for the nonsymmetric path.
struct General {
    n: usize,
    h: Matrix,
    v: Matrix,
    d: Vec<f64>,
    e: Vec<f64>,
}

fn cdiv(xr: f64, xi: f64, yr: f64, yi: f64) -> (f64, f64) {
    if yr.abs() > yi.abs() {
        let r = yi / yr;
        let d = yr + r * yi;
        ((xr + r * xi) / d, (xi - r * xr) / d)
    } else {
        let r = yr / yi;
        let d = yi + r * yr;
        ((r * xr + xi) / d, (r * xi - xr) / d)
    }
}

impl General {
    fn new(m: &Matrix) -> Self {
        let n = m.rows();
        Self {
            n,
            h: m.clone(),
            v: Matrix::identity(n),
            d: vec![0.0; n],
            e: vec![0.0; n],
        }
    }

    /// Householder reduction to upper Hessenberg form, accumulating the
    /// orthogonal similarity in `v`.
    fn orthes(&mut self) {
        let n = self.n;
        if n < 3 {
            return;
        }
        let high = n - 1;
        let h = &mut self.h;
        let mut ort = vec![0.0; n];
        for m in 1..high {
            let scale: f64 = (m..=high).map(|i| h[(i, m - 1)].abs()).sum();
            if scale == 0.0 {
                continue;
            }
            let mut hh = 0.0;
            for i in (m..=high).rev() {
                ort[i] = h[(i, m - 1)] / scale;
                hh += ort[i] * ort[i];
            }
            let mut g = hh.sqrt();
            if ort[m] > 0.0 {
                g = -g;
            }
            hh -= ort[m] * g;
            ort[m] -= g;
            for j in m..n {
                let mut f = 0.0;
                for i in (m..=high).rev() {
                    f += ort[i] * h[(i, j)];
                }
                f /= hh;
                for i in m..=high {
                    h[(i, j)] -= f * ort[i];
                }
            }
            for i in 0..=high {
                let mut f = 0.0;
                for j in (m..=high).rev() {
                    f += ort[j] * h[(i, j)];
                }
                f /= hh;
                for j in m..=high {
                    h[(i, j)] -= f * ort[j];
                }
            }
            ort[m] *= scale;
            h[(m, m - 1)] = scale * g;
        }
        let v = &mut self.v;
        for m in (1..high).rev() {
            if h[(m, m - 1)] == 0.0 {
                continue;
            }
            for i in (m + 1)..=high {
                ort[i] = h[(i, m - 1)];
            }
            for j in m..=high {
                let mut g = 0.0;
                for i in m..=high {
                    g += ort[i] * v[(i, j)];
                }
                g = (g / ort[m]) / h[(m, m - 1)];
                for i in m..=high {
                    v[(i, j)] += g * ort[i];
                }
            }
        }
    }

    /// Real Schur form by double-shift QR, then eigenvectors.
    #[allow(clippy::many_single_char_names)]
    fn hqr2(&mut self) -> Result<(), NumericsError> {
        let nn = self.n;
        let high = nn as isize - 1;
        let low: isize = 0;
        let eps = f64::EPSILON;
        let h = &mut self.h;
        let v = &mut self.v;
        let d = &mut self.d;
        let e = &mut self.e;
        let at = |i: isize, j: isize| (i as usize, j as usize);

        let mut exshift = 0.0;
        let (mut p, mut q, mut r, mut s, mut z) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut t, mut w, mut x, mut y);

        let mut norm = 0.0;
        for i in 0..nn {
            for j in i.saturating_sub(1)..nn {
                norm += h[(i, j)].abs();
            }
        }

        let mut n = high;
        let mut iter = 0usize;
        let mut total_iter = 0usize;
        let budget = MAX_QR_ITERATIONS_PER_VALUE * nn.max(1);
        while n >= low {
            let mut l = n;
            while l > low {
                s = h[at(l - 1, l - 1)].abs() + h[at(l, l)].abs();
                if s == 0.0 {
                    s = norm;
                }
                if h[at(l, l - 1)].abs() < eps * s {
                    break;
                }
                l -= 1;
            }

            if l == n {
                // one root
                h[at(n, n)] += exshift;
                d[n as usize] = h[at(n, n)];
                e[n as usize] = 0.0;
                n -= 1;
                iter = 0;
            } else if l == n - 1 {
                // two roots
                w = h[at(n, n - 1)] * h[at(n - 1, n)];
                p = (h[at(n - 1, n - 1)] - h[at(n, n)]) / 2.0;
                q = p * p + w;
                z = q.abs().sqrt();
                h[at(n, n)] += exshift;
                h[at(n - 1, n - 1)] += exshift;
                x = h[at(n, n)];
                if q >= 0.0 {
                    z = if p >= 0.0 { p + z } else { p - z };
                    d[(n - 1) as usize] = x + z;
                    d[n as usize] = d[(n - 1) as usize];
                    if z != 0.0 {
                        d[n as usize] = x - w / z;
                    }
                    e[(n - 1) as usize] = 0.0;
                    e[n as usize] = 0.0;
                    x = h[at(n, n - 1)];
                    s = x.abs() + z.abs();
                    p = x / s;
                    q = z / s;
                    r = (p * p + q * q).sqrt();
                    p /= r;
                    q /= r;
                    for j in (n - 1)..(nn as isize) {
                        z = h[at(n - 1, j)];
                        h[at(n - 1, j)] = q * z + p * h[at(n, j)];
                        h[at(n, j)] = q * h[at(n, j)] - p * z;
                    }
                    for i in 0..=n {
                        z = h[at(i, n - 1)];
                        h[at(i, n - 1)] = q * z + p * h[at(i, n)];
                        h[at(i, n)] = q * h[at(i, n)] - p * z;
                    }
                    for i in low..=high {
                        z = v[at(i, n - 1)];
                        v[at(i, n - 1)] = q * z + p * v[at(i, n)];
                        v[at(i, n)] = q * v[at(i, n)] - p * z;
                    }
                } else {
                    d[(n - 1) as usize] = x + p;
                    d[n as usize] = x + p;
                    e[(n - 1) as usize] = z;
                    e[n as usize] = -z;
                }
                n -= 2;
                iter = 0;
            } else {
                x = h[at(n, n)];
                y = 0.0;
                w = 0.0;
                if l < n {
                    y = h[at(n - 1, n - 1)];
                    w = h[at(n, n - 1)] * h[at(n - 1, n)];
                }
                // Wilkinson's ad hoc shift
                if iter == 10 {
                    exshift += x;
                    for i in low..=n {
                        h[at(i, i)] -= x;
                    }
                    s = h[at(n, n - 1)].abs() + h[at(n - 1, n - 2)].abs();
                    x = 0.75 * s;
                    y = x;
                    w = -0.4375 * s * s;
                }
                // MATLAB's ad hoc shift
                if iter == 30 {
                    s = (y - x) / 2.0;
                    s = s * s + w;
                    if s > 0.0 {
                        s = s.sqrt();
                        if y < x {
                            s = -s;
                        }
                        s = x - w / ((y - x) / 2.0 + s);
                        for i in low..=n {
                            h[at(i, i)] -= s;
                        }
                        exshift += s;
                        x = 0.964;
                        y = x;
                        w = x;
                    }
                }
                iter += 1;
                total_iter += 1;
                if total_iter > budget {
                    return Err(NumericsError::NoConvergence);
                }

                // two consecutive small sub-diagonal elements
                let mut m = n - 2;
                while m >= l {
                    z = h[at(m, m)];
                    r = x - z;
                    s = y - z;
                    p = (r * s - w) / h[at(m + 1, m)] + h[at(m, m + 1)];
                    q = h[at(m + 1, m + 1)] - z - r - s;
                    r = h[at(m + 2, m + 1)];
                    s = p.abs() + q.abs() + r.abs();
                    p /= s;
                    q /= s;
                    r /= s;
                    if m == l {
                        break;
                    }
                    if h[at(m, m - 1)].abs() * (q.abs() + r.abs())
                        < eps
                            * (p.abs()
                                * (h[at(m - 1, m - 1)].abs()
                                    + z.abs()
                                    + h[at(m + 1, m + 1)].abs()))
                    {
                        break;
                    }
                    m -= 1;
                }
                for i in (m + 2)..=n {
                    h[at(i, i - 2)] = 0.0;
                    if i > m + 2 {
                        h[at(i, i - 3)] = 0.0;
                    }
                }

                // double QR step on rows l..=n, columns m..=n
                let mut k = m;
                while k < n {
                    let notlast = k != n - 1;
                    if k != m {
                        p = h[at(k, k - 1)];
                        q = h[at(k + 1, k - 1)];
                        r = if notlast { h[at(k + 2, k - 1)] } else { 0.0 };
                        x = p.abs() + q.abs() + r.abs();
                        if x == 0.0 {
                            k += 1;
                            continue;
                        }
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                    s = (p * p + q * q + r * r).sqrt();
                    if p < 0.0 {
                        s = -s;
                    }
                    if s != 0.0 {
                        if k != m {
                            h[at(k, k - 1)] = -s * x;
                        } else if l != m {
                            h[at(k, k - 1)] = -h[at(k, k - 1)];
                        }
                        p += s;
                        x = p / s;
                        y = q / s;
                        z = r / s;
                        q /= p;
                        r /= p;
                        for j in k..(nn as isize) {
                            p = h[at(k, j)] + q * h[at(k + 1, j)];
                            if notlast {
                                p += r * h[at(k + 2, j)];
                                h[at(k + 2, j)] -= p * z;
                            }
                            h[at(k, j)] -= p * x;
                            h[at(k + 1, j)] -= p * y;
                        }
                        for i in 0..=n.min(k + 3) {
                            p = x * h[at(i, k)] + y * h[at(i, k + 1)];
                            if notlast {
                                p += z * h[at(i, k + 2)];
                                h[at(i, k + 2)] -= p * r;
                            }
                            h[at(i, k)] -= p;
                            h[at(i, k + 1)] -= p * q;
                        }
                        for i in low..=high {
                            p = x * v[at(i, k)] + y * v[at(i, k + 1)];
                            if notlast {
                                p += z * v[at(i, k + 2)];
                                v[at(i, k + 2)] -= p * r;
                            }
                            v[at(i, k)] -= p;
                            v[at(i, k + 1)] -= p * q;
                        }
                    }
                    k += 1;
                }
            }
        }

        if norm == 0.0 {
            return Ok(());
        }

        // back-substitute for the vectors of the triangular form
        for n in (0..nn as isize).rev() {
            p = d[n as usize];
            q = e[n as usize];
            if q == 0.0 {
                let mut l = n;
                h[at(n, n)] = 1.0;
                for i in (0..n).rev() {
                    w = h[at(i, i)] - p;
                    r = 0.0;
                    for j in l..=n {
                        r += h[at(i, j)] * h[at(j, n)];
                    }
                    if e[i as usize] < 0.0 {
                        z = w;
                        s = r;
                    } else {
                        l = i;
                        if e[i as usize] == 0.0 {
                            h[at(i, n)] = if w != 0.0 { -r / w } else { -r / (eps * norm) };
                        } else {
                            x = h[at(i, i + 1)];
                            y = h[at(i + 1, i)];
                            q = (d[i as usize] - p).powi(2) + e[i as usize].powi(2);
                            t = (x * s - z * r) / q;
                            h[at(i, n)] = t;
                            h[at(i + 1, n)] = if x.abs() > z.abs() {
                                (-r - w * t) / x
                            } else {
                                (-s - y * t) / z
                            };
                        }
                        t = h[at(i, n)].abs();
                        if (eps * t) * t > 1.0 {
                            for j in i..=n {
                                h[at(j, n)] /= t;
                            }
                        }
                    }
                }
            } else if q < 0.0 {
                let mut l = n - 1;
                if h[at(n, n - 1)].abs() > h[at(n - 1, n)].abs() {
                    h[at(n - 1, n - 1)] = q / h[at(n, n - 1)];
                    h[at(n - 1, n)] = -(h[at(n, n)] - p) / h[at(n, n - 1)];
                } else {
                    let (cr, ci) = cdiv(0.0, -h[at(n - 1, n)], h[at(n - 1, n - 1)] - p, q);
                    h[at(n - 1, n - 1)] = cr;
                    h[at(n - 1, n)] = ci;
                }
                h[at(n, n - 1)] = 0.0;
                h[at(n, n)] = 1.0;
                for i in (0..n - 1).rev() {
                    let mut ra = 0.0;
                    let mut sa = 0.0;
                    for j in l..=n {
                        ra += h[at(i, j)] * h[at(j, n - 1)];
                        sa += h[at(i, j)] * h[at(j, n)];
                    }
                    w = h[at(i, i)] - p;
                    if e[i as usize] < 0.0 {
                        z = w;
                        r = ra;
                        s = sa;
                    } else {
                        l = i;
                        if e[i as usize] == 0.0 {
                            let (cr, ci) = cdiv(-ra, -sa, w, q);
                            h[at(i, n - 1)] = cr;
                            h[at(i, n)] = ci;
                        } else {
                            x = h[at(i, i + 1)];
                            y = h[at(i + 1, i)];
                            let mut vr = (d[i as usize] - p).powi(2) + e[i as usize].powi(2) - q * q;
                            let vi = (d[i as usize] - p) * 2.0 * q;
                            if vr == 0.0 && vi == 0.0 {
                                vr = eps * norm * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                            }
                            let (cr, ci) = cdiv(
                                x * r - z * ra + q * sa,
                                x * s - z * sa - q * ra,
                                vr,
                                vi,
                            );
                            h[at(i, n - 1)] = cr;
                            h[at(i, n)] = ci;
                            if x.abs() > z.abs() + q.abs() {
                                h[at(i + 1, n - 1)] =
                                    (-ra - w * h[at(i, n - 1)] + q * h[at(i, n)]) / x;
                                h[at(i + 1, n)] = (-sa - w * h[at(i, n)] - q * h[at(i, n - 1)]) / x;
                            } else {
                                let (cr, ci) =
                                    cdiv(-r - y * h[at(i, n - 1)], -s - y * h[at(i, n)], z, q);
                                h[at(i + 1, n - 1)] = cr;
                                h[at(i + 1, n)] = ci;
                            }
                        }
                        t = h[at(i, n - 1)].abs().max(h[at(i, n)].abs());
                        if (eps * t) * t > 1.0 {
                            for j in i..=n {
                                h[at(j, n - 1)] /= t;
                                h[at(j, n)] /= t;
                            }
                        }
                    }
                }
            }
        }

        // back-transform to eigenvectors of the original matrix
        for j in (low..nn as isize).rev() {
            for i in low..=high {
                z = 0.0;
                for k in low..=j.min(high) {
                    z += v[at(i, k)] * h[at(k, j)];
                }
                v[at(i, j)] = z;
            }
        }
        Ok(())
    }
}
