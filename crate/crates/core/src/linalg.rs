//! Small dense linear-algebra helpers shared by the analysis modules.

use alloc::vec::Vec;

use nalgebra::{Complex, DMatrix, DVector};

/// Largest absolute entry, zero for an empty matrix.
pub fn modulus(z: Complex<f64>) -> f64 {
    libm::hypot(z.re, z.im)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn max_abs_vec(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Largest absolute entry of `m - m^T`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Double-shift QR sweeps allowed per eigenvalue.
pub const QR_ITERS_PER_EIGENVALUE: usize = 60;

/// Complex spectrum from a Hessenberg reduction followed by Francis
/// double-shift QR. Deflation compares subdiagonals against the matrix norm
/// when the neighbouring diagonal vanishes, so zero clusters converge. If
/// the iteration stalls every entry is NaN, so stability tests fail closed.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    let h = balance(m).hessenberg().h();
    let mut a: Vec<f64> = (0..n * n).map(|k| h[(k / n, k % n)]).collect();
    hqr(&mut a, n).unwrap_or_else(|| alloc::vec![Complex::new(f64::NAN, f64::NAN); n])
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigenvalues of the upper Hessenberg matrix stored row-major in `a`,
/// which is overwritten.
fn hqr(a: &mut [f64], n: usize) -> Option<Vec<Complex<f64>>> {
    let idx = |i: isize, j: isize| i as usize * n + j as usize;
    let eps = f64::EPSILON;
    let mut wr = alloc::vec![0.0; n];
    let mut wi = alloc::vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i * n + j].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 1 {
                let mut s = a[idx(l - 1, l - 1)].abs() + a[idx(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[idx(l, l - 1)].abs() <= eps * s {
                    a[idx(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[idx(nn, nn)];
            if l == nn {
                wr[nn as usize] = x + t;
                wi[nn as usize] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = a[idx(nn - 1, nn - 1)];
            let mut w = a[idx(nn, nn - 1)] * a[idx(nn - 1, nn)];
            if l == nn - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = libm::sqrt(q.abs());
                x += t;
                let (i, j) = ((nn - 1) as usize, nn as usize);
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[i] = x + z;
                    wr[j] = if z != 0.0 { x - w / z } else { x + z };
                    wi[i] = 0.0;
                    wi[j] = 0.0;
                } else {
                    wr[i] = x + p;
                    wr[j] = x + p;
                    wi[i] = -z;
                    wi[j] = z;
                }
                nn -= 2;
                break;
            }
            if its >= QR_ITERS_PER_EIGENVALUE {
                return None;
            }
            if its == 10 || its == 20 {
                // exceptional shift
                t += x;
                for i in 0..=nn {
                    a[idx(i, i)] -= x;
                }
                let s = a[idx(nn, nn - 1)].abs() + a[idx(nn - 1, nn - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;

            let (mut p, mut q, mut r, mut z);
            let mut m = nn - 2;
            loop {
                z = a[idx(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[idx(m + 1, m)] + a[idx(m, m + 1)];
                q = a[idx(m + 1, m + 1)] - z - rr - ss;
                r = a[idx(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[idx(m, m - 1)].abs() * (q.abs() + r.abs());
                let v =
                    p.abs() * (a[idx(m - 1, m - 1)].abs() + z.abs() + a[idx(m + 1, m + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in (m + 2)..=nn {
                a[idx(i, i - 2)] = 0.0;
                if i != m + 2 {
                    a[idx(i, i - 3)] = 0.0;
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = a[idx(k, k - 1)];
                    q = a[idx(k + 1, k - 1)];
                    r = if k != nn - 1 {
                        a[idx(k + 2, k - 1)]
                    } else {
                        0.0
                    };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign(libm::sqrt(p * p + q * q + r * r), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[idx(k, k - 1)] = -a[idx(k, k - 1)];
                        }
                    } else {
                        a[idx(k, k - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        let mut pp = a[idx(k, j)] + q * a[idx(k + 1, j)];
                        if k != nn - 1 {
                            pp += r * a[idx(k + 2, j)];
                            a[idx(k + 2, j)] -= pp * z;
                        }
                        a[idx(k + 1, j)] -= pp * y;
                        a[idx(k, j)] -= pp * x;
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l..=mmin {
                        let mut pp = x * a[idx(i, k)] + y * a[idx(i, k + 1)];
                        if k != nn - 1 {
                            pp += z * a[idx(i, k + 2)];
                            a[idx(i, k + 2)] -= pp * r;
                        }
                        a[idx(i, k + 1)] -= pp * q;
                        a[idx(i, k)] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Some(
        wr.into_iter()
            .zip(wi)
            .map(|(re, im)| Complex::new(re, im))
            .collect(),
    )
}

/// Diagonal similarity `D^-1 M D` with power-of-two scalings that equalize
/// row and column norms.
pub fn balance(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut b = m.clone();
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let c: f64 = (0..n).filter(|&j| j != i).map(|j| b[(j, i)].abs()).sum();
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| b[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let mut f = 1.0;
            let (mut cc, total) = (c, c + r);
            while cc < r / 2.0 {
                cc *= 2.0;
                f *= 2.0;
            }
            while cc >= r * 2.0 {
                cc /= 2.0;
                f /= 2.0;
            }
            if cc + r / f < 0.95 * total {
                done = false;
                for j in 0..n {
                    b[(i, j)] /= f;
                    b[(j, i)] *= f;
                }
            }
        }
    }
    b
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m)
        .iter()
        .fold(f64::NEG_INFINITY, |acc, z| acc.max(z.re))
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, &v| acc.min(v))
}

pub fn max_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |acc, &v| acc.max(v))
}

/// Matches two eigenvalue lists as multisets by repeatedly pairing the
/// closest remaining elements, and returns the largest distance used.
/// Returns `None` when the lists have different lengths.
pub fn multiset_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut used_a = alloc::vec![false; a.len()];
    let mut used_b = alloc::vec![false; b.len()];
    let mut worst = 0.0f64;
    for _ in 0..a.len() {
        let mut best = (f64::INFINITY, 0, 0);
        for (i, za) in a.iter().enumerate().filter(|(i, _)| !used_a[*i]) {
            for (j, zb) in b.iter().enumerate().filter(|(j, _)| !used_b[*j]) {
                let dist = modulus(za - zb);
                if dist < best.0 {
                    best = (dist, i, j);
                }
            }
        }
        used_a[best.1] = true;
        used_b[best.2] = true;
        worst = worst.max(best.0);
    }
    Some(worst)
}

/// Assembles `[[a, b], [c, d]]` from four equally sized square blocks.
pub fn block2(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(a);
    out.view_mut((0, n), (n, n)).copy_from(b);
    out.view_mut((n, 0), (n, n)).copy_from(c);
    out.view_mut((n, n), (n, n)).copy_from(d);
    out
}

pub fn is_row_stochastic(p: &DMatrix<f64>, tol: f64) -> bool {
    p.row_iter()
        .all(|row| row.iter().all(|&v| v >= 0.0 && v.is_finite()) && (row.sum() - 1.0).abs() <= tol)
}
