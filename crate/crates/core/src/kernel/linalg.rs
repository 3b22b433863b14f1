//! Small dense linear algebra used by the internal solvers.

/// Cholesky factorization of a symmetric positive definite matrix stored
/// row-major. Returns the lower factor, or `None` when a pivot degenerates.
pub fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solve L Lᵀ x = b given the lower Cholesky factor.
pub fn cholesky_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

/// Solve a symmetric system with escalating ridge regularization. The ridge
/// only kicks in when the plain factorization fails, so well-posed systems
/// are solved exactly.
pub fn solve_spd_regularized(a: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    if let Some(l) = cholesky(a, n) {
        return cholesky_solve(&l, n, b);
    }
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(1e-300, f64::max);
    let mut ridge = scale * 1e-14;
    for _ in 0..40 {
        let mut reg = a.to_vec();
        for i in 0..n {
            reg[i * n + i] += ridge;
        }
        if let Some(l) = cholesky(&reg, n) {
            return cholesky_solve(&l, n, b);
        }
        ridge *= 10.0;
    }
    // Last resort: steepest-descent direction.
    b.to_vec()
}

/// Symmetric matrix-vector product, row-major.
pub fn symv(a: &[f64], n: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        out[i] = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum();
    }
}

/// Solve a symmetric tridiagonal system via LDLᵀ (Thomas algorithm).
/// `diag` has length n, `off` has length n-1 (sub/super diagonal).
pub fn tridiag_solve(diag: &[f64], off: &[f64], b: &[f64]) -> Vec<f64> {
    let n = diag.len();
    if n == 0 {
        return Vec::new();
    }
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n.saturating_sub(1)];
    d[0] = diag[0];
    for i in 1..n {
        e[i - 1] = off[i - 1] / d[i - 1];
        d[i] = diag[i] - off[i - 1] * e[i - 1];
    }
    let mut y = vec![0.0; n];
    y[0] = b[0];
    for i in 1..n {
        y[i] = b[i] - e[i - 1] * y[i - 1];
    }
    let mut x = vec![0.0; n];
    x[n - 1] = y[n - 1] / d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = y[i] / d[i] - e[i] * x[i + 1];
    }
    x
}


/// Solve H x = b for a symmetric "arrow" matrix: `num_blocks` dense diagonal
/// blocks of size `block_len` coupled only through a trailing border of
/// `border_len` variables. Block elimination with a Schur complement on the
/// border keeps the cost linear in the number of blocks.
pub fn solve_arrow(
    h: &[f64],
    n: usize,
    block_len: usize,
    num_blocks: usize,
    border_len: usize,
    b: &[f64],
) -> Option<Vec<f64>> {
    debug_assert_eq!(block_len * num_blocks + border_len, n);
    let border0 = block_len * num_blocks;
    let mut schur = vec![0.0; border_len * border_len];
    for r in 0..border_len {
        for c in 0..border_len {
            schur[r * border_len + c] = h[(border0 + r) * n + (border0 + c)];
        }
    }
    let mut rhs_border: Vec<f64> = b[border0..].to_vec();
    let mut block_factors = Vec::with_capacity(num_blocks);
    let mut block_solves = Vec::with_capacity(num_blocks);
    let mut block_borders = Vec::with_capacity(num_blocks);
    for blk in 0..num_blocks {
        let off = blk * block_len;
        let mut bb = vec![0.0; block_len * block_len];
        for r in 0..block_len {
            for c in 0..block_len {
                bb[r * block_len + c] = h[(off + r) * n + (off + c)];
            }
        }
        let l = match cholesky(&bb, block_len) {
            Some(l) => l,
            None => {
                // Ridge the block and retry once before giving up.
                let scale = (0..block_len)
                    .map(|i| bb[i * block_len + i].abs())
                    .fold(1e-300, f64::max);
                for i in 0..block_len {
                    bb[i * block_len + i] += scale * 1e-12;
                }
                cholesky(&bb, block_len)?
            }
        };
        // Border strip C (block_len x border_len) and its solves.
        let mut c_strip = vec![0.0; block_len * border_len];
        for r in 0..block_len {
            for c in 0..border_len {
                c_strip[r * border_len + c] = h[(off + r) * n + (border0 + c)];
            }
        }
        let z = cholesky_solve(&l, block_len, &b[off..off + block_len]);
        let mut y = vec![0.0; block_len * border_len];
        for c in 0..border_len {
            let col: Vec<f64> = (0..block_len).map(|r| c_strip[r * border_len + c]).collect();
            let sol = cholesky_solve(&l, block_len, &col);
            for r in 0..block_len {
                y[r * border_len + c] = sol[r];
            }
        }
        // Schur -= Cᵀ·Y, rhs_border -= Cᵀ·z.
        for r in 0..border_len {
            for c in 0..border_len {
                let mut acc = 0.0;
                for k in 0..block_len {
                    acc += c_strip[k * border_len + r] * y[k * border_len + c];
                }
                schur[r * border_len + c] -= acc;
            }
            let mut acc = 0.0;
            for k in 0..block_len {
                acc += c_strip[k * border_len + r] * z[k];
            }
            rhs_border[r] -= acc;
        }
        block_factors.push(l);
        block_solves.push(z);
        block_borders.push(y);
    }
    let w = {
        let l = match cholesky(&schur, border_len) {
            Some(l) => l,
            None => {
                let scale = (0..border_len)
                    .map(|i| schur[i * border_len + i].abs())
                    .fold(1e-300, f64::max);
                let mut reg = schur.clone();
                for i in 0..border_len {
                    reg[i * border_len + i] += scale * 1e-12;
                }
                cholesky(&reg, border_len)?
            }
        };
        cholesky_solve(&l, border_len, &rhs_border)
    };
    let mut x = vec![0.0; n];
    x[border0..].copy_from_slice(&w);
    for blk in 0..num_blocks {
        let off = blk * block_len;
        let y = &block_borders[blk];
        for r in 0..block_len {
            let mut acc = block_solves[blk][r];
            for c in 0..border_len {
                acc -= y[r * border_len + c] * w[c];
            }
            x[off + r] = acc;
        }
    }
    Some(x)
}
