//! Basis factorization `P B Q = L U` with a product-form eta file for the
//! column replacements between refactorizations.
//!
//! Elimination is sparse throughout; the triangular factors are kept as
//! sparse row and column lists so that FTRAN and BTRAN cost `O(nnz)`.

/// Entries with magnitude at or below this are dropped from eta vectors.
const ETA_DROP: f64 = 1e-14;
/// Pivot candidates must reach this fraction of their column's largest entry.
const PIVOT_THRESHOLD: f64 = 0.1;
/// Sparsest columns, and sparsest rows, examined per pivot search.
const SEARCH_LINES: usize = 4;

#[derive(Debug)]
pub(crate) struct Singular {
    /// Basis position that could not be pivoted.
    pub position: usize,
}

#[derive(Debug, Clone)]
struct Eta {
    pos: usize,
    pivot: f64,
    others: Vec<(u32, f64)>,
}

#[derive(Debug, Clone)]
pub(crate) struct Factor {
    m: usize,
    /// `row_perm[i]`: original row placed at elimination step `i`.
    row_perm: Vec<usize>,
    /// `col_perm[k]`: basis position eliminated at step `k`.
    col_perm: Vec<usize>,
    l_cols: Vec<Vec<(u32, f64)>>,
    u_rows: Vec<Vec<(u32, f64)>>,
    u_cols: Vec<Vec<(u32, f64)>>,
    u_diag: Vec<f64>,
    etas: Vec<Eta>,
}

impl Factor {
    /// Identity factorization (all-slack basis).
    pub fn identity(m: usize) -> Self {
        Factor {
            m,
            row_perm: (0..m).collect(),
            col_perm: (0..m).collect(),
            l_cols: vec![Vec::new(); m],
            u_rows: vec![Vec::new(); m],
            u_cols: vec![Vec::new(); m],
            u_diag: vec![1.0; m],
            etas: Vec::new(),
        }
    }

    /// Factorizes the basis whose position `p` holds the 0/1 column with
    /// ones at `columns[p]`.
    ///
    /// Pivots are chosen by the Markowitz count among the sparsest active
    /// columns and rows, subject to a relative threshold within the column.
    pub fn new(m: usize, columns: &[&[u32]], zero_pivot: f64) -> Result<Self, Singular> {
        assert_eq!(columns.len(), m);
        // Active submatrix: values by column, patterns by row.
        let mut cols: Vec<Vec<(u32, f64)>> = vec![Vec::new(); m];
        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); m];
        for (p, c) in columns.iter().enumerate() {
            for &r in c.iter() {
                match cols[p].iter_mut().find(|e| e.0 == r) {
                    Some(e) => e.1 += 1.0,
                    None => {
                        cols[p].push((r, 1.0));
                        rows[r as usize].push(p as u32);
                    }
                }
            }
        }
        let mut col_done = vec![false; m];
        let mut row_done = vec![false; m];
        let mut col_buckets: Vec<Vec<u32>> = vec![Vec::new(); m + 1];
        let mut row_buckets: Vec<Vec<u32>> = vec![Vec::new(); m + 1];
        for (c, col) in cols.iter().enumerate() {
            col_buckets[col.len()].push(c as u32);
        }
        for (r, row) in rows.iter().enumerate() {
            row_buckets[row.len()].push(r as u32);
        }
        let mut mark = vec![usize::MAX; m];
        let mut slot = vec![0u32; m];
        let mut stamp = 0usize;
        let mut row_perm = Vec::with_capacity(m);
        let mut col_perm = Vec::with_capacity(m);
        let mut u_diag = Vec::with_capacity(m);
        let mut l_steps: Vec<Vec<(u32, f64)>> = Vec::with_capacity(m);
        let mut u_steps: Vec<Vec<(u32, f64)>> = Vec::with_capacity(m);

        for _ in 0..m {
            let col_cands = lowest_bucket(&mut col_buckets, |c| {
                (!col_done[c]).then(|| cols[c].len())
            });
            let mut best: Option<(usize, u32, f64, usize)> = None;
            let consider = |best: &mut Option<(usize, u32, f64, usize)>,
                            c: usize,
                            i: u32,
                            a: f64,
                            colmax: f64| {
                if a.abs() < PIVOT_THRESHOLD * colmax || a.abs() <= zero_pivot {
                    return;
                }
                let cost = (rows[i as usize].len() - 1) * (cols[c].len() - 1);
                let better = match *best {
                    None => true,
                    Some((_, _, ba, bc)) => cost < bc || (cost == bc && a.abs() > ba.abs()),
                };
                if better {
                    *best = Some((c, i, a, cost));
                }
            };
            let column_max =
                |c: usize| cols[c].iter().map(|e| e.1.abs()).fold(0.0, f64::max);
            let fallback = col_cands.first().copied().unwrap_or(0);
            for c in col_cands {
                let colmax = column_max(c);
                if colmax <= zero_pivot {
                    return Err(Singular { position: c });
                }
                for &(i, a) in &cols[c] {
                    consider(&mut best, c, i, a, colmax);
                }
            }
            // Zero Markowitz cost cannot be improved on.
            if best.map_or(true, |b| b.3 > 0) {
                let row_cands = lowest_bucket(&mut row_buckets, |r| {
                    (!row_done[r]).then(|| rows[r].len())
                });
                for r in row_cands {
                    for &c in &rows[r] {
                        let c = c as usize;
                        let a = cols[c].iter().find(|e| e.0 == r as u32).map_or(0.0, |e| e.1);
                        consider(&mut best, c, r as u32, a, column_max(c));
                    }
                }
            }
            let Some((c, r, piv, _)) = best else {
                return Err(Singular { position: fallback });
            };
            let l_entries: Vec<(u32, f64)> = std::mem::take(&mut cols[c])
                .into_iter()
                .filter(|e| e.0 != r)
                .map(|(i, a)| (i, a / piv))
                .collect();
            let mut u_entries = Vec::new();
            for j in std::mem::take(&mut rows[r as usize]) {
                let j = j as usize;
                if j == c {
                    continue;
                }
                let col = &mut cols[j];
                let at = col
                    .iter()
                    .position(|e| e.0 == r)
                    .expect("pattern and values agree");
                let arj = col.swap_remove(at).1;
                u_entries.push((j as u32, arj));
                stamp += 1;
                for (s, e) in col.iter().enumerate() {
                    mark[e.0 as usize] = stamp;
                    slot[e.0 as usize] = s as u32;
                }
                for &(i, l) in &l_entries {
                    if mark[i as usize] == stamp {
                        col[slot[i as usize] as usize].1 -= l * arj;
                    } else {
                        col.push((i, -l * arj));
                        rows[i as usize].push(j as u32);
                    }
                }
            }
            for &(i, _) in &l_entries {
                let row = &mut rows[i as usize];
                let at = row
                    .iter()
                    .position(|&j| j as usize == c)
                    .expect("pattern and values agree");
                row.swap_remove(at);
                row_buckets[row.len()].push(i);
            }
            for &(j, _) in &u_entries {
                col_buckets[cols[j as usize].len()].push(j);
            }
            col_done[c] = true;
            row_done[r as usize] = true;
            row_perm.push(r as usize);
            col_perm.push(c);
            u_diag.push(piv);
            l_steps.push(l_entries);
            u_steps.push(u_entries);
        }

        let mut row_step = vec![0u32; m];
        let mut col_step = vec![0u32; m];
        for k in 0..m {
            row_step[row_perm[k]] = k as u32;
            col_step[col_perm[k]] = k as u32;
        }
        let l_cols: Vec<Vec<(u32, f64)>> = l_steps
            .into_iter()
            .map(|e| e.into_iter().map(|(i, l)| (row_step[i as usize], l)).collect())
            .collect();
        let u_rows: Vec<Vec<(u32, f64)>> = u_steps
            .into_iter()
            .map(|e| e.into_iter().map(|(j, v)| (col_step[j as usize], v)).collect())
            .collect();
        let mut u_cols = vec![Vec::new(); m];
        for (k, row) in u_rows.iter().enumerate() {
            for &(j, v) in row {
                u_cols[j as usize].push((k as u32, v));
            }
        }
        Ok(Factor {
            m,
            row_perm,
            col_perm,
            l_cols,
            u_rows,
            u_cols,
            u_diag,
            etas: Vec::new(),
        })
    }

    pub fn eta_count(&self) -> usize {
        self.etas.len()
    }

    /// Solves `B x = b` for `b` given in row space; returns `x` by basis
    /// position.
    pub fn ftran(&self, b: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut z: Vec<f64> = self.row_perm.iter().map(|&r| b[r]).collect();
        for k in 0..m {
            let zk = z[k];
            if zk != 0.0 {
                for &(i, l) in &self.l_cols[k] {
                    z[i as usize] -= l * zk;
                }
            }
        }
        for k in (0..m).rev() {
            if z[k] != 0.0 {
                z[k] /= self.u_diag[k];
                let zk = z[k];
                for &(i, u) in &self.u_cols[k] {
                    z[i as usize] -= u * zk;
                }
            }
        }
        let mut x = vec![0.0; m];
        for (k, &p) in self.col_perm.iter().enumerate() {
            x[p] = z[k];
        }
        for eta in &self.etas {
            let t = x[eta.pos];
            if t != 0.0 {
                let t = t / eta.pivot;
                x[eta.pos] = t;
                for &(i, d) in &eta.others {
                    x[i as usize] -= d * t;
                }
            }
        }
        x
    }

    /// FTRAN of a 0/1 column given by its row indices.
    pub fn ftran_unit_sum(&self, rows: &[u32]) -> Vec<f64> {
        let mut b = vec![0.0; self.m];
        for &r in rows {
            b[r as usize] += 1.0;
        }
        self.ftran(&b)
    }

    /// Solves `yᵀ B = cᵀ` for `c` given by basis position; returns `y` in
    /// row space.
    pub fn btran(&self, c: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut c = c.to_vec();
        for eta in self.etas.iter().rev() {
            let mut s = c[eta.pos];
            for &(i, d) in &eta.others {
                s -= d * c[i as usize];
            }
            c[eta.pos] = s / eta.pivot;
        }
        let mut w: Vec<f64> = self.col_perm.iter().map(|&p| c[p]).collect();
        for k in 0..m {
            if w[k] != 0.0 {
                w[k] /= self.u_diag[k];
                let wk = w[k];
                for &(j, u) in &self.u_rows[k] {
                    w[j as usize] -= u * wk;
                }
            }
        }
        for k in (0..m).rev() {
            let mut s = w[k];
            for &(i, l) in &self.l_cols[k] {
                s -= l * w[i as usize];
            }
            w[k] = s;
        }
        let mut y = vec![0.0; m];
        for (i, &r) in self.row_perm.iter().enumerate() {
            y[r] = w[i];
        }
        y
    }

    /// Records the replacement of the column at `pos` by a column whose FTRAN
    /// image is `d`.
    pub fn push_eta(&mut self, pos: usize, d: &[f64]) {
        let others = d
            .iter()
            .enumerate()
            .filter(|&(i, v)| i != pos && v.abs() > ETA_DROP)
            .map(|(i, &v)| (i as u32, v))
            .collect();
        self.etas.push(Eta {
            pos,
            pivot: d[pos],
            others,
        });
    }
}

/// Up to `SEARCH_LINES` distinct live entries of the lowest nonempty count
/// bucket. Buckets hold stale entries; `live` returns the current count of
/// an active line and `None` for an eliminated one.
fn lowest_bucket(buckets: &mut [Vec<u32>], live: impl Fn(usize) -> Option<usize>) -> Vec<usize> {
    for (count, bucket) in buckets.iter_mut().enumerate() {
        bucket.retain(|&x| live(x as usize) == Some(count));
        if bucket.is_empty() {
            continue;
        }
        let mut out: Vec<usize> = Vec::with_capacity(SEARCH_LINES);
        for &x in bucket.iter() {
            if !out.contains(&(x as usize)) {
                out.push(x as usize);
                if out.len() == SEARCH_LINES {
                    break;
                }
            }
        }
        return out;
    }
    Vec::new()
}
