//! Independent reference solvers. None of these call into the routines they
//! are used to check.

/// Simplex projection by bisection on the threshold `tau` solving
/// `sum(max(v - tau, 0)) = 1`.
pub fn simplex_bisect(v: &[f64]) -> Vec<f64> {
    let mass = |tau: f64| v.iter().map(|x| (x - tau).max(0.0)).sum::<f64>();
    let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau = 0.5 * (lo + hi);
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Michelot's active-set iteration (no sorting).
pub fn simplex_michelot(v: &[f64]) -> Vec<f64> {
    let mut active = vec![true; v.len()];
    loop {
        let (s, c) = v
            .iter()
            .zip(&active)
            .filter(|(_, &a)| a)
            .fold((0.0, 0usize), |(s, c), (x, _)| (s + x, c + 1));
        let tau = (s - 1.0) / c as f64;
        let mut changed = false;
        for (x, a) in v.iter().zip(active.iter_mut()) {
            if *a && x - tau <= 0.0 {
                *a = false;
                changed = true;
            }
        }
        if !changed {
            return v
                .iter()
                .zip(&active)
                .map(|(x, &a)| if a { x - tau } else { 0.0 })
                .collect();
        }
    }
}

/// Quadratic-penalty (augmented Lagrangian) solution of
/// `min 0.5||a - v||^2  s.t.  a >= 0, sum(a) = 1`, inner problem by exact
/// coordinate descent.
pub fn simplex_penalty(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mu = 1.0;
    let mut nu = 0.0;
    let mut a = vec![1.0 / n as f64; n];
    for _ in 0..5000 {
        for _ in 0..200 {
            let mut moved = 0.0f64;
            let mut total: f64 = a.iter().sum();
            for i in 0..n {
                let rest = total - a[i];
                let ai = ((v[i] - nu - mu * (rest - 1.0)) / (1.0 + mu)).max(0.0);
                moved = moved.max((ai - a[i]).abs());
                total = rest + ai;
                a[i] = ai;
            }
            if moved < 1e-15 {
                break;
            }
        }
        let viol = a.iter().sum::<f64>() - 1.0;
        nu += mu * viol;
        if viol.abs() < 1e-14 {
            break;
        }
    }
    a
}

fn diff(y: &[f64]) -> Vec<f64> {
    y.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `D^T u` for the forward-difference operator `D`.
fn diff_t(u: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            let left = if j > 0 { u[j - 1] } else { 0.0 };
            let right = if j + 1 < n { u[j] } else { 0.0 };
            left - right
        })
        .collect()
}

fn tv(y: &[f64]) -> f64 {
    diff(y).iter().map(|d| d.abs()).sum()
}

/// TV prox by projected gradient on the box-constrained dual
/// `min_{|u| <= lambda} 0.5 ||s - D^T u||^2`, `y = s - D^T u`.
pub fn tv_prox_dual(s: &[f64], lambda: f64) -> Vec<f64> {
    let n = s.len();
    if n == 1 {
        return s.to_vec();
    }
    let mut u = vec![0.0; n - 1];
    let mut y = s.to_vec();
    for _ in 0..1_000_000 {
        let d = diff(&y);
        let mut moved = 0.0f64;
        for (ui, di) in u.iter_mut().zip(&d) {
            let nu = (*ui + 0.25 * di).clamp(-lambda, lambda);
            moved = moved.max((nu - *ui).abs());
            *ui = nu;
        }
        let dtu = diff_t(&u, n);
        y = s.iter().zip(&dtu).map(|(a, b)| a - b).collect();
        if moved < 1e-15 {
            break;
        }
    }
    y
}

/// Objective of the TV prox, for grid checks.
pub fn tv_objective(y: &[f64], s: &[f64], lambda: f64) -> f64 {
    0.5 * y.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + lambda * tv(y)
}

/// Brute-force solution of `argmax_{a in simplex} a.s - gamma * (0.5||a||^2 + lambda * TV(a))`
/// by accelerated projected gradient on the dual of the fused-lasso term,
/// stopped on a certified duality gap.
pub fn fusedmax_dual(s: &[f64], gamma: f64, lambda: f64, max_iter: usize) -> Vec<f64> {
    let n = s.len();
    let z: Vec<f64> = s.iter().map(|v| v / gamma).collect();
    if n == 1 {
        return vec![1.0];
    }
    let primal = |a: &[f64]| {
        0.5 * a.iter().zip(&z).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() + lambda * tv(a)
    };
    let inner = |u: &[f64]| {
        let dtu = diff_t(u, n);
        let w: Vec<f64> = z.iter().zip(&dtu).map(|(a, b)| a - b).collect();
        let a = simplex_michelot(&w);
        let val = 0.5 * a.iter().zip(&z).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
            + u.iter().zip(diff(&a)).map(|(p, q)| p * q).sum::<f64>();
        (a, val)
    };
    let mut u = vec![0.0; n - 1];
    let mut w = u.clone();
    let mut t = 1.0f64;
    let mut best_a = inner(&u).0;
    let mut prev_dual = f64::NEG_INFINITY;
    for _ in 0..max_iter {
        let (a_w, _) = inner(&w);
        let d = diff(&a_w);
        let next: Vec<f64> = w
            .iter()
            .zip(&d)
            .map(|(wi, di)| (wi + 0.25 * di).clamp(-lambda, lambda))
            .collect();
        let (a, dual) = inner(&next);
        let gap = primal(&a) - dual;
        best_a = a;
        if gap < 1e-13 {
            break;
        }
        // restart momentum when the dual stops increasing
        let t_next = if dual < prev_dual { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        let beta = if dual < prev_dual { 0.0 } else { (t - 1.0) / t_next };
        w = next.iter().zip(&u).map(|(x, y)| x + beta * (x - y)).collect();
        u = next;
        t = t_next;
        prev_dual = dual;
    }
    best_a
}

/// Longest common contiguous run of set positions, by checking every window.
pub fn lcs_brute(pred: &[bool], gold: &[bool]) -> usize {
    let n = pred.len();
    let mut best = 0;
    for i in 0..n {
        for j in i..n {
            if (i..=j).all(|k| pred[k] && gold[k]) {
                best = best.max(j - i + 1);
            }
        }
    }
    best
}

/// Square confusion matrix, rows gold and columns predicted.
pub fn confusion(preds: &[usize], golds: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; k]; k];
    for (&p, &g) in preds.iter().zip(golds) {
        m[g][p] += 1;
    }
    m
}

fn f1_pr(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Macro F1 read off a confusion matrix; classes absent from both margins are
/// left out of the average.
pub fn macro_f1_from_confusion(m: &[Vec<usize>]) -> f64 {
    let k = m.len();
    let mut scores = Vec::new();
    for (c, row_counts) in m.iter().enumerate() {
        let row: usize = row_counts.iter().sum();
        let col: usize = (0..k).map(|r| m[r][c]).sum();
        if row == 0 && col == 0 {
            continue;
        }
        let tp = m[c][c] as f64;
        let p = if col == 0 { 0.0 } else { tp / col as f64 };
        let r = if row == 0 { 0.0 } else { tp / row as f64 };
        scores.push(f1_pr(p, r));
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Positive-class F1 over pooled tokens via a 2x2 confusion matrix.
pub fn token_f1_confusion(pairs: &[(Vec<bool>, Vec<bool>)]) -> f64 {
    let (p, g): (Vec<usize>, Vec<usize>) = pairs
        .iter()
        .flat_map(|(p, g)| p.iter().zip(g).map(|(&a, &b)| (a as usize, b as usize)))
        .unzip();
    let m = confusion(&p, &g, 2);
    let tp = m[1][1] as f64;
    let pred_pos = (m[0][1] + m[1][1]) as f64;
    let gold_pos = (m[1][0] + m[1][1]) as f64;
    let precision = if pred_pos == 0.0 { 0.0 } else { tp / pred_pos };
    let recall = if gold_pos == 0.0 { 0.0 } else { tp / gold_pos };
    f1_pr(precision, recall)
}

/// Mean per-pair LCS F1 over pairs with a non-empty gold mask.
pub fn lcsf1_mean(pairs: &[(Vec<bool>, Vec<bool>)]) -> Option<f64> {
    let scores: Vec<f64> = pairs
        .iter()
        .filter(|(_, g)| g.iter().any(|&x| x))
        .map(|(p, g)| {
            let lcs = lcs_brute(p, g) as f64;
            let np = p.iter().filter(|&&x| x).count() as f64;
            let ng = g.iter().filter(|&&x| x).count() as f64;
            f1_pr(if np == 0.0 { 0.0 } else { lcs / np }, lcs / ng)
        })
        .collect();
    (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Simplex projection straight from the sort-threshold definition:
/// `rho = max{j : u_j - (sum_{i<=j} u_i - 1) / j > 0}` on `u` sorted
/// descending, `tau = (sum_{i<=rho} u_i - 1) / rho`.
pub fn simplex_sort_threshold(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut prefix = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        prefix += uj;
        let t = (prefix - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}
