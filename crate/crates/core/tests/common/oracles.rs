//! Slow, direct reference implementations used to check the library.

use indalign::model::TreeNode;

/// Sample covariance over the product of sample standard deviations.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / nf;
    let (mx, my) = (mean(x), mean(y));
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (nf - 1.0);
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    if sx == 0.0 || sy == 0.0 {
        return None;
    }
    Some(cov / (sx * sy))
}

/// Γ(k/2) for a positive integer k, by the recurrence from Γ(1) and Γ(1/2).
fn gamma_half(k: u32) -> f64 {
    let (mut g, mut z) = if k.is_multiple_of(2) {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt(), 0.5)
    };
    while 2.0 * z < k as f64 {
        g *= z;
        z += 1.0;
    }
    g
}

/// Student-t density with integer degrees of freedom.
pub fn t_density(t: f64, df: u32) -> f64 {
    let nu = df as f64;
    gamma_half(df + 1) / ((nu * std::f64::consts::PI).sqrt() * gamma_half(df))
        * (1.0 + t * t / nu).powf(-(nu + 1.0) / 2.0)
}

/// Two-tailed p by composite Simpson integration of the density on [0, |t|].
pub fn t_two_tailed_oracle(t: f64, df: u32) -> f64 {
    let b = t.abs();
    let steps = 20_000;
    let h = b / steps as f64;
    let mut acc = t_density(0.0, df) + t_density(b, df);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * t_density(i as f64 * h, df);
    }
    1.0 - 2.0 * acc * h / 3.0
}

pub fn p_value_oracle(r: f64, n: usize) -> f64 {
    let df = n - 2;
    let t = r * (df as f64).sqrt() / (1.0 - r * r).sqrt();
    t_two_tailed_oracle(t, df as u32)
}

/// SSE as half the mean pairwise squared difference times n.
fn sse_pairwise(ys: &[f64]) -> f64 {
    if ys.is_empty() {
        return 0.0;
    }
    let mut s = 0.0;
    for a in ys {
        for b in ys {
            s += (a - b) * (a - b);
        }
    }
    s / (2.0 * ys.len() as f64)
}

/// Exhaustive CART: every feature, every cut between distinct values.
/// Near-ties (within 1e-12 of the best, scaled by parent SSE) go to the
/// lowest feature index, then the lowest threshold.
pub fn cart_oracle(x: &[Vec<f64>], feature_ids: &[String], y: &[f64], max_depth: usize, min_leaf: usize) -> TreeNode {
    let rows: Vec<usize> = (0..y.len()).collect();
    grow(x, feature_ids, y, &rows, 0, max_depth, min_leaf)
}

fn grow(
    x: &[Vec<f64>],
    ids: &[String],
    y: &[f64],
    rows: &[usize],
    depth: usize,
    max_depth: usize,
    min_leaf: usize,
) -> TreeNode {
    let ys: Vec<f64> = rows.iter().map(|&r| y[r]).collect();
    let leaf = TreeNode::Leaf {
        value: ys.iter().sum::<f64>() / ys.len() as f64,
        sample_count: rows.len(),
    };
    if depth >= max_depth || rows.len() < 2 * min_leaf || ys.iter().all(|v| *v == ys[0]) {
        return leaf;
    }
    let parent = sse_pairwise(&ys);
    let tol = 1e-12 * parent.max(1.0);

    let mut candidates: Vec<(usize, f64, f64)> = Vec::new();
    for (f, _) in ids.iter().enumerate() {
        let mut vals: Vec<f64> = rows.iter().map(|&r| x[r][f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= thr);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let sl: Vec<f64> = l.iter().map(|&i| y[i]).collect();
            let sr: Vec<f64> = r.iter().map(|&i| y[i]).collect();
            candidates.push((f, thr, sse_pairwise(&sl) + sse_pairwise(&sr)));
        }
    }
    let Some(min) = candidates.iter().map(|c| c.2).min_by(f64::total_cmp) else {
        return leaf;
    };
    if min >= parent - tol {
        return leaf;
    }
    let (f, thr, _) = candidates
        .iter()
        .filter(|c| c.2 <= min + tol)
        .min_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)))
        .copied()
        .unwrap();
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[i][f] <= thr);
    TreeNode::Split {
        feature: ids[f].clone(),
        threshold: thr,
        left: Box::new(grow(x, ids, y, &l, depth + 1, max_depth, min_leaf)),
        right: Box::new(grow(x, ids, y, &r, depth + 1, max_depth, min_leaf)),
    }
}

/// Structural equality with a small slack on floating-point fields.
pub fn same_tree(a: &TreeNode, b: &TreeNode) -> Result<(), String> {
    match (a, b) {
        (
            TreeNode::Leaf {
                value: va,
                sample_count: na,
            },
            TreeNode::Leaf {
                value: vb,
                sample_count: nb,
            },
        ) => {
            if na != nb || (va - vb).abs() > 1e-9 {
                return Err(format!("leaf ({va}, n={na}) vs ({vb}, n={nb})"));
            }
            Ok(())
        }
        (
            TreeNode::Split {
                feature: fa,
                threshold: ta,
                left: la,
                right: ra,
            },
            TreeNode::Split {
                feature: fb,
                threshold: tb,
                left: lb,
                right: rb,
            },
        ) => {
            if fa != fb || (ta - tb).abs() > 1e-12 {
                return Err(format!("split {fa} <= {ta} vs {fb} <= {tb}"));
            }
            same_tree(la, lb)?;
            same_tree(ra, rb)
        }
        _ => Err(format!("node kind differs: {a:?} vs {b:?}")),
    }
}
