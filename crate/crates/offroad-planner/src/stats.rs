//! Small statistics helpers used by studies and tests.

/// Spearman rank correlation between two equal-length samples.
/// Ties receive the average of their covered ranks.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "samples must align");
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Two-sided exact sign test p-value for paired differences. Zero differences
/// are dropped, as is customary.
pub fn sign_test_p(diffs: &[f64]) -> f64 {
    let positives = diffs.iter().filter(|&&d| d > 0.0).count();
    let n = diffs.iter().filter(|&&d| d != 0.0).count();
    if n == 0 {
        return 1.0;
    }
    let k = positives.min(n - positives);
    // P(X <= k) for X ~ Binomial(n, 1/2), doubled and capped at 1.
    let mut tail = 0.0;
    for i in 0..=k {
        tail += binomial_pmf(n, i);
    }
    (2.0 * tail).min(1.0)
}

fn binomial_pmf(n: usize, k: usize) -> f64 {
    // ln C(n, k) via lgamma-free accumulation; n stays small here.
    let mut ln_c = 0.0;
    for i in 0..k {
        ln_c += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    (ln_c + (n as f64) * 0.5f64.ln()).exp()
}

/// Mean of a sample.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance of a sample.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}
