//! Reference implementations that share no code with the library.

/// Corpus BLEU by direct n-gram counting with linear scans.
pub fn bleu_oracle(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> f64 {
    let mut matched = vec![0u64; max_n];
    let mut total = vec![0u64; max_n];
    let mut c = 0usize;
    let mut r = 0usize;
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=max_n {
            if h.len() < n {
                continue;
            }
            let grams: Vec<&[String]> = (0..=h.len() - n).map(|i| &h[i..i + n]).collect();
            let mut seen: Vec<&[String]> = Vec::new();
            for g in &grams {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g);
                let in_h = grams.iter().filter(|x| *x == g).count() as u64;
                let in_r = if rf.len() < n {
                    0
                } else {
                    (0..=rf.len() - n).filter(|&i| &rf[i..i + n] == *g).count() as u64
                };
                matched[n - 1] += in_h.min(in_r);
                total[n - 1] += in_h;
            }
        }
    }
    if c == 0 {
        return 0.0;
    }
    let mut logs = Vec::new();
    for n in 0..max_n {
        if total[n] == 0 {
            continue;
        }
        if matched[n] == 0 {
            return 0.0;
        }
        logs.push((matched[n] as f64 / total[n] as f64).ln());
    }
    if logs.is_empty() {
        return 0.0;
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

/// Jaccard by enumerating both token sets into sorted vectors.
pub fn jaccard_oracle(a: &str, b: &str) -> f64 {
    let mut sa: Vec<&str> = a.split_whitespace().collect();
    let mut sb: Vec<&str> = b.split_whitespace().collect();
    sa.sort_unstable();
    sa.dedup();
    sb.sort_unstable();
    sb.dedup();
    let mut union: Vec<&str> = sa.iter().chain(&sb).copied().collect();
    union.sort_unstable();
    union.dedup();
    let common = union.iter().filter(|t| sa.contains(t) && sb.contains(t)).count();
    common as f64 / union.len() as f64
}

/// Textbook two-pass Pearson r.
pub fn pearson_oracle(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1.0);
    let sx = (xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sy = (ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    cov / (sx * sy)
}
