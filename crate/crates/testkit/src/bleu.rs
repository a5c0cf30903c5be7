//! Brute-force BLEU.
//!
//! Conventions shared with the production scorer:
//! - clipped counts use the maximum count over all references;
//! - the reference length is the one closest to the hypothesis length,
//!   shorter wins ties;
//! - an order with no hypothesis n-grams (hypothesis shorter than n) has
//!   precision 1.0 and still counts in the `1/max_order` average;
//! - an order with n-grams but no matches has precision 0, or
//!   `epsilon / total` under floor smoothing;
//! - an empty hypothesis scores 0 with brevity penalty 0 (1 if the
//!   reference is empty too).

/// `None` disables smoothing, `Some(eps)` is floor smoothing.
pub type Floor = Option<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleScore {
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn same(a: &[String], b: &[String]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    for i in 0..a.len() {
        if a[i] != b[i] {
            return false;
        }
    }
    true
}

fn occurrences(gram: &[String], tokens: &[String]) -> usize {
    let n = gram.len();
    if tokens.len() < n {
        return 0;
    }
    let mut c = 0;
    for i in 0..=tokens.len() - n {
        if same(gram, &tokens[i..i + n]) {
            c += 1;
        }
    }
    c
}

/// (clipped matches, total hypothesis n-grams) for order `n`.
pub fn clipped_counts(hyp: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    if hyp.len() < n {
        return (0, 0);
    }
    let total = hyp.len() - n + 1;
    let mut matches = 0;
    for i in 0..total {
        let gram = &hyp[i..i + n];
        let mut seen_before = false;
        for j in 0..i {
            if same(gram, &hyp[j..j + n]) {
                seen_before = true;
            }
        }
        if seen_before {
            continue;
        }
        let in_hyp = occurrences(gram, hyp);
        let mut best_ref = 0;
        for r in refs {
            let c = occurrences(gram, r);
            if c > best_ref {
                best_ref = c;
            }
        }
        matches += if in_hyp < best_ref { in_hyp } else { best_ref };
    }
    (matches, total)
}

pub fn closest_ref_len(hyp_len: usize, refs: &[Vec<String>]) -> usize {
    let mut best = refs[0].len();
    for r in refs {
        let d = (r.len() as i64 - hyp_len as i64).abs();
        let bd = (best as i64 - hyp_len as i64).abs();
        if d < bd || (d == bd && r.len() < best) {
            best = r.len();
        }
    }
    best
}

fn combine(
    matches: &[usize],
    totals: &[usize],
    hyp_len: usize,
    ref_len: usize,
    floor: Floor,
) -> OracleScore {
    let max_order = matches.len();
    if hyp_len == 0 {
        return OracleScore {
            score: 0.0,
            precisions: vec![0.0; max_order],
            brevity_penalty: if ref_len == 0 { 1.0 } else { 0.0 },
            hyp_len,
            ref_len,
        };
    }
    let mut precisions = Vec::new();
    for k in 0..max_order {
        let p = if totals[k] == 0 {
            1.0
        } else if matches[k] == 0 {
            match floor {
                None => 0.0,
                Some(eps) => eps / totals[k] as f64,
            }
        } else {
            matches[k] as f64 / totals[k] as f64
        };
        precisions.push(p);
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let mut any_zero = false;
    let mut log_sum = 0.0;
    for p in &precisions {
        if *p == 0.0 {
            any_zero = true;
        } else {
            log_sum += p.ln();
        }
    }
    let score = if any_zero {
        0.0
    } else {
        bp * (log_sum / max_order as f64).exp()
    };
    OracleScore { score, precisions, brevity_penalty: bp, hyp_len, ref_len }
}

pub fn sentence(hyp: &[String], refs: &[Vec<String>], max_order: usize, floor: Floor) -> OracleScore {
    let mut matches = Vec::new();
    let mut totals = Vec::new();
    for n in 1..=max_order {
        let (m, t) = clipped_counts(hyp, refs, n);
        matches.push(m);
        totals.push(t);
    }
    combine(&matches, &totals, hyp.len(), closest_ref_len(hyp.len(), refs), floor)
}

pub fn corpus(pairs: &[(Vec<String>, Vec<Vec<String>>)], max_order: usize, floor: Floor) -> OracleScore {
    let mut matches = vec![0; max_order];
    let mut totals = vec![0; max_order];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (hyp, refs) in pairs {
        for n in 1..=max_order {
            let (m, t) = clipped_counts(hyp, refs, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
        hyp_len += hyp.len();
        ref_len += closest_ref_len(hyp.len(), refs);
    }
    combine(&matches, &totals, hyp_len, ref_len, floor)
}
