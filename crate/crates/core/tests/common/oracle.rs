//! Straightforward reference implementations used to cross-check the library.

#![allow(dead_code)]

/// (precision, recall, f1, support) rows: 17 labels, then micro, macro, weighted, samples.
pub type OracleRow = (f64, f64, f64, u64);

fn div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

fn f1(p: f64, r: f64) -> f64 {
    div(2.0 * p * r, p + r)
}

/// `pred[i][g]` / `act[i][g]`: sample i has goal g+1.
pub fn report(pred: &[[bool; 17]], act: &[[bool; 17]], skip_empty: bool) -> Vec<OracleRow> {
    let mut rows = Vec::new();
    let (mut ttp, mut tfp, mut tfn) = (0u64, 0u64, 0u64);
    for g in 0..17 {
        let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
        for i in 0..pred.len() {
            match (pred[i][g], act[i][g]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        ttp += tp;
        tfp += fp;
        tfn += fneg;
        let p = div(tp as f64, (tp + fp) as f64);
        let r = div(tp as f64, (tp + fneg) as f64);
        rows.push((p, r, f1(p, r), tp + fneg));
    }
    let support: u64 = rows.iter().map(|r| r.3).sum();
    let mp = div(ttp as f64, (ttp + tfp) as f64);
    let mr = div(ttp as f64, (ttp + tfn) as f64);
    let micro = (mp, mr, f1(mp, mr), support);
    let mean = |k: fn(&OracleRow) -> f64| rows.iter().map(k).sum::<f64>() / 17.0;
    let macro_avg = (mean(|r| r.0), mean(|r| r.1), mean(|r| r.2), support);
    let wmean = |k: fn(&OracleRow) -> f64| {
        div(
            rows.iter().map(|r| k(r) * r.3 as f64).sum::<f64>(),
            support as f64,
        )
    };
    let weighted = (wmean(|r| r.0), wmean(|r| r.1), wmean(|r| r.2), support);
    let (mut sp, mut sr, mut sf, mut n) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..pred.len() {
        let np = pred[i].iter().filter(|x| **x).count() as f64;
        let na = act[i].iter().filter(|x| **x).count() as f64;
        if skip_empty && np == 0.0 {
            continue;
        }
        let hit = (0..17).filter(|&g| pred[i][g] && act[i][g]).count() as f64;
        let p = div(hit, np);
        let r = div(hit, na);
        sp += p;
        sr += r;
        sf += f1(p, r);
        n += 1.0;
    }
    let samples = (div(sp, n), div(sr, n), div(sf, n), support);
    rows.extend([micro, macro_avg, weighted, samples]);
    rows
}

/// Histogram counts over [-1, 1] by explicit edge comparison.
pub fn histogram(scores: &[f64], width: f64) -> Vec<usize> {
    let mut n = 0usize;
    while -1.0 + (n as f64) * width < 1.0 - 1e-9 {
        n += 1;
    }
    let mut counts = vec![0; n];
    for &s in scores {
        let mut placed = false;
        for (i, count) in counts.iter_mut().enumerate() {
            let lo = -1.0 + i as f64 * width;
            let hi = lo + width;
            if (i == n - 1 && s >= lo - 1e-9 * width)
                || (s >= lo - 1e-9 * width && s < hi - 1e-9 * width)
            {
                *count += 1;
                placed = true;
                break;
            }
        }
        if !placed {
            counts[0] += 1;
        }
    }
    counts
}
