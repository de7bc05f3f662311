//! Spike detection by robust z-score against a moving median, with flagged
//! samples rebuilt by a natural cubic spline through clean neighbours.

/// Good samples used on each side of a flagged run.
const ANCHORS_PER_SIDE: usize = 4;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Centred moving median. The series is extended by odd reflection at both
/// ends so local trends do not bias the edges.
pub fn moving_median(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let half = (window / 2).min(n - 1);
    let at = |k: isize| -> f64 {
        if k < 0 {
            2.0 * x[0] - x[(-k) as usize]
        } else if k as usize >= n {
            2.0 * x[n - 1] - x[2 * (n - 1) - k as usize]
        } else {
            x[k as usize]
        }
    };
    let mut buf = Vec::with_capacity(2 * half + 1);
    (0..n as isize)
        .map(|i| {
            buf.clear();
            buf.extend((i - half as isize..=i + half as isize).map(at));
            median(&mut buf)
        })
        .collect()
}

/// 1.4826 · median absolute deviation about the median.
pub fn robust_sd(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let mut v = x.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = x.iter().map(|a| (a - m).abs()).collect();
    1.4826 * median(&mut dev)
}

/// Indices whose robust z exceeds `z_thresh`.
pub fn detect_spikes(x: &[f64], z_thresh: f64, window: usize) -> Vec<bool> {
    let med = moving_median(x, window);
    let resid: Vec<f64> = x.iter().zip(&med).map(|(a, b)| a - b).collect();
    let floor = 0.05 * robust_sd(x);
    let scale = robust_sd(&resid).max(floor);
    if scale <= 0.0 {
        return vec![false; x.len()];
    }
    resid.iter().map(|r| (r / scale).abs() > z_thresh).collect()
}

/// Natural cubic spline through (xs, ys), evaluated at `at`. Needs
/// strictly increasing `xs`; one point gives a constant.
pub fn natural_spline(xs: &[f64], ys: &[f64], at: &[f64]) -> Vec<f64> {
    let n = xs.len();
    match n {
        0 => return vec![0.0; at.len()],
        1 => return vec![ys[0]; at.len()],
        _ => {}
    }
    // Second derivatives m_i with m_0 = m_{n-1} = 0 (Thomas algorithm).
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let mut m = vec![0.0; n];
    if n > 2 {
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        for i in 0..k {
            diag[i] = 2.0 * (h[i] + h[i + 1]);
            rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h[i + 1] - (ys[i + 1] - ys[i]) / h[i]);
        }
        for i in 1..k {
            let w = h[i] / diag[i - 1];
            diag[i] -= w * h[i];
            rhs[i] -= w * rhs[i - 1];
        }
        m[k] = rhs[k - 1] / diag[k - 1];
        for i in (0..k - 1).rev() {
            m[i + 1] = (rhs[i] - h[i + 1] * m[i + 2]) / diag[i];
        }
    }
    at.iter()
        .map(|&t| {
            let seg = match xs.iter().position(|&x| x > t) {
                Some(0) => 0,
                Some(j) => j - 1,
                None => n - 2,
            };
            let (x0, x1, hh) = (xs[seg], xs[seg + 1], h[seg]);
            let (a, b) = ((x1 - t) / hh, (t - x0) / hh);
            a * ys[seg]
                + b * ys[seg + 1]
                + ((a * a * a - a) * m[seg] + (b * b * b - b) * m[seg + 1]) * hh * hh / 6.0
        })
        .collect()
}

/// Replaces flagged samples in place; returns how many were replaced.
pub fn repair(x: &mut [f64], flags: &[bool]) -> usize {
    let n = x.len();
    let mut count = 0;
    let mut i = 0;
    while i < n {
        if !flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && flags[i] {
            i += 1;
        }
        let end = i;
        let left: Vec<usize> = (0..start).rev().filter(|&j| !flags[j]).take(ANCHORS_PER_SIDE).collect();
        let right: Vec<usize> = (end..n).filter(|&j| !flags[j]).take(ANCHORS_PER_SIDE).collect();
        let mut anchors: Vec<usize> = left.into_iter().rev().chain(right).collect();
        anchors.dedup();
        if anchors.is_empty() {
            return 0;
        }
        let xs: Vec<f64> = anchors.iter().map(|&j| j as f64).collect();
        let ys: Vec<f64> = anchors.iter().map(|&j| x[j]).collect();
        let at: Vec<f64> = (start..end).map(|j| j as f64).collect();
        for (j, v) in (start..end).zip(natural_spline(&xs, &ys, &at)) {
            x[j] = v;
        }
        count += end - start;
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_reproduces_lines_and_knots() {
        let xs = [0.0, 1.0, 3.0, 4.0];
        let ys = [1.0, 3.0, 7.0, 9.0];
        for (t, v) in [0.5, 2.0, 3.5].iter().zip(natural_spline(&xs, &ys, &[0.5, 2.0, 3.5])) {
            assert!((v - (1.0 + 2.0 * t)).abs() < 1e-12);
        }
        let ys2 = [0.0, 2.0, -1.0, 5.0];
        let at_knots = natural_spline(&xs, &ys2, &xs);
        for (a, b) in at_knots.iter().zip(&ys2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn moving_median_ignores_isolated_outlier() {
        let mut x = vec![1.0; 11];
        x[5] = 100.0;
        assert!(moving_median(&x, 5).iter().all(|v| *v == 1.0));
    }

    #[test]
    fn flags_and_repairs_one_spike() {
        let mut x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).sin() * 0.1).collect();
        let clean = x.clone();
        x[80] += 5.0;
        let flags = detect_spikes(&x, 5.0, 31);
        assert_eq!(flags.iter().filter(|f| **f).count(), 1);
        assert!(flags[80]);
        assert_eq!(repair(&mut x, &flags), 1);
        assert!((x[80] - clean[80]).abs() < 0.05);
    }
}
