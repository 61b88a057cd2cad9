use crate::datasets::kde_mode;
use crate::error::{Error, Result};

/// Linear-interpolation quantile of already sorted values, `q ∈ [0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: &[f64]) -> f64 {
    quantile_sorted(&sorted_copy(values), 0.5)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Distribution summary of one split's WAIC values.
#[derive(Debug, Clone, PartialEq)]
pub struct WaicSummary {
    pub split: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Mode of the kernel density estimate; absent below 10 samples.
    pub map: Option<f64>,
    pub q02: f64,
    pub q25: f64,
    pub q75: f64,
    pub q98: f64,
}

impl WaicSummary {
    pub fn new(split: impl Into<String>, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("cannot summarize an empty split".into()));
        }
        let sorted = sorted_copy(values);
        let map = if values.len() >= 10 { Some(kde_mode(values)?) } else { None };
        Ok(Self {
            split: split.into(),
            n: values.len(),
            mean: mean(values),
            median: quantile_sorted(&sorted, 0.5),
            map,
            q02: quantile_sorted(&sorted, 0.02),
            q25: quantile_sorted(&sorted, 0.25),
            q75: quantile_sorted(&sorted, 0.75),
            q98: quantile_sorted(&sorted, 0.98),
        })
    }

    pub const CSV_HEADER: &'static str = "split,n,mean,median,map,q02,q25,q75,q98";

    pub fn csv_row(&self) -> String {
        let map = self.map.map_or("NA".to_string(), |m| format!("{m:.10e}"));
        format!(
            "{},{},{:.10e},{:.10e},{},{:.10e},{:.10e},{:.10e},{:.10e}",
            self.split, self.n, self.mean, self.median, map, self.q02, self.q25, self.q75, self.q98
        )
    }
}

/// Area under the ROC curve for scores where `positive` should rank higher,
/// via the Mann–Whitney statistic with average ranks for ties.
pub fn auroc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::Usage("AUROC needs at least one score per class".into()));
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * all[i..=j].iter().filter(|(_, p)| *p).count() as f64;
        i = j + 1;
    }
    let np = positive.len() as f64;
    let nn = negative.len() as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Indices of the `fraction` highest (`highest = true`) or lowest values;
/// at least one index. Ties are broken by index.
pub fn extreme_indices(values: &[f64], fraction: f64, highest: bool) -> Vec<usize> {
    let k = ((fraction * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let c = values[a].total_cmp(&values[b]);
        let c = if highest { c.reverse() } else { c };
        c.then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Centered rolling mean, window truncated at the series ends.
pub fn rolling_mean(series: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(series.len());
            mean(&series[lo..hi])
        })
        .collect()
}

pub const CHANGEPOINT_WINDOW: usize = 5;

/// `sign(x)·ln(1 + |x|)`: monotone, and compresses the many orders of
/// magnitude WAIC spans far from the training data.
pub fn signed_log(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Single level shift in `series`, evaluated on its [`signed_log`]. The two
/// segments come from the split that minimizes the within-segment squared
/// error; the change is the first frame whose centered 5-frame rolling mean
/// crosses the midpoint of the segment medians towards the second segment.
pub fn detect_changepoint(series: &[f64]) -> Option<usize> {
    let n = series.len();
    if n < 4 {
        return None;
    }
    let series: Vec<f64> = series.iter().map(|&x| signed_log(x)).collect();
    let series = &series[..];
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for (i, v) in series.iter().enumerate() {
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    let sse = |a: usize, b: usize| {
        let len = (b - a) as f64;
        let s = prefix[b] - prefix[a];
        (prefix_sq[b] - prefix_sq[a]) - s * s / len
    };
    let split = (2..=n - 2)
        .min_by(|&a, &b| (sse(0, a) + sse(a, n)).total_cmp(&(sse(0, b) + sse(b, n))))?;
    let before = median(&series[..split]);
    let after = median(&series[split..]);
    if before == after {
        return None;
    }
    let mid = 0.5 * (before + after);
    let direction = (after - before).signum();
    let rolled = rolling_mean(series, CHANGEPOINT_WINDOW);
    (1..n).find(|&i| (rolled[i - 1] - mid) * direction <= 0.0 && (rolled[i] - mid) * direction > 0.0)
}
