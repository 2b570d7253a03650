//! Streaming characterization of MAC-layer activity.
//!
//! A [`RunningStats`] keeps the recursive mean and (population) variance of
//! one activity component. The [`AbnormalityMonitor`] wraps it with a normal
//! range and turns out-of-range samples into attack signatures. Signatures are
//! compared with the two-sample Kolmogorov-Smirnov statistic, and the χ² test
//! on a 2×2 contingency table scores how strongly a component depends on the
//! presence of attack traffic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample {0} is not finite")]
    NonFinite(f64),
    #[error("sample {0} is negative")]
    Negative(f64),
    #[error("normal range needs at least 2 samples, have {0}")]
    InsufficientHistory(u64),
    #[error("confidence {0} must lie in (0, 1)")]
    InvalidConfidence(f64),
    #[error("empty series")]
    EmptySeries,
    #[error("contingency table has a zero expected count")]
    DegenerateTable,
    #[error("increase rate undefined for baseline {0}")]
    UndefinedRate(f64),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Recursive sample count, mean and variance.
///
/// The variance uses the 1/n (population) normalization, so it matches the
/// batch form `Σ(x - x̄)² / n`. With no samples both moments are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    var: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.var
    }

    pub fn std_dev(&self) -> f64 {
        self.var.sqrt()
    }

    /// Folds one sample in with gain `K = 1/(n+1)`: the mean moves by
    /// `K(x - x̄)`, the provisional variance `s'² = s² + K(x - x̄)²` is then
    /// scaled by `(1 - K)`.
    pub fn update(&mut self, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(StatsError::NonFinite(x));
        }
        if x < 0.0 {
            return Err(StatsError::Negative(x));
        }
        let gain = 1.0 / (self.n as f64 + 1.0);
        let delta = x - self.mean;
        let provisional = self.var + gain * delta * delta;
        self.mean += gain * delta;
        self.var = ((1.0 - gain) * provisional).max(0.0);
        self.n += 1;
        Ok(())
    }

    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        let mut stats = Self::new();
        for &x in samples {
            stats.update(x)?;
        }
        Ok(stats)
    }
}

/// Value-returning form of [`RunningStats::update`].
pub fn update_stats(stats: RunningStats, x: f64) -> Result<RunningStats> {
    let mut next = stats;
    next.update(x)?;
    Ok(next)
}

/// Inverse of the standard normal CDF.
///
/// Rational approximation after P. J. Acklam (relative error below 1.2e-9
/// over the open unit interval).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Two-sided critical value `z_{α/2}` for a confidence level `1 - α`.
pub fn two_sided_z(confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(StatsError::InvalidConfidence(confidence));
    }
    let alpha = 1.0 - confidence;
    Ok(normal_quantile(1.0 - alpha / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalRange {
    pub lower: f64,
    pub upper: f64,
    pub confidence: f64,
    pub z: f64,
}

impl NormalRange {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Widens the interval symmetrically about its centre so that the
    /// half-width is at least `half_width`.
    pub fn widened_to(&self, half_width: f64) -> NormalRange {
        let centre = 0.5 * (self.lower + self.upper);
        let half = (0.5 * self.width()).max(half_width);
        NormalRange {
            lower: centre - half,
            upper: centre + half,
            ..*self
        }
    }
}

/// Confidence interval `x̄ ± z_{α/2}·s/√n` around the running mean.
pub fn normal_range(stats: &RunningStats, confidence: f64) -> Result<NormalRange> {
    if stats.n < 2 {
        return Err(StatsError::InsufficientHistory(stats.n));
    }
    let z = two_sided_z(confidence)?;
    let half = z * stats.std_dev() / (stats.n as f64).sqrt();
    Ok(NormalRange {
        lower: stats.mean - half,
        upper: stats.mean + half,
        confidence,
        z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Normal,
    Abnormal,
}

pub fn detect_abnormality(range: &NormalRange, x: f64) -> Verdict {
    if range.contains(x) {
        Verdict::Normal
    } else {
        Verdict::Abnormal
    }
}

/// MAC activity components sampled once per monitoring slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    FrameCount,
    BusyTime,
    CollisionCount,
}

impl Component {
    pub const ALL: [Component; 3] = [
        Component::FrameCount,
        Component::BusyTime,
        Component::CollisionCount,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Component::FrameCount => "frame_count",
            Component::BusyTime => "busy_time",
            Component::CollisionCount => "collision_count",
        }
    }
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "frame_count" => Ok(Component::FrameCount),
            "busy_time" => Ok(Component::BusyTime),
            "collision_count" => Ok(Component::CollisionCount),
            other => Err(format!("unknown activity component `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivitySample {
    pub slot: u32,
    pub component: Component,
    pub value: f64,
}

/// A run of consecutive abnormal samples, with the normal mean that was in
/// force when the run opened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub slots: Vec<u32>,
    pub values: Vec<f64>,
    pub baseline: f64,
}

impl Episode {
    pub fn t_s(&self) -> u32 {
        self.slots[0]
    }

    pub fn t_l(&self) -> u32 {
        *self.slots.last().expect("episodes are never empty")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Samples minus the baseline mean.
    pub fn excess(&self) -> Vec<f64> {
        self.values.iter().map(|v| v - self.baseline).collect()
    }

    /// Number of samples whose slot lies in `[from, to]`.
    pub fn samples_within(&self, from: u32, to: u32) -> usize {
        self.slots.iter().filter(|&&s| s >= from && s <= to).count()
    }

    /// Restriction to the samples whose slot lies in `[from, to]`.
    pub fn window(&self, from: u32, to: u32) -> Option<Episode> {
        let (slots, values): (Vec<u32>, Vec<f64>) = self
            .slots
            .iter()
            .zip(&self.values)
            .filter(|(&s, _)| s >= from && s <= to)
            .map(|(&s, &v)| (s, v))
            .unzip();
        if slots.is_empty() {
            None
        } else {
            Some(Episode {
                slots,
                values,
                baseline: self.baseline,
            })
        }
    }
}

/// Coarse attack signature: abnormal samples of one activity component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseSignature {
    pub component: Component,
    pub episode: Episode,
}

impl CoarseSignature {
    pub fn values(&self) -> &[f64] {
        &self.episode.values
    }

    pub fn t_s(&self) -> u32 {
        self.episode.t_s()
    }

    pub fn t_l(&self) -> u32 {
        self.episode.t_l()
    }
}

/// Minimum half-width of the band used to flag abnormality. See
/// [`DetectorConfig::tolerance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub absolute: f64,
    pub relative: f64,
    pub sigmas: f64,
}

impl Tolerance {
    pub const NONE: Tolerance = Tolerance {
        absolute: 0.0,
        relative: 0.0,
        sigmas: 0.0,
    };

    fn half_width(&self, stats: &RunningStats) -> f64 {
        self.absolute
            .max(self.relative * stats.mean().abs())
            .max(self.sigmas * stats.std_dev())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub confidence: f64,
    /// Detection stays off until this many normal samples have been seen.
    pub cold_start: u64,
    /// Consecutive normal slots that close an open signature.
    pub closure_slots: u32,
    /// Sample count at which the recursive statistics restart.
    pub max_samples: u64,
    /// The band `x̄ ± z·s/√n` collapses onto the mean as `n` grows, so every
    /// ordinary fluctuation of a per-slot count would fall outside it. The
    /// detector widens it to at least this half-width. [`Tolerance::NONE`]
    /// keeps the bare confidence interval.
    pub tolerance: Tolerance,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            confidence: 0.95,
            cold_start: 30,
            closure_slots: 3,
            max_samples: 8640,
            tolerance: Tolerance::NONE,
        }
    }
}

/// Per-series streaming detector: keeps the normal statistics and cuts
/// abnormal samples into episodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbnormalityMonitor {
    config: DetectorConfig,
    stats: RunningStats,
    /// Range carried across a statistics restart until the fresh history
    /// passes the cold start again.
    carried_range: Option<NormalRange>,
    open: Option<Episode>,
    normal_streak: u32,
    closed: Vec<Episode>,
}

impl AbnormalityMonitor {
    pub fn new(config: DetectorConfig) -> Self {
        Self {
            config,
            stats: RunningStats::new(),
            carried_range: None,
            open: None,
            normal_streak: 0,
            closed: Vec::new(),
        }
    }

    pub fn stats(&self) -> &RunningStats {
        &self.stats
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Band currently used for the normal/abnormal decision, or `None`
    /// during the cold start.
    pub fn active_range(&self) -> Option<NormalRange> {
        if self.stats.n() >= self.config.cold_start.max(2) {
            let range = normal_range(&self.stats, self.config.confidence).ok()?;
            Some(range.widened_to(self.config.tolerance.half_width(&self.stats)))
        } else {
            self.carried_range
        }
    }

    pub fn observe(&mut self, slot: u32, x: f64) -> Result<Verdict> {
        if !x.is_finite() {
            return Err(StatsError::NonFinite(x));
        }
        if x < 0.0 {
            return Err(StatsError::Negative(x));
        }
        let verdict = match self.active_range() {
            Some(range) => detect_abnormality(&range, x),
            None => Verdict::Normal,
        };
        match verdict {
            Verdict::Abnormal => {
                self.normal_streak = 0;
                let baseline = self.stats.mean();
                let open = self.open.get_or_insert_with(|| Episode {
                    slots: Vec::new(),
                    values: Vec::new(),
                    baseline,
                });
                open.slots.push(slot);
                open.values.push(x);
            }
            Verdict::Normal => {
                if self.stats.n() >= self.config.max_samples {
                    self.carried_range = self.active_range();
                    self.stats = RunningStats::new();
                }
                self.stats.update(x)?;
                if self.open.is_some() {
                    self.normal_streak += 1;
                    if self.normal_streak >= self.config.closure_slots {
                        self.close();
                    }
                }
            }
        }
        Ok(verdict)
    }

    fn close(&mut self) {
        if let Some(ep) = self.open.take() {
            self.closed.push(ep);
        }
        self.normal_streak = 0;
    }

    pub fn open_episode(&self) -> Option<&Episode> {
        self.open.as_ref()
    }

    pub fn closed_episodes(&self) -> &[Episode] {
        &self.closed
    }

    /// Closed episodes followed by the open one, in time order.
    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.closed.iter().chain(self.open.iter())
    }

    pub fn into_episodes(mut self) -> Vec<Episode> {
        self.close();
        self.closed
    }
}

/// Runs a fresh monitor over a whole series sampled at slots `0..len`.
pub fn scan_series(config: DetectorConfig, series: &[f64]) -> Result<Vec<Episode>> {
    let mut monitor = AbnormalityMonitor::new(config);
    for (slot, &x) in series.iter().enumerate() {
        monitor.observe(slot as u32, x)?;
    }
    Ok(monitor.into_episodes())
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Two-sample Kolmogorov-Smirnov distance `sup_x |F_n(x) - F_0(x)|`.
pub fn ks_statistic(reference: &[f64], candidate: &[f64]) -> Result<f64> {
    if reference.is_empty() || candidate.is_empty() {
        return Err(StatsError::EmptySeries);
    }
    if let Some(&bad) = reference.iter().chain(candidate).find(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(bad));
    }
    let a = sorted(reference);
    let b = sorted(candidate);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    // Once one sample is exhausted its CDF is 1; the gap is largest right
    // after that point, which the loop has already evaluated.
    Ok(d)
}

/// Asymptotic two-sample coefficient `c(α) = sqrt(-ln(α/2) / 2)`.
pub fn ks_coefficient(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

pub fn ks_critical_value(n_ref: usize, n_cand: usize, alpha: f64) -> f64 {
    let (n, m) = (n_ref as f64, n_cand as f64);
    ks_coefficient(alpha) * ((n + m) / (n * m)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KsOutcome {
    Accept,
    Reject,
}

impl KsOutcome {
    pub fn accepted(self) -> bool {
        self == KsOutcome::Accept
    }
}

pub fn ks_test(d: f64, n_ref: usize, n_cand: usize, alpha: f64) -> KsOutcome {
    if d > ks_critical_value(n_ref.max(1), n_cand.max(1), alpha) {
        KsOutcome::Reject
    } else {
        KsOutcome::Accept
    }
}

/// 2×2 table: rows normal/abnormal, columns non-attack/attack region.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub n11: u64,
    pub n12: u64,
    pub n21: u64,
    pub n22: u64,
}

impl ContingencyTable {
    pub fn new(n11: u64, n12: u64, n21: u64, n22: u64) -> Self {
        Self { n11, n12, n21, n22 }
    }

    pub fn total(&self) -> u64 {
        self.n11 + self.n12 + self.n21 + self.n22
    }

    fn cells(&self) -> [[u64; 2]; 2] {
        [[self.n11, self.n12], [self.n21, self.n22]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareOutcome {
    pub statistic: f64,
    pub critical: f64,
    pub dependent: bool,
}

/// Critical value of χ² with one degree of freedom: the square of the
/// two-sided normal quantile.
pub fn chi_square_critical_df1(alpha: f64) -> f64 {
    let z = normal_quantile(1.0 - alpha / 2.0);
    z * z
}

pub fn chi_square_dependency(table: &ContingencyTable, alpha: f64) -> Result<ChiSquareOutcome> {
    let cells = table.cells();
    let total = table.total() as f64;
    let rows = [
        (cells[0][0] + cells[0][1]) as f64,
        (cells[1][0] + cells[1][1]) as f64,
    ];
    let cols = [
        (cells[0][0] + cells[1][0]) as f64,
        (cells[0][1] + cells[1][1]) as f64,
    ];
    let mut statistic = 0.0;
    for (i, row) in cells.iter().enumerate() {
        for (j, &observed) in row.iter().enumerate() {
            let expected = rows[i] * cols[j] / total;
            if !(expected > 0.0) {
                return Err(StatsError::DegenerateTable);
            }
            let diff = observed as f64 - expected;
            statistic += diff * diff / expected;
        }
    }
    let critical = chi_square_critical_df1(alpha);
    Ok(ChiSquareOutcome {
        statistic,
        critical,
        dependent: statistic > critical,
    })
}

/// Ratio of an activity level under attack to the same level without it.
pub fn increase_rate(attack_value: f64, baseline_value: f64) -> Result<f64> {
    if !(baseline_value > 0.0) {
        return Err(StatsError::UndefinedRate(baseline_value));
    }
    Ok(attack_value / baseline_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn batch(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn constant_series_has_zero_variance() {
        let s = RunningStats::from_samples(&[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(s.mean(), 5.0);
        assert_eq!(s.variance(), 0.0);
    }

    #[test]
    fn second_sample_matches_batch() {
        let s = update_stats(RunningStats::from_samples(&[2.0]).unwrap(), 4.0).unwrap();
        assert_eq!(s.n(), 2);
        assert!((s.mean() - 3.0).abs() < 1e-12);
        assert!((s.variance() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_samples() {
        let mut s = RunningStats::new();
        assert!(matches!(s.update(f64::NAN), Err(StatsError::NonFinite(_))));
        assert!(matches!(
            s.update(f64::INFINITY),
            Err(StatsError::NonFinite(_))
        ));
        assert!(matches!(s.update(-1.0), Err(StatsError::Negative(_))));
        assert_eq!(s.n(), 0);
    }

    #[test]
    fn normal_range_examples() {
        let flat = RunningStats {
            n: 100,
            mean: 10.0,
            var: 0.0,
        };
        let r = normal_range(&flat, 0.95).unwrap();
        assert_eq!((r.lower, r.upper), (10.0, 10.0));

        let unit = RunningStats {
            n: 100,
            mean: 0.0,
            var: 1.0,
        };
        let r = normal_range(&unit, 0.95).unwrap();
        assert!((r.upper - 0.195_996).abs() < 1e-5);
        assert!((r.lower + 0.195_996).abs() < 1e-5);

        let z = two_sided_z(0.975).unwrap();
        assert!((z - 2.2414).abs() < 1e-4);
    }

    #[test]
    fn normal_range_needs_history() {
        let s = RunningStats::from_samples(&[1.0]).unwrap();
        assert_eq!(
            normal_range(&s, 0.95).unwrap_err(),
            StatsError::InsufficientHistory(1)
        );
        let s = RunningStats::from_samples(&[1.0, 2.0]).unwrap();
        assert!(matches!(
            normal_range(&s, 1.0),
            Err(StatsError::InvalidConfidence(_))
        ));
    }

    #[test]
    fn detect_examples() {
        let range = NormalRange {
            lower: 8.0,
            upper: 12.0,
            confidence: 0.95,
            z: 1.96,
        };
        assert_eq!(detect_abnormality(&range, 10.0), Verdict::Normal);
        assert_eq!(detect_abnormality(&range, 25.0), Verdict::Abnormal);
        assert_eq!(detect_abnormality(&range, 8.0), Verdict::Normal);
    }

    fn warm_monitor() -> AbnormalityMonitor {
        let mut m = AbnormalityMonitor::new(DetectorConfig {
            cold_start: 4,
            closure_slots: 1,
            ..DetectorConfig::default()
        });
        for (slot, x) in [9.0, 11.0, 9.0, 11.0].into_iter().enumerate() {
            assert_eq!(m.observe(slot as u32, x).unwrap(), Verdict::Normal);
        }
        m
    }

    #[test]
    fn one_signature_from_a_burst() {
        let mut m = warm_monitor();
        let stats_before = *m.stats();
        // mean 10, s 1, n 4: range 10 ± 0.98
        assert_eq!(m.observe(4, 10.0).unwrap(), Verdict::Normal);
        for slot in 5..10 {
            assert_eq!(m.observe(slot, 40.0).unwrap(), Verdict::Abnormal);
        }
        assert_eq!(m.observe(10, 10.0).unwrap(), Verdict::Normal);
        let eps: Vec<_> = m.episodes().cloned().collect();
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].len(), 5);
        assert_eq!((eps[0].t_s(), eps[0].t_l()), (5, 9));
        assert!((eps[0].baseline - 10.0).abs() < 1e-12);
        // only the two normal samples reached the statistics
        assert_eq!(m.stats().n(), stats_before.n() + 2);
    }

    #[test]
    fn closure_waits_for_consecutive_normals() {
        let mut m = AbnormalityMonitor::new(DetectorConfig {
            cold_start: 3,
            closure_slots: 3,
            ..DetectorConfig::default()
        });
        for slot in 0..3 {
            m.observe(slot, 0.0).unwrap();
        }
        m.observe(3, 5.0).unwrap();
        m.observe(4, 0.0).unwrap();
        m.observe(5, 0.0).unwrap();
        m.observe(6, 5.0).unwrap();
        assert!(m.closed_episodes().is_empty());
        assert_eq!(m.open_episode().unwrap().slots, vec![3, 6]);
        for slot in 7..10 {
            m.observe(slot, 0.0).unwrap();
        }
        assert_eq!(m.closed_episodes().len(), 1);
        assert!(m.open_episode().is_none());
    }

    #[test]
    fn cold_start_never_flags() {
        let mut m = AbnormalityMonitor::new(DetectorConfig::default());
        for slot in 0..29 {
            let x = if slot % 2 == 0 { 0.0 } else { 1000.0 };
            assert_eq!(m.observe(slot, x).unwrap(), Verdict::Normal);
        }
        assert!(m.active_range().is_none());
    }

    #[test]
    fn tolerance_widens_band() {
        let mut m = AbnormalityMonitor::new(DetectorConfig {
            cold_start: 3,
            tolerance: Tolerance {
                absolute: 2.0,
                relative: 0.0,
                sigmas: 0.0,
            },
            ..DetectorConfig::default()
        });
        for slot in 0..3 {
            m.observe(slot, 7.0).unwrap();
        }
        assert_eq!(m.observe(3, 8.0).unwrap(), Verdict::Normal);
        assert_eq!(m.observe(4, 9.5).unwrap(), Verdict::Abnormal);
    }

    #[test]
    fn statistics_restart_at_wrap() {
        let mut m = AbnormalityMonitor::new(DetectorConfig {
            cold_start: 3,
            max_samples: 5,
            ..DetectorConfig::default()
        });
        for slot in 0..5 {
            m.observe(slot, 2.0).unwrap();
        }
        assert_eq!(m.stats().n(), 5);
        m.observe(5, 2.0).unwrap();
        assert_eq!(m.stats().n(), 1);
        // the old range keeps detection alive through the restart
        assert_eq!(m.observe(6, 50.0).unwrap(), Verdict::Abnormal);
    }

    #[test]
    fn ks_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[5.0, 6.0, 7.0]).unwrap(), 1.0);
        let d = ks_statistic(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(ks_statistic(&[], &a).unwrap_err(), StatsError::EmptySeries);
    }

    #[test]
    fn ks_test_examples() {
        assert!(ks_test(0.0, 3, 7, 0.05).accepted());
        assert!((ks_coefficient(0.05) - 1.358).abs() < 1e-3);
        assert!((ks_coefficient(0.025) - 1.48).abs() < 1e-3);
        let t = ks_critical_value(50, 50, 0.05);
        assert!((t - 0.2716).abs() < 1e-3);
        assert_eq!(ks_test(1.0, 50, 50, 0.05), KsOutcome::Reject);
        let t = ks_critical_value(100, 100, 0.05);
        assert!(ks_test(t - 1e-9, 100, 100, 0.05).accepted());
        assert!(!ks_test(t + 1e-9, 100, 100, 0.05).accepted());
    }

    #[test]
    fn chi_square_examples() {
        assert!((chi_square_critical_df1(0.025) - 5.02).abs() < 0.01);
        let indep = chi_square_dependency(&ContingencyTable::new(10, 20, 5, 10), 0.025).unwrap();
        assert!(indep.statistic.abs() < 1e-12);
        assert!(!indep.dependent);
        let dep = chi_square_dependency(&ContingencyTable::new(50, 5, 5, 50), 0.025).unwrap();
        // (50-27.5)²/27.5 · 2 + (5-27.5)²/27.5 · 2
        assert!((dep.statistic - 4.0 * 22.5f64.powi(2) / 27.5).abs() < 1e-9);
        assert!(dep.dependent);
        assert_eq!(
            chi_square_dependency(&ContingencyTable::new(0, 0, 3, 4), 0.025).unwrap_err(),
            StatsError::DegenerateTable
        );
    }

    #[test]
    fn increase_rate_examples() {
        assert_eq!(increase_rate(10.0, 10.0).unwrap(), 1.0);
        assert_eq!(increase_rate(30.0, 10.0).unwrap(), 3.0);
        assert!(matches!(
            increase_rate(3.0, 0.0),
            Err(StatsError::UndefinedRate(_))
        ));
    }

    proptest! {
        #[test]
        fn recursive_matches_batch(xs in prop::collection::vec(0.0f64..1e4, 1..50)) {
            let s = RunningStats::from_samples(&xs).unwrap();
            let (mean, var) = batch(&xs);
            prop_assert!((s.mean() - mean).abs() <= 1e-9 * mean.abs().max(1.0));
            prop_assert!((s.variance() - var).abs() <= 1e-9 * var.abs().max(1.0));
        }

        #[test]
        fn ks_symmetric_and_bounded(
            a in prop::collection::vec(0u8..20, 1..30),
            b in prop::collection::vec(0u8..20, 1..30),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let ab = ks_statistic(&a, &b).unwrap();
            let ba = ks_statistic(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn abnormal_samples_leave_stats_alone(
            normals in prop::collection::vec(9.0f64..11.0, 40..60),
            spikes in prop::collection::vec(100.0f64..200.0, 1..10),
            split in 31usize..40,
        ) {
            let config = DetectorConfig { tolerance: Tolerance { absolute: 0.0, relative: 0.0, sigmas: 4.0 }, ..DetectorConfig::default() };
            let mut mixed = AbnormalityMonitor::new(config);
            let mut clean = AbnormalityMonitor::new(config);
            let mut slot = 0;
            for &x in &normals[..split] { mixed.observe(slot, x).unwrap(); slot += 1; }
            for &x in &spikes { prop_assert_eq!(mixed.observe(slot, x).unwrap(), Verdict::Abnormal); slot += 1; }
            for &x in &normals[split..] { mixed.observe(slot, x).unwrap(); slot += 1; }
            for (i, &x) in normals.iter().enumerate() { clean.observe(i as u32, x).unwrap(); }
            prop_assert_eq!(mixed.stats(), clean.stats());
        }

        #[test]
        fn chi_square_invariant_under_double_swap(
            n11 in 1u64..100, n12 in 1u64..100, n21 in 1u64..100, n22 in 1u64..100,
        ) {
            let t = ContingencyTable::new(n11, n12, n21, n22);
            let swapped = ContingencyTable::new(n22, n21, n12, n11);
            let a = chi_square_dependency(&t, 0.025).unwrap().statistic;
            let b = chi_square_dependency(&swapped, 0.025).unwrap().statistic;
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn range_width_shrinks_with_sqrt_n(n in 2u64..10_000, s in 0.1f64..10.0) {
            let small = RunningStats { n, mean: 3.0, var: s * s };
            let big = RunningStats { n: 4 * n, mean: 3.0, var: s * s };
            let w1 = normal_range(&small, 0.95).unwrap().width();
            let w4 = normal_range(&big, 0.95).unwrap().width();
            prop_assert!((w1 / w4 - 2.0).abs() < 1e-9);
        }
    }
}
