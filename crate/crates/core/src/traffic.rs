//! Synthetic second-order self-similar traffic from superposed heavy-tailed
//! ON/OFF sources.
//!
//! Each source alternates between ON and OFF periods with Pareto-distributed
//! durations; during ON it contributes `rate_mbps` to the aggregate. With
//! period shape `a` in (1, 2) the superposition of many sources is
//! asymptotically self-similar with Hurst parameter `(3 - a) / 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trace::Trace;

/// Ticks generated and discarded before collecting a scenario trace, so the
/// first collected tick is not biased by the synchronized period starts.
pub const WARMUP_TICKS: usize = 10_000;

/// Sources processed per accumulation chunk. Per-tick source counts are small
/// integers, so f64 accumulation is exact and the chunking does not affect
/// the result; it only bounds memory during parallel generation.
const SOURCE_CHUNK: usize = 64;

/// Pareto duration distribution for one period type (ON or OFF).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParetoSpec {
    /// Tail exponent; must exceed 1 so the mean period length is finite.
    pub shape_a: f64,
    /// Minimum duration in ticks.
    pub scale_xm: f64,
}

impl ParetoSpec {
    pub fn new(shape_a: f64, scale_xm: f64) -> Result<Self> {
        if !(shape_a > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "pareto shape must be > 1 (finite mean), got {shape_a}"
            )));
        }
        if !(scale_xm >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "pareto scale must be >= 1 tick, got {scale_xm}"
            )));
        }
        Ok(Self { shape_a, scale_xm })
    }

    /// Analytic mean duration `a * xm / (a - 1)`.
    pub fn mean(&self) -> f64 {
        self.shape_a * self.scale_xm / (self.shape_a - 1.0)
    }
}

/// Inverse-CDF sample of the Pareto tail: `xm * u^(-1/a)` for `u` in (0, 1].
pub fn pareto_sample(spec: &ParetoSpec, u: f64) -> Result<f64> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "pareto inverse-CDF input must be in (0, 1], got {u}"
        )));
    }
    Ok(spec.scale_xm * u.powf(-1.0 / spec.shape_a))
}

/// One ON/OFF packet-train source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceSpec {
    pub on: ParetoSpec,
    pub off: ParetoSpec,
    /// Traffic contributed while ON, Mbps.
    pub rate_mbps: f64,
}

impl SourceSpec {
    /// Both periods share the same shape with unit scale; the smallest shape
    /// among ON/OFF is what governs self-similarity, so a single `a` is the
    /// simplest configuration that realizes a target Hurst parameter.
    pub fn symmetric(shape_a: f64) -> Result<Self> {
        let pareto = ParetoSpec::new(shape_a, 1.0)?;
        Ok(Self {
            on: pareto,
            off: pareto,
            rate_mbps: 1.0,
        })
    }

    /// Long-run fraction of time spent ON (renewal-reward).
    pub fn on_fraction(&self) -> f64 {
        self.on.mean() / (self.on.mean() + self.off.mean())
    }
}

/// Generates the binary ON/OFF series `W(t)` for one source.
///
/// The initial state is Bernoulli(0.5) with a fresh full-length first period;
/// durations are rounded up to whole ticks so the `xm` lower bound and the
/// tail exponent survive discretization.
pub fn generate_source(spec: &SourceSpec, num_ticks: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let mut w = vec![0u8; num_ticks];
    let mut on = rng.random::<bool>();
    let mut t = 0usize;
    while t < num_ticks {
        let pareto = if on { &spec.on } else { &spec.off };
        // random() is in [0, 1); flip to (0, 1] for the inverse CDF.
        let u = 1.0 - rng.random::<f64>();
        let dur = pareto_sample(pareto, u).expect("u in (0,1]").ceil() as usize;
        let end = t.saturating_add(dur).min(num_ticks);
        if on {
            w[t..end].iter_mut().for_each(|x| *x = 1);
        }
        t = end;
        on = !on;
    }
    w
}

/// Sums a set of equal-length binary series into a demand trace at
/// `rate_mbps` per active source.
pub fn superpose(sources: &[Vec<u8>], rate_mbps: f64, granularity_ms: u64) -> Result<Trace> {
    let n = match sources.first() {
        Some(s) => s.len(),
        None => return Err(Error::InvalidArgument("no sources to superpose".into())),
    };
    if let Some((i, s)) = sources.iter().enumerate().find(|(_, s)| s.len() != n) {
        return Err(Error::ShapeMismatch(format!(
            "source {i} has length {}, expected {n}",
            s.len()
        )));
    }
    let mut counts = vec![0.0f64; n];
    for s in sources {
        for (acc, w) in counts.iter_mut().zip(s) {
            *acc += *w as f64;
        }
    }
    let values = counts.into_iter().map(|c| c * rate_mbps).collect();
    Trace::new(Trace::default_start_time(), granularity_ms, values)
}

/// Block means over non-overlapping windows of `m` ticks. A trailing
/// remainder shorter than `m` is dropped; callers that care can detect it
/// from `trace.len() % m`.
pub fn aggregate(trace: &Trace, m: usize) -> Result<Trace> {
    if m < 1 {
        return Err(Error::InvalidArgument("aggregation factor must be >= 1".into()));
    }
    if m == 1 {
        return Ok(trace.clone());
    }
    let n_blocks = trace.len() / m;
    if n_blocks == 0 {
        return Err(Error::InvalidArgument(format!(
            "trace of length {} has no complete block of size {m}",
            trace.len()
        )));
    }
    let values: Vec<f64> = (0..n_blocks)
        .map(|b| trace.values()[b * m..(b + 1) * m].iter().sum::<f64>() / m as f64)
        .collect();
    Trace::new(
        trace.start_time(),
        trace.granularity_ms() * m as u64,
        values,
    )
}

/// Hurst parameter implied by the dominant tail shape: `H = (3 - a) / 2`.
pub fn hurst_from_shape(a: f64) -> Result<f64> {
    if !(a > 1.0 && a < 3.0) {
        return Err(Error::InvalidArgument(format!(
            "shape must be in (1, 3), got {a}"
        )));
    }
    Ok((3.0 - a) / 2.0)
}

/// Demand level presets: `(M, a)` source count and tail shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    High,
    Medium,
    Low,
}

impl ScenarioKind {
    pub fn num_sources(&self) -> usize {
        match self {
            ScenarioKind::High => 750,
            ScenarioKind::Medium => 500,
            ScenarioKind::Low => 250,
        }
    }

    pub fn shape_a(&self) -> f64 {
        match self {
            ScenarioKind::High => 1.04,
            ScenarioKind::Medium => 1.6,
            ScenarioKind::Low => 1.9,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::High => "high",
            ScenarioKind::Medium => "medium",
            ScenarioKind::Low => "low",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(ScenarioKind::High),
            "medium" => Ok(ScenarioKind::Medium),
            "low" => Ok(ScenarioKind::Low),
            other => Err(Error::InvalidArgument(format!(
                "unknown scenario `{other}` (expected high|medium|low)"
            ))),
        }
    }
}

/// Full recipe for one synthetic trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub num_sources: usize,
    pub shape_a: f64,
    pub tick_ms: u64,
    pub num_ticks: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Preset for a demand level at the 10 ms base tick.
    pub fn preset(kind: ScenarioKind, num_ticks: usize, seed: u64) -> Self {
        Self {
            kind,
            num_sources: kind.num_sources(),
            shape_a: kind.shape_a(),
            tick_ms: 10,
            num_ticks,
            seed,
        }
    }

    pub fn hurst(&self) -> Result<f64> {
        hurst_from_shape(self.shape_a)
    }
}

/// Generates a scenario trace: `M` independent substreams (one per source,
/// derived from the scenario seed by stream index), superposed, with
/// [`WARMUP_TICKS`] generated and discarded up front.
///
/// Deterministic given the spec; per-tick counts are exact integers in f64,
/// so parallel chunked accumulation matches sequential superposition
/// bit-for-bit.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Trace> {
    if spec.num_ticks == 0 {
        return Err(Error::InvalidArgument("num_ticks must be >= 1".into()));
    }
    let source = SourceSpec::symmetric(spec.shape_a)?;
    let total_ticks = WARMUP_TICKS + spec.num_ticks;

    let chunk_sums: Vec<Vec<f64>> = (0..spec.num_sources)
        .collect::<Vec<_>>()
        .par_chunks(SOURCE_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0f64; total_ticks];
            for &m in chunk {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                rng.set_stream(m as u64);
                let w = generate_source(&source, total_ticks, &mut rng);
                for (a, x) in acc.iter_mut().zip(&w) {
                    *a += *x as f64;
                }
            }
            acc
        })
        .collect();

    let mut counts = vec![0.0f64; total_ticks];
    for chunk in chunk_sums {
        for (a, c) in counts.iter_mut().zip(chunk) {
            *a += c;
        }
    }

    let values: Vec<f64> = counts[WARMUP_TICKS..]
        .iter()
        .map(|c| c * source.rate_mbps)
        .collect();
    Trace::new(Trace::default_start_time(), spec.tick_ms, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pareto_cdf_boundary() {
        let spec = ParetoSpec::new(1.6, 2.5).unwrap();
        assert_eq!(pareto_sample(&spec, 1.0).unwrap(), 2.5);
    }

    #[test]
    fn pareto_closed_form() {
        let spec = ParetoSpec::new(2.0, 1.0).unwrap();
        // 0.25^(-1/2) = 2
        assert!((pareto_sample(&spec, 0.25).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pareto_rejects_bad_u() {
        let spec = ParetoSpec::new(1.5, 1.0).unwrap();
        assert!(pareto_sample(&spec, 0.0).is_err());
        assert!(pareto_sample(&spec, 1.1).is_err());
    }

    #[test]
    fn pareto_monte_carlo_mean() {
        // Empirical mean over 1e6 draws vs the analytic a*xm/(a-1).
        let spec = ParetoSpec::new(1.6, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let sum: f64 = (0..n)
            .map(|_| pareto_sample(&spec, 1.0 - rng.random::<f64>()).unwrap())
            .sum();
        let mean = sum / n as f64;
        let expected = spec.mean();
        assert!((expected - 8.0 / 3.0).abs() < 1e-12);
        assert!(
            (mean - expected).abs() / expected < 0.02,
            "MC mean {mean} vs analytic {expected}"
        );
    }

    #[test]
    fn source_runs_respect_minimum_on_length() {
        let spec = SourceSpec {
            on: ParetoSpec::new(1.5, 3.0).unwrap(),
            off: ParetoSpec::new(1.5, 1.0).unwrap(),
            rate_mbps: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = generate_source(&spec, 50_000, &mut rng);
        // every maximal run of 1s (except a truncated tail run) spans >= ceil(xm)
        let mut run = 0usize;
        for (i, &x) in w.iter().enumerate() {
            if x == 1 {
                run += 1;
            } else {
                if run > 0 {
                    assert!(run >= 3, "ON run of {run} ending at {i}");
                }
                run = 0;
            }
        }
    }

    #[test]
    fn source_all_zero_when_first_off_covers_series() {
        // Scan seeds for one whose first draws are OFF with a long duration.
        let spec = SourceSpec {
            on: ParetoSpec::new(1.5, 1.0).unwrap(),
            off: ParetoSpec::new(1.01, 64.0).unwrap(),
            rate_mbps: 1.0,
        };
        let found = (0..200u64).any(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = generate_source(&spec, 32, &mut rng);
            w.iter().all(|&x| x == 0)
        });
        assert!(found, "no all-zero series among 200 seeds");
    }

    #[test]
    fn source_on_fraction_matches_renewal_reward() {
        let spec = SourceSpec::symmetric(1.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = generate_source(&spec, 1_000_000, &mut rng);
        let frac = w.iter().map(|&x| x as f64).sum::<f64>() / w.len() as f64;
        let expected = spec.on_fraction();
        assert!(
            (frac - expected).abs() / expected < 0.05,
            "ON fraction {frac} vs {expected}"
        );
    }

    #[test]
    fn superpose_one_all_on_source() {
        let t = superpose(&[vec![1u8; 5]], 1.0, 10).unwrap();
        assert_eq!(t.values(), &[1.0; 5]);
    }

    #[test]
    fn superpose_identical_sources_scale_linearly() {
        let sources: Vec<Vec<u8>> = (0..7).map(|_| vec![1u8; 4]).collect();
        let t = superpose(&sources, 2.0, 10).unwrap();
        assert_eq!(t.values(), &[14.0; 4]);
    }

    #[test]
    fn superpose_rejects_length_mismatch() {
        assert!(superpose(&[vec![1; 4], vec![1; 5]], 1.0, 10).is_err());
    }

    #[test]
    fn aggregate_hand_example() {
        let t = Trace::new(Trace::default_start_time(), 10, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let a = aggregate(&t, 2).unwrap();
        assert_eq!(a.values(), &[2.0, 6.0]);
        assert_eq!(a.granularity_ms(), 20);
        assert_eq!(aggregate(&t, 1).unwrap().values(), t.values());
    }

    #[test]
    fn hurst_shape_pairs() {
        assert!((hurst_from_shape(1.04).unwrap() - 0.98).abs() < 1e-12);
        assert!((hurst_from_shape(1.6).unwrap() - 0.7).abs() < 1e-12);
        assert!((hurst_from_shape(2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(hurst_from_shape(1.0).is_err());
        assert!(hurst_from_shape(3.0).is_err());
    }

    #[test]
    fn scenario_trace_is_deterministic_and_bounded() {
        let spec = ScenarioSpec {
            kind: ScenarioKind::Medium,
            num_sources: 40,
            shape_a: 1.6,
            tick_ms: 10,
            num_ticks: 2_000,
            seed: 99,
        };
        let a = generate_scenario(&spec).unwrap();
        let b = generate_scenario(&spec).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.values().iter().all(|&v| (0.0..=40.0).contains(&v)));
        assert_eq!(a.len(), 2_000);
    }

    #[test]
    fn scenario_matches_manual_superposition() {
        let spec = ScenarioSpec {
            kind: ScenarioKind::Low,
            num_sources: 9,
            shape_a: 1.9,
            tick_ms: 10,
            num_ticks: 500,
            seed: 5,
        };
        let via_scenario = generate_scenario(&spec).unwrap();

        let source = SourceSpec::symmetric(1.9).unwrap();
        let total = WARMUP_TICKS + 500;
        let sources: Vec<Vec<u8>> = (0..9)
            .map(|m| {
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                rng.set_stream(m as u64);
                generate_source(&source, total, &mut rng)
            })
            .collect();
        let manual = superpose(&sources, 1.0, 10).unwrap();
        assert_eq!(&manual.values()[WARMUP_TICKS..], via_scenario.values());
    }

    #[test]
    fn medium_scenario_recovers_target_hurst() {
        let spec = ScenarioSpec::preset(ScenarioKind::Medium, 1 << 15, 17);
        let trace = generate_scenario(&spec).unwrap();
        let est = crate::stats::rescaled_range_hurst(
            trace.values(),
            &crate::stats::default_block_sizes(trace.len()),
        )
        .unwrap();
        assert!(
            (est.hurst - 0.7).abs() <= 0.1,
            "R/S H = {} for medium scenario",
            est.hurst
        );
    }

    proptest! {
        #[test]
        fn superpose_additivity(
            a in proptest::collection::vec(proptest::collection::vec(0u8..=1, 16), 1..4),
            b in proptest::collection::vec(proptest::collection::vec(0u8..=1, 16), 1..4),
        ) {
            let all: Vec<Vec<u8>> = a.iter().chain(b.iter()).cloned().collect();
            let ta = superpose(&a, 1.5, 10).unwrap();
            let tb = superpose(&b, 1.5, 10).unwrap();
            let tall = superpose(&all, 1.5, 10).unwrap();
            for i in 0..16 {
                prop_assert!((ta.values()[i] + tb.values()[i] - tall.values()[i]).abs() < 1e-12);
            }
        }

        #[test]
        fn aggregation_composes(values in proptest::collection::vec(0.0f64..10.0, 100..200)) {
            let t = Trace::new(Trace::default_start_time(), 10, values).unwrap();
            let ten_then_ten = aggregate(&aggregate(&t, 10).unwrap(), 10).unwrap();
            let hundred = aggregate(&t, 100).unwrap();
            prop_assert_eq!(ten_then_ten.len(), hundred.len());
            for (x, y) in ten_then_ten.values().iter().zip(hundred.values()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
