//! Synthetic plant history with a known ground-truth phase law.
//!
//! The generator emits DB1/DB2-shaped streams at the plant cadences
//! (process parameters every minute, kiln feed and clinker hourly, hot
//! meal bi-hourly) driven by AR(1) dynamics with a six-hour half-life and
//! a slow drift on the oxide means. Clinker oxides derive from the kiln
//! feed measured one full residence earlier, and clinker phases follow a
//! deterministic nonlinear law of the clinker oxides and the windowed kiln
//! inlet temperature, plus Gaussian measurement noise.
//!
//! Every channel is affinely rescaled so that its realized run statistics
//! equal the reference table exactly before physical clamping; marginal
//! checks therefore do not depend on how much a finite AR(1) run happens
//! to wander.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{ResidenceSchedule, WindowPolicy};
use crate::datamodel::{
    csv_io, schema, CompositionSample, DataError, ProcessRecord, Stream, N_CO, N_KF, N_PP,
};
use crate::rng::derive_rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Stream cadences, fixed to the plant's collection frequencies.
pub const PP_CADENCE_MIN: i64 = 1;
pub const KF_CADENCE_MIN: i64 = 60;
pub const HM_CADENCE_MIN: i64 = 120;
pub const CLINKER_CADENCE_MIN: i64 = 60;

/// Fractions of clinker rows tampered with per defect kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectRates {
    pub duplicate_frac: f64,
    pub missing_frac: f64,
    pub negative_frac: f64,
    pub outlier_frac: f64,
}

impl Default for DefectRates {
    fn default() -> Self {
        DefectRates { duplicate_frac: 0.0, missing_frac: 0.0, negative_frac: 0.0, outlier_frac: 0.0 }
    }
}

impl DefectRates {
    fn validate(&self) -> Result<(), SynthError> {
        for (name, v) in [
            ("duplicate_frac", self.duplicate_frac),
            ("missing_frac", self.missing_frac),
            ("negative_frac", self.negative_frac),
            ("outlier_frac", self.outlier_frac),
        ] {
            if !(0.0..0.25).contains(&v) {
                return Err(SynthError::ConfigInvalid(format!("{name} must be in [0, 0.25), got {v}")));
            }
        }
        Ok(())
    }
}

/// Default per-phase measurement-noise standard deviations, chosen so the
/// total synthetic phase spread matches the reference table.
pub const NOISE_SD_DEFAULT: [f64; 3] = [1.7, 1.85, 0.75];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub duration_days: u32,
    pub defect_rates: DefectRates,
    /// Per-target (alite, belite, ferrite) noise sd in wt.%.
    pub noise_sd: [f64; 3],
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 7,
            duration_days: 30,
            defect_rates: DefectRates::default(),
            noise_sd: NOISE_SD_DEFAULT,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.duration_days == 0 {
            return Err(SynthError::ConfigInvalid("duration_days must be positive".into()));
        }
        if self.noise_sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(SynthError::ConfigInvalid("noise_sd must be nonnegative".into()));
        }
        self.defect_rates.validate()
    }
}

/// History start instant shared by every generated stream.
pub fn history_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap()
}

/// Number of leading clinker rows whose feature windows reach before the
/// history start and can therefore never align.
pub fn warmup_clinker_rows(sched: &ResidenceSchedule, policy: &WindowPolicy) -> usize {
    let horizon = sched.production_total().num_minutes() + policy.width_min;
    let mut n = 0;
    let mut t = 0;
    while t < horizon {
        n += 1;
        t += CLINKER_CADENCE_MIN;
    }
    n
}

// ---------------------------------------------------------------------------
// Ground-truth phase law
// ---------------------------------------------------------------------------

/// E[tanh²(Z)] for standard normal Z; centers the even temperature term.
const TANH_SQ_MEAN: f64 = 0.394283;

/// Reference kiln inlet temperature (P13) mean and sd used by the law.
pub const KILN_TEMP_MEAN: f64 = 1250.0;
pub const KILN_TEMP_SD: f64 = 40.0;

/// Deterministic map from clinker oxides and windowed kiln-inlet
/// temperature to (alite, belite, ferrite) wt.%.
///
/// The backbone is the plant-fitted major-oxide linear form, on top of
/// which sit a saturating CaO availability term, a smooth CaO·SiO₂
/// interaction, and saturating kiln-temperature terms. A final tanh squash
/// keeps each phase inside its observed plant range for any input while
/// leaving the bulk nearly untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseLaw {
    pub alite_temp_even: f64,
    pub belite_temp_even: f64,
    pub ferrite_temp_even: f64,
}

impl Default for PhaseLaw {
    fn default() -> Self {
        PhaseLaw { alite_temp_even: 7.5, belite_temp_even: -6.9, ferrite_temp_even: 1.9 }
    }
}

fn squash(raw: f64, center: f64, halfwidth: f64) -> f64 {
    center + halfwidth * ((raw - center) / halfwidth).tanh()
}

impl PhaseLaw {
    /// Evaluate the law. `oxides` are the nine clinker oxides in canonical
    /// order; `kiln_temp` is the window-averaged P13 in °C.
    pub fn eval(&self, oxides: &[f64], kiln_temp: f64) -> [f64; 3] {
        let cao = oxides[0];
        let sio2 = oxides[1];
        let al2o3 = oxides[2];
        let fe2o3 = oxides[3];

        let zc = (cao - 64.62) / 0.42;
        let zs = (sio2 - 20.89) / 0.29;
        let zf = (fe2o3 - 3.55) / 0.11;
        let zt = (kiln_temp - KILN_TEMP_MEAN) / KILN_TEMP_SD;
        let t_even = zt.tanh().powi(2) - TANH_SQ_MEAN;
        let interaction = (zc * zs / 4.0).tanh();

        let lin_a = 2.97 * cao - 4.5 * sio2 - 7.25 * al2o3 + 0.05 * fe2o3;
        let lin_b = -2.1 * cao + 5.66 * sio2 + 6.15 * al2o3 - 0.11 * fe2o3;
        let lin_f = 0.02 * cao - 0.28 * sio2 - 0.28 * al2o3 + 3.82 * fe2o3;

        let raw_a =
            lin_a + 0.9 * zc.tanh() + 1.0 * interaction + 1.4 * zt.tanh() + self.alite_temp_even * t_even;
        let raw_b = lin_b - 0.8 * interaction - 1.3 * zt.tanh() + self.belite_temp_even * t_even;
        // Recentered so the ferrite mean sits at the observed plant mean.
        let raw_f = lin_f + 6.773 + 0.5 * (zf * zt / 3.0).tanh() + self.ferrite_temp_even * t_even;

        [squash(raw_a, 57.5, 12.5), squash(raw_b, 15.0, 10.0), squash(raw_f, 14.0, 3.0)]
    }
}

/// One ground-truth record per clinker row: the exact law inputs and the
/// noiseless phase values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub timestamp: DateTime<Utc>,
    pub oxides: Vec<f64>,
    pub kiln_temp: f64,
    pub phases: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub law: PhaseLaw,
    pub rows: Vec<TruthRow>,
}

/// A generated raw history: DB1, the three DB2 streams, and the truth.
#[derive(Debug, Clone)]
pub struct RawHistory {
    pub pp: Vec<ProcessRecord>,
    pub kf: Vec<CompositionSample>,
    pub hm: Vec<CompositionSample>,
    pub clinker: Vec<CompositionSample>,
    pub truth: GroundTruth,
}

impl RawHistory {
    /// The DB2 streams merged for the alignment API (each stream stays
    /// internally sorted).
    pub fn db2(&self) -> Vec<CompositionSample> {
        let mut all = Vec::with_capacity(self.kf.len() + self.hm.len() + self.clinker.len());
        all.extend(self.kf.iter().cloned());
        all.extend(self.hm.iter().cloned());
        all.extend(self.clinker.iter().cloned());
        all
    }
}

// ---------------------------------------------------------------------------
// AR(1) machinery
// ---------------------------------------------------------------------------

fn half_life_phi(step_min: f64, half_life_min: f64) -> f64 {
    0.5f64.powf(step_min / half_life_min)
}

/// Unit-marginal AR(1) series.
fn ar1_series<R: Rng>(rng: &mut R, n: usize, phi: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let innov_sd = (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(n);
    let mut d: f64 = normal.sample(rng);
    out.push(d);
    for _ in 1..n {
        d = phi * d + innov_sd * normal.sample(rng);
        out.push(d);
    }
    out
}

/// Affinely rescale a series so its realized mean and sd are exactly
/// `(mean, sd)`.
fn moment_match(series: &mut [f64], mean: f64, sd: f64) {
    let n = series.len() as f64;
    let m: f64 = series.iter().sum::<f64>() / n;
    let var: f64 = series.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    let scale = if var > 0.0 { sd / var.sqrt() } else { 0.0 };
    for v in series.iter_mut() {
        *v = mean + (*v - m) * scale;
    }
}

fn clamp_series(series: &mut [f64], lo: f64, hi: f64) {
    for v in series.iter_mut() {
        *v = v.clamp(lo, hi);
    }
}

/// AR(1) deviations plus a slow drift on the mean, moment-matched to the
/// reference statistics and clamped into the physical box.
///
/// Trace compounds whose mean sits within three sd of zero get a lognormal
/// marginal instead of a Gaussian one: clamping a Gaussian at zero would
/// visibly shift their means, while the skewed positive shape matches how
/// such channels actually behave.
fn channel_series<R: Rng>(
    rng: &mut R,
    n: usize,
    phi: f64,
    phi_drift: f64,
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
) -> Vec<f64> {
    let fast = ar1_series(rng, n, phi);
    let drift = ar1_series(rng, n, phi_drift);
    let mut series: Vec<f64> = fast.iter().zip(drift.iter()).map(|(f, d)| f + 0.25 * d).collect();
    if mean > 0.0 && mean < 3.0 * sd {
        lognormal_match(&mut series, mean, sd);
    } else {
        moment_match(&mut series, mean, sd);
    }
    clamp_series(&mut series, lo, hi);
    series
}

/// Map a series through `c·exp(β·u)` with the shape `β` solved by bisection
/// so the realized mean and sd equal `(mean, sd)` exactly. Keeps every
/// value strictly positive, unlike an affine rescale.
fn lognormal_match(series: &mut [f64], mean: f64, sd: f64) {
    moment_match(series, 0.0, 1.0);
    let target_cv = sd / mean;
    let realized_cv = |beta: f64| -> f64 {
        let n = series.len() as f64;
        let m = series.iter().map(|u| (beta * u).exp()).sum::<f64>() / n;
        let var = series.iter().map(|u| ((beta * u).exp() - m).powi(2)).sum::<f64>() / n;
        var.sqrt() / m
    };
    let (mut lo_b, mut hi_b) = (1e-6, 4.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo_b + hi_b);
        if realized_cv(mid) < target_cv {
            lo_b = mid;
        } else {
            hi_b = mid;
        }
    }
    let beta = 0.5 * (lo_b + hi_b);
    let m = series.iter().map(|u| (beta * u).exp()).sum::<f64>() / series.len() as f64;
    let c = mean / m;
    for u in series.iter_mut() {
        *u = c * (beta * *u).exp();
    }
}

/// Clamp box for an oxide channel. Major oxides (the phase-law inputs) are
/// boxed to ±3.5 sd, the region the law's monotonicity is analyzed on;
/// skewed trace channels keep the full reference range so the lognormal
/// tail survives. Clean output is floored at zero in either case; the
/// negative minima in the reference table come from inconsistent plant
/// entries, which only defect injection reproduces.
fn oxide_box(stat: &schema::ColumnStat) -> (f64, f64) {
    if stat.mean > 0.0 && stat.mean < 3.0 * stat.sd {
        (stat.min.max(0.0), stat.max)
    } else {
        (stat.min.max(stat.mean - 3.5 * stat.sd).max(0.0), stat.max.min(stat.mean + 3.5 * stat.sd))
    }
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

const DRIFT_HALF_LIFE_MIN: f64 = 5.0 * 1440.0;
const AR_HALF_LIFE_MIN: f64 = 6.0 * 60.0;

/// Generate a full raw history. Deterministic given the config seed.
pub fn generate_history(cfg: &GeneratorConfig) -> Result<RawHistory, SynthError> {
    cfg.validate()?;
    let start = history_start();
    let minutes = cfg.duration_days as i64 * 1440;
    let n_pp = minutes as usize;
    let n_kf = (minutes / KF_CADENCE_MIN) as usize;
    let n_hm = (minutes / HM_CADENCE_MIN) as usize;
    let n_clk = (minutes / CLINKER_CADENCE_MIN) as usize;

    // --- DB1: process parameters, minute cadence -------------------------
    let phi_pp = half_life_phi(PP_CADENCE_MIN as f64, AR_HALF_LIFE_MIN);
    let phi_pp_drift = half_life_phi(PP_CADENCE_MIN as f64, DRIFT_HALF_LIFE_MIN);
    let mut pp_cols: Vec<Vec<f64>> = Vec::with_capacity(N_PP);
    for (ch, range) in schema::PP_RANGES.iter().enumerate() {
        let mut rng = derive_rng(cfg.seed, "synth.pp", ch as u64);
        let (mean, sd) = if range.name == "P13" {
            (KILN_TEMP_MEAN, KILN_TEMP_SD)
        } else {
            (range.lo + 0.6 * (range.hi - range.lo), (range.hi - range.lo) / 15.0)
        };
        pp_cols.push(channel_series(&mut rng, n_pp, phi_pp, phi_pp_drift, mean, sd, range.lo, range.hi));
    }
    // P16 mirrors P6 (both read the lowest cyclone stage) up to sensor noise.
    {
        let mut rng = derive_rng(cfg.seed, "synth.pp.p16", 0);
        let jitter = ar1_series(&mut rng, n_pp, phi_pp);
        let p6 = pp_cols[5].clone();
        let range = schema::PP_RANGES[15];
        for (i, v) in pp_cols[15].iter_mut().enumerate() {
            *v = (p6[i] + 3.0 * jitter[i]).clamp(range.lo, range.hi);
        }
    }
    let pp: Vec<ProcessRecord> = (0..n_pp)
        .map(|i| {
            let t = start + Duration::minutes(i as i64);
            let params: Vec<f64> = (0..N_PP).map(|c| pp_cols[c][i]).collect();
            ProcessRecord { timestamp: t, params, validated: true }
        })
        .collect();

    // --- DB2: kiln feed, hourly ------------------------------------------
    let phi_kf = half_life_phi(KF_CADENCE_MIN as f64, AR_HALF_LIFE_MIN);
    let phi_kf_drift = half_life_phi(KF_CADENCE_MIN as f64, DRIFT_HALF_LIFE_MIN);
    let mut kf_cols: Vec<Vec<f64>> = Vec::with_capacity(N_KF);
    for (ch, stat) in schema::KF_STATS.iter().enumerate() {
        let mut rng = derive_rng(cfg.seed, "synth.kf", ch as u64);
        let (lo, hi) = oxide_box(stat);
        kf_cols.push(channel_series(&mut rng, n_kf, phi_kf, phi_kf_drift, stat.mean, stat.sd, lo, hi));
    }
    let kf: Vec<CompositionSample> = (0..n_kf)
        .map(|i| {
            let t = start + Duration::minutes(i as i64 * KF_CADENCE_MIN);
            let values: Vec<f64> = (0..N_KF).map(|c| kf_cols[c][i]).collect();
            CompositionSample { timestamp: t, stream: Stream::KilnFeed, values, validated: true }
        })
        .collect();

    // --- DB2: hot meal, bi-hourly -----------------------------------------
    let phi_hm = half_life_phi(HM_CADENCE_MIN as f64, AR_HALF_LIFE_MIN);
    let phi_hm_drift = half_life_phi(HM_CADENCE_MIN as f64, DRIFT_HALF_LIFE_MIN);
    let mut hm_cols: Vec<Vec<f64>> = Vec::with_capacity(schema::N_HM);
    for (ch, stat) in schema::HM_STATS.iter().enumerate() {
        let mut rng = derive_rng(cfg.seed, "synth.hm", ch as u64);
        hm_cols.push(channel_series(
            &mut rng, n_hm, phi_hm, phi_hm_drift, stat.mean, stat.sd, stat.min.max(0.0), stat.max,
        ));
    }
    let hm: Vec<CompositionSample> = (0..n_hm)
        .map(|i| {
            let t = start + Duration::minutes(i as i64 * HM_CADENCE_MIN);
            let values: Vec<f64> = (0..schema::N_HM).map(|c| hm_cols[c][i]).collect();
            CompositionSample { timestamp: t, stream: Stream::HotMeal, values, validated: true }
        })
        .collect();

    // --- DB2: clinker, hourly ---------------------------------------------
    // Oxides track the feed measured one production residence earlier with
    // correlation 0.8, plus an independent AR component.
    let sched = ResidenceSchedule::default();
    let policy = WindowPolicy::default();
    let production_min = sched.production_total().num_minutes();
    let law = PhaseLaw::default();

    let mut clk_cols: Vec<Vec<f64>> = Vec::with_capacity(N_CO);
    for (ch, stat) in schema::CO_STATS.iter().enumerate() {
        let mut rng = derive_rng(cfg.seed, "synth.co", ch as u64);
        let extra = ar1_series(&mut rng, n_clk, phi_kf);
        let kf_stat = &schema::KF_STATS[ch];
        let mut series: Vec<f64> = (0..n_clk)
            .map(|i| {
                let t_min = i as i64 * CLINKER_CADENCE_MIN;
                let feed_min = t_min - production_min;
                let kf_idx = if feed_min >= 0 { (feed_min / KF_CADENCE_MIN) as usize } else { 0 };
                let kf_dev = (kf_cols[ch][kf_idx] - kf_stat.mean) / kf_stat.sd;
                0.8 * kf_dev + 0.6 * extra[i]
            })
            .collect();
        if stat.mean > 0.0 && stat.mean < 3.0 * stat.sd {
            lognormal_match(&mut series, stat.mean, stat.sd);
        } else {
            moment_match(&mut series, stat.mean, stat.sd);
        }
        let (lo, hi) = oxide_box(stat);
        clamp_series(&mut series, lo, hi);
        clk_cols.push(series);
    }

    // Windowed kiln-inlet temperature, exactly as alignment will see it.
    let p13 = &pp_cols[12];
    let window_min = policy.width_min;
    let kiln_temp_at = |t_min: i64| -> f64 {
        let end = t_min - production_min;
        if end <= 0 {
            return p13[0];
        }
        let lo = (end - window_min).max(0) as usize;
        let hi = end as usize;
        let slice = &p13[lo..hi];
        slice.iter().sum::<f64>() / slice.len() as f64
    };

    let mut noise_rng = derive_rng(cfg.seed, "synth.noise", 0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut clinker = Vec::with_capacity(n_clk);
    let mut truth_rows = Vec::with_capacity(n_clk);
    for i in 0..n_clk {
        let t_min = i as i64 * CLINKER_CADENCE_MIN;
        let t = start + Duration::minutes(t_min);
        let oxides: Vec<f64> = (0..N_CO).map(|c| clk_cols[c][i]).collect();
        let kiln_temp = kiln_temp_at(t_min);
        let phases = law.eval(&oxides, kiln_temp);
        let noisy = [
            phases[0] + cfg.noise_sd[0] * normal.sample(&mut noise_rng),
            phases[1] + cfg.noise_sd[1] * normal.sample(&mut noise_rng),
            phases[2] + cfg.noise_sd[2] * normal.sample(&mut noise_rng),
        ];
        let mut values = oxides.clone();
        values.extend_from_slice(&noisy);
        clinker.push(CompositionSample { timestamp: t, stream: Stream::Clinker, values, validated: true });
        truth_rows.push(TruthRow { timestamp: t, oxides, kiln_temp, phases });
    }

    Ok(RawHistory { pp, kf, hm, clinker, truth: GroundTruth { law, rows: truth_rows } })
}

// ---------------------------------------------------------------------------
// Defect injection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DefectKind {
    Duplicate,
    MissingCell,
    NegativeCell,
    OutlierCell,
}

impl DefectKind {
    pub fn name(self) -> &'static str {
        match self {
            DefectKind::Duplicate => "duplicate",
            DefectKind::MissingCell => "missing",
            DefectKind::NegativeCell => "negative",
            DefectKind::OutlierCell => "outlier",
        }
    }
}

/// One injected defect. Cell defects record the original value so the
/// clean stream can be restored exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectRecord {
    pub kind: DefectKind,
    pub timestamp: DateTime<Utc>,
    pub column: Option<String>,
    pub original_value: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DefectManifest {
    pub records: Vec<DefectRecord>,
}

impl DefectManifest {
    pub fn count(&self, kind: DefectKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// Distinct tampered rows per kind; cell defects are injected at most
    /// once per row, so this equals [`DefectManifest::count`] for them.
    pub fn rows_affected(&self, kind: DefectKind) -> usize {
        let mut stamps: Vec<DateTime<Utc>> =
            self.records.iter().filter(|r| r.kind == kind).map(|r| r.timestamp).collect();
        stamps.sort();
        stamps.dedup();
        stamps.len()
    }
}

/// Exact defect count for a rate over a stream size.
pub fn defect_count(rate: f64, rows: usize) -> usize {
    (rate * rows as f64).floor() as usize
}

/// Tamper with the clinker stream: duplicate whole rows, blank cells, flip
/// the sign of composition cells, and plant 6–10 sd spikes, with exact
/// counts `floor(rate · rows)` per kind on disjoint row sets. The clinker
/// stream is the accounting unit of the cleaning report, which keeps every
/// defect traceable to exactly one removed row.
pub fn inject_defects(history: &RawHistory, cfg: &GeneratorConfig) -> (RawHistory, DefectManifest) {
    let rates = &cfg.defect_rates;
    let n = history.clinker.len();
    let n_dup = defect_count(rates.duplicate_frac, n);
    let n_miss = defect_count(rates.missing_frac, n);
    let n_neg = defect_count(rates.negative_frac, n);
    let n_out = defect_count(rates.outlier_frac, n);

    let mut rng = derive_rng(cfg.seed, "synth.defects", 0);
    // Rows in the alignment warm-up can never join and are dropped by the
    // stream-matching stage; keeping defects off them guarantees each
    // defect is removed by exactly one later stage.
    let warmup = warmup_clinker_rows(&ResidenceSchedule::default(), &WindowPolicy::default()).min(n);
    let mut order: Vec<usize> = (warmup..n).collect();
    // Fisher-Yates; rows are assigned to kinds from a single permutation so
    // the defect row sets are disjoint.
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut cursor = order.into_iter();
    let dup_rows: Vec<usize> = cursor.by_ref().take(n_dup).collect();
    let miss_rows: Vec<usize> = cursor.by_ref().take(n_miss).collect();
    let neg_rows: Vec<usize> = cursor.by_ref().take(n_neg).collect();
    let out_rows: Vec<usize> = cursor.by_ref().take(n_out).collect();

    let schema_names = Stream::Clinker.schema();
    let n_cols = schema_names.len();
    let mut clinker = history.clinker.clone();
    let mut records = Vec::new();

    for &row in &miss_rows {
        let col = rng.random_range(0..n_cols);
        let original = clinker[row].values[col];
        clinker[row].values[col] = f64::NAN;
        records.push(DefectRecord {
            kind: DefectKind::MissingCell,
            timestamp: clinker[row].timestamp,
            column: Some(schema_names[col].to_string()),
            original_value: Some(original),
        });
    }
    for &row in &neg_rows {
        // Pick a cell that is strictly positive so the flip is detectable.
        let mut col = rng.random_range(0..n_cols);
        for _ in 0..n_cols {
            if clinker[row].values[col] > 0.0 {
                break;
            }
            col = (col + 1) % n_cols;
        }
        let original = clinker[row].values[col];
        clinker[row].values[col] = -original;
        records.push(DefectRecord {
            kind: DefectKind::NegativeCell,
            timestamp: clinker[row].timestamp,
            column: Some(schema_names[col].to_string()),
            original_value: Some(original),
        });
    }
    let mag_dist = Uniform::new(6.0, 10.0).unwrap();
    let stats: Vec<schema::ColumnStat> =
        schema::CO_STATS.iter().chain(schema::TARGET_STATS.iter()).copied().collect();
    for &row in &out_rows {
        let col = rng.random_range(0..n_cols);
        let original = clinker[row].values[col];
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let spike = stats[col].mean + sign * mag_dist.sample(&mut rng) * stats[col].sd;
        clinker[row].values[col] = spike;
        records.push(DefectRecord {
            kind: DefectKind::OutlierCell,
            timestamp: clinker[row].timestamp,
            column: Some(schema_names[col].to_string()),
            original_value: Some(original),
        });
    }
    // Duplicates are clean copies inserted next to their originals; they
    // are taken from the untampered history so copies never carry cell
    // defects.
    let mut dup_sorted = dup_rows.clone();
    dup_sorted.sort_unstable();
    for &row in dup_sorted.iter().rev() {
        let copy = clinker[row].clone();
        records.push(DefectRecord {
            kind: DefectKind::Duplicate,
            timestamp: copy.timestamp,
            column: None,
            original_value: None,
        });
        clinker.insert(row + 1, copy);
    }

    records.sort_by(|a, b| (a.timestamp, a.kind.name()).cmp(&(b.timestamp, b.kind.name())));
    let mut tampered = history.clone();
    tampered.clinker = clinker;
    (tampered, DefectManifest { records })
}

/// Undo every manifest entry, restoring the clean stream exactly.
pub fn restore_defects(history: &RawHistory, manifest: &DefectManifest) -> RawHistory {
    let mut clinker = history.clinker.clone();
    for record in &manifest.records {
        match record.kind {
            DefectKind::Duplicate => {
                if let Some(i) = clinker.iter().position(|r| r.timestamp == record.timestamp) {
                    // Remove the copy sitting next to the original.
                    if clinker.get(i + 1).map(|r| r.timestamp) == Some(record.timestamp) {
                        clinker.remove(i + 1);
                    } else {
                        clinker.remove(i);
                    }
                }
            }
            _ => {
                let col_name = record.column.as_deref().expect("cell defect has a column");
                let col =
                    Stream::Clinker.schema().iter().position(|n| *n == col_name).expect("known column");
                if let Some(row) = clinker.iter_mut().find(|r| r.timestamp == record.timestamp) {
                    row.values[col] = record.original_value.expect("cell defect has an original value");
                }
            }
        }
    }
    let mut restored = history.clone();
    restored.clinker = clinker;
    restored
}

// ---------------------------------------------------------------------------
// Artifact files
// ---------------------------------------------------------------------------

/// Write pp.csv, kf.csv, hm.csv, clinker.csv, ground_truth.csv and
/// defects.csv into `dir`.
pub fn write_history(
    dir: &std::path::Path,
    history: &RawHistory,
    manifest: &DefectManifest,
) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir).map_err(DataError::Io)?;
    let paths = csv_io::RawPaths::in_dir(dir);
    csv_io::write_process_records(&paths.pp, &history.pp)?;
    csv_io::write_compositions(&paths.kf, Stream::KilnFeed, &history.kf)?;
    csv_io::write_compositions(&paths.hm, Stream::HotMeal, &history.hm)?;
    csv_io::write_compositions(&paths.clinker, Stream::Clinker, &history.clinker)?;
    write_ground_truth(&dir.join("ground_truth.csv"), &history.truth)?;
    write_manifest(&dir.join("defects.csv"), manifest)?;
    Ok(())
}

pub fn write_ground_truth(path: &std::path::Path, truth: &GroundTruth) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_path(path).map_err(DataError::Csv)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(schema::CO_STATS.iter().map(|c| c.name.to_string()));
    header.push("kiln_temp".into());
    header.extend(["true_alite".to_string(), "true_belite".to_string(), "true_ferrite".to_string()]);
    w.write_record(&header).map_err(DataError::Csv)?;
    for row in &truth.rows {
        let mut record = vec![row.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)];
        record.extend(row.oxides.iter().map(|v| format!("{v}")));
        record.push(format!("{}", row.kiln_temp));
        record.extend(row.phases.iter().map(|v| format!("{v}")));
        w.write_record(&record).map_err(DataError::Csv)?;
    }
    w.flush().map_err(DataError::Io)?;
    Ok(())
}

pub fn write_manifest(path: &std::path::Path, manifest: &DefectManifest) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_path(path).map_err(DataError::Csv)?;
    w.write_record(["timestamp", "kind", "column", "original_value"]).map_err(DataError::Csv)?;
    for r in &manifest.records {
        w.write_record([
            r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            r.kind.name().to_string(),
            r.column.clone().unwrap_or_default(),
            r.original_value.map(|v| format!("{v}")).unwrap_or_default(),
        ])
        .map_err(DataError::Csv)?;
    }
    w.flush().map_err(DataError::Io)?;
    Ok(())
}
