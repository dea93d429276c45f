//! Canonical column schemas and reference statistics.
//!
//! Feature order is frozen: process parameters first (P1..P34), then kiln
//! feed oxides, hot meal entries, and clinker oxides. Every matrix in the
//! crate indexes columns by this order, and the CSV schemas use the same
//! names, so serialized artifacts are stable across runs.

/// Per-column reference statistics (wt.% for compositions, native units
/// for process parameters).
#[derive(Debug, Clone, Copy)]
pub struct ColumnStat {
    pub name: &'static str,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub sd: f64,
}

/// Admissible range for one process parameter.
#[derive(Debug, Clone, Copy)]
pub struct ParamRange {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

pub const N_PP: usize = 34;
pub const N_KF: usize = 9;
pub const N_HM: usize = 7;
pub const N_CO: usize = 9;
pub const N_FEATURES: usize = N_PP + N_KF + N_HM + N_CO;
pub const N_TARGETS: usize = 3;

pub const PP_NAMES: [&str; N_PP] = [
    "P1", "P2", "P3", "P4", "P5", "P6", "P7", "P8", "P9", "P10", "P11", "P12", "P13", "P14",
    "P15", "P16", "P17", "P18", "P19", "P20", "P21", "P22", "P23", "P24", "P25", "P26", "P27",
    "P28", "P29", "P30", "P31", "P32", "P33", "P34",
];

/// Admissible ranges of the 34 online process parameters.
pub const PP_RANGES: [ParamRange; N_PP] = [
    ParamRange { name: "P1", lo: 0.0, hi: 600.0 },
    ParamRange { name: "P2", lo: 0.0, hi: 600.0 },
    ParamRange { name: "P3", lo: 0.0, hi: 800.0 },
    ParamRange { name: "P4", lo: 0.0, hi: 900.0 },
    ParamRange { name: "P5", lo: 0.0, hi: 1000.0 },
    ParamRange { name: "P6", lo: 0.0, hi: 1200.0 },
    ParamRange { name: "P7", lo: 0.0, hi: 600.0 },
    ParamRange { name: "P8", lo: 0.0, hi: 25.0 },
    ParamRange { name: "P9", lo: 0.0, hi: 150.0 },
    ParamRange { name: "P10", lo: 0.0, hi: 550.0 },
    ParamRange { name: "P11", lo: 0.0, hi: 1370.0 },
    ParamRange { name: "P12", lo: 0.0, hi: 25.0 },
    ParamRange { name: "P13", lo: 700.0, hi: 1500.0 },
    ParamRange { name: "P14", lo: 0.0, hi: 36.0 },
    ParamRange { name: "P15", lo: 0.0, hi: 25.0 },
    ParamRange { name: "P16", lo: 0.0, hi: 1200.0 },
    ParamRange { name: "P17", lo: 0.0, hi: 630_000.0 },
    ParamRange { name: "P18", lo: 0.0, hi: 650.0 },
    ParamRange { name: "P19", lo: 0.0, hi: 100.0 },
    ParamRange { name: "P20", lo: 0.0, hi: 3000.0 },
    ParamRange { name: "P21", lo: 0.0, hi: 500.0 },
    ParamRange { name: "P22", lo: 0.0, hi: 70.0 },
    ParamRange { name: "P23", lo: 0.0, hi: 500.0 },
    ParamRange { name: "P24", lo: 0.0, hi: 600.0 },
    ParamRange { name: "P25", lo: 0.0, hi: 6000.0 },
    ParamRange { name: "P26", lo: -50.0, hi: 5.0 },
    ParamRange { name: "P27", lo: -120.0, hi: 10.0 },
    ParamRange { name: "P28", lo: -120.0, hi: 10.0 },
    ParamRange { name: "P29", lo: -70.0, hi: 10.0 },
    ParamRange { name: "P30", lo: -60.0, hi: 10.0 },
    ParamRange { name: "P31", lo: -50.0, hi: 5.0 },
    ParamRange { name: "P32", lo: -40.0, hi: 5.0 },
    ParamRange { name: "P33", lo: -15.0, hi: 5.0 },
    ParamRange { name: "P34", lo: -15.0, hi: 5.0 },
];

/// Kiln feed oxides (XRF, before the preheater tower).
pub const KF_STATS: [ColumnStat; N_KF] = [
    ColumnStat { name: "KF_CaO", min: 38.17, max: 44.30, mean: 42.43, sd: 0.36 },
    ColumnStat { name: "KF_SiO2", min: 10.36, max: 15.04, mean: 13.02, sd: 0.26 },
    ColumnStat { name: "KF_Al2O3", min: 2.38, max: 4.01, mean: 2.96, sd: 0.11 },
    ColumnStat { name: "KF_Fe2O3", min: 1.86, max: 2.71, mean: 2.11, sd: 0.05 },
    ColumnStat { name: "KF_MgO", min: 1.31, max: 2.71, mean: 2.08, sd: 0.19 },
    ColumnStat { name: "KF_SO3", min: 0.03, max: 0.61, mean: 0.13, sd: 0.06 },
    ColumnStat { name: "KF_K2O", min: 0.31, max: 0.55, mean: 0.43, sd: 0.03 },
    ColumnStat { name: "KF_Na2O", min: 0.00, max: 0.18, mean: 0.06, sd: 0.02 },
    ColumnStat { name: "KF_Cl", min: -0.01, max: 0.10, mean: 0.02, sd: 0.01 },
];

/// Hot meal entries (calciner exit, before the rotary kiln).
pub const HM_STATS: [ColumnStat; N_HM] = [
    ColumnStat { name: "HM_SO3", min: -0.02, max: 2.97, mean: 0.88, sd: 0.18 },
    ColumnStat { name: "HM_K2O", min: 0.38, max: 4.00, mean: 1.51, sd: 0.22 },
    ColumnStat { name: "HM_Na2O", min: 0.07, max: 11.73, mean: 0.17, sd: 0.11 },
    ColumnStat { name: "HM_Cl", min: 0.00, max: 3.25, mean: 0.64, sd: 0.20 },
    ColumnStat { name: "HM_Alite", min: 0.00, max: 62.75, mean: 2.22, sd: 1.48 },
    ColumnStat { name: "HM_Belite", min: 0.00, max: 23.76, mean: 2.69, sd: 1.21 },
    ColumnStat { name: "HM_Ferrite", min: 0.00, max: 20.45, mean: 1.31, sd: 0.77 },
];

/// Clinker oxides (XRF, cooler outlet).
pub const CO_STATS: [ColumnStat; N_CO] = [
    ColumnStat { name: "CLK_CaO", min: 57.71, max: 66.75, mean: 64.62, sd: 0.42 },
    ColumnStat { name: "CLK_SiO2", min: 18.66, max: 27.10, mean: 20.89, sd: 0.29 },
    ColumnStat { name: "CLK_Al2O3", min: 4.57, max: 7.33, mean: 5.24, sd: 0.17 },
    ColumnStat { name: "CLK_Fe2O3", min: 3.06, max: 4.42, mean: 3.55, sd: 0.11 },
    ColumnStat { name: "CLK_MgO", min: 1.90, max: 4.17, mean: 3.25, sd: 0.36 },
    ColumnStat { name: "CLK_SO3", min: 0.07, max: 1.43, mean: 0.50, sd: 0.10 },
    ColumnStat { name: "CLK_K2O", min: 0.41, max: 0.87, mean: 0.60, sd: 0.06 },
    ColumnStat { name: "CLK_Na2O", min: 0.00, max: 0.39, mean: 0.08, sd: 0.04 },
    ColumnStat { name: "CLK_Cl", min: -0.01, max: 0.32, mean: 0.01, sd: 0.01 },
];

/// Clinker mineral phases (XRD, cooler outlet). Aluminate, free lime and
/// other minor phases are not part of the schema, so the three phases sum
/// to at most 100 wt.% with no lower bound.
pub const TARGET_STATS: [ColumnStat; N_TARGETS] = [
    ColumnStat { name: "CLK_Alite", min: 0.00, max: 78.33, mean: 60.03, sd: 3.68 },
    ColumnStat { name: "CLK_Belite", min: 0.00, max: 40.61, mean: 15.11, sd: 3.43 },
    ColumnStat { name: "CLK_Ferrite", min: 0.00, max: 42.23, mean: 14.31, sd: 1.03 },
];

pub fn kf_names() -> Vec<&'static str> {
    KF_STATS.iter().map(|c| c.name).collect()
}

pub fn hm_names() -> Vec<&'static str> {
    HM_STATS.iter().map(|c| c.name).collect()
}

pub fn co_names() -> Vec<&'static str> {
    CO_STATS.iter().map(|c| c.name).collect()
}

pub fn target_names() -> Vec<&'static str> {
    TARGET_STATS.iter().map(|c| c.name).collect()
}

/// All 59 feature names in canonical order: PP, KF, HM, CO.
pub fn full_feature_names() -> Vec<&'static str> {
    let mut names = Vec::with_capacity(N_FEATURES);
    names.extend(PP_NAMES);
    names.extend(KF_STATS.iter().map(|c| c.name));
    names.extend(HM_STATS.iter().map(|c| c.name));
    names.extend(CO_STATS.iter().map(|c| c.name));
    names
}
