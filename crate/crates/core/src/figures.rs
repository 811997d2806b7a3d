//! Plot data for the reference curves, one CSV per figure.

use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::estimator::{estimate_squeezing, EstimationConfig, EtaEscSource, FormulaMode, PthSource};
use crate::opo::{
    comb_model_eval, derive_cavity_rates, detected_variances_raw, g2zero_from_pump, AnalysisFrequency, CavityParams,
    CombModelParams, PumpCalibration,
};
use crate::units::{db, linewidth_mhz_to_angular, mhz_per_mw_to_si};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Detected variances against pump power.
    Fig2,
    /// Comb-shaped `g2(tau)`.
    Fig3,
    /// Measured pair rate against pump power.
    Fig4,
    /// `g2(0)` against pump power.
    Fig5,
    /// `g2(0)` against pump power for several counting efficiencies.
    Fig6,
    /// Squeezing parameter and dB value against pump power.
    Fig7,
}

impl Figure {
    pub const ALL: [Figure; 6] = [Figure::Fig2, Figure::Fig3, Figure::Fig4, Figure::Fig5, Figure::Fig6, Figure::Fig7];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig2 => "fig2",
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
            Figure::Fig6 => "fig6",
            Figure::Fig7 => "fig7",
        }
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::invalid("figure", format!("unknown figure `{s}`, expected fig2..fig7")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

fn reference_cavity() -> Result<CavityParams> {
    derive_cavity_rates(linewidth_mhz_to_angular(14.16), 1.34e-9, 0.11, 0.02)
}

const ETA_COUNTING: f64 = 0.85 * 0.95 * 0.5;

fn pump_grid_uw() -> impl Iterator<Item = f64> {
    (0..=39).map(|i| 5.0 + 5.0 * i as f64)
}

pub fn figure_table(fig: Figure) -> Result<Table> {
    let cavity = reference_cavity()?;
    let cal = PumpCalibration::new(mhz_per_mw_to_si(104.5))?;
    let freq = AnalysisFrequency::new(8e5)?;
    let measured = cavity.with_threshold_power(0.1653)?;
    match fig {
        Figure::Fig2 => {
            let mut rows = Vec::new();
            for i in 0..=30 {
                let p_mw = 5.0 * i as f64;
                let v = detected_variances_raw(&measured, p_mw * 1e-3, freq, 0.8849, 0.7)?;
                rows.push(vec![p_mw, db(v.v_minus), db(v.v_plus)]);
            }
            Ok(Table {
                header: vec!["P_mW", "V_minus_dB", "V_plus_dB"],
                rows,
            })
        }
        Figure::Fig3 => {
            let p = CombModelParams::new(16.0, 0.064, linewidth_mhz_to_angular(14.16), -0.98e-9, 185e-12, 1.34e-9)?;
            let n_max = p.default_n_max();
            let rows = (0..4000)
                .map(|i| {
                    let tau = -70e-9 + (i as f64 + 0.5) * 35e-12;
                    vec![tau * 1e9, comb_model_eval(&p, tau, n_max)]
                })
                .collect();
            Ok(Table {
                header: vec!["tau_ns", "g2"],
                rows,
            })
        }
        Figure::Fig4 => Ok(Table {
            header: vec!["P_mW", "R_meas"],
            rows: pump_grid_uw()
                .map(|p| vec![p * 1e-3, ETA_COUNTING * cal.pair_rate(p * 1e-6)])
                .collect(),
        }),
        Figure::Fig5 => Ok(Table {
            header: vec!["P_uW", "g2_zero"],
            rows: pump_grid_uw()
                .map(|p| Ok(vec![p, g2zero_from_pump(&cavity, &cal, p * 1e-6)?]))
                .collect::<Result<_>>()?,
        }),
        Figure::Fig6 => {
            let mut rows = Vec::new();
            for scale in [1.0, 0.6, 0.2] {
                for p in pump_grid_uw() {
                    rows.push(vec![p, scale * ETA_COUNTING, g2zero_from_pump(&cavity, &cal, p * 1e-6)?]);
                }
            }
            Ok(Table {
                header: vec!["P_uW", "eta", "g2_zero"],
                rows,
            })
        }
        Figure::Fig7 => {
            let cfg = EstimationConfig {
                formula_mode: FormulaMode::ComposedChain,
                eta_esc_source: EtaEscSource::Explicit(0.7),
                p_th_source: PthSource::Measured(0.1653),
                frequency_hz: freq.hz(),
            };
            let mut rows = Vec::new();
            for p in pump_grid_uw() {
                let g = g2zero_from_pump(&cavity, &cal, p * 1e-6)?;
                let e = estimate_squeezing(g, &cavity, cal.k(), &cfg)?;
                rows.push(vec![p, g, e.r, e.squeezing_db]);
            }
            Ok(Table {
                header: vec!["P_uW", "g2_zero", "r", "squeezing_dB"],
                rows,
            })
        }
    }
}

pub fn write_table_csv(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Write `<dir>/figN.csv` for every figure.
pub fn write_all_figures(dir: impl AsRef<Path>) -> Result<()> {
    std::fs::create_dir_all(dir.as_ref())?;
    for fig in Figure::ALL {
        write_table_csv(&figure_table(fig)?, dir.as_ref().join(format!("{}.csv", fig.name())))?;
    }
    Ok(())
}
