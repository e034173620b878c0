//! Training loops and their shared bookkeeping.
//!
//! Every trainer emits one [`TrainRecord`] per iteration with the same CSV
//! column set; fields a trainer does not produce stay `None` and render as
//! empty cells, so downstream tooling can parse any run the same way.

pub mod diffsim;
pub mod lqr;
pub mod optim;
pub mod ppo;

use crate::loss::{LOSS_TERM_NAMES, NUM_LOSS_TERMS};

/// One iteration's metrics, in CSV column order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub wall_ms: f64,
    pub loss_total: Option<f64>,
    pub loss_parts: Option<[f64; NUM_LOSS_TERMS]>,
    pub mean_reward: Option<f64>,
    pub mean_episode_len: Option<f64>,
    pub tracking_err_mps: Option<f64>,
    pub mean_vx: Option<f64>,
}

impl TrainRecord {
    pub fn csv_header() -> String {
        let mut cols = vec!["iteration".to_string(), "wall_ms".to_string(), "loss_total".to_string()];
        cols.extend(LOSS_TERM_NAMES.iter().map(|s| s.to_string()));
        cols.extend(
            ["mean_reward", "mean_episode_len", "tracking_err_mps", "mean_vx"]
                .iter()
                .map(|s| s.to_string()),
        );
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.iteration.to_string(),
            fmt_opt(Some(self.wall_ms)),
            fmt_opt(self.loss_total),
        ];
        match self.loss_parts {
            Some(parts) => cols.extend(parts.iter().map(|v| fmt_opt(Some(*v)))),
            None => cols.extend(std::iter::repeat(String::new()).take(NUM_LOSS_TERMS)),
        }
        cols.push(fmt_opt(self.mean_reward));
        cols.push(fmt_opt(self.mean_episode_len));
        cols.push(fmt_opt(self.tracking_err_mps));
        cols.push(fmt_opt(self.mean_vx));
        cols.join(",")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        // 17 significant digits round-trips f64 exactly.
        Some(x) => format!("{x:.17e}"),
        None => String::new(),
    }
}
