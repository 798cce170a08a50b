//! Training-run time series and their CSV serialization. Float columns are
//! written with 17 significant digits so equal runs produce byte-equal files.

use serde::{Deserialize, Serialize};

/// 17-significant-digit float formatting used by every CSV writer.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// One row per evaluation point. Loss columns are means over the window
/// since the previous row (NaN when that learner made no update).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalRow {
    pub env_steps: u64,
    pub episodes: u64,
    pub manual_resets: u64,
    pub sr: f64,
    pub avg_steps: f64,
    pub forward_critic_loss: f64,
    pub forward_actor_loss: f64,
    pub reset_critic_loss: f64,
    pub reset_actor_loss: f64,
    pub disc_loss: f64,
    pub rnd_loss: f64,
    pub gate_checks: u64,
    pub gate_aborts: u64,
    pub window_episodes: u64,
    pub window_gate_aborts: u64,
    /// Mean loop iteration at which the gate aborted the reset phase, over
    /// the window; NaN when no abort happened.
    pub abort_step_mean: f64,
    pub reset_steps: u64,
    pub forward_steps: u64,
    /// Env step at which the first successful training episode completed;
    /// -1 until that happens.
    pub first_success_step: i64,
}

pub const CSV_HEADER: &str = "env_steps,episodes,manual_resets,sr,avg_steps,\
forward_critic_loss,forward_actor_loss,reset_critic_loss,reset_actor_loss,\
disc_loss,rnd_loss,gate_checks,gate_aborts,window_episodes,window_gate_aborts,\
abort_step_mean,reset_steps,forward_steps,first_success_step";

impl EvalRow {
    fn to_csv_line(self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.env_steps,
            self.episodes,
            self.manual_resets,
            fmt_f64(self.sr),
            fmt_f64(self.avg_steps),
            fmt_f64(self.forward_critic_loss),
            fmt_f64(self.forward_actor_loss),
            fmt_f64(self.reset_critic_loss),
            fmt_f64(self.reset_actor_loss),
            fmt_f64(self.disc_loss),
            fmt_f64(self.rnd_loss),
            self.gate_checks,
            self.gate_aborts,
            self.window_episodes,
            self.window_gate_aborts,
            fmt_f64(self.abort_step_mean),
            self.reset_steps,
            self.forward_steps,
            self.first_success_step,
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub rows: Vec<EvalRow>,
}

impl RunMetrics {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.to_csv_line());
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    /// Best evaluation success rate seen over the run.
    pub fn max_sr(&self) -> f64 {
        self.rows.iter().map(|r| r.sr).fold(0.0, f64::max)
    }

    pub fn final_sr(&self) -> f64 {
        self.rows.last().map(|r| r.sr).unwrap_or(0.0)
    }

    /// Manual resets at the convergence point: the first row whose SR
    /// reaches 95% of the final row's SR. A run whose final SR is zero never
    /// converged, so its full-run count is charged.
    pub fn manual_resets_at_convergence(&self) -> u64 {
        let Some(last) = self.rows.last() else {
            return 0;
        };
        if last.sr <= 0.0 {
            return last.manual_resets;
        }
        let threshold = 0.95 * last.sr;
        self.rows
            .iter()
            .find(|r| r.sr >= threshold)
            .map(|r| r.manual_resets)
            .unwrap_or(last.manual_resets)
    }
}
