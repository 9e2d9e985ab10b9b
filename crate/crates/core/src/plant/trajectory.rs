//! Plain-text trajectory logging.

use super::model::egr_rate;
use super::types::{ActuatorInput, OperatingPoint, PlantState};
use crate::error::Result;
use std::io::Write;

/// Column header shared by every trajectory dump.
pub const TRAJECTORY_HEADER: &str =
    "t,ne,winj,egr_cmd,vgt_cmd,pim,pex,nturb,wc,wegr,chi_egr,nox,soot";

/// One logged row of a plant trajectory.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryRow {
    pub t: f64,
    pub rho: OperatingPoint,
    pub v: ActuatorInput,
    pub state: PlantState,
}

impl TrajectoryRow {
    fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.rho.speed_rpm,
            self.rho.fuel_mm3,
            self.v.egr_pos,
            self.v.vgt_pos,
            self.state.air.p_im,
            self.state.air.p_ex,
            self.state.air.n_turb,
            self.state.air.w_c,
            self.state.air.w_egr,
            egr_rate(&self.state),
            self.state.nox,
            self.state.soot,
        )
    }
}

/// Serialise a trajectory to CSV text (header + one row per sample).
pub fn trajectory_to_csv(rows: &[TrajectoryRow]) -> String {
    let mut buf = Vec::with_capacity(64 * (rows.len() + 1));
    writeln!(buf, "{TRAJECTORY_HEADER}").unwrap();
    for row in rows {
        row.write_csv(&mut buf).unwrap();
    }
    String::from_utf8(buf).expect("csv output is ascii")
}

pub fn write_trajectory_csv(path: &std::path::Path, rows: &[TrajectoryRow]) -> Result<()> {
    std::fs::write(path, trajectory_to_csv(rows))?;
    Ok(())
}
