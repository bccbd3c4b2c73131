//! Text renderings of path solutions and ensemble statistics.
//!
//! Numbers use Rust's shortest round-trip decimal form (at most 17
//! significant digits), so identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use crate::analysis::EnsembleResult;
use crate::problem::PathSolution;

fn push_columns(header: &mut String, prefix: &str, dim: usize) {
    for j in 1..=dim {
        let _ = write!(header, ",{prefix}_{j}");
    }
}

pub fn trajectory_header(state_dim: usize, control_dim: usize) -> String {
    let mut h = String::from("t");
    push_columns(&mut h, "x", state_dim);
    push_columns(&mut h, "u", control_dim);
    h.push_str(",vi_iters");
    h
}

/// `t,x_1..x_n,u_1..u_m,vi_iters`, one row per grid node.
pub fn render_trajectory_csv(sol: &PathSolution) -> String {
    let n = sol.states.first().map_or(0, |x| x.len());
    let m = sol.controls.first().map_or(0, |u| u.len());
    let mut out = trajectory_header(n, m);
    out.push('\n');
    for (i, t) in sol.grid.nodes().iter().enumerate() {
        let _ = write!(out, "{t}");
        for v in sol.states[i].iter().chain(sol.controls[i].iter()) {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{}", sol.vi_iterations[i]);
    }
    out
}

pub fn write_trajectory_csv(sol: &PathSolution, destination: &Path) -> io::Result<()> {
    fs::write(destination, render_trajectory_csv(sol)).map_err(|e| {
        io::Error::new(e.kind(), format!("{}: {e}", destination.display()))
    })
}

/// `t,mean_x_*,var_x_*,mean_u_*,var_u_*`, one row per grid node.
pub fn render_ensemble_csv(ens: &EnsembleResult) -> String {
    let n = ens.mean_state.first().map_or(0, |x| x.len());
    let m = ens.mean_control.first().map_or(0, |u| u.len());
    let mut out = String::from("t");
    push_columns(&mut out, "mean_x", n);
    push_columns(&mut out, "var_x", n);
    push_columns(&mut out, "mean_u", m);
    push_columns(&mut out, "var_u", m);
    out.push('\n');
    for (i, t) in ens.grid.nodes().iter().enumerate() {
        let _ = write!(out, "{t}");
        let cols = ens.mean_state[i]
            .iter()
            .chain(ens.var_state[i].iter())
            .chain(ens.mean_control[i].iter())
            .chain(ens.var_control[i].iter());
        for v in cols {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}
