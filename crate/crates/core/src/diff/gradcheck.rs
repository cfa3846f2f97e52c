use super::DiffError;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Maximum relative deviation between the reverse-mode and central
    /// estimates.
    pub tol: f64,
    /// Magnitudes below this are compared absolutely.
    pub floor: f64,
    /// Agreement required of a one-sided difference for a coordinate that
    /// sits on a kink or jump.
    pub branch_tol: f64,
    /// Coordinates to probe; all of them when `None`.
    pub coords: Option<Vec<usize>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-6,
            floor: 1e-6,
            branch_tol: 1e-3,
            coords: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinateStatus {
    /// Central difference agrees with the reverse-mode value.
    Match,
    /// The function is not smooth at this coordinate (the one-sided
    /// differences disagree); the reverse-mode value matches one of the two
    /// sides, i.e. the branch the implementation selects.
    Branch,
    Mismatch,
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub central: f64,
    pub forward: f64,
    pub backward: f64,
    pub rel_dev: f64,
    pub status: CoordinateStatus,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tol: f64,
    /// Largest central-difference deviation over coordinates not flagged as
    /// branch points.
    pub max_rel_dev: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.status != CoordinateStatus::Mismatch)
    }

    pub fn branch_points(&self) -> Vec<usize> {
        self.status_indices(CoordinateStatus::Branch)
    }

    pub fn mismatches(&self) -> Vec<usize> {
        self.status_indices(CoordinateStatus::Mismatch)
    }

    fn status_indices(&self, status: CoordinateStatus) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.status == status)
            .map(|e| e.index)
            .collect()
    }
}

fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares `analytic` (the reverse-mode gradient of `f` at `theta`) with
/// finite differences of `f`.
///
/// Each probed coordinate costs two extra evaluations; forward, backward and
/// central differences are all derived from them.
pub fn grad_check<F, E>(
    mut f: F,
    theta: &[f64],
    analytic: &[f64],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, E>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
    E: From<DiffError>,
{
    if analytic.len() != theta.len() {
        return Err(DiffError::ShapeMismatch {
            op: "grad_check",
            left: vec![theta.len()],
            right: vec![analytic.len()],
        }
        .into());
    }
    let f0 = f(theta)?;
    if !f0.is_finite() {
        return Err(DiffError::NonFinite(f0).into());
    }
    let coords: Vec<usize> = match &opts.coords {
        Some(c) => c.clone(),
        None => (0..theta.len()).collect(),
    };
    let h = opts.step;
    let mut probe = theta.to_vec();
    let mut entries = Vec::with_capacity(coords.len());
    let mut max_rel_dev: f64 = 0.0;
    for &k in &coords {
        probe[k] = theta[k] + h;
        let fp = f(&probe)?;
        probe[k] = theta[k] - h;
        let fm = f(&probe)?;
        probe[k] = theta[k];
        for v in [fp, fm] {
            if !v.is_finite() {
                return Err(DiffError::NonFinite(v).into());
            }
        }
        let central = (fp - fm) / (2.0 * h);
        let forward = (fp - f0) / h;
        let backward = (f0 - fm) / h;
        let a = analytic[k];
        let rel_dev = rel(a, central, opts.floor);
        let status = if rel_dev <= opts.tol {
            CoordinateStatus::Match
        } else if rel(forward, backward, opts.floor) > opts.branch_tol
            && (rel(a, forward, opts.floor) <= opts.branch_tol
                || rel(a, backward, opts.floor) <= opts.branch_tol)
        {
            CoordinateStatus::Branch
        } else {
            CoordinateStatus::Mismatch
        };
        if status != CoordinateStatus::Branch {
            max_rel_dev = max_rel_dev.max(rel_dev);
        }
        entries.push(GradCheckEntry {
            index: k,
            analytic: a,
            central,
            forward,
            backward,
            rel_dev,
            status,
        });
    }
    Ok(GradCheckReport {
        entries,
        tol: opts.tol,
        max_rel_dev,
    })
}
