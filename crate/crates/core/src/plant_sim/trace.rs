use std::io::Write;

use super::SimError;

/// Time series of a closed-loop run, sampled `substeps` times per period.
///
/// Vector signals are stored flat, one row per time point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClosedLoopTrace {
    pub n: usize,
    pub m: usize,
    pub r: usize,
    pub h: f64,
    pub substeps: usize,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub chi: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub eta_norm: Vec<f64>,
}

impl ClosedLoopTrace {
    pub fn new(n: usize, m: usize, r: usize, h: f64, substeps: usize) -> Self {
        Self { n, m, r, h, substeps, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub(crate) fn push(&mut self, t: f64, x: &[f64], chi: &[f64], u: &[f64], y: &[f64], eta_norm: f64) {
        self.t.push(t);
        self.x.extend_from_slice(x);
        self.chi.extend_from_slice(chi);
        self.u.extend_from_slice(u);
        self.y.extend_from_slice(y);
        self.eta_norm.push(eta_norm);
    }

    pub fn x_at(&self, i: usize) -> &[f64] {
        &self.x[i * self.n..(i + 1) * self.n]
    }

    /// Virtual controller state χ_v.
    pub fn chi_at(&self, i: usize) -> &[f64] {
        &self.chi[i * self.n..(i + 1) * self.n]
    }

    pub fn u_at(&self, i: usize) -> &[f64] {
        &self.u[i * self.m..(i + 1) * self.m]
    }

    pub fn y_at(&self, i: usize) -> &[f64] {
        &self.y[i * self.r..(i + 1) * self.r]
    }

    /// z = [x − χ_v; χ_v].
    pub fn z_at(&self, i: usize) -> Vec<f64> {
        let x = self.x_at(i);
        let c = self.chi_at(i);
        x.iter().zip(c).map(|(a, b)| a - b).chain(c.iter().cloned()).collect()
    }

    pub fn z_norm(&self, i: usize) -> f64 {
        self.z_at(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Output channel j over the whole trace.
    pub fn output_channel(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.y_at(i)[j]).collect()
    }

    /// Index of the sample instant t_k.
    pub fn sample_index(&self, k: usize) -> usize {
        k * self.substeps
    }

    /// Number of complete sampling intervals in the trace.
    pub fn intervals(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.len() - 1) / self.substeps
        }
    }

    /// Writes `t, x1..xn, u1..um, y1..yr, norm_z, eta_norm`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        self.write_csv_every(w, 1)
    }

    /// Like `write_csv` but keeps only every `every`-th record and the last one.
    pub fn write_csv_every<W: Write>(&self, w: W, every: usize) -> Result<(), SimError> {
        let every = every.max(1);
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n).map(|i| format!("x{i}")));
        header.extend((1..=self.m).map(|i| format!("u{i}")));
        header.extend((1..=self.r).map(|i| format!("y{i}")));
        header.push("norm_z".into());
        header.push("eta_norm".into());
        let err = |e: csv::Error| SimError::Io(e.to_string());
        out.write_record(&header).map_err(err)?;
        let last = self.len().saturating_sub(1);
        for i in (0..self.len()).filter(|i| i % every == 0 || *i == last) {
            let mut row = vec![format!("{:.10e}", self.t[i])];
            row.extend(self.x_at(i).iter().map(|v| format!("{v:.10e}")));
            row.extend(self.u_at(i).iter().map(|v| format!("{v:.10e}")));
            row.extend(self.y_at(i).iter().map(|v| format!("{v:.10e}")));
            row.push(format!("{:.10e}", self.z_norm(i)));
            row.push(format!("{:.10e}", self.eta_norm[i]));
            out.write_record(&row).map_err(err)?;
        }
        out.flush().map_err(|e| SimError::Io(e.to_string()))
    }
}

/// Moving root-mean-square sqrt((1/T) ∫_{t−T}^{t} s² dτ) by the trapezoid
/// rule on the sample grid, interpolating linearly at a window edge that
/// falls between samples.
pub fn mrms(times: &[f64], signal: &[f64], t_end: f64, window: f64) -> Result<f64, SimError> {
    if times.len() != signal.len() || times.len() < 2 {
        return Err(SimError::Config("need at least two samples of equal length".into()));
    }
    if !(window > 0.0 && window.is_finite()) {
        return Err(SimError::Config(format!("window {window} must be positive")));
    }
    let t0 = t_end - window;
    let tol = 1e-9 * window.max(1.0);
    if t0 < times[0] - tol || t_end > times[times.len() - 1] + tol {
        return Err(SimError::Config(format!(
            "window [{t0}, {t_end}] not covered by [{}, {}]",
            times[0],
            times[times.len() - 1]
        )));
    }
    let interp = |t: f64, i: usize| {
        let (ta, tb) = (times[i], times[i + 1]);
        let w = if tb > ta { (t - ta) / (tb - ta) } else { 0.0 };
        signal[i] + w * (signal[i + 1] - signal[i])
    };
    let mut acc = 0.0;
    for i in 0..times.len() - 1 {
        let a = times[i].max(t0);
        let b = times[i + 1].min(t_end);
        if b - a <= tol * 1e-3 {
            continue;
        }
        let sa = interp(a, i);
        let sb = interp(b, i);
        acc += 0.5 * (b - a) * (sa * sa + sb * sb);
    }
    Ok((acc / window).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mrms_of_constant_and_ramp() {
        let t: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        let c = vec![2.0; t.len()];
        assert!((mrms(&t, &c, 10.0, 5.0).unwrap() - 2.0).abs() < 1e-14);
        // s = t, trapezoid on a linear piece over-estimates ∫ t² by h²/6 per unit length
        let ramp = t.clone();
        let exact = ((1000.0 - 0.0) / 3.0 / 10.0f64).sqrt();
        let got = mrms(&t, &ramp, 10.0, 10.0).unwrap();
        assert!((got - exact).abs() < 1e-2);
        let trap = (0..100).map(|i| 0.05 * (t[i] * t[i] + t[i + 1] * t[i + 1])).sum::<f64>();
        assert!((got - (trap / 10.0).sqrt()).abs() < 1e-12);
        assert!(mrms(&t, &ramp, 10.0, 11.0).is_err());
    }

    #[test]
    fn mrms_partial_window() {
        let t = [0.0, 1.0, 2.0];
        let s = [0.0, 1.0, 1.0];
        // window [0.5, 2]: trapezoid on [0.5,1] with 0.5,1 and [1,2] with 1,1
        let want = ((0.5 * 0.5 * (0.25 + 1.0) + 1.0) / 1.5f64).sqrt();
        assert!((mrms(&t, &s, 2.0, 1.5).unwrap() - want).abs() < 1e-14);
    }
}
