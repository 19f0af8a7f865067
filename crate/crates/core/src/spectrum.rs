//! Wavenumber spectra of single snapshots and the occupied-area estimate of
//! the Landau rate.
//!
//! Spectra are centred: bin `(n1/2, n2/2)` (integer division) holds zero
//! wavenumber. The axis value of bin `k` is `K·L = 2π (k − n/2)(n − 1)/n`,
//! with `L = (n − 1)·dx` the plate side, so the spectrum does not depend on
//! the node spacing.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::wavecube::Field2;

/// Default occupancy floor relative to the spectral peak.
pub const DEFAULT_FLOOR_DB: f64 = -20.0;

/// Un-normalized 2-D DFT of a snapshot, in natural (uncentred) bin order with
/// x fastest.
pub fn dft2(snapshot: &Field2) -> Vec<Complex<f64>> {
    let (n1, n2) = (snapshot.n1(), snapshot.n2());
    let mut data: Vec<Complex<f64>> = snapshot.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();

    let row_fft = planner.plan_fft_forward(n1);
    for row in data.chunks_exact_mut(n1) {
        row_fft.process(row);
    }

    let col_fft = planner.plan_fft_forward(n2);
    let mut column = vec![Complex::new(0.0, 0.0); n2];
    for l in 0..n1 {
        for (m, c) in column.iter_mut().enumerate() {
            *c = data[m * n1 + l];
        }
        col_fft.process(&mut column);
        for (m, c) in column.iter().enumerate() {
            data[m * n1 + l] = *c;
        }
    }
    data
}

/// Peak-normalized, centred magnitude spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct WavenumberSpectrum {
    n1: usize,
    n2: usize,
    values: Vec<f64>,
    peak: f64,
}

impl WavenumberSpectrum {
    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    /// Normalized magnitude at centred bin `(kx, ky)`.
    #[inline]
    pub fn get(&self, kx: usize, ky: usize) -> f64 {
        self.values[ky * self.n1 + kx]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Magnitude of the strongest bin before normalization.
    pub fn peak(&self) -> f64 {
        self.peak
    }

    /// `K_x·L` at centred column `kx`.
    pub fn kx_l(&self, kx: usize) -> f64 {
        axis_value(kx, self.n1)
    }

    /// `K_y·L` at centred row `ky`.
    pub fn ky_l(&self, ky: usize) -> f64 {
        axis_value(ky, self.n2)
    }

    /// Grid CSV: a header row of `K_x·L` values, then one row per `K_y·L`
    /// whose first field is the row's axis value.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("ky_l\\kx_l");
        for kx in 0..self.n1 {
            s.push_str(&format!(",{}", self.kx_l(kx)));
        }
        s.push('\n');
        for ky in 0..self.n2 {
            s.push_str(&format!("{}", self.ky_l(ky)));
            for kx in 0..self.n1 {
                s.push_str(&format!(",{}", self.get(kx, ky)));
            }
            s.push('\n');
        }
        s
    }

    /// Binary PGM of `20·log10(magnitude)`, mapping `range_db` below the peak
    /// to black and the peak to white. Rows run from high `K_y` to low so
    /// the image has the usual orientation.
    pub fn to_pgm(&self, range_db: f64) -> Result<Vec<u8>> {
        if !(range_db.is_finite() && range_db > 0.0) {
            return Err(Error::Parameter(format!("dB range must be positive, got {range_db}")));
        }
        let mut out = format!("P5\n{} {}\n255\n", self.n1, self.n2).into_bytes();
        for ky in (0..self.n2).rev() {
            for kx in 0..self.n1 {
                let v = self.get(kx, ky);
                let db = if v > 0.0 { 20.0 * v.log10() } else { f64::NEG_INFINITY };
                let level = ((db + range_db) / range_db).clamp(0.0, 1.0);
                out.push((255.0 * level).round() as u8);
            }
        }
        Ok(out)
    }
}

fn axis_value(k: usize, n: usize) -> f64 {
    let shifted = k as f64 - (n / 2) as f64;
    2.0 * std::f64::consts::PI * shifted * (n - 1) as f64 / n as f64
}

/// Centred magnitude spectrum of a snapshot, scaled so the peak is 1.
pub fn dft2_magnitude(snapshot: &Field2) -> Result<WavenumberSpectrum> {
    if snapshot.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("snapshot has non-finite values".into()));
    }
    if snapshot.values().iter().all(|&v| v == 0.0) {
        return Err(Error::NoSignal("snapshot is identically zero".into()));
    }
    let (n1, n2) = (snapshot.n1(), snapshot.n2());
    let raw = dft2(snapshot);
    let mut values = vec![0.0; n1 * n2];
    for m in 0..n2 {
        let cm = (m + n2 / 2) % n2;
        for l in 0..n1 {
            let cl = (l + n1 / 2) % n1;
            values[cm * n1 + cl] = raw[m * n1 + l].norm();
        }
    }
    let peak = values.iter().copied().fold(0.0_f64, f64::max);
    for v in &mut values {
        *v /= peak;
    }
    Ok(WavenumberSpectrum { n1, n2, values, peak })
}

/// Fraction of bins whose magnitude exceeds `10^(floor_db/20)`.
pub fn occupied_fraction(spectrum: &WavenumberSpectrum, floor_db: f64) -> Result<f64> {
    if !(floor_db < 0.0) {
        return Err(Error::Parameter(format!("floor must be negative dB, got {floor_db}")));
    }
    let level = 10f64.powf(floor_db / 20.0);
    let count = spectrum.values.iter().filter(|&&v| v > level).count();
    Ok(count as f64 / spectrum.values.len() as f64)
}

/// Landau-rate estimate with the parameters that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandauEstimate {
    pub fraction: f64,
    pub floor_db: f64,
    pub snapshot: usize,
}

impl std::fmt::Display for LandauEstimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "occupied fraction {:.4} at {} dB, snapshot {}",
            self.fraction, self.floor_db, self.snapshot
        )
    }
}
