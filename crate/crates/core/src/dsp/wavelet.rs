//! Complex frequency B-spline (fbsp) wavelet transform with learnable order,
//! bandwidth and centre frequency.
//!
//! The kernel is `psi(x) = sqrt(fb) * |sinc(fb x / m)|^m * exp(2 pi i fc x)`
//! with the normalized `sinc(u) = sin(pi u) / (pi u)`. Taking the modulus of
//! the sinc keeps the kernel real-analytic in `m` for non-integer orders; for
//! even `m` (including the default `m = 2`) it is identical to `sinc^m`.
//!
//! The continuous transform `W(a, tau) = a^{-1/2} \int f(t) conj(psi((t - tau)/a)) dt`
//! is evaluated as a Riemann sum at the signal rate. Time offsets are measured
//! in seconds, so a scale `a` has pseudo-frequency `fc / a` Hz.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{AudioSegment, Spectrogram, SpectrogramKind};
use crate::autodiff::{DiffTensor, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

const TAU: f64 = std::f64::consts::TAU;
const PI: f64 = std::f64::consts::PI;

/// Lower bounds enforced after every optimizer step.
pub const MIN_ORDER: f64 = 1.01;
pub const MIN_POSITIVE: f64 = 1e-3;

/// Kernel support is rounded up to a multiple of this many x-units, so that
/// tiny parameter perturbations do not move the truncation edge.
const SUPPORT_QUANTUM: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbspParams {
    pub m: f64,
    pub f_b: f64,
    pub f_c: f64,
}

impl Default for FbspParams {
    fn default() -> Self {
        Self {
            m: 2.0,
            f_b: 0.5,
            f_c: 1.0,
        }
    }
}

fn sinc(u: f64) -> f64 {
    if u == 0.0 {
        1.0
    } else {
        (PI * u).sin() / (PI * u)
    }
}

fn sinc_prime(u: f64) -> f64 {
    if u.abs() < 1e-8 {
        // sinc'(u) = -(pi^2/3) u + O(u^3)
        -(PI * PI / 3.0) * u
    } else {
        ((PI * u).cos() - sinc(u)) / u
    }
}

impl FbspParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 1.0 && self.f_b > 0.0 && self.f_c > 0.0) {
            return Err(Error::Config(format!(
                "fbsp parameters need m > 1, f_b > 0, f_c > 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Half-width in x-units beyond which the envelope bound
    /// `(1 / (pi |u|))^m` is below `threshold` of the peak.
    pub fn support(&self, threshold: f64) -> f64 {
        let raw = (self.m / self.f_b) * threshold.powf(-1.0 / self.m) / PI;
        (raw / SUPPORT_QUANTUM).ceil() * SUPPORT_QUANTUM
    }

    pub fn kernel(&self, x: f64) -> Complex64 {
        let s = sinc(self.f_b * x / self.m).abs();
        let env = self.f_b.sqrt() * s.powf(self.m);
        Complex64::from_polar(env, TAU * self.f_c * x)
    }

    /// `[psi, d psi/d m, d psi/d f_b, d psi/d f_c]` at `x`.
    pub fn kernel_with_partials(&self, x: f64) -> [Complex64; 4] {
        let FbspParams { m, f_b, f_c } = *self;
        let u = f_b * x / m;
        let s = sinc(u);
        let phase = Complex64::from_polar(1.0, TAU * f_c * x);
        let a = s.abs();
        if a < 1e-300 {
            let z = Complex64::new(0.0, 0.0);
            return [z, z, z, z];
        }
        let sq = f_b.sqrt();
        let env = a.powf(m);
        // |s|^{m-1} sgn(s) s'(u)
        let core = a.powf(m - 1.0) * s.signum() * sinc_prime(u);
        let psi = phase * (sq * env);
        let d_m = phase * (sq * (env * a.ln() - core * u));
        let d_fb = psi * (0.5 / f_b) + phase * (sq * core * x);
        let d_fc = psi * Complex64::new(0.0, TAU * x);
        [psi, d_m, d_fb, d_fc]
    }
}

/// Evaluate the fbsp wavelet at `x`.
pub fn fbsp_kernel(x: f64, params: &FbspParams) -> Complex64 {
    params.kernel(x)
}

/// The three learnable kernel parameters, held in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaveletParams {
    pub m: ParamId,
    pub f_b: ParamId,
    pub f_c: ParamId,
}

impl WaveletParams {
    pub fn register(store: &mut ParamStore, prefix: &str, init: FbspParams) -> Result<Self> {
        init.validate()?;
        let mut scalar = |name: &str, v: f64| {
            store.insert(
                format!("{prefix}.{name}"),
                DiffTensor::param(vec![1], vec![v])?,
            )
        };
        Ok(Self {
            m: scalar("m", init.m)?,
            f_b: scalar("f_b", init.f_b)?,
            f_c: scalar("f_c", init.f_c)?,
        })
    }

    pub fn values(&self, store: &ParamStore) -> FbspParams {
        FbspParams {
            m: store.get(self.m).values()[0],
            f_b: store.get(self.f_b).values()[0],
            f_c: store.get(self.f_c).values()[0],
        }
    }

    pub fn ids(&self) -> [ParamId; 3] {
        [self.m, self.f_b, self.f_c]
    }

    /// Project back into the valid region after an update.
    pub fn clamp(&self, store: &mut ParamStore) {
        let m = &mut store.get_mut(self.m).values_mut()[0];
        *m = m.max(MIN_ORDER);
        for id in [self.f_b, self.f_c] {
            let v = &mut store.get_mut(id).values_mut()[0];
            *v = v.max(MIN_POSITIVE);
        }
    }
}

/// Wavelet scales in seconds, strictly ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid {
    scales: Vec<f64>,
}

impl ScaleGrid {
    pub fn new(scales: Vec<f64>) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::Config("empty wavelet scale grid".into()));
        }
        if scales.iter().any(|a| !(*a > 0.0)) || scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "wavelet scales must be positive and strictly ascending".into(),
            ));
        }
        Ok(Self { scales })
    }

    /// `n` scales whose pseudo-frequencies (at `f_c = 1`) are log-spaced
    /// between `f_min` and `f_max` Hz.
    pub fn log_spaced(f_min: f64, f_max: f64, n: usize) -> Result<Self> {
        if n == 0 || !(f_min > 0.0 && f_max > f_min) {
            return Err(Error::Config(format!(
                "need n >= 1 and 0 < f_min < f_max (got n={n}, {f_min}..{f_max} Hz)"
            )));
        }
        let scales = if n == 1 {
            vec![1.0 / f_max]
        } else {
            let ratio = (f_max / f_min).ln();
            (0..n)
                .map(|i| 1.0 / (f_max * (-ratio * i as f64 / (n - 1) as f64).exp()))
                .collect()
        };
        Self::new(scales)
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }

    pub fn pseudo_frequencies(&self, f_c: f64) -> Vec<f64> {
        self.scales.iter().map(|a| f_c / a).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveletConfig {
    pub n_scales: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    /// Distance between analysis positions, in samples.
    pub hop: usize,
    /// Relative envelope level at which the kernel is cut; `None` sums over
    /// the whole signal.
    pub truncation: Option<f64>,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        Self {
            n_scales: 64,
            f_min_hz: 20.0,
            f_max_hz: 7800.0,
            hop: 800,
            truncation: Some(1e-4),
        }
    }
}

impl WaveletConfig {
    pub fn grid(&self) -> Result<ScaleGrid> {
        ScaleGrid::log_spaced(self.f_min_hz, self.f_max_hz, self.n_scales)
    }
}

struct KernelTable {
    half: usize,
    // index k + half holds the kernel at integer offset k
    re: [Vec<f64>; 4],
    im: [Vec<f64>; 4],
    norm: f64,
}

fn kernel_tables(
    params: &FbspParams,
    grid: &ScaleGrid,
    n: usize,
    rate: f64,
    truncation: Option<f64>,
    with_partials: bool,
) -> Vec<KernelTable> {
    let dt = 1.0 / rate;
    let support = truncation.map(|t| params.support(t));
    let parts = if with_partials { 4 } else { 1 };
    grid.scales
        .iter()
        .map(|&a| {
            let max_half = n.saturating_sub(1);
            let half = match support {
                Some(x) => ((x * a * rate).floor() as usize).min(max_half),
                None => max_half,
            };
            let len = 2 * half + 1;
            let mut re: [Vec<f64>; 4] = Default::default();
            let mut im: [Vec<f64>; 4] = Default::default();
            for p in 0..parts {
                re[p] = Vec::with_capacity(len);
                im[p] = Vec::with_capacity(len);
            }
            for i in 0..len {
                let x = (i as f64 - half as f64) * dt / a;
                if with_partials {
                    let v = params.kernel_with_partials(x);
                    for p in 0..4 {
                        re[p].push(v[p].re);
                        im[p].push(v[p].im);
                    }
                } else {
                    let v = params.kernel(x);
                    re[0].push(v.re);
                    im[0].push(v.im);
                }
            }
            KernelTable {
                half,
                re,
                im,
                norm: dt / a.sqrt(),
            }
        })
        .collect()
}

pub(crate) fn frame_count(n: usize, hop: usize) -> usize {
    if n == 0 {
        0
    } else {
        (n - 1) / hop + 1
    }
}

/// Magnitudes `[frames x scales]` for one signal, plus the partials of each
/// magnitude w.r.t. (m, f_b, f_c) when `partials` is provided.
fn transform_one(
    signal: &[f64],
    tables: &[KernelTable],
    hop: usize,
    mut partials: Option<[&mut [f64]; 3]>,
) -> Vec<f64> {
    let n = signal.len();
    let frames = frame_count(n, hop);
    let ns = tables.len();
    let mut out = vec![0.0; frames * ns];
    for t in 0..frames {
        let tau = t * hop;
        for (s, tab) in tables.iter().enumerate() {
            let lo = tau.saturating_sub(tab.half);
            let hi = (tau + tab.half).min(n - 1);
            let sig = &signal[lo..=hi];
            let k0 = lo + tab.half - tau;
            let dot = |v: &[f64]| -> f64 { sig.iter().zip(&v[k0..]).map(|(a, b)| a * b).sum() };
            let sr = dot(&tab.re[0]);
            let si = dot(&tab.im[0]);
            let mag = (sr * sr + si * si).sqrt();
            let idx = t * ns + s;
            out[idx] = tab.norm * mag;
            if let Some(p) = partials.as_mut() {
                for q in 0..3 {
                    p[q][idx] = if mag > 0.0 {
                        let dr = dot(&tab.re[q + 1]);
                        let di = dot(&tab.im[q + 1]);
                        tab.norm * (sr * dr + si * di) / mag
                    } else {
                        0.0
                    };
                }
            }
        }
    }
    out
}

/// Wavelet magnitude spectrogram of one segment. Frames are centred at
/// multiples of `hop` samples; bins are the scales of `scale_grid`.
pub fn wavelet_spectrogram(
    segment: &AudioSegment,
    params: &FbspParams,
    scale_grid: &ScaleGrid,
    hop: usize,
    truncation: Option<f64>,
) -> Result<Spectrogram> {
    params.validate()?;
    if hop == 0 {
        return Err(Error::Config(
            "wavelet hop must be at least 1 sample".into(),
        ));
    }
    if segment.samples.is_empty() {
        return Err(Error::EmptyInput(
            "wavelet transform of an empty segment".into(),
        ));
    }
    let rate = segment.sample_rate_hz as f64;
    let tables = kernel_tables(
        params,
        scale_grid,
        segment.samples.len(),
        rate,
        truncation,
        false,
    );
    let grid = transform_one(&segment.samples, &tables, hop, None);
    let hop_ms = hop as f64 * 1000.0 / rate;
    Ok(Spectrogram {
        frames: frame_count(segment.samples.len(), hop),
        bins: scale_grid.len(),
        grid,
        kind: SpectrogramKind::Wavelet,
        frame_length_ms: hop_ms,
        frame_shift_ms: hop_ms,
        bin_values: scale_grid.pseudo_frequencies(params.f_c),
    })
}

/// Record the transform of a batch of equal-length signals on `tape`.
/// Output shape is `[batch, 1, frames, scales]`; gradients flow to the three
/// kernel parameters.
pub fn wavelet_on_tape(
    tape: &mut Tape,
    store: &ParamStore,
    params: &WaveletParams,
    signals: &[&[f64]],
    rate: u32,
    scale_grid: &ScaleGrid,
    hop: usize,
    truncation: Option<f64>,
) -> Result<Var> {
    let n = signals.first().map(|s| s.len()).unwrap_or(0);
    if n == 0 || signals.iter().any(|s| s.len() != n) {
        return Err(Error::Contract(
            "wavelet batch needs non-empty signals of equal length".into(),
        ));
    }
    if hop == 0 {
        return Err(Error::Config(
            "wavelet hop must be at least 1 sample".into(),
        ));
    }
    let values = params.values(store);
    values.validate()?;
    let inputs: Vec<Var> = params
        .ids()
        .iter()
        .map(|id| tape.param(store, *id))
        .collect();
    let need_grad = inputs.iter().any(|v| tape.requires_grad(*v));
    let tables = kernel_tables(&values, scale_grid, n, rate as f64, truncation, need_grad);
    let frames = frame_count(n, hop);
    let per = frames * scale_grid.len();
    let total = per * signals.len();
    let mut value = Vec::with_capacity(total);
    let mut partials = if need_grad {
        vec![vec![0.0; total]; 3]
    } else {
        Vec::new()
    };
    for (b, sig) in signals.iter().enumerate() {
        let out = if need_grad {
            let [pm, pb, pc] = &mut partials[..] else {
                unreachable!()
            };
            let range = b * per..(b + 1) * per;
            transform_one(
                sig,
                &tables,
                hop,
                Some([
                    &mut pm[range.clone()],
                    &mut pb[range.clone()],
                    &mut pc[range],
                ]),
            )
        } else {
            transform_one(sig, &tables, hop, None)
        };
        value.extend(out);
    }
    tape.scalar_jacobian(
        vec![signals.len(), 1, frames, scale_grid.len()],
        value,
        inputs,
        partials,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_at_origin_is_sqrt_fb() {
        let p = FbspParams::default();
        let v = fbsp_kernel(0.0, &p);
        assert_eq!(v.re, 0.5f64.sqrt());
        assert_eq!(v.im, 0.0);
    }

    #[test]
    fn kernel_modulus_is_even() {
        let p = FbspParams {
            m: 2.7,
            f_b: 1.3,
            f_c: 0.8,
        };
        for x in [0.1, 0.77, 3.2, 11.0] {
            assert!((p.kernel(x).norm() - p.kernel(-x).norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn kernel_partials_match_finite_differences() {
        let p = FbspParams {
            m: 2.3,
            f_b: 0.7,
            f_c: 1.1,
        };
        let h = 1e-6;
        for x in [0.3, -1.7, 4.2] {
            let an = p.kernel_with_partials(x);
            let bump = |q: usize, d: f64| {
                let mut pp = p;
                match q {
                    0 => pp.m += d,
                    1 => pp.f_b += d,
                    _ => pp.f_c += d,
                }
                pp.kernel(x)
            };
            for q in 0..3 {
                let fd = (bump(q, h) - bump(q, -h)) / (2.0 * h);
                let err = (fd - an[q + 1]).norm();
                assert!(
                    err <= 1e-6 * (1.0 + fd.norm()),
                    "x={x} q={q}: {fd} vs {}",
                    an[q + 1]
                );
            }
        }
    }

    #[test]
    fn support_covers_default_envelope() {
        let p = FbspParams::default();
        let x = p.support(1e-4);
        assert!(x >= 4.0 * 100.0 / PI);
        assert_eq!(x % SUPPORT_QUANTUM, 0.0);
    }

    #[test]
    fn scale_grid_validation() {
        assert!(ScaleGrid::new(vec![]).is_err());
        assert!(ScaleGrid::new(vec![0.2, 0.1]).is_err());
        let g = ScaleGrid::log_spaced(20.0, 7800.0, 64).unwrap();
        let f = g.pseudo_frequencies(1.0);
        assert!((f[0] - 7800.0).abs() < 1e-9 && (f[63] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn silence_gives_zero_grid_and_zero_grads() {
        let mut store = ParamStore::new();
        let wp = WaveletParams::register(&mut store, "w", FbspParams::default()).unwrap();
        let grid = ScaleGrid::log_spaced(500.0, 4000.0, 4).unwrap();
        let sig = vec![0.0; 256];
        let mut tape = Tape::new();
        let out = wavelet_on_tape(
            &mut tape,
            &store,
            &wp,
            &[&sig],
            16_000,
            &grid,
            32,
            Some(1e-4),
        )
        .unwrap();
        assert!(tape.value(out).iter().all(|v| *v == 0.0));
        let loss = tape.sum(out);
        tape.backward(loss, &mut store).unwrap();
        for id in wp.ids() {
            assert_eq!(store.get(id).grad().unwrap(), &[0.0]);
        }
    }

    #[test]
    fn clamp_keeps_parameters_valid() {
        let mut store = ParamStore::new();
        let wp = WaveletParams::register(&mut store, "w", FbspParams::default()).unwrap();
        store.get_mut(wp.m).values_mut()[0] = 0.2;
        store.get_mut(wp.f_b).values_mut()[0] = -1.0;
        wp.clamp(&mut store);
        let v = wp.values(&store);
        assert!(v.m >= MIN_ORDER && v.f_b > 0.0 && v.f_c > 0.0);
    }
}
