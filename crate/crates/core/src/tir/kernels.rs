//! Reference implementations of the registered kernels.
//!
//! All kernels operate on raw little-endian byte views so they can be driven
//! identically by the serial interpreter, the runtime workers and tests.
//! Complex data is interleaved `(re, im)` `f32`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use super::{ElemOp, ElementKind, KernelSpec};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum KernelError {
    #[error("{kernel}: expected {expected} {side}(s), got {got}")]
    Arity {
        kernel: &'static str,
        side: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{kernel}: {what} is {got} bytes, expected {expected}")]
    Size {
        kernel: &'static str,
        what: String,
        expected: u64,
        got: u64,
    },
    #[error("{kernel}: {msg}")]
    Param { kernel: &'static str, msg: String },
    #[error("{kernel} is an I/O kernel without a compute model")]
    IoKernel { kernel: &'static str },
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct C32 {
    pub re: f32,
    pub im: f32,
}

impl C32 {
    pub const fn new(re: f32, im: f32) -> Self {
        Self { re, im }
    }

    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    pub fn norm_sqr(self) -> f32 {
        self.re * self.re + self.im * self.im
    }
}

impl Add for C32 {
    type Output = C32;
    fn add(self, o: C32) -> C32 {
        C32::new(self.re + o.re, self.im + o.im)
    }
}

impl Sub for C32 {
    type Output = C32;
    fn sub(self, o: C32) -> C32 {
        C32::new(self.re - o.re, self.im - o.im)
    }
}

impl Mul for C32 {
    type Output = C32;
    fn mul(self, o: C32) -> C32 {
        C32::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

pub fn bytes_to_complex(bytes: &[u8]) -> Vec<C32> {
    bytes
        .chunks_exact(8)
        .map(|c| {
            C32::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]),
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]),
            )
        })
        .collect()
}

pub fn complex_to_bytes(values: &[C32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

/// In-place iterative radix-2 decimation-in-time FFT. The inverse transform is
/// scaled by `1/n`.
///
/// Panics if `data.len()` is not a power of two.
pub fn fft_in_place(data: &mut [C32], inverse: bool) {
    let n = data.len();
    assert!(n.is_power_of_two(), "FFT length {n} is not a power of two");
    if n == 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            data.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let twiddles: Vec<C32> = (0..half)
            .map(|k| {
                let angle = sign * 2.0 * PI * k as f64 / len as f64;
                C32::new(angle.cos() as f32, angle.sin() as f32)
            })
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let u = data[start + k];
                let v = data[start + k + half] * twiddles[k];
                data[start + k] = u + v;
                data[start + k + half] = u - v;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f32;
        for v in data.iter_mut() {
            v.re *= scale;
            v.im *= scale;
        }
    }
}

/// Row-major complex `C = A (m x k) * B (k x n)`.
pub fn gemm(a: &[C32], b: &[C32], m: usize, k: usize, n: usize) -> Vec<C32> {
    let mut c = vec![C32::default(); m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = C32::default();
            for p in 0..k {
                acc = acc + a[i * k + p] * b[p * n + j];
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// 802.11-style scrambler, generator `x^7 + x^4 + 1`, bits processed LSB first.
pub fn scramble(input: &[u8], seed: u8) -> Vec<u8> {
    let mut state = seed & 0x7f;
    input
        .iter()
        .map(|&byte| {
            let mut out = 0u8;
            for bit in 0..8 {
                let feedback = ((state >> 6) ^ (state >> 3)) & 1;
                state = ((state << 1) | feedback) & 0x7f;
                out |= (((byte >> bit) & 1) ^ feedback) << bit;
            }
            out
        })
        .collect()
}

/// Block interleaver: writes row-major `rows x cols`, reads column-major.
pub fn interleave(input: &[u8], cols: usize) -> Vec<u8> {
    let rows = input.len() / cols;
    let mut out = vec![0u8; input.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = input[r * cols + c];
        }
    }
    out
}

fn expect_arity(
    kernel: &'static str,
    side: &'static str,
    expected: usize,
    got: usize,
) -> Result<(), KernelError> {
    if expected == got {
        Ok(())
    } else {
        Err(KernelError::Arity {
            kernel,
            side,
            expected,
            got,
        })
    }
}

fn expect_len(
    kernel: &'static str,
    what: &str,
    expected: u64,
    got: u64,
) -> Result<(), KernelError> {
    if expected == got {
        Ok(())
    } else {
        Err(KernelError::Size {
            kernel,
            what: what.to_string(),
            expected,
            got,
        })
    }
}

fn param(kernel: &'static str, msg: impl Into<String>) -> KernelError {
    KernelError::Param {
        kernel,
        msg: msg.into(),
    }
}

impl KernelSpec {
    /// Checks parameters and the byte lengths of the read and write operands.
    pub fn check_io(&self, reads: &[u64], writes: &[u64]) -> Result<(), KernelError> {
        let id = self.kernel_id();
        match *self {
            KernelSpec::Fft { points, .. } => {
                if points == 0 || !points.is_power_of_two() {
                    return Err(param(
                        id,
                        format!("point count {points} is not a power of two"),
                    ));
                }
                expect_arity(id, "read", 1, reads.len())?;
                expect_arity(id, "write", 1, writes.len())?;
                expect_len(id, "input", points as u64 * 8, reads[0])?;
                expect_len(id, "output", points as u64 * 8, writes[0])
            }
            KernelSpec::Gemm { m, k, n } => {
                if m == 0 || k == 0 || n == 0 {
                    return Err(param(id, "zero matrix dimension"));
                }
                expect_arity(id, "read", 2, reads.len())?;
                expect_arity(id, "write", 1, writes.len())?;
                expect_len(id, "left operand", m as u64 * k as u64 * 8, reads[0])?;
                expect_len(id, "right operand", k as u64 * n as u64 * 8, reads[1])?;
                expect_len(id, "output", m as u64 * n as u64 * 8, writes[0])
            }
            KernelSpec::Scrambler { seed } => {
                if seed & 0x7f == 0 {
                    return Err(param(id, "scrambler seed must be a non-zero 7-bit value"));
                }
                expect_arity(id, "read", 1, reads.len())?;
                expect_arity(id, "write", 1, writes.len())?;
                expect_len(id, "output", reads[0], writes[0])
            }
            KernelSpec::Interleaver { cols } => {
                expect_arity(id, "read", 1, reads.len())?;
                expect_arity(id, "write", 1, writes.len())?;
                if cols == 0 || !reads[0].is_multiple_of(cols as u64) {
                    return Err(param(
                        id,
                        format!(
                            "input length {} is not a multiple of {cols} columns",
                            reads[0]
                        ),
                    ));
                }
                expect_len(id, "output", reads[0], writes[0])
            }
            KernelSpec::Modulate => {
                expect_arity(id, "read", 1, reads.len())?;
                expect_arity(id, "write", 1, writes.len())?;
                expect_len(id, "output", reads[0] * 8 * 8, writes[0])
            }
            KernelSpec::PilotInsert {
                out_len,
                pilot_every,
            } => {
                expect_arity(id, "read", 1, reads.len())?;
                expect_arity(id, "write", 1, writes.len())?;
                if pilot_every == 0 {
                    return Err(param(id, "pilot spacing must be positive"));
                }
                if !reads[0].is_multiple_of(8) {
                    return Err(param(id, "input is not a whole number of complex samples"));
                }
                let slots = out_len as u64 - out_len as u64 / pilot_every as u64;
                if reads[0] / 8 > slots {
                    return Err(param(
                        id,
                        format!("{} data samples exceed {slots} data slots", reads[0] / 8),
                    ));
                }
                expect_len(id, "output", out_len as u64 * 8, writes[0])
            }
            KernelSpec::Correlate => {
                expect_arity(id, "read", 2, reads.len())?;
                expect_arity(id, "write", 1, writes.len())?;
                complex_len(id, reads[0])?;
                expect_len(id, "reference", reads[0], reads[1])?;
                expect_len(id, "output", reads[0], writes[0])
            }
            KernelSpec::Elemwise { op } => {
                expect_arity(id, "read", op.arity(), reads.len())?;
                expect_arity(id, "write", 1, writes.len())?;
                complex_len(id, reads[0])?;
                for r in &reads[1..] {
                    expect_len(id, "operand", reads[0], *r)?;
                }
                expect_len(id, "output", reads[0], writes[0])
            }
            KernelSpec::ReadData { .. } => {
                expect_arity(id, "read", 0, reads.len())?;
                expect_arity(id, "write", 1, writes.len())
            }
            KernelSpec::WriteData { .. } => {
                expect_arity(id, "read", 1, reads.len())?;
                expect_arity(id, "write", 0, writes.len())
            }
        }
    }
}

fn complex_len(kernel: &'static str, len: u64) -> Result<(), KernelError> {
    if len.is_multiple_of(8) {
        Ok(())
    } else {
        Err(param(
            kernel,
            format!("{len} bytes is not a whole number of complex samples"),
        ))
    }
}

/// Runs a compute kernel on byte views of its read operands and returns one
/// byte vector per write operand.
pub fn kernel_exec(
    spec: &KernelSpec,
    inputs: &[&[u8]],
    write_lens: &[u64],
) -> Result<Vec<Vec<u8>>, KernelError> {
    let read_lens: Vec<u64> = inputs.iter().map(|i| i.len() as u64).collect();
    spec.check_io(&read_lens, write_lens)?;
    let out = match *spec {
        KernelSpec::Fft { inverse, .. } => {
            let mut data = bytes_to_complex(inputs[0]);
            fft_in_place(&mut data, inverse);
            complex_to_bytes(&data)
        }
        KernelSpec::Gemm { m, k, n } => {
            let a = bytes_to_complex(inputs[0]);
            let b = bytes_to_complex(inputs[1]);
            complex_to_bytes(&gemm(&a, &b, m as usize, k as usize, n as usize))
        }
        KernelSpec::Scrambler { seed } => scramble(inputs[0], seed),
        KernelSpec::Interleaver { cols } => interleave(inputs[0], cols as usize),
        KernelSpec::Modulate => {
            let samples: Vec<C32> = inputs[0]
                .iter()
                .flat_map(|&byte| {
                    (0..8).map(move |bit| if (byte >> bit) & 1 == 1 { 1.0 } else { -1.0 })
                })
                .map(|re| C32::new(re, 0.0))
                .collect();
            complex_to_bytes(&samples)
        }
        KernelSpec::PilotInsert {
            out_len,
            pilot_every,
        } => {
            let data = bytes_to_complex(inputs[0]);
            let mut next = data.iter();
            let out: Vec<C32> = (0..out_len)
                .map(|i| {
                    if i % pilot_every == pilot_every - 1 {
                        C32::new(1.0, 0.0)
                    } else {
                        next.next().copied().unwrap_or_default()
                    }
                })
                .collect();
            complex_to_bytes(&out)
        }
        KernelSpec::Correlate => {
            let x = bytes_to_complex(inputs[0]);
            let y = bytes_to_complex(inputs[1]);
            let z: Vec<C32> = x.iter().zip(&y).map(|(a, b)| *a * b.conj()).collect();
            complex_to_bytes(&z)
        }
        KernelSpec::Elemwise { op } => {
            let x = bytes_to_complex(inputs[0]);
            let z: Vec<C32> = match op {
                ElemOp::Add | ElemOp::Sub | ElemOp::Mul => {
                    let y = bytes_to_complex(inputs[1]);
                    x.iter()
                        .zip(&y)
                        .map(|(a, b)| match op {
                            ElemOp::Add => *a + *b,
                            ElemOp::Sub => *a - *b,
                            _ => *a * *b,
                        })
                        .collect()
                }
                ElemOp::Mag2 => x.iter().map(|a| C32::new(a.norm_sqr(), 0.0)).collect(),
                ElemOp::Conj => x.iter().map(|a| a.conj()).collect(),
                ElemOp::Copy => x,
            };
            complex_to_bytes(&z)
        }
        KernelSpec::ReadData { .. } | KernelSpec::WriteData { .. } => {
            return Err(KernelError::IoKernel {
                kernel: spec.kernel_id(),
            })
        }
    };
    Ok(vec![out])
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1330_11eb);
    x ^ (x >> 31)
}

/// Deterministic input source standing in for reading a data file.
///
/// The content of byte `offset + i` of the destination depends only on
/// `(seed, stream, offset + i)`, so the same read produces the same bytes no
/// matter when or where it runs. Float lanes take values in `[-1, 1)` with 24
/// significant bits.
pub fn read_data(seed: u64, stream: u32, offset: u64, len: u64, kind: ElementKind) -> Vec<u8> {
    let key = splitmix64(seed) ^ ((stream as u64) << 40);
    match kind {
        ElementKind::Byte => (0..len)
            .map(|i| splitmix64(key ^ (offset + i)) as u8)
            .collect(),
        ElementKind::Float32 | ElementKind::Complex32 => {
            let lanes = len / 4;
            let first = offset / 4;
            let mut out = Vec::with_capacity(len as usize);
            for lane in first..first + lanes {
                let bits = splitmix64(key ^ lane) >> 40;
                let value = bits as f32 / (1u32 << 23) as f32 - 1.0;
                out.extend_from_slice(&value.to_le_bytes());
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_dft(x: &[C32], inverse: bool) -> Vec<(f64, f64)> {
        let n = x.len();
        let sign = if inverse { 1.0 } else { -1.0 };
        (0..n)
            .map(|k| {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (t, v) in x.iter().enumerate() {
                    let a = sign * 2.0 * PI * ((k * t) % n) as f64 / n as f64;
                    re += v.re as f64 * a.cos() - v.im as f64 * a.sin();
                    im += v.re as f64 * a.sin() + v.im as f64 * a.cos();
                }
                if inverse {
                    (re / n as f64, im / n as f64)
                } else {
                    (re, im)
                }
            })
            .collect()
    }

    fn relative_error(got: &[C32], want: &[(f64, f64)]) -> f64 {
        let mut err = 0.0;
        let mut norm = 0.0;
        for (g, w) in got.iter().zip(want) {
            err += (g.re as f64 - w.0).powi(2) + (g.im as f64 - w.1).powi(2);
            norm += w.0 * w.0 + w.1 * w.1;
        }
        (err / norm.max(f64::MIN_POSITIVE)).sqrt()
    }

    #[test]
    fn impulse_has_flat_spectrum() {
        for n in [1usize, 2, 8, 64, 512, 2048] {
            let mut x = vec![C32::default(); n];
            x[0] = C32::new(1.0, 0.0);
            fft_in_place(&mut x, false);
            assert!(x.iter().all(|v| *v == C32::new(1.0, 0.0)), "n = {n}");
        }
    }

    #[test]
    fn fft8_of_ones_matches_direct_dft() {
        let ones = vec![C32::new(1.0, 0.0); 8];
        let oracle = direct_dft(&ones, false);
        let frozen = [
            (8.0, 0.0),
            (0.0, 0.0),
            (0.0, 0.0),
            (0.0, 0.0),
            (0.0, 0.0),
            (0.0, 0.0),
            (0.0, 0.0),
            (0.0, 0.0),
        ];
        for (o, f) in oracle.iter().zip(frozen) {
            assert!((o.0 - f.0).abs() < 1e-9 && (o.1 - f.1).abs() < 1e-9);
        }
        let out = kernel_exec(
            &KernelSpec::Fft {
                points: 8,
                inverse: false,
            },
            &[&complex_to_bytes(&ones)],
            &[64],
        )
        .unwrap();
        let got = bytes_to_complex(&out[0]);
        let expected: Vec<C32> = frozen
            .iter()
            .map(|&(re, im)| C32::new(re as f32, im as f32))
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn fft_matches_direct_dft_on_random_inputs() {
        let mut state = 7u64;
        let mut next = || {
            state = splitmix64(state);
            (state >> 40) as f32 / (1u32 << 23) as f32 - 1.0
        };
        for trial in 0..100 {
            let n = 1usize << (trial % 10);
            let inverse = trial % 3 == 0;
            let x: Vec<C32> = (0..n).map(|_| C32::new(next(), next())).collect();
            let mut y = x.clone();
            fft_in_place(&mut y, inverse);
            let err = relative_error(&y, &direct_dft(&x, inverse));
            assert!(err < 1e-4, "trial {trial}: n = {n}, relative error {err}");
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        let x: Vec<C32> = (0..256)
            .map(|i| C32::new((i as f32).sin(), (i as f32 * 0.5).cos()))
            .collect();
        let mut y = x.clone();
        fft_in_place(&mut y, false);
        fft_in_place(&mut y, true);
        for (a, b) in x.iter().zip(&y) {
            assert!((a.re - b.re).abs() < 1e-5 && (a.im - b.im).abs() < 1e-5);
        }
    }

    #[test]
    fn gemm_identity_left_operand_is_noop() {
        let (m, n) = (4usize, 64usize);
        let mut eye = vec![C32::default(); m * m];
        for i in 0..m {
            eye[i * m + i] = C32::new(1.0, 0.0);
        }
        let b: Vec<C32> = (0..m * n)
            .map(|i| C32::new(i as f32 * 0.25, -(i as f32)))
            .collect();
        let spec = KernelSpec::Gemm { m: 4, k: 4, n: 64 };
        let out = kernel_exec(
            &spec,
            &[&complex_to_bytes(&eye), &complex_to_bytes(&b)],
            &[(m * n * 8) as u64],
        )
        .unwrap();
        assert_eq!(bytes_to_complex(&out[0]), b);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let spec = KernelSpec::Fft {
            points: 8,
            inverse: false,
        };
        let err = kernel_exec(&spec, &[&[0u8; 56]], &[64]).unwrap_err();
        assert!(matches!(err, KernelError::Size { .. }), "{err}");
        let err = KernelSpec::Fft {
            points: 12,
            inverse: false,
        }
        .check_io(&[96], &[96])
        .unwrap_err();
        assert!(matches!(err, KernelError::Param { .. }));
    }

    #[test]
    fn scrambler_is_an_involution() {
        let data: Vec<u8> = (0..80u8).map(|i| i.wrapping_mul(37)).collect();
        let once = scramble(&data, 0x5d);
        assert_ne!(once, data);
        assert_eq!(scramble(&once, 0x5d), data);
    }

    #[test]
    fn interleaver_transposes() {
        let data: Vec<u8> = (0..6).collect();
        assert_eq!(interleave(&data, 3), vec![0, 3, 1, 4, 2, 5]);
    }

    #[test]
    fn pilots_land_on_every_nth_slot() {
        let data = complex_to_bytes(&[C32::new(2.0, 0.0), C32::new(3.0, 0.0), C32::new(4.0, 0.0)]);
        let spec = KernelSpec::PilotInsert {
            out_len: 8,
            pilot_every: 4,
        };
        let out = bytes_to_complex(&kernel_exec(&spec, &[&data], &[64]).unwrap()[0]);
        let re: Vec<f32> = out.iter().map(|c| c.re).collect();
        assert_eq!(re, vec![2.0, 3.0, 4.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn read_data_depends_only_on_position() {
        let whole = read_data(3, 1, 0, 64, ElementKind::Complex32);
        let tail = read_data(3, 1, 32, 32, ElementKind::Complex32);
        assert_eq!(&whole[32..], &tail[..]);
        assert_ne!(read_data(4, 1, 0, 64, ElementKind::Complex32), whole);
    }
}
