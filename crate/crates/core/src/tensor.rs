//! Dense row-major tensors in software-emulated half or single precision.
//!
//! Half values are IEEE 754 binary16 with round-to-nearest-even on every
//! conversion from single. Arithmetic on half operands is carried out in
//! single precision and rounded once per element, which is the correctly
//! rounded binary16 result for add, mul and sqrt.
//!
//! There is no broadcasting: operand shapes must match exactly. The few
//! row-wise operations the training engine needs (`add_row_bias`,
//! `sum_rows`) are explicit.

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Half,
    Single,
}

impl DType {
    pub fn size_bytes(self) -> usize {
        match self {
            DType::Half => 2,
            DType::Single => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Buffer {
    Half(Vec<f16>),
    Single(Vec<f32>),
}

impl Buffer {
    fn len(&self) -> usize {
        match self {
            Buffer::Half(v) => v.len(),
            Buffer::Single(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Buffer,
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return dim_err(format!("shape {shape:?} must have positive extents"));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return dim_err(format!(
            "shape {shape:?} holds {n} elements, buffer has {len}"
        ));
    }
    Ok(())
}

impl Tensor {
    pub fn from_f16(shape: &[usize], data: Vec<f16>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self {
            shape: shape.to_vec(),
            data: Buffer::Half(data),
        })
    }

    pub fn from_f32(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self {
            shape: shape.to_vec(),
            data: Buffer::Single(data),
        })
    }

    /// Builds a tensor of `dtype` from single-precision values, rounding to
    /// nearest-even when `dtype` is half.
    pub fn from_values(shape: &[usize], values: &[f32], dtype: DType) -> Result<Self> {
        match dtype {
            DType::Single => Self::from_f32(shape, values.to_vec()),
            DType::Half => {
                Self::from_f16(shape, values.iter().map(|&v| f16::from_f32(v)).collect())
            }
        }
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Result<Self> {
        let n = shape.iter().product();
        match dtype {
            DType::Half => Self::from_f16(shape, vec![f16::ZERO; n]),
            DType::Single => Self::from_f32(shape, vec![0.0; n]),
        }
    }

    pub fn identity(n: usize, dtype: DType) -> Result<Self> {
        let mut v = vec![0.0f32; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        Self::from_values(&[n, n], &v, dtype)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            Buffer::Half(_) => DType::Half,
            Buffer::Single(_) => DType::Single,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.len() == 0
    }

    pub fn size_bytes(&self) -> usize {
        self.len() * self.dtype().size_bytes()
    }

    pub fn buffer(&self) -> &Buffer {
        &self.data
    }

    pub fn as_f16(&self) -> Option<&[f16]> {
        match &self.data {
            Buffer::Half(v) => Some(v),
            Buffer::Single(_) => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            Buffer::Single(v) => Some(v),
            Buffer::Half(_) => None,
        }
    }

    /// Element values widened to single precision (exact for half).
    pub fn to_f32_vec(&self) -> Vec<f32> {
        match &self.data {
            Buffer::Half(v) => v.iter().map(|x| x.to_f32()).collect(),
            Buffer::Single(v) => v.clone(),
        }
    }

    pub fn get_f32(&self, i: usize) -> f32 {
        match &self.data {
            Buffer::Half(v) => v[i].to_f32(),
            Buffer::Single(v) => v[i],
        }
    }

    /// Bitwise equality of shape, dtype and every element.
    pub fn bits_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (Buffer::Half(a), Buffer::Half(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Buffer::Single(a), Buffer::Single(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape, self.len())?;
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn dims2(&self, what: &str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => dim_err(format!("{what}: expected a 2-D tensor, got shape {s:?}")),
        }
    }
}

/// Applies `f` per element in the tensor's precision.
fn map1(t: &Tensor, f: impl Fn(f32) -> f32) -> Tensor {
    let data = match &t.data {
        Buffer::Half(v) => Buffer::Half(v.iter().map(|x| f16::from_f32(f(x.to_f32()))).collect()),
        Buffer::Single(v) => Buffer::Single(v.iter().map(|&x| f(x)).collect()),
    };
    Tensor {
        shape: t.shape.clone(),
        data,
    }
}

fn map2(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
    if a.shape != b.shape {
        return dim_err(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape, b.shape
        ));
    }
    let data = match (&a.data, &b.data) {
        (Buffer::Half(x), Buffer::Half(y)) => Buffer::Half(
            x.iter()
                .zip(y)
                .map(|(p, q)| f16::from_f32(f(p.to_f32(), q.to_f32())))
                .collect(),
        ),
        (Buffer::Single(x), Buffer::Single(y)) => {
            Buffer::Single(x.iter().zip(y).map(|(&p, &q)| f(p, q)).collect())
        }
        _ => return dim_err(format!("{what}: operand dtypes differ")),
    };
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

/// Matrix product of two same-precision 2-D tensors.
///
/// Every output element accumulates its products in single precision in
/// ascending `k` order; half outputs are rounded once at the end.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul lhs")?;
    let (k2, n) = b.dims2("matmul rhs")?;
    if k != k2 {
        return dim_err(format!("matmul: inner dimensions {k} and {k2} differ"));
    }
    if a.dtype() != b.dtype() {
        return dim_err("matmul: operand dtypes differ");
    }
    let lhs = a.to_f32_vec();
    let rhs = b.to_f32_vec();
    let mut acc = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0f32;
            for l in 0..k {
                s += lhs[i * k + l] * rhs[l * n + j];
            }
            acc[i * n + j] = s;
        }
    }
    Tensor::from_values(&[m, n], &acc, a.dtype())
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2("transpose")?;
    let data = match &a.data {
        Buffer::Half(v) => Buffer::Half((0..r * c).map(|i| v[(i % r) * c + i / r]).collect()),
        Buffer::Single(v) => Buffer::Single((0..r * c).map(|i| v[(i % r) * c + i / r]).collect()),
    };
    Ok(Tensor {
        shape: vec![c, r],
        data,
    })
}

/// Precision conversion. Single to half rounds to nearest-even and
/// overflows to infinity; half to single is exact.
pub fn cast(t: &Tensor, dtype: DType) -> Tensor {
    let data = match (&t.data, dtype) {
        (Buffer::Half(v), DType::Single) => Buffer::Single(v.iter().map(|x| x.to_f32()).collect()),
        (Buffer::Single(v), DType::Half) => {
            Buffer::Half(v.iter().map(|&x| f16::from_f32(x)).collect())
        }
        (d, _) => d.clone(),
    };
    Tensor {
        shape: t.shape.clone(),
        data,
    }
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    map2(a, b, "add", |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    map2(a, b, "sub", |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    map2(a, b, "mul", |x, y| x * y)
}

/// Multiplies every element by `factor` (factor rounded to the tensor's
/// precision first).
pub fn scale(a: &Tensor, factor: f32) -> Tensor {
    let factor = match a.dtype() {
        DType::Half => f16::from_f32(factor).to_f32(),
        DType::Single => factor,
    };
    map1(a, |x| x * factor)
}

pub fn sqrt(a: &Tensor) -> Tensor {
    map1(a, f32::sqrt)
}

/// Element-wise `a > b` as 1/0 in the operand precision.
pub fn greater(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    map2(a, b, "greater", |x, y| if x > y { 1.0 } else { 0.0 })
}

pub fn relu(a: &Tensor) -> Tensor {
    map1(a, |x| if x > 0.0 { x } else { 0.0 })
}

/// Gradient of ReLU: `grad` where `pre > 0`, zero elsewhere.
pub fn relu_backward(grad: &Tensor, pre: &Tensor) -> Result<Tensor> {
    let zero = Tensor::zeros(pre.shape(), pre.dtype())?;
    mul(grad, &greater(pre, &zero)?)
}

/// Adds a length-`N` row vector to every row of an `M x N` matrix.
pub fn add_row_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = x.dims2("add_row_bias")?;
    if bias.len() != n || x.dtype() != bias.dtype() {
        return dim_err(format!(
            "add_row_bias: bias {:?} does not match {n} columns",
            bias.shape
        ));
    }
    let xs = x.to_f32_vec();
    let bs = bias.to_f32_vec();
    let out: Vec<f32> = (0..m * n).map(|i| xs[i] + bs[i % n]).collect();
    Tensor::from_values(&[m, n], &out, x.dtype())
}

/// Column sums of an `M x N` matrix, accumulated in single precision in row
/// order and rounded once.
pub fn sum_rows(x: &Tensor) -> Result<Tensor> {
    let (m, n) = x.dims2("sum_rows")?;
    let xs = x.to_f32_vec();
    let mut acc = vec![0.0f32; n];
    for i in 0..m {
        for j in 0..n {
            acc[j] += xs[i * n + j];
        }
    }
    Tensor::from_values(&[n], &acc, x.dtype())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    /// Bit-level binary16 round-to-nearest-even, computed in f64 without
    /// touching the `half` crate.
    fn rne_oracle(x: f32) -> u16 {
        let sign: u16 = if x.is_sign_negative() { 0x8000 } else { 0 };
        if x.is_nan() {
            return 0x7e00;
        }
        let a = (x as f64).abs();
        if a.is_infinite() {
            return sign | 0x7c00;
        }
        let min_normal = 2f64.powi(-14);
        if a < min_normal {
            let q = (a / 2f64.powi(-24)).round_ties_even() as u16;
            return sign | q;
        }
        let mut e = a.log2().floor() as i32;
        // guard log2 rounding at exact powers of two
        if 2f64.powi(e) > a {
            e -= 1;
        }
        if 2f64.powi(e + 1) <= a {
            e += 1;
        }
        let mut m = (a / 2f64.powi(e - 10)).round_ties_even() as u32;
        if m == 2048 {
            m = 1024;
            e += 1;
        }
        if e + 15 >= 31 {
            return sign | 0x7c00;
        }
        sign | (((e + 15) as u16) << 10) | (m - 1024) as u16
    }

    fn half(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::from_values(shape, v, DType::Half).unwrap()
    }

    #[test]
    fn matmul_scalar() {
        let c = matmul(&half(&[1, 1], &[2.0]), &half(&[1, 1], &[3.0])).unwrap();
        assert_eq!(c.to_f32_vec(), vec![6.0]);
    }

    #[test]
    fn matmul_identity() {
        let b = half(&[2, 3], &[0.1, -2.5, 3.0, 7.25, 1e-3, 0.0]);
        let c = matmul(&Tensor::identity(2, DType::Half).unwrap(), &b).unwrap();
        assert!(c.bits_eq(&b));
        // a +0 accumulator turns -0 into +0, which is still numerically equal
        let nz = half(&[1, 1], &[-0.0]);
        let c = matmul(&Tensor::identity(1, DType::Half).unwrap(), &nz).unwrap();
        assert_eq!(c.to_f32_vec(), nz.to_f32_vec());
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = half(&[2, 3], &[0.0; 6]);
        assert!(matches!(matmul(&a, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn cast_examples() {
        let s = Tensor::from_f32(&[3], vec![1.0, 2049.0, 70000.0]).unwrap();
        let h = cast(&s, DType::Half);
        assert_eq!(h.to_f32_vec()[..2], [1.0, 2048.0]);
        assert!(h.to_f32_vec()[2].is_infinite());
        assert_eq!(rne_oracle(2049.0), f16::from_f32(2048.0).to_bits());
        let back = cast(&half(&[1], &[0.5]), DType::Single);
        assert_eq!(back.as_f32().unwrap(), &[0.5]);
    }

    #[test]
    fn cast_roundtrip_exhaustive() {
        for bits in 0..=u16::MAX {
            let h = f16::from_bits(bits);
            if !h.is_finite() {
                continue;
            }
            let t = Tensor::from_f16(&[1], vec![h]).unwrap();
            let rt = cast(&cast(&t, DType::Single), DType::Half);
            assert_eq!(rt.as_f16().unwrap()[0].to_bits(), bits);
        }
    }

    #[test]
    fn elementwise_examples() {
        let a = half(&[2], &[1.0, 2.0]);
        let b = half(&[2], &[3.0, 4.0]);
        assert_eq!(add(&a, &b).unwrap().to_f32_vec(), vec![4.0, 6.0]);
        assert_eq!(
            scale(&half(&[2], &[2.0, 4.0]), 0.5).to_f32_vec(),
            vec![1.0, 2.0]
        );
        assert_eq!(sqrt(&half(&[1], &[4.0])).to_f32_vec(), vec![2.0]);
        let s = Tensor::from_f32(&[1], vec![4.0]).unwrap();
        assert_eq!(sqrt(&s).as_f32().unwrap(), &[2.0]);
        assert!(matches!(
            add(&a, &half(&[1], &[0.0])),
            Err(Error::Dimension(_))
        ));
        assert_eq!(greater(&a, &b).unwrap().to_f32_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn row_ops() {
        let x = half(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = half(&[2], &[10.0, 20.0]);
        assert_eq!(
            add_row_bias(&x, &b).unwrap().to_f32_vec(),
            vec![11.0, 22.0, 13.0, 24.0]
        );
        assert_eq!(sum_rows(&x).unwrap().to_f32_vec(), vec![4.0, 6.0]);
        assert_eq!(
            transpose(&x).unwrap().to_f32_vec(),
            vec![1.0, 3.0, 2.0, 4.0]
        );
    }

    fn matmul_oracle(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<u16> {
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0f32;
                for l in 0..k {
                    s += a[i * k + l] * b[l * n + j];
                }
                out.push(rne_oracle(s));
            }
        }
        out
    }

    fn half_values(n: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-8.0f32..8.0, n)
            .prop_map(|v| v.into_iter().map(|x| f16::from_f32(x).to_f32()).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn matmul_matches_scalar_oracle(
            (m, k, n, a, b) in (1usize..=8, 1usize..=8, 1usize..=8)
                .prop_flat_map(|(m, k, n)| (Just(m), Just(k), Just(n), half_values(m * k), half_values(k * n)))
        ) {
            let ta = half(&[m, k], &a);
            let tb = half(&[k, n], &b);
            let c = matmul(&ta, &tb).unwrap();
            let bits: Vec<u16> = c.as_f16().unwrap().iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(bits, matmul_oracle(&a, &b, m, k, n));
        }

        #[test]
        fn half_conversion_matches_rne_oracle(x in any::<f32>().prop_filter("finite", |x| x.is_finite())) {
            prop_assert_eq!(f16::from_f32(x).to_bits(), rne_oracle(x));
        }

        #[test]
        fn ops_are_pure(v in half_values(16)) {
            let t = half(&[4, 4], &v);
            prop_assert!(matmul(&t, &t).unwrap().bits_eq(&matmul(&t, &t).unwrap()));
        }
    }
}
