//! Truncated flux families and the right-hand side of the `N`-truncated system.
//!
//! For `0 <= i <= N`:
//!
//! ```text
//! Q1_i =  sum_{k=1}^{N-i} sum_{j=0}^{N-k} a(i+k,j;k) c_{i+k} c_j     (i formed as a donor remnant)
//! Q2_i = -sum_{k=1}^{N-i} sum_{j=k}^{N}   a(j,i;k)   c_j c_i         (i destroyed as a receiver)
//! Q3_i =  sum_{k=1}^{i}   sum_{j=k}^{N}   a(j,i-k;k) c_j c_{i-k}     (i formed as a receiver)
//! Q4_i = -sum_{k=1}^{i}   sum_{j=0}^{N-k} a(i,j;k)   c_j c_i         (i destroyed as a donor)
//! ```
//!
//! Empty sums are zero. In the non-isolated variant all four vanish at `i = 0`.
//!
//! Kernels whose support is limited (`k <= kbar`, or only `k = i` and `j = 0`
//! entries) are evaluated with collapsed sums; everything else costs `O(N^3)`.

use rayon::prelude::*;
use thiserror::Error;

use crate::kernels::{RateKernel, Support};
use crate::state::{ConcentrationState, Variant};
use crate::sum::CompensatedSum;

/// Above this truncation size the per-index loop runs on the rayon pool.
pub const PARALLEL_THRESHOLD: usize = 48;

#[derive(Debug, Error, PartialEq)]
pub enum FluxError {
    #[error("indices (q={q}, p={p}, k={k}) leave the truncation [0, {n}]")]
    IndexRange { q: usize, p: usize, k: usize, n: usize },
    #[error("weight sequence has {got} entries, expected N+1 = {expected}")]
    WeightLength { got: usize, expected: usize },
    #[error("weight g_{index} = {value} is not finite")]
    NonFiniteWeight { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Serial,
    Parallel,
    /// Parallel for `N >= PARALLEL_THRESHOLD`.
    #[default]
    Auto,
}

impl Parallelism {
    fn use_threads(self, n: usize) -> bool {
        match self {
            Parallelism::Serial => false,
            Parallelism::Parallel => true,
            Parallelism::Auto => n >= PARALLEL_THRESHOLD,
        }
    }
}

/// Per-index values of the four flux families.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxBreakdown {
    families: Vec<[f64; 4]>,
}

impl FluxBreakdown {
    pub fn at(&self, i: usize) -> [f64; 4] {
        self.families[i]
    }

    pub fn families(&self) -> &[[f64; 4]] {
        &self.families
    }

    pub fn n(&self) -> usize {
        self.families.len() - 1
    }

    /// `Q1_i + Q2_i + Q3_i + Q4_i` for every `i`.
    pub fn total(&self) -> Vec<f64> {
        self.families.iter().map(|q| q[0] + q[1] + q[2] + q[3]).collect()
    }

    /// `|Q1_i| + |Q2_i| + |Q3_i| + |Q4_i|`.
    pub fn gross(&self, i: usize) -> f64 {
        self.families[i].iter().map(|q| q.abs()).sum()
    }

    /// Largest single flux-family magnitude over all indices.
    pub fn max_magnitude(&self) -> f64 {
        self.families
            .iter()
            .flat_map(|q| q.iter())
            .fold(0.0_f64, |m, q| m.max(q.abs()))
    }
}

/// Weights `g_0..g_N` for weighted moments `sum g_i c_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSequence(Vec<f64>);

impl WeightSequence {
    pub fn new(g: Vec<f64>) -> Result<Self, FluxError> {
        if let Some((index, &value)) = g.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FluxError::NonFiniteWeight { index, value });
        }
        Ok(Self(g))
    }

    pub fn from_fn(n: usize, f: impl Fn(usize) -> f64) -> Result<Self, FluxError> {
        Self::new((0..=n).map(f).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Kernels with nonzero entries only at `k = i` (any `j`) or `j = 0` (any `k`).
#[inline]
fn whole_cluster_families(kernel: &RateKernel, c: &[f64], i: usize) -> [f64; 4] {
    let n = c.len() - 1;
    let c0 = c[0];

    let mut q1 = CompensatedSum::new();
    if i == 0 {
        for k in 1..=n {
            let mut s = CompensatedSum::new();
            for j in 1..=n - k {
                s.add(kernel.rate(k, j, k) * c[j]);
            }
            q1.add(c[k] * s.value());
        }
    }
    let mut frag = CompensatedSum::new();
    for k in 1..=n - i {
        frag.add(kernel.rate(i + k, 0, k) * c[i + k]);
    }
    q1.add(c0 * frag.value());

    let q2 = if i >= 1 {
        let mut s = CompensatedSum::new();
        for k in 1..=n - i {
            s.add(kernel.rate(k, i, k) * c[k]);
        }
        -c[i] * s.value()
    } else {
        let mut s = CompensatedSum::new();
        for k in 1..=n {
            for j in k..=n {
                s.add(kernel.rate(j, 0, k) * c[j]);
            }
        }
        -c0 * s.value()
    };

    if i == 0 {
        return [q1.value(), q2, 0.0, 0.0];
    }

    let mut q3 = CompensatedSum::new();
    for k in 1..i {
        q3.add(kernel.rate(k, i - k, k) * c[k] * c[i - k]);
    }
    let mut frag = CompensatedSum::new();
    for j in i..=n {
        frag.add(kernel.rate(j, 0, i) * c[j]);
    }
    q3.add(c0 * frag.value());

    let mut q4 = CompensatedSum::new();
    for j in 1..=n - i {
        q4.add(kernel.rate(i, j, i) * c[j]);
    }
    let mut frag = CompensatedSum::new();
    for k in 1..=i {
        frag.add(kernel.rate(i, 0, k));
    }
    q4.add(c0 * frag.value());

    [q1.value(), q2, q3.value(), -c[i] * q4.value()]
}

/// `sum_j a_j b_j` with four independent accumulators.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().min(b.len());
    let (a, b) = (&a[..len], &b[..len]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Kernel coefficients laid out for repeated evaluation at a fixed truncation `N`.
///
/// For exchange-type support the flux families reduce to the partial sums
///
/// ```text
/// D[p][k] = sum_{j=0}^{N-k} a(p,j;k) c_j      (donor p losing k)
/// R[q][k] = sum_{j=k}^{N}   a(j,q;k) c_j      (receiver q gaining k)
/// ```
///
/// with `Q1_i = sum_k c_{i+k} D[i+k][k]`, `Q2_i = -c_i sum_k R[i][k]`,
/// `Q3_i = sum_k c_{i-k} R[i-k][k]` and `Q4_i = -c_i sum_k D[i][k]`. When the
/// dense rows fit the memory budget each partial sum is a contiguous dot product.
pub struct FluxPlan<'a> {
    kernel: &'a RateKernel,
    n: usize,
    support: Support,
    kmax: usize,
    /// `donor[(p (kmax+1) + k)(N+1) + j] = a(p,j;k)` and
    /// `receiver[(q (kmax+1) + k)(N+1) + j] = a(j,q;k)`, zero off the truncated domain.
    rows: Option<(Vec<f64>, Vec<f64>)>,
}

impl<'a> FluxPlan<'a> {
    /// Plan with dense coefficient rows if they fit in `budget_bytes`.
    pub fn new(kernel: &'a RateKernel, n: usize, budget_bytes: usize) -> Self {
        let mut plan = Self::direct(kernel, n);
        if let Support::Exchange { .. } = plan.support {
            let w = n + 1;
            let len = w.checked_mul(plan.kmax + 1).and_then(|x| x.checked_mul(w));
            let fits = len
                .and_then(|l| l.checked_mul(2 * std::mem::size_of::<f64>()))
                .is_some_and(|b| b <= budget_bytes);
            if fits {
                plan.rows = Some(plan.dense_rows(len.unwrap_or(0)));
            }
        }
        plan
    }

    /// Plan that evaluates coefficients on the fly.
    pub fn direct(kernel: &'a RateKernel, n: usize) -> Self {
        let support = kernel.support();
        let kmax = match support {
            Support::Exchange { max_exchange } => max_exchange.min(n),
            Support::WholeClusterOrVoid => n,
        };
        Self {
            kernel,
            n,
            support,
            kmax,
            rows: None,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_dense(&self) -> bool {
        self.rows.is_some()
    }

    fn dense_rows(&self, len: usize) -> (Vec<f64>, Vec<f64>) {
        let (n, w, kw) = (self.n, self.n + 1, self.kmax + 1);
        let mut donor = vec![0.0; len];
        let mut receiver = vec![0.0; len];
        for p in 0..=n {
            for k in 1..=self.kmax {
                let base = (p * kw + k) * w;
                if k <= p {
                    for j in 0..=n - k {
                        donor[base + j] = self.kernel.rate(p, j, k);
                    }
                }
                if p + k <= n {
                    for j in k..=n {
                        receiver[base + j] = self.kernel.rate(j, p, k);
                    }
                }
            }
        }
        (donor, receiver)
    }

    /// Partial sums `D` and `R`, indexed `p (kmax+1) + k`.
    fn partial_sums(&self, c: &[f64], threads: bool) -> (Vec<f64>, Vec<f64>) {
        let (n, w, kw) = (self.n, self.n + 1, self.kmax + 1);
        let donor_row = |p: usize, out: &mut [f64]| {
            for k in 1..=self.kmax.min(p) {
                out[k] = match &self.rows {
                    Some((donor, _)) => dot(&donor[(p * kw + k) * w..][..=n - k], &c[..=n - k]),
                    None => (0..=n - k).map(|j| self.kernel.rate(p, j, k) * c[j]).sum(),
                };
            }
        };
        let receiver_row = |q: usize, out: &mut [f64]| {
            for k in 1..=self.kmax.min(n - q) {
                out[k] = match &self.rows {
                    Some((_, receiver)) => dot(&receiver[(q * kw + k) * w + k..][..=n - k], &c[k..]),
                    None => (k..=n).map(|j| self.kernel.rate(j, q, k) * c[j]).sum(),
                };
            }
        };
        let mut d = vec![0.0; w * kw];
        let mut r = vec![0.0; w * kw];
        if threads {
            d.par_chunks_mut(kw).enumerate().for_each(|(p, out)| donor_row(p, out));
            r.par_chunks_mut(kw).enumerate().for_each(|(q, out)| receiver_row(q, out));
        } else {
            d.chunks_mut(kw).enumerate().for_each(|(p, out)| donor_row(p, out));
            r.chunks_mut(kw).enumerate().for_each(|(q, out)| receiver_row(q, out));
        }
        (d, r)
    }

    /// Evaluates `f(i, [Q1_i, Q2_i, Q3_i, Q4_i])` for every `i`, writing into `out`.
    fn for_each_index<T, F>(&self, c: &[f64], variant: Variant, parallelism: Parallelism, out: &mut [T], f: F)
    where
        T: Send,
        F: Fn([f64; 4]) -> T + Sync,
    {
        assert_eq!(c.len(), self.n + 1, "state length must be N+1");
        assert_eq!(out.len(), self.n + 1, "output length must be N+1");
        let threads = parallelism.use_threads(self.n);
        let skip_void = variant == Variant::NonIsolated;
        match self.support {
            Support::Exchange { .. } => {
                let (d, r) = self.partial_sums(c, threads);
                let kw = self.kmax + 1;
                let families = |i: usize| {
                    if i == 0 && skip_void {
                        return [0.0; 4];
                    }
                    let upper = self.kmax.min(self.n - i);
                    let lower = self.kmax.min(i);
                    let mut q1 = CompensatedSum::new();
                    let mut q2 = CompensatedSum::new();
                    for k in 1..=upper {
                        q1.add(c[i + k] * d[(i + k) * kw + k]);
                        q2.add(r[i * kw + k]);
                    }
                    let mut q3 = CompensatedSum::new();
                    let mut q4 = CompensatedSum::new();
                    for k in 1..=lower {
                        q3.add(c[i - k] * r[(i - k) * kw + k]);
                        q4.add(d[i * kw + k]);
                    }
                    [q1.value(), -c[i] * q2.value(), q3.value(), -c[i] * q4.value()]
                };
                fill(out, threads, |i| f(families(i)));
            }
            Support::WholeClusterOrVoid => {
                let families = |i: usize| {
                    if i == 0 && skip_void {
                        [0.0; 4]
                    } else {
                        whole_cluster_families(self.kernel, c, i)
                    }
                };
                fill(out, threads, |i| f(families(i)));
            }
        }
    }

    pub fn breakdown(&self, c: &[f64], variant: Variant, parallelism: Parallelism) -> FluxBreakdown {
        let mut families = vec![[0.0; 4]; self.n + 1];
        self.for_each_index(c, variant, parallelism, &mut families, |q| q);
        FluxBreakdown { families }
    }

    pub fn rhs_into(&self, c: &[f64], variant: Variant, out: &mut [f64], parallelism: Parallelism) {
        self.for_each_index(c, variant, parallelism, out, |q| q[0] + q[1] + q[2] + q[3]);
    }
}

fn fill<T: Send>(out: &mut [T], threads: bool, f: impl Fn(usize) -> T + Sync) {
    if threads {
        out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
    } else {
        for (i, o) in out.iter_mut().enumerate() {
            *o = f(i);
        }
    }
}

pub fn flux_breakdown(kernel: &RateKernel, state: &ConcentrationState) -> FluxBreakdown {
    flux_breakdown_with(kernel, state.values(), state.variant(), Parallelism::Auto)
}

pub fn flux_breakdown_with(kernel: &RateKernel, c: &[f64], variant: Variant, parallelism: Parallelism) -> FluxBreakdown {
    FluxPlan::direct(kernel, c.len() - 1).breakdown(c, variant, parallelism)
}

/// Right-hand side of the truncated system.
pub fn rhs(kernel: &RateKernel, state: &ConcentrationState) -> Vec<f64> {
    let mut out = vec![0.0; state.values().len()];
    rhs_into(kernel, state.values(), state.variant(), &mut out, Parallelism::Auto);
    out
}

/// Writes the right-hand side for concentrations `c` into `out` (same length).
pub fn rhs_into(kernel: &RateKernel, c: &[f64], variant: Variant, out: &mut [f64], parallelism: Parallelism) {
    FluxPlan::direct(kernel, c.len() - 1).rhs_into(c, variant, out, parallelism);
}

/// Right-hand side by enumerating every truncated reaction
/// `<i> + <j> -> <i-k> + <j+k>` and applying its stoichiometry.
pub fn rhs_enumeration_oracle(kernel: &RateKernel, state: &ConcentrationState) -> Vec<f64> {
    let c = state.values();
    let n = state.n();
    let mut d = vec![0.0; n + 1];
    for k in 1..=n {
        for i in k..=n {
            for j in 0..=n - k {
                let r = kernel.rate(i, j, k) * c[i] * c[j];
                d[i] -= r;
                d[j] -= r;
                d[i - k] += r;
                d[j + k] += r;
            }
        }
    }
    if state.variant() == Variant::NonIsolated {
        d[0] = 0.0;
    }
    d
}

/// `d/dt sum g_i c_i` written as a single triple sum over reactions; the
/// non-isolated variant subtracts the `g_0` contribution of the frozen `c_0`.
pub fn weighted_moment_rate(kernel: &RateKernel, state: &ConcentrationState, g: &WeightSequence) -> Result<f64, FluxError> {
    let c = state.values();
    let n = state.n();
    let g = g.values();
    if g.len() != n + 1 {
        return Err(FluxError::WeightLength { got: g.len(), expected: n + 1 });
    }
    let mut acc = CompensatedSum::new();
    for k in 1..n {
        for i in k..=n {
            for j in 0..=n - k {
                let w = g[j + k] + g[i - k] - g[j] - g[i];
                acc.add(w * kernel.rate(i, j, k) * c[i] * c[j]);
            }
        }
    }
    if state.variant() == Variant::NonIsolated {
        let mut void_balance = CompensatedSum::new();
        for k in 1..=n {
            for j in 0..=n - k {
                void_balance.add(kernel.rate(k, j, k) * c[k] * c[j]);
            }
        }
        for k in 1..=n {
            for i in k..=n {
                void_balance.add(-kernel.rate(i, 0, k) * c[i] * c[0]);
            }
        }
        acc.add(-g[0] * void_balance.value());
    }
    Ok(acc.value())
}

/// Net rate `a(q,p;k) c_q c_p - a(p+k,q-k;k) c_{p+k} c_{q-k}` of the reversible pair
/// `<q> + <p> <-> <q-k> + <p+k>`.
pub fn balanced_net_rate(kernel: &RateKernel, state: &ConcentrationState, q: usize, p: usize, k: usize) -> Result<f64, FluxError> {
    let n = state.n();
    if k < 1 || k > q || q > n || p + k > n {
        return Err(FluxError::IndexRange { q, p, k, n });
    }
    Ok(net_rate(kernel, state.values(), q, p, k))
}

#[inline]
pub(crate) fn net_rate(kernel: &RateKernel, c: &[f64], q: usize, p: usize, k: usize) -> f64 {
    kernel.rate(q, p, k) * c[q] * c[p] - kernel.rate(p + k, q - k, k) * c[p + k] * c[q - k]
}
