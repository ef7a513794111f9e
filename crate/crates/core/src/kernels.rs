//! Rate-coefficient families `a(i,j;k)`.
//!
//! `a(i,j;k)` is the rate at which a chunk of size `k` detaches from an
//! `i`-cluster and attaches to a `j`-cluster, defined for `1 <= k <= i` and
//! `j >= 0`. Entries `a(p,0;p)` describe `<p> + <0> -> <0> + <p>`, which changes
//! nothing; they are forced to zero at evaluation time for every built-in
//! kernel.
//!
//! Besides evaluation this module provides two report-producing checks:
//! [`audit_structure`] (nonnegativity, the null rule and the two symmetry
//! relations) and [`certify_bound`] (verification of a supplied growth-bound
//! certificate `(C, Q, q_{i,k}, alpha)`).

use std::collections::HashMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rate depending on a pair of cluster sizes.
pub type PairRate = Arc<dyn Fn(usize, usize) -> f64 + Send + Sync>;
/// Rate depending on the full `(i, j, k)` triple.
pub type TripleRate = Arc<dyn Fn(usize, usize, usize) -> f64 + Send + Sync>;

/// Memory budget for [`RateKernel::tabulate`] when none is configured.
pub const DEFAULT_TABLE_BUDGET_BYTES: usize = 64 << 20;

/// Relative slack used by [`certify_bound`] comparisons.
const CERTIFY_SLACK: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("index triple ({i},{j},{k}) outside the domain 1 <= k <= i")]
    Domain { i: usize, j: usize, k: usize },
    #[error("bath concentration must be positive and finite, got {0}")]
    Bath(f64),
    #[error("table kernel line {line}: {reason}")]
    Table { line: u64, reason: String },
    #[error("invalid certificate: {0}")]
    Certificate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sparse coefficient table; missing entries are zero.
#[derive(Debug, Clone, Default)]
pub struct SparseTable {
    entries: HashMap<(usize, usize, usize), f64>,
}

impl SparseTable {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn max_exchange(&self) -> Option<usize> {
        self.entries.keys().map(|&(_, _, k)| k).max()
    }
}

/// Dense `(cap+1)^3` table of raw values, with the original form used beyond `cap`.
#[derive(Clone)]
pub struct DenseTable {
    cap: usize,
    values: Vec<f64>,
    fallback: Box<KernelForm>,
}

impl DenseTable {
    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let w = self.cap + 1;
        (i * w + j) * w + k
    }
}

/// How the coefficients are represented.
#[derive(Clone)]
pub enum KernelForm {
    /// Arbitrary closed form over `(i, j, k)`.
    Closed(TripleRate),
    /// Explicit entries, zero elsewhere.
    Table(SparseTable),
    /// Precomputed values up to a size cap.
    Dense(DenseTable),
    /// `a(i,j;k) = K(i,j)` for `k = 1`, zero otherwise.
    SingleExchange(PairRate),
    /// `a(i,j;k) = A(i,j)` for `k = i`, zero otherwise.
    WholeCluster(PairRate),
    /// Coagulation entries `a(i,j;i) = coag(i,j)/2` (`j >= 1`) and fragmentation
    /// entries `a(i,0;k) = frag(i-k,k)/(2 bath)` (`k < i`).
    CoagFrag {
        coag: PairRate,
        frag: PairRate,
        bath: f64,
    },
}

impl KernelForm {
    #[inline]
    fn raw(&self, i: usize, j: usize, k: usize) -> f64 {
        match self {
            KernelForm::Closed(f) => f(i, j, k),
            KernelForm::Table(t) => t.entries.get(&(i, j, k)).copied().unwrap_or(0.0),
            KernelForm::Dense(d) => {
                if i <= d.cap && j <= d.cap {
                    d.values[d.index(i, j, k)]
                } else {
                    d.fallback.raw(i, j, k)
                }
            }
            KernelForm::SingleExchange(f) => {
                if k == 1 {
                    f(i, j)
                } else {
                    0.0
                }
            }
            KernelForm::WholeCluster(f) => {
                if k == i {
                    f(i, j)
                } else {
                    0.0
                }
            }
            KernelForm::CoagFrag { coag, frag, bath } => {
                if j >= 1 {
                    if k == i {
                        0.5 * coag(i, j)
                    } else {
                        0.0
                    }
                } else if k < i {
                    frag(i - k, k) / (2.0 * bath)
                } else {
                    0.0
                }
            }
        }
    }

    fn support(&self, max_exchange: Option<usize>) -> Support {
        match self {
            KernelForm::Dense(d) => d.fallback.support(max_exchange),
            KernelForm::SingleExchange(_) => Support::Exchange { max_exchange: 1 },
            KernelForm::WholeCluster(_) | KernelForm::CoagFrag { .. } => Support::WholeClusterOrVoid,
            KernelForm::Closed(_) | KernelForm::Table(_) => Support::Exchange {
                max_exchange: max_exchange.unwrap_or(usize::MAX),
            },
        }
    }

    fn describe(&self) -> &'static str {
        match self {
            KernelForm::Closed(_) => "closed",
            KernelForm::Table(_) => "table",
            KernelForm::Dense(_) => "dense",
            KernelForm::SingleExchange(_) => "single-exchange",
            KernelForm::WholeCluster(_) => "whole-cluster",
            KernelForm::CoagFrag { .. } => "coag-frag",
        }
    }
}

/// Which entries of a kernel can be nonzero; drives the flux evaluation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    /// Nonzero entries only for `k <= max_exchange`.
    Exchange { max_exchange: usize },
    /// Nonzero entries only for `k = i` or `j = 0`.
    WholeClusterOrVoid,
}

/// A rate-coefficient family together with its structural metadata.
#[derive(Clone)]
pub struct RateKernel {
    name: String,
    form: KernelForm,
    max_exchange: Option<usize>,
    enforce_null: bool,
    bath_concentration: Option<f64>,
}

impl fmt::Debug for RateKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RateKernel")
            .field("name", &self.name)
            .field("form", &self.form.describe())
            .field("max_exchange", &self.max_exchange)
            .field("enforce_null", &self.enforce_null)
            .field("bath_concentration", &self.bath_concentration)
            .finish()
    }
}

impl RateKernel {
    pub fn new(name: impl Into<String>, form: KernelForm) -> Self {
        let max_exchange = match &form {
            KernelForm::SingleExchange(_) => Some(1),
            KernelForm::Table(t) => t.max_exchange(),
            _ => None,
        };
        let bath_concentration = match &form {
            KernelForm::CoagFrag { bath, .. } => Some(*bath),
            _ => None,
        };
        Self {
            name: name.into(),
            form,
            max_exchange,
            enforce_null: true,
            bath_concentration,
        }
    }

    /// Kernel given by an arbitrary closed form.
    pub fn closed<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(usize, usize, usize) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, KernelForm::Closed(Arc::new(f)))
    }

    /// `a(i,j;k) = value` everywhere (apart from the null entries).
    pub fn constant(value: f64) -> Self {
        Self::closed("constant", move |_, _, _| value)
    }

    /// The unbounded example `a(i,j;k) = (i-k+1)(j+k+1) / (1 + (i-k)k)`.
    pub fn unbounded_example() -> Self {
        Self::closed("unbounded", |i, j, k| {
            let (i, j, k) = (i as f64, j as f64, k as f64);
            (i - k + 1.0) * (j + k + 1.0) / (1.0 + (i - k) * k)
        })
    }

    /// Exchange of at most `max_exchange` particles: `a(i,j;k) = scale·i·j` for
    /// `k <= max_exchange`; the whole-cluster entries `a(i,j;i)` additionally
    /// require `j <= max_exchange` so that `a(k,j;k) = a(j,k;j)`.
    pub fn bounded_exchange(max_exchange: usize, scale: f64) -> Self {
        let kbar = max_exchange.max(1);
        Self::closed(format!("bounded_exchange({kbar})"), move |i, j, k| {
            if k > kbar || (k == i && j > kbar) {
                0.0
            } else {
                scale * (i * j) as f64
            }
        })
        .with_max_exchange(Some(kbar))
    }

    /// `a(i,j;k) = A(i,j)` when `k = i`, zero otherwise (pure coagulation).
    pub fn whole_cluster<F>(name: impl Into<String>, a: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Send + Sync + 'static,
    {
        Self::new(name, KernelForm::WholeCluster(Arc::new(a)))
    }

    /// Kernel from explicit `(i, j, k, value)` entries; missing entries are zero.
    /// Table kernels do not apply the null rule, so [`audit_structure`] sees the data as given.
    pub fn from_entries<I>(name: impl Into<String>, entries: I) -> Result<Self, KernelError>
    where
        I: IntoIterator<Item = (usize, usize, usize, f64)>,
    {
        let mut table = SparseTable::default();
        for (line, (i, j, k, value)) in entries.into_iter().enumerate() {
            insert_entry(&mut table, line as u64 + 1, i, j, k, value)?;
        }
        Ok(Self::new(name, KernelForm::Table(table)).with_enforce_null(false))
    }

    /// Reads a table kernel from CSV with header `i,j,k,value`.
    pub fn load_table_csv(path: impl AsRef<Path>) -> Result<Self, KernelError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        let name = format!("table:{}", path.display());
        Self::read_table_csv(name, file)
    }

    pub fn read_table_csv<R: Read>(name: impl Into<String>, reader: R) -> Result<Self, KernelError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header_err = |reason: String| KernelError::Table { line: 1, reason };
        let headers = rdr.headers().map_err(|e| header_err(e.to_string()))?.clone();
        let expected = ["i", "j", "k", "value"];
        if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(header_err(format!("expected header `i,j,k,value`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let mut table = SparseTable::default();
        for record in rdr.records() {
            let record = record.map_err(|e| KernelError::Table {
                line: e.position().map(|p| p.line()).unwrap_or(0),
                reason: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let bad = |reason: String| KernelError::Table { line, reason };
            if record.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", record.len())));
            }
            let index = |n: usize| -> Result<usize, KernelError> {
                record[n].parse::<usize>().map_err(|e| bad(format!("field `{}`: {e}", expected[n])))
            };
            let (i, j, k) = (index(0)?, index(1)?, index(2)?);
            let value = record[3].parse::<f64>().map_err(|e| bad(format!("field `value`: {e}")))?;
            insert_entry(&mut table, line, i, j, k, value)?;
        }
        Ok(Self::new(name, KernelForm::Table(table)).with_enforce_null(false))
    }

    pub fn with_max_exchange(mut self, max_exchange: Option<usize>) -> Self {
        self.max_exchange = max_exchange;
        self
    }

    pub fn with_enforce_null(mut self, enforce_null: bool) -> Self {
        self.enforce_null = enforce_null;
        self
    }

    pub fn with_bath(mut self, bath: Option<f64>) -> Self {
        self.bath_concentration = bath;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn form(&self) -> &KernelForm {
        &self.form
    }

    pub fn max_exchange(&self) -> Option<usize> {
        self.max_exchange
    }

    pub fn enforce_null(&self) -> bool {
        self.enforce_null
    }

    pub fn bath_concentration(&self) -> Option<f64> {
        self.bath_concentration
    }

    pub fn support(&self) -> Support {
        self.form.support(self.max_exchange)
    }

    /// `a(i,j;k)`, rejecting triples outside `1 <= k <= i`.
    pub fn evaluate(&self, i: usize, j: usize, k: usize) -> Result<f64, KernelError> {
        if k < 1 || k > i {
            return Err(KernelError::Domain { i, j, k });
        }
        Ok(self.rate(i, j, k))
    }

    /// `a(i,j;k)` without the domain check. Callers guarantee `1 <= k <= i`.
    #[inline]
    pub fn rate(&self, i: usize, j: usize, k: usize) -> f64 {
        debug_assert!(k >= 1 && k <= i, "({i},{j},{k}) outside 1 <= k <= i");
        if self.enforce_null && j == 0 && k == i {
            return 0.0;
        }
        if let Some(kbar) = self.max_exchange {
            if k > kbar {
                return 0.0;
            }
        }
        self.form.raw(i, j, k)
    }

    /// Dense copy of the coefficients for `i, j <= cap`, if the table fits in
    /// `budget_bytes`; otherwise the kernel is returned unchanged.
    pub fn tabulate(&self, cap: usize, budget_bytes: usize) -> RateKernel {
        if matches!(self.form, KernelForm::Dense(_) | KernelForm::Table(_)) {
            return self.clone();
        }
        let w = cap + 1;
        let bytes = w
            .checked_mul(w)
            .and_then(|x| x.checked_mul(w))
            .and_then(|x| x.checked_mul(std::mem::size_of::<f64>()));
        match bytes {
            Some(b) if b <= budget_bytes => {}
            _ => return self.clone(),
        }
        let mut values = vec![0.0; w * w * w];
        for i in 1..=cap {
            for j in 0..=cap {
                for k in 1..=i {
                    values[(i * w + j) * w + k] = self.form.raw(i, j, k);
                }
            }
        }
        RateKernel {
            form: KernelForm::Dense(DenseTable {
                cap,
                values,
                fallback: Box::new(self.form.clone()),
            }),
            ..self.clone()
        }
    }
}

fn insert_entry(table: &mut SparseTable, line: u64, i: usize, j: usize, k: usize, value: f64) -> Result<(), KernelError> {
    if k < 1 || k > i {
        return Err(KernelError::Table {
            line,
            reason: format!("triple ({i},{j},{k}) violates 1 <= k <= i"),
        });
    }
    if table.entries.insert((i, j, k), value).is_some() {
        return Err(KernelError::Table {
            line,
            reason: format!("duplicate entry for ({i},{j},{k})"),
        });
    }
    Ok(())
}

/// Exchange-driven growth embedding: `a(i,j;k) = K(i,j)` for `k = 1`, zero otherwise.
pub fn make_edg_kernel<F>(rate: F) -> RateKernel
where
    F: Fn(usize, usize) -> f64 + Send + Sync + 'static,
{
    RateKernel::new("edg", KernelForm::SingleExchange(Arc::new(rate)))
}

/// Coagulation–fragmentation embedding for a bath of void clusters at `c00`:
/// `a(i,j;i) = a_coag(i,j)/2` for `j >= 1` and `a(i,0;k) = b_frag(i-k,k)/(2 c00)`
/// for `1 <= k <= i-1`.
pub fn make_coagfrag_kernel<A, B>(a_coag: A, b_frag: B, c00: f64) -> Result<RateKernel, KernelError>
where
    A: Fn(usize, usize) -> f64 + Send + Sync + 'static,
    B: Fn(usize, usize) -> f64 + Send + Sync + 'static,
{
    if !(c00 > 0.0 && c00.is_finite()) {
        return Err(KernelError::Bath(c00));
    }
    Ok(RateKernel::new(
        "coag_frag",
        KernelForm::CoagFrag {
            coag: Arc::new(a_coag),
            frag: Arc::new(b_frag),
            bath: c00,
        },
    ))
}

/// The built-in kernel set used by fixtures and property checks.
pub fn builtin_kernels() -> Vec<RateKernel> {
    let rename = |k: RateKernel, name: &str| RateKernel { name: name.to_string(), ..k };
    vec![
        RateKernel::constant(1.0),
        RateKernel::unbounded_example(),
        rename(make_edg_kernel(|i, j| (i * j) as f64), "edg_product"),
        rename(make_edg_kernel(|_, _| 1.0), "edg_constant"),
        RateKernel::bounded_exchange(2, 1.0),
        rename(make_coagfrag_kernel(|_, _| 2.0, |_, _| 1.0, 1.0).expect("positive bath"), "coag_frag_constant"),
        rename(
            make_coagfrag_kernel(|i, j| (i + j) as f64, |_, _| 0.5, 2.0).expect("positive bath"),
            "coag_frag_additive",
        ),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Negative,
    NonFinite,
    NullRule,
    CoagulationSymmetry,
    FragmentationSymmetry,
    NegativeWeight,
    QSum,
    GrowthBound,
    AlphaBound,
}

/// One failed check. `indices` is the `(i,j,k)` triple, or `(i,k)` for weight
/// checks, or `(i)` for the `Q`-sum. `value` is the checked quantity and
/// `bound` the quantity it was compared against (the partner entry for
/// symmetry checks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub indices: Vec<usize>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub kernel: String,
    pub cap: usize,
    pub checks: usize,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    fn new(kernel: &RateKernel, cap: usize) -> Self {
        Self {
            kernel: kernel.name.clone(),
            cap,
            checks: 0,
            violations: Vec::new(),
        }
    }

    fn record(&mut self, ok: bool, kind: ViolationKind, indices: &[usize], value: f64, bound: f64) {
        self.checks += 1;
        if !ok {
            self.violations.push(Violation {
                kind,
                indices: indices.to_vec(),
                value,
                bound,
            });
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    /// First violation of the given kind, in scan order.
    pub fn first(&self, kind: ViolationKind) -> Option<&Violation> {
        self.violations.iter().find(|v| v.kind == kind)
    }
}

/// Checks nonnegativity, the null rule `a(p,0;p) = 0`, `a(k,j;k) = a(j,k;j)`
/// and `a(i,0;k) = a(i,0;i-k)` for every index up to `cap`.
pub fn audit_structure(kernel: &RateKernel, cap: usize) -> AuditReport {
    let mut report = AuditReport::new(kernel, cap);
    for i in 1..=cap {
        for j in 0..=cap {
            for k in 1..=i {
                let a = kernel.rate(i, j, k);
                if a.is_nan() || a.is_infinite() {
                    report.record(false, ViolationKind::NonFinite, &[i, j, k], a, 0.0);
                } else {
                    report.record(a >= 0.0, ViolationKind::Negative, &[i, j, k], a, 0.0);
                }
            }
        }
    }
    for p in 1..=cap {
        let a = kernel.rate(p, 0, p);
        report.record(a == 0.0, ViolationKind::NullRule, &[p, 0, p], a, 0.0);
    }
    for k in 1..=cap {
        for j in 1..k {
            let (a, b) = (kernel.rate(k, j, k), kernel.rate(j, k, j));
            report.record(a == b, ViolationKind::CoagulationSymmetry, &[k, j, k], a, b);
        }
    }
    for i in 2..=cap {
        for k in 1..i {
            if k >= i - k {
                break;
            }
            let (a, b) = (kernel.rate(i, 0, k), kernel.rate(i, 0, i - k));
            report.record(a == b, ViolationKind::FragmentationSymmetry, &[i, 0, k], a, b);
        }
    }
    report
}

/// Rule producing the weights `q_{i,k}`, `1 <= k <= i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum QWeights {
    /// `q_{i,k} = 1/((i-k+1)k)`.
    InverseProduct,
    /// `q_{i,k} = [k = 1]`.
    SingleExchange,
    /// `q_{i,k} = [k = i]`.
    WholeCluster,
    /// `q_{i,k} = [k <= max_exchange]`.
    BoundedExchange { max_exchange: usize },
    /// Explicit `(i, k, q)` entries; missing entries are zero.
    Table { entries: Vec<(usize, usize, f64)> },
}

impl QWeights {
    pub fn weight(&self, i: usize, k: usize) -> f64 {
        let indicator = |b: bool| if b { 1.0 } else { 0.0 };
        match self {
            QWeights::InverseProduct => 1.0 / (((i - k + 1) * k) as f64),
            QWeights::SingleExchange => indicator(k == 1),
            QWeights::WholeCluster => indicator(k == i),
            QWeights::BoundedExchange { max_exchange } => indicator(k <= *max_exchange),
            QWeights::Table { entries } => entries
                .iter()
                .find(|&&(ei, ek, _)| ei == i && ek == k)
                .map(|&(_, _, q)| q)
                .unwrap_or(0.0),
        }
    }
}

/// Growth-bound certificate: `a(i,j;k) <= C (i-k+1)(j+k) q_{i,k}` for `j >= 1`
/// with `sum_k k(i-k+1) q_{i,k} <= Q i`, and optionally the sharper
/// `a(i,j;k) <= C (i-k+1)^alpha (j^alpha + k^alpha) q_{i,k}` for all `j >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    pub q_weights: QWeights,
    #[serde(default)]
    pub alpha: Option<f64>,
}

impl BoundCertificate {
    pub fn new(c: f64, q: f64, q_weights: QWeights, alpha: Option<f64>) -> Result<Self, KernelError> {
        let cert = Self { c, q, q_weights, alpha };
        cert.validate()?;
        Ok(cert)
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if !(self.c >= 1.0 && self.c.is_finite()) {
            return Err(KernelError::Certificate(format!("C must be a finite real >= 1, got {}", self.c)));
        }
        if !(self.q >= 1.0 && self.q.is_finite()) {
            return Err(KernelError::Certificate(format!("Q must be a finite real >= 1, got {}", self.q)));
        }
        if let Some(alpha) = self.alpha {
            if !(0.0..0.5).contains(&alpha) {
                return Err(KernelError::Certificate(format!("alpha must lie in [0, 1/2), got {alpha}")));
            }
        }
        Ok(())
    }
}

#[inline]
fn within(value: f64, bound: f64) -> bool {
    value <= bound + CERTIFY_SLACK * bound.abs()
}

/// Verifies a certificate for all `i <= cap` (weights and `Q`-sum) and all
/// `(i,j,k)` with `i, j <= cap`. Entries with `j = 0` are only checked
/// against the alpha bound, and only when `alpha` is present.
pub fn certify_bound(kernel: &RateKernel, cert: &BoundCertificate, cap: usize) -> AuditReport {
    let mut report = AuditReport::new(kernel, cap);
    let w = cap + 1;
    let mut weights = vec![0.0; w * w];
    for i in 1..=cap {
        for k in 1..=i {
            let q = cert.q_weights.weight(i, k);
            weights[i * w + k] = q;
            report.record(q >= 0.0, ViolationKind::NegativeWeight, &[i, k], q, 0.0);
        }
    }
    for i in 1..=cap {
        let sum = crate::sum::compensated((1..=i).map(|k| (k * (i - k + 1)) as f64 * weights[i * w + k]));
        let bound = cert.q * i as f64;
        report.record(within(sum, bound), ViolationKind::QSum, &[i], sum, bound);
    }
    for i in 1..=cap {
        for k in 1..=i {
            let q = weights[i * w + k];
            let left = (i - k + 1) as f64;
            for j in 1..=cap {
                let a = kernel.rate(i, j, k);
                let bound = cert.c * left * (j + k) as f64 * q;
                report.record(within(a, bound), ViolationKind::GrowthBound, &[i, j, k], a, bound);
            }
            if let Some(alpha) = cert.alpha {
                for j in 0..=cap {
                    let a = kernel.rate(i, j, k);
                    let bound = cert.c * left.powf(alpha) * ((j as f64).powf(alpha) + (k as f64).powf(alpha)) * q;
                    report.record(within(a, bound), ViolationKind::AlphaBound, &[i, j, k], a, bound);
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_kernel_values() {
        let k = RateKernel::constant(1.0);
        assert_eq!(k.evaluate(5, 3, 2).unwrap(), 1.0);
        assert_eq!(k.evaluate(4, 0, 4).unwrap(), 0.0);
        assert_eq!(k.evaluate(4, 0, 3).unwrap(), 1.0);
    }

    #[test]
    fn unbounded_example_value() {
        let k = RateKernel::unbounded_example();
        // (3-1+1)(2+1+1)/(1+(3-1)*1) = 12/3
        assert_eq!(k.evaluate(3, 2, 1).unwrap(), 4.0);
        assert_eq!(k.evaluate(3, 0, 3).unwrap(), 0.0);
    }

    #[test]
    fn evaluate_rejects_out_of_domain() {
        let k = RateKernel::constant(1.0);
        assert!(matches!(k.evaluate(2, 1, 3), Err(KernelError::Domain { i: 2, j: 1, k: 3 })));
        assert!(matches!(k.evaluate(2, 1, 0), Err(KernelError::Domain { .. })));
    }

    #[test]
    fn edg_kernel_is_delta_in_k() {
        let k = make_edg_kernel(|i, j| (i * j) as f64);
        assert_eq!(k.evaluate(2, 3, 1).unwrap(), 6.0);
        assert_eq!(k.evaluate(2, 3, 2).unwrap(), 0.0);
        assert_eq!(k.max_exchange(), Some(1));
        assert_eq!(k.support(), Support::Exchange { max_exchange: 1 });
    }

    #[test]
    fn coagfrag_mapping() {
        let k = make_coagfrag_kernel(|_, _| 2.0, |_, _| 0.0, 1.0).unwrap();
        assert_eq!(k.evaluate(3, 4, 3).unwrap(), 1.0);
        assert_eq!(k.evaluate(3, 4, 1).unwrap(), 0.0);
        assert_eq!(k.bath_concentration(), Some(1.0));

        let k = make_coagfrag_kernel(|_, _| 0.0, |_, _| 1.0, 2.0).unwrap();
        assert_eq!(k.evaluate(5, 0, 2).unwrap(), 0.25);
        assert_eq!(k.evaluate(5, 0, 5).unwrap(), 0.0);
    }

    #[test]
    fn coagfrag_rejects_nonpositive_bath() {
        assert!(matches!(make_coagfrag_kernel(|_, _| 1.0, |_, _| 1.0, 0.0), Err(KernelError::Bath(_))));
        assert!(make_coagfrag_kernel(|_, _| 1.0, |_, _| 1.0, -1.0).is_err());
        assert!(make_coagfrag_kernel(|_, _| 1.0, |_, _| 1.0, f64::NAN).is_err());
    }

    #[test]
    fn constant_kernel_audit_is_clean() {
        let report = audit_structure(&RateKernel::constant(1.0), 20);
        assert!(report.passed(), "{:?}", report.violations);
    }

    #[test]
    fn constructed_symmetry_counterexample() {
        let k = RateKernel::from_entries("bad", [(2, 1, 2, 1.0)]).unwrap();
        let report = audit_structure(&k, 3);
        assert_eq!(report.violations.len(), 1);
        let v = &report.violations[0];
        assert_eq!(v.kind, ViolationKind::CoagulationSymmetry);
        assert_eq!(v.indices, vec![2, 1, 2]);
    }

    #[test]
    fn edg_product_kernel_breaks_whole_monomer_symmetry() {
        // a(1,j;1) = j has no partner a(j,1;j) in a k = 1 kernel.
        let k = make_edg_kernel(|i, j| (i * j) as f64);
        let cap = 20;
        let report = audit_structure(&k, cap);
        assert_eq!(report.violations.len(), cap - 1);
        for (n, v) in report.violations.iter().enumerate() {
            let j = n + 2;
            assert_eq!(v.kind, ViolationKind::CoagulationSymmetry);
            assert_eq!(v.indices, vec![j, 1, j]);
            assert_eq!((v.value, v.bound), (0.0, j as f64));
        }
    }

    #[test]
    fn edg_kernel_without_monomer_transfer_is_symmetric() {
        let k = make_edg_kernel(|i, j| ((i - 1) * j) as f64);
        assert!(audit_structure(&k, 10).passed());
    }

    #[test]
    fn table_null_rule_violation_is_reported() {
        let csv = "i,j,k,value\n1,1,1,1.0\n3,0,3,0.5\n";
        let k = RateKernel::read_table_csv("t", csv.as_bytes()).unwrap();
        let report = audit_structure(&k, 4);
        let v = report.first(ViolationKind::NullRule).unwrap();
        assert_eq!(v.indices, vec![3, 0, 3]);
        assert_eq!(v.value, 0.5);
        assert_eq!(report.count(ViolationKind::NullRule), 1);
    }

    #[test]
    fn table_loader_rejects_bad_rows() {
        let bad_k = "i,j,k,value\n2,1,3,1.0\n";
        assert!(matches!(
            RateKernel::read_table_csv("t", bad_k.as_bytes()),
            Err(KernelError::Table { line: 2, .. })
        ));
        let zero_k = "i,j,k,value\n2,1,0,1.0\n";
        assert!(RateKernel::read_table_csv("t", zero_k.as_bytes()).is_err());
        let dup = "i,j,k,value\n2,1,1,1.0\n2,1,1,2.0\n";
        assert!(RateKernel::read_table_csv("t", dup.as_bytes()).is_err());
        let header = "a,b,c,d\n1,1,1,1\n";
        assert!(RateKernel::read_table_csv("t", header.as_bytes()).is_err());
    }

    #[test]
    fn table_missing_entries_are_zero() {
        let k = RateKernel::read_table_csv("t", "i,j,k,value\n2,1,1,3.5\n".as_bytes()).unwrap();
        assert_eq!(k.evaluate(2, 1, 1).unwrap(), 3.5);
        assert_eq!(k.evaluate(2, 2, 1).unwrap(), 0.0);
        assert_eq!(k.max_exchange(), Some(1));
    }

    #[test]
    fn builtin_kernels_satisfy_structure_except_edg() {
        for k in builtin_kernels() {
            let report = audit_structure(&k, 50);
            if k.name().starts_with("edg") {
                assert!(report
                    .violations
                    .iter()
                    .all(|v| matches!(v.kind, ViolationKind::CoagulationSymmetry | ViolationKind::FragmentationSymmetry)));
            } else {
                assert!(report.passed(), "{}: {:?}", k.name(), &report.violations[..report.violations.len().min(3)]);
            }
        }
    }

    #[test]
    fn certificates_from_the_bound_discussion() {
        let cert = BoundCertificate::new(2.0, 1.0, QWeights::InverseProduct, None).unwrap();
        assert!(certify_bound(&RateKernel::constant(1.0), &cert, 30).passed());

        let c0 = 3.0;
        let edg = make_edg_kernel(move |i, j| c0 * (i * j) as f64);
        let cert = BoundCertificate::new(c0, 1.0, QWeights::SingleExchange, None).unwrap();
        assert!(certify_bound(&edg, &cert, 30).passed());
    }

    #[test]
    fn alpha_certificate_fails_for_constant_kernel() {
        let cert = BoundCertificate::new(2.0, 1.0, QWeights::InverseProduct, Some(0.0)).unwrap();
        let report = certify_bound(&RateKernel::constant(1.0), &cert, 30);
        assert!(!report.passed());
        assert_eq!(report.count(ViolationKind::GrowthBound), 0);
        assert_eq!(report.count(ViolationKind::QSum), 0);
        let first = report.first(ViolationKind::AlphaBound).unwrap();
        // 2 * (j^0 + k^0) / ((i-k+1) k) first drops below 1 at i = 4, k = 2.
        assert_eq!(first.indices[0], 4);
        assert_eq!(first.indices[2], 2);
    }

    #[test]
    fn certificate_validation() {
        assert!(BoundCertificate::new(0.5, 1.0, QWeights::SingleExchange, None).is_err());
        assert!(BoundCertificate::new(1.0, 0.9, QWeights::SingleExchange, None).is_err());
        assert!(BoundCertificate::new(1.0, 1.0, QWeights::SingleExchange, Some(0.5)).is_err());
        assert!(BoundCertificate::new(1.0, 1.0, QWeights::SingleExchange, Some(0.49)).is_ok());
    }

    #[test]
    fn bounded_exchange_certificate() {
        // a <= Cbar i j with k <= kbar certifies with q = [k <= kbar], C = kbar Cbar, Q = kbar^2.
        for kbar in 1..=4 {
            let cbar = 1.5;
            let k = RateKernel::bounded_exchange(kbar, cbar);
            let c = (kbar as f64 * cbar).max(1.0);
            let cert = BoundCertificate::new(c, (kbar * kbar) as f64, QWeights::BoundedExchange { max_exchange: kbar }, None).unwrap();
            let report = certify_bound(&k, &cert, 30);
            assert!(report.passed(), "kbar={kbar}: {:?}", report.violations.first());
        }
    }

    #[test]
    fn tabulate_respects_budget_and_preserves_values() {
        let k = RateKernel::unbounded_example();
        let dense = k.tabulate(12, DEFAULT_TABLE_BUDGET_BYTES);
        assert!(matches!(dense.form(), KernelForm::Dense(_)));
        for i in 1..=16 {
            for j in 0..=16 {
                for kk in 1..=i {
                    assert_eq!(dense.rate(i, j, kk).to_bits(), k.rate(i, j, kk).to_bits());
                }
            }
        }
        let lazy = k.tabulate(12, 1024);
        assert!(matches!(lazy.form(), KernelForm::Closed(_)));
    }

    #[test]
    fn evaluation_is_bit_reproducible() {
        for k in builtin_kernels() {
            for (i, j, kk) in [(7, 3, 2), (9, 0, 4), (5, 5, 5)] {
                assert_eq!(k.rate(i, j, kk).to_bits(), k.rate(i, j, kk).to_bits());
            }
        }
    }
}
