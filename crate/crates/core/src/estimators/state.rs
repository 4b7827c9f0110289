//! Estimator state and the per-step formulas.

use crate::error::{Error, Result};
use crate::inclusion::{full_mean_into, FiniteSumOperator, Forward, InclusionProblem, Point};
use crate::linalg;
use crate::par::{self, Execution};
use crate::rng::{self, streams};

use super::randomness::{Randomness, Script};
use super::{AnchorMode, EstimatorKind, EstimatorParams, Sampling};

/// Minimum `rows × dim` for parallel component evaluation.
const PAR_THRESHOLD: usize = 1 << 14;

#[derive(Debug, Clone)]
enum Batch {
    Full,
    Draws(Vec<u64>),
}

fn same_point(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// `out = (1/m) Σ rows`, summed in row order.
fn rows_mean(rows: &[f64], dim: usize) -> Point {
    let mut out = Point::zeros(dim);
    let m = rows.len() / dim.max(1);
    for r in rows.chunks(dim.max(1)) {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let mf = m as f64;
    out.iter_mut().for_each(|o| *o /= mf);
    out
}

fn reflect(gk: &[f64], gkm1: &[f64]) -> Point {
    gk.iter().zip(gkm1).map(|(a, b)| 2.0 * a - b).collect::<Vec<_>>().into()
}

/// `prev + 2a - 3b + c`.
fn sarah_update(prev: &[f64], a: &[f64], b: &[f64], c: &[f64]) -> Point {
    (0..prev.len())
        .map(|j| ((prev[j] + 2.0 * a[j]) - 3.0 * b[j]) + c[j])
        .collect::<Vec<_>>()
        .into()
}

/// `(anchor - m_w) + 2 m_k - m_km1`.
fn svrg_combine(anchor: &[f64], mw: &[f64], mk: &[f64], mkm1: &[f64]) -> Point {
    (0..anchor.len())
        .map(|j| ((anchor[j] - mw[j]) + 2.0 * mk[j]) - mkm1[j])
        .collect::<Vec<_>>()
        .into()
}

fn blend(omega: f64, a: &[f64], b: &[f64]) -> Point {
    a.iter()
        .zip(b)
        .map(|(x, y)| (1.0 - omega) * x + omega * y)
        .collect::<Vec<_>>()
        .into()
}

/// State of one estimator within one run. `S̃^k` is `current()`.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    kind: EstimatorKind,
    params: EstimatorParams,
    forward: Forward,
    n: Option<usize>,
    dim: usize,
    exec: Execution,
    k: usize,
    current: Point,
    rand: Randomness,
    total_calls: u64,
    x0: Point,
    snapshot: Option<Point>,
    anchor_value: Option<Point>,
    table: Vec<f64>,
    table_mean: Point,
    pending_rows: usize,
    retained: Option<(Point, Point)>,
    last_batch: Vec<u64>,
    last_batch_size: usize,
    last_switch: bool,
}

/// Builds the state at `x^0` with `x^{-1} = x^{-2} = x^0`, computing `S̃^0`.
pub fn make_estimator(
    kind: EstimatorKind,
    params: EstimatorParams,
    problem: &InclusionProblem,
    x0: Point,
    seed: u64,
) -> Result<EstimatorState> {
    EstimatorState::new(
        kind,
        params,
        problem.forward.clone(),
        x0,
        seed,
        Execution::default(),
    )
}

impl EstimatorState {
    pub fn new(
        kind: EstimatorKind,
        params: EstimatorParams,
        forward: Forward,
        x0: Point,
        seed: u64,
        exec: Execution,
    ) -> Result<Self> {
        let n = forward.num_components();
        params.validate(kind, n)?;
        if x0.dim() != forward.dim() {
            return Err(Error::invalid(format!(
                "x0 has dimension {}, problem has {}",
                x0.dim(),
                forward.dim()
            )));
        }
        if n.is_none() {
            let needs_sum = match kind {
                EstimatorKind::FullBatch | EstimatorKind::Saga => true,
                EstimatorKind::SgdIncreasing => false,
                _ => params.anchor == AnchorMode::Exact,
            };
            if needs_sum {
                return Err(Error::Unsupported(format!(
                    "{kind} with this anchor needs a finite-sum operator"
                )));
            }
            if params.sampling == Sampling::FullIndexSet {
                return Err(Error::Unsupported(
                    "full-index-set sampling needs a finite-sum operator".into(),
                ));
            }
        }
        let dim = forward.dim();
        let mut st = Self {
            kind,
            params,
            forward,
            n,
            dim,
            exec,
            k: 0,
            current: Point::zeros(dim),
            rand: Randomness::Rng(rng::substream(seed, streams::ESTIMATOR)),
            total_calls: 0,
            x0: x0.clone(),
            snapshot: None,
            anchor_value: None,
            table: Vec::new(),
            table_mean: Point::zeros(0),
            pending_rows: 0,
            retained: None,
            last_batch: Vec::new(),
            last_batch_size: 0,
            last_switch: false,
        };
        let calls = st.initialize(&x0)?;
        st.total_calls = calls;
        Ok(st)
    }

    fn initialize(&mut self, x0: &Point) -> Result<u64> {
        match self.kind {
            EstimatorKind::FullBatch => {
                let (g, c) = self.exact_at(x0)?;
                if self.params.retain_full {
                    self.retained = Some((x0.clone(), g.clone()));
                }
                self.current = g;
                Ok(c)
            }
            EstimatorKind::SgdIncreasing => {
                let b = self.params.batch_at(0, self.n, 0.0, 0.0)?;
                let batch = self.draw(b);
                let (m, c) = self.multi_mean(&batch, &[x0]);
                self.record_batch(&batch, b);
                self.current = m.into_iter().next().unwrap();
                Ok(c)
            }
            EstimatorKind::LSvrg | EstimatorKind::HybridSvrg => {
                let (a, c) = self.anchor_eval(x0)?;
                self.snapshot = Some(x0.clone());
                self.current = a.clone();
                self.anchor_value = Some(a);
                Ok(c)
            }
            EstimatorKind::Saga => {
                let n = self.n.unwrap();
                let idx: Vec<u64> = (0..n as u64).collect();
                self.table = self.eval_rows(&idx, x0);
                self.table_mean = rows_mean(&self.table, self.dim);
                self.current = self.table_mean.clone();
                Ok(n as u64)
            }
            EstimatorKind::LSarah | EstimatorKind::HybridSgd => {
                let (s, c) = self.anchor_direction(x0, x0)?;
                self.current = s;
                Ok(c)
            }
        }
    }

    /// Advances to `k+1` given `(x^{k+1}, x^k, x^{k-1})` and returns `S̃^{k+1}` with the calls spent.
    pub fn step(&mut self, x_k: &Point, x_km1: &Point, x_km2: &Point) -> Result<(&Point, u64)> {
        for x in [x_k, x_km1, x_km2] {
            if x.dim() != self.dim {
                return Err(Error::invalid("iterate dimension mismatch"));
            }
        }
        self.k += 1;
        let calls = match self.kind {
            EstimatorKind::FullBatch => self.step_full(x_k, x_km1)?,
            EstimatorKind::SgdIncreasing => self.step_sgd(x_k, x_km1, x_km2)?,
            EstimatorKind::LSvrg => self.step_svrg(x_k, x_km1)?,
            EstimatorKind::Saga => self.step_saga(x_k, x_km1)?,
            EstimatorKind::LSarah => self.step_sarah(x_k, x_km1, x_km2)?,
            EstimatorKind::HybridSgd => self.step_hsgd(x_k, x_km1, x_km2)?,
            EstimatorKind::HybridSvrg => self.step_hsvrg(x_k, x_km1, x_km2)?,
        };
        self.total_calls += calls;
        Ok((&self.current, calls))
    }

    fn step_full(&mut self, x_k: &Point, x_km1: &Point) -> Result<u64> {
        let (s, c) = self.exact_direction(x_k, x_km1)?;
        self.current = s;
        Ok(c)
    }

    fn step_sgd(&mut self, x_k: &Point, x_km1: &Point, x_km2: &Point) -> Result<u64> {
        let b = self.params.batch_at(
            self.k,
            self.n,
            linalg::dist_sq(x_k, x_km1),
            linalg::dist_sq(x_km1, x_km2),
        )?;
        let batch = self.draw(b);
        let (m, c) = self.multi_mean(&batch, &[x_k, x_km1]);
        self.record_batch(&batch, b);
        self.current = reflect(&m[0], &m[1]);
        Ok(c)
    }

    fn refresh_snapshot(&mut self, x_km1: &Point) -> Result<u64> {
        self.last_switch = self.rand.coin(self.params.p_switch);
        if !self.last_switch {
            return Ok(0);
        }
        let (a, c) = self.anchor_eval(x_km1)?;
        self.snapshot = Some(x_km1.clone());
        self.anchor_value = Some(a);
        Ok(c)
    }

    fn step_svrg(&mut self, x_k: &Point, x_km1: &Point) -> Result<u64> {
        let mut calls = self.refresh_snapshot(x_km1)?;
        let b = self.params.batch;
        let batch = self.draw(b);
        let w = self.snapshot.clone().expect("snapshot initialised");
        let (m, c) = self.multi_mean(&batch, &[&w, x_k, x_km1]);
        calls += c;
        self.record_batch(&batch, b);
        let a = self.anchor_value.as_ref().unwrap();
        self.current = svrg_combine(a, &m[0], &m[1], &m[2]);
        Ok(calls)
    }

    fn step_saga(&mut self, x_k: &Point, x_km1: &Point) -> Result<u64> {
        let n = self.n.unwrap();
        let dim = self.dim;
        let b = self.params.batch;
        let batch = self.draw(b);
        let idx: Vec<u64> = match &batch {
            Batch::Full => (0..n as u64).collect(),
            Batch::Draws(d) => d.clone(),
        };
        let new_rows = self.eval_rows(&idx, x_km1);
        let mut calls = idx.len() as u64;
        let g_km1 = rows_mean(&new_rows, dim);
        let g_k = if same_point(x_k, x_km1) {
            g_km1.clone()
        } else {
            let (m, c) = self.multi_mean(&batch, &[x_k]);
            calls += c;
            m.into_iter().next().unwrap()
        };
        let t_bar = match &batch {
            Batch::Full => rows_mean(&self.table, dim),
            Batch::Draws(d) => {
                let mut old = Vec::with_capacity(d.len() * dim);
                for &i in d {
                    old.extend_from_slice(self.row(i as usize));
                }
                rows_mean(&old, dim)
            }
        };
        self.current = (0..dim)
            .map(|j| ((self.table_mean[j] - t_bar[j]) + 2.0 * g_k[j]) - g_km1[j])
            .collect::<Vec<_>>()
            .into();
        match &batch {
            Batch::Full => {
                self.table = new_rows;
                self.table_mean = rows_mean(&self.table, dim);
                self.pending_rows = 0;
            }
            Batch::Draws(d) => {
                let mut order: Vec<(u64, usize)> = d.iter().copied().zip(0..).collect();
                order.sort_unstable();
                order.dedup_by_key(|e| e.0);
                let nf = n as f64;
                for &(i, j) in &order {
                    let i = i as usize;
                    let new = &new_rows[j * dim..(j + 1) * dim];
                    let row = &mut self.table[i * dim..(i + 1) * dim];
                    for ((m, r), v) in self.table_mean.iter_mut().zip(row.iter_mut()).zip(new) {
                        *m += (v - *r) / nf;
                        *r = *v;
                    }
                }
                self.pending_rows += order.len();
                if self.pending_rows >= n {
                    self.table_mean = rows_mean(&self.table, dim);
                    self.pending_rows = 0;
                }
            }
        }
        self.record_batch(&batch, b);
        Ok(calls)
    }

    fn step_sarah(&mut self, x_k: &Point, x_km1: &Point, x_km2: &Point) -> Result<u64> {
        self.last_switch = self.rand.coin(self.params.p_switch);
        if self.last_switch {
            let (s, c) = self.anchor_direction(x_k, x_km1)?;
            self.current = s;
            return Ok(c);
        }
        let b = self.params.batch;
        let batch = self.draw(b);
        let (m, c) = self.multi_mean(&batch, &[x_k, x_km1, x_km2]);
        self.record_batch(&batch, b);
        self.current = sarah_update(&self.current, &m[0], &m[1], &m[2]);
        Ok(c)
    }

    fn step_hsgd(&mut self, x_k: &Point, x_km1: &Point, x_km2: &Point) -> Result<u64> {
        let omega = self.params.omega;
        let b = self.params.batch;
        if omega == 1.0 {
            let bh = self.params.hat_size();
            let hat = self.draw(bh);
            let (h, c) = self.multi_mean(&hat, &[x_k, x_km1]);
            self.record_batch(&hat, bh);
            self.current = reflect(&h[0], &h[1]);
            return Ok(c);
        }
        let batch = self.draw(b);
        let (m, mut calls) = self.multi_mean(&batch, &[x_k, x_km1, x_km2]);
        let sarah = sarah_update(&self.current, &m[0], &m[1], &m[2]);
        let unbiased = if self.params.share_batches {
            reflect(&m[0], &m[1])
        } else {
            let hat = self.draw(self.params.hat_size());
            let (h, c) = self.multi_mean(&hat, &[x_k, x_km1]);
            calls += c;
            reflect(&h[0], &h[1])
        };
        self.record_batch(&batch, b);
        self.current = blend(omega, &sarah, &unbiased);
        Ok(calls)
    }

    fn step_hsvrg(&mut self, x_k: &Point, x_km1: &Point, x_km2: &Point) -> Result<u64> {
        let omega = self.params.omega;
        let b = self.params.batch;
        let mut calls = self.refresh_snapshot(x_km1)?;
        let w = self.snapshot.clone().expect("snapshot initialised");
        let anchor = self.anchor_value.clone().unwrap();
        let (sarah, hat_means) = if omega == 1.0 {
            (None, None)
        } else if self.params.share_batches {
            let batch = self.draw(b);
            let (m, c) = self.multi_mean(&batch, &[x_k, x_km1, x_km2, &w]);
            calls += c;
            self.record_batch(&batch, b);
            let s = sarah_update(&self.current, &m[0], &m[1], &m[2]);
            (Some(s), Some([m[3].clone(), m[0].clone(), m[1].clone()]))
        } else {
            let batch = self.draw(b);
            let (m, c) = self.multi_mean(&batch, &[x_k, x_km1, x_km2]);
            calls += c;
            self.record_batch(&batch, b);
            (Some(sarah_update(&self.current, &m[0], &m[1], &m[2])), None)
        };
        let [mw, mk, mkm1] = match hat_means {
            Some(h) => h,
            None => {
                let bh = self.params.hat_size();
                let hat = self.draw(bh);
                let (h, c) = self.multi_mean(&hat, &[&w, x_k, x_km1]);
                calls += c;
                if sarah.is_none() {
                    self.record_batch(&hat, bh);
                }
                let mut it = h.into_iter();
                [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
            }
        };
        let svrg = svrg_combine(&anchor, &mw, &mk, &mkm1);
        self.current = match sarah {
            Some(s) => blend(omega, &s, &svrg),
            None => svrg,
        };
        Ok(calls)
    }

    // ---- evaluation primitives ----

    fn op(&self) -> &dyn FiniteSumOperator {
        match &self.forward {
            Forward::FiniteSum(op) => op.as_ref(),
            Forward::Expectation(_) => unreachable!("finite-sum path on an expectation oracle"),
        }
    }

    fn draw(&mut self, size: usize) -> Batch {
        if self.params.sampling == Sampling::FullIndexSet && self.n.is_some() {
            return Batch::Full;
        }
        let draws = (0..size)
            .map(|_| match self.n {
                Some(n) => self.rand.index(n) as u64,
                None => self.rand.handle(),
            })
            .collect();
        Batch::Draws(draws)
    }

    fn record_batch(&mut self, batch: &Batch, size: usize) {
        match batch {
            Batch::Full => {
                self.last_batch.clear();
                self.last_batch_size = self.n.unwrap_or(size);
            }
            Batch::Draws(d) => {
                self.last_batch.clone_from(d);
                self.last_batch_size = d.len();
            }
        }
    }

    /// Rows `G_{h} x` for each handle, in order.
    fn eval_rows(&self, handles: &[u64], x: &[f64]) -> Vec<f64> {
        let dim = self.dim;
        let mut rows = vec![0.0; handles.len() * dim];
        let fill = |j: usize, out: &mut [f64]| self.forward.eval_sample(handles[j], x, out);
        par::fill_chunks(
            if handles.len() * dim >= PAR_THRESHOLD {
                self.exec
            } else {
                Execution::Sequential
            },
            &mut rows,
            dim,
            fill,
        );
        rows
    }

    fn batch_mean(&self, batch: &Batch, x: &[f64]) -> (Point, u64) {
        match batch {
            Batch::Full => {
                let mut out = Point::zeros(self.dim);
                full_mean_into(self.op(), x, &mut out);
                (out, self.n.unwrap() as u64)
            }
            Batch::Draws(d) => (rows_mean(&self.eval_rows(d, x), self.dim), d.len() as u64),
        }
    }

    /// Batch means at several points; bitwise-equal points are evaluated once.
    fn multi_mean(&self, batch: &Batch, pts: &[&[f64]]) -> (Vec<Point>, u64) {
        let mut out: Vec<Point> = Vec::with_capacity(pts.len());
        let mut calls = 0;
        for (j, p) in pts.iter().enumerate() {
            if let Some(prev) = (0..j).find(|&i| same_point(pts[i], p)) {
                out.push(out[prev].clone());
            } else {
                let (m, c) = self.batch_mean(batch, p);
                calls += c;
                out.push(m);
            }
        }
        (out, calls)
    }

    /// Exact `Gx`, reusing the retained value at the same point.
    fn exact_at(&self, x: &[f64]) -> Result<(Point, u64)> {
        if let Some((rx, rg)) = &self.retained {
            if same_point(rx, x) {
                return Ok((rg.clone(), 0));
            }
        }
        let mut out = Point::zeros(self.dim);
        full_mean_into(self.op(), x, &mut out);
        Ok((out, self.n.unwrap() as u64))
    }

    /// Exact `2Gx^k - Gx^{k-1}`.
    fn exact_direction(&mut self, x_k: &Point, x_km1: &Point) -> Result<(Point, u64)> {
        let (g_km1, c1) = self.exact_at(x_km1)?;
        let (g_k, c2) = if same_point(x_k, x_km1) {
            (g_km1.clone(), 0)
        } else {
            self.exact_at(x_k)?
        };
        let s = reflect(&g_k, &g_km1);
        if self.params.retain_full {
            self.retained = Some((x_k.clone(), g_k));
        }
        Ok((s, c1 + c2))
    }

    /// SARAH anchor: exact `S^k` or a mega-batch estimate of it.
    fn anchor_direction(&mut self, x_k: &Point, x_km1: &Point) -> Result<(Point, u64)> {
        match self.params.anchor.mega_size(self.k) {
            None => self.exact_direction(x_k, x_km1),
            Some(size) => {
                let batch = self.draw(size);
                let (m, c) = self.multi_mean(&batch, &[x_k, x_km1]);
                Ok((reflect(&m[0], &m[1]), c))
            }
        }
    }

    /// SVRG anchor value `Ḡw`.
    fn anchor_eval(&mut self, w: &Point) -> Result<(Point, u64)> {
        match self.params.anchor.mega_size(self.k) {
            None => {
                let mut out = Point::zeros(self.dim);
                full_mean_into(self.op(), w, &mut out);
                Ok((out, self.n.unwrap() as u64))
            }
            Some(size) => {
                let batch = self.draw(size);
                Ok(self.batch_mean(&batch, w))
            }
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.table[i * self.dim..(i + 1) * self.dim]
    }

    // ---- accessors ----

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn params(&self) -> &EstimatorParams {
        &self.params
    }

    pub fn forward(&self) -> &Forward {
        &self.forward
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> Option<usize> {
        self.n
    }

    /// `S̃^k`.
    pub fn current(&self) -> &Point {
        &self.current
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn x0(&self) -> &Point {
        &self.x0
    }

    pub fn total_calls(&self) -> u64 {
        self.total_calls
    }

    /// SVRG snapshot `w^k`.
    pub fn snapshot(&self) -> Option<&Point> {
        self.snapshot.as_ref()
    }

    pub fn anchor_value(&self) -> Option<&Point> {
        self.anchor_value.as_ref()
    }

    /// Row `i` of the SAGA table.
    pub fn saga_row(&self, i: usize) -> Option<&[f64]> {
        if self.table.is_empty() || i >= self.n.unwrap_or(0) {
            None
        } else {
            Some(self.row(i))
        }
    }

    /// Running mean `Ĝ^k` of the SAGA table.
    pub fn saga_mean(&self) -> Option<&Point> {
        if self.table.is_empty() {
            None
        } else {
            Some(&self.table_mean)
        }
    }

    /// Mean of the SAGA table recomputed from its rows.
    pub fn saga_rows_mean(&self) -> Option<Point> {
        if self.table.is_empty() {
            None
        } else {
            Some(rows_mean(&self.table, self.dim))
        }
    }

    /// Indices or handles of the most recent batch; empty for full-index-set draws.
    pub fn last_batch(&self) -> &[u64] {
        &self.last_batch
    }

    pub fn last_batch_size(&self) -> usize {
        self.last_batch_size
    }

    /// Whether the most recent step took the snapshot or anchor branch.
    pub fn last_switch(&self) -> bool {
        self.last_switch
    }

    pub fn execution(&self) -> Execution {
        self.exec
    }

    pub fn set_execution(&mut self, exec: Execution) {
        self.exec = exec;
    }

    /// Restarts the random stream from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.rand = Randomness::Rng(rng::substream(seed, streams::ESTIMATOR));
    }

    /// Replays `script` on subsequent draws.
    pub fn set_script(&mut self, script: Script) {
        self.rand = Randomness::Script(script);
    }

    pub fn script(&self) -> Option<&Script> {
        self.rand.script()
    }

    /// Overrides `S̃^k`, e.g. to impose a known error `e^k`.
    pub fn set_direction(&mut self, s: Point) -> Result<()> {
        if s.dim() != self.dim {
            return Err(Error::invalid("direction dimension mismatch"));
        }
        self.current = s;
        Ok(())
    }
}
