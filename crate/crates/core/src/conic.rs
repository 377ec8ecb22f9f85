//! Modeling layer for small complex semidefinite programs.
//!
//! Hermitian matrix variables are stored as `n²` reals (real parts of the
//! upper triangle, then imaginary parts of the strict upper triangle).
//! Affine PSD constraints are passed to the backend through the real
//! symmetric embedding `[[Re, −Im], [Im, Re]]`.

use std::fmt::Write as _;
use std::path::Path;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, hermitian_part, CMat, C64};

pub const DEFAULT_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScalarId(usize);

/// Real affine function `Σ Re Tr(G_b X_b) + Σ a_i t_i + c`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineForm {
    blocks: Vec<(BlockId, CMat)>,
    scalars: Vec<(ScalarId, f64)>,
    constant: f64,
}

impl AffineForm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        AffineForm { constant: c, ..Self::default() }
    }

    /// `Re Tr(G X)`; only the Hermitian part of `G` is kept.
    pub fn trace(block: BlockId, g: &CMat) -> Self {
        Self::new().add_trace(block, g)
    }

    pub fn scalar(id: ScalarId, coef: f64) -> Self {
        Self::new().add_scalar(id, coef)
    }

    pub fn add_trace(mut self, block: BlockId, g: &CMat) -> Self {
        self.blocks.push((block, hermitian_part(g)));
        self
    }

    /// `Im Tr(G X)`, which equals `Re Tr(−jG X)`.
    pub fn add_trace_imag(self, block: BlockId, g: &CMat) -> Self {
        let rotated = g.map(|z| z * C64::new(0.0, -1.0));
        self.add_trace(block, &rotated)
    }

    pub fn add_scalar(mut self, id: ScalarId, coef: f64) -> Self {
        self.scalars.push((id, coef));
        self
    }

    pub fn add_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scale(mut self, k: f64) -> Self {
        for (_, g) in &mut self.blocks {
            *g = g.scale(k);
        }
        for (_, a) in &mut self.scalars {
            *a *= k;
        }
        self.constant *= k;
        self
    }

    pub fn plus(mut self, other: AffineForm) -> Self {
        self.blocks.extend(other.blocks);
        self.scalars.extend(other.scalars);
        self.constant += other.constant;
        self
    }

    pub fn evaluate(&self, blocks: &[CMat], scalars: &[f64]) -> f64 {
        let mut v = self.constant;
        for (b, g) in &self.blocks {
            v += crate::linalg::trace_prod_re(g, &blocks[b.0]);
        }
        for (s, a) in &self.scalars {
            v += a * scalars[s.0];
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Eq,
    Ge,
    Le,
}

/// `Σ a_b X_b + C ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdConstraint {
    pub terms: Vec<(BlockId, f64)>,
    pub constant: CMat,
}

/// `‖tail‖₂ ≤ head`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocConstraint {
    pub head: AffineForm,
    pub tail: Vec<AffineForm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    block_names: Vec<String>,
    block_sizes: Vec<usize>,
    scalar_names: Vec<String>,
    linear: Vec<(AffineForm, Relation)>,
    psd: Vec<PsdConstraint>,
    soc: Vec<SocConstraint>,
    objective: Option<(Sense, AffineForm)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub blocks: Vec<CMat>,
    pub scalars: Vec<f64>,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: u32,
    pub detail: String,
}

impl ConicSolution {
    pub fn block(&self, id: BlockId) -> &CMat {
        &self.blocks[id.0]
    }

    pub fn scalar(&self, id: ScalarId) -> f64 {
        self.scalars[id.0]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn value_of(&self, form: &AffineForm) -> f64 {
        form.evaluate(&self.blocks, &self.scalars)
    }

    fn failed(status: SolveStatus, detail: String) -> Self {
        ConicSolution {
            status,
            blocks: Vec::new(),
            scalars: Vec::new(),
            objective: f64::NAN,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            iterations: 0,
            detail,
        }
    }
}

/// `[[Re H, −Im H], [Im H, Re H]]`.
pub fn embed_hermitian(h: &CMat) -> DMatrix<f64> {
    let n = h.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

/// Inverse of [`embed_hermitian`] followed by Hermitian projection.
pub fn extract_hermitian(e: &DMatrix<f64>) -> CMat {
    let n = e.nrows() / 2;
    let raw = CMat::from_fn(n, n, |i, j| {
        let re = 0.5 * (e[(i, j)] + e[(i + n, j + n)]);
        let im = 0.5 * (e[(i + n, j)] - e[(i, j + n)]);
        C64::new(re, im)
    });
    hermitian_part(&raw)
}

/// Sparse affine row `a'x + c` over the flattened real variables.
#[derive(Debug, Clone, Default, PartialEq)]
struct Row {
    coefs: Vec<(usize, f64)>,
    constant: f64,
}

impl Row {
    fn inf_norm(&self) -> f64 {
        self.coefs.iter().fold(0.0, |m, &(_, a)| m.max(a.abs()))
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coefs.iter().map(|&(j, a)| a * x[j]).sum::<f64>()
    }

    fn scaled(&self, k: f64) -> Row {
        Row {
            coefs: self.coefs.iter().map(|&(j, a)| (j, a * k)).collect(),
            constant: self.constant * k,
        }
    }

    fn push(&mut self, j: usize, a: f64) {
        if a != 0.0 {
            self.coefs.push((j, a));
        }
    }

    fn merged(mut self) -> Row {
        self.coefs.sort_by_key(|&(j, _)| j);
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(self.coefs.len());
        for (j, a) in self.coefs {
            match out.last_mut() {
                Some((lj, la)) if *lj == j => *la += a,
                _ => out.push((j, a)),
            }
        }
        out.retain(|&(_, a)| a != 0.0);
        Row { coefs: out, constant: self.constant }
    }
}

/// Problem lowered to real affine rows grouped by cone.
struct Lowered {
    nvar: usize,
    objective: Row,
    eq: Vec<Row>,
    ge: Vec<Row>,
    soc: Vec<Vec<Row>>,
    /// Real symmetric dimension and upper-triangle entries `(i, j, row)`,
    /// column-major.
    psd: Vec<(usize, Vec<PsdEntry>)>,
}

type PsdEntry = (usize, usize, Row);

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    /// New `n×n` Hermitian PSD matrix variable.
    pub fn add_psd_block(&mut self, name: &str, n: usize) -> BlockId {
        self.block_names.push(name.to_string());
        self.block_sizes.push(n);
        BlockId(self.block_sizes.len() - 1)
    }

    pub fn add_scalar(&mut self, name: &str) -> ScalarId {
        self.scalar_names.push(name.to_string());
        ScalarId(self.scalar_names.len() - 1)
    }

    pub fn block_size(&self, id: BlockId) -> usize {
        self.block_sizes[id.0]
    }

    pub fn num_blocks(&self) -> usize {
        self.block_sizes.len()
    }

    pub fn num_scalars(&self) -> usize {
        self.scalar_names.len()
    }

    pub fn add_linear(&mut self, form: AffineForm, rel: Relation) {
        self.linear.push((form, rel));
    }

    pub fn add_psd(&mut self, terms: Vec<(BlockId, f64)>, constant: CMat) {
        self.psd.push(PsdConstraint { terms, constant });
    }

    pub fn add_soc(&mut self, head: AffineForm, tail: Vec<AffineForm>) {
        self.soc.push(SocConstraint { head, tail });
    }

    pub fn minimize(&mut self, form: AffineForm) {
        self.objective = Some((Sense::Minimize, form));
    }

    pub fn maximize(&mut self, form: AffineForm) {
        self.objective = Some((Sense::Maximize, form));
    }

    /// New scalar `t` with `f_m ≥ t` for every term; maximizing `t` gives
    /// `max min_m f_m`.
    pub fn add_maximin_epigraph(&mut self, terms: Vec<AffineForm>) -> Result<ScalarId> {
        if terms.is_empty() {
            return Err(Error::Model("max-min epigraph needs at least one term".into()));
        }
        let t = self.add_scalar("epigraph");
        for f in terms {
            self.add_linear(f.add_scalar(t, -1.0), Relation::Ge);
        }
        Ok(t)
    }

    fn validate(&self) -> Result<()> {
        let check_form = |f: &AffineForm| -> Result<()> {
            for (b, g) in &f.blocks {
                let n = *self
                    .block_sizes
                    .get(b.0)
                    .ok_or_else(|| Error::Model(format!("unknown block {}", b.0)))?;
                if g.nrows() != n || g.ncols() != n {
                    return Err(Error::Model(format!(
                        "coefficient {}x{} for block {} of size {n}",
                        g.nrows(),
                        g.ncols(),
                        self.block_names[b.0]
                    )));
                }
            }
            for (s, _) in &f.scalars {
                if s.0 >= self.scalar_names.len() {
                    return Err(Error::Model(format!("unknown scalar {}", s.0)));
                }
            }
            Ok(())
        };
        for (f, _) in &self.linear {
            check_form(f)?;
        }
        for c in &self.soc {
            check_form(&c.head)?;
            for f in &c.tail {
                check_form(f)?;
            }
        }
        if let Some((_, f)) = &self.objective {
            check_form(f)?;
        }
        for c in &self.psd {
            let n = c.constant.nrows();
            if c.constant.ncols() != n {
                return Err(Error::Model("non-square PSD constant".into()));
            }
            for (b, _) in &c.terms {
                match self.block_sizes.get(b.0) {
                    Some(&m) if m == n => {}
                    _ => return Err(Error::Model(format!("PSD term block {} does not match size {n}", b.0))),
                }
            }
        }
        Ok(())
    }

    fn offsets(&self) -> (Vec<usize>, usize) {
        let mut offs = Vec::with_capacity(self.block_sizes.len());
        let mut at = 0;
        for &n in &self.block_sizes {
            offs.push(at);
            at += n * n;
        }
        (offs, at)
    }

    fn lower_form(&self, f: &AffineForm, offs: &[usize], scalar_base: usize) -> Row {
        let mut row = Row { coefs: Vec::new(), constant: f.constant };
        for (b, g) in &f.blocks {
            let n = self.block_sizes[b.0];
            for j in 0..n {
                for i in 0..=j {
                    let z = g[(i, j)];
                    if i == j {
                        row.push(offs[b.0] + re_index(i, j), z.re);
                    } else {
                        row.push(offs[b.0] + re_index(i, j), 2.0 * z.re);
                        row.push(offs[b.0] + im_index(i, j, n), 2.0 * z.im);
                    }
                }
            }
        }
        for (s, a) in &f.scalars {
            row.push(scalar_base + s.0, *a);
        }
        row.merged()
    }

    fn lower(&self) -> Result<Lowered> {
        self.validate()?;
        let (offs, scalar_base) = self.offsets();
        let nvar = scalar_base + self.scalar_names.len();

        let (sense, obj) = self
            .objective
            .clone()
            .unwrap_or((Sense::Minimize, AffineForm::new()));
        let mut objective = self.lower_form(&obj, &offs, scalar_base);
        if sense == Sense::Maximize {
            objective = objective.scaled(-1.0);
        }

        let mut eq = Vec::new();
        let mut ge = Vec::new();
        for (f, rel) in &self.linear {
            let row = self.lower_form(f, &offs, scalar_base);
            match rel {
                Relation::Eq => eq.push(row),
                Relation::Ge => ge.push(row),
                Relation::Le => ge.push(row.scaled(-1.0)),
            }
        }

        let soc = self
            .soc
            .iter()
            .map(|c| {
                std::iter::once(&c.head)
                    .chain(&c.tail)
                    .map(|f| self.lower_form(f, &offs, scalar_base))
                    .collect()
            })
            .collect();

        let mut psd = Vec::new();
        for (b, &n) in self.block_sizes.iter().enumerate() {
            psd.push(self.lower_psd(&[(BlockId(b), 1.0)], &CMat::zeros(n, n), &offs));
        }
        for c in &self.psd {
            psd.push(self.lower_psd(&c.terms, &c.constant, &offs));
        }
        Ok(Lowered { nvar, objective, eq, ge, soc, psd })
    }

    /// Entries of the embedding of `Σ a_b X_b + C`.
    fn lower_psd(
        &self,
        terms: &[(BlockId, f64)],
        constant: &CMat,
        offs: &[usize],
    ) -> (usize, Vec<(usize, usize, Row)>) {
        let n = constant.nrows();
        let emb = embed_hermitian(&hermitian_part(constant));
        let mut entries = Vec::with_capacity(n * (2 * n + 1));
        for q in 0..2 * n {
            for p in 0..=q {
                let mut row = Row { coefs: Vec::new(), constant: emb[(p, q)] };
                for &(b, a) in terms {
                    let base = offs[b.0];
                    // Real part sits on both diagonal blocks, −Im on the upper right.
                    if (p < n) == (q < n) {
                        let (i, j) = (p % n, q % n);
                        row.push(base + re_index(i.min(j), i.max(j)), a);
                    } else {
                        let (i, j) = (p, q - n);
                        match i.cmp(&j) {
                            std::cmp::Ordering::Less => row.push(base + im_index(i, j, n), -a),
                            std::cmp::Ordering::Greater => row.push(base + im_index(j, i, n), a),
                            std::cmp::Ordering::Equal => {}
                        }
                    }
                }
                entries.push((p, q, row.merged()));
            }
        }
        (2 * n, entries)
    }

    pub fn solve(&self, tol: f64) -> Result<ConicSolution> {
        let low = self.lower()?;
        let (offs, scalar_base) = self.offsets();

        let mut rows_i = Vec::new();
        let mut cols_j = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let mut push_row = |row: &Row, scale: f64, b: &mut Vec<f64>| {
            let i = b.len();
            for &(j, a) in &row.coefs {
                rows_i.push(i);
                cols_j.push(j);
                vals.push(-a * scale);
            }
            b.push(row.constant * scale);
        };

        let mut trivially_infeasible = None;
        let mut count = |rows: &[Row], is_eq: bool, b: &mut Vec<f64>, push: &mut dyn FnMut(&Row, f64, &mut Vec<f64>)| {
            let mut n = 0;
            for r in rows {
                let norm = r.inf_norm();
                if norm == 0.0 {
                    let bad = if is_eq { r.constant.abs() > tol } else { r.constant < -tol };
                    if bad {
                        trivially_infeasible = Some(r.constant);
                    }
                    continue;
                }
                push(r, 1.0 / norm, b);
                n += 1;
            }
            n
        };
        let n_eq = count(&low.eq, true, &mut b, &mut push_row);
        let n_ge = count(&low.ge, false, &mut b, &mut push_row);
        if let Some(c) = trivially_infeasible {
            return Ok(ConicSolution::failed(
                SolveStatus::Infeasible,
                format!("constant constraint violated ({c:e})"),
            ));
        }
        if n_eq > 0 {
            cones.push(SupportedConeT::ZeroConeT(n_eq));
        }
        if n_ge > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(n_ge));
        }
        for c in &low.soc {
            for r in c {
                push_row(r, 1.0, &mut b);
            }
            cones.push(SupportedConeT::SecondOrderConeT(c.len()));
        }
        let sqrt2 = std::f64::consts::SQRT_2;
        for (dim, entries) in &low.psd {
            if *dim == 0 {
                continue;
            }
            for (p, q, r) in entries {
                push_row(r, if p == q { 1.0 } else { sqrt2 }, &mut b);
            }
            cones.push(SupportedConeT::PSDTriangleConeT(*dim));
        }

        let m = b.len();
        let a = CscMatrix::new_from_triplets(m, low.nvar, rows_i, cols_j, vals);
        let p = CscMatrix::zeros((low.nvar, low.nvar));
        let mut q = vec![0.0; low.nvar];
        for &(j, c) in &low.objective.coefs {
            q[j] += c;
        }
        // Degenerate programs (rank-one optima on the cone boundary) can stall
        // the engine at tight tolerances; retry once with looser ones.
        let mut last = None;
        for inner in [(tol * 0.1).min(1e-8), tol] {
            let settings = DefaultSettingsBuilder::default()
                .verbose(false)
                .max_iter(300)
                .tol_gap_abs(inner)
                .tol_gap_rel(inner)
                .tol_feas(inner)
                .build()
                .map_err(|e| Error::Numerical(format!("solver settings: {e:?}")))?;
            let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
                .map_err(|e| Error::Model(format!("solver setup: {e}")))?;
            solver.solve();
            let status = solver.solution.status;
            last = Some(solver);
            match status {
                SolverStatus::Solved | SolverStatus::AlmostSolved => break,
                SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                    return Ok(ConicSolution::failed(SolveStatus::Infeasible, format!("{status:?}")));
                }
                other => log::debug!("conic solve ended with {other:?} at tolerance {inner:e}"),
            }
        }
        let solver = last.expect("at least one attempt");
        let sol = &solver.solution;
        if !matches!(sol.status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
            return Ok(ConicSolution::failed(SolveStatus::NumericalFailure, format!("{:?}", sol.status)));
        }

        let x = &sol.x;
        let blocks: Vec<CMat> = self
            .block_sizes
            .iter()
            .zip(&offs)
            .map(|(&n, &o)| unpack_block(&x[o..o + n * n], n))
            .collect();
        let scalars = x[scalar_base..].to_vec();
        let primal_residual = self.primal_residual(&low, x);
        let mut objective = low.objective.eval(x);
        if matches!(self.objective, Some((Sense::Maximize, _))) {
            objective = -objective;
        }
        let status = if primal_residual <= tol {
            SolveStatus::Optimal
        } else {
            SolveStatus::NumericalFailure
        };
        if status != SolveStatus::Optimal {
            log::debug!("conic solve {:?} with primal residual {primal_residual:e}", sol.status);
        }
        Ok(ConicSolution {
            status,
            blocks,
            scalars,
            objective,
            primal_residual,
            dual_residual: sol.r_dual,
            iterations: sol.iterations,
            detail: format!("{:?}", sol.status),
        })
    }

    /// Worst scaled constraint violation at `x`.
    fn primal_residual(&self, low: &Lowered, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for r in &low.eq {
            let norm = r.inf_norm().max(1e-300);
            worst = worst.max(r.eval(x).abs() / norm);
        }
        for r in &low.ge {
            let norm = r.inf_norm().max(1e-300);
            worst = worst.max((-r.eval(x)).max(0.0) / norm);
        }
        for c in &low.soc {
            let head = c[0].eval(x);
            let tail = c[1..].iter().map(|r| r.eval(x).powi(2)).sum::<f64>().sqrt();
            worst = worst.max((tail - head).max(0.0) / (1.0 + head.abs()));
        }
        for (dim, entries) in &low.psd {
            if *dim == 0 {
                continue;
            }
            let mut mat = DMatrix::<f64>::zeros(*dim, *dim);
            for (p, q, r) in entries {
                let v = r.eval(x);
                mat[(*p, *q)] = v;
                mat[(*q, *p)] = v;
            }
            let scale = mat.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let lam = mat.symmetric_eigenvalues().min();
            // Embedding doubles the dimension; the floor is per complex row.
            let n = (*dim / 2) as f64;
            worst = worst.max((-lam).max(0.0) / (n * scale));
        }
        worst
    }

    /// Plain-text dump in the CBF (version 3) interchange format.
    pub fn to_cbf(&self) -> Result<String> {
        let low = self.lower()?;
        let mut s = String::new();
        let w = &mut s;
        let _ = writeln!(w, "VER\n3\n");
        let max = matches!(self.objective, Some((Sense::Maximize, _)));
        let _ = writeln!(w, "OBJSENSE\n{}\n", if max { "MAX" } else { "MIN" });
        let _ = writeln!(w, "VAR\n{} 1\nF {}\n", low.nvar, low.nvar);

        let mut scalar_rows: Vec<&Row> = Vec::new();
        let mut groups: Vec<String> = Vec::new();
        if !low.eq.is_empty() {
            groups.push(format!("L= {}", low.eq.len()));
            scalar_rows.extend(&low.eq);
        }
        if !low.ge.is_empty() {
            groups.push(format!("L+ {}", low.ge.len()));
            scalar_rows.extend(&low.ge);
        }
        for c in &low.soc {
            groups.push(format!("Q {}", c.len()));
            scalar_rows.extend(c);
        }
        if !scalar_rows.is_empty() {
            let _ = writeln!(w, "CON\n{} {}", scalar_rows.len(), groups.len());
            for g in &groups {
                let _ = writeln!(w, "{g}");
            }
            let _ = writeln!(w);
        }
        let psd: Vec<_> = low.psd.iter().filter(|(d, _)| *d > 0).collect();
        if !psd.is_empty() {
            let _ = writeln!(w, "PSDCON\n{}", psd.len());
            for (d, _) in &psd {
                let _ = writeln!(w, "{d}");
            }
            let _ = writeln!(w);
        }

        // Objective sign follows the original sense.
        let obj = if max { low.objective.scaled(-1.0) } else { low.objective.clone() };
        if !obj.coefs.is_empty() {
            let _ = writeln!(w, "OBJACOORD\n{}", obj.coefs.len());
            for (j, a) in &obj.coefs {
                let _ = writeln!(w, "{j} {a:e}");
            }
            let _ = writeln!(w);
        }
        if obj.constant != 0.0 {
            let _ = writeln!(w, "OBJBCOORD\n{:e}\n", obj.constant);
        }

        let acoord: Vec<(usize, usize, f64)> = scalar_rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.coefs.iter().map(move |&(j, a)| (i, j, a)))
            .collect();
        if !acoord.is_empty() {
            let _ = writeln!(w, "ACOORD\n{}", acoord.len());
            for (i, j, a) in &acoord {
                let _ = writeln!(w, "{i} {j} {a:e}");
            }
            let _ = writeln!(w);
        }
        let bcoord: Vec<(usize, f64)> = scalar_rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.constant != 0.0)
            .map(|(i, r)| (i, r.constant))
            .collect();
        if !bcoord.is_empty() {
            let _ = writeln!(w, "BCOORD\n{}", bcoord.len());
            for (i, c) in &bcoord {
                let _ = writeln!(w, "{i} {c:e}");
            }
            let _ = writeln!(w);
        }

        // CBF expects lower-triangle indices (row ≥ column).
        let mut hcoord = Vec::new();
        let mut dcoord = Vec::new();
        for (k, (_, entries)) in psd.iter().enumerate() {
            for (p, q, r) in entries {
                for &(j, a) in &r.coefs {
                    hcoord.push(format!("{k} {j} {q} {p} {a:e}"));
                }
                if r.constant != 0.0 {
                    dcoord.push(format!("{k} {q} {p} {:e}", r.constant));
                }
            }
        }
        if !hcoord.is_empty() {
            let _ = writeln!(w, "HCOORD\n{}", hcoord.len());
            for line in &hcoord {
                let _ = writeln!(w, "{line}");
            }
            let _ = writeln!(w);
        }
        if !dcoord.is_empty() {
            let _ = writeln!(w, "DCOORD\n{}", dcoord.len());
            for line in &dcoord {
                let _ = writeln!(w, "{line}");
            }
            let _ = writeln!(w);
        }
        Ok(s)
    }

    pub fn write_cbf(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_cbf()?)?;
        Ok(())
    }
}

fn re_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j);
    j * (j + 1) / 2 + i
}

fn im_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i < j);
    n * (n + 1) / 2 + j * (j - 1) / 2 + i
}

fn unpack_block(x: &[f64], n: usize) -> CMat {
    let mut h = CMat::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let im = if i < j { x[im_index(i, j, n)] } else { 0.0 };
            let z = C64::new(x[re_index(i, j)], im);
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    h
}

/// Smallest eigenvalue of a solved block, for post-solve PSD checks.
pub fn block_min_eigenvalue(x: &CMat) -> f64 {
    hermitian_eigen(x).0.first().copied().unwrap_or(0.0)
}
