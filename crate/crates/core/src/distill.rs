//! Distillation math on dense matrices: temperature softmax, KL divergence,
//! the temperature-scaled distillation loss and its gradient, and top-left
//! weight cropping for progressively smaller students.

use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("{0}")]
    Usage(String),
    #[error("matrix text line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn usage<T>(msg: impl Into<String>) -> Result<T, DistillError> {
    Err(DistillError::Usage(msg.into()))
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DistillError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return usage(format!("{rows}x{cols} matrix cannot hold {} values", data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DistillError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return usage("ragged rows");
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// Text form: a `rows cols` header line, then one whitespace-separated
    /// line per row. Values use the shortest round-trip representation.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.rows, self.cols)?;
        for r in 0..self.rows {
            let line: Vec<String> = self.row(r).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self, DistillError> {
        let mut lines = r.lines().enumerate();
        let parse_err = |line: usize, message: String| DistillError::Parse { line: line + 1, message };
        let (i, header) = lines.next().ok_or_else(|| parse_err(0, "empty input".into()))?;
        let header = header?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(i, format!("bad dimension {t:?}"))))
            .collect::<Result<_, _>>()?;
        let [rows, cols] = dims[..] else {
            return Err(parse_err(i, "header must be `rows cols`".into()));
        };
        let mut data = Vec::with_capacity(rows * cols);
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| parse_err(i, format!("bad number {t:?}"))))
                .collect::<Result<_, _>>()?;
            if vals.len() != cols {
                return Err(parse_err(i, format!("expected {cols} values, got {}", vals.len())));
            }
            data.extend(vals);
        }
        if data.len() != rows * cols {
            return Err(parse_err(0, format!("expected {rows} rows, got {}", data.len() / cols.max(1))));
        }
        Self::new(rows, cols, data)
    }
}

/// Logits: finite entries, at least two classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(Matrix);

impl LogitMatrix {
    pub fn new(m: Matrix) -> Result<Self, DistillError> {
        if m.cols < 2 {
            return usage(format!("logits need at least 2 classes, got {}", m.cols));
        }
        if m.data.iter().any(|v| !v.is_finite()) {
            return usage("logits must be finite");
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DistillError> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

fn check_temperature(t: f64) -> Result<(), DistillError> {
    if !(t > 0.0 && t.is_finite()) {
        return usage(format!("temperature must be positive and finite, got {t}"));
    }
    Ok(())
}

/// softmax(z / T), computed after subtracting the row max.
pub fn softmax_t(z: &[f64], temperature: f64) -> Result<Vec<f64>, DistillError> {
    check_temperature(temperature)?;
    if z.is_empty() || z.iter().any(|v| !v.is_finite()) {
        return usage("logit row must be non-empty and finite");
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| ((v - max) / temperature).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// sum_i p_i ln(p_i / q_i), with 0 ln(0/q) = 0 and +inf where q_i = 0 < p_i.
pub fn kl_div(p: &[f64], q: &[f64]) -> Result<f64, DistillError> {
    if p.len() != q.len() {
        return usage(format!("distribution lengths differ: {} vs {}", p.len(), q.len()));
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Ok(f64::INFINITY);
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total.max(0.0))
}

/// [`kl_div`] with `q` clamped to at least `floor` and renormalized.
pub fn kl_div_floored(p: &[f64], q: &[f64], floor: f64) -> Result<f64, DistillError> {
    if floor <= 0.0 {
        return kl_div(p, q);
    }
    let clamped: Vec<f64> = q.iter().map(|v| v.max(floor)).collect();
    let total: f64 = clamped.iter().sum();
    let q: Vec<f64> = clamped.into_iter().map(|v| v / total).collect();
    kl_div(p, &q)
}

fn check_shapes(a: &LogitMatrix, b: &LogitMatrix) -> Result<(), DistillError> {
    if a.0.shape() != b.0.shape() {
        return usage(format!("shape mismatch: {:?} vs {:?}", a.0.shape(), b.0.shape()));
    }
    Ok(())
}

/// T^2 times the row-mean of KL(softmax(z_t / T) || softmax(z_s / T)).
pub fn distill_loss(teacher: &LogitMatrix, student: &LogitMatrix, temperature: f64) -> Result<f64, DistillError> {
    check_shapes(teacher, student)?;
    check_temperature(temperature)?;
    let rows = teacher.0.rows;
    let mut total = 0.0;
    for r in 0..rows {
        let p = softmax_t(teacher.0.row(r), temperature)?;
        let q = softmax_t(student.0.row(r), temperature)?;
        total += kl_div(&p, &q)?;
    }
    Ok(total / rows as f64 * temperature * temperature)
}

/// Gradient of [`distill_loss`] with respect to the student logits:
/// `T (softmax(z_s/T) - softmax(z_t/T)) / rows`.
pub fn distill_loss_grad(teacher: &LogitMatrix, student: &LogitMatrix, temperature: f64) -> Result<Matrix, DistillError> {
    check_shapes(teacher, student)?;
    check_temperature(temperature)?;
    let (rows, cols) = teacher.0.shape();
    let mut grad = Matrix::zeros(rows, cols);
    let scale = temperature / rows as f64;
    for r in 0..rows {
        let p = softmax_t(teacher.0.row(r), temperature)?;
        let q = softmax_t(student.0.row(r), temperature)?;
        for (g, (qi, pi)) in grad.row_mut(r).iter_mut().zip(q.iter().zip(&p)) {
            *g = scale * (qi - pi);
        }
    }
    Ok(grad)
}

/// Top-left `rows x cols` block of `w`.
pub fn crop_weights(w: &Matrix, rows: usize, cols: usize) -> Result<Matrix, DistillError> {
    if rows == 0 || cols == 0 || rows > w.rows || cols > w.cols {
        return usage(format!("cannot crop {}x{} to {rows}x{cols}", w.rows, w.cols));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        data.extend_from_slice(&w.row(r)[..cols]);
    }
    Matrix::new(rows, cols, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageDims {
    pub layers: usize,
    pub hidden: usize,
}

impl StageDims {
    pub const fn new(layers: usize, hidden: usize) -> Self {
        Self { layers, hidden }
    }
}

/// Student sizes in training order, starting at the teacher. Each stage is
/// initialized by cropping the previous one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShrinkSchedule {
    stages: Vec<StageDims>,
}

impl ShrinkSchedule {
    pub fn stages(&self) -> &[StageDims] {
        &self.stages
    }

    /// Apply the schedule to a `layers x hidden` parameter block, returning
    /// the initialization of every stage.
    pub fn apply(&self, teacher: &Matrix) -> Result<Vec<Matrix>, DistillError> {
        let first = self.stages[0];
        if teacher.shape() != (first.layers, first.hidden) {
            return usage(format!(
                "teacher block is {:?}, schedule starts at {}x{}",
                teacher.shape(),
                first.layers,
                first.hidden
            ));
        }
        let mut out = vec![teacher.clone()];
        for s in &self.stages[1..] {
            let prev = out.last().expect("non-empty");
            out.push(crop_weights(prev, s.layers, s.hidden)?);
        }
        Ok(out)
    }
}

pub fn shrink_plan(teacher: StageDims, targets: &[StageDims]) -> Result<ShrinkSchedule, DistillError> {
    if teacher.layers == 0 || teacher.hidden == 0 {
        return usage("teacher dimensions must be positive");
    }
    let mut stages = vec![teacher];
    for t in targets {
        let prev = *stages.last().expect("non-empty");
        if t.layers == 0 || t.hidden == 0 || t.layers > prev.layers || t.hidden > prev.hidden {
            return usage(format!(
                "stage {}x{} does not shrink from {}x{}",
                t.layers, t.hidden, prev.layers, prev.hidden
            ));
        }
        stages.push(*t);
    }
    Ok(ShrinkSchedule { stages })
}
