use serde::{Deserialize, Serialize};

use crate::error::{Result, SfaError};

/// A sample of `n` firms: `p` inputs and one output per row.
///
/// Simulated samples also carry the inefficiency draw of each row so that
/// estimated efficiencies can be scored; rows whose truth is not defined
/// (replaced outliers) hold `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    input_names: Vec<String>,
    /// Row-major `n × p`.
    inputs: Vec<f64>,
    output: Vec<f64>,
    true_u: Option<Vec<Option<f64>>>,
}

impl Dataset {
    pub fn new(input_names: Vec<String>, inputs: Vec<f64>, output: Vec<f64>) -> Result<Self> {
        let p = input_names.len();
        let n = output.len();
        if inputs.len() != n * p {
            return Err(SfaError::Dimension {
                expected: n * p,
                got: inputs.len(),
            });
        }
        Ok(Self {
            input_names,
            inputs,
            output,
            true_u: None,
        })
    }

    /// Convenience constructor for a one-input sample.
    pub fn single_input(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        Self::new(vec!["x1".to_string()], x, y)
    }

    pub fn with_true_u(mut self, true_u: Vec<Option<f64>>) -> Result<Self> {
        if true_u.len() != self.len() {
            return Err(SfaError::Dimension {
                expected: self.len(),
                got: true_u.len(),
            });
        }
        self.true_u = Some(true_u);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.output.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output.is_empty()
    }

    pub fn num_inputs(&self) -> usize {
        self.input_names.len()
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn inputs(&self, i: usize) -> &[f64] {
        let p = self.num_inputs();
        &self.inputs[i * p..(i + 1) * p]
    }

    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn y(&self, i: usize) -> f64 {
        self.output[i]
    }

    pub fn true_u(&self) -> Option<&[Option<f64>]> {
        self.true_u.as_deref()
    }

    /// Column `j` of the inputs.
    pub fn input_column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.inputs(i)[j]).collect()
    }

    /// Copy with a new output vector (same inputs), dropping any recorded
    /// truth.
    pub fn with_output(&self, output: Vec<f64>) -> Result<Self> {
        if output.len() != self.len() {
            return Err(SfaError::Dimension {
                expected: self.len(),
                got: output.len(),
            });
        }
        Ok(Self {
            input_names: self.input_names.clone(),
            inputs: self.inputs.clone(),
            output,
            true_u: None,
        })
    }

    /// Overwrite row `i` in place.
    pub fn replace_row(&mut self, i: usize, inputs: &[f64], y: f64, true_u: Option<f64>) {
        let p = self.num_inputs();
        self.inputs[i * p..(i + 1) * p].copy_from_slice(inputs);
        self.output[i] = y;
        if let Some(t) = self.true_u.as_mut() {
            t[i] = true_u;
        }
    }

    /// Rows in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        let p = self.num_inputs();
        let mut inputs = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            inputs.extend_from_slice(self.inputs(i));
        }
        Self {
            input_names: self.input_names.clone(),
            inputs,
            output: rows.iter().map(|&i| self.output[i]).collect(),
            true_u: self
                .true_u
                .as_ref()
                .map(|t| rows.iter().map(|&i| t[i]).collect()),
        }
    }
}
