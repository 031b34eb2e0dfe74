use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Flat parameter storage partitioned into named, contiguous segments.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

impl ParameterVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a zeroed segment and returns its range.
    pub fn push_segment(&mut self, name: impl Into<String>, len: usize) -> Range<usize> {
        let offset = self.values.len();
        self.values.resize(offset + len, 0.0);
        self.segments.push(Segment { name: name.into(), offset, len });
        offset..offset + len
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Replaces all values; the length must match.
    pub fn set_values(&mut self, values: &[f64]) -> Result<(), super::NnError> {
        if values.len() != self.values.len() {
            return Err(super::NnError::Shape { expected: self.values.len(), actual: values.len() });
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
