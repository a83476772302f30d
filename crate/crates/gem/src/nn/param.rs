//! Flat parameter storage addressed through a named segment table.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// One named tensor inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered segment table describing how a flat vector splits into tensors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total: usize,
}

impl ParamLayout {
    pub fn new(named_shapes: Vec<(String, Vec<usize>)>) -> Self {
        let mut segments = Vec::with_capacity(named_shapes.len());
        let mut offset = 0;
        for (name, shape) in named_shapes {
            let len: usize = shape.iter().product();
            segments.push(Segment { name, shape, offset });
            offset += len;
        }
        ParamLayout { segments, total: offset }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    /// Range covering a contiguous run of segments, `from` inclusive to
    /// `to` inclusive, identified by name.
    pub fn span(&self, from: &str, to: &str) -> Option<Range<usize>> {
        let a = self.segment(from)?;
        let b = self.segment(to)?;
        Some(a.offset..b.offset + b.len())
    }
}

/// A flat `f64` vector plus its shared layout.
#[derive(Debug, Clone)]
pub struct ParamVector {
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![0.0; layout.total_len()];
        ParamVector { layout, values }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            layout.total_len(),
            "value count {} does not match layout length {}",
            values.len(),
            layout.total_len()
        );
        ParamVector { layout, values }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn layout_arc(&self) -> Arc<ParamLayout> {
        Arc::clone(&self.layout)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segment(&self, name: &str) -> &[f64] {
        let seg = self
            .layout
            .segment(name)
            .unwrap_or_else(|| panic!("no segment named '{name}'"));
        &self.values[seg.range()]
    }

    pub fn segment_mut(&mut self, name: &str) -> &mut [f64] {
        let seg = self
            .layout
            .segment(name)
            .unwrap_or_else(|| panic!("no segment named '{name}'"))
            .clone();
        &mut self.values[seg.range()]
    }
}
