//! Cumulative flows by Euler integration of a constant per-frame flow.
//!
//! Forward: `F_{0->n}(x) = F_{0->n-1}(x) + F(x + F_{0->n-1}(x))`, starting from zero.
//! Backward: the same recurrence driven by `-F`, giving `F_{N->N-n}` after `n` steps.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::FlowField;

/// Forward and backward cumulative flows for frame `n` of an `N`-frame loop.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeFlowPair {
    /// `F_{0->n}`
    pub forward: FlowField,
    /// `F_{N->N-n}`, i.e. the reverse flow integrated `N - n` steps.
    pub backward: FlowField,
    pub n: usize,
    pub total: usize,
}

/// Direction of integration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

/// Stateful integrator that advances one Euler step at a time.
///
/// Every public entry point goes through [`EulerIntegrator::step`], so an
/// incrementally advanced state is bitwise equal to one computed from scratch.
#[derive(Debug, Clone)]
pub struct EulerIntegrator<'a> {
    flow: &'a FlowField,
    direction: Direction,
    steps: usize,
    state: Vec<[f32; 2]>,
}

impl<'a> EulerIntegrator<'a> {
    pub fn new(flow: &'a FlowField, direction: Direction) -> Self {
        Self {
            flow,
            direction,
            steps: 0,
            state: vec![[0.0; 2]; flow.width() * flow.height()],
        }
    }

    /// Resumes integration from a previously computed cumulative field.
    pub fn resume(flow: &'a FlowField, direction: Direction, steps: usize, state: &FlowField) -> Self {
        assert_eq!((state.width(), state.height()), (flow.width(), flow.height()));
        Self {
            flow,
            direction,
            steps,
            state: state.data().to_vec(),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Current cumulative field.
    pub fn current(&self) -> FlowField {
        FlowField::from_raw_unchecked(self.flow.width(), self.flow.height(), self.state.clone())
    }

    pub fn step(&mut self) {
        let width = self.flow.width();
        let flow = self.flow;
        let sign = self.direction.sign();
        self.state
            .par_chunks_mut(width)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, acc) in row.iter_mut().enumerate() {
                    let ax = acc[0] as f64;
                    let ay = acc[1] as f64;
                    let v = flow.sample_bilinear(x as f64 + ax, y as f64 + ay);
                    acc[0] = (ax + sign * v[0]) as f32;
                    acc[1] = (ay + sign * v[1]) as f32;
                }
            });
        self.steps += 1;
    }

    pub fn advance_to(&mut self, steps: usize) {
        assert!(steps >= self.steps, "integration cannot run backwards in step count");
        while self.steps < steps {
            self.step();
        }
    }
}

/// `F_{0->n}`: the flow integrated forward for `n` steps.
pub fn euler_forward(flow: &FlowField, n: usize) -> FlowField {
    let mut it = EulerIntegrator::new(flow, Direction::Forward);
    it.advance_to(n);
    it.current()
}

/// The reverse flow integrated for `n` steps; equal to `euler_forward(&reverse_flow(flow), n)`.
pub fn euler_backward(flow: &FlowField, n: usize) -> FlowField {
    let mut it = EulerIntegrator::new(flow, Direction::Backward);
    it.advance_to(n);
    it.current()
}

/// Cumulative flow pairs for every frame `n = 0..=total`, one integration pass per direction.
pub fn integrate_sequence(flow: &FlowField, total: usize) -> Result<Vec<CumulativeFlowPair>> {
    if total == 0 {
        return Err(Error::InvalidInput("loop length must be at least 1".into()));
    }
    let mut fwd = EulerIntegrator::new(flow, Direction::Forward);
    let mut forward = Vec::with_capacity(total + 1);
    forward.push(fwd.current());
    for _ in 0..total {
        fwd.step();
        forward.push(fwd.current());
    }

    // backward[m] integrates m steps; frame n needs m = total - n
    let mut bwd = EulerIntegrator::new(flow, Direction::Backward);
    let mut backward = Vec::with_capacity(total + 1);
    backward.push(bwd.current());
    for _ in 0..total {
        bwd.step();
        backward.push(bwd.current());
    }

    Ok(forward
        .into_iter()
        .enumerate()
        .map(|(n, f)| CumulativeFlowPair {
            forward: f,
            backward: backward[total - n].clone(),
            n,
            total,
        })
        .collect())
}
