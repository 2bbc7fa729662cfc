//! Central finite differences for checking tape gradients.
//!
//! A [`Graph`] builds a scalar from registered inputs on a tape of either
//! precision. [`check_graph`] differentiates it with the tape in the
//! requested precision and compares sampled entries against central
//! differences of the `f64` graph.

use rand::seq::index;
use rand::Rng;

use super::{Element, Tape, Tensor, Var};
use crate::Error;

/// A scalar function of tensors, buildable in any precision.
pub trait Graph {
    fn build<T: Element>(&self, tape: &mut Tape<T>, inputs: &[Var]) -> Result<Var, Error>;
}

/// One compared gradient entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EntryCheck {
    pub input: String,
    pub index: usize,
    pub autodiff: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradReport {
    pub entries: Vec<EntryCheck>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&EntryCheck> {
        self.entries.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    /// Entries whose relative error exceeds `tol`.
    pub fn failures(&self, tol: f64) -> Vec<&EntryCheck> {
        self.entries.iter().filter(|e| e.rel_error > tol).collect()
    }
}

/// Value of `graph` at `inputs` in precision `T`.
pub fn evaluate<T: Element, G: Graph + ?Sized>(graph: &G, inputs: &[Tensor<T>]) -> Result<f64, Error> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = graph.build(&mut tape, &vars)?;
    Ok(tape.value(out).data()[0].as_f64())
}

/// Tape gradients of `graph` with respect to every input, in precision `T`.
pub fn gradients<T: Element, G: Graph + ?Sized>(graph: &G, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<T>>, Error> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.param(x.clone())).collect();
    let out = graph.build(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars.iter().map(|&v| grads.wrt(v)).collect())
}

/// Central differences of the `f64` graph at sampled entries.
#[derive(Clone, Debug, PartialEq)]
pub struct NumericGradients {
    /// `(input, index, value)` triples.
    pub entries: Vec<(usize, usize, f64)>,
}

/// Differentiates the `f64` graph numerically with step `h` at `count`
/// sampled entries of each input (all entries of smaller inputs).
pub fn numeric_gradients<G: Graph + ?Sized, R: Rng + ?Sized>(
    graph: &G,
    inputs: &[Tensor<f64>],
    count: usize,
    h: f64,
    rng: &mut R,
) -> Result<NumericGradients, Error> {
    let mut entries = Vec::new();
    for (j, x) in inputs.iter().enumerate() {
        let indices = sample_indices(x.len(), count, rng);
        let mut probe = inputs.to_vec();
        let mut failure = None;
        let numeric = central_difference(
            |t| {
                probe[j] = t.clone();
                evaluate(graph, &probe).unwrap_or_else(|e| {
                    failure.get_or_insert(e);
                    f64::NAN
                })
            },
            x,
            &indices,
            h,
        );
        if let Some(e) = failure {
            return Err(e);
        }
        entries.extend(indices.into_iter().zip(numeric).map(|(i, v)| (j, i, v)));
    }
    Ok(NumericGradients { entries })
}

/// Compares `T`-precision tape gradients against precomputed numeric ones.
pub fn compare<T: Element, G: Graph + ?Sized>(
    graph: &G,
    inputs: &[(String, Tensor<f64>)],
    numeric: &NumericGradients,
) -> Result<GradReport, Error> {
    let cast: Vec<Tensor<T>> = inputs.iter().map(|(_, t)| t.cast()).collect();
    let grads = gradients(graph, &cast)?;
    let entries = numeric
        .entries
        .iter()
        .map(|&(j, i, fd)| {
            let ad = grads[j].data()[i].as_f64();
            EntryCheck {
                input: inputs[j].0.clone(),
                index: i,
                autodiff: ad,
                numeric: fd,
                rel_error: relative_error(ad, fd),
            }
        })
        .collect();
    Ok(GradReport { entries })
}

/// [`numeric_gradients`] followed by [`compare`] in precision `T`.
pub fn check_graph<T: Element, G: Graph + ?Sized, R: Rng + ?Sized>(
    graph: &G,
    inputs: &[(String, Tensor<f64>)],
    count: usize,
    h: f64,
    rng: &mut R,
) -> Result<GradReport, Error> {
    let base: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let numeric = numeric_gradients(graph, &base, count, h, rng)?;
    compare::<T, G>(graph, inputs, &numeric)
}

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for each index `i`.
pub fn central_difference(
    mut f: impl FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    indices: &[usize],
    h: f64,
) -> Vec<f64> {
    let mut probe = x.clone();
    indices
        .iter()
        .map(|&i| {
            let v = x.data()[i];
            probe.data_mut()[i] = v + h;
            let up = f(&probe);
            probe.data_mut()[i] = v - h;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|)`; zero when both are zero.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Up to `count` distinct indices below `len`, in ascending order.
pub fn sample_indices<R: Rng + ?Sized>(len: usize, count: usize, rng: &mut R) -> Vec<usize> {
    let mut v = index::sample(rng, len, count.min(len)).into_vec();
    v.sort_unstable();
    v
}
