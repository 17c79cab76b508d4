//! Counterfactual optimization over generator inputs.
//!
//! With classifier `C` and generator `G` frozen, the engine minimizes
//!
//! ```text
//! λ · cross_entropy(C(G(v)), target) + ‖I − G(v)‖₁
//! ```
//!
//! over the variables `v` (a latent code, or an attribute vector with the
//! query image held fixed) by plain gradient descent with box clipping and
//! per-coordinate freezing. A criticism drives the prediction to a
//! different target class; a prototype drives confidence in the query's
//! own class. Around the inner loop, [`Engine::minimal_change_bisect`]
//! searches the penalty weight λ for the smallest value that still flips
//! the prediction, which is where the L1 change `δ` is smallest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, VarId};
use crate::models::{AttributeEditor, Classifier, LatentGenerator, ModelError};
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_TAU_CRITICISM: f64 = 0.5;
pub const DEFAULT_TAU_PROTOTYPE: f64 = 0.99;
pub const DEFAULT_STEP_LATENT: f64 = 0.05;
pub const DEFAULT_STEP_ATTRIBUTE: f64 = 0.02;
pub const DEFAULT_MAX_STEPS: usize = 2000;
pub const LATENT_BOUND: f64 = 3.0;
pub const LAMBDA_CAP: f64 = 1e6;
pub const DEFAULT_BISECT_ITERATIONS: usize = 20;
pub const DEFAULT_INVERT_REFINE_STEPS: usize = 200;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("criticism target {target} is already the predicted class; use prototype mode")]
    DegenerateTarget { target: usize },
    #[error("norm order p = {p} is not implemented; only p = 1 is supported")]
    UnsupportedNorm { p: u8 },
    #[error("{op} requires {expected} mode")]
    WrongMode {
        op: &'static str,
        expected: &'static str,
    },
    #[error("non-finite gradient at step {step}; model or variable scale is misconfigured")]
    NonFiniteGradient { step: usize },
    #[error("no prediction flip up to the λ cap {cap}; sweep recorded {} probes", sweep.len())]
    NoFlipWithinCap { cap: f64, sweep: Vec<SweepEntry> },
    #[error("trajectory parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which input space the optimizer walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    Latent,
    Attribute,
}

/// Variable space: kind plus a per-coordinate `[lo, hi]` box the iterates
/// are clipped into.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpace {
    pub kind: SpaceKind,
    pub bounds: Vec<(f64, f64)>,
}

impl VariableSpace {
    /// Latent box `[−3, 3]^dim`, covering the trained encoder's code range.
    pub fn latent(dim: usize) -> Self {
        VariableSpace {
            kind: SpaceKind::Latent,
            bounds: vec![(-LATENT_BOUND, LATENT_BOUND); dim],
        }
    }

    /// Attribute box `[0, 1]^n`.
    pub fn attribute(n: usize) -> Self {
        VariableSpace {
            kind: SpaceKind::Attribute,
            bounds: vec![(0.0, 1.0); n],
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Criticism,
    Prototype,
}

/// One introspection request. `target_class` is the criticism target `c'`,
/// or the query's own class for prototypes.
#[derive(Debug, Clone)]
pub struct CounterfactualQuery {
    pub query_image: Tensor,
    pub mode: Mode,
    pub target_class: usize,
    pub variable_space: VariableSpace,
    pub frozen_mask: Vec<bool>,
    pub lambda: f64,
    /// Distance norm order; only `p = 1` is implemented.
    pub norm_order: u8,
    pub max_steps: usize,
    pub step_size: f64,
    /// Success threshold τ on the target-class probability.
    pub flip_threshold: f64,
    pub seed: u64,
    /// Starting variables. Latent queries fall back to encoder inversion;
    /// attribute queries must provide the query image's annotated or
    /// predicted attributes.
    pub initial_variables: Option<Vec<f64>>,
}

impl CounterfactualQuery {
    pub fn criticism(query_image: Tensor, target_class: usize, space: VariableSpace) -> Self {
        let dim = space.dim();
        let step = match space.kind {
            SpaceKind::Latent => DEFAULT_STEP_LATENT,
            SpaceKind::Attribute => DEFAULT_STEP_ATTRIBUTE,
        };
        CounterfactualQuery {
            query_image,
            mode: Mode::Criticism,
            target_class,
            variable_space: space,
            frozen_mask: vec![false; dim],
            lambda: 1.0,
            norm_order: 1,
            max_steps: DEFAULT_MAX_STEPS,
            step_size: step,
            flip_threshold: DEFAULT_TAU_CRITICISM,
            seed: 0,
            initial_variables: None,
        }
    }

    pub fn prototype(query_image: Tensor, own_class: usize, space: VariableSpace) -> Self {
        let mut q = Self::criticism(query_image, own_class, space);
        q.mode = Mode::Prototype;
        q.flip_threshold = DEFAULT_TAU_PROTOTYPE;
        q
    }
}

/// One recorded optimizer state.
#[derive(Debug, Clone)]
pub struct TrajectoryStep {
    pub step: usize,
    pub variables: Tensor,
    pub image: Tensor,
    pub probs: Tensor,
    pub objective: f64,
    pub cls_term: f64,
    pub dist_term: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    BudgetExhausted,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Outcome::Success => f.write_str("success"),
            Outcome::BudgetExhausted => f.write_str("budget_exhausted"),
        }
    }
}

/// Full optimization path; `result` duplicates the final step.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub outcome: Outcome,
    pub result: TrajectoryStep,
    pub image_rows: usize,
    pub image_cols: usize,
}

impl Trajectory {
    /// Gradient updates actually taken.
    pub fn steps_used(&self) -> usize {
        self.result.step
    }
}

/// One λ probe of the bisection sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub lambda: f64,
    pub flipped: bool,
    pub delta: f64,
}

/// Outcome of the minimal-change search.
#[derive(Debug)]
pub struct MinimalChangeResult {
    pub lambda_star: f64,
    pub delta_star: f64,
    pub trajectory: Trajectory,
    pub sweep: Vec<SweepEntry>,
    pub bisection_iterations_used: usize,
}

/// The frozen generative model the variables feed.
pub enum Generator<'a> {
    Latent(&'a LatentGenerator),
    Attribute(&'a AttributeEditor),
    /// Test fixture: the variables are the image, `G(I; A') = A'`.
    Identity { rows: usize, cols: usize },
}

impl Generator<'_> {
    fn variable_dim(&self) -> usize {
        match self {
            Generator::Latent(g) => g.latent_dim,
            Generator::Attribute(e) => e.attribute_count(),
            Generator::Identity { rows, cols } => rows * cols,
        }
    }

    fn image_dims(&self) -> (usize, usize) {
        match self {
            Generator::Latent(g) => (g.image_rows, g.image_cols),
            Generator::Attribute(e) => (e.image_rows, e.image_cols),
            Generator::Identity { rows, cols } => (*rows, *cols),
        }
    }

    fn kind(&self) -> SpaceKind {
        match self {
            Generator::Latent(_) => SpaceKind::Latent,
            Generator::Attribute(_) | Generator::Identity { .. } => SpaceKind::Attribute,
        }
    }
}

struct Prepared {
    initial: Tensor,
    /// Attribute mode: the editor code of the query image, fixed per query.
    code: Option<Tensor>,
}

struct Eval {
    total: f64,
    cls_term: f64,
    dist_term: f64,
    image: Tensor,
    probs: Tensor,
    grad: Tensor,
}

/// Handles recorded by [`Engine::record_objective`], for callers that need
/// direct tape access (gradient checking).
pub struct ObjectiveNodes {
    pub total: VarId,
    pub cls_term: VarId,
    pub dist_term: VarId,
    pub image: VarId,
    pub probs: VarId,
}

/// Result of encoder-initialized latent inversion; errors are mean
/// per-pixel L1.
#[derive(Debug, Clone)]
pub struct Inversion {
    pub latent: Tensor,
    pub initial_error: f64,
    pub final_error: f64,
}

/// Zeroes gradient coordinates wherever the mask is true.
pub fn apply_frozen_mask(gradient: &Tensor, mask: &[bool]) -> Result<Tensor, EngineError> {
    if gradient.numel() != mask.len() {
        return Err(EngineError::InvalidQuery(format!(
            "frozen mask length {} does not match gradient length {}",
            mask.len(),
            gradient.numel()
        )));
    }
    let data: Vec<f64> = gradient
        .data()
        .iter()
        .zip(mask.iter())
        .map(|(&g, &frozen)| if frozen { 0.0 } else { g })
        .collect();
    Ok(Tensor::new(gradient.shape().to_vec(), data).expect("mask preserves shape"))
}

pub struct Engine<'a> {
    classifier: &'a Classifier,
    generator: Generator<'a>,
}

impl<'a> Engine<'a> {
    pub fn new(classifier: &'a Classifier, generator: Generator<'a>) -> Self {
        Engine {
            classifier,
            generator,
        }
    }

    pub fn variable_dim(&self) -> usize {
        self.generator.variable_dim()
    }

    pub fn image_dims(&self) -> (usize, usize) {
        self.generator.image_dims()
    }

    /// Records the penalty objective onto a tape rooted at `vars` and the
    /// query image, returning the node handles. This is the single tape
    /// assembly every evaluation (and every gradient check) goes through.
    pub fn record_objective(
        &self,
        tape: &mut Tape,
        query_image: &Tensor,
        lambda: f64,
        target_class: usize,
        code: Option<&Tensor>,
        vars: VarId,
    ) -> Result<ObjectiveNodes, EngineError> {
        let image = match (&self.generator, code) {
            (Generator::Latent(g), _) => g.decode_single(tape, vars)?,
            (Generator::Attribute(e), Some(code)) => {
                let code_var = tape.var(code.clone());
                e.decode_with_attributes(tape, code_var, vars)?
            }
            (Generator::Attribute(_), None) => {
                return Err(EngineError::InvalidQuery(
                    "attribute objective needs the query image code".into(),
                ))
            }
            (Generator::Identity { .. }, _) => vars,
        };
        let probs = self.classifier.forward_single(tape, image)?;
        let cls_term = tape.cross_entropy(probs, target_class)?;
        let image_ref = tape.var(query_image.clone());
        let dist_term = tape.l1_distance(image_ref, image)?;
        let scaled = tape.scale(cls_term, lambda)?;
        let total = tape.add(scaled, dist_term)?;
        Ok(ObjectiveNodes {
            total,
            cls_term,
            dist_term,
            image,
            probs,
        })
    }

    /// Objective value decomposition `(total, classification, distance)` at
    /// the given variables. `total = λ·classification + distance`.
    pub fn objective(
        &self,
        query: &CounterfactualQuery,
        variables: &Tensor,
    ) -> Result<(f64, f64, f64), EngineError> {
        if variables.numel() != self.variable_dim() {
            return Err(EngineError::InvalidQuery(format!(
                "variables have {} coordinates, space expects {}",
                variables.numel(),
                self.variable_dim()
            )));
        }
        let code = self.attribute_code(query)?;
        let mut tape = Tape::new();
        let vars = tape.var(variables.clone());
        let nodes = self.record_objective(
            &mut tape,
            &query.query_image,
            query.lambda,
            query.target_class,
            code.as_ref(),
            vars,
        )?;
        Ok((
            tape.value(nodes.total).item(),
            tape.value(nodes.cls_term).item(),
            tape.value(nodes.dist_term).item(),
        ))
    }

    fn attribute_code(&self, query: &CounterfactualQuery) -> Result<Option<Tensor>, EngineError> {
        match &self.generator {
            Generator::Attribute(e) => Ok(Some(e.encode_value(&query.query_image)?)),
            _ => Ok(None),
        }
    }

    fn evaluate(
        &self,
        query: &CounterfactualQuery,
        prep: &Prepared,
        variables: &Tensor,
    ) -> Result<Eval, EngineError> {
        let mut tape = Tape::new();
        let vars = tape.var(variables.clone());
        let nodes = self.record_objective(
            &mut tape,
            &query.query_image,
            query.lambda,
            query.target_class,
            prep.code.as_ref(),
            vars,
        )?;
        let grads = tape.backward(nodes.total)?;
        Ok(Eval {
            total: tape.value(nodes.total).item(),
            cls_term: tape.value(nodes.cls_term).item(),
            dist_term: tape.value(nodes.dist_term).item(),
            image: tape.value(nodes.image).clone(),
            probs: tape.value(nodes.probs).clone(),
            grad: grads.get_or_zeros(vars, variables.shape()),
        })
    }

    fn validate(&self, query: &CounterfactualQuery) -> Result<(), EngineError> {
        let dim = self.variable_dim();
        let space = &query.variable_space;
        if space.kind != self.generator.kind() {
            return Err(EngineError::InvalidQuery(format!(
                "variable space kind {:?} does not match the loaded generator",
                space.kind
            )));
        }
        if space.dim() != dim {
            return Err(EngineError::InvalidQuery(format!(
                "variable space has {} bounds, generator expects {dim}",
                space.dim()
            )));
        }
        if query.frozen_mask.len() != dim {
            return Err(EngineError::InvalidQuery(format!(
                "frozen mask length {} does not match variable dimension {dim}",
                query.frozen_mask.len()
            )));
        }
        for (i, &(lo, hi)) in space.bounds.iter().enumerate() {
            if !(lo <= hi) {
                return Err(EngineError::InvalidQuery(format!(
                    "bounds for coordinate {i} are inverted: [{lo}, {hi}]"
                )));
            }
        }
        if query.lambda < 0.0 || !query.lambda.is_finite() {
            return Err(EngineError::InvalidQuery(format!(
                "λ must be a nonnegative finite value, got {}",
                query.lambda
            )));
        }
        if !(query.flip_threshold > 0.0 && query.flip_threshold < 1.0) {
            return Err(EngineError::InvalidQuery(format!(
                "flip threshold τ must be in (0,1), got {}",
                query.flip_threshold
            )));
        }
        if query.step_size <= 0.0 {
            return Err(EngineError::InvalidQuery("step size must be positive".into()));
        }
        if query.norm_order != 1 {
            return Err(EngineError::UnsupportedNorm { p: query.norm_order });
        }
        let image_dim = {
            let (r, c) = self.image_dims();
            r * c
        };
        if query.query_image.numel() != image_dim {
            return Err(EngineError::InvalidQuery(format!(
                "query image has {} pixels, generator produces {image_dim}",
                query.query_image.numel()
            )));
        }
        if query.target_class >= self.classifier.num_classes {
            return Err(EngineError::InvalidQuery(format!(
                "target class {} out of range for {} classes",
                query.target_class, self.classifier.num_classes
            )));
        }
        if let Some(init) = &query.initial_variables {
            if init.len() != dim {
                return Err(EngineError::InvalidQuery(format!(
                    "initial variables have {} coordinates, expected {dim}",
                    init.len()
                )));
            }
            for (i, (&v, &(lo, hi))) in init.iter().zip(space.bounds.iter()).enumerate() {
                if v < lo || v > hi {
                    return Err(EngineError::InvalidQuery(format!(
                        "initial variable {i} = {v} outside bounds [{lo}, {hi}]"
                    )));
                }
            }
        }

        let (current, _) = self.classifier.predict(&query.query_image)?;
        match query.mode {
            Mode::Criticism if query.target_class == current => {
                Err(EngineError::DegenerateTarget {
                    target: query.target_class,
                })
            }
            Mode::Prototype if query.target_class != current => {
                Err(EngineError::InvalidQuery(format!(
                    "prototype target {} must be the predicted class {current}",
                    query.target_class
                )))
            }
            _ => Ok(()),
        }
    }

    fn prepare(&self, query: &CounterfactualQuery) -> Result<Prepared, EngineError> {
        let bounds = &query.variable_space.bounds;
        let clamp_into = |mut v: Vec<f64>| -> Vec<f64> {
            for (x, &(lo, hi)) in v.iter_mut().zip(bounds.iter()) {
                *x = x.clamp(lo, hi);
            }
            v
        };
        let initial = match (&self.generator, &query.initial_variables) {
            (_, Some(init)) => init.clone(),
            (Generator::Latent(_), None) => {
                let inv = self.invert_to_latent(&query.query_image, DEFAULT_INVERT_REFINE_STEPS)?;
                clamp_into(inv.latent.data().to_vec())
            }
            (Generator::Attribute(_), None) => {
                return Err(EngineError::InvalidQuery(
                    "attribute-space queries need initial variables \
                     (the query image's annotated or predicted attributes)"
                        .into(),
                ))
            }
            (Generator::Identity { .. }, None) => query.query_image.data().to_vec(),
        };
        Ok(Prepared {
            initial: Tensor::vector(&initial),
            code: self.attribute_code(query)?,
        })
    }

    fn success(&self, query: &CounterfactualQuery, probs: &Tensor) -> bool {
        let p = probs.data()[query.target_class];
        match query.mode {
            Mode::Criticism => probs.argmax() == query.target_class && p >= query.flip_threshold,
            Mode::Prototype => p >= query.flip_threshold,
        }
    }

    /// Gradient-descent inner loop: record the current state, test for
    /// success, then step `v ← clip(v − η·∇)` with frozen coordinates'
    /// gradients zeroed. Stops on success or after `max_steps` updates.
    pub fn optimize(&self, query: &CounterfactualQuery) -> Result<Trajectory, EngineError> {
        self.validate(query)?;
        let prep = self.prepare(query)?;
        let dim = self.variable_dim();
        let mut variables = prep.initial.clone();
        let mut steps: Vec<TrajectoryStep> = Vec::new();

        let outcome = loop {
            let step_index = steps.len();
            let eval = self.evaluate(query, &prep, &variables)?;
            steps.push(TrajectoryStep {
                step: step_index,
                variables: variables.clone(),
                image: eval.image,
                probs: eval.probs.clone(),
                objective: eval.total,
                cls_term: eval.cls_term,
                dist_term: eval.dist_term,
            });
            if self.success(query, &eval.probs) {
                break Outcome::Success;
            }
            if step_index >= query.max_steps {
                break Outcome::BudgetExhausted;
            }
            if !eval.grad.all_finite() {
                return Err(EngineError::NonFiniteGradient { step: step_index });
            }
            let masked = apply_frozen_mask(&eval.grad, &query.frozen_mask)?;
            let data = variables.data_mut();
            for i in 0..dim {
                if query.frozen_mask[i] {
                    continue;
                }
                let (lo, hi) = query.variable_space.bounds[i];
                data[i] = (data[i] - query.step_size * masked.data()[i]).clamp(lo, hi);
            }
        };

        let result = steps.last().expect("at least one step recorded").clone();
        let (image_rows, image_cols) = self.image_dims();
        Ok(Trajectory {
            steps,
            outcome,
            result,
            image_rows,
            image_cols,
        })
    }

    /// The prototype flavor of [`Engine::optimize`]: same machinery with
    /// the target set to the query's own class and a confidence threshold.
    pub fn prototype_optimize(
        &self,
        query: &CounterfactualQuery,
    ) -> Result<Trajectory, EngineError> {
        if query.mode != Mode::Prototype {
            return Err(EngineError::WrongMode {
                op: "prototype_optimize",
                expected: "prototype",
            });
        }
        self.optimize(query)
    }

    /// Searches for the smallest λ whose inner optimization still flips the
    /// prediction. The upper bound expands geometrically (×10, capped) until
    /// it flips, then `iterations` rounds of bisection shrink toward the
    /// flip frontier. Every probe lands in the sweep log.
    pub fn minimal_change_bisect(
        &self,
        query: &CounterfactualQuery,
        lambda_lo: f64,
        lambda_hi: f64,
        iterations: usize,
    ) -> Result<MinimalChangeResult, EngineError> {
        if query.mode != Mode::Criticism {
            return Err(EngineError::WrongMode {
                op: "minimal_change_bisect",
                expected: "criticism",
            });
        }
        if !(lambda_lo >= 0.0 && lambda_hi > 0.0 && lambda_lo <= lambda_hi) {
            return Err(EngineError::InvalidQuery(format!(
                "λ bounds must satisfy 0 ≤ lo ≤ hi with hi > 0, got [{lambda_lo}, {lambda_hi}]"
            )));
        }

        let mut sweep: Vec<SweepEntry> = Vec::new();
        let probe = |lambda: f64,
                         sweep: &mut Vec<SweepEntry>|
         -> Result<(bool, f64, Trajectory), EngineError> {
            let mut q = query.clone();
            q.lambda = lambda;
            let trajectory = self.optimize(&q)?;
            let flipped = trajectory.outcome == Outcome::Success;
            let delta = trajectory.result.dist_term;
            sweep.push(SweepEntry {
                lambda,
                flipped,
                delta,
            });
            Ok((flipped, delta, trajectory))
        };

        // establish a flipping upper bound, expanding ×10 up to the cap
        let mut hi = lambda_hi;
        let mut best = loop {
            let (flipped, delta, trajectory) = probe(hi, &mut sweep)?;
            if flipped {
                break (hi, delta, trajectory);
            }
            if hi >= LAMBDA_CAP {
                return Err(EngineError::NoFlipWithinCap {
                    cap: LAMBDA_CAP,
                    sweep,
                });
            }
            hi = (hi * 10.0).min(LAMBDA_CAP);
        };

        let mut iterations_used = 0;
        if lambda_lo < hi {
            // the user's floor flipping means nothing below it is probed
            let (lo_flipped, lo_delta, lo_traj) = probe(lambda_lo, &mut sweep)?;
            if lo_flipped {
                best = (lambda_lo, lo_delta, lo_traj);
            } else {
                let mut lo = lambda_lo;
                for _ in 0..iterations {
                    let mid = 0.5 * (lo + hi);
                    iterations_used += 1;
                    let (flipped, delta, trajectory) = probe(mid, &mut sweep)?;
                    if flipped {
                        hi = mid;
                        best = (mid, delta, trajectory);
                    } else {
                        lo = mid;
                    }
                }
            }
        }

        Ok(MinimalChangeResult {
            lambda_star: best.0,
            delta_star: best.1,
            trajectory: best.2,
            sweep,
            bisection_iterations_used: iterations_used,
        })
    }

    /// Encoder-initialized latent inversion: start at `encoder(I)`, then
    /// refine with accept-on-improve gradient descent on `‖I − G(L)‖₁`.
    /// With `refine_steps = 0` the encoder output is returned verbatim.
    pub fn invert_to_latent(
        &self,
        image: &Tensor,
        refine_steps: usize,
    ) -> Result<Inversion, EngineError> {
        let Generator::Latent(generator) = &self.generator else {
            return Err(EngineError::InvalidQuery(
                "latent inversion needs a latent generator".into(),
            ));
        };
        let pixels = image.numel() as f64;
        let sum_l1 = |latent: &Tensor| -> Result<f64, EngineError> {
            let recon = generator.decode_value(latent)?;
            Ok(image
                .data()
                .iter()
                .zip(recon.data().iter())
                .map(|(a, b)| (a - b).abs())
                .sum())
        };

        let mut latent = generator.encode_value(image)?;
        let mut loss = sum_l1(&latent)?;
        let initial_error = loss / pixels;
        let mut eta = 0.1;
        for _ in 0..refine_steps {
            let mut tape = Tape::new();
            let z = tape.var(latent.clone());
            let recon = generator.decode_single(&mut tape, z)?;
            let image_ref = tape.var(image.clone());
            let dist = tape.l1_distance(image_ref, recon)?;
            let grads = tape.backward(dist)?;
            let grad = grads.get_or_zeros(z, latent.shape());

            let candidate_data: Vec<f64> = latent
                .data()
                .iter()
                .zip(grad.data().iter())
                .map(|(&v, &g)| v - eta * g)
                .collect();
            let candidate = Tensor::vector(&candidate_data);
            let candidate_loss = sum_l1(&candidate)?;
            if candidate_loss <= loss {
                latent = candidate;
                loss = candidate_loss;
                eta = (eta * 1.25).min(0.5);
            } else {
                eta *= 0.5;
            }
        }
        Ok(Inversion {
            latent,
            initial_error,
            final_error: loss / pixels,
        })
    }
}

// ── trajectory serialization ────────────────────────────────────────

/// One trajectory step as serialized, one JSON record per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub variables: Vec<f64>,
    pub probs: Vec<f64>,
    pub objective: f64,
    pub cls_term: f64,
    pub dist_term: f64,
}

/// Final summary record closing a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummaryRecord {
    pub outcome: String,
    pub delta: f64,
    pub lambda: f64,
}

/// Serializes a trajectory as line-delimited JSON: one record per step with
/// fields `step, variables, probs, objective, cls_term, dist_term`, then a
/// summary record with `outcome, delta, lambda`.
pub fn trajectory_to_jsonl(trajectory: &Trajectory, lambda: f64) -> String {
    let mut out = String::new();
    for s in &trajectory.steps {
        let record = StepRecord {
            step: s.step,
            variables: s.variables.data().to_vec(),
            probs: s.probs.data().to_vec(),
            objective: s.objective,
            cls_term: s.cls_term,
            dist_term: s.dist_term,
        };
        out.push_str(&serde_json::to_string(&record).expect("step record serializes"));
        out.push('\n');
    }
    let summary = TrajectorySummaryRecord {
        outcome: trajectory.outcome.to_string(),
        delta: trajectory.result.dist_term,
        lambda,
    };
    out.push_str(&serde_json::to_string(&summary).expect("summary record serializes"));
    out.push('\n');
    out
}

/// Parses a trajectory file back into its step and summary records.
pub fn trajectory_from_jsonl(
    text: &str,
) -> Result<(Vec<StepRecord>, TrajectorySummaryRecord), EngineError> {
    let mut steps = Vec::new();
    let mut summary = None;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(step) = serde_json::from_str::<StepRecord>(line) {
            steps.push(step);
        } else {
            let s: TrajectorySummaryRecord = serde_json::from_str(line)
                .map_err(|e| EngineError::Parse(format!("unrecognized record: {e}")))?;
            summary = Some(s);
        }
    }
    let summary = summary.ok_or_else(|| EngineError::Parse("missing summary record".into()))?;
    Ok((steps, summary))
}
