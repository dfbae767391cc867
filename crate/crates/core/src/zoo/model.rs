use std::sync::Arc;

use rand::Rng;

use super::variant::{Similarity, Variant};
use super::{CLASSIFIER_DIMS, CLASSIFIER_INPUT, DISCRIMINATOR_HIDDEN, EMBEDDING_ACTIVATION, EMBED_DIM, HIDDEN_DIMS};
use crate::data::{Domain, DRUG_DIM};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, Bandwidth, Matrix, Mlp, ParamId, ParamStore, Tape, Var};

/// Relative weights of the pretraining loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub recon: f64,
    pub sim: f64,
    pub ortho: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            sim: 1.0,
            ortho: 0.25,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("recon", self.recon), ("sim", self.sim), ("ortho", self.ortho)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Loss configuration carried by a model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZooOptions {
    pub weights: LossWeights,
    /// Gradient-reversal strength for adversarial variants.
    pub lambda: f64,
    /// Apply the similarity loss to private instead of shared embeddings
    /// (DSN family only; ablation switch).
    pub sim_on_private: bool,
}

impl Default for ZooOptions {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            lambda: 1.0,
            sim_on_private: false,
        }
    }
}

/// Embeddings of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub shared: Matrix,
    pub private: Option<Matrix>,
}

/// Tape handles of one batch's embeddings.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingVars {
    pub shared: Var,
    pub private: Option<Var>,
}

/// Handles of every pretraining loss term on a tape.
#[derive(Debug, Clone, Copy)]
pub struct PretrainLossVars {
    pub total: Var,
    pub recon_source: Var,
    pub recon_target: Var,
    pub sim: Option<Var>,
    pub ortho: Option<Var>,
}

/// Values of the pretraining loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub recon_source: f64,
    pub recon_target: f64,
    pub sim: f64,
    pub ortho: f64,
}

impl LossBreakdown {
    pub fn from_tape(tape: &Tape, vars: &PretrainLossVars) -> Self {
        Self {
            total: tape.scalar(vars.total),
            recon_source: tape.scalar(vars.recon_source),
            recon_target: tape.scalar(vars.recon_target),
            sim: vars.sim.map_or(0.0, |v| tape.scalar(v)),
            ortho: vars.ortho.map_or(0.0, |v| tape.scalar(v)),
        }
    }

    /// `(term, value)` pairs in log order.
    pub fn terms(&self) -> [(&'static str, f64); 5] {
        [
            ("total", self.total),
            ("recon_source", self.recon_source),
            ("recon_target", self.recon_target),
            ("sim", self.sim),
            ("ortho", self.ortho),
        ]
    }
}

/// A zoo member: encoders, decoder, optional discriminator and the
/// drug-response classifier head, with all tensors in one store.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) variant: Variant,
    pub(crate) n_genes: usize,
    pub(crate) options: ZooOptions,
    pub(crate) store: ParamStore,
    pub(crate) shared: Mlp,
    /// Private encoders indexed by [`domain_slot`].
    pub(crate) private: Option<[Mlp; 2]>,
    pub(crate) decoder: Mlp,
    pub(crate) discriminator: Option<Mlp>,
    pub(crate) classifier: Mlp,
    pub(crate) fitted: bool,
    pub(crate) optimizer: Option<AdamState>,
}

pub(crate) fn domain_slot(domain: Domain) -> usize {
    match domain {
        Domain::CellLine => 0,
        Domain::Patient => 1,
    }
}

pub(crate) fn encoder_dims(n_genes: usize) -> Vec<usize> {
    let mut d = vec![n_genes];
    d.extend_from_slice(&HIDDEN_DIMS);
    d.push(EMBED_DIM);
    d
}

pub(crate) fn decoder_dims(n_genes: usize) -> Vec<usize> {
    let mut d = vec![EMBED_DIM];
    d.extend(HIDDEN_DIMS.iter().rev());
    d.push(n_genes);
    d
}

impl Model {
    /// Freshly initialized model for `n_genes` inputs.
    pub fn new<R: Rng + ?Sized>(variant: Variant, n_genes: usize, options: ZooOptions, rng: &mut R) -> Result<Self> {
        if n_genes == 0 {
            return Err(Error::invalid("model needs at least one gene"));
        }
        options.weights.validate()?;
        if !(options.lambda.is_finite() && options.lambda >= 0.0) {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        if options.sim_on_private && !variant.has_private() {
            return Err(Error::invalid(format!("{variant} has no private embeddings")));
        }
        let mut store = ParamStore::new();
        let relu = Activation::Relu;
        let shared = Mlp::init(
            &mut store,
            rng,
            "shared",
            &encoder_dims(n_genes),
            relu,
            EMBEDDING_ACTIVATION,
        );
        let private = if variant.has_private() {
            Some([
                Mlp::init(
                    &mut store,
                    rng,
                    "private_cell_line",
                    &encoder_dims(n_genes),
                    relu,
                    EMBEDDING_ACTIVATION,
                ),
                Mlp::init(
                    &mut store,
                    rng,
                    "private_patient",
                    &encoder_dims(n_genes),
                    relu,
                    EMBEDDING_ACTIVATION,
                ),
            ])
        } else {
            None
        };
        let decoder = Mlp::init(
            &mut store,
            rng,
            "decoder",
            &decoder_dims(n_genes),
            relu,
            Activation::Identity,
        );
        let discriminator = (variant.similarity() == Similarity::Adv).then(|| {
            Mlp::init(
                &mut store,
                rng,
                "discriminator",
                &[variant.similarity_width(), DISCRIMINATOR_HIDDEN, 1],
                relu,
                Activation::Identity,
            )
        });
        let classifier = Mlp::init(
            &mut store,
            rng,
            "classifier",
            &CLASSIFIER_DIMS,
            relu,
            Activation::Sigmoid,
        );
        Ok(Self {
            variant,
            n_genes,
            options,
            store,
            shared,
            private,
            decoder,
            discriminator,
            classifier,
            fitted: false,
            optimizer: None,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn options(&self) -> &ZooOptions {
        &self.options
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    pub fn optimizer(&self) -> Option<&AdamState> {
        self.optimizer.as_ref()
    }

    pub fn shared_encoder(&self) -> &Mlp {
        &self.shared
    }

    pub fn private_encoders(&self) -> Option<&[Mlp; 2]> {
        self.private.as_ref()
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn discriminator(&self) -> Option<&Mlp> {
        self.discriminator.as_ref()
    }

    pub fn classifier(&self) -> &Mlp {
        &self.classifier
    }

    /// Input width of the classifier head; always shared width + drug width.
    pub fn classifier_input_width(&self) -> usize {
        self.classifier.in_dim()
    }

    /// Parameters updated during unlabeled pretraining.
    pub fn pretrain_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.shared.params().collect();
        if let Some(p) = &self.private {
            ids.extend(p.iter().flat_map(Mlp::params));
        }
        ids.extend(self.decoder.params());
        if let Some(d) = &self.discriminator {
            ids.extend(d.params());
        }
        ids
    }

    pub fn shared_encoder_params(&self) -> Vec<ParamId> {
        self.shared.params().collect()
    }

    pub fn classifier_params(&self) -> Vec<ParamId> {
        self.classifier.params().collect()
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.ncols() != self.n_genes {
            return Err(Error::Shape {
                context: "batch genes vs model input",
                left: batch.dim(),
                right: (batch.nrows(), self.n_genes),
            });
        }
        if batch.nrows() == 0 {
            return Err(Error::invalid("empty batch"));
        }
        Ok(())
    }

    pub fn encode_on(&self, store: &ParamStore, tape: &mut Tape, batch: Var, domain: Domain) -> Result<EmbeddingVars> {
        let shared = self.shared.forward(store, tape, batch)?;
        let private = match &self.private {
            Some(p) => Some(p[domain_slot(domain)].forward(store, tape, batch)?),
            None => None,
        };
        Ok(EmbeddingVars { shared, private })
    }

    /// Decoder output; the decoder reads shared + private when both exist.
    pub fn reconstruct_on(&self, store: &ParamStore, tape: &mut Tape, emb: EmbeddingVars) -> Result<Var> {
        let input = match emb.private {
            Some(p) => tape.add(emb.shared, p)?,
            None => emb.shared,
        };
        self.decoder.forward(store, tape, input)
    }

    pub fn encode(&self, batch: &Matrix, domain: Domain) -> Result<Embeddings> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let e = self.encode_on(&self.store, &mut tape, x, domain)?;
        Ok(Embeddings {
            shared: tape.value(e.shared).clone(),
            private: e.private.map(|p| tape.value(p).clone()),
        })
    }

    pub fn reconstruct(&self, emb: &Embeddings) -> Result<Matrix> {
        if emb.shared.ncols() != EMBED_DIM {
            return Err(Error::Shape {
                context: "shared embedding width",
                left: emb.shared.dim(),
                right: (emb.shared.nrows(), EMBED_DIM),
            });
        }
        let mut tape = Tape::new();
        let shared = tape.constant(emb.shared.clone());
        let private = match (&emb.private, self.private.is_some()) {
            (Some(p), true) => Some(tape.constant(p.clone())),
            (None, false) => None,
            (Some(_), false) => return Err(Error::invalid(format!("{} has no private embeddings", self.variant))),
            (None, true) => return Err(Error::invalid(format!("{} needs private embeddings", self.variant))),
        };
        let out = self.reconstruct_on(&self.store, &mut tape, EmbeddingVars { shared, private })?;
        Ok(tape.value(out).clone())
    }

    /// Similarity-loss input for one domain's embeddings.
    fn similarity_input(&self, tape: &mut Tape, emb: EmbeddingVars) -> Result<Var> {
        match (self.variant.family(), emb.private) {
            (super::Family::Dsrn, Some(p)) => tape.concat_cols(emb.shared, p),
            (_, Some(p)) if self.options.sim_on_private => Ok(p),
            _ => Ok(emb.shared),
        }
    }

    /// Composite unlabeled loss on one source (cell-line) and one target
    /// (patient) batch.
    pub fn pretrain_loss_on(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        source: &Matrix,
        target: &Matrix,
    ) -> Result<PretrainLossVars> {
        self.pretrain_loss_at(store, tape, source, target, self.options.lambda)
    }

    /// [`Model::pretrain_loss_on`] with an explicit gradient-reversal strength.
    pub fn pretrain_loss_at(
        &self,
        store: &ParamStore,
        tape: &mut Tape,
        source: &Matrix,
        target: &Matrix,
        lambda: f64,
    ) -> Result<PretrainLossVars> {
        self.check_batch(source)?;
        self.check_batch(target)?;
        let xs = tape.constant(source.clone());
        let xt = tape.constant(target.clone());
        let es = self.encode_on(store, tape, xs, Domain::CellLine)?;
        let et = self.encode_on(store, tape, xt, Domain::Patient)?;
        let rs = self.reconstruct_on(store, tape, es)?;
        let rt = self.reconstruct_on(store, tape, et)?;
        let recon_source = tape.mse(rs, Arc::new(source.clone()))?;
        let recon_target = tape.mse(rt, Arc::new(target.clone()))?;
        let w = self.options.weights;
        let mut terms = vec![(recon_source, w.recon), (recon_target, w.recon)];

        let ortho = match (es.private, et.private) {
            (Some(ps), Some(pt)) => {
                let os = tape.ortho(es.shared, ps)?;
                let ot = tape.ortho(et.shared, pt)?;
                let o = tape.weighted_sum(&[(os, 1.0), (ot, 1.0)])?;
                terms.push((o, w.ortho));
                Some(o)
            }
            _ => None,
        };

        let sim = match self.variant.similarity() {
            Similarity::None => None,
            Similarity::Mmd => {
                let a = self.similarity_input(tape, es)?;
                let b = self.similarity_input(tape, et)?;
                Some(tape.mmd_sq(a, b, Bandwidth::Median)?)
            }
            Similarity::Adv => {
                let disc = self.discriminator.as_ref().expect("adv variants carry a discriminator");
                let a = self.similarity_input(tape, es)?;
                let b = self.similarity_input(tape, et)?;
                let both = tape.concat_rows(a, b)?;
                let reversed = tape.reverse_gradient(both, lambda)?;
                // the sigmoid of the discriminator head is folded into the loss
                let logits = disc.forward(store, tape, reversed)?;
                let (ns, nt) = (source.nrows(), target.nrows());
                let domains = Matrix::from_shape_fn((ns + nt, 1), |(i, _)| if i < ns { 0.0 } else { 1.0 });
                Some(tape.bce_logits(logits, Arc::new(domains))?)
            }
        };
        if let Some(s) = sim {
            terms.push((s, w.sim));
        }
        let total = tape.weighted_sum(&terms)?;
        Ok(PretrainLossVars {
            total,
            recon_source,
            recon_target,
            sim,
            ortho,
        })
    }

    pub fn pretrain_loss(&self, source: &Matrix, target: &Matrix) -> Result<LossBreakdown> {
        let mut tape = Tape::new();
        let vars = self.pretrain_loss_on(&self.store, &mut tape, source, target)?;
        Ok(LossBreakdown::from_tape(&tape, &vars))
    }

    fn check_drug(drug: &[f64]) -> Result<()> {
        if drug.len() != DRUG_DIM {
            return Err(Error::invalid(format!(
                "drug vector has length {}, expected {DRUG_DIM}",
                drug.len()
            )));
        }
        Ok(())
    }

    /// Classifier input `[shared; drug]` with the drug vector repeated per row.
    pub fn classifier_input_on(&self, tape: &mut Tape, shared: Var, drug: &[f64]) -> Result<Var> {
        Self::check_drug(drug)?;
        let rows = tape.value(shared).nrows();
        let drugs = Matrix::from_shape_fn((rows, DRUG_DIM), |(_, j)| drug[j]);
        self.pair_input_on(tape, shared, drugs)
    }

    /// Classifier input with one drug vector per row.
    pub fn pair_input_on(&self, tape: &mut Tape, shared: Var, drugs: Matrix) -> Result<Var> {
        if drugs.ncols() != DRUG_DIM {
            return Err(Error::invalid(format!(
                "drug vectors have width {}, expected {DRUG_DIM}",
                drugs.ncols()
            )));
        }
        let d = tape.constant(drugs);
        let input = tape.concat_cols(shared, d)?;
        debug_assert_eq!(tape.value(input).ncols(), CLASSIFIER_INPUT);
        Ok(input)
    }

    pub fn classify_on(&self, store: &ParamStore, tape: &mut Tape, shared: Var, drug: &[f64]) -> Result<Var> {
        let input = self.classifier_input_on(tape, shared, drug)?;
        self.classifier.forward(store, tape, input)
    }

    pub fn classify_pairs_on(&self, store: &ParamStore, tape: &mut Tape, shared: Var, drugs: Matrix) -> Result<Var> {
        let input = self.pair_input_on(tape, shared, drugs)?;
        self.classifier.forward(store, tape, input)
    }

    /// Response scores in (0, 1), one per row of `shared`.
    pub fn classify(&self, shared: &Matrix, drug: &[f64]) -> Result<Vec<f64>> {
        if shared.ncols() != EMBED_DIM {
            return Err(Error::Shape {
                context: "shared embedding width",
                left: shared.dim(),
                right: (shared.nrows(), EMBED_DIM),
            });
        }
        let mut tape = Tape::new();
        let s = tape.constant(shared.clone());
        let out = self.classify_on(&self.store, &mut tape, s, drug)?;
        Ok(tape.value(out).column(0).to_vec())
    }

    pub(crate) fn mark_fitted(&mut self) {
        self.fitted = true;
    }

    pub(crate) fn set_optimizer(&mut self, state: AdamState) {
        self.optimizer = Some(state);
    }
}
