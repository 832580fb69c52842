use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::heads::LossReport;
use crate::model::{EncodedDoc, ModelParams, ModelState};
use crate::segmentation::Document;

/// First and second moment estimates, aligned with [`ModelParams::named`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Number of updates applied.
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .named()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

impl ModelState {
    /// One optimiser update on `batch`. Per-document gradients are computed
    /// independently (in parallel) and summed in batch order.
    pub fn train_step(&mut self, batch: &[Document]) -> Result<LossReport> {
        if batch.is_empty() {
            return Err(Error::contract("train_step needs a non-empty batch"));
        }
        let encoded = batch
            .iter()
            .map(|d| self.encode(d))
            .collect::<Result<Vec<_>>>()?;
        self.train_step_encoded(&encoded)
    }

    pub(crate) fn train_step_encoded(&mut self, batch: &[EncodedDoc]) -> Result<LossReport> {
        let results: Vec<_> = batch
            .par_iter()
            .map(|d| self.gradients_encoded(d))
            .collect();

        let mut report = LossReport::default();
        let mut total: Option<Vec<Tensor>> = None;
        for r in results {
            let (rep, grads) = r?;
            report.accumulate(&rep);
            match &mut total {
                None => total = Some(grads),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&grads) {
                        a.add_assign(g);
                    }
                }
            }
        }
        self.apply_adam(&total.expect("non-empty batch"));
        Ok(report)
    }

    /// Adam with L2 weight decay folded into the gradient, after optional
    /// global-norm clipping.
    fn apply_adam(&mut self, grads: &[Tensor]) {
        let cfg = &self.config;
        let norm = grads
            .iter()
            .flat_map(|g| g.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let clip = if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            cfg.grad_clip / norm
        } else {
            1.0
        };
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let opt = &mut self.optimizer;
        opt.t += 1;
        let t = opt.t as i32;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        for (((param, g), m), v) in self
            .params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut opt.m)
            .zip(&mut opt.v)
        {
            let entries = param
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut());
            for (((p, &g), m), v) in entries {
                let g = clip * g + cfg.weight_decay * *p;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
            }
        }
        self.step += 1;
    }

    /// Run `steps` updates over `docs`, cycling through fixed-size batches
    /// (`batch_size == 0` uses every document each step). `on_step` sees the
    /// 1-based step number and its report.
    pub fn train(
        &mut self,
        docs: &[Document],
        steps: usize,
        mut on_step: impl FnMut(u64, &LossReport),
    ) -> Result<()> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let encoded = docs
            .iter()
            .map(|d| self.encode(d))
            .collect::<Result<Vec<_>>>()?;
        let n = encoded.len();
        let b = match self.config.batch_size {
            0 => n,
            b => b.min(n),
        };
        for s in 0..steps {
            let batch: Vec<EncodedDoc> = (0..b).map(|k| encoded[(s * b + k) % n].clone()).collect();
            let report = self.train_step_encoded(&batch)?;
            on_step(self.step, &report);
        }
        Ok(())
    }
}
