use crate::real::{rf, Real};

/// Adam optimizer over flat parameter slices.
///
/// Moment buffers are allocated lazily on the first step and must keep the
/// same layout afterwards. The update is dense: every slot decays each step,
/// so sparse gradients (e.g. one latent-code row per step) behave like the
/// usual dense-Adam semantics.
#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub lr: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    t: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(lr: F) -> Self {
        Adam {
            lr,
            beta1: rf(0.9),
            beta2: rf(0.999),
            eps: rf(1e-8),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, mut params: Vec<&mut [F]>, grads: Vec<&[F]>) {
        assert_eq!(params.len(), grads.len(), "param/grad group mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![F::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer layout changed");
        self.t += 1;
        let t = rf::<F>(self.t as f64);
        let bc1 = F::one() - self.beta1.powf(t);
        let bc2 = F::one() - self.beta2.powf(t);
        let one = F::one();
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            assert_eq!(p.len(), g.len(), "param/grad length mismatch");
            assert_eq!(p.len(), m.len(), "optimizer layout changed");
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }

    /// Flat view of the optimizer state for checkpointing: `(t, moments)`.
    /// Moments are laid out `m` groups first, then `v` groups.
    pub fn state(&self) -> (u64, Vec<&[F]>) {
        let mut out = Vec::with_capacity(self.m.len() * 2);
        for m in &self.m {
            out.push(m.as_slice());
        }
        for v in &self.v {
            out.push(v.as_slice());
        }
        (self.t, out)
    }

    /// Restores state saved by [`Adam::state`]. `groups` carries `m` buffers
    /// first, then `v` buffers.
    pub fn restore(&mut self, t: u64, groups: Vec<Vec<F>>) {
        assert!(groups.len() % 2 == 0, "moment buffers come in m/v pairs");
        let half = groups.len() / 2;
        self.t = t;
        self.m = groups[..half].to_vec();
        self.v = groups[half..].to_vec();
    }
}
