use crate::scalar::Scalar;

/// Adam: first-moment momentum plus per-parameter step scaling.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    m: Vec<S>,
    v: Vec<S>,
    steps: i32,
}

impl<S: Scalar> Adam<S> {
    pub fn new(len: usize) -> Self {
        Self {
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-15),
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
            steps: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One update `p -= lr(i) · m̂ / (√v̂ + eps)`.
    pub fn step(&mut self, params: &mut [S], grads: &[S], lr: impl Fn(usize) -> S) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.steps += 1;
        let one = S::one();
        let bc1 = one - self.beta1.powi(self.steps);
        let bc2 = one - self.beta2.powi(self.steps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr(i) * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
