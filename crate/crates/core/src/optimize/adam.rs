use crate::splat::ShFeatures;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

/// Adam over per-splat SH blocks, with one learning rate for the DC
/// coefficients and another for the higher bands.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr_dc: f64,
    pub lr_rest: f64,
    m: Vec<ShFeatures>,
    v: Vec<ShFeatures>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr_dc: f64, lr_rest: f64) -> Self {
        Self { lr_dc, lr_rest, m: vec![ShFeatures::zeros(); n], v: vec![ShFeatures::zeros(); n], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[ShFeatures] {
        &self.m
    }

    pub fn second_moments(&self) -> &[ShFeatures] {
        &self.v
    }

    /// `params -= lr * m_hat / (sqrt(v_hat) + eps)`. Entries with a zero
    /// gradient still decay their moments, as in the standard update.
    pub fn step(&mut self, params: &mut [ShFeatures], grads: &[ShFeatures]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for c in 0..3 {
                for k in 0..p.0[c].len() {
                    let gi = g.0[c][k];
                    let mi = &mut m.0[c][k];
                    let vi = &mut v.0[c][k];
                    *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                    *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                    let lr = if k == 0 { self.lr_dc } else { self.lr_rest };
                    p.0[c][k] -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + EPSILON);
                }
            }
        }
    }
}
