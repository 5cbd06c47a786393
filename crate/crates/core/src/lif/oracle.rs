//! Single-chain reference loops, kept deliberately naive.

/// Per-step values of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarTrace<T> {
    pub r: Vec<T>,
    pub u: Vec<T>,
    pub o: Vec<bool>,
}

/// Full-precision LIF over one chain, written as a plain loop.
pub fn oracle_scalar<T: crate::tensor::Real>(chain: &[T], tau: T, v_th: T) -> ScalarTrace<T> {
    let mut r = Vec::with_capacity(chain.len());
    let mut u = Vec::with_capacity(chain.len());
    let mut o = Vec::with_capacity(chain.len());
    for (t, &y) in chain.iter().enumerate() {
        let ut = if t == 0 {
            y
        } else {
            let prev_o = if o[t - 1] { T::one() } else { T::zero() };
            tau * u[t - 1] * (T::one() - prev_o) + y
        };
        let fired = ut > v_th;
        u.push(ut);
        o.push(fired);
        r.push(if ut > v_th { ut } else { v_th });
    }
    ScalarTrace { r, u, o }
}

/// Classical iterative LIF: the same membrane recurrence, but the emitted
/// output is the binary spike train.
pub fn classical_binary<T: crate::tensor::Real>(chain: &[T], tau: T, v_th: T) -> Vec<bool> {
    let mut spikes = Vec::with_capacity(chain.len());
    let mut u = T::zero();
    let mut last = false;
    for (t, &y) in chain.iter().enumerate() {
        u = if t == 0 || last { y } else { tau * u + y };
        last = u > v_th;
        spikes.push(last);
    }
    spikes
}
