//! Soft-reset leaky integrate-and-fire dynamics over the tape.
//!
//! The standard cell decays the membrane with a fixed constant and weighs
//! the input current by its complement; the learnable variant replaces both
//! factors with per-step, channel-shared parameters (a sigmoid keeps the
//! realized decay inside (0, 1)). Reset subtracts the threshold instead of
//! clearing the membrane, so the identity `V' + S * v_th = H` holds exactly
//! at every step.

use crate::error::{Error, Result};
use crate::tape::{Tape, TensorId};
use crate::tensor::{logit, SpikeBackward, Tensor};

/// Fixed or per-step dynamics of one LIF layer, referencing tape leaves for
/// the learnable variant.
#[derive(Debug, Clone, Copy)]
pub enum LifDynamics {
    /// `H = decay * V + (1 - decay) * I`.
    Standard { decay: f64 },
    /// `H = sigmoid(decay_logits[t]) * V + input_gains[t] * I`, both factors
    /// channel-shared `[steps, channels]` leaves already on the tape.
    Learnable {
        decay_logits: TensorId,
        input_gains: TensorId,
    },
}

/// Membrane potential carried across time steps.
#[derive(Debug, Clone, Copy)]
pub struct LifState {
    pub v: TensorId,
}

impl LifState {
    /// Rest state: all membrane potentials at zero.
    pub fn rest(tape: &mut Tape, shape: &[usize]) -> Self {
        Self {
            v: tape.leaf(&Tensor::zeros(shape.to_vec())),
        }
    }
}

/// Value-level neuron constants, the constructing side of [`LifDynamics`].
#[derive(Debug, Clone)]
pub struct LifParams {
    pub decay: f64,
    pub v_threshold: f64,
    pub steps: usize,
    pub learnable: Option<LearnableLif>,
}

/// Per-step, channel-shared tensors of the learnable cell.
#[derive(Debug, Clone)]
pub struct LearnableLif {
    /// Logits of the per-step decay, shape `[steps, channels]`.
    pub decay_logits: Tensor,
    /// Per-step input weights, shape `[steps, channels]`.
    pub input_gains: Tensor,
}

impl LifParams {
    pub fn standard(decay: f64, v_threshold: f64, steps: usize) -> Self {
        Self {
            decay,
            v_threshold,
            steps,
            learnable: None,
        }
    }

    /// Learnable cell initialized so it reproduces the standard one: decay
    /// logits at `logit(decay)` and input gains at `1 - decay`.
    pub fn learnable(decay: f64, v_threshold: f64, steps: usize, channels: usize) -> Self {
        Self {
            decay,
            v_threshold,
            steps,
            learnable: Some(LearnableLif {
                decay_logits: Tensor::full([steps, channels], logit(decay)),
                input_gains: Tensor::full([steps, channels], 1.0 - decay),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Contract(format!(
                "decay must lie in (0, 1), got {}",
                self.decay
            )));
        }
        if !(self.v_threshold > 0.0) {
            return Err(Error::Contract(format!(
                "threshold must be positive, got {}",
                self.v_threshold
            )));
        }
        if self.steps == 0 {
            return Err(Error::Contract("step count must be >= 1".into()));
        }
        if let Some(learn) = &self.learnable {
            for (name, t) in [
                ("decay_logits", &learn.decay_logits),
                ("input_gains", &learn.input_gains),
            ] {
                if t.shape().len() != 2 || t.shape()[0] != self.steps {
                    return Err(Error::Dimension(format!(
                        "{name} must be [steps, channels], got {:?} for {} steps",
                        t.shape(),
                        self.steps
                    )));
                }
            }
            if learn.decay_logits.shape() != learn.input_gains.shape() {
                return Err(Error::Dimension(
                    "decay_logits and input_gains must share a shape".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One membrane update: charge, threshold, spike, soft reset.
///
/// Returns the spike tensor and the next state.
pub fn lif_step(
    tape: &mut Tape,
    state: LifState,
    current: TensorId,
    dynamics: LifDynamics,
    v_threshold: f64,
    t: usize,
    bw: SpikeBackward,
) -> Result<(TensorId, LifState)> {
    let charged = match dynamics {
        LifDynamics::Standard { decay } => {
            if !(decay > 0.0 && decay < 1.0) {
                return Err(Error::Contract(format!(
                    "decay must lie in (0, 1), got {decay}"
                )));
            }
            let kept = tape.scale(state.v, decay);
            let injected = tape.scale(current, 1.0 - decay);
            tape.add(kept, injected)?
        }
        LifDynamics::Learnable {
            decay_logits,
            input_gains,
        } => {
            let logits_t = tape.step_slice(decay_logits, t)?;
            let decay_t = tape.sigmoid(logits_t);
            let gains_t = tape.step_slice(input_gains, t)?;
            let kept = tape.mul_channel(state.v, decay_t)?;
            let injected = tape.mul_channel(current, gains_t)?;
            tape.add(kept, injected)?
        }
    };
    let over = tape.add_scalar(charged, -v_threshold);
    let spikes = tape.spike(over, bw)?;
    let drop = tape.scale(spikes, v_threshold);
    let v_next = tape.sub(charged, drop)?;
    Ok((spikes, LifState { v: v_next }))
}

/// Fold [`lif_step`] over stacked input currents `[steps, ...]`, starting at
/// rest, and stack the spikes. Gradients flow through the whole recurrence.
pub fn lif_run(
    tape: &mut Tape,
    currents: TensorId,
    dynamics: LifDynamics,
    v_threshold: f64,
    bw: SpikeBackward,
) -> Result<TensorId> {
    let steps = tape.shape(currents)[0];
    let frame_shape: Vec<usize> = if tape.shape(currents).len() == 1 {
        vec![1]
    } else {
        tape.shape(currents)[1..].to_vec()
    };
    let mut state = LifState::rest(tape, &frame_shape);
    let mut spikes = Vec::with_capacity(steps);
    for t in 0..steps {
        let current = tape.step_slice(currents, t)?;
        let (s, next) = lif_step(tape, state, current, dynamics, v_threshold, t, bw)?;
        spikes.push(s);
        state = next;
    }
    tape.stack(&spikes)
}

/// Value-in, value-out wrapper around [`lif_run`] for callers that do not
/// need gradients.
pub fn lif_run_values(currents: &Tensor, params: &LifParams, bw: SpikeBackward) -> Result<Tensor> {
    params.validate()?;
    if currents.shape()[0] != params.steps {
        return Err(Error::Dimension(format!(
            "currents lead with {} steps, params expect {}",
            currents.shape()[0],
            params.steps
        )));
    }
    let mut tape = Tape::new();
    let input = tape.leaf(currents);
    let dynamics = match &params.learnable {
        None => LifDynamics::Standard {
            decay: params.decay,
        },
        Some(learn) => LifDynamics::Learnable {
            decay_logits: tape.leaf(&learn.decay_logits),
            input_gains: tape.leaf(&learn.input_gains),
        },
    };
    let out = lif_run(&mut tape, input, dynamics, params.v_threshold, bw)?;
    Ok(tape.tensor(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    fn run_constant(x: f64, steps: usize, decay: f64) -> Vec<f64> {
        let currents = Tensor::full([steps, 1], x);
        let params = LifParams::standard(decay, 1.0, steps);
        lif_run_values(&currents, &params, SpikeBackward::ExactZero)
            .unwrap()
            .values()
            .to_vec()
    }

    #[test]
    fn step_hand_recursion_fires() {
        // L=0.5, vth=1, V=0, I=2: H=1.0 -> spike, V'=0.
        let mut tape = Tape::new();
        let state = LifState::rest(&mut tape, &[1]);
        let current = tape.leaf(&Tensor::scalar(2.0));
        let (s, next) = lif_step(
            &mut tape,
            state,
            current,
            LifDynamics::Standard { decay: 0.5 },
            1.0,
            0,
            SpikeBackward::ExactZero,
        )
        .unwrap();
        assert_eq!(tape.values(s), &[1.0]);
        assert_eq!(tape.values(next.v), &[0.0]);
    }

    #[test]
    fn step_hand_recursion_subthreshold() {
        // V=0.8, I=1: H=0.9 -> quiet, V'=0.9.
        let mut tape = Tape::new();
        let state = LifState {
            v: tape.leaf(&Tensor::scalar(0.8)),
        };
        let current = tape.leaf(&Tensor::scalar(1.0));
        let (s, next) = lif_step(
            &mut tape,
            state,
            current,
            LifDynamics::Standard { decay: 0.5 },
            1.0,
            0,
            SpikeBackward::ExactZero,
        )
        .unwrap();
        assert_eq!(tape.values(s), &[0.0]);
        assert_eq!(tape.values(next.v), &[0.9]);
    }

    #[test]
    fn quiescent_neuron_stays_at_rest() {
        let mut tape = Tape::new();
        let state = LifState::rest(&mut tape, &[1]);
        let current = tape.leaf(&Tensor::scalar(0.0));
        let (s, next) = lif_step(
            &mut tape,
            state,
            current,
            LifDynamics::Standard { decay: 0.5 },
            1.0,
            0,
            SpikeBackward::ExactZero,
        )
        .unwrap();
        assert_eq!(tape.values(s), &[0.0]);
        assert_eq!(tape.values(next.v), &[0.0]);
    }

    #[test]
    fn learnable_step_hand_recursion() {
        // sigmoid(0)=0.5 decay, gain=2, V=0, I=1: H=2 -> spike, V'=1.
        let mut tape = Tape::new();
        let logits = tape.leaf(&Tensor::zeros([1, 1]));
        let gains = tape.leaf(&Tensor::full([1, 1], 2.0));
        let state = LifState::rest(&mut tape, &[1]);
        let current = tape.leaf(&Tensor::scalar(1.0));
        let (s, next) = lif_step(
            &mut tape,
            state,
            current,
            LifDynamics::Learnable {
                decay_logits: logits,
                input_gains: gains,
            },
            1.0,
            0,
            SpikeBackward::ExactZero,
        )
        .unwrap();
        assert_eq!(tape.values(s), &[1.0]);
        assert_eq!(tape.values(next.v), &[1.0]);
    }

    #[test]
    fn constant_input_reproduces_table_rows() {
        assert_eq!(run_constant(1.5, 4, 0.5), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(run_constant(0.5, 4, 0.5), &[0.0; 4]);
        assert_eq!(run_constant(2.5, 4, 0.5), &[1.0; 4]);
    }

    #[test]
    fn soft_reset_identity_holds_exactly() {
        // V' + S * vth must equal the charged potential at every step.
        let decay = 0.37;
        let vth = 0.8;
        let mut v_prev = 0.0;
        let mut tape = Tape::new();
        let mut state = LifState::rest(&mut tape, &[1]);
        for (t, &x) in [0.9, 1.4, 0.1, 2.3, 0.7].iter().enumerate() {
            let current = tape.leaf(&Tensor::scalar(x));
            let (s, next) = lif_step(
                &mut tape,
                state,
                current,
                LifDynamics::Standard { decay },
                vth,
                t,
                SpikeBackward::ExactZero,
            )
            .unwrap();
            let h = decay * v_prev + (1.0 - decay) * x;
            let got = tape.values(next.v)[0] + tape.values(s)[0] * vth;
            assert_eq!(got, h, "identity broken at step {t}");
            v_prev = tape.values(next.v)[0];
            state = next;
        }
    }

    #[test]
    fn learnable_at_standard_settings_is_bit_exact() {
        let steps = 4;
        let channels = 3;
        let currents = Tensor::new(
            [steps, channels],
            vec![
                0.3, 1.8, 2.2, 1.1, 0.2, 1.9, 2.3, 0.4, 0.9, 1.5, 1.5, 0.6,
            ],
        )
        .unwrap();
        let standard = LifParams::standard(0.5, 1.0, steps);
        let learnable = LifParams::learnable(0.5, 1.0, steps, channels);
        let a = lif_run_values(&currents, &standard, SpikeBackward::ExactZero).unwrap();
        let b = lif_run_values(&currents, &learnable, SpikeBackward::ExactZero).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn spikes_are_binary() {
        let out = lif_run_values(
            &Tensor::new([3, 2], vec![0.4, 2.9, 1.3, 0.0, 5.0, 1.05]).unwrap(),
            &LifParams::standard(0.5, 1.0, 3),
            SpikeBackward::surrogate(),
        )
        .unwrap();
        assert!(out.is_binary());
    }

    #[test]
    fn step_count_mismatch_rejected() {
        let currents = Tensor::zeros([3, 1]);
        let params = LifParams::standard(0.5, 1.0, 4);
        assert!(matches!(
            lif_run_values(&currents, &params, SpikeBackward::ExactZero),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn gradients_flow_through_recurrence() {
        // Input weight feeding every step: surrogate BPTT must reach it.
        let mut tape = Tape::new();
        let w = tape.leaf(&Tensor::scalar(1.2).with_grad());
        let mut parts = Vec::new();
        for _ in 0..4 {
            parts.push(w);
        }
        let currents = tape.stack(&parts).unwrap();
        let spikes = lif_run(
            &mut tape,
            currents,
            LifDynamics::Standard { decay: 0.5 },
            1.0,
            SpikeBackward::surrogate(),
        )
        .unwrap();
        let loss = tape.sum(spikes);
        tape.backward(loss).unwrap();
        let g = tape.grad(w).unwrap()[0];
        assert!(g != 0.0, "surrogate BPTT produced zero gradient");
    }

    #[test]
    fn dense_grid_matches_oracle_prediction() {
        let boundaries = oracle::enumerate_boundaries(4, 0.5, 1.0).unwrap();
        let mut x = 0.0;
        while x <= 3.0 {
            let predicted = oracle::pattern_for(&boundaries, x).unwrap();
            let got = run_constant(x, 4, 0.5);
            let bits: Vec<bool> = got.iter().map(|&v| v == 1.0).collect();
            assert_eq!(
                bits,
                predicted.bits(),
                "disagreement at X={x}: run {got:?} vs oracle {predicted}"
            );
            x += 1e-3;
        }
    }
}
