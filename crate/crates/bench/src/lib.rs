//! Fixtures shared by the criterion benches.

use hydroleak::nn::{
    adam_step, batch_from_samples, init_network, network_backward, network_forward, AdamState,
};
use hydroleak::sim::simulate_class;
use hydroleak::{
    ActuatorParams, LeakCalibration, LeakClass, Network, NetworkSpec, NormStats, Real,
    SequenceSample, SimConfig, Trace,
};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEQ_LEN: usize = 200;

/// Untrained full-size network with normalisation set, ready for detection.
pub fn standard_network<F: Real>(seed: u64) -> Network<F> {
    let mut net = init_network::<F>(&NetworkSpec::standard(), seed).expect("standard spec");
    net.norm = Some(NormStats::new(2.2e6, 4.2e5).expect("positive std"));
    net.seq_len = Some(SEQ_LEN);
    net
}

pub fn trace(class: LeakClass, n_cycles: usize, seed: u64) -> Trace {
    let config = SimConfig {
        seed,
        n_cycles,
        ..SimConfig::default()
    };
    simulate_class(
        &ActuatorParams::default(),
        &LeakCalibration::default(),
        &config,
        class,
    )
    .expect("default rig simulates")
}

/// Random normalised sequences, classes in rotation.
pub fn batch<F: Real>(size: usize, seed: u64) -> (Array3<F>, Array2<F>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<SequenceSample> = (0..size)
        .map(|b| {
            let values = (0..SEQ_LEN).map(|_| rng.gen_range(-2.0..2.0)).collect();
            SequenceSample::new(values, LeakClass::from_index(b % 3).expect("below 3"))
        })
        .collect();
    let refs: Vec<&SequenceSample> = samples.iter().collect();
    batch_from_samples(&refs).expect("equal lengths")
}

/// One optimiser update: forward with dropout, backward, Adam.
pub struct TrainStep<F> {
    pub net: Network<F>,
    adam: AdamState<F>,
    rng: ChaCha8Rng,
}

impl<F: Real> TrainStep<F> {
    pub fn new(seed: u64) -> Self {
        let net = standard_network::<F>(seed);
        let adam = AdamState::for_network(&net, 1e-3);
        Self {
            net,
            adam,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn run(&mut self, x: &Array3<F>, y: &Array2<F>) {
        let (probs, cache) =
            network_forward(&self.net, x.view(), true, &mut self.rng).expect("forward");
        let grads =
            network_backward(&self.net, cache.as_ref(), probs.view(), y.view()).expect("backward");
        adam_step(&mut self.net, &grads, &mut self.adam).expect("adam");
    }
}
