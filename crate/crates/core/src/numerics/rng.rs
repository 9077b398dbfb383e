use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8, whose 64-bit stream selector gives independent
/// sequences for the same seed. A stream is owned by one task; parallel
/// work spawns one stream per task through [`RngStream::fork_seed`].
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

pub fn spawn_stream(seed: u64, stream_id: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    RngStream { seed, stream_id, rng }
}

impl RngStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Draws a fresh base seed; children `spawn_stream(base, i)` are then
    /// independent of each other and of this stream's remaining draws.
    pub fn fork_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Reusable χ²_k sampler.
#[derive(Debug, Clone, Copy)]
pub struct ChiSquareSampler {
    dist: Option<ChiSquared<f64>>,
}

impl ChiSquareSampler {
    pub fn new(dof: usize) -> Self {
        // k = 1 is drawn as Z² directly
        let dist = if dof == 1 {
            None
        } else {
            Some(ChiSquared::new(dof as f64).expect("positive degrees of freedom"))
        };
        ChiSquareSampler { dist }
    }

    pub fn sample(&self, stream: &mut RngStream) -> f64 {
        match &self.dist {
            None => {
                let z = stream.standard_normal();
                z * z
            }
            Some(d) => d.sample(&mut stream.rng),
        }
    }
}
