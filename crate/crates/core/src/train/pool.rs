use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Resumable position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Word position as a decimal string (it is 68 bits wide).
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Option<ChaCha8Rng> {
        let seed: [u8; 32] = hex::decode(&self.seed).ok()?.try_into().ok()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().ok()?);
        Some(rng)
    }
}

/// History buffer of generated images fed to a discriminator.
///
/// Below capacity every offered image is stored and returned. At capacity,
/// a uniform draw above 0.5 swaps the offered image for a random stored one
/// and returns the stored one; otherwise the offered image is returned.
#[derive(Debug, Clone)]
pub struct ImagePool {
    pub capacity: usize,
    pub images: Vec<Tensor<f32>>,
    pub rng: ChaCha8Rng,
}

impl ImagePool {
    pub fn new(capacity: usize, rng: ChaCha8Rng) -> Self {
        ImagePool { capacity, images: Vec::with_capacity(capacity), rng }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Offer a generated image; returns the image the discriminator sees.
    /// The result never carries a graph.
    pub fn query(&mut self, image: &Tensor<f32>) -> Tensor<f32> {
        let image = image.detach();
        if self.capacity == 0 {
            return image;
        }
        if self.images.len() < self.capacity {
            self.images.push(image.clone());
            return image;
        }
        let u: f64 = self.rng.random();
        if u > 0.5 {
            let idx = self.rng.random_range(0..self.capacity);
            std::mem::replace(&mut self.images[idx], image)
        } else {
            image
        }
    }
}
