use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Lossy, corrupting, FIFO radio link between a node and the host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModel {
    pub latency_ms: u64,
    /// Extra latency drawn uniformly from `0..=latency_jitter_ms`.
    pub latency_jitter_ms: u64,
    pub loss_probability: f64,
    pub corruption_probability: f64,
    /// Used for airtime, and from that radio energy.
    pub bitrate_bps: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            latency_ms: 20,
            latency_jitter_ms: 0,
            loss_probability: 0.0,
            corruption_probability: 0.0,
            bitrate_bps: 1_000_000,
        }
    }
}

impl ChannelModel {
    pub fn lossless(latency_ms: u64) -> Self {
        ChannelModel { latency_ms, ..Default::default() }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, p) in [
            ("loss_probability", self.loss_probability),
            ("corruption_probability", self.corruption_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("channel.{name} must be in [0, 1]"));
            }
        }
        if self.bitrate_bps == 0 {
            out.push("channel.bitrate_bps must be > 0".to_string());
        }
        out
    }

    /// Airtime of `len` bytes in whole milliseconds, at least 1.
    pub fn airtime_ms(&self, len: usize) -> u64 {
        ((len as u64 * 8 * 1000).div_ceil(self.bitrate_bps)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Transmission {
    Delivered { arrive_ms: i64, bytes: Vec<u8>, corrupted: bool },
    Lost,
}

/// One direction of a link. Arrivals never overtake each other.
#[derive(Debug, Clone)]
pub struct Link {
    model: ChannelModel,
    rng: ChaCha8Rng,
    last_arrival_ms: i64,
}

impl Link {
    pub fn new(model: ChannelModel, seed: u64) -> Self {
        Link { model, rng: ChaCha8Rng::seed_from_u64(seed), last_arrival_ms: i64::MIN }
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn transmit(&mut self, bytes: &[u8], now_ms: i64) -> Transmission {
        // Fixed draw order keeps runs reproducible whatever the outcome.
        let lost = self.rng.gen::<f64>() < self.model.loss_probability;
        let jitter = self.rng.gen_range(0..=self.model.latency_jitter_ms);
        let corrupt = self.rng.gen::<f64>() < self.model.corruption_probability;
        let bit = self.rng.gen_range(0..bytes.len().max(1) * 8);
        if lost {
            return Transmission::Lost;
        }
        let arrive_ms = (now_ms + (self.model.latency_ms + jitter) as i64).max(self.last_arrival_ms);
        self.last_arrival_ms = arrive_ms;
        let mut out = bytes.to_vec();
        let corrupted = corrupt && !out.is_empty();
        if corrupted {
            out[bit / 8] ^= 1 << (bit % 8);
        }
        Transmission::Delivered { arrive_ms, bytes: out, corrupted }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lossless_link_delivers_in_order() {
        let mut link = Link::new(ChannelModel { latency_jitter_ms: 50, ..Default::default() }, 1);
        let mut last = i64::MIN;
        for t in 0..100 {
            match link.transmit(&[t as u8], t) {
                Transmission::Delivered { arrive_ms, bytes, corrupted } => {
                    assert!(arrive_ms >= last && arrive_ms >= t + 20);
                    assert_eq!(bytes, vec![t as u8]);
                    assert!(!corrupted);
                    last = arrive_ms;
                }
                Transmission::Lost => panic!("lossless link dropped a frame"),
            }
        }
    }

    #[test]
    fn total_loss_and_corruption() {
        let mut lossy = Link::new(ChannelModel { loss_probability: 1.0, ..Default::default() }, 1);
        assert_eq!(lossy.transmit(&[1, 2, 3], 0), Transmission::Lost);
        let mut noisy = Link::new(ChannelModel { corruption_probability: 1.0, ..Default::default() }, 1);
        match noisy.transmit(&[0; 8], 0) {
            Transmission::Delivered { bytes, corrupted, .. } => {
                assert!(corrupted);
                assert_eq!(bytes.iter().map(|b| b.count_ones()).sum::<u32>(), 1);
            }
            Transmission::Lost => panic!(),
        }
    }

    #[test]
    fn seeded_links_are_reproducible() {
        let model = ChannelModel { loss_probability: 0.5, latency_jitter_ms: 9, ..Default::default() };
        let run = |seed| {
            let mut l = Link::new(model.clone(), seed);
            (0..50).map(|t| l.transmit(&[0; 4], t)).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn airtime() {
        let m = ChannelModel::default();
        assert_eq!(m.airtime_ms(38), 1);
        assert_eq!(m.airtime_ms(1000), 8);
        assert!(ChannelModel { loss_probability: 1.5, bitrate_bps: 0, ..Default::default() }.violations().len() == 2);
    }
}
