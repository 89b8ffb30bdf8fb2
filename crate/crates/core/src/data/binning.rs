use serde::{Deserialize, Serialize};

use super::events::{AudioSpikeStream, EventStream};
use crate::engine::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinningConfig {
    #[serde(rename = "T")]
    pub timesteps: usize,
    /// Total duration covered by the `T` bins, in microseconds.
    pub window_us: u64,
    /// Separate ON/OFF channels for camera events; otherwise one channel.
    #[serde(default = "yes")]
    pub polarity_channels: bool,
    /// Accumulate event counts instead of a 0/1 occupancy.
    #[serde(default)]
    pub count: bool,
}

fn yes() -> bool {
    true
}

impl BinningConfig {
    pub fn new(timesteps: usize, window_us: u64) -> Result<Self> {
        let cfg = Self {
            timesteps,
            window_us,
            polarity_channels: true,
            count: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timesteps == 0 || self.window_us == 0 {
            return Err(Error::InvalidArgument(
                "binning needs T ≥ 1 and a positive window".into(),
            ));
        }
        Ok(())
    }

    /// Bin of timestamp `t_us`; late events fall in the last bin.
    pub fn bin(&self, t_us: u64) -> usize {
        let b = (t_us as u128 * self.timesteps as u128 / self.window_us as u128) as usize;
        b.min(self.timesteps - 1)
    }

    fn mark(&self, cell: &mut f64) {
        if self.count {
            *cell += 1.0;
        } else {
            *cell = 1.0;
        }
    }
}

/// Camera events to `[T × P × H × W]` with `P` = 2 under polarity channels.
pub fn bin_events(stream: &EventStream, cfg: &BinningConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (w, h) = stream.sensor_size;
    let p = if cfg.polarity_channels { 2 } else { 1 };
    let mut out = Tensor::zeros(&[cfg.timesteps, p, h, w]);
    let data = out.data_mut();
    for e in &stream.events {
        let c = if cfg.polarity_channels { e.p as usize } else { 0 };
        let idx = ((cfg.bin(e.t_us) * p + c) * h + e.y) * w + e.x;
        cfg.mark(&mut data[idx]);
    }
    Ok(out)
}

/// Audio spikes to `[T × units]`.
pub fn bin_audio(stream: &AudioSpikeStream, cfg: &BinningConfig) -> Result<Tensor> {
    cfg.validate()?;
    let n = stream.num_units;
    let mut out = Tensor::zeros(&[cfg.timesteps, n]);
    let data = out.data_mut();
    for s in &stream.spikes {
        cfg.mark(&mut data[cfg.bin(s.t_us) * n + s.unit]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::events::{AudioSpike, Event};
    use proptest::prelude::*;

    fn ev(x: usize, y: usize, t_us: u64, p: bool) -> Event {
        Event { x, y, t_us, p }
    }

    #[test]
    fn midpoint_lands_in_middle_bin() {
        let cfg = BinningConfig::new(10, 1000).unwrap();
        let s = EventStream {
            events: vec![ev(1, 0, 500, true)],
            sensor_size: (2, 1),
        };
        let t = bin_events(&s, &cfg).unwrap();
        assert_eq!(t.shape(), &[10, 2, 1, 2]);
        let idx = ((5 * 2 + 1) * 1) * 2 + 1;
        assert_eq!(t.data()[idx], 1.0);
        assert_eq!(t.sum(), 1.0);
    }

    #[test]
    fn same_cell_is_binary_unless_counting() {
        let s = AudioSpikeStream {
            spikes: vec![
                AudioSpike { unit: 2, t_us: 10 },
                AudioSpike { unit: 2, t_us: 20 },
            ],
            num_units: 4,
        };
        let mut cfg = BinningConfig::new(4, 100).unwrap();
        assert_eq!(bin_audio(&s, &cfg).unwrap().data()[2], 1.0);
        cfg.count = true;
        assert_eq!(bin_audio(&s, &cfg).unwrap().data()[2], 2.0);
    }

    #[test]
    fn late_events_clamp_to_last_bin() {
        let cfg = BinningConfig::new(3, 30).unwrap();
        assert_eq!(cfg.bin(30), 2);
        assert_eq!(cfg.bin(1_000), 2);
        assert!(BinningConfig::new(0, 30).is_err());
    }

    fn events() -> impl Strategy<Value = Vec<Event>> {
        prop::collection::vec(
            (0usize..4, 0usize..3, 0u64..1000, any::<bool>()).prop_map(|(x, y, t, p)| ev(x, y, t, p)),
            0..60,
        )
    }

    proptest! {
        #[test]
        fn binary_and_bounded(mut evs in events(), t in 1usize..12) {
            evs.sort_by_key(|e| e.t_us);
            let s = EventStream { events: evs.clone(), sensor_size: (4, 3) };
            let out = bin_events(&s, &BinningConfig::new(t, 1000).unwrap()).unwrap();
            prop_assert!(out.data().iter().all(|&v| v == 0.0 || v == 1.0));
            prop_assert!(out.sum() <= evs.len() as f64);
        }

        #[test]
        fn order_within_stream_is_irrelevant(evs in events(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let cfg = BinningConfig::new(7, 1000).unwrap();
            let a = EventStream { events: evs.clone(), sensor_size: (4, 3) };
            let mut shuffled = evs;
            shuffled.shuffle(&mut crate::seed::stream(seed, "test", 0));
            let b = EventStream { events: shuffled, sensor_size: (4, 3) };
            prop_assert_eq!(bin_events(&a, &cfg).unwrap(), bin_events(&b, &cfg).unwrap());
        }
    }
}
