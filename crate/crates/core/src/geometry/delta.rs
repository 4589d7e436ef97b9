use serde::{Deserialize, Serialize};

use super::BBox;
use crate::error::{Error, Result};

/// Upper bound on `t_w`/`t_h` before exponentiation (`ln 1000`).
pub const MAX_LOG_SCALE: f64 = 6.907_755_278_982_137;

/// Center/log-size regression offsets of a box relative to an anchor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub t_x: f64,
    pub t_y: f64,
    pub t_w: f64,
    pub t_h: f64,
}

impl BoxDelta {
    pub fn new(t_x: f64, t_y: f64, t_w: f64, t_h: f64) -> Self {
        BoxDelta { t_x, t_y, t_w, t_h }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.t_x, self.t_y, self.t_w, self.t_h]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        BoxDelta::new(a[0], a[1], a[2], a[3])
    }
}

/// Result of [`decode`]: the box plus whether a log-size term was clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded {
    pub bbox: BBox,
    pub clamped: bool,
}

pub fn encode(anchor: &BBox, target: &BBox) -> Result<BoxDelta> {
    anchor.validate()?;
    target.validate()?;
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let (x, y) = target.center();
    Ok(BoxDelta {
        t_x: (x - ax) / aw,
        t_y: (y - ay) / ah,
        t_w: (target.width() / aw).ln(),
        t_h: (target.height() / ah).ln(),
    })
}

/// Inverse of [`encode`]. Log-size terms are clamped to `±ln 1000`.
pub fn decode(anchor: &BBox, delta: &BoxDelta) -> Result<Decoded> {
    anchor.validate()?;
    if !delta.to_array().iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite delta {delta:?}")));
    }
    let tw = delta.t_w.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE);
    let th = delta.t_h.clamp(-MAX_LOG_SCALE, MAX_LOG_SCALE);
    let clamped = tw != delta.t_w || th != delta.t_h;
    let (ax, ay) = anchor.center();
    let (aw, ah) = (anchor.width(), anchor.height());
    let bbox = BBox::from_center(
        ax + delta.t_x * aw,
        ay + delta.t_y * ah,
        aw * tw.exp(),
        ah * th.exp(),
    );
    Ok(Decoded { bbox, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn encode_fixtures() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(encode(&a, &a).unwrap(), BoxDelta::default());
        let d = encode(&a, &b(0.0, 0.0, 20.0, 10.0)).unwrap();
        assert!((d.t_x - 0.5).abs() < 1e-12);
        assert_eq!(d.t_y, 0.0);
        assert!((d.t_w - 2f64.ln()).abs() < 1e-12);
        assert_eq!(d.t_h, 0.0);
    }

    #[test]
    fn decode_fixtures() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let same = decode(&a, &BoxDelta::default()).unwrap();
        assert_eq!(same.bbox, a);
        assert!(!same.clamped);
        let out = decode(&a, &BoxDelta::new(0.5, 0.0, 2f64.ln(), 0.0))
            .unwrap()
            .bbox;
        for (got, want) in [out.x_min, out.y_min, out.x_max, out.y_max]
            .into_iter()
            .zip([0.0, 0.0, 20.0, 10.0])
        {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn decode_clamps_runaway_sizes() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let d = decode(&a, &BoxDelta::new(0.0, 0.0, 50.0, -900.0)).unwrap();
        assert!(d.clamped);
        assert!(d.bbox.is_valid());
        assert!((d.bbox.width() - 10_000.0).abs() < 1e-6);
        assert!(decode(&a, &BoxDelta::new(f64::NAN, 0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn encode_rejects_degenerate() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        let flat = BBox {
            x_min: 1.0,
            y_min: 1.0,
            x_max: 1.0,
            y_max: 4.0,
        };
        assert!(encode(&a, &flat).is_err());
        assert!(encode(&flat, &a).is_err());
    }

    #[test]
    fn round_trip_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        let rand_box = |rng: &mut ChaCha8Rng| {
            let x = rng.random_range(0.0..600.0);
            let y = rng.random_range(0.0..600.0);
            b(
                x,
                y,
                x + rng.random_range(1.0..120.0),
                y + rng.random_range(1.0..120.0),
            )
        };
        for _ in 0..1000 {
            let anchor = rand_box(&mut rng);
            let target = rand_box(&mut rng);
            let back = decode(&anchor, &encode(&anchor, &target).unwrap())
                .unwrap()
                .bbox;
            for (p, q) in [
                (back.x_min, target.x_min),
                (back.y_min, target.y_min),
                (back.x_max, target.x_max),
                (back.y_max, target.y_max),
            ] {
                worst = worst.max((p - q).abs());
            }
        }
        assert!(worst < 1e-4, "max reconstruction error {worst}");
    }
}
