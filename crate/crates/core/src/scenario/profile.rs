use serde::{Deserialize, Serialize};

pub const HOURS_PER_WEEK: f64 = 168.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Hour of day of the maximum.
    pub hour: f64,
    /// Standard deviation, hours.
    pub width: f64,
    pub height: f64,
}

/// Weekly load shape: a floor plus a morning and an evening Gaussian over
/// hour-of-day, scaled down on Saturday and Sunday. Normalized so that the
/// weekday maximum is 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub floor: f64,
    pub morning: Peak,
    pub evening: Peak,
    /// Multiplier applied on days 5 and 6 (weeks start on Monday).
    pub weekend: f64,
}

impl Default for LoadProfile {
    fn default() -> Self {
        LoadProfile {
            floor: 0.6,
            morning: Peak {
                hour: 8.5,
                width: 2.0,
                height: 0.3,
            },
            evening: Peak {
                hour: 19.0,
                width: 2.5,
                height: 0.4,
            },
            weekend: 0.85,
        }
    }
}

fn gaussian(hour: f64, p: &Peak) -> f64 {
    if p.height == 0.0 || p.width <= 0.0 {
        return 0.0;
    }
    // circular distance so the curve is continuous across midnight
    let d = (hour - p.hour).rem_euclid(24.0);
    let d = d.min(24.0 - d);
    p.height * (-(d * d) / (2.0 * p.width * p.width)).exp()
}

impl LoadProfile {
    /// The constant profile 1.
    pub fn flat() -> Self {
        let none = Peak {
            hour: 0.0,
            width: 1.0,
            height: 0.0,
        };
        LoadProfile {
            floor: 1.0,
            morning: none,
            evening: none,
            weekend: 1.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        let peak_ok = |p: &Peak| p.height >= 0.0 && p.width > 0.0 && p.hour.is_finite();
        self.floor > 0.0 && self.weekend > 0.0 && peak_ok(&self.morning) && peak_ok(&self.evening)
    }

    fn raw(&self, hour_of_day: f64) -> f64 {
        self.floor + gaussian(hour_of_day, &self.morning) + gaussian(hour_of_day, &self.evening)
    }

    /// Precomputes the normalization.
    pub fn curve(&self) -> Curve {
        let peak = (0..24 * 60)
            .map(|m| self.raw(m as f64 / 60.0))
            .fold(f64::MIN, f64::max);
        Curve {
            profile: *self,
            peak,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Curve {
    profile: LoadProfile,
    peak: f64,
}

impl Curve {
    /// Relative load `hours` after Monday 00:00; wraps weekly.
    pub fn at(&self, hours: f64) -> f64 {
        let h = hours.rem_euclid(HOURS_PER_WEEK);
        let day = (h / 24.0).floor() as u32;
        let v = self.profile.raw(h - 24.0 * day as f64) / self.peak;
        if day >= 5 {
            v * self.profile.weekend
        } else {
            v
        }
    }

    /// Weekly mean at one-minute resolution.
    pub fn mean(&self) -> f64 {
        let n = 7 * 24 * 60;
        (0..n).map(|m| self.at(m as f64 / 60.0)).sum::<f64>() / n as f64
    }

    /// (min, max) over the week at one-minute resolution.
    pub fn range(&self) -> (f64, f64) {
        (0..7 * 24 * 60)
            .map(|m| self.at(m as f64 / 60.0))
            .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }
}
