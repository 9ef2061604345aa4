//! Placement policies and the adaptive promotion threshold.

use crate::config::{AdaptiveParams, PolicyKind, BITMAP_BITS};

/// What to do about a request that found its data only in slow memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlowAction {
    /// Serve from slow memory and leave placement alone.
    Forward,
    /// Serve from slow memory and try to swap the page into fast memory.
    PageSwap,
    /// Serve from slow memory and copy the touched block into the cache.
    BlockCopy,
}

/// Moves the promotion threshold according to how much of each promoted
/// page had actually been touched.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveController {
    params: AdaptiveParams,
    threshold: u32,
    ewma: f64,
    in_window: u32,
}

impl AdaptiveController {
    pub fn new(params: AdaptiveParams, start_threshold: u32) -> Self {
        Self {
            params,
            threshold: start_threshold.clamp(params.min_threshold, params.max_threshold),
            ewma: (params.lo_water + params.hi_water) / 2.0,
            in_window: 0,
        }
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn utilization(&self) -> f64 {
        self.ewma
    }

    /// Folds in the bitmap of a page being promoted; returns the threshold
    /// in force afterwards.
    pub fn observe(&mut self, bitmap: u8) -> u32 {
        let p = &self.params;
        let sample = bitmap.count_ones() as f64 / BITMAP_BITS as f64;
        self.ewma = p.alpha * sample + (1.0 - p.alpha) * self.ewma;
        if p.window_pages == 0 {
            return self.threshold;
        }
        self.in_window += 1;
        if self.in_window == p.window_pages {
            self.in_window = 0;
            if self.ewma > p.hi_water {
                self.threshold = self.threshold.saturating_sub(1).max(p.min_threshold);
            } else if self.ewma < p.lo_water {
                self.threshold = (self.threshold + 1).min(p.max_threshold);
            }
        }
        self.threshold
    }
}

/// Policy state shared by every request of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    kind: PolicyKind,
    static_threshold: u32,
    adaptive: Option<AdaptiveController>,
}

impl Policy {
    pub fn new(kind: PolicyKind, threshold: u32, params: AdaptiveParams) -> Self {
        Self {
            kind,
            static_threshold: threshold,
            adaptive: (kind == PolicyKind::AdpComb)
                .then(|| AdaptiveController::new(params, threshold)),
        }
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn threshold(&self) -> u32 {
        self.adaptive
            .as_ref()
            .map_or(self.static_threshold, AdaptiveController::threshold)
    }

    pub fn adaptive(&self) -> Option<&AdaptiveController> {
        self.adaptive.as_ref()
    }

    /// Decision for a slow-memory touch of a page whose 4-bit cached-block
    /// counter reads `cached_count`.
    pub fn on_slow_touch(&self, cached_count: u8) -> SlowAction {
        match self.kind {
            PolicyKind::Static | PolicyKind::AllDram => SlowAction::Forward,
            PolicyKind::PageMove => SlowAction::PageSwap,
            PolicyKind::StatComb | PolicyKind::AdpComb => {
                if cached_count as u32 >= self.threshold() {
                    SlowAction::PageSwap
                } else {
                    SlowAction::BlockCopy
                }
            }
        }
    }

    /// Hook for a page promotion, given the promoted page's access bitmap.
    pub fn on_promotion(&mut self, bitmap: u8) {
        if let Some(a) = self.adaptive.as_mut() {
            a.observe(bitmap);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(window: u32) -> AdaptiveParams {
        AdaptiveParams {
            window_pages: window,
            ..AdaptiveParams::default()
        }
    }

    #[test]
    fn full_bitmaps_lower_threshold() {
        let mut c = AdaptiveController::new(params(64), 4);
        for _ in 0..64 {
            c.observe(0xff);
        }
        assert_eq!(c.threshold(), 3);
        let mut floor = AdaptiveController::new(params(4), 1);
        for _ in 0..40 {
            floor.observe(0xff);
        }
        assert_eq!(floor.threshold(), 1);
    }

    #[test]
    fn sparse_bitmaps_raise_threshold() {
        let mut c = AdaptiveController::new(params(64), 4);
        for _ in 0..64 {
            c.observe(0b0001_0000);
        }
        assert_eq!(c.threshold(), 5);
        let mut cap = AdaptiveController::new(params(2), 8);
        for _ in 0..40 {
            cap.observe(1);
        }
        assert_eq!(cap.threshold(), 8);
    }

    #[test]
    fn alternating_bitmaps_hold_threshold() {
        // Hand recurrence: e' = 0.25*x + 0.75*e from e = 0.5, x alternating
        // 1, 0. Two-step fixed points are 4/7 after a 1 and 3/7 after a 0.
        let mut e = 0.5f64;
        let mut c = AdaptiveController::new(params(64), 4);
        for i in 0..64 {
            let (bm, x) = if i % 2 == 0 { (0xff, 1.0) } else { (0x00, 0.0) };
            e = 0.25 * x + 0.75 * e;
            c.observe(bm);
            assert!((0.25..=0.75).contains(&e));
        }
        assert!((e - 3.0 / 7.0).abs() < 1e-6);
        assert!((c.utilization() - e).abs() < 1e-12);
        assert_eq!(c.threshold(), 4);
    }

    #[test]
    fn threshold_moves_only_at_window_boundaries() {
        let mut c = AdaptiveController::new(params(8), 4);
        for i in 1..=7 {
            c.observe(0xff);
            assert_eq!(c.threshold(), 4, "promotion {i}");
        }
        c.observe(0xff);
        assert_eq!(c.threshold(), 3);
    }

    #[test]
    fn disabled_window_never_adapts() {
        let mut c = AdaptiveController::new(params(0), 4);
        for _ in 0..1000 {
            c.observe(0xff);
        }
        assert_eq!(c.threshold(), 4);
    }

    #[test]
    fn comb_threshold_rule() {
        let p = Policy::new(PolicyKind::StatComb, 4, AdaptiveParams::default());
        assert_eq!(p.on_slow_touch(2), SlowAction::BlockCopy);
        assert_eq!(p.on_slow_touch(3), SlowAction::BlockCopy);
        assert_eq!(p.on_slow_touch(4), SlowAction::PageSwap);
        let pm = Policy::new(PolicyKind::PageMove, 4, AdaptiveParams::default());
        assert_eq!(pm.on_slow_touch(0), SlowAction::PageSwap);
        for k in [PolicyKind::Static, PolicyKind::AllDram] {
            let p = Policy::new(k, 4, AdaptiveParams::default());
            assert_eq!(p.on_slow_touch(15), SlowAction::Forward);
        }
    }
}
