//! Wall-clock budget tracking. On `wasm32` targets there is no monotonic
//! clock in `std`, so budgets never expire there and elapsed time reads 0.

#[cfg(not(target_arch = "wasm32"))]
use std::time::Instant;

#[derive(Debug, Clone, Copy)]
pub struct Stopwatch {
    #[cfg(not(target_arch = "wasm32"))]
    start: Instant,
    limit_s: f64,
}

impl Stopwatch {
    pub fn start(limit_s: f64) -> Self {
        Stopwatch {
            #[cfg(not(target_arch = "wasm32"))]
            start: Instant::now(),
            limit_s,
        }
    }

    pub fn elapsed_s(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }

    pub fn expired(&self) -> bool {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.limit_s <= 0.0 || self.elapsed_s() >= self.limit_s
        }
        #[cfg(target_arch = "wasm32")]
        {
            self.limit_s <= 0.0
        }
    }
}
