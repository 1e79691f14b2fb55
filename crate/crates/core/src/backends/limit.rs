use std::sync::{Condvar, Mutex};

use super::{
    BackendError, EmbedInput, Embedder, EmbeddingVector, GenRequest, NliJudgement, NliScorer,
    TextGenerator, VqaDistribution, VqaModel,
};
use crate::records::ImageRef;

/// Caps the number of in-flight calls to the wrapped backend.
pub struct Limited<B> {
    inner: B,
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a, B> {
    owner: &'a Limited<B>,
}

impl<B> Drop for Permit<'_, B> {
    fn drop(&mut self) {
        let mut n = self
            .owner
            .in_flight
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.owner.freed.notify_one();
    }
}

impl<B> Limited<B> {
    pub fn new(inner: B, max: usize) -> Self {
        Limited {
            inner,
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_, B> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.max {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit { owner: self }
    }
}

impl<B: TextGenerator> TextGenerator for Limited<B> {
    fn generate(&self, req: &GenRequest) -> Result<String, BackendError> {
        let _p = self.acquire();
        self.inner.generate(req)
    }
}

impl<B: NliScorer> NliScorer for Limited<B> {
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<NliJudgement, BackendError> {
        let _p = self.acquire();
        self.inner.nli_score(premise, hypothesis)
    }
}

impl<B: VqaModel> VqaModel for Limited<B> {
    fn vqa_answer(
        &self,
        image: &ImageRef,
        question: &str,
        choices: &[String],
    ) -> Result<VqaDistribution, BackendError> {
        let _p = self.acquire();
        self.inner.vqa_answer(image, question, choices)
    }
}

impl<B: Embedder> Embedder for Limited<B> {
    fn embed(&self, input: &EmbedInput, limit: usize) -> Result<EmbeddingVector, BackendError> {
        let _p = self.acquire();
        self.inner.embed(input, limit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    use std::time::Duration;

    struct Slow {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl TextGenerator for Slow {
        fn generate(&self, _req: &GenRequest) -> Result<String, BackendError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(String::new())
        }
    }

    #[test]
    fn never_exceeds_bound() {
        let limited = Arc::new(Limited::new(
            Slow {
                current: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
            },
            3,
        ));
        let handles: Vec<_> = (0..12)
            .map(|_| {
                let l = Arc::clone(&limited);
                std::thread::spawn(move || {
                    l.generate(&GenRequest::new("t", "s", "p".into())).unwrap();
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let peak = limited.inner.peak.load(Ordering::SeqCst);
        assert!((1..=3).contains(&peak), "peak {peak}");
    }
}
