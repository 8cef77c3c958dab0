use rand::Rng;

use crate::mdp::ActionId;

/// One stored `(s, a, r, s', done)` tuple. States are network inputs
/// `[x * m; m]`; `next_state` is empty for terminal transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: ActionId,
    pub reward: f32,
    pub next_state: Vec<f32>,
    pub done: bool,
}

/// Fixed-capacity ring buffer; the oldest transition is overwritten first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
            inserted: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of insertions, including overwritten ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Stored transitions from oldest to newest.
    pub fn iter_oldest_first(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `batch` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..batch)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(i: usize) -> Transition {
        Transition {
            state: vec![i as f32],
            action: ActionId(i),
            reward: 0.0,
            next_state: vec![],
            done: true,
        }
    }

    #[test]
    fn keeps_last_capacity_items() {
        let mut buf = ReplayBuffer::new(4);
        for i in 0..11 {
            buf.push(t(i));
        }
        assert_eq!(buf.len(), 4);
        assert_eq!(buf.inserted(), 11);
        let held: Vec<usize> = buf.iter_oldest_first().map(|t| t.action.0).collect();
        assert_eq!(held, vec![7, 8, 9, 10]);
    }

    #[test]
    fn partial_fill_order() {
        let mut buf = ReplayBuffer::new(5);
        for i in 0..3 {
            buf.push(t(i));
        }
        let held: Vec<usize> = buf.iter_oldest_first().map(|t| t.action.0).collect();
        assert_eq!(held, vec![0, 1, 2]);
    }

    #[test]
    fn sampling_is_uniform_and_seeded() {
        let mut buf = ReplayBuffer::new(4);
        for i in 0..4 {
            buf.push(t(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        for s in buf.sample(40_000, &mut rng) {
            counts[s.action.0] += 1;
        }
        assert!(counts.iter().all(|&c| (9_500..10_500).contains(&c)), "{counts:?}");
        let a: Vec<_> = buf.sample(8, &mut ChaCha8Rng::seed_from_u64(3)).iter().map(|t| t.action).collect();
        let b: Vec<_> = buf.sample(8, &mut ChaCha8Rng::seed_from_u64(3)).iter().map(|t| t.action).collect();
        assert_eq!(a, b);
        assert!(ReplayBuffer::new(2).sample(3, &mut rng).is_empty());
    }

    proptest::proptest! {
        #[test]
        fn ring_holds_exactly_the_newest(cap in 1usize..20, extra in 0usize..50) {
            let mut buf = ReplayBuffer::new(cap);
            for i in 0..cap + extra {
                buf.push(t(i));
            }
            let held: Vec<usize> = buf.iter_oldest_first().map(|t| t.action.0).collect();
            proptest::prop_assert_eq!(held, (extra..cap + extra).collect::<Vec<_>>());
        }
    }
}
