use std::cmp::Ordering;

/// A scored vector id. Ordered by distance, then id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub dist: f32,
    pub id: u64,
}

impl Candidate {
    #[inline]
    pub fn cmp_rank(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.id.cmp(&other.id))
    }
}

/// Top-k selection over a caller-provided buffer.
///
/// Candidates accumulate until the buffer reaches its limit, then the buffer
/// is cut down to the best `k`. The worst survivor becomes a threshold that
/// rejects hopeless candidates early. The buffer never grows past
/// `max(limit, 2k)`.
pub struct TopK<'a> {
    buf: &'a mut Vec<Candidate>,
    k: usize,
    limit: usize,
    threshold: Option<Candidate>,
    scanned: usize,
}

impl<'a> TopK<'a> {
    pub fn new(buf: &'a mut Vec<Candidate>, k: usize, limit: usize) -> Self {
        buf.clear();
        let limit = limit.max(2 * k).max(1);
        Self { buf, k, limit, threshold: None, scanned: 0 }
    }

    #[inline]
    pub fn push(&mut self, dist: f32, id: u64) {
        self.scanned += 1;
        let c = Candidate { dist, id };
        if let Some(t) = &self.threshold {
            if c.cmp_rank(t) != Ordering::Less {
                return;
            }
        }
        if self.buf.len() >= self.limit {
            self.compact();
        }
        self.buf.push(c);
    }

    fn compact(&mut self) {
        if self.buf.len() > self.k {
            self.buf.select_nth_unstable_by(self.k - 1, Candidate::cmp_rank);
            self.buf.truncate(self.k);
        }
        self.threshold = self.buf.iter().copied().max_by(Candidate::cmp_rank);
    }

    pub fn scanned(&self) -> usize {
        self.scanned
    }

    /// Best `min(k, scanned)` candidates in ascending rank.
    pub fn finish(self) -> Vec<Candidate> {
        let k = self.k;
        if self.buf.len() > k {
            self.buf.select_nth_unstable_by(k - 1, Candidate::cmp_rank);
            self.buf.truncate(k);
        }
        self.buf.sort_unstable_by(Candidate::cmp_rank);
        self.buf.clone()
    }
}
