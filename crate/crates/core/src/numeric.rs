//! Small numeric helpers: binomial coefficients (exact in f64 for small
//! arguments, log-space beyond) and compensated summation.

/// Precomputed log-factorials for binomial evaluation at large arguments.
#[derive(Debug, Clone)]
pub struct BinomialTable {
    ln_fact: Vec<f64>,
}

/// Largest `n` for which the multiplicative product for C(n, k) stays an
/// exactly representable integer in f64 (C(50, 25) < 2^53).
const EXACT_LIMIT: u64 = 50;

impl BinomialTable {
    pub fn new(max_n: usize) -> Self {
        let mut ln_fact = Vec::with_capacity(max_n + 1);
        ln_fact.push(0.0);
        let mut acc = 0.0f64;
        for k in 1..=max_n {
            acc += (k as f64).ln();
            ln_fact.push(acc);
        }
        BinomialTable { ln_fact }
    }

    pub fn max_n(&self) -> usize {
        self.ln_fact.len() - 1
    }

    fn ln_binom(&self, n: u64, k: u64) -> f64 {
        self.ln_fact[n as usize] - self.ln_fact[k as usize] - self.ln_fact[(n - k) as usize]
    }

    /// C(n, k); exact for n ≤ 50, otherwise accurate to ~1e-12 relative.
    pub fn binom(&self, n: u64, k: u64) -> f64 {
        if k > n {
            return 0.0;
        }
        if n <= EXACT_LIMIT {
            return binom_exact(n, k);
        }
        self.ln_binom(n, k).exp()
    }

    /// The hypergeometric kernel C(s, u) · C(m2 − s, i1 − u) / C(m2, i1),
    /// evaluated in log-space when any argument is large. Returns 0 when a
    /// binomial in the numerator vanishes.
    pub fn hypergeometric_ratio(&self, s: u64, u: u64, m2: u64, i1: u64) -> f64 {
        if u > s || s > m2 || i1 > m2 || i1 < u || i1 - u > m2 - s {
            return 0.0;
        }
        if m2 <= EXACT_LIMIT {
            return binom_exact(s, u) * binom_exact(m2 - s, i1 - u) / binom_exact(m2, i1);
        }
        (self.ln_binom(s, u) + self.ln_binom(m2 - s, i1 - u) - self.ln_binom(m2, i1)).exp()
    }
}

fn binom_exact(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0f64;
    for j in 1..=k {
        r = r * (n - k + j) as f64 / j as f64;
    }
    r.round()
}

/// Kahan-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        KahanSum::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.comp;
        let t = self.sum + y;
        self.comp = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}
