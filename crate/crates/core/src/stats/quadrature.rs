/// Default node count for integrals over the accuracy range.
pub const DEFAULT_NODES: usize = 256;
/// Smallest node count accepted by [`GaussLegendre::new`].
pub const MIN_NODES: usize = 64;

/// Fixed-node Gauss–Legendre rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the rule on `[-1, 1]`; node counts below 64 are raised to 64.
    pub fn new(nodes: usize) -> Self {
        let n = nodes.max(MIN_NODES);
        let mut xs = vec![0.0; n];
        let mut ws = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            xs[i] = -x;
            xs[n - 1 - i] = x;
            ws[i] = w;
            ws[n - 1 - i] = w;
        }
        Self { nodes: xs, weights: ws }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integral of `f` over `[lo, hi]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, lo: f64, hi: f64) -> f64 {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    pub fn integrate_unit<F: FnMut(f64) -> f64>(&self, f: F) -> f64 {
        self.integrate(f, 0.0, 1.0)
    }
}

impl Default for GaussLegendre {
    fn default() -> Self {
        Self::new(DEFAULT_NODES)
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre estimate of `∫₀¹ f`.
pub fn integrate_unit<F: FnMut(f64) -> f64>(f: F, nodes: usize) -> f64 {
    GaussLegendre::new(nodes).integrate_unit(f)
}

/// Normal density with mean `mean` and variance `var`.
pub fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    (-z * z / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Normal distribution function with mean `mean` and variance `var`.
pub fn normal_cdf(x: f64, mean: f64, var: f64) -> f64 {
    0.5 * libm::erfc((mean - x) / (2.0 * var).sqrt())
}
