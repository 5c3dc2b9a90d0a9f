//! Reference-element polynomial bases and Gauss quadrature.
//!
//! Cell unknowns use a tensor-product Lagrange basis on Gauss–Lobatto nodes
//! of the reference square `[-1,1]^2`; index `a = i + (k+1) j` where `i` runs
//! along `x1`. Trace unknowns use the same 1D Lagrange basis on `[-1,1]`,
//! parametrized in the direction of increasing coordinate.

/// Quadrature rule on `[-1,1]^D`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule<const D: usize> {
    pub points: Vec<[f64; D]>,
    pub weights: Vec<f64>,
}

impl<const D: usize> QuadratureRule<D> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn([f64; D]) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(*p)).sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let nf = n as f64;
    let dp = if (1.0 - x * x).abs() < 1e-300 {
        // endpoint derivative P_n'(±1) = (±1)^(n+1) n(n+1)/2
        x.signum().powi(n as i32 + 1) * nf * (nf + 1.0) / 2.0
    } else {
        nf * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// `n`-point Gauss–Legendre rule, exact for polynomials of degree `2n-1`.
pub fn gauss_legendre(n: usize) -> QuadratureRule<1> {
    assert!(n >= 1, "Gauss–Legendre rule needs at least one point");
    let mut points = vec![[0.0]; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        points[i] = [x];
        points[n - 1 - i] = [-x];
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        points[n / 2] = [0.0];
    }
    QuadratureRule { points, weights }
}

/// Tensor product of a 1D rule with itself; point `(i, j)` at index `i + n j`.
pub fn tensor_quadrature(rule: &QuadratureRule<1>) -> QuadratureRule<2> {
    let n = rule.len();
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            points.push([rule.points[i][0], rule.points[j][0]]);
            weights.push(rule.weights[i] * rule.weights[j]);
        }
    }
    QuadratureRule { points, weights }
}

/// Gauss–Lobatto nodes on `[-1,1]` (`n >= 2`), ascending. For `n = 1` the
/// single node is the midpoint.
pub fn gauss_lobatto_nodes(n: usize) -> Vec<f64> {
    assert!(n >= 1);
    if n == 1 {
        return vec![0.0];
    }
    let m = n - 1;
    let mut nodes: Vec<f64> = (0..n)
        .map(|i| -(std::f64::consts::PI * i as f64 / m as f64).cos())
        .collect();
    for x in nodes.iter_mut().take(n - 1).skip(1) {
        // interior nodes are the roots of P_m'
        for _ in 0..100 {
            let (p, dp) = legendre(m, *x);
            // P_m'' from the Legendre ODE
            let d2p = (2.0 * *x * dp - (m * (m + 1)) as f64 * p) / (1.0 - *x * *x);
            let dx = dp / d2p;
            *x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
    }
    nodes
}

/// One-dimensional Lagrange basis on Gauss–Lobatto nodes.
#[derive(Clone, Debug)]
pub struct Lagrange1d {
    nodes: Vec<f64>,
    bary: Vec<f64>,
}

impl Lagrange1d {
    pub fn new(degree: usize) -> Self {
        let nodes = gauss_lobatto_nodes(degree + 1);
        let bary = (0..nodes.len())
            .map(|i| {
                let prod: f64 = (0..nodes.len())
                    .filter(|&j| j != i)
                    .map(|j| nodes[i] - nodes[j])
                    .product();
                1.0 / prod
            })
            .collect();
        Self { nodes, bary }
    }

    pub fn degree(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Values and derivatives of all basis functions at `x`.
    pub fn eval(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.nodes.len();
        let mut vals = vec![0.0; n];
        let mut ders = vec![0.0; n];
        for i in 0..n {
            // product form; n is small
            let mut v = self.bary[i];
            let mut d = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let f = x - self.nodes[j];
                d = d * f + v;
                v *= f;
            }
            vals[i] = v;
            ders[i] = d;
        }
        (vals, ders)
    }
}

/// Tensor-product Lagrange basis for one scalar field on a cell.
#[derive(Clone, Debug)]
pub struct CellBasis {
    line: Lagrange1d,
}

impl CellBasis {
    pub fn new(degree: usize) -> Self {
        Self {
            line: Lagrange1d::new(degree),
        }
    }

    pub fn degree(&self) -> usize {
        self.line.degree()
    }

    pub fn dim(&self) -> usize {
        self.line.dim() * self.line.dim()
    }

    pub fn line(&self) -> &Lagrange1d {
        &self.line
    }

    /// Reference coordinates of the nodal points, in basis order.
    pub fn nodes(&self) -> Vec<[f64; 2]> {
        let n = self.line.nodes();
        let mut out = Vec::with_capacity(self.dim());
        for &y in n {
            for &x in n {
                out.push([x, y]);
            }
        }
        out
    }

    /// Values and reference gradients of all basis functions at `xi`.
    pub fn eval(&self, xi: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        let (vx, dx) = self.line.eval(xi[0]);
        let (vy, dy) = self.line.eval(xi[1]);
        let n = self.line.dim();
        let mut vals = Vec::with_capacity(n * n);
        let mut grads = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                vals.push(vx[i] * vy[j]);
                grads.push([dx[i] * vy[j], vx[i] * dy[j]]);
            }
        }
        (vals, grads)
    }
}

/// Lagrange basis for one scalar trace field on a facet.
#[derive(Clone, Debug)]
pub struct FacetBasis {
    line: Lagrange1d,
}

impl FacetBasis {
    pub fn new(degree: usize) -> Self {
        Self {
            line: Lagrange1d::new(degree),
        }
    }

    pub fn degree(&self) -> usize {
        self.line.degree()
    }

    pub fn dim(&self) -> usize {
        self.line.dim()
    }

    pub fn eval(&self, s: f64) -> (Vec<f64>, Vec<f64>) {
        self.line.eval(s)
    }
}
