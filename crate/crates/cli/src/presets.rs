//! Packaged configuration files.

/// `(file name, contents)` of every preset.
pub const PRESETS: [(&str, &str); 5] = [
    ("convergence_time.toml", CONVERGENCE_TIME),
    ("convergence_space_k1.toml", CONVERGENCE_SPACE_K1),
    ("convergence_space_k2.toml", CONVERGENCE_SPACE_K2),
    ("energy_stability.toml", ENERGY_STABILITY),
    ("hysteresis.toml", HYSTERESIS),
];

pub const CONVERGENCE_TIME: &str = r#"# Manufactured solution on the unit square, time step halved per level.
scenario = "convergence_time"

[mesh]
width = 1.0
height = 1.0
nx = 32
ny = 32
levels = 4
dirichlet = ["bottom", "top"]
neumann = ["left", "right"]

[discretization]
degree = 1
final_time = 0.1
steps = 1

[manufactured]
alpha = 0.5
beta = -0.05
gamma = -0.002

[output]
directory = "output/convergence_time"
"#;

pub const CONVERGENCE_SPACE_K1: &str = r#"# Manufactured solution on the unit square starting from 16 cells.
# Each level refines uniformly and divides the time step by 2^(k+1).
scenario = "convergence_space"

[mesh]
width = 1.0
height = 1.0
nx = 4
ny = 4
levels = 4
dirichlet = ["bottom", "top"]
neumann = ["left", "right"]

[discretization]
degree = 1
final_time = 0.1
steps = 1

[manufactured]
alpha = 0.5
beta = -0.05
gamma = -0.002

[output]
directory = "output/convergence_space_k1"
"#;

pub const CONVERGENCE_SPACE_K2: &str = r#"# Manufactured solution on the unit square starting from 16 cells.
# Each level refines uniformly and divides the time step by 2^(k+1).
scenario = "convergence_space"

[mesh]
width = 1.0
height = 1.0
nx = 4
ny = 4
levels = 4
dirichlet = ["bottom", "top"]
neumann = ["left", "right"]

[discretization]
degree = 2
final_time = 0.1
steps = 1

[manufactured]
alpha = 0.5
beta = -0.05
gamma = -0.002

[output]
directory = "output/convergence_space_k2"
"#;

pub const ENERGY_STABILITY: &str = r#"# 80 nm x 40 nm monolayer, grounded contacts, opposite polarization halves.
scenario = "energy_stability"

[mesh]
width = 80e-9
height = 40e-9
nx = 16
ny = 8
dirichlet = ["bottom", "top"]
neumann = ["left", "right"]

[discretization]
degree = 2
final_time = 160e-9
steps = 1000

[discretization.energy_check]
enabled = true
tolerance = 1e-10

[material]
epsilon_r = 5.0
alpha = -1.54e9
beta = -2.65e12
gamma = 2.6e15
g = 1e-8
rho_v = 20.0
property = "ferroelectric"

[initial]
kind = "split"
value = [0.1, 0.1]
position = 40e-9

[output]
directory = "output/energy_stability"
vtk_times = [80e-9, 160e-9]
"#;

pub const HYSTERESIS: &str = r#"# 80 nm x 40 nm monolayer driven by a triangle bias on the top contact
# for one and a half periods, with Kelly refinement every 5 steps.
scenario = "hysteresis"

[mesh]
width = 80e-9
height = 40e-9
nx = 16
ny = 8
adaptive = true
fraction = 0.01
refine_every = 5
max_level = 1
dirichlet = ["bottom", "top"]
neumann = ["left", "right"]

[discretization]
degree = 1
final_time = 120e-9
steps = 750

[discretization.energy_check]
enabled = false

[material]
epsilon_r = 5.0
alpha = -1.54e9
beta = -2.65e12
gamma = 2.6e15
g = 1e-8
rho_v = 20.0
property = "ferroelectric"

[initial]
kind = "split"
value = [0.1, 0.1]
position = 40e-9

[signal]
times = [0.0, 20e-9, 60e-9, 80e-9]
values = [0.0, 100.0, -100.0, 0.0]
periodic = true
side = "top"

[output]
directory = "output/hysteresis"
"#;
