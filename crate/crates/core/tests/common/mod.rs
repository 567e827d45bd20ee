//! Helpers shared by the integration test targets.
#![allow(dead_code, clippy::too_many_arguments)]

use std::path::PathBuf;

use impulse_qvi::{GridSpec, ProblemSpec};

pub fn instance_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../instances")
        .join(format!("{name}.cfg"))
}

pub const INSTANCES: [&str; 6] = ["hat", "gaussian", "zero", "costly", "deterministic", "two_dim"];

/// Problem and its recommended grid (the `# grid:` comment of the file).
pub fn instance(name: &str) -> (ProblemSpec, GridSpec) {
    let text = std::fs::read_to_string(instance_path(name)).unwrap();
    let spec = ProblemSpec::from_config_str(&text).unwrap();
    let line = text
        .lines()
        .find_map(|l| l.strip_prefix("# grid:"))
        .expect("instance lacks a grid line");
    let words: Vec<String> = line
        .split_whitespace()
        .flat_map(|w| w.split_once('=').map_or(vec![w.to_string()], |(a, b)| vec![a.into(), b.into()]))
        .collect();
    let flag = |name: &str| -> &str {
        let i = words.iter().position(|w| w == name).unwrap();
        &words[i + 1]
    };
    let nums = |s: &str| -> Vec<f64> { s.split(',').map(|v| v.parse().unwrap()).collect() };
    let nodes: Vec<usize> = flag("--nodes").split(',').map(|v| v.parse().unwrap()).collect();
    let grid = GridSpec::new(
        nums(flag("--grid-lo")),
        nums(flag("--grid-hi")),
        nodes,
        flag("--time-steps").parse().unwrap(),
        spec.horizon(),
    )
    .unwrap();
    (spec, grid)
}

/// Same box, twice the resolution in space and time.
pub fn refined(grid: &GridSpec) -> GridSpec {
    GridSpec::new(
        grid.lo().to_vec(),
        grid.hi().to_vec(),
        grid.nodes_per_axis().iter().map(|n| 2 * n - 1).collect(),
        2 * grid.time_steps(),
        grid.horizon(),
    )
    .unwrap()
}

/// Every simple impulse chain from `start`, as (end node, total cost, first impulse).
fn chains(
    start: usize,
    t: f64,
    spec: &ProblemSpec,
    grid: &GridSpec,
) -> Vec<(usize, f64, Option<usize>)> {
    fn target(node: usize, xi: f64, grid: &GridSpec) -> usize {
        let mut y = vec![grid.axis_coord(0, node) + xi];
        grid.clamp(&mut y);
        grid.nearest_node(&y)
    }
    fn walk(
        node: usize,
        cost: f64,
        first: Option<usize>,
        visited: &mut Vec<usize>,
        out: &mut Vec<(usize, f64, Option<usize>)>,
        t: f64,
        spec: &ProblemSpec,
        grid: &GridSpec,
    ) {
        out.push((node, cost, first));
        for (j, xi) in spec.impulses().iter().enumerate() {
            let next = target(node, xi[0], grid);
            if visited.contains(&next) {
                continue;
            }
            let c = spec.cost(t, &[grid.axis_coord(0, node)], xi).unwrap();
            visited.push(next);
            walk(next, cost + c, first.or(Some(j)), visited, out, t, spec, grid);
            visited.pop();
        }
    }
    let mut out = Vec::new();
    walk(start, 0.0, None, &mut vec![start], &mut out, t, spec, grid);
    out
}

/// Backward recursion over explicit impulse chains for a noise-free,
/// drift-free 1D problem: `V_m(x) = max_chain [V_{m+1}(end) + dt f(t_m, end) - cost]`.
pub struct ChainOracle {
    pub values: Vec<Vec<f64>>,
    /// First impulse of the best chain per level and node (`None` = continue).
    pub first_moves: Vec<Vec<Option<usize>>>,
    /// Gap between the best chain and the best chain with a different first move.
    pub margins: Vec<Vec<f64>>,
}

pub fn chain_oracle(spec: &ProblemSpec, grid: &GridSpec) -> ChainOracle {
    let n = grid.num_nodes();
    let steps = grid.time_steps();
    let dt = grid.dt();
    let mut v: Vec<f64> = (0..n)
        .map(|i| spec.terminal_reward(&[grid.axis_coord(0, i)]).unwrap())
        .collect();
    let mut values = vec![v.clone()];
    let mut margins = vec![];
    let mut first_moves = vec![];
    for m in (0..steps).rev() {
        let t = grid.time(m);
        let cont: Vec<f64> = (0..n)
            .map(|i| v[i] + dt * spec.running_reward(t, &[grid.axis_coord(0, i)]).unwrap())
            .collect();
        let mut next = vec![0.0; n];
        let mut moves = vec![None; n];
        let mut margin = vec![f64::INFINITY; n];
        for i in 0..n {
            let mut options: Vec<(f64, Option<usize>)> = chains(i, t, spec, grid)
                .into_iter()
                .map(|(end, c, first)| (cont[end] - c, first))
                .collect();
            options.sort_by(|a, b| b.0.total_cmp(&a.0));
            next[i] = options[0].0;
            moves[i] = options[0].1;
            if let Some(other) = options.iter().find(|o| o.1 != options[0].1) {
                margin[i] = options[0].0 - other.0;
            }
        }
        v = next;
        values.push(v.clone());
        first_moves.push(moves);
        margins.push(margin);
    }
    values.reverse();
    first_moves.reverse();
    margins.reverse();
    ChainOracle {
        values,
        first_moves,
        margins,
    }
}
