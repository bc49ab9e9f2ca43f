use asopf_core::grid::{Bus, Generator, Grid, Line, WindFarm};
use asopf_core::rng::stream_rng;
use rand::Rng;

/// Random connected network: a spanning tree plus one closing line, `n_units` generators and
/// optionally one wind farm.
pub fn random_grid(seed: u64, n: usize, n_units: usize, wind: bool) -> Grid {
    let mut rng = stream_rng(seed, "test-grid", 0);
    let buses: Vec<Bus> = (0..n)
        .map(|i| Bus {
            id: i + 1,
            load: rng.random_range(0.1..1.0),
            shed_cost: 1000.0 + i as f64,
        })
        .collect();
    let mut lines: Vec<Line> = (1..n)
        .map(|i| Line {
            from: rng.random_range(1..=i),
            to: i + 1,
            susceptance: rng.random_range(2.0..20.0),
            f_max: rng.random_range(0.3..1.5),
        })
        .collect();
    lines.push(Line {
        from: 1,
        to: n,
        susceptance: rng.random_range(2.0..20.0),
        f_max: rng.random_range(0.3..1.5),
    });
    let generators: Vec<Generator> = (0..n_units)
        .map(|_| Generator {
            bus: rng.random_range(1..=n),
            p_min: rng.random_range(0.0..0.2),
            p_max: rng.random_range(0.8..2.0),
            c2: rng.random_range(0.2..2.0),
            c1: rng.random_range(10.0..60.0),
            committed: true,
        })
        .collect();
    let wind_farms = if wind {
        vec![WindFarm {
            bus: rng.random_range(1..=n),
            forecast: rng.random_range(0.1..0.8),
            curtail_cost: 5.0,
        }]
    } else {
        vec![]
    };
    Grid::new(buses, lines, generators, wind_farms, None).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
