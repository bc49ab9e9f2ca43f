use nalgebra::DMatrix;

use crate::{Error, Result};

/// PTDF matrix for lines given as `(from, to, susceptance)` storage indices.
///
/// Builds the nodal susceptance matrix, drops the slack row and column, factors the reduced
/// matrix with partial-pivoting LU and maps the resulting angle sensitivities onto lines. The
/// slack column is identically zero: injections are balanced by a withdrawal at the slack bus.
pub fn compute_ptdf(
    n_buses: usize,
    lines: &[(usize, usize, f64)],
    slack: usize,
) -> Result<DMatrix<f64>> {
    if slack >= n_buses {
        return Err(Error::Validation(format!(
            "slack index {slack} out of range for {n_buses} buses"
        )));
    }
    for (k, &(f, t, b)) in lines.iter().enumerate() {
        if f >= n_buses || t >= n_buses {
            return Err(Error::Validation(format!("line {k} endpoint out of range")));
        }
        if !(b > 0.0) || !b.is_finite() {
            return Err(Error::Validation(format!(
                "line {k} has non-positive susceptance {b}"
            )));
        }
    }
    check_connected(n_buses, lines)?;

    // Reduced ordering skips the slack bus.
    let pos = |i: usize| if i < slack { i } else { i - 1 };
    let m = n_buses - 1;
    let mut b_red = DMatrix::<f64>::zeros(m, m);
    for &(f, t, b) in lines {
        if f != slack {
            b_red[(pos(f), pos(f))] += b;
        }
        if t != slack {
            b_red[(pos(t), pos(t))] += b;
        }
        if f != slack && t != slack {
            b_red[(pos(f), pos(t))] -= b;
            b_red[(pos(t), pos(f))] -= b;
        }
    }
    let x = if m == 0 {
        DMatrix::zeros(0, 0)
    } else {
        b_red
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("reduced susceptance matrix is singular".into()))?
    };

    let mut phi = DMatrix::<f64>::zeros(lines.len(), n_buses);
    for (k, &(f, t, b)) in lines.iter().enumerate() {
        for i in 0..n_buses {
            if i == slack {
                continue;
            }
            let xf = if f == slack { 0.0 } else { x[(pos(f), pos(i))] };
            let xt = if t == slack { 0.0 } else { x[(pos(t), pos(i))] };
            phi[(k, i)] = b * (xf - xt);
        }
    }
    Ok(phi)
}

fn check_connected(n: usize, lines: &[(usize, usize, f64)]) -> Result<()> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut components = n;
    for &(f, t, _) in lines {
        let (a, b) = (find(&mut parent, f), find(&mut parent, t));
        if a != b {
            parent[a] = b;
            components -= 1;
        }
    }
    if components > 1 {
        return Err(Error::Structural(format!(
            "network is disconnected ({components} islands)"
        )));
    }
    Ok(())
}
