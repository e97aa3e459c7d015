//! Discrete transport linear program solved by successive shortest paths.
//! Used as an oracle for the exact circle solver.

use super::{circle_distance, DiscreteMeasure1D};
use crate::error::{Error, Result};

/// Largest `|supp a| · |supp b|` accepted.
pub const LP_SIZE_CAP: usize = 10_000;

const EPS: f64 = 1e-15;

/// Minimum-cost flow on the bipartite graph with squared geodesic costs.
pub fn w2_lp_bruteforce(a: &DiscreteMeasure1D, b: &DiscreteMeasure1D) -> Result<f64> {
    let (na, nb) = (a.len(), b.len());
    if na == 0 || nb == 0 {
        return Err(Error::EmptySupport);
    }
    if na * nb > LP_SIZE_CAP {
        return Err(Error::SizeCap { size: na * nb, cap: LP_SIZE_CAP });
    }
    let cost: Vec<Vec<f64>> = a
        .atoms()
        .iter()
        .map(|&x| b.atoms().iter().map(|&y| circle_distance(x, y).powi(2)).collect())
        .collect();
    let mut supply = a.weights().to_vec();
    let mut demand = b.weights().to_vec();
    let mut flow = vec![vec![0.0; nb]; na];
    // nodes: 0..na sources, na..na+nb sinks
    let n = na + nb;
    loop {
        let remaining: f64 = supply.iter().sum();
        if remaining <= 1e-14 {
            break;
        }
        // Bellman–Ford from the virtual source that feeds every source with supply
        let mut dist = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        for i in 0..na {
            if supply[i] > EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..n {
            let mut changed = false;
            for i in 0..na {
                if dist[i].is_finite() {
                    for j in 0..nb {
                        let d = dist[i] + cost[i][j];
                        if d < dist[na + j] - 1e-13 {
                            dist[na + j] = d;
                            pred[na + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..nb {
                if dist[na + j].is_finite() {
                    for i in 0..na {
                        if flow[i][j] > EPS {
                            let d = dist[na + j] - cost[i][j];
                            if d < dist[i] - 1e-13 {
                                dist[i] = d;
                                pred[i] = na + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let sink = (0..nb)
            .filter(|&j| demand[j] > EPS && dist[na + j].is_finite())
            .min_by(|&x, &y| dist[na + x].total_cmp(&dist[na + y]))
            .ok_or(Error::NotConverged { iterations: 0, violation: remaining })?;
        // walk back to find the bottleneck
        let mut amount = demand[sink];
        let mut v = na + sink;
        let mut path = Vec::new();
        loop {
            if path.len() > n {
                return Err(Error::NotConverged { iterations: path.len(), violation: remaining });
            }
            let u = pred[v];
            if u == usize::MAX {
                amount = amount.min(supply[v]);
                break;
            }
            if v >= na {
                path.push((u, v - na, true));
            } else {
                amount = amount.min(flow[v][u - na]);
                path.push((v, u - na, false));
            }
            v = u;
        }
        let origin = v;
        for (i, j, forward) in path {
            if forward {
                flow[i][j] += amount;
            } else {
                flow[i][j] -= amount;
            }
        }
        supply[origin] -= amount;
        demand[sink] -= amount;
    }
    let mut total = 0.0;
    for i in 0..na {
        for j in 0..nb {
            total += flow[i][j] * cost[i][j];
        }
    }
    Ok(total)
}
