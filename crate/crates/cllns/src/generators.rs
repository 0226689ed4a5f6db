//! Seeded generators for the four benchmark families: minimum vertex cover
//! on Barabási–Albert graphs, maximum independent set on Erdős–Rényi graphs,
//! set covering, and combinatorial auctions.
//!
//! All draws come from xoshiro256++ (see [`crate::rng`]); the same `GenSpec`
//! always yields a byte-identical instance file. Every generated instance is
//! checked feasible at its family's trivial point before it is returned.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::error::{Error, Result};
use crate::ilp::{Constraint, Ilp};
use crate::rng;

/// Parameters of one instance, serialized into dataset manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum GenSpec {
    Mvc {
        n_nodes: usize,
        avg_degree: usize,
        seed: u64,
    },
    Mis {
        n_nodes: usize,
        avg_degree: usize,
        seed: u64,
    },
    Sc {
        n_vars: usize,
        n_cons: usize,
        density: f64,
        seed: u64,
    },
    Ca {
        n_items: usize,
        n_bids: usize,
        bundle_size_mean: f64,
        price_noise: f64,
        seed: u64,
    },
}

impl GenSpec {
    pub fn family(&self) -> &'static str {
        match self {
            GenSpec::Mvc { .. } => "mvc",
            GenSpec::Mis { .. } => "mis",
            GenSpec::Sc { .. } => "sc",
            GenSpec::Ca { .. } => "ca",
        }
    }

    pub fn name(&self) -> String {
        match self {
            GenSpec::Mvc {
                n_nodes,
                avg_degree,
                seed,
            } => format!("mvc_n{n_nodes}_d{avg_degree}_s{seed}"),
            GenSpec::Mis {
                n_nodes,
                avg_degree,
                seed,
            } => format!("mis_n{n_nodes}_d{avg_degree}_s{seed}"),
            GenSpec::Sc {
                n_vars,
                n_cons,
                seed,
                ..
            } => format!("sc_v{n_vars}_c{n_cons}_s{seed}"),
            GenSpec::Ca {
                n_items,
                n_bids,
                seed,
                ..
            } => format!("ca_i{n_items}_b{n_bids}_s{seed}"),
        }
    }

    pub fn generate(&self) -> Result<Ilp> {
        match *self {
            GenSpec::Mvc {
                n_nodes,
                avg_degree,
                seed,
            } => gen_mvc(n_nodes, avg_degree, seed),
            GenSpec::Mis {
                n_nodes,
                avg_degree,
                seed,
            } => gen_mis(n_nodes, avg_degree, seed),
            GenSpec::Sc {
                n_vars,
                n_cons,
                density,
                seed,
            } => gen_sc(n_vars, n_cons, density, seed),
            GenSpec::Ca {
                n_items,
                n_bids,
                bundle_size_mean,
                price_noise,
                seed,
            } => gen_ca(n_items, n_bids, seed, bundle_size_mean, price_noise),
        }
    }
}

fn metadata(spec: &GenSpec) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    meta.insert("family".into(), spec.family().into());
    match *spec {
        GenSpec::Mvc {
            n_nodes,
            avg_degree,
            seed,
        }
        | GenSpec::Mis {
            n_nodes,
            avg_degree,
            seed,
        } => {
            meta.insert("n_nodes".into(), n_nodes.to_string());
            meta.insert("avg_degree".into(), avg_degree.to_string());
            meta.insert("seed".into(), seed.to_string());
        }
        GenSpec::Sc {
            n_vars,
            n_cons,
            density,
            seed,
        } => {
            meta.insert("n_vars".into(), n_vars.to_string());
            meta.insert("n_cons".into(), n_cons.to_string());
            meta.insert("density".into(), density.to_string());
            meta.insert("seed".into(), seed.to_string());
        }
        GenSpec::Ca {
            n_items,
            n_bids,
            bundle_size_mean,
            price_noise,
            seed,
        } => {
            meta.insert("n_items".into(), n_items.to_string());
            meta.insert("n_bids".into(), n_bids.to_string());
            meta.insert("bundle_size_mean".into(), bundle_size_mean.to_string());
            meta.insert("price_noise".into(), price_noise.to_string());
            meta.insert("seed".into(), seed.to_string());
        }
    }
    meta
}

fn assert_feasible(ilp: &Ilp, point: &Bits, family: &str) -> Result<()> {
    let sol = ilp.evaluate(point)?;
    if !sol.feasible {
        return Err(Error::Validation(format!(
            "{family} generator produced an instance infeasible at its trivial point"
        )));
    }
    Ok(())
}

/// Barabási–Albert preferential attachment: start from a clique on
/// `m_ba + 1` nodes with `m_ba = ceil(avg_degree / 2)`, then attach each new
/// node to `m_ba` distinct existing nodes with probability proportional to
/// their degree.
fn barabasi_albert(n_nodes: usize, avg_degree: usize, seed: u64) -> Vec<(usize, usize)> {
    let m_ba = avg_degree.div_ceil(2);
    let clique = (m_ba + 1).min(n_nodes);
    let mut rng = rng::seeded(seed);
    let mut edges = Vec::new();
    // One entry per edge endpoint; sampling from it is degree-proportional.
    let mut endpoints: Vec<usize> = Vec::new();
    for u in 0..clique {
        for v in (u + 1)..clique {
            edges.push((u, v));
            endpoints.push(u);
            endpoints.push(v);
        }
    }
    for v in clique..n_nodes {
        let mut targets: Vec<usize> = Vec::new();
        while targets.len() < m_ba {
            let pick = endpoints[rng.random_range(0..endpoints.len())];
            if !targets.contains(&pick) {
                targets.push(pick);
            }
        }
        targets.sort_unstable();
        for &u in &targets {
            edges.push((u, v));
            endpoints.push(u);
            endpoints.push(v);
        }
    }
    edges
}

/// Minimum vertex cover: `min sum x_v` with `x_u + x_v >= 1` per edge,
/// stored in `<=` form.
pub fn gen_mvc(n_nodes: usize, avg_degree: usize, seed: u64) -> Result<Ilp> {
    if avg_degree < 1 || n_nodes <= avg_degree {
        return Err(Error::InvalidArgument(
            "mvc needs n_nodes > avg_degree >= 1".into(),
        ));
    }
    let spec = GenSpec::Mvc {
        n_nodes,
        avg_degree,
        seed,
    };
    let edges = barabasi_albert(n_nodes, avg_degree, seed);
    let constraints = edges
        .iter()
        .map(|&(u, v)| Constraint::new(vec![(u, -1.0), (v, -1.0)], -1.0))
        .collect();
    let ilp = Ilp::new(spec.name(), vec![1.0; n_nodes], constraints, metadata(&spec))?;
    assert_feasible(&ilp, &Bits::ones(n_nodes), "mvc")?;
    Ok(ilp)
}

/// Maximum independent set: `min -sum x_v` with `x_u + x_v <= 1` per edge of
/// an Erdős–Rényi graph with edge probability `avg_degree / (n_nodes - 1)`.
pub fn gen_mis(n_nodes: usize, avg_degree: usize, seed: u64) -> Result<Ilp> {
    if avg_degree < 1 || n_nodes <= avg_degree {
        return Err(Error::InvalidArgument(
            "mis needs n_nodes > avg_degree >= 1".into(),
        ));
    }
    let spec = GenSpec::Mis {
        n_nodes,
        avg_degree,
        seed,
    };
    let p = avg_degree as f64 / (n_nodes - 1) as f64;
    let mut rng = rng::seeded(seed);
    let mut constraints = Vec::new();
    for u in 0..n_nodes {
        for v in (u + 1)..n_nodes {
            if rng.random_bool(p) {
                constraints.push(Constraint::new(vec![(u, 1.0), (v, 1.0)], 1.0));
            }
        }
    }
    let ilp = Ilp::new(
        spec.name(),
        vec![-1.0; n_nodes],
        constraints,
        metadata(&spec),
    )?;
    assert_feasible(&ilp, &Bits::zeros(n_nodes), "mis")?;
    Ok(ilp)
}

/// Set covering: each of the `n_cons` elements belongs to
/// `max(2, Binomial(n_vars, density))` distinct sets; `min sum x_s` with a
/// `>= 1` coverage row per element, stored in `<=` form.
pub fn gen_sc(n_vars: usize, n_cons: usize, density: f64, seed: u64) -> Result<Ilp> {
    if n_vars < 2 || n_cons < 1 {
        return Err(Error::InvalidArgument(
            "sc needs n_vars >= 2 and n_cons >= 1".into(),
        ));
    }
    if !(density > 0.0 && density < 1.0) {
        return Err(Error::InvalidArgument("sc density must be in (0, 1)".into()));
    }
    let spec = GenSpec::Sc {
        n_vars,
        n_cons,
        density,
        seed,
    };
    let mut rng = rng::seeded(seed);
    let binomial = Binomial::new(n_vars as u64, density)
        .map_err(|e| Error::InvalidArgument(format!("sc density: {e}")))?;
    let mut constraints = Vec::with_capacity(n_cons);
    for _ in 0..n_cons {
        let count = (binomial.sample(&mut rng) as usize).max(2);
        let members = sample_distinct(&mut rng, n_vars, count);
        let terms = members.iter().map(|&s| (s, -1.0)).collect();
        constraints.push(Constraint::new(terms, -1.0));
    }
    let ilp = Ilp::new(spec.name(), vec![1.0; n_vars], constraints, metadata(&spec))?;
    assert_feasible(&ilp, &Bits::ones(n_vars), "sc")?;
    Ok(ilp)
}

/// Combinatorial auction: each bid takes a bundle of
/// `max(1, Poisson(bundle_size_mean))` items and pays
/// `|bundle| * (1 + U(-price_noise, +price_noise))`; `min -sum p_i x_i` with
/// one conflict row `sum_{i: j in B_i} x_i <= 1` per item.
pub fn gen_ca(
    n_items: usize,
    n_bids: usize,
    seed: u64,
    bundle_size_mean: f64,
    price_noise: f64,
) -> Result<Ilp> {
    if n_items < 2 || n_bids < 1 {
        return Err(Error::InvalidArgument(
            "ca needs n_items >= 2 and n_bids >= 1".into(),
        ));
    }
    if !(bundle_size_mean > 0.0) {
        return Err(Error::InvalidArgument("ca bundle_size_mean must be > 0".into()));
    }
    if !(0.0..1.0).contains(&price_noise) {
        return Err(Error::InvalidArgument("ca price_noise must be in [0, 1)".into()));
    }
    let spec = GenSpec::Ca {
        n_items,
        n_bids,
        bundle_size_mean,
        price_noise,
        seed,
    };
    let mut rng = rng::seeded(seed);
    let poisson = Poisson::new(bundle_size_mean)
        .map_err(|e| Error::InvalidArgument(format!("ca bundle size: {e}")))?;
    let mut objective = Vec::with_capacity(n_bids);
    let mut item_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_items];
    for bid in 0..n_bids {
        let size = (poisson.sample(&mut rng) as usize).max(1).min(n_items);
        let bundle = sample_distinct(&mut rng, n_items, size);
        let noise = if price_noise > 0.0 {
            rng.random_range(-price_noise..price_noise)
        } else {
            0.0
        };
        let price = bundle.len() as f64 * (1.0 + noise);
        objective.push(-price);
        for &item in &bundle {
            item_rows[item].push((bid, 1.0));
        }
    }
    let constraints = item_rows
        .into_iter()
        .map(|terms| Constraint::new(terms, 1.0))
        .collect();
    let ilp = Ilp::new(spec.name(), objective, constraints, metadata(&spec))?;
    assert_feasible(&ilp, &Bits::zeros(n_bids), "ca")?;
    Ok(ilp)
}

/// Uniform sample of `count` distinct values from `0..n` via a partial
/// Fisher-Yates shuffle; the result is sorted.
fn sample_distinct(rng: &mut rng::Prng, n: usize, count: usize) -> Vec<usize> {
    debug_assert!(count <= n);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.random_range(i..n);
        pool.swap(i, j);
    }
    let mut chosen = pool[..count].to_vec();
    chosen.sort_unstable();
    chosen
}
