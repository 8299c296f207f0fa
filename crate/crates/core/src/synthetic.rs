//! Planted community datasets for end-to-end checks.
//!
//! Users, items and bundles are split into communities. Users mostly consume
//! items and bundles of their own community, and every bundle is composed of
//! items from one community's pool. Some bundles of each community never
//! appear in training; users interact with them only in the held-out splits.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{EntitySpaces, GraphKind, SparseBipartiteGraph};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub communities: usize,
    pub users_per_community: usize,
    pub items_per_community: usize,
    pub warm_bundles_per_community: usize,
    /// Cold bundles per community; the first is a validation bundle, the rest test bundles.
    pub cold_bundles_per_community: usize,
    pub items_per_bundle: usize,
    pub items_per_user: usize,
    pub warm_bundles_per_user: usize,
    /// Probability that a user's item or warm bundle comes from their own community.
    pub affinity: f64,
    /// Probability that a user's warm interaction is held out for warm testing.
    pub warm_test_rate: f64,
}

impl Default for PlantedSpec {
    /// 200 users, 300 items, 80 warm and 20 cold bundles in 5 communities.
    fn default() -> Self {
        PlantedSpec {
            communities: 5,
            users_per_community: 40,
            items_per_community: 60,
            warm_bundles_per_community: 16,
            cold_bundles_per_community: 4,
            items_per_bundle: 8,
            items_per_user: 12,
            warm_bundles_per_user: 5,
            affinity: 0.85,
            warm_test_rate: 0.2,
        }
    }
}

impl PlantedSpec {
    pub fn spaces(&self) -> Result<EntitySpaces> {
        let c = self.communities;
        EntitySpaces::new(
            c * self.users_per_community,
            c * (self.warm_bundles_per_community + self.cold_bundles_per_community),
            c * self.items_per_community,
        )
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("planted dataset: {m}")));
        if self.communities < 2 {
            return bad("need at least two communities");
        }
        if self.cold_bundles_per_community < 2 {
            return bad("need a validation and a test cold bundle per community");
        }
        if self.warm_bundles_per_community == 0 || self.users_per_community == 0 {
            return bad("empty community");
        }
        if self.items_per_bundle > self.items_per_community || self.items_per_user > self.items_per_community {
            return bad("more items requested than a community holds");
        }
        if self.warm_bundles_per_user > self.warm_bundles_per_community {
            return bad("more warm bundles per user than a community holds");
        }
        if !(0.0..=1.0).contains(&self.affinity) || !(0.0..1.0).contains(&self.warm_test_rate) {
            return bad("probabilities out of range");
        }
        Ok(())
    }
}

/// Community of a user, item or bundle id under [`planted_dataset`]'s layout.
pub fn community_of(id: usize, per_community: usize) -> usize {
    id / per_community
}

/// Generates a planted dataset. Bundle ids are laid out per community: warm
/// bundles first, then the validation cold bundle, then test cold bundles.
pub fn planted_dataset(spec: &PlantedSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let spaces = spec.spaces()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = spec.communities;
    let (upc, ipc) = (spec.users_per_community, spec.items_per_community);
    let (wpc, cpc) = (spec.warm_bundles_per_community, spec.cold_bundles_per_community);
    let bpc = wpc + cpc;

    // Picks an index from `own` with probability `affinity`, else from another community.
    let pick_community = |rng: &mut ChaCha8Rng, own: usize| {
        if rng.gen_bool(spec.affinity) {
            own
        } else {
            (own + rng.gen_range(1..c)) % c
        }
    };

    let mut bi = Vec::new();
    for b in 0..spaces.n_bundles {
        let com = b / bpc;
        for i in index::sample(&mut rng, ipc, spec.items_per_bundle) {
            bi.push((b as u32, (com * ipc + i) as u32));
        }
    }

    let mut ui = Vec::new();
    let mut user_items: Vec<Vec<u32>> = vec![Vec::new(); spaces.n_users];
    for u in 0..spaces.n_users {
        let own = u / upc;
        while user_items[u].len() < spec.items_per_user {
            let com = pick_community(&mut rng, own);
            let item = (com * ipc + rng.gen_range(0..ipc)) as u32;
            if !user_items[u].contains(&item) {
                user_items[u].push(item);
                ui.push((u as u32, item));
            }
        }
        user_items[u].sort_unstable();
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut valid = Vec::new();
    for u in 0..spaces.n_users {
        let own = u / upc;
        let mut chosen: Vec<usize> = Vec::new();
        while chosen.len() < spec.warm_bundles_per_user {
            let com = pick_community(&mut rng, own);
            let b = com * bpc + rng.gen_range(0..wpc);
            if !chosen.contains(&b) {
                chosen.push(b);
            }
        }
        for (n, &b) in chosen.iter().enumerate() {
            // keep at least one training interaction per user
            if n > 0 && rng.gen_bool(spec.warm_test_rate) {
                test.push((u as u32, b as u32));
            } else {
                train.push((u as u32, b as u32));
            }
        }
    }
    // every warm bundle keeps a training interaction
    for com in 0..c {
        for b in com * bpc..com * bpc + wpc {
            if !train.iter().any(|&(_, x)| x as usize == b) {
                let u = com * upc + rng.gen_range(0..upc);
                test.retain(|&e| e != (u as u32, b as u32));
                train.push((u as u32, b as u32));
            }
        }
    }

    // Cold interactions: each user adopts the own-community test cold bundle
    // sharing most items with their profile, sometimes a second one, and the
    // validation cold bundle with probability one half.
    let overlap = |u: usize, b: usize| {
        bi.iter()
            .filter(|&&(x, i)| x as usize == b && user_items[u].binary_search(&i).is_ok())
            .count()
    };
    for u in 0..spaces.n_users {
        let own = u / upc;
        let first_cold = own * bpc + wpc;
        let test_cold: Vec<usize> = (first_cold + 1..first_cold + cpc).collect();
        let mut ranked: Vec<(usize, usize, u32)> = test_cold
            .iter()
            .map(|&b| (overlap(u, b), b, rng.gen::<u32>()))
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.2.cmp(&b.2)));
        test.push((u as u32, ranked[0].1 as u32));
        if ranked.len() > 1 && rng.gen_bool(0.5) {
            let extra = ranked[1..].choose(&mut rng).expect("nonempty");
            test.push((u as u32, extra.1 as u32));
        }
        if rng.gen_bool(0.5) {
            valid.push((u as u32, first_cold as u32));
        }
    }

    let g = |kind, nl, nr, e: Vec<(u32, u32)>| SparseBipartiteGraph::from_pairs(kind, nl, nr, e);
    let (nu, nb, ni) = (spaces.n_users, spaces.n_bundles, spaces.n_items);
    Dataset::from_graphs(
        spaces,
        g(GraphKind::UserItem, nu, ni, ui)?,
        g(GraphKind::BundleItem, nb, ni, bi)?,
        g(GraphKind::UserBundle, nu, nb, train)?,
        g(GraphKind::UserBundle, nu, nb, valid)?,
        g(GraphKind::UserBundle, nu, nb, test)?,
    )
}
