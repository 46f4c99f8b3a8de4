use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vesselunits::spectral::AffinityMatrix;

/// Random symmetric affinity made of `sizes.len()` internally connected
/// blocks, with rows shuffled.
pub fn block_affinity(rng: &mut ChaCha8Rng, sizes: &[usize]) -> AffinityMatrix {
    let n: usize = sizes.iter().sum();
    let mut block = Vec::with_capacity(n);
    for (b, &s) in sizes.iter().enumerate() {
        block.extend(std::iter::repeat_n(b, s));
    }
    block.shuffle(rng);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if block[i] == block[j] && rng.random_bool(0.6) {
                let w = rng.random_range(0.05..1.0);
                a[i * n + j] = w;
                a[j * n + i] = w;
            }
        }
    }
    // A chain through each block keeps it connected whatever the draws.
    for b in 0..sizes.len() {
        let members: Vec<usize> = (0..n).filter(|&i| block[i] == b).collect();
        for w in members.windows(2) {
            let v = rng.random_range(0.05..1.0);
            a[w[0] * n + w[1]] = v;
            a[w[1] * n + w[0]] = v;
        }
    }
    for i in 0..n {
        let m = (0..n).map(|j| a[i * n + j]).fold(0.0, f64::max);
        a[i * n + i] = m;
    }
    AffinityMatrix::from_dense(n, a).unwrap()
}

/// Component id per node, numbered by first occurrence.
pub fn components(a: &AffinityMatrix) -> Vec<usize> {
    let n = a.n();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = next;
        let mut queue = VecDeque::from([s]);
        while let Some(i) = queue.pop_front() {
            for j in 0..n {
                if a.get(i, j) > 0.0 && comp[j] == usize::MAX {
                    comp[j] = next;
                    queue.push_back(j);
                }
            }
        }
        next += 1;
    }
    comp
}
