//! Index-set bookkeeping shared by the exterior algebra and the element tables.

/// Binomial coefficient `C(n, k)`, zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1usize;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Sign `(-1)^inv` of the permutation that sorts `seq`, or 0 if it has repeats.
pub fn permutation_sign(seq: &[usize]) -> i32 {
    let mut inversions = 0usize;
    for a in 0..seq.len() {
        for b in (a + 1)..seq.len() {
            if seq[a] == seq[b] {
                return 0;
            }
            if seq[a] > seq[b] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1
    } else {
        -1
    }
}

/// All strictly increasing sequences of length `k` drawn from `0..n`, in lexicographic order.
pub fn increasing_sequences(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(binomial(n, k));
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Lexicographic rank of a strictly increasing sequence among those of the same length in `0..n`.
pub fn sequence_rank(n: usize, seq: &[usize]) -> usize {
    let k = seq.len();
    let mut rank = 0;
    let mut prev = 0;
    for (pos, &s) in seq.iter().enumerate() {
        for skipped in prev..s {
            rank += binomial(n - skipped - 1, k - pos - 1);
        }
        prev = s + 1;
    }
    rank
}

/// Multi-indices `alpha` of length `len` with `|alpha| == total`, in a fixed deterministic order.
pub fn multi_indices(len: usize, total: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    let mut cur = vec![0u8; len];
    fn rec(pos: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if pos + 1 == cur.len() {
            cur[pos] = left as u8;
            out.push(cur.clone());
            return;
        }
        for v in (0..=left).rev() {
            cur[pos] = v as u8;
            rec(pos + 1, left - v, cur, out);
        }
    }
    if len == 0 {
        if total == 0 {
            out.push(Vec::new());
        }
        return out;
    }
    rec(0, total, &mut cur, &mut out);
    out
}
