//! Receive-side scaling: flows are spread across rings by a hash that is
//! symmetric in the two endpoints.

use crate::packet::FlowId;

/// Ring for `fid`; both directions of a flow land on the same ring.
pub fn rss_select(fid: &FlowId, num_rings: usize) -> usize {
    assert!(num_rings >= 1);
    if num_rings == 1 {
        return 0;
    }
    let (c, _) = fid.canonical();
    // FNV-1a over the canonical 5-tuple, finished with a 64-bit mixer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in c.to_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    (h % num_rings as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_fid(rng: &mut impl Rng) -> FlowId {
        FlowId {
            src_ip: rng.random(),
            dst_ip: rng.random(),
            src_port: rng.random(),
            dst_port: rng.random(),
            proto: if rng.random() { 6 } else { 17 },
        }
    }

    #[test]
    fn single_ring() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(rss_select(&random_fid(&mut rng), 1), 0);
        }
    }

    #[test]
    fn balanced_over_four_rings() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[rss_select(&random_fid(&mut rng), 4)] += 1;
        }
        for c in counts {
            let share = c as f64 / 100_000.0;
            assert!((share - 0.25).abs() <= 0.03, "{counts:?}");
        }
    }

    proptest! {
        #[test]
        fn symmetric(a in any::<[u8; 4]>(), b in any::<[u8; 4]>(), p in any::<u16>(), q in any::<u16>(), n in 1usize..16) {
            let f = FlowId { src_ip: a, dst_ip: b, src_port: p, dst_port: q, proto: 6 };
            prop_assert_eq!(rss_select(&f, n), rss_select(&f.reversed(), n));
        }
    }
}
