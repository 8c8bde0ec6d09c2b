//! Property tests: view soundness along the hierarchy, the functional
//! encryption contract, and wire round trips over generated values.

use proptest::prelude::*;

use sightsteeple::crypto::{
    fe_decrypt, fe_encrypt, fe_keygen, FeAuthority, PlayerId,
};
use sightsteeple::views::{
    apply_view, derive_view, family_presets, Payload, Transaction, ViewFnId,
};
use sightsteeple::wire::Wire;
use sightsteeple::chain::{Verdict, Vote};
use sightsteeple::crypto::SigningKey;

const ACCOUNTS: [&str; 5] = ["alice", "bob", "carol", "dave", "erin"];

fn arb_tx(nonce: u64) -> impl Strategy<Value = Transaction> {
    (0..ACCOUNTS.len(), 0..ACCOUNTS.len(), 0u64..10_000).prop_map(move |(s, r, amount)| {
        Transaction {
            sender: ACCOUNTS[s].into(),
            receiver: ACCOUNTS[r].into(),
            amount,
            nonce,
        }
    })
}

fn arb_payload() -> impl Strategy<Value = Payload> {
    prop::collection::vec(any::<u8>(), 0..8).prop_flat_map(|lens| {
        let txs: Vec<_> = lens
            .iter()
            .enumerate()
            .map(|(i, _)| arb_tx(i as u64))
            .collect();
        txs.prop_map(|txs| Payload::new(txs).expect("distinct nonces"))
    })
}

proptest! {
    /// View soundness: for every comparable pair, the lower view is
    /// recomputable from the higher view through the declared edge
    /// derivations alone.
    #[test]
    fn lower_views_derive_from_higher_views(payload in arb_payload()) {
        let family = family_presets::family_with_decrement(&"alice".into());
        let ids: Vec<ViewFnId> = family.ids().cloned().collect();
        for hi in &ids {
            let hi_view = apply_view(&family, hi, &payload).unwrap();
            for lo in &ids {
                if family.leq(lo, hi).unwrap() {
                    let derived = derive_view(&family, hi, lo, &hi_view).unwrap();
                    let direct = apply_view(&family, lo, &payload).unwrap();
                    prop_assert_eq!(derived, direct, "{} from {}", lo, hi);
                }
            }
        }
    }

    /// FE correctness: decrypt(keygen(f), encrypt(txs)) equals apply(f, txs)
    /// for every registered function.
    #[test]
    fn fe_round_trip_equals_direct_view(payload in arb_payload(), epoch in 0u64..50) {
        let family = family_presets::default_family(&"alice".into());
        let mut authority = FeAuthority::from_seed(PlayerId(0), b"prop");
        let inst = authority.setup(epoch);
        let ct = fe_encrypt(&inst, &payload);
        for f in family.ids() {
            let key = fe_keygen(&inst, &family, f).unwrap();
            let got = fe_decrypt(&family, &key, &ct).unwrap();
            let expected = apply_view(&family, f, &payload).unwrap();
            prop_assert_eq!(got, expected);
        }
    }

    /// Canonical payload encoding round-trips.
    #[test]
    fn payload_wire_round_trip(payload in arb_payload()) {
        let bytes = payload.to_bytes();
        let back = Payload::from_bytes(&bytes).unwrap();
        prop_assert_eq!(payload, back);
    }

    /// Vote encodings round-trip for both variants.
    #[test]
    fn vote_wire_round_trip(
        voter in 0u32..16,
        epoch in 0u64..1000,
        yes in any::<bool>(),
        signed in any::<bool>(),
    ) {
        let digest = sightsteeple::crypto::hash(&epoch.to_be_bytes());
        let vote = if signed {
            let key = SigningKey::from_seed(PlayerId(voter), b"prop");
            Vote::rft(epoch, digest, if yes { Verdict::Yes } else { Verdict::No }, &key)
        } else {
            Vote::cft(PlayerId(voter), epoch, digest)
        };
        let back = Vote::from_bytes(&vote.to_bytes()).unwrap();
        prop_assert_eq!(vote, back);
    }

    /// Every prefix order of the registered family stays antisymmetric and
    /// transitive over arbitrary payload-independent queries (guards the
    /// reachability cache).
    #[test]
    fn partial_order_laws(seed in any::<u64>()) {
        let family = family_presets::default_family(&"alice".into());
        let ids: Vec<ViewFnId> = family.ids().cloned().collect();
        let a = &ids[(seed % ids.len() as u64) as usize];
        let b = &ids[((seed / 7) % ids.len() as u64) as usize];
        let c = &ids[((seed / 49) % ids.len() as u64) as usize];
        prop_assert!(family.leq(a, a).unwrap());
        if family.leq(a, b).unwrap() && family.leq(b, a).unwrap() {
            prop_assert_eq!(a, b);
        }
        if family.leq(a, b).unwrap() && family.leq(b, c).unwrap() {
            prop_assert!(family.leq(a, c).unwrap());
        }
    }
}
