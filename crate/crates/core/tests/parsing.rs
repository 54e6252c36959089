use proptest::prelude::*;
use vcnn::io::{encode_idx, encode_pgm, parse_idx, parse_pgm, IdxArray, ModelFile};
use vcnn::network::{Network, NetworkSpec};
use vcnn::tensor::{Dims, Tensor};
use vcnn::Error;

fn is_parse<T>(r: vcnn::Result<T>) -> bool {
    matches!(r, Err(Error::Parse { .. }))
}

fn sample_idx() -> Vec<u8> {
    encode_idx(&IdxArray {
        dims: vec![3, 4, 5],
        data: (0..60).map(|i| i as u8).collect(),
    })
    .unwrap()
}

fn sample_pgm() -> Vec<u8> {
    encode_pgm(&Tensor::from_fn(Dims::new(4, 6, 1, 1), |i| i as f64 / 23.0)).unwrap()
}

#[test]
fn idx_errors_carry_offsets() {
    let bytes = sample_idx();
    match parse_idx(&bytes[..bytes.len() - 7]) {
        Err(Error::Parse { offset, msg, .. }) => {
            assert_eq!(offset, bytes.len() - 7);
            assert!(msg.contains("expected 60") && msg.contains("found 53"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
    let mut bad = bytes.clone();
    bad[3] = 0x02;
    assert!(matches!(parse_idx(&bad), Err(Error::Parse { offset: 0, .. })));
}

#[test]
fn idx_with_zero_items_is_empty() {
    let arr = parse_idx(&encode_idx(&IdxArray { dims: vec![0, 28, 28], data: vec![] }).unwrap()).unwrap();
    assert_eq!(arr.dims, vec![0, 28, 28]);
    assert!(arr.data.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn mutated_idx_header_is_rejected(pos in 0usize..16, xor in 1u8..=255) {
        let mut b = sample_idx();
        b[pos] ^= xor;
        prop_assert!(is_parse(parse_idx(&b)));
    }

    #[test]
    fn truncated_or_extended_idx_is_rejected(cut in 0usize..76, extra in 1usize..4) {
        let b = sample_idx();
        prop_assert!(is_parse(parse_idx(&b[..cut])));
        let mut long = b.clone();
        long.extend(std::iter::repeat_n(0u8, extra));
        prop_assert!(is_parse(parse_idx(&long)));
    }

    #[test]
    fn mutated_pgm_header_never_panics(pos in 0usize..11, byte in any::<u8>()) {
        let mut b = sample_pgm();
        b[pos] = byte;
        match parse_pgm::<f32>(&b) {
            Ok(t) => prop_assert_eq!(t.len(), b.len() - 11),
            Err(e) => prop_assert!(is_parse::<()>(Err(e))),
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = parse_idx(&bytes);
        let _ = parse_pgm::<f64>(&bytes);
        let _ = ModelFile::decode(&bytes);
    }

    #[test]
    fn model_with_repaired_checksum_never_panics(pos in 4usize..200, xor in 1u8..=255) {
        let net = Network::<f32>::build(&NetworkSpec::denoise(16, 16)).unwrap();
        let mut b = ModelFile::from_network(&net).encode().unwrap();
        let n = b.len() - 4;
        let pos = pos.min(n - 1);
        b[pos] ^= xor;
        let crc = crc32fast::hash(&b[..n]);
        b[n..].copy_from_slice(&crc.to_le_bytes());
        if let Ok(m) = ModelFile::decode(&b) {
            let _ = m.to_network::<f32>();
        }
    }
}
