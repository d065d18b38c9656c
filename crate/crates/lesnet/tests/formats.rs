use std::path::Path;

use lesnet::formats::{Checkpoint, Dataset, PayloadKind, Snapshot};
use lesnet_core::basis::{CartesianMesh, NodalBasis};
use lesnet_core::field::SolutionField;
use lesnet_core::filter::ClosureSample;
use lesnet_core::gas::GasModel;
use lesnet_core::nn::{Arch, NetShape, Network};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1e3..1e3)).collect()
}

fn snapshot(rng: &mut ChaCha8Rng) -> Snapshot {
    let mesh = CartesianMesh::periodic_box(rng.gen_range(1..3)).unwrap();
    let basis = NodalBasis::new(rng.gen_range(1..4)).unwrap();
    let mut field = SolutionField::zeros(mesh, basis);
    field.data = noise(rng, field.data.len());
    field.time = rng.gen();
    let kind = if rng.gen() { PayloadKind::State } else { PayloadKind::Tendency };
    let gas = GasModel { mu0: rng.gen_range(0.0..1.0), ..GasModel::default() };
    Snapshot::from_field(&field, gas, rng.gen(), kind)
}

fn dataset(rng: &mut ChaCha8Rng) -> Dataset {
    let p = rng.gen_range(2..5);
    let samples = (0..rng.gen_range(0..6))
        .map(|_| ClosureSample {
            features: noise(rng, 6 * p * p * p),
            labels: noise(rng, 3 * p * p * p),
            run: rng.gen(),
            time: rng.gen(),
            element: rng.gen(),
        })
        .collect();
    Dataset { p, samples }
}

fn checkpoint(rng: &mut ChaCha8Rng) -> Checkpoint {
    let arch = [Arch::Rnn(0), Arch::Rnn(2), Arch::Mlp100][rng.gen_range(0..3)];
    let shape = NetShape::new(arch, rng.gen_range(1..4), rng.gen_range(1..4)).with_channels(rng.gen_range(1..7), rng.gen_range(1..4));
    let mut net = Network::build(shape, rng.gen()).unwrap();
    let n = net.num_params();
    net.params = noise(rng, n);
    net.adam.m = noise(rng, n);
    net.adam.v = noise(rng, n);
    net.adam.step = rng.gen();
    for bn in net.batch_norms_mut() {
        bn.running_mean = noise(rng, bn.channels);
        bn.running_var = noise(rng, bn.channels);
    }
    net.scaling.input = noise(rng, shape.in_channels);
    net.scaling.output = noise(rng, shape.out_channels);
    Checkpoint { network: net, config_echo: format!("seed = {}\narch = {}\n", rng.gen::<u32>(), arch), seed: rng.gen(), epochs_done: rng.gen() }
}

fn through_disk(dir: &Path, name: &str, bytes: &[u8]) -> Vec<u8> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).unwrap();
    std::fs::read(&path).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // write → read → write is the identity on bytes and on values for every format
    #[test]
    fn formats_round_trip_byte_identically(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = tempfile::tempdir().unwrap();

        let s = snapshot(&mut rng);
        let path = dir.path().join("a.dhit");
        s.write(&path).unwrap();
        let back = Snapshot::read(&path).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());

        let d = dataset(&mut rng);
        let bytes = through_disk(dir.path(), "a.ctrn", &d.to_bytes());
        let back = Dataset::from_bytes(&bytes, Path::new("a.ctrn")).unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(back.to_bytes(), bytes);

        let c = checkpoint(&mut rng);
        let path = dir.path().join("a.nnck");
        c.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
    }
}

#[test]
fn corrupted_payloads_are_rejected_with_the_path() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dir = tempfile::tempdir().unwrap();
    let d = dataset(&mut rng);
    let mut bytes = d.to_bytes();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    let path = dir.path().join("bad.ctrn");
    std::fs::write(&path, &bytes).unwrap();
    let msg = Dataset::read(&path).unwrap_err().to_string();
    assert!(msg.contains("bad.ctrn"), "{msg}");

    let mut bytes = checkpoint(&mut rng).to_bytes();
    bytes[0] = b'X';
    assert!(Checkpoint::from_bytes(&bytes, Path::new("x")).is_err());
    assert!(Snapshot::from_bytes(&bytes[..10], Path::new("x")).is_err());
}
