//! Shared fixtures for the criterion benches.

use std::collections::BTreeMap;

use koopman_clf::{
    build_b_exact, generate_snapshots, make_system, realify, BilinearModel, ControlAffineSystem, DriftBlock,
    KoopmanModel, MonomialDictionary, SamplingBox, SamplingMode, SnapshotDataset, SnapshotMap, SnapshotSpec,
    SystemKind,
};

pub fn pendulum() -> ControlAffineSystem {
    make_system(SystemKind::Pendulum, &BTreeMap::new()).unwrap()
}

pub fn pendulum_data(samples: usize) -> SnapshotDataset {
    let spec = SnapshotSpec {
        mode: SamplingMode::Scatter { samples },
        map: SnapshotMap::ExactFlow,
        dt: 0.01,
        seed: 1,
    };
    generate_snapshots(&pendulum(), &SamplingBox::symmetric(&[1.0, 1.0]).unwrap(), &spec).unwrap()
}

pub fn pendulum_model(degree: u32) -> BilinearModel {
    let system = pendulum();
    let dict = MonomialDictionary::new(2, degree).unwrap();
    let k = KoopmanModel::fit(&pendulum_data(20_000), &dict, 1e-10).unwrap();
    let basis = realify(&k.spectrum, &dict, 0.01, 1e-6).unwrap();
    let (b, r) = build_b_exact(&basis, system.input_field()).unwrap();
    BilinearModel::assemble(basis, DriftBlock::Continuous, b, r).unwrap()
}
