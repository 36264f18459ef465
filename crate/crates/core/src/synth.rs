//! Synthetic classification task for controlled experiments.
//!
//! Inputs describe a piece of equipment running in `standard` or `inverted`
//! mode; the label is the equipment's hidden class, rotated one step when the
//! mode is inverted. The device-to-class mapping is learnable from data, the
//! mode flip adds a compositional wrinkle, and three surface templates keep
//! the inputs from being pure lookup keys.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::digest::derive_seed;
use crate::types::{TaskInstance, TaskKind};

/// The closed label set, in rotation order.
pub const LABELS: [&str; 3] = ["alpha", "beta", "gamma"];

const DEVICES: [&str; 12] = [
    "relay", "valve", "sensor", "dial", "coil", "lever", "piston", "gauge", "rotor", "switch",
    "fuse", "pump",
];

const TEMPLATES: usize = 3;

/// Probability that an instance runs in inverted mode.
const INVERTED_RATE: f64 = 1.0 / 3.0;

/// Ground-truth label for a device index and mode.
#[must_use]
pub fn rule_label(device_index: usize, inverted: bool) -> &'static str {
    let class = device_index % LABELS.len();
    let class = if inverted { (class + 1) % LABELS.len() } else { class };
    LABELS[class]
}

fn render_input(template: usize, device: &str, inverted: bool) -> String {
    let mode = if inverted { "inverted" } else { "standard" };
    match template % TEMPLATES {
        0 => format!("status report from the {device} unit in {mode} mode"),
        1 => format!("the {device} channel is running in {mode} mode today"),
        _ => format!("log entry: {device} assembly operating in {mode} mode"),
    }
}

/// Generate `n` labeled instances. The draw is fully determined by `seed`;
/// different seeds give disjoint id ranges so train and test sets built from
/// different seeds can be concatenated safely.
#[must_use]
pub fn synthetic_dataset(n: usize, seed: u64) -> Vec<TaskInstance> {
    let mut rng = ChaCha8Rng::from_seed(derive_seed("synth-data", &[], seed));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let device_index = rng.random_range(0..DEVICES.len());
        let inverted = rng.random::<f64>() < INVERTED_RATE;
        let template = rng.random_range(0..TEMPLATES);
        out.push(TaskInstance {
            id: format!("syn-{seed}-{i:04}"),
            task: TaskKind::Synthetic,
            input_text: render_input(template, DEVICES[device_index], inverted),
            human_label: Some(rule_label(device_index, inverted).to_string()),
            choices: None,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_dataset;
    use alloc::collections::BTreeSet;

    #[test]
    fn generation_is_deterministic_and_valid() {
        let a = synthetic_dataset(50, 7);
        let b = synthetic_dataset(50, 7);
        assert_eq!(a, b);
        validate_dataset(&a).unwrap();
        assert!(a.iter().all(|i| i.human_label.is_some()));
    }

    #[test]
    fn different_seeds_do_not_collide() {
        let a = synthetic_dataset(30, 1);
        let b = synthetic_dataset(30, 2);
        let ids: BTreeSet<_> = a.iter().chain(b.iter()).map(|i| i.id.clone()).collect();
        assert_eq!(ids.len(), 60);
        assert_ne!(a[0].input_text, b[0].input_text);
    }

    #[test]
    fn labels_follow_the_rotation_rule() {
        assert_eq!(rule_label(0, false), "alpha");
        assert_eq!(rule_label(0, true), "beta");
        assert_eq!(rule_label(2, false), "gamma");
        assert_eq!(rule_label(2, true), "alpha");
        assert_eq!(rule_label(3, false), "alpha");
        for inst in synthetic_dataset(100, 3) {
            let label = inst.human_label.as_deref().unwrap();
            assert!(LABELS.contains(&label));
            let inverted = inst.input_text.contains("inverted");
            let device = DEVICES
                .iter()
                .position(|d| inst.input_text.contains(d))
                .expect("input names a device");
            assert_eq!(label, rule_label(device, inverted));
        }
    }

    #[test]
    fn all_classes_and_modes_appear() {
        let data = synthetic_dataset(300, 11);
        let labels: BTreeSet<_> =
            data.iter().map(|i| i.human_label.clone().unwrap()).collect();
        assert_eq!(labels.len(), LABELS.len());
        let inverted = data.iter().filter(|i| i.input_text.contains("inverted")).count();
        // Loose band around the 1/3 inversion rate.
        assert!(inverted > 60 && inverted < 140, "inverted count {inverted}");
    }
}
