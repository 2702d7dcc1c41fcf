#[path = "support/program_machine.rs"]
mod program_machine;

use program_machine::ProgramMachine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbpm_core::compile::{link_bundle, SupervisorConfig};
use sbpm_testkit::interp::{alphabet, random_stimuli, GraphRunner, Machine, Stimulus};
use sbpm_testkit::{fixture, FIXTURES};

const SEQUENCES: u64 = 1000;

fn trace(m: &mut dyn Machine, stimuli: &[Stimulus]) -> Vec<String> {
    let mut out = vec![m.state_id()];
    for s in stimuli {
        m.feed(s);
        out.push(m.state_id());
    }
    out
}

#[test]
fn compiled_programs_follow_their_diagrams() {
    for name in FIXTURES {
        let model = fixture(name);
        let bundle = link_bundle(&model, &SupervisorConfig::default()).unwrap();
        for p in &bundle.programs {
            let graph = model.behavior(&p.subject).unwrap();
            let letters = alphabet(graph);
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let mut moved = 0usize;
            for _ in 0..SEQUENCES {
                let stimuli = random_stimuli(&letters, &mut rng, 24);
                let expected = trace(&mut GraphRunner::new(graph), &stimuli);
                let actual = trace(&mut ProgramMachine::new(&model, &bundle, &p.subject), &stimuli);
                assert_eq!(actual, expected, "{name}/{}: {stimuli:?}", p.subject);
                moved += expected.windows(2).filter(|w| w[0] != w[1]).count();
            }
            assert!(moved > 0, "{name}/{}: no stimulus ever moved the subject", p.subject);
        }
    }
}

#[test]
fn random_models_bisimulate() {
    for seed in 0..200 {
        let model = sbpm_testkit::generate::random_model(seed);
        let bundle = link_bundle(&model, &SupervisorConfig::default()).unwrap();
        for p in &bundle.programs {
            let graph = model.behavior(&p.subject).unwrap();
            let letters = alphabet(graph);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let stimuli = random_stimuli(&letters, &mut rng, 16);
                assert_eq!(
                    trace(&mut ProgramMachine::new(&model, &bundle, &p.subject), &stimuli),
                    trace(&mut GraphRunner::new(graph), &stimuli),
                    "seed {seed}/{}",
                    p.subject
                );
            }
        }
    }
}
