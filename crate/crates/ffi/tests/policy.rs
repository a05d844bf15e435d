//! The C surface against a real trained artifact: load a checkpoint through
//! the config, select actions, and check the generated header parses as C.

use std::ffi::CString;

use arsq_core::config::TrainConfig;
use arsq_core::envs::{generate_demos, make_env, DemoKind};
use arsq_core::replay::write_dataset;
use arsq_core::trainer::train;
use arsq_ffi::{
    arsq_policy_action_dims, arsq_policy_free, arsq_policy_load, arsq_policy_obs_width,
    arsq_policy_select, ArsqPolicy, ArsqStatus,
};

fn tiny_run(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut env = make_env("point-mass").unwrap();
    let mut cfg = TrainConfig::default();
    cfg.backbone_widths = vec![12];
    cfg.batch_size = 8;
    cfg.total_env_steps = 60;
    cfg.eval_every = 60;
    cfg.eval_episodes = 1;
    let spec = env.spec().action_spec(cfg.bins_per_level, cfg.levels).unwrap();
    let demos = generate_demos(env.as_mut(), &spec, DemoKind::Medium, 3, 5).unwrap();
    let demo_path = dir.join("demos.jsonl");
    write_dataset(&demo_path, &demos).unwrap();
    cfg.offline_data = Some(demo_path);
    let run = dir.join("run");
    let out = train(&cfg, &run).unwrap();
    (run.join("config_resolved.txt"), out.checkpoint_path)
}

#[test]
fn load_and_select_through_the_c_abi() {
    let dir = tempfile::tempdir().unwrap();
    let (config, checkpoint) = tiny_run(dir.path());
    let config_c = CString::new(config.to_str().unwrap()).unwrap();
    let checkpoint_c = CString::new(checkpoint.to_str().unwrap()).unwrap();
    unsafe {
        let mut policy: *mut ArsqPolicy = std::ptr::null_mut();
        let status = arsq_policy_load(config_c.as_ptr(), checkpoint_c.as_ptr(), 7, &mut policy);
        assert_eq!(status, ArsqStatus::Ok);
        assert_eq!(arsq_policy_obs_width(policy), 4);
        assert_eq!(arsq_policy_action_dims(policy), 2);

        let obs = [0.1, -0.2, 0.5, 0.5];
        let mut action = [0.0f64; 2];
        // greedy selection is deterministic
        assert_eq!(
            arsq_policy_select(policy, obs.as_ptr(), 4, true, action.as_mut_ptr(), 2),
            ArsqStatus::Ok
        );
        let first = action;
        assert_eq!(
            arsq_policy_select(policy, obs.as_ptr(), 4, true, action.as_mut_ptr(), 2),
            ArsqStatus::Ok
        );
        assert_eq!(first, action);
        assert!(action.iter().all(|a| (-1.0..=1.0).contains(a)));

        // sampling works and respects bounds
        assert_eq!(
            arsq_policy_select(policy, obs.as_ptr(), 4, false, action.as_mut_ptr(), 2),
            ArsqStatus::Ok
        );
        assert!(action.iter().all(|a| (-1.0..=1.0).contains(a)));

        // wrong observation width fails cleanly
        assert_eq!(
            arsq_policy_select(policy, obs.as_ptr(), 3, true, action.as_mut_ptr(), 2),
            ArsqStatus::InvalidArgument
        );
        arsq_policy_free(policy);
    }
}

#[test]
fn generated_header_is_valid_c() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/arsq.h");
    assert!(header.exists(), "header not generated");
    let gcc = std::process::Command::new("gcc")
        .args(["-fsyntax-only", "-x", "c", "-std=c11"])
        .arg(&header)
        .output();
    match gcc {
        Ok(out) => assert!(
            out.status.success(),
            "header failed C syntax check: {}",
            String::from_utf8_lossy(&out.stderr)
        ),
        Err(_) => eprintln!("gcc unavailable; skipping header syntax check"),
    }
}
