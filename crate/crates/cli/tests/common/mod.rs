//! Shared fixture: a deliberately tiny experiment (16x16 images, two conv
//! stages, three families, two epochs) that runs in seconds.

#![allow(dead_code)]

pub const TINY_TOML: &str = r#"
[backbone]
input_channels = 1
input_hw = 16
convs = [[4, 3, 2], [8, 3, 2]]
hidden = 8

[meta]
task_rate = 1e-3
meta_rate = 0.5
epochs = 2
tasks_per_batch = 2
adapt_steps = 1

[taskgen]
families = ["gaussian-noise", "gaussian-blur", "brighten"]
bases_per_family = 4
severity_levels = 3
resolution = [16, 16]

[finetune]
steps = 2
rate = 1e-3

[run]
seeds = [0, 1]

[sweep]
k_values = [2, 5]
s_values = [1]
held_out = "gaussian-blur"
"#;

pub const TINY_FAMILIES: [&str; 3] = ["gaussian-noise", "gaussian-blur", "brighten"];
