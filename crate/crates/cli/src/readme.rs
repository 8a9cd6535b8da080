use crate::config::Command;

const COMMON: &str = "\
- `config.toml`: the fully resolved configuration of this run. Running the
  same command with `--config config.toml` reproduces it.
- `README.md`: this file.
";

const BUNDLE: &str = "\
- `result.json`: the result bundle. Top level: `version`, `kind`
  (universal, pershape or generalization), `seed`, `model_sha256`,
  `class_names`, the shared `rho` (absent for per-shape runs),
  `success_rate`, the attack or synthesis settings, the joint optimizer
  `trace` (universal runs) and `shapes`. Each shape records its `id`, the
  `source` path inside the corpus, the `deformed` path inside this
  directory, labels before and after, `fooled`, `curvature_distortion`
  (null for point clouds), `l2_displacement`, `alignment_error`,
  `initial_alignment_error`, its `rho`, the spectra `sigma_original`,
  `sigma_target` = sigma_original * (1 + rho) and `sigma_deformed`, and the
  displacement coefficients `alpha` (b rows of x, y, z). Spectra exclude the
  zero eigenvalue.
- `shapes/`: deformed geometry as OFF, one file per shape, vertex order
  matching the original.
";

/// Layout notes for a run directory.
pub fn run_readme(command: Command) -> String {
    let (title, specific) = match command {
        Command::GenCorpus => (
            "Synthetic corpus",
            "\
- `manifest.csv`: one row per shape with `path`, `id`, `label`, `split`
  (train or test) and the shape's generation `seed`.
- `shapes/`: the shapes as OFF files.
- `spread.json`: within-class and between-class spectral spread measured at
  generation time.
",
        ),
        Command::Train => (
            "Classifier training",
            "\
- `train_report.json`: per-epoch loss and accuracy plus final train and
  test accuracy. The model itself is written to `paths.model`.
",
        ),
        Command::Attack => ("Universal attack", BUNDLE),
        Command::AttackPershape => ("Per-shape attack", BUNDLE),
        Command::Generalize => ("Transfer of a universal perturbation", BUNDLE),
        Command::Evaluate => (
            "Evaluation",
            "\
- `evaluation.json`: metrics recomputed from the stored geometry (`report`),
  the success rate recorded by the producing run and `flags_agree`, true
  when every recomputed fooled flag equals the stored one.
",
        ),
        Command::Export => (
            "Export",
            "\
CSV exports:

- `shapes.csv`: id, original_label, final_label, fooled,
  curvature_distortion, l2_displacement, alignment_error,
  initial_alignment_error.
- `spectra.csv`: id, mode, rho, sigma_original, sigma_target,
  sigma_deformed. `mode` counts nonzero eigenvalues from 1.
- `rho.csv`: mode, rho (shared perturbation only).

JSON exports write the same content to `export.json`.
",
        ),
    };
    format!("# {title}\n\nProduced by `spectral-adv {}`.\n\n{COMMON}{specific}", command.name())
}
