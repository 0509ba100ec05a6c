#include "repspk/cli.hpp"

#include <CLI11.hpp>

#include "repspk/commands.hpp"

namespace repspk {

int run_cli(const std::vector<std::string>& args, std::istream& in,
            std::ostream& out, std::ostream& err) {
  (void)in;
  CLI::App app{"Multi-branch speaker-embedding blocks with single-conv "
               "inference fusion"};
  app.require_subcommand(1);

  std::string precision = "single";
  app.add_option("--precision", precision, "Numeric precision for new models")
      ->check(CLI::IsMember({"single", "double"}))
      ->capture_default_str();

  BuildOptions build;
  auto* cmd_b = app.add_subcommand("build", "Build a train-state model");
  cmd_b->add_option("--arch", build.arch, "Architecture (a0, a1, a2, toy)")
      ->required();
  cmd_b->add_option("--variant", build.variant, "Block variant")->required();
  cmd_b->add_option("--seed", build.seed, "Weight seed")
      ->capture_default_str();
  cmd_b->add_option("--out", build.out_dir, "Output directory")->required();

  FuseOptions fuse;
  auto* cmd_f =
      app.add_subcommand("fuse", "Collapse every block into one convolution");
  cmd_f->add_option("--manifest", fuse.manifest, "Train-state manifest")
      ->required();
  cmd_f->add_option("--out", fuse.out_dir, "Output directory")->required();

  VerifyOptions verify;
  auto* cmd_v = app.add_subcommand(
      "verify", "Check train/fused equivalence on random inputs");
  cmd_v->add_option("--train", verify.train_manifest, "Train-state manifest")
      ->required();
  cmd_v->add_option("--fused", verify.fused_manifest, "Fused-state manifest")
      ->required();
  cmd_v->add_option("--trials", verify.trials, "Random utterances to test")
      ->capture_default_str();
  cmd_v->add_option("--tolerance", verify.tolerance,
                    "Max relative error (default 1e-4 single, 1e-9 double)");
  cmd_v->add_option("--seed", verify.seed, "Input seed")
      ->capture_default_str();

  BenchOptions bench;
  auto* cmd_n = app.add_subcommand(
      "bench", "Time both states and report analytic flops");
  cmd_n->add_option("--manifest", bench.manifest, "Train-state manifest")
      ->required();
  cmd_n->add_option("--frames", bench.frames, "Input frames")
      ->capture_default_str();
  cmd_n->add_option("--repeats", bench.repeats, "Timing repeats (median)")
      ->capture_default_str();

  EmbedOptions embed;
  auto* cmd_e = app.add_subcommand("embed", "Extract speaker embeddings");
  cmd_e->add_option("--manifest", embed.manifest, "Model manifest")
      ->required();
  cmd_e->add_option("--out", embed.out_path,
                    "Embedding table file (default: stdout)");
  cmd_e->add_option("features", embed.feature_files, "Feature files")
      ->required();

  ScoreOptions score;
  auto* cmd_s =
      app.add_subcommand("score", "Score trials and report EER / minDCF");
  cmd_s->add_option("--embeddings", score.embeddings_path,
                    "Embedding table from `embed`")
      ->required();
  cmd_s->add_option("--trials", score.trials_path,
                    "Trial list: label<TAB>enroll_id<TAB>test_id")
      ->required();
  cmd_s->add_option("--p-target", score.dcf.p_target, "DCF target prior")
      ->capture_default_str();
  cmd_s->add_option("--c-fa", score.dcf.c_fa, "DCF false-accept cost")
      ->capture_default_str();
  cmd_s->add_option("--c-miss", score.dcf.c_miss, "DCF miss cost")
      ->capture_default_str();
  cmd_s->add_option("--scores-out", score.scores_out,
                    "Also write a score<TAB>label file");
  cmd_s->add_flag("--verbose", score.verbose, "Also print the raw DCF");

  BranchSimOptions branch_sim;
  auto* cmd_bs = app.add_subcommand(
      "branch-sim", "Cosine similarity of branch outputs per block");
  cmd_bs->add_option("--manifest", branch_sim.manifest,
                     "Train-state manifest")
      ->required();
  cmd_bs->add_option("--features", branch_sim.feature_file, "Feature file")
      ->required();

  SynthFeatOptions synth;
  auto* cmd_sf = app.add_subcommand(
      "synth-feat", "Write a deterministic synthetic feature file");
  cmd_sf->add_option("--out", synth.out_path, "Output feature file")
      ->required();
  cmd_sf->add_option("--frames", synth.frames, "Frame count")
      ->capture_default_str();
  cmd_sf->add_option("--freq-bins", synth.freq_bins, "Frequency bins")
      ->capture_default_str();
  cmd_sf->add_option("--seed", synth.seed, "Value seed")
      ->capture_default_str();

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("repspk");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  build.double_precision = precision == "double";
  if (cmd_b->parsed()) return cmd_build(build, out, err);
  if (cmd_f->parsed()) return cmd_fuse(fuse, out, err);
  if (cmd_v->parsed()) return cmd_verify(verify, out, err);
  if (cmd_n->parsed()) return cmd_bench(bench, out, err);
  if (cmd_e->parsed()) return cmd_embed(embed, out, err);
  if (cmd_s->parsed()) return cmd_score(score, out, err);
  if (cmd_bs->parsed()) return cmd_branch_sim(branch_sim, out, err);
  if (cmd_sf->parsed()) return cmd_synth_feat(synth, out, err);
  return kExitValidation;
}

}  // namespace repspk
