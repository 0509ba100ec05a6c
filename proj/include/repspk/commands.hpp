#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "repspk/metrics.hpp"

namespace repspk {

// Every command returns a process exit code: 0 success, 1 validation
// failure, 2 IO failure. Human-readable results go to out, errors to err.

struct BuildOptions {
  std::string arch;
  std::string variant;
  std::uint64_t seed = 1;
  std::string out_dir;
  bool double_precision = false;
};
int cmd_build(const BuildOptions& opts, std::ostream& out, std::ostream& err);

struct FuseOptions {
  std::string manifest;
  std::string out_dir;
};
int cmd_fuse(const FuseOptions& opts, std::ostream& out, std::ostream& err);

struct VerifyOptions {
  std::string train_manifest;
  std::string fused_manifest;
  int trials = 5;
  double tolerance = 0.0;  // <= 0 picks the precision default
  std::uint64_t seed = 17;
};
int cmd_verify(const VerifyOptions& opts, std::ostream& out,
               std::ostream& err);

struct BenchOptions {
  std::string manifest;
  int frames = 200;
  int repeats = 3;
};
int cmd_bench(const BenchOptions& opts, std::ostream& out, std::ostream& err);

struct EmbedOptions {
  std::string manifest;
  std::vector<std::string> feature_files;
  std::string out_path;  // empty writes the table to out
};
int cmd_embed(const EmbedOptions& opts, std::ostream& out, std::ostream& err);

struct ScoreOptions {
  std::string embeddings_path;
  std::string trials_path;
  DcfParams dcf;
  std::string scores_out;  // optional score-file dump
  bool verbose = false;
};
int cmd_score(const ScoreOptions& opts, std::ostream& out, std::ostream& err);

struct BranchSimOptions {
  std::string manifest;
  std::string feature_file;
};
int cmd_branch_sim(const BranchSimOptions& opts, std::ostream& out,
                   std::ostream& err);

struct SynthFeatOptions {
  std::string out_path;
  int frames = 200;
  int freq_bins = 81;
  std::uint64_t seed = 1;
};
int cmd_synth_feat(const SynthFeatOptions& opts, std::ostream& out,
                   std::ostream& err);

}  // namespace repspk
