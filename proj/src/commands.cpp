#include "repspk/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "repspk/cli.hpp"
#include "repspk/network.hpp"
#include "repspk/reparam.hpp"
#include "repspk/serialize.hpp"

namespace repspk {

namespace {

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create directory " + dir + ": " + ec.message());
  }
}

std::string file_id(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

// Deterministic feature values, uniform on [-1, 1).
template <typename T>
Tensor<T> random_features(std::int64_t freq_bins, std::int64_t frames,
                          InitPolicy& rng) {
  Tensor<T> x(1, 1, freq_bins, frames);
  for (auto& v : x.data) v = static_cast<T>(2.0 * rng.uniform() - 1.0);
  return x;
}

double default_tolerance(const std::string& precision) {
  return precision == "double" ? 1e-9 : 1e-4;
}

template <typename Fn>
int with_precision(const std::string& precision, Fn&& fn) {
  if (precision == "double") return fn(double{});
  return fn(float{});
}

struct FlopTotals {
  std::int64_t train = 0;
  std::int64_t fused = 0;
};

// Walks the input shape through the model once, accumulating analytic flop
// counts for both states.
template <typename T>
FlopTotals analytic_flops(const ModelSpec<T>& train_model,
                          const ModelSpec<T>& fused_model, Shape4 shape) {
  FlopTotals totals;
  for (std::size_t i = 0; i < train_model.blocks.size(); ++i) {
    totals.train += count_flops(train_model.blocks[i], shape);
    totals.fused += count_flops(fused_model.fused[i], shape);
    shape = conv_output_shape(shape, fused_model.fused[i]);
  }
  return totals;
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  if (n % 2 == 1) return xs[n / 2];
  return 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

}  // namespace

int cmd_build(const BuildOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Arch arch = parse_arch(opts.arch);
    const BlockVariant variant = parse_variant(opts.variant);
    ensure_dir(opts.out_dir);
    const std::string precision = opts.double_precision ? "double" : "single";
    return with_precision(precision, [&](auto tag) {
      using T = decltype(tag);
      ModelSpec<T> model = build_model<T>(arch, variant, opts.seed);
      save_model(opts.out_dir, model);
      out << "arch: " << opts.arch << "  variant: " << opts.variant
          << "  precision: " << precision << "  seed: " << opts.seed << "\n";
      out << "blocks: " << model.block_count()
          << "  parameters: " << parameter_count(model) << "\n";
      out << "wrote " << manifest_path_in(opts.out_dir) << "\n";
      return kExitOk;
    });
  });
}

int cmd_fuse(const FuseOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ModelManifest manifest = read_manifest(opts.manifest);
    if (manifest.state != "train") {
      throw ValueError("fuse: input model is already fused");
    }
    ensure_dir(opts.out_dir);
    return with_precision(manifest.precision, [&](auto tag) {
      using T = decltype(tag);
      ModelSpec<T> model = load_model<T>(manifest, opts.manifest);
      const std::int64_t train_params = parameter_count(model);
      ModelSpec<T> fused = fuse_model(model);
      const std::int64_t fused_params = parameter_count(fused);
      save_model(opts.out_dir, fused, train_params);
      out << "blocks fused: " << fused.block_count() << "\n";
      out << "parameters: " << train_params << " -> " << fused_params << "\n";
      out << "wrote " << manifest_path_in(opts.out_dir) << "\n";
      return kExitOk;
    });
  });
}

int cmd_verify(const VerifyOptions& opts, std::ostream& out,
               std::ostream& err) {
  return guarded(err, [&] {
    if (opts.trials < 1) {
      throw ValueError("verify: need at least 1 trial, got " +
                       std::to_string(opts.trials));
    }
    const ModelManifest train_m = read_manifest(opts.train_manifest);
    const ModelManifest fused_m = read_manifest(opts.fused_manifest);
    if (train_m.state != "train" || fused_m.state != "fused") {
      throw ValueError("verify: expected a train manifest then a fused one, "
                       "got " + train_m.state + " and " + fused_m.state);
    }
    if (train_m.arch != fused_m.arch || train_m.variant != fused_m.variant ||
        train_m.precision != fused_m.precision) {
      throw ValueError("verify: architecture mismatch: " + train_m.arch + "/" +
                       train_m.variant + "/" + train_m.precision + " vs " +
                       fused_m.arch + "/" + fused_m.variant + "/" +
                       fused_m.precision);
    }
    const double tol = opts.tolerance > 0.0
                           ? opts.tolerance
                           : default_tolerance(train_m.precision);
    return with_precision(train_m.precision, [&](auto tag) {
      using T = decltype(tag);
      const ModelSpec<T> train_model =
          load_model<T>(train_m, opts.train_manifest);
      const ModelSpec<T> fused_model =
          load_model<T>(fused_m, opts.fused_manifest);
      const std::size_t n_blocks = train_model.blocks.size();
      if (fused_model.fused.size() != n_blocks) {
        throw ValueError("verify: block count mismatch");
      }

      InitPolicy rng(opts.seed);
      std::vector<double> block_err(n_blocks, 0.0);
      double end_to_end = 0.0;
      for (int trial = 0; trial < opts.trials; ++trial) {
        const std::int64_t frames =
            16 + static_cast<std::int64_t>(rng.engine()() % 49);
        Tensor<T> x = random_features<T>(train_model.config.input_freq_bins,
                                         frames, rng);
        const auto e_train = embed(train_model, x);
        const auto e_fused = embed(fused_model, x);
        end_to_end = std::max(end_to_end, rel_linf(e_train[0], e_fused[0]));

        for (std::size_t i = 0; i < n_blocks; ++i) {
          const Tensor<T> t_out = forward_train(train_model.blocks[i], x);
          const Tensor<T> f_out =
              forward_inference(fused_model.fused[i], x);
          block_err[i] =
              std::max(block_err[i], rel_linf(t_out.data, f_out.data));
          x = t_out;
        }
      }

      bool pass = end_to_end <= tol;
      out << std::scientific << std::setprecision(3);
      for (std::size_t i = 0; i < n_blocks; ++i) {
        out << "block " << i << ": max rel error " << block_err[i] << "\n";
        pass = pass && block_err[i] <= tol;
      }
      out << "end-to-end embedding: max rel error " << end_to_end << "\n";
      out << (pass ? "PASS" : "FAIL") << " (tolerance " << tol << ", "
          << opts.trials << " trials)\n";
      return pass ? kExitOk : kExitValidation;
    });
  });
}

int cmd_bench(const BenchOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.frames < 8 || opts.repeats < 1) {
      throw ValueError("bench: need frames >= 8 and repeats >= 1");
    }
    const ModelManifest manifest = read_manifest(opts.manifest);
    if (manifest.state != "train") {
      throw ValueError("bench: needs a train-state manifest to compare both "
                       "states");
    }
    return with_precision(manifest.precision, [&](auto tag) {
      using T = decltype(tag);
      const ModelSpec<T> train_model = load_model<T>(manifest, opts.manifest);
      const ModelSpec<T> fused_model = fuse_model(train_model);

      InitPolicy rng(2024);
      const Tensor<T> x = random_features<T>(
          train_model.config.input_freq_bins, opts.frames, rng);

      const FlopTotals flops =
          analytic_flops(train_model, fused_model, x.shape);

      auto time_forward = [&](const ModelSpec<T>& model) {
        std::vector<double> ms;
        ms.reserve(static_cast<std::size_t>(opts.repeats));
        for (int r = 0; r < opts.repeats; ++r) {
          const auto t0 = std::chrono::steady_clock::now();
          const Tensor<T> y = forward_backbone(model, x);
          const auto t1 = std::chrono::steady_clock::now();
          if (!y.all_finite()) throw ValueError("bench: non-finite output");
          ms.push_back(
              std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        return median(std::move(ms));
      };
      const double train_ms = time_forward(train_model);
      const double fused_ms = time_forward(fused_model);

      const double ratio =
          static_cast<double>(flops.fused) / static_cast<double>(flops.train);
      out << "input: " << opts.frames << " frames, "
          << train_model.config.input_freq_bins << " bins\n";
      out << "train: " << flops.train << " flops, median "
          << std::fixed << std::setprecision(3) << train_ms << " ms\n";
      out << "fused: " << flops.fused << " flops, median " << fused_ms
          << " ms\n";
      out << std::defaultfloat << std::setprecision(6);

      nlohmann::json j;
      j["train_flops"] = flops.train;
      j["fused_flops"] = flops.fused;
      j["flop_ratio"] = ratio;
      j["train_ms_median"] = train_ms;
      j["fused_ms_median"] = fused_ms;
      j["repeats"] = opts.repeats;
      out << j.dump() << "\n";
      return kExitOk;
    });
  });
}

int cmd_embed(const EmbedOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (opts.feature_files.empty()) {
      throw ValueError("embed: no feature files given");
    }
    const ModelManifest manifest = read_manifest(opts.manifest);
    return with_precision(manifest.precision, [&](auto tag) {
      using T = decltype(tag);
      const ModelSpec<T> model = load_model<T>(manifest, opts.manifest);

      std::ostringstream table;
      table << std::setprecision(9);
      for (const std::string& file : opts.feature_files) {
        const FeatureMatrix feat = read_feature_file(file);
        if (feat.freq_bins != model.config.input_freq_bins) {
          throw ValueError(file + ": has " + std::to_string(feat.freq_bins) +
                           " frequency bins, model expects " +
                           std::to_string(model.config.input_freq_bins));
        }
        if (feat.frames < 8) {
          throw ValueError(file + ": has " + std::to_string(feat.frames) +
                           " frames, need at least 8");
        }
        const auto e = embed(model, feature_tensor<T>(feat));
        table << file_id(file);
        for (const T v : e[0]) table << " " << static_cast<double>(v);
        table << "\n";
      }

      if (opts.out_path.empty()) {
        out << table.str();
      } else {
        std::ofstream f(opts.out_path, std::ios::trunc);
        if (!f) throw IoError("cannot open " + opts.out_path + " for writing");
        f << table.str();
        if (!f.good()) throw IoError("cannot write " + opts.out_path);
        out << "wrote " << opts.feature_files.size() << " embeddings to "
            << opts.out_path << "\n";
      }
      return kExitOk;
    });
  });
}

namespace {

std::map<std::string, std::vector<double>> read_embedding_table(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::map<std::string, std::vector<double>> table;
  std::string line;
  std::size_t lineno = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id;
    ls >> id;
    std::vector<double> values;
    double v = 0.0;
    while (ls >> v) values.push_back(v);
    if (id.empty() || values.empty()) {
      throw ValueError(path + ":" + std::to_string(lineno) +
                       ": expected `id v1 v2 ...`");
    }
    if (dim == 0) dim = values.size();
    if (values.size() != dim) {
      throw ValueError(path + ":" + std::to_string(lineno) +
                       ": embedding has " + std::to_string(values.size()) +
                       " values, others have " + std::to_string(dim));
    }
    if (!table.emplace(id, std::move(values)).second) {
      throw ValueError(path + ":" + std::to_string(lineno) + ": duplicate id '" +
                       id + "'");
    }
  }
  if (table.empty()) throw ValueError(path + ": no embeddings");
  return table;
}

struct TrialPair {
  bool target = false;
  std::string enroll;
  std::string test;
};

std::vector<TrialPair> read_trial_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<TrialPair> trials;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    int label = -1;
    TrialPair t;
    if (!(ls >> label >> t.enroll >> t.test) || (label != 0 && label != 1)) {
      throw ValueError(path + ":" + std::to_string(lineno) +
                       ": expected `label<TAB>enroll_id<TAB>test_id` with "
                       "label 0 or 1");
    }
    t.target = label == 1;
    trials.push_back(std::move(t));
  }
  if (trials.empty()) throw ValueError(path + ": no trials");
  return trials;
}

}  // namespace

int cmd_score(const ScoreOptions& opts, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto table = read_embedding_table(opts.embeddings_path);
    const auto pairs = read_trial_list(opts.trials_path);

    std::vector<ScoredTrial> trials;
    trials.reserve(pairs.size());
    std::size_t n_target = 0;
    out << std::setprecision(9);
    for (const auto& p : pairs) {
      const auto enroll = table.find(p.enroll);
      if (enroll == table.end()) {
        throw ValueError("unknown enroll id '" + p.enroll + "'");
      }
      const auto test = table.find(p.test);
      if (test == table.end()) {
        throw ValueError("unknown test id '" + p.test + "'");
      }
      ScoredTrial t;
      t.score = cosine_score(enroll->second, test->second);
      t.target = p.target;
      trials.push_back(t);
      n_target += p.target ? 1 : 0;
      out << p.enroll << "\t" << p.test << "\t" << t.score << "\t"
          << (p.target ? 1 : 0) << "\n";
    }

    if (!opts.scores_out.empty()) {
      std::ofstream f(opts.scores_out, std::ios::trunc);
      if (!f) {
        throw IoError("cannot open " + opts.scores_out + " for writing");
      }
      write_score_lines(f, trials);
      if (!f.good()) throw IoError("cannot write " + opts.scores_out);
    }

    const MetricResult eer = compute_eer(trials);
    const MetricResult dcf = compute_mindcf(trials, opts.dcf);
    out << "trials: " << trials.size() << " (" << n_target << " target, "
        << trials.size() - n_target << " nontarget)\n";
    out << std::fixed << std::setprecision(4);
    out << "EER: " << 100.0 * eer.value << "%  threshold "
        << std::defaultfloat << std::setprecision(9) << eer.threshold << "\n";
    out << std::fixed << std::setprecision(4);
    out << "minDCF (p_target=" << std::defaultfloat << opts.dcf.p_target
        << ", c_fa=" << opts.dcf.c_fa << ", c_miss=" << opts.dcf.c_miss
        << "): " << std::fixed << dcf.value << "  threshold "
        << std::defaultfloat << std::setprecision(9) << dcf.threshold << "\n";
    if (opts.verbose) {
      const double norm = std::min(opts.dcf.c_miss * opts.dcf.p_target,
                                   opts.dcf.c_fa * (1.0 - opts.dcf.p_target));
      out << "raw DCF: " << dcf.value * norm << "\n";
    }
    return kExitOk;
  });
}

int cmd_branch_sim(const BranchSimOptions& opts, std::ostream& out,
                   std::ostream& err) {
  return guarded(err, [&] {
    const ModelManifest manifest = read_manifest(opts.manifest);
    if (manifest.state != "train") {
      throw ValueError("branch-sim: needs a train-state manifest (fused "
                       "models have a single branch)");
    }
    const FeatureMatrix feat = read_feature_file(opts.feature_file);
    return with_precision(manifest.precision, [&](auto tag) {
      using T = decltype(tag);
      const ModelSpec<T> model = load_model<T>(manifest, opts.manifest);
      if (feat.freq_bins != model.config.input_freq_bins) {
        throw ValueError(opts.feature_file + ": has " +
                         std::to_string(feat.freq_bins) +
                         " frequency bins, model expects " +
                         std::to_string(model.config.input_freq_bins));
      }
      if (feat.frames < 8) {
        throw ValueError(opts.feature_file + ": has " +
                         std::to_string(feat.frames) +
                         " frames, need at least 8");
      }
      Tensor<T> x = feature_tensor<T>(feat);
      out << "block\tsimilarity\n" << std::setprecision(6);
      for (std::size_t i = 0; i < model.blocks.size(); ++i) {
        const auto sims = branch_similarity(model.blocks[i], x);
        out << i;
        for (const auto& s : sims) {
          if (s) {
            out << "\t" << *s;
          } else {
            out << "\tundef";
          }
        }
        out << "\n";
        x = forward_train(model.blocks[i], x);
      }
      return kExitOk;
    });
  });
}

int cmd_synth_feat(const SynthFeatOptions& opts, std::ostream& out,
                   std::ostream& err) {
  return guarded(err, [&] {
    if (opts.frames < 1 || opts.freq_bins < 1) {
      throw ValueError("synth-feat: frames and freq-bins must be >= 1");
    }
    FeatureMatrix feat;
    feat.frames = static_cast<std::uint32_t>(opts.frames);
    feat.freq_bins = static_cast<std::uint32_t>(opts.freq_bins);
    feat.data.resize(static_cast<std::size_t>(opts.frames) *
                     static_cast<std::size_t>(opts.freq_bins));
    InitPolicy rng(opts.seed);
    for (auto& v : feat.data) {
      v = static_cast<float>(2.0 * rng.uniform() - 1.0);
    }
    write_feature_file(opts.out_path, feat);
    out << "wrote " << opts.out_path << " (" << opts.frames << " frames x "
        << opts.freq_bins << " bins, seed " << opts.seed << ")\n";
    return kExitOk;
  });
}

}  // namespace repspk
