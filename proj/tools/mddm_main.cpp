// Copyright 2026 The MDDM Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command line front end: train / sample / eval / ablate / data.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mddm/denoiser.hpp"
#include "mddm/errors.hpp"
#include "mddm/eval.hpp"
#include "mddm/pipeline.hpp"
#include "mddm/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("MDDM_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    throw mddm::ConfigError(std::string("MDDM_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw mddm::IoError("cannot write " + path.string());
  out << text;
  if (!out) throw mddm::IoError("failed writing " + path.string());
}

// Prepares OUT/<hash prefix>. An existing non-empty directory is an error
// unless we resume into it or --force is given.
fs::path prepare_run_dir(const fs::path& out, const std::string& hash, bool resume, bool force) {
  const fs::path dir = out / hash.substr(0, 16);
  if (fs::exists(dir) && !fs::is_empty(dir) && !resume) {
    if (!force) {
      throw mddm::ConfigError("run directory " + dir.string() +
                              " already exists for this config; pass --force to overwrite");
    }
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  return dir;
}

void run_train(const std::string& config_path, const std::string& out, const std::string& resume,
               bool force) {
  const mddm::RunConfig config = mddm::load_run_config(config_path);
  const std::string hash = mddm::config_hash(config);
  const fs::path dir = prepare_run_dir(out, hash, !resume.empty(), force);
  write_text(dir / "config.json", mddm::canonical_json(config) + "\n");

  auto initial_state = [&] {
    if (resume.empty()) return mddm::init_train_state(config.backbone, config.train.seed);
    auto loaded = mddm::load_checkpoint(resume);
    if (mddm::config_hash(loaded.config) != hash) {
      throw mddm::ConfigError("checkpoint " + resume + " was written for a different config");
    }
    return std::move(loaded.state);
  };
  mddm::TrainState state = initial_state();
  mddm::TrainOptions options;
  options.out_dir = dir.string();
  const int log_every = std::max(1, config.train.total_steps / 20);
  options.on_step = [&](std::int64_t step, const mddm::StepReport& r) {
    if ((step + 1) % log_every == 0) {
      std::cerr << "step " << step + 1 << " loss " << r.loss << " lr " << r.lr << "\n";
    }
  };
  mddm::run_training(state, config, options);
  std::cout << dir.string() << "\n";
}

std::vector<mddm::TokenId> read_condition(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mddm::IoError("cannot read condition file " + path);
  std::vector<mddm::TokenId> ids;
  std::string tok;
  while (in >> tok) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size()) throw std::invalid_argument(tok);
      ids.push_back(v);
    } catch (const std::exception&) {
      throw mddm::ConfigError("condition file " + path + ": '" + tok + "' is not a token id");
    }
  }
  return ids;
}

// Binary P5 image of the image-token grid, one gray level per codebook id,
// each cell drawn as a kCell x kCell block.
std::string render_pgm(std::span<const mddm::TokenId> image_ids, int k_img) {
  constexpr int kCell = 16;
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(image_ids.size()))));
  const int w = side * kCell;
  std::string data = "P5\n" + std::to_string(w) + " " + std::to_string(w) + "\n255\n";
  for (int y = 0; y < w; ++y) {
    for (int x = 0; x < w; ++x) {
      const int id = image_ids[(y / kCell) * side + x / kCell];
      const int gray = k_img > 1 ? (id * 255) / (k_img - 1) : 0;
      data.push_back(static_cast<char>(gray));
    }
  }
  return data;
}

void run_sample(const std::string& ckpt, const std::string& mode_name, int num, std::uint64_t seed,
                const std::string& condition_path, const std::string& out, int threads) {
  if (num < 1) throw mddm::ConfigError("--num must be positive");
  const bool needs_condition = mode_name != "joint";
  if (needs_condition && condition_path.empty()) {
    throw mddm::ConfigError("mode '" + mode_name + "' requires --condition");
  }
  if (!needs_condition && !condition_path.empty()) {
    throw mddm::ConfigError("mode 'joint' takes no --condition");
  }
  const auto mode = mddm::mode_from_name(
      mode_name, condition_path.empty() ? std::vector<mddm::TokenId>{} : read_condition(condition_path));
  const auto loaded = mddm::load_checkpoint(ckpt);
  const mddm::RunConfig& config = loaded.config;
  const mddm::World world(config.world_config(), config.train.seed);
  const mddm::JointVocabulary vocab = world.vocab();
  const mddm::SequenceLayout layout = world.layout();
  mddm::init_canvas(mode, vocab, layout);  // validates the condition before decoding

  const mddm::BackboneDenoiser<float> denoiser(loaded.state.params);
  const auto samples = mddm::generate(denoiser, mode, config.sampler, config.noise_schedule(), vocab,
                                      layout, num, seed, threads);
  fs::create_directories(out);
  for (int i = 0; i < num; ++i) {
    const auto pair = mddm::unpack(samples[i], vocab);
    std::ostringstream stem;
    stem << "pair_" << std::setw(6) << std::setfill('0') << i;
    write_text(fs::path(out) / (stem.str() + ".pgm"), render_pgm(pair.image, vocab.k_img()));
    std::ostringstream report;
    for (std::size_t j = 0; j < pair.report.size(); ++j) report << (j ? " " : "") << pair.report[j];
    report << "\n" << mddm::detokenize_report(pair.report) << "\n";
    write_text(fs::path(out) / (stem.str() + ".txt"), report.str());
  }
  json manifest = {{"seed", seed},
                   {"mode", mode_name},
                   {"num", num},
                   {"condition", mode.condition},
                   {"config_hash", mddm::config_hash(config)},
                   {"checkpoint_step", loaded.state.step}};
  write_text(fs::path(out) / "manifest.json", manifest.dump(2) + "\n");
}

std::string metric_mode(const std::string& metric) {
  if (metric.find("report_to_image") != std::string::npos) return "t2i";
  if (metric.find("image_to_report") != std::string::npos) return "i2t";
  if (metric.rfind("bleu", 0) == 0 || metric == "rouge_l") return "i2t";
  if (metric.find("prompt") != std::string::npos) return "prompted";
  if (metric == "tv_joint" || metric == "consistency_joint") return "joint";
  if (metric == "consistency_pairs") return "pairs";
  return "denoise";
}

void write_metrics(const fs::path& dir, const std::map<std::string, double>& metrics,
                   std::uint64_t seed, const json& extra) {
  fs::create_directories(dir);
  std::ostringstream csv;
  csv << "metric,mode,seed,value\n" << std::setprecision(10);
  for (const auto& [name, value] : metrics) {
    csv << name << ',' << metric_mode(name) << ',' << seed << ',' << value << '\n';
  }
  write_text(dir / "metrics.csv", csv.str());
  json summary = extra;
  summary["metrics"] = metrics;
  summary["seed"] = seed;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
}

void run_eval(const std::string& ckpt, const std::string& suite, const std::string& out,
              const std::string& pairs_path, int threads) {
  const auto suites = mddm::parse_suites(suite);
  const auto loaded = mddm::load_checkpoint(ckpt);
  const mddm::RunConfig& config = loaded.config;
  const mddm::BackboneDenoiser<float> denoiser(loaded.state.params);

  std::set<std::string> model_suites = suites;
  std::map<std::string, double> pair_metrics;
  if (!pairs_path.empty()) {
    // Externally supplied pairs replace generation for the consistency suite.
    const mddm::World world(config.world_config(), config.train.seed);
    std::vector<mddm::TokenSequence> pairs;
    for (auto& ids : mddm::read_token_records(pairs_path)) {
      if (ids.size() != static_cast<std::size_t>(world.layout().len_total())) {
        throw mddm::ConfigError("pairs file record has wrong length");
      }
      pairs.push_back({std::move(ids), world.layout()});
    }
    if (pairs.empty()) throw mddm::ConfigError("pairs file is empty");
    pair_metrics["consistency_pairs"] = mddm::consistency_rate(pairs, world);
    model_suites.erase("consistency");
  }
  mddm::EvalReport report;
  if (!model_suites.empty()) report = mddm::evaluate(denoiser, config, model_suites, threads);
  report.metrics.insert(pair_metrics.begin(), pair_metrics.end());
  json extra = {{"suites", suites},
                {"config_hash", mddm::config_hash(config)},
                {"checkpoint_step", loaded.state.step},
                {"conventions", report.conventions}};
  write_metrics(out, report.metrics, config.eval.seed, extra);
}

void run_ablate(const std::string& config_path, const std::string& grid, const std::string& out,
                int threads, bool force) {
  const mddm::RunConfig base = mddm::load_run_config(config_path);
  const auto variants = mddm::ablation_variants(base, grid);
  std::vector<std::map<std::string, double>> rows;
  for (const auto& v : variants) {
    const std::string hash = mddm::config_hash(v.config);
    const fs::path dir = prepare_run_dir(out, hash, false, force);
    write_text(dir / "config.json", mddm::canonical_json(v.config) + "\n");
    std::cerr << "training variant " << v.name << " in " << dir.string() << "\n";
    mddm::TrainOptions options;
    options.out_dir = dir.string();
    const auto state = mddm::train_model(v.config, options);
    const mddm::BackboneDenoiser<float> denoiser(state.params);
    auto report = mddm::evaluate(denoiser, v.config, mddm::kEvalSuites, threads);
    write_metrics(dir / "eval", report.metrics, v.config.eval.seed,
                  {{"variant", v.name}, {"config_hash", hash}, {"conventions", report.conventions}});
    rows.push_back(std::move(report.metrics));
  }
  std::ostringstream csv;
  csv << "variant";
  for (const auto& [name, _] : rows.front()) csv << ',' << name;
  csv << '\n' << std::setprecision(10);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv << variants[i].name;
    for (const auto& [_, value] : rows[i]) csv << ',' << value;
    csv << '\n';
  }
  fs::create_directories(out);
  write_text(fs::path(out) / "comparison.csv", csv.str());
  std::cout << (fs::path(out) / "comparison.csv").string() << "\n";
}

void run_data(const std::string& config_path, int num, std::uint64_t seed, const std::string& out) {
  if (num < 1) throw mddm::ConfigError("--num must be positive");
  const mddm::RunConfig config = config_path.empty() ? mddm::RunConfig{} : mddm::load_run_config(config_path);
  const mddm::World world(config.world_config(), config.train.seed);
  std::vector<std::vector<mddm::TokenId>> records;
  for (auto& seq : mddm::make_eval_set(world, num, seed)) records.push_back(std::move(seq.ids));
  mddm::write_token_records(out, records);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked discrete diffusion over joint report/image token sequences"};
  app.require_subcommand(1);
  int threads_flag = 0;
  app.add_option("--threads", threads_flag, "Worker threads (falls back to MDDM_THREADS, then 1)");

  std::string config_path, out, resume, ckpt, mode, condition, suite, pairs, grid;
  bool force = false;
  int num = 1;
  std::uint64_t seed = 0;

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", config_path, "Run config JSON")->required();
  train->add_option("--out", out, "Output root; the run lives in OUT/<config hash>")->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_flag("--force", force, "Overwrite an existing run directory");

  auto* sample = app.add_subcommand("sample", "Generate report/image pairs");
  sample->add_option("--ckpt", ckpt, "Checkpoint")->required();
  sample->add_option("--mode", mode, "Generation mode")
      ->required()
      ->check(CLI::IsMember({"joint", "t2i", "i2t", "prompted"}));
  sample->add_option("--num", num, "Number of pairs")->required();
  sample->add_option("--seed", seed, "Sampling seed")->required();
  sample->add_option("--condition", condition, "File of space-separated condition token ids");
  sample->add_option("--out", out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--suite", suite, "dist,consistency,recovery,text,nelbo or all")->required();
  eval->add_option("--out", out, "Output directory")->required();
  eval->add_option("--pairs", pairs, "Token record file of pairs to score for consistency");

  auto* ablate = app.add_subcommand("ablate", "Train and compare ablation variants");
  ablate->add_option("--config", config_path, "Base run config JSON")->required();
  ablate->add_option("--grid", grid, "causal,timestep,adaln,backbone_scratch")->required();
  ablate->add_option("--out", out, "Output root")->required();
  ablate->add_flag("--force", force, "Overwrite existing run directories");

  auto* data = app.add_subcommand("data", "Write ground-truth pairs as token records");
  data->add_option("--config", config_path, "Run config JSON (defaults if omitted)");
  data->add_option("--num", num, "Number of pairs")->required();
  data->add_option("--seed", seed, "Sampling seed")->required();
  data->add_option("--out", out, "Output file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    const int threads = resolve_threads(threads_flag);
    if (*train) run_train(config_path, out, resume, force);
    if (*sample) run_sample(ckpt, mode, num, seed, condition, out, threads);
    if (*eval) run_eval(ckpt, suite, out, pairs, threads);
    if (*ablate) run_ablate(config_path, grid, out, threads, force);
    if (*data) run_data(config_path, num, seed, out);
  } catch (const mddm::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const mddm::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const mddm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}
