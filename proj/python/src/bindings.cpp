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


#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mddm/denoiser.hpp"
#include "mddm/errors.hpp"
#include "mddm/eval.hpp"
#include "mddm/pipeline.hpp"

namespace py = pybind11;

namespace mddm {
namespace {

using IdArray = py::array_t<std::int64_t>;

RunConfig ParseConfig(const std::string& json_text) {
  try {
    return run_config_from_json(nlohmann::json::parse(json_text));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(e.what());
  }
}

IdArray ToArray(const std::vector<TokenSequence>& seqs, int len) {
  IdArray out({static_cast<py::ssize_t>(seqs.size()), static_cast<py::ssize_t>(len)});
  auto view = out.mutable_unchecked<2>();
  for (std::size_t i = 0; i < seqs.size(); ++i)
    for (int p = 0; p < len; ++p) view(i, p) = seqs[i].ids[p];
  return out;
}

std::vector<TokenSequence> FromArray(const IdArray& ids, const SequenceLayout& layout) {
  if (ids.ndim() != 2 || ids.shape(1) != layout.len_total())
    throw InvalidArgument("expected an (n, " + std::to_string(layout.len_total()) + ") id array");
  auto view = ids.unchecked<2>();
  std::vector<TokenSequence> out;
  for (py::ssize_t i = 0; i < ids.shape(0); ++i) {
    TokenSequence seq{std::vector<TokenId>(layout.len_total()), layout};
    for (int p = 0; p < layout.len_total(); ++p) seq.ids[p] = static_cast<TokenId>(view(i, p));
    out.push_back(std::move(seq));
  }
  return out;
}

// A trained backbone or the exact oracle, bound to its run config.
class Model {
 public:
  explicit Model(LoadedCheckpoint loaded)
      : config_(std::move(loaded.config)),
        state_(std::make_unique<TrainState>(std::move(loaded.state))),
        denoiser_(std::make_unique<BackboneDenoiser<float>>(state_->params)) {}

  explicit Model(RunConfig config)
      : config_(std::move(config)),
        world_(std::make_unique<World>(config_.world_config(), config_.train.seed)),
        denoiser_(std::make_unique<OracleDenoiser>(*world_)) {}

  std::string config_json() const { return canonical_json(config_); }
  std::string hash() const { return config_hash(config_); }
  std::int64_t step() const { return state_ ? state_->step : 0; }
  bool is_oracle() const { return !state_; }

  IdArray generate(const std::string& mode, int num, std::uint64_t seed,
                   std::vector<TokenId> condition, int threads) const {
    const auto gen_mode = mode_from_name(mode, std::move(condition));
    init_canvas(gen_mode, config_.joint_vocab(), config_.layout());
    std::vector<TokenSequence> samples;
    {
      py::gil_scoped_release release;
      samples = mddm::generate(*denoiser_, gen_mode, config_.sampler, config_.noise_schedule(),
                               config_.joint_vocab(), config_.layout(), num, seed, threads);
    }
    return ToArray(samples, config_.layout().len_total());
  }

  std::map<std::string, double> evaluate(const std::string& suites, int threads) const {
    const auto selected = parse_suites(suites);
    py::gil_scoped_release release;
    return mddm::evaluate(*denoiser_, config_, selected, threads).metrics;
  }

  // Posterior x0 probabilities for each position of each canvas.
  py::array_t<double> predict(const IdArray& x_t, double t) const {
    const auto seqs = FromArray(x_t, config_.layout());
    const auto vocab = config_.joint_vocab();
    for (const auto& s : seqs) validate_corrupted(s, vocab);
    const std::vector<double> ts(seqs.size(), t);
    const auto outs = denoiser_->predict(seqs, ts);
    const int len = config_.layout().len_total(), k = vocab.k_total();
    py::array_t<double> probs({static_cast<py::ssize_t>(seqs.size()), static_cast<py::ssize_t>(len),
                               static_cast<py::ssize_t>(k)});
    auto view = probs.mutable_unchecked<3>();
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      for (int p = 0; p < len; ++p) {
        const auto row = token_distribution(outs[i], p, k, 1.0, 0, k);
        for (int c = 0; c < k; ++c) view(i, p, c) = row[c];
      }
    }
    return probs;
  }

  void save(const std::string& path) const {
    if (!state_) throw InvalidArgument("the oracle model has no checkpoint");
    save_checkpoint(*state_, config_, path);
  }

 private:
  RunConfig config_;
  std::unique_ptr<TrainState> state_;
  std::unique_ptr<World> world_;
  std::unique_ptr<Denoiser> denoiser_;
};

Model Train(const std::string& config_json, const std::string& out_dir, std::int64_t stop_at) {
  const RunConfig config = ParseConfig(config_json);
  TrainState state = init_train_state(config.backbone, config.train.seed);
  {
    py::gil_scoped_release release;
    run_training(state, config, {.out_dir = out_dir, .stop_at = stop_at, .on_step = {}});
  }
  return Model(LoadedCheckpoint{config, std::move(state)});
}

IdArray SampleData(const std::string& config_json, int num, std::uint64_t seed) {
  const RunConfig config = ParseConfig(config_json);
  const World world(config.world_config(), config.train.seed);
  std::vector<TokenSequence> out;
  for (int i = 0; i < num; ++i) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
    out.push_back(world.sample_sequence(rng));
  }
  return ToArray(out, world.layout().len_total());
}

py::array_t<double> CumulativeMatrix(const std::string& kind, int n_steps, int j, int k_text, int k_img) {
  const TransitionMatrix q =
      cumulative_matrix(NoiseSchedule(schedule_kind_from_string(kind), 1e-3, n_steps), j, JointVocabulary(k_text, k_img));
  py::array_t<double> out({q.size, q.size});
  std::copy(q.entries.begin(), q.entries.end(), out.mutable_data());
  return out;
}

}  // namespace
}  // namespace mddm

PYBIND11_MODULE(_mddm, m) {
  using namespace mddm;
  m.doc() = "Masked discrete diffusion over joint report/image token sequences";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("default_config", [] { return canonical_json(RunConfig{}); });
  m.def("normalize_config", [](const std::string& j) { return canonical_json(ParseConfig(j)); },
        "Validates a JSON config and returns its canonical form.");
  m.def("config_hash", [](const std::string& j) { return config_hash(ParseConfig(j)); });
  m.def("load_config", [](const std::string& path) { return canonical_json(load_run_config(path)); });

  py::class_<Model>(m, "Model")
      .def_static("load", [](const std::string& path) { return Model(load_checkpoint(path)); })
      .def_static("oracle", [](const std::string& j) { return Model(ParseConfig(j)); },
                  "Exact posterior of the enumerable toy world.")
      .def_property_readonly("config_json", &Model::config_json)
      .def_property_readonly("config_hash", &Model::hash)
      .def_property_readonly("step", &Model::step)
      .def_property_readonly("is_oracle", &Model::is_oracle)
      .def("generate", &Model::generate, py::arg("mode"), py::arg("num"), py::arg("seed"),
           py::arg("condition") = std::vector<TokenId>{}, py::arg("threads") = 1)
      .def("evaluate", &Model::evaluate, py::arg("suites") = "all", py::arg("threads") = 1)
      .def("predict", &Model::predict, py::arg("x_t"), py::arg("t"))
      .def("save", &Model::save, py::arg("path"));

  m.def("train", &Train, py::arg("config_json"), py::arg("out_dir") = "", py::arg("stop_at") = -1);
  m.def("sample_data", &SampleData, py::arg("config_json"), py::arg("num"), py::arg("seed"));

  m.def("retention", [](const std::string& kind, double t) {
    return NoiseSchedule(schedule_kind_from_string(kind)).retention_at(t);
  }, py::arg("kind"), py::arg("t"));
  m.def("loss_weight", [](const std::string& kind, double t, double t_min) {
    return NoiseSchedule(schedule_kind_from_string(kind), t_min).loss_weight(t);
  }, py::arg("kind"), py::arg("t"), py::arg("t_min") = 1e-3);
  m.def("cumulative_matrix", &CumulativeMatrix, py::arg("kind"), py::arg("n_steps"), py::arg("j"),
        py::arg("k_text"), py::arg("k_img"));

  m.def("bleu", [](std::vector<TokenId> c, std::vector<TokenId> r, int n) { return bleu_n(c, r, n); },
        py::arg("candidate"), py::arg("reference"), py::arg("n"));
  m.def("rouge_l", [](std::vector<TokenId> c, std::vector<TokenId> r) { return rouge_l(c, r); },
        py::arg("candidate"), py::arg("reference"));
  m.def("detokenize_report", [](std::vector<TokenId> ids) { return detokenize_report(ids); });
}
