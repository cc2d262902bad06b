#pragma once

// Command-line front end. Every workflow reads one JSON config (sections per
// subcommand), lets flags override it, and derives all randomness from named
// seeds, so identical invocations write identical bytes.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tswm/attacks.hpp"
#include "tswm/corpus_lm.hpp"
#include "tswm/detector.hpp"
#include "tswm/error.hpp"
#include "tswm/evalkit.hpp"
#include "tswm/generators.hpp"
#include "tswm/parallel.hpp"
#include "tswm/pipeline.hpp"
#include "tswm/trainer.hpp"

namespace tswm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr std::uint64_t kDefaultKey = 0x7a6b5c4d;

// ---- config sections ---------------------------------------------------------------

struct CorpusConfig {
  std::string kind = "UNWATERMARKED"; // UNWATERMARKED, HUMAN or PROMPT
  std::size_t count = 100;
  std::size_t prompt_length = 20;
  std::size_t length = 200;
  std::uint64_t seed = 11;
};

struct GenerateConfig {
  std::size_t count = 100;
  std::size_t prompt_length = 20;
  std::size_t length = 200;
  std::uint64_t seed = 21;
  double temperature = 1.0;
};

struct DetectConfig {
  double threshold = 4.0;
  std::size_t window = 0; // 0: whole text
};

struct AttackConfig {
  std::string kind = "copy_paste"; // copy_paste or corrupt
  std::size_t k = 1;
  double rate = 0.3;
  std::uint64_t seed = 31;
};

struct CalibrateConfig {
  std::vector<double> fprs{0.0, 0.01};
  std::size_t window = 0;
};

struct CurvesConfig {
  std::string x = "similarity";
  std::string y = "tpr";
  int samples = 100;
};

namespace detail {

template <class Fn>
void parse_section(const nlohmann::json& j, const std::string& name, Fn&& field) {
  if (!j.is_object()) throw ConfigError(name + " config must be a JSON object");
  try {
    for (const auto& [k, v] : j.items())
      if (!field(k, v)) throw ConfigError("unknown " + name + " config field: " + k);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad " + name + " config: " + e.what());
  }
}

inline CorpusConfig corpus_config(const nlohmann::json& j) {
  CorpusConfig c;
  parse_section(j, "corpus", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "kind") c.kind = v.get<std::string>();
    else if (k == "count") c.count = v.get<std::size_t>();
    else if (k == "prompt_length") c.prompt_length = v.get<std::size_t>();
    else if (k == "length") c.length = v.get<std::size_t>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else return false;
    return true;
  });
  return c;
}

inline GenerateConfig generate_config(const nlohmann::json& j) {
  GenerateConfig c;
  parse_section(j, "generate", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "count") c.count = v.get<std::size_t>();
    else if (k == "prompt_length") c.prompt_length = v.get<std::size_t>();
    else if (k == "length") c.length = v.get<std::size_t>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "temperature") c.temperature = v.get<double>();
    else return false;
    return true;
  });
  return c;
}

inline DetectConfig detect_config(const nlohmann::json& j) {
  DetectConfig c;
  parse_section(j, "detect", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "threshold") c.threshold = v.get<double>();
    else if (k == "window") c.window = v.get<std::size_t>();
    else return false;
    return true;
  });
  return c;
}

inline AttackConfig attack_config(const nlohmann::json& j) {
  AttackConfig c;
  parse_section(j, "attack", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "kind") c.kind = v.get<std::string>();
    else if (k == "k") c.k = v.get<std::size_t>();
    else if (k == "rate") c.rate = v.get<double>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else return false;
    return true;
  });
  return c;
}

inline CalibrateConfig calibrate_config(const nlohmann::json& j) {
  CalibrateConfig c;
  parse_section(j, "calibrate", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "fprs") c.fprs = v.get<std::vector<double>>();
    else if (k == "window") c.window = v.get<std::size_t>();
    else return false;
    return true;
  });
  return c;
}

inline CurvesConfig curves_config(const nlohmann::json& j) {
  CurvesConfig c;
  parse_section(j, "curves", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "x") c.x = v.get<std::string>();
    else if (k == "y") c.y = v.get<std::string>();
    else if (k == "samples") c.samples = v.get<int>();
    else return false;
    return true;
  });
  return c;
}

inline const std::vector<std::string>& config_sections() {
  static const std::vector<std::string> s{"model",  "key",       "corpus",   "train", "generate",
                                          "detect", "attack",    "calibrate", "evaluate", "curves"};
  return s;
}

inline nlohmann::json read_json_file(const std::string& path, bool is_config) {
  std::ifstream is(path);
  if (!is) {
    if (is_config) throw ConfigError("cannot open config file: " + path);
    throw InputError("cannot open file: " + path);
  }
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    if (is_config) throw ConfigError("config " + path + ": " + e.what());
    throw InputError(path + ": " + e.what());
  }
}

inline std::vector<TokenSeq> read_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open corpus: " + path);
  auto seqs = read_jsonl(is);
  if (seqs.empty()) throw InputError("empty corpus: " + path);
  return seqs;
}

// Writes to a file when a path is given, else to the fallback stream.
class Sink {
public:
  Sink(const std::string& path, std::ostream& fallback) {
    if (path.empty()) {
      os_ = &fallback;
    } else {
      file_.open(path, std::ios::binary);
      if (!file_) throw InputError("cannot write " + path);
      os_ = &file_;
    }
  }
  std::ostream& operator*() { return *os_; }

private:
  std::ofstream file_;
  std::ostream* os_ = nullptr;
};

inline void write_json(const std::string& path, std::ostream& fallback, const nlohmann::json& j) {
  Sink s(path, fallback);
  *s << j.dump(2) << '\n';
}

inline std::string ansi(bool green, TokenId t) {
  return std::string(green ? "\x1b[32m" : "\x1b[31m") + std::to_string(t) + "\x1b[0m";
}

} // namespace detail

// ---- application -------------------------------------------------------------------

class App {
public:
  App(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(int argc, const char* const* argv) {
    CLI::App app{"Token-specific green/red-list watermarking toolkit", "tswm"};
    app.require_subcommand(1);
    app.fallthrough(false);
    build(app);
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out_, err_);
      return code == 0 ? kExitOk : kExitUsage;
    }
    try {
      load_config();
      for (auto& [sub, fn] : handlers_)
        if (sub->parsed()) {
          current_ = sub;
          fn();
          return kExitOk;
        }
      err_ << "no subcommand selected\n" << app.help();
      return kExitUsage;
    } catch (const ConfigError& e) {
      err_ << "usage error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const UsageError& e) {
      err_ << "usage error: " << e.what() << '\n';
      return kExitUsage;
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << '\n';
      return kExitRuntime;
    }
  }

private:
  std::ostream& out_;
  std::ostream& err_;
  std::vector<std::pair<CLI::App*, std::function<void()>>> handlers_;
  CLI::App* current_ = nullptr;

  // shared option storage; only one leaf subcommand parses per run
  std::string config_path_, model_path_, out_path_, input_path_, checkpoint_path_, human_path_, prompts_path_;
  std::string calibration_path_, out_dir_, init_path_, csv_path_, format_ = "json", kind_, x_field_, y_field_;
  std::vector<std::string> checkpoints_, inputs_, constants_;
  std::uint64_t seed_ = 0, key_ = 0;
  std::size_t jobs_ = 1, count_ = 0, length_ = 0, prompt_length_ = 0, window_ = 0, k_ = 0, index_ = 0;
  double threshold_ = 0.0, rate_ = 0.0, fpr_ = 0.01;
  nlohmann::json config_ = nlohmann::json::object();

  bool given(const std::string& flag) const { return current_->count(flag) > 0; }

  CLI::App* leaf(CLI::App* parent, const std::string& name, const std::string& desc, std::function<void()> fn) {
    auto* sc = parent->add_subcommand(name, desc);
    sc->add_option("--config", config_path_, "JSON config file")->check(CLI::ExistingFile);
    sc->add_option("--seed", seed_, "override the subcommand's primary seed");
    sc->add_option("--jobs", jobs_, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
    handlers_.emplace_back(sc, std::move(fn));
    return sc;
  }

  void add_model(CLI::App* sc) { sc->add_option("--model", model_path_, "model header from `model build`"); }
  void add_key(CLI::App* sc) { sc->add_option("--key", key_, "partition key"); }
  void add_out(CLI::App* sc) { sc->add_option("--out", out_path_, "output file (default stdout)"); }
  void add_checkpoint(CLI::App* sc) {
    sc->add_option("--checkpoint", checkpoint_path_, "generator checkpoint")->required();
  }

  void build(CLI::App& app) {
    auto* model = app.add_subcommand("model", "synthetic language model");
    model->require_subcommand(1);
    auto* mb = leaf(model, "build", "build a model and write its header", [this] { model_build(); });
    add_out(mb);

    auto* corpus = app.add_subcommand("corpus", "prompt and unwatermarked corpora");
    corpus->require_subcommand(1);
    auto* cg = leaf(corpus, "generate", "sample prompts or unwatermarked continuations", [this] { corpus_generate(); });
    add_model(cg);
    add_out(cg);
    cg->add_option("--kind", kind_, "UNWATERMARKED, HUMAN or PROMPT");
    cg->add_option("--count", count_, "number of sequences");
    cg->add_option("--length", length_, "continuation length");
    cg->add_option("--prompt-length", prompt_length_, "prompt length");
    cg->add_option("--prompts", prompts_path_, "continue these prompts instead of sampling new ones");

    auto* tr = leaf(&app, "train", "train the generator pair", [this] { train_cmd(); });
    add_model(tr);
    add_key(tr);
    tr->add_option("--out-dir", out_dir_, "directory for checkpoints, log and summary")->required();
    tr->add_option("--init", init_path_, "start from this checkpoint instead of the configured init");

    auto* ge = leaf(&app, "generate", "generate watermarked continuations", [this] { generate_cmd(); });
    add_model(ge);
    add_key(ge);
    add_checkpoint(ge);
    add_out(ge);
    ge->add_option("--prompts", prompts_path_, "prompt corpus (default: sample prompts)");
    ge->add_option("--count", count_, "number of prompts to sample");
    ge->add_option("--length", length_, "continuation length");

    auto* de = leaf(&app, "detect", "z-test every sequence of a corpus", [this] { detect_cmd(); });
    add_model(de);
    add_key(de);
    add_checkpoint(de);
    add_out(de);
    de->add_option("--input", input_path_, "corpus to score")->required();
    de->add_option("--threshold", threshold_, "z threshold for the verdict");
    de->add_option("--calibration", calibration_path_, "threshold file from `calibrate`");
    de->add_option("--fpr", fpr_, "which calibrated threshold to use (with --calibration)");
    de->add_option("--window", window_, "sliding window size (0: whole text)");
    de->add_option("--format", format_, "json or text")->check(CLI::IsMember({"json", "text"}));

    auto* an = leaf(&app, "annotate", "per-token green/red flags", [this] { annotate_cmd(); });
    add_model(an);
    add_key(an);
    add_checkpoint(an);
    add_out(an);
    an->add_option("--input", input_path_, "corpus to annotate")->required();
    an->add_option("--index", index_, "annotate only this record");
    an->add_option("--format", format_, "json or color")->check(CLI::IsMember({"json", "color"}));

    auto* at = leaf(&app, "attack", "copy-paste or corruption attacks", [this] { attack_cmd(); });
    add_model(at);
    add_out(at);
    at->add_option("--input", input_path_, "watermarked corpus")->required();
    at->add_option("--human", human_path_, "human corpus for copy-paste");
    at->add_option("--kind", kind_, "copy_paste or corrupt");
    at->add_option("--k", k_, "copy-paste segment count (1 or 3)");
    at->add_option("--rate", rate_, "corruption rate");

    auto* ca = leaf(&app, "calibrate", "thresholds from null z-scores", [this] { calibrate_cmd(); });
    add_model(ca);
    add_key(ca);
    add_checkpoint(ca);
    add_out(ca);
    ca->add_option("--input", input_path_, "null (unwatermarked or human) corpus")->required();
    ca->add_option("--window", window_, "calibrate the windowed maximum z (0: whole text)");

    auto* ev = leaf(&app, "evaluate", "TPR, similarity and trade-off points", [this] { evaluate_cmd(); });
    add_model(ev);
    add_key(ev);
    add_out(ev);
    ev->add_option("--checkpoint", checkpoints_, "checkpoints to evaluate (repeatable)");
    ev->add_option("--constant", constants_, "constant generators GAMMA:DELTA (repeatable)");

    auto* cu = leaf(&app, "curves", "fit trade-off curves", [this] { curves_cmd(); });
    add_out(cu);
    cu->add_option("--input", inputs_, "evaluate reports or point files")->required();
    cu->add_option("--x", x_field_, "point field on the x axis");
    cu->add_option("--y", y_field_, "point field on the y axis");
    cu->add_option("--csv", csv_path_, "also write curve samples as CSV");
  }

  void load_config() {
    if (config_path_.empty()) return;
    config_ = detail::read_json_file(config_path_, true);
    if (!config_.is_object()) throw ConfigError("config must be a JSON object");
    const auto& known = detail::config_sections();
    for (const auto& [k, v] : config_.items())
      if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config section: " + k);
  }

  nlohmann::json section(const std::string& name) const {
    return config_.contains(name) ? config_.at(name) : nlohmann::json::object();
  }

  std::uint64_t key() const {
    if (given("--key")) return key_;
    if (config_.contains("key")) {
      try {
        return config_.at("key").get<std::uint64_t>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad key: ") + e.what());
      }
    }
    return kDefaultKey;
  }

  nlohmann::json model_json() const {
    if (!model_path_.empty()) return detail::read_json_file(model_path_, false);
    return section("model");
  }

  SyntheticLM model() const { return model_from_header(model_json()); }

  GeneratorPair checkpoint(const std::string& path, const SyntheticLM& m) const {
    auto p = pair_from_checkpoint(detail::read_json_file(path, false));
    if (p.gamma.input_dim() != m.embed_dim())
      throw InputError("checkpoint input dimension " + std::to_string(p.gamma.input_dim()) +
                       " does not match the model embedding dimension " + std::to_string(m.embed_dim()));
    return p;
  }

  // ---- subcommands -----------------------------------------------------------------

  void model_build() {
    auto j = section("model");
    if (given("--seed")) j["model_seed"] = seed_;
    const auto m = model_from_header(j);
    detail::write_json(out_path_, out_, model_header(m));
  }

  void corpus_generate() {
    auto c = detail::corpus_config(section("corpus"));
    if (given("--seed")) c.seed = seed_;
    if (given("--kind")) c.kind = kind_;
    if (given("--count")) c.count = count_;
    if (given("--length")) c.length = length_;
    if (given("--prompt-length")) c.prompt_length = prompt_length_;
    if (c.kind != "UNWATERMARKED" && c.kind != "HUMAN" && c.kind != "PROMPT")
      throw ConfigError("corpus kind must be UNWATERMARKED, HUMAN or PROMPT");
    if (c.length < 1 || c.prompt_length < 1) throw ConfigError("corpus lengths must be >= 1");
    const auto m = model();
    auto prompts = prompts_path_.empty() ? make_prompts(m, c.count, c.prompt_length, derive_seed(c.seed, 1))
                                         : detail::read_corpus(prompts_path_);
    std::vector<TokenSeq> out;
    if (c.kind == "PROMPT") {
      out = std::move(prompts);
    } else {
      const bool human = c.kind == "HUMAN";
      // human surrogates use their own stream so they never mirror unwatermarked samples
      const std::uint64_t stream = derive_seed(c.seed, human ? 3 : 2);
      out.resize(prompts.size());
      parallel_for(prompts.size(), jobs_, [&](std::size_t i) {
        out[i] = sample_unwatermarked(m, prompts[i], c.length, derive_seed(stream, i),
                                      human ? Origin::Human : Origin::Unwatermarked);
      });
    }
    detail::Sink s(out_path_, out_);
    write_jsonl(*s, out);
  }

  void train_cmd() {
    TrainConfig base;
    base.key = key();
    auto c = train_config_from_json(section("train"), base);
    if (given("--key")) c.key = key_;
    if (given("--seed")) c.data_seed = seed_;
    c.validate();
    const auto m = model();
    const auto init = init_path_.empty()
                          ? init_pair(c.gamma0, c.delta0, c.init_seed, m.embed_dim(), c.hidden, c.leaky_slope)
                          : checkpoint(init_path_, m);
    const auto r = train(c, m, training_prompts(m, c), init, {jobs_, {}});

    namespace fs = std::filesystem;
    const fs::path dir(out_dir_);
    fs::create_directories(dir);
    auto name = [](std::size_t step) {
      std::ostringstream os;
      os << "checkpoint_" << std::setw(6) << std::setfill('0') << step << ".json";
      return os.str();
    };
    nlohmann::json points = nlohmann::json::array();
    for (const auto& ck : r.checkpoints) {
      const nlohmann::json extra = {{"step", ck.step},       {"val_z", ck.val_z}, {"val_cos", ck.val_cos},
                                    {"score", ck.score},     {"config", to_json(c)}};
      detail::write_json((dir / name(ck.step)).string(), out_, checkpoint_json(ck.pair, extra));
      points.push_back({{"step", ck.step}, {"val_z", ck.val_z}, {"val_cos", ck.val_cos}, {"score", ck.score},
                        {"file", name(ck.step)}});
    }
    const auto& best = r.best();
    detail::write_json((dir / "selected.json").string(), out_,
                       checkpoint_json(best.pair, {{"step", best.step},
                                                   {"val_z", best.val_z},
                                                   {"val_cos", best.val_cos},
                                                   {"config", to_json(c)}}));
    {
      std::ofstream log(dir / "train_log.jsonl", std::ios::binary);
      if (!log) throw InputError("cannot write training log");
      for (const auto& e : r.log) log << e.dump() << '\n';
    }
    // non-dominated checkpoints in (mean z, mean cosine)
    nlohmann::json front = nlohmann::json::array();
    for (std::size_t i = 0; i < r.checkpoints.size(); ++i) {
      bool dominated = false;
      for (std::size_t j = 0; j < r.checkpoints.size() && !dominated; ++j)
        dominated = j != i && dominates(r.checkpoints[j].val_z, r.checkpoints[j].val_cos, r.checkpoints[i].val_z,
                                        r.checkpoints[i].val_cos);
      if (!dominated) front.push_back(r.checkpoints[i].step);
    }
    const nlohmann::json summary = {{"config", to_json(c)},
                                    {"model", model_header(m)},
                                    {"init", {{"val_z", r.init.mean_z}, {"val_cos", r.init.mean_cos}}},
                                    {"checkpoints", points},
                                    {"pareto_steps", front},
                                    {"selected", {{"step", best.step}, {"file", name(best.step)}}}};
    detail::write_json((dir / "summary.json").string(), out_, summary);
    out_ << summary.dump(2) << '\n';
  }

  std::vector<TokenSeq> prompts_for(const SyntheticLM& m, std::size_t count, std::size_t len, std::uint64_t seed) const {
    if (!prompts_path_.empty()) return detail::read_corpus(prompts_path_);
    return make_prompts(m, count, len, derive_seed(seed, 1));
  }

  void generate_cmd() {
    auto c = detail::generate_config(section("generate"));
    if (given("--seed")) c.seed = seed_;
    if (given("--count")) c.count = count_;
    if (given("--length")) c.length = length_;
    if (c.length < 1 || c.prompt_length < 1) throw ConfigError("generate lengths must be >= 1");
    const auto m = model();
    const auto pair = checkpoint(checkpoint_path_, m);
    const auto prompts = prompts_for(m, c.count, c.prompt_length, c.seed);
    const PartitionKey k{key()};
    std::vector<TokenSeq> out(prompts.size());
    const std::uint64_t stream = derive_seed(c.seed, 2);
    parallel_for(prompts.size(), jobs_, [&](std::size_t i) {
      out[i] = generate_watermarked(m, pair.gamma, pair.delta, k, prompts[i], c.length, derive_seed(stream, i),
                                    c.temperature)
                   .text;
    });
    detail::Sink s(out_path_, out_);
    write_jsonl(*s, out);
  }

  double resolve_threshold(const DetectConfig& c) const {
    if (given("--threshold")) return threshold_;
    if (!calibration_path_.empty()) {
      const auto j = detail::read_json_file(calibration_path_, false);
      try {
        for (const auto& t : j.at("thresholds"))
          if (std::abs(t.at("fpr").get<double>() - fpr_) < 1e-12) return t.at("threshold").get<double>();
      } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("bad calibration file: ") + e.what());
      }
      throw InputError("calibration file has no threshold for fpr " + std::to_string(fpr_));
    }
    return c.threshold;
  }

  void detect_cmd() {
    auto c = detail::detect_config(section("detect"));
    if (given("--window")) c.window = window_;
    const double thr = resolve_threshold(c);
    const auto m = model();
    const auto pair = checkpoint(checkpoint_path_, m);
    const auto texts = detail::read_corpus(input_path_);
    const PartitionKey k{key()};
    std::vector<DetectionResult> res(texts.size());
    parallel_for(texts.size(), jobs_, [&](std::size_t i) {
      validate(texts[i], m.vocab_size());
      res[i] = c.window == 0 ? detect(texts[i], pair.gamma, m.embeddings(), k, thr)
                             : detect_windowed(texts[i].tokens, pair.gamma, m.embeddings(), k, c.window, thr);
    });
    detail::Sink s(out_path_, out_);
    if (format_ == "text") {
      *s << std::left << std::setw(8) << "index" << std::setw(8) << "T" << std::setw(10) << "green" << std::setw(12)
         << "z" << std::setw(12) << "threshold" << "verdict\n";
      for (std::size_t i = 0; i < res.size(); ++i) {
        std::ostringstream z, t;
        z << std::fixed << std::setprecision(4) << res[i].z;
        t << std::fixed << std::setprecision(4) << res[i].threshold;
        *s << std::setw(8) << i << std::setw(8) << res[i].scored << std::setw(10) << res[i].green_count << std::setw(12)
           << z.str() << std::setw(12) << t.str() << (res[i].verdict ? "watermarked" : "not watermarked") << '\n';
      }
      return;
    }
    for (std::size_t i = 0; i < res.size(); ++i) {
      auto j = to_json(res[i]);
      j["index"] = i;
      *s << j.dump() << '\n';
    }
  }

  void annotate_cmd() {
    const auto m = model();
    const auto pair = checkpoint(checkpoint_path_, m);
    const auto texts = detail::read_corpus(input_path_);
    const PartitionKey k{key()};
    std::size_t lo = 0, hi = texts.size();
    if (given("--index")) {
      if (index_ >= texts.size()) throw InputError("--index beyond the corpus");
      lo = index_;
      hi = index_ + 1;
    }
    detail::Sink s(out_path_, out_);
    for (std::size_t i = lo; i < hi; ++i) {
      validate(texts[i], m.vocab_size());
      const auto a = annotate(texts[i].tokens, pair.gamma, pair.delta, m.embeddings(), k);
      if (format_ == "color") {
        *s << texts[i].tokens.front();
        for (const auto& t : a) *s << ' ' << detail::ansi(t.green, t.token);
        *s << '\n';
        continue;
      }
      nlohmann::json toks = nlohmann::json::array(), flags = nlohmann::json::array();
      for (const auto& t : a) {
        toks.push_back({{"token", t.token}, {"green", t.green}, {"gamma", t.gamma}, {"delta", t.delta}});
        flags.push_back(t.green ? 1 : 0);
      }
      *s << nlohmann::json{{"index", i}, {"first", texts[i].tokens.front()}, {"flags", flags}, {"tokens", toks}}.dump()
         << '\n';
    }
  }

  void attack_cmd() {
    auto c = detail::attack_config(section("attack"));
    if (given("--seed")) c.seed = seed_;
    if (given("--kind")) c.kind = kind_;
    if (given("--k")) c.k = k_;
    if (given("--rate")) c.rate = rate_;
    const auto texts = detail::read_corpus(input_path_);
    std::vector<TokenSeq> out(texts.size());
    std::vector<nlohmann::json> meta(texts.size());
    if (c.kind == "copy_paste") {
      if (c.k != 1 && c.k != 3) throw ConfigError("copy-paste k must be 1 or 3");
      if (human_path_.empty()) throw ConfigError("copy-paste needs --human");
      const auto human = detail::read_corpus(human_path_);
      parallel_for(texts.size(), jobs_, [&](std::size_t i) {
        const auto r = copy_paste_placed(texts[i], human[i % human.size()], c.k, derive_seed(c.seed, i));
        out[i] = r.text;
        meta[i] = attack_metadata_copy_paste(c.k, derive_seed(c.seed, i));
        meta[i]["segments"] = r.segments;
      });
    } else if (c.kind == "corrupt") {
      if (!(c.rate >= 0.0 && c.rate <= 1.0)) throw ConfigError("corruption rate must lie in [0,1]");
      const auto m = model();
      parallel_for(texts.size(), jobs_, [&](std::size_t i) {
        out[i] = corrupt(texts[i], c.rate, derive_seed(c.seed, i), m);
        meta[i] = attack_metadata_corrupt(c.rate, derive_seed(c.seed, i));
      });
    } else {
      throw ConfigError("attack kind must be copy_paste or corrupt");
    }
    detail::Sink s(out_path_, out_);
    for (std::size_t i = 0; i < out.size(); ++i) {
      auto j = to_json(out[i]);
      j["attack"] = meta[i];
      *s << j.dump() << '\n';
    }
  }

  void calibrate_cmd() {
    auto c = detail::calibrate_config(section("calibrate"));
    if (given("--window")) c.window = window_;
    const auto m = model();
    const auto pair = checkpoint(checkpoint_path_, m);
    const auto texts = detail::read_corpus(input_path_);
    const PartitionKey k{key()};
    std::vector<double> z(texts.size());
    parallel_for(texts.size(), jobs_, [&](std::size_t i) {
      validate(texts[i], m.vocab_size());
      z[i] = c.window == 0 ? detect(texts[i], pair.gamma, m.embeddings(), k, 0.0).z
                           : windowed_z(texts[i].tokens, pair.gamma, m.embeddings(), k, c.window).max_z;
    });
    double mean = 0.0, var = 0.0;
    for (double x : z) mean += x;
    mean /= static_cast<double>(z.size());
    for (double x : z) var += (x - mean) * (x - mean);
    var = z.size() > 1 ? var / static_cast<double>(z.size() - 1) : 0.0;
    nlohmann::json th = nlohmann::json::array();
    for (double f : c.fprs) th.push_back({{"fpr", f}, {"threshold", calibrate_threshold(z, f)}});
    detail::write_json(out_path_, out_,
                       {{"null_count", z.size()}, {"window", c.window}, {"mean_z", mean}, {"var_z", var},
                        {"thresholds", th}});
  }

  void evaluate_cmd() {
    auto s = eval_settings_from_json(section("evaluate"), EvalSettings{.key = key()});
    if (given("--key")) s.key = key_;
    if (given("--seed")) s.seed = seed_;
    if (checkpoints_.empty() && constants_.empty()) throw ConfigError("evaluate needs --checkpoint or --constant");
    const auto m = model();
    std::vector<std::pair<std::string, GeneratorPair>> pairs;
    for (const auto& p : checkpoints_) pairs.emplace_back(std::filesystem::path(p).stem().string(), checkpoint(p, m));
    for (const auto& spec : constants_) {
      const auto colon = spec.find(':');
      double g = 0.0, d = 0.0;
      try {
        if (colon == std::string::npos) throw std::invalid_argument("missing ':'");
        g = std::stod(spec.substr(0, colon));
        d = std::stod(spec.substr(colon + 1));
      } catch (const std::exception&) {
        throw ConfigError("--constant expects GAMMA:DELTA, got " + spec);
      }
      pairs.emplace_back("constant_" + spec, GeneratorPair{constant_net(GeneratorKind::Gamma, g, m.embed_dim(), 8),
                                                           constant_net(GeneratorKind::Delta, d, m.embed_dim(), 8)});
    }
    nlohmann::json reports = nlohmann::json::array(), pts = nlohmann::json::array();
    std::vector<TradeoffPoint> points;
    for (const auto& [id, pair] : pairs) {
      const auto r = evaluate_pair(m, pair, s, jobs_);
      auto j = to_json(r);
      j["id"] = id;
      reports.push_back(j);
      points.push_back({r.mean_z, r.tpr_1, r.sim_mean, id});
      pts.push_back(to_json(points.back()));
    }
    nlohmann::json front = nlohmann::json::array();
    for (const auto& p : pareto_filter(points)) front.push_back(p.id);
    detail::write_json(out_path_, out_,
                       {{"settings", to_json(s)}, {"model", model_header(m)}, {"reports", reports}, {"points", pts},
                        {"pareto", front}});
  }

  void curves_cmd() {
    auto c = detail::curves_config(section("curves"));
    if (given("--x")) c.x = x_field_;
    if (given("--y")) c.y = y_field_;
    if (c.samples < 2) throw ConfigError("curve samples must be >= 2");
    std::vector<Point2> pts;
    for (const auto& path : inputs_) {
      const auto j = detail::read_json_file(path, false);
      const auto& arr = j.is_object() && j.contains("points") ? j.at("points") : j;
      if (!arr.is_array()) throw InputError(path + ": expected a points array");
      try {
        for (const auto& p : arr) {
          if (p.is_array()) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
          else pts.push_back({p.at(c.x).get<double>(), p.at(c.y).get<double>()});
        }
      } catch (const nlohmann::json::exception& e) {
        throw InputError(path + ": bad point: " + e.what());
      }
    }
    const auto fit = fit_tradeoff(pts);
    double lo = pts.front().x, hi = pts.front().x;
    for (const auto& p : pts) {
      lo = std::min(lo, p.x);
      hi = std::max(hi, p.x);
    }
    if (!csv_path_.empty()) {
      std::ofstream os(csv_path_, std::ios::binary);
      if (!os) throw InputError("cannot write " + csv_path_);
      os << curve_csv(fit, lo, hi, c.samples);
    }
    auto j = to_json(fit);
    j["x"] = c.x;
    j["y"] = c.y;
    j["points"] = pts.size();
    j["x_range"] = {lo, hi};
    detail::write_json(out_path_, out_, j);
  }
};

/// Entry point shared by the binary and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  App app(out, err);
  return app.run(argc, argv);
}

} // namespace tswm::cli
