// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: an INI file ([data], [modalityN], [train], [eval],
// [output] sections) plus command-line overrides.
#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "midas/data.hpp"
#include "midas/metrics.hpp"
#include "midas/model.hpp"
#include "midas/train.hpp"

namespace midas {

struct ModalityConfig {
  ModalitySpec data{};                    // synthetic generator settings
  std::vector<std::size_t> hidden{16};    // encoder hidden widths
  std::size_t feature_dim = 16;           // encoder output d_m
};

struct ExperimentConfig {
  // dataset
  std::string data_source = "synthetic";  // synthetic | file
  std::string data_path;
  std::size_t num_classes = 4;
  std::size_t n_train = 2000, n_val = 500, n_test = 500;
  std::optional<std::uint64_t> data_seed;  // defaults to `train.seed`
  std::vector<ModalityConfig> modalities{ModalityConfig{}, ModalityConfig{}};

  TrainConfig train{};
  bool warmup_epochs_set = false;  // otherwise max(1, round(0.1 E))

  Split eval_split = Split::Val;
  std::uint64_t eval_seed = 0;
  std::string out_dir = "run";

  std::size_t num_modalities() const { return modalities.size(); }

  SyntheticSpec synthetic_spec() const {
    SyntheticSpec s;
    s.num_classes = num_classes;
    s.modalities.clear();
    for (const ModalityConfig& m : modalities) s.modalities.push_back(m.data);
    s.n_train = n_train;
    s.n_val = n_val;
    s.n_test = n_test;
    s.seed = data_seed.value_or(train.seed);
    return s;
  }

  ModelSpec model_spec(const FeatureDataset& ds) const {
    if (ds.num_modalities() != modalities.size()) {
      throw ConfigError("config describes " + std::to_string(modalities.size()) + " modalities, dataset has " +
                        std::to_string(ds.num_modalities()));
    }
    ModelSpec spec;
    spec.num_classes = ds.num_classes;
    for (std::size_t m = 0; m < modalities.size(); ++m)
      spec.encoders.push_back({ds.dim(m), modalities[m].hidden, modalities[m].feature_dim});
    return spec;
  }

  /// Applies mode and warm-up defaults; throws ConfigError on contradictions.
  void finalize() {
    if (!warmup_epochs_set) train.warmup_epochs = TrainConfig::default_warmup(train.epochs);
    if (train.mode == Mode::Joint) {
      train.lambda = 0.0;
      train.warmup = train.weak_modality = train.hard_sample = false;
    }
    if (modalities.size() < 2) throw ConfigError("need at least two [modalityN] sections");
    if (num_classes < 2) throw ConfigError("data.classes must be >= 2");
    if (data_source != "synthetic" && data_source != "file") {
      throw ConfigError("data.source must be 'synthetic' or 'file', got '" + data_source + "'");
    }
    if (data_source == "file" && data_path.empty()) throw ConfigError("data.source = file needs data.path");
    for (const ModalityConfig& m : modalities) {
      if (m.feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
      for (std::size_t h : m.hidden)
        if (h < 1) throw ConfigError("hidden widths must be >= 1");
    }
    train.validate();
  }
};

inline const char* to_string(Mode m) { return m == Mode::Joint ? "joint" : "midas"; }

inline Mode parse_mode(const std::string& s) {
  if (s == "midas") return Mode::Midas;
  if (s == "joint") return Mode::Joint;
  throw ConfigError("mode must be 'midas' or 'joint', got '" + s + "'");
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("split must be train, val or test, got '" + s + "'");
}

namespace detail {

template <class T>
T get_value(const boost::property_tree::ptree& node, const std::string& key) {
  try {
    return node.get_value<T>();
  } catch (const boost::property_tree::ptree_bad_data&) {
    throw ConfigError("bad value for '" + key + "': '" + node.data() + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("bad boolean for '" + key + "': '" + v + "'");
}

inline std::vector<std::size_t> parse_widths(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      std::size_t pos = 0;
      const long long w = std::stoll(tok, &pos);
      if (w < 1) throw ConfigError("widths in '" + key + "' must be >= 1");
      out.push_back(static_cast<std::size_t>(w));
    } catch (const std::logic_error&) {
      throw ConfigError("bad width list for '" + key + "': '" + v + "'");
    }
  }
  return out;
}

inline std::string join_widths(const std::vector<std::size_t>& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + std::to_string(w[i]);
  return s;
}

}  // namespace detail

/// Parses INI text. Unknown sections or keys are rejected.
inline ExperimentConfig parse_config(std::istream& in) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  ExperimentConfig cfg;
  std::map<std::size_t, const pt::ptree*> modality_sections;

  for (const auto& [section, body] : tree) {
    if (section.rfind("modality", 0) == 0) {
      const std::string num = section.substr(8);
      if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos || std::stoul(num) < 1) {
        throw ConfigError("bad modality section name [" + section + "], expected [modality1], [modality2], ...");
      }
      modality_sections[std::stoul(num)] = &body;
      continue;
    }
    for (const auto& [key, node] : body) {
      const std::string full = section + "." + key;
      using detail::get_value;
      if (section == "data") {
        if (key == "source") cfg.data_source = node.data();
        else if (key == "path") cfg.data_path = node.data();
        else if (key == "classes") cfg.num_classes = get_value<std::size_t>(node, full);
        else if (key == "n_train") cfg.n_train = get_value<std::size_t>(node, full);
        else if (key == "n_val") cfg.n_val = get_value<std::size_t>(node, full);
        else if (key == "n_test") cfg.n_test = get_value<std::size_t>(node, full);
        else if (key == "seed") cfg.data_seed = get_value<std::uint64_t>(node, full);
        else throw ConfigError("unknown key '" + full + "'");
      } else if (section == "train") {
        TrainConfig& t = cfg.train;
        if (key == "mode") t.mode = parse_mode(node.data());
        else if (key == "epochs") t.epochs = get_value<std::size_t>(node, full);
        else if (key == "warmup_epochs") {
          t.warmup_epochs = get_value<std::size_t>(node, full);
          cfg.warmup_epochs_set = true;
        } else if (key == "batch_size") t.batch_size = get_value<std::size_t>(node, full);
        else if (key == "learning_rate") t.sgd.learning_rate = get_value<double>(node, full);
        else if (key == "momentum") t.sgd.momentum = get_value<double>(node, full);
        else if (key == "weight_decay") t.sgd.weight_decay = get_value<double>(node, full);
        else if (key == "lambda") t.lambda = get_value<double>(node, full);
        else if (key == "eta") t.eta = get_value<double>(node, full);
        else if (key == "warmup") t.warmup = detail::parse_bool(full, node.data());
        else if (key == "weak_modality") t.weak_modality = detail::parse_bool(full, node.data());
        else if (key == "hard_sample") t.hard_sample = detail::parse_bool(full, node.data());
        else if (key == "alpha_reset_per_epoch") t.alpha_reset_per_epoch = detail::parse_bool(full, node.data());
        else if (key == "seed") t.seed = get_value<std::uint64_t>(node, full);
        else throw ConfigError("unknown key '" + full + "'");
      } else if (section == "eval") {
        if (key == "split") cfg.eval_split = parse_split(node.data());
        else if (key == "seed") cfg.eval_seed = get_value<std::uint64_t>(node, full);
        else throw ConfigError("unknown key '" + full + "'");
      } else if (section == "output") {
        if (key == "dir") cfg.out_dir = node.data();
        else throw ConfigError("unknown key '" + full + "'");
      } else {
        throw ConfigError("unknown section [" + section + "]");
      }
    }
  }

  if (!modality_sections.empty()) {
    cfg.modalities.clear();
    std::size_t expect = 1;
    for (const auto& [idx, body] : modality_sections) {
      if (idx != expect++) throw ConfigError("modality sections must be numbered 1..M without gaps");
      ModalityConfig mc;
      for (const auto& [key, node] : *body) {
        const std::string full = "modality" + std::to_string(idx) + "." + key;
        using detail::get_value;
        if (key == "dim") mc.data.dim = get_value<std::size_t>(node, full);
        else if (key == "separation") mc.data.separation = get_value<double>(node, full);
        else if (key == "noise") mc.data.noise = get_value<double>(node, full);
        else if (key == "hidden") mc.hidden = detail::parse_widths(full, node.data());
        else if (key == "feature_dim") mc.feature_dim = get_value<std::size_t>(node, full);
        else throw ConfigError("unknown key '" + full + "'");
      }
      cfg.modalities.push_back(std::move(mc));
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path);
  return parse_config(in);
}

/// Canonical INI form of a resolved config (stable key order).
inline void write_config(std::ostream& os, const ExperimentConfig& c) {
  const TrainConfig& t = c.train;
  auto b = [](bool v) { return v ? "true" : "false"; };
  os << "[data]\n"
     << "source = " << c.data_source << '\n';
  if (!c.data_path.empty()) os << "path = " << c.data_path << '\n';
  os << "classes = " << c.num_classes << '\n'
     << "n_train = " << c.n_train << '\n'
     << "n_val = " << c.n_val << '\n'
     << "n_test = " << c.n_test << '\n'
     << "seed = " << c.data_seed.value_or(t.seed) << "\n\n";
  for (std::size_t m = 0; m < c.modalities.size(); ++m) {
    const ModalityConfig& mc = c.modalities[m];
    os << "[modality" << m + 1 << "]\n"
       << "dim = " << mc.data.dim << '\n'
       << "separation = " << format_real(mc.data.separation) << '\n'
       << "noise = " << format_real(mc.data.noise) << '\n'
       << "hidden = " << detail::join_widths(mc.hidden) << '\n'
       << "feature_dim = " << mc.feature_dim << "\n\n";
  }
  os << "[train]\n"
     << "mode = " << to_string(t.mode) << '\n'
     << "epochs = " << t.epochs << '\n'
     << "warmup_epochs = " << t.warmup_epochs << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "learning_rate = " << format_real(t.sgd.learning_rate) << '\n'
     << "momentum = " << format_real(t.sgd.momentum) << '\n'
     << "weight_decay = " << format_real(t.sgd.weight_decay) << '\n'
     << "lambda = " << format_real(t.lambda) << '\n'
     << "eta = " << format_real(t.eta) << '\n'
     << "warmup = " << b(t.warmup) << '\n'
     << "weak_modality = " << b(t.weak_modality) << '\n'
     << "hard_sample = " << b(t.hard_sample) << '\n'
     << "alpha_reset_per_epoch = " << b(t.alpha_reset_per_epoch) << '\n'
     << "seed = " << t.seed << "\n\n"
     << "[eval]\n"
     << "split = " << to_string(c.eval_split) << '\n'
     << "seed = " << c.eval_seed << "\n\n"
     << "[output]\n"
     << "dir = " << c.out_dir << '\n';
}

}  // namespace midas
