#include "vibus/pipeline.hpp"

#include <json.hpp>

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string_view>

namespace vibus {

namespace {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void check_keys(const json& obj, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError("'" + where + "' must be a JSON object");
  for (const auto& item : obj.items()) {
    bool known = false;
    for (std::string_view a : allowed) known = known || item.key() == a;
    if (!known) throw ConfigError("unknown config key '" + (where.empty() ? "" : where + ".") + item.key() + "'");
  }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + (where.empty() ? "" : where + ".") + key + "' has the wrong type: " +
                      e.what());
  }
}

const char* mode_name(UncertaintyMode m) {
  return m == UncertaintyMode::WinningLogitVariance ? "winning_logit" : "mean_logit";
}

UncertaintyMode mode_from(const std::string& s) {
  if (s == "winning_logit") return UncertaintyMode::WinningLogitVariance;
  if (s == "mean_logit") return UncertaintyMode::MeanLogitVariance;
  throw ConfigError("uncertainty.mode must be 'winning_logit' or 'mean_logit', got '" + s + "'");
}

void read_sgd(const json& obj, SgdConfig& sgd, const std::string& where) {
  read(obj, "base_lr", sgd.base_lr, where);
  read(obj, "momentum", sgd.momentum, where);
  read(obj, "poly_power", sgd.poly_power, where);
  read(obj, "weight_decay", sgd.weight_decay, where);
  read(obj, "max_grad_norm", sgd.max_grad_norm, where);
}

void read_finetune(const json& obj, StageFinetuneConfig& ft, const std::string& where) {
  check_keys(obj, where,
             {"epochs", "base_lr", "momentum", "poly_power", "weight_decay", "max_grad_norm", "train_dropout",
              "class_balanced"});
  read(obj, "epochs", ft.epochs, where);
  read_sgd(obj, ft.finetune.sgd, where);
  read(obj, "train_dropout", ft.finetune.train_dropout, where);
  read(obj, "class_balanced", ft.finetune.class_balanced, where);
}

ordered_json sgd_json(const SgdConfig& sgd) {
  ordered_json j;
  j["base_lr"] = sgd.base_lr;
  j["momentum"] = sgd.momentum;
  j["poly_power"] = sgd.poly_power;
  j["weight_decay"] = sgd.weight_decay;
  j["max_grad_norm"] = sgd.max_grad_norm;
  return j;
}

ordered_json finetune_json(const StageFinetuneConfig& ft) {
  ordered_json j;
  j["epochs"] = ft.epochs;
  j.update(sgd_json(ft.finetune.sgd));
  j["train_dropout"] = ft.finetune.train_dropout;
  j["class_balanced"] = ft.finetune.class_balanced;
  return j;
}

}  // namespace

void validate(const PipelineConfig& cfg) {
  if (cfg.num_categories < 2) throw std::invalid_argument("num_categories must be at least 2");
  validate(cfg.vb);
  if (cfg.encoder.hidden1 < 1 || cfg.encoder.hidden2 < 1) throw std::invalid_argument("encoder widths must be positive");
  if (cfg.encoder.feature_dim != cfg.vb.feature_dim)
    throw std::invalid_argument("encoder feature width must equal vb.feature_dim");
  if (!(cfg.encoder_dropout >= 0.0 && cfg.encoder_dropout < 1.0))
    throw std::invalid_argument("encoder.dropout_rate must lie in [0, 1)");
  if (cfg.pretrain.steps == 0) throw std::invalid_argument("pretrain.steps must be positive");
  if (cfg.finetune.epochs == 0) throw std::invalid_argument("finetune.epochs must be positive");
  if (cfg.harvest_enabled && cfg.pseudo_finetune.epochs == 0)
    throw std::invalid_argument("pseudo_finetune.epochs must be positive");
  for (const SgdConfig* s : {&cfg.pretrain.sgd, &cfg.finetune.finetune.sgd, &cfg.pseudo_finetune.finetune.sgd}) {
    if (!(s->base_lr >= 0.0)) throw std::invalid_argument("learning rates must be non-negative");
    if (!(s->momentum >= 0.0 && s->momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
    if (!(s->poly_power >= 0.0)) throw std::invalid_argument("poly_power must be non-negative");
    if (!(s->weight_decay >= 0.0) || !(s->max_grad_norm >= 0.0))
      throw std::invalid_argument("weight_decay and max_grad_norm must be non-negative");
  }
  if (cfg.spectrum.decimation_target < 4) throw std::invalid_argument("geometry.decimation_target must be >= 4");
  if (cfg.spectrum.normal_neighbors < 2) throw std::invalid_argument("geometry.normal_neighbors must be >= 2");
  if (!(cfg.spectrum.combined.delta >= 0.0 && cfg.spectrum.combined.delta <= 1.0))
    throw std::invalid_argument("geometry.delta must lie in [0, 1]");
  if (!(cfg.spectrum.heat.time_scale > 0.0)) throw std::invalid_argument("geometry.heat_time_scale must be positive");
  if (cfg.spectrum.affinity.embedding_length < 1)
    throw std::invalid_argument("spectral.embedding_length must be positive");
  if (!cfg.spectrum.affinity.auto_sigma && !(cfg.spectrum.affinity.sigma > 0.0))
    throw std::invalid_argument("spectral.sigma must be positive");
  validate(cfg.uncertainty);
  if (cfg.harvest.em.iterations < 1) throw std::invalid_argument("harvest.em_iterations must be positive");
  if (cfg.harvest.min_category_samples < kMinMixtureSamples)
    throw std::invalid_argument("harvest.min_category_samples must be at least " +
                                std::to_string(kMinMixtureSamples));
  if (cfg.histogram_bins < 1) throw std::invalid_argument("histogram_bins must be positive");
}

PipelineConfig parse_config(const std::string& json_text, PipelineConfig cfg) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(doc, "",
             {"seed", "num_categories", "annotation_budget", "vb", "encoder", "pretrain", "finetune",
              "pseudo_finetune", "geometry", "spectral", "uncertainty", "harvest", "histogram_bins"});
  read(doc, "seed", cfg.seed, "");
  read(doc, "num_categories", cfg.num_categories, "");
  read(doc, "annotation_budget", cfg.annotation_budget, "");
  read(doc, "histogram_bins", cfg.histogram_bins, "");

  if (doc.contains("vb")) {
    const json& v = doc["vb"];
    check_keys(v, "vb", {"lambda", "feature_dim", "fps_target", "squared_norm"});
    read(v, "lambda", cfg.vb.lambda, "vb");
    read(v, "feature_dim", cfg.vb.feature_dim, "vb");
    read(v, "fps_target", cfg.vb.fps_target, "vb");
    read(v, "squared_norm", cfg.vb.squared_norm, "vb");
  }
  cfg.encoder.feature_dim = cfg.vb.feature_dim;
  if (doc.contains("encoder")) {
    const json& e = doc["encoder"];
    check_keys(e, "encoder", {"hidden1", "hidden2", "dropout_rate"});
    read(e, "hidden1", cfg.encoder.hidden1, "encoder");
    read(e, "hidden2", cfg.encoder.hidden2, "encoder");
    read(e, "dropout_rate", cfg.encoder_dropout, "encoder");
  }
  if (doc.contains("pretrain")) {
    const json& p = doc["pretrain"];
    check_keys(p, "pretrain", {"steps", "base_lr", "momentum", "poly_power", "weight_decay", "max_grad_norm"});
    read(p, "steps", cfg.pretrain.steps, "pretrain");
    read_sgd(p, cfg.pretrain.sgd, "pretrain");
  }
  if (doc.contains("finetune")) read_finetune(doc["finetune"], cfg.finetune, "finetune");
  if (doc.contains("pseudo_finetune")) {
    json p = doc["pseudo_finetune"];
    if (p.is_object() && p.contains("restart_from_pretrained")) {
      read(p, "restart_from_pretrained", cfg.restart_from_pretrained, "pseudo_finetune");
      p.erase("restart_from_pretrained");
    }
    read_finetune(p, cfg.pseudo_finetune, "pseudo_finetune");
  }
  if (doc.contains("geometry")) {
    const json& g = doc["geometry"];
    check_keys(g, "geometry", {"decimation_target", "normal_neighbors", "delta", "heat_time_scale"});
    read(g, "decimation_target", cfg.spectrum.decimation_target, "geometry");
    read(g, "normal_neighbors", cfg.spectrum.normal_neighbors, "geometry");
    read(g, "delta", cfg.spectrum.combined.delta, "geometry");
    read(g, "heat_time_scale", cfg.spectrum.heat.time_scale, "geometry");
  }
  if (doc.contains("spectral")) {
    const json& s = doc["spectral"];
    check_keys(s, "spectral", {"embedding_length", "sigma"});
    read(s, "embedding_length", cfg.spectrum.affinity.embedding_length, "spectral");
    if (s.contains("sigma")) {
      if (s["sigma"].is_string()) {
        if (s["sigma"].get<std::string>() != "auto") throw ConfigError("spectral.sigma must be \"auto\" or a number");
        cfg.spectrum.affinity.auto_sigma = true;
      } else {
        read(s, "sigma", cfg.spectrum.affinity.sigma, "spectral");
        cfg.spectrum.affinity.auto_sigma = false;
      }
    }
  }
  if (doc.contains("uncertainty")) {
    const json& u = doc["uncertainty"];
    check_keys(u, "uncertainty", {"passes", "dropout_rate", "mode"});
    read(u, "passes", cfg.uncertainty.passes, "uncertainty");
    read(u, "dropout_rate", cfg.uncertainty.dropout_rate, "uncertainty");
    if (u.contains("mode")) {
      std::string m;
      read(u, "mode", m, "uncertainty");
      cfg.uncertainty.mode = mode_from(m);
    }
  }
  if (doc.contains("harvest")) {
    const json& h = doc["harvest"];
    check_keys(h, "harvest", {"enabled", "strategy", "em_iterations", "min_category_samples"});
    read(h, "enabled", cfg.harvest_enabled, "harvest");
    if (h.contains("strategy")) {
      std::string s;
      read(h, "strategy", s, "harvest");
      try {
        cfg.harvest.strategy = harvest_strategy_from_string(s);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("harvest.strategy: ") + e.what());
      }
    }
    read(h, "em_iterations", cfg.harvest.em.iterations, "harvest");
    read(h, "min_category_samples", cfg.harvest.min_category_samples, "harvest");
  }
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string config_to_json(const PipelineConfig& cfg) {
  ordered_json doc;
  doc["seed"] = cfg.seed;
  doc["num_categories"] = cfg.num_categories;
  doc["annotation_budget"] = cfg.annotation_budget;
  doc["vb"] = {{"lambda", cfg.vb.lambda},
               {"feature_dim", cfg.vb.feature_dim},
               {"fps_target", cfg.vb.fps_target},
               {"squared_norm", cfg.vb.squared_norm}};
  doc["encoder"] = {{"hidden1", cfg.encoder.hidden1},
                    {"hidden2", cfg.encoder.hidden2},
                    {"dropout_rate", cfg.encoder_dropout}};
  ordered_json pre;
  pre["steps"] = cfg.pretrain.steps;
  pre.update(sgd_json(cfg.pretrain.sgd));
  doc["pretrain"] = pre;
  doc["finetune"] = finetune_json(cfg.finetune);
  ordered_json pft = finetune_json(cfg.pseudo_finetune);
  pft["restart_from_pretrained"] = cfg.restart_from_pretrained;
  doc["pseudo_finetune"] = pft;
  doc["geometry"] = {{"decimation_target", cfg.spectrum.decimation_target},
                     {"normal_neighbors", cfg.spectrum.normal_neighbors},
                     {"delta", cfg.spectrum.combined.delta},
                     {"heat_time_scale", cfg.spectrum.heat.time_scale}};
  ordered_json spectral;
  spectral["embedding_length"] = cfg.spectrum.affinity.embedding_length;
  if (cfg.spectrum.affinity.auto_sigma)
    spectral["sigma"] = "auto";
  else
    spectral["sigma"] = cfg.spectrum.affinity.sigma;
  doc["spectral"] = spectral;
  doc["uncertainty"] = {{"passes", cfg.uncertainty.passes},
                        {"dropout_rate", cfg.uncertainty.dropout_rate},
                        {"mode", mode_name(cfg.uncertainty.mode)}};
  doc["harvest"] = {{"enabled", cfg.harvest_enabled},
                    {"strategy", to_string(cfg.harvest.strategy)},
                    {"em_iterations", cfg.harvest.em.iterations},
                    {"min_category_samples", cfg.harvest.min_category_samples}};
  doc["histogram_bins"] = cfg.histogram_bins;
  return doc.dump(2) + "\n";
}

DefaultsSnapshot defaults_snapshot(const PipelineConfig& cfg) {
  return {cfg.vb.fps_target,
          cfg.spectrum.decimation_target,
          cfg.spectrum.affinity.embedding_length,
          cfg.spectrum.combined.delta,
          cfg.uncertainty.passes,
          cfg.uncertainty.dropout_rate,
          cfg.harvest.em.iterations};
}

}  // namespace vibus
