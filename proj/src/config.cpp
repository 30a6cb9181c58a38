#include "cravl/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace cravl {

const char* to_string(LossVariant v) {
  switch (v) {
    case LossVariant::SigCL:
      return "sigcl";
    case LossVariant::UniCL:
      return "unicl";
    case LossVariant::SCE:
      return "sce";
  }
  return "sigcl";
}

LossVariant loss_variant_from_string(const std::string& s) {
  std::string lower;
  for (char c : s) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "sigcl") return LossVariant::SigCL;
  if (lower == "unicl") return LossVariant::UniCL;
  if (lower == "sce") return LossVariant::SCE;
  throw UsageError("unknown loss variant '" + s + "' (expected sigcl, unicl or sce)");
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// section -> key -> value
using IniMap = std::map<std::string, std::map<std::string, std::string>>;

IniMap parse_ini(const std::string& text, const std::string& origin) {
  IniMap out;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw UsageError(origin + ":" + std::to_string(line_no) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      out[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw UsageError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    if (section.empty()) {
      throw UsageError(origin + ":" + std::to_string(line_no) + ": key outside any section");
    }
    if (!out[section].emplace(key, value).second) {
      throw UsageError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

// Typed extraction with a consumed-key record so leftovers can be rejected.
class SectionReader {
 public:
  SectionReader(const IniMap& ini, const std::string& section, const std::string& origin)
      : origin_(origin), section_(section) {
    const auto it = ini.find(section);
    if (it != ini.end()) values_ = &it->second;
  }

  template <typename F>
  void key(const std::string& name, F&& apply) {
    if (!values_) return;
    const auto it = values_->find(name);
    if (it == values_->end()) return;
    consumed_.insert(name);
    try {
      apply(it->second);
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      throw UsageError(origin_ + ": [" + section_ + "] " + name + ": " + e.what());
    }
  }

  void i(const std::string& name, int& out) {
    key(name, [&](const std::string& v) { out = std::stoi(v); });
  }
  void u64(const std::string& name, uint64_t& out) {
    key(name, [&](const std::string& v) { out = std::stoull(v); });
  }
  void d(const std::string& name, double& out) {
    key(name, [&](const std::string& v) { out = std::stod(v); });
  }
  void b(const std::string& name, bool& out) {
    key(name, [&](const std::string& v) {
      std::string lower;
      for (char c : v) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      if (lower == "true" || lower == "1" || lower == "yes") {
        out = true;
      } else if (lower == "false" || lower == "0" || lower == "no") {
        out = false;
      } else {
        throw UsageError(origin_ + ": [" + section_ + "] " + name + ": expected a boolean, got '" +
                         v + "'");
      }
    });
  }

  void reject_unknown() const {
    if (!values_) return;
    for (const auto& [k, v] : *values_) {
      if (!consumed_.count(k)) {
        throw UsageError(origin_ + ": unknown key '" + k + "' in section [" + section_ + "]");
      }
    }
  }

 private:
  std::string origin_;
  std::string section_;
  const std::map<std::string, std::string>* values_ = nullptr;
  std::set<std::string> consumed_;
};

}  // namespace

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  const IniMap ini = parse_ini(text, origin);
  static const std::set<std::string> known_sections = {"data", "model", "train", "head", "audit"};
  for (const auto& [section, kv] : ini) {
    if (!known_sections.count(section)) {
      throw UsageError(origin + ": unknown section [" + section + "]");
    }
  }

  RunConfig cfg;
  cfg.dims.vocab = vocab_size();

  SectionReader data(ini, "data", origin);
  data.i("n_train_apps", cfg.n_train_apps);
  data.i("n_test_apps", cfg.n_test_apps);
  data.i("screenshots_min", cfg.data.screenshots_min);
  data.i("screenshots_max", cfg.data.screenshots_max);
  data.i("sentences_min", cfg.data.sentences_min);
  data.i("sentences_max", cfg.data.sentences_max);
  data.d("fraction_style_critical", cfg.data.fraction_style_critical);
  data.d("fraction_fusion_critical", cfg.data.fraction_fusion_critical);
  data.u64("seed", cfg.data.seed);
  data.key("class_balance", [&](const std::string& v) {
    std::istringstream ss(v);
    std::string part;
    int idx = 0;
    while (std::getline(ss, part, ',')) {
      if (idx >= kNumRatings) throw UsageError("class_balance needs exactly 5 weights");
      cfg.data.class_balance[static_cast<size_t>(idx++)] = std::stod(trim(part));
    }
    if (idx != kNumRatings) throw UsageError("class_balance needs exactly 5 weights");
  });
  data.reject_unknown();

  SectionReader model(ini, "model", origin);
  model.i("image_size", cfg.dims.image);
  model.i("patch_size", cfg.dims.patch);
  model.i("embed_dim", cfg.dims.d);
  model.i("heads", cfg.dims.heads);
  model.i("content_layers", cfg.dims.content_layers);
  model.i("style_layers", cfg.dims.style_layers);
  model.i("text_layers", cfg.dims.text_layers);
  model.i("fusion_blocks", cfg.dims.fusion_blocks);
  model.i("joint_dim", cfg.dims.d_joint);
  model.b("style_encoder", cfg.style_encoder);
  model.b("cross_attention", cfg.cross_attention);
  model.i("text_pretrain_steps", cfg.pretrain.steps);
  model.i("text_pretrain_batch", cfg.pretrain.batch);
  model.d("text_pretrain_lr", cfg.pretrain.lr);
  model.i("text_pretrain_seq", cfg.pretrain.seq_len);
  model.reject_unknown();

  SectionReader train(ini, "train", origin);
  train.d("lr_base", cfg.train.lr_base);
  train.d("lr_final", cfg.train.lr_final);
  train.i("warmup_epochs", cfg.train.warmup_epochs);
  train.i("epochs", cfg.train.epochs);
  train.i("batch", cfg.train.batch);
  train.d("beta1", cfg.train.beta1);
  train.d("beta2", cfg.train.beta2);
  train.d("eps", cfg.train.eps);
  train.d("weight_decay", cfg.train.weight_decay);
  train.d("alpha", cfg.train.alpha);
  train.d("lambda", cfg.train.lambda);
  train.d("ema_decay", cfg.train.ema_decay);
  train.u64("seed", cfg.train.seed);
  train.b("deterministic", cfg.train.deterministic);
  train.i("save_every", cfg.train.save_every);
  train.key("precision", [&](const std::string& v) {
    if (v == "f32") {
      cfg.train.f64 = false;
    } else if (v == "f64") {
      cfg.train.f64 = true;
    } else {
      throw UsageError(origin + ": [train] precision must be f32 or f64, got '" + v + "'");
    }
  });
  train.key("loss", [&](const std::string& v) { cfg.loss = loss_variant_from_string(v); });
  train.reject_unknown();

  SectionReader head(ini, "head", origin);
  head.d("lr", cfg.head.lr);
  head.i("epochs", cfg.head.epochs);
  head.i("batch", cfg.head.batch);
  head.d("weight_decay", cfg.head.weight_decay);
  head.u64("seed", cfg.head.seed);
  head.reject_unknown();

  SectionReader audit(ini, "audit", origin);
  audit.i("min_severity", cfg.min_severity);
  audit.reject_unknown();

  // Keep the synthetic geometry and the model geometry in lockstep.
  cfg.data.image_size = cfg.dims.image;
  cfg.data.patch_size = cfg.dims.patch;
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config: " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), path);
}

void RunConfig::validate() const {
  if (n_train_apps < 0 || n_test_apps < 0) {
    throw UsageError("app counts must be non-negative");
  }
  data.validate();
  dims.validate();
  train.validate();
  head.validate();
  if (min_severity < 0 || min_severity > 4) {
    throw UsageError("min_severity must lie in [0, 4]");
  }
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  out << "[data]\n";
  out << "n_train_apps = " << n_train_apps << "\n";
  out << "n_test_apps = " << n_test_apps << "\n";
  out << "screenshots_min = " << data.screenshots_min << "\n";
  out << "screenshots_max = " << data.screenshots_max << "\n";
  out << "sentences_min = " << data.sentences_min << "\n";
  out << "sentences_max = " << data.sentences_max << "\n";
  out << "class_balance = ";
  for (int i = 0; i < kNumRatings; ++i) {
    out << (i ? "," : "") << data.class_balance[static_cast<size_t>(i)];
  }
  out << "\n";
  out << "fraction_style_critical = " << data.fraction_style_critical << "\n";
  out << "fraction_fusion_critical = " << data.fraction_fusion_critical << "\n";
  out << "seed = " << data.seed << "\n\n";

  out << "[model]\n";
  out << "image_size = " << dims.image << "\n";
  out << "patch_size = " << dims.patch << "\n";
  out << "embed_dim = " << dims.d << "\n";
  out << "heads = " << dims.heads << "\n";
  out << "content_layers = " << dims.content_layers << "\n";
  out << "style_layers = " << dims.style_layers << "\n";
  out << "text_layers = " << dims.text_layers << "\n";
  out << "fusion_blocks = " << dims.fusion_blocks << "\n";
  out << "joint_dim = " << dims.d_joint << "\n";
  out << "style_encoder = " << (style_encoder ? "true" : "false") << "\n";
  out << "cross_attention = " << (cross_attention ? "true" : "false") << "\n";
  out << "text_pretrain_steps = " << pretrain.steps << "\n";
  out << "text_pretrain_batch = " << pretrain.batch << "\n";
  out << "text_pretrain_lr = " << pretrain.lr << "\n";
  out << "text_pretrain_seq = " << pretrain.seq_len << "\n\n";

  out << "[train]\n";
  out << "lr_base = " << train.lr_base << "\n";
  out << "lr_final = " << train.lr_final << "\n";
  out << "warmup_epochs = " << train.warmup_epochs << "\n";
  out << "epochs = " << train.epochs << "\n";
  out << "batch = " << train.batch << "\n";
  out << "beta1 = " << train.beta1 << "\n";
  out << "beta2 = " << train.beta2 << "\n";
  out << "eps = " << train.eps << "\n";
  out << "weight_decay = " << train.weight_decay << "\n";
  out << "alpha = " << train.alpha << "\n";
  out << "lambda = " << train.lambda << "\n";
  out << "ema_decay = " << train.ema_decay << "\n";
  out << "seed = " << train.seed << "\n";
  out << "precision = " << (train.f64 ? "f64" : "f32") << "\n";
  out << "deterministic = " << (train.deterministic ? "true" : "false") << "\n";
  out << "loss = " << to_string(loss) << "\n";
  out << "save_every = " << train.save_every << "\n\n";

  out << "[head]\n";
  out << "lr = " << head.lr << "\n";
  out << "epochs = " << head.epochs << "\n";
  out << "batch = " << head.batch << "\n";
  out << "weight_decay = " << head.weight_decay << "\n";
  out << "seed = " << head.seed << "\n\n";

  out << "[audit]\n";
  out << "min_severity = " << min_severity << "\n";
  return out.str();
}

void echo_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write config echo: " + path);
  out << cfg.echo();
  if (!out) throw DataError("short write on config echo: " + path);
}

}  // namespace cravl
